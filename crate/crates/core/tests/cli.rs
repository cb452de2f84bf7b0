use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use robust3s::cli::io::{parse_csv, read_csv};
use robust3s::filter::filter_matrix;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robust3s"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_normal_csv(path: &Path, n: usize, p: usize, seed: u64, spike: Option<(usize, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = (0..p).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",") + "\n";
    for i in 0..n {
        let row: Vec<String> = (0..p)
            .map(|j| {
                if spike == Some((i, j)) {
                    "1000000".to_string()
                } else {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    format!("{v}")
                }
            })
            .collect();
        s += &(row.join(",") + "\n");
    }
    fs::write(path, s).unwrap();
}

#[test]
fn exact_line_gives_slope_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("line.csv");
    let body: String = (1..=20).map(|i| format!("{i},{}\n", 2 * i)).collect();
    fs::write(&input, format!("x,y\n{body}")).unwrap();
    let o = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "y",
        "--method",
        "ls",
        "--seed",
        "1",
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let slope = &v["terms"][1];
    assert_eq!(slope["name"], "x");
    assert!((slope["estimate"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!(slope["p_value"].as_f64().unwrap() < 1e-6);
}

#[test]
fn alternating_without_dummies_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_normal_csv(&input, 50, 3, 1, None);
    let o = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "x0",
        "--method",
        "alternating",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_normal_csv(&input, 120, 3, 2, Some((4, 1)));
    let outs: Vec<Vec<u8>> = (0..2)
        .map(|r| {
            let out = dir.path().join(format!("fit{r}.json"));
            let o = run(&[
                "fit",
                "--input",
                input.to_str().unwrap(),
                "--response",
                "x0",
                "--seed",
                "99",
                "--format",
                "json",
                "--out",
                out.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    let v: serde_json::Value = serde_json::from_slice(&outs[0]).unwrap();
    assert!(v["filter"]["flagged_cells"].as_u64().unwrap() >= 1);
}

#[test]
fn filter_output_round_trips_the_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    let out = dir.path().join("f.csv");
    let report = dir.path().join("r.tsv");
    write_normal_csv(&input, 300, 4, 3, Some((10, 2)));
    let o = run(&[
        "filter",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let original = read_csv(&input, false).unwrap();
    let expected = filter_matrix(&original.values, 0.2, 0.01).unwrap();
    let back = read_csv(&out, true).unwrap();
    assert_eq!(back.observed, expected.flags);
    assert!(!back.observed.get(10, 2));
    for i in 0..300 {
        for j in 0..4 {
            if back.observed.get(i, j) {
                assert_eq!(back.values[(i, j)], original.values[(i, j)]);
            }
        }
    }
    let text = fs::read_to_string(report).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 4);
}

#[test]
fn clean_large_file_is_barely_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.csv");
    write_normal_csv(&input, 10_000, 2, 4, None);
    let o = run(&["filter", "--input", input.to_str().unwrap()]);
    assert!(o.status.success());
    let t = parse_csv(&stdout(&o), true).unwrap();
    assert!((t.observed.filtered_cells() as f64) < 0.005 * 20_000.0);
}

#[test]
fn empty_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(&input, "").unwrap();
    let o = run(&["filter", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty sample"));
}

#[test]
fn constant_column_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.csv");
    let body: String = (0..30).map(|i| format!("{i},1,{}\n", i % 7)).collect();
    fs::write(&input, format!("y,c,z\n{body}")).unwrap();
    let o = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "y",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("'c' is constant"));
}

#[test]
fn simulate_smoke_run_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("plot.tsv");
    let o = run(&[
        "simulate",
        "--n",
        "150",
        "--p",
        "5",
        "--replicates",
        "10",
        "--seed",
        "5",
        "--plot-data",
        plot.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 3);
    assert!(rows[0].starts_with("scenario\tepsilon"));
    let plot = fs::read_to_string(plot).unwrap();
    assert_eq!(plot.lines().count(), 1 + 3 * 3);
}

#[test]
fn missing_seed_is_echoed() {
    let o = run(&[
        "simulate",
        "--n",
        "60",
        "--p",
        "2",
        "--replicates",
        "2",
        "--methods",
        "ls",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let header = text.lines().next().unwrap();
    let seed: u64 = header
        .split("seed ")
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let again = run(&[
        "simulate",
        "--n",
        "60",
        "--p",
        "2",
        "--replicates",
        "2",
        "--methods",
        "ls",
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn config_file_is_read_and_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "n = 60\np = 2\nreplicates = 2\nmethods = ls\nseed = 3\nformat = json\n",
    )
    .unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--p", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["p_x"], 3);
    assert_eq!(v["seed"], 3);
    assert_eq!(v["results"][0]["replicates"].as_array().unwrap().len(), 2);
}

#[test]
fn invalid_grid_is_a_usage_error() {
    let o = run(&["simulate", "--scenario", "cellwise", "--replicates", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "simulate",
        "--scenario",
        "clean",
        "--epsilon",
        "0.9",
        "--replicates",
        "1",
        "--k-grid",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
