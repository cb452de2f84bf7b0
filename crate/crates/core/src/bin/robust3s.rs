use std::io;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var("ROBUST3S_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
                    log::warn!("cannot configure thread pool: {e}");
                }
            }
            _ => {
                eprintln!("robust3s: usage error: ROBUST3S_THREADS must be a positive integer");
                std::process::exit(2);
            }
        }
    }
    let code = robust3s::cli::main_with(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock());
    std::process::exit(code);
}
