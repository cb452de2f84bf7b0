/// Binary n×p observation mask: `true` marks a kept (observed) cell,
/// `false` a filtered one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn all_observed(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            data: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mask { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_all_observed(&self) -> bool {
        self.data.iter().all(|&v| v)
    }

    pub fn row_complete(&self, i: usize) -> bool {
        self.row(i).iter().all(|&v| v)
    }

    pub fn complete_rows(&self) -> usize {
        (0..self.rows).filter(|&i| self.row_complete(i)).count()
    }

    pub fn filtered_cells(&self) -> usize {
        self.data.iter().filter(|&&v| !v).count()
    }

    /// Append a fully observed column (used to attach the response).
    pub fn with_observed_column(&self) -> Mask {
        Mask::from_fn(self.rows, self.cols + 1, |i, j| {
            if j < self.cols {
                self.get(i, j)
            } else {
                true
            }
        })
    }

    /// 0/1 rendering, row-major.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v as u8).collect()
    }
}
