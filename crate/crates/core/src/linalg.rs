//! Minimal dense linear algebra for small state dimensions.
//!
//! State dimensions here are tiny (the built-in example is scalar), so a
//! plain row-major `Vec<f64>` square matrix avoids pulling in a full linear
//! algebra stack.

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if `data.len() != dim*dim`.
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim, "row-major data length mismatch");
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col] = value;
    }

    /// Matrix-vector product `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "vector length mismatch");
        let mut out = vec![0.0; self.dim];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            *o = dot(row, x);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `tr(H · A · Bᵀ)` for square matrices of equal dimension.
///
/// This is the shape every second-order generator term takes: a Hessian-like
/// matrix sandwiched between a diffusion matrix and a (possibly different)
/// transposed diffusion matrix.
pub fn trace_h_a_bt(h: &SquareMatrix, a: &SquareMatrix, b: &SquareMatrix) -> f64 {
    let d = h.dim();
    debug_assert_eq!(a.dim(), d);
    debug_assert_eq!(b.dim(), d);
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut abt = 0.0;
            for k in 0..d {
                abt += a.get(j, k) * b.get(i, k);
            }
            acc += h.get(i, j) * abt;
        }
    }
    acc
}

/// Ordinary least squares fit of `y = slope * x + intercept`.
///
/// Returns `None` when fewer than two points are given or the abscissae are
/// degenerate.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}
