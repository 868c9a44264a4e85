//! Dense Cholesky factorization for the small symmetric systems of GP regression.

use crate::error::GpError;

/// Lower-triangular Cholesky factor `L` of `A + jitter·I`, row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    fn try_factor(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                if i == j {
                    s += jitter;
                }
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(l)
    }

    /// Factors the symmetric matrix `a` (n×n, row-major). On failure retries with
    /// jitter `1e-10·scale`, growing ×10 up to `1e-4·scale`.
    pub fn factor(a: &[f64], n: usize, scale: f64) -> Result<Self, GpError> {
        debug_assert_eq!(a.len(), n * n);
        if let Some(l) = Self::try_factor(a, n, 0.0) {
            return Ok(Self { n, l, jitter: 0.0 });
        }
        let mut jitter = 1e-10 * scale;
        while jitter <= 1e-4 * scale * (1.0 + 1e-9) {
            if let Some(l) = Self::try_factor(a, n, jitter) {
                return Ok(Self { n, l, jitter });
            }
            jitter *= 10.0;
        }
        Err(GpError::Conditioning { jitter: jitter / 10.0 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// log det(A + jitter·I)
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Solves `L x = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let row = &self.l[i * n..i * n + i];
            b[i] /= self.l[i * n + i];
            let bi = b[i];
            for (bk, l) in b[..i].iter_mut().zip(row) {
                *bk -= l * bi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// Full inverse, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        // row j of `mt` is column j of L^{-1}; A^{-1} = L^{-T} L^{-1}
        let mut mt = vec![0.0; n * n];
        for j in 0..n {
            let e = &mut mt[j * n..(j + 1) * n];
            e[j] = 1.0 / self.l[j * n + j];
            for i in j + 1..n {
                let row = &self.l[i * n + j..i * n + i];
                let s: f64 = row.iter().zip(&e[j..i]).map(|(x, y)| x * y).sum();
                e[i] = -s / self.l[i * n + i];
            }
        }
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = mt[i * n + i..(i + 1) * n].iter().zip(&mt[j * n + i..(j + 1) * n]).map(|(x, y)| x * y).sum();
                inv[i * n + j] = s;
                inv[j * n + i] = s;
            }
        }
        inv
    }
}
