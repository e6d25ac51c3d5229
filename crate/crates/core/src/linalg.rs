//! Banded LU factorization with partial pivoting and a preconditioned
//! L-BFGS minimizer.

use std::collections::VecDeque;

use crate::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals. Storage keeps
/// `kl` extra super-diagonals for the fill-in of row pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // column offset j - i ranges over [-kl, kl + ku]
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.kl + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` at `(i, j)`; entries outside the declared band are an error
    /// in the caller and panic.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside the band"
        );
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    #[cfg(test)]
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.kl + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU factorization with partial pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let mut piv = vec![0usize; n];
        let upper = self.kl + self.ku;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let a = self.get(i, k).abs();
                if a > best {
                    best = a;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Numerical {
                    msg: format!("singular band matrix at column {k}"),
                    best,
                });
            }
            piv[k] = p;
            let cols = k..=(k + upper).min(n - 1);
            if p != k {
                for j in cols.clone() {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let f = self.data[ik] / pivot;
                self.data[ik] = f;
                if f != 0.0 {
                    for j in k + 1..=(k + upper).min(n - 1) {
                        let kj = self.data[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.data[ij] -= f * kj;
                    }
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let a = &self.m;
        let n = a.n;
        let upper = a.kl + a.ku;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            for i in k + 1..=(k + a.kl).min(n - 1) {
                x[i] -= a.data[a.idx(i, k)] * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + upper).min(n - 1) {
                s -= a.data[a.idx(k, j)] * x[j];
            }
            x[k] = s / a.data[a.idx(k, k)];
        }
        x
    }
}

/// Outcome of [`lbfgs`].
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub stationarity: f64,
    pub iterations: usize,
}

/// Limited-memory BFGS with the initial inverse Hessian replaced by a
/// preconditioner solve and a backtracking Armijo line search.
///
/// `f` returns the value and writes the gradient; `measure` maps a gradient
/// to the stationarity measure compared against `tol`.
pub fn lbfgs<F, P, S>(
    x0: Vec<f64>,
    mut f: F,
    precondition: P,
    measure: S,
    tol: f64,
    max_iter: usize,
) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: Fn(&[f64]) -> Vec<f64>,
    S: Fn(&[f64], &[f64]) -> f64,
{
    const MEMORY: usize = 12;
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut g_new = vec![0.0; n];
    let mut stalls = 0;

    for it in 0..max_iter {
        let stat = measure(&x, &g);
        if stat < tol {
            return Minimum {
                x,
                stationarity: stat,
                iterations: it,
            };
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push(a);
        }
        let mut r = precondition(&q);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            axpy(a - b, s, &mut r);
        }
        let mut dir: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = precondition(&g).iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
            if !(slope < 0.0) {
                dir = g.iter().map(|v| -v).collect();
                slope = dot(&g, &dir);
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let ft = f(&trial, &mut g_new);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        if fx - f_new <= 1e-16 * fx.abs().max(1.0) {
            stalls += 1;
        } else {
            stalls = 0;
        }
        x = x_new;
        fx = f_new;
        std::mem::swap(&mut g, &mut g_new);
        if stalls >= 5 {
            break;
        }
    }
    let stat = measure(&x, &g);
    Minimum {
        x,
        stationarity: stat,
        iterations: max_iter,
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn band_lu_matches_dense_elimination() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for &(n, kl, ku) in &[(1, 0, 0), (7, 2, 2), (20, 1, 3), (15, 3, 1)] {
            let mut band = BandMatrix::zeros(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    // weak diagonal forces row exchanges
                    let v: f64 = rng.gen_range(-1.0..1.0) * if i == j { 0.1 } else { 1.0 };
                    band.add(i, j, v);
                    dense[i][j] = v;
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = band.clone().factor().unwrap().solve(&b);
            let y = dense_solve(dense, b.clone());
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() < 1e-9 * q.abs().max(1.0), "{p} vs {q}");
            }
            let r = band.mul_vec(&x);
            for (p, q) in r.iter().zip(&b) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_band_matrix_is_reported() {
        let m = BandMatrix::zeros(3, 1, 1);
        assert!(m.factor().is_err());
    }

    #[test]
    fn lbfgs_minimizes_rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let norm = |_: &[f64], g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let r = lbfgs(vec![-1.2, 1.0], f, |q| q.to_vec(), norm, 1e-9, 500);
        assert!(r.stationarity < 1e-9);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }
}
