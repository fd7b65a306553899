//! Reference computations used by the integration and acceptance tests.
//! None of them call into the library's linear algebra or LP code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

/// Orthonormal basis of `{v : a v = 0}` from the eigenvectors of `a^T a`.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let gram = a.transpose() * a;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&k| eig.eigenvalues[k].abs() <= 1e-9 * top.max(1.0))
        .map(|k| eig.eigenvectors.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Pseudo-inverse as `A^T (A A^T)^+` or `(A^T A)^+ A^T` through a symmetric
/// eigendecomposition of the smaller Gram matrix.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() < a.ncols() {
        return pinv(&a.transpose()).transpose();
    }
    let eig = SymmetricEigen::new(a.transpose() * a);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut gram_pinv = DMatrix::zeros(a.ncols(), a.ncols());
    for k in 0..a.ncols() {
        let l = eig.eigenvalues[k];
        if l > 1e-12 * top {
            let v = eig.eigenvectors.column(k);
            gram_pinv += v * v.transpose() / l;
        }
    }
    gram_pinv * a.transpose()
}

/// Correlation vector `g = Phi~^T Gamma^perp Phi~ 1` and a basis of
/// `Ker H_I`, built directly from the definitions.
pub fn ic_inputs(phi: &DMatrix<f64>, h_i: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let model = null_space(&h_i.transpose());
    let q = phi.nrows();
    let gamma_perp = if model.ncols() == 0 {
        DMatrix::identity(q, q)
    } else {
        let a = phi * &model;
        DMatrix::identity(q, q) - &a * pinv(&a)
    };
    let phi_tilde = phi * pinv(h_i).transpose();
    let ones = DVector::from_element(h_i.ncols(), 1.0);
    let g = phi_tilde.transpose() * gamma_perp * phi_tilde * ones;
    (g, null_space(h_i))
}

fn min_of(g: &DVector<f64>, k: &DMatrix<f64>, beta: &[f64]) -> f64 {
    (0..g.len())
        .map(|i| g[i] + beta.iter().enumerate().map(|(j, b)| k[(i, j)] * b).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// `max_beta min_i (g + K beta)_i` by grid search with zoom refinement,
/// for kernels of dimension 0, 1 or 2.
/// `k` must have orthonormal columns, as returned by [`null_space`].
pub fn ic_mesh(g: &DVector<f64>, k: &DMatrix<f64>) -> f64 {
    let d = k.ncols();
    if d == 0 {
        return g.min();
    }
    assert!(d <= 2, "mesh oracle handles kernels of dimension <= 2");
    // An optimal z = K beta keeps every entry above min g - max g, and sums to
    // zero, so |z|_inf <= (|I| - 1) (max g - min g).
    let spread = g.max() - g.min();
    let z_bound = (g.len() as f64 - 1.0) * spread;
    // K has orthonormal columns, so |beta| = |z|.
    let radius = (g.len() as f64).sqrt() * z_bound + 1.0;

    let steps = if d == 1 { 4000 } else { 300 };
    let mut center = vec![0.0; d];
    let mut half = radius;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..60 {
        let h = 2.0 * half / steps as f64;
        let mut best_point = center.clone();
        let mut round_best = f64::NEG_INFINITY;
        let range = |c: f64| (0..=steps).map(move |s| c - half + s as f64 * h);
        if d == 1 {
            for b in range(center[0]) {
                let v = min_of(g, k, &[b]);
                if v > round_best {
                    round_best = v;
                    best_point = vec![b];
                }
            }
        } else {
            for b0 in range(center[0]) {
                for b1 in range(center[1]) {
                    let v = min_of(g, k, &[b0, b1]);
                    if v > round_best {
                        round_best = v;
                        best_point = vec![b0, b1];
                    }
                }
            }
        }
        best = best.max(round_best);
        center = best_point;
        half = 4.0 * h;
        if h < 1e-12 {
            break;
        }
    }
    best
}

/// A random bounded LP `max c^T x` with `A x <= b`, `E x = f` and box
/// bounds `l <= x <= u`.
#[derive(Clone, Debug)]
pub struct BoxLp {
    pub c: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub e: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxLp {
    pub fn random<R: Rng>(rng: &mut R, n: usize) -> Self {
        let mut normal = || rng.random_range(-1.0..1.0);
        let c: Vec<f64> = (0..n).map(|_| normal()).collect();
        let lower: Vec<f64> = (0..n).map(|_| -1.0 - normal().abs()).collect();
        let upper: Vec<f64> = (0..n).map(|_| 1.0 + normal().abs()).collect();
        let m = 1 + (normal().abs() * 4.0) as usize;
        let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| normal()).collect()).collect();
        // Right-hand sides sometimes cut off the origin, so some LPs are
        // infeasible and many optima are off the box.
        let b: Vec<f64> = (0..m).map(|_| 0.5 * normal()).collect();
        let (e, f) = if normal() > 0.3 {
            let row: Vec<f64> = (0..n).map(|_| normal()).collect();
            (vec![row], vec![0.3 * normal()])
        } else {
            (vec![], vec![])
        };
        BoxLp { c, a, b, e, f, lower, upper }
    }

    fn feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        let n = x.len();
        (0..n).all(|j| x[j] >= self.lower[j] - tol && x[j] <= self.upper[j] + tol)
            && self.a.iter().zip(&self.b).all(|(r, b)| dot(r, x) <= b + tol)
            && self.e.iter().zip(&self.f).all(|(r, f)| (dot(r, x) - f).abs() <= tol)
    }

    /// Optimal value by enumerating every basic solution, or `None` when
    /// the LP is infeasible.
    pub fn brute_force(&self) -> Option<f64> {
        let n = self.c.len();
        // Every constraint as a row `r x = s` when active.
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push((e.clone(), self.lower[j]));
            rows.push((e, self.upper[j]));
        }
        rows.extend(self.a.iter().cloned().zip(self.b.iter().copied()));
        let eq: Vec<(Vec<f64>, f64)> = self.e.iter().cloned().zip(self.f.iter().copied()).collect();
        let free = n - eq.len();
        let mut best: Option<f64> = None;
        for subset in combinations(rows.len(), free) {
            let chosen: Vec<&(Vec<f64>, f64)> = eq.iter().chain(subset.iter().map(|&i| &rows[i])).collect();
            let m = DMatrix::from_fn(n, n, |i, j| chosen[i].0[j]);
            let rhs = DVector::from_fn(n, |i, _| chosen[i].1);
            let lu = m.clone().full_piv_lu();
            let Some(x) = lu.solve(&rhs) else { continue };
            // Nearly singular systems give huge or inaccurate points; those
            // are never feasible vertices of these small boxes.
            if x.amax() > 1e6 || (&m * &x - &rhs).amax() > 1e-10 {
                continue;
            }
            if self.feasible(&x, 1e-9) {
                let v = dot(&self.c, &x);
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        best
    }
}

pub fn dot(r: &[f64], x: &DVector<f64>) -> f64 {
    r.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| x.signum() * (x.abs() - t).max(0.0))
}

/// Random orthogonal matrix from the QR factorization of a Gaussian one.
pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    g.qr().q()
}

/// Gauge from an explicit column list, evaluated without the library.
pub fn gauge(h: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (h.transpose() * x).max()
}
