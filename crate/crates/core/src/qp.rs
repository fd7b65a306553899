//! Oracle solvers for the penalized and the equality-constrained problems.
//!
//! Neither solver uses the face-wise closed form; they only see `Phi`, `H`,
//! `y` and `lambda`.
//!
//! The penalized problem `min 1/2 |y - Phi x|^2 + lambda J_H(x)` is solved in
//! epigraph form
//!
//! ```text
//! min_{x,t} 1/2 |y - Phi x|^2 + lambda t   s.t.   H^* x <= t 1
//! ```
//!
//! by a Mehrotra predictor-corrector interior-point method on the dense
//! normal equations. The equality-constrained problem
//! `min J_H(x) s.t. Phi x = y` is the linear program
//! `min t s.t. H^* x <= t 1, Phi x = y`.

use nalgebra::{DMatrix, DVector};

use crate::certify::{verify_optimality, VerifyOptions};
use crate::error::{Error, Result};
use crate::gauge::{HMatrix, HSupport};
use crate::lp::{LinearProgram, LpStatus};

/// Default KKT tolerance of the interior-point solver.
pub const DEFAULT_QP_TOL: f64 = 1e-10;
/// Relative tolerance for reading supports off oracle solutions.
pub const ORACLE_SUPPORT_TOL: f64 = 1e-6;
const MAX_IPM_ITERS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Support at [`ORACLE_SUPPORT_TOL`]; `None` when `x` is numerically zero.
    pub support: Option<HSupport>,
    pub iterations: usize,
    /// Outcome of the first-order check on the returned point, when its
    /// support satisfies restricted injectivity.
    pub verified: Option<bool>,
}

fn check_dims(phi: &DMatrix<f64>, h: &HMatrix, y: &DVector<f64>) -> Result<()> {
    if phi.ncols() != h.n() {
        return Err(Error::Dimension(format!(
            "Phi has {} columns but H acts on R^{}",
            phi.ncols(),
            h.n()
        )));
    }
    if y.len() != phi.nrows() {
        return Err(Error::Dimension(format!("y has length {}, Phi has {} rows", y.len(), phi.nrows())));
    }
    Ok(())
}

fn oracle_support(h: &HMatrix, x: &DVector<f64>, scale: f64) -> Result<Option<HSupport>> {
    if x.norm() <= 1e-8 * scale {
        return Ok(None);
    }
    h.h_support(x, ORACLE_SUPPORT_TOL).map(Some)
}

/// Largest step in `(0, 1]` keeping `v + a dv` nonnegative.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

/// Solves `min 1/2 |y - Phi x|^2 + lambda J_H(x)` to KKT residual `tol`.
pub fn solve_p_lambda(
    phi: &DMatrix<f64>,
    h: &HMatrix,
    y: &DVector<f64>,
    lambda: f64,
    tol: f64,
) -> Result<SolveResult> {
    check_dims(phi, h, y)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let n = h.n();
    let m = h.n_cols();
    let dim = n + 1;

    // Quadratic term P = diag(Phi^* Phi, 0), linear term q = (-Phi^* y, lambda).
    let mut p = DMatrix::zeros(dim, dim);
    p.view_mut((0, 0), (n, n)).copy_from(&phi.tr_mul(phi));
    let mut q = DVector::zeros(dim);
    q.rows_mut(0, n).copy_from(&(-phi.tr_mul(y)));
    q[n] = lambda;
    // G z <= 0 with G = [H^*, -1].
    let mut g = DMatrix::zeros(m, dim);
    g.view_mut((0, 0), (m, n)).copy_from(&h.matrix().transpose());
    g.column_mut(n).fill(-1.0);

    let scale_y = 1.0 + phi.tr_mul(y).amax();
    let mut z = DVector::zeros(dim);
    z[n] = scale_y;
    let mut s = -(&g * &z);
    let mut u = DVector::from_element(m, lambda / m as f64);

    let q_scale = 1.0 + q.amax();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < MAX_IPM_ITERS {
        let r_d = &p * &z + &q + g.tr_mul(&u);
        let r_p = &g * &z + &s;
        let gap = s.dot(&u);
        let pz = &p * &z;
        let primal_obj = 0.5 * z.dot(&pz) + q.dot(&z);
        residual = (r_d.amax() / q_scale)
            .max(r_p.amax() / (1.0 + z.amax()))
            .max(gap / (1.0 + primal_obj.abs()));
        if residual <= tol {
            break;
        }
        iterations += 1;

        let d = u.component_div(&s);
        let mut kkt = p.clone();
        let gd = DMatrix::from_fn(m, dim, |i, j| g[(i, j)] * d[i]);
        kkt += g.tr_mul(&gd);
        let chol = match kkt.clone().cholesky() {
            Some(c) => c,
            None => {
                let reg = 1e-14 * (1.0 + kkt.diagonal().amax());
                let mut shifted = kkt.clone();
                for i in 0..dim {
                    shifted[(i, i)] += reg;
                }
                shifted.cholesky().ok_or_else(|| {
                    Error::SolverFailure(format!(
                        "normal equations lost definiteness at iteration {iterations} (residual {residual:.3e})"
                    ))
                })?
            }
        };
        // Direction for complementarity target r_c:
        //   (P + G^* D G) dz = -r_d - G^* S^{-1} (r_c + U r_p)
        //   ds = -r_p - G dz,  du = S^{-1} (r_c - U ds)
        let direction = |r_c: &DVector<f64>| {
            let tmp = (r_c + u.component_mul(&r_p)).component_div(&s);
            let rhs = -&r_d - g.tr_mul(&tmp);
            let dz = chol.solve(&rhs);
            let ds = -&r_p - &g * &dz;
            let du = (r_c - u.component_mul(&ds)).component_div(&s);
            (dz, ds, du)
        };

        let mu = gap / m as f64;
        let r_aff = -s.component_mul(&u);
        let (_, ds_a, du_a) = direction(&r_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&u, &du_a));
        let gap_aff = (&s + &ds_a * a_aff).dot(&(&u + &du_a * a_aff));
        let sigma = (gap_aff / gap).powi(3).clamp(0.0, 1.0);
        let r_c = &r_aff - ds_a.component_mul(&du_a) + DVector::from_element(m, sigma * mu);
        let (dz, ds, du) = direction(&r_c);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&u, &du))).min(1.0);
        z += &dz * alpha;
        s += &ds * alpha;
        u += &du * alpha;
    }
    if residual > tol {
        return Err(Error::SolverFailure(format!(
            "interior point stopped after {iterations} iterations with KKT residual {residual:.3e}"
        )));
    }

    let x = z.rows(0, n).into_owned();
    let objective = 0.5 * (y - phi * &x).norm_squared() + lambda * h.eval(&x)?;
    let support = oracle_support(h, &x, scale_y)?;
    let verified = match &support {
        Some(_) => {
            let opts = VerifyOptions {
                support_tol: ORACLE_SUPPORT_TOL,
                feas_tol: 1e-6,
                ..VerifyOptions::default()
            };
            match verify_optimality(phi, h, y, lambda, &x, opts) {
                Ok(w) => w.restricted_injectivity.then_some(true),
                Err(Error::NotOptimal(_)) => Some(false),
                Err(e) => return Err(e),
            }
        }
        None => None,
    };
    Ok(SolveResult {
        status: SolveStatus::Solved,
        x,
        objective,
        kkt_residual: residual,
        support,
        iterations,
        verified,
    })
}

/// Solves `min J_H(x) s.t. Phi x = y` as a linear program.
pub fn solve_p0(phi: &DMatrix<f64>, h: &HMatrix, y: &DVector<f64>, tol: f64) -> Result<SolveResult> {
    check_dims(phi, h, y)?;
    let n = h.n();
    let mut obj = vec![0.0; n + 1];
    obj[n] = 1.0;
    let mut lp = LinearProgram::minimize(obj);
    for col in h.matrix().column_iter() {
        let mut row: Vec<f64> = col.iter().copied().collect();
        row.push(-1.0);
        lp.add_le(row, 0.0);
    }
    for (i, r) in phi.row_iter().enumerate() {
        let mut row: Vec<f64> = r.iter().copied().collect();
        row.push(0.0);
        lp.add_eq(row, y[i]);
    }
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Ok(SolveResult {
                status: SolveStatus::Infeasible,
                x: DVector::zeros(n),
                objective: f64::NAN,
                kkt_residual: f64::NAN,
                support: None,
                iterations: sol.iterations,
                verified: None,
            });
        }
        LpStatus::Unbounded => {
            return Err(Error::SolverFailure(
                "equality-constrained problem unbounded: H is not a valid gauge".into(),
            ));
        }
    }
    let x = DVector::from_column_slice(&sol.z[..n]);
    let objective = h.eval(&x)?;
    let kkt_residual = sol
        .primal_infeasibility(&lp)
        .max(sol.duality_gap(&lp).abs())
        .max((objective - sol.z[n]).abs());
    if kkt_residual > tol * (1.0 + objective.abs()) {
        return Err(Error::SolverFailure(format!(
            "equality-constrained LP residual {kkt_residual:.3e} above tolerance {tol:.1e}"
        )));
    }
    let support = oracle_support(h, &x, 1.0 + y.amax())?;
    Ok(SolveResult {
        status: SolveStatus::Solved,
        x,
        objective,
        kkt_residual,
        support,
        iterations: sol.iterations,
        verified: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::{build_l1, build_linf};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn soft_threshold() {
        let id = DMatrix::identity(2, 2);
        let l1 = build_l1(2).unwrap();
        let r = solve_p_lambda(&id, &l1, &v(&[3.0, 0.0]), 0.2, 1e-10).unwrap();
        assert!((&r.x - v(&[2.8, 0.0])).amax() < 1e-8, "{:?}", r.x);
        assert_eq!(r.support.as_ref().unwrap().indices(), &[0, 1]);
        assert_eq!(r.verified, Some(true));
        assert!((r.objective - (0.5 * 0.04 + 0.2 * 2.8)).abs() < 1e-9);
    }

    #[test]
    fn linf_example() {
        let id = DMatrix::identity(2, 2);
        let linf = build_linf(2).unwrap();
        let r = solve_p_lambda(&id, &linf, &v(&[2.1, 1.0]), 0.05, 1e-10).unwrap();
        assert!((&r.x - v(&[2.05, 1.0])).amax() < 1e-8);
        assert_eq!(r.support.unwrap().indices(), &[0]);
    }

    #[test]
    fn huge_lambda_gives_zero() {
        let id = DMatrix::identity(2, 2);
        let l1 = build_l1(2).unwrap();
        let r = solve_p_lambda(&id, &l1, &v(&[3.0, -1.0]), 100.0, 1e-10).unwrap();
        assert!(r.x.amax() < 1e-8);
        assert!(r.support.is_none());
    }

    #[test]
    fn p0_cases() {
        let id = DMatrix::identity(2, 2);
        let linf = build_linf(2).unwrap();
        let r = solve_p0(&id, &linf, &v(&[2.0, 1.0]), 1e-9).unwrap();
        assert!((&r.x - v(&[2.0, 1.0])).amax() < 1e-12);
        assert!((r.objective - 2.0).abs() < 1e-12);

        // min |x|_1 s.t. x1 + x2 = 2: value 2 on the whole segment.
        let phi = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let l1 = build_l1(2).unwrap();
        let r = solve_p0(&phi, &l1, &v(&[2.0]), 1e-9).unwrap();
        assert!((r.objective - 2.0).abs() < 1e-12);
        assert!(r.x.iter().all(|c| *c >= -1e-12));
        assert!((r.x.sum() - 2.0).abs() < 1e-12);

        let r = solve_p0(&id, &l1, &v(&[0.0, 0.0]), 1e-9).unwrap();
        assert!(r.x.amax() < 1e-14 && r.objective.abs() < 1e-14);
        assert!(r.support.is_none());
    }

    #[test]
    fn p0_infeasible() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let l1 = build_l1(2).unwrap();
        let r = solve_p0(&phi, &l1, &v(&[1.0, 2.0]), 1e-9).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn gauge_grows_as_lambda_shrinks() {
        use crate::ensemble::{draw_instance, Family};
        let fam = Family::L1 { n: 6, sparsity: 2 };
        let h = fam.build().unwrap();
        for seed in 0..5 {
            let inst = draw_instance(&fam, 4, seed);
            let y = &inst.phi * &inst.x0 + &inst.noise * 0.05;
            let p0 = solve_p0(&inst.phi, &h, &y, 1e-10).unwrap();
            let cap = h.eval(&p0.x).unwrap();
            let mut prev = 0.0;
            for lambda in [1.0, 0.3, 0.1, 0.01] {
                let r = solve_p_lambda(&inst.phi, &h, &y, lambda, 1e-10).unwrap();
                let j = h.eval(&r.x).unwrap();
                assert!(j >= prev - 1e-7, "seed {seed}: J fell from {prev} to {j} at lambda {lambda}");
                assert!(j <= cap + 1e-7, "seed {seed}: J = {j} above the P0 optimum {cap}");
                prev = j;
            }
        }
    }
}
