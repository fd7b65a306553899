//! Kernel bases, pseudo-inverses and the per-support projection machinery.
//!
//! Every rank decision goes through one SVD with a relative cutoff
//! `rank_tol * sigma_max`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauge::{HMatrix, HSupport};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;
/// Largest condition number accepted for `U^* Phi^* Phi U`.
pub const MAX_GRAM_CONDITION: f64 = 1e12;
/// Tolerance for the projector identities checked at construction.
const IDENTITY_TOL: f64 = 1e-10;

/// Full SVD `a = U diag(s) V^T` with square `U` and `V`.
///
/// Computed with faer: nalgebra's SVD returns wrong factors for
/// rank-deficient inputs, which is exactly the case that matters here.
fn full_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mat = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = mat.svd().expect("SVD of a finite matrix converges");
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let sv = (0..m.min(n)).map(|k| s[k]).collect();
    (
        sv,
        DMatrix::from_fn(m, m, |i, j| u[(i, j)]),
        DMatrix::from_fn(n, n, |i, j| v[(i, j)]),
    )
}

/// Orthonormal basis (as columns) of `Ker A`. May have zero columns.
pub fn kernel_basis(a: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let (sv, _, v) = full_svd(a);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let cut = rank_tol * smax;
    // Columns past the number of singular values span part of the kernel.
    let null: Vec<usize> = (0..n)
        .filter(|&k| smax == 0.0 || sv.get(k).is_none_or(|&s| s <= cut))
        .collect();
    v.select_columns(&null)
}

/// Numerical rank at relative tolerance `rank_tol`.
pub fn rank(a: &DMatrix<f64>, rank_tol: f64) -> usize {
    a.ncols() - kernel_basis(a, rank_tol).ncols()
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(a: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let (sv, u, v) = full_svd(a);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let cut = rank_tol * smax;
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in sv.iter().enumerate() {
        if s <= cut || s == 0.0 {
            continue;
        }
        out += (v.column(k) * u.column(k).transpose()) / s;
    }
    out
}

/// `Ker Phi ∩ Ker H_I^* = {0}`, decided as full column rank of `[Phi; H_I^*]`.
pub fn restricted_injectivity(phi: &DMatrix<f64>, h_i: &DMatrix<f64>, rank_tol: f64) -> bool {
    let n = phi.ncols();
    let stacked = DMatrix::from_fn(phi.nrows() + h_i.ncols(), n, |r, c| {
        if r < phi.nrows() {
            phi[(r, c)]
        } else {
            h_i[(c, r - phi.nrows())]
        }
    });
    kernel_basis(&stacked, rank_tol).ncols() == 0
}

/// Residuals of the projector identities measured at construction.
#[derive(Clone, Debug, Default)]
pub struct GeometryChecks {
    pub idempotence: f64,
    pub symmetry: f64,
    pub annihilation: f64,
    pub hi_u: f64,
    pub hi_kernel: f64,
    pub gram_condition: f64,
}

/// Linear-algebra objects attached to one support `I`.
#[derive(Clone, Debug)]
pub struct SupportGeometry {
    pub support: HSupport,
    /// `H_I`, `N x |I|`.
    pub h_i: DMatrix<f64>,
    /// Orthonormal basis `U` of `Ker H_I^*`, `N x d`.
    pub u_basis: DMatrix<f64>,
    /// `M_I = (U^* Phi^* Phi U)^{-1}`, `d x d`.
    pub m_matrix: DMatrix<f64>,
    /// `Id - Phi U M_I U^* Phi^*`, `Q x Q`.
    pub gamma_perp: DMatrix<f64>,
    /// `H_I^{+,*}`, `N x |I|`.
    pub hi_pinv_star: DMatrix<f64>,
    /// `Phi H_I^{+,*}`, `Q x |I|`.
    pub phi_tilde: DMatrix<f64>,
    /// Orthonormal basis of `Ker H_I`, `|I| x k`.
    pub ker_hi_basis: DMatrix<f64>,
    pub checks: GeometryChecks,
    phi: DMatrix<f64>,
}

impl SupportGeometry {
    pub fn new(phi: &DMatrix<f64>, h: &HMatrix, support: &HSupport, rank_tol: f64) -> Result<Self> {
        if phi.ncols() != h.n() {
            return Err(Error::Dimension(format!(
                "Phi has {} columns but H acts on R^{}",
                phi.ncols(),
                h.n()
            )));
        }
        if support.is_empty() {
            return Err(Error::Precondition("support is empty".into()));
        }
        if let Some(&bad) = support.indices().iter().find(|&&i| i >= h.n_cols()) {
            return Err(Error::InvalidInput(format!("support index {bad} out of range")));
        }
        let h_i = h.select(support.indices());
        if !restricted_injectivity(phi, &h_i, rank_tol) {
            return Err(Error::Precondition(
                "restricted injectivity fails: Ker Phi meets Ker H_I^*".into(),
            ));
        }
        let u_basis = kernel_basis(&h_i.transpose(), rank_tol);
        let hi_pinv_star = pinv(&h_i, rank_tol).transpose();
        let ker_hi_basis = kernel_basis(&h_i, rank_tol);
        Self::assemble(phi, support.clone(), h_i, u_basis, hi_pinv_star, ker_hi_basis)
    }

    fn assemble(
        phi: &DMatrix<f64>,
        support: HSupport,
        h_i: DMatrix<f64>,
        u_basis: DMatrix<f64>,
        hi_pinv_star: DMatrix<f64>,
        ker_hi_basis: DMatrix<f64>,
    ) -> Result<Self> {
        let q = phi.nrows();
        let d = u_basis.ncols();
        let phi_u = phi * &u_basis;
        let (m_matrix, gram_condition) = if d == 0 {
            (DMatrix::zeros(0, 0), 1.0)
        } else {
            let gram = phi_u.tr_mul(&phi_u);
            let eig = gram.clone().symmetric_eigen();
            let lmax = eig.eigenvalues.max();
            let lmin = eig.eigenvalues.min();
            let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
            if cond > MAX_GRAM_CONDITION {
                return Err(Error::Conditioning(format!(
                    "U^* Phi^* Phi U has condition number {cond:.3e}"
                )));
            }
            let inv = gram.try_inverse().ok_or_else(|| {
                Error::Conditioning("U^* Phi^* Phi U is singular".into())
            })?;
            ((&inv + inv.transpose()) * 0.5, cond)
        };
        let mut gamma_perp = DMatrix::identity(q, q);
        if d > 0 {
            gamma_perp -= &phi_u * &m_matrix * phi_u.transpose();
        }
        gamma_perp = (&gamma_perp + gamma_perp.transpose()) * 0.5;
        let phi_tilde = phi * &hi_pinv_star;

        let phi_scale = phi.amax().max(1.0);
        let h_scale = h_i.amax().max(1.0);
        let checks = GeometryChecks {
            idempotence: (&gamma_perp * &gamma_perp - &gamma_perp).amax(),
            symmetry: (&gamma_perp - gamma_perp.transpose()).amax(),
            annihilation: if d > 0 { (&gamma_perp * &phi_u).amax() / phi_scale } else { 0.0 },
            hi_u: if d > 0 { h_i.tr_mul(&u_basis).amax() / h_scale } else { 0.0 },
            hi_kernel: if ker_hi_basis.ncols() > 0 {
                (&h_i * &ker_hi_basis).amax() / h_scale
            } else {
                0.0
            },
            gram_condition,
        };
        let worst = checks
            .idempotence
            .max(checks.symmetry)
            .max(checks.annihilation)
            .max(checks.hi_u)
            .max(checks.hi_kernel);
        if worst > IDENTITY_TOL {
            return Err(Error::Conditioning(format!(
                "projector identities violated by {worst:.3e}"
            )));
        }
        Ok(SupportGeometry {
            support,
            h_i,
            u_basis,
            m_matrix,
            gamma_perp,
            hi_pinv_star,
            phi_tilde,
            ker_hi_basis,
            checks,
            phi: phi.clone(),
        })
    }

    /// Same geometry with `U` replaced by `U R` for an orthogonal `R`.
    pub fn with_mixed_basis(&self, r: &DMatrix<f64>) -> Result<Self> {
        let d = self.u_basis.ncols();
        if r.shape() != (d, d) {
            return Err(Error::Dimension(format!("mixing matrix must be {d} x {d}")));
        }
        Self::assemble(
            &self.phi,
            self.support.clone(),
            self.h_i.clone(),
            &self.u_basis * r,
            self.hi_pinv_star.clone(),
            self.ker_hi_basis.clone(),
        )
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `dim Ker H_I^*`.
    pub fn model_dim(&self) -> usize {
        self.u_basis.ncols()
    }

    /// `<u, Gamma_I^perp v>`.
    pub fn gamma_inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.gamma_perp * v))
    }

    /// `Phi~_I 1_I`.
    pub fn phi_tilde_ones(&self) -> DVector<f64> {
        self.phi_tilde.column_sum()
    }

    /// `H_I^{+,*} 1_I`.
    pub fn face_direction(&self) -> DVector<f64> {
        self.hi_pinv_star.column_sum()
    }

    /// `rho^2 = |Phi~_I 1_I|^2` in the `Gamma_I^perp` seminorm.
    pub fn rho_sq(&self) -> f64 {
        let a = self.phi_tilde_ones();
        self.gamma_inner(&a, &a)
    }

    /// `U M_I U^* Phi^*`, `N x Q`: the least-squares solve restricted to the
    /// model subspace.
    pub fn restricted_solve(&self) -> DMatrix<f64> {
        let q = self.phi.nrows();
        if self.model_dim() == 0 {
            return DMatrix::zeros(self.phi.ncols(), q);
        }
        &self.u_basis * &self.m_matrix * (&self.phi * &self.u_basis).transpose()
    }

    /// `Phi~_I^* Gamma_I^perp u`, `|I|`-vector.
    pub fn correlate(&self, u: &DVector<f64>) -> DVector<f64> {
        self.phi_tilde.tr_mul(&(&self.gamma_perp * u))
    }

    /// Writes `x = mu H_I^{+,*} 1_I + U alpha` and returns `alpha` together with
    /// the reconstruction error.
    pub fn face_decomposition(&self, x: &DVector<f64>, mu: f64) -> (DVector<f64>, f64) {
        let rest = x - self.face_direction() * mu;
        let alpha = self.u_basis.tr_mul(&rest);
        let err = (&rest - &self.u_basis * &alpha).norm();
        (alpha, err)
    }
}
