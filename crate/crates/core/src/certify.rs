//! Identifiability criterion, certified closed-form solutions, admissible
//! regularization ranges and noiseless dual certificates.
//!
//! Notation: `g = Phi~_I^* Gamma_I^perp Phi~_I 1_I` is the support-wise
//! correlation vector whose sum is `rho^2 = |Phi~_I 1_I|^2_{Gamma_I^perp}`.
//! Every vector `z` in `Ker H_I` sums to zero, since `H_I^* x = mu 1_I` for a
//! point `x` on the face and `<H_I^* x, z> = <x, H_I z> = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauge::{HMatrix, HSupport};
use crate::lp::{LinearProgram, LpStatus};
use crate::numlin::{kernel_basis, pinv, restricted_injectivity, SupportGeometry};

/// IC values above this are certified positive, below its negative
/// certified negative.
pub const IC_THRESHOLD: f64 = 1e-8;
/// Smallest simplex weight accepted as strictly positive.
pub const RELINT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    CertifiedPositive,
    CertifiedNegative,
    Inconclusive,
}

impl Verdict {
    pub fn from_ic(ic: f64) -> Self {
        if ic > IC_THRESHOLD {
            Verdict::CertifiedPositive
        } else if ic < -IC_THRESHOLD {
            Verdict::CertifiedNegative
        } else {
            Verdict::Inconclusive
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::CertifiedPositive => "certified-positive",
            Verdict::CertifiedNegative => "certified-negative",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Constants bounding the off-support correlations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub c1: f64,
    pub c2: f64,
    pub t: f64,
    pub rho_sq: f64,
}

#[derive(Clone, Debug)]
pub struct Certificate {
    pub ic_value: f64,
    /// Maximizing `z_I` in `Ker H_I`.
    pub z_star: DVector<f64>,
    /// `Phi~_I^* Gamma_I^perp Phi~_I 1_I`.
    pub correlations: DVector<f64>,
    /// Duality gap of the IC linear program (zero when no LP was needed).
    pub error_bar: f64,
    pub rho_sq: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug)]
pub struct ClosedForm {
    pub x_hat: DVector<f64>,
    pub mu: f64,
    pub support: HSupport,
    pub lambda: f64,
    /// Relative-interior simplex witness (best one found).
    pub v_tilde: DVector<f64>,
    /// `|H_I^* x_hat - mu 1_I|_inf`.
    pub inside_residual: f64,
    /// `mu - max_{j in I^c} <h_j, x_hat>`; infinite when `I^c` is empty.
    pub outside_margin: f64,
    pub certified: bool,
    /// First violated condition when not certified.
    pub reason: Option<String>,
}

/// Simplex witness for the first-order conditions at a candidate point.
#[derive(Clone, Debug)]
pub struct OptimalityWitness {
    pub support: HSupport,
    pub v: DVector<f64>,
    /// `|U^* Phi^* (Phi x - y)|_inf`.
    pub stationarity: f64,
    pub in_simplex: bool,
    pub in_relint: bool,
    pub restricted_injectivity: bool,
    /// Relative interior together with restricted injectivity.
    pub unique: bool,
}

/// Admissible regularization weights `lower < lambda < upper`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaRange {
    pub lower: f64,
    pub upper: f64,
    /// Upper bound from positivity of `mu`.
    pub upper_mu: f64,
    /// Bounds from the strict off-support inequality.
    pub lower_outside: f64,
    pub upper_outside: f64,
    /// Lower bound from positivity of the tilted simplex witness.
    pub lower_witness: f64,
}

impl LambdaRange {
    pub fn is_empty(&self) -> bool {
        !(self.lower < self.upper)
    }

    pub fn contains(&self, lambda: f64) -> bool {
        self.lower < lambda && lambda < self.upper
    }

    /// Midpoint of the interval, or `None` when it is empty.
    pub fn midpoint(&self) -> Option<f64> {
        (!self.is_empty()).then(|| 0.5 * (self.lower + self.upper))
    }
}

/// Noiseless dual certificate `(eta, v)` with `Phi^* eta = H_I v`.
#[derive(Clone, Debug)]
pub struct DualCertificate {
    pub eta: DVector<f64>,
    pub v: DVector<f64>,
    /// `|Phi^* eta - H_I v|_inf`.
    pub source_residual: f64,
    pub min_v: f64,
    pub sum_v: f64,
}

/// `max_{z in span K} min_i (c + z)_i`, returning the value, the maximizer
/// and the LP duality gap.
pub fn max_min_over_kernel(
    c: &DVector<f64>,
    kernel: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>, f64)> {
    let m = c.len();
    let k = kernel.ncols();
    if k == 0 {
        return Ok((c.min(), DVector::zeros(m), 0.0));
    }
    // Variables: r, beta_1..beta_k; r - (K beta)_i <= c_i.
    let mut obj = vec![0.0; k + 1];
    obj[0] = 1.0;
    let mut lp = LinearProgram::maximize(obj);
    for i in 0..m {
        let mut row = Vec::with_capacity(k + 1);
        row.push(1.0);
        row.extend(kernel.row(i).iter().map(|v| -v));
        lp.add_le(row, c[i]);
    }
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded => {
            return Err(Error::Precondition(
                "support is not a face of the gauge ball (max-min LP unbounded)".into(),
            ));
        }
        LpStatus::Infeasible => {
            return Err(Error::SolverFailure("max-min LP reported infeasible".into()));
        }
    }
    let beta = DVector::from_column_slice(&sol.z[1..]);
    let z = kernel * beta;
    let value = (c + &z).min();
    Ok((value, z, sol.duality_gap(&lp).abs()))
}

fn check_phi_tilde_ones(geom: &SupportGeometry) -> Result<()> {
    let a = geom.phi_tilde_ones();
    let scale = geom.phi().norm() * geom.face_direction().norm();
    if a.norm() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Precondition("Phi~_I 1_I vanishes".into()));
    }
    Ok(())
}

/// Identifiability criterion of the support described by `geom`.
pub fn ic(geom: &SupportGeometry) -> Result<Certificate> {
    check_phi_tilde_ones(geom)?;
    let g = geom.correlate(&geom.phi_tilde_ones());
    let (value, z_star, gap) = max_min_over_kernel(&g, &geom.ker_hi_basis)?;
    Ok(Certificate {
        ic_value: value,
        z_star,
        rho_sq: g.sum(),
        correlations: g,
        error_bar: gap,
        verdict: Verdict::from_ic(value),
    })
}

/// Builds the geometry of `support` and evaluates its criterion.
pub fn ic_for_support(
    phi: &DMatrix<f64>,
    h: &HMatrix,
    support: &HSupport,
    rank_tol: f64,
) -> Result<(SupportGeometry, Certificate)> {
    let geom = SupportGeometry::new(phi, h, support, rank_tol)?;
    let cert = ic(&geom)?;
    Ok((geom, cert))
}

/// `C1`, `C2`, `T` and `rho^2` for a nonzero `x0` whose exact support is
/// `geom.support`.
pub fn constants(h: &HMatrix, x0: &DVector<f64>, geom: &SupportGeometry) -> Result<Constants> {
    let complement = geom.support.complement(h.n_cols());
    if complement.is_empty() {
        return Err(Error::Precondition(
            "every column is active: the off-support gap T is undefined".into(),
        ));
    }
    let corr = h.correlations(x0)?;
    let mu0 = corr.max();
    let off_max = complement.iter().map(|&j| corr[j]).fold(f64::NEG_INFINITY, f64::max);
    let t = mu0 - off_max;
    if !(t > 0.0) {
        return Err(Error::Precondition(format!(
            "support is not the exact support of x0 (gap T = {t:.3e})"
        )));
    }
    let h_out = h.select(&complement);
    let solve = geom.restricted_solve();
    let n = h.n();
    let tilt = (&solve * geom.phi() - DMatrix::identity(n, n)) * geom.face_direction();
    let c1 = h_out.tr_mul(&tilt).amax();
    let noise_map = h_out.tr_mul(&solve);
    let c2 = noise_map.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    Ok(Constants { c1, c2, t, rho_sq: geom.rho_sq() })
}

/// `mu = (<Phi~_I 1_I, y>_{Gamma_I^perp} - lambda) / rho^2`.
pub fn mu_observable(geom: &SupportGeometry, y: &DVector<f64>, lambda: f64) -> f64 {
    (geom.gamma_inner(&geom.phi_tilde_ones(), y) - lambda) / geom.rho_sq()
}

/// The same `mu` written through the true vector and the noise:
/// `mu0 + (<Phi~_I 1_I, w>_{Gamma_I^perp} - lambda) / rho^2`.
pub fn mu_from_truth(geom: &SupportGeometry, mu0: f64, w: &DVector<f64>, lambda: f64) -> f64 {
    mu0 + (geom.gamma_inner(&geom.phi_tilde_ones(), w) - lambda) / geom.rho_sq()
}

/// Closed-form minimizer on the face `geom.support`, with its certification.
pub fn closed_form_solution(
    geom: &SupportGeometry,
    h: &HMatrix,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<ClosedForm> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if y.len() != geom.phi().nrows() {
        return Err(Error::Dimension(format!(
            "y has length {}, expected {}",
            y.len(),
            geom.phi().nrows()
        )));
    }
    check_phi_tilde_ones(geom)?;
    let rho_sq = geom.rho_sq();
    if !(rho_sq > 0.0) {
        return Err(Error::Precondition("rho^2 vanishes".into()));
    }
    let a = geom.phi_tilde_ones();
    let mu = mu_observable(geom, y, lambda);
    let residual = y - &a * mu;
    let x_hat = geom.face_direction() * mu + geom.restricted_solve() * &residual;

    let inside = geom.h_i.tr_mul(&x_hat).add_scalar(-mu).amax();
    let corr = h.correlations(&x_hat)?;
    let complement = geom.support.complement(h.n_cols());
    let outside_margin = if complement.is_empty() {
        f64::INFINITY
    } else {
        mu - complement.iter().map(|&j| corr[j]).fold(f64::NEG_INFINITY, f64::max)
    };
    let c = geom.correlate(&residual) / lambda;
    let (min_v, z, _) = max_min_over_kernel(&c, &geom.ker_hi_basis)?;
    let v_tilde = c + z;
    let sum_v = v_tilde.sum();

    let scale = 1.0 + mu.abs() * geom.h_i.amax();
    let reason = if !(mu > 0.0) {
        Some(format!("mu = {mu:.6e} is not positive"))
    } else if inside > 1e-8 * scale {
        Some(format!("on-support equalities violated by {inside:.3e}"))
    } else if !(outside_margin > 0.0) {
        Some(format!("off-support margin {outside_margin:.3e} is not positive"))
    } else if (sum_v - 1.0).abs() > 1e-9 {
        Some(format!("simplex witness sums to {sum_v:.12}"))
    } else if !(min_v > RELINT_TOL) {
        Some(format!("simplex witness min {min_v:.3e} not in the relative interior"))
    } else {
        None
    };
    Ok(ClosedForm {
        x_hat,
        mu,
        support: geom.support.clone(),
        lambda,
        v_tilde,
        inside_residual: inside,
        outside_margin,
        certified: reason.is_none(),
        reason,
    })
}

/// Tolerances used by [`verify_optimality`].
#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Relative tolerance for detecting the support of the candidate.
    pub support_tol: f64,
    /// Slack allowed in the stationarity and simplex conditions.
    pub feas_tol: f64,
    pub rank_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            support_tol: crate::gauge::DEFAULT_SUPPORT_TOL,
            feas_tol: 1e-9,
            rank_tol: crate::numlin::DEFAULT_RANK_TOL,
        }
    }
}

/// Checks the first-order conditions of the penalized problem at `x_hat`.
///
/// With `I` the support of `x_hat` and `U` a basis of `Ker H_I^*`, `x_hat` is a
/// minimizer iff `U^* Phi^* (Phi x_hat - y) = 0` and some
/// `v = z + H_I^+ Phi^* (y - Phi x_hat) / lambda`, `z in Ker H_I`, lies in the
/// canonical simplex. The best `z` maximizes `min_i v_i`. Returns
/// [`Error::NotOptimal`] when no such `v` exists.
pub fn verify_optimality(
    phi: &DMatrix<f64>,
    h: &HMatrix,
    y: &DVector<f64>,
    lambda: f64,
    x_hat: &DVector<f64>,
    opts: VerifyOptions,
) -> Result<OptimalityWitness> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let support = h.h_support(x_hat, opts.support_tol)?;
    let h_i = h.select(support.indices());
    let grad = phi.tr_mul(&(y - phi * x_hat));
    let u = kernel_basis(&h_i.transpose(), opts.rank_tol);
    let grad_scale = 1.0 + phi.tr_mul(y).amax();
    let stationarity = if u.ncols() > 0 { u.tr_mul(&grad).amax() } else { 0.0 };
    let c = pinv(&h_i, opts.rank_tol) * &grad / lambda;
    let ker = kernel_basis(&h_i, opts.rank_tol);
    let (min_v, z, _) = max_min_over_kernel(&c, &ker)?;
    let v = c + z;
    let sum = v.sum();
    let stationary = stationarity <= opts.feas_tol * grad_scale;
    let in_simplex = stationary && min_v >= -opts.feas_tol && (sum - 1.0).abs() <= opts.feas_tol;
    if !in_simplex {
        return Err(Error::NotOptimal(format!(
            "no simplex multiplier: stationarity {stationarity:.3e}, min weight {min_v:.3e}, weight sum {sum:.12}"
        )));
    }
    let in_relint = min_v > RELINT_TOL;
    let injective = restricted_injectivity(phi, &h_i, opts.rank_tol);
    Ok(OptimalityWitness {
        support,
        v,
        stationarity,
        in_simplex,
        in_relint,
        restricted_injectivity: injective,
        unique: in_relint && injective,
    })
}

/// Multiplier form on a fixed support: `Phi~_I^* Gamma_I^perp (y - mu Phi~_I 1_I) / lambda`.
pub fn support_multiplier(geom: &SupportGeometry, y: &DVector<f64>, mu: f64, lambda: f64) -> DVector<f64> {
    geom.correlate(&(y - geom.phi_tilde_ones() * mu)) / lambda
}

/// Admissible `lambda` for noise `w`, computed from three sufficient
/// conditions on the actual noise:
///
/// 1. `mu > 0`;
/// 2. `mu0 - T + |mu0 - mu| C1 + C2 |w|_2 < mu`, which keeps every
///    off-support correlation strictly below `mu`;
/// 3. some `z in Ker H_I` makes `delta g + b + z` componentwise positive,
///    where `delta = mu0 - mu = (lambda - a) / rho^2`, `b = Phi~_I^* Gamma_I^perp w`
///    and `a = <Phi~_I 1_I, w>_{Gamma_I^perp}`.
///
/// Conditions 1 and 2 are affine in `lambda`. The left-hand side of 3 is
/// concave in `delta` and grows like `delta * IC`, so its positive set is an
/// open half-line whose end is the value of one LP.
pub fn lambda_range(
    geom: &SupportGeometry,
    h: &HMatrix,
    x0: &DVector<f64>,
    w: &DVector<f64>,
    cert: &Certificate,
) -> Result<LambdaRange> {
    if !(cert.ic_value > IC_THRESHOLD) {
        return Err(Error::Precondition(format!(
            "lambda range needs a positive criterion, got {:.3e}",
            cert.ic_value
        )));
    }
    if w.len() != geom.phi().nrows() {
        return Err(Error::Dimension("noise length differs from Phi rows".into()));
    }
    let k = constants(h, x0, geom)?;
    let mu0 = h.eval(x0)?;
    let rho_sq = k.rho_sq;
    let a = geom.gamma_inner(&geom.phi_tilde_ones(), w);
    let b = geom.correlate(w);
    let to_lambda = |delta: f64| a + rho_sq * delta;

    // 1. mu > 0  <=>  delta < mu0.
    let upper_mu = to_lambda(mu0);

    // 2. f(delta) < R with f(delta) = (1 + C1) delta for delta >= 0 and
    //    (1 - C1) delta below zero.
    let r = k.t - k.c2 * w.norm();
    let slope_left = 1.0 - k.c1;
    let (d_lo, d_hi) = if r > 0.0 {
        let hi = r / (1.0 + k.c1);
        let lo = if slope_left < 0.0 { r / slope_left } else { f64::NEG_INFINITY };
        (lo, hi)
    } else if slope_left > 0.0 {
        (f64::NEG_INFINITY, r / slope_left)
    } else {
        (f64::INFINITY, f64::NEG_INFINITY)
    };
    let (lower_outside, upper_outside) = if d_lo < d_hi {
        (to_lambda(d_lo), to_lambda(d_hi))
    } else {
        (f64::INFINITY, f64::NEG_INFINITY)
    };

    // 3. phi(delta) = max_z min_i (delta g + b + z)_i is concave and tends to
    //    +inf, so it is increasing and positive exactly beyond its root.
    let lower_witness = to_lambda(witness_root(&cert.correlations, &b, &geom.ker_hi_basis)?);

    let lower = 0f64.max(lower_outside).max(lower_witness);
    let upper = upper_mu.min(upper_outside);
    Ok(LambdaRange { lower, upper, upper_mu, lower_outside, upper_outside, lower_witness })
}

/// Smallest `delta` for which some `z = K beta` makes `delta g + b + z >= 0`.
///
/// Summing the constraints gives `delta >= -sum(b) / sum(g)` because kernel
/// vectors sum to zero, so the LP is bounded whenever `sum(g) > 0`.
fn witness_root(g: &DVector<f64>, b: &DVector<f64>, kernel: &DMatrix<f64>) -> Result<f64> {
    let k = kernel.ncols();
    let mut obj = vec![0.0; k + 1];
    obj[0] = 1.0;
    let mut lp = LinearProgram::minimize(obj);
    for i in 0..g.len() {
        let mut row = Vec::with_capacity(k + 1);
        row.push(-g[i]);
        row.extend(kernel.row(i).iter().map(|v| -v));
        lp.add_le(row, b[i]);
    }
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.z[0]),
        status => Err(Error::SolverFailure(format!("witness LP ended {status:?}"))),
    }
}

/// Dual certificate for the equality-constrained problem.
///
/// `v = (g + z*) / rho^2` and `eta = Gamma_I^perp Phi~_I 1_I / rho^2`, so that
/// `Phi^* eta = H_I v` and `v` lies in the relative interior of the simplex
/// whenever the criterion is positive.
pub fn noiseless_certificate(geom: &SupportGeometry, cert: &Certificate) -> Result<DualCertificate> {
    if !(cert.ic_value > IC_THRESHOLD) {
        return Err(Error::Precondition(format!(
            "no dual certificate: criterion {:.3e} is not positive",
            cert.ic_value
        )));
    }
    let rho_sq = cert.rho_sq;
    let v = (&cert.correlations + &cert.z_star) / rho_sq;
    let eta = &geom.gamma_perp * geom.phi_tilde_ones() / rho_sq;
    let source_residual = (geom.phi().tr_mul(&eta) - &geom.h_i * &v).amax();
    Ok(DualCertificate { min_v: v.min(), sum_v: v.sum(), eta, v, source_residual })
}
