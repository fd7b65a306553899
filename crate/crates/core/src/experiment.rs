//! Seeded experiment families over random instances:
//!
//! * `noise-scaling`: with `lambda = c |w|`, the recovery error of the closed
//!   form divided by `|w|` must not depend on the noise scale;
//! * `support-recovery`: with a positive criterion and `lambda` inside the
//!   admissible range, the recovered support equals the true one;
//! * `negative-ic`: with a negative criterion and `|w| / lambda` small, the
//!   oracle solution leaves the true face.
//!
//! Instances are drawn in attempt order from per-attempt seeds and accepted
//! or rejected by a filter; attempts run in parallel but acceptance is
//! decided in attempt order, so results do not depend on scheduling.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{
    closed_form_solution, ic, lambda_range, Certificate, IC_THRESHOLD,
};
use crate::ensemble::{derive_seed, draw_instance, gaussian_vector, Family, RandomInstance, PRNG_NAME};
use crate::error::{Error, Result};
use crate::gauge::{HMatrix, HSupport, DEFAULT_SUPPORT_TOL};
use crate::instance::InstanceSpec;
use crate::numlin::{SupportGeometry, DEFAULT_RANK_TOL};
use crate::qp::{solve_p_lambda, DEFAULT_QP_TOL};

/// Noise scalings used by the noise-scaling experiment.
pub const NOISE_SCALES: [f64; 4] = [1.0, 0.5, 0.25, 0.125];
/// Criterion values below this count as clearly negative.
pub const NEGATIVE_IC_MARGIN: f64 = 1e-4;
const BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    NoiseScaling,
    SupportRecovery,
    NegativeIc,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::NoiseScaling => "noise-scaling",
            ExperimentKind::SupportRecovery => "support-recovery",
            ExperimentKind::NegativeIc => "negative-ic",
        }
    }
}

fn default_sigma() -> f64 {
    0.01
}
fn default_noise_to_lambda() -> f64 {
    1e-3
}
fn default_lambda_fraction() -> f64 {
    0.2
}
fn default_qp_tol() -> f64 {
    DEFAULT_QP_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Random ensemble to draw from; exclusive with `instance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    /// Number of measurements (rows of `Phi`) for `family`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    /// Fixed `Phi`, `H` and `x0`; only the noise direction is drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSpec>,
    /// Number of accepted instances to collect.
    pub count: usize,
    /// Noise standard deviation (noise-scaling, support-recovery).
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// `|w|_2 / lambda` (negative-ic).
    #[serde(default = "default_noise_to_lambda")]
    pub noise_to_lambda: f64,
    /// `lambda` as a fraction of `rho^2 J_H(x0)` (negative-ic).
    #[serde(default = "default_lambda_fraction")]
    pub lambda_fraction: f64,
    /// Attempt budget; defaults to `200 * count`.
    #[serde(default)]
    pub max_draws: Option<usize>,
    #[serde(default = "default_qp_tol")]
    pub qp_tol: f64,
}

impl ExperimentConfig {
    pub fn new(family: Family, q: usize, count: usize) -> Self {
        ExperimentConfig {
            family: Some(family),
            q: Some(q),
            instance: None,
            count,
            sigma: default_sigma(),
            noise_to_lambda: default_noise_to_lambda(),
            lambda_fraction: default_lambda_fraction(),
            max_draws: None,
            qp_tol: default_qp_tol(),
        }
    }

    /// Config drawing only the noise around a fixed instance.
    pub fn fixed(instance: InstanceSpec, count: usize) -> Self {
        ExperimentConfig {
            family: None,
            q: None,
            instance: Some(instance),
            ..Self::new(Family::L1 { n: 1, sparsity: 1 }, 1, count)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source().map(|_| ())
    }

    fn source(&self) -> Result<Source> {
        if self.count == 0 {
            return Err(Error::InvalidInput("count must be positive".into()));
        }
        let positive = [self.sigma, self.noise_to_lambda, self.lambda_fraction, self.qp_tol];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "sigma, noise_to_lambda, lambda_fraction and qp_tol must be positive".into(),
            ));
        }
        match (&self.family, self.q, &self.instance) {
            (Some(family), Some(q), None) => {
                family.validate()?;
                if q == 0 {
                    return Err(Error::InvalidInput("q must be positive".into()));
                }
                Ok(Source::Random { family: family.clone(), h: family.build()?, q })
            }
            (None, None, Some(spec)) => {
                let inst = spec.resolve()?;
                let Some(x0) = inst.x0 else {
                    return Err(Error::InvalidInput("fixed experiment instance needs x0".into()));
                };
                Ok(Source::Fixed { phi: inst.phi, h: inst.h, x0 })
            }
            _ => Err(Error::InvalidInput(
                "config needs either family and q, or instance".into(),
            )),
        }
    }

    fn budget(&self) -> usize {
        self.max_draws.unwrap_or(200 * self.count)
    }
}

enum Source {
    Random { family: Family, h: HMatrix, q: usize },
    Fixed { phi: DMatrix<f64>, h: HMatrix, x0: DVector<f64> },
}

impl Source {
    fn h(&self) -> &HMatrix {
        match self {
            Source::Random { h, .. } | Source::Fixed { h, .. } => h,
        }
    }

    fn draw(&self, seed: u64) -> RandomInstance {
        match self {
            Source::Random { family, q, .. } => draw_instance(family, *q, seed),
            Source::Fixed { phi, x0, .. } => RandomInstance {
                seed,
                phi: phi.clone(),
                x0: x0.clone(),
                noise: gaussian_vector(&mut ChaCha8Rng::seed_from_u64(seed), phi.nrows()),
            },
        }
    }
}

/// An instance together with its face geometry and criterion.
pub struct Prepared {
    pub inst: RandomInstance,
    pub support: HSupport,
    pub geom: SupportGeometry,
    pub cert: Certificate,
    pub mu0: f64,
}

/// Evaluates the criterion of the face of `inst.x0`.
pub fn prepare(h: &HMatrix, inst: RandomInstance) -> Result<Prepared> {
    let support = h.h_support(&inst.x0, DEFAULT_SUPPORT_TOL)?;
    let geom = SupportGeometry::new(&inst.phi, h, &support, DEFAULT_RANK_TOL)?;
    let cert = ic(&geom)?;
    let mu0 = h.eval(&inst.x0)?;
    Ok(Prepared { inst, support, geom, cert, mu0 })
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseScalingRow {
    pub instance: usize,
    pub seed: u64,
    pub scale: f64,
    pub ic: f64,
    pub noise_norm: f64,
    pub lambda: f64,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    pub mu: f64,
    pub certified: bool,
    pub error: f64,
    pub error_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SupportRecoveryRow {
    pub instance: usize,
    pub seed: u64,
    pub ic: f64,
    pub support_size: usize,
    pub lambda: f64,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    pub mu: f64,
    pub certified: bool,
    pub closed_form_support_match: bool,
    pub oracle_support_match: bool,
    pub oracle_rel_error: f64,
    pub oracle_gauge: f64,
    pub mu_gap: f64,
    pub recovery_error: f64,
    pub oracle_kkt: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NegativeIcRow {
    pub instance: usize,
    pub seed: u64,
    pub ic: f64,
    pub support_size: usize,
    pub lambda: f64,
    pub noise_norm: f64,
    pub oracle_support_size: usize,
    pub support_mismatch: bool,
    pub oracle_kkt: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub kind: String,
    pub seed: u64,
    pub prng: String,
    pub config: ExperimentConfig,
    pub accepted: usize,
    pub draws: usize,
    pub rejected: BTreeMap<String, usize>,
    /// Headline number: error-ratio spread, recovery fraction or mismatch
    /// fraction depending on the kind.
    pub metric_name: String,
    pub metric: f64,
}

#[derive(Clone, Debug)]
pub struct Outcome<R> {
    pub rows: Vec<R>,
    pub summary: Summary,
}

struct Collected<T> {
    accepted: Vec<T>,
    draws: usize,
    rejected: BTreeMap<String, usize>,
}

/// Runs `attempt` over seeded attempts until `count` are accepted.
fn collect<T, F>(cfg: &ExperimentConfig, seed: u64, attempt: F) -> Result<Collected<T>>
where
    T: Send,
    F: Fn(u64) -> std::result::Result<T, String> + Sync,
{
    let budget = cfg.budget();
    let mut out = Collected { accepted: Vec::new(), draws: 0, rejected: BTreeMap::new() };
    let mut next = 0usize;
    while out.accepted.len() < cfg.count && next < budget {
        let end = (next + BATCH).min(budget);
        let results: Vec<_> = (next..end)
            .into_par_iter()
            .map(|i| attempt(derive_seed(seed, i as u64)))
            .collect();
        for r in results {
            if out.accepted.len() == cfg.count {
                break;
            }
            out.draws += 1;
            match r {
                Ok(t) => out.accepted.push(t),
                Err(reason) => *out.rejected.entry(reason).or_default() += 1,
            }
        }
        next = end;
    }
    if out.accepted.len() < cfg.count {
        return Err(Error::Precondition(format!(
            "only {} of {} instances accepted within {} draws (rejections: {:?})",
            out.accepted.len(),
            cfg.count,
            budget,
            out.rejected
        )));
    }
    Ok(out)
}

fn reason(e: &Error) -> String {
    match e {
        Error::Precondition(m) if m.contains("restricted injectivity") => "restricted-injectivity".into(),
        Error::Precondition(m) if m.contains("vanishes") => "degenerate-face".into(),
        Error::Conditioning(_) => "ill-conditioned".into(),
        Error::SolverFailure(_) => "solver-failure".into(),
        _ => "precondition".into(),
    }
}

fn summary(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    seed: u64,
    draws: usize,
    accepted: usize,
    rejected: BTreeMap<String, usize>,
    metric_name: &str,
    metric: f64,
) -> Summary {
    Summary {
        kind: kind.as_str().into(),
        seed,
        prng: PRNG_NAME.into(),
        config: cfg.clone(),
        accepted,
        draws,
        rejected,
        metric_name: metric_name.into(),
        metric,
    }
}

pub fn run_noise_scaling(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome<NoiseScalingRow>> {
    let source = cfg.source()?;
    let h = source.h();
    let collected = collect(cfg, seed, |s| {
        let p = prepare(h, source.draw(s)).map_err(|e| reason(&e))?;
        if !(p.cert.ic_value > IC_THRESHOLD) {
            return Err("non-positive-ic".into());
        }
        let w1 = &p.inst.noise * cfg.sigma;
        let r1 = lambda_range(&p.geom, &h, &p.inst.x0, &w1, &p.cert).map_err(|e| reason(&e))?;
        let Some(mid) = r1.midpoint() else {
            return Err("empty-lambda-range".into());
        };
        let c = mid / w1.norm();
        let mut rows = Vec::with_capacity(NOISE_SCALES.len());
        for scale in NOISE_SCALES {
            let w = &w1 * scale;
            let lambda = c * w.norm();
            let range = lambda_range(&p.geom, &h, &p.inst.x0, &w, &p.cert).map_err(|e| reason(&e))?;
            if !range.contains(lambda) {
                return Err("lambda-leaves-range".into());
            }
            let y = &p.inst.phi * &p.inst.x0 + &w;
            let cf = closed_form_solution(&p.geom, &h, &y, lambda).map_err(|e| reason(&e))?;
            let error = (&cf.x_hat - &p.inst.x0).norm();
            rows.push(NoiseScalingRow {
                instance: 0,
                seed: s,
                scale,
                ic: p.cert.ic_value,
                noise_norm: w.norm(),
                lambda,
                lambda_lower: range.lower,
                lambda_upper: range.upper,
                mu: cf.mu,
                certified: cf.certified,
                error,
                error_ratio: error / w.norm(),
            });
        }
        Ok(rows)
    })?;
    let mut rows = Vec::new();
    let mut spread: f64 = 0.0;
    for (i, group) in collected.accepted.into_iter().enumerate() {
        let ratios: Vec<f64> = group.iter().map(|r| r.error_ratio).collect();
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        spread = spread.max((max - min) / min);
        rows.extend(group.into_iter().map(|mut r| {
            r.instance = i;
            r
        }));
    }
    let s = summary(
        ExperimentKind::NoiseScaling,
        cfg,
        seed,
        collected.draws,
        cfg.count,
        collected.rejected,
        "max_relative_ratio_spread",
        spread,
    );
    Ok(Outcome { rows, summary: s })
}

pub fn run_support_recovery(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome<SupportRecoveryRow>> {
    let source = cfg.source()?;
    let h = source.h();
    let collected = collect(cfg, seed, |s| {
        let p = prepare(h, source.draw(s)).map_err(|e| reason(&e))?;
        if !(p.cert.ic_value > IC_THRESHOLD) {
            return Err("non-positive-ic".into());
        }
        let w = &p.inst.noise * cfg.sigma;
        let range = lambda_range(&p.geom, &h, &p.inst.x0, &w, &p.cert).map_err(|e| reason(&e))?;
        let Some(lambda) = range.midpoint() else {
            return Err("empty-lambda-range".into());
        };
        let y = &p.inst.phi * &p.inst.x0 + &w;
        let cf = closed_form_solution(&p.geom, &h, &y, lambda).map_err(|e| reason(&e))?;
        let oracle = solve_p_lambda(&p.inst.phi, &h, &y, lambda, cfg.qp_tol).map_err(|e| reason(&e))?;
        let cf_support = h.h_support(&cf.x_hat, DEFAULT_SUPPORT_TOL).map_err(|e| reason(&e))?;
        let oracle_match = oracle.support.as_ref().is_some_and(|o| o.same_set(&p.support));
        let oracle_gauge = h.eval(&oracle.x).map_err(|e| reason(&e))?;
        Ok(SupportRecoveryRow {
            instance: 0,
            seed: s,
            ic: p.cert.ic_value,
            support_size: p.support.len(),
            lambda,
            lambda_lower: range.lower,
            lambda_upper: range.upper,
            mu: cf.mu,
            certified: cf.certified,
            closed_form_support_match: cf_support.same_set(&p.support),
            oracle_support_match: oracle_match,
            oracle_rel_error: (&cf.x_hat - &oracle.x).norm() / cf.x_hat.norm(),
            oracle_gauge,
            mu_gap: (cf.mu - oracle_gauge).abs(),
            recovery_error: (&cf.x_hat - &p.inst.x0).norm(),
            oracle_kkt: oracle.kkt_residual,
        })
    })?;
    let mut rows = collected.accepted;
    rows.iter_mut().enumerate().for_each(|(i, r)| r.instance = i);
    let certified: Vec<&SupportRecoveryRow> = rows.iter().filter(|r| r.certified).collect();
    let fraction = certified.iter().filter(|r| r.closed_form_support_match).count() as f64
        / certified.len().max(1) as f64;
    let s = summary(
        ExperimentKind::SupportRecovery,
        cfg,
        seed,
        collected.draws,
        rows.len(),
        collected.rejected,
        "recovery_fraction",
        fraction,
    );
    Ok(Outcome { rows, summary: s })
}

pub fn run_negative_ic(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome<NegativeIcRow>> {
    let source = cfg.source()?;
    let h = source.h();
    let collected = collect(cfg, seed, |s| {
        let p = prepare(h, source.draw(s)).map_err(|e| reason(&e))?;
        if !(p.cert.ic_value < -NEGATIVE_IC_MARGIN) {
            return Err("ic-not-negative".into());
        }
        let lambda = cfg.lambda_fraction * p.cert.rho_sq * p.mu0;
        let dir: DVector<f64> = p.inst.noise.normalize();
        let w = dir * (cfg.noise_to_lambda * lambda);
        let y = &p.inst.phi * &p.inst.x0 + &w;
        let oracle = solve_p_lambda(&p.inst.phi, &h, &y, lambda, cfg.qp_tol).map_err(|e| reason(&e))?;
        let mismatch = !oracle.support.as_ref().is_some_and(|o| o.same_set(&p.support));
        Ok(NegativeIcRow {
            instance: 0,
            seed: s,
            ic: p.cert.ic_value,
            support_size: p.support.len(),
            lambda,
            noise_norm: w.norm(),
            oracle_support_size: oracle.support.as_ref().map_or(0, HSupport::len),
            support_mismatch: mismatch,
            oracle_kkt: oracle.kkt_residual,
        })
    })?;
    let mut rows = collected.accepted;
    rows.iter_mut().enumerate().for_each(|(i, r)| r.instance = i);
    let fraction = rows.iter().filter(|r| r.support_mismatch).count() as f64 / rows.len() as f64;
    let s = summary(
        ExperimentKind::NegativeIc,
        cfg,
        seed,
        collected.draws,
        rows.len(),
        collected.rejected,
        "mismatch_fraction",
        fraction,
    );
    Ok(Outcome { rows, summary: s })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"family":{"kind":"l1","n":6,"sparsity":2},"q":4,"count":3}"#).unwrap();
        assert!(ExperimentConfig { instance: cfg.instance.clone(), q: None, ..cfg.clone() }.validate().is_err());
        assert_eq!(cfg.sigma, 0.01);
        assert_eq!(cfg.budget(), 600);
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.sigma = -1.0;
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"family":{"kind":"l1","n":6,"sparsity":2},"q":4,"count":3,"bogus":1}"#).is_err());
    }

    #[test]
    fn support_recovery_small_run() {
        let cfg = ExperimentConfig::new(Family::L1 { n: 6, sparsity: 2 }, 5, 4);
        let out = run_support_recovery(&cfg, 11).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert!(out.rows.iter().all(|r| r.certified && r.closed_form_support_match));
        assert_eq!(out.summary.metric, 1.0);
        let again = run_support_recovery(&cfg, 11).unwrap();
        let seeds: Vec<u64> = out.rows.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, again.rows.iter().map(|r| r.seed).collect::<Vec<_>>());
    }

    #[test]
    fn exhausted_budget_is_reported() {
        let mut cfg = ExperimentConfig::new(Family::L1 { n: 6, sparsity: 2 }, 5, 4);
        cfg.max_draws = Some(2);
        assert!(run_support_recovery(&cfg, 1).is_err());
    }
}
