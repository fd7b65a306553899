//! Polyhedral gauges `J_H(x) = max_i <x, h_i>`, their supports and
//! subdifferentials.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::{Bound, LinearProgram, LpStatus};

/// Default relative tolerance for detecting ties at the maximum.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-9;

/// Column collection `H = (h_1, ..., h_{N_H})`, stored as an `N x N_H` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HMatrix {
    columns: DMatrix<f64>,
}

/// Sorted set of column indices (0-based) attaining the gauge value.
#[derive(Clone, Debug, PartialEq)]
pub struct HSupport {
    indices: Vec<usize>,
    tol: f64,
}

/// `dJ_H(x) = { H_I v : v in the canonical simplex }`.
#[derive(Clone, Debug)]
pub struct SubdiffDescriptor {
    pub h_sub: DMatrix<f64>,
    pub support: HSupport,
}

/// Outcome of the gauge validity check.
#[derive(Clone, Debug)]
pub struct GaugeValidity {
    pub valid: bool,
    /// `min { J_H(x) : |x|_inf = 1 }`; positive exactly when the gauge is valid.
    pub margin: f64,
    /// A direction `x != 0` with `J_H(x) <= 0` when the gauge is invalid.
    pub witness: Option<Vec<f64>>,
}

/// Result of a subgradient membership query.
#[derive(Clone, Debug)]
pub struct Membership {
    pub member: bool,
    /// Best simplex weights found.
    pub weights: Vec<f64>,
    /// `min_v |H_I v - g|_1` over the simplex.
    pub residual: f64,
}

impl HMatrix {
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        if columns.nrows() == 0 || columns.ncols() == 0 {
            return Err(Error::InvalidInput("H needs at least one row and one column".into()));
        }
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("H has non-finite entries".into()));
        }
        Ok(HMatrix { columns })
    }

    /// Builds `H` from a list of columns `h_i`, each of length `N`.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let n = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("H columns have differing lengths".into()));
        }
        let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        Self::new(m)
    }

    /// Ambient dimension `N`.
    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    /// Number of columns `N_H`.
    pub fn n_cols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.columns.column(i).into_owned()
    }

    /// `H_I`, the columns listed in `indices`.
    pub fn select(&self, indices: &[usize]) -> DMatrix<f64> {
        self.columns.select_columns(indices)
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "vector has length {}, gauge acts on R^{}",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }

    /// `H^* x`, the vector of all correlations `<x, h_i>`.
    pub fn correlations(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        Ok(self.columns.tr_mul(x))
    }

    /// `J_H(x) = max_i <x, h_i>`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.correlations(x)?.max())
    }

    /// Indices `i` with `<x, h_i> >= (1 - tol) J_H(x)`.
    pub fn h_support(&self, x: &DVector<f64>, tol: f64) -> Result<HSupport> {
        let corr = self.correlations(x)?;
        if x.iter().all(|v| *v == 0.0) {
            return Err(Error::UndefinedSupport);
        }
        if !(tol >= 0.0) {
            return Err(Error::InvalidInput(format!("support tolerance {tol} is negative")));
        }
        let j = corr.max();
        let threshold = j - tol * j.abs();
        let indices = corr
            .iter()
            .enumerate()
            .filter(|(_, c)| **c >= threshold)
            .map(|(i, _)| i)
            .collect();
        Ok(HSupport { indices, tol })
    }

    pub fn subdifferential(&self, x: &DVector<f64>, tol: f64) -> Result<SubdiffDescriptor> {
        let support = self.h_support(x, tol)?;
        Ok(SubdiffDescriptor { h_sub: self.select(support.indices()), support })
    }

    /// Decides whether `0` lies in the interior of `conv{h_i}`.
    ///
    /// Solves `min t s.t. <x, h_i> <= t, |x|_inf <= 1` with one coordinate
    /// pinned to `+1` or `-1`, for each of the `2N` facets of the cube. The
    /// smallest optimum is the minimum of `J_H` over the unit sphere of the
    /// sup-norm.
    pub fn is_valid_gauge(&self) -> Result<GaugeValidity> {
        let n = self.n();
        let scale = self.columns.amax().max(f64::MIN_POSITIVE);
        let mut margin = f64::INFINITY;
        let mut witness = None;
        for k in 0..n {
            for sign in [1.0, -1.0] {
                // Variables: x_0..x_{n-1}, t.
                let mut obj = vec![0.0; n + 1];
                obj[n] = 1.0;
                let mut lp = LinearProgram::minimize(obj);
                for j in 0..n {
                    lp.set_bound(j, Bound::range(-1.0, 1.0));
                }
                lp.set_bound(k, Bound::fixed(sign));
                for col in self.columns.column_iter() {
                    let mut row: Vec<f64> = col.iter().copied().collect();
                    row.push(-1.0);
                    lp.add_le(row, 0.0);
                }
                let sol = lp.solve()?;
                if sol.status != LpStatus::Optimal {
                    return Err(Error::SolverFailure(format!(
                        "gauge validity subproblem returned {:?}",
                        sol.status
                    )));
                }
                let t = sol.z[n];
                if t < margin {
                    margin = t;
                    witness = Some(sol.z[..n].to_vec());
                }
            }
        }
        let valid = margin > 1e-12 * scale;
        Ok(GaugeValidity { valid, margin, witness: if valid { None } else { witness } })
    }
}

impl HSupport {
    /// Builds a support from arbitrary indices (sorted, deduplicated).
    pub fn from_indices(mut indices: Vec<usize>, tol: f64) -> Self {
        indices.sort_unstable();
        indices.dedup();
        HSupport { indices, tol }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// `I^c` within `{0, ..., n_cols - 1}`.
    pub fn complement(&self, n_cols: usize) -> Vec<usize> {
        (0..n_cols).filter(|i| !self.contains(*i)).collect()
    }

    /// Same index set, ignoring the detection tolerance.
    pub fn same_set(&self, other: &HSupport) -> bool {
        self.indices == other.indices
    }
}

impl SubdiffDescriptor {
    /// Looks for `v` in the canonical simplex with `H_I v = g` by minimizing
    /// `|H_I v - g|_1`; `g` is a member when that residual is at most `tol`.
    pub fn membership(&self, g: &DVector<f64>, tol: f64) -> Result<Membership> {
        let n = self.h_sub.nrows();
        let k = self.h_sub.ncols();
        if g.len() != n {
            return Err(Error::Dimension(format!("subgradient has length {}, expected {n}", g.len())));
        }
        // Variables: v (k), e (n); minimize sum e.
        let mut obj = vec![0.0; k + n];
        obj[k..].iter_mut().for_each(|c| *c = 1.0);
        let mut lp = LinearProgram::minimize(obj);
        lp.set_all_bounds(Bound::NONNEG);
        let mut ones = vec![1.0; k];
        ones.extend(std::iter::repeat_n(0.0, n));
        lp.add_eq(ones, 1.0);
        for r in 0..n {
            let mut plus = vec![0.0; k + n];
            let mut minus = vec![0.0; k + n];
            for c in 0..k {
                plus[c] = self.h_sub[(r, c)];
                minus[c] = -self.h_sub[(r, c)];
            }
            plus[k + r] = -1.0;
            minus[k + r] = -1.0;
            lp.add_le(plus, g[r]);
            lp.add_le(minus, -g[r]);
        }
        let sol = lp.solve()?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::SolverFailure(format!("membership LP returned {:?}", sol.status)));
        }
        let residual = -sol.value;
        Ok(Membership { member: residual <= tol, weights: sol.z[..k].to_vec(), residual })
    }
}
