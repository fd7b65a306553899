//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Problems are stated as
//!
//! ```text
//! maximize    c'z
//! subject to  A_eq z  = b_eq
//!             A_le z <= b_le
//!             l <= z <= u        (either side optional)
//! ```
//!
//! and rewritten internally into standard form `min c's, A s = b, s >= 0` by
//! shifting bounded variables, reflecting upper-bounded ones and splitting
//! free ones. Finite upper bounds on doubly-bounded variables become extra
//! `<=` rows. The final basis is re-solved against the untouched
//! standard-form data so that the returned point does not carry the
//! round-off accumulated by the tableau pivots.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reduced-cost tolerance used for pricing.
const COST_TOL: f64 = 1e-10;
/// Smallest tableau entry accepted as a pivot.
const PIVOT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Bound {
    pub const FREE: Bound = Bound { lower: None, upper: None };
    pub const NONNEG: Bound = Bound { lower: Some(0.0), upper: None };

    pub fn range(lower: f64, upper: f64) -> Self {
        Bound { lower: Some(lower), upper: Some(upper) }
    }

    pub fn fixed(value: f64) -> Self {
        Self::range(value, value)
    }
}

/// A dense linear program in maximization form. Variables are free unless
/// a bound is set.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    objective: Vec<f64>,
    eq_rows: Vec<Vec<f64>>,
    eq_rhs: Vec<f64>,
    le_rows: Vec<Vec<f64>>,
    le_rhs: Vec<f64>,
    bounds: Vec<Bound>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimizer in the original variables (empty unless optimal).
    pub z: Vec<f64>,
    /// Optimal objective value (NaN unless optimal).
    pub value: f64,
    /// Multipliers of the equality rows.
    pub dual_eq: Vec<f64>,
    /// Multipliers of the `<=` rows, nonnegative at optimality.
    pub dual_le: Vec<f64>,
    /// `c - A_eq' y_eq - A_le' y_le`, the multipliers left for the bounds.
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
}

impl LinearProgram {
    /// New program over `objective.len()` free variables.
    pub fn maximize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            le_rows: Vec::new(),
            le_rhs: Vec::new(),
            bounds: vec![Bound::FREE; n],
        }
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::maximize(objective.into_iter().map(|c| -c).collect())
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn eq_constraints(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.eq_rows, &self.eq_rhs)
    }

    pub fn le_constraints(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.le_rows, &self.le_rhs)
    }

    pub fn set_bound(&mut self, var: usize, bound: Bound) -> &mut Self {
        self.bounds[var] = bound;
        self
    }

    pub fn set_all_bounds(&mut self, bound: Bound) -> &mut Self {
        self.bounds.iter_mut().for_each(|b| *b = bound);
        self
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
        self
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.add_le(row.into_iter().map(|a| -a).collect(), -rhs)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let rows = self.eq_rows.iter().chain(self.le_rows.iter());
        for row in rows {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "constraint row has {} entries, expected {n}",
                    row.len()
                )));
            }
        }
        let finite = self
            .objective
            .iter()
            .chain(self.eq_rows.iter().flatten())
            .chain(self.le_rows.iter().flatten())
            .chain(self.eq_rhs.iter())
            .chain(self.le_rhs.iter())
            .all(|v| v.is_finite());
        let bounds_ok = self.bounds.iter().all(|b| {
            b.lower.is_none_or(|l| l.is_finite()) && b.upper.is_none_or(|u| u.is_finite())
        });
        if !finite || !bounds_ok {
            return Err(Error::InvalidInput("linear program has non-finite data".into()));
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution> {
        solve_lp(self)
    }
}

impl LpSolution {
    fn without_point(status: LpStatus, iterations: usize) -> Self {
        LpSolution {
            status,
            z: Vec::new(),
            value: f64::NAN,
            dual_eq: Vec::new(),
            dual_le: Vec::new(),
            reduced_costs: Vec::new(),
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Largest violation of any constraint or bound at `z`.
    pub fn primal_infeasibility(&self, lp: &LinearProgram) -> f64 {
        let z = &self.z;
        let dot = |row: &[f64]| row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        let eq = lp
            .eq_rows
            .iter()
            .zip(&lp.eq_rhs)
            .map(|(r, b)| (dot(r) - b).abs());
        let le = lp
            .le_rows
            .iter()
            .zip(&lp.le_rhs)
            .map(|(r, b)| (dot(r) - b).max(0.0));
        let bnd = lp.bounds.iter().zip(z).map(|(b, &v)| {
            let lo = b.lower.map_or(0.0, |l| (l - v).max(0.0));
            let hi = b.upper.map_or(0.0, |u| (v - u).max(0.0));
            lo.max(hi)
        });
        eq.chain(le).chain(bnd).fold(0.0, f64::max)
    }

    /// Dual objective minus primal objective.
    ///
    /// The bound multipliers are read off the reduced costs: a positive
    /// reduced cost is charged to the upper bound, a negative one to the
    /// lower bound. A reduced cost pushing against a missing bound makes the
    /// dual infeasible and the gap infinite.
    pub fn duality_gap(&self, lp: &LinearProgram) -> f64 {
        if !self.is_optimal() {
            return f64::INFINITY;
        }
        let mut dual = 0.0;
        dual += lp.eq_rhs.iter().zip(&self.dual_eq).map(|(b, y)| b * y).sum::<f64>();
        dual += lp.le_rhs.iter().zip(&self.dual_le).map(|(b, y)| b * y).sum::<f64>();
        let scale = 1.0 + self.value.abs();
        for (r, b) in self.reduced_costs.iter().zip(&lp.bounds) {
            if r.abs() <= COST_TOL * scale {
                continue;
            }
            let limit = if *r > 0.0 { b.upper } else { b.lower };
            match limit {
                Some(v) => dual += r * v,
                None => return f64::INFINITY,
            }
        }
        dual - self.value
    }

    /// Largest product of a constraint multiplier with its slack.
    pub fn complementarity(&self, lp: &LinearProgram) -> f64 {
        let z = &self.z;
        let dot = |row: &[f64]| row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        let rows = lp
            .le_rows
            .iter()
            .zip(&lp.le_rhs)
            .zip(&self.dual_le)
            .map(|((r, b), y)| (y * (b - dot(r))).abs());
        let bnds = self
            .reduced_costs
            .iter()
            .zip(&lp.bounds)
            .zip(z)
            .map(|((r, b), &v)| {
                if *r > 0.0 {
                    b.upper.map_or(f64::INFINITY, |u| r * (u - v)).abs()
                } else if *r < 0.0 {
                    b.lower.map_or(f64::INFINITY, |l| r * (v - l)).abs()
                } else {
                    0.0
                }
            });
        rows.chain(bnds).fold(0.0, f64::max)
    }
}

/// Affine map from standard-form variables back to one original variable.
#[derive(Clone, Debug)]
struct VarMap {
    offset: f64,
    terms: Vec<(usize, f64)>,
}

/// Standard-form data `min c's s.t. A s = b, s >= 0`, kept unflipped for the
/// final basis re-solve.
struct StandardForm {
    a: DMatrix<f64>,
    b: DVector<f64>,
    cost: DVector<f64>,
    maps: Vec<VarMap>,
    n_eq: usize,
    n_le: usize,
    /// Rows that come with a `+1` slack column (all `<=` rows).
    slack_of_row: Vec<Option<usize>>,
}

fn standard_form(lp: &LinearProgram) -> Option<StandardForm> {
    let n = lp.n_vars();
    let mut maps = Vec::with_capacity(n);
    let mut n_std = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for b in &lp.bounds {
        let map = match (b.lower, b.upper) {
            (Some(l), Some(u)) => {
                if u < l {
                    return None;
                }
                bound_rows.push((n_std, u - l));
                n_std += 1;
                VarMap { offset: l, terms: vec![(n_std - 1, 1.0)] }
            }
            (Some(l), None) => {
                n_std += 1;
                VarMap { offset: l, terms: vec![(n_std - 1, 1.0)] }
            }
            (None, Some(u)) => {
                n_std += 1;
                VarMap { offset: u, terms: vec![(n_std - 1, -1.0)] }
            }
            (None, None) => {
                n_std += 2;
                VarMap { offset: 0.0, terms: vec![(n_std - 2, 1.0), (n_std - 1, -1.0)] }
            }
        };
        maps.push(map);
    }

    let n_eq = lp.eq_rows.len();
    let n_le = lp.le_rows.len() + bound_rows.len();
    let m = n_eq + n_le;
    let n_cols = n_std + n_le;
    let mut a = DMatrix::zeros(m, n_cols);
    let mut b = DVector::zeros(m);
    let mut slack_of_row = vec![None; m];

    let mut fill = |row_idx: usize, row: &[f64], rhs: f64, a: &mut DMatrix<f64>| {
        let mut shifted = rhs;
        for (j, coef) in row.iter().enumerate() {
            if *coef == 0.0 {
                continue;
            }
            shifted -= coef * maps[j].offset;
            for &(s, sign) in &maps[j].terms {
                a[(row_idx, s)] += coef * sign;
            }
        }
        b[row_idx] = shifted;
    };
    for (i, (row, rhs)) in lp.eq_rows.iter().zip(&lp.eq_rhs).enumerate() {
        fill(i, row, *rhs, &mut a);
    }
    for (k, (row, rhs)) in lp.le_rows.iter().zip(&lp.le_rhs).enumerate() {
        fill(n_eq + k, row, *rhs, &mut a);
    }
    for (k, &(s, width)) in bound_rows.iter().enumerate() {
        let i = n_eq + lp.le_rows.len() + k;
        a[(i, s)] = 1.0;
        b[i] = width;
    }
    for k in 0..n_le {
        let i = n_eq + k;
        a[(i, n_std + k)] = 1.0;
        slack_of_row[i] = Some(n_std + k);
    }

    let mut cost = DVector::zeros(n_cols);
    for (j, c) in lp.objective.iter().enumerate() {
        for &(s, sign) in &maps[j].terms {
            cost[s] -= c * sign;
        }
    }
    Some(StandardForm { a, b, cost, maps, n_eq, n_le: lp.le_rows.len(), slack_of_row })
}

struct Tableau {
    /// `m x (n_cols + 1)`, last column holds the right-hand side.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    /// Original standard-form row index of each tableau row.
    rows: Vec<usize>,
    reduced: Vec<f64>,
    obj: f64,
    n_cols: usize,
    iterations: usize,
    cap: usize,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[(i, self.n_cols)]
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let m = self.basis.len();
        self.reduced = cost.to_vec();
        self.obj = 0.0;
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for j in 0..self.n_cols {
                self.reduced[j] -= cb * self.t[(i, j)];
            }
            self.obj += cb * self.rhs(i);
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.n_cols + 1;
        let p = self.t[(r, c)];
        for j in 0..width {
            self.t[(r, j)] /= p;
        }
        for i in 0..self.basis.len() {
            if i == r {
                continue;
            }
            let f = self.t[(i, c)];
            if f == 0.0 {
                continue;
            }
            for j in 0..width {
                let v = self.t[(r, j)];
                self.t[(i, j)] -= f * v;
            }
            self.t[(i, c)] = 0.0;
        }
        let f = self.reduced[c];
        if f != 0.0 {
            for j in 0..self.n_cols {
                self.reduced[j] -= f * self.t[(r, j)];
            }
            self.obj += f * self.rhs(r);
            self.reduced[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Runs Bland-rule iterations over the columns `allowed` until optimal.
    fn run(&mut self, allowed: &[bool]) -> Result<Phase> {
        loop {
            let entering = (0..self.n_cols).find(|&j| allowed[j] && self.reduced[j] < -COST_TOL);
            let Some(c) = entering else {
                return Ok(Phase::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.basis.len() {
                let a = self.t[(i, c)];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = 1e-12 * best.abs().max(1.0);
                        if ratio < best - tie
                            || (ratio <= best + tie && self.basis[i] < self.basis[r])
                        {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Ok(Phase::Unbounded);
            };
            self.iterations += 1;
            if self.iterations > self.cap {
                return Err(Error::SolverFailure(format!(
                    "simplex iteration cap {} reached (objective {:.6e})",
                    self.cap, self.obj
                )));
            }
            self.pivot(r, c);
        }
    }
}

/// Solves a linear program. Deterministic for bit-identical input.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let Some(sf) = standard_form(lp) else {
        return Ok(LpSolution::without_point(LpStatus::Infeasible, 0));
    };
    let m = sf.a.nrows();
    let n_struct = sf.a.ncols();

    // Artificial columns for rows whose slack cannot start basic.
    let mut flip = vec![false; m];
    let mut art_rows = Vec::new();
    for i in 0..m {
        flip[i] = sf.b[i] < 0.0;
        if sf.slack_of_row[i].is_none() || flip[i] {
            art_rows.push(i);
        }
    }
    let n_cols = n_struct + art_rows.len();
    let mut t = DMatrix::zeros(m, n_cols + 1);
    for i in 0..m {
        let s = if flip[i] { -1.0 } else { 1.0 };
        for j in 0..n_struct {
            t[(i, j)] = s * sf.a[(i, j)];
        }
        t[(i, n_cols)] = s * sf.b[i];
    }
    let mut basis = vec![usize::MAX; m];
    for (k, &i) in art_rows.iter().enumerate() {
        t[(i, n_struct + k)] = 1.0;
        basis[i] = n_struct + k;
    }
    for i in 0..m {
        if basis[i] == usize::MAX {
            basis[i] = sf.slack_of_row[i].expect("row without artificial has a slack");
        }
    }

    let mut tab = Tableau {
        t,
        basis,
        rows: (0..m).collect(),
        reduced: Vec::new(),
        obj: 0.0,
        n_cols,
        iterations: 0,
        cap: 50 * (m + n_cols).max(1),
    };

    if !art_rows.is_empty() {
        let mut cost = vec![0.0; n_cols];
        cost[n_struct..].iter_mut().for_each(|c| *c = 1.0);
        tab.set_costs(&cost);
        let allowed = vec![true; n_cols];
        tab.run(&allowed)?;
        let feas_tol = 1e-9 * (1.0 + sf.b.amax());
        if tab.obj > feas_tol {
            return Ok(LpSolution::without_point(LpStatus::Infeasible, tab.iterations));
        }
        drive_out_artificials(&mut tab, n_struct);
    }

    let mut cost = vec![0.0; n_cols];
    cost[..n_struct].copy_from_slice(sf.cost.as_slice());
    tab.set_costs(&cost);
    let mut allowed = vec![true; n_cols];
    allowed[n_struct..].iter_mut().for_each(|a| *a = false);
    match tab.run(&allowed)? {
        Phase::Unbounded => {
            return Ok(LpSolution::without_point(LpStatus::Unbounded, tab.iterations));
        }
        Phase::Optimal => {}
    }

    Ok(extract(lp, &sf, &tab))
}

/// Pivots basic artificials out on any structural column; rows where that is
/// impossible are linearly dependent and get dropped.
fn drive_out_artificials(tab: &mut Tableau, n_struct: usize) {
    let mut i = 0;
    while i < tab.basis.len() {
        if tab.basis[i] < n_struct {
            i += 1;
            continue;
        }
        let col = (0..n_struct).find(|&j| tab.t[(i, j)].abs() > PIVOT_TOL);
        match col {
            Some(c) => {
                tab.pivot(i, c);
                i += 1;
            }
            None => {
                tab.t = tab.t.clone().remove_row(i);
                tab.basis.remove(i);
                tab.rows.remove(i);
            }
        }
    }
}

fn extract(lp: &LinearProgram, sf: &StandardForm, tab: &Tableau) -> LpSolution {
    let m = tab.basis.len();
    let n_struct = sf.a.ncols();
    let mut s = DVector::<f64>::zeros(n_struct);
    let mut y_std = DVector::<f64>::zeros(sf.a.nrows());

    // Re-solve the optimal basis on the original data.
    let mut bmat = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    let mut cb = DVector::zeros(m);
    for (k, &row) in tab.rows.iter().enumerate() {
        for (c, &col) in tab.basis.iter().enumerate() {
            bmat[(k, c)] = sf.a[(row, col)];
        }
        rhs[k] = sf.b[row];
    }
    for (c, &col) in tab.basis.iter().enumerate() {
        cb[c] = sf.cost[col];
    }
    let lu = bmat.clone().lu();
    let refined = lu.solve(&rhs);
    let duals = bmat.transpose().lu().solve(&cb);
    match refined {
        Some(xb) => {
            for (c, &col) in tab.basis.iter().enumerate() {
                s[col] = xb[c].max(0.0);
            }
        }
        None => {
            for (k, &col) in tab.basis.iter().enumerate() {
                s[col] = tab.rhs(k).max(0.0);
            }
        }
    }
    if let Some(y) = duals {
        for (k, &row) in tab.rows.iter().enumerate() {
            // Minimization multipliers; maximization ones have the other sign.
            y_std[row] = -y[k];
        }
    }

    let z: Vec<f64> = sf
        .maps
        .iter()
        .map(|map| map.offset + map.terms.iter().map(|&(j, c)| c * s[j]).sum::<f64>())
        .collect();
    let value = lp.objective.iter().zip(&z).map(|(c, v)| c * v).sum();
    let dual_eq: Vec<f64> = (0..sf.n_eq).map(|i| y_std[i]).collect();
    let dual_le: Vec<f64> = (0..sf.n_le).map(|k| y_std[sf.n_eq + k].max(0.0)).collect();
    let mut reduced_costs = lp.objective.clone();
    for (row, y) in lp.eq_rows.iter().zip(&dual_eq).chain(lp.le_rows.iter().zip(&dual_le)) {
        for (r, a) in reduced_costs.iter_mut().zip(row) {
            *r -= a * y;
        }
    }
    LpSolution {
        status: LpStatus::Optimal,
        z,
        value,
        dual_eq,
        dual_le,
        reduced_costs,
        iterations: tab.iterations,
    }
}
