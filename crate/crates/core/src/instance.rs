//! JSON instance format.
//!
//! A file holds either one instance object or a batch
//! `{"schema": 1, "instances": [...]}`. Matrices are row-major arrays of
//! arrays. Example:
//!
//! ```json
//! {
//!   "schema": 1,
//!   "instances": [{
//!     "name": "linf-identity",
//!     "phi": [[1, 0], [0, 1]],
//!     "h": {"kind": "linf", "n": 2},
//!     "x0": [2, 1],
//!     "w": [0.1, 0],
//!     "lambda": 0.05
//!   }]
//! }
//! ```
//!
//! Noise is given either explicitly (`"w"`) or as `"noise": {"sigma", "seed"}`,
//! in which case `w = sigma * g` with `g` standard normal drawn from the seed.
//! An explicit `"y"` replaces `Phi x0 + w`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builders::{build_analysis_l1, build_block_l1_linf, build_l1, build_linf, Partition};
use crate::ensemble::gaussian_vector;
use crate::error::{Error, Result};
use crate::gauge::HMatrix;

pub const SCHEMA_VERSION: u32 = 1;

/// How the columns of `H` are specified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HDescriptor {
    L1 { n: usize },
    Linf { n: usize },
    Block { blocks: Vec<Vec<usize>> },
    #[serde(rename = "analysis_l1")]
    AnalysisL1 {
        #[serde(rename = "L")]
        l: Vec<Vec<f64>>,
    },
    /// Each inner array is one column `h_i`.
    Explicit { columns: Vec<Vec<f64>> },
}

impl HDescriptor {
    pub fn build(&self) -> Result<HMatrix> {
        match self {
            HDescriptor::L1 { n } => build_l1(*n),
            HDescriptor::Linf { n } => build_linf(*n),
            HDescriptor::Block { blocks } => build_block_l1_linf(&Partition::new(blocks.clone())?),
            HDescriptor::AnalysisL1 { l } => build_analysis_l1(&matrix_from_rows(l, "L")?),
            HDescriptor::Explicit { columns } => HMatrix::from_columns(columns),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub phi: Vec<Vec<f64>>,
    pub h: HDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Batch {
    schema: u32,
    instances: Vec<InstanceSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FileContents {
    Batch(Batch),
    Single(InstanceSpec),
}

/// Parses an instance file into its list of instances.
pub fn parse_instances(text: &str) -> Result<Vec<InstanceSpec>> {
    match serde_json::from_str::<FileContents>(text) {
        Ok(FileContents::Batch(b)) => {
            if b.schema != SCHEMA_VERSION {
                return Err(Error::InvalidInput(format!(
                    "unsupported schema {}, expected {SCHEMA_VERSION}",
                    b.schema
                )));
            }
            Ok(b.instances)
        }
        Ok(FileContents::Single(s)) => Ok(vec![s]),
        Err(_) => {
            // Re-parse strictly for a useful message.
            let value: serde_json::Value = serde_json::from_str(text)?;
            if value.get("instances").is_some() {
                serde_json::from_value::<Batch>(value)?;
            } else {
                serde_json::from_value::<InstanceSpec>(value)?;
            }
            Err(Error::InvalidInput("unrecognized instance file".into()))
        }
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Dimension(format!("{what} is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what} has rows of different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::Dimension(format!("{what} has length {}, expected {len}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    Ok(DVector::from_column_slice(v))
}

/// A validated instance with dense data.
#[derive(Clone, Debug)]
pub struct Instance {
    pub name: Option<String>,
    pub phi: DMatrix<f64>,
    pub h: HMatrix,
    pub x0: Option<DVector<f64>>,
    /// Noise, explicit or drawn from `noise_seed`.
    pub w: Option<DVector<f64>>,
    pub noise_seed: Option<u64>,
    pub y: Option<DVector<f64>>,
    pub lambda: Option<f64>,
}

impl InstanceSpec {
    pub fn resolve(&self) -> Result<Instance> {
        let phi = matrix_from_rows(&self.phi, "phi")?;
        let h = self.h.build()?;
        if h.n() != phi.ncols() {
            return Err(Error::Dimension(format!(
                "H acts on R^{} but phi has {} columns",
                h.n(),
                phi.ncols()
            )));
        }
        let q = phi.nrows();
        let x0 = self.x0.as_deref().map(|v| vector(v, h.n(), "x0")).transpose()?;
        let w = match (&self.w, &self.noise) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput("give either w or noise, not both".into()));
            }
            (Some(w), None) => Some(vector(w, q, "w")?),
            (None, Some(n)) => {
                if !(n.sigma >= 0.0) || !n.sigma.is_finite() {
                    return Err(Error::InvalidInput("noise sigma must be nonnegative".into()));
                }
                Some(gaussian_vector(&mut ChaCha8Rng::seed_from_u64(n.seed), q) * n.sigma)
            }
            (None, None) => None,
        };
        let y = self.y.as_deref().map(|v| vector(v, q, "y")).transpose()?;
        if let Some(l) = self.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidInput(format!("lambda must be positive, got {l}")));
            }
        }
        Ok(Instance {
            name: self.name.clone(),
            phi,
            h,
            x0,
            w,
            noise_seed: self.noise.map(|n| n.seed),
            y,
            lambda: self.lambda,
        })
    }
}

impl Instance {
    /// Noise vector, zero when none was specified.
    pub fn noise(&self) -> DVector<f64> {
        self.w.clone().unwrap_or_else(|| DVector::zeros(self.phi.nrows()))
    }

    /// Observations: the explicit `y`, or `Phi x0 + w`.
    pub fn observations(&self) -> Result<DVector<f64>> {
        if let Some(y) = &self.y {
            return Ok(y.clone());
        }
        match &self.x0 {
            Some(x0) => Ok(&self.phi * x0 + self.noise()),
            None => Err(Error::InvalidInput("instance needs y or x0".into())),
        }
    }

    /// Noise implied by the data: `y - Phi x0` when `y` is explicit.
    pub fn effective_noise(&self) -> Option<DVector<f64>> {
        let x0 = self.x0.as_ref()?;
        match &self.y {
            Some(y) => Some(y - &self.phi * x0),
            None => Some(self.noise()),
        }
    }
}
