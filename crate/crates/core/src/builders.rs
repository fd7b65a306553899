//! The standard polyhedral gauges: l1, l-infinity, analysis l1 and the
//! block l1-l-infinity mixed norm.
//!
//! Column orders are fixed so that support index sets are reproducible:
//!
//! * `l1`: all sign vectors in `{-1, 1}^n`, lexicographic with `+1` before
//!   `-1` and the first coordinate most significant.
//! * `linf`: `e_1..e_n, -e_1..-e_n`.
//! * `block`: lexicographic over blocks (first block most significant); within
//!   a block, `+e_p` for each position `p` in block order, then `-e_p`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gauge::HMatrix;

/// Largest number of columns a builder will emit.
pub const MAX_COLUMNS: usize = 1 << 16;

/// A partition of `{0, ..., n-1}` into nonempty disjoint blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    n: usize,
}

impl Partition {
    pub fn new(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let n: usize = blocks.iter().map(Vec::len).sum();
        if n == 0 {
            return Err(Error::InvalidInput("partition is empty".into()));
        }
        let mut seen = vec![false; n];
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::InvalidInput("partition has an empty block".into()));
            }
            for &i in block {
                if i >= n || seen[i] {
                    return Err(Error::InvalidInput(format!(
                        "blocks do not partition 0..{n} (index {i})"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(Partition { blocks, n })
    }

    pub fn singletons(n: usize) -> Self {
        Partition { blocks: (0..n).map(|i| vec![i]).collect(), n }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

fn capacity_error(what: &str, cols: f64) -> Error {
    Error::Capacity(format!(
        "{what} needs {cols} columns (limit {MAX_COLUMNS}); pass explicit columns instead"
    ))
}

/// `H_1`: columns enumerate `{-1, 1}^n`, so that `J_H = |.|_1`.
pub fn build_l1(n: usize) -> Result<HMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    if n > 16 {
        return Err(capacity_error("l1 gauge", 2f64.powi(n as i32)));
    }
    let cols = 1usize << n;
    let m = DMatrix::from_fn(n, cols, |i, k| {
        if (k >> (n - 1 - i)) & 1 == 0 { 1.0 } else { -1.0 }
    });
    HMatrix::new(m)
}

/// `H_inf = [Id, -Id]`, so that `J_H = |.|_inf`.
pub fn build_linf(n: usize) -> Result<HMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    let m = DMatrix::from_fn(n, 2 * n, |i, k| {
        if k == i {
            1.0
        } else if k == i + n {
            -1.0
        } else {
            0.0
        }
    });
    HMatrix::new(m)
}

/// `H = L^T H_1(P)` for an analysis operator `L` of shape `P x N`, so that
/// `J_H(x) = |L x|_1`.
pub fn build_analysis_l1(l: &DMatrix<f64>) -> Result<HMatrix> {
    let p = l.nrows();
    if p > 16 {
        return Err(capacity_error("analysis l1 gauge", 2f64.powi(p as i32)));
    }
    if l.ncols() == 0 {
        return Err(Error::InvalidInput("analysis operator has no columns".into()));
    }
    let h1 = build_l1(p)?;
    HMatrix::new(l.tr_mul(h1.matrix()))
}

/// Block-diagonal enumeration giving `J_H(x) = sum_b |x_b|_inf`.
pub fn build_block_l1_linf(partition: &Partition) -> Result<HMatrix> {
    let total: f64 = partition.blocks.iter().map(|b| 2.0 * b.len() as f64).product();
    if total > MAX_COLUMNS as f64 {
        return Err(capacity_error("block l1-linf gauge", total));
    }
    let choices: Vec<usize> = partition.blocks.iter().map(|b| 2 * b.len()).collect();
    let n_cols = total as usize;
    let mut m = DMatrix::zeros(partition.n, n_cols);
    for k in 0..n_cols {
        // Mixed-radix digits, first block most significant.
        let mut rest = k;
        for (b, block) in partition.blocks.iter().enumerate().rev() {
            let digit = rest % choices[b];
            rest /= choices[b];
            let len = block.len();
            let (pos, sign) = if digit < len { (digit, 1.0) } else { (digit - len, -1.0) };
            m[(block[pos], k)] = sign;
        }
    }
    HMatrix::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn cols(h: &HMatrix) -> Vec<Vec<f64>> {
        h.matrix().column_iter().map(|c| c.iter().copied().collect()).collect()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn l1_orders() {
        assert_eq!(cols(&build_l1(1).unwrap()), vec![vec![1.0], vec![-1.0]]);
        assert_eq!(
            cols(&build_l1(2).unwrap()),
            vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]]
        );
        assert_eq!(build_l1(3).unwrap().eval(&v(&[1.0, -2.0, 3.0])).unwrap(), 6.0);
        assert!(matches!(build_l1(17), Err(Error::Capacity(_))));
        assert!(build_l1(0).is_err());
    }

    #[test]
    fn linf_order() {
        assert_eq!(
            cols(&build_linf(2).unwrap()),
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]]
        );
        assert_eq!(build_linf(3).unwrap().eval(&v(&[1.0, -2.0, 3.0])).unwrap(), 3.0);
    }

    #[test]
    fn analysis() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(build_analysis_l1(&id).unwrap(), build_l1(2).unwrap());
        let diff = DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]);
        let tv = build_analysis_l1(&diff).unwrap();
        assert_eq!(tv.n(), 3);
        assert_eq!(tv.eval(&v(&[0.0, 1.0, 3.0])).unwrap(), 3.0);
        let two = DMatrix::<f64>::identity(2, 2) * 2.0;
        assert_eq!(build_analysis_l1(&two).unwrap().eval(&v(&[1.0, -1.0])).unwrap(), 4.0);
        assert!(matches!(
            build_analysis_l1(&DMatrix::zeros(17, 2)),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn blocks() {
        let singles = build_block_l1_linf(&Partition::singletons(2)).unwrap();
        assert_eq!(singles, build_l1(2).unwrap());
        let one = build_block_l1_linf(&Partition::new(vec![vec![0, 1]]).unwrap()).unwrap();
        assert_eq!(one, build_linf(2).unwrap());
        let mixed = build_block_l1_linf(&Partition::new(vec![vec![0, 1], vec![2]]).unwrap()).unwrap();
        assert_eq!(mixed.n_cols(), 8);
        assert_eq!(mixed.eval(&v(&[1.0, 2.0, -3.0])).unwrap(), 5.0);
        assert!(Partition::new(vec![vec![0], vec![0]]).is_err());
        assert!(Partition::new(vec![vec![0, 2]]).is_err());
        assert!(Partition::new(vec![vec![]]).is_err());
        let big = Partition::new((0..9).map(|b| vec![2 * b, 2 * b + 1]).collect()).unwrap();
        assert!(matches!(build_block_l1_linf(&big), Err(Error::Capacity(_))));
    }
}
