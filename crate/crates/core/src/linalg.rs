//! Dense solves against `I − γ·P`. All matrices here are a few hundred
//! states at most, so LU with partial pivoting is used throughout.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Builds `I − γ·P` (or `I − γ·Pᵀ` when `transpose` is set).
pub(crate) fn resolvent_operator(p: &DMatrix<f64>, gamma: f64, transpose: bool) -> DMatrix<f64> {
    let n = p.nrows();
    let scaled = if transpose { p.transpose() } else { p.clone() } * gamma;
    DMatrix::identity(n, n) - scaled
}

pub(crate) fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Numeric("singular linear system".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite solution of linear system".into()));
    }
    Ok(x)
}

pub(crate) fn inverse(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let lu = a.lu();
    let inv = lu
        .solve(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numeric("singular linear system".into()))?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite inverse".into()));
    }
    Ok(inv)
}
