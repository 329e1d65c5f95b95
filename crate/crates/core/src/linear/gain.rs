//! Output injection `A - KH` for unstable but detectable signals.

use nalgebra::DMatrix;

use super::{is_detectable, solve_filter_are, LinearError, LinearGaussianModel, Result};
use crate::linalg;

/// Required stability margin of `A - KH`.
pub const GAIN_MARGIN: f64 = 1e-6;

/// Weights of the dual LQ problem whose Riccati solution yields the gain:
/// `K = P H^T / r` with `A P + P A^T + W - P H^T H P / r = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainDesign {
    /// Symmetric positive definite `W`.
    pub state_weight: DMatrix<f64>,
    /// Positive scalar `r`.
    pub output_weight: f64,
}

impl GainDesign {
    pub fn identity(p: usize) -> Self {
        Self { state_weight: DMatrix::identity(p, p), output_weight: 1.0 }
    }
}

/// Gain from the dual Riccati design, always computed (even for stable `A`).
pub fn stabilizing_gain(a: &DMatrix<f64>, h: &DMatrix<f64>, design: &GainDesign) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    if h.ncols() != p || design.state_weight.shape() != (p, p) {
        return Err(LinearError::DimensionMismatch("gain design does not match (A, H)".into()));
    }
    if !(design.output_weight > 0.0) {
        return Err(LinearError::InvalidArgument("output weight must be positive".into()));
    }
    if linalg::symmetric_eigenvalues(&design.state_weight).first().is_none_or(|&e| e <= 0.0) {
        return Err(LinearError::InvalidArgument("state weight must be positive definite".into()));
    }
    if !is_detectable(a, h) {
        return Err(LinearError::NotDetectable);
    }
    let s = h.transpose() * h / design.output_weight;
    let pm = solve_filter_are(a, &design.state_weight, &s).map_err(|_| LinearError::NotDetectable)?;
    let k = pm * h.transpose() / design.output_weight;
    if !linalg::is_hurwitz(&(a - &k * h), GAIN_MARGIN) {
        return Err(LinearError::NotDetectable);
    }
    Ok(k)
}

/// A gain `K` with `A - KH` Hurwitz (margin `GAIN_MARGIN`); zero when `A` already is.
pub fn detectability_gain(a: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if linalg::is_hurwitz(a, GAIN_MARGIN) {
        return Ok(DMatrix::zeros(a.nrows(), h.nrows()));
    }
    stabilizing_gain(a, h, &GainDesign::identity(a.nrows()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    /// Same `D` and `H`, with `A` replaced by `A - KH`.
    pub model: LinearGaussianModel,
    pub gain: DMatrix<f64>,
}

/// Replaces `A` by `A - KH` for a caller-chosen gain, checking that it is stabilizing.
pub fn reduce_with_gain(model: &LinearGaussianModel, gain: &DMatrix<f64>) -> Result<ReducedSystem> {
    if gain.shape() != (model.p(), model.n()) {
        return Err(LinearError::DimensionMismatch(format!(
            "gain must be {}x{}, got {}x{}",
            model.p(),
            model.n(),
            gain.nrows(),
            gain.ncols()
        )));
    }
    let a_bar = model.a() - gain * model.h();
    let abscissa = linalg::spectral_abscissa(&a_bar);
    if !(abscissa < -GAIN_MARGIN) {
        return Err(LinearError::NotStable(abscissa));
    }
    Ok(ReducedSystem { model: model.with_a(a_bar), gain: gain.clone() })
}

/// Stable realization with the same transfer-matrix rank structure; identity for stable `A`.
pub fn reduce_unstable(model: &LinearGaussianModel) -> Result<ReducedSystem> {
    let gain = detectability_gain(model.a(), model.h())?;
    reduce_with_gain(model, &gain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_matrix_gets_zero_gain() {
        let a = DMatrix::from_row_slice(1, 1, &[-2.0]);
        let h = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert_eq!(detectability_gain(&a, &h).unwrap(), DMatrix::zeros(1, 1));
    }

    #[test]
    fn scalar_unstable_gain() {
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let h = DMatrix::from_row_slice(1, 1, &[1.0]);
        let k = detectability_gain(&a, &h).unwrap();
        assert!(1.0 - k[(0, 0)] < -GAIN_MARGIN);
    }

    #[test]
    fn double_integrator_position_measurement() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let k = detectability_gain(&a, &h).unwrap();
        assert!(linalg::spectral_abscissa(&(&a - &k * &h)) < -GAIN_MARGIN);
    }

    #[test]
    fn undetectable_pair_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let h = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert_eq!(detectability_gain(&a, &h).unwrap_err(), LinearError::NotDetectable);
    }

    #[test]
    fn reduce_stable_model_is_identity() {
        let model = LinearGaussianModel::new(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let r = reduce_unstable(&model).unwrap();
        assert_eq!(r.model, model);
    }

    #[test]
    fn reduce_rejects_destabilizing_gain() {
        let model = LinearGaussianModel::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let err = reduce_with_gain(&model, &DMatrix::from_element(1, 1, 0.5)).unwrap_err();
        assert!(matches!(err, LinearError::NotStable(_)));
        let ok = reduce_unstable(&model).unwrap();
        assert!(ok.model.is_stable());
    }
}
