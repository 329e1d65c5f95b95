//! Structured maximal-accuracy verdicts shared by both model families.

use serde::Serialize;

use crate::finite::{InvertibilityReport, ReconstructibilityReport};
use crate::linear::ZeroReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Finite,
    LinearGaussian,
}

/// Answer to "does the filter become exact as the observation noise vanishes?".
///
/// For finite-state models the answer is `invertible && reconstructible`;
/// for linear-Gaussian models it is the absence of right-half-plane
/// transmission zeros. `decided == false` means a numerical certificate was
/// ambiguous and `maximal_accuracy` is only a best guess.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub family: ModelFamily,
    pub maximal_accuracy: bool,
    pub decided: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invertibility: Option<InvertibilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstructibility: Option<ReconstructibilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeros: Option<ZeroReport>,
    /// State count (finite) or state dimension (linear) the checks ran on.
    pub analyzed_dimension: usize,
    pub notes: Vec<String>,
}

impl Verdict {
    pub fn invertible(&self) -> Option<bool> {
        self.invertibility.as_ref().map(|r| r.ok)
    }

    pub fn reconstructible(&self) -> Option<bool> {
        self.reconstructibility.as_ref().map(|r| r.ok)
    }
}
