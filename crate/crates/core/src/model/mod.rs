//! Shared data model: latents, labeled records, age binning, quality tiers
//! and sampling plans.

mod latent;
mod plan;
mod record;
mod validate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use latent::LatentVector;
pub use plan::{CellQuota, GenderTarget, PlanFlag, PlanFlagKind, SamplingPlan, SamplingTask, TargetCell};
pub use record::{quality_cmp, quality_order, Dataset, FaceRecord, Gender, Labels, Provenance};
pub use validate::{validate_dataset, Violation, ViolationKind};

/// Default latent width.
pub const DEFAULT_DIM: usize = 512;

/// Age bin edges. `edges.len() + 1` groups; group `i` covers
/// `[edges[i-1], edges[i])`, the first is `[0, edges[0])` and the last is
/// open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AgeBins {
    edges: Vec<f64>,
}

impl AgeBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        let ascending = edges.windows(2).all(|w| w[0] < w[1]);
        if edges.is_empty() || !ascending || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::BadBinEdges(edges));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn groups(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn bin(&self, age_years: f64) -> Result<usize> {
        bin_age(age_years, &self.edges)
    }
}

impl Default for AgeBins {
    /// Four groups: child/young adult, adult, middle-aged, senior.
    fn default() -> Self {
        Self {
            edges: vec![15.0, 40.0, 65.0],
        }
    }
}

impl TryFrom<Vec<f64>> for AgeBins {
    type Error = Error;

    fn try_from(edges: Vec<f64>) -> Result<Self> {
        Self::new(edges)
    }
}

impl From<AgeBins> for Vec<f64> {
    fn from(bins: AgeBins) -> Self {
        bins.edges
    }
}

/// Index of the half-open interval containing `age_years`. Boundary ages
/// belong to the upper bin.
pub fn bin_age(age_years: f64, edges: &[f64]) -> Result<usize> {
    if age_years.is_nan() || age_years < 0.0 {
        return Err(Error::NegativeAge(age_years));
    }
    if !edges.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::BadBinEdges(edges.to_vec()));
    }
    Ok(edges.partition_point(|&e| e <= age_years))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Top,
    Middle,
    Bottom,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Top, Tier::Middle, Tier::Bottom];
    /// Tiers that contribute parents and seeds to rebalancing.
    pub const BALANCED: [Tier; 2] = [Tier::Top, Tier::Middle];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Top => "top",
            Tier::Middle => "middle",
            Tier::Bottom => "bottom",
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
