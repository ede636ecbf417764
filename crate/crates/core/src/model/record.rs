use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::latent::LatentVector;
use super::AgeBins;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// Category order used by every distribution over gender.
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn index(self) -> usize {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }

    pub fn other(self) -> Gender {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            other => Err(Error::InvalidParameter(format!("unknown gender {other:?}"))),
        }
    }
}

/// How a record came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Line,
    Sphere,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Line => "line",
            Provenance::Sphere => "sphere",
        }
    }

    /// Number of parents a record of this provenance must carry.
    pub fn parent_count(self) -> usize {
        match self {
            Provenance::Original => 0,
            Provenance::Line => 2,
            Provenance::Sphere => 1,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Provenance::Original),
            "line" => Ok(Provenance::Line),
            "sphere" => Ok(Provenance::Sphere),
            other => Err(Error::InvalidParameter(format!("unknown provenance {other:?}"))),
        }
    }
}

/// Attribute labels produced by an oracle for one latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub age_years: f64,
    pub gender: Gender,
    pub quality_raw: f64,
}

/// One generated sample: its latent plus labels, quality and lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceRecord {
    pub id: String,
    pub latent: LatentVector,
    pub gender: Gender,
    pub age_years: f64,
    pub age_group: usize,
    pub quality_raw: f64,
    /// Rank percentile of `quality_raw` within the owning dataset; 1 is best.
    pub quality_percentile: f64,
    pub provenance: Provenance,
    pub parents: Vec<String>,
    /// Interpolation step, present for line provenance only.
    pub step: Option<f64>,
}

impl FaceRecord {
    /// Builds an original record from oracle labels.
    pub fn original(id: impl Into<String>, latent: LatentVector, labels: Labels, bins: &AgeBins) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            latent,
            gender: labels.gender,
            age_years: labels.age_years,
            age_group: bins.bin(labels.age_years)?,
            quality_raw: labels.quality_raw,
            quality_percentile: 0.0,
            provenance: Provenance::Original,
            parents: Vec::new(),
            step: None,
        })
    }

    pub fn apply_labels(&mut self, labels: Labels, bins: &AgeBins) -> Result<()> {
        self.age_group = bins.bin(labels.age_years)?;
        self.age_years = labels.age_years;
        self.gender = labels.gender;
        self.quality_raw = labels.quality_raw;
        Ok(())
    }
}

/// Descending quality, ties broken by ascending id.
pub fn quality_cmp(a: &FaceRecord, b: &FaceRecord) -> Ordering {
    b.quality_raw.total_cmp(&a.quality_raw).then_with(|| a.id.cmp(&b.id))
}

/// Indices of `records` sorted best-first.
pub fn quality_order(records: &[FaceRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&i, &j| quality_cmp(&records[i], &records[j]));
    order
}

/// A collection of records sharing one latent width and one age binning.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub age_bins: AgeBins,
    pub records: Vec<FaceRecord>,
}

impl Dataset {
    pub fn new(dim: usize, age_bins: AgeBins) -> Self {
        Self {
            dim,
            age_bins,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn index_by_id(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    /// Recomputes every record's rank percentile over the whole dataset.
    pub fn refresh_quality_percentiles(&mut self) {
        let n = self.records.len();
        let order = quality_order(&self.records);
        for (rank, idx) in order.into_iter().enumerate() {
            self.records[idx].quality_percentile = if n <= 1 {
                1.0
            } else {
                1.0 - rank as f64 / (n - 1) as f64
            };
        }
    }

    /// Appends records from `other`; fails on an id collision or a
    /// dimension mismatch. Percentiles are refreshed afterwards.
    pub fn merge(&mut self, other: Dataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let ids: std::collections::HashSet<String> = self.records.iter().map(|r| r.id.clone()).collect();
        if let Some(dup) = other.records.iter().find(|r| ids.contains(&r.id)) {
            return Err(Error::InvalidParameter(format!("duplicate record id {}", dup.id)));
        }
        self.records.extend(other.records);
        self.refresh_quality_percentiles();
        Ok(())
    }
}
