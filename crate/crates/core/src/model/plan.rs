use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Dataset, Gender, Tier};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderTarget {
    Male,
    Female,
    Both,
}

impl GenderTarget {
    pub fn accepts(self, gender: Gender) -> bool {
        match self {
            GenderTarget::Male => gender == Gender::Male,
            GenderTarget::Female => gender == Gender::Female,
            GenderTarget::Both => true,
        }
    }
}

impl From<Gender> for GenderTarget {
    fn from(g: Gender) -> Self {
        match g {
            Gender::Male => GenderTarget::Male,
            Gender::Female => GenderTarget::Female,
        }
    }
}

/// The (age group, gender, tier) cell a task is meant to fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TargetCell {
    pub age_group: usize,
    pub gender: GenderTarget,
    pub tier: Tier,
}

impl std::fmt::Display for TargetCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "age_group={} gender={:?} tier={}",
            self.age_group, self.gender, self.tier
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplingTask {
    Line {
        parent_a: String,
        parent_b: String,
        n_steps: usize,
        target: TargetCell,
        phase: u8,
    },
    Sphere {
        seed_id: String,
        n_samples: usize,
        variance: f64,
        target: TargetCell,
        phase: u8,
    },
}

impl SamplingTask {
    pub fn target(&self) -> TargetCell {
        match self {
            SamplingTask::Line { target, .. } | SamplingTask::Sphere { target, .. } => *target,
        }
    }

    pub fn phase(&self) -> u8 {
        match self {
            SamplingTask::Line { phase, .. } | SamplingTask::Sphere { phase, .. } => *phase,
        }
    }

    pub fn sample_count(&self) -> usize {
        match self {
            SamplingTask::Line { n_steps, .. } => *n_steps,
            SamplingTask::Sphere { n_samples, .. } => *n_samples,
        }
    }

    pub fn parent_ids(&self) -> Vec<&str> {
        match self {
            SamplingTask::Line { parent_a, parent_b, .. } => vec![parent_a, parent_b],
            SamplingTask::Sphere { seed_id, .. } => vec![seed_id],
        }
    }
}

/// How many new records a single-gender cell should receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellQuota {
    pub age_group: usize,
    pub gender: Gender,
    pub tier: Tier,
    pub count: usize,
    pub phase: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanFlagKind {
    /// No minority record in the cell; line strategy switched to sphere
    /// sampling around the nearest age group's minority record.
    SphereFallback,
    /// Age group has only one gender; seeds drawn from that gender alone.
    SingleGenderGroup,
    /// Age group has no members in the tier; skipped.
    EmptyAgeGroup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFlag {
    pub kind: PlanFlagKind,
    pub age_group: usize,
    pub tier: Tier,
    pub detail: String,
}

/// Ordered sampling tasks plus the per-cell quotas they serve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub tasks: Vec<SamplingTask>,
    pub quotas: Vec<CellQuota>,
    pub flags: Vec<PlanFlag>,
}

impl SamplingPlan {
    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn extend(&mut self, other: SamplingPlan) {
        self.tasks.extend(other.tasks);
        self.quotas.extend(other.quotas);
        self.flags.extend(other.flags);
    }

    /// Total quota for one single-gender cell, summed over phases.
    pub fn quota_for(&self, age_group: usize, gender: Gender, tier: Tier) -> usize {
        self.quotas
            .iter()
            .filter(|q| q.age_group == age_group && q.gender == gender && q.tier == tier)
            .map(|q| q.count)
            .sum()
    }

    /// Checks that every referenced id exists and parameters are in range.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        let ids: HashSet<&str> = dataset.records.iter().map(|r| r.id.as_str()).collect();
        for task in &self.tasks {
            for id in task.parent_ids() {
                if !ids.contains(id) {
                    return Err(Error::UnknownRecord(id.to_string()));
                }
            }
            if task.sample_count() == 0 {
                return Err(Error::InvalidParameter("task sample count must be >= 1".into()));
            }
            if let SamplingTask::Sphere { variance, .. } = task {
                if variance.is_nan() || *variance <= 0.0 {
                    return Err(Error::NonPositiveVariance(*variance));
                }
            }
            if task.target().age_group >= dataset.age_bins.groups() {
                return Err(Error::InvalidParameter(format!(
                    "target age group {} out of range",
                    task.target().age_group
                )));
            }
        }
        Ok(())
    }
}
