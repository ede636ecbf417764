use std::collections::{HashMap, HashSet};

use serde::Serialize;

use super::{Dataset, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateId,
    DimMismatch { expected: usize, got: usize },
    NonFiniteLatent { index: usize },
    NegativeAge { age_years: f64 },
    AgeGroupMismatch { expected: Option<usize>, got: usize },
    ParentCount { provenance: Provenance, got: usize },
    MissingStep,
    UnexpectedStep,
    StepOutOfRange { step: f64 },
    DanglingParent { parent: String },
    NonFiniteQuality,
    PercentileOutOfRange { percentile: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub record_id: String,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

/// Lists every invariant violation in the dataset. An empty report means the
/// dataset is valid.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |id: &str, kind| {
        out.push(Violation {
            record_id: id.to_string(),
            kind,
        })
    };

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for r in &dataset.records {
        *seen.entry(r.id.as_str()).or_default() += 1;
    }
    let ids: HashSet<&str> = seen.keys().copied().collect();
    let mut reported_dup = HashSet::new();

    for r in &dataset.records {
        if seen[r.id.as_str()] > 1 && reported_dup.insert(r.id.as_str()) {
            push(&r.id, ViolationKind::DuplicateId);
        }
        if r.latent.dim() != dataset.dim {
            push(
                &r.id,
                ViolationKind::DimMismatch {
                    expected: dataset.dim,
                    got: r.latent.dim(),
                },
            );
        }
        if let Some(index) = r.latent.as_slice().iter().position(|v| !v.is_finite()) {
            push(&r.id, ViolationKind::NonFiniteLatent { index });
        }
        match dataset.age_bins.bin(r.age_years) {
            Ok(g) if g == r.age_group => {}
            Ok(g) => push(
                &r.id,
                ViolationKind::AgeGroupMismatch {
                    expected: Some(g),
                    got: r.age_group,
                },
            ),
            Err(_) => push(&r.id, ViolationKind::NegativeAge { age_years: r.age_years }),
        }
        if r.parents.len() != r.provenance.parent_count() {
            push(
                &r.id,
                ViolationKind::ParentCount {
                    provenance: r.provenance,
                    got: r.parents.len(),
                },
            );
        }
        match (r.provenance, r.step) {
            (Provenance::Line, None) => push(&r.id, ViolationKind::MissingStep),
            (Provenance::Line, Some(c)) if !(0.0..=1.0).contains(&c) => {
                push(&r.id, ViolationKind::StepOutOfRange { step: c })
            }
            (Provenance::Original | Provenance::Sphere, Some(_)) => push(&r.id, ViolationKind::UnexpectedStep),
            _ => {}
        }
        for p in &r.parents {
            if !ids.contains(p.as_str()) {
                push(&r.id, ViolationKind::DanglingParent { parent: p.clone() });
            }
        }
        if !r.quality_raw.is_finite() {
            push(&r.id, ViolationKind::NonFiniteQuality);
        }
        if !(0.0..=1.0).contains(&r.quality_percentile) {
            push(
                &r.id,
                ViolationKind::PercentileOutOfRange {
                    percentile: r.quality_percentile,
                },
            );
        }
    }
    out
}
