//! Report tables: metrics rows, per-tier gender by age group, and a JSON
//! summary comparing the original records with the full dataset.

use serde::Serialize;

use crate::error::Result;
use crate::metrics::{metrics_row, quality_tiers, tier_report, Attribute, MetricsRow, Selection, TierReport};
use crate::model::{Dataset, Provenance, Tier};

/// Reference imbalance-degree values for four age groups that exceed the
/// `c - 1` bound and so cannot come from this definition.
pub const UNREACHABLE_AGE_DEGREES: [f64; 3] = [3.654, 3.594, 3.648];

/// Caveat attached to every age-group row.
pub fn age_degree_note(categories: usize) -> String {
    let bound = categories.saturating_sub(1);
    let refs = UNREACHABLE_AGE_DEGREES
        .iter()
        .map(|v| format!("{v:.3}"))
        .collect::<Vec<_>>()
        .join("/");
    format!(
        "imbalance degree is bounded by c-1 = {bound}; reference age-group values {refs} exceed this bound and are not reproducible under the standard definition"
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopedRow {
    pub scope: String,
    #[serde(flatten)]
    pub row: MetricsRow,
    pub note: Option<String>,
}

fn scoped(scope: String, row: MetricsRow) -> ScopedRow {
    let note = (row.attribute == Attribute::AgeGroup).then(|| age_degree_note(row.categories.len()));
    ScopedRow { scope, row, note }
}

/// Overall rows for `attributes`, plus one row per tier when `by_tier`.
/// Selections that come out empty are skipped.
pub fn metrics_rows(dataset: &Dataset, attributes: &[Attribute], by_tier: bool) -> Result<Vec<ScopedRow>> {
    let tiers = quality_tiers(dataset);
    let mut out = Vec::new();
    for &attribute in attributes {
        if let Ok(row) = metrics_row(dataset, attribute, &Selection::default()) {
            out.push(scoped("all".into(), row));
        }
        if by_tier {
            for tier in Tier::ALL {
                let sel = Selection {
                    tier: Some((tier, &tiers)),
                    ..Default::default()
                };
                if let Ok(row) = metrics_row(dataset, attribute, &sel) {
                    out.push(scoped(format!("tier={tier}"), row));
                }
            }
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"))
}

pub fn metrics_csv(rows: &[ScopedRow]) -> String {
    let mut s = String::from(
        "attribute,scope,counts,imbalance_ratio,imbalance_degree,log_likelihood_index,minority_count,note\n",
    );
    for r in rows {
        let counts = r.row.counts.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        s.push_str(&format!(
            "{},{},{},{},{:.3},{:.3},{},{}\n",
            r.row.attribute.as_str(),
            r.scope,
            counts,
            fmt_opt(r.row.imbalance_ratio),
            r.row.imbalance_degree,
            r.row.log_likelihood_index,
            r.row.minority_count,
            r.note.as_deref().map(|n| format!("\"{n}\"")).unwrap_or_default(),
        ));
    }
    s
}

/// Fixed-width text rendering of the metrics table.
pub fn metrics_text(rows: &[ScopedRow]) -> String {
    let mut s = format!(
        "{:<10} {:<12} {:>10} {:>10} {:>10} {:>3}\n",
        "attribute", "scope", "IR", "ID", "LLI", "m"
    );
    let mut notes = Vec::new();
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:<12} {:>10} {:>10.3} {:>10.3} {:>3}\n",
            r.row.attribute.as_str(),
            r.scope,
            fmt_opt(r.row.imbalance_ratio),
            r.row.imbalance_degree,
            r.row.log_likelihood_index,
            r.row.minority_count,
        ));
        if let Some(n) = &r.note {
            if !notes.contains(n) {
                notes.push(n.clone());
            }
        }
    }
    for n in notes {
        s.push_str(&format!("note: {n}\n"));
    }
    s
}

pub fn tier_distribution_csv(report: &TierReport) -> String {
    let mut s = String::from("tier,age_group,male,female,total,age_percentage\n");
    for t in &report.tiers {
        for (g, pct) in t.groups.iter().zip(&t.age_percentages) {
            s.push_str(&format!(
                "{},{},{},{},{},{:.4}\n",
                t.tier,
                g.age_group,
                g.male,
                g.female,
                g.male + g.female,
                pct
            ));
        }
    }
    s
}

pub fn tier_stddev_csv(report: &TierReport) -> String {
    let mut s = String::from("tier,size,empty,age_percentage_stddev\n");
    for t in &report.tiers {
        s.push_str(&format!(
            "{},{},{},{:.4}\n",
            t.tier, t.size, t.empty, t.age_percentage_stddev
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub metrics: Vec<ScopedRow>,
    pub tiers: TierReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    /// Records of original provenance only, tiered among themselves.
    pub before: DatasetSummary,
    /// Every record in the manifest.
    pub after: DatasetSummary,
    pub generated_records: usize,
    pub notes: Vec<String>,
}

pub fn summarize(dataset: &Dataset) -> Result<DatasetSummary> {
    Ok(DatasetSummary {
        records: dataset.len(),
        metrics: metrics_rows(dataset, &[Attribute::Gender, Attribute::AgeGroup], true)?,
        tiers: tier_report(dataset, &quality_tiers(dataset)),
    })
}

/// Builds the before/after summary of a manifest's dataset.
pub fn report_summary(dataset: &Dataset) -> Result<ReportSummary> {
    let mut originals = dataset.clone();
    originals.records.retain(|r| r.provenance == Provenance::Original);
    let before = summarize(&originals)?;
    let after = summarize(dataset)?;
    Ok(ReportSummary {
        generated_records: dataset.len() - originals.len(),
        before,
        after,
        notes: vec![age_degree_note(dataset.age_bins.groups())],
    })
}
