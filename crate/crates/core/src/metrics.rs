//! Imbalance metrics over attribute distributions and quality-tier reports.
//!
//! All three imbalance measures are zero (or one, for the ratio) on a
//! uniform distribution and grow with imbalance:
//!
//! * imbalance ratio: `max(counts) / min(counts)`
//! * imbalance degree: `H(p, b) / H(iota_m, b) + (m - 1)`, where `b` is
//!   uniform, `m` the number of categories with `p_i < 1/c` and `iota_m`
//!   the extreme distribution with `m` zero categories and the rest equal.
//! * log-likelihood index: `2 * sum p_i ln(p_i c)`, twice the KL divergence
//!   from uniform in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{quality_order, Dataset, FaceRecord, Gender, Tier};

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    AgeGroup,
}

impl Attribute {
    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::AgeGroup => "age_group",
        }
    }
}

impl std::str::FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gender" => Ok(Attribute::Gender),
            "age_group" => Ok(Attribute::AgeGroup),
            other => Err(Error::InvalidParameter(format!("unknown attribute {other:?}"))),
        }
    }
}

/// Category counts for one attribute. Category order is fixed by the
/// attribute (gender: male, female; age: ascending group index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDistribution {
    pub categories: Vec<String>,
    pub counts: Vec<u64>,
}

impl AttributeDistribution {
    pub fn new(categories: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if categories.len() != counts.len() || categories.len() < 2 {
            return Err(Error::InvalidParameter(
                "distribution needs >= 2 categories with one count each".into(),
            ));
        }
        Ok(Self { categories, counts })
    }

    /// Unnamed categories `"0"`, `"1"`, ...
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let categories = (0..counts.len()).map(|i| i.to_string()).collect();
        Self::new(categories, counts)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Number of categories strictly below the uniform share, computed
    /// exactly on integers.
    pub fn minority_classes(&self) -> usize {
        let c = self.counts.len() as u128;
        let total = self.total() as u128;
        self.counts.iter().filter(|&&k| (k as u128) * c < total).count()
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::EmptySelection)
        } else {
            Ok(())
        }
    }
}

/// Restricts which records are counted. Filters compose.
#[derive(Debug, Clone, Copy, Default)]
pub struct Selection<'a> {
    pub tier: Option<(Tier, &'a QualityTierPartition)>,
    pub age_group: Option<usize>,
    pub gender: Option<Gender>,
}

impl Selection<'_> {
    fn accepts(&self, index: usize, record: &FaceRecord) -> bool {
        if let Some((tier, tiers)) = self.tier {
            if tiers.tier_of(index) != tier {
                return false;
            }
        }
        self.age_group.is_none_or(|g| record.age_group == g) && self.gender.is_none_or(|g| record.gender == g)
    }
}

pub fn counts_by_category(
    dataset: &Dataset,
    attribute: Attribute,
    selection: &Selection<'_>,
) -> Result<AttributeDistribution> {
    let (categories, mut counts): (Vec<String>, Vec<u64>) = match attribute {
        Attribute::Gender => (
            Gender::ALL.iter().map(|g| g.to_string()).collect(),
            vec![0; Gender::ALL.len()],
        ),
        Attribute::AgeGroup => {
            let g = dataset.age_bins.groups();
            ((0..g).map(|i| i.to_string()).collect(), vec![0; g])
        }
    };
    for (i, r) in dataset.records.iter().enumerate() {
        if !selection.accepts(i, r) {
            continue;
        }
        let slot = match attribute {
            Attribute::Gender => r.gender.index(),
            Attribute::AgeGroup => r.age_group,
        };
        let Some(count) = counts.get_mut(slot) else {
            return Err(Error::InvalidParameter(format!(
                "record {} has age group {} outside the configured bins",
                r.id, r.age_group
            )));
        };
        *count += 1;
    }
    let dist = AttributeDistribution::new(categories, counts)?;
    dist.ensure_nonempty()?;
    Ok(dist)
}

pub fn imbalance_ratio(dist: &AttributeDistribution) -> Result<f64> {
    dist.ensure_nonempty()?;
    let max = *dist.counts.iter().max().expect("non-empty");
    let min = *dist.counts.iter().min().expect("non-empty");
    if min == 0 {
        return Err(Error::DegenerateDistribution(
            "a category has zero count; imbalance ratio is undefined".into(),
        ));
    }
    Ok(max as f64 / min as f64)
}

fn check_probabilities(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidProbabilities(format!(
            "negative or non-finite entry in {p:?}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidProbabilities(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Hellinger distance `(1/sqrt 2) * sqrt(sum (sqrt p_i - sqrt q_i)^2)`.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::InvalidProbabilities(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_probabilities(p)?;
    check_probabilities(q)?;
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    // Rounding can push the sum a hair past 2 for disjoint supports.
    Ok((s.sqrt() / std::f64::consts::SQRT_2).min(1.0))
}

fn uniform(c: usize) -> Vec<f64> {
    vec![1.0 / c as f64; c]
}

/// Imbalance degree of a probability vector with `m` minority classes.
fn imbalance_degree_with(p: &[f64], m: usize) -> Result<f64> {
    let c = p.len();
    if m == 0 {
        return Ok(0.0);
    }
    let b = uniform(c);
    let mut extreme = vec![0.0; c];
    let share = 1.0 / (c - m) as f64;
    for v in extreme.iter_mut().skip(m) {
        *v = share;
    }
    let num = hellinger(p, &b)?;
    let den = hellinger(&extreme, &b)?;
    Ok(num / den + (m as f64 - 1.0))
}

pub fn imbalance_degree(dist: &AttributeDistribution) -> Result<f64> {
    dist.ensure_nonempty()?;
    imbalance_degree_with(&dist.probabilities(), dist.minority_classes())
}

/// Imbalance degree of a raw probability vector. Minority classes are those
/// with `p_i < 1/c` strictly.
pub fn imbalance_degree_from_probabilities(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::InvalidProbabilities("need at least two categories".into()));
    }
    check_probabilities(p)?;
    let share = 1.0 / p.len() as f64;
    let m = p.iter().filter(|&&v| v < share).count();
    imbalance_degree_with(p, m)
}

pub fn log_likelihood_index(dist: &AttributeDistribution) -> Result<f64> {
    dist.ensure_nonempty()?;
    log_likelihood_index_from_probabilities(&dist.probabilities())
}

pub fn log_likelihood_index_from_probabilities(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::InvalidProbabilities("need at least two categories".into()));
    }
    check_probabilities(p)?;
    let c = p.len() as f64;
    let s: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| v * (v * c).ln()).sum();
    // Gibbs' inequality; clamp the rounding residue at uniform.
    Ok((2.0 * s).max(0.0))
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub attribute: Attribute,
    pub categories: Vec<String>,
    pub counts: Vec<u64>,
    /// `None` when a category is empty.
    pub imbalance_ratio: Option<f64>,
    pub imbalance_degree: f64,
    pub log_likelihood_index: f64,
    pub minority_count: usize,
}

impl MetricsRow {
    pub fn from_distribution(attribute: Attribute, dist: &AttributeDistribution) -> Result<Self> {
        let imbalance_ratio = match imbalance_ratio(dist) {
            Ok(v) => Some(v),
            Err(Error::DegenerateDistribution(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            attribute,
            categories: dist.categories.clone(),
            counts: dist.counts.clone(),
            imbalance_ratio,
            imbalance_degree: imbalance_degree(dist)?,
            log_likelihood_index: log_likelihood_index(dist)?,
            minority_count: dist.minority_classes(),
        })
    }

    /// Upper bound of the imbalance degree for this row's category count.
    pub fn degree_bound(&self) -> f64 {
        (self.categories.len() - 1) as f64
    }
}

pub fn metrics_row(dataset: &Dataset, attribute: Attribute, selection: &Selection<'_>) -> Result<MetricsRow> {
    let dist = counts_by_category(dataset, attribute, selection)?;
    MetricsRow::from_distribution(attribute, &dist)
}

/// Rank-based split into top 25%, middle 50% and bottom 25% by quality.
///
/// `|top| = ceil(N/4)`, `|bottom| = floor(N/4)`, the rest is middle. Ties in
/// quality rank the lower id first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityTierPartition {
    assignment: Vec<Tier>,
}

impl QualityTierPartition {
    /// A partition given tier by tier, one entry per dataset record.
    pub fn from_assignment(assignment: Vec<Tier>) -> Self {
        Self { assignment }
    }

    /// Tier of the record at `index` in the dataset the partition was built
    /// from.
    pub fn tier_of(&self, index: usize) -> Tier {
        self.assignment[index]
    }

    pub fn members(&self, tier: Tier) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == tier)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn size(&self, tier: Tier) -> usize {
        self.assignment.iter().filter(|t| **t == tier).count()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn ids<'d>(&self, dataset: &'d Dataset, tier: Tier) -> Vec<&'d str> {
        self.members(tier)
            .into_iter()
            .map(|i| dataset.records[i].id.as_str())
            .collect()
    }
}

pub fn tier_sizes(n: usize) -> (usize, usize, usize) {
    let top = n.div_ceil(4);
    let bottom = n / 4;
    (top, n - top - bottom, bottom)
}

pub fn quality_tiers(dataset: &Dataset) -> QualityTierPartition {
    let n = dataset.records.len();
    let (top, middle, _) = tier_sizes(n);
    let mut assignment = vec![Tier::Bottom; n];
    for (rank, idx) in quality_order(&dataset.records).into_iter().enumerate() {
        assignment[idx] = if rank < top {
            Tier::Top
        } else if rank < top + middle {
            Tier::Middle
        } else {
            Tier::Bottom
        };
    }
    QualityTierPartition { assignment }
}

/// Population standard deviation (divides by the number of entries).
pub fn population_stddev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeGroupGenderCounts {
    pub age_group: usize,
    pub male: u64,
    pub female: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSummary {
    pub tier: Tier,
    pub size: usize,
    pub empty: bool,
    pub groups: Vec<AgeGroupGenderCounts>,
    /// Share of the tier in each age group, in percent.
    pub age_percentages: Vec<f64>,
    /// Population stddev of `age_percentages`, in percentage points.
    pub age_percentage_stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierReport {
    pub tiers: Vec<TierSummary>,
}

impl TierReport {
    pub fn tier(&self, tier: Tier) -> &TierSummary {
        self.tiers.iter().find(|t| t.tier == tier).expect("all tiers present")
    }
}

/// Per-tier gender counts by age group, and the spread of age-group shares.
pub fn tier_report(dataset: &Dataset, tiers: &QualityTierPartition) -> TierReport {
    let g = dataset.age_bins.groups();
    let summaries = Tier::ALL
        .iter()
        .map(|&tier| {
            let mut groups: Vec<AgeGroupGenderCounts> = (0..g)
                .map(|age_group| AgeGroupGenderCounts {
                    age_group,
                    male: 0,
                    female: 0,
                })
                .collect();
            let members = tiers.members(tier);
            for &i in &members {
                let r = &dataset.records[i];
                let cell = &mut groups[r.age_group.min(g - 1)];
                match r.gender {
                    Gender::Male => cell.male += 1,
                    Gender::Female => cell.female += 1,
                }
            }
            let size = members.len();
            let age_percentages: Vec<f64> = if size == 0 {
                vec![0.0; g]
            } else {
                groups
                    .iter()
                    .map(|c| 100.0 * (c.male + c.female) as f64 / size as f64)
                    .collect()
            };
            TierSummary {
                tier,
                size,
                empty: size == 0,
                age_percentage_stddev: population_stddev(&age_percentages),
                groups,
                age_percentages,
            }
        })
        .collect();
    TierReport { tiers: summaries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgeBins, LatentVector, Provenance};

    fn dist(counts: &[u64]) -> AttributeDistribution {
        AttributeDistribution::from_counts(counts.to_vec()).unwrap()
    }

    fn rec(id: String, gender: Gender, age_group: usize, q: f64) -> FaceRecord {
        let age_years = [5.0, 30.0, 50.0, 80.0][age_group];
        FaceRecord {
            id,
            latent: LatentVector::zeros(1),
            gender,
            age_years,
            age_group,
            quality_raw: q,
            quality_percentile: 0.0,
            provenance: Provenance::Original,
            parents: vec![],
            step: None,
        }
    }

    fn dataset(records: Vec<FaceRecord>) -> Dataset {
        Dataset {
            dim: 1,
            age_bins: AgeBins::default(),
            records,
        }
    }

    #[test]
    fn counts_three_to_one() {
        let ds = dataset(vec![
            rec("a".into(), Gender::Male, 0, 0.1),
            rec("b".into(), Gender::Male, 0, 0.2),
            rec("c".into(), Gender::Male, 1, 0.3),
            rec("d".into(), Gender::Female, 1, 0.4),
        ]);
        let d = counts_by_category(&ds, Attribute::Gender, &Selection::default()).unwrap();
        assert_eq!(d.counts, vec![3, 1]);
        assert_eq!(d.categories, vec!["male", "female"]);
    }

    #[test]
    fn empty_tier_selection_errors() {
        let ds = dataset(vec![rec("a".into(), Gender::Male, 0, 0.1)]);
        let tiers = quality_tiers(&ds);
        let sel = Selection {
            tier: Some((Tier::Bottom, &tiers)),
            ..Default::default()
        };
        assert!(matches!(
            counts_by_category(&ds, Attribute::Gender, &sel),
            Err(Error::EmptySelection)
        ));
    }

    #[test]
    fn filters_compose() {
        let mut records = Vec::new();
        for i in 0..8 {
            let g = if i % 2 == 0 { Gender::Male } else { Gender::Female };
            records.push(rec(format!("r{i}"), g, i % 4, i as f64));
        }
        let ds = dataset(records);
        let tiers = quality_tiers(&ds);
        let sel = Selection {
            tier: Some((Tier::Top, &tiers)),
            age_group: Some(3),
            gender: None,
        };
        // Top two by quality are r7 (group 3, female) and r6 (group 2).
        let d = counts_by_category(&ds, Attribute::Gender, &sel).unwrap();
        assert_eq!(d.counts, vec![0, 1]);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(imbalance_ratio(&dist(&[10, 10, 10, 10])).unwrap(), 1.0);
        assert_eq!(imbalance_ratio(&dist(&[40, 10])).unwrap(), 4.0);
        assert!((imbalance_ratio(&dist(&[3623, 1377])).unwrap() - 2.631).abs() < 1e-3);
        assert!(matches!(
            imbalance_ratio(&dist(&[5, 0])),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(matches!(imbalance_ratio(&dist(&[0, 0])), Err(Error::EmptySelection)));
    }

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        // Closed form: sqrt(1 - (sqrt(.45) + sqrt(.05))).
        let expected = (1.0 - (0.45f64.sqrt() + 0.05f64.sqrt())).sqrt();
        let h = hellinger(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 0.3250).abs() < 1e-4);
    }

    #[test]
    fn hellinger_rejects_bad_input() {
        assert!(hellinger(&[0.5, 0.5], &[1.0]).is_err());
        assert!(hellinger(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(hellinger(&[1.5, -0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn degree_examples() {
        assert_eq!(imbalance_degree(&dist(&[7, 7, 7])).unwrap(), 0.0);
        assert!((imbalance_degree_from_probabilities(&[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        let id = imbalance_degree_from_probabilities(&[0.7246, 0.2754]).unwrap();
        assert!((id - 0.303).abs() <= 3e-3, "{id}");
        assert!(imbalance_degree(&dist(&[0, 0])).is_err());
    }

    #[test]
    fn degree_stays_within_bound() {
        let d = dist(&[1000, 1, 1, 1]);
        let id = imbalance_degree(&d).unwrap();
        assert!(id <= 3.0 && id > 2.0, "{id}");
    }

    #[test]
    fn lli_examples() {
        assert_eq!(log_likelihood_index(&dist(&[4, 4, 4, 4])).unwrap(), 0.0);
        let a = log_likelihood_index_from_probabilities(&[0.7246, 0.2754]).unwrap();
        assert!((a - 0.209).abs() <= 3e-3, "{a}");
        let b = log_likelihood_index_from_probabilities(&[0.6475, 0.3525]).unwrap();
        assert!((b - 0.088).abs() <= 3e-3, "{b}");
        // Zero categories contribute nothing.
        let z = log_likelihood_index_from_probabilities(&[1.0, 0.0]).unwrap();
        assert!((z - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tier_sizes_follow_rounding_rule() {
        assert_eq!(tier_sizes(100), (25, 50, 25));
        assert_eq!(tier_sizes(4), (1, 2, 1));
        assert_eq!(tier_sizes(5), (2, 2, 1));
        assert_eq!(tier_sizes(1), (1, 0, 0));
        assert_eq!(tier_sizes(0), (0, 0, 0));
    }

    #[test]
    fn tiers_of_hundred_distinct() {
        let ds = dataset(
            (0..100)
                .map(|i| rec(format!("r{i:03}"), Gender::Male, 0, (i * 37 % 100) as f64))
                .collect(),
        );
        let t = quality_tiers(&ds);
        assert_eq!(
            (t.size(Tier::Top), t.size(Tier::Middle), t.size(Tier::Bottom)),
            (25, 50, 25)
        );
        for i in t.members(Tier::Top) {
            assert!(ds.records[i].quality_raw >= 75.0);
        }
    }

    #[test]
    fn equal_scores_rank_lower_id_first() {
        let ds = dataset(vec![
            rec("B".into(), Gender::Male, 0, 0.5),
            rec("A".into(), Gender::Male, 0, 0.5),
        ]);
        let t = quality_tiers(&ds);
        assert_eq!(t.tier_of(1), Tier::Top);
        assert_eq!(t.tier_of(0), Tier::Middle);
    }

    #[test]
    fn stddev_examples() {
        assert_eq!(population_stddev(&[25.0, 25.0, 25.0, 25.0]), 0.0);
        assert!((population_stddev(&[70.0, 10.0, 10.0, 10.0]) - 25.98).abs() < 0.01);
    }

    #[test]
    fn report_on_empty_dataset_flags_every_tier() {
        let ds = dataset(vec![]);
        let report = tier_report(&ds, &quality_tiers(&ds));
        assert!(report.tiers.iter().all(|t| t.empty && t.age_percentage_stddev == 0.0));
    }
}
