//! Two-phase rebalancing.
//!
//! Phase 1 equalizes gender inside every (age group, tier) cell of the top
//! and middle quality tiers by sampling around minority-gender records.
//! Phase 2 lifts age groups whose tier count is below the tier's mean,
//! splitting the gap between genders so each cell stays balanced. The
//! bottom tier never supplies parents or seeds.

mod execute;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{quality_tiers, QualityTierPartition};
use crate::model::{
    quality_cmp, CellQuota, Dataset, Gender, GenderTarget, PlanFlag, PlanFlagKind, Provenance, SamplingPlan,
    SamplingTask, TargetCell, Tier,
};
use crate::samplers::{DEFAULT_STEPS, DEFAULT_VARIANCE};

pub use execute::{execute_plan, ExecuteConfig, Execution, ExecutionReport, ExecutionTotals, RemovalEntry, TaskReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Line,
    Sphere,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Line => "line",
            Strategy::Sphere => "sphere",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(Strategy::Line),
            "sphere" => Ok(Strategy::Sphere),
            other => Err(Error::InvalidParameter(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub strategy: Strategy,
    /// Samples per line or per sphere.
    pub n_steps: usize,
    pub variance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Line,
            n_steps: DEFAULT_STEPS,
            variance: DEFAULT_VARIANCE,
        }
    }
}

impl PlannerConfig {
    fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
        }
        if !self.variance.is_finite() || self.variance <= 0.0 {
            return Err(Error::NonPositiveVariance(self.variance));
        }
        Ok(())
    }

    fn line(&self, a: &str, b: &str, target: TargetCell, phase: u8) -> SamplingTask {
        SamplingTask::Line {
            parent_a: a.to_string(),
            parent_b: b.to_string(),
            n_steps: self.n_steps,
            target,
            phase,
        }
    }

    fn sphere(&self, seed: &str, target: TargetCell, phase: u8) -> SamplingTask {
        SamplingTask::Sphere {
            seed_id: seed.to_string(),
            n_samples: self.n_steps,
            variance: self.variance,
            target,
            phase,
        }
    }
}

/// State carried across planning rounds: line parent pairs already used,
/// so later rounds draw fresh segments, and cells whose line tasks stopped
/// producing new points.
#[derive(Debug, Clone, Default)]
pub struct PlanHistory {
    used: HashSet<(String, String)>,
    saturated: BTreeSet<(Tier, usize)>,
    yields: BTreeMap<(Tier, usize), f64>,
}

/// Lowest match rate used when sizing tasks, so a cell that produced almost
/// nothing does not explode into hundreds of tasks.
const MIN_YIELD: f64 = 0.1;

impl PlanHistory {
    fn key(a: &str, b: &str) -> (String, String) {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.used.contains(&Self::key(a, b))
    }

    pub fn insert(&mut self, a: &str, b: &str) {
        self.used.insert(Self::key(a, b));
    }

    pub fn record_plan(&mut self, plan: &SamplingPlan) {
        for t in &plan.tasks {
            if let SamplingTask::Line { parent_a, parent_b, .. } = t {
                self.insert(parent_a, parent_b);
            }
        }
    }

    /// Marks a (tier, age group) cell whose segments mostly produced
    /// duplicates or samples outside the cell. Later line plans sample
    /// spheres there instead.
    pub fn mark_saturated(&mut self, tier: Tier, age_group: usize) {
        self.saturated.insert((tier, age_group));
    }

    pub fn is_saturated(&self, tier: Tier, age_group: usize) -> bool {
        self.saturated.contains(&(tier, age_group))
    }

    /// Records the fraction of a cell's generated samples that matched their
    /// target in the last round.
    pub fn record_yield(&mut self, tier: Tier, age_group: usize, rate: f64) {
        self.yields.insert((tier, age_group), rate.clamp(MIN_YIELD, 1.0));
    }

    /// Expected match rate for a cell; 1 until a round has been observed.
    pub fn expected_yield(&self, tier: Tier, age_group: usize) -> f64 {
        self.yields.get(&(tier, age_group)).copied().unwrap_or(1.0)
    }

    fn tasks_for(&self, count: usize, n_steps: usize, tier: Tier, age_group: usize) -> usize {
        let per_task = n_steps as f64 * self.expected_yield(tier, age_group);
        (count as f64 / per_task).ceil() as usize
    }

    /// Number of distinct line pairs used so far.
    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }
}

/// Record indices of one (tier, age group) cell split by gender. Original
/// records rank ahead of generated ones, each by descending quality, so
/// parents and seeds come from the source collection while it lasts.
#[derive(Debug, Default)]
struct Cell {
    male: Vec<usize>,
    female: Vec<usize>,
}

impl Cell {
    fn of(&self, g: Gender) -> &[usize] {
        match g {
            Gender::Male => &self.male,
            Gender::Female => &self.female,
        }
    }

    fn total(&self) -> usize {
        self.male.len() + self.female.len()
    }
}

fn cells(dataset: &Dataset, tiers: &QualityTierPartition) -> BTreeMap<(Tier, usize), Cell> {
    let mut out: BTreeMap<(Tier, usize), Cell> = BTreeMap::new();
    for tier in Tier::BALANCED {
        for g in 0..dataset.age_bins.groups() {
            out.insert((tier, g), Cell::default());
        }
    }
    for (i, r) in dataset.records.iter().enumerate() {
        let tier = tiers.tier_of(i);
        if let Some(cell) = out.get_mut(&(tier, r.age_group)) {
            match r.gender {
                Gender::Male => cell.male.push(i),
                Gender::Female => cell.female.push(i),
            }
        }
    }
    let rank = |&a: &usize, &b: &usize| {
        let (ra, rb) = (&dataset.records[a], &dataset.records[b]);
        let generated = |r: &crate::model::FaceRecord| r.provenance != Provenance::Original;
        generated(ra).cmp(&generated(rb)).then_with(|| quality_cmp(ra, rb))
    };
    for cell in out.values_mut() {
        cell.male.sort_by(rank);
        cell.female.sort_by(rank);
    }
    out
}

/// Index pairs over a ranked list: disjoint neighbours first (1st with
/// 2nd, 3rd with 4th, ...), then every other pair by rank gap.
fn ranked_pairs(k: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..k / 2).map(|i| (2 * i, 2 * i + 1)).collect();
    let mut rest: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .filter(|&(i, j)| !(j == i + 1 && i % 2 == 0))
        .collect();
    rest.sort_by_key(|&(i, j)| (j - i, i));
    pairs.extend(rest);
    pairs
}

/// Pair order within one ranked member list: pairs of originals first,
/// then originals with generated records, then generated records among
/// themselves. Generated records cluster around the segments that made
/// them, so pairs reaching back to an original span new ground.
fn same_gender_pairs(dataset: &Dataset, members: &[usize]) -> Vec<(usize, usize)> {
    let split = members
        .iter()
        .position(|&i| dataset.records[i].provenance != Provenance::Original)
        .unwrap_or(members.len());
    let (orig, generated) = members.split_at(split);
    let mut out: Vec<(usize, usize)> = ranked_pairs(orig.len())
        .into_iter()
        .map(|(a, b)| (orig[a], orig[b]))
        .collect();
    out.extend(
        cross_pairs(orig.len(), generated.len())
            .into_iter()
            .map(|(a, b)| (orig[a], generated[b])),
    );
    out.extend(
        ranked_pairs(generated.len())
            .into_iter()
            .map(|(a, b)| (generated[a], generated[b])),
    );
    out
}

/// Cross pairs between two ranked lists: equal ranks first, then by rank
/// sum.
fn cross_pairs(a: usize, b: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..a.min(b)).map(|i| (i, i)).collect();
    let mut rest: Vec<(usize, usize)> = (0..a)
        .flat_map(|i| (0..b).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .collect();
    rest.sort_by_key(|&(i, j)| (i + j, i));
    pairs.extend(rest);
    pairs
}

/// Picks `n` pairs, preferring ones not yet in `history`; falls back to
/// reuse in order when fresh pairs run out.
fn pick_pairs(candidates: &[(String, String)], n: usize, history: &mut PlanHistory) -> Vec<(String, String)> {
    let mut chosen: Vec<(String, String)> = candidates
        .iter()
        .filter(|(a, b)| !history.contains(a, b))
        .take(n)
        .cloned()
        .collect();
    let mut cycle = candidates.iter().cycle();
    while chosen.len() < n && !candidates.is_empty() {
        chosen.push(cycle.next().expect("non-empty").clone());
    }
    for (a, b) in &chosen {
        history.insert(a, b);
    }
    chosen
}

/// True when records `a` and `b` lie on one previously sampled segment: two
/// points of the same line, or a line point and one of its endpoints. A new
/// line through them would only retrace that segment.
fn collinear(dataset: &Dataset, a: usize, b: usize) -> bool {
    let (ra, rb) = (&dataset.records[a], &dataset.records[b]);
    let on_line = |r: &crate::model::FaceRecord| r.provenance == Provenance::Line;
    let endpoint_of = |line: &crate::model::FaceRecord, other: &crate::model::FaceRecord| {
        on_line(line) && line.parents.contains(&other.id)
    };
    let same_segment = on_line(ra) && on_line(rb) && {
        let mut pa = ra.parents.clone();
        let mut pb = rb.parents.clone();
        pa.sort();
        pb.sort();
        pa == pb
    };
    same_segment || endpoint_of(ra, rb) || endpoint_of(rb, ra)
}

/// Maps index pairs to id pairs, dropping collinear ones.
fn id_pairs(dataset: &Dataset, pairs: impl IntoIterator<Item = (usize, usize)>) -> Vec<(String, String)> {
    pairs
        .into_iter()
        .filter(|&(a, b)| !collinear(dataset, a, b))
        .map(|(a, b)| (dataset.records[a].id.clone(), dataset.records[b].id.clone()))
        .collect()
}

/// Highest-quality record of `gender` in the age group nearest to `group`,
/// searching the same tier first.
fn nearest_minority(
    cells: &BTreeMap<(Tier, usize), Cell>,
    tier: Tier,
    group: usize,
    gender: Gender,
    groups: usize,
) -> Option<usize> {
    let mut order: Vec<usize> = (0..groups).filter(|&g| g != group).collect();
    order.sort_by_key(|&g| (g.abs_diff(group), g));
    let tiers = [tier, if tier == Tier::Top { Tier::Middle } else { Tier::Top }];
    tiers.iter().find_map(|&t| {
        order
            .iter()
            .find_map(|&g| cells.get(&(t, g)).and_then(|c| c.of(gender).first().copied()))
    })
}

pub fn phase1_plan(dataset: &Dataset, tiers: &QualityTierPartition, cfg: &PlannerConfig) -> Result<SamplingPlan> {
    phase1_plan_with(dataset, tiers, cfg, &mut PlanHistory::default())
}

/// Phase 1 with a pair history shared across planning rounds.
pub fn phase1_plan_with(
    dataset: &Dataset,
    tiers: &QualityTierPartition,
    cfg: &PlannerConfig,
    history: &mut PlanHistory,
) -> Result<SamplingPlan> {
    cfg.validate()?;
    let cells = cells(dataset, tiers);
    let groups = dataset.age_bins.groups();
    let id = |i: usize| dataset.records[i].id.as_str();
    let mut plan = SamplingPlan::default();

    for (&(tier, g), cell) in &cells {
        let (m, f) = (cell.male.len(), cell.female.len());
        if m == f {
            continue;
        }
        let minority = if m < f { Gender::Male } else { Gender::Female };
        let deficit = m.abs_diff(f);
        let target = TargetCell {
            age_group: g,
            gender: minority.into(),
            tier,
        };
        plan.quotas.push(CellQuota {
            age_group: g,
            gender: minority,
            tier,
            count: deficit,
            phase: 1,
        });
        let n_tasks = history.tasks_for(deficit, cfg.n_steps, tier, g);
        let members = cell.of(minority);

        let seeds: Vec<usize> = if members.is_empty() {
            let nearest = nearest_minority(&cells, tier, g, minority, groups)
                .ok_or_else(|| Error::UnfillableCell(target.to_string()))?;
            plan.flags.push(PlanFlag {
                kind: PlanFlagKind::SphereFallback,
                age_group: g,
                tier,
                detail: format!("no {minority} record in cell; seeding from {}", id(nearest)),
            });
            vec![nearest]
        } else if cfg.strategy == Strategy::Line && history.is_saturated(tier, g) {
            plan.flags.push(PlanFlag {
                kind: PlanFlagKind::SphereFallback,
                age_group: g,
                tier,
                detail: format!("line pairs saturated; sphere seeds drawn from {minority} members"),
            });
            members.to_vec()
        } else if cfg.strategy == Strategy::Line && members.len() == 1 {
            plan.flags.push(PlanFlag {
                kind: PlanFlagKind::SphereFallback,
                age_group: g,
                tier,
                detail: format!("single {minority} record in cell; cannot form a pair"),
            });
            members.to_vec()
        } else {
            Vec::new()
        };

        if !seeds.is_empty() || cfg.strategy == Strategy::Sphere {
            let pool = if seeds.is_empty() { members } else { &seeds[..] };
            for k in 0..n_tasks {
                plan.tasks.push(cfg.sphere(id(pool[k % pool.len()]), target, 1));
            }
        } else {
            let candidates = id_pairs(dataset, same_gender_pairs(dataset, members));
            for (a, b) in pick_pairs(&candidates, n_tasks, history) {
                plan.tasks.push(cfg.line(&a, &b, target, 1));
            }
        }
    }
    Ok(plan)
}

/// Target total per (tier, age group) for groups that phase 2 must lift.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Phase2Targets {
    targets: BTreeMap<(Tier, usize), usize>,
}

impl Phase2Targets {
    pub fn get(&self, tier: Tier, age_group: usize) -> Option<usize> {
        self.targets.get(&(tier, age_group)).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Targets implied by an existing plan: current cell size plus every
    /// quota planned for it, for cells that carry phase-2 quotas.
    pub fn from_plan(dataset: &Dataset, tiers: &QualityTierPartition, plan: &SamplingPlan) -> Self {
        let cells = cells(dataset, tiers);
        let mut targets = BTreeMap::new();
        for q in plan.quotas.iter().filter(|q| q.phase == 2) {
            let key = (q.tier, q.age_group);
            if targets.contains_key(&key) {
                continue;
            }
            let current = cells.get(&key).map_or(0, Cell::total);
            let planned: usize = plan
                .quotas
                .iter()
                .filter(|p| p.tier == q.tier && p.age_group == q.age_group)
                .map(|p| p.count)
                .sum();
            targets.insert(key, current + planned);
        }
        Self { targets }
    }
}

fn projected(cell: &Cell, phase1: &SamplingPlan, tier: Tier, g: usize) -> (usize, usize) {
    (
        cell.male.len() + phase1.quota_for(g, Gender::Male, tier),
        cell.female.len() + phase1.quota_for(g, Gender::Female, tier),
    )
}

/// Per tier, the mean projected group size after phase 1; groups below it
/// get a target of `projected + ceil(mean - projected)`.
pub fn phase2_targets(dataset: &Dataset, tiers: &QualityTierPartition, phase1: &SamplingPlan) -> Phase2Targets {
    let cells = cells(dataset, tiers);
    let groups = dataset.age_bins.groups();
    let mut targets = BTreeMap::new();
    for tier in Tier::BALANCED {
        let sizes: Vec<usize> = (0..groups)
            .map(|g| {
                let (m, f) = projected(&cells[&(tier, g)], phase1, tier, g);
                m + f
            })
            .collect();
        let mean = sizes.iter().sum::<usize>() as f64 / groups as f64;
        for (g, &size) in sizes.iter().enumerate() {
            if (size as f64) < mean {
                targets.insert((tier, g), size + (mean - size as f64).ceil() as usize);
            }
        }
    }
    Phase2Targets { targets }
}

pub fn phase2_plan(
    dataset: &Dataset,
    tiers: &QualityTierPartition,
    cfg: &PlannerConfig,
    phase1: &SamplingPlan,
) -> Result<SamplingPlan> {
    let targets = phase2_targets(dataset, tiers, phase1);
    phase2_plan_with(dataset, tiers, cfg, phase1, &targets, &mut PlanHistory::default())
}

/// Phase 2 against fixed targets.
pub fn phase2_plan_with(
    dataset: &Dataset,
    tiers: &QualityTierPartition,
    cfg: &PlannerConfig,
    phase1: &SamplingPlan,
    targets: &Phase2Targets,
    history: &mut PlanHistory,
) -> Result<SamplingPlan> {
    cfg.validate()?;
    let cells = cells(dataset, tiers);
    let id = |i: usize| dataset.records[i].id.as_str();
    let mut plan = SamplingPlan::default();

    for (&(tier, g), &target_total) in &targets.targets {
        let Some(cell) = cells.get(&(tier, g)) else {
            continue;
        };
        let (pm, pf) = projected(cell, phase1, tier, g);
        let gap = target_total.saturating_sub(pm + pf);
        if gap == 0 {
            continue;
        }
        if cell.total() == 0 {
            plan.flags.push(PlanFlag {
                kind: PlanFlagKind::EmptyAgeGroup,
                age_group: g,
                tier,
                detail: format!("no members; gap of {gap} left open"),
            });
            continue;
        }

        // Close any residual gender difference first, then split evenly.
        let (small, large) = if pm <= pf {
            (Gender::Male, pf - pm)
        } else {
            (Gender::Female, pm - pf)
        };
        let first = gap.min(large);
        let rest = gap - first;
        let mut share = [0usize; 2];
        share[small.index()] += first + rest / 2;
        share[small.other().index()] += rest / 2;
        share[Gender::Female.index()] += rest % 2;
        for gender in Gender::ALL {
            if share[gender.index()] > 0 {
                plan.quotas.push(CellQuota {
                    age_group: g,
                    gender,
                    tier,
                    count: share[gender.index()],
                    phase: 2,
                });
            }
        }

        let target = TargetCell {
            age_group: g,
            gender: GenderTarget::Both,
            tier,
        };
        let n_tasks = history.tasks_for(gap, cfg.n_steps, tier, g);
        let (males, females) = (&cell.male, &cell.female);

        if males.is_empty() || females.is_empty() {
            let present = if males.is_empty() { females } else { males };
            let gender = if males.is_empty() { Gender::Female } else { Gender::Male };
            plan.flags.push(PlanFlag {
                kind: PlanFlagKind::SingleGenderGroup,
                age_group: g,
                tier,
                detail: format!("only {gender} members; sphere seeds drawn from {gender} alone"),
            });
            for k in 0..n_tasks {
                plan.tasks.push(cfg.sphere(id(present[k % present.len()]), target, 2));
            }
            continue;
        }

        let strategy = if history.is_saturated(tier, g) {
            if cfg.strategy == Strategy::Line {
                plan.flags.push(PlanFlag {
                    kind: PlanFlagKind::SphereFallback,
                    age_group: g,
                    tier,
                    detail: "line pairs saturated; sphere seeds alternate genders".to_string(),
                });
            }
            Strategy::Sphere
        } else {
            cfg.strategy
        };
        match strategy {
            Strategy::Line => {
                let candidates = id_pairs(
                    dataset,
                    cross_pairs(males.len(), females.len())
                        .into_iter()
                        .map(|(a, b)| (males[a], females[b])),
                );
                for (a, b) in pick_pairs(&candidates, n_tasks, history) {
                    plan.tasks.push(cfg.line(&a, &b, target, 2));
                }
            }
            Strategy::Sphere => {
                for k in 0..n_tasks {
                    let list = if k % 2 == 0 { males } else { females };
                    plan.tasks.push(cfg.sphere(id(list[(k / 2) % list.len()]), target, 2));
                }
            }
        }
    }
    Ok(plan)
}

/// Full plan for a dataset: phase 1 followed by phase 2 computed on the
/// counts phase 1 is projected to reach.
pub fn balance_plan(dataset: &Dataset, cfg: &PlannerConfig) -> Result<SamplingPlan> {
    let tiers = quality_tiers(dataset);
    let mut history = PlanHistory::default();
    let mut plan = phase1_plan_with(dataset, &tiers, cfg, &mut history)?;
    let targets = phase2_targets(dataset, &tiers, &plan);
    let p2 = phase2_plan_with(dataset, &tiers, cfg, &plan, &targets, &mut history)?;
    plan.extend(p2);
    Ok(plan)
}

#[cfg(test)]
mod tests;
