use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{phase1_plan_with, phase2_plan_with, Phase2Targets, PlanHistory, PlannerConfig};
use crate::error::{Error, Result};
use crate::metrics::{metrics_row, quality_tiers, tier_sizes, Attribute, MetricsRow, Selection};
use crate::model::{
    quality_order, CellQuota, Dataset, FaceRecord, Gender, LatentVector, PlanFlag, Provenance, SamplingPlan,
    SamplingTask, TargetCell, Tier,
};
use crate::oracles::Oracle;
use crate::rng;
use crate::samplers::{
    line_sample, screen, sphere_sample_with, DedupIndex, DedupParams, DuplicateKind, LineSegment, Neighbor, SphereSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecuteConfig {
    pub master_seed: u64,
    pub max_rounds: usize,
    pub dedup: DedupParams,
    /// Used when re-planning between rounds.
    pub planner: PlannerConfig,
}

impl Default for ExecuteConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            max_rounds: 5,
            dedup: DedupParams::default(),
            planner: PlannerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub round: usize,
    pub task: usize,
    pub kind: String,
    pub phase: u8,
    pub target: TargetCell,
    pub parents: Vec<String>,
    pub generated: usize,
    pub kept_after_dedup: usize,
    /// Survivors whose classified cell matches the target.
    pub kept_after_classification: usize,
    pub discarded_mismatch: usize,
    /// Matching top-tier samples below the boundary projected for the end
    /// of the round.
    pub discarded_marginal: usize,
    /// Matching samples dropped because the cell quota was already met.
    pub discarded_surplus: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTotals {
    pub tasks: usize,
    pub generated: usize,
    pub kept_after_dedup: usize,
    pub kept_after_classification: usize,
    pub discarded_mismatch: usize,
    pub discarded_marginal: usize,
    pub discarded_surplus: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalEntry {
    pub round: usize,
    pub task: usize,
    pub sample: usize,
    pub kind: DuplicateKind,
    /// Id of the nearest neighbour, or `None` when it was a rejected-later
    /// candidate from the same round.
    pub nearest: Option<String>,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub rounds_executed: usize,
    pub tasks: Vec<TaskReport>,
    pub totals: ExecutionTotals,
    pub removals: Vec<RemovalEntry>,
    pub flags: Vec<PlanFlag>,
    pub warnings: Vec<String>,
    /// Quotas still open when the round budget ran out.
    pub unmet: Vec<CellQuota>,
    pub before: Vec<MetricsRow>,
    pub after: Vec<MetricsRow>,
    /// Set when an oracle failed; the dataset holds completed rounds only.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub dataset: Dataset,
    pub report: ExecutionReport,
}

fn overall_rows(dataset: &Dataset) -> Vec<MetricsRow> {
    [Attribute::Gender, Attribute::AgeGroup]
        .into_iter()
        .filter_map(|a| metrics_row(dataset, a, &Selection::default()).ok())
        .collect()
}

/// Lowest quality admitted to the top and middle tiers, plus the top
/// boundary expected once the round's additions land.
struct TierThresholds {
    top: f64,
    middle: f64,
    projected_top: f64,
}

impl TierThresholds {
    /// `added_top` and `added_total` are the records the round plans to add
    /// to the top tier and overall. Tiers are quartiles, and balancing adds
    /// far more than a quarter of its samples to the top, so every such
    /// addition pushes the weakest current top member down. A top sample
    /// below the projected boundary would be evicted by the merge it joins.
    fn new(dataset: &Dataset, added_top: usize, added_total: usize) -> Self {
        let order = quality_order(&dataset.records);
        let n = order.len();
        if n == 0 {
            return Self {
                top: f64::NEG_INFINITY,
                middle: f64::NEG_INFINITY,
                projected_top: f64::NEG_INFINITY,
            };
        }
        let quality_at = |rank: usize| dataset.records[order[rank.min(n - 1)]].quality_raw;
        let (top_size, _, bottom_size) = tier_sizes(n);
        let top = quality_at(top_size.max(1) - 1);
        let middle = if bottom_size >= n {
            top
        } else {
            quality_at(n - bottom_size - 1).min(top)
        };
        let (future_top, _, _) = tier_sizes(n + added_total);
        let kept_top = future_top.saturating_sub(added_top).max(1);
        let projected_top = quality_at(kept_top - 1).max(top);
        Self {
            top,
            middle,
            projected_top,
        }
    }

    fn tier(&self, q: f64) -> Tier {
        if q >= self.top {
            Tier::Top
        } else if q >= self.middle {
            Tier::Middle
        } else {
            Tier::Bottom
        }
    }
}

struct Candidate {
    latent: LatentVector,
    step: Option<f64>,
}

fn generate(
    task: &SamplingTask,
    dataset: &Dataset,
    index: &std::collections::HashMap<&str, usize>,
    seed: u64,
    round: usize,
    t: usize,
) -> Result<Vec<Candidate>> {
    let latent_of = |id: &str| -> Result<&LatentVector> {
        index
            .get(id)
            .map(|&i| &dataset.records[i].latent)
            .ok_or_else(|| Error::UnknownRecord(id.to_string()))
    };
    match task {
        SamplingTask::Line {
            parent_a,
            parent_b,
            n_steps,
            ..
        } => {
            let seg = LineSegment::new(latent_of(parent_a)?.clone(), latent_of(parent_b)?.clone())?;
            Ok(line_sample(&seg, *n_steps)?
                .into_iter()
                .map(|(c, z)| Candidate {
                    latent: z.quantized(),
                    step: Some(c),
                })
                .collect())
        }
        SamplingTask::Sphere {
            seed_id,
            n_samples,
            variance,
            ..
        } => {
            let spec = SphereSpec::new(latent_of(seed_id)?.clone(), *variance, *n_samples)?;
            let mut rng = rng::stream(seed, &[round as u64, t as u64]);
            Ok(sphere_sample_with(&spec, &mut rng)?
                .into_iter()
                .map(|z| Candidate {
                    latent: z.quantized(),
                    step: None,
                })
                .collect())
        }
    }
}

fn task_kind(task: &SamplingTask) -> (&'static str, Provenance, char) {
    match task {
        SamplingTask::Line { .. } => ("line", Provenance::Line, 'L'),
        SamplingTask::Sphere { .. } => ("sphere", Provenance::Sphere, 'S'),
    }
}

type QuotaKey = (usize, Gender, Tier);

fn quota_map(plan: &SamplingPlan) -> BTreeMap<QuotaKey, usize> {
    let mut m = BTreeMap::new();
    for q in &plan.quotas {
        *m.entry((q.age_group, q.gender, q.tier)).or_insert(0) += q.count;
    }
    m
}

/// Runs one round of `plan`; returns kept records without touching the
/// dataset.
fn run_round(
    plan: &SamplingPlan,
    dataset: &Dataset,
    oracle: &dyn Oracle,
    cfg: &ExecuteConfig,
    round: usize,
    id_prefix: usize,
    report: &mut ExecutionReport,
) -> Result<Vec<FaceRecord>> {
    let planned = |tier: Option<Tier>| {
        plan.quotas
            .iter()
            .filter(|q| tier.is_none_or(|t| q.tier == t))
            .map(|q| q.count)
            .sum::<usize>()
    };
    let thresholds = TierThresholds::new(dataset, planned(Some(Tier::Top)), planned(None));
    let index = dataset.index_by_id();
    let mut remaining = quota_map(plan);

    let batches: Vec<Vec<Candidate>> = plan
        .tasks
        .par_iter()
        .enumerate()
        .map(|(t, task)| generate(task, dataset, &index, cfg.master_seed, round, t))
        .collect::<Result<_>>()?;

    for (t, task) in plan.tasks.iter().enumerate() {
        if let SamplingTask::Line { parent_a, parent_b, .. } = task {
            if dataset.records[index[parent_a.as_str()]].latent == dataset.records[index[parent_b.as_str()]].latent {
                report.warnings.push(format!(
                    "round {round} task {t}: line endpoints {parent_a} and {parent_b} coincide"
                ));
            }
        }
    }

    // Dedup in task order against the dataset and earlier survivors.
    let mut dedup_index = DedupIndex::new(dataset.dim);
    for (i, r) in dataset.records.iter().enumerate() {
        dedup_index.insert(&r.latent, Neighbor::Existing(i))?;
    }
    let mut survivors: Vec<(usize, usize)> = Vec::new();
    let mut flat = 0usize;
    let mut flat_ids: Vec<String> = Vec::new();
    for (t, batch) in batches.iter().enumerate() {
        let (_, _, tag) = task_kind(&plan.tasks[t]);
        for (k, cand) in batch.iter().enumerate() {
            let id = format!("{tag}{id_prefix:07}r{round:02}t{t:05}k{k:03}");
            if let Some(removal) = screen(&dedup_index, &cand.latent, flat, cfg.dedup)? {
                let nearest = match removal.nearest {
                    Neighbor::Existing(i) => Some(dataset.records[i].id.clone()),
                    Neighbor::Candidate(j) => flat_ids.get(j).cloned(),
                };
                report.removals.push(RemovalEntry {
                    round,
                    task: t,
                    sample: k,
                    kind: removal.kind,
                    nearest,
                    distance: removal.distance,
                });
            } else {
                dedup_index.insert(&cand.latent, Neighbor::Candidate(flat))?;
                survivors.push((t, k));
            }
            flat_ids.push(id);
            flat += 1;
        }
    }

    let ids: Vec<String> = survivors
        .iter()
        .map(|&(t, k)| {
            let (_, _, tag) = task_kind(&plan.tasks[t]);
            format!("{tag}{id_prefix:07}r{round:02}t{t:05}k{k:03}")
        })
        .collect();
    let latents: Vec<LatentVector> = survivors.iter().map(|&(t, k)| batches[t][k].latent.clone()).collect();
    let labels = oracle.classify(&ids, &latents)?;
    if labels.len() != ids.len() {
        return Err(Error::Oracle(format!(
            "{} labels for {} latents",
            labels.len(),
            ids.len()
        )));
    }

    let mut task_reports: Vec<TaskReport> = plan
        .tasks
        .iter()
        .enumerate()
        .map(|(t, task)| TaskReport {
            round,
            task: t,
            kind: task_kind(task).0.to_string(),
            phase: task.phase(),
            target: task.target(),
            parents: task.parent_ids().into_iter().map(str::to_string).collect(),
            generated: batches[t].len(),
            kept_after_dedup: 0,
            kept_after_classification: 0,
            discarded_mismatch: 0,
            discarded_marginal: 0,
            discarded_surplus: 0,
            kept: 0,
        })
        .collect();

    let mut kept = Vec::new();
    for (((t, k), id), l) in survivors.into_iter().zip(ids).zip(labels) {
        let task = &plan.tasks[t];
        let tr = &mut task_reports[t];
        tr.kept_after_dedup += 1;
        let age_group = dataset.age_bins.bin(l.age_years)?;
        let tier = thresholds.tier(l.quality_raw);
        let target = task.target();
        if age_group != target.age_group || tier != target.tier || !target.gender.accepts(l.gender) {
            tr.discarded_mismatch += 1;
            continue;
        }
        tr.kept_after_classification += 1;
        if tier == Tier::Top && l.quality_raw < thresholds.projected_top {
            tr.discarded_marginal += 1;
            continue;
        }
        let slot = remaining.entry((age_group, l.gender, tier)).or_insert(0);
        if *slot == 0 {
            tr.discarded_surplus += 1;
            continue;
        }
        *slot -= 1;
        tr.kept += 1;
        let cand = &batches[t][k];
        kept.push(FaceRecord {
            id,
            latent: cand.latent.clone(),
            gender: l.gender,
            age_years: l.age_years,
            age_group,
            quality_raw: l.quality_raw,
            quality_percentile: 0.0,
            provenance: task_kind(task).1,
            parents: task.parent_ids().into_iter().map(str::to_string).collect(),
            step: cand.step,
        });
    }
    report.tasks.extend(task_reports);
    Ok(kept)
}

/// Per-cell feedback from one round: the match rate of all its tasks sizes
/// the next round, and a cell is saturated once its line tasks lose more
/// than half of their samples to dedup or to landing outside the cell.
fn record_round(tasks: &[TaskReport], round: usize, history: &mut PlanHistory) {
    #[derive(Default)]
    struct Tally {
        generated: usize,
        matched: usize,
        line_generated: usize,
        line_matched: usize,
    }
    let mut by_cell: BTreeMap<(Tier, usize), Tally> = BTreeMap::new();
    for t in tasks.iter().filter(|t| t.round == round) {
        let e = by_cell.entry((t.target.tier, t.target.age_group)).or_default();
        e.generated += t.generated;
        let usable = t.kept_after_classification - t.discarded_marginal;
        e.matched += usable;
        if t.kind == "line" {
            e.line_generated += t.generated;
            e.line_matched += usable;
        }
    }
    for ((tier, g), tally) in by_cell {
        if tally.generated > 0 {
            history.record_yield(tier, g, tally.matched as f64 / tally.generated as f64);
        }
        if 2 * tally.line_matched < tally.line_generated {
            history.mark_saturated(tier, g);
        }
    }
}

fn replan(
    dataset: &Dataset,
    cfg: &PlannerConfig,
    targets: &Phase2Targets,
    history: &mut PlanHistory,
) -> Result<SamplingPlan> {
    let tiers = quality_tiers(dataset);
    let mut plan = phase1_plan_with(dataset, &tiers, cfg, history)?;
    let p2 = phase2_plan_with(dataset, &tiers, cfg, &plan, targets, history)?;
    plan.extend(p2);
    Ok(plan)
}

/// Executes `plan` against `dataset`, re-planning between rounds until no
/// deficit remains or `max_rounds` is spent.
///
/// Each round samples every task, drops near duplicates of the dataset and
/// of earlier samples, labels the survivors and keeps those that land in
/// their task's target cell, up to the cell's quota. Tier membership of a
/// new sample is judged against the tier boundaries at the start of the
/// round; boundaries are recomputed between rounds. Originals are never
/// modified. An oracle failure stops execution and is reported in
/// `report.aborted`.
pub fn execute_plan(
    plan: &SamplingPlan,
    dataset: &Dataset,
    oracle: &dyn Oracle,
    cfg: &ExecuteConfig,
) -> Result<Execution> {
    cfg.dedup.validate()?;
    plan.validate_against(dataset)?;
    let mut ds = dataset.clone();
    let mut report = ExecutionReport {
        before: overall_rows(dataset),
        flags: plan.flags.clone(),
        ..Default::default()
    };
    let targets = Phase2Targets::from_plan(dataset, &quality_tiers(dataset), plan);
    let mut history = PlanHistory::default();
    history.record_plan(plan);
    let id_prefix = dataset.len();

    let mut current = plan.clone();
    for round in 0..cfg.max_rounds {
        if current.is_empty() {
            break;
        }
        let kept = match run_round(&current, &ds, oracle, cfg, round, id_prefix, &mut report) {
            Ok(k) => k,
            Err(e @ Error::Oracle(_)) => {
                report.aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        ds.records.extend(kept);
        ds.refresh_quality_percentiles();
        report.rounds_executed = round + 1;
        record_round(&report.tasks, round, &mut history);

        current = match replan(&ds, &cfg.planner, &targets, &mut history) {
            Ok(p) => p,
            Err(e @ Error::UnfillableCell(_)) => {
                report.aborted = Some(e.to_string());
                SamplingPlan::default()
            }
            Err(e) => return Err(e),
        };
        for f in &current.flags {
            if !report.flags.contains(f) {
                report.flags.push(f.clone());
            }
        }
    }
    if report.aborted.is_none() {
        report.unmet = current.quotas.clone();
    }

    let t = &mut report.totals;
    for tr in &report.tasks {
        t.tasks += 1;
        t.generated += tr.generated;
        t.kept_after_dedup += tr.kept_after_dedup;
        t.kept_after_classification += tr.kept_after_classification;
        t.discarded_mismatch += tr.discarded_mismatch;
        t.discarded_marginal += tr.discarded_marginal;
        t.discarded_surplus += tr.discarded_surplus;
        t.kept += tr.kept;
    }
    report.after = overall_rows(&ds);
    Ok(Execution { dataset: ds, report })
}
