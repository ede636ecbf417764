use super::*;
use crate::model::{AgeBins, FaceRecord, LatentVector};

const DIM: usize = 4;

/// One (tier, age group) block of records: `male` then `female` records.
#[derive(Clone, Copy)]
struct Block {
    tier: Tier,
    group: usize,
    male: usize,
    female: usize,
}

fn block(tier: Tier, group: usize, male: usize, female: usize) -> Block {
    Block {
        tier,
        group,
        male,
        female,
    }
}

/// Dataset with an explicit tier assignment. Age bins are [10, 25, 40], so
/// group g gets age `5 + 15 g`. Quality falls with insertion order, which
/// makes the first record of every gender list its best.
fn build(blocks: &[Block]) -> (Dataset, QualityTierPartition) {
    let mut ds = Dataset::new(DIM, AgeBins::new(vec![10.0, 25.0, 40.0]).unwrap());
    let mut tiers = Vec::new();
    let mut n = 0usize;
    for b in blocks {
        for (gender, count) in [(Gender::Male, b.male), (Gender::Female, b.female)] {
            for _ in 0..count {
                let mut v = vec![0.0; DIM];
                v[n % DIM] = 1.0 + n as f64;
                let labels = Labels {
                    age_years: 5.0 + 15.0 * b.group as f64,
                    gender,
                    quality_raw: 1.0 - n as f64 * 1e-3,
                };
                let rec = FaceRecord::original(format!("r{n:04}"), LatentVector::new(v).unwrap(), labels, &ds.age_bins)
                    .unwrap();
                ds.records.push(rec);
                tiers.push(b.tier);
                n += 1;
            }
        }
    }
    ds.refresh_quality_percentiles();
    (ds, QualityTierPartition::from_assignment(tiers))
}

use crate::model::Labels;

fn line_cfg() -> PlannerConfig {
    PlannerConfig::default()
}

fn sphere_cfg() -> PlannerConfig {
    PlannerConfig {
        strategy: Strategy::Sphere,
        ..Default::default()
    }
}

fn ids_of(ds: &Dataset, gender: Gender, group: usize, tier: Tier, tiers: &QualityTierPartition) -> Vec<String> {
    ds.records
        .iter()
        .enumerate()
        .filter(|(i, r)| r.gender == gender && r.age_group == group && tiers.tier_of(*i) == tier)
        .map(|(_, r)| r.id.clone())
        .collect()
}

#[test]
fn thirty_ten_cell_gets_one_female_line_task() {
    let (ds, tiers) = build(&[block(Tier::Top, 1, 30, 10)]);
    let plan = phase1_plan(&ds, &tiers, &line_cfg()).unwrap();
    assert_eq!(plan.tasks.len(), 1);
    assert_eq!(plan.quota_for(1, Gender::Female, Tier::Top), 20);
    let females = ids_of(&ds, Gender::Female, 1, Tier::Top, &tiers);
    match &plan.tasks[0] {
        SamplingTask::Line {
            parent_a,
            parent_b,
            n_steps,
            target,
            phase,
        } => {
            assert_eq!((parent_a, parent_b), (&females[0], &females[1]));
            assert_eq!(*n_steps, 37);
            assert_eq!(target.gender, GenderTarget::Female);
            assert_eq!((target.age_group, target.tier, *phase), (1, Tier::Top, 1));
        }
        other => panic!("expected a line task, got {other:?}"),
    }
}

#[test]
fn deficit_above_one_task_pairs_disjoint_neighbours() {
    // deficit 80 -> ceil(80 / 37) = 3 tasks.
    let (ds, tiers) = build(&[block(Tier::Middle, 2, 90, 10)]);
    let plan = phase1_plan(&ds, &tiers, &line_cfg()).unwrap();
    let f = ids_of(&ds, Gender::Female, 2, Tier::Middle, &tiers);
    let pairs: Vec<(String, String)> = plan
        .tasks
        .iter()
        .map(|t| {
            let p = t.parent_ids();
            (p[0].to_string(), p[1].to_string())
        })
        .collect();
    assert_eq!(
        pairs,
        vec![
            (f[0].clone(), f[1].clone()),
            (f[2].clone(), f[3].clone()),
            (f[4].clone(), f[5].clone())
        ]
    );
}

#[test]
fn sphere_phase1_seeds_cycle_by_quality() {
    let (ds, tiers) = build(&[block(Tier::Top, 0, 2, 80)]);
    // deficit 78 -> 3 tasks over 2 male seeds.
    let plan = phase1_plan(&ds, &tiers, &sphere_cfg()).unwrap();
    let m = ids_of(&ds, Gender::Male, 0, Tier::Top, &tiers);
    let seeds: Vec<&str> = plan.tasks.iter().map(|t| t.parent_ids()[0]).collect();
    assert_eq!(seeds, vec![m[0].as_str(), m[1].as_str(), m[0].as_str()]);
    assert!(plan
        .tasks
        .iter()
        .all(|t| matches!(t, SamplingTask::Sphere { variance, .. } if *variance == 0.1)));
}

#[test]
fn balanced_cells_give_empty_plan() {
    let (ds, tiers) = build(&[
        block(Tier::Top, 0, 3, 3),
        block(Tier::Top, 1, 7, 7),
        block(Tier::Middle, 2, 4, 4),
    ]);
    assert!(phase1_plan(&ds, &tiers, &line_cfg()).unwrap().is_empty());
}

#[test]
fn bottom_tier_is_ignored() {
    let (ds, tiers) = build(&[block(Tier::Bottom, 1, 50, 2), block(Tier::Top, 1, 5, 5)]);
    let plan = phase1_plan(&ds, &tiers, &line_cfg()).unwrap();
    assert!(plan.is_empty());
}

#[test]
fn empty_minority_falls_back_to_nearest_group() {
    let (ds, tiers) = build(&[
        block(Tier::Top, 1, 10, 0),
        block(Tier::Top, 3, 0, 2),
        block(Tier::Top, 2, 1, 1),
    ]);
    let plan = phase1_plan(&ds, &tiers, &line_cfg()).unwrap();
    let task = plan
        .tasks
        .iter()
        .find(|t| t.target().age_group == 1)
        .expect("task for group 1");
    let f2 = ids_of(&ds, Gender::Female, 2, Tier::Top, &tiers);
    assert!(matches!(task, SamplingTask::Sphere { seed_id, .. } if *seed_id == f2[0]));
    assert!(plan
        .flags
        .iter()
        .any(|f| f.kind == PlanFlagKind::SphereFallback && f.age_group == 1));
}

#[test]
fn no_minority_anywhere_is_unfillable() {
    let (ds, tiers) = build(&[block(Tier::Top, 1, 10, 0), block(Tier::Bottom, 1, 0, 5)]);
    let err = phase1_plan(&ds, &tiers, &line_cfg()).unwrap_err();
    assert!(matches!(err, Error::UnfillableCell(_)), "{err:?}");
}

#[test]
fn single_minority_record_gets_sphere_under_line() {
    let (ds, tiers) = build(&[block(Tier::Middle, 0, 4, 1)]);
    let plan = phase1_plan(&ds, &tiers, &line_cfg()).unwrap();
    assert_eq!(plan.tasks.len(), 1);
    assert!(matches!(plan.tasks[0], SamplingTask::Sphere { .. }));
    assert_eq!(plan.flags.len(), 1);
}

#[test]
fn invalid_config_is_rejected() {
    let (ds, tiers) = build(&[block(Tier::Top, 0, 2, 1)]);
    let zero = PlannerConfig {
        n_steps: 0,
        ..Default::default()
    };
    assert!(phase1_plan(&ds, &tiers, &zero).is_err());
    let neg = PlannerConfig {
        variance: -1.0,
        ..Default::default()
    };
    assert!(matches!(
        phase1_plan(&ds, &tiers, &neg),
        Err(Error::NonPositiveVariance(_))
    ));
}

fn group_quota(plan: &SamplingPlan, tier: Tier, group: usize) -> usize {
    plan.quotas
        .iter()
        .filter(|q| q.tier == tier && q.age_group == group)
        .map(|q| q.count)
        .sum()
}

#[test]
fn phase2_gaps_follow_tier_mean() {
    // Counts (10, 50, 30, 110), mean 50.
    let (ds, tiers) = build(&[
        block(Tier::Top, 0, 5, 5),
        block(Tier::Top, 1, 25, 25),
        block(Tier::Top, 2, 15, 15),
        block(Tier::Top, 3, 55, 55),
    ]);
    let p1 = phase1_plan(&ds, &tiers, &line_cfg()).unwrap();
    assert!(p1.is_empty());
    let targets = phase2_targets(&ds, &tiers, &p1);
    assert_eq!(targets.get(Tier::Top, 0), Some(50));
    assert_eq!(targets.get(Tier::Top, 2), Some(50));
    assert_eq!(targets.get(Tier::Top, 1), None);
    assert_eq!(targets.get(Tier::Top, 3), None);

    let p2 = phase2_plan(&ds, &tiers, &line_cfg(), &p1).unwrap();
    assert_eq!(group_quota(&p2, Tier::Top, 0), 40);
    assert_eq!(group_quota(&p2, Tier::Top, 2), 20);
    assert_eq!(group_quota(&p2, Tier::Top, 1) + group_quota(&p2, Tier::Top, 3), 0);
    assert_eq!(p2.quota_for(0, Gender::Male, Tier::Top), 20);
    assert_eq!(p2.quota_for(0, Gender::Female, Tier::Top), 20);

    let tasks_for = |g: usize| p2.tasks.iter().filter(|t| t.target().age_group == g).count();
    assert_eq!(tasks_for(0), 2);
    assert_eq!(tasks_for(2), 1);
    // Line pairs are one male and one female of the group.
    for t in &p2.tasks {
        let p = t.parent_ids();
        let g = |id: &str| ds.records[ds.index_by_id()[id]].gender;
        assert_ne!(g(p[0]), g(p[1]));
        assert_eq!(t.target().gender, GenderTarget::Both);
    }
}

#[test]
fn phase2_equal_groups_is_empty() {
    let (ds, tiers) = build(&[
        block(Tier::Middle, 0, 50, 50),
        block(Tier::Middle, 1, 50, 50),
        block(Tier::Middle, 2, 50, 50),
        block(Tier::Middle, 3, 50, 50),
    ]);
    let plan = balance_plan_with_tiers(&ds, &tiers);
    assert!(plan.is_empty());
}

fn balance_plan_with_tiers(ds: &Dataset, tiers: &QualityTierPartition) -> SamplingPlan {
    let mut plan = phase1_plan(ds, tiers, &line_cfg()).unwrap();
    let p2 = phase2_plan(ds, tiers, &line_cfg(), &plan).unwrap();
    plan.extend(p2);
    plan
}

#[test]
fn phase2_gap_closes_gender_difference_first() {
    // Group 0 projects to 3 M / 5 F after phase 1 (no phase-1 work in the
    // cell would be wrong here, so the cell is made of the projection
    // directly): gap 7 -> 2 to male, then 5 split 2/2 with the odd one to
    // female: male 4, female 3.
    let (ds, tiers) = build(&[
        block(Tier::Top, 0, 3, 3),
        block(Tier::Top, 1, 10, 10),
        block(Tier::Top, 2, 10, 10),
        block(Tier::Top, 3, 10, 10),
    ]);
    let mut p1 = SamplingPlan::default();
    p1.quotas.push(CellQuota {
        age_group: 0,
        gender: Gender::Female,
        tier: Tier::Top,
        count: 2,
        phase: 1,
    });
    // Sizes 8, 20, 20, 20 -> mean 17 -> target 8 + 9 = 17, gap 9:
    // 2 closes the difference, the remaining 7 goes 3 / 3 + 1.
    let p2 = phase2_plan(&ds, &tiers, &line_cfg(), &p1).unwrap();
    assert_eq!(p2.quota_for(0, Gender::Male, Tier::Top), 2 + 3);
    assert_eq!(p2.quota_for(0, Gender::Female, Tier::Top), 3 + 1);
}

#[test]
fn phase2_single_gender_group_seeds_that_gender() {
    let (ds, tiers) = build(&[
        block(Tier::Top, 0, 4, 0),
        block(Tier::Top, 1, 50, 50),
        block(Tier::Top, 2, 50, 50),
        block(Tier::Top, 3, 50, 50),
    ]);
    let p1 = SamplingPlan::default();
    let p2 = phase2_plan(&ds, &tiers, &line_cfg(), &p1).unwrap();
    let g0: Vec<&SamplingTask> = p2.tasks.iter().filter(|t| t.target().age_group == 0).collect();
    assert!(!g0.is_empty());
    let males = ids_of(&ds, Gender::Male, 0, Tier::Top, &tiers);
    for t in g0 {
        match t {
            SamplingTask::Sphere { seed_id, .. } => assert!(males.contains(seed_id)),
            other => panic!("expected sphere fallback, got {other:?}"),
        }
    }
    assert!(p2
        .flags
        .iter()
        .any(|f| f.kind == PlanFlagKind::SingleGenderGroup && f.age_group == 0));
}

#[test]
fn phase2_empty_group_is_flagged_and_skipped() {
    let (ds, tiers) = build(&[block(Tier::Top, 1, 5, 5), block(Tier::Top, 2, 5, 5)]);
    let p2 = phase2_plan(&ds, &tiers, &line_cfg(), &SamplingPlan::default()).unwrap();
    assert!(p2.tasks.is_empty());
    let flagged: Vec<usize> = p2
        .flags
        .iter()
        .filter(|f| f.kind == PlanFlagKind::EmptyAgeGroup)
        .map(|f| f.age_group)
        .collect();
    assert_eq!(flagged, vec![0, 3]);
}

#[test]
fn sphere_phase2_alternates_genders() {
    let (ds, tiers) = build(&[block(Tier::Middle, 0, 3, 3), block(Tier::Middle, 1, 100, 100)]);
    let p2 = phase2_plan(&ds, &tiers, &sphere_cfg(), &SamplingPlan::default()).unwrap();
    let genders: Vec<Gender> = p2
        .tasks
        .iter()
        .map(|t| ds.records[ds.index_by_id()[t.parent_ids()[0]]].gender)
        .collect();
    assert!(genders.len() >= 2);
    for (k, g) in genders.iter().enumerate() {
        assert_eq!(*g, if k % 2 == 0 { Gender::Male } else { Gender::Female });
    }
}

#[test]
fn ranked_pairs_put_disjoint_neighbours_first() {
    let p = ranked_pairs(5);
    assert_eq!(&p[..2], &[(0, 1), (2, 3)]);
    assert_eq!(&p[2..4], &[(1, 2), (3, 4)]);
    assert_eq!(p.len(), 10);
    let mut sorted = p.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 10);
}

#[test]
fn cross_pairs_start_on_diagonal() {
    assert_eq!(cross_pairs(2, 3), vec![(0, 0), (1, 1), (0, 1), (1, 0), (0, 2), (1, 2)]);
}

#[test]
fn pick_pairs_prefers_fresh_then_cycles() {
    let cands: Vec<(String, String)> = vec![("a".into(), "b".into()), ("c".into(), "d".into())];
    let mut h = PlanHistory::default();
    h.insert("b", "a");
    let got = pick_pairs(&cands, 3, &mut h);
    assert_eq!(got[0], ("c".to_string(), "d".to_string()));
    assert_eq!(got.len(), 3);
    assert!(h.contains("a", "b") && h.contains("d", "c"));
    assert!(pick_pairs(&[], 2, &mut h).is_empty());
}

#[test]
fn collinear_pairs_are_detected() {
    let (mut ds, _) = build(&[block(Tier::Top, 0, 0, 3)]);
    let line = |id: &str, parents: [&str; 2]| {
        let mut r = ds.records[0].clone();
        r.id = id.into();
        r.provenance = Provenance::Line;
        r.parents = parents.iter().map(|s| s.to_string()).collect();
        r.step = Some(0.5);
        r
    };
    let a = line("L1", ["r0000", "r0001"]);
    let b = line("L2", ["r0001", "r0000"]);
    let c = line("L3", ["r0000", "r0002"]);
    ds.records.extend([a, b, c]);
    // Same segment, either parent order.
    assert!(collinear(&ds, 3, 4));
    // A point and its own endpoint.
    assert!(collinear(&ds, 0, 3));
    assert!(collinear(&ds, 4, 1));
    // Different segments through a shared endpoint span a plane.
    assert!(!collinear(&ds, 3, 5));
    assert!(!collinear(&ds, 1, 5));
    assert!(!collinear(&ds, 0, 1));
}

#[test]
fn task_count_scales_with_observed_yield() {
    let mut h = PlanHistory::default();
    assert_eq!(h.tasks_for(20, 37, Tier::Top, 0), 1);
    h.record_yield(Tier::Top, 0, 0.5);
    assert_eq!(h.tasks_for(20, 37, Tier::Top, 0), 2);
    h.record_yield(Tier::Top, 0, 0.0);
    assert_eq!(h.expected_yield(Tier::Top, 0), MIN_YIELD);
    assert_eq!(h.tasks_for(37, 37, Tier::Top, 0), 10);
    assert_eq!(h.tasks_for(0, 37, Tier::Top, 0), 0);
}

#[test]
fn saturated_cell_switches_line_to_sphere() {
    let (ds, tiers) = build(&[block(Tier::Top, 1, 30, 10)]);
    let mut h = PlanHistory::default();
    h.mark_saturated(Tier::Top, 1);
    let plan = phase1_plan_with(&ds, &tiers, &line_cfg(), &mut h).unwrap();
    assert!(plan.tasks.iter().all(|t| matches!(t, SamplingTask::Sphere { .. })));
    assert!(plan.flags.iter().any(|f| f.kind == PlanFlagKind::SphereFallback));
    // Other cells keep the line strategy.
    let (ds2, tiers2) = build(&[block(Tier::Top, 2, 30, 10)]);
    let plan2 = phase1_plan_with(&ds2, &tiers2, &line_cfg(), &mut h).unwrap();
    assert!(plan2.tasks.iter().all(|t| matches!(t, SamplingTask::Line { .. })));
}

#[test]
fn originals_rank_before_generated_records() {
    let (mut ds, _) = build(&[block(Tier::Top, 0, 0, 2)]);
    let mut generated = ds.records[0].clone();
    generated.id = "S1".into();
    generated.quality_raw = 10.0;
    generated.provenance = Provenance::Sphere;
    generated.parents = vec!["r0000".into()];
    ds.records.push(generated);
    let tiers = QualityTierPartition::from_assignment(vec![Tier::Top; 3]);
    let c = cells(&ds, &tiers);
    assert_eq!(c[&(Tier::Top, 0)].female, vec![0, 1, 2]);
    let pairs = same_gender_pairs(&ds, &c[&(Tier::Top, 0)].female);
    assert_eq!(pairs[0], (0, 1));
    assert_eq!(&pairs[1..], &[(0, 2), (1, 2)]);
}

#[test]
fn balance_plan_on_real_tiers_validates() {
    use crate::oracles::{generate_random_dataset, SyntheticOracle, SyntheticOracleConfig};
    let oracle = SyntheticOracle::new(16, SyntheticOracleConfig::default()).unwrap();
    let ds = generate_random_dataset(400, 16, 9, &oracle, SyntheticOracleConfig::age_bins()).unwrap();
    for cfg in [line_cfg(), sphere_cfg()] {
        let plan = balance_plan(&ds, &cfg).unwrap();
        plan.validate_against(&ds).unwrap();
        assert!(!plan.is_empty());
        // Bottom-tier records never appear as parents.
        let tiers = quality_tiers(&ds);
        let index = ds.index_by_id();
        for t in &plan.tasks {
            for p in t.parent_ids() {
                assert_ne!(tiers.tier_of(index[p]), Tier::Bottom);
            }
        }
    }
}
