use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use facebias_core::io::report::{
    metrics_csv, metrics_rows, metrics_text, report_summary, tier_distribution_csv, tier_stddev_csv,
};
use facebias_core::io::{atomic_write, read_manifest, write_manifest, Manifest};
use facebias_core::metrics::{quality_tiers, tier_report, Attribute};
use facebias_core::model::{AgeBins, Dataset, Provenance, SamplingPlan};
use facebias_core::oracles::{generate_random_dataset, relabel, serve_request, OracleSpec, SyntheticOracleConfig};
use facebias_core::planner::{balance_plan, execute_plan, ExecuteConfig, PlannerConfig, Strategy};
use facebias_core::samplers::{DedupParams, DEFAULT_STEPS, DEFAULT_VARIANCE};

#[derive(Parser, Debug)]
#[command(
    name = "facebias",
    version,
    about = "Measure and rebalance gender/age bias in generated-face datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random dataset and label it with the synthetic oracle.
    SynthGen {
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Quality bonus for the favored gender.
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Age bin edges; defaults to the synthetic oracle's age range.
        #[arg(long, value_delimiter = ',')]
        age_edges: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute labels of every record with an oracle.
    Classify {
        #[arg(long)]
        manifest: PathBuf,
        /// `synthetic[:key=value,...]` or `command:<program> [args]`.
        #[arg(long)]
        oracle: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Imbalance metrics of one or both attributes.
    Metrics {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        attribute: Option<Attribute>,
        #[arg(long)]
        by_tier: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Build the two-phase balancing plan.
    Plan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "line")]
        strategy: Strategy,
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = DEFAULT_VARIANCE)]
        variance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a plan and write the merged manifest plus a run report.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        max_rounds: usize,
        /// Overrides the oracle recorded in the manifest header.
        #[arg(long)]
        oracle: Option<String>,
        #[arg(long, default_value_t = DedupParams::default().near_delta)]
        dedup_radius: f64,
        #[arg(long)]
        out: PathBuf,
        /// Run report path; defaults to `<out stem>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-tier distribution tables and a before/after summary.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Answer one external-oracle request with the synthetic oracle.
    #[command(hide = true)]
    OracleServe {
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "synthetic")]
        oracle: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

/// On-disk plan: the plan itself plus the settings used to re-plan.
#[derive(Debug, Serialize, Deserialize)]
struct PlanFile {
    planner: PlannerConfig,
    plan: SamplingPlan,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path) -> Result<Manifest> {
    read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

/// Refuses to overwrite an input file.
fn ensure_new(out: &Path, inputs: &[&Path]) -> Result<()> {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    if let Some(o) = canon(out) {
        for i in inputs {
            if canon(i).as_deref() == Some(o.as_path()) {
                bail!("output {} would overwrite an input", out.display());
            }
        }
    }
    Ok(())
}

fn parse_oracle(s: &str) -> Result<OracleSpec> {
    s.parse::<OracleSpec>().with_context(|| format!("parsing oracle {s:?}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::SynthGen {
            n,
            dim,
            seed,
            beta,
            age_edges,
            out,
        } => {
            let cfg = SyntheticOracleConfig {
                seed,
                beta,
                ..Default::default()
            };
            let bins = match age_edges {
                Some(edges) => AgeBins::new(edges)?,
                None => SyntheticOracleConfig::age_bins(),
            };
            let spec = OracleSpec::Synthetic(cfg);
            let oracle = spec.build(dim)?;
            let dataset = generate_random_dataset(n, dim, seed, oracle.as_ref(), bins)?;
            write_manifest(
                &out,
                &Manifest {
                    seed,
                    oracle: Some(spec),
                    dataset,
                },
            )?;
            eprintln!("wrote {n} records to {}", out.display());
        }
        Command::Classify { manifest, oracle, out } => {
            ensure_new(&out, &[&manifest])?;
            let mut m = load(&manifest)?;
            let spec = parse_oracle(&oracle)?;
            let o = spec.build(m.dataset.dim)?;
            relabel(&mut m.dataset, o.as_ref())?;
            m.oracle = Some(spec);
            write_manifest(&out, &m)?;
            eprintln!("relabelled {} records into {}", m.dataset.len(), out.display());
        }
        Command::Metrics {
            manifest,
            attribute,
            by_tier,
            format,
        } => {
            let m = load(&manifest)?;
            let attrs = match attribute {
                Some(a) => vec![a],
                None => vec![Attribute::Gender, Attribute::AgeGroup],
            };
            let rows = metrics_rows(&m.dataset, &attrs, by_tier)?;
            match format {
                Format::Text => print!("{}", metrics_text(&rows)),
                Format::Csv => print!("{}", metrics_csv(&rows)),
                Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
            }
        }
        Command::Plan {
            manifest,
            strategy,
            steps,
            variance,
            out,
        } => {
            ensure_new(&out, &[&manifest])?;
            let m = load(&manifest)?;
            let planner = PlannerConfig {
                strategy,
                n_steps: steps,
                variance,
            };
            let plan = balance_plan(&m.dataset, &planner)?;
            let total: usize = plan.quotas.iter().map(|q| q.count).sum();
            eprintln!(
                "{} tasks, {} samples requested, {} flags",
                plan.tasks.len(),
                total,
                plan.flags.len()
            );
            write_json(&out, &PlanFile { planner, plan })?;
        }
        Command::Sample {
            manifest,
            plan,
            seed,
            max_rounds,
            oracle,
            dedup_radius,
            out,
            report,
        } => {
            ensure_new(&out, &[&manifest, &plan])?;
            let m = load(&manifest)?;
            let plan_text = fs::read_to_string(&plan).with_context(|| format!("reading plan {}", plan.display()))?;
            let plan_file: PlanFile =
                serde_json::from_str(&plan_text).with_context(|| format!("parsing plan {}", plan.display()))?;
            let spec = match oracle.as_deref() {
                Some(s) => parse_oracle(s)?,
                None => m.oracle.clone().context("manifest names no oracle; pass --oracle")?,
            };
            let o = spec.build(m.dataset.dim)?;
            let cfg = ExecuteConfig {
                master_seed: seed,
                max_rounds,
                dedup: DedupParams {
                    near_delta: dedup_radius,
                    ..Default::default()
                },
                planner: plan_file.planner,
            };
            let ex = execute_plan(&plan_file.plan, &m.dataset, o.as_ref(), &cfg)?;
            let report_path = report.unwrap_or_else(|| sibling(&out, "report.json"));
            write_manifest(
                &out,
                &Manifest {
                    seed,
                    oracle: Some(spec),
                    dataset: ex.dataset,
                },
            )?;
            write_json(&report_path, &ex.report)?;
            let t = &ex.report.totals;
            eprintln!(
                "{} rounds: generated {}, kept {} ({} near duplicates, {} mismatched, {} marginal, {} surplus)",
                ex.report.rounds_executed,
                t.generated,
                t.kept,
                t.generated - t.kept_after_dedup,
                t.discarded_mismatch,
                t.discarded_marginal,
                t.discarded_surplus
            );
            let unmet: usize = ex.report.unmet.iter().map(|q| q.count).sum();
            if unmet > 0 {
                eprintln!("warning: {unmet} requested samples unmet after {max_rounds} rounds");
            }
            if let Some(reason) = &ex.report.aborted {
                eprintln!("error: execution aborted: {reason}; partial results written");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { manifest, out_dir } => {
            let m = load(&manifest)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let ds = &m.dataset;
            let mut originals: Dataset = ds.clone();
            originals.records.retain(|r| r.provenance == Provenance::Original);
            let attrs = [Attribute::Gender, Attribute::AgeGroup];
            let tables = [
                ("metrics_after.csv", metrics_csv(&metrics_rows(ds, &attrs, true)?)),
                (
                    "metrics_before.csv",
                    metrics_csv(&metrics_rows(&originals, &attrs, true)?),
                ),
                (
                    "tiers_after.csv",
                    tier_distribution_csv(&tier_report(ds, &quality_tiers(ds))),
                ),
                (
                    "tiers_before.csv",
                    tier_distribution_csv(&tier_report(&originals, &quality_tiers(&originals))),
                ),
                (
                    "stddev_after.csv",
                    tier_stddev_csv(&tier_report(ds, &quality_tiers(ds))),
                ),
                (
                    "stddev_before.csv",
                    tier_stddev_csv(&tier_report(&originals, &quality_tiers(&originals))),
                ),
            ];
            for (name, body) in tables {
                let path = out_dir.join(name);
                atomic_write(&path, body.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
            }
            write_json(&out_dir.join("summary.json"), &report_summary(ds)?)?;
            eprintln!("wrote report for {} records to {}", ds.len(), out_dir.display());
        }
        Command::OracleServe {
            latents,
            ids,
            out,
            oracle,
        } => {
            let spec = parse_oracle(&oracle)?;
            if matches!(spec, OracleSpec::Command(_)) {
                bail!("oracle-serve only serves built-in oracles");
            }
            serve_request(&latents, &ids, &out, &spec)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// `<dir>/<stem>.<suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}
