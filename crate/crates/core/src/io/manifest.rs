//! Manifest: a text table of records with a `#key=value` header, paired
//! with a latent block holding one row per record.
//!
//! ```text
//! #facebias-manifest=1
//! #dim=512
//! #seed=42
//! #age_edges=10,25,40
//! #oracle=synthetic:seed=42,beta=0.5,...
//! #latents=dataset.latb
//! id,latent_row,gender,age_years,age_group,quality_raw,quality_percentile,provenance,parents,step
//! o0000000,0,male,23.5,1,0.61,0.87,original,,
//! ```
//!
//! Floats are written in shortest round-trip form, so write then read is
//! lossless.

use std::fs;
use std::path::{Path, PathBuf};

use super::{atomic_write, read_latent_block, write_latent_block};
use crate::error::{Error, Result};
use crate::model::{AgeBins, Dataset, FaceRecord, LatentVector};
use crate::oracles::OracleSpec;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_COLUMNS: [&str; 10] = [
    "id",
    "latent_row",
    "gender",
    "age_years",
    "age_group",
    "quality_raw",
    "quality_percentile",
    "provenance",
    "parents",
    "step",
];
const VERSION_KEY: &str = "facebias-manifest";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestHeader {
    pub version: u32,
    pub dim: usize,
    pub seed: u64,
    pub age_edges: Vec<f64>,
    pub oracle: Option<OracleSpec>,
    /// Latent block file name, relative to the manifest's directory.
    pub latents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub oracle: Option<OracleSpec>,
    pub dataset: Dataset,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        what: "manifest",
        path: PathBuf::from(path),
        reason: reason.into(),
    }
}

fn latents_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    format!("{stem}.latb")
}

fn join_edges(edges: &[f64]) -> String {
    edges.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Writes `<path>` and its latent block `<stem>.latb` beside it. Latents are
/// stored as `f32`; records built by this crate are already quantized, so
/// the round trip is lossless for them.
pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let ds = &manifest.dataset;
    let latents_file = latents_name(path);
    let mut text = String::new();
    text.push_str(&format!("#{VERSION_KEY}={MANIFEST_VERSION}\n"));
    text.push_str(&format!("#dim={}\n", ds.dim));
    text.push_str(&format!("#seed={}\n", manifest.seed));
    text.push_str(&format!("#age_edges={}\n", join_edges(ds.age_bins.edges())));
    if let Some(oracle) = &manifest.oracle {
        text.push_str(&format!("#oracle={oracle}\n"));
    }
    text.push_str(&format!("#latents={latents_file}\n"));

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| malformed(path, e.to_string());
    w.write_record(MANIFEST_COLUMNS).map_err(csv_err)?;
    for (row, r) in ds.records.iter().enumerate() {
        if r.parents.iter().any(|p| p.contains(';')) {
            return Err(malformed(path, format!("parent id of {} contains ';'", r.id)));
        }
        w.write_record([
            r.id.clone(),
            row.to_string(),
            r.gender.to_string(),
            r.age_years.to_string(),
            r.age_group.to_string(),
            r.quality_raw.to_string(),
            r.quality_percentile.to_string(),
            r.provenance.to_string(),
            r.parents.join(";"),
            r.step.map(|c| c.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let table = w.into_inner().map_err(|e| malformed(path, e.to_string()))?;
    text.push_str(std::str::from_utf8(&table).expect("csv output is utf-8"));

    let latents: Vec<LatentVector> = ds.records.iter().map(|r| r.latent.clone()).collect();
    let dir = path.parent().unwrap_or(Path::new(""));
    write_latent_block(&dir.join(&latents_file), ds.dim, &latents)?;
    atomic_write(path, text.as_bytes())
}

fn parse_header(path: &Path, lines: &[&str]) -> Result<ManifestHeader> {
    let mut version = None;
    let mut dim = None;
    let mut seed = 0;
    let mut age_edges = None;
    let mut oracle = None;
    let mut latents = None;
    for line in lines {
        let body = line.trim_start_matches('#');
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| malformed(path, format!("header line {line:?} is not key=value")))?;
        let num_err = |_| malformed(path, format!("bad value for {k}: {v:?}"));
        match k {
            VERSION_KEY => version = Some(v.to_string()),
            "dim" => dim = Some(v.parse::<usize>().map_err(|e| num_err(e.to_string()))?),
            "seed" => seed = v.parse::<u64>().map_err(|e| num_err(e.to_string()))?,
            "age_edges" => {
                age_edges = Some(
                    v.split(',')
                        .map(|e| e.parse::<f64>().map_err(|e| num_err(e.to_string())))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "oracle" => oracle = Some(v.parse::<OracleSpec>()?),
            "latents" => latents = Some(v.to_string()),
            _ => {}
        }
    }
    let version = version.ok_or_else(|| malformed(path, "missing format version line"))?;
    if version != MANIFEST_VERSION.to_string() {
        return Err(Error::SchemaVersion(version));
    }
    Ok(ManifestHeader {
        version: MANIFEST_VERSION,
        dim: dim.ok_or_else(|| malformed(path, "missing dim"))?,
        seed,
        age_edges: age_edges.ok_or_else(|| malformed(path, "missing age_edges"))?,
        oracle,
        latents: latents.ok_or_else(|| malformed(path, "missing latents"))?,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let header_lines: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    let header = parse_header(path, &header_lines)?;
    let body_start: usize = header_lines.iter().map(|l| l.len() + 1).sum();
    let body = text.get(body_start..).unwrap_or("");

    let dir = path.parent().unwrap_or(Path::new(""));
    let (block_dim, latents) = read_latent_block(&dir.join(&header.latents))?;
    if block_dim != header.dim {
        return Err(Error::DimMismatch {
            expected: header.dim,
            got: block_dim,
        });
    }
    let age_bins = AgeBins::new(header.age_edges.clone())?;

    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let csv_err = |e: csv::Error| malformed(path, e.to_string());
    let cols = reader.headers().map_err(csv_err)?.clone();
    if cols.iter().ne(MANIFEST_COLUMNS) {
        return Err(malformed(path, format!("unexpected columns {cols:?}")));
    }
    let mut latent_slots: Vec<Option<LatentVector>> = latents.into_iter().map(Some).collect();
    let mut records = Vec::with_capacity(latent_slots.len());
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = i + 1;
        let bad = |field: &str| malformed(path, format!("record {line}: bad {field}"));
        let latent_row: usize = row[1].parse().map_err(|_| bad("latent_row"))?;
        let latent = latent_slots.get_mut(latent_row).and_then(Option::take).ok_or_else(|| {
            malformed(
                path,
                format!("record {line}: latent row {latent_row} missing or reused"),
            )
        })?;
        let parents = if row[8].is_empty() {
            Vec::new()
        } else {
            row[8].split(';').map(str::to_string).collect()
        };
        let step = if row[9].is_empty() {
            None
        } else {
            Some(row[9].parse::<f64>().map_err(|_| bad("step"))?)
        };
        records.push(FaceRecord {
            id: row[0].to_string(),
            latent,
            gender: row[2].parse().map_err(|_| bad("gender"))?,
            age_years: row[3].parse().map_err(|_| bad("age_years"))?,
            age_group: row[4].parse().map_err(|_| bad("age_group"))?,
            quality_raw: row[5].parse().map_err(|_| bad("quality_raw"))?,
            quality_percentile: row[6].parse().map_err(|_| bad("quality_percentile"))?,
            provenance: row[7].parse().map_err(|_| bad("provenance"))?,
            parents,
            step,
        });
    }
    if latent_slots.iter().any(Option::is_some) {
        return Err(malformed(path, "latent block has rows not referenced by any record"));
    }
    Ok(Manifest {
        seed: header.seed,
        oracle: header.oracle,
        dataset: Dataset {
            dim: header.dim,
            age_bins,
            records,
        },
    })
}
