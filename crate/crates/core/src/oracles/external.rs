//! File-exchange protocol for out-of-process oracles.
//!
//! The caller writes a latent block and an ids file (one id per line), then
//! runs `<command> --latents <path> --ids <path> --out <path>`. The oracle
//! writes a comma-separated table with header `id,age_years,gender,quality_raw`,
//! one row per requested id in request order, and exits 0.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::{Oracle, OracleSpec};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_latent_block, write_latent_block};
use crate::model::{Gender, Labels, LatentVector};

pub const RESPONSE_HEADER: [&str; 4] = ["id", "age_years", "gender", "quality_raw"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalOracle {
    program: String,
    args: Vec<String>,
}

impl ExternalOracle {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    /// Splits a command line on whitespace; no shell quoting is applied.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidParameter("empty oracle command".into()))?;
        Ok(Self::new(program, parts.collect()))
    }
}

impl Oracle for ExternalOracle {
    fn classify(&self, ids: &[String], latents: &[LatentVector]) -> Result<Vec<Labels>> {
        if ids.len() != latents.len() {
            return Err(Error::InvalidParameter(format!(
                "{} ids for {} latents",
                ids.len(),
                latents.len()
            )));
        }
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let dir = tempfile::tempdir()?;
        let latents_path = dir.path().join("request.latb");
        let ids_path = dir.path().join("request.ids");
        let out_path = dir.path().join("response.csv");
        write_latent_block(&latents_path, latents[0].dim(), latents)?;
        write_ids(&ids_path, ids)?;

        let output = Command::new(&self.program)
            .args(&self.args)
            .arg("--latents")
            .arg(&latents_path)
            .arg("--ids")
            .arg(&ids_path)
            .arg("--out")
            .arg(&out_path)
            .output()
            .map_err(|e| Error::Oracle(format!("failed to start {}: {e}", self.program)))?;
        if !output.status.success() {
            return Err(Error::Oracle(format!(
                "{} exited with {}; stderr: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        read_response(&out_path, ids).map_err(|e| {
            Error::Oracle(format!(
                "{}: {e}; stderr: {}",
                self.program,
                String::from_utf8_lossy(&output.stderr).trim()
            ))
        })
    }
}

fn malformed(what: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        what,
        path: PathBuf::from(path),
        reason: reason.into(),
    }
}

pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = String::new();
    for id in ids {
        if id.is_empty() || id.contains(|c: char| c.is_whitespace() || c == ',') {
            return Err(Error::InvalidParameter(format!("id {id:?} is not protocol-safe")));
        }
        text.push_str(id);
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn write_response(path: &Path, ids: &[String], labels: &[Labels]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESPONSE_HEADER).map_err(csv_err(path))?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([
            id.clone(),
            l.age_years.to_string(),
            l.gender.to_string(),
            l.quality_raw.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| malformed("response table", path, e.to_string()))?;
    atomic_write(path, &bytes)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| malformed("response table", path, e.to_string())
}

/// Parses a response table and checks it answers exactly `expected_ids`,
/// in order.
pub fn read_response(path: &Path, expected_ids: &[String]) -> Result<Vec<Labels>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(RESPONSE_HEADER) {
        return Err(malformed(
            "response table",
            path,
            format!("unexpected header {header:?}"),
        ));
    }
    let mut out = Vec::with_capacity(expected_ids.len());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = row + 2;
        let Some(expected) = expected_ids.get(row) else {
            return Err(malformed("response table", path, format!("extra row at line {line}")));
        };
        if &rec[0] != expected {
            return Err(malformed(
                "response table",
                path,
                format!("line {line}: id {:?} does not match request id {expected:?}", &rec[0]),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed("response table", path, format!("line {line}: bad number {:?}", &rec[i])))
        };
        let gender: Gender = rec[2]
            .parse()
            .map_err(|_| malformed("response table", path, format!("line {line}: bad gender {:?}", &rec[2])))?;
        let age_years = num(1)?;
        if age_years < 0.0 {
            return Err(malformed("response table", path, format!("line {line}: negative age")));
        }
        out.push(Labels {
            age_years,
            gender,
            quality_raw: num(3)?,
        });
    }
    if out.len() != expected_ids.len() {
        return Err(malformed(
            "response table",
            path,
            format!("{} rows for {} requested ids", out.len(), expected_ids.len()),
        ));
    }
    Ok(out)
}

/// Answers one protocol request; the server side of the exchange. The
/// oracle is built for the width of the request's latent block.
pub fn serve_request(latents: &Path, ids: &Path, out: &Path, spec: &OracleSpec) -> Result<()> {
    let (dim, vectors) = read_latent_block(latents)?;
    let oracle = spec.build(dim.max(1))?;
    let ids = read_ids(ids)?;
    if ids.len() != vectors.len() {
        return Err(Error::InvalidParameter(format!(
            "{} ids for {} latents",
            ids.len(),
            vectors.len()
        )));
    }
    let labels = oracle.classify(&ids, &vectors)?;
    write_response(out, &ids, &labels)
}
