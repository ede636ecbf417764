//! Oracle contracts. An oracle maps latents to attribute labels and a raw
//! quality score. The synthetic oracle answers in-process; external oracles
//! are separate programs reached through a file-exchange protocol.

mod external;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{AgeBins, Dataset, FaceRecord, Labels, LatentVector};
use crate::rng;

pub use external::{
    read_ids, read_response, serve_request, write_ids, write_response, ExternalOracle, RESPONSE_HEADER,
};
pub use synthetic::{SyntheticOracle, SyntheticOracleConfig};

pub trait Oracle: Send + Sync {
    /// One label triple per latent, in input order. `ids` names each latent
    /// for oracles that need to echo them back.
    fn classify(&self, ids: &[String], latents: &[LatentVector]) -> Result<Vec<Labels>>;
}

/// Text form of an oracle choice, as stored in manifest headers and passed
/// on the command line: `synthetic:key=value,...` or `command:<program> [args]`.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    Synthetic(SyntheticOracleConfig),
    Command(String),
}

impl OracleSpec {
    pub fn build(&self, dim: usize) -> Result<Box<dyn Oracle>> {
        Ok(match self {
            OracleSpec::Synthetic(cfg) => Box::new(SyntheticOracle::new(dim, cfg.clone())?),
            OracleSpec::Command(cmd) => Box::new(ExternalOracle::from_command_line(cmd)?),
        })
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::Synthetic(cfg) => write!(f, "synthetic:{cfg}"),
            OracleSpec::Command(cmd) => write!(f, "command:{cmd}"),
        }
    }
}

impl FromStr for OracleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            return Ok(OracleSpec::Synthetic(SyntheticOracleConfig::default()));
        }
        if let Some(rest) = s.strip_prefix("synthetic:") {
            return Ok(OracleSpec::Synthetic(rest.parse()?));
        }
        if let Some(rest) = s.strip_prefix("command:") {
            if rest.trim().is_empty() {
                return Err(Error::InvalidParameter("empty oracle command".into()));
            }
            return Ok(OracleSpec::Command(rest.to_string()));
        }
        Err(Error::InvalidParameter(format!(
            "oracle must be `synthetic[:...]` or `command:...`, got {s:?}"
        )))
    }
}

/// Stream path for dataset latents, kept apart from task streams.
const DATASET_STREAM: u64 = 0xD47A;

/// Width of the zero-padded numeric part of original record ids.
const ORIGINAL_ID_WIDTH: usize = 7;

pub fn original_id(i: usize) -> String {
    format!("o{i:0ORIGINAL_ID_WIDTH$}")
}

/// Draws `n` latents from the standard normal prior and labels them.
///
/// Latents are quantized to `f32` before labeling so persisted datasets
/// reproduce their labels exactly.
pub fn generate_random_dataset(n: usize, dim: usize, seed: u64, oracle: &dyn Oracle, bins: AgeBins) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidParameter("n and dim must be >= 1".into()));
    }
    let mut rng = rng::stream(seed, &[DATASET_STREAM]);
    let latents: Vec<LatentVector> = (0..n)
        .map(|_| {
            let values: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            LatentVector::from_raw(values).quantized()
        })
        .collect();
    let ids: Vec<String> = (0..n).map(original_id).collect();
    let labels = oracle.classify(&ids, &latents)?;
    let mut dataset = Dataset::new(dim, bins);
    for ((id, latent), l) in ids.into_iter().zip(latents).zip(labels) {
        dataset
            .records
            .push(FaceRecord::original(id, latent, l, &dataset.age_bins)?);
    }
    dataset.refresh_quality_percentiles();
    Ok(dataset)
}

/// Re-labels every record with `oracle` and refreshes quality percentiles.
pub fn relabel(dataset: &mut Dataset, oracle: &dyn Oracle) -> Result<()> {
    let ids: Vec<String> = dataset.records.iter().map(|r| r.id.clone()).collect();
    let latents: Vec<LatentVector> = dataset.records.iter().map(|r| r.latent.clone()).collect();
    let labels = oracle.classify(&ids, &latents)?;
    let bins = dataset.age_bins.clone();
    for (r, l) in dataset.records.iter_mut().zip(labels) {
        r.apply_labels(l, &bins)?;
    }
    dataset.refresh_quality_percentiles();
    Ok(())
}
