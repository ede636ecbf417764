use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::Oracle;
use crate::error::{Error, Result};
use crate::model::{AgeBins, Gender, Labels, LatentVector};
use crate::rng;

/// Parameters of the deterministic linear oracle.
///
/// With unit directions `u_g`, `u_a`, `u_q` drawn from `seed`:
///
/// * gender is male iff `<u_g, z> + gender_offset > 0`
/// * `age_years = 50 * logistic(age_scale * <u_a, z>)`
/// * `quality_raw = logistic(<u_q, z> + beta * [gender == favored])`
///
/// Under the standard normal prior the projections are `N(0, 1)`, so
/// `gender_offset` sets the male share to `Phi(gender_offset)` and a
/// positive `beta` concentrates the favored gender in the high-quality
/// tiers.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracleConfig {
    pub seed: u64,
    pub beta: f64,
    pub gender_offset: f64,
    pub age_scale: f64,
    pub favored: Gender,
}

impl Default for SyntheticOracleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            beta: 0.5,
            gender_offset: 0.6,
            age_scale: 0.7,
            favored: Gender::Male,
        }
    }
}

impl SyntheticOracleConfig {
    /// Bin edges matched to the oracle's (0, 50) age range: four groups,
    /// symmetric about the midpoint, with the outer two rare.
    pub fn age_bins() -> AgeBins {
        AgeBins::new(vec![10.0, 25.0, 40.0]).expect("static edges")
    }
}

impl fmt::Display for SyntheticOracleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={},beta={},gender_offset={},age_scale={},favored={}",
            self.seed, self.beta, self.gender_offset, self.age_scale, self.favored
        )
    }
}

impl FromStr for SyntheticOracleConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = SyntheticOracleConfig::default();
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got {part:?}")))?;
            let bad = |_| Error::InvalidParameter(format!("bad value for {k}: {v:?}"));
            match k {
                "seed" => cfg.seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "beta" => cfg.beta = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "gender_offset" => {
                    cfg.gender_offset = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
                }
                "age_scale" => cfg.age_scale = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "favored" => cfg.favored = v.parse()?,
                _ => return Err(Error::InvalidParameter(format!("unknown synthetic oracle key {k:?}"))),
            }
        }
        Ok(cfg)
    }
}

/// Linear decision surfaces in latent space; fully deterministic.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    config: SyntheticOracleConfig,
    w_gender: Vec<f64>,
    w_age: Vec<f64>,
    w_quality: Vec<f64>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn unit_direction(seed: u64, stream: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[stream]);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

impl SyntheticOracle {
    pub fn new(dim: usize, config: SyntheticOracleConfig) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be >= 1".into()));
        }
        if ![config.beta, config.gender_offset, config.age_scale]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidParameter(
                "synthetic oracle parameters must be finite".into(),
            ));
        }
        let w_gender = unit_direction(config.seed, 1, dim);
        let w_age = unit_direction(config.seed, 2, dim)
            .into_iter()
            .map(|x| x * config.age_scale)
            .collect();
        let w_quality = unit_direction(config.seed, 3, dim);
        Ok(Self {
            config,
            w_gender,
            w_age,
            w_quality,
        })
    }

    pub fn config(&self) -> &SyntheticOracleConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.w_gender.len()
    }

    pub fn gender_direction(&self) -> &[f64] {
        &self.w_gender
    }

    pub fn age_direction(&self) -> &[f64] {
        &self.w_age
    }

    pub fn quality_direction(&self) -> &[f64] {
        &self.w_quality
    }

    /// Signed gender margin; positive means male.
    pub fn gender_margin(&self, z: &LatentVector) -> f64 {
        z.dot(&self.w_gender) + self.config.gender_offset
    }

    pub fn label(&self, z: &LatentVector) -> Result<Labels> {
        if z.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: z.dim(),
            });
        }
        let gender = if self.gender_margin(z) > 0.0 {
            Gender::Male
        } else {
            Gender::Female
        };
        let age_years = 50.0 * logistic(z.dot(&self.w_age));
        let bonus = if gender == self.config.favored {
            self.config.beta
        } else {
            0.0
        };
        let quality_raw = logistic(z.dot(&self.w_quality) + bonus);
        Ok(Labels {
            age_years,
            gender,
            quality_raw,
        })
    }
}

impl Oracle for SyntheticOracle {
    fn classify(&self, _ids: &[String], latents: &[LatentVector]) -> Result<Vec<Labels>> {
        latents.par_iter().map(|z| self.label(z)).collect()
    }
}
