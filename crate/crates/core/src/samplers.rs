//! Latent-space samplers and duplicate filtering.
//!
//! Line sampling walks the segment `z_start + c * (z_end - z_start)` at
//! evenly spaced interior steps `c_i = i / (n + 1)`. Sphere sampling draws
//! from an isotropic normal `N(z_seed, sigma^2 I)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LatentVector;
use crate::rng;

/// Default sphere variance.
pub const DEFAULT_VARIANCE: f64 = 0.1;
/// Default number of samples per line or sphere.
pub const DEFAULT_STEPS: usize = 37;

#[derive(Debug, Clone, PartialEq)]
pub struct LineSegment {
    start: LatentVector,
    end: LatentVector,
    direction: Vec<f64>,
}

impl LineSegment {
    pub fn new(start: LatentVector, end: LatentVector) -> Result<Self> {
        end.check_dim(start.dim())?;
        let direction = end
            .as_slice()
            .iter()
            .zip(start.as_slice())
            .map(|(e, s)| e - s)
            .collect();
        Ok(Self { start, end, direction })
    }

    pub fn start(&self) -> &LatentVector {
        &self.start
    }

    pub fn end(&self) -> &LatentVector {
        &self.end
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn is_degenerate(&self) -> bool {
        self.direction.iter().all(|&v| v == 0.0)
    }

    /// The point at step `c`; `c = 0` and `c = 1` return the endpoints
    /// bit-for-bit.
    pub fn point_at(&self, c: f64) -> LatentVector {
        if c == 1.0 {
            return self.end.clone();
        }
        LatentVector::from_raw(
            self.start
                .as_slice()
                .iter()
                .zip(&self.direction)
                .map(|(s, v)| s + v * c)
                .collect(),
        )
    }
}

/// Interior step values `i / (n + 1)` for `i = 1..=n`.
pub fn line_steps(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

/// `n` points strictly between the endpoints, ascending in step, paired
/// with their step values.
pub fn line_sample(segment: &LineSegment, n: usize) -> Result<Vec<(f64, LatentVector)>> {
    if n == 0 {
        return Err(Error::InvalidParameter("line sample count must be >= 1".into()));
    }
    Ok(line_steps(n).into_iter().map(|c| (c, segment.point_at(c))).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereSpec {
    pub seed: LatentVector,
    pub variance: f64,
    pub n_samples: usize,
}

impl SphereSpec {
    pub fn new(seed: LatentVector, variance: f64, n_samples: usize) -> Result<Self> {
        if !variance.is_finite() || variance <= 0.0 {
            return Err(Error::NonPositiveVariance(variance));
        }
        if n_samples == 0 {
            return Err(Error::InvalidParameter("sphere sample count must be >= 1".into()));
        }
        Ok(Self {
            seed,
            variance,
            n_samples,
        })
    }
}

/// Draws `n_samples` points from `N(seed, variance * I)`, each coordinate as
/// `mean + sigma * N(0, 1)`.
pub fn sphere_sample_with<R: Rng + ?Sized>(spec: &SphereSpec, rng: &mut R) -> Result<Vec<LatentVector>> {
    if spec.variance.is_nan() || spec.variance <= 0.0 {
        return Err(Error::NonPositiveVariance(spec.variance));
    }
    let sigma = spec.variance.sqrt();
    Ok((0..spec.n_samples)
        .map(|_| {
            LatentVector::from_raw(
                spec.seed
                    .as_slice()
                    .iter()
                    .map(|&m| {
                        let e: f64 = rng.sample(StandardNormal);
                        m + sigma * e
                    })
                    .collect(),
            )
        })
        .collect())
}

pub fn sphere_sample(spec: &SphereSpec, seed: u64) -> Result<Vec<LatentVector>> {
    sphere_sample_with(spec, &mut rng::stream(seed, &[]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupParams {
    /// Exact-duplicate radius.
    pub exact_eps: f64,
    /// Near-duplicate radius; at least `exact_eps`.
    pub near_delta: f64,
}

impl Default for DedupParams {
    fn default() -> Self {
        Self {
            exact_eps: 1e-9,
            near_delta: 0.5,
        }
    }
}

impl DedupParams {
    pub fn validate(&self) -> Result<()> {
        if self.exact_eps.is_nan()
            || self.near_delta.is_nan()
            || self.exact_eps < 0.0
            || self.near_delta < self.exact_eps
        {
            return Err(Error::InvalidParameter(format!(
                "dedup radii must satisfy 0 <= eps <= delta, got eps={} delta={}",
                self.exact_eps, self.near_delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicateKind {
    Exact,
    Near,
}

/// What a removed candidate collided with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", content = "index", rename_all = "snake_case")]
pub enum Neighbor {
    /// Index into the existing set.
    Existing(usize),
    /// Index into the candidate list.
    Candidate(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub candidate: usize,
    pub kind: DuplicateKind,
    pub nearest: Neighbor,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupOutcome {
    /// Candidate indices kept, in input order.
    pub kept: Vec<usize>,
    pub removed: Vec<Removal>,
}

const CHUNK: usize = 16;

/// Flat store of reference latents supporting radius queries with
/// early-exit partial distances.
#[derive(Debug, Clone)]
pub struct DedupIndex {
    dim: usize,
    data: Vec<f64>,
    tags: Vec<Neighbor>,
}

impl DedupIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            tags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn insert(&mut self, z: &LatentVector, tag: Neighbor) -> Result<()> {
        z.check_dim(self.dim)?;
        self.data.extend_from_slice(z.as_slice());
        self.tags.push(tag);
        Ok(())
    }

    /// Nearest stored latent within `radius` (inclusive), if any.
    pub fn nearest_within(&self, z: &LatentVector, radius: f64) -> Result<Option<(Neighbor, f64)>> {
        z.check_dim(self.dim)?;
        let limit = radius * radius;
        let q = z.as_slice();
        let mut best: Option<(usize, f64)> = None;
        for (row, stored) in self.data.chunks_exact(self.dim).enumerate() {
            let bound = best.map_or(limit, |(_, d)| d.min(limit));
            let mut acc = 0.0;
            let mut pruned = false;
            for (a, b) in stored.chunks(CHUNK).zip(q.chunks(CHUNK)) {
                acc += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                if acc > bound {
                    pruned = true;
                    break;
                }
            }
            if !pruned {
                best = Some((row, acc));
            }
        }
        Ok(best.map(|(row, d2)| (self.tags[row], d2.sqrt())))
    }
}

/// Screens `candidates` against `existing` and against earlier kept
/// candidates. A candidate within `near_delta` of either is removed; the
/// first occurrence wins.
pub fn dedup(candidates: &[LatentVector], existing: &[LatentVector], params: DedupParams) -> Result<DedupOutcome> {
    params.validate()?;
    let Some(dim) = existing.first().or(candidates.first()).map(LatentVector::dim) else {
        return Ok(DedupOutcome::default());
    };
    let mut index = DedupIndex::new(dim);
    for (i, z) in existing.iter().enumerate() {
        index.insert(z, Neighbor::Existing(i))?;
    }
    let mut out = DedupOutcome::default();
    for (i, z) in candidates.iter().enumerate() {
        if let Some(removal) = screen(&index, z, i, params)? {
            out.removed.push(removal);
        } else {
            index.insert(z, Neighbor::Candidate(i))?;
            out.kept.push(i);
        }
    }
    Ok(out)
}

/// Checks one candidate against `index` without inserting it.
pub fn screen(index: &DedupIndex, z: &LatentVector, candidate: usize, params: DedupParams) -> Result<Option<Removal>> {
    Ok(index
        .nearest_within(z, params.near_delta)?
        .map(|(nearest, distance)| Removal {
            candidate,
            kind: if distance <= params.exact_eps {
                DuplicateKind::Exact
            } else {
                DuplicateKind::Near
            },
            nearest,
            distance,
        }))
}
