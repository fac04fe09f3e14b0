//! Synthetic data sets with known topology: jittered lattices (regular),
//! i.i.d. uniform points (random) and Gaussian blobs (clustered). All live
//! in the unit hypercube.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Attempts per cluster centre before giving up on the separation rule.
const CENTER_RETRIES: usize = 10_000;

/// Minimum Chebyshev distance between cluster centres, in units of spread.
pub const CENTER_SEPARATION: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub enum SynthKind {
    /// Lattice plus uniform jitter, `jitter` in units of the grid spacing.
    Grid { jitter: f64 },
    Uniform,
    Clusters {
        num_clusters: usize,
        spread: f64,
        labelled: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::Config("synthetic data needs n ≥ 1 and d ≥ 1".into()));
        }
        match self.kind {
            SynthKind::Grid { jitter } if !(0.0..0.5).contains(&jitter) => Err(Error::Config(
                format!("grid jitter {jitter} must lie in [0, 0.5)"),
            )),
            SynthKind::Clusters {
                num_clusters,
                spread,
                labelled,
            } => {
                if num_clusters == 0 || (labelled && num_clusters < 2) {
                    return Err(Error::Config(format!(
                        "{num_clusters} clusters requested; labelled data needs at least 2"
                    )));
                }
                if !(spread > 0.0 && spread.is_finite()) {
                    return Err(Error::Config(format!("cluster spread {spread} must be positive")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Points per axis of the lattice: the largest `p` with `pᵈ ≤ n`.
    ///
    /// When even two points per axis would exceed `n` (that is `n < 2ᵈ`),
    /// the generator falls back to the first `n` vertices of the
    /// `{0, 1}ᵈ` lattice in lexicographic order.
    pub fn grid_points_per_axis(&self) -> usize {
        let mut p = 1usize;
        while fits(p + 1, self.d, self.n) {
            p += 1;
        }
        p
    }
}

fn fits(p: usize, d: usize, n: usize) -> bool {
    let mut acc = 1usize;
    for _ in 0..d {
        match acc.checked_mul(p) {
            Some(v) if v <= n => acc = v,
            _ => return false,
        }
    }
    true
}

pub fn generate(spec: &SynthSpec, rng: &mut Rng) -> Result<SynthData> {
    spec.validate()?;
    match spec.kind {
        SynthKind::Grid { jitter } => Ok(SynthData {
            features: grid(spec, jitter, rng),
            labels: None,
        }),
        SynthKind::Uniform => Ok(SynthData {
            features: Matrix::from_fn(spec.n, spec.d, |_, _| rng.uniform()),
            labels: None,
        }),
        SynthKind::Clusters {
            num_clusters,
            spread,
            labelled,
        } => {
            let (features, labels) = clusters(spec.n, spec.d, num_clusters, spread, rng)?;
            Ok(SynthData {
                features,
                labels: labelled.then_some(labels),
            })
        }
    }
}

fn grid(spec: &SynthSpec, jitter: f64, rng: &mut Rng) -> Matrix {
    let d = spec.d;
    let p = spec.grid_points_per_axis();
    let (axis, count) = if p >= 2 {
        (p, p.pow(d as u32))
    } else {
        (2, spec.n)
    };
    let spacing = if axis > 1 { 1.0 / (axis - 1) as f64 } else { 0.0 };
    let mut data = Vec::with_capacity(count * d);
    let mut digits = vec![0usize; d];
    for _ in 0..count {
        for &k in &digits {
            let mut v = k as f64 * spacing;
            if jitter > 0.0 {
                v += rng.uniform_in(-jitter, jitter) * spacing;
            }
            data.push(v);
        }
        // odometer increment, last axis fastest
        for pos in (0..d).rev() {
            digits[pos] += 1;
            if digits[pos] < axis {
                break;
            }
            digits[pos] = 0;
        }
    }
    Matrix::from_vec(count, d, data).expect("lattice size")
}

fn clusters(
    n: usize,
    d: usize,
    k: usize,
    spread: f64,
    rng: &mut Rng,
) -> Result<(Matrix, Vec<usize>)> {
    let min_sep = CENTER_SEPARATION * spread;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for c in 0..k {
        let mut placed = false;
        for _ in 0..CENTER_RETRIES {
            let cand: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
            let ok = centers.iter().all(|other| {
                cand.iter()
                    .zip(other)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                    >= min_sep
            });
            if ok {
                centers.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "could not place cluster centre {} of {k} at Chebyshev separation {min_sep} in \
                 {CENTER_RETRIES} attempts; use a smaller spread or fewer clusters",
                c + 1
            )));
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut data = Vec::with_capacity(n * d);
    for &l in &labels {
        for &c in &centers[l] {
            data.push(c + spread * rng.normal());
        }
    }
    Ok((Matrix::from_vec(n, d, data)?, labels))
}
