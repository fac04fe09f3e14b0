//! The Hopkins clustering-tendency statistic and the Hopkins loss.
//!
//! For a data set `X` of `n` points the statistic samples `m` distinct rows
//! `X̃`, draws `m` reference points `Y` uniformly inside the per-column
//! bounding box of `X`, and compares nearest-neighbour distances:
//!
//! ```text
//! uᵢ = min_j D(yᵢ, xⱼ)            (reference → data)
//! wᵢ = min_{j ≠ sᵢ} D(x̃ᵢ, xⱼ)      (sample → rest of the data)
//! H  = Σu / (Σu + Σw)
//! ```
//!
//! `H ≈ 0.5` for spatially random data, small for regular lattices and close
//! to 1 for clustered data. The loss `L = |H − H_T|` is recorded on a
//! [`Tape`] with the sample, the reference set and all nearest-neighbour
//! assignments frozen, so gradients flow only through the selected
//! distances.
//!
//! Draw order for a given [`Rng`]: first the `m` sample indices (partial
//! Fisher-Yates, one bounded draw each), then the `m×d` reference entries in
//! row-major order (one uniform draw each).

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::DistanceMetric;
use crate::rng::Rng;
use crate::tape::{Anchor, DistancePair, NodeId, Tape};

/// Fraction of rows sampled when none is configured.
pub const DEFAULT_SAMPLING_FRACTION: f64 = 0.05;

/// Largest sampling fraction accepted without a warning.
pub const ADVISED_MAX_FRACTION: f64 = 0.1;

/// Minimum batch rows for which training adds the Hopkins term.
pub const MIN_LOSS_ROWS: usize = 20;

thread_local! {
    static LOSS_INVOCATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`hopkins_loss`] calls made on the current thread.
pub fn loss_invocations() -> u64 {
    LOSS_INVOCATIONS.with(Cell::get)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopkinsConfig {
    pub sampling_fraction: f64,
    pub metric: DistanceMetric,
    pub target: f64,
}

impl Default for HopkinsConfig {
    fn default() -> Self {
        Self {
            sampling_fraction: DEFAULT_SAMPLING_FRACTION,
            metric: DistanceMetric::Chebyshev,
            target: 0.5,
        }
    }
}

impl HopkinsConfig {
    pub fn new(sampling_fraction: f64, metric: DistanceMetric, target: f64) -> Result<Self> {
        let cfg = Self {
            sampling_fraction,
            metric,
            target,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_target(mut self, target: f64) -> Result<Self> {
        self.target = target;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.sampling_fraction;
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::Config(format!(
                "sampling fraction {k} must lie in (0, 1]"
            )));
        }
        if k > ADVISED_MAX_FRACTION {
            log::warn!(
                "sampling fraction {k} exceeds {ADVISED_MAX_FRACTION}; nearest-neighbour distances lose independence"
            );
        }
        if !(0.0..=1.0).contains(&self.target) {
            return Err(Error::Config(format!(
                "target H {} must lie in [0, 1]",
                self.target
            )));
        }
        Ok(())
    }

    /// `m = max(1, round(k·n))`, capped at `n`.
    pub fn sample_size(&self, n: usize) -> usize {
        ((self.sampling_fraction * n as f64).round() as usize).clamp(1, n.max(1))
    }
}

/// Everything computed on the way to `H`, kept for inspection and for
/// recording the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct HopkinsWitness {
    pub sampled_indices: Vec<usize>,
    pub reference: Matrix,
    /// Per reference point: nearest data row and distance `uᵢ`.
    pub u_pairs: Vec<(usize, f64)>,
    /// Per sampled row: nearest other data row and distance `wᵢ`.
    pub w_pairs: Vec<(usize, f64)>,
    pub statistic: f64,
}

impl HopkinsWitness {
    pub fn u_sum(&self) -> f64 {
        self.u_pairs.iter().map(|p| p.1).sum()
    }

    pub fn w_sum(&self) -> f64 {
        self.w_pairs.iter().map(|p| p.1).sum()
    }
}

/// `m` distinct indices from `0..n` in draw order (partial Fisher-Yates).
pub fn sample_without_replacement(n: usize, m: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::Config(format!(
            "cannot sample {m} of {n} items without replacement"
        )));
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = i + rng.below(n - i);
        pool.swap(i, j);
    }
    pool.truncate(m);
    Ok(pool)
}

/// `m` points uniform in the per-column `[min, max]` box of `x`.
pub fn generate_reference(x: &Matrix, m: usize, rng: &mut Rng) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::contract("generate_reference", "empty data set"));
    }
    let ranges = x.column_ranges();
    let mut data = Vec::with_capacity(m * x.cols());
    for _ in 0..m {
        for &(lo, hi) in &ranges {
            data.push(rng.uniform_in(lo, hi));
        }
    }
    Matrix::from_vec(m, x.cols(), data)
}

/// Computes the Hopkins statistic of `x`.
///
/// Requires at least two rows. When every nearest-neighbour distance is zero
/// (all points identical) the statistic is defined as 0.5.
pub fn hopkins_statistic(x: &Matrix, cfg: &HopkinsConfig, rng: &mut Rng) -> Result<HopkinsWitness> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::contract(
            "hopkins_statistic",
            format!("need at least 2 rows, got {n}"),
        ));
    }
    cfg.metric.distance(x.row(0), x.row(0))?;
    let m = cfg.sample_size(n);
    let sampled_indices = sample_without_replacement(n, m, rng)?;
    let reference = generate_reference(x, m, rng)?;

    let metric = &cfg.metric;
    let u_pairs: Vec<(usize, f64)> = reference
        .row_iter()
        .map(|y| metric.nearest_unchecked(y, x, None))
        .collect();
    let w_pairs: Vec<(usize, f64)> = sampled_indices
        .iter()
        .map(|&s| metric.nearest_unchecked(x.row(s), x, Some(s)))
        .collect();

    let mut witness = HopkinsWitness {
        sampled_indices,
        reference,
        u_pairs,
        w_pairs,
        statistic: 0.5,
    };
    witness.statistic = hopkins_ratio(witness.u_sum(), witness.w_sum());
    Ok(witness)
}

/// `Σu / (Σu + Σw)`, or 0.5 when both sums are zero.
pub fn hopkins_ratio(u_sum: f64, w_sum: f64) -> f64 {
    let total = u_sum + w_sum;
    if total > 0.0 {
        u_sum / total
    } else {
        0.5
    }
}

#[derive(Debug, Clone)]
pub struct HopkinsLoss {
    pub loss: NodeId,
    /// `H` as a tape node (a constant when the input is degenerate).
    pub statistic: NodeId,
    pub witness: HopkinsWitness,
}

/// Records `L = |H − H_T|` for the rows of node `x`.
///
/// The sample, reference set and nearest-neighbour assignments are fixed
/// by the forward pass. If all distances are zero the loss is the constant
/// `|0.5 − H_T|` with no gradient.
pub fn hopkins_loss(
    tape: &mut Tape,
    x: NodeId,
    cfg: &HopkinsConfig,
    rng: &mut Rng,
) -> Result<HopkinsLoss> {
    LOSS_INVOCATIONS.with(|c| c.set(c.get() + 1));
    let witness = hopkins_statistic(tape.value(x), cfg, rng)?;
    hopkins_loss_with_witness(tape, x, cfg, witness)
}

/// Records the loss for fixed draws and assignments, re-evaluating the
/// selected distances at the current values of `x`. Used to probe the
/// frozen-assignment loss, for example by finite differences.
pub fn hopkins_loss_with_witness(
    tape: &mut Tape,
    x: NodeId,
    cfg: &HopkinsConfig,
    witness: HopkinsWitness,
) -> Result<HopkinsLoss> {
    if witness.u_sum() + witness.w_sum() == 0.0 {
        let statistic = tape.leaf(Matrix::scalar(0.5));
        let loss = tape.leaf(Matrix::scalar((0.5 - cfg.target).abs()));
        return Ok(HopkinsLoss {
            loss,
            statistic,
            witness,
        });
    }

    let u_pairs = witness
        .reference
        .row_iter()
        .zip(&witness.u_pairs)
        .map(|(y, &(j, _))| DistancePair {
            anchor: Anchor::Point(y.to_vec()),
            target: j,
        })
        .collect();
    let w_pairs = witness
        .sampled_indices
        .iter()
        .zip(&witness.w_pairs)
        .map(|(&s, &(j, _))| DistancePair {
            anchor: Anchor::Row(s),
            target: j,
        })
        .collect();
    let u = tape.distances(x, u_pairs, &cfg.metric)?;
    let w = tape.distances(x, w_pairs, &cfg.metric)?;
    let u_sum = tape.sum(u);
    let w_sum = tape.sum(w);
    let total = tape.add(u_sum, w_sum)?;
    let statistic = tape.div(u_sum, total)?;
    let shifted = tape.add_scalar(statistic, -cfg.target);
    let loss = tape.abs(shifted);
    Ok(HopkinsLoss {
        loss,
        statistic,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_full_permutation() {
        let mut rng = Rng::new(1);
        let mut s = sample_without_replacement(10, 10, &mut rng).unwrap();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(sample_without_replacement(1, 1, &mut rng).unwrap(), vec![0]);
        assert!(sample_without_replacement(3, 4, &mut rng).is_err());
    }

    #[test]
    fn sample_frequencies_uniform() {
        let mut rng = Rng::new(2);
        let mut counts = [0usize; 6];
        let trials = 100_000;
        for _ in 0..trials {
            for i in sample_without_replacement(6, 3, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / trials as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn reference_containment_and_constant_columns() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![0.0, 3.0, 4.0], vec![0.0, 2.0, 2.5]])
            .unwrap();
        let mut rng = Rng::new(3);
        let y = generate_reference(&x, 50, &mut rng).unwrap();
        for row in y.row_iter() {
            assert_eq!(row[0], 0.0);
            assert!((1.0..=3.0).contains(&row[1]));
            assert!((2.0..=4.0).contains(&row[2]));
        }
    }

    #[test]
    fn reference_uniform_mean() {
        let x = Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap();
        let mut rng = Rng::new(4);
        let y = generate_reference(&x, 100_000, &mut rng).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 3.0).abs() < 0.03);
    }

    #[test]
    fn too_few_rows() {
        let mut rng = Rng::new(0);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(hopkins_statistic(&x, &HopkinsConfig::default(), &mut rng).is_err());
        let mut tape = Tape::new();
        let node = tape.leaf(x);
        assert!(hopkins_loss(&mut tape, node, &HopkinsConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn identical_rows_give_half() {
        let x = Matrix::filled(30, 3, 0.7);
        let mut rng = Rng::new(5);
        let w = hopkins_statistic(&x, &HopkinsConfig::default(), &mut rng).unwrap();
        assert_eq!(w.statistic, 0.5);

        let cfg = HopkinsConfig::default().with_target(0.9).unwrap();
        let mut tape = Tape::new();
        let node = tape.leaf(x);
        let l = hopkins_loss(&mut tape, node, &cfg, &mut rng).unwrap();
        assert!((tape.value(l.loss).data()[0] - 0.4).abs() < 1e-15);
        assert!(tape.backward(l.loss).unwrap().get(node).is_none());
    }

    #[test]
    fn duplicates_give_one() {
        // every row has an exact twin, so each wᵢ = 0; reference points off
        // the data give uᵢ > 0
        let mut rows = Vec::new();
        for &p in &[0.0, 1.0] {
            for _ in 0..20 {
                rows.push(vec![p, p]);
            }
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let cfg = HopkinsConfig::new(0.1, DistanceMetric::Chebyshev, 0.5).unwrap();
        let w = hopkins_statistic(&x, &cfg, &mut Rng::new(6)).unwrap();
        assert_eq!(w.w_sum(), 0.0);
        assert!(w.u_sum() > 0.0);
        assert_eq!(w.statistic, 1.0);
    }

    #[test]
    fn equal_sums_give_half() {
        for v in [1e-9, 0.25, 3.0, 1e6] {
            assert_eq!(hopkins_ratio(v, v), 0.5);
        }
        assert_eq!(hopkins_ratio(0.0, 0.0), 0.5);
        assert_eq!(hopkins_ratio(2.0, 0.0), 1.0);
        assert_eq!(hopkins_ratio(0.0, 2.0), 0.0);
    }

    #[test]
    fn witness_components_consistent() {
        let mut rng = Rng::new(8);
        let x = Matrix::from_fn(100, 4, |_, _| rng.uniform());
        let w = hopkins_statistic(&x, &HopkinsConfig::default(), &mut Rng::new(9)).unwrap();
        assert_eq!(w.sampled_indices.len(), 5);
        let mut s = w.sampled_indices.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 5);
        let h = w.u_sum() / (w.u_sum() + w.w_sum());
        assert!((h - w.statistic).abs() < 1e-15);
        for (&s, &(j, _)) in w.sampled_indices.iter().zip(&w.w_pairs) {
            assert_ne!(s, j);
        }
    }

    #[test]
    fn loss_examples() {
        let mut rng = Rng::new(10);
        let x = Matrix::from_fn(60, 2, |_, _| rng.uniform());
        let w = hopkins_statistic(&x, &HopkinsConfig::default(), &mut Rng::new(11)).unwrap();

        // target equal to the realized H ⇒ zero loss
        let cfg = HopkinsConfig::default().with_target(w.statistic).unwrap();
        let mut tape = Tape::new();
        let node = tape.leaf(x.clone());
        let l = hopkins_loss(&mut tape, node, &cfg, &mut Rng::new(11)).unwrap();
        assert_eq!(tape.value(l.loss).data()[0], 0.0);
        assert_eq!(tape.value(l.statistic).data()[0], w.statistic);

        let cfg = HopkinsConfig::default().with_target(w.statistic - 0.1).unwrap();
        let mut tape = Tape::new();
        let node = tape.leaf(x);
        let l = hopkins_loss(&mut tape, node, &cfg, &mut Rng::new(11)).unwrap();
        assert!((tape.value(l.loss).data()[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(HopkinsConfig::new(0.0, DistanceMetric::Chebyshev, 0.5).is_err());
        assert!(HopkinsConfig::new(0.05, DistanceMetric::Chebyshev, 1.5).is_err());
        assert!(HopkinsConfig::new(0.3, DistanceMetric::Chebyshev, 0.5).is_ok());
        let cfg = HopkinsConfig::default();
        assert_eq!(cfg.sample_size(20), 1);
        assert_eq!(cfg.sample_size(5), 1);
        assert_eq!(cfg.sample_size(1024), 51);
    }

    #[test]
    fn invocation_counter_counts() {
        let before = loss_invocations();
        let mut tape = Tape::new();
        let node = tape.leaf(Matrix::from_fn(25, 2, |i, j| (i * 3 + j) as f64));
        hopkins_loss(&mut tape, node, &HopkinsConfig::default(), &mut Rng::new(1)).unwrap();
        assert_eq!(loss_invocations(), before + 1);
    }
}
