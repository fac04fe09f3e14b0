//! Distance metrics and exact nearest-neighbour queries.
//!
//! Five metrics are supported: Chebyshev (L∞, the default for Hopkins
//! computations), Euclidean, Manhattan, cosine distance and Mahalanobis.
//! Every metric also exposes a (sub)gradient so that selected distances can
//! be recorded on a [`Tape`](crate::tape::Tape).
//!
//! Non-smooth points follow fixed conventions: the Chebyshev gradient goes
//! to the lowest coordinate achieving the maximum, and coincident points
//! (or coincident coordinates for Manhattan) get a zero gradient.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, PartialEq, Default)]
pub enum DistanceMetric {
    #[default]
    Chebyshev,
    Euclidean,
    Manhattan,
    Cosine,
    /// Holds the inverse covariance matrix (validated SPD).
    Mahalanobis(Arc<Matrix>),
}

impl fmt::Debug for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceMetric::Mahalanobis(m) => write!(f, "Mahalanobis({}x{})", m.rows(), m.cols()),
            other => f.write_str(other.name()),
        }
    }
}

impl DistanceMetric {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::Chebyshev => "chebyshev",
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Manhattan => "manhattan",
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Mahalanobis(_) => "mahalanobis",
        }
    }

    /// Builds a Mahalanobis metric from an inverse covariance matrix, which
    /// must be symmetric positive definite.
    pub fn mahalanobis(cov_inv: Matrix) -> Result<Self> {
        let d = cov_inv.rows();
        if d == 0 || cov_inv.cols() != d {
            return Err(Error::Config(format!(
                "Mahalanobis inverse covariance must be square and nonempty, got {}x{}",
                cov_inv.rows(),
                cov_inv.cols()
            )));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (cov_inv.get(i, j), cov_inv.get(j, i));
                if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Config(
                        "Mahalanobis inverse covariance is not symmetric".into(),
                    ));
                }
            }
        }
        let m = DMatrix::from_row_slice(d, d, cov_inv.data());
        if m.cholesky().is_none() {
            return Err(Error::Config(
                "Mahalanobis inverse covariance is not positive definite".into(),
            ));
        }
        Ok(DistanceMetric::Mahalanobis(Arc::new(cov_inv)))
    }

    /// Mahalanobis metric from the sample covariance of `x`, with a ridge of
    /// `1e-6 · trace / d` added to the diagonal before inversion.
    pub fn mahalanobis_from_data(x: &Matrix) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 || d == 0 {
            return Err(Error::Config(
                "Mahalanobis covariance needs at least 2 rows and 1 column".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for row in x.row_iter() {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in 0..=i {
                    cov[(i, j)] += di * (row[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
        // all-constant data has zero trace; fall back to an absolute ridge
        let ridge = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-6 };
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Config("regularized covariance is not positive definite".into()))?;
        let inv = chol.inverse();
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                // symmetrize away rounding asymmetry
                data.push(0.5 * (inv[(i, j)] + inv[(j, i)]));
            }
        }
        Self::mahalanobis(Matrix::from_vec(d, d, data)?)
    }

    fn check_dims(&self, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != b.len() {
            return Err(Error::dim(
                "distance",
                format!("points of dimension {} and {}", a.len(), b.len()),
            ));
        }
        if let DistanceMetric::Mahalanobis(s) = self {
            if s.rows() != a.len() {
                return Err(Error::dim(
                    "distance",
                    format!(
                        "Mahalanobis metric is {}-dimensional, points are {}-dimensional",
                        s.rows(),
                        a.len()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Checked distance between two points.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check_dims(a, b)?;
        Ok(self.eval(a, b))
    }

    /// Distance without dimension checks; callers guarantee equal lengths.
    pub(crate) fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::Chebyshev => a
                .iter()
                .zip(b)
                .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs())),
            DistanceMetric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            DistanceMetric::Cosine => {
                if a == b {
                    return 0.0;
                }
                let (dot, na, nb) = cosine_parts(a, b);
                if na == 0.0 || nb == 0.0 {
                    return 1.0;
                }
                (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
            }
            DistanceMetric::Mahalanobis(s) => {
                let d = a.len();
                let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                let mut q = 0.0;
                for i in 0..d {
                    let row = s.row(i);
                    let sd: f64 = row.iter().zip(&delta).map(|(s, v)| s * v).sum();
                    q += delta[i] * sd;
                }
                q.max(0.0).sqrt()
            }
        }
    }

    /// Gradient of `distance(a, b)` with respect to `a` and `b`.
    pub fn gradient(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = a.len();
        let mut ga = vec![0.0; d];
        match self {
            DistanceMetric::Chebyshev => return chebyshev_subgradient(a, b),
            DistanceMetric::Euclidean => {
                let dist = self.eval(a, b);
                if dist > 0.0 {
                    for i in 0..d {
                        ga[i] = (a[i] - b[i]) / dist;
                    }
                }
            }
            DistanceMetric::Manhattan => {
                for i in 0..d {
                    let diff = a[i] - b[i];
                    ga[i] = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            DistanceMetric::Cosine => {
                let (dot, na, nb) = cosine_parts(a, b);
                if na == 0.0 || nb == 0.0 || a == b {
                    return (ga, vec![0.0; d]);
                }
                let c = dot / (na * nb);
                let mut gb = vec![0.0; d];
                for i in 0..d {
                    ga[i] = -(b[i] / (na * nb) - c * a[i] / (na * na));
                    gb[i] = -(a[i] / (na * nb) - c * b[i] / (nb * nb));
                }
                return (ga, gb);
            }
            DistanceMetric::Mahalanobis(s) => {
                let dist = self.eval(a, b);
                if dist > 0.0 {
                    let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                    for i in 0..d {
                        let sd: f64 = s.row(i).iter().zip(&delta).map(|(s, v)| s * v).sum();
                        ga[i] = sd / dist;
                    }
                }
            }
        }
        let gb = ga.iter().map(|g| -g).collect();
        (ga, gb)
    }

    /// Exact nearest row of `set` to `query` by brute-force scan.
    ///
    /// Ties go to the lowest row index; `exclude` removes one row from
    /// consideration (self-exclusion for data points drawn from `set`).
    pub fn nearest_in_set(
        &self,
        query: &[f64],
        set: &Matrix,
        exclude: Option<usize>,
    ) -> Result<(usize, f64)> {
        let effective = set.rows() - usize::from(exclude.is_some_and(|e| e < set.rows()));
        if set.rows() == 0 || effective == 0 {
            return Err(Error::contract(
                "nearest_in_set",
                "no candidate rows after exclusion",
            ));
        }
        if set.cols() != query.len() {
            return Err(Error::dim(
                "nearest_in_set",
                format!("query has {} coordinates, set has {}", query.len(), set.cols()),
            ));
        }
        self.check_dims(query, set.row(0))?;
        Ok(self.nearest_unchecked(query, set, exclude))
    }

    pub(crate) fn nearest_unchecked(
        &self,
        query: &[f64],
        set: &Matrix,
        exclude: Option<usize>,
    ) -> (usize, f64) {
        match self {
            DistanceMetric::Chebyshev => nearest_pruned(query, set, exclude, chebyshev_within),
            DistanceMetric::Manhattan => nearest_pruned(query, set, exclude, manhattan_within),
            _ => {
                let mut best = (usize::MAX, f64::INFINITY);
                for (j, row) in set.row_iter().enumerate() {
                    if Some(j) == exclude {
                        continue;
                    }
                    let dist = self.eval(query, row);
                    if dist < best.1 || best.0 == usize::MAX {
                        best = (j, dist);
                    }
                }
                best
            }
        }
    }
}

/// Brute-force scan that abandons a candidate once its partial distance
/// reaches the best so far. Partial values are monotone and equal the full
/// distance on completion, so the result matches the plain scan exactly.
fn nearest_pruned(
    query: &[f64],
    set: &Matrix,
    exclude: Option<usize>,
    within: fn(&[f64], &[f64], f64) -> Option<f64>,
) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (j, row) in set.row_iter().enumerate() {
        if Some(j) == exclude {
            continue;
        }
        if best.0 == usize::MAX {
            best = (j, within(query, row, f64::INFINITY).unwrap_or(f64::INFINITY));
        } else if let Some(dist) = within(query, row, best.1) {
            best = (j, dist);
        }
    }
    best
}

/// Chebyshev distance if strictly below `bound`, checked every 8 coordinates.
fn chebyshev_within(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let mut acc = 0.0f64;
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        let mut m = [0.0f64; 8];
        for k in 0..8 {
            m[k] = (xa[k] - xb[k]).abs();
        }
        for v in m {
            if v > acc {
                acc = v;
            }
        }
        if acc >= bound {
            return None;
        }
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let v = (x - y).abs();
        if v > acc {
            acc = v;
        }
    }
    (acc < bound).then_some(acc)
}

/// Manhattan distance if strictly below `bound`.
fn manhattan_within(a: &[f64], b: &[f64], bound: f64) -> Option<f64> {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y).abs();
        if acc >= bound {
            return None;
        }
    }
    (acc < bound).then_some(acc)
}

fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}

/// Subgradient of the Chebyshev distance: `±1` at the lowest coordinate
/// achieving the maximum absolute difference, zero elsewhere. Coincident
/// points give zero gradients.
pub fn chebyshev_subgradient(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = a.len();
    let mut ga = vec![0.0; d];
    let mut gb = vec![0.0; d];
    let mut arg = None;
    let mut best = 0.0;
    for i in 0..d {
        let diff = (a[i] - b[i]).abs();
        if diff > best {
            best = diff;
            arg = Some(i);
        }
    }
    if let Some(i) = arg {
        let s = if a[i] > b[i] { 1.0 } else { -1.0 };
        ga[i] = s;
        gb[i] = -s;
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn all_basic() -> Vec<DistanceMetric> {
        vec![
            DistanceMetric::Chebyshev,
            DistanceMetric::Euclidean,
            DistanceMetric::Manhattan,
            DistanceMetric::Cosine,
            DistanceMetric::mahalanobis(Matrix::identity(3)).unwrap(),
        ]
    }

    #[test]
    fn chebyshev_example() {
        let d = DistanceMetric::Chebyshev.distance(&[0.0, 0.0], &[3.0, -4.0]).unwrap();
        assert_eq!(d, 4.0);
    }

    #[test]
    fn identity_of_indiscernibles() {
        let p = [0.3, -1.2, 4.0];
        for m in all_basic() {
            assert_eq!(m.distance(&p, &p).unwrap(), 0.0, "{m:?}");
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        assert!(DistanceMetric::Euclidean.distance(&[1.0], &[1.0, 2.0]).is_err());
        let m = DistanceMetric::mahalanobis(Matrix::identity(2)).unwrap();
        assert!(m.distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn cosine_zero_vector_is_one() {
        let d = DistanceMetric::Cosine.distance(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn mahalanobis_rejects_bad_matrices() {
        let asym = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(DistanceMetric::mahalanobis(asym).is_err());
        let indefinite = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(DistanceMetric::mahalanobis(indefinite).is_err());
    }

    #[test]
    fn mahalanobis_identity_equals_euclidean() {
        let mut rng = Rng::new(11);
        let m = DistanceMetric::mahalanobis(Matrix::identity(5)).unwrap();
        for _ in 0..100 {
            let a: Vec<f64> = (0..5).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            // independent Euclidean
            let mut s = 0.0;
            for i in 0..5 {
                s += (a[i] - b[i]).powi(2);
            }
            assert!((m.distance(&a, &b).unwrap() - s.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn mahalanobis_from_data_handles_constant_columns() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0, 2.0],
            vec![2.0, 0.0, 1.0],
            vec![3.0, 0.0, 5.0],
        ])
        .unwrap();
        let m = DistanceMetric::mahalanobis_from_data(&x).unwrap();
        assert!(m.distance(x.row(0), x.row(1)).unwrap().is_finite());
    }

    #[test]
    fn nearest_basic_and_exclusion() {
        let set = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![5.0, 5.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
        ])
        .unwrap();
        let m = DistanceMetric::Chebyshev;
        assert_eq!(m.nearest_in_set(&[2.0, 2.0], &set, None).unwrap(), (3, 0.0));
        assert_eq!(m.nearest_in_set(&[2.0, 2.0], &set, Some(3)).unwrap(), (2, 1.0));
    }

    #[test]
    fn nearest_ties_lowest_index() {
        let set = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![1.0]]).unwrap();
        let m = DistanceMetric::Euclidean;
        assert_eq!(m.nearest_in_set(&[0.0], &set, None).unwrap().0, 0);
        assert_eq!(m.nearest_in_set(&[0.0], &set, Some(0)).unwrap().0, 1);
    }

    #[test]
    fn nearest_empty_effective_set() {
        let set = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let m = DistanceMetric::Chebyshev;
        assert!(m.nearest_in_set(&[0.0, 0.0], &set, Some(0)).is_err());
        assert!(m.nearest_in_set(&[0.0, 0.0], &Matrix::zeros(0, 2), None).is_err());
    }

    #[test]
    fn chebyshev_subgradient_examples() {
        assert_eq!(chebyshev_subgradient(&[3.0, 0.0], &[0.0, 0.0]).0, vec![1.0, 0.0]);
        assert_eq!(chebyshev_subgradient(&[0.0, -4.0], &[0.0, 0.0]).0, vec![0.0, -1.0]);
        // tie goes to the lowest coordinate
        assert_eq!(chebyshev_subgradient(&[2.0, -2.0], &[0.0, 0.0]).0, vec![1.0, 0.0]);
        let (ga, gb) = chebyshev_subgradient(&[1.0, 1.0], &[1.0, 1.0]);
        assert!(ga.iter().chain(&gb).all(|&g| g == 0.0));
    }
}
