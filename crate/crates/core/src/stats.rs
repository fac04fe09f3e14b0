//! Two-sided Mann–Whitney U tests, significance stars and Student-t
//! confidence intervals for run summaries.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest combined sample size for which tie-free p-values are enumerated.
pub const EXACT_MAX_TOTAL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stars {
    #[serde(rename = "ns")]
    Ns,
    #[serde(rename = "*")]
    One,
    #[serde(rename = "**")]
    Two,
    #[serde(rename = "***")]
    Three,
}

impl Stars {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            Stars::Three
        } else if p < 0.01 {
            Stars::Two
        } else if p < 0.05 {
            Stars::One
        } else {
            Stars::Ns
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::Ns => "ns",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

impl fmt::Display for Stars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub group_a: Vec<f64>,
    pub group_b: Vec<f64>,
    /// Pairs `(aᵢ, bⱼ)` with `aᵢ > bⱼ`, ties counting one half.
    pub u: f64,
    pub p_two_sided: f64,
    pub stars: Stars,
    pub method: PMethod,
}

/// Midranks (1-based) of `values`, plus the sizes of all tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

fn check_sample(name: &str, x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::contract("mann_whitney_u", format!("group {name} is empty")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("mann_whitney_u", format!("group {name} has non-finite values")));
    }
    Ok(())
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<Comparison> {
    check_sample("a", a)?;
    check_sample("b", b)?;
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum: f64 = ranks[..na].iter().sum();
    let u = rank_sum - (na * (na + 1)) as f64 / 2.0;

    let (p, method) = if na + nb <= EXACT_MAX_TOTAL && ties.is_empty() {
        (exact_p(u, na, nb), PMethod::Exact)
    } else {
        (normal_p(u, na, nb, &ties), PMethod::Normal)
    };
    // keep p inside (0, 1] when the tail underflows
    let p = p.clamp(f64::MIN_POSITIVE, 1.0);
    Ok(Comparison {
        group_a: a.to_vec(),
        group_b: b.to_vec(),
        u,
        p_two_sided: p,
        stars: Stars::from_p(p),
        method,
    })
}

/// Counts of each U value over all `C(na+nb, na)` rank assignments.
fn exact_u_counts(na: usize, nb: usize) -> Vec<u64> {
    let n = na + nb;
    let mut counts = vec![0u64; na * nb + 1];
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let rank_sum: usize = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| i + 1).sum();
        counts[rank_sum - na * (na + 1) / 2] += 1;
    }
    counts
}

fn exact_p(u: f64, na: usize, nb: usize) -> f64 {
    let counts = exact_u_counts(na, nb);
    let total: u64 = counts.iter().sum();
    let u = u.round() as usize;
    let lower: u64 = counts[..=u].iter().sum();
    let upper: u64 = counts[u..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total as f64).min(1.0)
}

fn normal_p(u: f64, na: usize, nb: usize, ties: &[usize]) -> f64 {
    let (na, nb) = (na as f64, nb as f64);
    let n = na + nb;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = if n > 1.0 {
        na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    } else {
        0.0
    };
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - na * nb / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Sample mean and the half-width of its two-sided 95% Student-t interval.
pub fn mean_ci95(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::contract(
            "mean_ci95",
            format!("needs at least 2 values, got {}", x.len()),
        ));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = std_dev(x, mean);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Ok((mean, t * sd / n.sqrt()))
}

/// Sample standard deviation (`n − 1` denominator) around `mean`.
pub fn std_dev(x: &[f64], mean: f64) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of sorted data, `q ∈ [0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
