//! Statistics used to compare interpretation methods: normalized ℓ1 ranking
//! distance, hypergeometric enrichment, empirical CDFs and one-sided
//! two-sample Kolmogorov-Smirnov tests.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("k = {k} but only {available} predicted items")]
    TooFewItems { k: usize, available: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(
        "invalid hypergeometric parameters N={population} K={successes} n={sample} x={observed}"
    )]
    Hypergeom {
        population: u64,
        successes: u64,
        sample: u64,
        observed: u64,
    },
    #[error("{0} sample is empty")]
    Empty(&'static str),
    #[error("{0} sample contains a non-finite value")]
    NonFinite(&'static str),
}

/// How predicted scores are ordered when picking the top `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreOrder {
    /// Descending raw score.
    #[default]
    Descending,
    /// Descending absolute score (signed salience maps).
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingComparison {
    pub k: usize,
    pub raw_l1: u64,
    /// `floor(k² / 2)`, the ℓ1 distance between a ranking and its reverse.
    pub normalizer: u64,
    pub normalized: f64,
    /// Selected items with no truth score; they were scored 0.
    pub missing_truth: Vec<String>,
}

/// Normalized ℓ1 distance between predicted and true ranks of the top-`k`
/// predicted items.
///
/// Items are chosen by predicted score (ties by item id) and ranked `1..=k`;
/// the same items are then ranked by truth score descending, truth ties going
/// to the better predicted rank.
pub fn compare_rankings(
    pred: &BTreeMap<String, f64>,
    truth: &BTreeMap<String, f64>,
    k: usize,
    order: ScoreOrder,
) -> Result<RankingComparison, StatsError> {
    if k == 0 {
        return Err(StatsError::ZeroK);
    }
    if k > pred.len() {
        return Err(StatsError::TooFewItems {
            k,
            available: pred.len(),
        });
    }
    let key = |s: f64| match order {
        ScoreOrder::Descending => s,
        ScoreOrder::Magnitude => s.abs(),
    };
    let mut items: Vec<(&String, f64)> = pred.iter().map(|(id, &s)| (id, s)).collect();
    items.sort_by(|a, b| desc(key(a.1), key(b.1)).then_with(|| a.0.cmp(b.0)));
    items.truncate(k);

    let mut missing_truth = Vec::new();
    let truth_scores: Vec<f64> = items
        .iter()
        .map(|(id, _)| {
            truth.get(*id).copied().unwrap_or_else(|| {
                missing_truth.push((*id).clone());
                0.0
            })
        })
        .collect();
    // Positions in `items` are predicted ranks minus one.
    let mut by_truth: Vec<usize> = (0..k).collect();
    by_truth.sort_by(|&a, &b| desc(truth_scores[a], truth_scores[b]).then(a.cmp(&b)));

    let raw_l1: u64 = by_truth
        .iter()
        .enumerate()
        .map(|(truth_pos, &pred_pos)| truth_pos.abs_diff(pred_pos) as u64)
        .sum();
    let normalizer = (k as u64 * k as u64) / 2;
    let normalized = if normalizer == 0 {
        0.0
    } else {
        raw_l1 as f64 / normalizer as f64
    };
    Ok(RankingComparison {
        k,
        raw_l1,
        normalizer,
        normalized,
        missing_truth,
    })
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or_else(|| b.total_cmp(&a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentResult {
    /// N: universe size.
    pub population: u64,
    /// K: target items in the universe.
    pub successes: u64,
    /// n: size of the tested group.
    pub sample: u64,
    /// x: targets inside the group.
    pub observed: u64,
    pub p_value: f64,
}

fn check_hypergeom(
    population: u64,
    successes: u64,
    sample: u64,
    observed: u64,
) -> Result<(), StatsError> {
    if successes > population || sample > population || observed > successes.min(sample) {
        return Err(StatsError::Hypergeom {
            population,
            successes,
            sample,
            observed,
        });
    }
    Ok(())
}

/// `P(X = x)` for `X ~ Hypergeometric(N, K, n)`.
pub fn hypergeom_pmf(
    population: u64,
    successes: u64,
    sample: u64,
    x: u64,
) -> Result<f64, StatsError> {
    check_hypergeom(population, successes, sample, x)?;
    if sample - x > population - successes {
        return Ok(0.0);
    }
    Ok(log_pmf(population, successes, sample, x).exp())
}

fn log_pmf(population: u64, successes: u64, sample: u64, i: u64) -> f64 {
    ln_binomial(successes, i) + ln_binomial(population - successes, sample - i)
        - ln_binomial(population, sample)
}

/// Upper tail `P(X ≥ x)`. Tails below the smallest positive `f64` are
/// reported as `f64::MIN_POSITIVE`; use [`hypergeom_upper_ln`] for those.
pub fn hypergeom_upper(
    population: u64,
    successes: u64,
    sample: u64,
    x: u64,
) -> Result<f64, StatsError> {
    let ln_p = hypergeom_upper_ln(population, successes, sample, x)?;
    Ok(ln_p.exp().clamp(f64::MIN_POSITIVE, 1.0))
}

/// Natural log of the upper tail, summed in log space.
pub fn hypergeom_upper_ln(
    population: u64,
    successes: u64,
    sample: u64,
    x: u64,
) -> Result<f64, StatsError> {
    check_hypergeom(population, successes, sample, x)?;
    let lowest = sample.saturating_sub(population - successes);
    if x <= lowest {
        return Ok(0.0);
    }
    let hi = successes.min(sample);
    let logs: Vec<f64> = (x..=hi)
        .map(|i| log_pmf(population, successes, sample, i))
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - peak).exp()).sum();
    Ok((peak + sum.ln()).min(0.0))
}

/// Enrichment of `targets` in `group` within a universe of `universe` items.
///
/// `successes` is the number of targets; callers restrict `targets` to the
/// universe beforehand.
pub fn enrichment<T: Ord>(
    group: &BTreeSet<T>,
    targets: &BTreeSet<T>,
    universe: u64,
) -> Result<EnrichmentResult, StatsError> {
    let successes = targets.len() as u64;
    let sample = group.len() as u64;
    let observed = group.intersection(targets).count() as u64;
    let p_value = hypergeom_upper(universe, successes, sample, observed)?;
    Ok(EnrichmentResult {
        population: universe,
        successes,
        sample,
        observed,
        p_value,
    })
}

fn sorted_finite(values: &[f64], which: &'static str) -> Result<Vec<f64>, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty(which));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(which));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Right-continuous step function: each distinct value with the fraction of
/// the sample at or below it.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>, StatsError> {
    let sorted = sorted_finite(values, "input")?;
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = f,
            _ => out.push((x, f)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KsDirection {
    /// Alternative: the ECDF of `a` lies above that of `b` (`a` tends smaller).
    AAboveB,
    /// Alternative: the ECDF of `b` lies above that of `a`.
    BAboveA,
}

impl FromStr for KsDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a-above-b" => Ok(KsDirection::AAboveB),
            "b-above-a" => Ok(KsDirection::BAboveA),
            other => Err(format!(
                "unknown direction `{other}` (expected a-above-b or b-above-a)"
            )),
        }
    }
}

impl fmt::Display for KsDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KsDirection::AAboveB => "a-above-b",
            KsDirection::BAboveA => "b-above-a",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub direction: KsDirection,
    pub n_a: usize,
    pub n_b: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Directed supremum of `F_a - F_b` (or `F_b - F_a`), never below 0.
pub fn ks_statistic(a: &[f64], b: &[f64], direction: KsDirection) -> Result<f64, StatsError> {
    let a = sorted_finite(a, "first")?;
    let b = sorted_finite(b, "second")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let diff = i as f64 / na - j as f64 / nb;
        best = best.max(match direction {
            KsDirection::AAboveB => diff,
            KsDirection::BAboveA => -diff,
        });
    }
    Ok(best)
}

/// One-sided two-sample KS test with the asymptotic p-value
/// `exp(-2 D² m n / (m + n))`, clipped to `(0, 1]`.
pub fn ks_1tail(a: &[f64], b: &[f64], direction: KsDirection) -> Result<KsResult, StatsError> {
    let statistic = ks_statistic(a, b, direction)?;
    let (m, n) = (a.len() as f64, b.len() as f64);
    let p_value = (-2.0 * statistic * statistic * m * n / (m + n))
        .exp()
        .clamp(f64::MIN_POSITIVE, 1.0);
    Ok(KsResult {
        direction,
        n_a: a.len(),
        n_b: b.len(),
        statistic,
        p_value,
    })
}
