//! Two-sample Kolmogorov-Smirnov testing and report aggregation.
//!
//! The KS statistic is evaluated at the pooled distinct values with the
//! right-continuous ECDF convention, which pins down tie handling: the
//! Z-liar metrics being compared are small integers and ties are the
//! norm. Internally the statistic is carried as the integer
//! `T = max |i * m - j * n|` over pooled points, so threshold
//! comparisons in the exact test are free of floating-point edge cases
//! (`d = T / (n * m)`).
//!
//! The exact p-value conditions on the pooled multiset: it is the
//! probability, over all equally likely assignments of the pooled
//! values into groups of sizes n and m, that the statistic reaches the
//! observed value. A lattice dynamic program counts assignments group
//! by group, so heavily tied 10-vs-10 samples are exact. Larger inputs
//! fall back to the asymptotic Kolmogorov distribution with the usual
//! effective-size correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csstest::ZScanReport;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("samples must be non-empty")]
    EmptySample,
    #[error("samples must not contain NaN")]
    NanInput,
    #[error("need at least two sources, got {0}")]
    TooFewSources(usize),
    #[error("source {label} has {got} reports, need at least 2")]
    TooFewReports { label: String, got: usize },
    #[error("source {label} report {index} tests composites {got:?}, expected {expected:?}")]
    MismatchedComposites {
        label: String,
        index: usize,
        expected: Vec<u64>,
        got: Vec<u64>,
    },
}

/// Exact enumeration is used whenever `n * m` is at most this.
pub const EXACT_PAIR_LIMIT: u64 = 10_000;

/// Pairs are flagged significant strictly below this p-value.
pub const SIGNIFICANCE_THRESHOLD: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KsMethod {
    Exact,
    Asymptotic,
}

/// Result of a two-sample KS test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
    pub n: usize,
    pub m: usize,
    pub method: KsMethod,
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<KsResult, StatsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(StatsError::NanInput);
    }
    let mut xs = xs.to_vec();
    let mut ys = ys.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let n = xs.len();
    let m = ys.len();

    let (t_obs, groups) = pooled_statistic(&xs, &ys);
    let d = t_obs as f64 / (n as f64 * m as f64);

    let (p_value, method) = if (n as u64) * (m as u64) <= EXACT_PAIR_LIMIT {
        (exact_p(&groups, n, m, t_obs), KsMethod::Exact)
    } else {
        (asymptotic_p(d, n, m), KsMethod::Asymptotic)
    };
    Ok(KsResult {
        d,
        p_value,
        n,
        m,
        method,
    })
}

/// Walks the pooled sorted samples, returning the integer statistic
/// `max |i * m - j * n|` and the per-distinct-value group sizes
/// `(count in xs, count in ys)`.
fn pooled_statistic(xs: &[f64], ys: &[f64]) -> (u64, Vec<(usize, usize)>) {
    let n = xs.len();
    let m = ys.len();
    let mut groups = Vec::new();
    let mut t_max = 0u64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n || j < m {
        let v = match (xs.get(i), ys.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        let mut cx = 0usize;
        while i < n && xs[i] == v {
            i += 1;
            cx += 1;
        }
        let mut cy = 0usize;
        while j < m && ys[j] == v {
            j += 1;
            cy += 1;
        }
        groups.push((cx, cy));
        let t = (i as i64 * m as i64 - j as i64 * n as i64).unsigned_abs();
        t_max = t_max.max(t);
    }
    (t_max, groups)
}

/// Probability that the statistic reaches `t_obs` over all equally
/// likely splits of the pooled multiset into samples of sizes n and m.
///
/// Dynamic program over tie groups: `f[i]` accumulates the number of
/// ways to assign the groups seen so far with `i` values labeled as the
/// first sample, keeping every intermediate statistic strictly below
/// `t_obs`. The complement of the surviving mass is the p-value.
fn exact_p(groups: &[(usize, usize)], n: usize, m: usize, t_obs: u64) -> f64 {
    if t_obs == 0 {
        return 1.0;
    }
    // A single tie group can span the whole pool.
    let choose = binomial_table(n + m);
    let mut f = vec![0.0f64; n + 1];
    f[0] = 1.0;
    let mut assigned = 0usize; // pooled values consumed so far
    let mut max_i = 0usize;
    for &(cx, cy) in groups {
        let size = cx + cy;
        let mut next = vec![0.0f64; n + 1];
        let hi = (max_i + size).min(n);
        for i in 0..=max_i {
            if f[i] == 0.0 {
                continue;
            }
            let take_max = size.min(n - i);
            for a in 0..=take_max {
                next[i + a] += f[i] * choose[size][a];
            }
        }
        assigned += size;
        // Prune states at the group boundary: |i*m - j*n| must stay
        // strictly below the observed statistic.
        max_i = hi;
        for (i, slot) in next.iter_mut().enumerate().take(hi + 1) {
            let j = assigned as i64 - i as i64;
            if j < 0 || j > m as i64 {
                *slot = 0.0;
                continue;
            }
            let t = (i as i64 * m as i64 - j * n as i64).unsigned_abs();
            if t >= t_obs {
                *slot = 0.0;
            }
        }
        f = next;
    }
    let total = choose_nm(n + m, n);
    (1.0 - f[n] / total).clamp(0.0, 1.0)
}

/// Pascal triangle up to row `rows` as f64.
fn binomial_table(rows: usize) -> Vec<Vec<f64>> {
    let mut t = Vec::with_capacity(rows + 1);
    t.push(vec![1.0]);
    for r in 1..=rows {
        let prev: &Vec<f64> = &t[r - 1];
        let mut row = vec![1.0; r + 1];
        for c in 1..r {
            row[c] = prev[c - 1] + prev[c];
        }
        t.push(row);
    }
    t
}

fn choose_nm(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Asymptotic two-sample p-value: the Kolmogorov distribution evaluated
/// at `sqrt(n m / (n + m)) * d`.
fn asymptotic_p(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    kolmogorov_q(ne.sqrt() * d)
}

/// Survival function of the Kolmogorov distribution,
/// `Q(t) = 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 t^2)`.
fn kolmogorov_q(t: f64) -> f64 {
    if t < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * t * t).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Five-number summary with quartiles by the median-of-halves
/// convention (the middle element is excluded from both halves when the
/// count is odd).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn five_number(values: &[f64]) -> Result<FiveNumber, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(StatsError::NanInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = |s: &[f64]| -> f64 {
        let l = s.len();
        if l % 2 == 1 {
            s[l / 2]
        } else {
            (s[l / 2 - 1] + s[l / 2]) / 2.0
        }
    };
    let l = v.len();
    let median = mid(&v);
    let lower = &v[..l / 2];
    let upper = &v[l.div_ceil(2)..];
    Ok(FiveNumber {
        min: v[0],
        q1: if lower.is_empty() { median } else { mid(lower) },
        median,
        q3: if upper.is_empty() { median } else { mid(upper) },
        max: v[l - 1],
    })
}

/// Per-source aggregation of scan reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub label: String,
    /// One average-metric value per scanned string, in input order.
    pub metrics: Vec<f64>,
    pub boxplot: FiveNumber,
    /// Mean Z-liar count per composite across the source's strings.
    pub per_composite_mean: BTreeMap<u64, f64>,
}

/// One pairwise KS comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseKs {
    pub a: String,
    pub b: String,
    pub d: f64,
    pub p_value: f64,
    pub method: KsMethod,
    pub significant: bool,
}

/// Cross-source comparison: metric distributions, pairwise KS
/// p-values, and the table-shaped summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub significance_threshold: f64,
    pub composites: Vec<u64>,
    pub sources: Vec<SourceSummary>,
    pub pairwise: Vec<PairwiseKs>,
    /// Labels of pairs with p below the threshold.
    pub significant: Vec<(String, String)>,
}

/// Aggregates scan reports grouped by source. Needs at least two
/// sources with at least two reports each, all scanned over the same
/// composite set.
pub fn aggregate(groups: &[(String, Vec<ZScanReport>)]) -> Result<ComparisonReport, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewSources(groups.len()));
    }
    let expected: Vec<u64> = groups[0].1.first().map_or_else(Vec::new, |r| {
        r.per_composite.keys().copied().collect()
    });
    let mut sources = Vec::with_capacity(groups.len());
    for (label, reports) in groups {
        if reports.len() < 2 {
            return Err(StatsError::TooFewReports {
                label: label.clone(),
                got: reports.len(),
            });
        }
        let mut sums: BTreeMap<u64, f64> = expected.iter().map(|&n| (n, 0.0)).collect();
        for (index, report) in reports.iter().enumerate() {
            let got: Vec<u64> = report.per_composite.keys().copied().collect();
            if got != expected {
                return Err(StatsError::MismatchedComposites {
                    label: label.clone(),
                    index,
                    expected,
                    got,
                });
            }
            for (&n, scan) in &report.per_composite {
                *sums.get_mut(&n).unwrap() += scan.zliar_count as f64;
            }
        }
        let per_composite_mean: BTreeMap<u64, f64> = sums
            .into_iter()
            .map(|(n, s)| (n, s / reports.len() as f64))
            .collect();
        let metrics: Vec<f64> = reports.iter().map(|r| r.average_metric).collect();
        sources.push(SourceSummary {
            label: label.clone(),
            boxplot: five_number(&metrics)?,
            metrics,
            per_composite_mean,
        });
    }
    let mut pairwise = Vec::new();
    let mut significant = Vec::new();
    for i in 0..sources.len() {
        for j in (i + 1)..sources.len() {
            let ks = ks_two_sample(&sources[i].metrics, &sources[j].metrics)?;
            let is_significant = ks.p_value < SIGNIFICANCE_THRESHOLD;
            if is_significant {
                significant.push((sources[i].label.clone(), sources[j].label.clone()));
            }
            pairwise.push(PairwiseKs {
                a: sources[i].label.clone(),
                b: sources[j].label.clone(),
                d: ks.d,
                p_value: ks.p_value,
                method: ks.method,
                significant: is_significant,
            });
        }
    }
    Ok(ComparisonReport {
        significance_threshold: SIGNIFICANCE_THRESHOLD,
        composites: expected,
        sources,
        pairwise,
        significant,
    })
}

/// Per-composite mean Z-liar counts, one row per source.
pub fn table1_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("source");
    for n in &report.composites {
        out.push_str(&format!(",{n}"));
    }
    out.push('\n');
    for source in &report.sources {
        out.push_str(&source.label);
        for n in &report.composites {
            out.push_str(&format!(",{}", source.per_composite_mean[n]));
        }
        out.push('\n');
    }
    out
}

/// Upper-triangle pairwise p-value matrix.
pub fn pvalues_csv(report: &ComparisonReport) -> String {
    let labels: Vec<&str> = report.sources.iter().map(|s| s.label.as_str()).collect();
    let p = |a: &str, b: &str| -> Option<f64> {
        report
            .pairwise
            .iter()
            .find(|pair| pair.a == a && pair.b == b)
            .map(|pair| pair.p_value)
    };
    let mut out = String::from("source");
    for col in &labels[1..] {
        out.push_str(&format!(",{col}"));
    }
    out.push('\n');
    for (i, row) in labels[..labels.len() - 1].iter().enumerate() {
        out.push_str(row);
        for col in &labels[1..] {
            match p(row, col) {
                Some(v) if labels[1..].iter().position(|c| c == col).unwrap() >= i => {
                    out.push_str(&format!(",{v:.4}"));
                }
                _ => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Five-number summaries, one row per source.
pub fn boxplot_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("source,min,q1,median,q3,max\n");
    for s in &report.sources {
        let b = &s.boxplot;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.label, b.min, b.q1, b.median, b.q3, b.max
        ));
    }
    out
}
