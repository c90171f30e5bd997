//! Nonparametric comparison tests used to analyze experiment results:
//! a Kolmogorov-Smirnov normality check (with parameters fitted from the
//! sample), the Aligned Friedman rank test across methods and scenario
//! blocks, and the paired Wilcoxon signed-rank test.
//!
//! Everything here is pure and deterministic; rank ties always receive
//! average ranks.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("sample has zero variance")]
    DegenerateSample,
    #[error("every pair is tied")]
    AllTies,
    #[error("{0}")]
    BadInput(String),
}

/// Aggregated experiment results: one value per (block, method) cell,
/// typically the median over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultMatrix {
    methods: Vec<String>,
    blocks: Vec<String>,
    /// Row per block, column per method.
    values: Vec<Vec<f64>>,
}

impl ResultMatrix {
    pub fn new(
        methods: Vec<String>,
        blocks: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, StatsError> {
        if methods.len() < 2 {
            return Err(StatsError::BadInput(format!(
                "need at least 2 methods, got {}",
                methods.len()
            )));
        }
        if blocks.len() < 2 {
            return Err(StatsError::BadInput(format!(
                "need at least 2 blocks, got {}",
                blocks.len()
            )));
        }
        if values.len() != blocks.len() {
            return Err(StatsError::BadInput(format!(
                "expected {} rows, got {}",
                blocks.len(),
                values.len()
            )));
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != methods.len() {
                return Err(StatsError::BadInput(format!(
                    "row {} has {} cells, expected {}",
                    i,
                    row.len(),
                    methods.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(StatsError::BadInput(format!("row {i} has a non-finite cell")));
            }
        }
        Ok(Self {
            methods,
            blocks,
            values,
        })
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn blocks(&self) -> &[String] {
        &self.blocks
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Whether large or small metric values should earn the best (lowest) rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// Average ranks (1-based) of `values` in ascending order; ties share the
/// mean of the positions they span.
fn ranks_ascending(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Result of [`aligned_friedman`]: methods sorted best-first with their mean
/// aligned rank (lower is better), plus the chi-square statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub ranking: Vec<(String, f64)>,
    pub statistic: f64,
    pub p_value: f64,
}

/// Aligned Friedman rank test.
///
/// Each block is centered on its mean, the aligned observations are ranked
/// globally with rank 1 going to the best observation per `direction`, and
/// the chi-square statistic is computed from the per-method rank sums. The
/// p-value uses the chi-square distribution with `methods - 1` degrees of
/// freedom.
pub fn aligned_friedman(matrix: &ResultMatrix, direction: Direction) -> FriedmanResult {
    let k = matrix.methods.len();
    let n = matrix.blocks.len();

    // Align, then flatten block-major so ranks map back by index.
    let mut aligned: Vec<f64> = Vec::with_capacity(k * n);
    for row in &matrix.values {
        let mean = row.iter().sum::<f64>() / k as f64;
        for &x in row {
            aligned.push(x - mean);
        }
    }
    // Rank 1 is the best observation: descending by value when higher is
    // better, which is ascending on the negated values.
    let keyed: Vec<f64> = match direction {
        Direction::HigherIsBetter => aligned.iter().map(|x| -x).collect(),
        Direction::LowerIsBetter => aligned.clone(),
    };
    let ranks = ranks_ascending(&keyed);

    let mut method_sums = vec![0.0f64; k];
    let mut block_sums = vec![0.0f64; n];
    for (idx, &r) in ranks.iter().enumerate() {
        method_sums[idx % k] += r;
        block_sums[idx / k] += r;
    }

    let kn = (k * n) as f64;
    let numerator = (k as f64 - 1.0)
        * (method_sums.iter().map(|s| s * s).sum::<f64>()
            - (k as f64 * (n as f64).powi(2) / 4.0) * (kn + 1.0).powi(2));
    let denominator = kn * (kn + 1.0) * (2.0 * kn + 1.0) / 6.0
        - block_sums.iter().map(|s| s * s).sum::<f64>() / k as f64;
    // A zero denominator only happens in fully degenerate data where the
    // numerator is zero as well; report the null outcome.
    let statistic = if denominator == 0.0 {
        0.0
    } else {
        numerator / denominator
    };
    let p_value = if statistic <= 0.0 {
        1.0
    } else {
        ChiSquared::new(k as f64 - 1.0)
            .expect("k >= 2")
            .sf(statistic)
            .clamp(0.0, 1.0)
    };

    let mut ranking: Vec<(String, f64)> = matrix
        .methods
        .iter()
        .cloned()
        .zip(method_sums.iter().map(|s| s / n as f64))
        .collect();
    ranking.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite ranks"));
    FriedmanResult {
        ranking,
        statistic,
        p_value,
    }
}

/// Sidedness of the Wilcoxon test with respect to `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// `a` tends to exceed `b`.
    Greater,
    /// `a` tends to fall below `b`.
    Less,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences (W+).
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs that survived zero-difference removal.
    pub n_used: usize,
}

/// Paired Wilcoxon signed-rank test on `a` vs `b`.
///
/// Zero differences are dropped; `|a - b|` gets average ranks. For up to 20
/// effective pairs the p-value enumerates the exact conditional null
/// distribution (ties included); beyond that it uses the tie-corrected
/// normal approximation without continuity correction.
pub fn wilcoxon_signed_rank(
    a: &[f64],
    b: &[f64],
    alternative: Alternative,
) -> Result<WilcoxonResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::BadInput(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 6 {
        return Err(StatsError::BadInput(format!(
            "need at least 6 pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(StatsError::AllTies);
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = ranks_ascending(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    let (p_greater, p_less) = if n <= 20 {
        exact_tail_probabilities(&ranks, w_plus)
    } else {
        normal_tail_probabilities(&abs, &ranks, w_plus)
    };
    let p_value = match alternative {
        Alternative::Greater => p_greater,
        Alternative::Less => p_less,
        Alternative::TwoSided => (2.0 * p_greater.min(p_less)).min(1.0),
    };
    Ok(WilcoxonResult {
        statistic: w_plus,
        p_value: p_value.clamp(0.0, 1.0),
        n_used: n,
    })
}

/// Exact null tails of W+ by dynamic programming over sign assignments.
/// Ranks are doubled so average ranks become integers.
fn exact_tail_probabilities(ranks: &[f64], w_plus: f64) -> (f64, f64) {
    let weights: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = weights.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &w in &weights {
        for s in (w..=total).rev() {
            counts[s] += counts[s - w];
        }
    }
    let denom = 2f64.powi(ranks.len() as i32);
    let obs = (2.0 * w_plus).round() as usize;
    let ge: u64 = counts[obs..].iter().sum();
    let le: u64 = counts[..=obs].iter().sum();
    (ge as f64 / denom, le as f64 / denom)
}

/// Normal-approximation tails with tie-corrected variance.
fn normal_tail_probabilities(abs: &[f64], ranks: &[f64], w_plus: f64) -> (f64, f64) {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // Tie groups over |d| shrink the variance.
    let mut sorted = abs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite differences"));
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        variance -= (t.powi(3) - t) / 48.0;
        i = j + 1;
    }
    let sd = variance.sqrt();
    if sd == 0.0 {
        return (1.0, 1.0);
    }
    let z = (w_plus - mean) / sd;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    (unit.sf(z), unit.cdf(z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges fast for small lambda.
        let base = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda
            * ((-base).exp() + (-9.0 * base).exp() + (-25.0 * base).exp());
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..100 {
            let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// One-sample normality check: the sample is compared against a normal
/// distribution with the sample's own mean and standard deviation, and the
/// KS distance is converted to a p-value with the asymptotic Kolmogorov
/// distribution. Fitting the parameters makes the p-value conservative.
pub fn ks_normality(sample: &[f64]) -> Result<KsResult, StatsError> {
    let n = sample.len();
    if n < 5 {
        return Err(StatsError::BadInput(format!(
            "need at least 5 observations, got {n}"
        )));
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(StatsError::DegenerateSample);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let normal = Normal::new(mean, sd).expect("positive sd");
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal.cdf(x);
        let upper = (i as f64 + 1.0) / n as f64 - f;
        let lower = f - i as f64 / n as f64;
        d = d.max(upper).max(lower);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf((n as f64).sqrt() * d),
    })
}
