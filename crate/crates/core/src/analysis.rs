//! Resampling tests, correlations, similarity matrices and description-length reports.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;

pub const DEFAULT_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("board ids differ between sources: {0}")]
    IdMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooFew { need: 3, got: x.len() });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn two_sided(below: usize, above: usize, n: usize) -> f64 {
    let p = 2.0 * (below.min(above) as f64 / n as f64);
    p.clamp(2.0 / n as f64, 1.0)
}

/// Bootstrap test on the difference of means, resampling each group independently.
pub fn bootstrap_test(a: &[f64], b: &[f64], n: usize, seed: u64) -> Result<TestResult, AnalysisError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(AnalysisError::TooFew { need: 2, got: s.len() });
        }
    }
    let n = n.max(1);
    let mut rng = rng_from_seed(seed);
    let (mut below, mut above) = (0, 0);
    let resample_mean = |xs: &[f64], rng: &mut crate::rng::Rng| {
        (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64
    };
    for _ in 0..n {
        let d = resample_mean(a, &mut rng) - resample_mean(b, &mut rng);
        below += usize::from(d <= 0.0);
        above += usize::from(d >= 0.0);
    }
    Ok(TestResult {
        statistic: mean(a) - mean(b),
        p_value: two_sided(below, above, n),
        n_resamples: n,
        seed,
    })
}

/// Permutation test for `pearson(x, y1) − pearson(x, y2)`; the null swaps
/// each item's `(y1, y2)` pair with probability one half.
pub fn perm_corr_diff(x: &[f64], y1: &[f64], y2: &[f64], n: usize, seed: u64) -> Result<TestResult, AnalysisError> {
    if x.len() < 3 {
        return Err(AnalysisError::TooFew { need: 3, got: x.len() });
    }
    if y1.len() != x.len() || y2.len() != x.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y1.len().max(y2.len())));
    }
    let observed = pearson(x, y1)? - pearson(x, y2)?;
    let n = n.max(1);
    let mut rng = rng_from_seed(seed);
    let (mut a, mut b) = (y1.to_vec(), y2.to_vec());
    let (mut below, mut above) = (0, 0);
    for _ in 0..n {
        for i in 0..x.len() {
            let swap = rng.random::<bool>();
            (a[i], b[i]) = if swap { (y2[i], y1[i]) } else { (y1[i], y2[i]) };
        }
        // a permuted column can be constant even when the originals are not
        let s = match (pearson(x, &a), pearson(x, &b)) {
            (Ok(p), Ok(q)) => p - q,
            _ => 0.0,
        };
        below += usize::from(s <= observed);
        above += usize::from(s >= observed);
    }
    Ok(TestResult {
        statistic: observed,
        p_value: two_sided(below, above, n),
        n_resamples: n,
        seed,
    })
}

/// Pairwise Pearson correlations; symmetric with an exact unit diagonal.
pub fn rsa_matrix(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let k = vectors.len();
    if k < 2 {
        return Err(AnalysisError::TooFew { need: 2, got: k });
    }
    let mut m = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let r = pearson(&vectors[i], &vectors[j])?;
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    for v in vectors {
        pearson(v, v)?;
    }
    Ok(m)
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci(xs: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = rng_from_seed(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    let tail = (1.0 - level) / 2.0;
    (q(tail), q(1.0 - tail))
}

/// One-sample Kolmogorov–Smirnov statistic against U[0,1] and its
/// asymptotic p-value.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DlRow {
    pub board_id: String,
    pub human: f64,
    pub synthetic: f64,
    pub program_lib: f64,
    pub program_nolib: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DlReport {
    pub rows: Vec<DlRow>,
    pub r_human_lib: f64,
    pub r_human_nolib: f64,
    pub diff: TestResult,
}

impl DlReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("board_id,human,synthetic,program_lib,program_nolib\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{}\n",
                r.board_id, r.human, r.synthetic, r.program_lib, r.program_nolib
            );
        }
        s
    }
}

/// Correlates human description lengths with program sizes with and without
/// the learned library. All maps are keyed by board id and must agree.
pub fn dl_report(
    human: &BTreeMap<String, f64>,
    synthetic: &BTreeMap<String, f64>,
    program_lib: &BTreeMap<String, f64>,
    program_nolib: &BTreeMap<String, f64>,
    n: usize,
    seed: u64,
) -> Result<DlReport, AnalysisError> {
    for (name, m) in [("synthetic", synthetic), ("program_lib", program_lib), ("program_nolib", program_nolib)] {
        if m.keys().ne(human.keys()) {
            return Err(AnalysisError::IdMismatch(name.into()));
        }
    }
    let rows: Vec<DlRow> = human
        .iter()
        .map(|(id, &h)| DlRow {
            board_id: id.clone(),
            human: h,
            synthetic: synthetic[id],
            program_lib: program_lib[id],
            program_nolib: program_nolib[id],
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.human).collect();
    let y1: Vec<f64> = rows.iter().map(|r| r.program_lib).collect();
    let y2: Vec<f64> = rows.iter().map(|r| r.program_nolib).collect();
    Ok(DlReport {
        r_human_lib: pearson(&x, &y1)?,
        r_human_nolib: pearson(&x, &y2)?,
        diff: perm_corr_diff(&x, &y1, &y2, n, seed)?,
        rows,
    })
}
