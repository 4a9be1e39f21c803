use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub label: String,
    /// `mean(a) − mean(b)` in percentage points.
    pub delta_pp: f64,
    /// `None` when every paired difference is identical.
    pub t_statistic: Option<f64>,
    pub dof: usize,
    /// `None` when the test is not applicable (all differences zero).
    pub p_value: Option<f64>,
    pub ci95_pp: [f64; 2],
    pub n: usize,
}

impl SignificanceReport {
    /// The p-value as printed in tables, `--` when not applicable.
    pub fn p_display(&self) -> String {
        match self.p_value {
            None => "--".into(),
            Some(p) if p < 1e-3 => format!("{p:.1e}"),
            Some(p) => format!("{p:.3}"),
        }
    }
}

/// Paired t-test on per-episode correctness with a seeded percentile
/// bootstrap interval on the accuracy difference.
pub fn paired_t_test(label: &str, a: &[bool], b: &[bool], seed: u64) -> Result<SignificanceReport> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(u8::from(x)) - f64::from(u8::from(y)))
        .collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let dof = d.len() - 1;
    let (t, p) = if var > 0.0 {
        let t = mean / (var.sqrt() / n.sqrt());
        let dist = StudentsT::new(0.0, 1.0, dof as f64)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        (Some(t), Some(2.0 * dist.cdf(-t.abs())))
    } else if mean == 0.0 {
        (None, None)
    } else {
        (None, Some(0.0))
    };
    let [lo, hi] = bootstrap_ci(&d, BOOTSTRAP_RESAMPLES, seed);
    Ok(SignificanceReport {
        label: label.into(),
        delta_pp: 100.0 * mean,
        t_statistic: t,
        dof,
        p_value: p,
        ci95_pp: [100.0 * lo, 100.0 * hi],
        n: d.len(),
    })
}

/// 95% percentile interval of the mean of `d` over `resamples` seeded
/// resamples with replacement.
pub fn bootstrap_ci(d: &[f64], resamples: usize, seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = d.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| d[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    [quantile(&means, 0.025), quantile(&means, 0.975)]
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}
