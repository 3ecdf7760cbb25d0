//! Interval estimates, line fits, and the per-trial seed derivation.

use sha2::{Digest, Sha256};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Wilson score interval for a binomial proportion at 95% confidence.
/// Returns `(0, 1)` for zero trials.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let margin = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // At the boundaries the bound is exactly the point estimate; pinning
    // it avoids one-ulp sqrt roundoff poking past 0 or 1.
    let low = if successes == 0 {
        0.0
    } else {
        ((center - margin) / denom).max(0.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        ((center + margin) / denom).min(1.0)
    };
    (low, high)
}

/// Summary of rounds-to-event samples. Median and p95 use the
/// nearest-rank convention on the sorted samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    pub mean: f64,
    pub median: u64,
    pub p95: u64,
    pub max: u64,
}

/// Nearest-rank percentile of a sorted, nonempty slice.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    debug_assert!(!sorted.is_empty());
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn round_stats(rounds: &[u64]) -> Option<RoundStats> {
    if rounds.is_empty() {
        return None;
    }
    let mut sorted = rounds.to_vec();
    sorted.sort_unstable();
    let sum: u64 = sorted.iter().sum();
    Some(RoundStats {
        mean: sum as f64 / sorted.len() as f64,
        median: percentile(&sorted, 0.5),
        p95: percentile(&sorted, 0.95),
        max: *sorted.last().expect("nonempty"),
    })
}

/// Ordinary least-squares line through `(x, y)` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LineFit {
    pub fn at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Fits `y = slope * x + intercept`, returning `None` for fewer than two
/// points or a degenerate x spread. A perfectly flat response fits with
/// `r_squared = 1`.
pub fn fit_line(points: &[(f64, f64)]) -> Option<LineFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|&(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|&(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|&(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let syy: f64 = points.iter().map(|&(_, y)| (y - mean_y).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Stable per-trial seed: the first eight bytes, little-endian, of
/// SHA-256 over `"cbm-trial-seed-v1" || base_seed (LE u64) ||
/// point length (LE u64) || point bytes || trial (LE u64)`.
///
/// Documented so grids can be partially re-run; changing it is a format
/// break.
pub fn derive_seed(base_seed: u64, point: &str, trial: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"cbm-trial-seed-v1");
    hasher.update(base_seed.to_le_bytes());
    hasher.update((point.len() as u64).to_le_bytes());
    hasher.update(point.as_bytes());
    hasher.update(trial.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
