//! Rescaled-range (R/S) long-memory statistics for real-valued paths.
//!
//! The statistic of a window is the range of the mean-adjusted partial sums
//! of the window's increments divided by the window standard deviation;
//! windows are non-overlapping and degenerate (zero-variance) windows are
//! skipped. The index normalizes by `log tau` so that 0.5 marks a
//! memoryless process, larger values persistence, smaller values
//! anti-persistence.
//!
//! The denominator is the plain standard deviation by default; the
//! autocovariance-corrected variant (Bartlett-weighted sum up to a bandwidth
//! `q`, with a data-driven default bandwidth from the lag-1 autocorrelation)
//! is available as an option.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LongMemError {
    #[error("path of length {len} is too short for window {tau} (need >= 2*tau)")]
    PathTooShort { len: usize, tau: usize },
    #[error("window length {0} must be at least 2")]
    WindowTooSmall(usize),
    #[error("every window is degenerate (zero variance); the statistic is undefined")]
    Degenerate,
    #[error("delay windows must be strictly increasing, each >= 2")]
    BadTaus,
    #[error("no curve value at tau = {0}")]
    MissingTau(usize),
}

/// Denominator used by the rescaled range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Denominator {
    /// Plain (population) standard deviation of the window increments.
    Classic,
    /// Autocovariance-corrected standard deviation with Bartlett weights up
    /// to the given bandwidth; `None` picks the bandwidth from the lag-1
    /// autocorrelation of each window (Andrews-style data-driven rule).
    Corrected { bandwidth: Option<usize> },
}

impl Default for Denominator {
    fn default() -> Self {
        Denominator::Classic
    }
}

/// Detailed result of one rescaled-range evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RsStat {
    pub value: f64,
    pub windows_used: usize,
    pub windows_skipped: usize,
}

fn window_rs(increments: &[f64], denominator: Denominator) -> Option<f64> {
    let m = increments.len() as f64;
    let mean = increments.iter().sum::<f64>() / m;
    let var = increments.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
    if var <= 0.0 {
        return None;
    }
    let mut partial = 0.0;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for x in increments {
        partial += x - mean;
        lo = lo.min(partial);
        hi = hi.max(partial);
    }
    let range = hi - lo;
    let denom_sq = match denominator {
        Denominator::Classic => var,
        Denominator::Corrected { bandwidth } => {
            let q = bandwidth.unwrap_or_else(|| data_driven_bandwidth(increments, mean, var));
            let q = q.min(increments.len() - 1);
            let mut s = var;
            for lag in 1..=q {
                let w = 1.0 - lag as f64 / (q as f64 + 1.0);
                let cov = increments
                    .windows(lag + 1)
                    .map(|w| (w[0] - mean) * (w[lag] - mean))
                    .sum::<f64>()
                    / m;
                s += 2.0 * w * cov;
            }
            if s <= 0.0 {
                var
            } else {
                s
            }
        }
    };
    Some(range / denom_sq.sqrt())
}

/// Bandwidth from the lag-1 autocorrelation:
/// `floor((3m/2)^(1/3) * (2 rho / (1 - rho^2))^(2/3))`, zero when the
/// autocorrelation is non-positive.
fn data_driven_bandwidth(increments: &[f64], mean: f64, var: f64) -> usize {
    let m = increments.len() as f64;
    let rho = increments
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum::<f64>()
        / m
        / var;
    if rho <= 0.0 || rho >= 1.0 {
        return 0;
    }
    let k = (1.5 * m).powf(1.0 / 3.0) * (2.0 * rho / (1.0 - rho * rho)).powf(2.0 / 3.0);
    k.floor() as usize
}

/// Average rescaled range over the non-overlapping windows of `tau`
/// increments each, with skip accounting.
pub fn rs_statistic_detailed(
    path: &[f64],
    tau: usize,
    denominator: Denominator,
) -> Result<RsStat, LongMemError> {
    if tau < 2 {
        return Err(LongMemError::WindowTooSmall(tau));
    }
    if path.len() < 2 * tau {
        return Err(LongMemError::PathTooShort { len: path.len(), tau });
    }
    let increments: Vec<f64> = path.windows(2).map(|w| w[1] - w[0]).collect();
    let windows = increments.len() / tau;
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for w in 0..windows {
        match window_rs(&increments[w * tau..(w + 1) * tau], denominator) {
            Some(rs) => {
                sum += rs;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if used == 0 {
        return Err(LongMemError::Degenerate);
    }
    Ok(RsStat { value: sum / used as f64, windows_used: used, windows_skipped: skipped })
}

/// Average rescaled range with the default (plain) denominator.
pub fn rs_statistic(path: &[f64], tau: usize) -> Result<f64, LongMemError> {
    Ok(rs_statistic_detailed(path, tau, Denominator::Classic)?.value)
}

/// Hurst-style exponent estimate `log(R/S) / log(tau)`; 0.5 is memoryless.
pub fn rs_index(path: &[f64], tau: usize) -> Result<f64, LongMemError> {
    rs_index_with(path, tau, Denominator::Classic)
}

pub fn rs_index_with(
    path: &[f64],
    tau: usize,
    denominator: Denominator,
) -> Result<f64, LongMemError> {
    let rs = rs_statistic_detailed(path, tau, denominator)?.value;
    Ok(rs.ln() / (tau as f64).ln())
}

/// The index as a function of the delay window.
#[derive(Debug, Clone, PartialEq)]
pub struct RsCurve {
    taus: Vec<usize>,
    values: Vec<f64>,
}

impl RsCurve {
    pub fn taus(&self) -> &[usize] {
        &self.taus
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, tau: usize) -> Result<f64, LongMemError> {
        self.taus
            .iter()
            .position(|&t| t == tau)
            .map(|p| self.values[p])
            .ok_or(LongMemError::MissingTau(tau))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.taus.iter().copied().zip(self.values.iter().copied())
    }
}

/// Evaluate the index over a strictly increasing list of delay windows.
pub fn rs_curve(path: &[f64], taus: &[usize]) -> Result<RsCurve, LongMemError> {
    rs_curve_with(path, taus, Denominator::Classic)
}

pub fn rs_curve_with(
    path: &[f64],
    taus: &[usize],
    denominator: Denominator,
) -> Result<RsCurve, LongMemError> {
    if taus.is_empty() || taus.windows(2).any(|w| w[0] >= w[1]) || taus[0] < 2 {
        return Err(LongMemError::BadTaus);
    }
    let values = taus
        .iter()
        .map(|&t| rs_index_with(path, t, denominator))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RsCurve { taus: taus.to_vec(), values })
}

/// Cross-run summary of the index at one delay window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistenceSummary {
    pub mean: f64,
    pub std: f64,
    pub fraction_above_half: f64,
    pub runs: usize,
}

/// Mean, standard deviation, and the fraction of runs above 0.5 at `tau`.
pub fn persistence_summary(
    curves: &[RsCurve],
    tau: usize,
) -> Result<PersistenceSummary, LongMemError> {
    let values: Vec<f64> = curves.iter().map(|c| c.at(tau)).collect::<Result<_, _>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let above = values.iter().filter(|&&v| v > 0.5).count();
    Ok(PersistenceSummary {
        mean,
        std: var.sqrt(),
        fraction_above_half: above as f64 / n,
        runs: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_walk(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut path = vec![0.0];
        for _ in 1..len {
            let step = if rng.random::<bool>() { 1.0 } else { -1.0 };
            path.push(path.last().unwrap() + step);
        }
        path
    }

    #[test]
    fn linear_path_is_degenerate() {
        let path: Vec<f64> = (0..500).map(|k| 2.0 * k as f64).collect();
        assert_eq!(rs_statistic(&path, 50), Err(LongMemError::Degenerate));
    }

    #[test]
    fn preconditions() {
        let path = random_walk(100, 1);
        assert!(matches!(rs_statistic(&path, 60), Err(LongMemError::PathTooShort { .. })));
        assert_eq!(rs_statistic(&path, 1), Err(LongMemError::WindowTooSmall(1)));
        assert_eq!(rs_curve(&path, &[10, 10]), Err(LongMemError::BadTaus));
        assert_eq!(rs_curve(&path, &[20, 10]), Err(LongMemError::BadTaus));
    }

    #[test]
    fn single_window_hand_trace() {
        // Path 0,1,0 -> increments (+1,-1): mean 0, partial sums 1,0,
        // range 1, population std 1, so R/S = 1 and the index is 0.
        let path = vec![0.0, 1.0, 0.0, 1.0];
        let rs = rs_statistic(&path, 2).unwrap();
        assert!((rs - 1.0).abs() < 1e-15);
        assert_eq!(rs_index(&path, 2).unwrap(), 0.0);
    }

    #[test]
    fn iid_increments_index_near_half() {
        // Monte Carlo across seeds; the index concentrates near 0.5.
        for &tau in &[50usize, 100, 500] {
            let mut values = Vec::new();
            for seed in 0..20 {
                let path = random_walk(100_000, seed);
                values.push(rs_index(&path, tau).unwrap());
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            assert!(
                (mean - 0.5).abs() < 0.1,
                "tau={tau}: mean index {mean} strays from 1/2"
            );
            assert!(values.iter().all(|v| (v - 0.5).abs() < 0.1 + 0.05));
        }
    }

    #[test]
    fn ar1_cumulative_sum_is_persistent() {
        // Strongly positively autocorrelated increments push the index up.
        let mut values = Vec::new();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let mut path = vec![0.0f64];
            let mut eps = 0.0f64;
            for _ in 0..60_000 {
                let shock: f64 = rng.random::<f64>() - 0.5;
                eps = 0.9 * eps + shock;
                path.push(path.last().unwrap() + eps);
            }
            values.push(rs_index(&path, 100).unwrap());
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean > 0.6, "AR(1) index {mean} not persistent");
    }

    #[test]
    fn invariances() {
        let path = random_walk(50_000, 7);
        let base = rs_index(&path, 100).unwrap();
        let shifted: Vec<f64> = path.iter().map(|x| x + 123.0).collect();
        let scaled: Vec<f64> = path.iter().map(|x| 7.5 * x).collect();
        let negated: Vec<f64> = path.iter().map(|x| -x).collect();
        assert!((rs_index(&shifted, 100).unwrap() - base).abs() < 1e-12);
        assert!((rs_index(&scaled, 100).unwrap() - base).abs() < 1e-12);
        assert!((rs_index(&negated, 100).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn curve_matches_pointwise_and_iid_band() {
        let path = random_walk(120_000, 21);
        let taus = [50, 100, 200, 400];
        let curve = rs_curve(&path, &taus).unwrap();
        for (tau, v) in curve.iter() {
            assert_eq!(v, rs_index(&path, tau).unwrap());
            assert!((0.4..0.6).contains(&v), "tau={tau} index {v}");
        }
        assert!(curve.at(77).is_err());
    }

    #[test]
    fn corrected_denominator_shrinks_persistent_statistic() {
        // With autocorrelated increments the corrected denominator grows,
        // so the statistic falls below the classic one.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut path = vec![0.0f64];
        let mut eps = 0.0f64;
        for _ in 0..40_000 {
            let shock: f64 = rng.random::<f64>() - 0.5;
            eps = 0.8 * eps + shock;
            path.push(path.last().unwrap() + eps);
        }
        let classic = rs_statistic_detailed(&path, 200, Denominator::Classic).unwrap();
        let lo = rs_statistic_detailed(&path, 200, Denominator::Corrected { bandwidth: None })
            .unwrap();
        assert!(lo.value < classic.value);
        // On iid data the two are close.
        let walk = random_walk(40_000, 6);
        let c = rs_statistic(&walk, 200).unwrap();
        let l = rs_statistic_detailed(&walk, 200, Denominator::Corrected { bandwidth: Some(0) })
            .unwrap();
        assert!((c - l.value).abs() < 1e-12);
    }

    #[test]
    fn summary_statistics() {
        let path = random_walk(50_000, 3);
        let curve = rs_curve(&path, &[50, 100]).unwrap();
        let s = persistence_summary(&[curve.clone(), curve.clone()], 100).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.runs, 2);
        let either = [0.0, 1.0];
        assert!(either.contains(&s.fraction_above_half));
        assert!(persistence_summary(&[curve], 999).is_err());
    }
}
