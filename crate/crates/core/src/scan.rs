//! Parameter-sweep analyses: regime classification, the critical-coupling
//! bracket, modality of invariant measures, site/arc covariance, and the
//! gap power-law and Gaussian-limit fits.

use crate::micro::MacroState;
use crate::params::ModelParams;
use crate::spectral::{
    self, lambda2_with, mixing_half_life, MeasureGrid, SpectralError, TransitionMatrix,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("need at least {need} samples on each side of the break, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("empty alpha grid")]
    EmptyGrid,
}

/// Default stationary mass at the all-up state that counts as "concentrated
/// entirely" (tolerates eigensolver noise).
pub const DEFAULT_TRAP_THRESHOLD: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Subcritical,
    Supercritical,
}

/// One grid point of a parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub n: usize,
    pub alpha: f64,
    pub lambda2: f64,
    pub gap: f64,
    /// Stationary mass at the all-up trapping state `(N, C(N,2))`.
    pub trap_mass: f64,
    pub mode_count: usize,
    pub mode_locations: Vec<MacroState>,
    /// Covariance of `S+` and `A+` under the stationary measure.
    pub correlation_gap: f64,
    pub half_life: Option<u64>,
    pub lambda2_refined: bool,
    pub closed_classes: usize,
}

/// Full per-point result: the record plus the measure it was derived from.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub record: SweepRecord,
    pub stationary: MeasureGrid,
}

/// Assemble, solve, and summarize one `(N, alpha)` instance.
pub fn compute_sweep_point(n: usize, alpha: f64) -> Result<SweepPoint, ScanError> {
    let params = ModelParams::frozen(n, alpha);
    let matrix = TransitionMatrix::assemble(&params);
    let st = spectral::stationary_measure(&matrix)?;
    let l2 = lambda2_with(&matrix, &st)?;
    let trap = MacroState::new(n, params.arc_count());
    let modes = modality_analysis(&st.measure);
    let record = SweepRecord {
        n,
        alpha,
        lambda2: l2.value,
        gap: 1.0 - l2.value,
        trap_mass: st.measure.value(trap),
        mode_count: modes.modes.len(),
        mode_locations: modes.modes.iter().map(|&(s, _)| s).collect(),
        correlation_gap: correlation_check(&st.measure),
        half_life: mixing_half_life(l2.value),
        lambda2_refined: l2.refined,
        closed_classes: st.closed_classes,
    };
    Ok(SweepPoint { record, stationary: st.measure })
}

/// Subcritical iff the stationary measure concentrates on the trapping
/// state beyond the threshold.
pub fn classify_regime(trap_mass: f64, trap_threshold: f64) -> Regime {
    if trap_mass >= trap_threshold {
        Regime::Subcritical
    } else {
        Regime::Supercritical
    }
}

/// Result of the critical-coupling scan.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaStar {
    /// Adjacent grid values with subcritical behavior at the low end and
    /// supercritical at the high end.
    Bracket { lo: f64, hi: f64 },
    /// Every grid point classified the same way.
    NotFound { all: Regime },
}

/// Scan a sorted coupling grid for the regime change. With `refine`, integer
/// couplings between non-adjacent bracket ends are bisected.
pub fn detect_alpha_star(
    n: usize,
    alpha_grid: &[f64],
    trap_threshold: f64,
    refine: bool,
) -> Result<AlphaStar, ScanError> {
    if alpha_grid.is_empty() {
        return Err(ScanError::EmptyGrid);
    }
    let regime_at = |alpha: f64| -> Result<Regime, ScanError> {
        let point = compute_trap_mass(n, alpha)?;
        Ok(classify_regime(point, trap_threshold))
    };
    let mut prev = (alpha_grid[0], regime_at(alpha_grid[0])?);
    let mut bracket = None;
    for &alpha in &alpha_grid[1..] {
        let r = regime_at(alpha)?;
        if prev.1 == Regime::Subcritical && r == Regime::Supercritical {
            bracket = Some((prev.0, alpha));
            break;
        }
        prev = (alpha, r);
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Ok(AlphaStar::NotFound { all: prev.1 });
    };
    if refine {
        while hi - lo > 1.0 {
            let mid = ((lo + hi) / 2.0).floor();
            if mid <= lo || mid >= hi {
                break;
            }
            match regime_at(mid)? {
                Regime::Subcritical => lo = mid,
                Regime::Supercritical => hi = mid,
            }
        }
    }
    Ok(AlphaStar::Bracket { lo, hi })
}

/// Stationary mass at the trapping state only (no eigenvalue work).
pub fn compute_trap_mass(n: usize, alpha: f64) -> Result<f64, ScanError> {
    let params = ModelParams::frozen(n, alpha);
    let matrix = TransitionMatrix::assemble(&params);
    let st = spectral::stationary_measure(&matrix)?;
    Ok(st.measure.value(MacroState::new(n, params.arc_count())))
}

/// Modes of a measure: strict local maxima under 4-adjacency, with plateaus
/// (4-connected runs of equal value) merged into a single mode.
#[derive(Debug, Clone)]
pub struct Modality {
    /// `(peak state, peak value)` sorted by descending value; a plateau is
    /// represented by its smallest flat index.
    pub modes: Vec<(MacroState, f64)>,
}

pub fn modality_analysis(measure: &MeasureGrid) -> Modality {
    let n = measure.n();
    let c = n * (n - 1) / 2;
    let value = |i: usize, j: usize| measure.value(MacroState::new(i, j));
    let neighbors = |i: usize, j: usize| {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(4);
        if i > 0 {
            out.push((i - 1, j));
        }
        if i < n {
            out.push((i + 1, j));
        }
        if j > 0 {
            out.push((i, j - 1));
        }
        if j < c {
            out.push((i, j + 1));
        }
        out
    };
    let eq = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);

    let dim = spectral::grid_dim(n);
    let mut plateau = vec![usize::MAX; dim];
    let mut plateau_count = 0;
    // Label 4-connected plateaus of equal value.
    for k in 0..dim {
        if plateau[k] != usize::MAX {
            continue;
        }
        let id = plateau_count;
        plateau_count += 1;
        let mut stack = vec![k];
        plateau[k] = id;
        while let Some(cur) = stack.pop() {
            let s = spectral::index_state(cur, n);
            let v = measure.values()[cur];
            for (ni, nj) in neighbors(s.up_sites, s.up_arcs) {
                let nk = spectral::state_index(MacroState::new(ni, nj), n);
                if plateau[nk] == usize::MAX && eq(measure.values()[nk], v) {
                    plateau[nk] = id;
                    stack.push(nk);
                }
            }
        }
    }
    // A plateau is a mode iff every outside neighbor is strictly smaller.
    let mut is_mode = vec![true; plateau_count];
    let mut peak: Vec<Option<usize>> = vec![None; plateau_count];
    for k in 0..dim {
        let id = plateau[k];
        if peak[id].is_none() {
            peak[id] = Some(k);
        }
        let s = spectral::index_state(k, n);
        let v = measure.values()[k];
        for (ni, nj) in neighbors(s.up_sites, s.up_arcs) {
            let nk = spectral::state_index(MacroState::new(ni, nj), n);
            if plateau[nk] != id && measure.values()[nk] >= v {
                is_mode[id] = false;
            }
        }
    }
    let mut modes: Vec<(MacroState, f64)> = (0..plateau_count)
        .filter(|&id| is_mode[id])
        .map(|id| {
            let k = peak[id].unwrap();
            (spectral::index_state(k, n), measure.values()[k])
        })
        .collect();
    modes.sort_by(|a, b| b.1.total_cmp(&a.1).then(spectral::state_index(a.0, n).cmp(&spectral::state_index(b.0, n))));
    Modality { modes }
}

/// Covariance of `S+` and `A+` under a probability measure.
pub fn correlation_check(measure: &MeasureGrid) -> f64 {
    let es = measure.expectation(|s| s.up_sites as f64);
    let ea = measure.expectation(|s| s.up_arcs as f64);
    measure.expectation(|s| (s.up_sites as f64 - es) * (s.up_arcs as f64 - ea))
}

/// Ordinary least squares on `log y` vs `log x`.
/// Returns `(slope, intercept, max abs residual)`.
pub fn fit_log_log(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let sx: f64 = lx.iter().sum();
    let sy: f64 = ly.iter().sum();
    let sxx: f64 = lx.iter().map(|x| x * x).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let resid = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0f64, f64::max);
    (slope, intercept, resid)
}

/// Two-branch power-law summary of the spectral gap as a function of the
/// coupling, split at the regime change.
#[derive(Debug, Clone)]
pub struct GapPowerLaw {
    /// Log-log slope on the subcritical side.
    pub c_sub: f64,
    /// Log-log slope on the supercritical side.
    pub c_super: f64,
    pub sub_residual: f64,
    pub super_residual: f64,
    /// Sampled `(alpha, gap)` pairs, in grid order.
    pub samples: Vec<(f64, f64)>,
    /// Adjacent sample pairs where the gap decreased.
    pub monotonicity_violations: Vec<(f64, f64)>,
    /// Whether the subcritical slope exceeds the supercritical one.
    pub ordering_ok: bool,
}

/// Fit the two branches of `gap(alpha)` for a fixed `N`. `alpha_sub` and
/// `alpha_super` must each hold at least three samples from their regime.
pub fn gap_power_law_fit(
    n: usize,
    alpha_sub: &[f64],
    alpha_super: &[f64],
) -> Result<GapPowerLaw, ScanError> {
    if alpha_sub.len() < 3 {
        return Err(ScanError::InsufficientSamples { need: 3, got: alpha_sub.len() });
    }
    if alpha_super.len() < 3 {
        return Err(ScanError::InsufficientSamples { need: 3, got: alpha_super.len() });
    }
    let gap_at = |alpha: f64| -> Result<f64, ScanError> {
        Ok(compute_sweep_point(n, alpha)?.record.gap)
    };
    let mut samples = Vec::new();
    let mut gaps_sub = Vec::new();
    for &a in alpha_sub {
        let g = gap_at(a)?;
        samples.push((a, g));
        gaps_sub.push(g);
    }
    let mut gaps_super = Vec::new();
    for &a in alpha_super {
        let g = gap_at(a)?;
        samples.push((a, g));
        gaps_super.push(g);
    }
    let (c_sub, _, sub_residual) = fit_log_log(alpha_sub, &gaps_sub);
    let (c_super, _, super_residual) = fit_log_log(alpha_super, &gaps_super);
    let monotonicity_violations = samples
        .windows(2)
        .filter(|w| w[1].1 < w[0].1)
        .map(|w| (w[0].0, w[1].0))
        .collect();
    Ok(GapPowerLaw {
        c_sub,
        c_super,
        sub_residual,
        super_residual,
        samples,
        monotonicity_violations,
        ordering_ok: c_sub > c_super,
    })
}

/// Least-squares fit of the centered discrete Gaussian form
/// `(1/(2 pi s^2)) exp(-(4(2i-N)^2 + (4j-N^2+N)^2) / (32 s^2))`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianFit {
    pub sigma: f64,
    pub max_abs_residual: f64,
    pub rms_residual: f64,
}

fn gaussian_value(s: MacroState, n: usize, sigma: f64) -> f64 {
    let x = 2.0 * s.up_sites as f64 - n as f64;
    let y = 4.0 * s.up_arcs as f64 - (n * n - n) as f64;
    let r2 = 4.0 * x * x + y * y;
    (-r2 / (32.0 * sigma * sigma)).exp() / (2.0 * std::f64::consts::PI * sigma * sigma)
}

fn gaussian_sse(measure: &MeasureGrid, n: usize, sigma: f64) -> f64 {
    measure
        .iter()
        .map(|(s, v)| {
            let d = v - gaussian_value(s, n, sigma);
            d * d
        })
        .sum()
}

/// Fit `sigma` by golden-section search on the sum of squared residuals.
pub fn gaussian_limit_fit(measure: &MeasureGrid, n: usize) -> GaussianFit {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.05f64, 10.0 * n as f64);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = gaussian_sse(measure, n, x1);
    let mut f2 = gaussian_sse(measure, n, x2);
    for _ in 0..200 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = gaussian_sse(measure, n, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = gaussian_sse(measure, n, x2);
        }
    }
    let sigma = 0.5 * (lo + hi);
    let max_abs_residual = measure
        .iter()
        .map(|(s, v)| (v - gaussian_value(s, n, sigma)).abs())
        .fold(0.0f64, f64::max);
    let dim = measure.values().len() as f64;
    let rms_residual = (gaussian_sse(measure, n, sigma) / dim).sqrt();
    GaussianFit { sigma, max_abs_residual, rms_residual }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::MeasureKind;

    #[test]
    fn regime_threshold_edges() {
        assert_eq!(classify_regime(1.0, 1.0), Regime::Subcritical);
        assert_eq!(classify_regime(1.0 - 1e-7, DEFAULT_TRAP_THRESHOLD), Regime::Subcritical);
        assert_eq!(classify_regime(1.0 - 1e-5, DEFAULT_TRAP_THRESHOLD), Regime::Supercritical);
        assert_eq!(classify_regime(0.3, DEFAULT_TRAP_THRESHOLD), Regime::Supercritical);
    }

    #[test]
    fn point_mass_has_one_mode_and_zero_covariance() {
        let m = MeasureGrid::point_mass(4, MacroState::new(2, 3));
        let modes = modality_analysis(&m);
        assert_eq!(modes.modes.len(), 1);
        assert_eq!(modes.modes[0].0, MacroState::new(2, 3));
        assert_eq!(correlation_check(&m), 0.0);
    }

    #[test]
    fn product_measure_has_zero_covariance() {
        let n = 4;
        let dim = spectral::grid_dim(n);
        let mut values = vec![0.0; dim];
        let pi = [0.1, 0.2, 0.3, 0.25, 0.15];
        let pj = [0.3, 0.1, 0.1, 0.2, 0.05, 0.15, 0.1];
        for (k, v) in values.iter_mut().enumerate() {
            let s = spectral::index_state(k, n);
            *v = pi[s.up_sites] * pj[s.up_arcs];
        }
        let m = MeasureGrid::from_values(n, MeasureKind::Probability, values);
        assert!(correlation_check(&m).abs() < 1e-12);
    }

    #[test]
    fn synthetic_power_law_slope() {
        let xs: Vec<f64> = (1..=8).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let (slope, _, resid) = fit_log_log(&xs, &ys);
        assert!((slope - 2.0).abs() < 1e-6);
        assert!(resid < 1e-12);
    }

    #[test]
    fn gaussian_fit_recovers_sigma() {
        let n = 10;
        let dim = spectral::grid_dim(n);
        let mut values = vec![0.0; dim];
        for (k, v) in values.iter_mut().enumerate() {
            *v = gaussian_value(spectral::index_state(k, n), n, 3.0);
        }
        let m = MeasureGrid::from_values(n, MeasureKind::Probability, values);
        let fit = gaussian_limit_fit(&m, n);
        assert!((fit.sigma - 3.0).abs() / 3.0 < 0.01, "sigma {}", fit.sigma);
        assert!(fit.max_abs_residual < 1e-6);
        // A point mass is a terrible Gaussian.
        let pm = MeasureGrid::point_mass(n, MacroState::new(10, 45));
        let bad = gaussian_limit_fit(&pm, n);
        assert!(bad.max_abs_residual > 0.5);
    }

    #[test]
    fn plateau_is_one_mode() {
        let n = 3;
        let dim = spectral::grid_dim(n);
        // Uniform over everything: a single plateau, every neighbor equal.
        let m = MeasureGrid::from_values(n, MeasureKind::Probability, vec![1.0 / dim as f64; dim]);
        let modes = modality_analysis(&m);
        assert_eq!(modes.modes.len(), 1);
    }

    #[test]
    fn insufficient_samples_error() {
        assert!(matches!(
            gap_power_law_fit(4, &[1.0, 2.0], &[5.0, 6.0, 7.0]),
            Err(ScanError::InsufficientSamples { .. })
        ));
    }
}
