//! Exact macro-level transition probabilities of the two-dimensional chain
//! `(S+, A+)` in the frozen phase: the stay-probabilities `P++`, `P--`
//! (sites) and `Q++`, `Q--` (arcs), and the one-step distribution they
//! induce.
//!
//! Each stay-probability is a partial sum of conditionally hypergeometric
//! weights. Binomial coefficients are evaluated through log-gamma; the sums
//! are accumulated in the linear domain after a max-log shift, with
//! compensated summation. The floor/ceiling cutoffs that decide which terms
//! qualify are evaluated on exact rationals (every finite `f64` coupling is
//! a dyadic rational), so a threshold that lands exactly on an integer is
//! never misclassified by floating-point rounding.

use crate::micro::MacroState;
use crate::params::ModelParams;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use rand::Rng;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("{what}({i},{j}) outside its domain for N={n}")]
    Domain { what: &'static str, i: usize, j: usize, n: usize },
    #[error("exact enumeration refused for N={n} > {max}")]
    TooLarge { n: usize, max: usize },
}

/// log C(n, k); the log-domain zero (negative infinity) when `k < 0` or `k > n`.
pub fn log_binomial(n: i64, k: i64) -> f64 {
    if k < 0 || k > n || n < 0 {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    let (n, k) = (n as f64, k as f64);
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Sum of `exp(t)` over log-domain terms, returned in the log domain.
/// Max-shifted, compensated in the linear domain.
fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &t in terms {
        let x = (t - m).exp();
        let y = x - comp;
        let s = sum + y;
        comp = (s - sum) - y;
        sum = s;
    }
    m + sum.ln()
}

/// The contrarian threshold `alpha * |4(i+j) - N(N+1)| / (2 N (N+1))`
/// as an exact rational (equals `alpha * G(i,j)`).
fn threshold(i: usize, j: usize, params: &ModelParams) -> BigRational {
    let n = params.n as i64;
    let dev = (4 * (i + j) as i64 - n * (n + 1)).abs();
    let alpha = BigRational::from_float(params.alpha).expect("alpha is finite");
    alpha * BigRational::new(BigInt::from(dev), BigInt::from(2 * n * (n + 1)))
}

fn to_i64_saturating(x: BigInt) -> i64 {
    x.to_i64().unwrap_or(if x.is_negative() { i64::MIN } else { i64::MAX })
}

/// Largest integer strictly satisfied by `k > (m + t)/2`, i.e. the lower
/// cutoff `1 + floor((m + t)/2)`.
fn lower_cutoff(m: i64, t: &BigRational) -> i64 {
    let v = (BigRational::from_integer(BigInt::from(m)) + t) / BigRational::from_integer(2.into());
    to_i64_saturating(v.floor().to_integer()).saturating_add(1)
}

/// Upper cutoff for `k < (m - t)/2`, i.e. `ceil((m - t)/2) - 1`.
fn upper_cutoff(m: i64, t: &BigRational) -> i64 {
    let v = (BigRational::from_integer(BigInt::from(m)) - t) / BigRational::from_integer(2.into());
    to_i64_saturating(v.ceil().to_integer()).saturating_sub(1)
}

/// Probability that a chosen +1 site keeps its spin at state `(i, j)`.
///
/// Outer sum over the neighborhood size `l`, inner sum over the positive
/// neighbor count `k` with `2k - l` strictly above the contrarian threshold.
pub fn p_plus_plus(i: usize, j: usize, params: &ModelParams) -> Result<f64, KernelError> {
    let n = params.n;
    let c2 = params.arc_count();
    if i < 1 || i > n || j > c2 {
        return Err(KernelError::Domain { what: "P++", i, j, n });
    }
    let t = threshold(i, j, params);
    let (n, c2, i, j) = (n as i64, c2 as i64, i as i64, j as i64);
    let c2m1 = (n - 1) * (n - 2) / 2;
    let mut outer = Vec::new();
    for l in 0.max(j - c2m1)..=j.min(n - 1) {
        let k_lo = lower_cutoff(l, &t).max(0).max(l - (n - i));
        let k_hi = l.min(i - 1);
        if k_lo > k_hi {
            continue;
        }
        let inner: Vec<f64> = (k_lo..=k_hi)
            .map(|k| log_binomial(i - 1, k) + log_binomial(n - i, l - k))
            .collect();
        let inner = log_sum_exp(&inner);
        if inner == f64::NEG_INFINITY {
            continue;
        }
        let la = log_binomial(j, l) + log_binomial(c2 - j, n - 1 - l) - log_binomial(n - 1, l);
        outer.push(la + inner);
    }
    Ok((log_sum_exp(&outer) - log_binomial(c2, n - 1)).exp().min(1.0))
}

/// Probability that a chosen -1 site stays -1 at state `(i, j)`.
pub fn p_minus_minus(i: usize, j: usize, params: &ModelParams) -> Result<f64, KernelError> {
    let n = params.n;
    let c2 = params.arc_count();
    if i >= n || j > c2 {
        return Err(KernelError::Domain { what: "P--", i, j, n });
    }
    let t = threshold(i, j, params);
    let (n, c2, i, j) = (n as i64, c2 as i64, i as i64, j as i64);
    let c2m1 = (n - 1) * (n - 2) / 2;
    let mut outer = Vec::new();
    for l in 0.max(j - c2m1)..=j.min(n - 1) {
        let k_lo = 0.max(i + l + 1 - n);
        let k_hi = upper_cutoff(l, &t).min(l).min(i);
        if k_lo > k_hi {
            continue;
        }
        let inner: Vec<f64> = (k_lo..=k_hi)
            .map(|k| log_binomial(i, k) + log_binomial(n - i - 1, l - k))
            .collect();
        let inner = log_sum_exp(&inner);
        if inner == f64::NEG_INFINITY {
            continue;
        }
        let lc = log_binomial(j, l) + log_binomial(c2 - j, n - 1 - l) - log_binomial(n - 1, l);
        outer.push(lc + inner);
    }
    Ok((log_sum_exp(&outer) - log_binomial(c2, n - 1)).exp().min(1.0))
}

/// Probability that a chosen +1 arc keeps its spin at state `(i, j)`:
/// one-endpoint and two-endpoint star cases; the no-endpoint case always
/// flips and contributes nothing.
pub fn q_plus_plus(i: usize, j: usize, params: &ModelParams) -> Result<f64, KernelError> {
    let n = params.n;
    let c2 = params.arc_count();
    if j < 1 || j > c2 || i > n {
        return Err(KernelError::Domain { what: "Q++", i, j, n });
    }
    let t = threshold(i, j, params);
    let nn = n as i64;
    let star_tail = |m: i64| -> f64 {
        // m neighbors; k of them positive, needing 2k - m > t.
        let (c2, j) = (c2 as i64, j as i64);
        let k_lo = lower_cutoff(m, &t).max(0).max(j - (c2 - m));
        let k_hi = (j - 1).min(m);
        let terms: Vec<f64> = (k_lo..=k_hi)
            .map(|k| log_binomial(j - 1, k) + log_binomial(c2 - j, m - k))
            .collect();
        (log_sum_exp(&terms) - log_binomial(c2 - 1, m)).exp()
    };
    let mut q = 0.0;
    let w_one = (2 * i * (n - i)) as f64 / (n * (n - 1)) as f64;
    if w_one > 0.0 {
        q += w_one * star_tail(nn - 2);
    }
    let w_both = (i * i.saturating_sub(1)) as f64 / (n * (n - 1)) as f64;
    if w_both > 0.0 {
        q += w_both * star_tail(2 * nn - 4);
    }
    Ok(q.min(1.0))
}

/// Probability that a chosen -1 arc stays -1 at state `(i, j)`.
pub fn q_minus_minus(i: usize, j: usize, params: &ModelParams) -> Result<f64, KernelError> {
    let n = params.n;
    let c2 = params.arc_count();
    if j >= c2 || i > n {
        return Err(KernelError::Domain { what: "Q--", i, j, n });
    }
    let t = threshold(i, j, params);
    let nn = n as i64;
    let star_tail = |m: i64| -> f64 {
        let (c2, j) = (c2 as i64, j as i64);
        let k_lo = 0.max(j - (c2 - 1 - m));
        let k_hi = upper_cutoff(m, &t).min(m).min(j);
        let terms: Vec<f64> = (k_lo..=k_hi)
            .map(|k| log_binomial(j, k) + log_binomial(c2 - j - 1, m - k))
            .collect();
        (log_sum_exp(&terms) - log_binomial(c2 - 1, m)).exp()
    };
    let mut q = 0.0;
    let w_one = (2 * i * (n - i)) as f64 / (n * (n - 1)) as f64;
    if w_one > 0.0 {
        q += w_one * star_tail(nn - 2);
    }
    let w_both = (i * i.saturating_sub(1)) as f64 / (n * (n - 1)) as f64;
    if w_both > 0.0 {
        q += w_both * star_tail(2 * nn - 4);
    }
    Ok(q.min(1.0))
}

/// One-step distribution of the macro chain from a given state: the four
/// neighbor moves and the hold mass. Stay-probabilities whose selection
/// weight is zero are never evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub state: MacroState,
    /// `(i+1, j)`: a -1 site was chosen and flipped.
    pub up_site: f64,
    /// `(i-1, j)`: a +1 site was chosen and flipped.
    pub down_site: f64,
    /// `(i, j+1)`: a -1 arc was chosen and flipped.
    pub up_arc: f64,
    /// `(i, j-1)`: a +1 arc was chosen and flipped.
    pub down_arc: f64,
    pub hold: f64,
}

impl StepDistribution {
    /// The reachable `(state, probability)` pairs with positive probability.
    pub fn entries(&self) -> Vec<(MacroState, f64)> {
        let MacroState { up_sites: i, up_arcs: j } = self.state;
        let mut out = Vec::with_capacity(5);
        if self.up_site > 0.0 {
            out.push((MacroState::new(i + 1, j), self.up_site));
        }
        if self.down_site > 0.0 {
            out.push((MacroState::new(i - 1, j), self.down_site));
        }
        if self.up_arc > 0.0 {
            out.push((MacroState::new(i, j + 1), self.up_arc));
        }
        if self.down_arc > 0.0 {
            out.push((MacroState::new(i, j - 1), self.down_arc));
        }
        if self.hold > 0.0 {
            out.push((self.state, self.hold));
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.up_site + self.down_site + self.up_arc + self.down_arc + self.hold
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MacroState {
        let MacroState { up_sites: i, up_arcs: j } = self.state;
        let mut u = rng.random::<f64>();
        u -= self.up_site;
        if u < 0.0 {
            return MacroState::new(i + 1, j);
        }
        u -= self.down_site;
        if u < 0.0 {
            return MacroState::new(i - 1, j);
        }
        u -= self.up_arc;
        if u < 0.0 {
            return MacroState::new(i, j + 1);
        }
        u -= self.down_arc;
        if u < 0.0 {
            return MacroState::new(i, j - 1);
        }
        self.state
    }
}

/// Evaluate the one-step distribution at `(i, j)`.
///
/// Move weights are `2(N-i)`, `2i`, `N^2-N-2j`, `2j` over `N(N+1)`; the hold
/// mass is `2 L(i,j) / (N(N+1))` with
/// `L = (N-i) P-- + i P++ + (C-j) Q-- + j Q++`.
///
/// Panics if `(i, j)` is outside the state grid.
pub fn macro_step_distribution(i: usize, j: usize, params: &ModelParams) -> StepDistribution {
    let n = params.n;
    let c2 = params.arc_count();
    assert!(i <= n && j <= c2, "state ({i},{j}) outside the grid for N={n}");
    let nn1 = (n * (n + 1)) as f64;

    let pmm = (i < n).then(|| p_minus_minus(i, j, params).expect("in domain"));
    let ppp = (i > 0).then(|| p_plus_plus(i, j, params).expect("in domain"));
    let qmm = (j < c2).then(|| q_minus_minus(i, j, params).expect("in domain"));
    let qpp = (j > 0).then(|| q_plus_plus(i, j, params).expect("in domain"));

    let up_site = pmm.map_or(0.0, |p| (2 * (n - i)) as f64 / nn1 * (1.0 - p));
    let down_site = ppp.map_or(0.0, |p| (2 * i) as f64 / nn1 * (1.0 - p));
    let up_arc = qmm.map_or(0.0, |q| (2 * (c2 - j)) as f64 / nn1 * (1.0 - q));
    let down_arc = qpp.map_or(0.0, |q| (2 * j) as f64 / nn1 * (1.0 - q));
    let l_mass = pmm.map_or(0.0, |p| (n - i) as f64 * p)
        + ppp.map_or(0.0, |p| i as f64 * p)
        + qmm.map_or(0.0, |q| (c2 - j) as f64 * q)
        + qpp.map_or(0.0, |q| j as f64 * q);
    StepDistribution {
        state: MacroState::new(i, j),
        up_site,
        down_site,
        up_arc,
        down_arc,
        hold: 2.0 * l_mass / nn1,
    }
}

/// True when the state holds with probability one.
pub fn is_trapping(i: usize, j: usize, params: &ModelParams) -> bool {
    macro_step_distribution(i, j, params).hold == 1.0
}

/// Monte Carlo simulator of the macro chain with per-state distribution
/// caching.
pub struct MacroChainSim {
    params: ModelParams,
    cache: Vec<Option<StepDistribution>>,
}

impl MacroChainSim {
    pub fn new(params: ModelParams) -> Self {
        let dim = params.state_dim();
        MacroChainSim { params, cache: vec![None; dim] }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    fn distribution(&mut self, state: MacroState) -> &StepDistribution {
        let idx = state.up_arcs * (self.params.n + 1) + state.up_sites;
        if self.cache[idx].is_none() {
            self.cache[idx] =
                Some(macro_step_distribution(state.up_sites, state.up_arcs, &self.params));
        }
        self.cache[idx].as_ref().unwrap()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, state: MacroState, rng: &mut R) -> MacroState {
        self.distribution(state).sample(rng)
    }
}

/// Sample `steps` successive states of the macro chain starting from
/// `start` (not recorded). Reproducible given the random source.
pub fn simulate_macro_chain<R: Rng + ?Sized>(
    start: MacroState,
    params: &ModelParams,
    steps: usize,
    rng: &mut R,
) -> Vec<MacroState> {
    assert!(start.in_grid(params.n));
    let mut sim = MacroChainSim::new(*params);
    let mut path = Vec::with_capacity(steps);
    let mut s = start;
    for _ in 0..steps {
        s = sim.step(s, rng);
        path.push(s);
    }
    path
}
