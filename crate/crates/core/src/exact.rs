//! Exact big-integer-rational evaluation of the macro transition kernel for
//! small systems. This is the oracle of record for the log-gamma path:
//! instead of the derived floor/ceiling cutoffs it enumerates every
//! neighborhood outcome and tests the potential inequality directly on exact
//! rationals.

use crate::kernel::KernelError;
use crate::micro::MacroState;
use crate::params::ModelParams;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// Largest `N` the enumeration accepts.
pub const MAX_EXACT_N: usize = 6;

/// Which element kind a stay-probability refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipKind {
    /// A chosen +1 site (P++).
    SitePlus,
    /// A chosen -1 site (P--).
    SiteMinus,
    /// A chosen +1 arc (Q++).
    ArcPlus,
    /// A chosen -1 arc (Q--).
    ArcMinus,
}

fn binom(n: i64, k: i64) -> BigInt {
    if k < 0 || k > n || n < 0 {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut v = BigInt::one();
    for t in 0..k {
        v = v * BigInt::from(n - t) / BigInt::from(t + 1);
    }
    v
}

fn ratio(num: BigInt, den: BigInt) -> BigRational {
    BigRational::new(num, den)
}

/// `alpha * G(i,j)` as an exact rational.
fn threshold(i: usize, j: usize, params: &ModelParams) -> BigRational {
    let n = params.n as i64;
    let dev = (4 * (i + j) as i64 - n * (n + 1)).abs();
    let alpha = BigRational::from_float(params.alpha).expect("alpha is finite");
    alpha * ratio(BigInt::from(dev), BigInt::from(2 * n * (n + 1)))
}

fn check_domain(kind: FlipKind, i: usize, j: usize, params: &ModelParams) -> Result<(), KernelError> {
    let n = params.n;
    let c2 = params.arc_count();
    if n > MAX_EXACT_N {
        return Err(KernelError::TooLarge { n, max: MAX_EXACT_N });
    }
    let ok = match kind {
        FlipKind::SitePlus => (1..=n).contains(&i) && j <= c2,
        FlipKind::SiteMinus => i < n && j <= c2,
        FlipKind::ArcPlus => (1..=c2).contains(&j) && i <= n,
        FlipKind::ArcMinus => j < c2 && i <= n,
    };
    if ok {
        Ok(())
    } else {
        Err(KernelError::Domain { what: "exact stay-probability", i, j, n })
    }
}

/// Exact probability that the chosen element keeps its spin, by exhaustive
/// enumeration of neighborhood sizes and positive-member counts with their
/// hypergeometric weights. Refuses `N > 6`.
pub fn stay_probability(
    kind: FlipKind,
    i: usize,
    j: usize,
    params: &ModelParams,
) -> Result<BigRational, KernelError> {
    check_domain(kind, i, j, params)?;
    let n = params.n as i64;
    let c2 = params.arc_count() as i64;
    let t = threshold(i, j, params);
    let (i, j) = (i as i64, j as i64);
    let mut total = BigRational::zero();

    match kind {
        FlipKind::SitePlus | FlipKind::SiteMinus => {
            // The site keeps +1 when the local sum 2k-l exceeds the
            // threshold, and keeps -1 when it is below its negation.
            let plus = kind == FlipKind::SitePlus;
            let succ = if plus { i - 1 } else { i };
            let pop_l = ratio(BigInt::one(), binom(c2, n - 1));
            for l in 0..=(n - 1) {
                let w_l = binom(j, l) * binom(c2 - j, n - 1 - l);
                if w_l.is_zero() {
                    continue;
                }
                let pop_k = ratio(BigInt::one(), binom(n - 1, l));
                for k in 0..=l {
                    let w_k = binom(succ, k) * binom(n - 1 - succ, l - k);
                    if w_k.is_zero() {
                        continue;
                    }
                    let local = BigRational::from_integer(BigInt::from(2 * k - l));
                    let keeps = if plus { local > t } else { local < -t.clone() };
                    if keeps {
                        total += ratio(w_l.clone() * w_k, BigInt::one())
                            * pop_l.clone()
                            * pop_k.clone();
                    }
                }
            }
        }
        FlipKind::ArcPlus | FlipKind::ArcMinus => {
            let plus = kind == FlipKind::ArcPlus;
            let succ = if plus { j - 1 } else { j };
            // Endpoint cases: 0, 1 or 2 positive endpoints give 0, N-2 or
            // 2N-4 neighbors. The zero-neighbor case never keeps the spin
            // (the contrarian term alone opposes it, and ties flip).
            let cases = [
                (ratio(BigInt::from(2 * i * (n - i)), BigInt::from(n * (n - 1))), n - 2),
                (ratio(BigInt::from(i * (i - 1)), BigInt::from(n * (n - 1))), 2 * n - 4),
            ];
            for (w_case, m) in cases {
                if w_case.is_zero() {
                    continue;
                }
                let pop_k = ratio(BigInt::one(), binom(c2 - 1, m));
                for k in 0..=m {
                    let w_k = binom(succ, k) * binom(c2 - 1 - succ, m - k);
                    if w_k.is_zero() {
                        continue;
                    }
                    let local = BigRational::from_integer(BigInt::from(2 * k - m));
                    let keeps = if plus { local > t } else { local < -t.clone() };
                    if keeps {
                        total += w_case.clone() * ratio(w_k, BigInt::one()) * pop_k.clone();
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Exact one-step distribution at `(i, j)`, same decomposition as
/// `kernel::macro_step_distribution`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactStepDistribution {
    pub state: MacroState,
    pub up_site: BigRational,
    pub down_site: BigRational,
    pub up_arc: BigRational,
    pub down_arc: BigRational,
    pub hold: BigRational,
}

impl ExactStepDistribution {
    pub fn total(&self) -> BigRational {
        self.up_site.clone()
            + self.down_site.clone()
            + self.up_arc.clone()
            + self.down_arc.clone()
            + self.hold.clone()
    }
}

pub fn step_distribution(
    i: usize,
    j: usize,
    params: &ModelParams,
) -> Result<ExactStepDistribution, KernelError> {
    let n = params.n;
    let c2 = params.arc_count();
    if n > MAX_EXACT_N {
        return Err(KernelError::TooLarge { n, max: MAX_EXACT_N });
    }
    assert!(i <= n && j <= c2, "state ({i},{j}) outside the grid for N={n}");
    let nn1 = BigInt::from((n * (n + 1)) as i64);
    let frac = |w: i64, p: BigRational| ratio(BigInt::from(w), nn1.clone()) * p;
    let one = BigRational::one;

    let pmm = if i < n { stay_probability(FlipKind::SiteMinus, i, j, params)? } else { one() };
    let ppp = if i > 0 { stay_probability(FlipKind::SitePlus, i, j, params)? } else { one() };
    let qmm = if j < c2 { stay_probability(FlipKind::ArcMinus, i, j, params)? } else { one() };
    let qpp = if j > 0 { stay_probability(FlipKind::ArcPlus, i, j, params)? } else { one() };

    let hold = frac((n - i) as i64 * 2, pmm.clone())
        + frac(i as i64 * 2, ppp.clone())
        + frac((c2 - j) as i64 * 2, qmm.clone())
        + frac(j as i64 * 2, qpp.clone());
    Ok(ExactStepDistribution {
        state: MacroState::new(i, j),
        up_site: frac(2 * (n - i) as i64, one() - pmm),
        down_site: frac(2 * i as i64, one() - ppp),
        up_arc: frac(2 * (c2 - j) as i64, one() - qmm),
        down_arc: frac(2 * j as i64, one() - qpp),
        hold,
    })
}

/// Dense exact transition matrix over the flat-indexed state space
/// (flat index `k = j (N+1) + i`, matching `spectral::state_index`).
/// `N <= 6` only.
pub fn transition_matrix(params: &ModelParams) -> Result<Vec<Vec<BigRational>>, KernelError> {
    let n = params.n;
    let c2 = params.arc_count();
    let dim = params.state_dim();
    let flat = |i: usize, j: usize| j * (n + 1) + i;
    let mut m = vec![vec![BigRational::zero(); dim]; dim];
    for j in 0..=c2 {
        for i in 0..=n {
            let d = step_distribution(i, j, params)?;
            let row = &mut m[flat(i, j)];
            if i < n {
                row[flat(i + 1, j)] = d.up_site;
            }
            if i > 0 {
                row[flat(i - 1, j)] = d.down_site;
            }
            if j < c2 {
                row[flat(i, j + 1)] = d.up_arc;
            }
            if j > 0 {
                row[flat(i, j - 1)] = d.down_arc;
            }
            row[flat(i, j)] = d.hold;
        }
    }
    Ok(m)
}

/// Convenience: exact stay-probability as `f64`.
pub fn stay_probability_f64(
    kind: FlipKind,
    i: usize,
    j: usize,
    params: &ModelParams,
) -> Result<f64, KernelError> {
    Ok(stay_probability(kind, i, j, params)?.to_f64().expect("probability fits in f64"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel;

    #[test]
    fn refuses_large_systems() {
        let params = ModelParams::frozen(7, 1.0);
        assert_eq!(
            stay_probability(FlipKind::SitePlus, 1, 0, &params),
            Err(KernelError::TooLarge { n: 7, max: 6 })
        );
    }

    #[test]
    fn lone_site_and_neighborless_arc() {
        let params = ModelParams::frozen(5, 2.5);
        assert!(stay_probability(FlipKind::SitePlus, 1, 4, &params).unwrap().is_zero());
        assert!(stay_probability(FlipKind::ArcMinus, 0, 3, &params).unwrap().is_zero());
    }

    #[test]
    fn rows_sum_to_one_exactly() {
        for n in [3usize, 4] {
            for alpha in [0.0, 1.5, 6.0] {
                let params = ModelParams::frozen(n, alpha);
                for i in 0..=n {
                    for j in 0..=params.arc_count() {
                        let d = step_distribution(i, j, &params).unwrap();
                        assert!(d.total().is_one(), "({i},{j}) N={n} alpha={alpha}");
                    }
                }
            }
        }
    }

    /// The oracle contract: the log-gamma evaluation agrees with exact
    /// enumeration to 1e-12 over whole small grids.
    #[test]
    fn matches_log_gamma_kernel() {
        for n in [3usize, 4, 5] {
            for alpha in [0.0, 1.0, 3.0, 6.0] {
                let params = ModelParams::frozen(n, alpha);
                let c2 = params.arc_count();
                for i in 0..=n {
                    for j in 0..=c2 {
                        let pairs: [(FlipKind, Option<f64>); 4] = [
                            (
                                FlipKind::SitePlus,
                                (i > 0).then(|| kernel::p_plus_plus(i, j, &params).unwrap()),
                            ),
                            (
                                FlipKind::SiteMinus,
                                (i < n).then(|| kernel::p_minus_minus(i, j, &params).unwrap()),
                            ),
                            (
                                FlipKind::ArcPlus,
                                (j > 0).then(|| kernel::q_plus_plus(i, j, &params).unwrap()),
                            ),
                            (
                                FlipKind::ArcMinus,
                                (j < c2).then(|| kernel::q_minus_minus(i, j, &params).unwrap()),
                            ),
                        ];
                        for (kind, approx) in pairs {
                            let Some(approx) = approx else { continue };
                            let exact = stay_probability_f64(kind, i, j, &params).unwrap();
                            assert!(
                                (approx - exact).abs() < 1e-12,
                                "{kind:?}({i},{j}) N={n} alpha={alpha}: {approx} vs {exact}"
                            );
                        }
                    }
                }
            }
        }
    }
}
