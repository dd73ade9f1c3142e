//! Model parameterization: system size, coupling constant, temperature regime.

use std::fmt;

/// Inverse temperature of the heat-bath dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    /// The frozen limit: updates follow the sign of the interaction
    /// potential deterministically (up to tie handling).
    Frozen,
    /// Finite inverse temperature; the update coin is logistic in the
    /// potential.
    Finite(f64),
}

/// How a zero interaction potential is resolved in the frozen limit.
///
/// The closed-form transition kernel counts a zero potential as a sign
/// flip (its inequalities are strict), while the heat-bath rule at any
/// finite temperature gives probability 1/2. `PaperKernel` is the default
/// so the micro simulator agrees with the exact kernel; `HeatBathHalf`
/// keeps the limit of the finite-temperature rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TiePolicy {
    PaperKernel,
    HeatBathHalf,
}

/// Full parameterization of one model instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Number of sites (N >= 2). The arc set is all unordered site pairs.
    pub n: usize,
    /// Coupling constant weighting the global-minority term against the
    /// local-majority term (alpha >= 0).
    pub alpha: f64,
    pub beta: Beta,
    pub tie_policy: TiePolicy,
}

impl ModelParams {
    /// Frozen-limit instance with the kernel tie convention.
    ///
    /// Panics if `n < 2`, or `alpha` is negative or non-finite.
    pub fn frozen(n: usize, alpha: f64) -> Self {
        assert!(n >= 2, "need at least two sites, got {n}");
        assert!(
            alpha.is_finite() && alpha >= 0.0,
            "coupling constant must be finite and non-negative, got {alpha}"
        );
        ModelParams {
            n,
            alpha,
            beta: Beta::Frozen,
            tie_policy: TiePolicy::PaperKernel,
        }
    }

    /// Finite-temperature instance. Panics on invalid `n`, `alpha`, or
    /// non-positive `beta`.
    pub fn with_beta(n: usize, alpha: f64, beta: f64) -> Self {
        assert!(beta.is_finite() && beta > 0.0, "beta must be positive, got {beta}");
        ModelParams {
            beta: Beta::Finite(beta),
            ..Self::frozen(n, alpha)
        }
    }

    pub fn tie_policy(self, tie_policy: TiePolicy) -> Self {
        ModelParams { tie_policy, ..self }
    }

    /// Number of arcs, C(N,2) = N(N-1)/2.
    pub fn arc_count(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    /// Total number of spin-carrying elements, N + C(N,2) = N(N+1)/2.
    pub fn element_count(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    /// Dimension of the macro state space, (N+1) * (C(N,2)+1).
    pub fn state_dim(&self) -> usize {
        (self.n + 1) * (self.arc_count() + 1)
    }
}

impl fmt::Display for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N={} alpha={}", self.n, self.alpha)?;
        if let Beta::Finite(b) = self.beta {
            write!(f, " beta={b}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let p = ModelParams::frozen(4, 0.0);
        assert_eq!(p.arc_count(), 6);
        assert_eq!(p.element_count(), 10);
        assert_eq!(p.state_dim(), 35);
    }

    #[test]
    #[should_panic]
    fn rejects_single_site() {
        ModelParams::frozen(1, 1.0);
    }

    #[test]
    #[should_panic]
    fn rejects_negative_alpha() {
        ModelParams::frozen(5, -0.1);
    }
}
