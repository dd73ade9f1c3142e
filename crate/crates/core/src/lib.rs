//! Hierarchical site/arc spin market model.
//!
//! A state of the system assigns a spin in `{-1, +1}` to each of `N` sites
//! and each of the `C(N,2)` arcs of the complete graph on the sites. The
//! heat-bath dynamics trades off alignment with a randomly stirred local
//! neighborhood against a contrarian global-imbalance term weighted by a
//! coupling constant `alpha`. In the frozen (zero-temperature) phase the
//! pair `(S+, A+)` of positive-site and positive-arc counts is an exactly
//! lumpable two-dimensional Markov chain with closed-form hypergeometric
//! transition probabilities.
//!
//! Modules:
//! - [`micro`]: spin configurations, neighborhood sampling, heat-bath updates;
//! - [`kernel`]: the exact macro transition kernel and macro-chain simulation;
//! - [`exact`]: big-integer-rational enumeration oracle for small systems;
//! - [`spectral`]: transition matrices, invariant measures, spectra, mixing;
//! - [`skeleton`]: drift fields, the deterministic cellular-automaton
//!   skeleton, attractor stability, submartingale diagnostics;
//! - [`longmem`]: rescaled-range (R/S) long-memory statistics;
//! - [`scan`]: regime classification and parameter-sweep analyses.

pub mod exact;
pub mod kernel;
pub mod longmem;
pub mod micro;
pub mod params;
pub mod scan;
pub mod skeleton;
pub mod spectral;

pub use kernel::{macro_step_distribution, StepDistribution};
pub use micro::{MacroCoord, MacroState, MicroConfig};
pub use params::{Beta, ModelParams, TiePolicy};


