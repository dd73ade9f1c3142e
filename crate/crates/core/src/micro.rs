//! Microscopic model: spin configurations on sites and arcs, random
//! neighborhood sampling, interaction potentials, and the heat-bath update
//! process.
//!
//! Sites are `0..N`; arcs are unordered pairs `(x, y)`, `x < y`, stored in
//! lexicographic order so serialized configurations are portable. Spins are
//! `i8` values in `{-1, +1}`.
//!
//! Neighborhoods are redrawn independently at every update epoch ("rapid
//! stirring"): the neighborhood of a site is a uniformly random subset of the
//! other sites whose cardinality is hypergeometric in the current arc count,
//! and the neighborhood of an arc is the star of zero, one, or both of its
//! endpoints, the endpoint count being hypergeometric in the current site
//! count. Member signs seen by an update are likewise refreshed: the number
//! of positive members among `m` neighbors is hypergeometric with the current
//! global counts as successes. For sites this is exactly what reading the
//! configuration's spins over the uniform subset yields; for arcs the count
//! is redrawn explicitly (the star is a fixed arc set, so its configured
//! spins would not be exchangeable). This makes the macro projection
//! `(S+, A+)` of the micro process exactly the two-dimensional chain of the
//! `kernel` module.

use crate::params::{Beta, ModelParams, TiePolicy};
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_distr::{Distribution, Hypergeometric};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// A single spin value, -1 or +1.
pub type Spin = i8;

/// Aggregated state of the macro chain: counts of +1 sites and +1 arcs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacroState {
    /// Number of sites with spin +1, in `0..=N`.
    pub up_sites: usize,
    /// Number of arcs with spin +1, in `0..=C(N,2)`.
    pub up_arcs: usize,
}

impl MacroState {
    pub fn new(up_sites: usize, up_arcs: usize) -> Self {
        MacroState { up_sites, up_arcs }
    }

    /// True when the state lies on the `(N+1) x (C(N,2)+1)` grid for `n` sites.
    pub fn in_grid(&self, n: usize) -> bool {
        self.up_sites <= n && self.up_arcs <= n * (n - 1) / 2
    }
}

impl fmt::Display for MacroState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.up_sites, self.up_arcs)
    }
}

/// Which macro coordinate a path analysis monitors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroCoord {
    Sites,
    Arcs,
}

/// Extract one coordinate of a macro path as a real-valued series.
pub fn coordinate_series(path: &[MacroState], coord: MacroCoord) -> Vec<f64> {
    path.iter()
        .map(|s| match coord {
            MacroCoord::Sites => s.up_sites as f64,
            MacroCoord::Arcs => s.up_arcs as f64,
        })
        .collect()
}

/// Lexicographic index of arc `(x, y)`, `x < y`, among all `C(n,2)` arcs.
pub fn arc_index(n: usize, x: usize, y: usize) -> usize {
    let (a, b) = if x < y { (x, y) } else { (y, x) };
    debug_assert!(a < b && b < n, "arc ({a},{b}) out of range for n={n}");
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// Endpoints `(x, y)`, `x < y`, of the arc at lexicographic index `idx`.
pub fn arc_endpoints(n: usize, idx: usize) -> (usize, usize) {
    debug_assert!(idx < n * (n - 1) / 2);
    let mut x = 0;
    let mut base = 0;
    while base + (n - x - 1) <= idx {
        base += n - x - 1;
        x += 1;
    }
    (x, x + 1 + idx - base)
}

/// Error from parsing a serialized configuration.
#[derive(Debug, Error)]
pub enum ConfigParseError {
    #[error("expected two non-empty lines (site spins, arc spins)")]
    MissingLine,
    #[error("invalid spin token `{0}` (expected +1 or -1)")]
    BadToken(String),
    #[error("{found} site spins do not form a valid system (expected {expected})")]
    BadSiteCount { found: usize, expected: String },
    #[error("expected {expected} arc spins for {n} sites, found {found}")]
    BadArcCount { n: usize, expected: usize, found: usize },
}

/// Joint spin configuration on sites and arcs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroConfig {
    n: usize,
    site_spins: Vec<Spin>,
    arc_spins: Vec<Spin>,
}

impl MicroConfig {
    /// All spins -1.
    pub fn all_down(n: usize) -> Self {
        assert!(n >= 2);
        MicroConfig {
            n,
            site_spins: vec![-1; n],
            arc_spins: vec![-1; n * (n - 1) / 2],
        }
    }

    /// All spins +1.
    pub fn all_up(n: usize) -> Self {
        let mut c = Self::all_down(n);
        c.site_spins.fill(1);
        c.arc_spins.fill(1);
        c
    }

    /// Build from explicit spin vectors. Panics on length mismatch or a
    /// value outside `{-1, +1}`.
    pub fn from_spins(n: usize, site_spins: Vec<Spin>, arc_spins: Vec<Spin>) -> Self {
        assert!(n >= 2);
        assert_eq!(site_spins.len(), n);
        assert_eq!(arc_spins.len(), n * (n - 1) / 2);
        assert!(site_spins.iter().chain(&arc_spins).all(|&s| s == 1 || s == -1));
        MicroConfig { n, site_spins, arc_spins }
    }

    /// Uniformly random configuration with exactly `state.up_sites` positive
    /// sites and `state.up_arcs` positive arcs.
    pub fn random_with_counts<R: Rng + ?Sized>(n: usize, state: MacroState, rng: &mut R) -> Self {
        let mut c = Self::all_down(n);
        assert!(state.in_grid(n), "counts {state} out of range for n={n}");
        for k in index_sample(rng, n, state.up_sites) {
            c.site_spins[k] = 1;
        }
        for k in index_sample(rng, c.arc_spins.len(), state.up_arcs) {
            c.arc_spins[k] = 1;
        }
        c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn site_spin(&self, x: usize) -> Spin {
        self.site_spins[x]
    }

    /// Arc spin lookup, symmetric in the endpoints: `arc_spin(x,y) == arc_spin(y,x)`.
    pub fn arc_spin(&self, x: usize, y: usize) -> Spin {
        assert!(x != y, "no self-arcs");
        self.arc_spins[arc_index(self.n, x, y)]
    }

    pub fn set_site_spin(&mut self, x: usize, s: Spin) {
        debug_assert!(s == 1 || s == -1);
        self.site_spins[x] = s;
    }

    pub fn set_arc_spin(&mut self, x: usize, y: usize, s: Spin) {
        debug_assert!(s == 1 || s == -1);
        self.arc_spins[arc_index(self.n, x, y)] = s;
    }

    /// Counts of positive sites and positive arcs.
    pub fn macro_counts(&self) -> MacroState {
        MacroState {
            up_sites: self.site_spins.iter().filter(|&&s| s == 1).count(),
            up_arcs: self.arc_spins.iter().filter(|&&s| s == 1).count(),
        }
    }

    /// Two-line text form: site spins, then arc spins in lexicographic
    /// pair order, each as `+1`/`-1` tokens separated by single spaces.
    pub fn to_text(&self) -> String {
        let line = |spins: &[Spin]| {
            spins
                .iter()
                .map(|&s| if s == 1 { "+1" } else { "-1" })
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!("{}\n{}\n", line(&self.site_spins), line(&self.arc_spins))
    }
}

impl FromStr for MicroConfig {
    type Err = ConfigParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        fn parse_line(line: &str) -> Result<Vec<Spin>, ConfigParseError> {
            line.split_whitespace()
                .map(|tok| match tok {
                    "+1" | "1" => Ok(1),
                    "-1" => Ok(-1),
                    other => Err(ConfigParseError::BadToken(other.to_string())),
                })
                .collect()
        }
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        let sites = parse_line(lines.next().ok_or(ConfigParseError::MissingLine)?)?;
        let arcs = parse_line(lines.next().ok_or(ConfigParseError::MissingLine)?)?;
        let n = sites.len();
        if n < 2 {
            return Err(ConfigParseError::BadSiteCount {
                found: n,
                expected: "at least 2".into(),
            });
        }
        let expected = n * (n - 1) / 2;
        if arcs.len() != expected {
            return Err(ConfigParseError::BadArcCount { n, expected, found: arcs.len() });
        }
        Ok(MicroConfig { n, site_spins: sites, arc_spins: arcs })
    }
}

/// Global imbalance `G = |4(S+ + A+)/(N(N+1)) - 1| / 2`, in `[0, 1/2]`.
///
/// Zero exactly when the positive fraction of all elements is 1/2, i.e.
/// `S+ + A+ = N(N+1)/4`.
pub fn global_imbalance(state: MacroState, n: usize) -> f64 {
    let total = (n * (n + 1)) as f64;
    0.5 * (4.0 * (state.up_sites + state.up_arcs) as f64 / total - 1.0).abs()
}

fn hypergeometric<R: Rng + ?Sized>(pop: usize, succ: usize, draws: usize, rng: &mut R) -> usize {
    // Degenerate corners first; rand_distr handles them too, but these are
    // the common cases on the grid boundary.
    if succ == 0 || draws == 0 {
        return 0;
    }
    if succ == pop {
        return draws;
    }
    Hypergeometric::new(pop as u64, succ as u64, draws as u64)
        .expect("valid hypergeometric parameters")
        .sample(rng) as usize
}

/// Random neighborhood of site `y`: a uniformly random subset of the other
/// sites whose cardinality is hypergeometric with `N-1` draws from a
/// population of `C(N,2)` arcs with `A+` successes (the urn scheme).
pub fn sample_site_neighborhood<R: Rng + ?Sized>(
    config: &MicroConfig,
    y: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = config.n;
    let arcs = n * (n - 1) / 2;
    let up_arcs = config.macro_counts().up_arcs;
    let v = hypergeometric(arcs, up_arcs, n - 1, rng);
    // Uniform v-subset of the n-1 sites other than y.
    index_sample(rng, n - 1, v)
        .into_iter()
        .map(|k| if k < y { k } else { k + 1 })
        .collect()
}

/// Random neighborhood of arc `(x, y)`: the star of each endpoint drawn
/// "positive" in the two-ball urn scheme, minus the arc itself. The result
/// is empty, one star (`N-2` arcs), or both stars (`2N-4` arcs).
pub fn sample_arc_neighborhood<R: Rng + ?Sized>(
    config: &MicroConfig,
    arc: (usize, usize),
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let n = config.n;
    let (x, y) = arc;
    assert!(x != y && x < n && y < n);
    let up_sites = config.macro_counts().up_sites;
    let accepted = hypergeometric(n, up_sites, 2, rng);
    let endpoints: &[usize] = match accepted {
        0 => &[],
        1 => {
            if rng.random::<bool>() {
                std::slice::from_ref(&arc.0)
            } else {
                std::slice::from_ref(&arc.1)
            }
        }
        _ => &[x, y],
    };
    let mut nbhd = Vec::with_capacity(endpoints.len() * (n - 2));
    for &e in endpoints {
        for other in 0..n {
            if other != x && other != y {
                nbhd.push(if e < other { (e, other) } else { (other, e) });
            }
        }
    }
    nbhd
}

/// Interaction potential of site `x` over an explicit neighborhood:
/// sum of neighbor site spins minus `alpha * eta(x) * G`.
pub fn site_potential(
    config: &MicroConfig,
    x: usize,
    nbhd: &[usize],
    alpha: f64,
    state: MacroState,
) -> f64 {
    let local: i32 = nbhd.iter().map(|&y| config.site_spin(y) as i32).sum();
    local as f64 - alpha * config.site_spin(x) as f64 * global_imbalance(state, config.n)
}

/// Interaction potential of an arc over an explicit arc neighborhood:
/// sum of neighbor arc spins minus `alpha * theta(arc) * G`.
pub fn arc_potential(
    config: &MicroConfig,
    arc: (usize, usize),
    nbhd: &[(usize, usize)],
    alpha: f64,
    state: MacroState,
) -> f64 {
    let local: i32 = nbhd.iter().map(|&(u, v)| config.arc_spin(u, v) as i32).sum();
    local as f64 - alpha * config.arc_spin(arc.0, arc.1) as f64 * global_imbalance(state, config.n)
}

/// New spin for an element with potential `h` and current spin `current`.
///
/// Finite beta: +1 with probability `1/(1 + exp(-2 beta h))`. Frozen limit:
/// the sign of `h`; a tie (`h == 0`) flips under `PaperKernel` and is a fair
/// coin under `HeatBathHalf`.
pub fn spin_from_potential<R: Rng + ?Sized>(
    h: f64,
    current: Spin,
    params: &ModelParams,
    rng: &mut R,
) -> Spin {
    match params.beta {
        Beta::Finite(beta) => {
            let p_up = 1.0 / (1.0 + (-2.0 * beta * h).exp());
            if rng.random::<f64>() < p_up {
                1
            } else {
                -1
            }
        }
        Beta::Frozen => {
            if h > 0.0 {
                1
            } else if h < 0.0 {
                -1
            } else {
                match params.tie_policy {
                    TiePolicy::PaperKernel => -current,
                    TiePolicy::HeatBathHalf => {
                        if rng.random::<bool>() {
                            1
                        } else {
                            -1
                        }
                    }
                }
            }
        }
    }
}

/// One heat-bath update of site `x` (fresh neighborhood, actual spins over a
/// uniform subset).
pub fn update_site<R: Rng + ?Sized>(
    config: &mut MicroConfig,
    x: usize,
    params: &ModelParams,
    rng: &mut R,
) {
    let state = config.macro_counts();
    let nbhd = sample_site_neighborhood(config, x, rng);
    let h = site_potential(config, x, &nbhd, params.alpha, state);
    let s = spin_from_potential(h, config.site_spin(x), params, rng);
    config.set_site_spin(x, s);
}

/// One heat-bath update of an arc (fresh endpoint draw, member signs
/// refreshed hypergeometrically per the stirring scheme).
pub fn update_arc<R: Rng + ?Sized>(
    config: &mut MicroConfig,
    arc: (usize, usize),
    params: &ModelParams,
    rng: &mut R,
) {
    let n = config.n;
    let state = config.macro_counts();
    let current = config.arc_spin(arc.0, arc.1);
    let accepted = hypergeometric(n, state.up_sites, 2, rng);
    let m = accepted * (n - 2);
    // Positive members among the m neighbors: hypergeometric over the other
    // arcs, successes = positive arcs excluding the one being updated.
    let succ = state.up_arcs - usize::from(current == 1);
    let k = hypergeometric(n * (n - 1) / 2 - 1, succ, m, rng);
    let local = 2.0 * k as f64 - m as f64;
    let h = local - params.alpha * current as f64 * global_imbalance(state, n);
    let s = spin_from_potential(h, current, params, rng);
    config.set_arc_spin(arc.0, arc.1, s);
}

/// One epoch of the heat-bath process: a uniformly chosen element (site or
/// arc) is updated in place.
pub fn heat_bath_update<R: Rng + ?Sized>(
    config: &mut MicroConfig,
    params: &ModelParams,
    rng: &mut R,
) {
    let n = config.n;
    let elements = n * (n + 1) / 2;
    let e = rng.random_range(0..elements);
    if e < n {
        update_site(config, e, params, rng);
    } else {
        let arc = arc_endpoints(n, e - n);
        update_arc(config, arc, params, rng);
    }
}

/// Run the embedded jump chain for `steps` epochs, recording the macro
/// counts after each epoch (the initial state is not recorded).
///
/// Epoch times of the continuous-time process are not materialized: every
/// quantity of interest depends only on the jump chain.
pub fn run_micro<R: Rng + ?Sized>(
    mut config: MicroConfig,
    params: &ModelParams,
    steps: usize,
    rng: &mut R,
) -> Vec<MacroState> {
    let mut path = Vec::with_capacity(steps);
    for _ in 0..steps {
        heat_bath_update(&mut config, params, rng);
        path.push(config.macro_counts());
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn arc_indexing_round_trips() {
        for n in 2..=8 {
            let mut idx = 0;
            for x in 0..n {
                for y in (x + 1)..n {
                    assert_eq!(arc_index(n, x, y), idx);
                    assert_eq!(arc_index(n, y, x), idx);
                    assert_eq!(arc_endpoints(n, idx), (x, y));
                    idx += 1;
                }
            }
            assert_eq!(idx, n * (n - 1) / 2);
        }
    }

    #[test]
    fn macro_counts_corners() {
        assert_eq!(MicroConfig::all_down(4).macro_counts(), MacroState::new(0, 0));
        assert_eq!(MicroConfig::all_up(4).macro_counts(), MacroState::new(4, 6));
    }

    #[test]
    fn macro_counts_hand_built_configuration() {
        // N=4: sites 0 and 2 up; arcs (0,2), (1,3), (2,3) up.
        let mut c = MicroConfig::all_down(4);
        c.set_site_spin(0, 1);
        c.set_site_spin(2, 1);
        c.set_arc_spin(0, 2, 1);
        c.set_arc_spin(3, 1, 1);
        c.set_arc_spin(2, 3, 1);
        assert_eq!(c.macro_counts(), MacroState::new(2, 3));
        assert_eq!(c.arc_spin(1, 3), 1);
        assert_eq!(c.arc_spin(3, 1), 1);
        assert_eq!(c.arc_spin(0, 1), -1);
    }

    #[test]
    fn global_imbalance_examples() {
        // N=3: total elements 6, G = |(i+j)/3 - 1|/2.
        assert_eq!(global_imbalance(MacroState::new(0, 0), 3), 0.5);
        assert_eq!(global_imbalance(MacroState::new(3, 3), 3), 0.5);
        assert_eq!(global_imbalance(MacroState::new(1, 2), 3), 0.0);
    }

    #[test]
    fn site_neighborhood_degenerate_arc_counts() {
        let mut r = rng(1);
        let all_down = MicroConfig::all_down(5);
        for _ in 0..50 {
            assert!(sample_site_neighborhood(&all_down, 2, &mut r).is_empty());
        }
        let all_up = MicroConfig::all_up(5);
        for _ in 0..50 {
            let mut nb = sample_site_neighborhood(&all_up, 2, &mut r);
            nb.sort_unstable();
            assert_eq!(nb, vec![0, 1, 3, 4]);
        }
    }

    #[test]
    fn arc_neighborhood_degenerate_site_counts() {
        let mut r = rng(2);
        let all_down = MicroConfig::all_down(4);
        for _ in 0..50 {
            assert!(sample_arc_neighborhood(&all_down, (1, 3), &mut r).is_empty());
        }
        let all_up = MicroConfig::all_up(4);
        for _ in 0..50 {
            let nb = sample_arc_neighborhood(&all_up, (1, 3), &mut r);
            assert_eq!(nb.len(), 2 * 4 - 4);
        }
    }

    #[test]
    fn potentials_match_hand_values() {
        // nbhd empty, alpha = 0 -> 0.
        let c = MicroConfig::all_up(3);
        assert_eq!(site_potential(&c, 0, &[], 0.0, c.macro_counts()), 0.0);
        // N=3, state (3,3), eta(x)=+1, two +1 neighbors, alpha=6:
        // 2 - 6 * 1 * 0.5 = -1.
        assert_eq!(site_potential(&c, 0, &[1, 2], 6.0, c.macro_counts()), -1.0);
        // Arc with empty neighborhood flips when G > 0: potential +alpha*G.
        let d = MicroConfig::all_down(3);
        let h = arc_potential(&d, (0, 1), &[], 6.0, d.macro_counts());
        assert_eq!(h, 3.0);
        // N=4, state (2,3), arc -1, neighbors (+1,-1), alpha=4, G=0 -> 0.
        let mut c4 = MicroConfig::all_down(4);
        c4.set_site_spin(0, 1);
        c4.set_site_spin(1, 1);
        c4.set_arc_spin(0, 2, 1);
        c4.set_arc_spin(0, 3, 1);
        c4.set_arc_spin(1, 2, 1);
        assert_eq!(c4.macro_counts(), MacroState::new(2, 3));
        assert_eq!(global_imbalance(c4.macro_counts(), 4), 0.0);
        let h = arc_potential(&c4, (2, 3), &[(0, 2), (1, 3)], 4.0, c4.macro_counts());
        assert_eq!(h, 0.0);
    }

    #[test]
    fn frozen_update_follows_potential_sign() {
        let params = ModelParams::frozen(3, 6.0);
        let mut r = rng(3);
        for _ in 0..20 {
            assert_eq!(spin_from_potential(0.5, -1, &params, &mut r), 1);
            assert_eq!(spin_from_potential(-0.5, 1, &params, &mut r), -1);
            // Tie flips under the kernel convention.
            assert_eq!(spin_from_potential(0.0, 1, &params, &mut r), -1);
            assert_eq!(spin_from_potential(0.0, -1, &params, &mut r), 1);
        }
    }

    #[test]
    fn finite_beta_tie_is_fair_coin() {
        let params = ModelParams::with_beta(3, 6.0, 1.0);
        let mut r = rng(4);
        let trials = 100_000;
        let ups = (0..trials)
            .filter(|_| spin_from_potential(0.0, -1, &params, &mut r) == 1)
            .count();
        // 3 sigma around p = 1/2.
        let sigma = (0.25 / trials as f64).sqrt();
        assert!((ups as f64 / trials as f64 - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn run_micro_reproducible_and_trapped() {
        let params = ModelParams::frozen(10, 3.0);
        let start = MicroConfig::all_up(10);
        let a = run_micro(start.clone(), &params, 200, &mut rng(7));
        let b = run_micro(start.clone(), &params, 200, &mut rng(7));
        assert_eq!(a, b);
        assert!(a.iter().all(|&s| s == MacroState::new(10, 45)));
        assert!(run_micro(start, &params, 0, &mut rng(8)).is_empty());
    }

    #[test]
    fn text_round_trip() {
        let mut r = rng(5);
        for _ in 0..20 {
            let c = MicroConfig::random_with_counts(5, MacroState::new(2, 7), &mut r);
            let parsed: MicroConfig = c.to_text().parse().unwrap();
            assert_eq!(parsed, c);
        }
        assert!("".parse::<MicroConfig>().is_err());
        assert!("+1 -1\n+1 frog\n".parse::<MicroConfig>().is_err());
        assert!("+1 -1 +1\n+1 -1\n".parse::<MicroConfig>().is_err());
    }
}
