//! The deterministic skeleton of the macro chain: conditional drift
//! functions `f` and `g`, the signum cellular automaton they induce,
//! equilibrium and cycle detection with lattice-escape stability
//! classification, contingent-submartingale diagnostics, and the two
//! systematic deviations between the stochastic process and its
//! deterministic approximation (propagation and discretization effects).

use crate::kernel::{self, macro_step_distribution};
use crate::micro::{MacroCoord, MacroState};
use crate::params::ModelParams;
use crate::spectral::{grid_dim, index_state, state_index};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("state ({i},{j}) leaves the grid for N={n}")]
    OutOfGrid { i: i64, j: i64, n: usize },
}

/// Values below this are treated as exact zeros by the signum dynamics.
/// Drift values at forced-probability states are exact zeros contaminated
/// only by rounding.
pub const SIGN_ZERO_TOL: f64 = 1e-12;

fn signum(v: f64) -> i8 {
    if v.abs() < SIGN_ZERO_TOL {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

/// Conditional site drift `f(i,j) = (1 - i/N)(1 - P--) - (i/N)(1 - P++)`,
/// the expected one-step increment of `S+` scaled by `(N+1)/2`.
/// Stay-probabilities with zero selection weight are not evaluated.
pub fn drift_f(i: usize, j: usize, params: &ModelParams) -> f64 {
    let n = params.n;
    let mut v = 0.0;
    if i < n {
        v += (1.0 - i as f64 / n as f64)
            * (1.0 - kernel::p_minus_minus(i, j, params).expect("in domain"));
    }
    if i > 0 {
        v -= (i as f64 / n as f64)
            * (1.0 - kernel::p_plus_plus(i, j, params).expect("in domain"));
    }
    v
}

/// Conditional arc drift `g(i,j) = (1 - j/C)(1 - Q--) - (j/C)(1 - Q++)`,
/// the expected one-step increment of `A+` scaled by `(N+1)/(N-1)`.
pub fn drift_g(i: usize, j: usize, params: &ModelParams) -> f64 {
    let c = params.arc_count();
    let mut v = 0.0;
    if j < c {
        v += (1.0 - j as f64 / c as f64)
            * (1.0 - kernel::q_minus_minus(i, j, params).expect("in domain"));
    }
    if j > 0 {
        v -= (j as f64 / c as f64)
            * (1.0 - kernel::q_plus_plus(i, j, params).expect("in domain"));
    }
    v
}

/// Drift values and their signs over the whole state grid.
#[derive(Debug, Clone)]
pub struct DriftField {
    n: usize,
    f_values: Vec<f64>,
    g_values: Vec<f64>,
    sign_f: Vec<i8>,
    sign_g: Vec<i8>,
}

impl DriftField {
    /// Evaluate both drifts over the grid.
    pub fn compute(params: &ModelParams) -> Self {
        let n = params.n;
        let dim = grid_dim(n);
        let mut f_values = Vec::with_capacity(dim);
        let mut g_values = Vec::with_capacity(dim);
        for k in 0..dim {
            let s = index_state(k, n);
            f_values.push(drift_f(s.up_sites, s.up_arcs, params));
            g_values.push(drift_g(s.up_sites, s.up_arcs, params));
        }
        let sign_f = f_values.iter().map(|&v| signum(v)).collect();
        let sign_g = g_values.iter().map(|&v| signum(v)).collect();
        DriftField { n, f_values, g_values, sign_f, sign_g }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn arc_count(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    pub fn f(&self, s: MacroState) -> f64 {
        self.f_values[state_index(s, self.n)]
    }

    pub fn g(&self, s: MacroState) -> f64 {
        self.g_values[state_index(s, self.n)]
    }

    pub fn sign_f(&self, s: MacroState) -> i8 {
        self.sign_f[state_index(s, self.n)]
    }

    pub fn sign_g(&self, s: MacroState) -> i8 {
        self.sign_g[state_index(s, self.n)]
    }

    pub fn states(&self) -> impl Iterator<Item = MacroState> + '_ {
        (0..grid_dim(self.n)).map(move |k| index_state(k, self.n))
    }

    #[cfg(test)]
    fn zeroed(params: &ModelParams) -> Self {
        let dim = grid_dim(params.n);
        DriftField {
            n: params.n,
            f_values: vec![0.0; dim],
            g_values: vec![0.0; dim],
            sign_f: vec![0; dim],
            sign_g: vec![0; dim],
        }
    }
}

fn clamp_add(x: usize, d: i8, hi: usize) -> usize {
    match d {
        1 if x < hi => x + 1,
        -1 if x > 0 => x - 1,
        _ => x,
    }
}

/// One step of the signum cellular automaton, clamped to the grid.
pub fn ca_step(state: MacroState, field: &DriftField) -> MacroState {
    MacroState::new(
        clamp_add(state.up_sites, field.sign_f(state), field.n),
        clamp_add(state.up_arcs, field.sign_g(state), field.arc_count()),
    )
}

/// A cycle of the cellular automaton, states in orbit order starting from
/// the smallest flat index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaCycle {
    pub states: Vec<MacroState>,
}

impl CaCycle {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn contains(&self, s: MacroState) -> bool {
        self.states.contains(&s)
    }
}

impl fmt::Display for CaCycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.states.iter().map(|s| s.to_string()).collect();
        write!(f, "{}", parts.join(" <-> "))
    }
}

/// All terminal cycles of the automaton plus the basin map
/// (flat state index -> cycle index).
#[derive(Debug, Clone)]
pub struct CaCycles {
    pub cycles: Vec<CaCycle>,
    pub basin: Vec<usize>,
}

/// Exhaustively iterate the automaton from every lattice state; the finite
/// grid guarantees every orbit reaches a cycle.
pub fn ca_cycles(field: &DriftField) -> CaCycles {
    let n = field.n;
    let dim = grid_dim(n);
    let next: Vec<usize> = (0..dim)
        .map(|k| state_index(ca_step(index_state(k, n), field), n))
        .collect();

    const UNSEEN: usize = usize::MAX;
    let mut basin = vec![UNSEEN; dim];
    let mut cycles: Vec<CaCycle> = Vec::new();
    let mut on_path = vec![false; dim];

    for start in 0..dim {
        if basin[start] != UNSEEN {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        while basin[cur] == UNSEEN && !on_path[cur] {
            on_path[cur] = true;
            path.push(cur);
            cur = next[cur];
        }
        let cycle_idx = if basin[cur] != UNSEEN {
            basin[cur]
        } else {
            // `cur` is on the current path: everything from its first
            // occurrence onward is a new cycle.
            let pos = path.iter().position(|&k| k == cur).unwrap();
            let mut cyc: Vec<usize> = path[pos..].to_vec();
            let min_pos = cyc
                .iter()
                .enumerate()
                .min_by_key(|&(_, &k)| k)
                .map(|(p, _)| p)
                .unwrap();
            cyc.rotate_left(min_pos);
            cycles.push(CaCycle {
                states: cyc.iter().map(|&k| index_state(k, n)).collect(),
            });
            cycles.len() - 1
        };
        for k in path {
            basin[k] = cycle_idx;
            on_path[k] = false;
        }
    }
    CaCycles { cycles, basin }
}

fn chebyshev(a: MacroState, b: MacroState) -> usize {
    let di = a.up_sites.abs_diff(b.up_sites);
    let dj = a.up_arcs.abs_diff(b.up_arcs);
    di.max(dj)
}

/// A connected region where the `f = 0` and `g = 0` level sets cross, found
/// from lattice edges along which both drifts change sign.
#[derive(Debug, Clone)]
pub struct CrossingRegion {
    /// The double sign-change edges spanning the region.
    pub edges: Vec<(MacroState, MacroState)>,
    /// The grid state labeling the region.
    pub representative: MacroState,
}

fn sign_flips(a: i8, b: i8) -> bool {
    a != b && !(a == 0 && b == 0)
}

/// Locate the off-cycle intersections of the drift zero sets.
///
/// A lattice edge is a double edge when both `f` and `g` change sign across
/// it (a zero on one side counts). Double edges whose endpoints touch a
/// cycle of the automaton belong to that cycle's structure and are dropped,
/// as are leftover regions spanned by a single edge. The remaining edges are
/// clustered by adjacency; each cluster is one crossing region.
///
/// The labeling convention: the representative is the flat-order (lower)
/// median of the states adjacent to both endpoints of some region edge
/// whose drifts are both strictly negative; when no such state exists, the
/// adjacent state with both signs nonzero and the smallest combined drift
/// magnitude; failing that, the smallest-drift edge endpoint.
pub fn crossing_regions(field: &DriftField, cycles: &[CaCycle]) -> Vec<CrossingRegion> {
    let n = field.n;
    let c = field.arc_count();
    let cycle_states: Vec<MacroState> =
        cycles.iter().flat_map(|cy| cy.states.iter().copied()).collect();
    let near_cycle = |s: MacroState| cycle_states.iter().any(|&t| chebyshev(s, t) <= 1);

    let mut edges: Vec<(MacroState, MacroState)> = Vec::new();
    for s in field.states() {
        let (i, j) = (s.up_sites, s.up_arcs);
        for t in [
            (i < n).then(|| MacroState::new(i + 1, j)),
            (j < c).then(|| MacroState::new(i, j + 1)),
        ]
        .into_iter()
        .flatten()
        {
            if sign_flips(field.sign_f(s), field.sign_f(t))
                && sign_flips(field.sign_g(s), field.sign_g(t))
                && !near_cycle(s)
                && !near_cycle(t)
            {
                edges.push((s, t));
            }
        }
    }

    // Cluster edges whose endpoint sets touch.
    let mut group: Vec<usize> = (0..edges.len()).collect();
    fn find(group: &[usize], mut a: usize) -> usize {
        while group[a] != a {
            a = group[a];
        }
        a
    }
    let touch = |a: &(MacroState, MacroState), b: &(MacroState, MacroState)| {
        [a.0, a.1]
            .iter()
            .any(|&x| [b.0, b.1].iter().any(|&y| chebyshev(x, y) <= 1))
    };
    for a in 0..edges.len() {
        for b in (a + 1)..edges.len() {
            if touch(&edges[a], &edges[b]) {
                let (ra, rb) = (find(&group, a), find(&group, b));
                if ra != rb {
                    group[rb] = ra;
                }
            }
        }
    }
    let mut clusters: Vec<Vec<(MacroState, MacroState)>> = Vec::new();
    let mut cluster_of: Vec<Option<usize>> = vec![None; edges.len()];
    for e in 0..edges.len() {
        let root = find(&group, e);
        match cluster_of[root] {
            Some(k) => clusters[k].push(edges[e]),
            None => {
                cluster_of[root] = Some(clusters.len());
                clusters.push(vec![edges[e]]);
            }
        }
    }

    let mut regions: Vec<CrossingRegion> = clusters
        .into_iter()
        .filter(|cl| cl.len() >= 2)
        .map(|cl| {
            let representative = region_representative(field, &cl);
            CrossingRegion { edges: cl, representative }
        })
        .collect();
    regions.sort_by_key(|r| state_index(r.representative, n));
    regions
}

fn region_representative(
    field: &DriftField,
    edges: &[(MacroState, MacroState)],
) -> MacroState {
    let n = field.n;
    // States adjacent (Chebyshev <= 1) to both endpoints of some edge.
    let mut adjacent: BTreeSet<usize> = BTreeSet::new();
    for &(a, b) in edges {
        for s in field.states() {
            if chebyshev(s, a) <= 1 && chebyshev(s, b) <= 1 {
                adjacent.insert(state_index(s, n));
            }
        }
    }
    let adjacent: Vec<MacroState> = adjacent.into_iter().map(|k| index_state(k, n)).collect();
    let down_left: Vec<MacroState> = adjacent
        .iter()
        .copied()
        .filter(|&s| field.sign_f(s) == -1 && field.sign_g(s) == -1)
        .collect();
    if !down_left.is_empty() {
        return down_left[(down_left.len() - 1) / 2];
    }
    let generic = adjacent
        .iter()
        .copied()
        .filter(|&s| field.sign_f(s) != 0 && field.sign_g(s) != 0)
        .min_by(|a, b| {
            let da = field.f(*a).abs() + field.g(*a).abs();
            let db = field.f(*b).abs() + field.g(*b).abs();
            da.total_cmp(&db).then(state_index(*a, n).cmp(&state_index(*b, n)))
        });
    generic.unwrap_or_else(|| {
        edges
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .min_by(|a, b| {
                let da = field.f(*a).abs() + field.g(*a).abs();
                let db = field.f(*b).abs() + field.g(*b).abs();
                da.total_cmp(&db).then(state_index(*a, n).cmp(&state_index(*b, n)))
            })
            .unwrap()
    })
}

/// Escape-based stability class of a lattice attractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityClass {
    /// Every perturbed start within the radius returns to the attractor.
    Stable,
    /// Some perturbed starts return; the rest escape.
    Saddle,
    /// No perturbed start returns.
    Unstable,
}

impl fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StabilityClass::Stable => "stable",
            StabilityClass::Saddle => "saddle",
            StabilityClass::Unstable => "unstable",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub class: StabilityClass,
    /// Perturbed starts that came back within the follow budget.
    pub returning: Vec<MacroState>,
    /// Perturbed starts that escaped, with their first step.
    pub escapes: Vec<(MacroState, MacroState)>,
}

/// Default follow budget for a given radius.
pub fn default_follow_steps(radius: usize) -> usize {
    4 * radius + 4
}

/// Classify an attractor (a fixed point, a cycle, or any state set) by
/// following the automaton from every lattice state within Chebyshev
/// distance `radius` of the set for up to `follow_steps` steps.
pub fn classify_stability(
    attractor: &[MacroState],
    field: &DriftField,
    radius: usize,
    follow_steps: usize,
) -> StabilityReport {
    let n = field.n;
    let c = field.arc_count();
    let mut starts: BTreeSet<usize> = BTreeSet::new();
    for s in attractor {
        let (i, j) = (s.up_sites, s.up_arcs);
        for di in -(radius as i64)..=radius as i64 {
            for dj in -(radius as i64)..=radius as i64 {
                let (ti, tj) = (i as i64 + di, j as i64 + dj);
                if ti < 0 || tj < 0 || ti > n as i64 || tj > c as i64 {
                    continue;
                }
                let t = MacroState::new(ti as usize, tj as usize);
                if !attractor.contains(&t) {
                    starts.insert(state_index(t, n));
                }
            }
        }
    }
    let mut returning = Vec::new();
    let mut escapes = Vec::new();
    for k in starts {
        let start = index_state(k, n);
        let mut cur = start;
        let mut came_back = false;
        for _ in 0..follow_steps {
            cur = ca_step(cur, field);
            if attractor.contains(&cur) {
                came_back = true;
                break;
            }
        }
        if came_back {
            returning.push(start);
        } else {
            escapes.push((start, ca_step(start, field)));
        }
    }
    let class = if escapes.is_empty() {
        StabilityClass::Stable
    } else if returning.is_empty() {
        StabilityClass::Unstable
    } else {
        StabilityClass::Saddle
    };
    StabilityReport { class, returning, escapes }
}

/// The full equilibrium inventory: exact cycles of the automaton, plus the
/// approximate real crossings reported separately.
#[derive(Debug, Clone)]
pub struct EquilibriumSet {
    pub fixed_points: Vec<MacroState>,
    pub two_cycles: Vec<[MacroState; 2]>,
    /// Cycles of period greater than two (beyond the period-2 analysis the
    /// drift tables cover), flagged separately.
    pub longer_cycles: Vec<CaCycle>,
    /// Off-cycle crossing regions of the drift zero sets.
    pub crossings: Vec<CrossingRegion>,
    pub basin: Vec<usize>,
    pub cycles: Vec<CaCycle>,
}

/// Detect every cycle of the automaton by exhaustive iteration and the
/// off-cycle zero crossings of the interpolated drift pair.
pub fn find_equilibria(field: &DriftField) -> EquilibriumSet {
    let cc = ca_cycles(field);
    let mut fixed_points = Vec::new();
    let mut two_cycles = Vec::new();
    let mut longer_cycles = Vec::new();
    for cyc in &cc.cycles {
        match cyc.states.len() {
            1 => fixed_points.push(cyc.states[0]),
            2 => two_cycles.push([cyc.states[0], cyc.states[1]]),
            _ => longer_cycles.push(cyc.clone()),
        }
    }
    let crossings = crossing_regions(field, &cc.cycles);
    EquilibriumSet {
        fixed_points,
        two_cycles,
        longer_cycles,
        crossings,
        basin: cc.basin,
        cycles: cc.cycles,
    }
}

/// How an attractor entry arose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttractorKind {
    FixedPoint,
    TwoCycle,
    LongCycle,
    /// Approximate drift zero crossing that is not a cycle of the automaton.
    Crossing,
}

#[derive(Debug, Clone)]
pub struct AttractorEntry {
    /// One state for fixed points, crossings, and the representative of a
    /// non-stable cycle; two states for a stable 2-cycle; the whole orbit
    /// for longer cycles.
    pub states: Vec<MacroState>,
    pub kind: AttractorKind,
    pub class: StabilityClass,
    pub escape_notes: Vec<String>,
    /// Period > 2 cycles are outside the period-2 stability analysis scope.
    pub beyond_period_two: bool,
}

/// Classified attractor inventory plus the basin map.
#[derive(Debug, Clone)]
pub struct AttractorReport {
    pub attractors: Vec<AttractorEntry>,
    /// Flat state index -> attractor entry index for the entry the orbit of
    /// the state terminates in.
    pub basins: Vec<usize>,
}

impl AttractorReport {
    pub fn fixed_point_states(&self) -> Vec<MacroState> {
        self.attractors
            .iter()
            .filter(|e| e.states.len() == 1)
            .map(|e| e.states[0])
            .collect()
    }

    pub fn two_cycle_pairs(&self) -> Vec<[MacroState; 2]> {
        self.attractors
            .iter()
            .filter(|e| e.kind == AttractorKind::TwoCycle && e.states.len() == 2)
            .map(|e| [e.states[0], e.states[1]])
            .collect()
    }
}

/// Build the classified attractor report for a drift field.
///
/// Cycles found by exhaustive iteration are classified by lattice escape
/// (radius 1, follow budget 8 by default); cycles whose state sets touch
/// (Chebyshev distance <= 1) are classified as one group, since a
/// perturbation landing on a twin cycle has not left the attracting
/// structure. A cycle in a stable group is reported with its full orbit; a
/// non-stable cycle is collapsed to its smallest-drift state, which is how
/// the drift tables locate such equilibria. Off-cycle zero crossings are
/// reported as point equilibria with their own escape classification.
pub fn attractor_report(field: &DriftField) -> AttractorReport {
    attractor_report_with(field, 1, default_follow_steps(1))
}

pub fn attractor_report_with(
    field: &DriftField,
    radius: usize,
    follow_steps: usize,
) -> AttractorReport {
    let n = field.n;
    let eq = find_equilibria(field);
    let cycles = &eq.cycles;

    // Group cycles whose states touch (union-find).
    let mut group_of: Vec<usize> = (0..cycles.len()).collect();
    fn find(group_of: &[usize], mut a: usize) -> usize {
        while group_of[a] != a {
            a = group_of[a];
        }
        a
    }
    for a in 0..cycles.len() {
        for b in (a + 1)..cycles.len() {
            let touching = cycles[a]
                .states
                .iter()
                .any(|&s| cycles[b].states.iter().any(|&t| chebyshev(s, t) <= 1));
            if touching {
                let (ra, rb) = (find(&group_of, a), find(&group_of, b));
                if ra != rb {
                    group_of[rb] = ra;
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_index: Vec<Option<usize>> = vec![None; cycles.len()];
    for c in 0..cycles.len() {
        let root = find(&group_of, c);
        match group_index[root] {
            Some(g) => groups[g].push(c),
            None => {
                group_index[root] = Some(groups.len());
                groups.push(vec![c]);
            }
        }
    }

    let mut attractors: Vec<AttractorEntry> = Vec::new();
    let mut entry_of_cycle: Vec<usize> = vec![0; cycles.len()];
    for group in &groups {
        let union: Vec<MacroState> = group
            .iter()
            .flat_map(|&c| cycles[c].states.iter().copied())
            .collect();
        let report = classify_stability(&union, field, radius, follow_steps);
        let notes: Vec<String> = report
            .escapes
            .iter()
            .map(|(s, t)| format!("escape from {s} via {t}"))
            .collect();
        for &c in group {
            let cyc = &cycles[c];
            entry_of_cycle[c] = attractors.len();
            let entry = if report.class == StabilityClass::Stable {
                AttractorEntry {
                    states: cyc.states.clone(),
                    kind: match cyc.states.len() {
                        1 => AttractorKind::FixedPoint,
                        2 => AttractorKind::TwoCycle,
                        _ => AttractorKind::LongCycle,
                    },
                    class: StabilityClass::Stable,
                    escape_notes: notes.clone(),
                    beyond_period_two: cyc.states.len() > 2,
                }
            } else {
                // Collapse a non-stable cycle to its smallest-drift state.
                let rep = cyc
                    .states
                    .iter()
                    .copied()
                    .min_by(|a, b| {
                        let da = field.f(*a).abs() + field.g(*a).abs();
                        let db = field.f(*b).abs() + field.g(*b).abs();
                        da.total_cmp(&db)
                            .then(state_index(*a, n).cmp(&state_index(*b, n)))
                    })
                    .unwrap();
                AttractorEntry {
                    states: vec![rep],
                    kind: if cyc.states.len() == 1 {
                        AttractorKind::FixedPoint
                    } else {
                        AttractorKind::TwoCycle
                    },
                    class: report.class,
                    escape_notes: notes.clone(),
                    beyond_period_two: cyc.states.len() > 2,
                }
            };
            attractors.push(entry);
        }
    }

    for region in &eq.crossings {
        let s = region.representative;
        let report = classify_stability(&[s], field, radius, follow_steps);
        attractors.push(AttractorEntry {
            states: vec![s],
            kind: AttractorKind::Crossing,
            class: report.class,
            escape_notes: report
                .escapes
                .iter()
                .map(|(a, b)| format!("escape from {a} via {b}"))
                .collect(),
            beyond_period_two: false,
        });
    }

    let basins = eq.basin.iter().map(|&c| entry_of_cycle[c]).collect();
    AttractorReport { attractors, basins }
}

/// Excursions of a monitored coordinate inside a region of the state space.
#[derive(Debug, Clone)]
pub struct ExcursionSet {
    /// Each excursion holds the monitored values from the entry into the
    /// region through the first exit (the exit value is included; the final
    /// excursion may be truncated by the end of the path).
    pub excursions: Vec<Vec<f64>>,
}

impl ExcursionSet {
    pub fn len(&self) -> usize {
        self.excursions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excursions.is_empty()
    }

    /// All one-step increments within excursions, paired with the start
    /// value of their excursion.
    pub fn increments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.excursions
            .iter()
            .flat_map(|w| w.windows(2).map(move |p| (w[0], p[1] - p[0])))
    }
}

/// Slice a macro path into excursions of the monitored coordinate inside
/// region `A` using the stopping-time recursion: an entry is the first index
/// at or after the previous exit that lies in `A`; the matching exit is the
/// first later index outside `A`. Time zero counts as an entry when the path
/// starts inside the region.
pub fn extract_excursions<F>(
    path: &[MacroState],
    monitored: MacroCoord,
    in_region: F,
) -> ExcursionSet
where
    F: Fn(MacroState) -> bool,
{
    let value = |s: MacroState| match monitored {
        MacroCoord::Sites => s.up_sites as f64,
        MacroCoord::Arcs => s.up_arcs as f64,
    };
    let mut excursions = Vec::new();
    let mut pos = 0;
    while pos < path.len() {
        match path[pos..].iter().position(|&s| in_region(s)) {
            None => break,
            Some(off) => pos += off,
        }
        let exit = path[pos + 1..]
            .iter()
            .position(|&s| !in_region(s))
            .map(|off| pos + 1 + off);
        let end = exit.unwrap_or(path.len() - 1);
        excursions.push(path[pos..=end].iter().map(|&s| value(s)).collect());
        match exit {
            Some(e) => pos = e,
            None => break,
        }
    }
    ExcursionSet { excursions }
}

/// Empirical submartingale check over a set of excursions: the pooled mean
/// one-step increment must be at least `-epsilon`.
#[derive(Debug, Clone)]
pub struct SubmartingaleCheck {
    pub pass: bool,
    pub epsilon: f64,
    pub pooled_mean: f64,
    pub increment_count: usize,
    /// `(excursion start value, mean increment, count)` grouped by start.
    pub per_start: Vec<(f64, f64, usize)>,
}

pub fn submartingale_check(excursions: &ExcursionSet, epsilon: f64) -> SubmartingaleCheck {
    let mut pairs: Vec<(f64, f64)> = excursions.increments().collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let count = pairs.len();
    let pooled_mean = if count == 0 {
        0.0
    } else {
        pairs.iter().map(|&(_, d)| d).sum::<f64>() / count as f64
    };
    let mut per_start = Vec::new();
    let mut idx = 0;
    while idx < count {
        let start = pairs[idx].0;
        let mut sum = 0.0;
        let mut c = 0;
        while idx < count && pairs[idx].0 == start {
            sum += pairs[idx].1;
            c += 1;
            idx += 1;
        }
        per_start.push((start, sum / c as f64, c));
    }
    SubmartingaleCheck {
        pass: count > 0 && pooled_mean >= -epsilon,
        epsilon,
        pooled_mean,
        increment_count: count,
        per_start,
    }
}

/// Nearest integer with half-away-from-zero ties (the rounding convention
/// of the deviation diagnostics).
fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

/// Propagation effect: the exact two-step conditional expectation of `S+`
/// versus the composed-drift estimate that propagates the one-step average.
#[derive(Debug, Clone, Copy)]
pub struct TwoStepDeviation {
    pub exact: f64,
    pub ca_estimate: f64,
    pub gap: f64,
}

pub fn two_step_deviation(
    x: usize,
    y: usize,
    params: &ModelParams,
) -> Result<TwoStepDeviation, SkeletonError> {
    let n = params.n;
    let half_step = 2.0 / (n as f64 + 1.0);
    // Exact: tower property over the one-step distribution, using
    // E[S+ after one more step | (u,v)] = u + 2 f(u,v)/(N+1).
    let d = macro_step_distribution(x, y, params);
    let exact: f64 = d
        .entries()
        .iter()
        .map(|&(s, p)| {
            p * (s.up_sites as f64 + half_step * drift_f(s.up_sites, s.up_arcs, params))
        })
        .sum();
    // Composed estimate: one drift step applied to the rounded drifted state.
    let fxy = drift_f(x, y, params);
    let gxy = drift_g(x, y, params);
    let rx = round_half_away(x as f64 + half_step * fxy);
    let ry = round_half_away(y as f64 + (n as f64 - 1.0) / (n as f64 + 1.0) * gxy);
    if rx < 0 || ry < 0 || rx > n as i64 || ry > params.arc_count() as i64 {
        return Err(SkeletonError::OutOfGrid { i: rx, j: ry, n });
    }
    let ca_estimate =
        half_step * drift_f(rx as usize, ry as usize, params) + half_step * fxy + x as f64;
    Ok(TwoStepDeviation { exact, ca_estimate, gap: exact - ca_estimate })
}

/// Discretization effect: `f` at the nearest-integer-shifted arguments
/// versus `f` at the signum-shifted arguments. Returns `(lhs, rhs)`.
pub fn discretization_deviation(
    x: usize,
    y: usize,
    params: &ModelParams,
) -> Result<(f64, f64), SkeletonError> {
    let n = params.n;
    let c = params.arc_count() as i64;
    let fxy = drift_f(x, y, params);
    let gxy = drift_g(x, y, params);
    let rx = round_half_away(x as f64 + fxy);
    let ry = round_half_away(y as f64 + gxy);
    if rx < 0 || ry < 0 || rx > n as i64 || ry > c {
        return Err(SkeletonError::OutOfGrid { i: rx, j: ry, n });
    }
    let sx = x as i64 + signum(fxy) as i64;
    let sy = y as i64 + signum(gxy) as i64;
    if sx < 0 || sy < 0 || sx > n as i64 || sy > c {
        return Err(SkeletonError::OutOfGrid { i: sx, j: sy, n });
    }
    let lhs = drift_f(rx as usize, ry as usize, params);
    let rhs = drift_f(sx as usize, sy as usize, params);
    Ok((lhs, rhs))
}
