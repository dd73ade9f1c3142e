//! Statistical consistency of the micro simulator: neighborhood sampling
//! distributions, the heat-bath acceptance curve, and agreement of one-step
//! macro flip frequencies with the exact kernel.

use arcspin::exact::{self, FlipKind};
use arcspin::kernel;
use arcspin::micro::*;
use arcspin::{MacroState, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn binom_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Exact hypergeometric pmf by direct ratio of binomials (small sizes).
fn hyper_pmf(pop: u64, succ: u64, draws: u64, k: u64) -> f64 {
    fn binom(n: u64, k: u64) -> f64 {
        if k > n {
            return 0.0;
        }
        let mut v = 1.0;
        for t in 0..k.min(n - k) {
            v = v * (n - t) as f64 / (t + 1) as f64;
        }
        v
    }
    binom(succ, k) * binom(pop - succ, draws - k) / binom(pop, draws)
}

#[test]
fn site_neighborhood_cardinality_is_hypergeometric() {
    // N=4, A+=3: |neighborhood| ~ Hyp(pop 6, succ 3, draws 3).
    let mut r = rng(101);
    let config = {
        let mut c = MicroConfig::all_down(4);
        c.set_arc_spin(0, 1, 1);
        c.set_arc_spin(1, 2, 1);
        c.set_arc_spin(2, 3, 1);
        c
    };
    let trials = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..trials {
        counts[sample_site_neighborhood(&config, 1, &mut r).len()] += 1;
    }
    for k in 0..=3u64 {
        let expect = hyper_pmf(6, 3, 3, k);
        let got = counts[k as usize] as f64 / trials as f64;
        assert!(
            (got - expect).abs() < 3.0 * binom_sigma(expect, trials),
            "cardinality {k}: {got} vs {expect}"
        );
    }
}

#[test]
fn site_neighborhood_members_are_exchangeable() {
    // Conditional on cardinality, every other site appears equally often.
    let mut r = rng(102);
    let config = MicroConfig::random_with_counts(5, MacroState::new(2, 4), &mut r);
    let trials = 100_000;
    let mut appearances = [0usize; 5];
    let mut total_members = 0usize;
    for _ in 0..trials {
        for s in sample_site_neighborhood(&config, 2, &mut r) {
            appearances[s] += 1;
            total_members += 1;
        }
    }
    assert_eq!(appearances[2], 0);
    let expect = 0.25;
    for s in [0usize, 1, 3, 4] {
        let got = appearances[s] as f64 / total_members as f64;
        let sigma = binom_sigma(expect, total_members);
        assert!((got - expect).abs() < 3.0 * sigma, "site {s}: {got} vs {expect}");
    }
}

#[test]
fn arc_neighborhood_case_frequencies() {
    // N=4, S+=2: P(empty) = 1/6, P(one star) = 2/3, P(both) = 1/6.
    let mut r = rng(103);
    let config = MicroConfig::random_with_counts(4, MacroState::new(2, 3), &mut r);
    let trials = 100_000;
    let mut cases = [0usize; 3];
    for _ in 0..trials {
        let nb = sample_arc_neighborhood(&config, (0, 2), &mut r);
        let case = match nb.len() {
            0 => 0,
            2 => 1,
            4 => 2,
            other => panic!("impossible neighborhood size {other}"),
        };
        cases[case] += 1;
    }
    for (case, expect) in [(0usize, 1.0 / 6.0), (1, 2.0 / 3.0), (2, 1.0 / 6.0)] {
        let got = cases[case] as f64 / trials as f64;
        assert!(
            (got - expect).abs() < 3.0 * binom_sigma(expect, trials),
            "case {case}: {got} vs {expect}"
        );
    }
}

#[test]
fn heat_bath_acceptance_matches_logistic_curve() {
    let params = ModelParams::with_beta(4, 1.0, 0.7);
    let mut r = rng(104);
    let trials = 100_000;
    for &h in &[-1.5f64, -0.5, 0.0, 0.25, 1.0] {
        let expect = 1.0 / (1.0 + (-2.0 * 0.7 * h).exp());
        let ups = (0..trials)
            .filter(|_| spin_from_potential(h, -1, &params, &mut r) == 1)
            .count();
        let got = ups as f64 / trials as f64;
        assert!(
            (got - expect).abs() < 3.0 * binom_sigma(expect, trials),
            "h={h}: {got} vs {expect}"
        );
    }
}

/// One full heat-bath epoch from a uniformly random configuration in the
/// (i,j) fiber must reproduce the exact macro one-step distribution.
fn check_state_against_kernel(n: usize, i: usize, j: usize, trials: usize, seed: u64) {
    let params = ModelParams::frozen(n, 3.0);
    let d = kernel::macro_step_distribution(i, j, &params);
    let mut r = rng(seed);
    let mut histogram = std::collections::HashMap::new();
    for _ in 0..trials {
        let mut config = MicroConfig::random_with_counts(n, MacroState::new(i, j), &mut r);
        heat_bath_update(&mut config, &params, &mut r);
        *histogram.entry(config.macro_counts()).or_insert(0usize) += 1;
    }
    for (target, p) in d.entries() {
        let got = histogram.get(&target).copied().unwrap_or(0) as f64 / trials as f64;
        let sigma = binom_sigma(p, trials);
        assert!(
            (got - p).abs() < 3.0 * sigma.max(1e-9),
            "N={n} ({i},{j}) -> {target}: {got} vs {p}"
        );
    }
    // Nothing outside the five-entry support.
    let support: Vec<MacroState> = d.entries().iter().map(|&(s, _)| s).collect();
    for s in histogram.keys() {
        assert!(support.contains(s), "unexpected transition to {s}");
    }
}

#[test]
fn micro_flip_frequencies_match_kernel_n4() {
    let states = [(0usize, 0usize), (4, 6), (2, 3), (1, 2), (3, 5), (2, 0), (0, 4)];
    for (t, &(i, j)) in states.iter().enumerate() {
        check_state_against_kernel(4, i, j, 100_000, 200 + t as u64);
    }
}

#[test]
fn per_element_flip_rates_match_exact_oracle() {
    // Force the element kind to pin each of the four stay-probabilities.
    let n = 4;
    let params = ModelParams::frozen(n, 3.0);
    let trials = 100_000;
    let mut r = rng(300);
    for (i, j) in [(2usize, 3usize), (1, 5), (3, 2)] {
        for kind in [FlipKind::SitePlus, FlipKind::SiteMinus, FlipKind::ArcPlus, FlipKind::ArcMinus] {
            let stay_exact = exact::stay_probability_f64(kind, i, j, &params).unwrap();
            let mut stays = 0usize;
            for _ in 0..trials {
                let mut config = MicroConfig::random_with_counts(n, MacroState::new(i, j), &mut r);
                // Pick a concrete element of the required kind.
                match kind {
                    FlipKind::SitePlus | FlipKind::SiteMinus => {
                        let want: i8 = if kind == FlipKind::SitePlus { 1 } else { -1 };
                        let x = (0..n).find(|&x| config.site_spin(x) == want).unwrap();
                        update_site(&mut config, x, &params, &mut r);
                        if config.site_spin(x) == want {
                            stays += 1;
                        }
                    }
                    FlipKind::ArcPlus | FlipKind::ArcMinus => {
                        let want: i8 = if kind == FlipKind::ArcPlus { 1 } else { -1 };
                        let arc = (0..n)
                            .flat_map(|x| ((x + 1)..n).map(move |y| (x, y)))
                            .find(|&(x, y)| config.arc_spin(x, y) == want)
                            .unwrap();
                        update_arc(&mut config, arc, &params, &mut r);
                        if config.arc_spin(arc.0, arc.1) == want {
                            stays += 1;
                        }
                    }
                }
            }
            let got = stays as f64 / trials as f64;
            let sigma = binom_sigma(stay_exact, trials);
            assert!(
                (got - stay_exact).abs() < 3.0 * sigma.max(1e-9),
                "{kind:?} at ({i},{j}): {got} vs {stay_exact}"
            );
        }
    }
}

#[test]
fn run_micro_matches_kernel_along_paths() {
    // Conditional one-step transition frequencies collected along a long
    // micro run agree with the kernel row of the occupied state (N=5).
    let n = 5;
    let params = ModelParams::frozen(n, 10.0);
    let mut r = rng(400);
    let start = MicroConfig::random_with_counts(n, MacroState::new(2, 5), &mut r);
    let steps = 200_000;
    let path = run_micro(start.clone(), &params, steps, &mut r);
    let mut prev = start.macro_counts();
    let mut visits: std::collections::HashMap<MacroState, usize> = Default::default();
    let mut moves: std::collections::HashMap<(MacroState, MacroState), usize> = Default::default();
    for &s in &path {
        *visits.entry(prev).or_default() += 1;
        *moves.entry((prev, s)).or_default() += 1;
        prev = s;
    }
    let mut checked = 0;
    for (&state, &n_visits) in &visits {
        if n_visits < 2_000 {
            continue;
        }
        let d = kernel::macro_step_distribution(state.up_sites, state.up_arcs, &params);
        for (target, p) in d.entries() {
            let got = moves.get(&(state, target)).copied().unwrap_or(0) as f64 / n_visits as f64;
            let sigma = binom_sigma(p, n_visits);
            assert!(
                (got - p).abs() < 4.0 * sigma.max(1e-9),
                "{state} -> {target}: {got} vs {p} over {n_visits} visits"
            );
            checked += 1;
        }
    }
    assert!(checked >= 10, "too few well-visited states ({checked} checks)");
}
