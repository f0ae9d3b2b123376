//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (visible with `--nocapture`, and in
//! the failure report otherwise).
//!
//! Monte Carlo criteria run the documented configuration (32 replicas of
//! 10^5 rounds) under a fixed seed, so the whole suite is deterministic.

use rayon::prelude::*;
use repeater_core::analytic::{self, AlphaMode};
use repeater_core::chain;
use repeater_core::sim::{self, SimConfig};
use repeater_core::trees;
use repeater_core::{NetworkParams, Occupation};

const ACCEPTANCE_SEED: u64 = 0x5eed;

fn params(n: usize, m: usize, p: f64) -> NetworkParams {
    NetworkParams::new(n, m, p).unwrap()
}

fn exact_l_mean(n: usize, m: usize, p: f64) -> f64 {
    chain::exact_rate(&params(n, m, p)).unwrap().l_mean
}

fn mc_config() -> SimConfig {
    SimConfig {
        rounds: 100_000,
        burn_in: 1_000,
        replicas: 32,
        seed: ACCEPTANCE_SEED,
    }
}

#[test]
fn criterion_01_no_multiplexing_exactness() {
    let mut worst = 0.0f64;
    for n in 1..=6 {
        for &p in &[0.05, 0.1, 0.5, 0.9] {
            let exact = exact_l_mean(n, 1, p);
            let alt = analytic::rate_no_multiplexing_alt(n, p).unwrap().l_mean;
            let series = analytic::rate_no_multiplexing(n, p, 1e-14).unwrap().l_mean;
            assert!(
                (exact - alt).abs() <= 1e-10,
                "n={n} p={p}: chain {exact} vs alternating form {alt}"
            );
            assert!(
                (exact - series).abs() <= 1e-10,
                "n={n} p={p}: chain {exact} vs series form {series}"
            );
            worst = worst.max((exact - alt).abs()).max((exact - series).abs());
        }
    }
    let reference = exact_l_mean(2, 1, 0.1);
    assert!(
        (reference - 0.0679).abs() <= 5e-4,
        "bipartite m=1 p=0.1 rate {reference} vs 0.0679"
    );
    println!(
        "criterion 01 (no-multiplexing exactness): PASS - max |chain - closed form| = {worst:.3e}, \
         R(2,1,0.1) = {reference:.6}"
    );
}

#[test]
fn criterion_02_rate_curve_monotone_and_bracketed() {
    for &p in &[0.1, 0.05] {
        let mut previous = f64::INFINITY;
        for n in 2..=20 {
            let rate = analytic::rate_no_multiplexing(n, p, 1e-14).unwrap().l_mean;
            let bounds = analytic::waiting_time_bounds(n, p).unwrap();
            assert!(rate < previous, "p={p}: rate not decreasing at n={n}");
            assert!(
                bounds.lower <= rate && rate <= bounds.upper,
                "p={p} n={n}: {rate} outside [{}, {}]",
                bounds.lower,
                bounds.upper
            );
            previous = rate;
        }
    }
    println!(
        "criterion 02 (rate curve, n=2..20 at p=0.1/0.05): PASS - monotone decreasing and \
         inside the waiting-time bracket at every point"
    );
}

#[test]
fn criterion_03_bipartite_small_p_lower_bound() {
    let p = 0.1;
    let gaps: Vec<f64> = (1..=50)
        .into_par_iter()
        .map(|m| {
            let exact = exact_l_mean(2, m, p);
            let approx = analytic::bipartite_l_small_p(m, p).unwrap().l_mean;
            assert!(
                approx <= exact + 1e-12,
                "m={m}: small-p form {approx} exceeds exact {exact}"
            );
            (exact - approx) / exact
        })
        .collect();
    for (i, gap) in gaps.iter().enumerate() {
        assert!(*gap <= 0.08, "m={}: relative gap {gap} above 8%", i + 1);
    }
    for window in gaps.windows(2) {
        assert!(
            window[1] <= window[0] + 1e-9,
            "relative gap must shrink as m grows: {} -> {}",
            window[0],
            window[1]
        );
    }
    println!(
        "criterion 03 (bipartite small-p vs exact, m=1..50): PASS - max gap {:.4} at m=1, \
         gap at m=50 {:.4}",
        gaps[0],
        gaps[49]
    );
}

#[test]
fn criterion_04_arborescence_checks() {
    // single arborescence per root on the bipartite chain
    for m in 1..=10usize {
        let chain_graph = trees::merge_permutations(&trees::build_small_p_graph(2, m).unwrap()).unwrap();
        for root in chain_graph.vertices().to_vec() {
            let res = trees::count_arborescences(&chain_graph, &root).unwrap();
            assert!(res.count == 1u32.into(), "m={m} root {root}: count {}", res.count);
        }
    }
    // three arborescences per root for three parties with two memories
    let tri = trees::merge_permutations(&trees::build_small_p_graph(3, 2).unwrap()).unwrap();
    let res = trees::count_arborescences(&tri, &Occupation(vec![2, 2, 0])).unwrap();
    assert!(res.count == 3u32.into(), "root (2,2,0): count {}", res.count);
    // tree-theorem stationary equals the closed-form weights exactly
    for m in 1..=8usize {
        let chain_graph = trees::merge_permutations(&trees::build_small_p_graph(2, m).unwrap()).unwrap();
        let pi = trees::stationary_via_mctt(&chain_graph).unwrap();
        let closed = trees::arborescence_weights_bipartite(m).unwrap();
        let total: num_rational::BigRational = closed.iter().map(|r| r.weight_sum.clone()).sum();
        for (expected, got) in closed.iter().zip(&pi) {
            assert_eq!(
                expected.weight_sum.clone() / total.clone(),
                got.clone(),
                "m={m} root {}",
                expected.root
            );
        }
    }
    println!(
        "criterion 04 (arborescences): PASS - chain counts all 1 (m=1..10), tripartite count 3, \
         tree-theorem stationary equals closed form exactly (m=1..8)"
    );
}

#[test]
fn criterion_05_reduction_soundness() {
    let cases = [(2usize, 2usize), (2, 3), (3, 1), (3, 2), (2, 4), (4, 1)];
    let p = 0.3;
    for &(n, m) in &cases {
        let pr = params(n, m, p);
        let full = chain::build_transition_full_binary(&pr).unwrap();
        let reduced = chain::build_transition(&pr).unwrap();
        let full_pi = chain::stationary_linear_capped(&full, 1 << 12).unwrap();
        let reduced_pi = chain::stationary_linear(&reduced).unwrap();
        let aggregated = chain::aggregate_binary_distribution(&pr, &full_pi.probs).unwrap();
        let distance: f64 = aggregated
            .iter()
            .zip(&reduced_pi.probs)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(
            distance <= 1e-10,
            "n={n} m={m}: aggregated binary stationary differs by {distance:.3e}"
        );
    }
    println!(
        "criterion 05 (reduction soundness): PASS - aggregated binary stationary matches the \
         reduced chain within 1e-10 on {} instances",
        cases.len()
    );
}

#[test]
fn criterion_06_monte_carlo_vs_exact() {
    let mut instances = Vec::new();
    for n in 1..=4usize {
        for &m in &[1usize, 2, 3, 5, 8] {
            let states = (m + 1).pow(n as u32);
            if states <= 10_000 {
                for &p in &[0.05, 0.1, 0.5] {
                    instances.push((n, m, p));
                }
            }
        }
    }
    let results: Vec<(usize, usize, f64, f64, f64, f64)> = instances
        .par_iter()
        .map(|&(n, m, p)| {
            let exact = exact_l_mean(n, m, p);
            let mc = sim::run_full(&params(n, m, p), &mc_config()).unwrap();
            (n, m, p, exact, mc.l_mean, mc.l_stderr)
        })
        .collect();
    let mut worst_sigma = 0.0f64;
    for (n, m, p, exact, mc, stderr) in &results {
        let sigmas = (mc - exact).abs() / stderr.max(1e-12);
        worst_sigma = worst_sigma.max(sigmas);
        assert!(
            (mc - exact).abs() <= 3.0 * stderr,
            "n={n} m={m} p={p}: exact {exact:.6} vs mc {mc:.6} ({sigmas:.2} sigma, stderr {stderr:.2e})"
        );
    }
    println!(
        "criterion 06 (Monte Carlo vs exact): PASS - {} instances within 3 stderr \
         (worst {:.2} sigma)",
        results.len(),
        worst_sigma
    );
}

#[test]
fn criterion_07_general_approximation_grid() {
    // Documented acceptance choice: 10% relative agreement between the
    // extreme-value approximation and the simulation over the whole grid.
    let ns = [2usize, 3, 5, 10, 20];
    let ms = [1usize, 2, 5, 10, 20];
    let mut cells = Vec::new();
    for &n in &ns {
        for &m in &ms {
            cells.push((n, m));
        }
    }
    let results: Vec<(usize, usize, f64, f64, f64)> = cells
        .par_iter()
        .map(|&(n, m)| {
            let approx = analytic::general_l_approx(n, m, 0.1, AlphaMode::Asymptotic)
                .unwrap()
                .l_mean;
            let mc = sim::run_full(&params(n, m, 0.1), &mc_config()).unwrap().l_mean;
            (n, m, approx, mc, (approx - mc).abs() / mc)
        })
        .collect();
    println!("criterion 07 grid (p=0.1), relative deviation approx vs simulate:");
    for (n, m, approx, mc, rel) in &results {
        println!("  n={n:>2} m={m:>2}: approx {approx:.5} mc {mc:.5} rel {rel:.4}");
    }
    let worst = results.iter().cloned().fold(
        (0usize, 0usize, 0.0, 0.0, 0.0),
        |acc, r| if r.4 > acc.4 { r } else { acc },
    );
    for (n, m, approx, mc, rel) in &results {
        assert!(
            *rel <= 0.10,
            "n={n} m={m}: |{approx:.5} - {mc:.5}| / {mc:.5} = {rel:.4} exceeds 10%"
        );
    }
    println!(
        "criterion 07 (general approximation within 10%): PASS - worst cell n={} m={} at {:.4}",
        worst.0, worst.1, worst.4
    );
}

#[test]
fn criterion_08_decoupled_model_moments() {
    let (m, p, l) = (5usize, 0.1, 0.3);
    let expected = analytic::simplified_stationary_moments(m, p, l).unwrap();
    let res = sim::run_simplified(&params(4, m, p), l, &mc_config()).unwrap();
    assert!(!res.diverged);
    let mu_sigmas = (res.occupancy.value - expected.mu).abs() / res.occupancy.stderr;
    let var_sigmas = (res.occupancy_var.value - expected.sigma2).abs() / res.occupancy_var.stderr;
    assert!(
        mu_sigmas <= 3.0,
        "stationary mean {} vs {} ({mu_sigmas:.2} sigma)",
        res.occupancy.value,
        expected.mu
    );
    assert!(
        var_sigmas <= 3.0,
        "stationary variance {} vs {} ({var_sigmas:.2} sigma)",
        res.occupancy_var.value,
        expected.sigma2
    );

    // trajectory from empty memories against the exact moment recurrence
    let checkpoints = [1u64, 5, 20, 100];
    let traj_config = SimConfig {
        rounds: 128,
        burn_in: 1,
        replicas: 256,
        seed: ACCEPTANCE_SEED,
    };
    let traj = sim::simplified_trajectory(&params(8, m, p), l, &checkpoints, &traj_config).unwrap();
    let mut mom = analytic::Moments { mu: 0.0, sigma2: 0.0 };
    let mut round = 0u64;
    for point in &traj {
        while round < point.round {
            mom = analytic::moments_step(mom, m, p, l);
            round += 1;
        }
        let mean_sig = (point.mean.value - mom.mu).abs() / point.mean.stderr;
        let var_sig = (point.var.value - mom.sigma2).abs() / point.var.stderr;
        assert!(
            mean_sig <= 3.0,
            "round {round}: mean {} vs {} ({mean_sig:.2} sigma)",
            point.mean.value,
            mom.mu
        );
        assert!(
            var_sig <= 3.0,
            "round {round}: variance {} vs {} ({var_sig:.2} sigma)",
            point.var.value,
            mom.sigma2
        );
    }
    println!(
        "criterion 08 (decoupled-model moments): PASS - stationary ({:.4}, {:.4}) vs ({}, {:.4}); \
         trajectory tracks the recurrence at rounds {checkpoints:?}",
        res.occupancy.value, res.occupancy_var.value, expected.mu, expected.sigma2
    );
}

#[test]
fn criterion_09_saturation_and_rate_ceiling() {
    // saturation memory count for large networks
    let mut detected = Vec::new();
    for &n in &[101usize, 120, 150] {
        let m_sat = analytic::find_saturation_m(n, 0.1, 1e-4, AlphaMode::Asymptotic).unwrap();
        assert!(
            (80..=90).contains(&m_sat),
            "n={n}: saturation at m={m_sat}, expected 85 +/- 5"
        );
        detected.push((n, m_sat));
    }
    // the single-party ceiling p bounds every method's rate
    let p = 0.1;
    let mut checked = 0usize;
    for n in 1..=4usize {
        for m in 1..=4usize {
            let exact = chain::exact_rate(&params(n, m, p)).unwrap().rate;
            assert!(exact <= p + 1e-12, "exact rate {exact} above p at n={n} m={m}");
            let approx = analytic::general_l_approx(n, m, p, AlphaMode::Asymptotic).unwrap().rate;
            assert!(approx <= p + 1e-12, "approx rate {approx} above p at n={n} m={m}");
            checked += 1;
        }
    }
    for m in 1..=30usize {
        assert!(analytic::bipartite_rate_small_p(m, p).unwrap().rate <= p + 1e-12);
        assert!(analytic::bipartite_rate_large_m(m, p).unwrap().rate <= p + 1e-12);
    }
    for n in 1..=30usize {
        assert!(analytic::rate_no_multiplexing_alt(n, p).unwrap().rate <= p + 1e-12);
    }
    let mc = sim::run_full(
        &params(3, 2, p),
        &SimConfig {
            rounds: 50_000,
            burn_in: 500,
            replicas: 16,
            seed: ACCEPTANCE_SEED,
        },
    )
    .unwrap();
    assert!(mc.rate <= p + 3.0 * mc.l_stderr / 2.0);
    println!(
        "criterion 09 (saturation and ceiling): PASS - saturation {detected:?} \
         (threshold 1e-4), rate <= p across {checked} exact instances and all closed forms"
    );
}

#[test]
fn criterion_10_series_convergence() {
    let mut worst = 0.0f64;
    for n in 2..=5 {
        for &p in &[0.1, 0.3, 0.5, 0.9] {
            let series = analytic::no_multiplexing_series(n, p, 500).unwrap();
            let closed = analytic::rate_no_multiplexing(n, p, 1e-15).unwrap().l_mean;
            let diff = (series - closed).abs();
            assert!(diff <= 1e-9, "n={n} p={p}: |{series} - {closed}| = {diff:.3e}");
            worst = worst.max(diff);
        }
    }
    println!(
        "criterion 10 (prefactor series): PASS - 500 terms reach the closed form within \
         {worst:.3e} for n=2..5, p>=0.1"
    );
}
