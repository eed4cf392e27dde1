use proptest::prelude::*;

use ofdm_alloc::capacity::{
    bc_rates, bc_to_mac_powers, mac_rates, mac_to_bc_powers, rates_to_powers, DecodingOrder, PowerAllocation,
    RateAllocation, Side,
};
use ofdm_alloc::channel::{gains_from_taps, generate_random_channel, ChannelGains};
use ofdm_alloc::matrix::Matrix;
use ofdm_alloc::minpower::{
    carrier_orders, objective_offset, rate_objective, solve_minpower, DEFAULT_MAX_SWEEPS, DEFAULT_TOL,
};
use ofdm_alloc::minrates::{
    rate_monotonicity_probe, solve_minrates_weights, support_violation, tangent_normal, MinRatesProblem,
    DEFAULT_RATE_TOL,
};
use ofdm_alloc::oracle::sample_feasible_region;
use ofdm_alloc::wsr::{solve_wsr, total_power_at_price, DEFAULT_PRICE_TOL};

fn gains_strategy(max_users: usize, max_carriers: usize) -> impl Strategy<Value = ChannelGains> {
    (1..=max_users, 1..=max_carriers).prop_flat_map(|(m, k)| {
        (prop::collection::vec(prop::collection::vec(0.05f64..4.0, k), m), 0.2f64..2.0)
            .prop_map(|(rows, noise)| ChannelGains::from_rows(rows, noise).unwrap())
    })
}

fn powers_for(g: &ChannelGains, seed: &[f64]) -> Matrix {
    let mut p = Matrix::zeros(g.users(), g.carriers());
    for m in 0..g.users() {
        for k in 0..g.carriers() {
            let x = seed[(m * g.carriers() + k) % seed.len()];
            p[(m, k)] = if x < 0.5 { 0.0 } else { 3.0 * x };
        }
    }
    p
}

fn shuffled(n: usize, key: u64) -> Vec<usize> {
    let mut o: Vec<usize> = (0..n).collect();
    o.sort_by_key(|&i| (i as u64 + 1).wrapping_mul(key | 1).rotate_left(17));
    o
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn duality_preserves_rates_and_power(
        g in gains_strategy(4, 8),
        seed in prop::collection::vec(0.0f64..1.0, 32),
        key in any::<u64>(),
    ) {
        let order = DecodingOrder::Global(shuffled(g.users(), key));
        let bc = PowerAllocation::new(Side::Bc, powers_for(&g, &seed)).unwrap();
        let mac = bc_to_mac_powers(&g, &bc, &order).unwrap();
        let a = bc_rates(&g, &bc, &order).unwrap();
        let b = mac_rates(&g, &mac, &order).unwrap();
        prop_assert!(a.matrix().max_abs_diff(b.matrix()) <= 1e-10);
        prop_assert!((bc.sum_power() - mac.sum_power()).abs() <= 1e-10 * bc.sum_power().max(1.0));
        let back = mac_to_bc_powers(&g, &mac, &order).unwrap();
        prop_assert!(back.matrix().max_abs_diff(bc.matrix()) <= 1e-9);
    }

    #[test]
    fn uplink_sum_rate_ignores_order(
        g in gains_strategy(4, 4),
        seed in prop::collection::vec(0.0f64..1.0, 16),
        key in any::<u64>(),
    ) {
        let p = PowerAllocation::new(Side::Mac, powers_for(&g, &seed)).unwrap();
        let r = mac_rates(&g, &p, &DecodingOrder::Global(shuffled(g.users(), key))).unwrap();
        for k in 0..g.carriers() {
            let received: f64 = (0..g.users()).map(|m| g.gain(m, k) * p.power(m, k)).sum();
            let total: f64 = (0..g.users()).map(|m| r.rate(m, k)).sum();
            prop_assert!((total - (1.0 + received / g.noise_power()).ln()).abs() <= 1e-12 * total.max(1.0));
        }
    }

    #[test]
    fn rates_to_powers_inverts_uplink_rates(
        g in gains_strategy(3, 4),
        seed in prop::collection::vec(0.0f64..1.0, 12),
    ) {
        let order = carrier_orders(&g);
        let p = PowerAllocation::new(Side::Mac, powers_for(&g, &seed)).unwrap();
        let r = mac_rates(&g, &p, &order).unwrap();
        let q = rates_to_powers(&g, &r, &order).unwrap();
        prop_assert!(q.matrix().max_abs_diff(p.matrix()) <= 1e-9 * p.matrix().iter().copied().fold(1.0, f64::max));
    }

    #[test]
    fn power_falls_with_price(
        g in gains_strategy(3, 6),
        w in prop::collection::vec(0.1f64..2.0, 3),
        lo in 0.01f64..1.0,
        factor in 1.0f64..10.0,
    ) {
        let w = &w[..g.users()];
        prop_assert!(total_power_at_price(&g, w, lo * factor) <= total_power_at_price(&g, w, lo));
    }

    #[test]
    fn weighted_sum_rate_is_scale_invariant(
        g in gains_strategy(3, 6),
        w in prop::collection::vec(0.1f64..2.0, 3),
        budget in 0.5f64..50.0,
        exp in -4i32..4,
    ) {
        let w = w[..g.users()].to_vec();
        let c = 2f64.powi(exp);
        let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
        let a = solve_wsr(&g, &w, budget, DEFAULT_PRICE_TOL).unwrap();
        let b = solve_wsr(&g, &scaled, budget, DEFAULT_PRICE_TOL).unwrap();
        prop_assert!(a.rates.max_abs_diff(&b.rates) <= 1e-12);
        let pa = a.duals.power_price.unwrap();
        prop_assert!((b.duals.power_price.unwrap() - c * pa).abs() <= 1e-12 * c * pa);
    }

    #[test]
    fn weighted_sum_rate_beats_random_allocations(
        g in gains_strategy(3, 4),
        w in prop::collection::vec(0.1f64..2.0, 3),
        budget in 0.5f64..20.0,
        seed in any::<u64>(),
    ) {
        let w = w[..g.users()].to_vec();
        let r = solve_wsr(&g, &w, budget, DEFAULT_PRICE_TOL).unwrap();
        for p in sample_feasible_region(&g, (0.0, budget), 200, seed) {
            let v: f64 = w.iter().zip(&p.rates).map(|(a, b)| a * b).sum();
            prop_assert!(v <= r.objective + 1e-9 * r.objective.max(1.0));
        }
    }

    #[test]
    fn minimum_power_descends_and_certifies(
        g in gains_strategy(3, 6),
        req in prop::collection::vec(0.0f64..2.0, 3),
    ) {
        let req = &req[..g.users()];
        let r = solve_minpower(&g, req, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).unwrap();
        prop_assert!(r.converged);
        for pair in r.trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }
        prop_assert!(r.kkt.stationarity <= 1e-6);
        for (have, want) in r.user_rates.iter().zip(req) {
            prop_assert!((have - want).abs() <= 1e-8);
        }
        let f = rate_objective(&g, &RateAllocation::new(r.rates.clone()).unwrap()) - objective_offset(&g);
        prop_assert!((f - r.sum_power).abs() <= 1e-10 * r.sum_power.max(1e-300) + 1e-12);
    }

    #[test]
    fn rate_objective_is_midpoint_convex(
        g in gains_strategy(3, 4),
        a in prop::collection::vec(0.0f64..3.0, 12),
        b in prop::collection::vec(0.0f64..3.0, 12),
    ) {
        let shape = |v: &[f64]| {
            let mut m = Matrix::zeros(g.users(), g.carriers());
            for u in 0..g.users() {
                for k in 0..g.carriers() {
                    m[(u, k)] = v[u * g.carriers() + k];
                }
            }
            m
        };
        let (ma, mb) = (shape(&a), shape(&b));
        let mut mid = ma.clone();
        for u in 0..g.users() {
            for k in 0..g.carriers() {
                mid[(u, k)] = 0.5 * (ma[(u, k)] + mb[(u, k)]);
            }
        }
        let f = |m: Matrix| rate_objective(&g, &RateAllocation::new(m).unwrap());
        let (fa, fb, fm) = (f(ma), f(mb), f(mid));
        prop_assert!(fm <= 0.5 * (fa + fb) * (1.0 + 1e-12));
    }

    #[test]
    fn raising_a_weight_helps_only_that_user(
        g in gains_strategy(4, 6),
        w in prop::collection::vec(0.1f64..2.0, 4),
        budget in 0.5f64..50.0,
        delta in 0.0f64..2.0,
        pick in 0usize..4,
    ) {
        let w = &w[..g.users()];
        let probe = rate_monotonicity_probe(&g, w, budget, pick % g.users(), delta).unwrap();
        prop_assert!(probe.holds(1e-9), "{:?}", probe.delta_rates);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn region_is_midpoint_convex(seed in any::<u64>()) {
        let g = gains_from_taps(&generate_random_channel(2, 4, 2, seed, 1.0).unwrap());
        let pts = sample_feasible_region(&g, (0.5, 10.0), 12, seed ^ 0x5eed);
        for pair in pts.chunks(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let mid: Vec<f64> = a.rates.iter().zip(&b.rates).map(|(x, y)| 0.5 * (x + y)).collect();
            let p = solve_minpower(&g, &mid, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).unwrap().sum_power;
            prop_assert!(p <= 0.5 * (a.power + b.power) * (1.0 + 1e-9));
        }
    }
}

#[test]
fn tangent_plane_supports_sampled_region() {
    let g = gains_from_taps(&generate_random_channel(2, 2, 2, 77, 1.0).unwrap());
    let budget = g.budget_for_snr_db(10.0);
    let free = solve_wsr(&g, &[1.0, 0.5], budget, DEFAULT_PRICE_TOL).unwrap();
    let req = vec![0.0, free.user_rates[1] + 0.3];
    let problem = MinRatesProblem::new(g.clone(), vec![1.0, 0.5], req, budget).unwrap();
    let report = solve_minrates_weights(&problem, DEFAULT_RATE_TOL).unwrap();
    let normal = tangent_normal(&report).unwrap();
    assert!(normal.weights[1] > 0.5);
    let worst = support_violation(&g, &report, 3.0 * budget, 10_000, 5).unwrap();
    assert!(worst <= 1e-9, "support violated by {worst}");
}

#[test]
fn unconstrained_normal_is_the_weight_vector() {
    let g = gains_from_taps(&generate_random_channel(3, 8, 4, 78, 1.0).unwrap());
    let r = solve_wsr(&g, &[0.3, 0.9, 0.6], 20.0, DEFAULT_PRICE_TOL).unwrap();
    let normal = tangent_normal(&r).unwrap();
    assert_eq!(normal.weights, vec![0.3, 0.9, 0.6]);
    assert_eq!(normal.priority, vec![1, 2, 0]);
    assert!(support_violation(&g, &r, 60.0, 5_000, 6).unwrap() <= 1e-9);
}
