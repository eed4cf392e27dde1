//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ofdm_alloc::capacity::{bc_rates, bc_to_mac_powers, mac_rates, mac_to_bc_powers, DecodingOrder, PowerAllocation, Side};
use ofdm_alloc::channel::{gains_from_taps, generate_random_channel, ChannelGains};
use ofdm_alloc::matrix::Matrix;
use ofdm_alloc::minpower::{extract_decoding_orders, solve_minpower, DEFAULT_MAX_SWEEPS, DEFAULT_TOL};
use ofdm_alloc::minrates::{
    check_feasibility, rate_monotonicity_probe, solve_minrates_waterfill, solve_minrates_weights, Feasibility,
    MinRatesProblem, DEFAULT_POWER_TOL, DEFAULT_RATE_TOL,
};
use ofdm_alloc::oracle::{grid_minpower, grid_wsr, GridSpec};
use ofdm_alloc::report::{bps_hz_to_nats, SolverReport};
use ofdm_alloc::wsr::{solve_wsr, wsr_user_rates, DEFAULT_PRICE_TOL};

type Outcome = Result<String, String>;

fn channel(users: usize, carriers: usize, taps: usize, seed: u64) -> ChannelGains {
    gains_from_taps(&generate_random_channel(users, carriers, taps, seed, 1.0).unwrap())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// The two-carrier instances shared by the oracle comparisons.
fn oracle_instances() -> Vec<(ChannelGains, Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    for i in 0..25u64 {
        let users = if i < 20 { 2 } else { 3 };
        let g = channel(users, 2, 2, 100 + i);
        let req = (0..users).map(|_| rng.gen_range(0.1..2.0)).collect();
        let weights = (0..users).map(|_| rng.gen_range(0.2..1.5)).collect();
        out.push((g, req, weights));
    }
    out
}

fn minpower_grid(users: usize) -> GridSpec {
    if users == 2 {
        GridSpec::new(201, 6).unwrap()
    } else {
        GridSpec::new(41, 12).unwrap()
    }
}

fn wsr_grid(users: usize) -> GridSpec {
    if users == 2 {
        GridSpec::new(11, 24).unwrap()
    } else {
        GridSpec::new(9, 24).unwrap()
    }
}

fn check_descent(report: &SolverReport) -> Result<(), String> {
    for (i, pair) in report.trace.windows(2).enumerate() {
        ensure(pair[1] <= pair[0] * (1.0 + 1e-12), || {
            format!("sum power rose at sweep {}: {} -> {}", i + 2, pair[0], pair[1])
        })?;
    }
    Ok(())
}

fn check_kkt(report: &SolverReport, what: &str) -> Result<(), String> {
    let k = &report.kkt;
    ensure(k.stationarity <= 1e-6 && k.dual_sign <= 1e-6, || {
        format!("{what}: stationarity {:e}, sign {:e}", k.stationarity, k.dual_sign)
    })?;
    ensure(k.complementary_slackness <= 1e-8, || {
        format!("{what}: slackness {:e}", k.complementary_slackness)
    })
}

fn check_orders(g: &ChannelGains, report: &SolverReport, what: &str) -> Result<(), String> {
    let analysis = extract_decoding_orders(g, report);
    ensure(analysis.is_consistent(), || {
        format!("{what}: {} order violations, worst {:e}", analysis.violations.len(), analysis.max_violation())
    })
}

fn fig1_instance() -> (ChannelGains, Vec<f64>) {
    let g = channel(4, 128, 8, 1);
    let req = [2.5, 0.4, 0.8, 2.0].iter().map(|&b| bps_hz_to_nats(b, 128)).collect();
    (g, req)
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, (g, req, _)) in oracle_instances().iter().enumerate() {
        let solved = solve_minpower(g, req, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).map_err(|e| e.to_string())?;
        ensure(solved.converged, || format!("instance {i} did not converge"))?;
        let grid = grid_minpower(g, req, minpower_grid(g.users())).map_err(|e| e.to_string())?;
        let allowed = (1e-4 * solved.sum_power).max(grid.gap);
        let diff = grid.power - solved.sum_power;
        ensure(diff.abs() <= allowed, || {
            format!("instance {i}: solver {} vs grid {} (gap {:e})", solved.sum_power, grid.power, grid.gap)
        })?;
        ensure(diff >= -1e-9 * solved.sum_power, || {
            format!("instance {i}: grid {} below solver {}", grid.power, solved.sum_power)
        })?;
        worst = worst.max(rel(grid.power, solved.sum_power));
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed <= 60.0, || format!("took {elapsed:.1} s"))?;
    Ok(format!("25 instances, worst relative difference {worst:.2e}, {elapsed:.1} s"))
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, (g, _, weights)) in oracle_instances().iter().enumerate() {
        let budget = g.budget_for_snr_db(10.0);
        let solved = solve_wsr(g, weights, budget, DEFAULT_PRICE_TOL).map_err(|e| e.to_string())?;
        let spec = wsr_grid(g.users());
        let coarse = grid_wsr(g, weights, budget, spec).map_err(|e| e.to_string())?;
        let fine = grid_wsr(g, weights, budget, spec.doubled()).map_err(|e| e.to_string())?;
        // The gap estimate can fall below the rounding level of the objective.
        let slack = coarse.gap.max(1e-9 * coarse.objective.abs());
        ensure(solved.objective >= coarse.objective - slack, || {
            format!("instance {i}: solver {} below grid {} - {:e}", solved.objective, coarse.objective, coarse.gap)
        })?;
        ensure((fine.objective - coarse.objective).abs() <= slack, || {
            format!(
                "instance {i}: doubling moved grid by {:e} beyond gap {:e}",
                fine.objective - coarse.objective,
                coarse.gap
            )
        })?;
        ensure(solved.objective <= fine.objective + 1e-6, || {
            format!("instance {i}: solver {} above grid {}", solved.objective, fine.objective)
        })?;
        worst = worst.max((solved.objective - fine.objective).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed <= 60.0, || format!("took {elapsed:.1} s"))?;
    Ok(format!("25 instances, worst |solver - grid| {worst:.2e}, {elapsed:.1} s"))
}

fn ac3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let users = rng.gen_range(1..=4);
        let carriers = *[1usize, 2, 4, 8, 16, 32, 64].get(rng.gen_range(0..7)).unwrap();
        let g = channel(users, carriers, carriers.min(4), 500 + i);
        let powers = Matrix::from_rows(
            (0..users)
                .map(|_| (0..carriers).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..5.0) }).collect())
                .collect(),
        )
        .unwrap();
        let order = if rng.gen_bool(0.5) {
            let mut o: Vec<usize> = (0..users).collect();
            rand::seq::SliceRandom::shuffle(o.as_mut_slice(), &mut rng);
            DecodingOrder::Global(o)
        } else {
            DecodingOrder::PerCarrier(
                (0..carriers)
                    .map(|_| {
                        let mut o: Vec<usize> = (0..users).collect();
                        rand::seq::SliceRandom::shuffle(o.as_mut_slice(), &mut rng);
                        o
                    })
                    .collect(),
            )
        };
        let bc = PowerAllocation::new(Side::Bc, powers).unwrap();
        let mac = bc_to_mac_powers(&g, &bc, &order).unwrap();
        let r_bc = bc_rates(&g, &bc, &order).unwrap().user_totals();
        let r_mac = mac_rates(&g, &mac, &order).unwrap().user_totals();
        for (a, b) in r_bc.iter().zip(&r_mac) {
            ensure((a - b).abs() <= 1e-10, || format!("case {i}: rates {a} vs {b}"))?;
            worst = worst.max((a - b).abs());
        }
        ensure(rel(bc.sum_power(), mac.sum_power()) <= 1e-10, || {
            format!("case {i}: power {} vs {}", bc.sum_power(), mac.sum_power())
        })?;
        let back = bc_to_mac_powers(&g, &mac_to_bc_powers(&g, &mac, &order).unwrap(), &order).unwrap();
        let diff = back.matrix().max_abs_diff(mac.matrix());
        ensure(diff <= 1e-10 * mac.matrix().iter().copied().fold(1.0, f64::max), || {
            format!("case {i}: round trip moved powers by {diff:e}")
        })?;
    }
    Ok(format!("100 allocations, worst rate mismatch {worst:.2e}"))
}

fn ac4() -> Outcome {
    for (i, (g, req, _)) in oracle_instances().iter().enumerate() {
        let r = solve_minpower(g, req, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).map_err(|e| e.to_string())?;
        check_descent(&r).map_err(|e| format!("instance {i}: {e}"))?;
    }
    let (g, req) = fig1_instance();
    let start = Instant::now();
    let r = solve_minpower(&g, &req, 1e-9, 10_000).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(r.converged, || format!("no convergence in {} sweeps", r.iterations))?;
    check_descent(&r)?;
    ensure(elapsed <= 10.0, || format!("took {elapsed:.1} s"))?;
    Ok(format!("K=128, M=4: {} sweeps, P_min {:.6}, {elapsed:.2} s", r.iterations, r.sum_power))
}

fn minrates_instances() -> Vec<MinRatesProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut out = Vec::new();
    for i in 0..10u64 {
        let users = rng.gen_range(2..=4);
        let carriers = *[4usize, 8, 16].get(rng.gen_range(0..3)).unwrap();
        let g = channel(users, carriers, 4, 900 + i);
        let weights: Vec<f64> = (0..users).map(|_| rng.gen_range(0.2..1.5)).collect();
        let budget = g.budget_for_snr_db(rng.gen_range(0.0..15.0));
        let free = wsr_user_rates(&g, &weights, budget).unwrap();
        // Push one user above its unconstrained rate and keep another below.
        let raised = i as usize % users;
        let req: Vec<f64> = (0..users)
            .map(|m| if m == raised { free[m] * 1.3 + 0.2 } else if m % 2 == 0 { free[m] * 0.5 } else { 0.0 })
            .collect();
        let p_min = check_feasibility(&g, &req, budget).unwrap().p_min;
        let budget = budget.max(1.2 * p_min);
        out.push(MinRatesProblem::new(g, weights, req, budget).unwrap());
    }
    out
}

fn ac5() -> Outcome {
    let mut count = 0;
    for (i, (g, req, weights)) in oracle_instances().iter().enumerate() {
        let w = solve_wsr(g, weights, g.budget_for_snr_db(10.0), DEFAULT_PRICE_TOL).map_err(|e| e.to_string())?;
        check_kkt(&w, &format!("wsr {i}"))?;
        let p = solve_minpower(g, req, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).map_err(|e| e.to_string())?;
        check_kkt(&p, &format!("minpower {i}"))?;
        count += 2;
    }
    let (g, req) = fig1_instance();
    let p = solve_minpower(&g, &req, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).map_err(|e| e.to_string())?;
    check_kkt(&p, "minpower K=128")?;
    let w = solve_wsr(&g, &[0.35, 0.4, 0.1, 0.15], g.budget_for_snr_db(10.0), DEFAULT_PRICE_TOL)
        .map_err(|e| e.to_string())?;
    check_kkt(&w, "wsr K=128")?;
    count += 2;
    for (i, problem) in minrates_instances().iter().enumerate() {
        let a = solve_minrates_weights(problem, DEFAULT_RATE_TOL).map_err(|e| e.to_string())?;
        check_kkt(&a, &format!("weights {i}"))?;
        let b = solve_minrates_waterfill(problem, DEFAULT_POWER_TOL).map_err(|e| e.to_string())?;
        check_kkt(&b, &format!("waterfill {i}"))?;
        count += 2;
    }
    Ok(format!("{count} converged solutions certified"))
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..50u64 {
        let users = rng.gen_range(1..=4);
        let carriers = *[1usize, 2, 8, 16, 64].get(rng.gen_range(0..5)).unwrap();
        let g = channel(users, carriers, carriers.min(8), 600 + i);
        let budget = g.budget_for_snr_db(rng.gen_range(-5.0..25.0));
        let r = solve_wsr(&g, &vec![1.0; users], budget, DEFAULT_PRICE_TOL).map_err(|e| e.to_string())?;
        for k in 0..carriers {
            let active = (0..users).filter(|&m| r.powers_bc[(m, k)] > 0.0).count();
            ensure(active <= 1, || format!("instance {i}: carrier {k} shared by {active} users"))?;
        }
        let cert = r.fdma_certificate.ok_or_else(|| format!("instance {i}: no certificate"))?;
        ensure(cert.holds, || format!("instance {i}: certificate {cert:?}"))?;
    }
    Ok("50 instances exclusive, certificate holds on all".into())
}

fn ac7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..20u64 {
        let users = rng.gen_range(1..=4);
        let carriers = *[2usize, 4, 8, 16].get(rng.gen_range(0..4)).unwrap();
        let g = channel(users, carriers, carriers.min(4), 700 + i);
        let weights: Vec<f64> = (0..users).map(|_| rng.gen_range(0.2..1.5)).collect();
        let p0 = g.budget_for_snr_db(rng.gen_range(0.0..20.0));
        let req = wsr_user_rates(&g, &weights, p0).map_err(|e| e.to_string())?;
        let p_min = check_feasibility(&g, &req, p0).map_err(|e| e.to_string())?.p_min;
        ensure(rel(p_min, p0) <= 1e-6, || format!("instance {i}: P_min {p_min} vs P0 {p0}"))?;
        let above = check_feasibility(&g, &req, 1.01 * p_min).map_err(|e| e.to_string())?;
        let below = check_feasibility(&g, &req, 0.99 * p_min).map_err(|e| e.to_string())?;
        ensure(above.status == Feasibility::Feasible, || format!("instance {i}: {:?} above", above.status))?;
        ensure(below.status == Feasibility::Infeasible, || format!("instance {i}: {:?} below", below.status))?;
    }
    Ok("20 instances on both sides of P_min".into())
}

fn ac8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..30u64 {
        let users = rng.gen_range(2..=4);
        let carriers = *[2usize, 4, 8, 16].get(rng.gen_range(0..4)).unwrap();
        let g = channel(users, carriers, carriers.min(4), 800 + i);
        let weights: Vec<f64> = (0..users).map(|_| rng.gen_range(0.2..1.5)).collect();
        let budget = g.budget_for_snr_db(rng.gen_range(-5.0..20.0));
        let m = rng.gen_range(0..users);
        let delta = rng.gen_range(0.01..1.0);
        let probe = rate_monotonicity_probe(&g, &weights, budget, m, delta).map_err(|e| e.to_string())?;
        ensure(probe.holds(1e-9), || format!("probe {i}: {:?}", probe.delta_rates))?;
    }
    Ok("30 probes monotone".into())
}

fn ac9() -> Outcome {
    let (mut active, mut inactive) = (0, 0);
    let mut worst_obj: f64 = 0.0;
    for (i, problem) in minrates_instances().iter().enumerate() {
        let a = solve_minrates_weights(problem, DEFAULT_RATE_TOL).map_err(|e| e.to_string())?;
        let b = solve_minrates_waterfill(problem, DEFAULT_POWER_TOL).map_err(|e| e.to_string())?;
        ensure(a.converged && b.converged, || format!("instance {i}: converged {} {}", a.converged, b.converged))?;
        ensure(rel(a.objective, b.objective) <= 1e-5, || {
            format!("instance {i}: objectives {} vs {}", a.objective, b.objective)
        })?;
        worst_obj = worst_obj.max(rel(a.objective, b.objective));
        for (m, (x, y)) in a.user_rates.iter().zip(&b.user_rates).enumerate() {
            ensure((x - y).abs() <= 1e-4, || format!("instance {i} user {}: {x} vs {y}", m + 1))?;
        }
        for (m, &mu) in a.duals.rate_multipliers.as_ref().unwrap().iter().enumerate() {
            if problem.requirements[m] > 0.0 {
                if mu > 0.0 {
                    active += 1;
                } else {
                    inactive += 1;
                }
            }
        }
        let free = MinRatesProblem::new(
            problem.gains.clone(),
            problem.weights.clone(),
            vec![0.0; problem.users()],
            problem.budget,
        )
        .unwrap();
        let plain = solve_wsr(&problem.gains, &problem.weights, problem.budget, DEFAULT_PRICE_TOL)
            .map_err(|e| e.to_string())?;
        let a0 = solve_minrates_weights(&free, DEFAULT_RATE_TOL).map_err(|e| e.to_string())?;
        let b0 = solve_minrates_waterfill(&free, DEFAULT_POWER_TOL).map_err(|e| e.to_string())?;
        for (what, r) in [("weights", &a0), ("waterfill", &b0)] {
            ensure(rel(r.objective, plain.objective) <= 1e-8, || {
                format!("instance {i}: {what} without requirements {} vs {}", r.objective, plain.objective)
            })?;
        }
    }
    ensure(active > 0 && inactive > 0, || format!("{active} active, {inactive} inactive constraints"))?;
    Ok(format!(
        "10 instances, {active} active / {inactive} inactive constraints, worst objective difference {worst_obj:.2e}"
    ))
}

fn ac10() -> Outcome {
    let mut count = 0;
    for (i, (g, req, _)) in oracle_instances().iter().enumerate() {
        let r = solve_minpower(g, req, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).map_err(|e| e.to_string())?;
        check_orders(g, &r, &format!("minpower {i}"))?;
        count += 1;
    }
    let (g, req) = fig1_instance();
    let r = solve_minpower(&g, &req, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).map_err(|e| e.to_string())?;
    check_orders(&g, &r, "minpower K=128")?;
    count += 1;
    for (i, problem) in minrates_instances().iter().enumerate() {
        let a = solve_minrates_weights(problem, DEFAULT_RATE_TOL).map_err(|e| e.to_string())?;
        check_orders(&problem.gains, &a, &format!("weights {i}"))?;
        let b = solve_minrates_waterfill(problem, DEFAULT_POWER_TOL).map_err(|e| e.to_string())?;
        check_orders(&problem.gains, &b, &format!("waterfill {i}"))?;
        count += 2;
    }
    Ok(format!("{count} solutions, no order violations"))
}

fn ac11() -> Outcome {
    let g = channel(4, 256, 8, 11);
    let weights = vec![0.35, 0.4, 0.1, 0.15];
    let req: Vec<f64> = [1.0, 0.0, 1.25, 0.5].iter().map(|&b| bps_hz_to_nats(b, 256)).collect();
    let p_min = solve_minpower(&g, &req, DEFAULT_TOL, DEFAULT_MAX_SWEEPS)
        .map_err(|e| e.to_string())?
        .sum_power;
    let lowest = g.snr_db_for_budget(p_min) + 0.01;
    let steps = 12;
    let mut previous: Option<Vec<bool>> = None;
    let mut orders = Vec::new();
    for s in 0..steps {
        let snr = lowest + 30.0 * s as f64 / (steps - 1) as f64;
        let problem =
            MinRatesProblem::new(g.clone(), weights.clone(), req.clone(), g.budget_for_snr_db(snr)).unwrap();
        let r = solve_minrates_waterfill(&problem, DEFAULT_POWER_TOL).map_err(|e| e.to_string())?;
        ensure(r.converged, || format!("{snr:.2} dB did not converge"))?;
        let active: Vec<bool> = r.duals.rate_multipliers.as_ref().unwrap().iter().map(|&mu| mu > 0.0).collect();
        if s == 0 {
            let all = req.iter().zip(&active).all(|(&q, &a)| q == 0.0 || a);
            ensure(all, || format!("not all constraints active at {snr:.2} dB: {active:?}"))?;
        }
        if let Some(prev) = &previous {
            let subset = active.iter().zip(prev).all(|(&now, &before)| !now || before);
            ensure(subset, || format!("active set grew at {snr:.2} dB: {prev:?} -> {active:?}"))?;
        }
        previous = Some(active);
        orders.push(r.orders.priority_label());
    }
    orders.dedup();
    ensure(orders.len() >= 2, || format!("decoding order never changed: {orders:?}"))?;
    Ok(format!("{steps} steps from {lowest:.2} dB, orders {}", orders.join(" | ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 11] = [
        ("AC1", "minimum power matches grid oracle", ac1),
        ("AC2", "weighted sum rate matches grid oracle", ac2),
        ("AC3", "uplink-downlink duality", ac3),
        ("AC4", "monotone descent of minimum-power sweeps", ac4),
        ("AC5", "optimality residuals of all solvers", ac5),
        ("AC6", "exclusive carriers at equal weights", ac6),
        ("AC7", "feasibility threshold", ac7),
        ("AC8", "rate monotonicity in the weights", ac8),
        ("AC9", "minimum-rates algorithms agree", ac9),
        ("AC10", "decoding-order consistency", ac10),
        ("AC11", "SNR sweep structure", ac11),
    ];
    let mut failed = 0;
    for (id, title, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("[PASS] {id} {title}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {title}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
