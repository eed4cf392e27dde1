//! Weighted sum rate maximization with per-user minimum rates.
//!
//! Two solvers are provided. The weight-raising solver repeatedly solves the
//! unconstrained weighted problem and increases the weight of any user whose
//! requirement is not met. The water-filling solver bisects on the power
//! price and, for each price, cycles over the users water-filling their
//! rates at level `log(μ_m/λ̃)`, raised where needed to meet the requirement.
//! Both end at the same point of the capacity region: the vertex supported
//! by the normal `(μ + μ̃, λ̃)`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::capacity::{
    kkt_residuals_minpower, kkt_residuals_wsr, mac_rates, mac_to_bc_powers, rates_to_powers, weighted_decoding_order,
    DecodingOrder, KktResiduals, PowerAllocation, RateAllocation, Side,
};
use crate::channel::{load_instance, ChannelGains};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::minpower::{check_requirements, solve_minpower, waterfill_user, Ranking, DEFAULT_MAX_SWEEPS};
use crate::oracle::sample_feasible_region;
use crate::report::{bps_hz_to_nats, nats_to_bps_hz, Duals, Orders, PricePoint, ProblemKind, SolverReport, REPORT_SCHEMA};
use crate::wsr::{assemble_report, solve_power_price, wsr_point, WsrPoint, DEFAULT_PRICE_TOL};

/// Absolute rate tolerance (nats) of the weight-raising solver.
pub const DEFAULT_RATE_TOL: f64 = 1e-8;
/// Relative power tolerance of the water-filling solver.
pub const DEFAULT_POWER_TOL: f64 = 1e-9;
/// Relative width of the band around the minimum power reported as boundary.
pub const BOUNDARY_BAND: f64 = 1e-9;

const MAX_OUTER_SWEEPS: usize = 10_000;
const MAX_RAISE_STEPS: usize = 400;
const MAX_INNER_SWEEPS: usize = 5_000;
const MAX_PRICE_STEPS: usize = 400;

/// A weighted sum rate problem with rate floors. Users outside the
/// constrained set carry a zero requirement.
#[derive(Debug, Clone)]
pub struct MinRatesProblem {
    pub gains: ChannelGains,
    pub weights: Vec<f64>,
    /// Requirements in nats.
    pub requirements: Vec<f64>,
    pub budget: f64,
}

impl MinRatesProblem {
    pub fn new(gains: ChannelGains, weights: Vec<f64>, requirements: Vec<f64>, budget: f64) -> Result<Self> {
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::NonPositiveBudget(budget));
        }
        if weights.len() != gains.users() {
            return Err(Error::DimensionMismatch {
                what: "weights vs users",
                expected: gains.users(),
                found: weights.len(),
            });
        }
        crate::wsr::Weights::new(weights.clone())?;
        check_requirements(&gains, &requirements)?;
        Ok(Self {
            gains,
            weights,
            requirements,
            budget,
        })
    }

    /// Drops the requirements of users outside `constrained`.
    pub fn restrict_to(mut self, constrained: &[usize]) -> Result<Self> {
        if let Some(&m) = constrained.iter().find(|&&m| m >= self.gains.users()) {
            return Err(Error::field("constrained", format!("user {} out of range", m + 1)));
        }
        for (m, r) in self.requirements.iter_mut().enumerate() {
            if !constrained.contains(&m) {
                *r = 0.0;
            }
        }
        Ok(self)
    }

    pub fn users(&self) -> usize {
        self.gains.users()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feasibility {
    Feasible,
    Boundary,
    Infeasible,
}

impl std::fmt::Display for Feasibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Feasible => "feasible",
            Self::Boundary => "boundary",
            Self::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub status: Feasibility,
    pub p_min: f64,
    pub budget: f64,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.status != Feasibility::Infeasible
    }
}

/// The requirements are achievable within `budget` iff their minimum sum
/// power does not exceed it.
pub fn check_feasibility(gains: &ChannelGains, requirements: &[f64], budget: f64) -> Result<FeasibilityReport> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::NonPositiveBudget(budget));
    }
    let report = solve_minpower(gains, requirements, crate::minpower::DEFAULT_TOL, DEFAULT_MAX_SWEEPS)?;
    let p_min = report.sum_power;
    let status = if (budget - p_min).abs() <= BOUNDARY_BAND * budget.max(p_min) {
        Feasibility::Boundary
    } else if p_min < budget {
        Feasibility::Feasible
    } else {
        Feasibility::Infeasible
    };
    Ok(FeasibilityReport { status, p_min, budget })
}

fn require_feasible(problem: &MinRatesProblem) -> Result<FeasibilityReport> {
    let check = check_feasibility(&problem.gains, &problem.requirements, problem.budget)?;
    if check.feasible() {
        Ok(check)
    } else {
        Err(Error::Infeasible {
            p_min: check.p_min,
            budget: problem.budget,
        })
    }
}

/// Combines the power-price conditions at weights `μ*` with slackness of
/// the rate constraints.
fn minrates_kkt(
    problem: &MinRatesProblem,
    powers_mac: &PowerAllocation,
    composite: &[f64],
    multipliers: &[f64],
    price: f64,
    user_rates: &[f64],
) -> Result<KktResiduals> {
    let mut kkt = kkt_residuals_wsr(&problem.gains, powers_mac, composite, price, problem.budget)?;
    for (m, &rate) in user_rates.iter().enumerate() {
        let slack = rate - problem.requirements[m];
        kkt.primal_gap = kkt.primal_gap.max((-slack).max(0.0));
        let mu = multipliers[m];
        kkt.complementary_slackness = kkt.complementary_slackness.max(mu * slack.abs() / (1.0 + mu));
    }
    Ok(kkt)
}

/// Weight-raising solver. `tol` is the absolute rate tolerance in nats.
pub fn solve_minrates_weights(problem: &MinRatesProblem, tol: f64) -> Result<SolverReport> {
    let started = Instant::now();
    require_feasible(problem)?;
    let gains = &problem.gains;
    let target = &problem.requirements;
    let users = problem.users();
    let mut composite = problem.weights.clone();
    let mut point = wsr_point(gains, &composite, problem.budget, DEFAULT_PRICE_TOL)?;
    let mut trace = Vec::new();
    let mut weight_trace = Vec::new();
    let mut converged = false;
    for _ in 0..MAX_OUTER_SWEEPS {
        for m in 0..users {
            if target[m] <= 0.0 || point.user_rates()[m] >= target[m] - 0.5 * tol {
                continue;
            }
            point = raise_weight(problem, &mut composite, m, tol)?;
        }
        let rates = point.user_rates();
        trace.push(problem.weights.iter().zip(&rates).map(|(w, r)| w * r).sum());
        if let Some(last) = weight_trace.last() {
            debug_assert!(composite.iter().zip(last as &Vec<f64>).all(|(a, b)| a >= b));
        }
        weight_trace.push(composite.clone());
        if (0..users).all(|m| rates[m] >= target[m] - 0.5 * tol) {
            converged = true;
            break;
        }
    }
    let mut report = assemble_report(gains, &composite, problem.budget, &point, ProblemKind::MinRatesWeights)?;
    finish_report(problem, &mut report, &composite, point.price)?;
    report.converged = converged;
    report.iterations = trace.len();
    report.trace = trace;
    report.price_trace = Vec::new();
    report.weight_trace = weight_trace;
    report.wall_time_s = Some(started.elapsed().as_secs_f64());
    Ok(report)
}

/// Raises `composite[m]` until user `m` reaches its requirement to within
/// `[R̄, R̄ + tol/2]`.
fn raise_weight(problem: &MinRatesProblem, composite: &mut [f64], m: usize, tol: f64) -> Result<WsrPoint> {
    let gains = &problem.gains;
    let target = problem.requirements[m];
    let solve = |w: &[f64]| wsr_point(gains, w, problem.budget, DEFAULT_PRICE_TOL);
    let mut lo = composite[m];
    let scale = composite.iter().copied().fold(0.0, f64::max);
    let mut hi = lo.max(1e-3 * scale);
    let mut trial = composite.to_vec();
    let mut hi_point = None;
    for step in 0..=MAX_RAISE_STEPS {
        if step > 0 {
            lo = hi;
            hi *= 2.0;
        }
        trial[m] = hi;
        let point = solve(&trial)?;
        if point.user_rates()[m] >= target {
            hi_point = Some(point);
            break;
        }
    }
    let Some(mut best) = hi_point else {
        return Err(Error::Bracket {
            user: m,
            target,
            single_user_rate: single_user_rate(gains, m, problem.budget),
        });
    };
    for _ in 0..MAX_RAISE_STEPS {
        if best.user_rates()[m] <= target + 0.5 * tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        trial[m] = mid;
        let point = solve(&trial)?;
        if point.user_rates()[m] >= target {
            hi = mid;
            best = point;
        } else {
            lo = mid;
        }
    }
    composite[m] = hi;
    Ok(best)
}

/// Rate of user `m` when it alone uses the whole budget: the limit of its
/// rate as its weight grows.
pub fn single_user_rate(gains: &ChannelGains, m: usize, budget: f64) -> f64 {
    let mut weights = vec![0.0; gains.users()];
    weights[m] = 1.0;
    if !gains.reachable(m) {
        return 0.0;
    }
    wsr_point(gains, &weights, budget, DEFAULT_PRICE_TOL).map_or(0.0, |p| p.user_rates()[m])
}

/// Fills the minimum-rates specific parts of a report assembled from the
/// composite weights.
fn finish_report(problem: &MinRatesProblem, report: &mut SolverReport, composite: &[f64], price: f64) -> Result<()> {
    let multipliers: Vec<f64> = composite
        .iter()
        .zip(&problem.weights)
        .map(|(c, w)| (c - w).max(0.0))
        .collect();
    let powers_mac = PowerAllocation::new(Side::Mac, report.powers_mac.clone())?;
    report.kkt = minrates_kkt(problem, &powers_mac, composite, &multipliers, price, &report.user_rates)?;
    report.weights = Some(problem.weights.clone());
    report.requirements = Some(problem.requirements.clone());
    report.objective = problem
        .weights
        .iter()
        .zip(&report.user_rates)
        .map(|(w, r)| w * r)
        .sum();
    report.duals = Duals {
        power_price: Some(price),
        rate_multipliers: Some(multipliers),
        composite_weights: Some(composite.to_vec()),
    };
    report.fdma_certificate = None;
    Ok(())
}

/// State of the water-filling inner loop for one price.
#[derive(Debug, Clone)]
struct InnerState {
    rates: Matrix,
    multipliers: Vec<f64>,
    converged: bool,
}

fn inner_loop(
    problem: &MinRatesProblem,
    ranking: &Ranking,
    price: f64,
    start: &Matrix,
) -> Result<InnerState> {
    let gains = &problem.gains;
    let users = problem.users();
    let carriers = gains.carriers();
    let mut rates = start.clone();
    let mut multipliers = vec![0.0; users];
    let mut noise = vec![0.0; carriers];
    let mut previous = f64::NAN;
    for _ in 0..MAX_INNER_SWEEPS {
        let mut moved = 0.0f64;
        for m in 0..users {
            for (k, n) in noise.iter_mut().enumerate() {
                *n = ranking.noise_level(gains, &rates, m, k);
            }
            let level = (problem.weights[m] / price).ln();
            let mut row: Vec<f64> = noise.iter().map(|&n| (level - n).max(0.0)).collect();
            multipliers[m] = 0.0;
            if row.iter().sum::<f64>() < problem.requirements[m] {
                let (filled, nu) = waterfill_user(m, &noise, problem.requirements[m])?;
                row = filled;
                multipliers[m] = (price * nu.exp() - problem.weights[m]).max(0.0);
            }
            for (old, new) in rates.row_mut(m).iter_mut().zip(row) {
                moved = moved.max((*old - new).abs());
                *old = new;
            }
        }
        let utility: f64 = rates
            .row_sums()
            .iter()
            .zip(&problem.weights)
            .map(|(r, w)| r * w)
            .sum();
        let change = (utility - previous).abs() / utility.abs().max(f64::MIN_POSITIVE);
        previous = utility;
        if (change <= 1e-10 || utility == 0.0) && moved <= 1e-11 {
            return Ok(InnerState {
                rates,
                multipliers,
                converged: true,
            });
        }
    }
    Ok(InnerState {
        rates,
        multipliers,
        converged: false,
    })
}

/// Water-filling solver. `tol` is the relative tolerance on the sum power.
pub fn solve_minrates_waterfill(problem: &MinRatesProblem, tol: f64) -> Result<SolverReport> {
    let started = Instant::now();
    require_feasible(problem)?;
    let gains = &problem.gains;
    let ranking = Ranking::new(gains);
    let budget = problem.budget;
    let power_of = |s: &InnerState| crate::minpower::sum_power(gains, &ranking, &s.rates);
    let mut history: Vec<PricePoint> = Vec::new();
    let mut state = InnerState {
        rates: Matrix::zeros(problem.users(), gains.carriers()),
        multipliers: vec![0.0; problem.users()],
        converged: true,
    };
    let evaluate = |price: f64, state: &mut InnerState, history: &mut Vec<PricePoint>| -> Result<f64> {
        *state = inner_loop(problem, &ranking, price, &state.rates)?;
        let power = power_of(state);
        history.push(PricePoint { price, power });
        Ok(power)
    };

    // Bracket in log-price starting from the unconstrained price.
    let start = solve_power_price(gains, &problem.weights, budget, DEFAULT_PRICE_TOL)?;
    let mut price = start;
    let mut power = evaluate(price, &mut state, &mut history)?;
    let (mut lo, mut hi) = (price, price);
    let mut bracketed = true;
    if power > budget {
        // Too much power: raise the price.
        let mut steps = 0;
        while power > budget {
            lo = hi;
            hi *= 2.0;
            power = evaluate(hi, &mut state, &mut history)?;
            steps += 1;
            if steps > MAX_PRICE_STEPS {
                bracketed = false;
                break;
            }
        }
        price = hi;
    } else {
        let mut steps = 0;
        while power < budget {
            hi = lo;
            lo *= 0.5;
            power = evaluate(lo, &mut state, &mut history)?;
            steps += 1;
            if steps > MAX_PRICE_STEPS {
                bracketed = false;
                break;
            }
        }
        price = lo;
    }
    // P(lo) ≥ P̄ ≥ P(hi).
    let mut converged = bracketed && (power - budget).abs() <= tol * budget;
    if bracketed {
        for _ in 0..MAX_PRICE_STEPS {
            if (power - budget).abs() <= tol * budget {
                converged = true;
                break;
            }
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            price = mid;
            power = evaluate(mid, &mut state, &mut history)?;
            if power > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    // Intermediate prices may stop early; the warm start carries the
    // progress over, so only the final inner loop has to settle.
    let converged = converged && state.converged;

    let rates = RateAllocation::new(state.rates.clone())?;
    let order = ranking.decoding_order();
    let powers_mac = rates_to_powers(gains, &rates, &order)?;
    let powers_bc = mac_to_bc_powers(gains, &powers_mac, &order)?;
    let composite: Vec<f64> = problem
        .weights
        .iter()
        .zip(&state.multipliers)
        .map(|(w, m)| w + m)
        .collect();
    let user_rates = rates.user_totals();
    let carriers = gains.carriers();
    let mut report = SolverReport {
        schema: REPORT_SCHEMA.to_string(),
        problem: ProblemKind::MinRatesWaterfill,
        converged,
        iterations: history.len(),
        users: problem.users(),
        carriers,
        rates: rates.into_matrix(),
        user_rates_bps_hz: user_rates.iter().map(|&r| nats_to_bps_hz(r, carriers)).collect(),
        user_rates,
        sum_power: powers_mac.sum_power(),
        powers_mac: powers_mac.into_matrix(),
        powers_bc: powers_bc.into_matrix(),
        budget: Some(budget),
        requirements: None,
        weights: None,
        objective: 0.0,
        duals: Duals::default(),
        orders: Orders::from_decoding(weighted_decoding_order(&composite), ranking.orders().to_vec()),
        kkt: KktResiduals::default(),
        trace: history.iter().map(|p| p.power).collect(),
        price_trace: history,
        weight_trace: Vec::new(),
        fdma_certificate: None,
        wall_time_s: None,
    };
    finish_report(problem, &mut report, &composite, price)?;
    report.wall_time_s = Some(started.elapsed().as_secs_f64());
    Ok(report)
}

/// Supporting hyperplane of the rate-power region at a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentNormal {
    /// `μ* = μ + μ̃`.
    pub weights: Vec<f64>,
    pub price: f64,
    /// Users by nonincreasing `μ*`.
    pub priority: Vec<usize>,
}

impl TangentNormal {
    /// `μ*ᵀR − λ̃P`.
    pub fn value(&self, rates: &[f64], power: f64) -> f64 {
        self.weights.iter().zip(rates).map(|(w, r)| w * r).sum::<f64>() - self.price * power
    }
}

/// Normal `(μ*, λ̃)` of a weighted or minimum-rates report.
pub fn tangent_normal(report: &SolverReport) -> Option<TangentNormal> {
    let weights = report
        .duals
        .composite_weights
        .clone()
        .or_else(|| report.weights.clone())?;
    let price = report.duals.power_price?;
    let mut priority = weighted_decoding_order(&weights);
    priority.reverse();
    Some(TangentNormal {
        weights,
        price,
        priority,
    })
}

/// Largest excess `μ*ᵀR′ − λ̃P′ − (μ*ᵀR* − λ̃P̄)` over `count` random
/// achievable points with powers up to `max_power`; nonpositive when the
/// hyperplane supports the region.
pub fn support_violation(
    gains: &ChannelGains,
    report: &SolverReport,
    max_power: f64,
    count: usize,
    seed: u64,
) -> Option<f64> {
    let normal = tangent_normal(report)?;
    let reference = normal.value(&report.user_rates, report.budget.unwrap_or(report.sum_power));
    let points = sample_feasible_region(gains, (0.0, max_power), count, seed);
    Some(
        points
            .iter()
            .map(|p| normal.value(&p.rates, p.power) - reference)
            .fold(f64::NEG_INFINITY, f64::max),
    )
}

/// Rate changes when user `m`'s weight grows by `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityProbe {
    pub user: usize,
    pub delta_rates: Vec<f64>,
}

impl MonotonicityProbe {
    /// The raised user did not lose rate and nobody else gained, to within
    /// `tol` nats.
    pub fn holds(&self, tol: f64) -> bool {
        self.delta_rates
            .iter()
            .enumerate()
            .all(|(n, &d)| if n == self.user { d >= -tol } else { d <= tol })
    }
}

pub fn rate_monotonicity_probe(
    gains: &ChannelGains,
    weights: &[f64],
    budget: f64,
    m: usize,
    delta: f64,
) -> Result<MonotonicityProbe> {
    if m >= gains.users() {
        return Err(Error::field("user", format!("user {m} out of range")));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::field("delta", "increment must be nonnegative and finite"));
    }
    let before = wsr_point(gains, weights, budget, DEFAULT_PRICE_TOL)?.user_rates();
    let mut raised = weights.to_vec();
    raised[m] += delta;
    let after = wsr_point(gains, &raised, budget, DEFAULT_PRICE_TOL)?.user_rates();
    Ok(MonotonicityProbe {
        user: m,
        delta_rates: after.iter().zip(&before).map(|(a, b)| a - b).collect(),
    })
}

/// Evaluates an uplink allocation under the decoding order of a report,
/// returning per-user rates.
pub fn report_mac_rates(gains: &ChannelGains, report: &SolverReport) -> Result<Vec<f64>> {
    let p = PowerAllocation::new(Side::Mac, report.powers_mac.clone())?;
    let order = if report.orders.per_carrier.is_empty() {
        DecodingOrder::Global(report.orders.decoding.clone())
    } else {
        DecodingOrder::PerCarrier(report.orders.per_carrier.clone())
    };
    Ok(mac_rates(gains, &p, &order)?.user_totals())
}

/// Recomputes the optimality residuals of a saved report from its powers,
/// rates and duals with the independent evaluators.
pub fn recompute_kkt(gains: &ChannelGains, report: &SolverReport) -> Result<KktResiduals> {
    let missing = |field: &str| Error::field(field, "report lacks this field");
    match report.problem {
        ProblemKind::MinPower => {
            let rates = RateAllocation::new(report.rates.clone())?;
            let requirements = report.requirements.as_deref().ok_or_else(|| missing("requirements"))?;
            let multipliers = report.duals.rate_multipliers.as_deref().ok_or_else(|| missing("rate_multipliers"))?;
            kkt_residuals_minpower(gains, &rates, requirements, multipliers)
        }
        ProblemKind::WeightedSumRate => {
            let p = PowerAllocation::new(Side::Mac, report.powers_mac.clone())?;
            let weights = report.weights.as_deref().ok_or_else(|| missing("weights"))?;
            let price = report.duals.power_price.ok_or_else(|| missing("power_price"))?;
            kkt_residuals_wsr(gains, &p, weights, price, report.budget.ok_or_else(|| missing("budget"))?)
        }
        ProblemKind::MinRatesWeights | ProblemKind::MinRatesWaterfill => {
            let problem = MinRatesProblem::new(
                gains.clone(),
                report.weights.clone().ok_or_else(|| missing("weights"))?,
                report.requirements.clone().ok_or_else(|| missing("requirements"))?,
                report.budget.ok_or_else(|| missing("budget"))?,
            )?;
            let p = PowerAllocation::new(Side::Mac, report.powers_mac.clone())?;
            let composite = report.duals.composite_weights.as_deref().ok_or_else(|| missing("composite_weights"))?;
            let multipliers = report.duals.rate_multipliers.as_deref().ok_or_else(|| missing("rate_multipliers"))?;
            let price = report.duals.power_price.ok_or_else(|| missing("power_price"))?;
            let user_rates = mac_rates(gains, &p, &DecodingOrder::Global(weighted_decoding_order(composite)))?.user_totals();
            minrates_kkt(&problem, &p, composite, multipliers, price, &user_rates)
        }
    }
}

/// Budget given either directly or as an SNR in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetSpec {
    Power(f64),
    SnrDb(f64),
}

impl BudgetSpec {
    pub fn resolve(self, gains: &ChannelGains) -> f64 {
        match self {
            Self::Power(p) => p,
            Self::SnrDb(db) => gains.budget_for_snr_db(db),
        }
    }
}

/// On-disk description of a minimum-rates problem. Rates are in bits/s/Hz
/// averaged over the carriers; `constrained` lists one-based user indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub instance: String,
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
    #[serde(flatten)]
    pub budget: BudgetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<Vec<usize>>,
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(Error::from_json)
    }

    /// Loads the referenced instance (relative to `base`) and builds the
    /// problem.
    pub fn into_problem(self, base: &std::path::Path) -> Result<MinRatesProblem> {
        let gains = load_instance(base.join(&self.instance))?;
        let carriers = gains.carriers();
        let requirements = self.rates.iter().map(|&b| bps_hz_to_nats(b, carriers)).collect();
        let budget = self.budget.resolve(&gains);
        let problem = MinRatesProblem::new(gains, self.weights, requirements, budget)?;
        match self.constrained {
            None => Ok(problem),
            Some(set) => {
                let zero_based = set
                    .iter()
                    .map(|&u| u.checked_sub(1).ok_or_else(|| Error::field("constrained", "user index 0")))
                    .collect::<Result<Vec<_>>>()?;
                problem.restrict_to(&zero_based)
            }
        }
    }
}
