//! Minimum sum power subject to per-user rate requirements.
//!
//! On every carrier the power-minimizing successive cancellation order
//! decodes users by nonincreasing gain. With that order fixed, the sum power
//! written in rate coordinates is `F(R) = Σ_k Σ_r c_{r,k}·exp(Σ_{n≥r} R_{π_k(n),k})`
//! up to a constant, a sum of log-convex terms. The solver cycles over the
//! users and water-fills each user's rates against the others, which
//! decreases `F` monotonically.

use std::time::Instant;

use crate::capacity::{
    kkt_residuals_minpower, mac_to_bc_powers, rates_to_powers, weighted_decoding_order,
    DecodingOrder, RateAllocation,
};
use crate::channel::ChannelGains;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::report::{nats_to_bps_hz, Duals, Orders, ProblemKind, SolverReport, REPORT_SCHEMA};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

/// Rates at or below this are treated as inactive when reading orders.
pub const ACTIVE_RATE: f64 = 1e-12;
/// Relative slack allowed between multipliers of users sharing a carrier.
pub const ORDER_TOL: f64 = 1e-9;

/// Per-user rate targets in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRequirements(Vec<f64>);

impl RateRequirements {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((m, r)) = values
            .iter()
            .enumerate()
            .find(|(_, r)| !r.is_finite() || **r < 0.0)
        {
            return Err(Error::field(
                format!("rates[{m}]"),
                format!("rate requirement must be finite and nonnegative, got {r}"),
            ));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) fn check_requirements(gains: &ChannelGains, requirements: &[f64]) -> Result<()> {
    if requirements.len() != gains.users() {
        return Err(Error::DimensionMismatch {
            what: "rate requirements vs users",
            expected: gains.users(),
            found: requirements.len(),
        });
    }
    RateRequirements::new(requirements.to_vec())?;
    for (m, &r) in requirements.iter().enumerate() {
        if r > 0.0 && !gains.reachable(m) {
            return Err(Error::UnreachableUser { user: m, rate: r });
        }
    }
    Ok(())
}

/// Per-carrier decoding sequences sorting gains nonincreasing; ties keep the
/// lower user index first.
pub fn carrier_orders(gains: &ChannelGains) -> DecodingOrder {
    DecodingOrder::PerCarrier(
        (0..gains.carriers())
            .map(|k| {
                let mut order: Vec<usize> = (0..gains.users()).collect();
                order.sort_by(|&a, &b| gains.gain(b, k).total_cmp(&gains.gain(a, k)));
                order
            })
            .collect(),
    )
}

/// Cost coefficients of the rate-domain objective, indexed by rank.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCoefficients {
    /// `orders[k][r]` is the user at rank `r` on carrier `k`.
    pub orders: Vec<Vec<usize>>,
    /// `coefficients[(r, k)]`; `+∞` for ranks whose gain is zero.
    pub coefficients: Matrix,
}

impl CostCoefficients {
    pub fn coefficient(&self, rank: usize, k: usize) -> f64 {
        self.coefficients[(rank, k)]
    }
}

/// `c_{1,k} = σ²/h_{π_k(1),k}`, `c_{r,k} = σ²(1/h_{π_k(r),k} − 1/h_{π_k(r−1),k})`.
pub fn cost_coefficients(gains: &ChannelGains) -> CostCoefficients {
    let DecodingOrder::PerCarrier(orders) = carrier_orders(gains) else {
        unreachable!()
    };
    let mut coefficients = Matrix::zeros(gains.users(), gains.carriers());
    for (k, order) in orders.iter().enumerate() {
        let mut prev = 0.0;
        for (r, &u) in order.iter().enumerate() {
            let inv = gains.noise_to_gain(u, k);
            coefficients[(r, k)] = if inv.is_finite() { inv - prev } else { f64::INFINITY };
            prev = inv;
        }
    }
    CostCoefficients {
        orders,
        coefficients,
    }
}

/// Carrier orders plus each user's rank, shared by the sweeps.
#[derive(Debug, Clone)]
pub(crate) struct Ranking {
    orders: Vec<Vec<usize>>,
    rank: Matrix,
}

impl Ranking {
    pub fn new(gains: &ChannelGains) -> Self {
        let DecodingOrder::PerCarrier(orders) = carrier_orders(gains) else {
            unreachable!()
        };
        let mut rank = Matrix::zeros(gains.users(), gains.carriers());
        for (k, order) in orders.iter().enumerate() {
            for (r, &u) in order.iter().enumerate() {
                rank[(u, k)] = r as f64;
            }
        }
        Self { orders, rank }
    }

    pub fn decoding_order(&self) -> DecodingOrder {
        DecodingOrder::PerCarrier(self.orders.clone())
    }

    pub fn orders(&self) -> &[Vec<usize>] {
        &self.orders
    }

    /// Log marginal power of user `m` on carrier `k` at zero own rate.
    pub fn noise_level(&self, gains: &ChannelGains, rates: &Matrix, m: usize, k: usize) -> f64 {
        let h = gains.gain(m, k);
        if h <= 0.0 {
            return f64::INFINITY;
        }
        let order = &self.orders[k];
        let r = self.rank[(m, k)] as usize;
        let noise = gains.noise_power();
        // A collects Σ_{s≤r} c_s·(exp(Σ_{n=s}^{r−1} R) − 1), built forward.
        let mut a = 0.0;
        for &u in &order[..r] {
            let growth = rates[(u, k)].exp_m1();
            a = a * (1.0 + growth) + noise / gains.gain(u, k) * growth;
        }
        let later: f64 = order[r + 1..].iter().map(|&u| rates[(u, k)]).sum();
        later + (noise / h + a).ln()
    }
}

/// Effective noise levels `n_{m,k}` of user `m` given everyone's rates: the
/// log of the marginal sum power of `R_{m,k}` at `R_{m,k} = 0`.
pub fn effective_noise(gains: &ChannelGains, rates: &RateAllocation, m: usize) -> Vec<f64> {
    let ranking = Ranking::new(gains);
    let mut own_zero = rates.matrix().clone();
    own_zero.row_mut(m).fill(0.0);
    (0..gains.carriers())
        .map(|k| {
            let n = ranking.noise_level(gains, &own_zero, m, k);
            debug_assert!(
                {
                    let direct = noise_level_by_coefficients(gains, &ranking, &own_zero, m, k);
                    !n.is_finite() && !direct.is_finite() || (n - direct).abs() <= 1e-10 * n.abs().max(1.0)
                },
                "effective noise forms disagree"
            );
            n
        })
        .collect()
}

/// `log Σ_{s≤r} c_s·exp(Σ_{n≥s} R)`, summed term by term.
fn noise_level_by_coefficients(
    gains: &ChannelGains,
    ranking: &Ranking,
    rates: &Matrix,
    m: usize,
    k: usize,
) -> f64 {
    if gains.gain(m, k) <= 0.0 {
        return f64::INFINITY;
    }
    let order = &ranking.orders[k];
    let r = ranking.rank[(m, k)] as usize;
    let mut prev = 0.0;
    let mut total = 0.0;
    for s in 0..=r {
        let inv = gains.noise_to_gain(order[s], k);
        let suffix: f64 = order[s..].iter().map(|&u| rates[(u, k)]).sum();
        total += (inv - prev) * suffix.exp();
        prev = inv;
    }
    total.ln()
}

/// Water-fills `target` nats over floors `noise` (infinite floors excluded).
/// Returns the rates and the level `ν`; a zero target gives `ν = −∞`.
pub fn waterfill_user(user: usize, noise: &[f64], target: f64) -> Result<(Vec<f64>, f64)> {
    if target <= 0.0 {
        return Ok((vec![0.0; noise.len()], f64::NEG_INFINITY));
    }
    let mut finite: Vec<f64> = noise.iter().copied().filter(|n| n.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::UnreachableUser { user, rate: target });
    }
    finite.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut level = f64::NEG_INFINITY;
    for (j, &n) in finite.iter().enumerate() {
        sum += n;
        level = (target + sum) / (j + 1) as f64;
        if finite.get(j + 1).is_none_or(|&next| level <= next) {
            break;
        }
    }
    let rates = noise.iter().map(|&n| (level - n).max(0.0)).collect();
    Ok((rates, level))
}

/// Rate-domain objective `F(R)`; ranks with zero gain are skipped.
pub fn rate_objective(gains: &ChannelGains, rates: &RateAllocation) -> f64 {
    let costs = cost_coefficients(gains);
    let mut total = 0.0;
    for (k, order) in costs.orders.iter().enumerate() {
        let mut suffix: f64 = order.iter().map(|&u| rates.rate(u, k)).sum();
        for (r, &u) in order.iter().enumerate() {
            let c = costs.coefficient(r, k);
            if c.is_finite() {
                total += c * suffix.exp();
            }
            suffix -= rates.rate(u, k);
        }
    }
    total
}

/// `Σ_k σ²/h` of the weakest positive-gain user on each carrier: the gap
/// between [`rate_objective`] and the sum power.
pub fn objective_offset(gains: &ChannelGains) -> f64 {
    (0..gains.carriers())
        .map(|k| {
            (0..gains.users())
                .map(|m| gains.noise_to_gain(m, k))
                .filter(|x| x.is_finite())
                .fold(0.0, f64::max)
        })
        .sum()
}

/// Sum of the uplink powers realising `rates` with gain-sorted decoding.
pub(crate) fn sum_power(gains: &ChannelGains, ranking: &Ranking, rates: &Matrix) -> f64 {
    let noise = gains.noise_power();
    let mut total = 0.0;
    for (k, order) in ranking.orders.iter().enumerate() {
        let mut later = 0.0f64;
        for &u in order.iter().rev() {
            let r = rates[(u, k)];
            if r > 0.0 {
                total += noise / gains.gain(u, k) * r.exp_m1() * later.exp();
            }
            later += r;
        }
    }
    total
}

/// Minimizes the sum power meeting `requirements` (nats per user).
pub fn solve_minpower(
    gains: &ChannelGains,
    requirements: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<SolverReport> {
    let started = Instant::now();
    check_requirements(gains, requirements)?;
    let users = gains.users();
    let carriers = gains.carriers();
    let ranking = Ranking::new(gains);
    let mut rates = Matrix::zeros(users, carriers);
    let mut levels = vec![f64::NEG_INFINITY; users];
    let mut trace = Vec::new();
    let mut previous = 0.0;
    let mut converged = false;
    let mut noise = vec![0.0; carriers];
    for _ in 0..max_sweeps {
        let mut moved = 0.0f64;
        for m in 0..users {
            for (k, n) in noise.iter_mut().enumerate() {
                *n = ranking.noise_level(gains, &rates, m, k);
            }
            let (row, level) = waterfill_user(m, &noise, requirements[m])?;
            for (old, new) in rates.row_mut(m).iter_mut().zip(row) {
                moved = moved.max((*old - new).abs());
                *old = new;
            }
            levels[m] = level;
        }
        let power = sum_power(gains, &ranking, &rates);
        trace.push(power);
        let decrease = if previous > 0.0 {
            (previous - power) / previous
        } else if power == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        previous = power;
        if decrease <= tol && moved <= tol {
            converged = true;
            break;
        }
    }
    let multipliers: Vec<f64> = levels
        .iter()
        .zip(requirements)
        .map(|(&nu, &r)| if r > 0.0 { nu.exp() } else { 0.0 })
        .collect();
    let rates = RateAllocation::new(rates)?;
    let order = ranking.decoding_order();
    let powers_mac = rates_to_powers(gains, &rates, &order)?;
    let powers_bc = mac_to_bc_powers(gains, &powers_mac, &order)?;
    let kkt = kkt_residuals_minpower(gains, &rates, requirements, &multipliers)?;
    let user_rates = rates.user_totals();
    let sum = powers_mac.sum_power();
    Ok(SolverReport {
        schema: REPORT_SCHEMA.to_string(),
        problem: ProblemKind::MinPower,
        converged,
        iterations: trace.len(),
        users,
        carriers,
        user_rates_bps_hz: user_rates.iter().map(|&r| nats_to_bps_hz(r, carriers)).collect(),
        user_rates,
        rates: rates.into_matrix(),
        powers_mac: powers_mac.into_matrix(),
        powers_bc: powers_bc.into_matrix(),
        sum_power: sum,
        budget: None,
        requirements: Some(requirements.to_vec()),
        weights: None,
        objective: sum,
        duals: Duals {
            rate_multipliers: Some(multipliers.clone()),
            ..Duals::default()
        },
        orders: Orders::from_decoding(weighted_decoding_order(&multipliers), ranking.orders.clone()),
        kkt,
        trace,
        price_trace: Vec::new(),
        weight_trace: Vec::new(),
        fdma_certificate: None,
        wall_time_s: Some(started.elapsed().as_secs_f64()),
    })
}

/// A pair of users sharing a carrier whose multipliers contradict their
/// gain ranking there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderViolation {
    pub carrier: usize,
    /// Stronger user, decoded first on the carrier.
    pub stronger: usize,
    pub weaker: usize,
    /// `(μ_stronger − μ_weaker)/max μ`.
    pub magnitude: f64,
}

/// Decoding orders implied by a solution's multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderAnalysis {
    /// Users by nonincreasing multiplier, ties by index.
    pub priority: Vec<usize>,
    pub violations: Vec<OrderViolation>,
    /// `(weaker, stronger)` pairs that every optimal order must respect:
    /// the weaker user precedes in priority.
    pub constraints: Vec<(usize, usize)>,
    /// All priority orders compatible with every carrier, for `M ≤ 8`.
    pub consistent_orders: Option<Vec<Vec<usize>>>,
}

impl OrderAnalysis {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_violation(&self) -> f64 {
        self.violations.iter().map(|v| v.magnitude).fold(0.0, f64::max)
    }
}

/// Checks that sorting `multipliers` nonincreasing agrees with the gain
/// ranking of the users active (rate above [`ACTIVE_RATE`]) on each carrier.
pub fn order_analysis(gains: &ChannelGains, rates: &Matrix, multipliers: &[f64]) -> OrderAnalysis {
    let users = gains.users();
    let mut priority: Vec<usize> = weighted_decoding_order(multipliers);
    priority.reverse();
    let scale = multipliers.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut violations = Vec::new();
    let mut constraints = Vec::new();
    for k in 0..gains.carriers() {
        let active: Vec<usize> = (0..users).filter(|&m| rates[(m, k)] > ACTIVE_RATE).collect();
        for &i in &active {
            for &j in &active {
                if gains.gain(i, k) > gains.gain(j, k) {
                    if !constraints.contains(&(j, i)) {
                        constraints.push((j, i));
                    }
                    let excess = multipliers[i] - multipliers[j];
                    if excess > ORDER_TOL * scale {
                        violations.push(OrderViolation {
                            carrier: k,
                            stronger: i,
                            weaker: j,
                            magnitude: excess / scale,
                        });
                    }
                }
            }
        }
    }
    constraints.sort_unstable();
    let consistent_orders = (users <= 8).then(|| consistent_permutations(users, &constraints));
    OrderAnalysis {
        priority,
        violations,
        constraints,
        consistent_orders,
    }
}

/// Decoding-order analysis of a minimum-power or minimum-rates report,
/// using its composite weights when present and its rate multipliers
/// otherwise.
pub fn extract_decoding_orders(gains: &ChannelGains, report: &SolverReport) -> OrderAnalysis {
    let multipliers = report
        .duals
        .composite_weights
        .clone()
        .or_else(|| report.duals.rate_multipliers.clone())
        .or_else(|| report.weights.clone())
        .unwrap_or_else(|| vec![0.0; gains.users()]);
    order_analysis(gains, &report.rates, &multipliers)
}

fn consistent_permutations(users: usize, constraints: &[(usize, usize)]) -> Vec<Vec<usize>> {
    fn extend(
        prefix: &mut Vec<usize>,
        used: &mut [bool],
        constraints: &[(usize, usize)],
        out: &mut Vec<Vec<usize>>,
    ) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for u in 0..used.len() {
            // `u` may go next once every user required before it is placed.
            if used[u] || constraints.iter().any(|&(a, b)| b == u && !used[a]) {
                continue;
            }
            used[u] = true;
            prefix.push(u);
            extend(prefix, used, constraints, out);
            prefix.pop();
            used[u] = false;
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), &mut vec![false; users], constraints, &mut out);
    out
}
