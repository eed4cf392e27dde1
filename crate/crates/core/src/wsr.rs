//! Weighted sum rate maximization under a sum-power budget.
//!
//! The solution is built directly in the downlink. For a power price `λ̃`
//! every carrier is described by the marginal utilities
//! `u_m(z) = μ_m/(σ²/h_{m,k} + z) − λ̃`; the upper envelope of these curves
//! over `[0, z_max]` tells which user owns each slice of the carrier's power,
//! and integrating `1/(σ²/h + z)` over a user's slices gives its rate. The
//! price is found by bisection on the total power, which is piecewise linear
//! in `1/λ̃`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::capacity::{
    bc_rates, bc_to_mac_powers, kkt_residuals_wsr, weighted_decoding_order, DecodingOrder,
    PowerAllocation, RateAllocation, Side,
};
use crate::channel::ChannelGains;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::report::{nats_to_bps_hz, Duals, Orders, PricePoint, ProblemKind, SolverReport, REPORT_SCHEMA};

/// Default relative tolerance on the sum power for the price bisection.
pub const DEFAULT_PRICE_TOL: f64 = 1e-10;
const MAX_BISECTION_STEPS: usize = 200;
const MAX_BRACKET_DOUBLINGS: usize = 2100;

/// Nonnegative user priorities with at least one positive entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::field("weights", "empty weight vector"));
        }
        if let Some((m, w)) = values
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::field(
                format!("weights[{m}]"),
                format!("weight must be finite and nonnegative, got {w}"),
            ));
        }
        if values.iter().all(|&w| w == 0.0) {
            return Err(Error::field("weights", "at least one weight must be positive"));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// `u(z) = μ/(σ²/h + z) − λ̃`; a zero gain never wins and yields `−λ̃`.
pub fn marginal_utility(weight: f64, gain: f64, noise: f64, price: f64, z: f64) -> f64 {
    if gain <= 0.0 {
        return -price;
    }
    weight / (noise / gain + z) - price
}

/// Total downlink power `P(λ̃) = Σ_k [max_m (μ_m/λ̃ − σ²/h_{m,k})]⁺`.
pub fn total_power_at_price(gains: &ChannelGains, weights: &[f64], price: f64) -> f64 {
    if price.is_infinite() {
        return 0.0;
    }
    power_at_level(gains, weights, 1.0 / price)
}

/// Same as [`total_power_at_price`] in terms of the inverse price `t = 1/λ̃`.
fn power_at_level(gains: &ChannelGains, weights: &[f64], t: f64) -> f64 {
    (0..gains.carriers())
        .map(|k| carrier_level(gains, weights, t, k))
        .sum()
}

fn carrier_level(gains: &ChannelGains, weights: &[f64], t: f64, k: usize) -> f64 {
    let mut best = 0.0f64;
    for (m, &w) in weights.iter().enumerate() {
        let h = gains.gain(m, k);
        if h > 0.0 && w > 0.0 {
            best = best.max(w * t - gains.noise_power() / h);
        }
    }
    best
}

/// Outcome of a bisection on the inverse price.
#[derive(Debug, Clone)]
struct LevelSearch {
    level: f64,
    history: Vec<PricePoint>,
}

/// Finds `t` with `power(t) = budget` for a nondecreasing, piecewise linear,
/// convex `power`. `start` must satisfy `power(start) ≤ budget`.
fn search_level(
    power: impl Fn(f64) -> f64,
    linear_piece: impl Fn(f64) -> Option<f64>,
    start: f64,
    budget: f64,
    tol: f64,
) -> Result<LevelSearch> {
    let mut history = Vec::new();
    let mut lo = start;
    let mut hi = start;
    let mut doublings = 0;
    loop {
        let p = power(hi);
        if p >= budget {
            break;
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
            return Err(Error::field(
                "weights",
                "no user with positive weight can absorb power (all such gains are zero)",
            ));
        }
    }
    let mut best = hi;
    let mut best_err = (power(hi) - budget).abs();
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let p = power(mid);
        history.push(PricePoint {
            price: 1.0 / mid,
            power: p,
        });
        let err = (p - budget).abs();
        if err < best_err {
            best = mid;
            best_err = err;
        }
        if err <= tol * budget || mid <= lo || mid >= hi {
            break;
        }
        if p > budget {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // The power is linear between breakpoints; solve the piece exactly.
    if let Some(exact) = linear_piece(best) {
        if exact.is_finite() && exact > 0.0 {
            let err = (power(exact) - budget).abs();
            if err < best_err {
                best = exact;
            }
        }
    }
    Ok(LevelSearch {
        level: best,
        history,
    })
}

fn initial_level(gains: &ChannelGains, weights: &[f64]) -> f64 {
    let w_max = weights.iter().copied().fold(0.0, f64::max);
    let h_max = gains.matrix().iter().copied().fold(0.0, f64::max);
    if w_max <= 0.0 || h_max <= 0.0 {
        return 1.0;
    }
    gains.noise_power() / (w_max * h_max)
}

/// The `t` solving `Σ_k (μ_{w_k}·t − a_{w_k,k}) = budget` over the carriers
/// that are active at `t`, with `w_k` the level-maximizing user.
fn linear_level(gains: &ChannelGains, weights: &[f64], t: f64, budget: f64) -> Option<f64> {
    let mut slope = 0.0;
    let mut offset = 0.0;
    for k in 0..gains.carriers() {
        let mut best: Option<(f64, usize)> = None;
        for (m, &w) in weights.iter().enumerate() {
            let h = gains.gain(m, k);
            if h > 0.0 && w > 0.0 {
                let v = w * t - gains.noise_power() / h;
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, m));
                }
            }
        }
        if let Some((v, m)) = best {
            if v > 0.0 {
                slope += weights[m];
                offset += gains.noise_power() / gains.gain(m, k);
            }
        }
    }
    (slope > 0.0).then(|| (budget + offset) / slope)
}

fn check_budget(budget: f64) -> Result<()> {
    if budget.is_finite() && budget > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveBudget(budget))
    }
}

fn check_weights(gains: &ChannelGains, weights: &[f64]) -> Result<()> {
    if weights.len() != gains.users() {
        return Err(Error::DimensionMismatch {
            what: "weights vs users",
            expected: gains.users(),
            found: weights.len(),
        });
    }
    Weights::new(weights.to_vec()).map(|_| ())
}

/// Power price `λ̃` meeting the budget to `tol` relative accuracy.
pub fn solve_power_price(gains: &ChannelGains, weights: &[f64], budget: f64, tol: f64) -> Result<f64> {
    check_budget(budget)?;
    check_weights(gains, weights)?;
    Ok(1.0 / price_search(gains, weights, budget, tol)?.level)
}

fn price_search(gains: &ChannelGains, weights: &[f64], budget: f64, tol: f64) -> Result<LevelSearch> {
    search_level(
        |t| power_at_level(gains, weights, t),
        |t| linear_level(gains, weights, t, budget),
        initial_level(gains, weights),
        budget,
        tol,
    )
}

/// Upper envelope of the marginal utilities on one carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CarrierSegmentation {
    pub carrier: usize,
    /// `z_max`, the carrier's total downlink power.
    pub water_level: f64,
    /// `0 = z_0 < z_1 < … < z_J = z_max`.
    pub breakpoints: Vec<f64>,
    /// Owner of `[z_{j}, z_{j+1}]`.
    pub winners: Vec<usize>,
}

impl CarrierSegmentation {
    pub fn is_empty(&self) -> bool {
        self.winners.is_empty()
    }

    /// Power owned by each user.
    pub fn user_powers(&self, users: usize) -> Vec<f64> {
        let mut out = vec![0.0; users];
        for (j, &w) in self.winners.iter().enumerate() {
            out[w] += self.breakpoints[j + 1] - self.breakpoints[j];
        }
        out
    }
}

/// Segments carrier `k` at power price `price`.
pub fn segment_carrier(gains: &ChannelGains, weights: &[f64], price: f64, k: usize) -> CarrierSegmentation {
    segment_at_level(gains, weights, 1.0 / price, k)
}

fn segment_at_level(gains: &ChannelGains, weights: &[f64], t: f64, k: usize) -> CarrierSegmentation {
    let offsets: Vec<f64> = (0..gains.users()).map(|m| gains.noise_to_gain(m, k)).collect();
    let contenders: Vec<usize> = (0..gains.users())
        .filter(|&m| weights[m] > 0.0 && offsets[m].is_finite())
        .collect();
    let water_level = carrier_level(gains, weights, t, k);
    let mut seg = CarrierSegmentation {
        carrier: k,
        water_level,
        breakpoints: vec![0.0],
        winners: Vec::new(),
    };
    if water_level <= 0.0 || contenders.is_empty() {
        seg.water_level = 0.0;
        return seg;
    }
    // Larger utility at z = 0 wins; equal utility goes to the larger weight
    // (it dominates just above 0), then to the lower index.
    let mut current = contenders[0];
    for &m in &contenders[1..] {
        let lhs = weights[m] * offsets[current];
        let rhs = weights[current] * offsets[m];
        if lhs > rhs || (lhs == rhs && weights[m] > weights[current]) {
            current = m;
        }
    }
    let mut z = 0.0;
    loop {
        // Only heavier users on weaker channels can overtake the current owner.
        let mut next: Option<(f64, usize)> = None;
        for &j in &contenders {
            if weights[j] <= weights[current] || offsets[j] <= offsets[current] {
                continue;
            }
            let crossing = (weights[current] * offsets[j] - weights[j] * offsets[current])
                / (weights[j] - weights[current]);
            if crossing <= z {
                continue;
            }
            let better = match next {
                None => true,
                Some((c, n)) => crossing < c || (crossing == c && weights[j] > weights[n]),
            };
            if better {
                next = Some((crossing, j));
            }
        }
        match next {
            Some((crossing, j)) if crossing < water_level => {
                seg.breakpoints.push(crossing);
                seg.winners.push(current);
                current = j;
                z = crossing;
            }
            _ => {
                seg.breakpoints.push(water_level);
                seg.winners.push(current);
                break;
            }
        }
    }
    seg
}

/// Downlink rates and powers from the segmentations of all carriers; each
/// slice `[z_lo, z_hi]` owned by user `m` contributes
/// `log((σ²/h + z_hi)/(σ²/h + z_lo))`.
pub fn rates_from_segments(
    segments: &[CarrierSegmentation],
    gains: &ChannelGains,
) -> (RateAllocation, PowerAllocation) {
    let mut rates = Matrix::zeros(gains.users(), gains.carriers());
    let mut powers = Matrix::zeros(gains.users(), gains.carriers());
    for seg in segments {
        let k = seg.carrier;
        for (j, &m) in seg.winners.iter().enumerate() {
            let (lo, hi) = (seg.breakpoints[j], seg.breakpoints[j + 1]);
            let a = gains.noise_to_gain(m, k);
            rates[(m, k)] += ((hi - lo) / (a + lo)).ln_1p();
            powers[(m, k)] += hi - lo;
        }
    }
    (
        RateAllocation::from_matrix_unchecked(rates),
        PowerAllocation::new(Side::Bc, powers).expect("segment lengths are nonnegative"),
    )
}

/// Result of the weighted-sum-rate core without report assembly.
#[derive(Debug, Clone)]
pub(crate) struct WsrPoint {
    pub price: f64,
    pub rates: RateAllocation,
    pub powers_bc: PowerAllocation,
    pub history: Vec<PricePoint>,
}

impl WsrPoint {
    pub fn user_rates(&self) -> Vec<f64> {
        self.rates.user_totals()
    }
}

pub(crate) fn wsr_point(gains: &ChannelGains, weights: &[f64], budget: f64, tol: f64) -> Result<WsrPoint> {
    check_budget(budget)?;
    check_weights(gains, weights)?;
    let search = price_search(gains, weights, budget, tol)?;
    let segments: Vec<CarrierSegmentation> = (0..gains.carriers())
        .map(|k| segment_at_level(gains, weights, search.level, k))
        .collect();
    let (rates, powers_bc) = rates_from_segments(&segments, gains);
    Ok(WsrPoint {
        price: 1.0 / search.level,
        rates,
        powers_bc,
        history: search.history,
    })
}

/// Per-user rates of the weighted-sum-rate optimum.
pub fn wsr_user_rates(gains: &ChannelGains, weights: &[f64], budget: f64) -> Result<Vec<f64>> {
    Ok(wsr_point(gains, weights, budget, DEFAULT_PRICE_TOL)?.user_rates())
}

/// Maximizes `Σ μ_m R_m` subject to the sum-power budget.
pub fn solve_wsr(gains: &ChannelGains, weights: &[f64], budget: f64, tol: f64) -> Result<SolverReport> {
    let started = Instant::now();
    let point = wsr_point(gains, weights, budget, tol)?;
    let mut report = assemble_report(gains, weights, budget, &point, ProblemKind::WeightedSumRate)?;
    report.fdma_certificate = fdma_certificate_for(gains, weights, &point.powers_bc);
    report.wall_time_s = Some(started.elapsed().as_secs_f64());
    Ok(report)
}

pub(crate) fn assemble_report(
    gains: &ChannelGains,
    weights: &[f64],
    budget: f64,
    point: &WsrPoint,
    problem: ProblemKind,
) -> Result<SolverReport> {
    let decoding = weighted_decoding_order(weights);
    let order = DecodingOrder::Global(decoding.clone());
    debug_assert!({
        let direct = bc_rates(gains, &point.powers_bc, &order)?;
        direct.matrix().max_abs_diff(point.rates.matrix()) <= 1e-9
    });
    let powers_mac = bc_to_mac_powers(gains, &point.powers_bc, &order)?;
    let kkt = kkt_residuals_wsr(gains, &powers_mac, weights, point.price, budget)?;
    let user_rates = point.user_rates();
    let objective = weights.iter().zip(&user_rates).map(|(w, r)| w * r).sum();
    let carriers = gains.carriers();
    Ok(SolverReport {
        schema: REPORT_SCHEMA.to_string(),
        problem,
        converged: true,
        iterations: point.history.len(),
        users: gains.users(),
        carriers,
        rates: point.rates.matrix().clone(),
        user_rates_bps_hz: user_rates.iter().map(|&r| nats_to_bps_hz(r, carriers)).collect(),
        user_rates,
        sum_power: point.powers_bc.sum_power(),
        powers_mac: powers_mac.into_matrix(),
        powers_bc: point.powers_bc.matrix().clone(),
        budget: Some(budget),
        requirements: None,
        weights: Some(weights.to_vec()),
        objective,
        duals: Duals {
            power_price: Some(point.price),
            ..Duals::default()
        },
        orders: Orders::from_decoding(decoding, Vec::new()),
        kkt,
        trace: point.history.iter().map(|p| p.power).collect(),
        price_trace: point.history.clone(),
        weight_trace: Vec::new(),
        fdma_certificate: None,
        wall_time_s: None,
    })
}

/// Certificate for an exclusive allocation, or `None` if some carrier is
/// shared.
fn fdma_certificate_for(gains: &ChannelGains, weights: &[f64], p: &PowerAllocation) -> Option<Certificate> {
    let winners: Vec<usize> = (0..gains.carriers())
        .map(|k| {
            (0..gains.users())
                .find(|&m| p.power(m, k) > 0.0)
                .unwrap_or_else(|| best_weighted_gain(gains, weights, k))
        })
        .collect();
    check_fdma_optimality(gains, weights, &winners, p).ok()
}

fn best_weighted_gain(gains: &ChannelGains, weights: &[f64], k: usize) -> usize {
    let mut best = 0;
    for m in 1..gains.users() {
        if weights[m] * gains.gain(m, k) > weights[best] * gains.gain(best, k) {
            best = m;
        }
    }
    best
}

/// Outcome of an exclusive-assignment optimality test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// The inequality holds strictly (beyond the boundary band).
    pub holds: bool,
    /// `|lhs − rhs|` lies within the relative 1e-12 band.
    pub boundary: bool,
    pub lhs: f64,
    /// `None` when there is no competing user.
    pub rhs: Option<f64>,
    /// `lhs − rhs`; `None` when there is no competing user.
    pub margin: Option<f64>,
}

const BOUNDARY_BAND: f64 = 1e-12;

/// Tests whether giving carrier `k` exclusively to `winners[k]` with powers
/// `p` is optimal for the weights. Compares the realised power price with
/// the largest marginal gain any other user could obtain.
pub fn check_fdma_optimality(
    gains: &ChannelGains,
    weights: &[f64],
    winners: &[usize],
    p: &PowerAllocation,
) -> Result<Certificate> {
    check_weights(gains, weights)?;
    if winners.len() != gains.carriers() {
        return Err(Error::DimensionMismatch {
            what: "carrier winners vs carriers",
            expected: gains.carriers(),
            found: winners.len(),
        });
    }
    if let Some(&w) = winners.iter().find(|&&w| w >= gains.users()) {
        return Err(Error::field("winners", format!("user {w} out of range")));
    }
    let noise = gains.noise_power();
    let mut lhs = f64::NEG_INFINITY;
    let mut rhs: Option<f64> = None;
    for (k, &w) in winners.iter().enumerate() {
        if (0..gains.users()).any(|m| m != w && p.power(m, k) > 0.0) {
            return Err(Error::NotExclusive { carrier: k });
        }
        let received = noise + p.power(w, k) * gains.gain(w, k);
        lhs = lhs.max(weights[w] * gains.gain(w, k) / received);
        for m in (0..gains.users()).filter(|&m| m != w) {
            let h = gains.gain(m, k);
            let value = (weights[m] - weights[w]).max(0.0) * h / noise
                + weights[w].min(weights[m]) * h / received;
            rhs = Some(rhs.map_or(value, |r: f64| r.max(value)));
        }
    }
    Ok(match rhs {
        None => Certificate {
            holds: true,
            boundary: false,
            lhs,
            rhs: None,
            margin: None,
        },
        Some(rhs) => {
            let margin = lhs - rhs;
            let band = BOUNDARY_BAND * lhs.abs().max(rhs.abs());
            Certificate {
                holds: margin > band,
                boundary: margin.abs() <= band,
                lhs,
                rhs: Some(rhs),
                margin: Some(margin),
            }
        }
    })
}

/// Single-user special case of [`check_fdma_optimality`].
pub fn check_single_user_optimality(
    gains: &ChannelGains,
    weights: &[f64],
    user: usize,
    p: &PowerAllocation,
) -> Result<Certificate> {
    check_fdma_optimality(gains, weights, &vec![user; gains.carriers()], p)
}

/// Exclusive assignment by largest weighted gain `μ_m·h_{m,k}` followed by
/// weighted water-filling `p_k = [μ_{m_k}/λ̃ − σ²/h_{m_k,k}]⁺`. Optimal
/// whenever the exclusive-assignment certificate holds.
pub fn fdma_weighted_waterfill(
    gains: &ChannelGains,
    weights: &[f64],
    budget: f64,
) -> Result<(Vec<usize>, PowerAllocation)> {
    check_budget(budget)?;
    check_weights(gains, weights)?;
    let winners: Vec<usize> = (0..gains.carriers())
        .map(|k| best_weighted_gain(gains, weights, k))
        .collect();
    let mask = |m: usize, k: usize| winners[k] == m;
    let power = |t: f64| -> f64 {
        (0..gains.carriers())
            .map(|k| {
                let w = winners[k];
                let h = gains.gain(w, k);
                if h > 0.0 && mask(w, k) {
                    (weights[w] * t - gains.noise_power() / h).max(0.0)
                } else {
                    0.0
                }
            })
            .sum()
    };
    let piece = |t: f64| -> Option<f64> {
        let (mut slope, mut offset) = (0.0, 0.0);
        for (k, &w) in winners.iter().enumerate() {
            let h = gains.gain(w, k);
            if h > 0.0 && weights[w] * t - gains.noise_power() / h > 0.0 {
                slope += weights[w];
                offset += gains.noise_power() / h;
            }
        }
        (slope > 0.0).then(|| (budget + offset) / slope)
    };
    let search = search_level(power, piece, initial_level(gains, weights), budget, DEFAULT_PRICE_TOL)?;
    let mut powers = Matrix::zeros(gains.users(), gains.carriers());
    for (k, &w) in winners.iter().enumerate() {
        let h = gains.gain(w, k);
        if h > 0.0 {
            powers[(w, k)] = (weights[w] * search.level - gains.noise_power() / h).max(0.0);
        }
    }
    Ok((winners, PowerAllocation::new(Side::Mac, powers)?))
}
