//! Rate evaluation for the uplink (MAC, successive interference
//! cancellation) and downlink (BC, dirty-paper coding), the uplink–downlink
//! power transforms, and KKT residual evaluators.
//!
//! Order convention: a permutation `π` lists users by position. In the
//! uplink, `π[0]` is decoded first and sees every later user as
//! interference. In the downlink, `π[M-1]` is encoded first and `π[i]` sees
//! the powers of `π[0..i]` as interference. Under this convention the same
//! permutation describes a BC allocation and its dual MAC allocation.
//!
//! All rates are in nats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelGains;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Which side of the uplink–downlink duality an allocation lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Mac,
    Bc,
}

/// Transmit powers `p_{m,k}` tagged with their channel side.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    side: Side,
    powers: Matrix,
}

impl PowerAllocation {
    pub fn new(side: Side, powers: Matrix) -> Result<Self> {
        for m in 0..powers.users() {
            for k in 0..powers.carriers() {
                let p = powers[(m, k)];
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::field(
                        format!("powers[{m}][{k}]"),
                        format!("power must be finite and nonnegative, got {p}"),
                    ));
                }
            }
        }
        Ok(Self { side, powers })
    }

    pub fn zeros(side: Side, users: usize, carriers: usize) -> Self {
        Self {
            side,
            powers: Matrix::zeros(users, carriers),
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn matrix(&self) -> &Matrix {
        &self.powers
    }

    pub fn into_matrix(self) -> Matrix {
        self.powers
    }

    pub fn power(&self, m: usize, k: usize) -> f64 {
        self.powers[(m, k)]
    }

    /// `|p|₁`, the total transmit power.
    pub fn sum_power(&self) -> f64 {
        self.powers.sum()
    }
}

/// Per-carrier rates `R_{m,k}` and per-user totals.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAllocation {
    rates: Matrix,
}

impl RateAllocation {
    pub fn new(rates: Matrix) -> Result<Self> {
        for m in 0..rates.users() {
            for k in 0..rates.carriers() {
                let r = rates[(m, k)];
                if !r.is_finite() || r < 0.0 {
                    return Err(Error::field(
                        format!("rates[{m}][{k}]"),
                        format!("rate must be finite and nonnegative, got {r}"),
                    ));
                }
            }
        }
        Ok(Self { rates })
    }

    pub fn zeros(users: usize, carriers: usize) -> Self {
        Self {
            rates: Matrix::zeros(users, carriers),
        }
    }

    pub(crate) fn from_matrix_unchecked(rates: Matrix) -> Self {
        Self { rates }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rates
    }

    pub fn into_matrix(self) -> Matrix {
        self.rates
    }

    pub fn rate(&self, m: usize, k: usize) -> f64 {
        self.rates[(m, k)]
    }

    /// `R_m = Σ_k R_{m,k}`.
    pub fn user_totals(&self) -> Vec<f64> {
        self.rates.row_sums()
    }
}

/// A global decoding order or one order per carrier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingOrder {
    Global(Vec<usize>),
    PerCarrier(Vec<Vec<usize>>),
}

impl DecodingOrder {
    pub fn identity(users: usize) -> Self {
        DecodingOrder::Global((0..users).collect())
    }

    pub fn for_carrier(&self, k: usize) -> &[usize] {
        match self {
            DecodingOrder::Global(p) => p,
            DecodingOrder::PerCarrier(ps) => &ps[k],
        }
    }

    /// Checks that every permutation is a bijection on `0..users` and that a
    /// per-carrier order covers every carrier.
    pub fn validate(&self, users: usize, carriers: usize) -> Result<()> {
        let perms: Vec<&Vec<usize>> = match self {
            DecodingOrder::Global(p) => vec![p],
            DecodingOrder::PerCarrier(ps) => {
                if ps.len() != carriers {
                    return Err(Error::DimensionMismatch {
                        what: "per-carrier orders vs carriers",
                        expected: carriers,
                        found: ps.len(),
                    });
                }
                ps.iter().collect()
            }
        };
        for p in perms {
            if !is_permutation(p, users) {
                return Err(Error::field("order", format!("{p:?} is not a permutation of 0..{users}")));
            }
        }
        Ok(())
    }
}

pub fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &u in p {
        if u >= n || seen[u] {
            return false;
        }
        seen[u] = true;
    }
    true
}

fn check_shape(gains: &ChannelGains, m: &Matrix, what: &'static str) -> Result<()> {
    if m.users() != gains.users() {
        return Err(Error::DimensionMismatch {
            what,
            expected: gains.users(),
            found: m.users(),
        });
    }
    if m.carriers() != gains.carriers() {
        return Err(Error::DimensionMismatch {
            what,
            expected: gains.carriers(),
            found: m.carriers(),
        });
    }
    Ok(())
}

/// Uplink rates under successive interference cancellation.
pub fn mac_rates(
    gains: &ChannelGains,
    p: &PowerAllocation,
    order: &DecodingOrder,
) -> Result<RateAllocation> {
    check_shape(gains, p.matrix(), "MAC powers")?;
    order.validate(gains.users(), gains.carriers())?;
    let noise = gains.noise_power();
    let mut rates = Matrix::zeros(gains.users(), gains.carriers());
    for k in 0..gains.carriers() {
        // Walk from the last decoded user, accumulating received interference.
        let mut interference = 0.0;
        for &u in order.for_carrier(k).iter().rev() {
            let received = gains.gain(u, k) * p.power(u, k);
            rates[(u, k)] = (received / (noise + interference)).ln_1p();
            interference += received;
        }
    }
    Ok(RateAllocation::from_matrix_unchecked(rates))
}

/// Downlink rates under dirty-paper coding.
pub fn bc_rates(
    gains: &ChannelGains,
    p: &PowerAllocation,
    order: &DecodingOrder,
) -> Result<RateAllocation> {
    check_shape(gains, p.matrix(), "BC powers")?;
    order.validate(gains.users(), gains.carriers())?;
    let noise = gains.noise_power();
    let mut rates = Matrix::zeros(gains.users(), gains.carriers());
    for k in 0..gains.carriers() {
        let mut later_encoded = 0.0;
        for &u in order.for_carrier(k) {
            let h = gains.gain(u, k);
            let own = p.power(u, k);
            rates[(u, k)] = (h * own / (noise + h * later_encoded)).ln_1p();
            later_encoded += own;
        }
    }
    Ok(RateAllocation::from_matrix_unchecked(rates))
}

/// Maps a downlink allocation to the uplink allocation achieving the same
/// per-user rates with the same total power.
pub fn bc_to_mac_powers(
    gains: &ChannelGains,
    p: &PowerAllocation,
    order: &DecodingOrder,
) -> Result<PowerAllocation> {
    check_shape(gains, p.matrix(), "BC powers")?;
    order.validate(gains.users(), gains.carriers())?;
    let noise = gains.noise_power();
    let mut out = Matrix::zeros(gains.users(), gains.carriers());
    for k in 0..gains.carriers() {
        let perm = order.for_carrier(k);
        // BC interference seen by position i: Σ_{j<i} p_BC.
        let mut before: Vec<f64> = Vec::with_capacity(perm.len());
        let mut acc = 0.0;
        for &u in perm {
            before.push(acc);
            acc += p.power(u, k);
        }
        let mut mac_interference = 0.0;
        for (i, &u) in perm.iter().enumerate().rev() {
            let h = gains.gain(u, k);
            let q = p.power(u, k) * (noise + mac_interference) / (noise + h * before[i]);
            out[(u, k)] = q;
            mac_interference += h * q;
        }
    }
    PowerAllocation::new(Side::Mac, out)
}

/// Inverse of [`bc_to_mac_powers`].
pub fn mac_to_bc_powers(
    gains: &ChannelGains,
    p: &PowerAllocation,
    order: &DecodingOrder,
) -> Result<PowerAllocation> {
    check_shape(gains, p.matrix(), "MAC powers")?;
    order.validate(gains.users(), gains.carriers())?;
    let noise = gains.noise_power();
    let mut out = Matrix::zeros(gains.users(), gains.carriers());
    for k in 0..gains.carriers() {
        let perm = order.for_carrier(k);
        // MAC interference seen by position i: Σ_{j>i} h·p_MAC.
        let mut after = vec![0.0; perm.len()];
        let mut acc = 0.0;
        for (i, &u) in perm.iter().enumerate().rev() {
            after[i] = acc;
            acc += gains.gain(u, k) * p.power(u, k);
        }
        let mut bc_before = 0.0;
        for (i, &u) in perm.iter().enumerate() {
            let h = gains.gain(u, k);
            let q = p.power(u, k) * (noise + h * bc_before) / (noise + after[i]);
            out[(u, k)] = q;
            bc_before += q;
        }
    }
    PowerAllocation::new(Side::Bc, out)
}

/// Uplink powers realising the given per-carrier rates under `orders`.
pub fn rates_to_powers(
    gains: &ChannelGains,
    rates: &RateAllocation,
    orders: &DecodingOrder,
) -> Result<PowerAllocation> {
    check_shape(gains, rates.matrix(), "rates")?;
    orders.validate(gains.users(), gains.carriers())?;
    let noise = gains.noise_power();
    let mut out = Matrix::zeros(gains.users(), gains.carriers());
    for k in 0..gains.carriers() {
        let mut later = 0.0f64;
        for &u in orders.for_carrier(k).iter().rev() {
            let r = rates.rate(u, k);
            let h = gains.gain(u, k);
            if r > 0.0 {
                if h <= 0.0 {
                    return Err(Error::ZeroGainRate {
                        user: u,
                        carrier: k,
                        rate: r,
                    });
                }
                out[(u, k)] = noise / h * r.exp_m1() * later.exp();
            }
            later += r;
        }
    }
    PowerAllocation::new(Side::Mac, out)
}

/// Largest-magnitude violations of a set of optimality conditions.
///
/// `stationarity` and `dual_sign` are relative to the multiplier scale of
/// the problem (the power price for the weighted-sum-rate conditions, the
/// user's rate multiplier for the minimum-power conditions).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Gradient mismatch on entries with positive power or rate.
    pub stationarity: f64,
    /// Negative implied nonnegativity multiplier on zero entries.
    pub dual_sign: f64,
    /// Primal constraint violation (power gap or rate shortfall).
    pub primal_gap: f64,
    /// Multiplier-weighted constraint slack.
    pub complementary_slackness: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.dual_sign)
            .max(self.primal_gap)
            .max(self.complementary_slackness)
    }
}

/// Uplink order that maximizes a weighted sum rate: weights nondecreasing
/// along the decoding sequence, so the heaviest user is decoded last. Ties
/// place the lower user index later.
pub fn weighted_decoding_order(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)));
    idx
}

/// Residuals of the weighted-sum-rate optimality conditions for an uplink
/// allocation `p`, weights `weights`, power price `price` and budget.
pub fn kkt_residuals_wsr(
    gains: &ChannelGains,
    p: &PowerAllocation,
    weights: &[f64],
    price: f64,
    budget: f64,
) -> Result<KktResiduals> {
    check_shape(gains, p.matrix(), "MAC powers")?;
    if weights.len() != gains.users() {
        return Err(Error::DimensionMismatch {
            what: "weights vs users",
            expected: gains.users(),
            found: weights.len(),
        });
    }
    let order = weighted_decoding_order(weights);
    let users = gains.users();
    let noise = gains.noise_power();
    // c_s: weight increments along the decoding sequence.
    let increments: Vec<f64> = (0..users)
        .map(|s| {
            let w = weights[order[s]];
            if s == 0 {
                w
            } else {
                w - weights[order[s - 1]]
            }
        })
        .collect();
    let scale = if price > 0.0 { price } else { 1.0 };
    let mut out = KktResiduals::default();
    let mut suffix = vec![0.0; users];
    for k in 0..gains.carriers() {
        let mut acc = noise;
        for s in (0..users).rev() {
            let u = order[s];
            acc += gains.gain(u, k) * p.power(u, k);
            suffix[s] = acc;
        }
        let mut prefix = 0.0;
        for (s, &u) in order.iter().enumerate() {
            prefix += increments[s] / suffix[s];
            let grad = gains.gain(u, k) * prefix;
            if p.power(u, k) > 0.0 {
                out.stationarity = out.stationarity.max((grad - price).abs() / scale);
            } else {
                out.dual_sign = out.dual_sign.max((grad - price).max(0.0) / scale);
            }
        }
    }
    let total = p.sum_power();
    let gap = total - budget;
    out.primal_gap = if budget > 0.0 {
        gap.max(0.0) / budget
    } else {
        gap.max(0.0)
    };
    if price > 0.0 {
        out.complementary_slackness = if budget > 0.0 {
            gap.abs() / budget
        } else {
            gap.abs()
        };
    }
    Ok(out)
}

/// Residuals of the minimum-sum-power optimality conditions, written in
/// rate coordinates with gain-sorted per-carrier decoding.
///
/// `multipliers[m]` is the rate-constraint multiplier of user `m`.
pub fn kkt_residuals_minpower(
    gains: &ChannelGains,
    rates: &RateAllocation,
    requirements: &[f64],
    multipliers: &[f64],
) -> Result<KktResiduals> {
    check_shape(gains, rates.matrix(), "rates")?;
    for (what, v) in [("requirements vs users", requirements), ("multipliers vs users", multipliers)] {
        if v.len() != gains.users() {
            return Err(Error::DimensionMismatch {
                what,
                expected: gains.users(),
                found: v.len(),
            });
        }
    }
    let mut out = KktResiduals::default();
    let noise = gains.noise_power();
    let users = gains.users();
    for k in 0..gains.carriers() {
        let column = gains.carrier(k);
        let mut order: Vec<usize> = (0..users).collect();
        order.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then(a.cmp(&b)));
        // Suffix rate sums along the decoding sequence.
        let mut suffix = vec![0.0; users + 1];
        for s in (0..users).rev() {
            suffix[s] = suffix[s + 1] + rates.rate(order[s], k);
        }
        // Marginal power of each rank: Σ_{s≤r} c_s·exp(Σ_{n≥s} R).
        let mut marginal = 0.0;
        let mut prev_inv = 0.0;
        for (r, &u) in order.iter().enumerate() {
            let h = column[u];
            if h <= 0.0 {
                if rates.rate(u, k) > 0.0 {
                    out.stationarity = f64::INFINITY;
                }
                continue;
            }
            let inv = noise / h;
            marginal += (inv - prev_inv) * suffix[r].exp();
            prev_inv = inv;
            let mu = multipliers[u];
            let scale = if mu > 0.0 { mu } else { 1.0 };
            if rates.rate(u, k) > 0.0 {
                out.stationarity = out.stationarity.max((marginal - mu).abs() / scale);
            } else {
                out.dual_sign = out.dual_sign.max((mu - marginal).max(0.0) / scale);
            }
        }
    }
    for (m, total) in rates.user_totals().into_iter().enumerate() {
        let slack = total - requirements[m];
        out.primal_gap = out.primal_gap.max((-slack).max(0.0));
        let mu = multipliers[m].max(0.0);
        out.complementary_slackness = out
            .complementary_slackness
            .max(mu * slack.abs() / (1.0 + mu));
    }
    Ok(out)
}

/// On-disk allocation document: a power or rate matrix with its side and
/// optional decoding order(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationFile {
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powers: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<DecodingOrder>,
}

impl AllocationFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: AllocationFile = serde_json::from_str(text).map_err(Error::from_json)?;
        if file.powers.is_none() && file.rates.is_none() {
            return Err(Error::field("powers", "allocation needs `powers` or `rates`"));
        }
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("allocation serializes") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}
