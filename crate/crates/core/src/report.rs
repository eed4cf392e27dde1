//! The solver output document shared by every problem.
//!
//! Reports serialize to pretty-printed JSON. User indices inside `orders`
//! are written one-based, matching the CLI's display convention; all other
//! vectors are positional.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::capacity::KktResiduals;
use crate::matrix::Matrix;
use crate::wsr::Certificate;

/// Schema tag written into every report.
pub const REPORT_SCHEMA: &str = "ofdm-alloc.report/1";

/// Converts a per-user total rate in nats (summed over `carriers`) to
/// spectral efficiency in bits/s/Hz averaged over the carriers.
pub fn nats_to_bps_hz(nats: f64, carriers: usize) -> f64 {
    nats / (carriers as f64 * LN_2)
}

/// Inverse of [`nats_to_bps_hz`].
pub fn bps_hz_to_nats(bits: f64, carriers: usize) -> f64 {
    bits * carriers as f64 * LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    WeightedSumRate,
    MinPower,
    MinRatesWeights,
    MinRatesWaterfill,
}

/// Lagrange multipliers attached to a solution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    /// Multiplier of the sum-power constraint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_price: Option<f64>,
    /// Multipliers of the per-user rate constraints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_multipliers: Option<Vec<f64>>,
    /// Weights plus rate multipliers: the rate part of the supporting
    /// hyperplane normal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite_weights: Option<Vec<f64>>,
}

/// Decoding orders of a solution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Orders {
    /// Uplink successive-cancellation sequence; the first entry is decoded
    /// first. Also the downlink order in the convention of `bc_rates`.
    #[serde(with = "one_based")]
    pub decoding: Vec<usize>,
    /// Users by nonincreasing multiplier (the reverse of `decoding`).
    #[serde(with = "one_based")]
    pub priority: Vec<usize>,
    /// Gain-sorted per-carrier decoding sequences.
    #[serde(default, with = "one_based_nested", skip_serializing_if = "Vec::is_empty")]
    pub per_carrier: Vec<Vec<usize>>,
}

impl Orders {
    pub fn from_decoding(decoding: Vec<usize>, per_carrier: Vec<Vec<usize>>) -> Self {
        let priority = decoding.iter().rev().copied().collect();
        Self {
            decoding,
            priority,
            per_carrier,
        }
    }

    /// `2>3>4>1`-style rendering of the priority order, one-based.
    pub fn priority_label(&self) -> String {
        self.priority
            .iter()
            .map(|u| (u + 1).to_string())
            .collect::<Vec<_>>()
            .join(">")
    }
}

/// One outer iteration of a power-price search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub price: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub schema: String,
    pub problem: ProblemKind,
    pub converged: bool,
    pub iterations: usize,
    pub users: usize,
    pub carriers: usize,
    /// Per-carrier rates in nats.
    pub rates: Matrix,
    /// Per-user rates in nats, summed over carriers.
    pub user_rates: Vec<f64>,
    /// Per-user spectral efficiency in bits/s/Hz.
    pub user_rates_bps_hz: Vec<f64>,
    pub powers_mac: Matrix,
    pub powers_bc: Matrix,
    pub sum_power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requirements: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Weighted sum rate for rate problems, sum power for the power problem.
    pub objective: f64,
    pub duals: Duals,
    pub orders: Orders,
    pub kkt: KktResiduals,
    /// One entry per iteration: sum power per sweep (minimum power), weighted
    /// sum rate per sweep (weight raising), or power per price step.
    pub trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub price_trace: Vec<PricePoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weight_trace: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fdma_certificate: Option<Certificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl SolverReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Trace rows as CSV (`iteration,value`, plus `price` for price searches).
    pub fn trace_csv(&self) -> String {
        let mut out = String::new();
        if self.price_trace.is_empty() {
            out.push_str("iteration,value\n");
            for (i, v) in self.trace.iter().enumerate() {
                out.push_str(&format!("{},{}\n", i + 1, v));
            }
        } else {
            out.push_str("iteration,price,power\n");
            for (i, p) in self.price_trace.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", i + 1, p.price, p.power));
            }
        }
        out
    }
}

mod one_based {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|u| u + 1))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        v.into_iter()
            .map(|u| u.checked_sub(1).ok_or_else(|| serde::de::Error::custom("user index 0")))
            .collect()
    }
}

mod one_based_nested {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<usize>], s: S) -> Result<S::Ok, S::Error> {
        let shifted: Vec<Vec<usize>> = v.iter().map(|p| p.iter().map(|u| u + 1).collect()).collect();
        shifted.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<usize>>, D::Error> {
        let v = Vec::<Vec<usize>>::deserialize(d)?;
        v.into_iter()
            .map(|p| {
                p.into_iter()
                    .map(|u| u.checked_sub(1).ok_or_else(|| serde::de::Error::custom("user index 0")))
                    .collect()
            })
            .collect()
    }
}
