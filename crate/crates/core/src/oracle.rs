//! Brute-force reference solvers for small instances.
//!
//! These routines search grids directly in the original problem variables
//! and evaluate powers and rates from their definitions, so they share no
//! logic with the solvers they are used to check. Each grid is refined by
//! repeatedly zooming into a box around the best point found.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::capacity::{mac_rates, DecodingOrder, PowerAllocation, Side};
use crate::channel::ChannelGains;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Largest number of grid dimensions accepted.
pub const MAX_GRID_DIMS: usize = 6;

/// Points per dimension and number of zoom refinements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub resolution: usize,
    pub zoom_levels: usize,
}

impl GridSpec {
    pub fn new(resolution: usize, zoom_levels: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::field("resolution", "at least two points per dimension"));
        }
        Ok(Self {
            resolution,
            zoom_levels,
        })
    }

    /// Same zoom depth, roughly twice the points per dimension.
    pub fn doubled(self) -> Self {
        Self {
            resolution: 2 * self.resolution - 1,
            ..self
        }
    }
}

/// Best grid point of a minimization.
#[derive(Debug, Clone)]
struct GridMin {
    x: Vec<f64>,
    value: f64,
    gap: f64,
}

/// Minimizes `f` over a box; `f` returns `+∞` outside its domain. Ties keep
/// the lowest flat index so results do not depend on evaluation order.
fn zoom_minimize<F>(bounds: &[(f64, f64)], grid: GridSpec, f: &F) -> GridMin
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dims = bounds.len();
    if dims == 0 {
        return GridMin {
            x: Vec::new(),
            value: f(&[]),
            gap: 0.0,
        };
    }
    let res = grid.resolution;
    let mut lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let mut hi: Vec<f64> = bounds.iter().map(|b| b.1).collect();
    let total = res.pow(dims as u32);
    let mut best = GridMin {
        x: lo.clone(),
        value: f64::INFINITY,
        gap: f64::INFINITY,
    };
    // A best point on the edge of the current box (but inside the bounds)
    // re-centres the box without shrinking it.
    let mut zooms = 0;
    let mut moves = 0;
    while zooms <= grid.zoom_levels && moves <= 4 * grid.zoom_levels.max(1) {
        let step: Vec<f64> = (0..dims).map(|d| (hi[d] - lo[d]) / (res - 1) as f64).collect();
        let point = |mut idx: usize| -> Vec<f64> {
            let mut x = vec![0.0; dims];
            for d in 0..dims {
                x[d] = if idx % res == res - 1 { hi[d] } else { lo[d] + (idx % res) as f64 * step[d] };
                idx /= res;
            }
            x
        };
        let (value, idx) = (0..total)
            .into_par_iter()
            .map(|i| (f(&point(i)), i))
            .reduce(
                || (f64::INFINITY, usize::MAX),
                |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        if idx == usize::MAX {
            break;
        }
        let x = point(idx);
        // Sum over coordinates of the rise to the worse grid neighbour.
        let mut gap = 0.0;
        for d in 0..dims {
            let mut rise = 0.0f64;
            for sign in [-1.0, 1.0] {
                let mut y = x.clone();
                y[d] += sign * step[d];
                if y[d] >= bounds[d].0 && y[d] <= bounds[d].1 {
                    let v = f(&y);
                    if v.is_finite() {
                        rise = rise.max(v - value);
                    }
                }
            }
            gap += rise;
        }
        let improved = value < best.value;
        if value <= best.value {
            best = GridMin { x: x.clone(), value, gap };
        }
        if (0..dims).all(|d| step[d] <= 1e-15 * (bounds[d].1 - bounds[d].0).max(f64::MIN_POSITIVE)) {
            break;
        }
        // Ties at rounding level are not a reason to move.
        let on_edge = improved && (0..dims).any(|d| {
            (x[d] == lo[d] && lo[d] > bounds[d].0) || (x[d] == hi[d] && hi[d] < bounds[d].1)
        });
        let half: Vec<f64> = if on_edge {
            moves += 1;
            (0..dims).map(|d| 0.5 * (hi[d] - lo[d])).collect()
        } else {
            zooms += 1;
            step.iter().map(|s| 2.0 * s).collect()
        };
        for d in 0..dims {
            lo[d] = (x[d] - half[d]).max(bounds[d].0);
            hi[d] = (x[d] + half[d]).min(bounds[d].1);
        }
    }
    best
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for u in 0..n {
            if !prefix.contains(&u) {
                prefix.push(u);
                go(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), n, &mut out);
    out
}

/// Orders searched on each carrier: all of them for up to three users,
/// otherwise the gain-sorted one.
fn candidate_orders(gains: &ChannelGains, k: usize) -> Vec<Vec<usize>> {
    let users = gains.users();
    if users <= 3 {
        permutations(users)
    } else {
        let mut order: Vec<usize> = (0..users).collect();
        order.sort_by(|&a, &b| gains.gain(b, k).total_cmp(&gains.gain(a, k)));
        vec![order]
    }
}

/// Minimum uplink power delivering per-user rates `rates` on carrier `k`:
/// user `u` decoded against the users after it needs
/// `(e^{r_u} − 1)(σ² + I_u)/h_u` with `I_u` their received power.
fn carrier_power(gains: &ChannelGains, k: usize, rates: &[f64], orders: &[Vec<usize>]) -> f64 {
    let noise = gains.noise_power();
    orders
        .iter()
        .map(|order| {
            let mut received = 0.0;
            let mut total = 0.0;
            for &u in order.iter().rev() {
                let r = rates[u];
                if r <= 0.0 {
                    continue;
                }
                let h = gains.gain(u, k);
                if h <= 0.0 {
                    return f64::INFINITY;
                }
                let p = ((r).exp() - 1.0) * (noise + received) / h;
                total += p;
                received += h * p;
            }
            total
        })
        .fold(f64::INFINITY, f64::min)
}

/// Result of [`grid_minpower`].
#[derive(Debug, Clone)]
pub struct GridMinPower {
    pub power: f64,
    /// Per-carrier rates at the best grid point.
    pub rates: Matrix,
    /// Local estimate of the distance to the true minimum.
    pub gap: f64,
}

/// Searches per-user splits of each requirement across the carriers; the
/// last carrier takes the remainder.
pub fn grid_minpower(gains: &ChannelGains, requirements: &[f64], grid: GridSpec) -> Result<GridMinPower> {
    let users = gains.users();
    let carriers = gains.carriers();
    if requirements.len() != users {
        return Err(Error::DimensionMismatch {
            what: "rate requirements vs users",
            expected: users,
            found: requirements.len(),
        });
    }
    let active: Vec<usize> = (0..users).filter(|&m| requirements[m] > 0.0).collect();
    let dims = active.len() * (carriers - 1);
    if dims > MAX_GRID_DIMS {
        return Err(Error::GridTooLarge {
            dims,
            max: MAX_GRID_DIMS,
        });
    }
    let orders: Vec<Vec<Vec<usize>>> = (0..carriers).map(|k| candidate_orders(gains, k)).collect();
    let split = |x: &[f64]| -> Option<Matrix> {
        let mut rates = Matrix::zeros(users, carriers);
        for (i, &m) in active.iter().enumerate() {
            let part = &x[i * (carriers - 1)..(i + 1) * (carriers - 1)];
            let used: f64 = part.iter().sum();
            let rest = requirements[m] - used;
            if rest < -1e-12 * requirements[m] {
                return None;
            }
            rates.row_mut(m)[..carriers - 1].copy_from_slice(part);
            rates[(m, carriers - 1)] = rest.max(0.0);
        }
        Some(rates)
    };
    let objective = |x: &[f64]| -> f64 {
        let Some(rates) = split(x) else {
            return f64::INFINITY;
        };
        (0..carriers)
            .map(|k| carrier_power(gains, k, &rates.column(k), &orders[k]))
            .sum()
    };
    let bounds: Vec<(f64, f64)> = active
        .iter()
        .flat_map(|&m| std::iter::repeat_n((0.0, requirements[m]), carriers - 1))
        .collect();
    let best = zoom_minimize(&bounds, grid, &objective);
    Ok(GridMinPower {
        power: best.value,
        rates: split(&best.x).unwrap_or_else(|| Matrix::zeros(users, carriers)),
        gap: best.gap,
    })
}

/// Result of [`grid_wsr`].
#[derive(Debug, Clone)]
pub struct GridWsr {
    pub objective: f64,
    /// Downlink powers at the best grid point.
    pub powers_bc: Matrix,
    pub gap: f64,
}

/// Best weighted rate on carrier `k` with downlink power `budget`, over a
/// grid of power splits and all candidate encoding orders.
fn carrier_value(gains: &ChannelGains, weights: &[f64], k: usize, budget: f64, grid: GridSpec) -> (f64, Vec<f64>, f64) {
    let users = gains.users();
    let noise = gains.noise_power();
    let orders = candidate_orders(gains, k);
    let shares = |x: &[f64]| -> Option<Vec<f64>> {
        let used: f64 = x.iter().sum();
        if used > 1.0 + 1e-12 {
            return None;
        }
        let mut s = x.to_vec();
        s.push((1.0 - used).max(0.0));
        Some(s)
    };
    // Downlink: the user at position i sees the power of positions before it.
    let value = |x: &[f64]| -> f64 {
        let Some(s) = shares(x) else {
            return f64::INFINITY;
        };
        let best = orders
            .iter()
            .map(|order| {
                let mut before = 0.0;
                let mut v = 0.0;
                for &u in order {
                    let p = s[u] * budget;
                    let h = gains.gain(u, k);
                    v += weights[u] * (1.0 + h * p / (noise + h * before)).ln();
                    before += p;
                }
                v
            })
            .fold(f64::NEG_INFINITY, f64::max);
        -best
    };
    let bounds = vec![(0.0, 1.0); users - 1];
    let best = zoom_minimize(&bounds, grid, &value);
    let s = shares(&best.x).unwrap_or_else(|| vec![0.0; users]);
    (-best.value, s.iter().map(|f| f * budget).collect(), best.gap)
}

/// Searches budget splits across carriers and, per carrier, power splits
/// across users. Returns a lower bound on the optimal weighted sum rate.
pub fn grid_wsr(gains: &ChannelGains, weights: &[f64], budget: f64, grid: GridSpec) -> Result<GridWsr> {
    let users = gains.users();
    let carriers = gains.carriers();
    if weights.len() != users {
        return Err(Error::DimensionMismatch {
            what: "weights vs users",
            expected: users,
            found: weights.len(),
        });
    }
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::NonPositiveBudget(budget));
    }
    let dims = (carriers - 1) + carriers * (users - 1);
    if dims > MAX_GRID_DIMS {
        return Err(Error::GridTooLarge {
            dims,
            max: MAX_GRID_DIMS,
        });
    }
    let split = |x: &[f64]| -> Option<Vec<f64>> {
        let used: f64 = x.iter().sum();
        if used > 1.0 + 1e-12 {
            return None;
        }
        let mut s: Vec<f64> = x.iter().map(|f| f * budget).collect();
        s.push((1.0 - used).max(0.0) * budget);
        Some(s)
    };
    let objective = |x: &[f64]| -> f64 {
        let Some(b) = split(x) else {
            return f64::INFINITY;
        };
        -(0..carriers)
            .map(|k| carrier_value(gains, weights, k, b[k], grid).0)
            .sum::<f64>()
    };
    let bounds = vec![(0.0, 1.0); carriers - 1];
    let best = zoom_minimize(&bounds, grid, &objective);
    let per_carrier = split(&best.x).unwrap_or_else(|| vec![0.0; carriers]);
    let mut powers = Matrix::zeros(users, carriers);
    let mut inner_gap = 0.0;
    for (k, &b) in per_carrier.iter().enumerate() {
        let (_, p, gap) = carrier_value(gains, weights, k, b, grid);
        inner_gap += gap;
        for (m, v) in p.into_iter().enumerate() {
            powers[(m, k)] = v;
        }
    }
    Ok(GridWsr {
        objective: -best.value,
        powers_bc: powers,
        gap: best.gap + inner_gap,
    })
}

/// An achievable rate vector and the sum power spent on it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPoint {
    pub rates: Vec<f64>,
    pub power: f64,
}

/// Draws random uplink allocations with total power in `power_range` and
/// random per-carrier decoding orders, and evaluates their rates. Every
/// point is achievable by construction.
pub fn sample_feasible_region(
    gains: &ChannelGains,
    power_range: (f64, f64),
    count: usize,
    seed: u64,
) -> Vec<RegionPoint> {
    let users = gains.users();
    let carriers = gains.carriers();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = power_range;
    let unit = Uniform::new(0.0f64, 1.0);
    (0..count)
        .map(|_| {
            let total = lo + (hi - lo) * unit.sample(&mut rng);
            // Cubing spreads the mass so that sparse allocations also occur.
            let mut mass: Vec<f64> = (0..users * carriers).map(|_| unit.sample(&mut rng).powi(3)).collect();
            let sum: f64 = mass.iter().sum();
            if sum > 0.0 {
                mass.iter_mut().for_each(|v| *v *= total / sum);
            }
            let powers = Matrix::from_rows(mass.chunks(carriers).map(<[f64]>::to_vec).collect())
                .expect("rectangular");
            let orders = (0..carriers)
                .map(|_| {
                    let mut o: Vec<usize> = (0..users).collect();
                    o.shuffle(&mut rng);
                    o
                })
                .collect();
            let p = PowerAllocation::new(Side::Mac, powers).expect("nonnegative powers");
            let rates = mac_rates(gains, &p, &DecodingOrder::PerCarrier(orders))
                .expect("consistent shapes")
                .user_totals();
            RegionPoint {
                rates,
                power: p.sum_power(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gains(rows: Vec<Vec<f64>>) -> ChannelGains {
        ChannelGains::from_rows(rows, 1.0).unwrap()
    }

    #[test]
    fn single_carrier_is_exact() {
        let g = gains(vec![vec![2.0], vec![0.5]]);
        let r = [0.7, 0.4];
        let out = grid_minpower(&g, &r, GridSpec::new(3, 0).unwrap()).unwrap();
        // Stronger user decoded first against the weaker one's signal.
        let p2 = (0.4f64.exp() - 1.0) / 0.5;
        let p1 = (0.7f64.exp() - 1.0) * (1.0 + 0.5 * p2) / 2.0;
        assert!((out.power - (p1 + p2)).abs() < 1e-12);
        assert_eq!(out.gap, 0.0);
    }

    #[test]
    fn single_user_two_carriers_matches_waterfilling() {
        let g = gains(vec![vec![1.0, 0.5]]);
        let target = 2.0;
        // Level ν: (ν − 0) + (ν − ln 2) = 2.
        let nu = (target + 2f64.ln()) / 2.0;
        let exact = (nu.exp() - 1.0) + (nu.exp() - 2.0);
        let out = grid_minpower(&g, &[target], GridSpec::new(101, 6).unwrap()).unwrap();
        assert!(out.power >= exact - 1e-12);
        assert!(out.power - exact <= out.gap.max(1e-9));
    }

    #[test]
    fn grid_budget_enforced() {
        let g = gains(vec![vec![1.0; 4], vec![1.0; 4], vec![1.0; 4]]);
        assert!(matches!(
            grid_minpower(&g, &[1.0, 1.0, 1.0], GridSpec::new(3, 0).unwrap()),
            Err(Error::GridTooLarge { dims: 9, .. })
        ));
        assert!(GridSpec::new(1, 0).is_err());
    }

    #[test]
    fn single_user_single_carrier_wsr() {
        let g = gains(vec![vec![3.0]]);
        let out = grid_wsr(&g, &[1.0], 2.0, GridSpec::new(5, 0).unwrap()).unwrap();
        assert!((out.objective - 7f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn equal_weights_pick_exclusive_carriers() {
        let g = gains(vec![vec![2.0, 0.5], vec![0.4, 1.5]]);
        let out = grid_wsr(&g, &[1.0, 1.0], 4.0, GridSpec::new(41, 4).unwrap()).unwrap();
        for k in 0..2 {
            let active = (0..2).filter(|&m| out.powers_bc[(m, k)] > 1e-9).count();
            assert!(active <= 1, "{:?}", out.powers_bc);
        }
    }

    #[test]
    fn zero_power_sample_is_origin() {
        let g = gains(vec![vec![1.0, 2.0]]);
        let pts = sample_feasible_region(&g, (0.0, 0.0), 1, 7);
        assert_eq!(pts, vec![RegionPoint { rates: vec![0.0], power: 0.0 }]);
    }

    #[test]
    fn samples_respect_power_range() {
        let g = gains(vec![vec![1.0, 2.0], vec![0.3, 0.9]]);
        for p in sample_feasible_region(&g, (1.0, 3.0), 200, 1) {
            assert!((1.0 - 1e-12..=3.0 + 1e-12).contains(&p.power));
            assert!(p.rates.iter().all(|r| *r >= 0.0));
        }
    }
}
