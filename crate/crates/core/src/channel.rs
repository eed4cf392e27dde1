//! Problem instances: channel impulse responses, per-carrier power gains and
//! the on-disk instance format.
//!
//! The carrier response of user `m` is the `K`-point DFT of its taps,
//! `h'_{m,k} = Σ_l h_m[l]·exp(−2πj·l·k/K)`, and solvers only ever consume the
//! power gain `h_{m,k} = |h'_{m,k}|²`. Cyclic-prefix overhead is ignored.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Format tag written into every instance file.
pub const INSTANCE_FORMAT: &str = "ofdm-alloc.instance/1";

/// Complex channel taps for every user plus the OFDM dimensioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTaps {
    taps: Vec<Vec<Complex64>>,
    carriers: usize,
    noise: f64,
}

impl ChannelTaps {
    pub fn new(taps: Vec<Vec<Complex64>>, carriers: usize, noise: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Dimensions("at least one user is required".into()));
        }
        if carriers == 0 {
            return Err(Error::Dimensions("at least one carrier is required".into()));
        }
        check_noise(noise)?;
        for (m, user) in taps.iter().enumerate() {
            if user.is_empty() || user.len() > carriers {
                return Err(Error::field(
                    format!("taps[{m}]"),
                    format!("tap count {} must lie in 1..={carriers}", user.len()),
                ));
            }
            if user.iter().any(|t| !t.re.is_finite() || !t.im.is_finite()) {
                return Err(Error::field(format!("taps[{m}]"), "non-finite tap"));
            }
        }
        Ok(Self {
            taps,
            carriers,
            noise,
        })
    }

    pub fn users(&self) -> usize {
        self.taps.len()
    }

    pub fn carriers(&self) -> usize {
        self.carriers
    }

    pub fn noise_power(&self) -> f64 {
        self.noise
    }

    pub fn taps(&self) -> &[Vec<Complex64>] {
        &self.taps
    }

    /// Total tap energy `Σ_l |h_m[l]|²` of one user.
    pub fn energy(&self, m: usize) -> f64 {
        self.taps[m].iter().map(Complex64::norm_sqr).sum()
    }
}

/// Per-user per-carrier power gains together with the receiver noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGains {
    gains: Matrix,
    noise: f64,
}

impl ChannelGains {
    pub fn new(gains: Matrix, noise: f64) -> Result<Self> {
        if gains.users() == 0 || gains.carriers() == 0 {
            return Err(Error::Dimensions(
                "gain matrix needs at least one user and one carrier".into(),
            ));
        }
        check_noise(noise)?;
        for m in 0..gains.users() {
            for k in 0..gains.carriers() {
                let g = gains[(m, k)];
                if !g.is_finite() || g < 0.0 {
                    return Err(Error::field(
                        format!("gains[{m}][{k}]"),
                        format!("gain must be finite and nonnegative, got {g}"),
                    ));
                }
            }
        }
        Ok(Self { gains, noise })
    }

    /// Convenience constructor from nested rows (`rows[m][k]`).
    pub fn from_rows(rows: Vec<Vec<f64>>, noise: f64) -> Result<Self> {
        let gains = Matrix::from_rows(rows)
            .ok_or_else(|| Error::field("gains", "rows have different lengths"))?;
        Self::new(gains, noise)
    }

    pub fn users(&self) -> usize {
        self.gains.users()
    }

    pub fn carriers(&self) -> usize {
        self.gains.carriers()
    }

    pub fn noise_power(&self) -> f64 {
        self.noise
    }

    pub fn gain(&self, m: usize, k: usize) -> f64 {
        self.gains[(m, k)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.gains
    }

    /// Gains of all users on carrier `k`.
    pub fn carrier(&self, k: usize) -> Vec<f64> {
        self.gains.column(k)
    }

    /// Inverse channel-to-noise ratio `σ²/h_{m,k}`; infinite for a zero gain.
    pub fn noise_to_gain(&self, m: usize, k: usize) -> f64 {
        let h = self.gains[(m, k)];
        if h > 0.0 {
            self.noise / h
        } else {
            f64::INFINITY
        }
    }

    /// True if user `m` has at least one carrier with positive gain.
    pub fn reachable(&self, m: usize) -> bool {
        self.gains.row(m).iter().any(|&h| h > 0.0)
    }

    /// Power budget for an average per-carrier SNR in dB: `P̄ = K·σ²·10^{snr/10}`.
    pub fn budget_for_snr_db(&self, snr_db: f64) -> f64 {
        self.carriers() as f64 * self.noise * 10f64.powf(snr_db / 10.0)
    }

    /// Inverse of [`ChannelGains::budget_for_snr_db`].
    pub fn snr_db_for_budget(&self, budget: f64) -> f64 {
        10.0 * (budget / (self.carriers() as f64 * self.noise)).log10()
    }
}

fn check_noise(noise: f64) -> Result<()> {
    if noise.is_finite() && noise > 0.0 {
        Ok(())
    } else {
        Err(Error::field(
            "sigma2",
            format!("noise power must be positive and finite, got {noise}"),
        ))
    }
}

/// Power gains `|DFT_K(h_m)|²` for every user, evaluated with an FFT of
/// the zero-padded tap vector.
pub fn gains_from_taps(taps: &ChannelTaps) -> ChannelGains {
    let k = taps.carriers();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(k);
    let mut gains = Matrix::zeros(taps.users(), k);
    let mut buffer = vec![Complex64::new(0.0, 0.0); k];
    for (m, user) in taps.taps().iter().enumerate() {
        buffer.fill(Complex64::new(0.0, 0.0));
        buffer[..user.len()].copy_from_slice(user);
        fft.process(&mut buffer);
        for (dst, x) in gains.row_mut(m).iter_mut().zip(&buffer) {
            *dst = x.norm_sqr();
        }
    }
    ChannelGains {
        gains,
        noise: taps.noise_power(),
    }
}

/// Draws i.i.d. circularly symmetric Gaussian taps with variance `1/L` each,
/// so that the average per-carrier gain is one.
pub fn generate_random_channel(
    users: usize,
    carriers: usize,
    taps: usize,
    seed: u64,
    noise: f64,
) -> Result<ChannelTaps> {
    if users == 0 || carriers == 0 || taps == 0 {
        return Err(Error::Dimensions(format!(
            "users, carriers and taps must be at least 1 (got {users}, {carriers}, {taps})"
        )));
    }
    if taps > carriers {
        return Err(Error::Dimensions(format!(
            "tap count {taps} exceeds carrier count {carriers}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Each real component carries half of the tap variance.
    let normal = Normal::new(0.0, (0.5 / taps as f64).sqrt()).expect("valid std-dev");
    let coefficients = (0..users)
        .map(|_| {
            (0..taps)
                .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect()
        })
        .collect();
    ChannelTaps::new(coefficients, carriers, noise)
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format: Option<String>,
    #[serde(rename = "M")]
    users: usize,
    #[serde(rename = "K")]
    carriers: usize,
    sigma2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gains: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    taps: Option<Vec<Vec<[f64; 2]>>>,
}

/// Serializes gains to the instance document format.
pub fn instance_to_string(gains: &ChannelGains) -> String {
    let file = InstanceFile {
        format: Some(INSTANCE_FORMAT.to_string()),
        users: gains.users(),
        carriers: gains.carriers(),
        sigma2: gains.noise_power(),
        gains: Some(gains.matrix().to_rows()),
        taps: None,
    };
    serde_json::to_string_pretty(&file).expect("instance serializes") + "\n"
}

/// Serializes taps to the alternate (`taps`) instance document format.
pub fn taps_instance_to_string(taps: &ChannelTaps) -> String {
    let file = InstanceFile {
        format: Some(INSTANCE_FORMAT.to_string()),
        users: taps.users(),
        carriers: taps.carriers(),
        sigma2: taps.noise_power(),
        gains: None,
        taps: Some(
            taps.taps()
                .iter()
                .map(|u| u.iter().map(|t| [t.re, t.im]).collect())
                .collect(),
        ),
    };
    serde_json::to_string_pretty(&file).expect("instance serializes") + "\n"
}

/// Parses an instance document in either the `gains` or the `taps` form.
pub fn parse_instance(text: &str) -> Result<ChannelGains> {
    let file: InstanceFile = serde_json::from_str(text).map_err(Error::from_json)?;
    if let Some(format) = &file.format {
        if format != INSTANCE_FORMAT {
            return Err(Error::field("format", format!("unsupported format `{format}`")));
        }
    }
    if file.users == 0 || file.carriers == 0 {
        return Err(Error::Dimensions("M and K must be at least 1".into()));
    }
    check_noise(file.sigma2)?;
    match (file.gains, file.taps) {
        (Some(rows), None) => {
            if rows.len() != file.users {
                return Err(Error::DimensionMismatch {
                    what: "gains rows vs M",
                    expected: file.users,
                    found: rows.len(),
                });
            }
            for row in &rows {
                if row.len() != file.carriers {
                    return Err(Error::DimensionMismatch {
                        what: "gains columns vs K",
                        expected: file.carriers,
                        found: row.len(),
                    });
                }
            }
            ChannelGains::from_rows(rows, file.sigma2)
        }
        (None, Some(taps)) => {
            if taps.len() != file.users {
                return Err(Error::DimensionMismatch {
                    what: "taps rows vs M",
                    expected: file.users,
                    found: taps.len(),
                });
            }
            let taps = taps
                .into_iter()
                .map(|u| u.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
                .collect();
            let taps = ChannelTaps::new(taps, file.carriers, file.sigma2)?;
            Ok(gains_from_taps(&taps))
        }
        (Some(_), Some(_)) => Err(Error::field("gains", "give either `gains` or `taps`, not both")),
        (None, None) => Err(Error::field("gains", "missing `gains` (or `taps`)")),
    }
}

pub fn save_instance(gains: &ChannelGains, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, instance_to_string(gains))?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<ChannelGains> {
    parse_instance(&fs::read_to_string(path)?)
}
