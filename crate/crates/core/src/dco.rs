//! DC-biased optical OFDM reference system: Hermitian QAM frames, bias
//! rules and power accounting.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BitLabeling, JointConstellation, PowerConvention};
use crate::transform::idft;

/// Largest number of symbol combinations `min_bias_exhaustive` will visit.
pub const MAX_COMBINATIONS: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasRule {
    /// Smallest bias keeping every possible frame non-negative.
    Exhaustive,
    /// `k √E{x²}` with `z = 10 log10(k² + 1)` dB.
    ZDb(f64),
    /// A given amplitude.
    Fixed(f64),
}

/// Gray-mapped 4-QAM `{±1 ± j}`: bit 1 of the word selects the real sign,
/// bit 0 the imaginary sign.
pub fn gray_qam4() -> Vec<Complex64> {
    vec![
        Complex64::new(1.0, 1.0),
        Complex64::new(1.0, -1.0),
        Complex64::new(-1.0, 1.0),
        Complex64::new(-1.0, -1.0),
    ]
}

fn default_qam() -> Vec<Complex64> {
    gray_qam4()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcoConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub active_bins: Vec<usize>,
    /// Symbol alphabet indexed by its bit word.
    #[serde(default = "default_qam", with = "complex_list")]
    pub qam_points: Vec<Complex64>,
    pub bias_rule: BiasRule,
    #[serde(default)]
    pub power_convention: PowerConvention,
}

mod complex_list {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|c| (c.re, c.im))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let pairs = Vec::<(f64, f64)>::deserialize(d)?;
        Ok(pairs.into_iter().map(|(re, im)| Complex64::new(re, im)).collect())
    }
}

impl DcoConfig {
    /// All bins `1..N/2` active with Gray 4-QAM.
    pub fn standard(n: usize, bias_rule: BiasRule) -> Self {
        DcoConfig {
            n,
            active_bins: (1..n / 2).collect(),
            qam_points: gray_qam4(),
            bias_rule,
            power_convention: PowerConvention::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("N = {} must be even", self.n)));
        }
        let mut seen = vec![false; self.n];
        for &k in &self.active_bins {
            if k == 0 || k >= self.n / 2 {
                return Err(Error::InvalidInput(format!(
                    "active bin {k} outside 1..{}",
                    self.n / 2
                )));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidInput(format!("bin {k} listed twice")));
            }
        }
        let q = self.qam_points.len();
        if q < 2 || !q.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "alphabet size {q} is not a power of two"
            )));
        }
        let mean: Complex64 = self.qam_points.iter().sum::<Complex64>() / q as f64;
        if mean.norm() > 1e-12 {
            return Err(Error::InvalidInput("alphabet is not zero-mean".into()));
        }
        Ok(())
    }

    pub fn bits_per_bin(&self) -> usize {
        self.qam_points.len().trailing_zeros() as usize
    }

    pub fn bits_per_frame(&self) -> usize {
        self.bits_per_bin() * self.active_bins.len()
    }

    /// Average symbol energy of the alphabet.
    pub fn symbol_energy(&self) -> f64 {
        self.qam_points.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.qam_points.len() as f64
    }

    /// Frequency-domain signal energy, mirrors included.
    pub fn signal_energy(&self) -> f64 {
        2.0 * self.active_bins.len() as f64 * self.symbol_energy()
    }

    /// Mean time-domain signal power `E{x²}` (unitary transform).
    pub fn mean_signal_power(&self) -> f64 {
        self.signal_energy() / self.n as f64
    }

    /// Bias amplitude selected by the configured rule.
    pub fn resolve_bias(&self) -> Result<f64> {
        match self.bias_rule {
            BiasRule::Exhaustive => min_bias_exhaustive(self),
            BiasRule::ZDb(z) => bias_from_db(z, self.mean_signal_power()),
            BiasRule::Fixed(b) => Ok(b),
        }
    }

    /// Minimum distance between symbols of one bin.
    pub fn min_symbol_distance(&self) -> f64 {
        let q = &self.qam_points;
        let mut best = f64::INFINITY;
        for i in 0..q.len() {
            for j in i + 1..q.len() {
                best = best.min((q[i] - q[j]).norm());
            }
        }
        best
    }
}

/// `B = k √mean_power` with `k = √(10^{z/10} - 1)`.
pub fn bias_from_db(z_db: f64, mean_power: f64) -> Result<f64> {
    if !(z_db > 0.0) || !(mean_power > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bias {z_db} dB and mean power {mean_power} must both be positive"
        )));
    }
    let k = (10f64.powf(z_db / 10.0) - 1.0).sqrt();
    Ok(k * mean_power.sqrt())
}

fn frame_from_symbols(n: usize, bins: &[usize], symbols: &[Complex64]) -> Vec<Complex64> {
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for (&k, &s) in bins.iter().zip(symbols) {
        x[k] = s;
        x[n - k] = s.conj();
    }
    x
}

/// Largest negative excursion over every combination of bin symbols.
pub fn min_bias_exhaustive(cfg: &DcoConfig) -> Result<f64> {
    cfg.validate()?;
    let q = cfg.qam_points.len();
    let bins = cfg.active_bins.len();
    let count = (q as u128).checked_pow(bins as u32).unwrap_or(u128::MAX);
    if count > MAX_COMBINATIONS {
        return Err(Error::TooManyCombinations {
            count,
            limit: MAX_COMBINATIONS,
        });
    }
    let mut worst = 0.0f64;
    let mut symbols = vec![Complex64::new(0.0, 0.0); bins];
    for idx in 0..count as usize {
        let mut r = idx;
        for s in symbols.iter_mut() {
            *s = cfg.qam_points[r % q];
            r /= q;
        }
        let x = idft(&frame_from_symbols(cfg.n, &cfg.active_bins, &symbols));
        let min = x.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
        worst = worst.max(-min);
    }
    Ok(worst)
}

/// Symbols for one frame; `bits` holds `bits_per_frame` values of 0/1,
/// most significant bit of each bin first.
pub fn frame_symbols(bits: &[u8], cfg: &DcoConfig) -> Result<Vec<Complex64>> {
    let per = cfg.bits_per_bin();
    if bits.len() != cfg.bits_per_frame() {
        return Err(Error::DimensionMismatch(format!(
            "{} bits supplied, frame carries {}",
            bits.len(),
            cfg.bits_per_frame()
        )));
    }
    Ok(bits
        .chunks_exact(per)
        .map(|chunk| {
            let word = chunk.iter().fold(0usize, |w, &b| (w << 1) | usize::from(b & 1));
            cfg.qam_points[word]
        })
        .collect())
}

/// Hermitian frame and its biased time samples.
pub fn dco_frame(bits: &[u8], cfg: &DcoConfig, bias: f64) -> Result<(Vec<Complex64>, Vec<f64>)> {
    cfg.validate()?;
    let symbols = frame_symbols(bits, cfg)?;
    let freq = frame_from_symbols(cfg.n, &cfg.active_bins, &symbols);
    let time = idft(&freq).into_iter().map(|v| v.re + bias).collect();
    Ok((freq, time))
}

/// Average electrical power of the DCO scheme.
pub fn dco_power(cfg: &DcoConfig, bias: f64, convention: PowerConvention) -> f64 {
    cfg.signal_energy() + convention.bias_power(bias, cfg.n)
}

/// The DCO frame set written as a joint constellation over the DC bin and
/// bins `1..=max(active)`, one point per frame word (identity labeling).
/// The DC coordinate holds the bias as a bin value, `√N·bias`.
pub fn dco_as_joint(cfg: &DcoConfig, bias: f64) -> Result<(JointConstellation, BitLabeling)> {
    cfg.validate()?;
    let n_j = cfg.active_bins.iter().copied().max().unwrap_or(0);
    let dims = 2 * n_j + 1;
    let per = cfg.bits_per_bin();
    let words = 1usize << cfg.bits_per_frame();
    let mut data = Vec::with_capacity(words * dims);
    for w in 0..words {
        let mut col = vec![0.0; dims];
        col[0] = (cfg.n as f64).sqrt() * bias;
        let nb = cfg.active_bins.len();
        for (i, &k) in cfg.active_bins.iter().enumerate() {
            let shift = per * (nb - 1 - i);
            let s = cfg.qam_points[(w >> shift) & ((1 << per) - 1)];
            col[2 * k - 1] = s.re;
            col[2 * k] = s.im;
        }
        data.extend(col);
    }
    Ok((
        JointConstellation::from_columns(dims, data)?,
        BitLabeling::identity(words),
    ))
}
