//! Link simulation and error-rate analytics.
//!
//! Frames are built in the frequency domain, passed through the per-bin
//! channel, and disturbed by circular complex Gaussian noise of variance
//! `N0` on each non-negative bin. The receiver sees a real time signal, so
//! the mirror bins carry conjugate copies of the same noise and add nothing
//! to detection; only bins `0..N/2` are simulated and detected.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{ChannelSpec, Preequalizer};
use crate::dco::{dco_as_joint, dco_power, DcoConfig};
use crate::error::{Error, Result};
use crate::labeling::{hamming, lambda_estimate};
use crate::model::{BitLabeling, JointConstellation, Mode, PowerConvention, SystemConfig};
use crate::optimizer::{independent_alphabet, verify_design};
use crate::qfunc::{pairwise_error, q};

/// Trials simulated per random substream.
pub const CHUNK: u64 = 1 << 16;

/// Bins carrying independent Gray 4-QAM symbols next to the joint design.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentPart {
    pub bins: Vec<usize>,
    /// Indexed by the 2-bit word.
    pub alphabet: Vec<Complex64>,
    /// Residual time-domain bias restoring non-negativity.
    pub bias: f64,
}

/// Everything the transmitter and receiver of one scheme need.
#[derive(Debug, Clone)]
pub struct Scheme {
    pub name: String,
    pub n: usize,
    pub constellation: JointConstellation,
    pub labeling: BitLabeling,
    pub independent: Option<IndependentPart>,
    pub equalizer: Preequalizer,
    pub channel: ChannelSpec,
    /// Average electrical power `P_a` that anchors the SNR axis.
    pub power: f64,
}

impl Scheme {
    /// Wraps a designed constellation; power is measured under the
    /// configured convention, including the independent bins and the
    /// residual bias in partial mode.
    pub fn from_design(
        name: &str,
        config: &SystemConfig,
        constellation: JointConstellation,
        labeling: BitLabeling,
    ) -> Result<Self> {
        let report = verify_design(&constellation, config)?;
        if labeling.size() != constellation.size() {
            return Err(Error::DimensionMismatch("labeling size".into()));
        }
        let equalizer = Preequalizer::build(&config.channel, config.n, config.n_j, config.alpha)?;
        let mut power = report.power;
        let independent = match config.mode {
            Mode::Full => None,
            Mode::Partial => {
                let bias = report.residual_bias.unwrap_or(0.0);
                power += config.power_convention.bias_power(bias, config.n);
                Some(IndependentPart {
                    bins: config.independent_bins(),
                    alphabet: independent_alphabet(config.p_indep),
                    bias,
                })
            }
        };
        Ok(Scheme {
            name: name.to_string(),
            n: config.n,
            constellation,
            labeling,
            independent,
            equalizer,
            channel: config.channel.clone(),
            power,
        })
    }

    /// The DCO reference as a joint constellation over a flat channel.
    pub fn dco(name: &str, cfg: &DcoConfig, bias: f64, convention: PowerConvention) -> Result<Self> {
        let (constellation, labeling) = dco_as_joint(cfg, bias)?;
        let n_j = (constellation.dims() - 1) / 2;
        Ok(Scheme {
            name: name.to_string(),
            n: cfg.n,
            constellation,
            labeling,
            independent: None,
            equalizer: Preequalizer::identity(n_j),
            channel: ChannelSpec::flat(),
            power: dco_power(cfg, bias, convention),
        })
    }

    pub fn n_j(&self) -> usize {
        (self.constellation.dims() - 1) / 2
    }

    pub fn joint_bits(&self) -> u32 {
        self.constellation.size().trailing_zeros()
    }

    pub fn bits_per_frame(&self) -> u32 {
        self.joint_bits() + self.independent.as_ref().map_or(0, |p| 2 * p.bins.len() as u32)
    }

    fn dc_offset(&self) -> f64 {
        self.independent
            .as_ref()
            .map_or(0.0, |p| (self.n as f64).sqrt() * p.bias)
    }

    /// Noiseless received values on bins `0..=N_J` for every point.
    pub fn candidates(&self) -> Vec<Vec<Complex64>> {
        let n_j = self.n_j();
        let z: Vec<Complex64> = (0..=n_j).map(|k| self.channel.bin_response(k, self.n)).collect();
        let off = self.dc_offset();
        self.constellation
            .columns()
            .map(|c| {
                let u = self.equalizer.apply(c);
                let mut v = Vec::with_capacity(n_j + 1);
                v.push(z[0] * (u[0] + off));
                for k in 1..=n_j {
                    v.push(z[k] * Complex64::new(u[2 * k - 1], u[2 * k]));
                }
                v
            })
            .collect()
    }

    /// The joint constellation as seen after the channel, DC offset removed.
    pub fn received_constellation(&self) -> Result<JointConstellation> {
        let off = self.channel.bin_response(0, self.n) * self.dc_offset();
        let mut data = Vec::with_capacity(self.constellation.as_slice().len());
        for v in self.candidates() {
            data.push((v[0] - off).re);
            for x in &v[1..] {
                data.push(x.re);
                data.push(x.im);
            }
        }
        JointConstellation::from_columns(self.constellation.dims(), data)
    }

    /// `N0` giving `10 log10(P_a/N0) = snr_db`.
    pub fn n0_at(&self, snr_db: f64) -> f64 {
        self.power * 10f64.powf(-snr_db / 10.0)
    }
}

/// Index of the candidate closest to `y` over its bins; ties go to the
/// lowest index.
pub fn ml_detect(y: &[Complex64], candidates: &[Vec<Complex64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (m, c) in candidates.iter().enumerate() {
        let d: f64 = c.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum();
        if d < best.1 {
            best = (m, d);
        }
    }
    best.0
}

/// Circular complex Gaussian sample of variance `n0` (`n0/2` per part).
pub fn complex_noise<R: Rng>(rng: &mut R, n0: f64) -> Complex64 {
    let s = (n0 / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub n0: f64,
    pub ser: f64,
    pub ber: f64,
    pub trials: u64,
    pub symbol_errors: u64,
    pub bit_errors: u64,
    /// Half-width of the normal-approximation 95% interval on `ber`.
    pub ci95: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    symbols: u64,
    bits: u64,
}

fn stream_rng(seed: u64, point: usize, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | chunk);
    rng
}

fn simulate_chunk(
    s: &Scheme,
    cands: &[Vec<Complex64>],
    z_ind: &[Complex64],
    n0: f64,
    trials: u64,
    rng: &mut ChaCha8Rng,
) -> Counts {
    let m = cands.len();
    let mut counts = Counts::default();
    let mut y = vec![Complex64::new(0.0, 0.0); cands[0].len()];
    for _ in 0..trials {
        let word = rng.random_range(0..m);
        let p = s.labeling.point(word);
        for (yk, ck) in y.iter_mut().zip(&cands[p]) {
            *yk = ck + complex_noise(rng, n0);
        }
        let got = ml_detect(&y, cands);
        let mut frame_bits = 0;
        if got != p {
            counts.symbols += 1;
            frame_bits += hamming(word, s.labeling.word(got));
        }
        if let Some(ind) = &s.independent {
            for &z in z_ind {
                let w = rng.random_range(0..ind.alphabet.len());
                let r = z * ind.alphabet[w] + complex_noise(rng, n0);
                let det = (0..ind.alphabet.len())
                    .min_by(|&a, &b| {
                        (r - z * ind.alphabet[a])
                            .norm_sqr()
                            .total_cmp(&(r - z * ind.alphabet[b]).norm_sqr())
                    })
                    .unwrap();
                frame_bits += hamming(w, det);
            }
        }
        counts.bits += u64::from(frame_bits);
    }
    counts
}

/// Monte-Carlo SER/BER over an SNR grid. Each SNR point uses its own
/// family of substreams, so results do not depend on the thread count.
pub fn run_ber(scheme: &Scheme, snr_db: &[f64], trials: u64, seed: u64) -> Vec<BerPoint> {
    let cands = scheme.candidates();
    let z_ind: Vec<Complex64> = scheme
        .independent
        .as_ref()
        .map(|p| p.bins.iter().map(|&k| scheme.channel.bin_response(k, scheme.n)).collect())
        .unwrap_or_default();
    let bits_per_frame = u64::from(scheme.bits_per_frame());
    snr_db
        .iter()
        .enumerate()
        .map(|(i, &snr)| {
            let n0 = scheme.n0_at(snr);
            let chunks = trials.div_ceil(CHUNK);
            let total = (0..chunks)
                .into_par_iter()
                .map(|j| {
                    let len = CHUNK.min(trials - j * CHUNK);
                    let mut rng = stream_rng(seed, i, j);
                    simulate_chunk(scheme, &cands, &z_ind, n0, len, &mut rng)
                })
                .reduce(Counts::default, |a, b| Counts {
                    symbols: a.symbols + b.symbols,
                    bits: a.bits + b.bits,
                });
            let ser = total.symbols as f64 / trials.max(1) as f64;
            let nbits = (trials * bits_per_frame).max(1) as f64;
            let ber = total.bits as f64 / nbits;
            BerPoint {
                snr_db: snr,
                n0,
                ser,
                ber,
                trials,
                symbol_errors: total.symbols,
                bit_errors: total.bits,
                ci95: 1.96 * (ber * (1.0 - ber) / nbits).sqrt(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticSer {
    /// `α_nn Q(√(d_min²/(2N0)))`.
    pub nearest: f64,
    /// `(1/M) Σ_p Σ_{q≠p} Q(√(d_pq²/(2N0)))`.
    pub union: f64,
    /// Average number of neighbours within `(1 + 1e-6) d_min`.
    pub kissing: f64,
    pub d_min: f64,
}

pub fn analytic_ser(c: &JointConstellation, n0: f64) -> AnalyticSer {
    let m = c.size();
    let d_min = c.min_distance();
    let limit = (d_min * (1.0 + 1e-6)).powi(2);
    let (mut union, mut close) = (0.0, 0usize);
    for p in 0..m {
        for q in p + 1..m {
            let d2 = crate::model::squared_distance(c.column(p), c.column(q));
            union += 2.0 * pairwise_error(d2, n0);
            if d2 <= limit {
                close += 2;
            }
        }
    }
    let kissing = close as f64 / m as f64;
    AnalyticSer {
        nearest: if m > 1 { kissing * pairwise_error(d_min * d_min, n0) } else { 0.0 },
        union: union / m as f64,
        kissing,
        d_min,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticPoint {
    pub snr_db: f64,
    pub n0: f64,
    pub ser_nearest: f64,
    pub ser_union: f64,
    pub lambda: f64,
    /// `(λ/N_b)` times the nearest-neighbour SER, averaged with the
    /// independent 4-QAM bits in partial mode.
    pub ber: f64,
    /// Same with the union bound in place of the nearest-neighbour SER,
    /// i.e. the Hamming-weighted sum of all pairwise error terms.
    pub ber_union: f64,
}

pub fn analytic_curve(scheme: &Scheme, snr_db: &[f64]) -> Result<Vec<AnalyticPoint>> {
    let rx = scheme.received_constellation()?;
    let nb = f64::from(scheme.joint_bits());
    let total_bits = f64::from(scheme.bits_per_frame());
    Ok(snr_db
        .iter()
        .map(|&snr| {
            let n0 = scheme.n0_at(snr);
            let a = analytic_ser(&rx, n0);
            let lambda = lambda_estimate(&scheme.labeling, &rx, n0);
            let mut indep_errors = 0.0;
            if let Some(ind) = &scheme.independent {
                for &k in &ind.bins {
                    let z = scheme.channel.bin_response(k, scheme.n);
                    let d = (z * (ind.alphabet[0] - ind.alphabet[1])).norm();
                    // two Gray bits per bin, each flipped with probability Q(d/√(2N0))
                    indep_errors += 2.0 * q(d / (2.0 * n0).sqrt());
                }
            }
            let per_bit = |joint: f64| if nb > 0.0 { (joint + indep_errors) / total_bits } else { 0.0 };
            AnalyticPoint {
                snr_db: snr,
                n0,
                ser_nearest: a.nearest,
                ser_union: a.union,
                lambda,
                ber: per_bit(lambda * a.nearest),
                ber_union: per_bit(lambda * a.union),
            }
        })
        .collect())
}

/// SNR at which a decreasing curve crosses `target`, interpolating
/// `log10(ber)` linearly in SNR.
pub fn snr_at_ber(curve: &[(f64, f64)], target: f64) -> Result<f64> {
    let lt = target.log10();
    for w in curve.windows(2) {
        let ((s0, b0), (s1, b1)) = (w[0], w[1]);
        if b0 >= target && b1 <= target && b0 > 0.0 && b1 > 0.0 {
            let (l0, l1) = (b0.log10(), b1.log10());
            if l0 == l1 {
                return Ok(s0);
            }
            return Ok(s0 + (lt - l0) * (s1 - s0) / (l1 - l0));
        }
    }
    Err(Error::TargetOutOfRange { target })
}

/// `SNR_a - SNR_b` in dB at `target_ber`; positive when `b` needs less
/// power.
pub fn power_gain_at_ber(curve_a: &[(f64, f64)], curve_b: &[(f64, f64)], target_ber: f64) -> Result<f64> {
    Ok(snr_at_ber(curve_a, target_ber)? - snr_at_ber(curve_b, target_ber)?)
}

/// CSV with columns `snr_db,ser,ber,trials,ci95,scheme,power`, preceded by
/// `#` comment lines.
pub fn ber_csv(rows: &[(&Scheme, &[BerPoint])], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str("snr_db,ser,ber,trials,ci95,scheme,power\n");
    for (s, pts) in rows {
        for p in pts.iter() {
            let _ = writeln!(
                out,
                "{},{:.6e},{:.6e},{},{:.6e},{},{}",
                p.snr_db, p.ser, p.ber, p.trials, p.ci95, s.name, s.power
            );
        }
    }
    out
}
