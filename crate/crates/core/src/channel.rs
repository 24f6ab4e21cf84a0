//! Multipath frequency-domain channel and the block-diagonal pre-equalizer
//! that presents a flat response of gain `alpha` to the joint design.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One propagation path: real gain and integer sample delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, u32)", into = "(f64, u32)")]
pub struct Path {
    pub gain: f64,
    pub delay: u32,
}

impl From<(f64, u32)> for Path {
    fn from((gain, delay): (f64, u32)) -> Self {
        Path { gain, delay }
    }
}

impl From<Path> for (f64, u32) {
    fn from(p: Path) -> Self {
        (p.gain, p.delay)
    }
}

/// Serialized as a list of `[beta, tau]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelSpec {
    pub paths: Vec<Path>,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self::flat()
    }
}

impl ChannelSpec {
    /// Identity channel.
    pub fn flat() -> Self {
        ChannelSpec {
            paths: vec![Path { gain: 1.0, delay: 0 }],
        }
    }

    pub fn multipath(paths: &[(f64, u32)]) -> Self {
        ChannelSpec {
            paths: paths.iter().copied().map(Path::from).collect(),
        }
    }

    /// True when every bin sees the same unit response.
    pub fn is_flat(&self) -> bool {
        self.paths.len() == 1 && self.paths[0].delay == 0 && self.paths[0].gain == 1.0
    }

    /// `z_k = Σ_i β_i exp(-j 2π k τ_i / N)`.
    pub fn bin_response(&self, k: usize, n: usize) -> Complex64 {
        self.paths
            .iter()
            .map(|p| {
                let phase = -2.0 * PI * (k as f64) * (p.delay as f64) / n as f64;
                Complex64::from_polar(p.gain, phase)
            })
            .sum()
    }

    pub fn responses(&self, n: usize) -> Vec<Complex64> {
        (0..n).map(|k| self.bin_response(k, n)).collect()
    }

    /// Per-bin multiplication `ỹ_k = z_k x̃_k`.
    pub fn apply(&self, freq: &[Complex64]) -> Vec<Complex64> {
        let n = freq.len();
        freq.iter()
            .enumerate()
            .map(|(k, x)| self.bin_response(k, n) * x)
            .collect()
    }
}

/// Real 2×2 block acting on one `(Re, Im)` coordinate pair.
pub type Block2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Preequalizer {
    pub f0: f64,
    pub blocks: Vec<Block2>,
    pub alpha: f64,
}

impl Preequalizer {
    pub fn identity(n_j: usize) -> Self {
        Preequalizer {
            f0: 1.0,
            blocks: vec![[[1.0, 0.0], [0.0, 1.0]]; n_j],
            alpha: 1.0,
        }
    }

    /// Builds `f_0 = α/z_0` and blocks implementing multiplication by
    /// `α/z_k` on the coordinate pair `(c_{2k}, c_{2k+1})`.
    pub fn build(spec: &ChannelSpec, n: usize, n_j: usize, alpha: f64) -> Result<Self> {
        // responses below this are numerically indistinguishable from a null
        let floor = 1e-12 * spec.paths.iter().map(|p| p.gain.abs()).sum::<f64>();
        let z0 = spec.bin_response(0, n);
        if z0.norm() <= floor {
            return Err(Error::ChannelNull { bin: 0 });
        }
        if z0.im.abs() > 1e-12 * z0.norm() {
            return Err(Error::InvalidInput("DC response must be real".into()));
        }
        let mut blocks = Vec::with_capacity(n_j);
        for k in 1..=n_j {
            let z = spec.bin_response(k, n);
            let mag2 = z.norm_sqr();
            if z.norm() <= floor {
                return Err(Error::ChannelNull { bin: k });
            }
            let g = alpha / mag2;
            blocks.push([[g * z.re, g * z.im], [-g * z.im, g * z.re]]);
        }
        Ok(Preequalizer {
            f0: alpha / z0.re,
            blocks,
            alpha,
        })
    }

    pub fn dims(&self) -> usize {
        2 * self.blocks.len() + 1
    }

    /// Applies `F` to one constellation column.
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; c.len()];
        out[0] = self.f0 * c[0];
        for (k, b) in self.blocks.iter().enumerate() {
            let (re, im) = (c[2 * k + 1], c[2 * k + 2]);
            out[2 * k + 1] = b[0][0] * re + b[0][1] * im;
            out[2 * k + 2] = b[1][0] * re + b[1][1] * im;
        }
        out
    }

    /// Applies `F⁻¹`.
    pub fn apply_inverse(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        out[0] = u[0] / self.f0;
        for (k, b) in self.blocks.iter().enumerate() {
            let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
            let (x, y) = (u[2 * k + 1], u[2 * k + 2]);
            out[2 * k + 1] = (b[1][1] * x - b[0][1] * y) / det;
            out[2 * k + 2] = (-b[1][0] * x + b[0][0] * y) / det;
        }
        out
    }

    /// Dense row-major `F` of size `dims × dims`.
    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.dims();
        let mut f = vec![0.0; d * d];
        f[0] = self.f0;
        for (k, b) in self.blocks.iter().enumerate() {
            let i = 2 * k + 1;
            f[i * d + i] = b[0][0];
            f[i * d + i + 1] = b[0][1];
            f[(i + 1) * d + i] = b[1][0];
            f[(i + 1) * d + i + 1] = b[1][1];
        }
        f
    }
}
