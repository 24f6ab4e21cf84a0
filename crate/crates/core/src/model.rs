//! Shared data model: scenario configuration, joint constellations, the
//! stacked decision vector and bit labelings.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSpec;
use crate::error::{Error, Result};

/// Whether every independent subcarrier takes part in the joint design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Full,
    Partial,
}

/// How electrical power is accounted.
///
/// For a joint constellation the first coordinate already is the DC bin
/// value, so both conventions give the same joint power. They differ in how
/// a fixed time-domain bias `B` is charged: `BiasSquared` charges `B²`,
/// `FdSum` charges the DC bin energy `N·B²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PowerConvention {
    #[serde(rename = "fd-sum")]
    FdSum,
    #[default]
    #[serde(rename = "paper-sec4")]
    BiasSquared,
}

impl PowerConvention {
    /// Power charged for a constant time-domain bias of amplitude `bias`.
    pub fn bias_power(self, bias: f64, n: usize) -> f64 {
        match self {
            PowerConvention::BiasSquared => bias * bias,
            PowerConvention::FdSum => n as f64 * bias * bias,
        }
    }
}

impl fmt::Display for PowerConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PowerConvention::FdSum => "fd-sum",
            PowerConvention::BiasSquared => "paper-sec4",
        })
    }
}

fn default_alpha() -> f64 {
    1.0
}

/// All scenario parameters. Serialized keys match the field names used in
/// the configuration file (`N`, `N_J`, `M`, `N_b`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// IFFT length.
    #[serde(rename = "N")]
    pub n: usize,
    /// Number of subcarriers designed jointly with the DC bin.
    #[serde(rename = "N_J")]
    pub n_j: usize,
    /// Constellation size.
    #[serde(rename = "M")]
    pub m: usize,
    /// Bits per joint symbol.
    #[serde(rename = "N_b")]
    pub n_b: u32,
    /// Average electrical power budget.
    #[serde(rename = "P_total")]
    pub p_total: f64,
    /// Power of each independently modulated bin (mirrors counted separately).
    #[serde(rename = "P_indep", default)]
    pub p_indep: f64,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_range_max: Option<f64>,
    #[serde(default)]
    pub power_convention: PowerConvention,
    #[serde(default)]
    pub channel: ChannelSpec,
    /// Pre-equalizer scaling factor.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

/// One violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl SystemConfig {
    /// Full-mode configuration over a flat channel.
    pub fn full(n: usize, n_b: u32, p_total: f64) -> Self {
        SystemConfig {
            n,
            n_j: (n / 2).saturating_sub(1),
            m: 1usize << n_b,
            n_b,
            p_total,
            p_indep: 0.0,
            mode: Mode::Full,
            dynamic_range_max: None,
            power_convention: PowerConvention::default(),
            channel: ChannelSpec::flat(),
            alpha: 1.0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Real dimensions of one joint constellation point, `2 N_J + 1`.
    pub fn dims(&self) -> usize {
        2 * self.n_j + 1
    }

    /// Number of independently modulated bins, mirrors included.
    pub fn m_f(&self) -> usize {
        self.n.saturating_sub(2 * self.n_j + 2)
    }

    /// Bins `N_J+1 ..= N/2-1` that carry independent symbols in partial mode.
    pub fn independent_bins(&self) -> Vec<usize> {
        (self.n_j + 1..self.n / 2).collect()
    }

    /// Power left for the joint part once the independent bins are paid for.
    pub fn joint_budget(&self) -> f64 {
        self.p_total - self.m_f() as f64 * self.p_indep
    }

    /// Returns every violated invariant.
    pub fn validate(&self) -> std::result::Result<(), Vec<ConfigViolation>> {
        let mut v = Vec::new();
        let mut push = |field, message: String| v.push(ConfigViolation { field, message });

        if self.n < 2 || !self.n.is_multiple_of(2) {
            push("N", format!("must be a positive even integer, got {}", self.n));
        }
        let max_nj = (self.n / 2).saturating_sub(1);
        if self.n_j > max_nj {
            push("N_J", format!("must be at most N/2-1 = {max_nj}, got {}", self.n_j));
        }
        if self.n_b >= usize::BITS || self.m != 1usize << self.n_b {
            push("M", format!("must equal 2^N_b = 2^{}, got {}", self.n_b, self.m));
        }
        if !(self.p_total > 0.0) || !self.p_total.is_finite() {
            push("P_total", format!("must be positive, got {}", self.p_total));
        }
        if !(self.p_indep >= 0.0) || !self.p_indep.is_finite() {
            push("P_indep", format!("must be non-negative, got {}", self.p_indep));
        }
        if let Some(max) = self.dynamic_range_max {
            if !(max > 0.0) {
                push("dynamic_range_max", format!("must be positive, got {max}"));
            }
        }
        let full_nj = self.n_j == max_nj;
        match self.mode {
            Mode::Full => {
                if !full_nj {
                    push("mode", format!("full mode requires N_J = N/2-1 = {max_nj}"));
                }
                if self.p_indep != 0.0 {
                    push("P_indep", "must be 0 in full mode".to_string());
                }
            }
            Mode::Partial => {
                if full_nj {
                    push("mode", "partial mode requires N_J < N/2-1".to_string());
                }
                if self.p_indep == 0.0 {
                    push("P_indep", "must be positive in partial mode".to_string());
                }
            }
        }
        if self.p_total > 0.0 && self.joint_budget() <= 0.0 {
            push(
                "P_total",
                format!(
                    "independent bins consume {} of the {} budget",
                    self.m_f() as f64 * self.p_indep,
                    self.p_total
                ),
            );
        }
        if self.channel.paths.is_empty() {
            push("channel", "at least one path is required".to_string());
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            push("alpha", format!("must be positive, got {}", self.alpha));
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// `validate` folded into the crate error type.
    pub fn check(&self) -> Result<()> {
        self.validate().map_err(Error::InvalidConfig)
    }
}

/// Squared Euclidean distance between two equally sized slices.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Joint constellation: `M` real points of dimension `2 N_J + 1`, stored
/// column by column. Row 0 of each column is the (real) DC bin value.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConstellation {
    dims: usize,
    data: Vec<f64>,
    pub achieved_d_min: f64,
    /// Average joint power, `(1/M) Σ_m [c_1² + 2 Σ_{i>1} c_i²]`.
    pub avg_power: f64,
}

impl JointConstellation {
    /// Builds a constellation from column-major data, computing its minimum
    /// distance and average joint power.
    pub fn from_columns(dims: usize, data: Vec<f64>) -> Result<Self> {
        if dims == 0 || data.is_empty() || !data.len().is_multiple_of(dims) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form columns of dimension {dims}",
                data.len()
            )));
        }
        let mut c = JointConstellation {
            dims,
            data,
            achieved_d_min: 0.0,
            avg_power: 0.0,
        };
        c.achieved_d_min = c.min_distance();
        c.avg_power = c.joint_power();
        Ok(c)
    }

    pub fn from_point_list(points: &[Vec<f64>]) -> Result<Self> {
        let dims = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dims) {
            return Err(Error::DimensionMismatch("ragged point list".into()));
        }
        Self::from_columns(dims, points.concat())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Number of points `M`.
    pub fn size(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn column(&self, m: usize) -> &[f64] {
        &self.data[m * self.dims..(m + 1) * self.dims]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dims)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Minimum pairwise Euclidean distance; `+inf` for a single point.
    pub fn min_distance(&self) -> f64 {
        let m = self.size();
        let mut best = f64::INFINITY;
        for p in 0..m {
            for q in p + 1..m {
                best = best.min(squared_distance(self.column(p), self.column(q)));
            }
        }
        best.sqrt()
    }

    fn joint_power(&self) -> f64 {
        let total: f64 = self
            .columns()
            .map(|c| c[0] * c[0] + 2.0 * c[1..].iter().map(|x| x * x).sum::<f64>())
            .sum();
        total / self.size() as f64
    }

    pub fn stack(&self) -> StackedVector {
        StackedVector {
            values: self.data.clone(),
            dims: self.dims,
        }
    }
}

/// The optimizer's decision vector: blocks `c^(1), ..., c^(M)` back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVector {
    pub values: Vec<f64>,
    pub dims: usize,
}

impl StackedVector {
    pub fn new(values: Vec<f64>, dims: usize) -> Result<Self> {
        if dims == 0 || !values.len().is_multiple_of(dims) {
            return Err(Error::DimensionMismatch(format!(
                "length {} is not a multiple of {dims}",
                values.len()
            )));
        }
        Ok(StackedVector { values, dims })
    }

    pub fn points(&self) -> usize {
        self.values.len() / self.dims
    }

    /// Selection `J^(m) c^(s)`.
    pub fn block(&self, m: usize) -> &[f64] {
        &self.values[m * self.dims..(m + 1) * self.dims]
    }

    pub fn unstack(&self, m: usize, dims: usize) -> Result<JointConstellation> {
        if dims != self.dims || m * dims != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot unstack length {} into {m} points of dimension {dims}",
                self.values.len()
            )));
        }
        JointConstellation::from_columns(dims, self.values.clone())
    }
}

/// Bijection between bit words `0..M` and constellation column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitLabeling {
    point_of_word: Vec<usize>,
    word_of_point: Vec<usize>,
}

impl BitLabeling {
    /// Natural labeling: word `b` is sent on column `b`.
    pub fn identity(m: usize) -> Self {
        BitLabeling {
            point_of_word: (0..m).collect(),
            word_of_point: (0..m).collect(),
        }
    }

    /// Builds a labeling from `point_of_word[b]`, checking bijectivity.
    pub fn from_point_of_word(point_of_word: Vec<usize>) -> Result<Self> {
        let word_of_point = invert(&point_of_word)?;
        Ok(BitLabeling {
            point_of_word,
            word_of_point,
        })
    }

    /// Builds a labeling from `word_of_point[m]`, checking bijectivity.
    pub fn from_word_of_point(word_of_point: Vec<usize>) -> Result<Self> {
        let point_of_word = invert(&word_of_point)?;
        Ok(BitLabeling {
            point_of_word,
            word_of_point,
        })
    }

    pub fn size(&self) -> usize {
        self.point_of_word.len()
    }

    pub fn point(&self, word: usize) -> usize {
        self.point_of_word[word]
    }

    pub fn word(&self, point: usize) -> usize {
        self.word_of_point[point]
    }

    pub fn words(&self) -> &[usize] {
        &self.word_of_point
    }

    /// Exchanges the words carried by two points.
    pub fn swap_points(&mut self, a: usize, b: usize) {
        self.word_of_point.swap(a, b);
        self.point_of_word[self.word_of_point[a]] = a;
        self.point_of_word[self.word_of_point[b]] = b;
    }
}

fn invert(perm: &[usize]) -> Result<Vec<usize>> {
    let mut inv = vec![usize::MAX; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        if p >= perm.len() || inv[p] != usize::MAX {
            return Err(Error::InvalidInput(format!(
                "labeling is not a permutation of 0..{}",
                perm.len()
            )));
        }
        inv[p] = i;
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_config() -> SystemConfig {
        SystemConfig::full(8, 6, 16.58)
    }

    #[test]
    fn reference_scenario_is_valid() {
        let c = reference_config();
        assert_eq!((c.n_j, c.m, c.dims(), c.m_f()), (3, 64, 7, 0));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn size_mismatch_is_reported() {
        let mut c = reference_config();
        c.n_b = 5;
        let errs = c.validate().unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field, "M");
    }

    #[test]
    fn too_many_joint_subcarriers() {
        let mut c = reference_config();
        c.n_j = 4;
        let errs = c.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.field == "N_J"));
    }

    #[test]
    fn single_field_perturbations_are_rejected() {
        type Perturb = Box<dyn Fn(&mut SystemConfig)>;
        let perturbations: Vec<Perturb> = vec![
            Box::new(|c| c.n = 7),
            Box::new(|c| c.n = 0),
            Box::new(|c| c.n_j = 2),
            Box::new(|c| c.m = 32),
            Box::new(|c| c.n_b = 7),
            Box::new(|c| c.p_total = 0.0),
            Box::new(|c| c.p_total = -1.0),
            Box::new(|c| c.p_indep = 1.0),
            Box::new(|c| c.mode = Mode::Partial),
            Box::new(|c| c.dynamic_range_max = Some(0.0)),
            Box::new(|c| c.alpha = 0.0),
            Box::new(|c| c.channel.paths.clear()),
        ];
        for (i, p) in perturbations.iter().enumerate() {
            let mut c = reference_config();
            p(&mut c);
            assert!(c.validate().is_err(), "perturbation {i} accepted");
        }
    }

    #[test]
    fn partial_mode_accounting() {
        let mut c = SystemConfig::full(16, 2, 30.0);
        c.n_j = 3;
        c.mode = Mode::Partial;
        c.p_indep = 2.0;
        assert!(c.validate().is_ok());
        assert_eq!(c.m_f(), 8);
        assert_eq!(c.independent_bins(), vec![4, 5, 6, 7]);
        assert_eq!(c.joint_budget(), 14.0);
    }

    #[test]
    fn config_json_uses_field_names() {
        let c = reference_config();
        let json = c.to_json();
        for key in ["\"N\"", "\"N_J\"", "\"M\"", "\"N_b\"", "\"P_total\"", "\"P_indep\"", "\"mode\""] {
            assert!(json.contains(key), "{key} missing from {json}");
        }
        assert_eq!(SystemConfig::from_json(&json).unwrap(), c);
        let minimal = r#"{"N": 8, "N_J": 3, "M": 64, "N_b": 6, "P_total": 18.01, "mode": "full"}"#;
        let parsed = SystemConfig::from_json(minimal).unwrap();
        assert_eq!(parsed.power_convention, PowerConvention::BiasSquared);
        assert_eq!(parsed.alpha, 1.0);
        assert!(parsed.validate().is_ok());
    }

    #[test]
    fn stack_smallest_case() {
        let c = JointConstellation::from_columns(1, vec![3.0, -1.5]).unwrap();
        assert_eq!(c.stack().values, vec![3.0, -1.5]);
    }

    #[test]
    fn stack_selects_blocks() {
        let u = vec![1.0, 2.0, 3.0];
        let v = vec![4.0, 5.0, 6.0];
        let c = JointConstellation::from_point_list(&[u.clone(), v.clone()]).unwrap();
        let s = c.stack();
        assert_eq!(s.values, [u.clone(), v.clone()].concat());
        assert_eq!(s.block(1), v.as_slice());
        assert_eq!(s.block(0), u.as_slice());
    }

    #[test]
    fn unstack_rejects_bad_shape() {
        let s = StackedVector::new(vec![0.0; 14], 7).unwrap();
        assert!(s.unstack(3, 7).is_err());
        assert!(s.unstack(2, 7).is_ok());
        assert!(StackedVector::new(vec![0.0; 13], 7).is_err());
    }

    #[test]
    fn labeling_must_be_bijective() {
        assert!(BitLabeling::from_point_of_word(vec![0, 0, 1]).is_err());
        assert!(BitLabeling::from_point_of_word(vec![0, 3, 1]).is_err());
        let mut l = BitLabeling::from_point_of_word(vec![2, 0, 1]).unwrap();
        assert_eq!(l.word(2), 0);
        l.swap_points(0, 2);
        for b in 0..3 {
            assert_eq!(l.word(l.point(b)), b);
        }
    }

    proptest! {
        #[test]
        fn stack_round_trip_is_exact(dims in 1usize..9, m in 1usize..70, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..dims * m).map(|_| rng.random_range(-10.0..10.0)).collect();
            let c = JointConstellation::from_columns(dims, data).unwrap();
            let back = c.stack().unstack(m, dims).unwrap();
            prop_assert_eq!(back.as_slice(), c.as_slice());
        }

        #[test]
        fn labeling_inverse(perm in Just((0..64usize).collect::<Vec<_>>()).prop_shuffle()) {
            let l = BitLabeling::from_point_of_word(perm).unwrap();
            for b in 0..64 {
                prop_assert_eq!(l.word(l.point(b)), b);
            }
        }
    }
}
