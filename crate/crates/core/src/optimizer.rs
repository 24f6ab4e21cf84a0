//! Max-min-distance constellation design by sequential convex programming.
//!
//! Each iteration replaces the non-convex pair constraints
//! `‖c^(p) - c^(q)‖² ≥ d²` by their tangent planes at the incumbent and
//! solves the resulting convex program (non-negative time samples, average
//! power budget). Independent random restarts explore the non-convex
//! landscape; the best restart wins.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::Preequalizer;
use crate::error::{Error, Result};
use crate::model::{squared_distance, JointConstellation, Mode, StackedVector, SystemConfig};
use crate::solver::{
    self, AffineRow, ConvexSubproblem, QuadConstraint, QuadForm, SolveStatus, SolverOptions,
};
use crate::transform::{combined_samples, phi_matrix, time_samples};

/// Feasibility tolerance for reported constraints.
pub const EPS_FEAS: f64 = 1e-7;

fn check_pair(v: &StackedVector, p: usize, q: usize) -> Result<()> {
    let m = v.points();
    if p >= q || q >= m {
        return Err(Error::IndexOutOfRange(format!(
            "pair ({p}, {q}) must satisfy p < q < {m}"
        )));
    }
    Ok(())
}

/// `‖c^(p) - c^(q)‖²`, i.e. `c^(s)ᵀ E_pq c^(s)` without forming `E_pq`.
/// Indices are zero-based.
pub fn pairwise_distance(v: &StackedVector, p: usize, q: usize) -> Result<f64> {
    check_pair(v, p, q)?;
    Ok(squared_distance(v.block(p), v.block(q)))
}

/// Tangent plane of the squared pair distance at a reference point:
/// `L(c) = 2 v0ᵀ E_pq c - v0ᵀ E_pq v0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDistance {
    pub p: usize,
    pub q: usize,
    /// `v0^(p) - v0^(q)`.
    pub diff: Vec<f64>,
    /// `-v0ᵀ E_pq v0`.
    pub offset: f64,
}

impl LinearizedDistance {
    pub fn eval(&self, v: &StackedVector) -> f64 {
        let (a, b) = (v.block(self.p), v.block(self.q));
        2.0 * self
            .diff
            .iter()
            .zip(a.iter().zip(b))
            .map(|(g, (x, y))| g * (x - y))
            .sum::<f64>()
            + self.offset
    }

    /// Dense gradient `2 E_pq v0` over the stacked layout of `m` points.
    pub fn gradient(&self, m: usize) -> Vec<f64> {
        let d = self.diff.len();
        let mut g = vec![0.0; m * d];
        for (i, v) in self.diff.iter().enumerate() {
            g[self.p * d + i] = 2.0 * v;
            g[self.q * d + i] = -2.0 * v;
        }
        g
    }

    fn row(&self, d: usize) -> AffineRow {
        let mut coeffs = Vec::with_capacity(2 * d);
        for (i, v) in self.diff.iter().enumerate() {
            coeffs.push((self.p * d + i, 2.0 * v));
        }
        for (i, v) in self.diff.iter().enumerate() {
            coeffs.push((self.q * d + i, -2.0 * v));
        }
        // L(c) - s ≥ 0
        AffineRow::new(coeffs, true, -self.offset)
    }
}

pub fn linearize_distance(v0: &StackedVector, p: usize, q: usize) -> Result<LinearizedDistance> {
    check_pair(v0, p, q)?;
    let diff: Vec<f64> = v0
        .block(p)
        .iter()
        .zip(v0.block(q))
        .map(|(a, b)| a - b)
        .collect();
    let offset = -diff.iter().map(|x| x * x).sum::<f64>();
    Ok(LinearizedDistance { p, q, diff, offset })
}

/// Per-coordinate power weights: the DC bin once, every subcarrier
/// coordinate twice (its conjugate mirror carries the same energy).
pub fn power_weights(dims: usize) -> Vec<f64> {
    let mut w = vec![2.0; dims];
    w[0] = 1.0;
    w
}

/// Average power of the joint points, `(1/M) Σ_m [c_1² + 2 Σ_{i>1} c_i²]`,
/// plus `M_f · P_indep` for the independent bins.
pub fn average_power(v: &StackedVector, config: &SystemConfig) -> f64 {
    let w = power_weights(v.dims);
    let m = v.points();
    let joint: f64 = v
        .values
        .chunks_exact(v.dims)
        .map(|c| c.iter().zip(&w).map(|(x, w)| w * x * x).sum::<f64>())
        .sum::<f64>()
        / m as f64;
    joint + config.m_f() as f64 * config.p_indep
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Relative `d_min` improvement below which a restart stops.
    pub tol_scp: f64,
    pub solver: SolverOptions,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            restarts: 100,
            seed: 0,
            max_iters: 50,
            tol_scp: 1e-5,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    /// True minimum distance of the incumbent after every accepted step.
    pub trace: Vec<f64>,
    /// `√s` of the last accepted subproblem solution.
    pub subproblem_d_min: f64,
    pub iterations: usize,
    pub feasible: bool,
    pub solver_failures: usize,
    pub d_min: f64,
    pub power: f64,
    points: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DesignResult {
    pub constellation: JointConstellation,
    pub d_min: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub feasible: bool,
    /// Set for `M = 1`, where the minimum distance is undefined.
    pub degenerate: bool,
    pub best_restart: usize,
    pub restarts: Vec<RestartOutcome>,
}

/// Precomputed data shared by every restart.
pub struct DesignProblem<'a> {
    config: &'a SystemConfig,
    eq: Preequalizer,
    dims: usize,
    /// Row-major `N × dims`: `φ_nᵀ F` for each stored sample index.
    sample_rows: Vec<f64>,
    quad_block: Vec<f64>,
    budget: f64,
}

impl<'a> DesignProblem<'a> {
    pub fn new(config: &'a SystemConfig) -> Result<Self> {
        config.check()?;
        let d = config.dims();
        let eq = Preequalizer::build(&config.channel, config.n, config.n_j, config.alpha)?;
        let phi = phi_matrix(config.n, config.n_j);
        let f = eq.to_dense();
        let mut sample_rows = vec![0.0; config.n * d];
        for r in 0..config.n {
            for c in 0..d {
                sample_rows[r * d + c] = (0..d).map(|k| phi[r * d + k] * f[k * d + c]).sum();
            }
        }
        // Fᵀ W F / M
        let w = power_weights(d);
        let mut quad_block = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                quad_block[r * d + c] =
                    (0..d).map(|k| f[k * d + r] * w[k] * f[k * d + c]).sum::<f64>() / config.m as f64;
            }
        }
        Ok(DesignProblem {
            config,
            eq,
            dims: d,
            sample_rows,
            quad_block,
            budget: config.joint_budget(),
        })
    }

    pub fn preequalizer(&self) -> &Preequalizer {
        &self.eq
    }

    fn samples(&self, c: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let d = self.dims;
        let c = c.to_vec();
        self.sample_rows
            .chunks_exact(d)
            .map(move |row| row.iter().zip(&c).map(|(a, b)| a * b).sum())
    }

    fn power(&self, values: &[f64]) -> f64 {
        QuadForm::BlockDiagonal {
            block: self.quad_block.clone(),
            size: self.dims,
        }
        .eval(values)
    }

    /// Random feasible starting point in the receiver-side coordinates.
    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let cfg = self.config;
        let (m, d) = (cfg.m, self.dims);
        let p = self.budget;
        let dc_hi = (p / m as f64).sqrt();
        let ac_hi = (p / (4.0 * m as f64 * cfg.n_j.max(1) as f64)).sqrt();
        let phi = phi_matrix(cfg.n, cfg.n_j);
        let dc_coeff = phi[0];
        let mut u = Vec::with_capacity(m * d);
        for _ in 0..m {
            let mut col = vec![0.0; d];
            col[0] = rng.random_range(0.0..dc_hi);
            for x in col[1..].iter_mut() {
                *x = rng.random_range(-ac_hi..ac_hi);
            }
            let min = phi
                .chunks_exact(d)
                .map(|row| row.iter().zip(&col).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            if min < 0.0 {
                col[0] += -min / dc_coeff;
            }
            u.extend(col);
        }
        let w = power_weights(d);
        let power: f64 = u
            .chunks_exact(d)
            .map(|c| c.iter().zip(&w).map(|(x, w)| w * x * x).sum::<f64>())
            .sum::<f64>()
            / m as f64;
        let mut scale = (p / power).sqrt() * (1.0 - 1e-6);
        if let Some(max) = cfg.dynamic_range_max {
            let peak = u
                .chunks_exact(d)
                .flat_map(|col| {
                    phi.chunks_exact(d)
                        .map(move |row| row.iter().zip(col).map(|(a, b)| a * b).sum::<f64>())
                })
                .fold(0.0f64, f64::max);
            if peak * scale > max {
                scale = (1.0 - 1e-6) * max / peak;
            }
        }
        u.chunks_exact(d)
            .flat_map(|col| {
                let scaled: Vec<f64> = col.iter().map(|x| x * scale).collect();
                self.eq.apply_inverse(&scaled)
            })
            .collect()
    }

    fn subproblem(&self, incumbent: &StackedVector) -> ConvexSubproblem {
        let (m, d) = (self.config.m, self.dims);
        let mut rows = Vec::with_capacity(m * (m - 1) / 2 + 2 * m * self.config.n);
        for p in 0..m {
            for q in p + 1..m {
                let lin = linearize_distance(incumbent, p, q).expect("valid pair");
                rows.push(lin.row(d));
            }
        }
        for pt in 0..m {
            for row in self.sample_rows.chunks_exact(d) {
                let coeffs = row.iter().enumerate().map(|(i, &a)| (pt * d + i, a)).collect();
                rows.push(AffineRow::new(coeffs, false, 0.0));
            }
            if let Some(max) = self.config.dynamic_range_max {
                for row in self.sample_rows.chunks_exact(d) {
                    let coeffs = row.iter().enumerate().map(|(i, &a)| (pt * d + i, -a)).collect();
                    rows.push(AffineRow::new(coeffs, false, -max));
                }
            }
        }
        ConvexSubproblem {
            n_vars: m * d,
            rows,
            quad: Some(QuadConstraint {
                form: QuadForm::BlockDiagonal {
                    block: self.quad_block.clone(),
                    size: d,
                },
                budget: self.budget,
            }),
        }
    }

    fn is_feasible(&self, values: &[f64]) -> bool {
        let d = self.dims;
        let max = self.config.dynamic_range_max.unwrap_or(f64::INFINITY);
        let ok_samples = values.chunks_exact(d).all(|c| {
            self.samples(c)
                .all(|x| x >= -EPS_FEAS && x <= max + EPS_FEAS)
        });
        ok_samples && self.power(values) <= self.budget * (1.0 + EPS_FEAS)
    }

    fn min_distance(&self, values: &[f64]) -> f64 {
        let d = self.dims;
        let m = values.len() / d;
        let mut best = f64::INFINITY;
        for p in 0..m {
            for q in p + 1..m {
                best = best.min(squared_distance(
                    &values[p * d..(p + 1) * d],
                    &values[q * d..(q + 1) * d],
                ));
            }
        }
        best.sqrt()
    }

    /// One SCP restart from a random feasible point.
    pub fn run_restart(&self, opts: &DesignOptions, index: usize) -> RestartOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(index as u64);
        let d = self.dims;
        let mut c = StackedVector {
            values: self.initial_point(&mut rng),
            dims: d,
        };
        let mut d_min = self.min_distance(&c.values);
        let mut trace = vec![d_min];
        let mut subproblem_d_min = 0.0;
        let mut iterations = 0;
        let mut failures = 0;
        for _ in 0..opts.max_iters {
            iterations += 1;
            let sub = self.subproblem(&c);
            let warm: Vec<f64> = c.values.iter().map(|x| x * (1.0 - 1e-6)).collect();
            let sol = match solver::solve(&sub, &warm, &opts.solver) {
                Ok(s) => s,
                Err(_) => {
                    failures += 1;
                    break;
                }
            };
            match sol.status {
                SolveStatus::Optimal => {}
                SolveStatus::NumericalFailure => failures += 1,
                SolveStatus::Infeasible => {
                    failures += 1;
                    break;
                }
            }
            if !sol.s.is_finite() || !self.is_feasible(&sol.c) {
                break;
            }
            let next = self.min_distance(&sol.c);
            if next <= d_min {
                break;
            }
            let rel = (next - d_min) / d_min.max(f64::MIN_POSITIVE);
            c.values = sol.c;
            d_min = next;
            subproblem_d_min = sol.s.max(0.0).sqrt();
            trace.push(d_min);
            if rel < opts.tol_scp {
                break;
            }
        }
        let feasible = self.is_feasible(&c.values);
        let power = self.power(&c.values) + self.config.m_f() as f64 * self.config.p_indep;
        RestartOutcome {
            trace,
            subproblem_d_min,
            iterations,
            feasible,
            solver_failures: failures,
            d_min,
            power,
            points: c.values,
        }
    }
}

/// Designs a constellation for `config`, running `opts.restarts` restarts
/// (in parallel) and returning the best.
pub fn scp_design(config: &SystemConfig, opts: &DesignOptions) -> Result<DesignResult> {
    let problem = DesignProblem::new(config)?;
    let d = config.dims();
    if config.m == 1 {
        return Ok(DesignResult {
            constellation: JointConstellation::from_columns(d, vec![0.0; d])?,
            d_min: f64::INFINITY,
            iterations: 0,
            restarts_used: 0,
            feasible: true,
            degenerate: true,
            best_restart: 0,
            restarts: Vec::new(),
        });
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidInput("at least one restart is required".into()));
    }
    let outcomes: Vec<RestartOutcome> = (0..opts.restarts)
        .into_par_iter()
        .map(|i| problem.run_restart(opts, i))
        .collect();
    let best = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.feasible)
        .fold(None::<(usize, &RestartOutcome)>, |acc, (i, o)| match acc {
            None => Some((i, o)),
            Some((j, b)) => {
                if o.d_min > b.d_min || (o.d_min == b.d_min && o.power < b.power) {
                    Some((i, o))
                } else {
                    Some((j, b))
                }
            }
        });
    let (best_restart, feasible) = match best {
        Some((i, _)) => (i, true),
        None => (0, false),
    };
    let chosen = &outcomes[best_restart];
    let constellation = JointConstellation::from_columns(d, chosen.points.clone())?;
    Ok(DesignResult {
        d_min: chosen.d_min,
        iterations: chosen.iterations,
        restarts_used: outcomes.len(),
        feasible,
        degenerate: false,
        best_restart,
        constellation,
        restarts: outcomes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeSample { point: usize, value: f64 },
    DynamicRange { point: usize, value: f64 },
    Power { power: f64, budget: f64 },
    Shape(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeSample { point, value } => {
                write!(f, "point {point} has time sample {value:e} < 0")
            }
            Violation::DynamicRange { point, value } => {
                write!(f, "point {point} has time sample {value} above the dynamic range")
            }
            Violation::Power { power, budget } => {
                write!(f, "average power {power} exceeds budget {budget}")
            }
            Violation::Shape(s) => write!(f, "shape: {s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub d_min: f64,
    pub power: f64,
    pub power_budget: f64,
    /// Minimum transmitted joint time sample over all points.
    pub min_sample: f64,
    pub max_sample: f64,
    /// Partial mode: bias needed to keep every combination with the
    /// independent symbols non-negative, and the resulting minimum sample.
    pub residual_bias: Option<f64>,
    pub min_combined_sample: Option<f64>,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "d_min          {:.9}", self.d_min)?;
        writeln!(f, "power          {:.9} (budget {:.9})", self.power, self.power_budget)?;
        writeln!(f, "min_sample     {:.3e}", self.min_sample)?;
        writeln!(f, "max_sample     {:.9}", self.max_sample)?;
        if let (Some(b), Some(m)) = (self.residual_bias, self.min_combined_sample) {
            writeln!(f, "residual_bias  {b:.9}")?;
            writeln!(f, "min_combined   {m:.3e}")?;
        }
        if self.violations.is_empty() {
            writeln!(f, "status         ok")
        } else {
            writeln!(f, "status         {} violation(s)", self.violations.len())?;
            for v in &self.violations {
                writeln!(f, "  - {v}")?;
            }
            Ok(())
        }
    }
}

/// 4-QAM alphabet carrying `p_indep` per bin.
pub fn independent_alphabet(p_indep: f64) -> Vec<num_complex::Complex64> {
    let a = (p_indep / 2.0).sqrt();
    crate::dco::gray_qam4().into_iter().map(|s| s * a).collect()
}

/// Recomputes the true (non-linearized) quantities of a design and flags
/// every constraint violated beyond [`EPS_FEAS`].
pub fn verify_design(constellation: &JointConstellation, config: &SystemConfig) -> Result<VerifyReport> {
    config.check()?;
    let d = config.dims();
    if constellation.dims() != d || constellation.size() != config.m {
        return Err(Error::DimensionMismatch(format!(
            "constellation is {}×{}, config expects {}×{}",
            constellation.dims(),
            constellation.size(),
            d,
            config.m
        )));
    }
    let eq = Preequalizer::build(&config.channel, config.n, config.n_j, config.alpha)?;
    let tx: Vec<Vec<f64>> = constellation.columns().map(|c| eq.apply(c)).collect();
    let tx_stack = StackedVector::new(tx.concat(), d)?;
    let power = average_power(&tx_stack, config);
    let mut violations = Vec::new();
    let mut min_sample = f64::INFINITY;
    let mut max_sample = f64::NEG_INFINITY;
    let dr = config.dynamic_range_max;
    for (m, col) in tx.iter().enumerate() {
        let x = time_samples(col, config.n)?;
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        min_sample = min_sample.min(lo);
        max_sample = max_sample.max(hi);
        if lo < -EPS_FEAS {
            violations.push(Violation::NegativeSample { point: m, value: lo });
        }
        if let Some(max) = dr {
            if hi > max + EPS_FEAS {
                violations.push(Violation::DynamicRange { point: m, value: hi });
            }
        }
    }
    if power > config.p_total * (1.0 + EPS_FEAS) {
        violations.push(Violation::Power {
            power,
            budget: config.p_total,
        });
    }

    let (mut residual_bias, mut min_combined) = (None, None);
    if config.mode == Mode::Partial {
        let bins = config.independent_bins();
        let alphabet = independent_alphabet(config.p_indep);
        let q = alphabet.len();
        let count = (q as u128).checked_pow(bins.len() as u32).unwrap_or(u128::MAX)
            * config.m as u128;
        if count > crate::dco::MAX_COMBINATIONS {
            return Err(Error::TooManyCombinations {
                count,
                limit: crate::dco::MAX_COMBINATIONS,
            });
        }
        let combos = (q as u64).pow(bins.len() as u32);
        let mut lows = Vec::new();
        for idx in 0..combos {
            let mut indep = vec![num_complex::Complex64::new(0.0, 0.0); config.n];
            let mut r = idx as usize;
            for &k in &bins {
                let s = alphabet[r % q];
                r /= q;
                indep[k] = s;
                indep[config.n - k] = s.conj();
            }
            for col in &tx {
                let x = combined_samples(col, &indep, 0.0)?;
                lows.push(x.iter().cloned().fold(f64::INFINITY, f64::min));
            }
        }
        let worst = lows.iter().cloned().fold(f64::INFINITY, f64::min);
        let bias = (-worst).max(0.0);
        residual_bias = Some(bias);
        min_combined = Some(worst + bias);
    }

    Ok(VerifyReport {
        d_min: constellation.min_distance(),
        power,
        power_budget: config.p_total,
        min_sample,
        max_sample,
        residual_bias,
        min_combined_sample: min_combined,
        violations,
    })
}
