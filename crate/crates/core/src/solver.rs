//! Interior-point solver for the convex subproblem of each design
//! iteration:
//!
//! ```text
//! maximize  s
//! s.t.      a_i·c - [s] ≥ b_i     (affine rows, some involving s)
//!           cᵀ Q c ≤ P            (optional convex quadratic budget)
//! ```
//!
//! The budget is written as the second-order cone constraint
//! `(√P, U c) ⪰ 0` with `Q = UᵀU`, and the problem is solved by a
//! primal-dual method with Nesterov-Todd scaling and Mehrotra
//! predictor-corrector steps. Each step factors one dense symmetric matrix
//! of size `n_vars + 1`.

use faer::linalg::solvers::SolveCore;
use faer::{Conj, MatMut, MatRef, Side};

use crate::error::{Error, Result};

/// `Σ coeffs·c - [s] ≥ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub coeffs: Vec<(usize, f64)>,
    pub involves_s: bool,
    pub rhs: f64,
}

impl AffineRow {
    pub fn new(coeffs: Vec<(usize, f64)>, involves_s: bool, rhs: f64) -> Self {
        AffineRow {
            coeffs,
            involves_s,
            rhs,
        }
    }

    /// Left-hand side `a·c - [s]`.
    pub fn eval(&self, c: &[f64], s: f64) -> f64 {
        let lin: f64 = self.coeffs.iter().map(|&(i, v)| v * c[i]).sum();
        if self.involves_s {
            lin - s
        } else {
            lin
        }
    }

    /// Constraint residual `lhs - rhs` (non-negative when satisfied).
    pub fn slack(&self, c: &[f64], s: f64) -> f64 {
        self.eval(c, s) - self.rhs
    }
}

/// Positive-semidefinite quadratic form.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadForm {
    Diagonal(Vec<f64>),
    /// The same row-major `size × size` block repeated along the diagonal.
    BlockDiagonal { block: Vec<f64>, size: usize },
    /// Row-major `n × n`.
    Dense(Vec<f64>),
}

impl QuadForm {
    /// `Q x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            QuadForm::Diagonal(d) => d.iter().zip(x).map(|(a, b)| a * b).collect(),
            QuadForm::BlockDiagonal { block, size } => {
                let mut out = vec![0.0; x.len()];
                for (xo, xi) in out.chunks_exact_mut(*size).zip(x.chunks_exact(*size)) {
                    for r in 0..*size {
                        xo[r] = (0..*size).map(|k| block[r * size + k] * xi[k]).sum();
                    }
                }
                out
            }
            QuadForm::Dense(q) => {
                let n = x.len();
                (0..n)
                    .map(|r| (0..n).map(|k| q[r * n + k] * x[k]).sum())
                    .collect()
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn check(&self, n: usize) -> Result<()> {
        let (ok, mat, size) = match self {
            QuadForm::Diagonal(d) => {
                if d.len() != n {
                    return Err(Error::DimensionMismatch("diagonal quad form".into()));
                }
                (d.iter().all(|&v| v >= -1e-10), None, 0)
            }
            QuadForm::BlockDiagonal { block, size } => {
                if *size == 0 || !n.is_multiple_of(*size) || block.len() != size * size {
                    return Err(Error::DimensionMismatch("block-diagonal quad form".into()));
                }
                (true, Some(block), *size)
            }
            QuadForm::Dense(q) => {
                if q.len() != n * n {
                    return Err(Error::DimensionMismatch("dense quad form".into()));
                }
                (true, Some(q), n)
            }
        };
        let psd = ok
            && match mat {
                None => true,
                Some(m) => {
                    for r in 0..size {
                        for c in 0..r {
                            let (a, b) = (m[r * size + c], m[c * size + r]);
                            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                                return Err(Error::InvalidInput(
                                    "quadratic form is not symmetric".into(),
                                ));
                            }
                        }
                    }
                    // row-major symmetric == column-major symmetric
                    let view = MatRef::from_column_major_slice(m.as_slice(), size, size);
                    let eig = view
                        .self_adjoint_eigenvalues(Side::Lower)
                        .map_err(|_| Error::InvalidInput("eigenvalue solve failed".into()))?;
                    eig.first().is_none_or(|&l| l >= -1e-10)
                }
            };
        if psd {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "quadratic form is not positive semidefinite".into(),
            ))
        }
    }

    /// Adds `scale · Q` into the lower triangle of a column-major matrix of
    /// leading dimension `ld`.
    fn add_to_lower(&self, scale: f64, h: &mut [f64], ld: usize) {
        match self {
            QuadForm::Diagonal(d) => {
                for (i, v) in d.iter().enumerate() {
                    h[i * ld + i] += scale * v;
                }
            }
            QuadForm::BlockDiagonal { block, size } => {
                let blocks = h_blocks(ld, *size);
                for b in 0..blocks {
                    let off = b * size;
                    for c in 0..*size {
                        for r in c..*size {
                            h[(off + c) * ld + off + r] += scale * block[r * size + c];
                        }
                    }
                }
            }
            QuadForm::Dense(q) => {
                let n = (q.len() as f64).sqrt() as usize;
                for c in 0..n {
                    for r in c..n {
                        h[c * ld + r] += scale * q[r * n + c];
                    }
                }
            }
        }
    }
}

fn h_blocks(ld: usize, size: usize) -> usize {
    // the last column of the Newton matrix belongs to the scalar variable
    (ld - 1) / size
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub form: QuadForm,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSubproblem {
    pub n_vars: usize,
    pub rows: Vec<AffineRow>,
    pub quad: Option<QuadConstraint>,
}

impl ConvexSubproblem {
    /// Largest violation over all constraints at `(c, s)`; zero or negative
    /// when feasible.
    pub fn max_violation(&self, c: &[f64], s: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for r in &self.rows {
            worst = worst.max(-r.slack(c, s));
        }
        if let Some(q) = &self.quad {
            worst = worst.max(q.form.eval(c) - q.budget);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative duality-gap target.
    pub tol: f64,
    /// Bound on the dual residual at termination, relative to the largest
    /// dual entry.
    pub dual_tol: f64,
    /// Initial complementarity: the starting duals satisfy `s∘z = mu0·e`.
    pub mu0: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Starting slacks are raised to at least this value; the iterates then
    /// recover primal feasibility along the Newton steps.
    pub slack_floor: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-7,
            dual_tol: 1e-8,
            mu0: 1.0,
            step_fraction: 0.99,
            slack_floor: 1e-2,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub c: Vec<f64>,
    pub s: f64,
    pub status: SolveStatus,
    /// Complementarity gap `sᵀz` at the returned point.
    pub gap: f64,
    pub iterations: usize,
    /// Objective value `s` at each main-phase iterate.
    pub objective_trace: Vec<f64>,
}

/// Rows in compressed form over `x = (c, t)`, where `t` is `s` in the main
/// phase and the infeasibility margin in phase one.
struct Rows {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
    rhs: Vec<f64>,
}

impl Rows {
    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.ptr[i]..self.ptr[i + 1];
        (&self.idx[r.clone()], &self.val[r])
    }

    fn dot(&self, i: usize, z: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, v)| v * z[j]).sum()
    }
}

/// Builds compressed rows; `extra` is the coefficient of the scalar
/// variable (index `n`), added to rows involving `s` or, when `all_rows`,
/// to every row.
fn compress<'a>(
    rows: impl Iterator<Item = &'a AffineRow>,
    n: usize,
    extra: f64,
    all_rows: bool,
) -> Rows {
    let mut out = Rows {
        ptr: vec![0],
        idx: Vec::new(),
        val: Vec::new(),
        rhs: Vec::new(),
    };
    let mut buf: Vec<(usize, f64)> = Vec::new();
    for r in rows {
        buf.clear();
        buf.extend_from_slice(&r.coeffs);
        buf.sort_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(j, v) in &buf {
            if j == last {
                *out.val.last_mut().unwrap() += v;
            } else {
                out.idx.push(j);
                out.val.push(v);
                last = j;
            }
        }
        if all_rows || r.involves_s {
            out.idx.push(n);
            out.val.push(extra);
        }
        out.rhs.push(r.rhs);
        out.ptr.push(out.idx.len());
    }
    out
}

/// `U` with `Q = UᵀU`, in the layout of the form (row-major blocks).
enum Factor {
    Diagonal(Vec<f64>),
    Blocks { u: Vec<f64>, size: usize },
}

fn psd_root(m: &[f64], size: usize) -> Result<Vec<f64>> {
    let view = MatRef::from_column_major_slice(m, size, size);
    let eig = view
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::InvalidInput("eigendecomposition failed".into()))?;
    let (vals, vecs) = (eig.S().column_vector(), eig.U());
    let mut u = vec![0.0; size * size];
    for r in 0..size {
        let l = vals[r].max(0.0).sqrt();
        for c in 0..size {
            u[r * size + c] = l * vecs[(c, r)];
        }
    }
    Ok(u)
}

impl Factor {
    fn new(form: &QuadForm, n: usize) -> Result<Self> {
        Ok(match form {
            QuadForm::Diagonal(d) => Factor::Diagonal(d.iter().map(|v| v.max(0.0).sqrt()).collect()),
            QuadForm::BlockDiagonal { block, size } => Factor::Blocks {
                u: psd_root(block, *size)?,
                size: *size,
            },
            QuadForm::Dense(q) => Factor::Blocks {
                u: psd_root(q, n)?,
                size: n,
            },
        })
    }

    /// `U x`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Factor::Diagonal(d) => d.iter().zip(x).map(|(a, b)| a * b).collect(),
            Factor::Blocks { u, size } => {
                let mut out = vec![0.0; x.len()];
                for (o, xi) in out.chunks_exact_mut(*size).zip(x.chunks_exact(*size)) {
                    for r in 0..*size {
                        o[r] = (0..*size).map(|k| u[r * size + k] * xi[k]).sum();
                    }
                }
                out
            }
        }
    }

    /// `Uᵀ y`.
    fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Factor::Diagonal(d) => d.iter().zip(y).map(|(a, b)| a * b).collect(),
            Factor::Blocks { u, size } => {
                let mut out = vec![0.0; y.len()];
                for (o, yi) in out.chunks_exact_mut(*size).zip(y.chunks_exact(*size)) {
                    for (r, &v) in yi.iter().enumerate() {
                        for c in 0..*size {
                            o[c] += u[r * size + c] * v;
                        }
                    }
                }
                out
            }
        }
    }
}

/// Element of `R_+^m × SOC`; `soc` is empty without a quadratic budget.
#[derive(Debug, Clone, PartialEq)]
struct Cone {
    lin: Vec<f64>,
    soc: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sqrt(u0² - ‖u1‖²)`, factored for accuracy near the boundary.
fn soc_det(u: &[f64]) -> f64 {
    let r = dot(&u[1..], &u[1..]).sqrt();
    (u[0] - r) * (u[0] + r)
}

impl Cone {
    fn dot(&self, o: &Cone) -> f64 {
        dot(&self.lin, &o.lin) + dot(&self.soc, &o.soc)
    }

    fn axpy(&mut self, a: f64, o: &Cone) {
        for (x, y) in self.lin.iter_mut().zip(&o.lin) {
            *x += a * y;
        }
        for (x, y) in self.soc.iter_mut().zip(&o.soc) {
            *x += a * y;
        }
    }

    fn sub(&self, o: &Cone) -> Cone {
        let mut out = self.clone();
        out.axpy(-1.0, o);
        out
    }

    fn is_interior(&self) -> bool {
        self.lin.iter().all(|&v| v > 0.0) && (self.soc.is_empty() || (self.soc[0] > 0.0 && soc_det(&self.soc) > 0.0))
    }

    /// Jordan product `u∘v`.
    fn product(&self, v: &Cone) -> Cone {
        let lin = self.lin.iter().zip(&v.lin).map(|(a, b)| a * b).collect();
        let soc = if self.soc.is_empty() {
            Vec::new()
        } else {
            let (u0, v0) = (self.soc[0], v.soc[0]);
            let mut out = vec![dot(&self.soc, &v.soc)];
            out.extend(self.soc[1..].iter().zip(&v.soc[1..]).map(|(a, b)| u0 * b + v0 * a));
            out
        };
        Cone { lin, soc }
    }

    /// Solves `self∘x = v` for `x`.
    fn divide(&self, v: &Cone) -> Cone {
        let lin = v.lin.iter().zip(&self.lin).map(|(a, b)| a / b).collect();
        let soc = if self.soc.is_empty() {
            Vec::new()
        } else {
            let (l0, v0) = (self.soc[0], v.soc[0]);
            let x0 = (l0 * v0 - dot(&self.soc[1..], &v.soc[1..])) / soc_det(&self.soc);
            let mut out = vec![x0];
            out.extend(v.soc[1..].iter().zip(&self.soc[1..]).map(|(vi, li)| (vi - x0 * li) / l0));
            out
        };
        Cone { lin, soc }
    }

    /// `mu · self⁻¹`.
    fn inverse_scaled(&self, mu: f64) -> Cone {
        let lin = self.lin.iter().map(|v| mu / v).collect();
        let soc = if self.soc.is_empty() {
            Vec::new()
        } else {
            let d = soc_det(&self.soc);
            let mut out = vec![mu * self.soc[0] / d];
            out.extend(self.soc[1..].iter().map(|v| -mu * v / d));
            out
        };
        Cone { lin, soc }
    }

    /// Moves the point so that every linear entry is at least `floor` and
    /// the cone entry is at least `floor` inside the boundary.
    fn raise_to(&mut self, floor: f64) {
        self.lin.iter_mut().for_each(|v| *v = v.max(floor));
        if !self.soc.is_empty() {
            let r = dot(&self.soc[1..], &self.soc[1..]).sqrt();
            self.soc[0] = self.soc[0].max(r + floor);
        }
    }

    /// Identity element scaled by `a`.
    fn identity_like(&self, a: f64) -> Cone {
        let mut soc = vec![0.0; self.soc.len()];
        if let Some(s0) = soc.first_mut() {
            *s0 = a;
        }
        Cone {
            lin: vec![a; self.lin.len()],
            soc,
        }
    }

    /// Largest `α` with `self + α d` in the cone.
    fn max_step(&self, d: &Cone) -> f64 {
        let mut amax = f64::INFINITY;
        for (u, du) in self.lin.iter().zip(&d.lin) {
            if *du < 0.0 {
                amax = amax.min(-u / du);
            }
        }
        if !self.soc.is_empty() {
            let (u, du) = (&self.soc, &d.soc);
            if du[0] < 0.0 {
                amax = amax.min(-u[0] / du[0]);
            }
            // (u0 + α d0)² - ‖u1 + α d1‖² = a α² + 2 b α + c
            let a = du[0] * du[0] - dot(&du[1..], &du[1..]);
            let b = u[0] * du[0] - dot(&u[1..], &du[1..]);
            let c = soc_det(u);
            let root = if a.abs() <= 1e-300 {
                if b < 0.0 {
                    -c / (2.0 * b)
                } else {
                    f64::INFINITY
                }
            } else {
                let disc = b * b - a * c;
                if disc < 0.0 {
                    f64::INFINITY
                } else {
                    // numerically stable roots of a α² + 2 b α + c
                    let q = -(b + b.signum() * disc.sqrt());
                    let (r1, r2) = (q / a, if q != 0.0 { c / q } else { f64::INFINITY });
                    [r1, r2]
                        .into_iter()
                        .filter(|r| *r > 0.0)
                        .fold(f64::INFINITY, f64::min)
                }
            };
            amax = amax.min(root);
        }
        amax
    }
}

/// Nesterov-Todd scaling `W` with `W z = W⁻¹ s`.
struct Scaling {
    w: Vec<f64>,
    eta: f64,
    wbar: Vec<f64>,
}

impl Scaling {
    fn new(s: &Cone, z: &Cone) -> Self {
        let w = s.lin.iter().zip(&z.lin).map(|(a, b)| (a / b).sqrt()).collect();
        if s.soc.is_empty() {
            return Scaling {
                w,
                eta: 1.0,
                wbar: Vec::new(),
            };
        }
        let ns = soc_det(&s.soc).sqrt();
        let nz = soc_det(&z.soc).sqrt();
        let sb: Vec<f64> = s.soc.iter().map(|v| v / ns).collect();
        let zb: Vec<f64> = z.soc.iter().map(|v| v / nz).collect();
        let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
        let mut wbar = vec![(sb[0] + zb[0]) / (2.0 * gamma)];
        wbar.extend(sb[1..].iter().zip(&zb[1..]).map(|(a, b)| (a - b) / (2.0 * gamma)));
        Scaling {
            w,
            eta: (ns / nz).sqrt(),
            wbar,
        }
    }

    fn soc_apply(&self, x: &[f64], inverse: bool) -> Vec<f64> {
        let wb = &self.wbar;
        let sign = if inverse { -1.0 } else { 1.0 };
        let scale = if inverse { 1.0 / self.eta } else { self.eta };
        let t = dot(&wb[1..], &x[1..]);
        let mut out = vec![scale * (wb[0] * x[0] + sign * t)];
        let k = t / (1.0 + wb[0]) + sign * x[0];
        out.extend(x[1..].iter().zip(&wb[1..]).map(|(xi, wi)| scale * (xi + k * wi)));
        out
    }

    fn apply(&self, x: &Cone) -> Cone {
        Cone {
            lin: x.lin.iter().zip(&self.w).map(|(a, b)| a * b).collect(),
            soc: if x.soc.is_empty() { Vec::new() } else { self.soc_apply(&x.soc, false) },
        }
    }

    fn apply_inv(&self, x: &Cone) -> Cone {
        Cone {
            lin: x.lin.iter().zip(&self.w).map(|(a, b)| a / b).collect(),
            soc: if x.soc.is_empty() { Vec::new() } else { self.soc_apply(&x.soc, true) },
        }
    }
}

/// The subproblem as `minimize obj_sign·x_n  s.t.  h - G x ∈ R_+^m × SOC`
/// over `x = (c, t)`. The linear slacks are `a_i·x - rhs_i`; the cone slack
/// is `(√P, U c)`.
struct Conic<'a> {
    n: usize,
    rows: Rows,
    quad: Option<(&'a QuadForm, Factor, f64)>,
    obj_sign: f64,
}

const REFINE_PASSES: usize = 1;

/// Largest row violation accepted at termination.
const PRIMAL_TOL: f64 = 1e-10;

enum Outcome {
    Stop(SolveStatus),
    Continue,
}

struct IpmRun {
    x: Vec<f64>,
    status: SolveStatus,
    gap: f64,
    iterations: usize,
    trace: Vec<f64>,
}

impl<'a> Conic<'a> {
    fn new(n: usize, rows: Rows, quad: Option<&'a QuadConstraint>, obj_sign: f64) -> Result<Self> {
        let quad = match quad {
            Some(q) => Some((&q.form, Factor::new(&q.form, n)?, q.budget.sqrt())),
            None => None,
        };
        Ok(Conic {
            n,
            rows,
            quad,
            obj_sign,
        })
    }

    fn nz(&self) -> usize {
        self.n + 1
    }

    /// `h - G x`.
    fn slack(&self, x: &[f64]) -> Cone {
        let lin = (0..self.rows.len())
            .map(|i| self.rows.dot(i, x) - self.rows.rhs[i])
            .collect();
        let soc = match &self.quad {
            Some((_, u, root)) => {
                let mut v = vec![*root];
                v.extend(u.apply(&x[..self.n]));
                v
            }
            None => Vec::new(),
        };
        Cone { lin, soc }
    }

    /// `G x`.
    fn g_mul(&self, x: &[f64]) -> Cone {
        let lin = (0..self.rows.len()).map(|i| -self.rows.dot(i, x)).collect();
        let soc = match &self.quad {
            Some((_, u, _)) => {
                let mut v = vec![0.0];
                v.extend(u.apply(&x[..self.n]).into_iter().map(|e| -e));
                v
            }
            None => Vec::new(),
        };
        Cone { lin, soc }
    }

    /// `Gᵀ y`.
    fn gt_mul(&self, y: &Cone) -> Vec<f64> {
        let mut out = vec![0.0; self.nz()];
        for (i, yi) in y.lin.iter().enumerate() {
            let (idx, val) = self.rows.row(i);
            for (&j, v) in idx.iter().zip(val) {
                out[j] -= yi * v;
            }
        }
        if let Some((_, u, _)) = &self.quad {
            for (o, v) in out.iter_mut().zip(u.apply_t(&y.soc[1..])) {
                *o -= v;
            }
        }
        out
    }

    /// `Gᵀ W⁻² G`, lower triangle, column-major.
    fn normal_matrix(&self, sc: &Scaling) -> Vec<f64> {
        let nz = self.nz();
        let mut h = vec![0.0; nz * nz];
        for i in 0..self.rows.len() {
            let wgt = 1.0 / (sc.w[i] * sc.w[i]);
            let (idx, val) = self.rows.row(i);
            for (k, (&jk, &vk)) in idx.iter().zip(val).enumerate() {
                let wk = wgt * vk;
                for (&jl, &vl) in idx[..=k].iter().zip(&val[..=k]) {
                    h[jl * nz + jk] += wk * vl;
                }
            }
        }
        if let Some((form, u, _)) = &self.quad {
            // W⁻² = η⁻²(2 (J w̄)(J w̄)ᵀ - J) on the cone block
            let inv = 1.0 / (sc.eta * sc.eta);
            form.add_to_lower(inv, &mut h, nz);
            let v = u.apply_t(&sc.wbar[1..]);
            for c in 0..self.n {
                let a = 2.0 * inv * v[c];
                if a == 0.0 {
                    continue;
                }
                for r in c..self.n {
                    h[c * nz + r] += a * v[r];
                }
            }
        }
        h
    }

    /// One pass of the reduced solve for the scaled Newton system
    /// `GᵀΔz = dx`, `GΔx + Δs = dz`, `λ∘(WΔz + W⁻¹Δs) = ds`.
    fn kkt_once(
        &self,
        llt: &Factored,
        sc: &Scaling,
        lam: &Cone,
        dx: &[f64],
        dz: &Cone,
        ds: &Cone,
    ) -> (Vec<f64>, Cone, Cone) {
        let dst = lam.divide(ds);
        let w_dst = sc.apply(&dst);
        let t = sc.apply_inv(&sc.apply_inv(&dz.sub(&w_dst)));
        let mut rhs = self.gt_mul(&t);
        for (r, d) in rhs.iter_mut().zip(dx) {
            *r += d;
        }
        let step_x = llt.solve(rhs);
        let g = self.g_mul(&step_x);
        let mut u = g.clone();
        u.axpy(1.0, &w_dst);
        u.axpy(-1.0, dz);
        let step_z = sc.apply_inv(&sc.apply_inv(&u));
        let step_s = dz.sub(&g);
        (step_x, step_z, step_s)
    }

    /// Solves the scaled Newton system with iterative refinement.
    fn kkt(
        &self,
        llt: &Factored,
        sc: &Scaling,
        lam: &Cone,
        dx: &[f64],
        dz: &Cone,
        ds: &Cone,
    ) -> (Vec<f64>, Cone, Cone) {
        let (mut x, mut z, mut s) = self.kkt_once(llt, sc, lam, dx, dz, ds);
        for _ in 0..REFINE_PASSES {
            let ex: Vec<f64> = dx.iter().zip(self.gt_mul(&z)).map(|(a, b)| a - b).collect();
            let mut ez = dz.sub(&self.g_mul(&x));
            ez.axpy(-1.0, &s);
            let mut inner = sc.apply(&z);
            inner.axpy(1.0, &sc.apply_inv(&s));
            let es = ds.sub(&lam.product(&inner));
            let (cx, cz, cs) = self.kkt_once(llt, sc, lam, &ex, &ez, &es);
            x.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
            z.axpy(1.0, &cz);
            s.axpy(1.0, &cs);
        }
        (x, z, s)
    }

    /// Predictor-corrector iterations from a strictly feasible `x`.
    fn run(
        &self,
        mut x: Vec<f64>,
        opts: &SolverOptions,
        mut check: impl FnMut(&[f64], f64, f64, f64) -> Outcome,
    ) -> IpmRun {
        let n = self.n;
        let mut s = self.slack(&x);
        s.raise_to(opts.slack_floor);
        let mut z = s.inverse_scaled(opts.mu0);
        let nu = (s.lin.len() + usize::from(!s.soc.is_empty())) as f64;
        let mut trace = Vec::new();
        let mut gap = s.dot(&z);
        for k in 0..opts.max_iter {
            let mut rx = self.gt_mul(&z);
            rx[n] += self.obj_sign;
            let rz = s.sub(&self.slack(&x));
            gap = s.dot(&z);
            let zmax = z.lin.iter().chain(&z.soc).fold(1.0f64, |m, v| m.max(v.abs()));
            let dres = rx.iter().fold(0.0f64, |m, v| m.max(v.abs())) / zmax;
            trace.push(x[n]);
            if let Outcome::Stop(status) = check(&x, gap, dres, rz.lin.iter().chain(&rz.soc).fold(0.0f64, |m, v| m.max(v.abs()))) {
                return IpmRun {
                    x,
                    status,
                    gap,
                    iterations: k,
                    trace,
                };
            }
            let sc = Scaling::new(&s, &z);
            let lam = sc.apply(&z);
            let Some(llt) = Factored::new(self.normal_matrix(&sc), self.nz()) else {
                break;
            };
            let neg_rx: Vec<f64> = rx.iter().map(|v| -v).collect();
            let neg_rz = rz.identity_like(0.0).sub(&rz);
            let lam_sq = lam.product(&lam);
            let ds_aff = lam_sq.identity_like(0.0).sub(&lam_sq);
            let (_, dz_a, ds_a) = self.kkt(&llt, &sc, &lam, &neg_rx, &neg_rz, &ds_aff);
            let alpha_a = s.max_step(&ds_a).min(z.max_step(&dz_a)).min(1.0);
            let mut s_a = s.clone();
            s_a.axpy(alpha_a, &ds_a);
            let mut z_a = z.clone();
            z_a.axpy(alpha_a, &dz_a);
            let sigma = (s_a.dot(&z_a) / gap).clamp(0.0, 1.0).powi(3);
            let mu = gap / nu;

            let cross = sc.apply_inv(&ds_a).product(&sc.apply(&dz_a));
            let mut ds = ds_aff;
            ds.axpy(-1.0, &cross);
            ds.axpy(1.0, &lam.identity_like(sigma * mu));
            let (dx, dz, dss) = self.kkt(&llt, &sc, &lam, &neg_rx, &neg_rz, &ds);
            let alpha = (opts.step_fraction * s.max_step(&dss).min(z.max_step(&dz))).min(1.0);
            if !(alpha > 1e-12) || dx.iter().any(|v| !v.is_finite()) {
                break;
            }
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += alpha * d;
            }
            s.axpy(alpha, &dss);
            z.axpy(alpha, &dz);
            if !s.is_interior() || !z.is_interior() {
                break;
            }
        }
        IpmRun {
            status: SolveStatus::NumericalFailure,
            gap,
            iterations: opts.max_iter.min(trace.len()),
            x,
            trace,
        }
    }
}

/// Cholesky factor of the normal matrix, with escalating diagonal
/// regularization when it is numerically singular.
struct Factored {
    llt: faer::linalg::solvers::Llt<f64>,
    n: usize,
}

impl Factored {
    fn new(mut h: Vec<f64>, n: usize) -> Option<Self> {
        let max_diag = (0..n).map(|i| h[i * n + i]).fold(0.0f64, f64::max);
        let mut reg = 0.0;
        for _ in 0..8 {
            if let Ok(llt) = MatRef::from_column_major_slice(&h, n, n).llt(Side::Lower) {
                return Some(Factored { llt, n });
            }
            let next = if reg == 0.0 {
                1e-13 * max_diag.max(1e-300)
            } else {
                reg * 100.0
            };
            for i in 0..n {
                h[i * n + i] += next - reg;
            }
            reg = next;
        }
        None
    }

    fn solve(&self, mut rhs: Vec<f64>) -> Vec<f64> {
        self.llt.solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(&mut rhs, self.n, 1),
        );
        rhs
    }
}

fn validate(problem: &ConvexSubproblem, warm_start: &[f64], opts: &SolverOptions) -> Result<()> {
    if warm_start.len() != problem.n_vars {
        return Err(Error::DimensionMismatch(format!(
            "warm start has {} entries, problem has {} variables",
            warm_start.len(),
            problem.n_vars
        )));
    }
    if !(opts.tol > 0.0 && opts.tol <= 1e-2) {
        return Err(Error::InvalidInput(format!(
            "tolerance {} outside (0, 1e-2]",
            opts.tol
        )));
    }
    if !(opts.step_fraction > 0.0 && opts.step_fraction < 1.0) || !(opts.mu0 > 0.0) {
        return Err(Error::InvalidInput("step fraction must lie in (0, 1), mu0 > 0".into()));
    }
    if !problem.rows.iter().any(|r| r.involves_s) {
        return Err(Error::InvalidInput(
            "objective is unbounded: no row constrains s".into(),
        ));
    }
    for r in &problem.rows {
        if r.coeffs.iter().any(|&(j, _)| j >= problem.n_vars) {
            return Err(Error::IndexOutOfRange("row coefficient index".into()));
        }
    }
    if let Some(q) = &problem.quad {
        q.form.check(problem.n_vars)?;
        if !(q.budget > 0.0) {
            return Err(Error::InvalidInput("quadratic budget must be positive".into()));
        }
    }
    Ok(())
}

/// Finds a point strictly satisfying every row that does not involve `s`
/// and the quadratic budget, by minimizing a common margin `τ`. Returns
/// `Ok(None)` when the set is certified empty.
fn phase_one(
    problem: &ConvexSubproblem,
    start: &[f64],
    opts: &SolverOptions,
) -> Result<std::result::Result<Option<Vec<f64>>, ()>> {
    let n = problem.n_vars;
    let mut c = start.to_vec();
    if let Some(q) = &problem.quad {
        let v = q.form.eval(&c);
        if v >= q.budget {
            let f = (0.5 * q.budget / v).sqrt();
            c.iter_mut().for_each(|x| *x *= f);
        }
    }
    let plain: Vec<&AffineRow> = problem.rows.iter().filter(|r| !r.involves_s).collect();
    let worst = plain
        .iter()
        .map(|r| -r.slack(&c, 0.0))
        .fold(f64::NEG_INFINITY, f64::max);
    if worst < 0.0 {
        return Ok(Ok(Some(c)));
    }
    let conic = Conic::new(n, compress(plain.iter().copied(), n, 1.0, true), problem.quad.as_ref(), 1.0)?;
    let mut x = c;
    x.push(worst + 1.0);
    let run = conic.run(x, opts, |x, gap, dres, _| {
        if x[n] < 0.0 && conic.slack(x).is_interior() {
            Outcome::Stop(SolveStatus::Optimal)
        } else if dres <= opts.dual_tol && x[n] - gap > 0.0 {
            // the dual bound proves every margin is positive
            Outcome::Stop(SolveStatus::Infeasible)
        } else {
            Outcome::Continue
        }
    });
    Ok(match run.status {
        SolveStatus::Optimal => {
            let mut x = run.x;
            x.truncate(n);
            Ok(Some(x))
        }
        SolveStatus::Infeasible => Ok(None),
        SolveStatus::NumericalFailure => Err(()),
    })
}

/// Maximizes `s` over the subproblem, starting from `warm_start` (the `c`
/// part; a compatible `s` is derived).
pub fn solve(
    problem: &ConvexSubproblem,
    warm_start: &[f64],
    opts: &SolverOptions,
) -> Result<Solution> {
    validate(problem, warm_start, opts)?;
    let n = problem.n_vars;
    let failed = |status| Solution {
        c: warm_start.to_vec(),
        s: f64::NAN,
        status,
        gap: f64::INFINITY,
        iterations: 0,
        objective_trace: Vec::new(),
    };
    let c0 = match phase_one(problem, warm_start, opts)? {
        Ok(Some(c)) => c,
        Ok(None) => return Ok(failed(SolveStatus::Infeasible)),
        Err(()) => return Ok(failed(SolveStatus::NumericalFailure)),
    };
    let s_cap = problem
        .rows
        .iter()
        .filter(|r| r.involves_s)
        .map(|r| r.slack(&c0, 0.0))
        .fold(f64::INFINITY, f64::min);
    let s0 = s_cap - 1e-3 * s_cap.abs().max(1.0);

    let conic = Conic::new(n, compress(problem.rows.iter(), n, -1.0, false), problem.quad.as_ref(), -1.0)?;
    let mut x = c0;
    x.push(s0);
    let run = conic.run(x, opts, |x, gap, dres, pres| {
        if dres <= opts.dual_tol && pres <= PRIMAL_TOL && gap <= opts.tol * x[n].abs().max(1.0) {
            Outcome::Stop(SolveStatus::Optimal)
        } else {
            Outcome::Continue
        }
    });
    let mut c = run.x;
    let s = c.pop().unwrap();
    Ok(Solution {
        c,
        s,
        status: run.status,
        gap: run.gap,
        iterations: run.iterations,
        objective_trace: run.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    fn two_point_problem() -> ConvexSubproblem {
        // s ≤ 4(c1 - c2) - 4 (tangent of (c1-c2)² at c1-c2 = 2), c ≥ 0,
        // (c1² + c2²)/2 ≤ 2
        ConvexSubproblem {
            n_vars: 2,
            rows: vec![
                AffineRow::new(vec![(0, 4.0), (1, -4.0)], true, 4.0),
                AffineRow::new(vec![(0, 1.0)], false, 0.0),
                AffineRow::new(vec![(1, 1.0)], false, 0.0),
            ],
            quad: Some(QuadConstraint {
                form: QuadForm::Diagonal(vec![0.5, 0.5]),
                budget: 2.0,
            }),
        }
    }

    #[test]
    fn two_point_instance_matches_grid_oracle() {
        // grid search over the disc at 1e-3 resolution
        let mut best = f64::NEG_INFINITY;
        let mut arg = (0.0, 0.0);
        let steps = 2000;
        for i in 0..=steps {
            for j in 0..=steps {
                let (c1, c2) = (i as f64 * 1e-3, j as f64 * 1e-3);
                if (c1 * c1 + c2 * c2) / 2.0 <= 2.0 {
                    let v = 4.0 * (c1 - c2) - 4.0;
                    if v > best {
                        best = v;
                        arg = (c1, c2);
                    }
                }
            }
        }
        assert!((best - 4.0).abs() < 1e-9 && (arg.0 - 2.0).abs() < 1e-9 && arg.1 == 0.0);

        let sol = solve(&two_point_problem(), &[1.0, 0.5], &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.s - 4.0).abs() < 1e-6, "s = {}", sol.s);
        assert!((sol.c[0] - 2.0).abs() < 1e-5 && sol.c[1].abs() < 1e-5);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let p = ConvexSubproblem {
            n_vars: 1,
            rows: vec![
                AffineRow::new(vec![(0, 1.0)], false, 1.0),
                AffineRow::new(vec![(0, -1.0)], false, 0.0),
                AffineRow::new(vec![(0, 1.0)], true, 0.0),
            ],
            quad: None,
        };
        let sol = solve(&p, &[0.5], &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn quadratic_budget_alone_can_be_infeasible() {
        // c ≥ 3 but c²≤ 4
        let p = ConvexSubproblem {
            n_vars: 1,
            rows: vec![
                AffineRow::new(vec![(0, 1.0)], false, 3.0),
                AffineRow::new(vec![(0, 1.0)], true, 0.0),
            ],
            quad: Some(QuadConstraint {
                form: QuadForm::Diagonal(vec![1.0]),
                budget: 4.0,
            }),
        };
        assert_eq!(solve(&p, &[0.0], &opts()).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn rejects_unbounded_and_bad_inputs() {
        let p = ConvexSubproblem {
            n_vars: 1,
            rows: vec![AffineRow::new(vec![(0, 1.0)], false, 0.0)],
            quad: None,
        };
        assert!(solve(&p, &[1.0], &opts()).is_err());
        let mut p = two_point_problem();
        assert!(solve(&p, &[1.0], &opts()).is_err());
        let bad = SolverOptions { tol: 0.5, ..opts() };
        assert!(solve(&p, &[1.0, 0.5], &bad).is_err());
        p.quad = Some(QuadConstraint {
            form: QuadForm::Dense(vec![1.0, 2.0, 2.0, 1.0]),
            budget: 1.0,
        });
        assert!(solve(&p, &[0.1, 0.0], &opts()).is_err());
    }

    #[test]
    fn warm_start_outside_budget_is_pulled_in() {
        let sol = solve(&two_point_problem(), &[5.0, 5.0], &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.s - 4.0).abs() < 1e-6);
    }

    #[test]
    fn block_and_dense_forms_agree() {
        let block = vec![2.0, 0.5, 0.5, 1.0];
        let b = QuadForm::BlockDiagonal { block: block.clone(), size: 2 };
        let mut dense = vec![0.0; 16];
        for k in 0..2 {
            for r in 0..2 {
                for c in 0..2 {
                    dense[(2 * k + r) * 4 + 2 * k + c] = block[r * 2 + c];
                }
            }
        }
        let d = QuadForm::Dense(dense);
        let x = [0.3, -1.2, 0.7, 2.0];
        assert!((b.eval(&x) - d.eval(&x)).abs() < 1e-14);
        let rows = vec![
            AffineRow::new(vec![(0, 1.0), (2, 1.0)], true, 0.0),
            AffineRow::new(vec![(1, 1.0), (3, -1.0)], true, 0.0),
        ];
        let mk = |form| ConvexSubproblem {
            n_vars: 4,
            rows: rows.clone(),
            quad: Some(QuadConstraint { form, budget: 3.0 }),
        };
        let s1 = solve(&mk(b), &[0.0; 4], &opts()).unwrap();
        let s2 = solve(&mk(d), &[0.0; 4], &opts()).unwrap();
        assert_eq!(s1.status, SolveStatus::Optimal);
        assert!((s1.s - s2.s).abs() < 1e-6 * s1.s.abs().max(1.0));
    }

    #[test]
    fn converged_point_is_feasible_with_small_gap() {
        let p = two_point_problem();
        let sol = solve(&p, &[0.2, 0.1], &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.gap <= 1e-7 * sol.s.abs().max(1.0));
        assert!(p.max_violation(&sol.c, sol.s) <= 1e-9);
        assert_eq!(*sol.objective_trace.last().unwrap(), sol.s);
        assert!(sol.iterations < 40);
    }

    fn soc_pair() -> (Cone, Cone) {
        let s = Cone {
            lin: vec![0.5, 2.0],
            soc: vec![3.0, 1.0, -1.5, 0.5],
        };
        let z = Cone {
            lin: vec![1.5, 0.25],
            soc: vec![2.0, -0.3, 0.8, 1.1],
        };
        (s, z)
    }

    #[test]
    fn nt_scaling_maps_z_and_s_to_the_same_point() {
        let (s, z) = soc_pair();
        assert!(s.is_interior() && z.is_interior());
        let sc = Scaling::new(&s, &z);
        let a = sc.apply(&z);
        let b = sc.apply_inv(&s);
        for (x, y) in a.lin.iter().chain(&a.soc).zip(b.lin.iter().chain(&b.soc)) {
            assert!((x - y).abs() < 1e-12, "{a:?} {b:?}");
        }
        let back = sc.apply_inv(&sc.apply(&s));
        for (x, y) in back.soc.iter().zip(&s.soc) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_square_scaling_has_closed_form() {
        // W⁻² = η⁻² (2 (Jw̄)(Jw̄)ᵀ - J)
        let (s, z) = soc_pair();
        let sc = Scaling::new(&s, &z);
        let q = s.soc.len();
        let mut jw = sc.wbar.clone();
        jw[1..].iter_mut().for_each(|v| *v = -*v);
        for k in 0..q {
            let mut e = vec![0.0; q];
            e[k] = 1.0;
            let col = sc.soc_apply(&sc.soc_apply(&e, true), true);
            for r in 0..q {
                let j = if r == 0 && k == 0 { 1.0 } else if r == k { -1.0 } else { 0.0 };
                let want = (2.0 * jw[r] * jw[k] - j) / (sc.eta * sc.eta);
                assert!((col[r] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jordan_division_inverts_the_product() {
        let (s, z) = soc_pair();
        let p = s.product(&z);
        // u∘v = (uᵀv, u0 v1 + v0 u1)
        assert!((p.soc[0] - s.soc.iter().zip(&z.soc).map(|(a, b)| a * b).sum::<f64>()).abs() < 1e-15);
        assert!((p.soc[1] - (3.0 * -0.3 + 2.0 * 1.0)).abs() < 1e-15);
        let back = s.divide(&p);
        for (x, y) in back.lin.iter().chain(&back.soc).zip(z.lin.iter().chain(&z.soc)) {
            assert!((x - y).abs() < 1e-12);
        }
        let inv = s.inverse_scaled(1.0);
        let e = s.product(&inv);
        assert!((e.soc[0] - 1.0).abs() < 1e-12 && e.soc[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cone_step_lands_on_the_boundary() {
        let (s, _) = soc_pair();
        let d = Cone {
            lin: vec![-0.1, 1.0],
            soc: vec![-1.0, 0.5, 0.0, 0.0],
        };
        let a = s.max_step(&d);
        let mut edge = s.clone();
        edge.axpy(a, &d);
        let lin_min = edge.lin.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(lin_min.abs() < 1e-12 || soc_det(&edge.soc).abs() < 1e-9);
        let mut inside = s.clone();
        inside.axpy(0.99 * a, &d);
        assert!(inside.is_interior());
        // lin bound 5, soc root of (3-a)² = (1+a/2)² + 2.5
        let soc_root = {
            let (qa, qb, qc) = (0.75f64, -7.0f64, 5.5f64);
            (-qb - (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
        };
        assert!(soc_root < 1.0);
        assert!((a - soc_root).abs() < 1e-12);
    }

    #[test]
    fn normal_matrix_matches_explicit_product() {
        let p = ConvexSubproblem {
            n_vars: 3,
            rows: vec![
                AffineRow::new(vec![(0, 1.0), (1, -2.0)], true, 0.5),
                AffineRow::new(vec![(2, 1.5)], false, -1.0),
            ],
            quad: Some(QuadConstraint {
                form: QuadForm::Dense(vec![2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 0.7]),
                budget: 4.0,
            }),
        };
        let conic = Conic::new(3, compress(p.rows.iter(), 3, -1.0, false), p.quad.as_ref(), -1.0).unwrap();
        let s = conic.slack(&[0.2, -0.4, 0.3, -5.0]);
        assert!(s.is_interior());
        let z = s.inverse_scaled(0.7);
        let mut z = z;
        z.lin[0] *= 3.0;
        z.soc[1] *= 0.5;
        let sc = Scaling::new(&s, &z);
        let h = conic.normal_matrix(&sc);
        let nz = 4;
        for k in 0..nz {
            let mut e = vec![0.0; nz];
            e[k] = 1.0;
            let col = conic.gt_mul(&sc.apply_inv(&sc.apply_inv(&conic.g_mul(&e))));
            for r in k..nz {
                assert!((h[k * nz + r] - col[r]).abs() < 1e-10, "({r},{k})");
            }
        }
    }
}
