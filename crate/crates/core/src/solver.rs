//! Continuity-method solver for the scalar Hermitian-Einstein system.
//!
//! On a rank-one-per-vertex model over P1 the metric ansatz `H_i = H_i^0 e^(u_i)`
//! turns the equations into a coupled Kazdan-Warner system
//!
//! ```text
//! R_i = sigma_i (k_i + c Delta u_i) + sum_{h(a)=i} w_a e^(v_a)
//!       - sum_{t(a)=i} w_a e^(v_a) - lambda (tau_i + gamma sigma_i) + eps u_i
//! ```
//!
//! with `v_a = u_h(a) - u_t(a)` and `w_a` the pointwise section density.
//! Unknowns are the spherical-harmonic coefficients of each `u_i`; Newton
//! steps solve the Galerkin linearization by preconditioned conjugate
//! gradients.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_traits::ToPrimitive;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{
    background_curvature_value, make_sphere_grid, quadrature, section_density, GeometryError,
    GridField, SphereGrid,
};
use crate::instances::stable_nonconstant;
use crate::quiver::{BaseFixture, QBundleModel};
use crate::stability::{
    deg_slope, is_arrow_closed, max_slope_subobject, nonzero_components, slope_of_parts,
    support_subobject, Rational, StabilityError, StabilityParams, Subject,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("the PDE solver needs the P1 fixture")]
    FixtureUnsupported,
    #[error("vertex {0} has rank > 1; only rank-one vertices are supported")]
    RankUnsupported(String),
    #[error("Laplacian calibration is ambiguous: {0}")]
    CalibrationAmbiguous(String),
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("line search failed at residual {0:e}")]
    LineSearchFailure(f64),
    #[error("operation needs a converged run")]
    NotConverged,
    #[error("operation needs a blow-up run")]
    NotBlowUp,
    #[error("no separation of vertex scales in the final state")]
    NoCollapseDetected,
    #[error("verification failed: {0}")]
    VerificationFailure(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveConfig {
    pub tol: f64,
    pub eps_start: f64,
    pub eps_ratio: f64,
    pub eps_floor: f64,
    pub max_newton: usize,
    /// Newton stops once the coefficient residual falls below this fraction
    /// of the size of the individual terms.
    pub newton_rtol: f64,
    pub cg_rtol: f64,
    pub cg_max_iter: usize,
    pub blowup_threshold: f64,
    pub envelope_slack: f64,
    pub envelope_patience: usize,
    /// Scale gap (natural log) separating collapsed vertices.
    pub collapse_gap: f64,
    /// Laplacian constant; calibrated when absent.
    pub c_delta: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol: 1e-8,
            eps_start: 1.0,
            eps_ratio: 0.5,
            eps_floor: 1e-8,
            max_newton: 50,
            newton_rtol: 1e-13,
            cg_rtol: 1e-11,
            cg_max_iter: 2000,
            blowup_threshold: 40.0,
            envelope_slack: 1.05,
            envelope_patience: 3,
            collapse_gap: 1000f64.ln(),
            c_delta: None,
        }
    }
}

impl SolveConfig {
    /// Strictly decreasing epsilon levels from the start down to the floor.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut eps = self.eps_start;
        while eps > self.eps_floor * (1.0 + 1e-12) {
            out.push(eps);
            eps *= self.eps_ratio;
        }
        out.push(self.eps_floor);
        out
    }
}

#[derive(Debug, Clone)]
pub struct ArrowTerm {
    pub index: usize,
    pub tail: usize,
    pub head: usize,
    /// `deg(head) - deg(tail)`.
    pub degree: i64,
    pub coefficients: Vec<num_complex::Complex64>,
    pub weight: GridField,
}

/// The data of the scalar system on a fixed grid.
#[derive(Debug, Clone)]
pub struct ScalarSystem {
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    pub degrees: Vec<i64>,
    pub curvature: Vec<f64>,
    pub arrows: Vec<ArrowTerm>,
    pub lambda: f64,
    pub gamma: Rational,
    pub components: Vec<Vec<usize>>,
}

fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

impl ScalarSystem {
    pub fn new(
        model: &QBundleModel,
        params: &StabilityParams,
        grid: &SphereGrid,
    ) -> Result<Self, SolverError> {
        if model.base != BaseFixture::P1 {
            return Err(SolverError::FixtureUnsupported);
        }
        if let Some(i) = model.vertex_data.iter().position(|v| v.rank() != 1) {
            return Err(SolverError::RankUnsupported(
                model.quiver.vertices()[i].clone(),
            ));
        }
        let gamma = deg_slope(model, Subject::Full, params)?.slope;
        let degrees: Vec<i64> = model.vertex_data.iter().map(|v| v.deg_plus()).collect();
        let mut arrows = Vec::new();
        for (k, a) in model.quiver.arrows().iter().enumerate() {
            let section = &model.arrow_data[k].blocks[0][0];
            if section.is_zero() || a.is_loop() {
                continue;
            }
            let degree = degrees[a.head] - degrees[a.tail];
            arrows.push(ArrowTerm {
                index: k,
                tail: a.tail,
                head: a.head,
                degree,
                coefficients: section.coefficients().to_vec(),
                weight: section_density(grid, section, degree)?,
            });
        }
        Ok(ScalarSystem {
            sigma: params.sigma().iter().map(to_f64).collect(),
            tau: params.tau().iter().map(to_f64).collect(),
            curvature: degrees
                .iter()
                .map(|&m| background_curvature_value(grid, m))
                .collect(),
            degrees,
            arrows,
            lambda: 2.0 * PI / grid.total_volume,
            gamma,
            components: nonzero_components(model),
        })
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    fn constant_term(&self, i: usize) -> f64 {
        let gamma = to_f64(&self.gamma);
        self.sigma[i] * self.curvature[i] - self.lambda * (self.tau[i] + gamma * self.sigma[i])
    }

    /// `w_a e^(v_a)` per arrow.
    fn couplings(&self, state: &ScalarMetricState) -> Vec<Vec<f64>> {
        self.arrows
            .iter()
            .map(|a| {
                a.weight
                    .values
                    .iter()
                    .zip(&state.u[a.head].values)
                    .zip(&state.u[a.tail].values)
                    .map(|((w, uh), ut)| w * (uh - ut).exp())
                    .collect()
            })
            .collect()
    }

    /// Pointwise residual fields; the `eps u` term is included when the state
    /// carries a positive epsilon.
    pub fn residual(&self, grid: &SphereGrid, state: &ScalarMetricState, c_delta: f64) -> Vec<GridField> {
        let eig = grid.mode_eigenvalues();
        let mut out: Vec<GridField> = (0..self.len())
            .map(|i| {
                let lap_coeffs: Vec<f64> = state.coeffs[i].iter().zip(&eig).map(|(c, l)| c * l).collect();
                let lap = grid.synthesize(&lap_coeffs);
                let k = self.constant_term(i);
                let s = self.sigma[i] * c_delta;
                let eps = state.epsilon;
                GridField {
                    values: lap
                        .values
                        .iter()
                        .zip(&state.u[i].values)
                        .map(|(l, u)| k + s * l + eps * u)
                        .collect(),
                }
            })
            .collect();
        for (a, q) in self.arrows.iter().zip(self.couplings(state)) {
            for (k, qk) in q.iter().enumerate() {
                out[a.head].values[k] += qk;
                out[a.tail].values[k] -= qk;
            }
        }
        out
    }

    /// `K^phi(H^0)`: the residual at `u = 0`, `eps = 0`, without the Laplacian.
    pub fn background_k(&self, grid: &SphereGrid) -> Vec<GridField> {
        let mut out: Vec<GridField> = (0..self.len())
            .map(|i| GridField::constant(grid, self.constant_term(i)))
            .collect();
        for a in &self.arrows {
            for (k, w) in a.weight.values.iter().enumerate() {
                out[a.head].values[k] += w;
                out[a.tail].values[k] -= w;
            }
        }
        out
    }
}

pub fn assemble_residual(
    model: &QBundleModel,
    params: &StabilityParams,
    grid: &SphereGrid,
    state: &ScalarMetricState,
    c_delta: f64,
) -> Result<Vec<GridField>, SolverError> {
    Ok(ScalarSystem::new(model, params, grid)?.residual(grid, state, c_delta))
}

/// `u_i` as spectral coefficients plus their grid values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMetricState {
    pub coeffs: Vec<Vec<f64>>,
    pub u: Vec<GridField>,
    pub epsilon: f64,
    /// Quadrature of `sum_i u_i` at the last normalization.
    pub mean: f64,
}

impl ScalarMetricState {
    pub fn zero(grid: &SphereGrid, n: usize, epsilon: f64) -> Self {
        Self::from_coeffs(grid, vec![vec![0.0; grid.num_modes()]; n], epsilon)
    }

    pub fn from_coeffs(grid: &SphereGrid, coeffs: Vec<Vec<f64>>, epsilon: f64) -> Self {
        let u: Vec<GridField> = coeffs.iter().map(|c| grid.synthesize(c)).collect();
        let mut s = ScalarMetricState {
            coeffs,
            u,
            epsilon,
            mean: 0.0,
        };
        s.mean = s.total_integral(grid);
        s
    }

    /// Band-limited projection of arbitrary fields.
    pub fn from_fields(grid: &SphereGrid, fields: &[GridField], epsilon: f64) -> Result<Self, SolverError> {
        let coeffs = fields
            .iter()
            .map(|f| grid.analyze(f))
            .collect::<Result<_, _>>()?;
        Ok(Self::from_coeffs(grid, coeffs, epsilon))
    }

    pub fn total_integral(&self, grid: &SphereGrid) -> f64 {
        self.u.iter().map(|f| quadrature(grid, f)).sum()
    }

    /// Shifts every `u_i` by the same constant so that `sum_i u_i` integrates to 0.
    pub fn normalize(&mut self, grid: &SphereGrid) {
        let n = self.coeffs.len() as f64;
        let total: f64 = self.coeffs.iter().map(|c| c[0]).sum();
        let shift = total / n;
        let y00 = 1.0 / (4.0 * PI).sqrt();
        for (c, f) in self.coeffs.iter_mut().zip(&mut self.u) {
            c[0] -= shift;
            f.values.iter_mut().for_each(|v| *v -= shift * y00);
        }
        self.mean = self.total_integral(grid);
    }

    pub fn max_abs(&self) -> Vec<f64> {
        self.u.iter().map(GridField::max_abs).collect()
    }

    pub fn sup(&self) -> Vec<f64> {
        self.u
            .iter()
            .map(|f| f.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
            .collect()
    }
}

/// Operator on concatenated coefficient vectors (`n_vertices * n_modes`).
struct Jacobian<'a> {
    grid: &'a SphereGrid,
    sys: &'a ScalarSystem,
    diag: Vec<f64>,
    q: Vec<Vec<f64>>,
    precond: Vec<f64>,
    kernel: Vec<Vec<f64>>,
}

impl<'a> Jacobian<'a> {
    fn new(
        grid: &'a SphereGrid,
        sys: &'a ScalarSystem,
        state: &ScalarMetricState,
        c_delta: f64,
    ) -> Self {
        let nm = grid.num_modes();
        let n = sys.len();
        let eig = grid.mode_eigenvalues();
        let q = sys.couplings(state);
        let volume = grid.total_volume;
        let mut qbar = vec![0.0; n];
        for (a, qa) in sys.arrows.iter().zip(&q) {
            let mean = grid.area.iter().zip(qa).map(|(w, v)| w * v).sum::<f64>() / volume;
            qbar[a.head] += mean;
            qbar[a.tail] += mean;
        }
        let mut diag = Vec::with_capacity(n * nm);
        let mut precond = Vec::with_capacity(n * nm);
        for i in 0..n {
            for l in &eig {
                let d = sys.sigma[i] * c_delta * l + state.epsilon;
                diag.push(d);
                let p = (d + qbar[i]).abs();
                precond.push(if p > 1e-12 { 1.0 / p } else { 1.0 });
            }
        }
        let kernel = if state.epsilon == 0.0 {
            sys.components
                .iter()
                .map(|comp| {
                    let mut g = vec![0.0; n * nm];
                    let s = 1.0 / (comp.len() as f64).sqrt();
                    for &i in comp {
                        g[i * nm] = s;
                    }
                    g
                })
                .collect()
        } else {
            Vec::new()
        };
        Jacobian {
            grid,
            sys,
            diag,
            q,
            precond,
            kernel,
        }
    }

    fn project(&self, x: &mut [f64]) {
        for g in &self.kernel {
            let d: f64 = g.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            x.iter_mut().zip(g).for_each(|(xi, gi)| *xi -= d * gi);
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let nm = self.grid.num_modes();
        let mut out: Vec<f64> = x.iter().zip(&self.diag).map(|(a, d)| a * d).collect();
        if self.sys.arrows.is_empty() {
            return out;
        }
        let fields: Vec<GridField> = x.chunks(nm).map(|c| self.grid.synthesize(c)).collect();
        let mut grid_out = vec![vec![0.0; self.grid.len()]; self.sys.len()];
        for (a, qa) in self.sys.arrows.iter().zip(&self.q) {
            for k in 0..qa.len() {
                let t = qa[k] * (fields[a.head].values[k] - fields[a.tail].values[k]);
                grid_out[a.head][k] += t;
                grid_out[a.tail][k] -= t;
            }
        }
        for (i, g) in grid_out.iter().enumerate() {
            let c = self.grid.analyze_unchecked(g);
            out[i * nm..(i + 1) * nm]
                .iter_mut()
                .zip(c)
                .for_each(|(o, ci)| *o += ci);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned CG on the complement of the operator's known kernel.
fn pcg(jac: &Jacobian<'_>, b: &[f64], rtol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), SolverError> {
    let mut r = b.to_vec();
    jac.project(&mut r);
    let b_norm = norm(&r);
    let mut x = vec![0.0; r.len()];
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let precondition = |r: &[f64]| {
        let mut z: Vec<f64> = r.iter().zip(&jac.precond).map(|(a, p)| a * p).collect();
        jac.project(&mut z);
        z
    };
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let mut ap = jac.apply(&p);
        jac.project(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(SolverError::LinearSolveFailure(format!(
                "non-positive curvature {pap:e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        if norm(&r) <= rtol * b_norm {
            return Ok((x, it + 1));
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(SolverError::LinearSolveFailure(format!(
        "no convergence in {max_iter} iterations"
    )))
}

/// Smallest and largest Ritz values of a symmetric operator after `k`
/// Lanczos steps from a seeded random start.
pub fn lanczos_extremes(apply: impl Fn(&[f64]) -> Vec<f64>, n: usize, k: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for j in 0..k.min(n) {
        let mut w = apply(&basis[j]);
        let a = dot(&w, &basis[j]);
        alpha.push(a);
        // full reorthogonalization
        for b in &basis {
            let d = dot(&w, b);
            w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= d * bi);
        }
        let nb = norm(&w);
        if nb < 1e-12 || j + 1 == k.min(n) {
            break;
        }
        beta.push(nb);
        w.iter_mut().for_each(|x| *x /= nb);
        basis.push(w);
    }
    let m = alpha.len();
    let t = DMatrix::<f64>::from_fn(m, m, |r, c| {
        if r == c {
            alpha[r]
        } else if r + 1 == c {
            beta[r]
        } else if c + 1 == r {
            beta[c]
        } else {
            0.0
        }
    });
    let ev = t.symmetric_eigenvalues();
    let lo = ev.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = ev.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    (lo, hi)
}

/// Smallest Ritz value of the Newton linearization at `state`.
pub fn jacobian_min_ritz(
    grid: &SphereGrid,
    sys: &ScalarSystem,
    state: &ScalarMetricState,
    c_delta: f64,
    steps: usize,
) -> f64 {
    let jac = Jacobian::new(grid, sys, state, c_delta);
    lanczos_extremes(|x| jac.apply(x), sys.len() * grid.num_modes(), steps, 17).0
}

/// Applies the linearization to a coefficient vector (for testing).
pub fn jacobian_apply(
    grid: &SphereGrid,
    sys: &ScalarSystem,
    state: &ScalarMetricState,
    c_delta: f64,
    x: &[f64],
) -> Vec<f64> {
    Jacobian::new(grid, sys, state, c_delta).apply(x)
}

fn coefficient_residual(grid: &SphereGrid, res: &[GridField]) -> Vec<f64> {
    res.iter()
        .flat_map(|r| grid.analyze_unchecked(&r.values))
        .collect()
}

/// Size of the individual terms of the residual, for relative tolerances.
fn residual_scale(sys: &ScalarSystem, grid: &SphereGrid, state: &ScalarMetricState) -> f64 {
    let mut s: f64 = (0..sys.len()).map(|i| sys.constant_term(i).abs()).sum();
    for q in sys.couplings(state) {
        s += q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    s * (4.0 * PI).sqrt() + grid.total_volume.recip()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub residual_before: f64,
    pub residual_after: f64,
    pub step_length: f64,
    pub step_norm: f64,
    pub cg_iterations: usize,
}

/// One damped Newton step with normalization.
pub fn newton_step(
    grid: &SphereGrid,
    sys: &ScalarSystem,
    state: &ScalarMetricState,
    c_delta: f64,
    config: &SolveConfig,
) -> Result<(ScalarMetricState, StepReport), SolverError> {
    let nm = grid.num_modes();
    let r = coefficient_residual(grid, &sys.residual(grid, state, c_delta));
    let jac = Jacobian::new(grid, sys, state, c_delta);
    let mut r_eff = r.clone();
    jac.project(&mut r_eff);
    let r0 = norm(&r_eff);
    let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
    let (delta, iters) = pcg(&jac, &rhs, config.cg_rtol, config.cg_max_iter)?;
    let step_norm = norm(&delta);
    let mut t = 1.0;
    while t >= 1.0 / 1024.0 {
        let coeffs: Vec<Vec<f64>> = state
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.iter()
                    .zip(&delta[i * nm..(i + 1) * nm])
                    .map(|(a, d)| a + t * d)
                    .collect()
            })
            .collect();
        let mut trial = ScalarMetricState::from_coeffs(grid, coeffs, state.epsilon);
        trial.normalize(grid);
        let mut rt = coefficient_residual(grid, &sys.residual(grid, &trial, c_delta));
        jac.project(&mut rt);
        let r1 = norm(&rt);
        if r1.is_finite() && r1 <= (1.0 - 1e-4 * t) * r0 {
            return Ok((
                trial,
                StepReport {
                    residual_before: r0,
                    residual_after: r1,
                    step_length: t,
                    step_norm,
                    cg_iterations: iters,
                },
            ));
        }
        t *= 0.5;
    }
    Err(SolverError::LineSearchFailure(r0))
}

/// Newton iterations at fixed epsilon. Returns the number of steps taken.
fn solve_level(
    grid: &SphereGrid,
    sys: &ScalarSystem,
    state: &mut ScalarMetricState,
    c_delta: f64,
    config: &SolveConfig,
) -> Result<usize, SolverError> {
    for it in 0..config.max_newton {
        let scale = residual_scale(sys, grid, state);
        match newton_step(grid, sys, state, c_delta, config) {
            Ok((next, rep)) => {
                *state = next;
                if rep.residual_after <= config.newton_rtol * scale {
                    return Ok(it + 1);
                }
            }
            Err(SolverError::LineSearchFailure(r0)) if r0 <= 1e3 * config.newton_rtol * scale => {
                return Ok(it);
            }
            Err(e) => return Err(e),
        }
    }
    Err(SolverError::LineSearchFailure(f64::NAN))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Converged,
    BlowUp,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub epsilon: f64,
    pub newton_steps: usize,
    pub max_abs_u: Vec<f64>,
    pub sup_u: Vec<f64>,
    pub residual_sup: f64,
    pub envelope: f64,
    pub envelope_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub m: Vec<f64>,
    pub m_k: f64,
    pub margins: Vec<f64>,
}

/// Sup norms of `u_i` against the a priori bound `m_K / eps`.
pub fn diagnostics(grid: &SphereGrid, sys: &ScalarSystem, state: &ScalarMetricState) -> Diagnostics {
    let m_k = m_k(grid, sys);
    let m = state.max_abs();
    let bound = if state.epsilon > 0.0 {
        m_k / state.epsilon
    } else {
        f64::INFINITY
    };
    Diagnostics {
        margins: m.iter().map(|mi| bound - mi).collect(),
        m,
        m_k,
    }
}

/// `|Q_0| * sum_i sup |K^phi(H_i^0)|`.
pub fn m_k(grid: &SphereGrid, sys: &ScalarSystem) -> f64 {
    let k = sys.background_k(grid);
    sys.len() as f64 * k.iter().map(GridField::max_abs).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrowIdentity {
    pub arrow: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub relative: f64,
    pub both_vanish: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub residual_sup: Vec<f64>,
    pub residual_l2: Vec<f64>,
    pub gamma_identity: f64,
    pub arrow_identities: Vec<ArrowIdentity>,
}

impl Verification {
    pub fn max_identity_residual(&self) -> f64 {
        self.arrow_identities
            .iter()
            .fold(0.0, |m, a| m.max(a.relative))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub c_delta: f64,
    pub min_ritz_positive: f64,
    pub min_ritz_negative: f64,
    pub solve_positive: bool,
    pub solve_negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaProjector {
    pub support: Vec<usize>,
    /// Every vertex below the top scale level.
    pub collapsed: Vec<usize>,
    /// `sup u_i - max_j sup u_j`.
    pub profile: Vec<f64>,
    /// Per-vertex normalizations `exp(-sup u_i)`.
    pub rho: Vec<f64>,
    pub levels: Vec<Vec<usize>>,
    pub idempotent_residual: f64,
    pub selfadjoint_residual: f64,
    pub closure_residual: f64,
    pub slope_sub: String,
    pub slope_total: String,
    pub destabilizing: bool,
    pub max_slope_support: Vec<usize>,
    pub matches_max_slope: bool,
}

impl ThetaProjector {
    pub fn is_valid(&self, n: usize) -> bool {
        !self.support.is_empty()
            && self.support.len() < n
            && self.closure_residual == 0.0
            && self.destabilizing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub outcome: Outcome,
    pub c_delta: f64,
    pub lambda: f64,
    pub gamma: String,
    pub grid: [usize; 2],
    pub residual_sup: Vec<f64>,
    pub residual_l2: Vec<f64>,
    pub m_k: f64,
    pub envelope_flagged: bool,
    pub trace: Vec<TraceEntry>,
    pub message: Option<String>,
    pub calibration: Option<Calibration>,
    pub verification: Option<Verification>,
    pub destabilizer: Option<ThetaProjector>,
}

fn residual_norms(grid: &SphereGrid, res: &[GridField]) -> (Vec<f64>, Vec<f64>) {
    let sup = res.iter().map(GridField::max_abs).collect();
    let l2 = res
        .iter()
        .map(|r| {
            let sq = GridField {
                values: r.values.iter().map(|v| v * v).collect(),
            };
            quadrature(grid, &sq).sqrt()
        })
        .collect();
    (sup, l2)
}

/// Runs the epsilon continuation from `u = 0` down to the floor and then
/// polishes at `eps = 0`.
pub fn continuity_solve_with(
    grid: &SphereGrid,
    sys: &ScalarSystem,
    c_delta: f64,
    config: &SolveConfig,
) -> (ScalarMetricState, SolveReport) {
    let mk = m_k(grid, sys);
    let mut state = ScalarMetricState::zero(grid, sys.len(), config.eps_start);
    let mut trace = Vec::new();
    let mut violations = 0usize;
    let mut flagged = false;
    let mut outcome = None;
    let mut message = None;

    for eps in config.schedule() {
        state.epsilon = eps;
        let before = state.clone();
        match solve_level(grid, sys, &mut state, c_delta, config) {
            Ok(steps) => {
                let max_abs = state.max_abs();
                let envelope = config.envelope_slack * mk / eps;
                let ok = max_abs.iter().all(|&m| m <= envelope);
                if ok {
                    violations = 0;
                } else {
                    violations += 1;
                    flagged = true;
                }
                let (sup, _) = residual_norms(grid, &sys.residual(grid, &state, c_delta));
                trace.push(TraceEntry {
                    epsilon: eps,
                    newton_steps: steps,
                    sup_u: state.sup(),
                    max_abs_u: max_abs.clone(),
                    residual_sup: sup.iter().fold(0.0, |a: f64, &b| a.max(b)),
                    envelope,
                    envelope_ok: ok,
                });
                let big = max_abs.iter().fold(0.0f64, |a, &b| a.max(b));
                if big > config.blowup_threshold {
                    outcome = Some(Outcome::BlowUp);
                    message = Some(format!("sup |u| = {big:.3} exceeds threshold at eps = {eps:e}"));
                    break;
                }
                if violations >= config.envelope_patience {
                    outcome = Some(Outcome::BlowUp);
                    message = Some(format!("a priori envelope violated at {violations} consecutive levels"));
                    break;
                }
            }
            Err(e) => {
                let big = before.max_abs().iter().fold(0.0f64, |a, &b| a.max(b));
                state = before;
                outcome = Some(if big > config.blowup_threshold / 2.0 {
                    Outcome::BlowUp
                } else {
                    Outcome::Stalled
                });
                message = Some(format!("eps = {eps:e}: {e}"));
                break;
            }
        }
    }

    if outcome.is_none() {
        let before = state.clone();
        state.epsilon = 0.0;
        match solve_level(grid, sys, &mut state, c_delta, config) {
            Ok(_) => {
                let (sup, _) = residual_norms(grid, &sys.residual(grid, &state, c_delta));
                let worst = sup.iter().fold(0.0f64, |a, &b| a.max(b));
                outcome = Some(if worst < config.tol {
                    Outcome::Converged
                } else {
                    message = Some(format!("final residual {worst:e} above tolerance"));
                    Outcome::Stalled
                });
            }
            Err(e) => {
                let big = before.max_abs().iter().fold(0.0f64, |a, &b| a.max(b));
                outcome = Some(if big > config.blowup_threshold / 2.0 {
                    Outcome::BlowUp
                } else {
                    Outcome::Stalled
                });
                message = Some(format!("eps = 0: {e}"));
                state = before;
            }
        }
    }

    let (residual_sup, residual_l2) = residual_norms(grid, &sys.residual(grid, &state, c_delta));
    let report = SolveReport {
        outcome: outcome.unwrap_or(Outcome::Stalled),
        c_delta,
        lambda: sys.lambda,
        gamma: sys.gamma.to_string(),
        grid: [grid.n_theta, grid.n_phi],
        residual_sup,
        residual_l2,
        m_k: mk,
        envelope_flagged: flagged,
        trace,
        message,
        calibration: None,
        verification: None,
        destabilizer: None,
    };
    (state, report)
}

/// Calibrates the Laplacian constant if needed and runs the continuation.
pub fn continuity_solve(
    model: &QBundleModel,
    params: &StabilityParams,
    grid: &SphereGrid,
    config: &SolveConfig,
) -> Result<(ScalarMetricState, SolveReport), SolverError> {
    let sys = ScalarSystem::new(model, params, grid)?;
    let (c_delta, calibration) = match config.c_delta {
        Some(c) => (c, None),
        None => {
            let cal = calibrate(grid)?;
            (cal.c_delta, Some(cal))
        }
    };
    let (state, mut report) = continuity_solve_with(grid, &sys, c_delta, config);
    report.calibration = calibration;
    Ok((state, report))
}

/// Fixes the sign of the Laplacian term: the single-vertex linearization
/// must be positive definite, and the stable nonconstant instance must solve
/// and verify on a coarse grid. Exactly one sign may pass.
pub fn calibrate(grid: &SphereGrid) -> Result<Calibration, SolverError> {
    let single = ScalarSystem {
        sigma: vec![1.0],
        tau: vec![0.0],
        degrees: vec![0],
        curvature: vec![0.0],
        arrows: Vec::new(),
        lambda: 2.0 * PI / grid.total_volume,
        gamma: Rational::from_integer(0.into()),
        components: vec![vec![0]],
    };
    let probe = ScalarMetricState::zero(grid, 1, 1.0);
    let ritz = |c: f64| jacobian_min_ritz(grid, &single, &probe, c, 40);
    let (rp, rn) = (ritz(0.5), ritz(-0.5));

    let coarse = make_sphere_grid(16, 32, 1.0)?;
    let (model, params) = stable_nonconstant();
    let sys = ScalarSystem::new(&model, &params, &coarse)?;
    let cfg = SolveConfig {
        tol: 1e-6,
        ..SolveConfig::default()
    };
    let passes = |c: f64| {
        let (state, report) = continuity_solve_with(&coarse, &sys, c, &cfg);
        report.outcome == Outcome::Converged
            && verify_he(&coarse, &sys, &state, &report)
                .map(|v| v.gamma_identity.abs() < 1e-8 && v.max_identity_residual() < 1e-3)
                .unwrap_or(false)
    };
    let (sp, sn) = (passes(0.5), passes(-0.5));
    let pos = rp > 0.0 && sp;
    let neg = rn > 0.0 && sn;
    let detail = format!("ritz(+1/2) = {rp:e}, ritz(-1/2) = {rn:e}, solve(+) = {sp}, solve(-) = {sn}");
    let c_delta = match (pos, neg) {
        (true, false) => 0.5,
        (false, true) => -0.5,
        _ => return Err(SolverError::CalibrationAmbiguous(detail)),
    };
    Ok(Calibration {
        c_delta,
        min_ritz_positive: rp,
        min_ritz_negative: rn,
        solve_positive: sp,
        solve_negative: sn,
    })
}

/// Both sides of the integrated Weitzenbock identity for one arrow:
/// `int (F_h - F_t) |phi|^2_H` and `int |d_H phi|^2`.
pub fn arrow_identity(
    grid: &SphereGrid,
    sys: &ScalarSystem,
    state: &ScalarMetricState,
    c_delta: f64,
    arrow: &ArrowTerm,
) -> Result<(f64, f64), SolverError> {
    let eig = grid.mode_eigenvalues();
    let v_coeffs: Vec<f64> = state.coeffs[arrow.head]
        .iter()
        .zip(&state.coeffs[arrow.tail])
        .map(|(h, t)| h - t)
        .collect();
    let v = grid.synthesize(&v_coeffs);
    let lap_v = grid.synthesize(
        &v_coeffs
            .iter()
            .zip(&eig)
            .map(|(c, l)| c * l)
            .collect::<Vec<_>>(),
    );
    let (v_t, v_p) = grid.gradient(&v)?;
    let f_diff = sys.curvature[arrow.head] - sys.curvature[arrow.tail];
    let d = arrow.degree as i32;
    let r2 = grid.total_volume / (4.0 * PI);
    let coeffs = &arrow.coefficients;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut k = 0;
    for &th in &grid.theta {
        let (s, c) = ((th / 2.0).sin(), (th / 2.0).cos());
        for &ph in &grid.phi {
            let zeta = num_complex::Complex64::from_polar(1.0, ph);
            let mut p = num_complex::Complex64::new(0.0, 0.0);
            let mut g = num_complex::Complex64::new(0.0, 0.0);
            for (j, a) in coeffs.iter().enumerate() {
                let j = j as i32;
                p += a * s.powi(j) * c.powi(d - j) * zeta.powi(j);
                // d/dz of the affine polynomial, rewritten homogeneously
                let term = if j == 0 {
                    -(d as f64) * s * c.powi(d - 1) * zeta.conj()
                } else if j == d {
                    d as f64 * s.powi(d - 1) * c * zeta.powi(d - 1)
                } else {
                    (j as f64 - d as f64 * s * s)
                        * s.powi(j - 1)
                        * c.powi(d - j - 1)
                        * zeta.powi(j - 1)
                };
                g += a * term;
            }
            let ev = v.values[k].exp();
            let psi = p.norm_sqr() * ev;
            let f = f_diff + c_delta * lap_v.values[k];
            let grad = num_complex::Complex64::new(v_t.values[k], -v_p.values[k]);
            let dphi = g + p * zeta.conj() * grad;
            let w = grid.area[k];
            lhs += w * f * psi;
            rhs += w * ev * dphi.norm_sqr() / (2.0 * r2);
            k += 1;
        }
    }
    Ok((lhs, rhs))
}

/// Residual norms, the integrated gamma identity and the per-arrow
/// Weitzenbock identity at a converged state.
pub fn verify_he(
    grid: &SphereGrid,
    sys: &ScalarSystem,
    state: &ScalarMetricState,
    report: &SolveReport,
) -> Result<Verification, SolverError> {
    if report.outcome != Outcome::Converged {
        return Err(SolverError::NotConverged);
    }
    let c_delta = report.c_delta;
    let mut at_zero = state.clone();
    at_zero.epsilon = 0.0;
    let res = sys.residual(grid, &at_zero, c_delta);
    let (residual_sup, residual_l2) = residual_norms(grid, &res);
    let gamma_identity = res.iter().map(|r| quadrature(grid, r)).sum();
    let mut arrow_identities = Vec::new();
    for a in &sys.arrows {
        let (lhs, rhs) = arrow_identity(grid, sys, &at_zero, c_delta, a)?;
        let scale = lhs.abs().max(rhs.abs());
        let both_vanish = scale < 1e-12;
        arrow_identities.push(ArrowIdentity {
            arrow: a.index,
            lhs,
            rhs,
            relative: if both_vanish { 0.0 } else { (lhs - rhs).abs() / scale },
            both_vanish,
        });
    }
    Ok(Verification {
        residual_sup,
        residual_l2,
        gamma_identity,
        arrow_identities,
    })
}

/// Reads the destabilizing subobject off the per-vertex scales of the last
/// accepted state of a blow-up run.
pub fn extract_destabilizer(
    model: &QBundleModel,
    params: &StabilityParams,
    report: &SolveReport,
    collapse_gap: f64,
) -> Result<ThetaProjector, SolverError> {
    if report.outcome != Outcome::BlowUp {
        return Err(SolverError::NotBlowUp);
    }
    let last = report.trace.last().ok_or(SolverError::NoCollapseDetected)?;
    let n = last.sup_u.len();
    let top = last.sup_u.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let profile: Vec<f64> = last.sup_u.iter().map(|s| s - top).collect();
    let rho = last.sup_u.iter().map(|s| (-s).exp()).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| profile[b].total_cmp(&profile[a]).then(a.cmp(&b)));
    let mut levels: Vec<Vec<usize>> = vec![vec![order[0]]];
    for w in order.windows(2) {
        if profile[w[0]] - profile[w[1]] > collapse_gap {
            levels.push(Vec::new());
        }
        levels.last_mut().expect("nonempty").push(w[1]);
    }
    if levels.len() < 2 {
        return Err(SolverError::NoCollapseDetected);
    }
    for l in &mut levels {
        l.sort_unstable();
    }

    let total = deg_slope(model, Subject::Full, params)?.slope;
    let mask_of = |set: &[usize]| {
        let mut m = vec![false; n];
        set.iter().for_each(|&i| m[i] = true);
        m
    };
    // Filtration members: everything strictly below level k.
    let mut best: Option<(Vec<usize>, Rational)> = None;
    for k in 1..levels.len() {
        let mut set: Vec<usize> = levels[k..].iter().flatten().copied().collect();
        set.sort_unstable();
        let mask = mask_of(&set);
        if !is_arrow_closed(model, &mask) {
            continue;
        }
        let slope = slope_of_parts(&support_subobject(model, &mask).parts, params)?.slope;
        let better = match &best {
            None => true,
            Some((bset, bslope)) => slope > *bslope || (slope == *bslope && set.len() < bset.len()),
        };
        if better {
            best = Some((set, slope));
        }
    }
    let mut collapsed: Vec<usize> = levels[1..].iter().flatten().copied().collect();
    collapsed.sort_unstable();
    let support = best.as_ref().map_or(collapsed.clone(), |(s, _)| s.clone());
    let mask = mask_of(&support);
    let closure_residual = model
        .quiver
        .arrows()
        .iter()
        .enumerate()
        .filter(|(a, arrow)| model.arrow_nonzero(*a) && mask[arrow.tail] && !mask[arrow.head])
        .count() as f64;
    let slope_sub = slope_of_parts(&support_subobject(model, &mask).parts, params)?.slope;
    let (max_sub, _) = max_slope_subobject(model, params)?;
    let max_slope_support = max_sub.support();
    Ok(ThetaProjector {
        matches_max_slope: max_slope_support == support,
        destabilizing: slope_sub >= total,
        slope_sub: slope_sub.to_string(),
        slope_total: total.to_string(),
        support,
        collapsed,
        profile,
        rho,
        levels,
        idempotent_residual: 0.0,
        selfadjoint_residual: 0.0,
        closure_residual,
        max_slope_support,
    })
}

/// Interpolates band-limited coefficients from one grid onto another.
pub fn resample(from: &SphereGrid, coeffs: &[f64], to: &SphereGrid) -> GridField {
    let mut out = vec![0.0; to.num_modes()];
    for (c, md) in coeffs.iter().zip(from.modes()) {
        if let Some(j) = to.modes().iter().position(|m| m == md) {
            out[j] = *c;
        }
    }
    to.synthesize(&out)
}

/// Dense coefficient-space Jacobian (small grids only; for testing).
pub fn dense_jacobian(
    grid: &SphereGrid,
    sys: &ScalarSystem,
    state: &ScalarMetricState,
    c_delta: f64,
) -> DMatrix<f64> {
    let jac = Jacobian::new(grid, sys, state, c_delta);
    let n = sys.len() * grid.num_modes();
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        m.set_column(k, &DVector::from_vec(jac.apply(&e)));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{constant_instance, example_one, p1_params};
    use crate::quiver::{build_quiver, QBundleModel, Summand, VertexBundleData};
    use crate::stability::int;

    fn grid(nt: usize, np: usize) -> SphereGrid {
        make_sphere_grid(nt, np, 1.0).unwrap()
    }

    fn random_state(grid: &SphereGrid, n: usize, seed: u64, eps: f64) -> ScalarMetricState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..n)
            .map(|_| {
                grid.modes()
                    .iter()
                    .map(|m| rng.random_range(-1.0..1.0) / (1.0 + (m.l * m.l) as f64))
                    .collect()
            })
            .collect();
        let mut s = ScalarMetricState::from_coeffs(grid, coeffs, eps);
        s.normalize(grid);
        s
    }

    #[test]
    fn exact_constant_solution_has_zero_residual() {
        let g = grid(16, 32);
        let (m, p) = constant_instance(true);
        let sys = ScalarSystem::new(&m, &p, &g).unwrap();
        let h = 0.5 * (2.0 * PI).ln();
        let fields = [GridField::constant(&g, -h), GridField::constant(&g, h)];
        let state = ScalarMetricState::from_fields(&g, &fields, 0.0).unwrap();
        for r in sys.residual(&g, &state, 0.5) {
            assert!(r.max_abs() < 1e-10);
        }
    }

    #[test]
    fn single_trivial_vertex_is_a_fixed_point() {
        let g = grid(8, 8);
        let q = build_quiver(["i"], Vec::new()).unwrap();
        let m = QBundleModel {
            base: BaseFixture::P1,
            quiver: q,
            vertex_data: vec![VertexBundleData::line(Summand::p1(0))],
            arrow_data: vec![],
            declared_subobjects: None,
        };
        let p = StabilityParams::new(vec![crate::stability::rat(1, 2)], vec![int(1)], vec![int(0)]).unwrap();
        let state = ScalarMetricState::zero(&g, 1, 0.0);
        let r = assemble_residual(&m, &p, &g, &state, 0.5).unwrap();
        assert!(r[0].max_abs() < 1e-14);
    }

    #[test]
    fn hopf_and_higher_rank_are_refused() {
        let g = grid(8, 8);
        let m = crate::instances::hopf_line(1);
        let p = p1_params(int(0), int(1));
        assert_eq!(
            ScalarSystem::new(&m, &p, &g).unwrap_err(),
            SolverError::FixtureUnsupported
        );
    }

    #[test]
    fn integrated_residual_matches_eps_term() {
        let g = grid(16, 32);
        let (m, p) = stable_nonconstant();
        let sys = ScalarSystem::new(&m, &p, &g).unwrap();
        for seed in 0..5 {
            let mut s = random_state(&g, 2, seed, 0.3);
            s.coeffs[0][0] += 0.7;
            s = ScalarMetricState::from_coeffs(&g, s.coeffs, 0.3);
            let total: f64 = sys.residual(&g, &s, 0.5).iter().map(|r| quadrature(&g, r)).sum();
            assert!((total - 0.3 * s.total_integral(&g)).abs() < 1e-10);
            s.normalize(&g);
            assert!(s.total_integral(&g).abs() < 1e-12);
            let total: f64 = sys.residual(&g, &s, 0.5).iter().map(|r| quadrature(&g, r)).sum();
            assert!(total.abs() < 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = grid(12, 24);
        let (m, p) = stable_nonconstant();
        let sys = ScalarSystem::new(&m, &p, &g).unwrap();
        let s = random_state(&g, 2, 4, 0.2);
        let dir = random_state(&g, 2, 9, 0.2);
        let dx: Vec<f64> = dir.coeffs.concat();
        let jv = jacobian_apply(&g, &sys, &s, 0.5, &dx);
        let h = 1e-5;
        let shifted: Vec<Vec<f64>> = s
            .coeffs
            .iter()
            .zip(&dir.coeffs)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + h * y).collect())
            .collect();
        let s2 = ScalarMetricState::from_coeffs(&g, shifted, 0.2);
        let r0 = coefficient_residual(&g, &sys.residual(&g, &s, 0.5));
        let r1 = coefficient_residual(&g, &sys.residual(&g, &s2, 0.5));
        for k in 0..r0.len() {
            let fd = (r1[k] - r0[k]) / h;
            assert!((fd - jv[k]).abs() < 1e-3 * (1.0 + jv[k].abs()), "{k}: {fd} vs {}", jv[k]);
        }
    }

    #[test]
    fn jacobian_is_symmetric_positive_definite() {
        let g = grid(8, 16);
        let (m, p) = stable_nonconstant();
        let sys = ScalarSystem::new(&m, &p, &g).unwrap();
        let s = random_state(&g, 2, 1, 0.1);
        let j = dense_jacobian(&g, &sys, &s, 0.5);
        assert!((&j - j.transpose()).amax() < 1e-9 * j.amax());
        assert!(j.symmetric_eigenvalues().min() > 0.0);
        assert!(jacobian_min_ritz(&g, &sys, &s, 0.5, 60) > 0.0);
    }

    #[test]
    fn wrong_sign_probe_is_indefinite() {
        let g = grid(16, 32);
        let single = ScalarSystem {
            sigma: vec![1.0],
            tau: vec![0.0],
            degrees: vec![0],
            curvature: vec![0.0],
            arrows: Vec::new(),
            lambda: 2.0 * PI,
            gamma: Rational::from_integer(0.into()),
            components: vec![vec![0]],
        };
        let probe = ScalarMetricState::zero(&g, 1, 1.0);
        assert!(jacobian_min_ritz(&g, &single, &probe, -0.5, 30) < 0.0);
        assert!(jacobian_min_ritz(&g, &single, &probe, 0.5, 30) > 0.0);
    }

    #[test]
    fn calibration_picks_positive_half() {
        let cal = calibrate(&grid(16, 32)).unwrap();
        assert_eq!(cal.c_delta, 0.5);
        assert!(cal.solve_positive && !cal.solve_negative);
    }

    #[test]
    fn newton_from_zero_halves_the_residual() {
        let g = grid(32, 64);
        let (m, p) = constant_instance(true);
        let sys = ScalarSystem::new(&m, &p, &g).unwrap();
        let s = ScalarMetricState::zero(&g, 2, 1e-6);
        let before = sys.residual(&g, &s, 0.5);
        let (next, _) = newton_step(&g, &sys, &s, 0.5, &SolveConfig::default()).unwrap();
        let after = sys.residual(&g, &next, 0.5);
        let sup = |r: &[GridField]| r.iter().fold(0.0f64, |a, f| a.max(f.max_abs()));
        assert!(sup(&after) <= 0.5 * sup(&before));
    }

    #[test]
    fn newton_at_exact_solution_barely_moves() {
        let g = grid(16, 32);
        let (m, p) = constant_instance(true);
        let sys = ScalarSystem::new(&m, &p, &g).unwrap();
        let h = 0.5 * (2.0 * PI).ln();
        let fields = [GridField::constant(&g, -h), GridField::constant(&g, h)];
        let s = ScalarMetricState::from_fields(&g, &fields, 1e-6).unwrap();
        let cfg = SolveConfig::default();
        match newton_step(&g, &sys, &s, 0.5, &cfg) {
            Ok((_, rep)) => assert!(rep.step_norm < 1e-6),
            Err(SolverError::LineSearchFailure(r)) => assert!(r < 1e-9),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn weitzenbock_identity_for_arbitrary_potentials() {
        let g = grid(32, 64);
        for (mi, mj) in [(0, 1), (0, 2), (1, 4)] {
            let m = example_one(mi, mj);
            let p = p1_params(int(0), int(2));
            let mut sys = ScalarSystem::new(&m, &p, &g).unwrap();
            sys.arrows[0].coefficients = vec![num_complex::Complex64::new(0.3, 0.1); (mj - mi + 1) as usize];
            for seed in 0..3 {
                let mut s = random_state(&g, 2, seed, 0.0);
                for c in &mut s.coeffs {
                    c.iter_mut().zip(g.modes()).filter(|(_, md)| md.l > 4).for_each(|(x, _)| *x = 0.0);
                }
                let s = ScalarMetricState::from_coeffs(&g, s.coeffs, 0.0);
                let (l, r) = arrow_identity(&g, &sys, &s, 0.5, &sys.arrows[0]).unwrap();
                assert!((l - r).abs() < 1e-9 * l.abs().max(1.0), "{l} vs {r}");
            }
        }
        let sys = ScalarSystem::new(&example_one(0, 1), &p1_params(int(0), int(2)), &g).unwrap();
        let zero = ScalarMetricState::zero(&g, 2, 0.0);
        let (l, r) = arrow_identity(&g, &sys, &zero, 0.5, &sys.arrows[0]).unwrap();
        assert!((l - PI).abs() < 1e-10 && (r - PI).abs() < 1e-10);
    }

    #[test]
    fn constant_instance_m_k() {
        let g = grid(8, 8);
        let (m, p) = constant_instance(true);
        let sys = ScalarSystem::new(&m, &p, &g).unwrap();
        assert!((m_k(&g, &sys) - 4.0 * (2.0 * PI - 1.0)).abs() < 1e-12);
        let d = diagnostics(&g, &sys, &ScalarMetricState::zero(&g, 2, 0.5));
        assert!(d.margins.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn schedule_is_decreasing_to_floor() {
        let s = SolveConfig::default().schedule();
        assert_eq!(s[0], 1.0);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*s.last().unwrap(), 1e-8);
    }

    #[test]
    fn constant_instances_solve_or_blow_up() {
        let g = grid(16, 32);
        let cfg = SolveConfig {
            c_delta: Some(0.5),
            ..SolveConfig::default()
        };
        let (m, p) = constant_instance(true);
        let (state, report) = continuity_solve(&m, &p, &g, &cfg).unwrap();
        assert_eq!(report.outcome, Outcome::Converged, "{:?}", report.message);
        let diff = state.u[1]
            .values
            .iter()
            .zip(&state.u[0].values)
            .fold(0.0f64, |a, (j, i)| a.max((j - i - (2.0 * PI).ln()).abs()));
        assert!(diff < 1e-8);
        assert!(extract_destabilizer(&m, &p, &report, 6.9).is_err());

        let (m, p) = constant_instance(false);
        let (_, report) = continuity_solve(&m, &p, &g, &cfg).unwrap();
        assert_eq!(report.outcome, Outcome::BlowUp);
        let theta = extract_destabilizer(&m, &p, &report, cfg.collapse_gap).unwrap();
        assert_eq!(theta.support, vec![1]);
        assert!(theta.is_valid(2) && theta.matches_max_slope);
    }
}
