//! Pointwise Hermitian endomorphism algebra.
//!
//! A metric `H` is stored as a Hermitian positive-definite matrix with
//! `<u, v>_H = v^H H u`. An endomorphism `f` is H-selfadjoint when `H f` is
//! Hermitian; matrix functions of such `f` go through `H^(1/2) f H^(-1/2)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::quiver::{build_quiver, Quiver};

pub type CMat = DMatrix<Complex64>;

const HERM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EndoError {
    #[error("metric at vertex {0} is singular or not positive definite")]
    SingularMetric(usize),
    #[error("twist at vertex {0} is not invertible")]
    SingularTwist(usize),
    #[error("endomorphism at vertex {0} is not positive definite")]
    NotPositive(usize),
    #[error("endomorphism at vertex {0} is not selfadjoint")]
    NotHermitian(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("exponent {0} outside (0, 1]")]
    BadExponent(f64),
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm() / (1.0 + a.norm().max(b.norm()))
}

fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_part(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

fn is_hermitian(m: &CMat) -> bool {
    m.is_square() && rel_diff(m, &m.adjoint()) <= HERM_TOL
}

fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMetricPoint {
    mats: Vec<CMat>,
}

impl HermitianMetricPoint {
    pub fn new(mats: Vec<CMat>) -> Result<Self, EndoError> {
        for (i, h) in mats.iter().enumerate() {
            if !is_hermitian(h) || min_eigenvalue(h) <= 0.0 {
                return Err(EndoError::SingularMetric(i));
            }
        }
        Ok(HermitianMetricPoint { mats })
    }

    pub fn identity(ranks: &[usize]) -> Self {
        HermitianMetricPoint {
            mats: ranks.iter().map(|&r| CMat::identity(r, r)).collect(),
        }
    }

    pub fn mats(&self) -> &[CMat] {
        &self.mats
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.mats.iter().map(|m| m.nrows()).collect()
    }

    /// `H_i f_i` at every vertex.
    pub fn twisted(&self, f: &EndoPoint) -> Result<Self, EndoError> {
        let mats = self
            .mats
            .iter()
            .zip(&f.mats)
            .map(|(h, fi)| h * fi)
            .collect();
        HermitianMetricPoint::new(mats)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndoPoint {
    mats: Vec<CMat>,
    pub hermitian_wrt_h: bool,
    pub positive_definite: bool,
}

impl EndoPoint {
    /// No claims.
    pub fn new(mats: Vec<CMat>) -> Self {
        EndoPoint {
            mats,
            hermitian_wrt_h: false,
            positive_definite: false,
        }
    }

    pub fn identity(ranks: &[usize]) -> Self {
        EndoPoint {
            mats: ranks.iter().map(|&r| CMat::identity(r, r)).collect(),
            hermitian_wrt_h: true,
            positive_definite: true,
        }
    }

    /// `c_i Id` at each vertex.
    pub fn scalars(ranks: &[usize], values: &[f64]) -> Self {
        EndoPoint {
            mats: ranks
                .iter()
                .zip(values)
                .map(|(&r, &v)| CMat::identity(r, r) * c(v))
                .collect(),
            hermitian_wrt_h: true,
            positive_definite: values.iter().all(|&v| v > 0.0),
        }
    }

    pub fn hermitian(mats: Vec<CMat>, h: &HermitianMetricPoint) -> Result<Self, EndoError> {
        check_shapes(&mats, h)?;
        for (i, (f, hi)) in mats.iter().zip(h.mats()).enumerate() {
            if !is_hermitian(&(hi * f)) {
                return Err(EndoError::NotHermitian(i));
            }
        }
        Ok(EndoPoint {
            mats,
            hermitian_wrt_h: true,
            positive_definite: false,
        })
    }

    pub fn positive(mats: Vec<CMat>, h: &HermitianMetricPoint) -> Result<Self, EndoError> {
        let mut e = Self::hermitian(mats, h)?;
        for (i, (f, hi)) in e.mats.iter().zip(h.mats()).enumerate() {
            if min_eigenvalue(&(hi * f)) <= 0.0 {
                return Err(EndoError::NotPositive(i));
            }
        }
        e.positive_definite = true;
        Ok(e)
    }

    pub fn mats(&self) -> &[CMat] {
        &self.mats
    }
}

fn check_shapes(mats: &[CMat], h: &HermitianMetricPoint) -> Result<(), EndoError> {
    if mats.len() != h.mats.len() {
        return Err(EndoError::ShapeMismatch(format!(
            "{} endomorphisms for {} vertices",
            mats.len(),
            h.mats.len()
        )));
    }
    for (i, (m, hi)) in mats.iter().zip(&h.mats).enumerate() {
        if m.shape() != hi.shape() {
            return Err(EndoError::ShapeMismatch(format!("vertex {i}")));
        }
    }
    Ok(())
}

/// One matrix per arrow, `rk(head) x rk(tail)`; after an adjoint the
/// direction is reversed and the shape transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrowMapPoint {
    pub mats: Vec<CMat>,
    pub reversed: bool,
}

impl ArrowMapPoint {
    pub fn new(quiver: &Quiver, ranks: &[usize], mats: Vec<CMat>) -> Result<Self, EndoError> {
        if mats.len() != quiver.arrows().len() {
            return Err(EndoError::ShapeMismatch(format!(
                "{} maps for {} arrows",
                mats.len(),
                quiver.arrows().len()
            )));
        }
        for (m, a) in mats.iter().zip(quiver.arrows()) {
            if m.shape() != (ranks[a.head], ranks[a.tail]) {
                return Err(EndoError::ShapeMismatch(format!("arrow {}", a.id)));
            }
        }
        Ok(ArrowMapPoint {
            mats,
            reversed: false,
        })
    }

    pub fn zero(quiver: &Quiver, ranks: &[usize]) -> Self {
        ArrowMapPoint {
            mats: quiver
                .arrows()
                .iter()
                .map(|a| CMat::zeros(ranks[a.head], ranks[a.tail]))
                .collect(),
            reversed: false,
        }
    }
}

/// Adjoint of `m: E_src -> E_dst`, i.e. `H_src^-1 m^H H_dst`.
pub fn adjoint_map(m: &CMat, h_src: &CMat, h_dst: &CMat) -> Option<CMat> {
    Some(h_src.clone().try_inverse()? * m.adjoint() * h_dst)
}

pub fn adjoint_wrt(
    quiver: &Quiver,
    phi: &ArrowMapPoint,
    h: &HermitianMetricPoint,
) -> Result<ArrowMapPoint, EndoError> {
    let mats = quiver
        .arrows()
        .iter()
        .zip(&phi.mats)
        .map(|(a, m)| {
            let (src, dst) = if phi.reversed {
                (a.head, a.tail)
            } else {
                (a.tail, a.head)
            };
            adjoint_map(m, &h.mats[src], &h.mats[dst]).ok_or(EndoError::SingularMetric(src))
        })
        .collect::<Result<_, _>>()?;
    Ok(ArrowMapPoint {
        mats,
        reversed: !phi.reversed,
    })
}

/// `f_t^-1 phi^{*H} f_h`, the adjoint for the metric `H f`.
pub fn twisted_adjoint(
    quiver: &Quiver,
    phi: &ArrowMapPoint,
    f: &EndoPoint,
    h: &HermitianMetricPoint,
) -> Result<ArrowMapPoint, EndoError> {
    require_positive(f)?;
    let star = adjoint_wrt(quiver, phi, h)?;
    let mats = quiver
        .arrows()
        .iter()
        .zip(star.mats)
        .map(|(a, s)| {
            let ft_inv = f.mats[a.tail]
                .clone()
                .try_inverse()
                .ok_or(EndoError::SingularTwist(a.tail))?;
            Ok(ft_inv * s * &f.mats[a.head])
        })
        .collect::<Result<_, EndoError>>()?;
    Ok(ArrowMapPoint {
        mats,
        reversed: true,
    })
}

fn require_positive(f: &EndoPoint) -> Result<(), EndoError> {
    if f.positive_definite {
        Ok(())
    } else {
        Err(EndoError::NotPositive(0))
    }
}

/// `A_h phi_a - phi_a A_t` per arrow (endpoints swapped for reversed maps).
pub fn bracket(quiver: &Quiver, a_endo: &EndoPoint, phi: &ArrowMapPoint) -> Vec<CMat> {
    quiver
        .arrows()
        .iter()
        .zip(&phi.mats)
        .map(|(a, m)| {
            let (src, dst) = if phi.reversed {
                (a.head, a.tail)
            } else {
                (a.tail, a.head)
            };
            &a_endo.mats[dst] * m - m * &a_endo.mats[src]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixFn {
    Log,
    Exp,
    Pow(f64),
}

fn sqrt_pair(h: &CMat) -> (CMat, CMat) {
    let eig = hermitian_part(h).symmetric_eigen();
    let u = &eig.eigenvectors;
    let d = |g: fn(f64) -> f64| {
        CMat::from_diagonal(&eig.eigenvalues.map(|l| c(g(l))))
    };
    (
        u * d(f64::sqrt) * u.adjoint(),
        u * d(|l| 1.0 / l.sqrt()) * u.adjoint(),
    )
}

/// Applies a real function to an H-selfadjoint endomorphism.
pub fn apply_fn(
    f: &CMat,
    h: &CMat,
    g: impl Fn(f64) -> f64,
    need_positive: bool,
) -> Option<CMat> {
    let (hs, his) = sqrt_pair(h);
    let s = hermitian_part(&(&hs * f * &his));
    let eig = s.symmetric_eigen();
    if need_positive && eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return None;
    }
    let u = &eig.eigenvectors;
    let d = CMat::from_diagonal(&eig.eigenvalues.map(|l| c(g(l))));
    Some(his * u * d * u.adjoint() * hs)
}

pub fn herm_log_exp_pow(
    f: &EndoPoint,
    op: MatrixFn,
    h: &HermitianMetricPoint,
) -> Result<EndoPoint, EndoError> {
    check_shapes(&f.mats, h)?;
    if !f.hermitian_wrt_h {
        return Err(EndoError::NotHermitian(0));
    }
    if let MatrixFn::Pow(s) = op {
        if !(s > 0.0 && s <= 1.0) {
            return Err(EndoError::BadExponent(s));
        }
    }
    let need_positive = !matches!(op, MatrixFn::Exp);
    if need_positive {
        require_positive(f)?;
    }
    let mats = f
        .mats
        .iter()
        .zip(&h.mats)
        .enumerate()
        .map(|(i, (fi, hi))| {
            let out = match op {
                MatrixFn::Log => apply_fn(fi, hi, f64::ln, true),
                MatrixFn::Exp => apply_fn(fi, hi, f64::exp, false),
                MatrixFn::Pow(s) => apply_fn(fi, hi, |l| l.powf(s), true),
            };
            out.ok_or(EndoError::NotPositive(i))
        })
        .collect::<Result<_, _>>()?;
    Ok(EndoPoint {
        mats,
        hermitian_wrt_h: true,
        positive_definite: !matches!(op, MatrixFn::Log),
    })
}

/// Powers beyond the `(0, 1]` range used by the inequalities.
pub fn herm_pow_any(f: &EndoPoint, s: f64, h: &HermitianMetricPoint) -> Result<EndoPoint, EndoError> {
    require_positive(f)?;
    let mats = f
        .mats
        .iter()
        .zip(&h.mats)
        .enumerate()
        .map(|(i, (fi, hi))| apply_fn(fi, hi, |l| l.powf(s), true).ok_or(EndoError::NotPositive(i)))
        .collect::<Result<_, _>>()?;
    Ok(EndoPoint {
        mats,
        hermitian_wrt_h: true,
        positive_definite: true,
    })
}

/// `Re Tr(A B^{*H})` on endomorphisms of one vertex.
pub fn endo_inner(a: &CMat, b: &CMat, h: &CMat) -> f64 {
    adjoint_map(b, h, h).map_or(f64::NAN, |bs| (a * bs).trace().re)
}

/// `Re Tr(A B^*)` for maps `E_src -> E_dst`.
pub fn map_inner(a: &CMat, b: &CMat, h_src: &CMat, h_dst: &CMat) -> f64 {
    adjoint_map(b, h_src, h_dst).map_or(f64::NAN, |bs| (a * bs).trace().re)
}

/// `sum_{h(a)=i} phi_a phi_a^{*H f} - sum_{t(a)=i} phi_a^{*H f} phi_a`.
pub fn moment_term(
    quiver: &Quiver,
    vertex: usize,
    phi: &ArrowMapPoint,
    f: &EndoPoint,
    h: &HermitianMetricPoint,
) -> Result<CMat, EndoError> {
    let star = twisted_adjoint(quiver, phi, f, h)?;
    let r = h.mats[vertex].nrows();
    let mut out = CMat::zeros(r, r);
    for (k, a) in quiver.arrows().iter().enumerate() {
        if a.head == vertex {
            out += &phi.mats[k] * &star.mats[k];
        }
        if a.tail == vertex {
            out -= &star.mats[k] * &phi.mats[k];
        }
    }
    Ok(out)
}

/// Twisted minus untwisted moment pairing against `log f`; nonnegative.
pub fn log_pairing_gap(
    quiver: &Quiver,
    f: &EndoPoint,
    phi: &ArrowMapPoint,
    h: &HermitianMetricPoint,
) -> Result<f64, EndoError> {
    let log_f = herm_log_exp_pow(f, MatrixFn::Log, h)?;
    let id = EndoPoint::identity(&h.ranks());
    let mut gap = 0.0;
    for i in 0..h.mats.len() {
        let twisted = moment_term(quiver, i, phi, f, h)?;
        let plain = moment_term(quiver, i, phi, &id, h)?;
        gap += endo_inner(&(twisted - plain), &log_f.mats[i], &h.mats[i]);
    }
    Ok(gap)
}

/// Slack in the arrow-term chain for `f^s`:
/// `<f_t^-1 phi^* f_h, [phi^*, f^s]> - <moment, f^s> - sum |f_t^(-s/2) [phi^*, f^s]|^2`.
pub fn power_chain_gap(
    quiver: &Quiver,
    f: &EndoPoint,
    s: f64,
    phi: &ArrowMapPoint,
    h: &HermitianMetricPoint,
) -> Result<f64, EndoError> {
    let fs = herm_log_exp_pow(f, MatrixFn::Pow(s), h)?;
    let f_half = herm_pow_any(f, -s / 2.0, h)?;
    let star = adjoint_wrt(quiver, phi, h)?;
    let twisted = twisted_adjoint(quiver, phi, f, h)?;
    // [phi^*, f^s] = phi^* f_h^s - f_t^s phi^*
    let comm: Vec<CMat> = bracket(quiver, &fs, &star).into_iter().map(|m| -m).collect();
    let mut lhs = 0.0;
    let mut norm_sq = 0.0;
    for (k, a) in quiver.arrows().iter().enumerate() {
        let (hh, ht) = (&h.mats[a.head], &h.mats[a.tail]);
        lhs += map_inner(&twisted.mats[k], &comm[k], hh, ht);
        let w = &f_half.mats[a.tail] * &comm[k];
        norm_sq += map_inner(&w, &w, hh, ht);
    }
    let id = EndoPoint::identity(&h.ranks());
    let mut moment = 0.0;
    for i in 0..h.mats.len() {
        let m = moment_term(quiver, i, phi, &id, h)?;
        moment += endo_inner(&m, &fs.mats[i], &h.mats[i]);
    }
    Ok(lhs - moment - norm_sq)
}

/// Real dimension of `{A : A_i H_i-selfadjoint, [A, phi] = 0}`.
pub fn commutant_dimension(
    quiver: &Quiver,
    phi: &ArrowMapPoint,
    h: &HermitianMetricPoint,
) -> Result<usize, EndoError> {
    // A_i = H_i^-1 B_i with B_i Hermitian; real basis of Hermitian matrices.
    let ranks = h.ranks();
    let mut basis: Vec<(usize, CMat)> = Vec::new();
    for (i, &r) in ranks.iter().enumerate() {
        let hinv = h.mats[i]
            .clone()
            .try_inverse()
            .ok_or(EndoError::SingularMetric(i))?;
        for p in 0..r {
            for q in p..r {
                let mut e = CMat::zeros(r, r);
                e[(p, q)] = c(1.0);
                e[(q, p)] = c(1.0);
                basis.push((i, &hinv * &e));
                if p != q {
                    let mut e = CMat::zeros(r, r);
                    e[(p, q)] = Complex64::new(0.0, 1.0);
                    e[(q, p)] = Complex64::new(0.0, -1.0);
                    basis.push((i, &hinv * &e));
                }
            }
        }
    }
    let columns: Vec<Vec<f64>> = basis
        .iter()
        .map(|(i, a)| {
            let mut mats: Vec<CMat> = ranks.iter().map(|&r| CMat::zeros(r, r)).collect();
            mats[*i] = a.clone();
            bracket(quiver, &EndoPoint::new(mats), phi)
                .iter()
                .flat_map(|m| m.iter().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>())
                .collect()
        })
        .collect();
    let n = columns.len();
    let rows = columns.first().map_or(0, Vec::len);
    if rows == 0 {
        return Ok(n);
    }
    let m = DMatrix::<f64>::from_fn(rows.max(n), n, |r, k| {
        if r < rows {
            columns[k][r]
        } else {
            0.0
        }
    });
    let sv = m.singular_values();
    let scale = sv.iter().fold(1.0f64, |a, &b| a.max(b));
    Ok(sv.iter().filter(|&&s| s <= 1e-9 * scale).count())
}

/// One random pointwise configuration for the inequality sweeps.
#[derive(Debug, Clone)]
pub struct PointInstance {
    pub quiver: Quiver,
    pub h: HermitianMetricPoint,
    pub f: EndoPoint,
    pub phi: ArrowMapPoint,
}

fn random_cmat(rng: &mut impl Rng, r: usize, c_: usize) -> CMat {
    CMat::from_fn(r, c_, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Hermitian with eigenvalues bounded below by `floor`.
fn random_hpd(rng: &mut impl Rng, r: usize, floor: f64) -> CMat {
    let a = random_cmat(rng, r, r);
    &a * a.adjoint() * c(1.0 / r as f64) + CMat::identity(r, r) * c(floor)
}

pub fn random_instance(rng: &mut impl Rng, max_rank: usize) -> PointInstance {
    let n = rng.random_range(2..=4usize);
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let n_arrows = rng.random_range(1..=4usize);
    let arrows: Vec<(String, String, String)> = (0..n_arrows)
        .map(|k| {
            let t = rng.random_range(0..n);
            let h = (t + rng.random_range(1..n)) % n;
            (format!("a{k}"), names[t].clone(), names[h].clone())
        })
        .collect();
    let quiver = build_quiver(names, arrows).expect("generated quiver is well formed");
    let ranks: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_rank)).collect();
    let h = HermitianMetricPoint::new(
        ranks.iter().map(|&r| random_hpd(rng, r, 0.5)).collect(),
    )
    .expect("generated metric is positive");
    let f_mats: Vec<CMat> = ranks
        .iter()
        .zip(h.mats())
        .map(|(&r, hi)| {
            let m = random_hpd(rng, r, 0.2);
            let hinv = hi.clone().try_inverse().expect("metric is invertible");
            hinv * m
        })
        .collect();
    let f = EndoPoint::positive(f_mats, &h).expect("generated twist is positive");
    let phi_mats = quiver
        .arrows()
        .iter()
        .map(|a| random_cmat(rng, ranks[a.head], ranks[a.tail]))
        .collect();
    let phi = ArrowMapPoint::new(&quiver, &ranks, phi_mats).expect("shapes match");
    PointInstance { quiver, h, f, phi }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepFailure {
    pub instance: usize,
    pub check: String,
    pub gap: f64,
    pub dump: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub seed: u64,
    pub instances: usize,
    pub min_log_pairing_gap: f64,
    pub min_power_chain_gap: f64,
    pub max_adjoint_residual: f64,
    pub failures: Vec<SweepFailure>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const SWEEP_EXPONENTS: [f64; 3] = [0.25, 0.5, 1.0];

fn cmat_json(m: &CMat) -> serde_json::Value {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|k| [m[(r, k)].re, m[(r, k)].im]).collect())
        .collect();
    serde_json::json!(rows)
}

impl PointInstance {
    pub fn to_json(&self) -> serde_json::Value {
        let arrows: Vec<_> = self
            .quiver
            .arrows()
            .iter()
            .map(|a| serde_json::json!({"id": a.id, "tail": a.tail, "head": a.head}))
            .collect();
        serde_json::json!({
            "vertices": self.quiver.vertices(),
            "arrows": arrows,
            "H": self.h.mats().iter().map(cmat_json).collect::<Vec<_>>(),
            "f": self.f.mats().iter().map(cmat_json).collect::<Vec<_>>(),
            "phi": self.phi.mats.iter().map(cmat_json).collect::<Vec<_>>(),
        })
    }
}

/// Largest relative violation of `<phi u, v>_{H_h} = <u, phi^* v>_{H_t}` over
/// all arrows, checked as the matrix identity `H_h phi = (phi^*)^H H_t`.
pub fn adjoint_identity_residual(
    quiver: &Quiver,
    phi: &ArrowMapPoint,
    h: &HermitianMetricPoint,
) -> Result<f64, EndoError> {
    let star = adjoint_wrt(quiver, phi, h)?;
    let mut worst = 0.0f64;
    for (k, a) in quiver.arrows().iter().enumerate() {
        let (ht, hh) = (&h.mats()[a.tail], &h.mats()[a.head]);
        let lhs = hh * &phi.mats[k];
        let rhs = star.mats[k].adjoint() * ht;
        let scale = hh.norm() * phi.mats[k].norm() + f64::MIN_POSITIVE;
        worst = worst.max((lhs - rhs).norm() / scale);
    }
    Ok(worst)
}

/// Seeded sweep of both pointwise inequalities with absolute tolerance `tol`.
pub fn run_sweep(seed: u64, instances: usize, max_rank: usize, tol: f64) -> SweepReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SweepReport {
        seed,
        instances,
        min_log_pairing_gap: f64::INFINITY,
        min_power_chain_gap: f64::INFINITY,
        max_adjoint_residual: 0.0,
        failures: Vec::new(),
    };
    for k in 0..instances {
        let inst = random_instance(&mut rng, max_rank);
        let mut record = |check: String, gap: Result<f64, EndoError>, min: &mut f64| {
            let g = gap.unwrap_or(f64::NAN);
            *min = min.min(g);
            if g.is_nan() || g < -tol {
                report.failures.push(SweepFailure {
                    instance: k,
                    check,
                    gap: g,
                    dump: inst.to_json(),
                });
            }
        };
        let mut m_log = report.min_log_pairing_gap;
        record(
            "log pairing".into(),
            log_pairing_gap(&inst.quiver, &inst.f, &inst.phi, &inst.h),
            &mut m_log,
        );
        let mut m_pow = report.min_power_chain_gap;
        for s in SWEEP_EXPONENTS {
            record(
                format!("power chain s={s}"),
                power_chain_gap(&inst.quiver, &inst.f, s, &inst.phi, &inst.h),
                &mut m_pow,
            );
        }
        report.min_log_pairing_gap = m_log;
        report.min_power_chain_gap = m_pow;
        let twisted = inst.h.twisted(&inst.f);
        let adj = adjoint_identity_residual(&inst.quiver, &inst.phi, &inst.h).and_then(|a| {
            let b = adjoint_identity_residual(&inst.quiver, &inst.phi, &twisted?)?;
            Ok(a.max(b))
        });
        let adj = adj.unwrap_or(f64::NAN);
        report.max_adjoint_residual = report.max_adjoint_residual.max(adj);
        if adj.is_nan() || adj > tol {
            report.failures.push(SweepFailure {
                instance: k,
                check: "adjoint".into(),
                gap: adj,
                dump: inst.to_json(),
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn scalar(z: Complex64) -> CMat {
        CMat::from_element(1, 1, z)
    }

    fn chain() -> Quiver {
        build_quiver(["i", "j"], [("a".into(), "i".into(), "j".into())]).unwrap()
    }

    fn metric(vals: &[f64]) -> HermitianMetricPoint {
        HermitianMetricPoint::new(vals.iter().map(|&v| scalar(c(v))).collect()).unwrap()
    }

    fn close(a: &CMat, b: &CMat, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn scalar_adjoint() {
        let q = chain();
        let phi = ArrowMapPoint::new(&q, &[1, 1], vec![scalar(Complex64::new(1.0, 1.0))]).unwrap();
        let star = adjoint_wrt(&q, &phi, &metric(&[2.0, 3.0])).unwrap();
        assert!(close(&star.mats[0], &scalar(Complex64::new(1.5, -1.5)), 1e-15));
        let id = adjoint_wrt(&q, &phi, &metric(&[1.0, 1.0])).unwrap();
        assert_eq!(id.mats[0], phi.mats[0].adjoint());
    }

    #[test]
    fn adjoint_identity_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 4);
            let star = adjoint_wrt(&inst.quiver, &inst.phi, &inst.h).unwrap();
            let back = adjoint_wrt(&inst.quiver, &star, &inst.h).unwrap();
            for (k, a) in inst.quiver.arrows().iter().enumerate() {
                let (ht, hh) = (&inst.h.mats()[a.tail], &inst.h.mats()[a.head]);
                let u = random_cmat(&mut rng, ht.nrows(), 1);
                let v = random_cmat(&mut rng, hh.nrows(), 1);
                let a_side = (v.adjoint() * hh * &inst.phi.mats[k] * &u)[(0, 0)];
                let b_side = ((&star.mats[k] * &v).adjoint() * ht * &u)[(0, 0)];
                assert!((a_side - b_side).norm() < 1e-10);
                assert!(close(&back.mats[k], &inst.phi.mats[k], 1e-10));
            }
        }
    }

    #[test]
    fn adjoint_reverses_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = build_quiver(
            ["x", "y", "z"],
            [
                ("p".into(), "x".into(), "y".into()),
                ("q".into(), "y".into(), "z".into()),
                ("pq".into(), "x".into(), "z".into()),
            ],
        )
        .unwrap();
        let ranks = [2, 3, 2];
        let h = HermitianMetricPoint::new(ranks.iter().map(|&r| random_hpd(&mut rng, r, 0.5)).collect())
            .unwrap();
        let p = random_cmat(&mut rng, 3, 2);
        let qm = random_cmat(&mut rng, 2, 3);
        let phi = ArrowMapPoint::new(&q, &ranks, vec![p, qm.clone(), &qm * random_cmat(&mut rng, 3, 2)])
            .unwrap();
        let phi = ArrowMapPoint {
            mats: vec![phi.mats[0].clone(), phi.mats[1].clone(), &phi.mats[1] * &phi.mats[0]],
            reversed: false,
        };
        let star = adjoint_wrt(&q, &phi, &h).unwrap();
        assert!(close(&star.mats[2], &(&star.mats[0] * &star.mats[1]), 1e-10));
    }

    #[test]
    fn twisted_adjoint_cases() {
        let q = chain();
        let h = metric(&[1.0, 1.0]);
        let phi = ArrowMapPoint::new(&q, &[1, 1], vec![scalar(c(1.0))]).unwrap();
        let f = EndoPoint::positive(vec![scalar(c(E)), scalar(c(E * E))], &h).unwrap();
        let t = twisted_adjoint(&q, &phi, &f, &h).unwrap();
        assert!(close(&t.mats[0], &scalar(c(E)), 1e-14));
        let plain = twisted_adjoint(&q, &phi, &EndoPoint::identity(&[1, 1]), &h).unwrap();
        assert_eq!(plain.mats, adjoint_wrt(&q, &phi, &h).unwrap().mats);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, 4);
            let t = twisted_adjoint(&inst.quiver, &inst.phi, &inst.f, &inst.h).unwrap();
            let hf = inst.h.twisted(&inst.f).unwrap();
            let direct = adjoint_wrt(&inst.quiver, &inst.phi, &hf).unwrap();
            for (a, b) in t.mats.iter().zip(&direct.mats) {
                assert!(close(a, b, 1e-10));
            }
        }
    }

    #[test]
    fn brackets() {
        let q = chain();
        let phi = ArrowMapPoint::new(&q, &[1, 1], vec![scalar(c(1.0))]).unwrap();
        let a = EndoPoint::scalars(&[1, 1], &[2.0, 5.0]);
        assert_eq!(bracket(&q, &a, &phi)[0], scalar(c(3.0)));
        let id = EndoPoint::scalars(&[1, 1], &[4.0, 4.0]);
        assert_eq!(bracket(&q, &id, &phi)[0].norm(), 0.0);
        let zero = ArrowMapPoint::zero(&q, &[1, 1]);
        assert_eq!(bracket(&q, &a, &zero)[0].norm(), 0.0);
    }

    #[test]
    fn matrix_functions() {
        let h = metric(&[1.0]);
        let four = EndoPoint::scalars(&[1], &[4.0]);
        let half = herm_log_exp_pow(&four, MatrixFn::Pow(0.5), &h).unwrap();
        assert!(close(&half.mats()[0], &scalar(c(2.0)), 1e-14));
        let id = EndoPoint::identity(&[2]);
        let h2 = HermitianMetricPoint::identity(&[2]);
        for op in [MatrixFn::Log, MatrixFn::Exp, MatrixFn::Pow(0.3)] {
            let out = herm_log_exp_pow(&id, op, &h2).unwrap();
            let want = if op == MatrixFn::Log {
                CMat::zeros(2, 2)
            } else if op == MatrixFn::Exp {
                CMat::identity(2, 2) * c(E)
            } else {
                CMat::identity(2, 2)
            };
            assert!(close(&out.mats()[0], &want, 1e-14));
        }
        assert_eq!(
            herm_log_exp_pow(&four, MatrixFn::Pow(1.5), &h).unwrap_err(),
            EndoError::BadExponent(1.5)
        );

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, 4);
            let log_f = herm_log_exp_pow(&inst.f, MatrixFn::Log, &inst.h).unwrap();
            let back = herm_log_exp_pow(&log_f, MatrixFn::Exp, &inst.h).unwrap();
            for (a, b) in back.mats().iter().zip(inst.f.mats()) {
                assert!(close(a, b, 1e-10));
            }
            for s in [0.25, 0.5, 1.0] {
                let fs = herm_log_exp_pow(&inst.f, MatrixFn::Pow(s), &inst.h).unwrap();
                let back = herm_pow_any(&fs, 1.0 / s, &inst.h).unwrap();
                for (a, b) in back.mats().iter().zip(inst.f.mats()) {
                    assert!(close(a, b, 1e-9));
                }
            }
        }
    }

    #[test]
    fn non_positive_twists_are_rejected() {
        let h = metric(&[1.0]);
        assert_eq!(
            EndoPoint::positive(vec![scalar(c(-1.0))], &h).unwrap_err(),
            EndoError::NotPositive(0)
        );
        assert!(matches!(
            EndoPoint::hermitian(vec![scalar(Complex64::new(0.0, 1.0))], &h),
            Err(EndoError::NotHermitian(0))
        ));
        assert!(HermitianMetricPoint::new(vec![scalar(c(0.0))]).is_err());
    }

    #[test]
    fn moment_terms() {
        let q = chain();
        let h = metric(&[1.0, 1.0]);
        let id = EndoPoint::identity(&[1, 1]);
        let phi = ArrowMapPoint::new(&q, &[1, 1], vec![scalar(c(1.0))]).unwrap();
        assert!(close(&moment_term(&q, 0, &phi, &id, &h).unwrap(), &scalar(c(-1.0)), 1e-15));
        assert!(close(&moment_term(&q, 1, &phi, &id, &h).unwrap(), &scalar(c(1.0)), 1e-15));
        let lonely = build_quiver(["i"], Vec::new()).unwrap();
        let m = moment_term(
            &lonely,
            0,
            &ArrowMapPoint::zero(&lonely, &[2]),
            &EndoPoint::identity(&[2]),
            &HermitianMetricPoint::identity(&[2]),
        )
        .unwrap();
        assert_eq!(m.norm(), 0.0);
    }

    #[test]
    fn moment_terms_are_selfadjoint_and_telescope() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 4);
            let hf = inst.h.twisted(&inst.f).unwrap();
            let ranks = inst.h.ranks();
            let id = EndoPoint::identity(&ranks);
            let mut trace = Complex64::new(0.0, 0.0);
            for i in 0..ranks.len() {
                let m = moment_term(&inst.quiver, i, &inst.phi, &inst.f, &inst.h).unwrap();
                let hm = &hf.mats()[i] * &m;
                assert!(close(&hm, &hm.adjoint(), 1e-10));
                trace += moment_term(&inst.quiver, i, &inst.phi, &id, &inst.h)
                    .unwrap()
                    .trace();
            }
            assert!(trace.norm() < 1e-10);
        }
    }

    #[test]
    fn log_pairing_scalar_closed_form() {
        let q = chain();
        let h = metric(&[1.0, 1.0]);
        let phi = ArrowMapPoint::new(&q, &[1, 1], vec![scalar(c(1.0))]).unwrap();
        let id = EndoPoint::identity(&[1, 1]);
        assert!(log_pairing_gap(&q, &id, &phi, &h).unwrap().abs() < 1e-15);
        for (ti, tj) in [(0.0, 1.0), (0.5, -1.2), (2.0, 2.0), (-0.3, 0.8)] {
            let f = EndoPoint::scalars(&[1, 1], &[f64::exp(ti), f64::exp(tj)]);
            let gap = log_pairing_gap(&q, &f, &phi, &h).unwrap();
            let want = (f64::exp(tj - ti) - 1.0) * (tj - ti);
            assert!((gap - want).abs() < 1e-12, "{gap} vs {want}");
        }
    }

    #[test]
    fn power_chain_scalar_closed_form() {
        let q = chain();
        let h = metric(&[1.0, 1.0]);
        let z = Complex64::new(0.6, -0.8);
        let phi = ArrowMapPoint::new(&q, &[1, 1], vec![scalar(z * 1.5)]).unwrap();
        let id = EndoPoint::identity(&[1, 1]);
        assert!(power_chain_gap(&q, &id, 0.5, &phi, &h).unwrap().abs() < 1e-14);
        for s in [0.25, 0.5, 1.0] {
            for t in [-2.0, -0.4, 0.7, 1.5] {
                let (tt, th) = (0.3, 0.3 + t);
                let f = EndoPoint::scalars(&[1, 1], &[f64::exp(tt), f64::exp(th)]);
                let gap = power_chain_gap(&q, &f, s, &phi, &h).unwrap();
                let want = 2.25
                    * (f64::exp(s * th) - f64::exp(s * tt))
                    * (f64::exp(th - tt) - f64::exp(s * (th - tt)));
                assert!((gap - want).abs() < 1e-12, "{gap} vs {want}");
                assert!(gap >= -1e-12);
            }
        }
    }

    #[test]
    fn sweep_is_nonnegative() {
        let report = run_sweep(2024, 200, 4, 1e-10);
        assert!(report.passed(), "{:?}", report.failures.first());
        assert!(report.min_log_pairing_gap >= -1e-10);
        assert!(report.min_power_chain_gap >= -1e-10);
    }

    #[test]
    fn commutant_of_connected_generic_maps_is_scalar() {
        let q = chain();
        let h = metric(&[1.0, 1.0]);
        let phi = ArrowMapPoint::new(&q, &[1, 1], vec![scalar(c(1.0))]).unwrap();
        assert_eq!(commutant_dimension(&q, &phi, &h).unwrap(), 1);
        let zero = ArrowMapPoint::zero(&q, &[1, 1]);
        assert_eq!(commutant_dimension(&q, &zero, &h).unwrap(), 2);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q2 = build_quiver(
            ["i", "j"],
            [
                ("a".into(), "i".into(), "j".into()),
                ("b".into(), "i".into(), "j".into()),
            ],
        )
        .unwrap();
        let ranks = [2, 2];
        let h2 = HermitianMetricPoint::new(ranks.iter().map(|&r| random_hpd(&mut rng, r, 0.5)).collect())
            .unwrap();
        let phi2 = ArrowMapPoint::new(
            &q2,
            &ranks,
            vec![random_cmat(&mut rng, 2, 2), random_cmat(&mut rng, 2, 2)],
        )
        .unwrap();
        assert_eq!(commutant_dimension(&q2, &phi2, &h2).unwrap(), 1);
    }
}
