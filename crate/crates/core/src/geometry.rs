//! Base-manifold fixtures.
//!
//! The round sphere carries a Gauss-Legendre x equispaced grid and a real
//! spherical-harmonic transform; the Laplacian is applied spectrally with the
//! nonnegative sign convention. The Hopf fixture only has a degree table.

use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quiver::Section;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("grid {n_theta}x{n_phi} is too coarse (need at least 8x8)")]
    TooCoarse { n_theta: usize, n_phi: usize },
    #[error("total volume must be positive and finite, got {0}")]
    BadVolume(f64),
    #[error("transform failure: {0}")]
    TransformFailure(String),
    #[error("section of degree {degree} does not fit in O({d})")]
    DegreeMismatch { degree: usize, d: i64 },
}

/// Real values at grid nodes, theta-major (`t * n_phi + p`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Vec<f64>,
}

impl GridField {
    pub fn constant(grid: &SphereGrid, c: f64) -> Self {
        GridField {
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: &SphereGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for &th in &grid.theta {
            for &ph in &grid.phi {
                values.push(f(th, ph));
            }
        }
        GridField { values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Real spherical-harmonic basis element: `Pbar_l^m(cos theta)` times
/// `1/sqrt(2 pi)`, `cos(m phi)/sqrt(pi)` or `sin(m phi)/sqrt(pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub l: usize,
    pub m: usize,
    pub sine: bool,
}

/// Gauss-Legendre nodes and weights on [-1, 1], nodes descending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        let mut z = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[k] = z;
        x[n - 1 - k] = -z;
        w[k] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - k] = w[k];
    }
    (x, w)
}

pub struct SphereGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    pub total_volume: f64,
    /// `cos theta` at each colatitude node.
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub gl_weights: Vec<f64>,
    pub phi: Vec<f64>,
    /// Area of each node's cell on the volume-normalized sphere.
    pub area: Vec<f64>,
    pub l_max: usize,
    pub m_max: usize,
    modes: Vec<Mode>,
    /// `plm[m][(l - m) * n_theta + t]`
    plm: Vec<Vec<f64>>,
    dplm: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SphereGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SphereGrid")
            .field("n_theta", &self.n_theta)
            .field("n_phi", &self.n_phi)
            .field("total_volume", &self.total_volume)
            .field("l_max", &self.l_max)
            .field("m_max", &self.m_max)
            .finish_non_exhaustive()
    }
}

pub fn make_sphere_grid(
    n_theta: usize,
    n_phi: usize,
    total_volume: f64,
) -> Result<SphereGrid, GeometryError> {
    if n_theta < 8 || n_phi < 8 {
        return Err(GeometryError::TooCoarse { n_theta, n_phi });
    }
    if !(total_volume.is_finite() && total_volume > 0.0) {
        return Err(GeometryError::BadVolume(total_volume));
    }
    let (x, gl_weights) = gauss_legendre(n_theta);
    let theta: Vec<f64> = x.iter().map(|c| c.acos()).collect();
    let phi: Vec<f64> = (0..n_phi)
        .map(|k| 2.0 * PI * k as f64 / n_phi as f64)
        .collect();
    let scale = 2.0 * PI / n_phi as f64 * total_volume / (4.0 * PI);
    let mut area = Vec::with_capacity(n_theta * n_phi);
    for w in &gl_weights {
        area.extend(std::iter::repeat_n(w * scale, n_phi));
    }

    let l_max = n_theta - 1;
    let m_max = l_max.min((n_phi - 1) / 2);
    let mut modes = Vec::new();
    for m in 0..=m_max {
        for sine in [false, true] {
            if sine && m == 0 {
                continue;
            }
            modes.extend((m..=l_max).map(|l| Mode { l, m, sine }));
        }
    }

    let (plm, dplm) = legendre_tables(&x, l_max, m_max);
    let mut planner = FftPlanner::new();
    Ok(SphereGrid {
        n_theta,
        n_phi,
        total_volume,
        x,
        theta,
        gl_weights,
        phi,
        area,
        l_max,
        m_max,
        modes,
        plm,
        dplm,
        fft: planner.plan_fft_forward(n_phi),
        ifft: planner.plan_fft_inverse(n_phi),
    })
}

/// Normalized associated Legendre functions (unit L2 norm on [-1, 1]) and
/// their theta-derivatives at each node.
fn legendre_tables(x: &[f64], l_max: usize, m_max: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let nt = x.len();
    let rows = |m: usize| l_max - m + 1;
    let mut plm: Vec<Vec<f64>> = (0..=m_max).map(|m| vec![0.0; rows(m) * nt]).collect();
    let mut dplm = plm.clone();
    for (t, &xt) in x.iter().enumerate() {
        let st = (1.0 - xt * xt).sqrt();
        let mut pmm = (0.5f64).sqrt();
        for m in 0..=m_max {
            if m > 0 {
                pmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st;
            }
            let tab = &mut plm[m];
            tab[t] = pmm;
            if l_max > m {
                tab[nt + t] = ((2 * m + 3) as f64).sqrt() * xt * pmm;
            }
            for l in m + 2..=l_max {
                let (lf, mf) = (l as f64, m as f64);
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
                tab[(l - m) * nt + t] =
                    a * (xt * tab[(l - m - 1) * nt + t] - b * tab[(l - m - 2) * nt + t]);
            }
            for l in m..=l_max {
                let lf = l as f64;
                let p = plm[m][(l - m) * nt + t];
                let prev = if l > m {
                    let c = ((2.0 * lf + 1.0) * (lf - m as f64) * (lf + m as f64) / (2.0 * lf - 1.0))
                        .sqrt();
                    c * plm[m][(l - m - 1) * nt + t]
                } else {
                    0.0
                };
                dplm[m][(l - m) * nt + t] = (lf * xt * p - prev) / st;
            }
        }
    }
    (plm, dplm)
}

impl SphereGrid {
    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spectral modes in coefficient order.
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    /// Eigenvalue of the nonnegative Laplacian on the volume-normalized sphere.
    pub fn eigenvalue(&self, l: usize) -> f64 {
        (l * (l + 1)) as f64 * 4.0 * PI / self.total_volume
    }

    pub fn mode_eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|md| self.eigenvalue(md.l)).collect()
    }

    fn check(&self, f: &GridField) -> Result<(), GeometryError> {
        if f.values.len() != self.len() {
            return Err(GeometryError::TransformFailure(format!(
                "field has {} values, grid has {} nodes",
                f.values.len(),
                self.len()
            )));
        }
        if !f.is_finite() {
            return Err(GeometryError::TransformFailure("non-finite value".into()));
        }
        Ok(())
    }

    fn row_spectra(&self, values: &[f64]) -> Vec<Vec<Complex64>> {
        values
            .chunks(self.n_phi)
            .map(|row| {
                let mut buf: Vec<Complex64> = row.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                self.fft.process(&mut buf);
                buf
            })
            .collect()
    }

    /// Coefficients in the orthonormal basis of the unit sphere.
    pub fn analyze(&self, f: &GridField) -> Result<Vec<f64>, GeometryError> {
        self.check(f)?;
        Ok(self.analyze_unchecked(&f.values))
    }

    pub fn analyze_unchecked(&self, values: &[f64]) -> Vec<f64> {
        let spectra = self.row_spectra(values);
        let nt = self.n_theta;
        let dphi = 2.0 * PI / self.n_phi as f64;
        let (f0, fm) = (1.0 / (2.0 * PI).sqrt(), 1.0 / PI.sqrt());
        self.modes
            .iter()
            .map(|md| {
                let tab = &self.plm[md.m][(md.l - md.m) * nt..];
                let mut acc = 0.0;
                for t in 0..nt {
                    let z = spectra[t][md.m];
                    let s = if md.m == 0 {
                        z.re * f0
                    } else if md.sine {
                        -z.im * fm
                    } else {
                        z.re * fm
                    };
                    acc += self.gl_weights[t] * tab[t] * s;
                }
                acc * dphi
            })
            .collect()
    }

    fn synthesize_with(&self, coeffs: &[f64], table: &[Vec<f64>], with_m: bool) -> Vec<f64> {
        let nt = self.n_theta;
        let np = self.n_phi;
        let (f0, fm) = (1.0 / (2.0 * PI).sqrt(), 1.0 / PI.sqrt());
        let mut rows = vec![vec![Complex64::new(0.0, 0.0); np]; nt];
        for (c, md) in coeffs.iter().zip(&self.modes) {
            if *c == 0.0 {
                continue;
            }
            let tab = &table[md.m][(md.l - md.m) * nt..];
            // phi-derivative: d/dphi (a cos + b sin) = m (b cos - a sin)
            let (re, im) = match (md.m, md.sine, with_m) {
                (0, _, false) => (c * f0, 0.0),
                (0, _, true) => (0.0, 0.0),
                (_, false, false) => (c * fm, 0.0),
                (_, true, false) => (0.0, -c * fm),
                (m, false, true) => (0.0, (m as f64) * c * fm),
                (m, true, true) => ((m as f64) * c * fm, 0.0),
            };
            for t in 0..nt {
                rows[t][md.m] += Complex64::new(re, im) * tab[t];
            }
        }
        let mut out = Vec::with_capacity(nt * np);
        for mut row in rows {
            self.ifft.process(&mut row);
            out.extend(row.iter().map(|z| z.re));
        }
        out
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> GridField {
        GridField {
            values: self.synthesize_with(coeffs, &self.plm, false),
        }
    }

    /// Band-limited projection of `f` onto the representable modes.
    pub fn project(&self, f: &GridField) -> Result<GridField, GeometryError> {
        Ok(self.synthesize(&self.analyze(f)?))
    }

    /// `(du/dtheta, (du/dphi) / sin theta)` of the band-limited part of `u`.
    pub fn gradient(&self, u: &GridField) -> Result<(GridField, GridField), GeometryError> {
        let c = self.analyze(u)?;
        let u_theta = self.synthesize_with(&c, &self.dplm, false);
        let mut u_phi = self.synthesize_with(&c, &self.plm, true);
        for (t, chunk) in u_phi.chunks_mut(self.n_phi).enumerate() {
            let s = self.theta[t].sin();
            chunk.iter_mut().for_each(|v| *v /= s);
        }
        Ok((GridField { values: u_theta }, GridField { values: u_phi }))
    }
}

/// Weighted sum over the grid: the integral against the volume form.
pub fn quadrature(grid: &SphereGrid, f: &GridField) -> f64 {
    grid.area.iter().zip(&f.values).map(|(w, v)| w * v).sum()
}

/// Nonnegative Laplacian, applied spectrally.
pub fn laplacian_apply(grid: &SphereGrid, u: &GridField) -> Result<GridField, GeometryError> {
    let mut c = grid.analyze(u)?;
    for (ci, md) in c.iter_mut().zip(grid.modes()) {
        *ci *= grid.eigenvalue(md.l);
    }
    Ok(grid.synthesize(&c))
}

/// Pointwise `|p(z)|^2 / (1 + |z|^2)^d`, written homogeneously as
/// `|sum_k a_k s^k c^(d-k) e^(i k phi)|^2` with `c = cos(theta/2)`,
/// `s = sin(theta/2)`.
pub fn section_density(
    grid: &SphereGrid,
    section: &Section,
    d: i64,
) -> Result<GridField, GeometryError> {
    let coeffs = section.coefficients();
    if let Some(degree) = section.degree() {
        if d < 0 || degree as i64 > d {
            return Err(GeometryError::DegreeMismatch { degree, d });
        }
    } else {
        return Ok(GridField::constant(grid, 0.0));
    }
    let d = d as i32;
    Ok(GridField::from_fn(grid, |th, ph| {
        let (s, c) = ((th / 2.0).sin(), (th / 2.0).cos());
        let p: Complex64 = coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let k = k as i32;
                a * s.powi(k) * c.powi(d - k) * Complex64::from_polar(1.0, k as f64 * ph)
            })
            .sum();
        p.norm_sqr()
    }))
}

/// Constant mean curvature of the background metric on `O(m)`.
pub fn background_curvature_value(grid: &SphereGrid, m: i64) -> f64 {
    2.0 * PI * m as f64 / grid.total_volume
}

pub fn background_curvature(grid: &SphereGrid, m: i64) -> GridField {
    GridField::constant(grid, background_curvature_value(grid, m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HopfLine {
    Lplus,
    Lminus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Plus,
    Minus,
}

pub fn hopf_degree(line: HopfLine, m: i64, side: Side) -> i64 {
    match (line, side) {
        (HopfLine::Lplus, Side::Plus) | (HopfLine::Lminus, Side::Minus) => m,
        (HopfLine::Lplus, Side::Minus) | (HopfLine::Lminus, Side::Plus) => -m,
    }
}

/// `theta,phi,value` rows for external plotting.
pub fn field_csv(grid: &SphereGrid, field: &GridField) -> String {
    let mut out = String::from("theta,phi,value\n");
    let mut k = 0;
    for th in &grid.theta {
        for ph in &grid.phi {
            writeln!(out, "{th},{ph},{}", field.values[k]).unwrap();
            k += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nt: usize, np: usize, v: f64) -> SphereGrid {
        make_sphere_grid(nt, np, v).unwrap()
    }

    fn smooth(g: &SphereGrid, seed: f64) -> GridField {
        GridField::from_fn(g, |th, ph| {
            (seed * th.cos() + ph.sin()).sin() + 0.3 * (2.0 * ph + seed).cos() * th.sin().powi(2)
        })
    }

    #[test]
    fn area_weights_sum_to_volume() {
        for (nt, np, v) in [(64, 128, 1.0), (8, 8, 1.0), (17, 30, 3.5)] {
            let g = grid(nt, np, v);
            let total: f64 = g.area.iter().sum();
            assert!((total - v).abs() / v < 1e-12, "{total}");
            assert!((quadrature(&g, &GridField::constant(&g, 1.0)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn too_coarse_grids_are_rejected() {
        assert_eq!(
            make_sphere_grid(4, 8, 1.0).unwrap_err(),
            GeometryError::TooCoarse {
                n_theta: 4,
                n_phi: 8
            }
        );
        assert!(make_sphere_grid(8, 8, 0.0).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        for p in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-13, "degree {p}");
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let g = grid(12, 24, 4.0 * PI);
        let n = g.num_modes();
        for i in (0..n).step_by(3) {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let c = g.analyze(&g.synthesize(&e)).unwrap();
            for (j, cj) in c.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cj - want).abs() < 1e-12, "mode {i} -> {j}: {cj}");
            }
        }
    }

    #[test]
    fn laplacian_spectrum() {
        let g = grid(16, 32, 4.0 * PI);
        let c = GridField::constant(&g, 2.5);
        assert!(laplacian_apply(&g, &c).unwrap().max_abs() < 1e-12);
        for f in [
            GridField::from_fn(&g, |th, _| th.cos()),
            GridField::from_fn(&g, |th, ph| th.sin() * ph.sin()),
        ] {
            let lf = laplacian_apply(&g, &f).unwrap();
            for (a, b) in lf.values.iter().zip(&f.values) {
                assert!((a - 2.0 * b).abs() < 1e-11);
            }
        }
        let g = grid(16, 32, 1.0);
        let f = GridField::from_fn(&g, |th, _| th.cos());
        let lf = laplacian_apply(&g, &f).unwrap();
        assert!((lf.values[5] - 8.0 * PI * f.values[5]).abs() < 1e-9);
    }

    #[test]
    fn laplacian_integrates_to_zero_and_is_symmetric() {
        let g = grid(24, 48, 1.0);
        let (u, v) = (smooth(&g, 1.3), smooth(&g, -0.7));
        let lu = laplacian_apply(&g, &u).unwrap();
        let lv = laplacian_apply(&g, &v).unwrap();
        assert!(quadrature(&g, &lu).abs() < 1e-10);
        let prod = |a: &GridField, b: &GridField| GridField {
            values: a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect(),
        };
        let (a, b) = (quadrature(&g, &prod(&u, &lv)), quadrature(&g, &prod(&v, &lu)));
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn gradient_of_low_modes() {
        let g = grid(16, 32, 1.0);
        let f = GridField::from_fn(&g, |th, ph| th.cos() + th.sin() * th.cos() * ph.cos());
        let (ft, fp) = g.gradient(&f).unwrap();
        let mut k = 0;
        for &th in &g.theta {
            for &ph in &g.phi {
                let want_t = -th.sin() + (2.0 * th).cos() * ph.cos();
                let want_p = -th.cos() * ph.sin();
                assert!((ft.values[k] - want_t).abs() < 1e-11);
                assert!((fp.values[k] - want_p).abs() < 1e-11);
                k += 1;
            }
        }
    }

    #[test]
    fn section_densities() {
        let g = grid(32, 64, 1.0);
        let one = section_density(&g, &Section::constant(1.0), 0).unwrap();
        assert!(one.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let zero = section_density(&g, &Section::Zero, 2).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let z = Section::real_poly(&[0.0, 1.0]);
        let dz = section_density(&g, &z, 1).unwrap();
        assert!(dz.values.iter().all(|v| (0.0..1.0).contains(v)));
        assert!((quadrature(&g, &dz) - 0.5).abs() < 1e-12);
        // odd n_theta puts a node row on the equator |z| = 1
        let sample = section_density(&make_sphere_grid(9, 8, 1.0).unwrap(), &z, 1).unwrap();
        assert!((sample.values[4 * 8] - 0.5).abs() < 1e-12);
        assert!(matches!(
            section_density(&g, &Section::real_poly(&[0.0, 0.0, 1.0]), 1),
            Err(GeometryError::DegreeMismatch { degree: 2, d: 1 })
        ));
    }

    #[test]
    fn degree_by_quadrature() {
        let g = grid(8, 8, 1.0);
        assert_eq!(background_curvature(&g, 0).max_abs(), 0.0);
        for m in -5..=5 {
            let deg = quadrature(&g, &background_curvature(&g, m)) / (2.0 * PI);
            assert!((deg - m as f64).abs() < 1e-10);
        }
        assert!((background_curvature_value(&g, 1) - 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn hopf_table() {
        assert_eq!(hopf_degree(HopfLine::Lplus, 5, Side::Minus), -5);
        assert_eq!(hopf_degree(HopfLine::Lminus, 2, Side::Plus), -2);
        assert_eq!(hopf_degree(HopfLine::Lplus, 0, Side::Plus), 0);
        assert_eq!(hopf_degree(HopfLine::Lminus, 3, Side::Minus), 3);
    }

    #[test]
    fn field_csv_rows() {
        let g = grid(8, 8, 1.0);
        let csv = field_csv(&g, &GridField::constant(&g, 1.0));
        assert_eq!(csv.lines().count(), 65);
    }
}
