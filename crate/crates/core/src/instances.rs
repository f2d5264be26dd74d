//! Small reference models used by tests, benches and the golden problem files.

use rand::Rng;

use crate::geometry::{hopf_degree, HopfLine, Side};
use crate::quiver::{
    build_quiver, ArrowData, BaseFixture, QBundleModel, Section, Summand, VertexBundleData,
};
use crate::stability::{int, rat, Rational, StabilityParams, SubPart, SubobjectSpec};

fn ij_quiver() -> crate::quiver::Quiver {
    build_quiver(["i", "j"], [("a".into(), "i".into(), "j".into())]).expect("static quiver")
}

/// `O(mi) -> O(mj)` on P1 with `phi = z^(mj - mi)`.
pub fn example_one(mi: i64, mj: i64) -> QBundleModel {
    let d = (mj - mi).max(0) as usize;
    let mut coeffs = vec![0.0; d + 1];
    coeffs[d] = 1.0;
    QBundleModel {
        base: BaseFixture::P1,
        quiver: ij_quiver(),
        vertex_data: vec![
            VertexBundleData::line(Summand::p1(mi)),
            VertexBundleData::line(Summand::p1(mj)),
        ],
        arrow_data: vec![ArrowData::scalar(Section::real_poly(&coeffs))],
        declared_subobjects: None,
    }
}

pub fn hopf_summand(line: HopfLine, m: i64) -> Summand {
    Summand {
        deg_plus: hopf_degree(line, m, Side::Plus),
        deg_minus: hopf_degree(line, m, Side::Minus),
    }
}

/// `L+(m) -> L+(m)` with a constant nonzero arrow.
pub fn hopf_line(m: i64) -> QBundleModel {
    let s = hopf_summand(HopfLine::Lplus, m);
    QBundleModel {
        base: BaseFixture::HopfTable,
        quiver: ij_quiver(),
        vertex_data: vec![VertexBundleData::line(s), VertexBundleData::line(s)],
        arrow_data: vec![ArrowData::scalar(Section::constant(1.0))],
        declared_subobjects: None,
    }
}

/// The rank-2 non-split model with its three declared subobjects.
pub fn hopf_eprime(m_plus: i64, m_minus: i64) -> QBundleModel {
    let part = |rank, dp, dm| SubPart {
        rank,
        deg_plus: dp,
        deg_minus: dm,
    };
    let lattice = vec![
        SubobjectSpec::declared("i", vec![part(1, 0, 0), part(1, 0, 0)]),
        SubobjectSpec::declared("ii", vec![SubPart::ZERO, part(1, 0, 0)]),
        SubobjectSpec::declared("iii", vec![SubPart::ZERO, part(2, -m_plus, m_minus)]),
    ];
    QBundleModel {
        base: BaseFixture::HopfTable,
        quiver: ij_quiver(),
        vertex_data: vec![
            VertexBundleData::line(hopf_summand(HopfLine::Lplus, 0)),
            VertexBundleData {
                summands: vec![
                    Summand {
                        deg_plus: 0,
                        deg_minus: 0,
                    },
                    Summand {
                        deg_plus: -m_plus,
                        deg_minus: m_minus,
                    },
                ],
                nonsplit: true,
            },
        ],
        arrow_data: vec![ArrowData {
            blocks: vec![vec![Section::constant(1.0)], vec![Section::Zero]],
        }],
        declared_subobjects: Some(lattice),
    }
}

pub fn p1_params(tau_i: Rational, tau_j: Rational) -> StabilityParams {
    StabilityParams::new(vec![rat(1, 2), rat(1, 2)], vec![int(1), int(1)], vec![tau_i, tau_j])
        .expect("valid parameters")
}

/// Trivial bundles with a constant arrow; `tau = (-1, 1)` has the constant
/// solution `u_j - u_i = log 2 pi` at volume 1.
pub fn constant_instance(stable: bool) -> (QBundleModel, StabilityParams) {
    let tau = if stable { (int(-1), int(1)) } else { (int(1), int(-1)) };
    (example_one(0, 0), p1_params(tau.0, tau.1))
}

/// `O(0) -> O(1)` with `phi = z`, `tau = (0, 2)`.
pub fn stable_nonconstant() -> (QBundleModel, StabilityParams) {
    (example_one(0, 1), p1_params(int(0), int(2)))
}

/// A directed chain `v0 -> v1 -> ... ` of trivial line bundles with constant arrows.
pub fn trivial_chain(n: usize) -> QBundleModel {
    let names: Vec<String> = (0..n).map(|k| format!("v{k}")).collect();
    let arrows: Vec<(String, String, String)> = (1..n)
        .map(|k| (format!("a{k}"), names[k - 1].clone(), names[k].clone()))
        .collect();
    QBundleModel {
        base: BaseFixture::P1,
        quiver: build_quiver(names, arrows).expect("chain quiver"),
        vertex_data: vec![VertexBundleData::line(Summand::p1(0)); n],
        arrow_data: vec![ArrowData::scalar(Section::constant(1.0)); n.saturating_sub(1)],
        declared_subobjects: None,
    }
}

/// Random rank-one P1 model on 2 or 3 vertices whose arrows all carry
/// nonzero sections, with random rational `sigma` and `tau`.
pub fn random_p1_instance(rng: &mut impl Rng) -> (QBundleModel, StabilityParams) {
    let n = rng.random_range(2..=3usize);
    let names: Vec<String> = (0..n).map(|k| format!("v{k}")).collect();
    let degrees: Vec<i64> = (0..n).map(|_| rng.random_range(0..=2)).collect();
    let mut arrows = Vec::new();
    let mut arrow_data = Vec::new();
    for t in 0..n {
        for h in 0..n {
            if t == h || degrees[h] < degrees[t] || !rng.random_bool(0.6) {
                continue;
            }
            let d = (degrees[h] - degrees[t]) as usize;
            let mut coeffs: Vec<f64> = (0..=d).map(|_| rng.random_range(-1.0..1.0)).collect();
            coeffs[rng.random_range(0..=d)] = 1.0;
            arrows.push((format!("a{}", arrows.len()), names[t].clone(), names[h].clone()));
            arrow_data.push(ArrowData::scalar(Section::real_poly(&coeffs)));
        }
    }
    let model = QBundleModel {
        base: BaseFixture::P1,
        quiver: build_quiver(names, arrows).expect("generated quiver"),
        vertex_data: degrees
            .iter()
            .map(|&m| VertexBundleData::line(Summand::p1(m)))
            .collect(),
        arrow_data,
        declared_subobjects: None,
    };
    let sigma: Vec<Rational> = (0..n).map(|_| rat(rng.random_range(1..=4), 2)).collect();
    let tau: Vec<Rational> = (0..n).map(|_| rat(rng.random_range(-12..=12), 4)).collect();
    let params = StabilityParams::new(vec![rat(1, 2); n], sigma, tau).expect("valid parameters");
    (model, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quiver::validate_model;
    use crate::stability::classify;

    #[test]
    fn reference_models_validate() {
        for m in [
            example_one(0, 0),
            example_one(0, 3),
            hopf_line(2),
            hopf_eprime(1, 2),
            trivial_chain(3),
        ] {
            validate_model(m).unwrap();
        }
    }

    #[test]
    fn constant_instances_classify() {
        let (m, p) = constant_instance(true);
        assert!(classify(&m, &p).unwrap().is_stable());
        let (m, p) = constant_instance(false);
        assert!(!classify(&m, &p).unwrap().is_stable());
        let (m, p) = stable_nonconstant();
        assert!(classify(&m, &p).unwrap().is_stable());
    }
}
