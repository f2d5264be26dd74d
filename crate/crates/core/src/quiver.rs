//! Quivers and the split quiver-bundle model.
//!
//! A [`QBundleModel`] assigns to every vertex a direct sum of line summands
//! (recorded by their `+`/`-` degrees) and to every arrow a block matrix of
//! sections between summands. [`validate_model`] checks the holomorphicity
//! constraints of the chosen base fixture and seals the model.

use std::collections::HashSet;
use std::fmt;
use std::ops::Deref;

use num_complex::Complex64;
use thiserror::Error;

use crate::stability::SubobjectSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuiverError {
    #[error("duplicate identifier `{0}`")]
    DuplicateId(String),
    #[error("arrow `{arrow}` references unknown vertex `{vertex}`")]
    DanglingEndpoint { arrow: String, vertex: String },
    #[error("quiver has no vertices")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrow {
    pub id: String,
    pub tail: usize,
    pub head: usize,
}

impl Arrow {
    pub fn is_loop(&self) -> bool {
        self.tail == self.head
    }
}

/// Finite quiver with ordered vertices. Arrow endpoints are vertex indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quiver {
    vertices: Vec<String>,
    arrows: Vec<Arrow>,
}

impl Quiver {
    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn arrows(&self) -> &[Arrow] {
        &self.arrows
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex_index(&self, name: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v == name)
    }

    pub fn arrow_index(&self, id: &str) -> Option<usize> {
        self.arrows.iter().position(|a| a.id == id)
    }

    /// Arrows with head `i`.
    pub fn incoming(&self, i: usize) -> impl Iterator<Item = (usize, &Arrow)> {
        self.arrows.iter().enumerate().filter(move |(_, a)| a.head == i)
    }

    /// Arrows with tail `i`.
    pub fn outgoing(&self, i: usize) -> impl Iterator<Item = (usize, &Arrow)> {
        self.arrows.iter().enumerate().filter(move |(_, a)| a.tail == i)
    }
}

/// Builds a quiver from vertex names and `(id, tail, head)` triples.
pub fn build_quiver<V, A>(vertices: V, arrows: A) -> Result<Quiver, QuiverError>
where
    V: IntoIterator,
    V::Item: Into<String>,
    A: IntoIterator<Item = (String, String, String)>,
{
    let vertices: Vec<String> = vertices.into_iter().map(Into::into).collect();
    if vertices.is_empty() {
        return Err(QuiverError::Empty);
    }
    let mut seen = HashSet::new();
    for v in &vertices {
        if !seen.insert(v.clone()) {
            return Err(QuiverError::DuplicateId(v.clone()));
        }
    }
    let lookup = |arrow: &str, name: &str| {
        vertices
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| QuiverError::DanglingEndpoint {
                arrow: arrow.to_string(),
                vertex: name.to_string(),
            })
    };
    let mut out = Vec::new();
    for (id, tail, head) in arrows {
        if !seen.insert(id.clone()) {
            return Err(QuiverError::DuplicateId(id));
        }
        let tail = lookup(&id, &tail)?;
        let head = lookup(&id, &head)?;
        out.push(Arrow { id, tail, head });
    }
    Ok(Quiver {
        vertices,
        arrows: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseFixture {
    P1,
    HopfTable,
}

impl fmt::Display for BaseFixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseFixture::P1 => write!(f, "P1"),
            BaseFixture::HopfTable => write!(f, "HopfTable"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Summand {
    pub deg_plus: i64,
    pub deg_minus: i64,
}

impl Summand {
    /// A line bundle on the P1 fixture, where both degrees agree.
    pub fn p1(deg: i64) -> Self {
        Summand {
            deg_plus: deg,
            deg_minus: deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexBundleData {
    pub summands: Vec<Summand>,
    /// The bundle is a non-split extension whose graded pieces are `summands`.
    /// Only the degree sums are meaningful; subobjects must be declared.
    pub nonsplit: bool,
}

impl VertexBundleData {
    pub fn split(summands: Vec<Summand>) -> Self {
        VertexBundleData {
            summands,
            nonsplit: false,
        }
    }

    pub fn line(summand: Summand) -> Self {
        Self::split(vec![summand])
    }

    pub fn rank(&self) -> usize {
        self.summands.len()
    }

    pub fn deg_plus(&self) -> i64 {
        self.summands.iter().map(|s| s.deg_plus).sum()
    }

    pub fn deg_minus(&self) -> i64 {
        self.summands.iter().map(|s| s.deg_minus).sum()
    }
}

/// Section of `Hom(tail summand, head summand)`.
///
/// On P1 a polynomial in the affine coordinate `z` represents an element of
/// `H^0(O(d))`; on the Hopf table any nonzero coefficient list is just a
/// nonzero morphism marker.
#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Zero,
    Poly(Vec<Complex64>),
}

impl Section {
    pub fn constant(c: f64) -> Self {
        Section::Poly(vec![Complex64::new(c, 0.0)]).normalized()
    }

    pub fn real_poly(coeffs: &[f64]) -> Self {
        Section::Poly(coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect()).normalized()
    }

    /// Trailing zero coefficients are trimmed; the zero polynomial becomes `Zero`.
    pub fn normalized(self) -> Self {
        match self {
            Section::Zero => Section::Zero,
            Section::Poly(mut c) => {
                while c.last().is_some_and(|z| z.norm_sqr() == 0.0) {
                    c.pop();
                }
                if c.is_empty() {
                    Section::Zero
                } else {
                    Section::Poly(c)
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.clone().normalized(), Section::Zero)
    }

    /// Polynomial degree, `None` for the zero section.
    pub fn degree(&self) -> Option<usize> {
        match self.clone().normalized() {
            Section::Zero => None,
            Section::Poly(c) => Some(c.len() - 1),
        }
    }

    pub fn coefficients(&self) -> &[Complex64] {
        match self {
            Section::Zero => &[],
            Section::Poly(c) => c,
        }
    }
}

/// Block matrix of sections, `head rank x tail rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrowData {
    pub blocks: Vec<Vec<Section>>,
}

impl ArrowData {
    pub fn scalar(section: Section) -> Self {
        ArrowData {
            blocks: vec![vec![section]],
        }
    }

    pub fn zero(head_rank: usize, tail_rank: usize) -> Self {
        ArrowData {
            blocks: vec![vec![Section::Zero; tail_rank]; head_rank],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().flatten().all(Section::is_zero)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QBundleModel {
    pub base: BaseFixture,
    pub quiver: Quiver,
    pub vertex_data: Vec<VertexBundleData>,
    pub arrow_data: Vec<ArrowData>,
    pub declared_subobjects: Option<Vec<SubobjectSpec>>,
}

impl QBundleModel {
    pub fn ranks(&self) -> Vec<usize> {
        self.vertex_data.iter().map(VertexBundleData::rank).collect()
    }

    pub fn is_rank_one(&self) -> bool {
        self.vertex_data.iter().all(|v| v.rank() == 1)
    }

    /// `true` if arrow `a` carries a nonzero section somewhere.
    pub fn arrow_nonzero(&self, a: usize) -> bool {
        !self.arrow_data[a].is_zero()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("vertex data covers {got} vertices, quiver has {expected}")]
    IncompleteVertexData { expected: usize, got: usize },
    #[error("arrow data covers {got} arrows, quiver has {expected}")]
    IncompleteArrowData { expected: usize, got: usize },
    #[error("vertex `{0}` has rank 0")]
    ZeroRank(String),
    #[error("arrow `{arrow}` block has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        arrow: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("arrow `{arrow}` block ({row},{col}): nonzero section where Hom vanishes ({reason})")]
    IllegalSection {
        arrow: String,
        row: usize,
        col: usize,
        reason: String,
    },
    #[error("arrow `{arrow}` block ({row},{col}): polynomial degree {degree} exceeds {max}")]
    DegreeMismatch {
        arrow: String,
        row: usize,
        col: usize,
        degree: usize,
        max: i64,
    },
    #[error("vertex `{vertex}`: {reason}")]
    FixtureViolation { vertex: String, reason: String },
    #[error("declared subobject #{index}: {reason}")]
    BadSubobject { index: usize, reason: String },
}

/// A model whose invariants have been checked. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel(QBundleModel);

impl ValidatedModel {
    pub fn into_inner(self) -> QBundleModel {
        self.0
    }
}

impl Deref for ValidatedModel {
    type Target = QBundleModel;

    fn deref(&self) -> &QBundleModel {
        &self.0
    }
}

/// `dim H^0(P1, O(d))`.
pub fn h0_dimension(d: i64) -> usize {
    (d + 1).max(0) as usize
}

/// Checks every structural and holomorphicity invariant. Returns all
/// violations found rather than stopping at the first.
pub fn validate_model(model: QBundleModel) -> Result<ValidatedModel, Vec<ModelError>> {
    let mut errors = Vec::new();
    let q = &model.quiver;
    if model.vertex_data.len() != q.num_vertices() {
        errors.push(ModelError::IncompleteVertexData {
            expected: q.num_vertices(),
            got: model.vertex_data.len(),
        });
    }
    if model.arrow_data.len() != q.arrows().len() {
        errors.push(ModelError::IncompleteArrowData {
            expected: q.arrows().len(),
            got: model.arrow_data.len(),
        });
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    for (i, data) in model.vertex_data.iter().enumerate() {
        let name = &q.vertices()[i];
        if data.rank() == 0 {
            errors.push(ModelError::ZeroRank(name.clone()));
            continue;
        }
        match model.base {
            BaseFixture::P1 => {
                if data.nonsplit {
                    errors.push(ModelError::FixtureViolation {
                        vertex: name.clone(),
                        reason: "non-split vertices are not supported on P1".into(),
                    });
                }
                for s in &data.summands {
                    if s.deg_plus != s.deg_minus {
                        errors.push(ModelError::FixtureViolation {
                            vertex: name.clone(),
                            reason: format!(
                                "P1 summand with deg+ = {} != deg- = {}",
                                s.deg_plus, s.deg_minus
                            ),
                        });
                    }
                }
            }
            BaseFixture::HopfTable => {
                if data.nonsplit {
                    if model.declared_subobjects.is_none() {
                        errors.push(ModelError::FixtureViolation {
                            vertex: name.clone(),
                            reason: "non-split vertex requires a declared subobject lattice".into(),
                        });
                    }
                } else {
                    for s in &data.summands {
                        // L+(m) has (m, -m), L-(m) has (-m, m)
                        if s.deg_plus + s.deg_minus != 0 {
                            errors.push(ModelError::FixtureViolation {
                                vertex: name.clone(),
                                reason: format!(
                                    "summand ({}, {}) is neither L+(m) nor L-(m)",
                                    s.deg_plus, s.deg_minus
                                ),
                            });
                        }
                    }
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    for (a, arrow) in q.arrows().iter().enumerate() {
        let data = &model.arrow_data[a];
        let tail = &model.vertex_data[arrow.tail];
        let head = &model.vertex_data[arrow.head];
        let expected = (head.rank(), tail.rank());
        let rows = data.blocks.len();
        let cols = data.blocks.first().map_or(0, Vec::len);
        if rows != expected.0 || data.blocks.iter().any(|r| r.len() != expected.1) {
            errors.push(ModelError::ShapeMismatch {
                arrow: arrow.id.clone(),
                expected,
                got: (rows, cols),
            });
            continue;
        }
        for (row, line) in data.blocks.iter().enumerate() {
            for (col, section) in line.iter().enumerate() {
                let Some(degree) = section.degree() else {
                    continue;
                };
                let src = tail.summands[col];
                let dst = head.summands[row];
                match model.base {
                    BaseFixture::P1 => {
                        let d = dst.deg_plus - src.deg_plus;
                        if h0_dimension(d) == 0 {
                            errors.push(ModelError::IllegalSection {
                                arrow: arrow.id.clone(),
                                row,
                                col,
                                reason: format!("H^0(O({d})) = 0"),
                            });
                        } else if degree as i64 > d {
                            errors.push(ModelError::DegreeMismatch {
                                arrow: arrow.id.clone(),
                                row,
                                col,
                                degree,
                                max: d,
                            });
                        }
                    }
                    BaseFixture::HopfTable => {
                        if src != dst {
                            errors.push(ModelError::IllegalSection {
                                arrow: arrow.id.clone(),
                                row,
                                col,
                                reason: format!(
                                    "bidegrees ({}, {}) and ({}, {}) differ",
                                    src.deg_plus, src.deg_minus, dst.deg_plus, dst.deg_minus
                                ),
                            });
                        }
                    }
                }
            }
        }
    }

    if let Some(subs) = &model.declared_subobjects {
        let ranks = model.ranks();
        for (index, sub) in subs.iter().enumerate() {
            if let Err(reason) = sub.check_against(&ranks) {
                errors.push(ModelError::BadSubobject { index, reason });
            }
        }
    }

    if errors.is_empty() {
        Ok(ValidatedModel(model))
    } else {
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_vertex() -> Quiver {
        build_quiver(["i", "j"], [("a".into(), "i".into(), "j".into())]).unwrap()
    }

    fn p1_model(mi: i64, mj: i64, section: Section) -> QBundleModel {
        QBundleModel {
            base: BaseFixture::P1,
            quiver: two_vertex(),
            vertex_data: vec![
                VertexBundleData::line(Summand::p1(mi)),
                VertexBundleData::line(Summand::p1(mj)),
            ],
            arrow_data: vec![ArrowData::scalar(section)],
            declared_subobjects: None,
        }
    }

    #[test]
    fn builds_two_vertex_quiver() {
        let q = two_vertex();
        assert_eq!(q.num_vertices(), 2);
        assert_eq!(q.arrows().len(), 1);
        assert_eq!(q.arrows()[0].tail, 0);
        assert_eq!(q.arrows()[0].head, 1);
    }

    #[test]
    fn single_vertex_without_arrows() {
        let q = build_quiver(["i"], Vec::new()).unwrap();
        assert_eq!(q.num_vertices(), 1);
        assert!(q.arrows().is_empty());
    }

    #[test]
    fn rejects_dangling_and_duplicate_ids() {
        let err = build_quiver(["i", "j"], [("a".into(), "i".into(), "k".into())]).unwrap_err();
        assert!(matches!(err, QuiverError::DanglingEndpoint { .. }));
        let err = build_quiver(["i", "i"], Vec::new()).unwrap_err();
        assert_eq!(err, QuiverError::DuplicateId("i".into()));
        let err = build_quiver(["i", "a"], [("a".into(), "i".into(), "i".into())]).unwrap_err();
        assert_eq!(err, QuiverError::DuplicateId("a".into()));
    }

    #[test]
    fn h0_dimension_counts_monomials() {
        // monomials z^0..z^d
        for d in -3..6 {
            let brute = (0..=d.max(-1)).count();
            assert_eq!(h0_dimension(d), brute);
        }
    }

    #[test]
    fn accepts_section_z_of_o1() {
        let m = p1_model(0, 1, Section::real_poly(&[0.0, 1.0]));
        assert!(validate_model(m).is_ok());
    }

    #[test]
    fn rejects_section_of_negative_bundle() {
        let m = p1_model(1, 0, Section::constant(1.0));
        let errs = validate_model(m).unwrap_err();
        assert!(matches!(errs[0], ModelError::IllegalSection { .. }));
        // the zero section is always fine
        assert!(validate_model(p1_model(1, 0, Section::Zero)).is_ok());
    }

    #[test]
    fn rejects_excess_polynomial_degree() {
        let m = p1_model(0, 1, Section::real_poly(&[0.0, 0.0, 1.0]));
        let errs = validate_model(m).unwrap_err();
        assert!(matches!(
            errs[0],
            ModelError::DegreeMismatch {
                degree: 2,
                max: 1,
                ..
            }
        ));
    }

    #[test]
    fn hopf_arrow_between_unequal_bidegrees_is_illegal() {
        let m = QBundleModel {
            base: BaseFixture::HopfTable,
            quiver: two_vertex(),
            vertex_data: vec![
                VertexBundleData::line(Summand {
                    deg_plus: 0,
                    deg_minus: 0,
                }),
                VertexBundleData::line(Summand {
                    deg_plus: 1,
                    deg_minus: -1,
                }),
            ],
            arrow_data: vec![ArrowData::scalar(Section::constant(1.0))],
            declared_subobjects: None,
        };
        let errs = validate_model(m).unwrap_err();
        assert!(matches!(errs[0], ModelError::IllegalSection { .. }));
    }

    #[test]
    fn fixture_degree_patterns_are_enforced() {
        let mut m = p1_model(0, 1, Section::Zero);
        m.vertex_data[0].summands[0].deg_minus = 3;
        let errs = validate_model(m).unwrap_err();
        assert!(matches!(errs[0], ModelError::FixtureViolation { .. }));

        let mut m = p1_model(0, 0, Section::Zero);
        m.base = BaseFixture::HopfTable;
        m.vertex_data[1].summands[0] = Summand {
            deg_plus: 2,
            deg_minus: 2,
        };
        assert!(validate_model(m).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut m = p1_model(0, 1, Section::Zero);
        m.arrow_data[0] = ArrowData::zero(2, 1);
        let errs = validate_model(m).unwrap_err();
        assert!(matches!(errs[0], ModelError::ShapeMismatch { .. }));
    }

    #[test]
    fn validation_is_idempotent() {
        let m = p1_model(0, 2, Section::real_poly(&[1.0, 0.0, -2.0]));
        let v = validate_model(m).unwrap();
        let again = validate_model(v.clone().into_inner()).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn loops_are_permitted() {
        let q = build_quiver(["i"], [("l".into(), "i".into(), "i".into())]).unwrap();
        let m = QBundleModel {
            base: BaseFixture::P1,
            quiver: q,
            vertex_data: vec![VertexBundleData::line(Summand::p1(2))],
            arrow_data: vec![ArrowData::scalar(Section::constant(1.0))],
            declared_subobjects: None,
        };
        assert!(validate_model(m).is_ok());
    }
}
