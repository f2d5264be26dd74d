//! Exact `(alpha, sigma, tau)`-degree and slope calculus, subobject
//! enumeration and stability classification.
//!
//! All arithmetic is over arbitrary-precision rationals; no comparison in
//! this module goes through floating point.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::quiver::QBundleModel;

pub type Rational = BigRational;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StabilityError {
    #[error("subobject has total rank zero")]
    ZeroRank,
    #[error("vertex `{0}` has rank >= 2 and the model declares no subobject lattice")]
    UnsupportedRank(String),
    #[error("model has no proper subobjects")]
    NoSubobjects,
    #[error("invalid stability parameters: {0}")]
    InvalidParams(String),
    #[error("subobject inconsistent with model: {0}")]
    Inconsistent(String),
    #[error("enumeration over {0} vertices is too large")]
    TooManyVertices(usize),
}

/// Per-vertex stability parameters. `0 < alpha_i < 1`, `sigma_i > 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilityParams {
    alpha: Vec<Rational>,
    sigma: Vec<Rational>,
    tau: Vec<Rational>,
}

impl StabilityParams {
    pub fn new(
        alpha: Vec<Rational>,
        sigma: Vec<Rational>,
        tau: Vec<Rational>,
    ) -> Result<Self, StabilityError> {
        if alpha.len() != sigma.len() || sigma.len() != tau.len() {
            return Err(StabilityError::InvalidParams(format!(
                "length mismatch: alpha {}, sigma {}, tau {}",
                alpha.len(),
                sigma.len(),
                tau.len()
            )));
        }
        for (i, a) in alpha.iter().enumerate() {
            if !a.is_positive() || *a >= Rational::one() {
                return Err(StabilityError::InvalidParams(format!(
                    "alpha[{i}] = {a} not in (0,1)"
                )));
            }
        }
        for (i, s) in sigma.iter().enumerate() {
            if !s.is_positive() {
                return Err(StabilityError::InvalidParams(format!(
                    "sigma[{i}] = {s} not positive"
                )));
            }
        }
        Ok(StabilityParams { alpha, sigma, tau })
    }

    pub fn alpha(&self) -> &[Rational] {
        &self.alpha
    }

    pub fn sigma(&self) -> &[Rational] {
        &self.sigma
    }

    pub fn tau(&self) -> &[Rational] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn with_tau(&self, tau: Vec<Rational>) -> Result<Self, StabilityError> {
        Self::new(self.alpha.clone(), self.sigma.clone(), tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubPart {
    pub rank: usize,
    pub deg_plus: i64,
    pub deg_minus: i64,
}

impl SubPart {
    pub const ZERO: SubPart = SubPart {
        rank: 0,
        deg_plus: 0,
        deg_minus: 0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Enumerated,
    Declared,
}

/// A Q-subobject described by per-vertex rank and degrees.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubobjectSpec {
    pub name: Option<String>,
    pub parts: Vec<SubPart>,
    pub provenance: Provenance,
}

impl SubobjectSpec {
    pub fn declared(name: impl Into<String>, parts: Vec<SubPart>) -> Self {
        SubobjectSpec {
            name: Some(name.into()),
            parts,
            provenance: Provenance::Declared,
        }
    }

    /// Vertices where the subobject has positive rank.
    pub fn support(&self) -> Vec<usize> {
        self.parts
            .iter()
            .enumerate()
            .filter(|(_, p)| p.rank > 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn total_rank(&self) -> usize {
        self.parts.iter().map(|p| p.rank).sum()
    }

    /// Checks rank bounds and properness against the model's vertex ranks.
    pub fn check_against(&self, ranks: &[usize]) -> Result<(), String> {
        if self.parts.len() != ranks.len() {
            return Err(format!(
                "{} parts for {} vertices",
                self.parts.len(),
                ranks.len()
            ));
        }
        for (i, (p, &r)) in self.parts.iter().zip(ranks).enumerate() {
            if p.rank > r {
                return Err(format!("rank {} at vertex {i} exceeds {r}", p.rank));
            }
            if p.rank == 0 && (p.deg_plus != 0 || p.deg_minus != 0) {
                return Err(format!("nonzero degree on rank-0 part at vertex {i}"));
            }
        }
        if self.total_rank() == 0 {
            return Err("all ranks are zero".into());
        }
        if self.parts.iter().zip(ranks).all(|(p, &r)| p.rank == r) {
            return Err("subobject has full rank everywhere (not proper)".into());
        }
        Ok(())
    }

    /// Human-readable support, e.g. `{j}` or `{i,j}`.
    pub fn support_label(&self, vertex_names: &[String]) -> String {
        let names: Vec<&str> = self
            .support()
            .into_iter()
            .map(|i| vertex_names[i].as_str())
            .collect();
        format!("{{{}}}", names.join(","))
    }
}

/// Canonical order on subobjects: smaller support first, then lexicographic
/// vertex indices, then rank vector.
fn canonical_cmp(a: &SubobjectSpec, b: &SubobjectSpec) -> Ordering {
    let (sa, sb) = (a.support(), b.support());
    sa.len()
        .cmp(&sb.len())
        .then_with(|| sa.cmp(&sb))
        .then_with(|| {
            let ra: Vec<usize> = a.parts.iter().map(|p| p.rank).collect();
            let rb: Vec<usize> = b.parts.iter().map(|p| p.rank).collect();
            ra.cmp(&rb)
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlopeReport {
    pub degree: Rational,
    pub sigma_rank: Rational,
    pub slope: Rational,
}

impl fmt::Display for SlopeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "deg = {}, sigma-rank = {}, slope = {}",
            self.degree, self.sigma_rank, self.slope
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Subject<'a> {
    Full,
    Sub(&'a SubobjectSpec),
}

/// Per-vertex `(rank, deg+, deg-)` of the full model.
pub fn full_parts(model: &QBundleModel) -> Vec<SubPart> {
    model
        .vertex_data
        .iter()
        .map(|v| SubPart {
            rank: v.rank(),
            deg_plus: v.deg_plus(),
            deg_minus: v.deg_minus(),
        })
        .collect()
}

/// The tau-free part of the degree: `sum alpha_i sigma_i deg+ + (1-alpha_i) sigma_i deg-`.
pub fn tau_free_degree(parts: &[SubPart], params: &StabilityParams) -> Rational {
    let one = Rational::one();
    parts
        .iter()
        .enumerate()
        .fold(Rational::zero(), |acc, (i, p)| {
            let a = &params.alpha[i];
            let s = &params.sigma[i];
            acc + a * s * int(p.deg_plus) + (&one - a) * s * int(p.deg_minus)
        })
}

pub fn sigma_rank(parts: &[SubPart], params: &StabilityParams) -> Rational {
    parts
        .iter()
        .enumerate()
        .fold(Rational::zero(), |acc, (i, p)| {
            acc + &params.sigma[i] * int(p.rank as i64)
        })
}

pub fn slope_of_parts(
    parts: &[SubPart],
    params: &StabilityParams,
) -> Result<SlopeReport, StabilityError> {
    if parts.len() != params.len() {
        return Err(StabilityError::Inconsistent(format!(
            "{} parts for {} parameter entries",
            parts.len(),
            params.len()
        )));
    }
    if parts.iter().all(|p| p.rank == 0) {
        return Err(StabilityError::ZeroRank);
    }
    let tau_part = parts
        .iter()
        .enumerate()
        .fold(Rational::zero(), |acc, (i, p)| {
            acc + &params.tau[i] * int(p.rank as i64)
        });
    let degree = tau_free_degree(parts, params) - tau_part;
    let sigma_rank = sigma_rank(parts, params);
    let slope = &degree / &sigma_rank;
    Ok(SlopeReport {
        degree,
        sigma_rank,
        slope,
    })
}

pub fn deg_slope(
    model: &QBundleModel,
    subject: Subject<'_>,
    params: &StabilityParams,
) -> Result<SlopeReport, StabilityError> {
    match subject {
        Subject::Full => slope_of_parts(&full_parts(model), params),
        Subject::Sub(sub) => {
            sub.check_against(&model.ranks())
                .map_err(StabilityError::Inconsistent)?;
            slope_of_parts(&sub.parts, params)
        }
    }
}

/// Enumerated subobject of a rank-1-per-vertex model with the given support.
pub fn support_subobject(model: &QBundleModel, support: &[bool]) -> SubobjectSpec {
    let parts = model
        .vertex_data
        .iter()
        .zip(support)
        .map(|(v, &on)| {
            if on {
                SubPart {
                    rank: 1,
                    deg_plus: v.summands[0].deg_plus,
                    deg_minus: v.summands[0].deg_minus,
                }
            } else {
                SubPart::ZERO
            }
        })
        .collect();
    SubobjectSpec {
        name: None,
        parts,
        provenance: Provenance::Enumerated,
    }
}

/// `true` when every nonzero arrow leaving the support lands in it.
pub fn is_arrow_closed(model: &QBundleModel, support: &[bool]) -> bool {
    model
        .quiver
        .arrows()
        .iter()
        .enumerate()
        .all(|(a, arrow)| !support[arrow.tail] || support[arrow.head] || !model.arrow_nonzero(a))
}

const MAX_ENUMERATION_VERTICES: usize = 20;

/// Proper subobjects: the declared lattice when present, otherwise all
/// proper nonempty arrow-closed supports of a rank-1-per-vertex model.
/// Returned in canonical order.
pub fn enumerate_subobjects(model: &QBundleModel) -> Result<Vec<SubobjectSpec>, StabilityError> {
    if let Some(declared) = &model.declared_subobjects {
        let ranks = model.ranks();
        for sub in declared {
            sub.check_against(&ranks)
                .map_err(StabilityError::Inconsistent)?;
        }
        let mut out = declared.clone();
        out.sort_by(canonical_cmp);
        return Ok(out);
    }
    if let Some(i) = model.vertex_data.iter().position(|v| v.rank() != 1) {
        return Err(StabilityError::UnsupportedRank(
            model.quiver.vertices()[i].clone(),
        ));
    }
    let n = model.quiver.num_vertices();
    if n > MAX_ENUMERATION_VERTICES {
        return Err(StabilityError::TooManyVertices(n));
    }
    let full = (1u64 << n) - 1;
    let mut out = Vec::new();
    for mask in 1..full {
        let support: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        if is_arrow_closed(model, &support) {
            out.push(support_subobject(model, &support));
        }
    }
    out.sort_by(canonical_cmp);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub sub: SubobjectSpec,
    pub report: SlopeReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classification {
    Stable,
    StrictlySemistable(Vec<Witness>),
    Unstable(Vec<Witness>),
    VacuouslyStable,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Stable => "Stable",
            Classification::StrictlySemistable(_) => "StrictlySemistable",
            Classification::Unstable(_) => "Unstable",
            Classification::VacuouslyStable => "VacuouslyStable",
        }
    }

    /// Stable or vacuously stable.
    pub fn is_stable(&self) -> bool {
        matches!(
            self,
            Classification::Stable | Classification::VacuouslyStable
        )
    }

    pub fn witnesses(&self) -> &[Witness] {
        match self {
            Classification::StrictlySemistable(w) | Classification::Unstable(w) => w,
            _ => &[],
        }
    }
}

/// Classifies against an explicit list of subobjects.
pub fn classify_against(
    model: &QBundleModel,
    subs: &[SubobjectSpec],
    params: &StabilityParams,
) -> Result<Classification, StabilityError> {
    if subs.is_empty() {
        return Ok(Classification::VacuouslyStable);
    }
    let total = deg_slope(model, Subject::Full, params)?;
    let mut equal = Vec::new();
    let mut above = Vec::new();
    for sub in subs {
        let report = slope_of_parts(&sub.parts, params)?;
        match report.slope.cmp(&total.slope) {
            Ordering::Less => {}
            Ordering::Equal => equal.push(Witness {
                sub: sub.clone(),
                report,
            }),
            Ordering::Greater => above.push(Witness {
                sub: sub.clone(),
                report,
            }),
        }
    }
    Ok(if !above.is_empty() {
        Classification::Unstable(above)
    } else if !equal.is_empty() {
        Classification::StrictlySemistable(equal)
    } else {
        Classification::Stable
    })
}

pub fn classify(
    model: &QBundleModel,
    params: &StabilityParams,
) -> Result<Classification, StabilityError> {
    let subs = enumerate_subobjects(model)?;
    classify_against(model, &subs, params)
}

/// Subobject of maximal slope; ties go to the canonically smallest support.
pub fn max_slope_subobject(
    model: &QBundleModel,
    params: &StabilityParams,
) -> Result<(SubobjectSpec, SlopeReport), StabilityError> {
    let subs = enumerate_subobjects(model)?;
    let mut best: Option<(SubobjectSpec, SlopeReport)> = None;
    // subs is in canonical order, so strict improvement keeps the earliest tie
    for sub in subs {
        let report = slope_of_parts(&sub.parts, params)?;
        if best.as_ref().is_none_or(|(_, b)| report.slope > b.slope) {
            best = Some((sub, report));
        }
    }
    best.ok_or(StabilityError::NoSubobjects)
}

/// Connected components of the quiver under nonzero arrows (undirected).
pub fn nonzero_components(model: &QBundleModel) -> Vec<Vec<usize>> {
    let n = model.quiver.num_vertices();
    let mut comp = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        comp[start] = id;
        while let Some(v) = stack.pop() {
            members.push(v);
            for (a, arrow) in model.quiver.arrows().iter().enumerate() {
                if !model.arrow_nonzero(a) {
                    continue;
                }
                for (x, y) in [(arrow.tail, arrow.head), (arrow.head, arrow.tail)] {
                    if x == v && comp[y] == usize::MAX {
                        comp[y] = id;
                        stack.push(y);
                    }
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Polystability test for split rank-1 models: strictly semistable, and the
/// model is a direct sum of its nonzero-arrow components, each of the total
/// slope and each stable on its own.
pub fn is_split_polystable(
    model: &QBundleModel,
    params: &StabilityParams,
) -> Result<bool, StabilityError> {
    let class = classify(model, params)?;
    if class.is_stable() {
        return Ok(true);
    }
    if !matches!(class, Classification::StrictlySemistable(_)) {
        return Ok(false);
    }
    let components = nonzero_components(model);
    if components.len() < 2 {
        return Ok(false);
    }
    let total = deg_slope(model, Subject::Full, params)?.slope;
    let n = model.quiver.num_vertices();
    let subs = enumerate_subobjects(model)?;
    for comp in &components {
        let mut mask = vec![false; n];
        for &v in comp {
            mask[v] = true;
        }
        let part = support_subobject(model, &mask);
        if slope_of_parts(&part.parts, params)?.slope != total {
            return Ok(false);
        }
        // stable as a summand: every subobject strictly inside the component
        // has smaller slope
        for sub in &subs {
            let s = sub.support();
            if s.iter().all(|v| mask[*v]) && s.len() < comp.len() {
                if slope_of_parts(&sub.parts, params)?.slope >= total {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}
