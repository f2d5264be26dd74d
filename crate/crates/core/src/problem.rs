//! JSON problem files. Stability parameters are rational strings (`"p/q"`,
//! integers or finite decimals) and never pass through floating point.

use std::str::FromStr;

use indexmap::IndexMap;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quiver::{
    build_quiver, validate_model, ArrowData, BaseFixture, ModelError, QBundleModel, QuiverError,
    Section, Summand, VertexBundleData,
};
use crate::stability::{Rational, StabilityError, StabilityParams, SubPart, SubobjectSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("malformed problem file: {0}")]
    Syntax(String),
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error("bad rational `{0}`")]
    BadRational(String),
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("missing {kind} for `{name}`")]
    Missing { kind: &'static str, name: String },
    #[error(transparent)]
    Quiver(#[from] QuiverError),
    #[error("{}", join_model_errors(.0))]
    Model(Vec<ModelError>),
    #[error(transparent)]
    Params(#[from] StabilityError),
}

fn join_model_errors(errors: &[ModelError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses `"p/q"`, `"n"` or a finite decimal such as `"-0.4"` exactly.
pub fn parse_rational(s: &str) -> Result<Rational, ProblemError> {
    let bad = || ProblemError::BadRational(s.to_string());
    let t = s.trim();
    if t.contains('/') {
        let r = Rational::from_str(t).map_err(|_| bad())?;
        return Ok(r);
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
    if (whole.is_empty() && frac.is_empty())
        || !whole.chars().all(|c| c.is_ascii_digit())
        || !frac.chars().all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits = format!("{whole}{frac}");
    let numer = BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).map_err(|_| bad())?;
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    let r = Rational::new(numer, denom);
    Ok(if neg { -r } else { r })
}

pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBase {
    pub fixture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawArrow {
    pub id: String,
    pub tail: String,
    pub head: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawQuiver {
    pub vertices: Vec<String>,
    #[serde(default)]
    pub arrows: Vec<RawArrow>,
}

/// A summand is either `{"deg": m}` (P1) or `{"deg_plus": p, "deg_minus": q}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawSummand {
    Bidegree { deg_plus: i64, deg_minus: i64 },
    Single { deg: i64 },
}

impl RawSummand {
    fn to_summand(&self) -> Summand {
        match *self {
            RawSummand::Single { deg } => Summand::p1(deg),
            RawSummand::Bidegree {
                deg_plus,
                deg_minus,
            } => Summand {
                deg_plus,
                deg_minus,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawCoefficient {
    Real(f64),
    Complex([f64; 2]),
}

/// `null` is the zero section; otherwise coefficients in increasing degree.
pub type RawSection = Option<Vec<RawCoefficient>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawParams {
    pub alpha: IndexMap<String, String>,
    pub sigma: IndexMap<String, String>,
    pub tau: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPart {
    pub rank: usize,
    pub deg_plus: i64,
    pub deg_minus: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSubobject {
    pub name: String,
    /// Vertices not listed have rank 0.
    pub parts: IndexMap<String, RawPart>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_newton: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup_threshold: Option<f64>,
}

impl SolverOverrides {
    pub fn is_empty(&self) -> bool {
        *self == SolverOverrides::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProblem {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub base: RawBase,
    pub quiver: RawQuiver,
    pub bundle: IndexMap<String, Vec<RawSummand>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nonsplit: Vec<String>,
    #[serde(default)]
    pub arrows: IndexMap<String, Vec<Vec<RawSection>>>,
    pub params: RawParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subobjects: Option<Vec<RawSubobject>>,
    #[serde(default, skip_serializing_if = "SolverOverrides::is_empty")]
    pub solver: SolverOverrides,
}

pub const DEFAULT_GRID: [usize; 2] = [64, 128];

/// A parsed and validated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: Option<String>,
    pub model: QBundleModel,
    pub params: StabilityParams,
    pub grid: [usize; 2],
    pub volume: f64,
    pub solver: SolverOverrides,
}

fn fixture_name(b: BaseFixture) -> &'static str {
    match b {
        BaseFixture::P1 => "P1",
        BaseFixture::HopfTable => "HopfTable",
    }
}

fn lookup<'a, T>(
    map: &'a IndexMap<String, T>,
    names: &[String],
    kind: &'static str,
) -> Result<Vec<&'a T>, ProblemError> {
    if let Some(k) = map.keys().find(|k| !names.contains(k)) {
        return Err(ProblemError::Unknown {
            kind: "vertex",
            name: k.clone(),
        });
    }
    names
        .iter()
        .map(|n| {
            map.get(n).ok_or_else(|| ProblemError::Missing {
                kind,
                name: n.clone(),
            })
        })
        .collect()
}

fn section_from_raw(raw: &RawSection) -> Section {
    match raw {
        None => Section::Zero,
        Some(coeffs) => Section::Poly(
            coeffs
                .iter()
                .map(|c| match *c {
                    RawCoefficient::Real(x) => Complex64::new(x, 0.0),
                    RawCoefficient::Complex([re, im]) => Complex64::new(re, im),
                })
                .collect(),
        )
        .normalized(),
    }
}

fn section_to_raw(s: &Section) -> RawSection {
    match s.clone().normalized() {
        Section::Zero => None,
        Section::Poly(c) => Some(
            c.iter()
                .map(|z| {
                    if z.im == 0.0 {
                        RawCoefficient::Real(z.re)
                    } else {
                        RawCoefficient::Complex([z.re, z.im])
                    }
                })
                .collect(),
        ),
    }
}

impl RawProblem {
    pub fn into_problem(self) -> Result<Problem, ProblemError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ProblemError::Schema(self.schema));
        }
        let base = match self.base.fixture.as_str() {
            "P1" => BaseFixture::P1,
            "HopfTable" => BaseFixture::HopfTable,
            other => return Err(ProblemError::UnknownFixture(other.to_string())),
        };
        let quiver = build_quiver(
            self.quiver.vertices.clone(),
            self.quiver
                .arrows
                .iter()
                .map(|a| (a.id.clone(), a.tail.clone(), a.head.clone())),
        )?;
        let names = quiver.vertices().to_vec();
        if let Some(n) = self.nonsplit.iter().find(|n| !names.contains(n)) {
            return Err(ProblemError::Unknown {
                kind: "vertex",
                name: n.clone(),
            });
        }
        let vertex_data = lookup(&self.bundle, &names, "bundle")?
            .into_iter()
            .zip(&names)
            .map(|(summands, name)| VertexBundleData {
                summands: summands.iter().map(RawSummand::to_summand).collect(),
                nonsplit: self.nonsplit.contains(name),
            })
            .collect();
        let arrow_ids: Vec<String> = quiver.arrows().iter().map(|a| a.id.clone()).collect();
        if let Some(k) = self.arrows.keys().find(|k| !arrow_ids.contains(k)) {
            return Err(ProblemError::Unknown {
                kind: "arrow",
                name: k.clone(),
            });
        }
        let arrow_data = arrow_ids
            .iter()
            .map(|id| {
                let blocks = self.arrows.get(id).ok_or_else(|| ProblemError::Missing {
                    kind: "arrow data",
                    name: id.clone(),
                })?;
                Ok(ArrowData {
                    blocks: blocks
                        .iter()
                        .map(|row| row.iter().map(section_from_raw).collect())
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>, ProblemError>>()?;
        let rationals = |map: &IndexMap<String, String>, kind| {
            lookup(map, &names, kind)?
                .into_iter()
                .map(|s| parse_rational(s))
                .collect::<Result<Vec<_>, _>>()
        };
        let params = StabilityParams::new(
            rationals(&self.params.alpha, "alpha")?,
            rationals(&self.params.sigma, "sigma")?,
            rationals(&self.params.tau, "tau")?,
        )?;
        let declared_subobjects = match &self.subobjects {
            None => None,
            Some(list) => Some(
                list.iter()
                    .map(|s| {
                        if let Some(k) = s.parts.keys().find(|k| !names.contains(k)) {
                            return Err(ProblemError::Unknown {
                                kind: "vertex",
                                name: k.clone(),
                            });
                        }
                        let parts = names
                            .iter()
                            .map(|n| match s.parts.get(n) {
                                Some(p) => SubPart {
                                    rank: p.rank,
                                    deg_plus: p.deg_plus,
                                    deg_minus: p.deg_minus,
                                },
                                None => SubPart::ZERO,
                            })
                            .collect();
                        Ok(SubobjectSpec::declared(s.name.clone(), parts))
                    })
                    .collect::<Result<Vec<_>, ProblemError>>()?,
            ),
        };
        let model = QBundleModel {
            base,
            quiver,
            vertex_data,
            arrow_data,
            declared_subobjects,
        };
        let model = validate_model(model)
            .map_err(ProblemError::Model)?
            .into_inner();
        Ok(Problem {
            name: self.name,
            model,
            params,
            grid: self.base.grid.unwrap_or(DEFAULT_GRID),
            volume: self.base.volume.unwrap_or(1.0),
            solver: self.solver,
        })
    }
}

impl Problem {
    pub fn parse(text: &str) -> Result<Problem, ProblemError> {
        let raw: RawProblem =
            serde_json::from_str(text).map_err(|e| ProblemError::Syntax(e.to_string()))?;
        raw.into_problem()
    }

    pub fn from_parts(name: Option<&str>, model: QBundleModel, params: StabilityParams) -> Problem {
        Problem {
            name: name.map(str::to_string),
            model,
            params,
            grid: DEFAULT_GRID,
            volume: 1.0,
            solver: SolverOverrides::default(),
        }
    }

    pub fn to_raw(&self) -> RawProblem {
        let q = &self.model.quiver;
        let names = q.vertices();
        let per_vertex = |vals: &[Rational]| -> IndexMap<String, String> {
            names
                .iter()
                .cloned()
                .zip(vals.iter().map(format_rational))
                .collect()
        };
        let p1 = self.model.base == BaseFixture::P1;
        RawProblem {
            schema: SCHEMA_VERSION,
            name: self.name.clone(),
            base: RawBase {
                fixture: fixture_name(self.model.base).to_string(),
                grid: p1.then_some(self.grid),
                volume: p1.then_some(self.volume),
            },
            quiver: RawQuiver {
                vertices: names.to_vec(),
                arrows: q
                    .arrows()
                    .iter()
                    .map(|a| RawArrow {
                        id: a.id.clone(),
                        tail: names[a.tail].clone(),
                        head: names[a.head].clone(),
                    })
                    .collect(),
            },
            bundle: names
                .iter()
                .cloned()
                .zip(self.model.vertex_data.iter().map(|v| {
                    v.summands
                        .iter()
                        .map(|s| {
                            if p1 && s.deg_plus == s.deg_minus {
                                RawSummand::Single { deg: s.deg_plus }
                            } else {
                                RawSummand::Bidegree {
                                    deg_plus: s.deg_plus,
                                    deg_minus: s.deg_minus,
                                }
                            }
                        })
                        .collect()
                }))
                .collect(),
            nonsplit: names
                .iter()
                .zip(&self.model.vertex_data)
                .filter(|(_, v)| v.nonsplit)
                .map(|(n, _)| n.clone())
                .collect(),
            arrows: q
                .arrows()
                .iter()
                .zip(&self.model.arrow_data)
                .map(|(a, d)| {
                    (
                        a.id.clone(),
                        d.blocks
                            .iter()
                            .map(|row| row.iter().map(section_to_raw).collect())
                            .collect(),
                    )
                })
                .collect(),
            params: RawParams {
                alpha: per_vertex(self.params.alpha()),
                sigma: per_vertex(self.params.sigma()),
                tau: per_vertex(self.params.tau()),
            },
            subobjects: self.model.declared_subobjects.as_ref().map(|list| {
                list.iter()
                    .enumerate()
                    .map(|(k, s)| RawSubobject {
                        name: s.name.clone().unwrap_or_else(|| format!("S{k}")),
                        parts: names
                            .iter()
                            .zip(&s.parts)
                            .filter(|(_, p)| p.rank > 0)
                            .map(|(n, p)| {
                                (
                                    n.clone(),
                                    RawPart {
                                        rank: p.rank,
                                        deg_plus: p.deg_plus,
                                        deg_minus: p.deg_minus,
                                    },
                                )
                            })
                            .collect(),
                    })
                    .collect()
            }),
            solver: self.solver.clone(),
        }
    }

    /// Canonical pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_raw()).expect("serializable");
        s.push('\n');
        s
    }
}

/// `true` when `r` is an integer.
pub fn is_integral(r: &Rational) -> bool {
    r.denom().is_one() || r.numer().is_zero()
}
