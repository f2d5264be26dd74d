//! Walls and chambers in tau-space at fixed `(alpha, sigma)`.
//!
//! For a subobject `F` the slope equality `mu(F) = mu(E)` becomes, after
//! cross-multiplying by the sigma-ranks, an affine hyperplane in tau. The
//! planar case (two vertices) is arranged exactly: every cell gets a rational
//! interior representative and a classification.

use std::collections::HashSet;
use std::fmt::Write as _;

use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::quiver::QBundleModel;
use crate::stability::{
    classify, enumerate_subobjects, full_parts, int, sigma_rank, tau_free_degree, Classification,
    Rational, StabilityError, StabilityParams, SubobjectSpec,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChamberError {
    #[error("planar arrangement needs exactly 2 vertices, model has {0}")]
    DimensionUnsupported(usize),
    #[error("degenerate bounding box")]
    EmptyBox,
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

/// The hyperplane `sum_i normal_i * tau_i = offset`, normalized so that its
/// first nonzero coefficient is 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wall {
    pub normal: Vec<Rational>,
    pub offset: Rational,
    pub sources: Vec<SubobjectSpec>,
}

impl Wall {
    /// `sum normal_i tau_i - offset`.
    pub fn evaluate(&self, tau: &[Rational]) -> Rational {
        self.normal
            .iter()
            .zip(tau)
            .fold(-self.offset.clone(), |acc, (c, t)| acc + c * t)
    }
}

/// A subobject whose slope-equality locus does not depend on tau.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegenerateLocus {
    pub source: SubobjectSpec,
    /// `true`: equality holds for every tau (an everywhere-semistable
    /// direction); `false`: it never holds.
    pub everywhere: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WallSet {
    pub walls: Vec<Wall>,
    pub degenerate: Vec<DegenerateLocus>,
}

fn params_without_tau(
    alpha: &[Rational],
    sigma: &[Rational],
) -> Result<StabilityParams, StabilityError> {
    StabilityParams::new(
        alpha.to_vec(),
        sigma.to_vec(),
        vec![Rational::zero(); alpha.len()],
    )
}

/// Raw cross-multiplied equation for one subobject, before normalization.
pub fn wall_equation(
    model: &QBundleModel,
    sub: &SubobjectSpec,
    params: &StabilityParams,
) -> (Vec<Rational>, Rational) {
    let full = full_parts(model);
    let d_e = tau_free_degree(&full, params);
    let d_f = tau_free_degree(&sub.parts, params);
    let s_e = sigma_rank(&full, params);
    let s_f = sigma_rank(&sub.parts, params);
    let normal = full
        .iter()
        .zip(&sub.parts)
        .map(|(e, f)| int(e.rank as i64) * &s_f - int(f.rank as i64) * &s_e)
        .collect();
    let offset = d_e * &s_f - d_f * &s_e;
    (normal, offset)
}

fn normalize(normal: Vec<Rational>, offset: Rational) -> Option<(Vec<Rational>, Rational)> {
    let lead = normal.iter().find(|c| !c.is_zero())?.clone();
    Some((
        normal.into_iter().map(|c| c / &lead).collect(),
        offset / &lead,
    ))
}

/// One wall per subobject, with proportional equations merged.
pub fn wall_set(
    model: &QBundleModel,
    alpha: &[Rational],
    sigma: &[Rational],
) -> Result<WallSet, ChamberError> {
    let params = params_without_tau(alpha, sigma)?;
    let mut out = WallSet::default();
    for sub in enumerate_subobjects(model)? {
        let (normal, offset) = wall_equation(model, &sub, &params);
        match normalize(normal, offset.clone()) {
            Some((normal, offset)) => {
                if let Some(w) = out
                    .walls
                    .iter_mut()
                    .find(|w| w.normal == normal && w.offset == offset)
                {
                    w.sources.push(sub);
                } else {
                    out.walls.push(Wall {
                        normal,
                        offset,
                        sources: vec![sub],
                    });
                }
            }
            None => out.degenerate.push(DegenerateLocus {
                source: sub,
                everywhere: offset.is_zero(),
            }),
        }
    }
    Ok(out)
}

pub fn classify_sample(
    model: &QBundleModel,
    alpha: &[Rational],
    sigma: &[Rational],
    tau: &[Rational],
) -> Result<Classification, StabilityError> {
    let params = StabilityParams::new(alpha.to_vec(), sigma.to_vec(), tau.to_vec())?;
    classify(model, &params)
}

/// Closed box `[lo_0, hi_0] x [lo_1, hi_1]` in the tau-plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundingBox {
    pub lo: [Rational; 2],
    pub hi: [Rational; 2],
}

impl BoundingBox {
    pub fn square(half_width: i64) -> Self {
        BoundingBox {
            lo: [int(-half_width), int(-half_width)],
            hi: [int(half_width), int(half_width)],
        }
    }

    fn contains_open(&self, p: &[Rational; 2]) -> bool {
        (0..2).all(|k| self.lo[k] < p[k] && p[k] < self.hi[k])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub representative: [Rational; 2],
    /// Sign of `normal . tau - offset` at the representative, per wall.
    pub signs: Vec<i8>,
    pub classification: Option<Classification>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChamberArrangement {
    pub walls: Vec<Wall>,
    pub cells: Vec<Cell>,
    pub bbox: BoundingBox,
    pub dimension: usize,
}

fn midpoint(a: &Rational, b: &Rational) -> Rational {
    (a + b) / int(2)
}

fn sorted_unique(mut v: Vec<Rational>) -> Vec<Rational> {
    v.sort();
    v.dedup();
    v
}

fn sign(x: &Rational) -> i8 {
    if x.is_positive() {
        1
    } else if x.is_negative() {
        -1
    } else {
        0
    }
}

/// Cells of the planar line arrangement clipped to `bbox`.
///
/// The box is cut into vertical slabs at every x-coordinate where something
/// happens (corners, wall/box crossings, wall/wall crossings). Inside a slab
/// the walls do not cross, so sampling the slab's middle vertical line between
/// consecutive wall crossings meets every cell. Cells are identified by sign
/// vector.
pub fn arrange_2d(walls: &[Wall], bbox: &BoundingBox) -> Result<ChamberArrangement, ChamberError> {
    if let Some(w) = walls.iter().find(|w| w.normal.len() != 2) {
        return Err(ChamberError::DimensionUnsupported(w.normal.len()));
    }
    if bbox.lo[0] >= bbox.hi[0] || bbox.lo[1] >= bbox.hi[1] {
        return Err(ChamberError::EmptyBox);
    }
    let [x0, y0] = bbox.lo.clone();
    let [x1, y1] = bbox.hi.clone();

    let mut xs = vec![x0.clone(), x1.clone()];
    for w in walls {
        let (a, b) = (&w.normal[0], &w.normal[1]);
        if b.is_zero() {
            xs.push(&w.offset / a);
        } else if !a.is_zero() {
            for y in [&y0, &y1] {
                xs.push((&w.offset - b * y) / a);
            }
        }
    }
    for (k, w) in walls.iter().enumerate() {
        for v in &walls[k + 1..] {
            let det = &w.normal[0] * &v.normal[1] - &w.normal[1] * &v.normal[0];
            if det.is_zero() {
                continue;
            }
            let x = (&w.offset * &v.normal[1] - &w.normal[1] * &v.offset) / &det;
            let y = (&w.normal[0] * &v.offset - &w.offset * &v.normal[0]) / &det;
            if bbox.contains_open(&[x.clone(), y]) {
                xs.push(x);
            }
        }
    }
    let xs: Vec<Rational> = sorted_unique(xs)
        .into_iter()
        .filter(|x| *x >= x0 && *x <= x1)
        .collect();

    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    for pair in xs.windows(2) {
        let xm = midpoint(&pair[0], &pair[1]);
        let mut ys = vec![y0.clone(), y1.clone()];
        for w in walls {
            let (a, b) = (&w.normal[0], &w.normal[1]);
            if b.is_zero() {
                continue;
            }
            let y = (&w.offset - a * &xm) / b;
            if y > y0 && y < y1 {
                ys.push(y);
            }
        }
        let ys = sorted_unique(ys);
        for yy in ys.windows(2) {
            let p = [xm.clone(), midpoint(&yy[0], &yy[1])];
            let signs: Vec<i8> = walls.iter().map(|w| sign(&w.evaluate(&p))).collect();
            if seen.insert(signs.clone()) {
                cells.push(Cell {
                    representative: p,
                    signs,
                    classification: None,
                });
            }
        }
    }
    Ok(ChamberArrangement {
        walls: walls.to_vec(),
        cells,
        bbox: bbox.clone(),
        dimension: 2,
    })
}

/// Walls, planar cells and per-cell classification for a two-vertex model.
pub fn chamber_arrangement(
    model: &QBundleModel,
    alpha: &[Rational],
    sigma: &[Rational],
    bbox: &BoundingBox,
) -> Result<ChamberArrangement, ChamberError> {
    let n = model.quiver.num_vertices();
    if n != 2 {
        return Err(ChamberError::DimensionUnsupported(n));
    }
    let walls = wall_set(model, alpha, sigma)?;
    let mut arrangement = arrange_2d(&walls.walls, bbox)?;
    for cell in &mut arrangement.cells {
        cell.classification = Some(classify_sample(
            model,
            alpha,
            sigma,
            &cell.representative,
        )?);
    }
    Ok(arrangement)
}

/// `wall_id,c_<v>...,offset,sources`. Sources are supports joined by `;`.
pub fn walls_csv(walls: &[Wall], vertex_names: &[String]) -> String {
    let mut out = String::from("wall_id");
    for v in vertex_names {
        write!(out, ",c_{v}").unwrap();
    }
    out.push_str(",offset,sources\n");
    for (k, w) in walls.iter().enumerate() {
        write!(out, "{k}").unwrap();
        for c in &w.normal {
            write!(out, ",{c}").unwrap();
        }
        let sources: Vec<String> = w
            .sources
            .iter()
            .map(|s| s.support_label(vertex_names))
            .collect();
        writeln!(out, ",{},\"{}\"", w.offset, sources.join(";")).unwrap();
    }
    out
}

/// `cell_id,tau_<v>...,classification`.
pub fn cells_csv(arrangement: &ChamberArrangement, vertex_names: &[String]) -> String {
    let mut out = String::from("cell_id");
    for v in vertex_names {
        write!(out, ",tau_{v}").unwrap();
    }
    out.push_str(",classification\n");
    for (k, c) in arrangement.cells.iter().enumerate() {
        write!(out, "{k}").unwrap();
        for t in &c.representative {
            write!(out, ",{t}").unwrap();
        }
        let label = c.classification.as_ref().map_or("unclassified", |c| c.label());
        writeln!(out, ",{label}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quiver::{
        build_quiver, ArrowData, BaseFixture, QBundleModel, Section, Summand, VertexBundleData,
    };
    use crate::stability::rat;

    fn two_vertex(mi: i64, mj: i64, arrow: bool) -> QBundleModel {
        let q = build_quiver(["i", "j"], [("a".into(), "i".into(), "j".into())]).unwrap();
        let section = if arrow {
            let mut c = vec![0.0; (mj - mi) as usize + 1];
            *c.last_mut().unwrap() = 1.0;
            Section::real_poly(&c)
        } else {
            Section::Zero
        };
        QBundleModel {
            base: BaseFixture::P1,
            quiver: q,
            vertex_data: vec![
                VertexBundleData::line(Summand::p1(mi)),
                VertexBundleData::line(Summand::p1(mj)),
            ],
            arrow_data: vec![ArrowData::scalar(section)],
            declared_subobjects: None,
        }
    }

    fn half() -> Vec<Rational> {
        vec![rat(1, 2), rat(1, 2)]
    }

    fn ones() -> Vec<Rational> {
        vec![int(1), int(1)]
    }

    fn line(a: i64, b: i64, c: i64) -> Wall {
        Wall {
            normal: vec![int(a), int(b)],
            offset: int(c),
            sources: vec![],
        }
    }

    #[test]
    fn example_one_has_a_single_wall() {
        let m = two_vertex(0, 1, true);
        let ws = wall_set(&m, &half(), &ones()).unwrap();
        assert_eq!(ws.walls.len(), 1);
        let w = &ws.walls[0];
        // tau_i - tau_j = -1, i.e. tau_j - tau_i = 1
        assert_eq!(w.normal, vec![int(1), int(-1)]);
        assert_eq!(w.offset, int(-1));
        assert!(w.evaluate(&[int(0), int(1)]).is_zero());
    }

    #[test]
    fn proportional_walls_are_merged() {
        let m = two_vertex(0, 0, false);
        let ws = wall_set(&m, &half(), &ones()).unwrap();
        assert_eq!(ws.walls.len(), 1);
        assert_eq!(ws.walls[0].sources.len(), 2);
        assert_eq!(ws.walls[0].normal, vec![int(1), int(-1)]);
        assert!(ws.walls[0].offset.is_zero());
    }

    #[test]
    fn single_vertex_has_no_walls() {
        let q = build_quiver(["i"], Vec::new()).unwrap();
        let m = QBundleModel {
            base: BaseFixture::P1,
            quiver: q,
            vertex_data: vec![VertexBundleData::line(Summand::p1(3))],
            arrow_data: vec![],
            declared_subobjects: None,
        };
        let ws = wall_set(&m, &[rat(1, 2)], &[int(1)]).unwrap();
        assert!(ws.walls.is_empty());
        assert!(ws.degenerate.is_empty());
    }

    #[test]
    fn cell_counts_for_small_arrangements() {
        let bbox = BoundingBox::square(3);
        assert_eq!(arrange_2d(&[], &bbox).unwrap().cells.len(), 1);
        assert_eq!(arrange_2d(&[line(-1, 1, 1)], &bbox).unwrap().cells.len(), 2);
        let parallel = [line(-1, 1, 0), line(-1, 1, 1)];
        assert_eq!(arrange_2d(&parallel, &bbox).unwrap().cells.len(), 3);
        // two crossing lines through the interior
        let cross = [line(1, 0, 0), line(0, 1, 0)];
        assert_eq!(arrange_2d(&cross, &bbox).unwrap().cells.len(), 4);
        // a line missing the box does not split it
        assert_eq!(arrange_2d(&[line(1, 0, 10)], &bbox).unwrap().cells.len(), 1);
    }

    #[test]
    fn representatives_avoid_walls() {
        let walls = [line(1, 1, 0), line(1, -1, 1), line(1, 0, -2)];
        let arr = arrange_2d(&walls, &BoundingBox::square(3)).unwrap();
        for c in &arr.cells {
            assert!(c.signs.iter().all(|&s| s != 0));
            assert!(BoundingBox::square(3).contains_open(&c.representative));
        }
    }

    #[test]
    fn planar_arrangement_needs_two_vertices() {
        let q = build_quiver(["i", "j", "k"], Vec::new()).unwrap();
        let m = QBundleModel {
            base: BaseFixture::P1,
            quiver: q,
            vertex_data: vec![VertexBundleData::line(Summand::p1(0)); 3],
            arrow_data: vec![],
            declared_subobjects: None,
        };
        let err = chamber_arrangement(
            &m,
            &vec![rat(1, 2); 3],
            &[int(1), int(1), int(1)],
            &BoundingBox::square(1),
        )
        .unwrap_err();
        assert_eq!(err, ChamberError::DimensionUnsupported(3));
    }

    #[test]
    fn classify_sample_on_example_one() {
        let m = two_vertex(0, 1, true);
        let c = |ti, tj| classify_sample(&m, &half(), &ones(), &[int(ti), int(tj)]).unwrap();
        assert_eq!(c(0, 2), Classification::Stable);
        assert!(matches!(c(0, 1), Classification::StrictlySemistable(_)));
        assert!(matches!(c(0, 0), Classification::Unstable(_)));
    }

    #[test]
    fn csv_has_one_row_per_wall() {
        let m = two_vertex(0, 1, true);
        let arr = chamber_arrangement(&m, &half(), &ones(), &BoundingBox::square(3)).unwrap();
        let names = vec!["i".to_string(), "j".to_string()];
        let walls = walls_csv(&arr.walls, &names);
        assert_eq!(walls.lines().count(), 2);
        assert_eq!(walls.lines().nth(1).unwrap(), "0,1,-1,-1,\"{j}\"");
        let cells = cells_csv(&arr, &names);
        assert_eq!(cells.lines().count(), 3);
    }
}
