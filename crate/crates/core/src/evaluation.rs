//! Comparison of a candidate semantic map against a ground truth.
//!
//! The geometric part pairs elements and sums their distances; the logical
//! part computes the atoms missing from the candidate (`delta`) and the
//! spurious ones (`gamma`), counted over irredundant cores; spatial atoms are
//! compared metrically through their bounding boxes.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use nalgebra::Vector3;
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::geometry::{BoundingBox, GeometricElement, GeometricSet, Primitive, PrimitiveKind};
use crate::kb::{closure_of, core_of_closure, Atom, KbError, KnowledgeBase};
use crate::map::SemanticMap;
use crate::spatial::PointIndex;
use crate::transform::RigidTransform;

const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(
        "predicate `{predicate}` has arity {left} in the candidate and {right} in the ground truth"
    )]
    PredicateSignature {
        predicate: String,
        left: usize,
        right: usize,
    },
    #[error("box `{box_id}` references undeclared individual `{individual}`")]
    DanglingReference { box_id: String, individual: String },
    #[error("weights must be non-negative with at least one positive")]
    InvalidWeights,
    #[error("correspondence gate must be positive")]
    InvalidGate,
    #[error("correspondence references unknown element `{0}`")]
    UnknownElement(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationWeights {
    pub w_g: f64,
    pub w_s: f64,
    pub w_d: f64,
    pub w_u: f64,
}

impl Default for EvaluationWeights {
    fn default() -> Self {
        Self {
            w_g: 1.0,
            w_s: 1.0,
            w_d: 1.0,
            w_u: 1.0,
        }
    }
}

impl EvaluationWeights {
    pub fn new(w_g: f64, w_s: f64, w_d: f64, w_u: f64) -> Result<Self, EvalError> {
        let w = Self { w_g, w_s, w_d, w_u };
        let all = [w_g, w_s, w_d, w_u];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || all.iter().all(|v| *v == 0.0) {
            return Err(EvalError::InvalidWeights);
        }
        Ok(w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvaluationConfig {
    pub weights: EvaluationWeights,
    /// Maximum distance for nearest-neighbour element matching, meters.
    pub gate: f64,
    /// Weight of the angular term between non-parallel lines and planes; 0 disables it.
    pub angular_weight: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            weights: EvaluationWeights::default(),
            gate: 0.5,
            angular_weight: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(String, String)>,
    pub unmatched_1: Vec<String>,
    pub unmatched_gt: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SemanticDiff {
    /// Atoms missing from the candidate.
    pub delta: BTreeSet<Atom>,
    /// Spurious atoms asserted by the candidate.
    pub gamma: BTreeSet<Atom>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefinedDiff {
    pub diff: SemanticDiff,
    pub spatial_distance: f64,
    pub unmatched_1: usize,
    pub unmatched_gt: usize,
}

/// Flat report; serializes to exactly the documented JSON keys.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub geometric_error: f64,
    pub delta_count: usize,
    pub gamma_count: usize,
    pub spatial_distance: f64,
    pub unmatched_1: usize,
    pub unmatched_gt: usize,
    pub scalar: f64,
}

impl EvaluationReport {
    pub fn combine(&mut self, w: &EvaluationWeights) {
        self.scalar = w.w_g * self.geometric_error
            + w.w_s * (self.delta_count + self.gamma_count) as f64
            + w.w_d * self.spatial_distance
            + w.w_u * (self.unmatched_1 + self.unmatched_gt) as f64;
    }
}

/// Symmetric distance between canonical primitives.
pub fn element_distance(a: &GeometricElement, b: &GeometricElement) -> f64 {
    primitive_distance(&a.primitive, &b.primitive)
}

pub fn primitive_distance(a: &Primitive, b: &Primitive) -> f64 {
    use Primitive::*;
    match (a, b) {
        (Point(p), Point(q)) => (p - q).norm(),
        (Point(p), Line { point, direction }) | (Line { point, direction }, Point(p)) => {
            point_line_distance(p, point, direction)
        }
        (Point(p), Plane { normal, offset }) | (Plane { normal, offset }, Point(p)) => {
            (normal.dot(p) - offset).abs()
        }
        (
            Line {
                point: p1,
                direction: d1,
            },
            Line {
                point: p2,
                direction: d2,
            },
        ) => {
            let cross = d1.cross(d2);
            let n = cross.norm();
            if n < PARALLEL_EPS {
                point_line_distance(p2, p1, d1)
            } else {
                ((p2 - p1).dot(&cross) / n).abs()
            }
        }
        (Line { point, direction }, Plane { normal, offset })
        | (Plane { normal, offset }, Line { point, direction }) => {
            if direction.dot(normal).abs() > PARALLEL_EPS {
                0.0
            } else {
                (normal.dot(point) - offset).abs()
            }
        }
        (
            Plane {
                normal: n1,
                offset: o1,
            },
            Plane {
                normal: n2,
                offset: o2,
            },
        ) => {
            if n1.cross(n2).norm() < PARALLEL_EPS {
                let s = n1.dot(n2).signum();
                (o1 - s * o2).abs()
            } else {
                0.0
            }
        }
    }
}

fn point_line_distance(p: &Vector3<f64>, q: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    let v = p - q;
    (v - d * v.dot(d)).norm()
}

/// Angle between the orientations of two primitives; 0 when either is a point.
pub fn primitive_angle(a: &Primitive, b: &Primitive) -> f64 {
    use Primitive::*;
    let clamp = |c: f64| c.abs().min(1.0);
    match (a, b) {
        (Line { direction: d1, .. }, Line { direction: d2, .. }) => clamp(d1.dot(d2)).acos(),
        (Plane { normal: n1, .. }, Plane { normal: n2, .. }) => clamp(n1.dot(n2)).acos(),
        (Line { direction, .. }, Plane { normal, .. })
        | (Plane { normal, .. }, Line { direction, .. }) => clamp(direction.dot(normal)).asin(),
        _ => 0.0,
    }
}

/// Pairs elements by id, then greedily by ascending distance within `gate`,
/// same kind only.
pub fn match_elements(
    m1: &GeometricSet,
    mgt: &GeometricSet,
    gate: f64,
) -> Result<CorrespondenceSet, EvalError> {
    if !(gate > 0.0) {
        return Err(EvalError::InvalidGate);
    }
    let mut out = CorrespondenceSet::default();
    let mut rest1: BTreeMap<PrimitiveKind, Vec<&GeometricElement>> = BTreeMap::new();
    let mut paired_gt: HashSet<&str> = HashSet::new();
    for e in m1.elements() {
        if mgt.get(&e.id).is_some() {
            out.pairs.push((e.id.clone(), e.id.clone()));
            paired_gt.insert(&e.id);
        } else {
            rest1.entry(e.kind()).or_default().push(e);
        }
    }
    let mut restgt: BTreeMap<PrimitiveKind, Vec<&GeometricElement>> = BTreeMap::new();
    for e in mgt.elements() {
        if !paired_gt.contains(e.id.as_str()) {
            restgt.entry(e.kind()).or_default().push(e);
        }
    }
    for kind in [
        PrimitiveKind::Point,
        PrimitiveKind::Line,
        PrimitiveKind::Plane,
    ] {
        let a = rest1.remove(&kind).unwrap_or_default();
        let b = restgt.remove(&kind).unwrap_or_default();
        let matched = if kind == PrimitiveKind::Point && a.len() * b.len() > 4096 {
            greedy_points(&a, &b, gate)
        } else {
            greedy_exhaustive(&a, &b, gate)
        };
        let mut used_a = vec![false; a.len()];
        let mut used_b = vec![false; b.len()];
        for (i, j) in matched {
            used_a[i] = true;
            used_b[j] = true;
            out.pairs.push((a[i].id.clone(), b[j].id.clone()));
        }
        out.unmatched_1.extend(
            a.iter()
                .zip(&used_a)
                .filter(|(_, u)| !**u)
                .map(|(e, _)| e.id.clone()),
        );
        out.unmatched_gt.extend(
            b.iter()
                .zip(&used_b)
                .filter(|(_, u)| !**u)
                .map(|(e, _)| e.id.clone()),
        );
    }
    Ok(out)
}

/// Greedy matching over all candidate pairs, ties broken by index.
fn greedy_exhaustive(
    a: &[&GeometricElement],
    b: &[&GeometricElement],
    gate: f64,
) -> Vec<(usize, usize)> {
    let mut cand: Vec<(OrderedFloat<f64>, usize, usize)> = Vec::new();
    for (i, ea) in a.iter().enumerate() {
        for (j, eb) in b.iter().enumerate() {
            let d = element_distance(ea, eb);
            if d <= gate {
                cand.push((OrderedFloat(d), i, j));
            }
        }
    }
    cand.sort();
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Same result as [`greedy_exhaustive`] for points, using a k-d tree and a
/// lazily refreshed best-candidate heap.
fn greedy_points(
    a: &[&GeometricElement],
    b: &[&GeometricElement],
    gate: f64,
) -> Vec<(usize, usize)> {
    let pts_b: Vec<Vector3<f64>> = b.iter().map(|e| e.primitive.anchor()).collect();
    let index = PointIndex::new(&pts_b);
    let mut used_b = vec![false; b.len()];
    let best_free = |p: &Vector3<f64>, used: &[bool]| -> Option<(f64, usize)> {
        let mut k = 8;
        loop {
            let found = index.nearest_within(p, gate, k);
            let exhausted = found.len() < k;
            let mut best: Option<(f64, usize)> = None;
            for (d, j) in found {
                if !used[j] && best.map_or(true, |(bd, bj)| (d, j) < (bd, bj)) {
                    best = Some((d, j));
                }
            }
            if best.is_some() || exhausted || k >= used.len() {
                return best;
            }
            k *= 4;
        }
    };
    let mut heap = BinaryHeap::new();
    for (i, e) in a.iter().enumerate() {
        if let Some((d, j)) = best_free(&e.primitive.anchor(), &used_b) {
            heap.push(Reverse((OrderedFloat(d), i, j)));
        }
    }
    let mut out = Vec::new();
    while let Some(Reverse((_, i, j))) = heap.pop() {
        if used_b[j] {
            if let Some((d, j2)) = best_free(&a[i].primitive.anchor(), &used_b) {
                heap.push(Reverse((OrderedFloat(d), i, j2)));
            }
            continue;
        }
        used_b[j] = true;
        out.push((i, j));
    }
    out
}

/// Sum of element distances over corresponding pairs.
pub fn geometric_diff(
    m1: &GeometricSet,
    mgt: &GeometricSet,
    corr: &CorrespondenceSet,
) -> Result<f64, EvalError> {
    geometric_diff_with(m1, mgt, corr, 0.0)
}

/// [`geometric_diff`] plus `angular_weight` times the angle of each pair.
pub fn geometric_diff_with(
    m1: &GeometricSet,
    mgt: &GeometricSet,
    corr: &CorrespondenceSet,
    angular_weight: f64,
) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    for (a, b) in &corr.pairs {
        let ea = m1
            .get(a)
            .ok_or_else(|| EvalError::UnknownElement(a.clone()))?;
        let eb = mgt
            .get(b)
            .ok_or_else(|| EvalError::UnknownElement(b.clone()))?;
        sum += element_distance(ea, eb);
        if angular_weight > 0.0 {
            sum += angular_weight * primitive_angle(&ea.primitive, &eb.primitive);
        }
    }
    Ok(sum)
}

fn check_signatures(p1: &KnowledgeBase, pgt: &KnowledgeBase) -> Result<(), EvalError> {
    for (pred, &n1) in p1.arities() {
        if let Some(n2) = pgt.arity(pred) {
            if n1 != n2 {
                return Err(EvalError::PredicateSignature {
                    predicate: pred.clone(),
                    left: n1,
                    right: n2,
                });
            }
        }
    }
    Ok(())
}

/// Delta/gamma diff over the atoms accepted by `keep`.
fn diff_filtered(
    p1: &KnowledgeBase,
    pgt: &KnowledgeBase,
    keep: impl Fn(&Atom) -> bool,
) -> Result<SemanticDiff, EvalError> {
    check_signatures(p1, pgt)?;
    let atoms1: BTreeSet<Atom> = p1.atoms().iter().filter(|a| keep(a)).cloned().collect();
    let atomsgt: BTreeSet<Atom> = pgt.atoms().iter().filter(|a| keep(a)).cloned().collect();
    let closure1 = closure_of(&atoms1, p1.classes())?;
    let closuregt = closure_of(&atomsgt, pgt.classes())?;
    let core1 = core_of_closure(&closure1);
    let coregt = core_of_closure(&closuregt);
    let gamma: BTreeSet<Atom> = core1.difference(&closuregt).cloned().collect();
    let kept: BTreeSet<Atom> = core1.difference(&gamma).cloned().collect();
    let repaired = closure_of(&kept, &BTreeSet::new())?;
    let delta = coregt.difference(&repaired).cloned().collect();
    Ok(SemanticDiff { delta, gamma })
}

/// Atoms to add (`delta`) and remove (`gamma`) so that the candidate entails
/// the ground truth.
pub fn semantic_diff(p1: &KnowledgeBase, pgt: &KnowledgeBase) -> Result<SemanticDiff, EvalError> {
    diff_filtered(p1, pgt, |_| true)
}

/// Semantic diff over non-spatial atoms plus a box distance over individuals
/// annotated on both sides.
pub fn refined_diff(
    p1: &KnowledgeBase,
    pgt: &KnowledgeBase,
    boxes1: &[BoundingBox],
    boxesgt: &[BoundingBox],
) -> Result<RefinedDiff, EvalError> {
    for (kb, boxes) in [(p1, boxes1), (pgt, boxesgt)] {
        for b in boxes {
            if !kb.is_individual(&b.individual) {
                return Err(EvalError::DanglingReference {
                    box_id: b.id.clone(),
                    individual: b.individual.clone(),
                });
            }
        }
    }
    let spatial: BTreeSet<&String> = p1
        .spatial_predicates()
        .iter()
        .chain(pgt.spatial_predicates())
        .collect();
    let diff = diff_filtered(p1, pgt, |a| !spatial.contains(&a.predicate))?;

    let group = |boxes: &[BoundingBox]| {
        let mut m: BTreeMap<String, Vec<BoundingBox>> = BTreeMap::new();
        for b in boxes {
            m.entry(b.individual.clone()).or_default().push(b.clone());
        }
        for v in m.values_mut() {
            v.sort_by(|x, y| x.id.cmp(&y.id));
        }
        m
    };
    let g1 = group(boxes1);
    let mut ggt = group(boxesgt);
    let mut out = RefinedDiff {
        diff,
        ..Default::default()
    };
    for (ind, list1) in &g1 {
        let listgt = ggt.remove(ind).unwrap_or_default();
        let n = list1.len().min(listgt.len());
        for (a, b) in list1.iter().zip(&listgt) {
            out.spatial_distance +=
                (a.center - b.center).norm() + (a.half_extents - b.half_extents).norm();
        }
        out.unmatched_1 += list1.len() - n;
        out.unmatched_gt += listgt.len() - n;
    }
    out.unmatched_gt += ggt.values().map(Vec::len).sum::<usize>();
    Ok(out)
}

/// Full comparison of `sm1` against `smgt`, after moving `sm1` by `align`.
pub fn evaluate(
    sm1: &SemanticMap,
    smgt: &SemanticMap,
    cfg: &EvaluationConfig,
    align: &RigidTransform,
) -> Result<EvaluationReport, EvalError> {
    EvaluationWeights::new(
        cfg.weights.w_g,
        cfg.weights.w_s,
        cfg.weights.w_d,
        cfg.weights.w_u,
    )?;
    let g1 = sm1.geometry.transformed(align);
    let boxes1: Vec<BoundingBox> = sm1.boxes.iter().map(|b| b.transformed(align)).collect();
    let corr = match_elements(&g1, &smgt.geometry, cfg.gate)?;
    let geometric_error = geometric_diff_with(&g1, &smgt.geometry, &corr, cfg.angular_weight)?;
    let refined = refined_diff(&sm1.kb, &smgt.kb, &boxes1, &smgt.boxes)?;
    let mut report = EvaluationReport {
        geometric_error,
        delta_count: refined.diff.delta.len(),
        gamma_count: refined.diff.gamma.len(),
        spatial_distance: refined.spatial_distance,
        unmatched_1: corr.unmatched_1.len() + refined.unmatched_1,
        unmatched_gt: corr.unmatched_gt.len() + refined.unmatched_gt,
        scalar: 0.0,
    };
    report.combine(&cfg.weights);
    Ok(report)
}
