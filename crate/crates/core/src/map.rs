//! The semantic map triple: reference frame, geometry and knowledge base.

use crate::frames::ReferenceFrame;
use crate::geometry::{BoundingBox, GeometricSet, PointCloud};
use crate::kb::KnowledgeBase;
use crate::violation::{Violation, ViolationKind};

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMap {
    pub frame: ReferenceFrame,
    pub geometry: GeometricSet,
    pub cloud: Option<PointCloud>,
    pub kb: KnowledgeBase,
    /// Box annotations backing the spatial predicates.
    pub boxes: Vec<BoundingBox>,
}

impl SemanticMap {
    pub fn new(frame: ReferenceFrame, geometry: GeometricSet, kb: KnowledgeBase) -> Self {
        Self {
            frame,
            geometry,
            cloud: None,
            kb,
            boxes: Vec::new(),
        }
    }
}

/// Every breach of the semantic-map invariants; empty iff the map is valid.
pub fn validate_map(map: &SemanticMap) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in map.geometry.elements() {
        if let Some(ind) = &e.individual {
            if !map.kb.is_individual(ind) {
                out.push(Violation::error(
                    ViolationKind::DanglingIndividual,
                    format!("element `{}` links undeclared individual `{ind}`", e.id),
                ));
            }
        }
    }
    for b in &map.boxes {
        if let Err(e) = b.validate() {
            out.push(Violation::error(ViolationKind::InvalidBox, e.to_string()));
        }
        if !map.kb.is_individual(&b.individual) {
            out.push(Violation::error(
                ViolationKind::DanglingIndividual,
                format!(
                    "box `{}` links undeclared individual `{}`",
                    b.id, b.individual
                ),
            ));
        }
    }
    if let Some(cloud) = &map.cloud {
        if let Err(e) = cloud.validate() {
            out.push(Violation::error(ViolationKind::InvalidCloud, e.to_string()));
        }
    }
    if map.kb.spatial_atoms().next().is_none() {
        out.push(Violation::error(
            ViolationKind::EmptySpatialSubset,
            "the spatial subset of the knowledge base is empty",
        ));
    }
    out.extend(map.kb.check_hierarchy());
    out.extend(map.kb.check_function_like());
    out
}

/// Non-fatal findings: semantic elements without an individual link.
pub fn map_warnings(map: &SemanticMap) -> Vec<Violation> {
    let unlinked = map
        .geometry
        .semantic_ids()
        .iter()
        .filter(|id| map.geometry.get(id).is_some_and(|e| e.individual.is_none()))
        .count();
    if unlinked == 0 {
        return Vec::new();
    }
    vec![Violation::warning(
        ViolationKind::UnlinkedSemanticElement,
        format!("{unlinked} semantic elements carry no individual link"),
    )]
}
