//! Geometric elements, point clouds and oriented bounding boxes.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::transform::RigidTransform;

/// Components with magnitude at or below this are treated as zero when
/// choosing a canonical sign.
const SIGN_EPS: f64 = 1e-12;

fn canonical_sign(v: &Vector3<f64>) -> f64 {
    for c in v.iter() {
        if c.abs() > SIGN_EPS {
            return c.signum();
        }
    }
    1.0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("zero-length direction or normal vector")]
    DegenerateVector,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("duplicate element id `{0}`")]
    DuplicateId(String),
    #[error("semantic id `{0}` does not name an element")]
    UnknownSemanticId(String),
    #[error("cloud attribute `{name}` has {got} entries, expected {expected}")]
    AttributeLength {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("bounding box `{0}` has a non-positive half extent")]
    NonPositiveExtent(String),
}

/// A point, infinite line or infinite plane in canonical form.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Point(Vector3<f64>),
    /// Closest point to the origin and unit direction.
    Line {
        point: Vector3<f64>,
        direction: Vector3<f64>,
    },
    /// Hessian normal form `normal . x = offset`.
    Plane {
        normal: Vector3<f64>,
        offset: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Point,
    Line,
    Plane,
}

impl Primitive {
    pub fn point(p: Vector3<f64>) -> Result<Self, GeometryError> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Primitive::Point(p))
    }

    /// Line through `through` with direction `direction` (any length).
    pub fn line(through: Vector3<f64>, direction: Vector3<f64>) -> Result<Self, GeometryError> {
        if !through
            .iter()
            .chain(direction.iter())
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        let n = direction.norm();
        if n < 1e-12 {
            return Err(GeometryError::DegenerateVector);
        }
        let mut d = direction / n;
        d *= canonical_sign(&d);
        let point = through - d * through.dot(&d);
        Ok(Primitive::Line {
            point,
            direction: d,
        })
    }

    /// Plane `normal . x = offset`; `normal` need not be unit length.
    pub fn plane(normal: Vector3<f64>, offset: f64) -> Result<Self, GeometryError> {
        if !normal.iter().all(|v| v.is_finite()) || !offset.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let n = normal.norm();
        if n < 1e-12 {
            return Err(GeometryError::DegenerateVector);
        }
        let s = canonical_sign(&normal);
        Ok(Primitive::Plane {
            normal: normal * (s / n),
            offset: offset * (s / n),
        })
    }

    /// Plane through `point` with normal `normal`.
    pub fn plane_through(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::plane(normal, normal.dot(&point))
    }

    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Point(_) => PrimitiveKind::Point,
            Primitive::Line { .. } => PrimitiveKind::Line,
            Primitive::Plane { .. } => PrimitiveKind::Plane,
        }
    }

    /// Rigidly moves the primitive, keeping the canonical form.
    pub fn transformed(&self, t: &RigidTransform) -> Primitive {
        match self {
            Primitive::Point(p) => Primitive::Point(t.apply_point(p)),
            Primitive::Line { point, direction } => {
                Primitive::line(t.apply_point(point), t.apply_vector(direction))
                    .expect("rigid motion preserves unit direction")
            }
            Primitive::Plane { normal, offset } => {
                let n = t.apply_vector(normal);
                Primitive::plane(n, offset + n.dot(&t.translation))
                    .expect("rigid motion preserves unit normal")
            }
        }
    }

    /// A representative point lying on the primitive.
    pub fn anchor(&self) -> Vector3<f64> {
        match self {
            Primitive::Point(p) => *p,
            Primitive::Line { point, .. } => *point,
            Primitive::Plane { normal, offset } => normal * *offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometricElement {
    pub id: String,
    pub primitive: Primitive,
    pub individual: Option<String>,
}

impl GeometricElement {
    pub fn new(id: impl Into<String>, primitive: Primitive) -> Self {
        Self {
            id: id.into(),
            primitive,
            individual: None,
        }
    }

    pub fn with_individual(mut self, individual: impl Into<String>) -> Self {
        self.individual = Some(individual.into());
        self
    }

    pub fn kind(&self) -> PrimitiveKind {
        self.primitive.kind()
    }

    pub fn transformed(&self, t: &RigidTransform) -> GeometricElement {
        GeometricElement {
            id: self.id.clone(),
            primitive: self.primitive.transformed(t),
            individual: self.individual.clone(),
        }
    }
}

/// The element store `M` with its semantically relevant subset `M_s`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeometricSet {
    elements: Vec<GeometricElement>,
    index: IndexMap<String, usize>,
    semantic_ids: BTreeSet<String>,
}

impl GeometricSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_elements(
        elements: impl IntoIterator<Item = GeometricElement>,
    ) -> Result<Self, GeometryError> {
        let mut set = Self::new();
        for e in elements {
            set.push(e)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, element: GeometricElement) -> Result<(), GeometryError> {
        if self.index.contains_key(&element.id) {
            return Err(GeometryError::DuplicateId(element.id));
        }
        self.index.insert(element.id.clone(), self.elements.len());
        self.elements.push(element);
        Ok(())
    }

    pub fn mark_semantic(&mut self, id: &str) -> Result<(), GeometryError> {
        if !self.index.contains_key(id) {
            return Err(GeometryError::UnknownSemanticId(id.to_string()));
        }
        self.semantic_ids.insert(id.to_string());
        Ok(())
    }

    /// Links element `id` to a KB individual.
    pub fn set_individual(
        &mut self,
        id: &str,
        individual: impl Into<String>,
    ) -> Result<(), GeometryError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| GeometryError::UnknownSemanticId(id.to_string()))?;
        self.elements[i].individual = Some(individual.into());
        Ok(())
    }

    pub fn elements(&self) -> &[GeometricElement] {
        &self.elements
    }

    pub fn get(&self, id: &str) -> Option<&GeometricElement> {
        self.index.get(id).map(|&i| &self.elements[i])
    }

    pub fn semantic_ids(&self) -> &BTreeSet<String> {
        &self.semantic_ids
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> GeometricSet {
        GeometricSet {
            elements: self.elements.iter().map(|e| e.transformed(t)).collect(),
            index: self.index.clone(),
            semantic_ids: self.semantic_ids.clone(),
        }
    }

    /// Point elements for every cloud point, with content-derived ids.
    ///
    /// Ids encode the coordinates rounded to the micrometre, so the same
    /// physical point in two maps carries the same id while unrelated clouds
    /// share none. Coincident points get a `#n` suffix.
    pub fn from_cloud(cloud: &PointCloud) -> GeometricSet {
        let mut set = GeometricSet::new();
        for p in &cloud.points {
            let base = point_id(p);
            let mut id = base.clone();
            let mut n = 1;
            while set.index.contains_key(&id) {
                id = format!("{base}#{n}");
                n += 1;
            }
            set.push(GeometricElement::new(id, Primitive::Point(*p)))
                .expect("id made unique above");
        }
        set
    }
}

fn point_id(p: &Vector3<f64>) -> String {
    let q = |v: f64| (v * 1e6).round() as i64;
    format!("p:{}:{}:{}", q(p.x), q(p.y), q(p.z))
}

/// Raw 3D points with optional per-point colors and normals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            colors: None,
            normals: None,
        }
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Self {
        self.colors = Some(colors);
        self
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Self {
        self.normals = Some(normals);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let expected = self.points.len();
        if let Some(c) = &self.colors {
            if c.len() != expected {
                return Err(GeometryError::AttributeLength {
                    name: "colors",
                    got: c.len(),
                    expected,
                });
            }
        }
        if let Some(n) = &self.normals {
            if n.len() != expected {
                return Err(GeometryError::AttributeLength {
                    name: "normals",
                    got: n.len(),
                    expected,
                });
            }
        }
        Ok(())
    }

    /// Points mapped by `t`; normals rotated only; colors kept.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            colors: self.colors.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.apply_vector(n)).collect()),
        }
    }

    /// Appends `other`; attributes survive only if both sides carry them.
    pub fn extend(&mut self, other: &PointCloud) {
        let was_empty = self.points.is_empty();
        self.points.extend_from_slice(&other.points);
        self.colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
        self.normals = match (self.normals.take(), &other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
    }

    /// Centroid per occupied voxel of edge `voxel_size`; normals are
    /// re-normalized and colors averaged. A non-positive size returns the
    /// input unchanged. Output order follows first occupancy.
    pub fn voxel_downsample(&self, voxel_size: f64) -> PointCloud {
        if voxel_size <= 0.0 || self.points.is_empty() {
            return self.clone();
        }
        struct Acc {
            sum: Vector3<f64>,
            color: [u32; 3],
            normal: Vector3<f64>,
            n: u32,
        }
        let mut cells: IndexMap<(i64, i64, i64), Acc> = IndexMap::new();
        for (i, p) in self.points.iter().enumerate() {
            let key = (
                (p.x / voxel_size).floor() as i64,
                (p.y / voxel_size).floor() as i64,
                (p.z / voxel_size).floor() as i64,
            );
            let acc = cells.entry(key).or_insert(Acc {
                sum: Vector3::zeros(),
                color: [0; 3],
                normal: Vector3::zeros(),
                n: 0,
            });
            acc.sum += p;
            acc.n += 1;
            if let Some(c) = &self.colors {
                for k in 0..3 {
                    acc.color[k] += c[i][k] as u32;
                }
            }
            if let Some(ns) = &self.normals {
                acc.normal += ns[i];
            }
        }
        let mut out = PointCloud::new(Vec::with_capacity(cells.len()));
        let mut colors = self
            .colors
            .as_ref()
            .map(|_| Vec::with_capacity(cells.len()));
        let mut normals = self
            .normals
            .as_ref()
            .map(|_| Vec::with_capacity(cells.len()));
        for acc in cells.values() {
            out.points.push(acc.sum / acc.n as f64);
            if let Some(c) = colors.as_mut() {
                let avg = |k: usize| ((acc.color[k] as f64) / acc.n as f64).round() as u8;
                c.push([avg(0), avg(1), avg(2)]);
            }
            if let Some(ns) = normals.as_mut() {
                let n = acc
                    .normal
                    .try_normalize(1e-12)
                    .unwrap_or_else(Vector3::zeros);
                ns.push(n);
            }
        }
        out.colors = colors;
        out.normals = normals;
        out
    }
}

/// Oriented box annotating the geometry of one KB individual.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundingBox {
    pub id: String,
    pub class_name: String,
    pub individual: String,
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl BoundingBox {
    pub fn axis_aligned(
        id: impl Into<String>,
        class_name: impl Into<String>,
        individual: impl Into<String>,
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
    ) -> Self {
        Self {
            id: id.into(),
            class_name: class_name.into(),
            individual: individual.into(),
            center,
            half_extents,
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self
            .half_extents
            .iter()
            .any(|&h| !(h > 0.0) || !h.is_finite())
        {
            return Err(GeometryError::NonPositiveExtent(self.id.clone()));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(())
    }

    /// Box pose: box-frame coordinates into the map frame.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(self.orientation, self.center)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.orientation.inverse() * (p - self.center);
        (0..3).all(|k| local[k].abs() <= self.half_extents[k])
    }

    pub fn transformed(&self, t: &RigidTransform) -> BoundingBox {
        let pose = t.compose(&self.pose());
        BoundingBox {
            center: pose.translation,
            orientation: pose.rotation,
            ..self.clone()
        }
    }
}
