//! Reference frames and the static sensor transform tree.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::transform::RigidTransform;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameError {
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("frame `{0}` already has a parent")]
    DuplicateFrame(String),
    #[error("frame `{0}` would close a cycle")]
    Cycle(String),
    #[error("tree has more than one root: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("transform tree is empty")]
    Empty,
}

/// The named global frame `R` of a semantic map, optionally anchored in a parent frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFrame {
    pub name: String,
    pub parent: Option<(String, RigidTransform)>,
}

impl ReferenceFrame {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            parent: None,
        }
    }
}

/// Rooted tree of frames; each edge stores the child's pose in its parent.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformTree {
    root: String,
    edges: BTreeMap<String, (String, RigidTransform)>,
}

impl TransformTree {
    pub fn new(root: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            edges: BTreeMap::new(),
        }
    }

    /// Builds a tree from `(child, parent, offset)` triples in any order.
    pub fn from_edges(
        edges: impl IntoIterator<Item = (String, String, RigidTransform)>,
    ) -> Result<Self, FrameError> {
        let mut map = BTreeMap::new();
        for (child, parent, t) in edges {
            if map.insert(child.clone(), (parent, t)).is_some() {
                return Err(FrameError::DuplicateFrame(child));
            }
        }
        let children: BTreeSet<&String> = map.keys().collect();
        let roots: BTreeSet<String> = map
            .values()
            .map(|(p, _)| p)
            .filter(|p| !children.contains(p))
            .cloned()
            .collect();
        let root = match roots.len() {
            0 if map.is_empty() => return Err(FrameError::Empty),
            0 => {
                let any = map.keys().next().cloned().unwrap_or_default();
                return Err(FrameError::Cycle(any));
            }
            1 => roots.into_iter().next().unwrap(),
            _ => return Err(FrameError::MultipleRoots(roots.into_iter().collect())),
        };
        let tree = TransformTree { root, edges: map };
        for child in tree.edges.keys() {
            tree.chain_to_root(child)?;
        }
        Ok(tree)
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn contains(&self, frame: &str) -> bool {
        frame == self.root || self.edges.contains_key(frame)
    }

    pub fn frames(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.root.as_str()).chain(self.edges.keys().map(String::as_str))
    }

    /// `(child, parent, offset)` in child-name order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &RigidTransform)> {
        self.edges
            .iter()
            .map(|(c, (p, t))| (c.as_str(), p.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Attaches `child` under an existing `parent`.
    pub fn add(
        &mut self,
        child: impl Into<String>,
        parent: impl Into<String>,
        offset: RigidTransform,
    ) -> Result<(), FrameError> {
        let child = child.into();
        let parent = parent.into();
        if !self.contains(&parent) {
            return Err(FrameError::UnknownFrame(parent));
        }
        if self.contains(&child) {
            return Err(FrameError::DuplicateFrame(child));
        }
        self.edges.insert(child, (parent, offset));
        Ok(())
    }

    fn chain_to_root(&self, frame: &str) -> Result<Vec<&RigidTransform>, FrameError> {
        if !self.contains(frame) {
            return Err(FrameError::UnknownFrame(frame.to_string()));
        }
        let mut chain = Vec::new();
        let mut cur = frame;
        while cur != self.root {
            let (parent, t) = self
                .edges
                .get(cur)
                .ok_or_else(|| FrameError::UnknownFrame(cur.to_string()))?;
            chain.push(t);
            if chain.len() > self.edges.len() {
                return Err(FrameError::Cycle(frame.to_string()));
            }
            cur = parent;
        }
        Ok(chain)
    }

    /// Pose of `frame` in the root frame.
    pub fn pose_in_root(&self, frame: &str) -> Result<RigidTransform, FrameError> {
        let chain = self.chain_to_root(frame)?;
        Ok(chain
            .into_iter()
            .rev()
            .fold(RigidTransform::identity(), |acc, t| acc.compose(t)))
    }

    /// Pose of `to` expressed in `from`: maps `to` coordinates into `from` coordinates.
    pub fn resolve(&self, from: &str, to: &str) -> Result<RigidTransform, FrameError> {
        let a = self.pose_in_root(from)?;
        let b = self.pose_in_root(to)?;
        Ok(a.inverse().compose(&b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn t1() -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::z(), 0.3, Vector3::new(0.2, 0.0, 0.5))
    }
    fn t2() -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::x(), -0.4, Vector3::new(0.0, 0.1, 0.0))
    }

    #[test]
    fn resolve_self_is_identity() {
        let tree = TransformTree::new("base");
        assert_eq!(
            tree.resolve("base", "base").unwrap(),
            RigidTransform::identity()
        );
    }

    #[test]
    fn resolve_chain_matches_matrix_product() {
        let mut tree = TransformTree::new("base");
        tree.add("camA", "base", t1()).unwrap();
        tree.add("camB", "camA", t2()).unwrap();
        let got = tree.resolve("base", "camB").unwrap();
        let oracle = t1().to_matrix() * t2().to_matrix();
        assert!((got.to_matrix() - oracle).abs().max() < 1e-12);
        let back = tree.resolve("camB", "base").unwrap();
        let oracle_inv = oracle.try_inverse().unwrap();
        assert!((back.to_matrix() - oracle_inv).abs().max() < 1e-12);
    }

    #[test]
    fn unknown_frame_is_named() {
        let tree = TransformTree::new("base");
        assert_eq!(
            tree.resolve("base", "lidar").unwrap_err(),
            FrameError::UnknownFrame("lidar".into())
        );
    }

    #[test]
    fn from_edges_detects_shape_errors() {
        let id = RigidTransform::identity();
        let cyc = TransformTree::from_edges(vec![
            ("a".to_string(), "b".to_string(), id),
            ("b".to_string(), "a".to_string(), id),
        ]);
        assert!(matches!(cyc, Err(FrameError::Cycle(_))));
        let two = TransformTree::from_edges(vec![
            ("a".to_string(), "r1".to_string(), id),
            ("b".to_string(), "r2".to_string(), id),
        ]);
        assert!(matches!(two, Err(FrameError::MultipleRoots(_))));
        let ok =
            TransformTree::from_edges(vec![("cam".to_string(), "base".to_string(), id)]).unwrap();
        assert_eq!(ok.root(), "base");
    }
}
