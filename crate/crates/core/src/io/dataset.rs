use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use super::{
    read_boxes, read_graph, read_kb, read_ply, read_text, write_boxes, write_graph, write_kb,
    write_ply, write_text, IoError,
};
use crate::frames::ReferenceFrame;
use crate::geometry::{BoundingBox, GeometricSet, PointCloud};
use crate::kb::{Atom, KbError, KnowledgeBase, Term};
use crate::map::SemanticMap;
use crate::mapping::PoseGraph;

pub const FORMAT_VERSION: u32 = 1;

pub const MAP_FILE: &str = "map.ply";
pub const GRAPH_FILE: &str = "graph.pg";
pub const BOXES_FILE: &str = "boxes.ann";
pub const KB_FILE: &str = "ontology.kb";
pub const META_FILE: &str = "meta";
const LOCK_FILE: &str = ".lock";

/// Predicates written by [`fuse`].
pub const BOX_PREDICATES: [&str; 3] = ["hasPosition", "hasSize", "hasShape"];

/// A dataset directory. Every artifact is optional except `meta`, which
/// carries the format version.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dir: PathBuf,
    pub meta: BTreeMap<String, String>,
    pub cloud: Option<PointCloud>,
    pub graph: Option<PoseGraph>,
    pub boxes: Vec<BoundingBox>,
    pub kb: KnowledgeBase,
}

impl Dataset {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("format".to_string(), FORMAT_VERSION.to_string());
        meta.insert("frame".to_string(), "map".to_string());
        Self {
            dir: dir.into(),
            meta,
            cloud: None,
            graph: None,
            boxes: Vec::new(),
            kb: KnowledgeBase::new(),
        }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, IoError> {
        let dir = dir.into();
        let meta_path = dir.join(META_FILE);
        let meta = parse_meta(&read_text(&meta_path)?).map_err(super::at(&meta_path))?;
        match meta.get("format").map(String::as_str) {
            Some(v) if v == FORMAT_VERSION.to_string() => {}
            Some(v) => {
                return Err(IoError::Invalid(format!(
                    "{}: unsupported format version {v}",
                    dir.display()
                )))
            }
            None => {
                return Err(IoError::Invalid(format!(
                    "{}: meta has no format version",
                    meta_path.display()
                )))
            }
        }
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        let cloud = opt(MAP_FILE).map(|p| read_ply(&p)).transpose()?;
        let graph = opt(GRAPH_FILE).map(|p| read_graph(&p)).transpose()?;
        let boxes = opt(BOXES_FILE)
            .map(|p| read_boxes(&p))
            .transpose()?
            .unwrap_or_default();
        let kb = opt(KB_FILE)
            .map(|p| read_kb(&p))
            .transpose()?
            .unwrap_or_default();
        Ok(Self {
            dir,
            meta,
            cloud,
            graph,
            boxes,
            kb,
        })
    }

    /// Writes every artifact; absent optional ones are not touched.
    pub fn save(&self) -> Result<(), IoError> {
        write_text(&self.dir.join(META_FILE), &format_meta(&self.meta))?;
        if let Some(c) = &self.cloud {
            write_ply(&self.dir.join(MAP_FILE), c)?;
        }
        if let Some(g) = &self.graph {
            write_graph(&self.dir.join(GRAPH_FILE), g)?;
        }
        write_boxes(&self.dir.join(BOXES_FILE), &self.boxes)?;
        write_kb(&self.dir.join(KB_FILE), &self.kb)
    }

    pub fn frame_name(&self) -> &str {
        self.meta.get("frame").map_or("map", String::as_str)
    }

    /// The map as stored: one point element per cloud point, with points
    /// inside an annotation box marked semantic and linked to the box's
    /// individual. The knowledge base is used as is.
    pub fn semantic_map(&self) -> SemanticMap {
        let mut geometry = GeometricSet::new();
        if let Some(cloud) = &self.cloud {
            geometry = GeometricSet::from_cloud(cloud);
            let hits: Vec<(String, String)> = geometry
                .elements()
                .iter()
                .zip(&cloud.points)
                .filter_map(|(e, p)| {
                    self.boxes
                        .iter()
                        .find(|b| b.contains(p))
                        .map(|b| (e.id.clone(), b.individual.clone()))
                })
                .collect();
            for (id, ind) in hits {
                geometry.mark_semantic(&id).expect("id from this set");
                geometry.set_individual(&id, ind).expect("id from this set");
            }
        }
        let mut map = SemanticMap::new(
            ReferenceFrame::new(self.frame_name()),
            geometry,
            self.kb.clone(),
        );
        map.cloud = self.cloud.clone();
        map.boxes = self.boxes.clone();
        map
    }

    pub fn node_clouds(&self) -> Result<BTreeMap<u32, PointCloud>, IoError> {
        match &self.graph {
            Some(g) => read_node_clouds(&self.dir, g),
            None => Ok(BTreeMap::new()),
        }
    }
}

fn parse_meta(text: &str) -> Result<BTreeMap<String, String>, super::ParseError> {
    let mut out = BTreeMap::new();
    for (line, l) in super::content_lines(text) {
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| super::ParseError::new(line, "expected key=value"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn format_meta(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Loads the cloud of every graph node that references one.
pub fn read_node_clouds(
    dir: &Path,
    graph: &PoseGraph,
) -> Result<BTreeMap<u32, PointCloud>, IoError> {
    graph
        .nodes
        .iter()
        .filter_map(|(id, n)| n.cloud.as_ref().map(|c| (*id, c)))
        .map(|(id, c)| Ok((id, read_ply(&dir.join(c))?)))
        .collect()
}

/// Writes the box annotations into the knowledge base as position,
/// half-size and shape facts, replacing any previous ones. Every box
/// individual must already be declared.
pub fn fuse(kb: &mut KnowledgeBase, boxes: &[BoundingBox]) -> Result<(), KbError> {
    if let Some(b) = boxes.iter().find(|b| !kb.is_individual(&b.individual)) {
        return Err(KbError::NotAnIndividual(b.individual.clone()));
    }
    let mut next = kb.clone();
    for p in BOX_PREDICATES {
        next.mark_spatial(p)?;
        next.mark_function_like(p)?;
    }
    next.retract_where(|a| BOX_PREDICATES.contains(&a.predicate.as_str()));
    for b in boxes {
        let ind = Term::name(b.individual.clone());
        let args = |v: &nalgebra::Vector3<f64>| -> Vec<Term> {
            std::iter::once(ind.clone())
                .chain(v.iter().map(|&x| Term::number(x)))
                .collect()
        };
        next.assert(Atom::new("hasPosition", args(&b.center)))?;
        next.assert(Atom::new("hasSize", args(&b.half_extents)))?;
        next.assert(Atom::new("hasShape", vec![ind, Term::text("box")]))?;
    }
    *kb = next;
    Ok(())
}

/// Exclusive writer lock on a dataset directory, released on drop.
#[derive(Debug)]
pub struct DatasetLock {
    path: PathBuf,
}

impl DatasetLock {
    pub fn acquire(dir: &Path) -> Result<Self, IoError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(IoError::Locked(dir.display().to_string()))
            }
            Err(source) => Err(IoError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }
}

impl Drop for DatasetLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
