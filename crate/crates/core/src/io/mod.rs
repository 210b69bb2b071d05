//! Text formats for every dataset artifact and the dataset directory layout.
//!
//! Writers emit floats in shortest round-trip form, so `read(write(x)) == x`
//! exactly and `write(read(f)) == f` for files in canonical form.

mod acqlog;
mod boxes;
mod dataset;
mod distortion;
mod graph;
mod images;
mod kbfile;
mod ply;
mod tree;

use std::path::Path;

pub use acqlog::{format_log, parse_log, read_log, write_log};
pub use boxes::{format_boxes, parse_boxes, read_boxes, write_boxes};
pub use dataset::{
    fuse, read_node_clouds, Dataset, DatasetLock, BOXES_FILE, BOX_PREDICATES, FORMAT_VERSION,
    GRAPH_FILE, KB_FILE, MAP_FILE, META_FILE,
};
pub use distortion::{format_distortion, parse_distortion, read_distortion, write_distortion};
pub use graph::{format_graph, parse_graph, read_graph, write_graph};
pub use images::{depth_from_png, depth_to_png, read_depth_png, write_depth_png, write_rgb_png};
pub use kbfile::{format_kb, parse_kb, read_kb, write_kb};
pub use ply::{format_ply, parse_ply, read_ply, write_ply};
pub use tree::{format_tree, parse_tree, read_tree, write_tree};

/// A syntax or content error at a 1-based line.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}:\n{}", diagnostics_text(.diagnostics))]
    Diagnostics {
        path: String,
        diagnostics: Vec<ParseError>,
    },
    #[error("{path}: {message}")]
    Image { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("dataset {0} is locked by another writer")]
    Locked(String),
}

fn diagnostics_text(d: &[ParseError]) -> String {
    d.iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl IoError {
    pub fn is_parse(&self) -> bool {
        matches!(
            self,
            IoError::Parse { .. } | IoError::Diagnostics { .. } | IoError::Image { .. }
        )
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
    }
    std::fs::write(path, text).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn at(path: &Path) -> impl Fn(ParseError) -> IoError + '_ {
    move |source| IoError::Parse {
        path: path.display().to_string(),
        source,
    }
}

/// Lines with comments and surrounding whitespace removed, skipping blanks.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = match l.find('#') {
            Some(p) => &l[..p],
            None => l,
        };
        let l = l.trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

pub(crate) fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64, ParseError> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ParseError::new(line, format!("invalid {what} `{tok}`"))),
    }
}

pub(crate) fn parse_floats<const N: usize>(
    toks: &[&str],
    line: usize,
    what: &str,
) -> Result<[f64; N], ParseError> {
    if toks.len() != N {
        return Err(ParseError::new(
            line,
            format!("{what}: expected {N} numbers, got {}", toks.len()),
        ));
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(toks) {
        *o = parse_f64(t, line, what)?;
    }
    Ok(out)
}

pub(crate) fn parse_transform(
    toks: &[&str],
    line: usize,
) -> Result<crate::transform::RigidTransform, ParseError> {
    let v = parse_floats::<7>(toks, line, "transform")?;
    crate::transform::RigidTransform::from_components([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])
        .ok_or_else(|| ParseError::new(line, "degenerate quaternion"))
}

pub(crate) fn fmt_transform(t: &crate::transform::RigidTransform) -> String {
    t.to_components()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}
