use std::path::Path;

use super::{
    at, content_lines, fmt_transform, parse_transform, read_text, write_text, IoError, ParseError,
};
use crate::frames::TransformTree;
use crate::kb::is_valid_identifier;

/// `root NAME` followed by `child parent tx ty tz qx qy qz qw` lines.
pub fn parse_tree(text: &str) -> Result<TransformTree, ParseError> {
    let mut root: Option<(usize, String)> = None;
    let mut edges = Vec::new();
    let mut last = 0;
    for (line, l) in content_lines(text) {
        last = line;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks[0] == "root" {
            if toks.len() != 2 || root.is_some() {
                return Err(ParseError::new(line, "expected a single `root NAME` line"));
            }
            root = Some((line, toks[1].to_string()));
            continue;
        }
        if toks.len() != 9 {
            return Err(ParseError::new(
                line,
                format!("expected 9 fields, got {}", toks.len()),
            ));
        }
        for name in &toks[..2] {
            if !is_valid_identifier(name) {
                return Err(ParseError::new(
                    line,
                    format!("invalid frame name `{name}`"),
                ));
            }
        }
        edges.push((
            toks[0].to_string(),
            toks[1].to_string(),
            parse_transform(&toks[2..], line)?,
        ));
    }
    if edges.is_empty() {
        return match root {
            Some((_, r)) => Ok(TransformTree::new(r)),
            None => Err(ParseError::new(last.max(1), "empty transform tree")),
        };
    }
    let tree =
        TransformTree::from_edges(edges).map_err(|e| ParseError::new(last, e.to_string()))?;
    if let Some((line, r)) = root {
        if r != tree.root() {
            return Err(ParseError::new(
                line,
                format!(
                    "declared root `{r}` but tree is rooted at `{}`",
                    tree.root()
                ),
            ));
        }
    }
    Ok(tree)
}

pub fn format_tree(tree: &TransformTree) -> String {
    let mut s = format!("root {}\n", tree.root());
    for (c, p, t) in tree.edges() {
        s += &format!("{c} {p} {}\n", fmt_transform(t));
    }
    s
}

pub fn read_tree(path: &Path) -> Result<TransformTree, IoError> {
    parse_tree(&read_text(path)?).map_err(at(path))
}

pub fn write_tree(path: &Path, tree: &TransformTree) -> Result<(), IoError> {
    write_text(path, &format_tree(tree))
}
