use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};

use super::{at, content_lines, parse_floats, read_text, write_text, IoError, ParseError};
use crate::geometry::BoundingBox;
use crate::kb::is_valid_identifier;

/// One box per line: `id class individual cx cy cz hx hy hz qx qy qz qw`.
pub fn parse_boxes(text: &str) -> Result<Vec<BoundingBox>, ParseError> {
    let mut out: Vec<BoundingBox> = Vec::new();
    for (line, l) in content_lines(text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 13 {
            return Err(ParseError::new(
                line,
                format!("expected 13 fields, got {}", toks.len()),
            ));
        }
        for (name, what) in toks[..3].iter().zip(["box id", "class", "individual"]) {
            if !is_valid_identifier(name) {
                return Err(ParseError::new(line, format!("invalid {what} `{name}`")));
            }
        }
        if out.iter().any(|b| b.id == toks[0]) {
            return Err(ParseError::new(
                line,
                format!("duplicate box id `{}`", toks[0]),
            ));
        }
        let v = parse_floats::<10>(&toks[3..], line, "box")?;
        let pose = super::parse_transform(
            &[
                toks[3], toks[4], toks[5], toks[9], toks[10], toks[11], toks[12],
            ],
            line,
        )?;
        let b = BoundingBox {
            id: toks[0].to_string(),
            class_name: toks[1].to_string(),
            individual: toks[2].to_string(),
            center: pose.translation,
            half_extents: Vector3::new(v[3], v[4], v[5]),
            orientation: pose.rotation,
        };
        b.validate()
            .map_err(|e| ParseError::new(line, e.to_string()))?;
        out.push(b);
    }
    Ok(out)
}

pub fn format_boxes(boxes: &[BoundingBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let q: &UnitQuaternion<f64> = &b.orientation;
        let q = q.quaternion();
        s += &format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {}\n",
            b.id,
            b.class_name,
            b.individual,
            b.center.x,
            b.center.y,
            b.center.z,
            b.half_extents.x,
            b.half_extents.y,
            b.half_extents.z,
            q.i,
            q.j,
            q.k,
            q.w
        );
    }
    s
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoundingBox>, IoError> {
    parse_boxes(&read_text(path)?).map_err(at(path))
}

pub fn write_boxes(path: &Path, boxes: &[BoundingBox]) -> Result<(), IoError> {
    write_text(path, &format_boxes(boxes))
}
