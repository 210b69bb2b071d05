use std::path::Path;

use nalgebra::Vector3;

use super::{at, read_text, write_text, IoError, ParseError};
use crate::geometry::PointCloud;

#[derive(Clone, Copy, PartialEq)]
enum Field {
    X,
    Y,
    Z,
    Red,
    Green,
    Blue,
    Nx,
    Ny,
    Nz,
    Other,
}

fn field(name: &str) -> Field {
    match name {
        "x" => Field::X,
        "y" => Field::Y,
        "z" => Field::Z,
        "red" | "r" => Field::Red,
        "green" | "g" => Field::Green,
        "blue" | "b" => Field::Blue,
        "nx" => Field::Nx,
        "ny" => Field::Ny,
        "nz" => Field::Nz,
        _ => Field::Other,
    }
}

const SCALAR_TYPES: [&str; 16] = [
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16",
    "uint16", "int32", "uint32", "float32", "float64",
];

/// ASCII PLY with a `vertex` element; other elements are skipped.
pub fn parse_ply(text: &str) -> Result<PointCloud, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(ParseError::new(1, "missing `ply` magic")),
    }
    // (name, count, per-element property fields; None for list properties)
    let mut elements: Vec<(String, usize, Vec<Option<Field>>)> = Vec::new();
    let mut format_seen = false;
    let mut header_end = None;
    for (n, raw) in lines.by_ref() {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => format_seen = true,
            ["format", other, ..] => {
                return Err(ParseError::new(
                    n,
                    format!("unsupported format `{other}` (ASCII only)"),
                ))
            }
            ["element", name, count] => {
                let count = count
                    .parse::<usize>()
                    .map_err(|_| ParseError::new(n, format!("invalid element count `{count}`")))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", _, _, _] => match elements.last_mut() {
                Some(e) => e.2.push(None),
                None => return Err(ParseError::new(n, "property before any element")),
            },
            ["property", ty, name] => {
                if !SCALAR_TYPES.contains(ty) {
                    return Err(ParseError::new(n, format!("unknown property type `{ty}`")));
                }
                match elements.last_mut() {
                    Some(e) => e.2.push(Some(field(name))),
                    None => return Err(ParseError::new(n, "property before any element")),
                }
            }
            ["end_header"] => {
                header_end = Some(n);
                break;
            }
            _ => {
                return Err(ParseError::new(
                    n,
                    format!("malformed header line `{}`", raw.trim()),
                ))
            }
        }
    }
    let Some(header_end) = header_end else {
        return Err(ParseError::new(
            text.lines().count().max(1),
            "missing `end_header`",
        ));
    };
    if !format_seen {
        return Err(ParseError::new(header_end, "missing `format ascii 1.0`"));
    }

    let mut points = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut normals = Vec::new();
    let mut has_color = false;
    let mut has_normal = false;
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for (name, count, props) in &elements {
        let is_vertex = name == "vertex";
        if is_vertex {
            let has = |f: Field| props.contains(&Some(f));
            if !(has(Field::X) && has(Field::Y) && has(Field::Z)) {
                return Err(ParseError::new(
                    header_end,
                    "vertex element lacks x, y or z",
                ));
            }
            has_color = has(Field::Red) && has(Field::Green) && has(Field::Blue);
            has_normal = has(Field::Nx) && has(Field::Ny) && has(Field::Nz);
        }
        for _ in 0..*count {
            let Some((n, l)) = body.next() else {
                return Err(ParseError::new(
                    text.lines().count(),
                    format!("file ends before {count} `{name}` entries"),
                ));
            };
            if !is_vertex {
                continue;
            }
            let toks: Vec<&str> = l.split_whitespace().collect();
            if props.iter().any(Option::is_none) || toks.len() != props.len() {
                return Err(ParseError::new(
                    n,
                    format!("expected {} values, got {}", props.len(), toks.len()),
                ));
            }
            let mut p = Vector3::zeros();
            let mut c = [0u8; 3];
            let mut nrm = Vector3::zeros();
            for (tok, f) in toks.iter().zip(props) {
                let f = f.expect("checked above");
                match f {
                    Field::Red | Field::Green | Field::Blue => {
                        let v: u8 = tok
                            .parse()
                            .map_err(|_| ParseError::new(n, format!("invalid color `{tok}`")))?;
                        c[match f {
                            Field::Red => 0,
                            Field::Green => 1,
                            _ => 2,
                        }] = v;
                    }
                    Field::Other => {
                        tok.parse::<f64>()
                            .map_err(|_| ParseError::new(n, format!("invalid value `{tok}`")))?;
                    }
                    _ => {
                        let v = super::parse_f64(tok, n, "coordinate")?;
                        match f {
                            Field::X => p.x = v,
                            Field::Y => p.y = v,
                            Field::Z => p.z = v,
                            Field::Nx => nrm.x = v,
                            Field::Ny => nrm.y = v,
                            _ => nrm.z = v,
                        }
                    }
                }
            }
            points.push(p);
            colors.push(c);
            normals.push(nrm);
        }
    }
    if let Some((n, _)) = body.next() {
        return Err(ParseError::new(n, "unexpected data after the last element"));
    }
    Ok(PointCloud {
        points,
        colors: has_color.then_some(colors),
        normals: has_normal.then_some(normals),
    })
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut s = String::from("ply\nformat ascii 1.0\n");
    s += &format!("element vertex {}\n", cloud.len());
    s += "property double x\nproperty double y\nproperty double z\n";
    let colors = cloud.colors.as_ref().filter(|c| c.len() == cloud.len());
    let normals = cloud.normals.as_ref().filter(|n| n.len() == cloud.len());
    if colors.is_some() {
        s += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    if normals.is_some() {
        s += "property double nx\nproperty double ny\nproperty double nz\n";
    }
    s += "end_header\n";
    for (i, p) in cloud.points.iter().enumerate() {
        s += &format!("{} {} {}", p.x, p.y, p.z);
        if let Some(c) = colors {
            s += &format!(" {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        if let Some(n) = normals {
            s += &format!(" {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        s.push('\n');
    }
    s
}

pub fn read_ply(path: &Path) -> Result<PointCloud, IoError> {
    parse_ply(&read_text(path)?).map_err(at(path))
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_text(path, &format_ply(cloud))
}
