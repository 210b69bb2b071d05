use std::path::Path;

use super::{at, content_lines, parse_f64, read_text, write_text, IoError, ParseError};
use crate::calibration::DepthDistortionModel;

/// Header lines `size W H`, `grid GW GH`, `levels z1 z2 ...`, then for each
/// level GH rows of GW multipliers.
pub fn parse_distortion(text: &str) -> Result<DepthDistortionModel, ParseError> {
    let mut lines = content_lines(text);
    let mut header = |key: &str| -> Result<(usize, Vec<String>), ParseError> {
        let (line, l) = lines
            .next()
            .ok_or_else(|| ParseError::new(0, format!("missing `{key}` line")))?;
        let mut toks = l.split_whitespace();
        if toks.next() != Some(key) {
            return Err(ParseError::new(line, format!("expected `{key}`")));
        }
        Ok((line, toks.map(str::to_string).collect()))
    };
    let dims = |line: usize, v: &[String]| -> Result<(usize, usize), ParseError> {
        match v {
            [a, b] => match (a.parse::<usize>(), b.parse::<usize>()) {
                (Ok(a), Ok(b)) if a > 0 && b > 0 => Ok((a, b)),
                _ => Err(ParseError::new(line, "expected two positive integers")),
            },
            _ => Err(ParseError::new(line, "expected two positive integers")),
        }
    };
    let (l, v) = header("size")?;
    let (w, h) = dims(l, &v)?;
    let (l, v) = header("grid")?;
    let (gw, gh) = dims(l, &v)?;
    let (l, v) = header("levels")?;
    let levels = v
        .iter()
        .map(|t| parse_f64(t, l, "depth level"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut multipliers = Vec::with_capacity(levels.len() * gw * gh);
    let mut last = l;
    for (line, row) in lines {
        last = line;
        let vals = row
            .split_whitespace()
            .map(|t| parse_f64(t, line, "multiplier"))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != gw {
            return Err(ParseError::new(
                line,
                format!("expected {gw} multipliers, got {}", vals.len()),
            ));
        }
        multipliers.extend(vals);
    }
    let model = DepthDistortionModel {
        image_width: w as u32,
        image_height: h as u32,
        grid_w: gw,
        grid_h: gh,
        levels,
        multipliers,
    };
    model
        .validate()
        .map_err(|e| ParseError::new(last, e.to_string()))?;
    Ok(model)
}

pub fn format_distortion(m: &DepthDistortionModel) -> String {
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = format!(
        "size {} {}\ngrid {} {}\nlevels {}\n",
        m.image_width,
        m.image_height,
        m.grid_w,
        m.grid_h,
        join(&m.levels)
    );
    for (i, row) in m.multipliers.chunks(m.grid_w).enumerate() {
        if i % m.grid_h == 0 {
            s += &format!("# level {}\n", m.levels[i / m.grid_h]);
        }
        s += &join(row);
        s.push('\n');
    }
    s
}

pub fn read_distortion(path: &Path) -> Result<DepthDistortionModel, IoError> {
    parse_distortion(&read_text(path)?).map_err(at(path))
}

pub fn write_distortion(path: &Path, m: &DepthDistortionModel) -> Result<(), IoError> {
    write_text(path, &format_distortion(m))
}
