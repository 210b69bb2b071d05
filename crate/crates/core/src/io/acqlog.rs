use std::path::Path;

use super::images::{read_depth_png, write_depth_png};
use super::{
    at, content_lines, fmt_transform, parse_f64, parse_floats, parse_transform, read_text,
    write_text, IoError, ParseError,
};
use crate::acquisition::{AcquisitionLog, Record, RecordKind};
use crate::kb::is_valid_identifier;
use crate::projection::{DepthImage, LaserConfig, PinholeIntrinsics};
use crate::transform::Pose2;

/// Parses the log text. Depth records get an empty placeholder image;
/// [`read_log`] loads the referenced PNG files.
///
/// Records: `INTRINSICS sensor fx fy cx cy w h near far`,
/// `SENSOR name tx ty tz qx qy qz qw`, `LASERCFG amin amax n maxr slab`,
/// `DEPTH t sensor path`, `ODOM t tx ty tz qx qy qz qw`, `ODOM2 t x y yaw`,
/// `LASER t r1 .. rn`.
pub fn parse_log(text: &str) -> Result<AcquisitionLog, ParseError> {
    let mut log = AcquisitionLog::default();
    let mut laser_lines = Vec::new();
    for (line, l) in content_lines(text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        let name = |i: usize| -> Result<String, ParseError> {
            let t = toks.get(i).copied().unwrap_or("");
            if is_valid_identifier(t) {
                Ok(t.to_string())
            } else {
                Err(ParseError::new(line, format!("invalid sensor name `{t}`")))
            }
        };
        let stamp = || parse_f64(toks.get(1).copied().unwrap_or(""), line, "timestamp");
        match toks[0] {
            "INTRINSICS" => {
                let v = parse_floats::<8>(toks.get(2..).unwrap_or_default(), line, "INTRINSICS")?;
                let dim = |x: f64| -> Result<u32, ParseError> {
                    if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                        Ok(x as u32)
                    } else {
                        Err(ParseError::new(
                            line,
                            "image size must be a positive integer",
                        ))
                    }
                };
                let k = PinholeIntrinsics {
                    fx: v[0],
                    fy: v[1],
                    cx: v[2],
                    cy: v[3],
                    width: dim(v[4])?,
                    height: dim(v[5])?,
                    near: v[6],
                    far: v[7],
                };
                if !(k.fx > 0.0 && k.fy > 0.0 && k.near >= 0.0 && k.far > k.near) {
                    return Err(ParseError::new(
                        line,
                        "focal lengths must be positive and near < far",
                    ));
                }
                log.intrinsics.insert(name(1)?, k);
            }
            "SENSOR" => {
                if toks.len() < 2 {
                    return Err(ParseError::new(line, "SENSOR: missing name"));
                }
                let t = parse_transform(&toks[2..], line)?;
                log.mounts.insert(name(1)?, t);
            }
            "LASERCFG" => {
                let v = parse_floats::<5>(&toks[1..], line, "LASERCFG")?;
                if !(v[2] >= 1.0 && v[2].fract() == 0.0 && v[1] > v[0] && v[3] > 0.0 && v[4] >= 0.0)
                {
                    return Err(ParseError::new(line, "invalid laser configuration"));
                }
                log.laser = Some(LaserConfig {
                    angle_min: v[0],
                    angle_max: v[1],
                    n_beams: v[2] as usize,
                    max_range: v[3],
                    slab_half_height: v[4],
                });
            }
            "DEPTH" => {
                if toks.len() != 4 {
                    return Err(ParseError::new(
                        line,
                        "DEPTH: expected `DEPTH t sensor path`",
                    ));
                }
                log.records.push(Record {
                    stamp: stamp()?,
                    kind: RecordKind::Depth {
                        sensor: name(2)?,
                        path: toks[3].to_string(),
                        image: DepthImage::zeros(0, 0),
                    },
                });
            }
            "ODOM" => {
                if toks.len() != 9 {
                    return Err(ParseError::new(
                        line,
                        "ODOM: expected a timestamp and 7 pose values",
                    ));
                }
                log.records.push(Record {
                    stamp: stamp()?,
                    kind: RecordKind::Odom(parse_transform(&toks[2..], line)?),
                });
            }
            "ODOM2" => {
                if toks.len() != 5 {
                    return Err(ParseError::new(line, "ODOM2: expected `ODOM2 t x y yaw`"));
                }
                let v = parse_floats::<3>(&toks[2..], line, "ODOM2")?;
                log.records.push(Record {
                    stamp: stamp()?,
                    kind: RecordKind::Odom(Pose2::new(v[0], v[1], v[2]).to_rigid()),
                });
            }
            "LASER" => {
                if toks.len() < 3 {
                    return Err(ParseError::new(
                        line,
                        "LASER: expected a timestamp and ranges",
                    ));
                }
                let ranges = toks[2..]
                    .iter()
                    .map(|t| parse_f64(t, line, "range"))
                    .collect::<Result<Vec<_>, _>>()?;
                laser_lines.push((line, ranges.len()));
                log.records.push(Record {
                    stamp: stamp()?,
                    kind: RecordKind::Laser(ranges),
                });
            }
            other => return Err(ParseError::new(line, format!("unknown record `{other}`"))),
        }
    }
    if let Some((line, n)) = laser_lines.first() {
        let cfg = log
            .laser
            .as_ref()
            .ok_or_else(|| ParseError::new(*line, "LASER record without LASERCFG"))?;
        if let Some((line, n)) = laser_lines.iter().find(|(_, n)| *n != cfg.n_beams) {
            return Err(ParseError::new(
                *line,
                format!("expected {} ranges, got {n}", cfg.n_beams),
            ));
        }
        let _ = n;
    }
    for r in &log.records {
        if let RecordKind::Depth { sensor, .. } = &r.kind {
            if !log.intrinsics.contains_key(sensor) {
                let line = content_lines(text)
                    .find(|(_, l)| {
                        l.starts_with("DEPTH") && l.split_whitespace().nth(2) == Some(sensor)
                    })
                    .map_or(0, |(n, _)| n);
                return Err(ParseError::new(
                    line,
                    format!("no INTRINSICS for sensor `{sensor}`"),
                ));
            }
        }
    }
    Ok(log)
}

pub fn format_log(log: &AcquisitionLog) -> String {
    let mut s = String::new();
    for (name, k) in &log.intrinsics {
        s += &format!(
            "INTRINSICS {name} {} {} {} {} {} {} {} {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height, k.near, k.far
        );
    }
    for (name, t) in &log.mounts {
        s += &format!("SENSOR {name} {}\n", fmt_transform(t));
    }
    if let Some(c) = &log.laser {
        s += &format!(
            "LASERCFG {} {} {} {} {}\n",
            c.angle_min, c.angle_max, c.n_beams, c.max_range, c.slab_half_height
        );
    }
    for r in &log.records {
        match &r.kind {
            RecordKind::Depth { sensor, path, .. } => {
                s += &format!("DEPTH {} {sensor} {path}\n", r.stamp)
            }
            RecordKind::Odom(t) => s += &format!("ODOM {} {}\n", r.stamp, fmt_transform(t)),
            RecordKind::Laser(ranges) => {
                s += &format!("LASER {}", r.stamp);
                for v in ranges {
                    s += &format!(" {v}");
                }
                s.push('\n');
            }
        }
    }
    s
}

/// Reads the log and every depth image it references, resolving image paths
/// against the log's directory.
pub fn read_log(path: &Path) -> Result<AcquisitionLog, IoError> {
    let mut log = parse_log(&read_text(path)?).map_err(at(path))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    for r in &mut log.records {
        if let RecordKind::Depth {
            sensor,
            path: rel,
            image,
        } = &mut r.kind
        {
            let img = read_depth_png(&dir.join(&*rel))?;
            let k = &log.intrinsics[sensor.as_str()];
            if img.width != k.width || img.height != k.height {
                return Err(IoError::Invalid(format!(
                    "{rel}: image is {}x{}, intrinsics for `{sensor}` say {}x{}",
                    img.width, img.height, k.width, k.height
                )));
            }
            *image = img;
        }
    }
    Ok(log)
}

/// Writes the log text to `path` and each depth image next to it.
pub fn write_log(path: &Path, log: &AcquisitionLog) -> Result<(), IoError> {
    let dir = path.parent().unwrap_or(Path::new(""));
    for r in &log.records {
        if let RecordKind::Depth {
            path: rel, image, ..
        } = &r.kind
        {
            write_depth_png(&dir.join(rel), image)?;
        }
    }
    write_text(path, &format_log(log))
}
