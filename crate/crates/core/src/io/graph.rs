use std::path::Path;

use nalgebra::Matrix6;

use super::{
    at, content_lines, fmt_transform, parse_floats, parse_transform, read_text, write_text,
    IoError, ParseError,
};
use crate::mapping::PoseGraph;

/// `NODE id tx ty tz qx qy qz qw cloud` (cloud is `-` when absent) and
/// `EDGE from to tx ty tz qx qy qz qw` followed by the 21 upper-triangular
/// information entries in row-major order.
pub fn parse_graph(text: &str) -> Result<PoseGraph, ParseError> {
    let mut graph = PoseGraph::new();
    let mut edges = Vec::new();
    for (line, l) in content_lines(text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks[0] {
            "NODE" => {
                if toks.len() != 10 {
                    return Err(ParseError::new(
                        line,
                        format!("NODE: expected 10 fields, got {}", toks.len()),
                    ));
                }
                let id = parse_id(toks[1], line)?;
                let pose = parse_transform(&toks[2..9], line)?;
                let cloud = (toks[9] != "-").then(|| toks[9].to_string());
                graph
                    .add_node(id, pose, cloud)
                    .map_err(|e| ParseError::new(line, e.to_string()))?;
            }
            "EDGE" => {
                if toks.len() != 31 {
                    return Err(ParseError::new(
                        line,
                        format!("EDGE: expected 31 fields, got {}", toks.len()),
                    ));
                }
                let from = parse_id(toks[1], line)?;
                let to = parse_id(toks[2], line)?;
                let z = parse_transform(&toks[3..10], line)?;
                let upper = parse_floats::<21>(&toks[10..], line, "information")?;
                let mut info = Matrix6::zeros();
                let mut k = 0;
                for r in 0..6 {
                    for c in r..6 {
                        info[(r, c)] = upper[k];
                        info[(c, r)] = upper[k];
                        k += 1;
                    }
                }
                edges.push((line, from, to, z, info));
            }
            other => return Err(ParseError::new(line, format!("unknown record `{other}`"))),
        }
    }
    for (line, from, to, z, info) in edges {
        graph
            .add_edge(from, to, z, info)
            .map_err(|e| ParseError::new(line, e.to_string()))?;
    }
    Ok(graph)
}

fn parse_id(tok: &str, line: usize) -> Result<u32, ParseError> {
    tok.parse()
        .map_err(|_| ParseError::new(line, format!("invalid node id `{tok}`")))
}

pub fn format_graph(graph: &PoseGraph) -> String {
    let mut s = String::new();
    for (id, n) in &graph.nodes {
        s += &format!(
            "NODE {id} {} {}\n",
            fmt_transform(&n.pose),
            n.cloud.as_deref().unwrap_or("-")
        );
    }
    for e in &graph.edges {
        s += &format!("EDGE {} {} {}", e.from, e.to, fmt_transform(&e.measurement));
        for r in 0..6 {
            for c in r..6 {
                s += &format!(" {}", e.information[(r, c)]);
            }
        }
        s.push('\n');
    }
    s
}

pub fn read_graph(path: &Path) -> Result<PoseGraph, IoError> {
    parse_graph(&read_text(path)?).map_err(at(path))
}

pub fn write_graph(path: &Path, graph: &PoseGraph) -> Result<(), IoError> {
    write_text(path, &format_graph(graph))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::RigidTransform;
    use nalgebra::Vector3;

    fn sample() -> PoseGraph {
        let mut g = PoseGraph::new();
        g.add_node(
            0,
            RigidTransform::identity(),
            Some("clouds/node_0.ply".into()),
        )
        .unwrap();
        g.add_node(
            1,
            RigidTransform::from_axis_angle(Vector3::z(), 0.1, Vector3::new(1.0, 0.2, 0.0)),
            None,
        )
        .unwrap();
        let mut info = Matrix6::identity() * 250.0;
        info[(0, 1)] = 3.5;
        info[(1, 0)] = 3.5;
        g.add_edge(0, 1, RigidTransform::from_translation(1.0, 0.0, 0.0), info)
            .unwrap();
        g
    }

    #[test]
    fn round_trip_is_exact() {
        let g = sample();
        let text = format_graph(&g);
        let back = parse_graph(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(format_graph(&back), text);
    }

    #[test]
    fn dangling_edge_reports_its_line() {
        let mut text = format_graph(&sample());
        text = text.replace("EDGE 0 1", "EDGE 0 7");
        let e = parse_graph(&text).unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn unknown_record() {
        assert_eq!(parse_graph("\nVERTEX 1\n").unwrap_err().line, 2);
    }
}
