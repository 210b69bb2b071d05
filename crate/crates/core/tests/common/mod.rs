#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use std::path::{Path, PathBuf};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// Recursive copy of a fixture directory into `dst`.
pub fn copy_dir(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for e in std::fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        let to = dst.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &to);
        } else {
            std::fs::copy(e.path(), to).unwrap();
        }
    }
}

const KEYWORDS: &[&str] = &[
    "class",
    "individual",
    "function-like",
    "spatial",
    "roles",
    "is-a",
    "instance-of",
    "NODE",
    "EDGE",
    "root",
    "size",
    "grid",
    "levels",
    "INTRINSICS",
    "SENSOR",
    "LASERCFG",
    "DEPTH",
    "ODOM",
    "ODOM2",
    "LASER",
    "ply",
    "format",
    "ascii",
    "1.0",
    "element",
    "vertex",
    "face",
    "property",
    "float",
    "double",
    "uchar",
    "list",
    "end_header",
    "x",
    "y",
    "z",
    "red",
    "#",
];

const PIECES: &[&str] = &[
    "(",
    ")",
    ",",
    ".",
    "\"",
    "\\",
    "-",
    "nan",
    "inf",
    "-inf",
    "1e308",
    "1e999",
    "-0",
    "0",
    "1",
    "2",
    "3",
    "7",
    "4294967296",
    "18446744073709551616",
    "0.5",
    "-1",
    "A",
    "b1",
    "Thing",
    "\n",
    " ",
    "\t",
    "\u{00e9}",
    "\u{1F600}",
    "%",
    ";",
];

fn token(rng: &mut impl Rng) -> String {
    match rng.gen_range(0..4) {
        0 => KEYWORDS.choose(rng).unwrap().to_string(),
        1 => PIECES.choose(rng).unwrap().to_string(),
        2 => format!("{}", rng.gen_range(-1e6..1e6f64)),
        _ => format!("{}", rng.gen_range(-3i64..40)),
    }
}

/// Line-structured noise built from format keywords, numbers and
/// punctuation, occasionally spliced into a real fixture. Capped at 64 KiB.
pub fn fuzz_case(rng: &mut impl Rng, seeds: &[String]) -> String {
    let mut s = if rng.gen_bool(0.3) {
        seeds.choose(rng).cloned().unwrap_or_default()
    } else {
        String::new()
    };
    let lines = if rng.gen_bool(0.5) {
        rng.gen_range(0..3)
    } else {
        rng.gen_range(0..30)
    };
    for _ in 0..lines {
        let mut line = String::new();
        if rng.gen_bool(0.6) {
            line.push_str(KEYWORDS.choose(rng).unwrap());
            line.push(' ');
        }
        let n = if rng.gen_bool(0.5) {
            rng.gen_range(0..4)
        } else {
            rng.gen_range(0..34)
        };
        for _ in 0..n {
            line.push_str(&token(rng));
            if rng.gen_bool(0.7) {
                line.push(' ');
            }
        }
        line.push('\n');
        if s.is_empty() || rng.gen_bool(0.5) {
            s.push_str(&line);
        } else {
            let mut at = rng.gen_range(0..=s.len());
            while !s.is_char_boundary(at) {
                at -= 1;
            }
            s.insert_str(at, &line);
        }
    }
    if s.len() > 64 * 1024 {
        let mut end = 64 * 1024;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        s.truncate(end);
    }
    s
}

/// Runs every text parser on `s`; a panic propagates to the caller.
pub fn parse_all(s: &str) {
    use semmap::io::*;
    let _ = parse_kb(s);
    let _ = parse_ply(s);
    let _ = parse_boxes(s);
    let _ = parse_graph(s);
    let _ = parse_tree(s);
    let _ = parse_distortion(s);
    let _ = parse_log(s);
}

pub fn fuzz_seeds() -> Vec<String> {
    [
        "mall.kb",
        "points.ply",
        "square_loop.pg",
        "boxes.ann",
        "table_chair_gt/ontology.kb",
    ]
    .iter()
    .map(|f| text(f))
    .collect()
}

/// Floor and two walls meeting at the origin, sampled on a grid.
pub fn three_planes(extent: f64, spacing: f64) -> semmap::PointCloud {
    use nalgebra::Vector3;
    let n = (extent / spacing).round() as usize;
    let mut pts = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            let (a, b) = (i as f64 * spacing, j as f64 * spacing);
            pts.push(Vector3::new(a, b, 0.0));
            if i > 0 {
                pts.push(Vector3::new(0.0, a, b));
            }
            if j > 0 && i > 0 {
                pts.push(Vector3::new(a, 0.0, b));
            }
        }
    }
    semmap::PointCloud::new(pts)
}

/// Writes a fresh dataset directory holding only `meta` and the given graph.
pub fn graph_dataset(dir: &Path, graph: &semmap::mapping::PoseGraph) {
    let mut ds = semmap::io::Dataset::new(dir);
    ds.graph = Some(graph.clone());
    ds.save().unwrap();
}

/// Random acyclic KB: `is-a` only from lower to higher class index, so any
/// two KBs from this generator over the same names stay acyclic.
pub fn random_kb(
    rng: &mut impl Rng,
    max_classes: usize,
    max_individuals: usize,
    max_atoms: usize,
) -> semmap::KnowledgeBase {
    use semmap::kb::{Atom, THING};
    let nc = rng.gen_range(1..=max_classes);
    let ni = rng.gen_range(0..=max_individuals);
    let mut kb = semmap::KnowledgeBase::new();
    for c in 0..nc {
        kb.declare_class(format!("C{c}")).unwrap();
    }
    for i in 0..ni {
        kb.declare_individual(format!("x{i}")).unwrap();
    }
    let n_atoms = rng.gen_range(0..=max_atoms);
    for _ in 0..n_atoms {
        let atom = if ni == 0 || rng.gen_bool(0.5) {
            let a = rng.gen_range(0..nc);
            let b = rng.gen_range(a..=nc);
            if b == nc {
                Atom::is_a(format!("C{a}"), THING)
            } else if a == b {
                continue;
            } else {
                Atom::is_a(format!("C{a}"), format!("C{b}"))
            }
        } else {
            Atom::instance_of(
                format!("x{}", rng.gen_range(0..ni)),
                format!("C{}", rng.gen_range(0..nc)),
            )
        };
        kb.assert(atom).unwrap();
    }
    kb
}

/// Copy of `kb` with some user atoms dropped and some random ones added.
pub fn perturb_kb(
    rng: &mut impl Rng,
    kb: &semmap::KnowledgeBase,
    max_atoms: usize,
) -> semmap::KnowledgeBase {
    let mut out = kb.clone();
    let user: Vec<_> = kb
        .atoms()
        .iter()
        .filter(|a| !semmap::kb::is_builtin_atom(a))
        .cloned()
        .collect();
    for a in &user {
        if rng.gen_bool(0.3) {
            out.retract(a);
        }
    }
    let extra = random_kb(
        rng,
        kb.classes().len().saturating_sub(5).max(1),
        kb.individuals().len(),
        4,
    );
    for c in extra.classes() {
        let _ = out.declare_class(c.clone());
    }
    for i in extra.individuals() {
        let _ = out.declare_individual(i.clone());
    }
    for a in extra.atoms() {
        let n_user = out
            .atoms()
            .iter()
            .filter(|a| !semmap::kb::is_builtin_atom(a))
            .count();
        if n_user < max_atoms {
            out.assert(a.clone()).unwrap();
        }
    }
    out
}

/// Closure by naive rule application until nothing changes.
pub fn naive_closure(
    atoms: &std::collections::BTreeSet<semmap::Atom>,
    classes: &std::collections::BTreeSet<String>,
) -> std::collections::BTreeSet<semmap::Atom> {
    use semmap::kb::{Atom, INSTANCE_OF, IS_A};
    let mut s = atoms.clone();
    for c in classes {
        s.insert(Atom::is_a(c.as_str(), c.as_str()));
    }
    loop {
        let pairs = |p: &str| -> Vec<(String, String)> {
            s.iter()
                .filter(|a| a.predicate == p)
                .map(|a| (a.args[0].to_string(), a.args[1].to_string()))
                .collect()
        };
        let isa = pairs(IS_A);
        let inst = pairs(INSTANCE_OF);
        let mut new = Vec::new();
        for (a, b) in &isa {
            for (c, d) in &isa {
                if b == c && a != d {
                    new.push(Atom::is_a(a.as_str(), d.as_str()));
                }
            }
            for (x, k) in &inst {
                if k == a {
                    new.push(Atom::instance_of(x.as_str(), b.as_str()));
                }
            }
        }
        let before = s.len();
        s.extend(new);
        if s.len() == before {
            return s;
        }
    }
}
