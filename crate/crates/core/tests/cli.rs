use std::path::Path;
use std::process::{Command, Output};

use semmap::io::{self, Dataset};
use semmap::mapping::{default_information, PoseGraph};
use semmap::projection::DepthImage;
use semmap::RigidTransform;
use serde_json::Value;
use tempfile::tempdir;

mod common;
use common::{copy_dir, fixture};

fn run(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semmap"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn gt_copy(dir: &Path) -> std::path::PathBuf {
    let d = dir.join("gt");
    copy_dir(&fixture("table_chair_gt"), &d);
    d
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&[&"--help"])), 0);
    assert_eq!(code(&run(&[&"--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&[&"evaluate", &"only-one"])), 1);
    assert_eq!(code(&run(&[&"frobnicate"])), 1);
    let gt = fixture("table_chair_gt");
    let o = run(&[&"evaluate", &gt, &gt, &"--weights", &"1", &"-1", &"1", &"1"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        code(&run(&[&"evaluate", &gt, &gt, &"--align", &"1 2 3"])),
        1
    );
}

#[test]
fn io_and_parse_errors_exit_two() {
    let tmp = tempdir().unwrap();
    let o = run(&[&"validate", &tmp.path().join("nope")]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());

    let d = gt_copy(tmp.path());
    std::fs::write(d.join("ontology.kb"), "class Table\n").unwrap();
    assert_eq!(code(&run(&[&"validate", &d])), 2);
}

#[test]
fn evaluate_self_is_zero() {
    let gt = fixture("table_chair_gt");
    let o = run(&[&"evaluate", &gt, &gt]);
    assert_eq!(code(&o), 0);
    let r = stdout_json(&o);
    for k in ["geometric_error", "spatial_distance", "scalar"] {
        assert_eq!(r[k].as_f64(), Some(0.0), "{k}");
    }
    for k in ["delta_count", "gamma_count", "unmatched_1", "unmatched_gt"] {
        assert_eq!(r[k].as_u64(), Some(0), "{k}");
    }
}

#[test]
fn evaluate_reports_missing_instance() {
    let tmp = tempdir().unwrap();
    let d = gt_copy(tmp.path());
    let kb = std::fs::read_to_string(d.join("ontology.kb")).unwrap();
    std::fs::write(
        d.join("ontology.kb"),
        kb.replace("instance-of(table1, Table).\n", ""),
    )
    .unwrap();
    let o = run(&[&"evaluate", &d, &fixture("table_chair_gt")]);
    assert_eq!(code(&o), 0);
    let r = stdout_json(&o);
    assert_eq!(r["delta_count"], 1);
    assert_eq!(r["gamma_count"], 0);
}

#[test]
fn validate_exit_codes() {
    assert_eq!(code(&run(&[&"validate", &fixture("table_chair_gt")])), 0);
    let o = run(&[&"validate", &fixture("missing_ps")]);
    assert_eq!(code(&o), 3);
    let v = stdout_json(&o);
    assert!(v["violations"]
        .as_array()
        .unwrap()
        .iter()
        .any(|x| x["kind"] == "empty-spatial-subset"));
}

#[test]
fn fuse_repairs_missing_spatial_subset() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("m");
    copy_dir(&fixture("missing_ps"), &d);
    assert_eq!(code(&run(&[&"fuse", &d])), 0);
    assert_eq!(code(&run(&[&"validate", &d])), 0);
    let kb = io::read_kb(&d.join("ontology.kb")).unwrap();
    assert_eq!(kb.spatial_atoms().count(), 3);
    assert!(!d.join(".lock").exists());
}

#[test]
fn fuse_refuses_locked_dataset() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("m");
    copy_dir(&fixture("missing_ps"), &d);
    let _lock = io::DatasetLock::acquire(&d).unwrap();
    assert_eq!(code(&run(&[&"fuse", &d])), 2);
}

fn square_dataset(dir: &Path) {
    let g = io::parse_graph(&common::text("square_loop.pg")).unwrap();
    common::graph_dataset(dir, &g);
}

#[test]
fn optimize_lowers_chi2_and_is_deterministic() {
    let tmp = tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    square_dataset(&a);
    square_dataset(&b);
    let oa = run(&[&"optimize", &a]);
    let ob = run(&[&"optimize", &b]);
    assert_eq!(code(&oa), 0);
    let r = stdout_json(&oa);
    assert!(r["chi2_after"].as_f64().unwrap() < r["chi2_before"].as_f64().unwrap());
    assert_eq!(oa.stdout, ob.stdout);
    assert_eq!(
        std::fs::read(a.join("graph.pg")).unwrap(),
        std::fs::read(b.join("graph.pg")).unwrap()
    );
}

#[test]
fn optimize_without_graph_is_io_error() {
    let tmp = tempdir().unwrap();
    let d = gt_copy(tmp.path());
    assert_eq!(code(&run(&[&"optimize", &d])), 2);
}

fn two_node_dataset(dir: &Path) {
    let cloud = common::three_planes(1.5, 0.05);
    io::write_ply(&dir.join("n0.ply"), &cloud).unwrap();
    io::write_ply(&dir.join("n1.ply"), &cloud).unwrap();
    let mut g = PoseGraph::new();
    g.add_node(0, RigidTransform::identity(), Some("n0.ply".into()))
        .unwrap();
    g.add_node(
        1,
        RigidTransform::from_translation(0.03, -0.02, 0.01),
        Some("n1.ply".into()),
    )
    .unwrap();
    g.add_node(2, RigidTransform::from_translation(5.0, 0.0, 0.0), None)
        .unwrap();
    g.add_edge(
        1,
        2,
        RigidTransform::from_translation(5.0, 0.0, 0.0),
        default_information(10),
    )
    .unwrap();
    common::graph_dataset(dir, &g);
}

#[test]
fn add_edge_appends_registered_edge() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("d");
    two_node_dataset(&d);
    let o = run(&[&"add-edge", &d, &"0", &"1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout_json(&o);
    assert_eq!(r["accepted"], true);
    let g = io::read_graph(&d.join("graph.pg")).unwrap();
    assert_eq!(g.edges.len(), 2);
    let e = &g.edges[1];
    assert_eq!((e.from, e.to), (0, 1));
    // Identical clouds in both node frames: the measured offset is identity.
    let (ang, tr) = e.measurement.difference(&RigidTransform::identity());
    assert!(ang < 1e-3 && tr < 1e-3, "{ang} {tr}");
}

#[test]
fn add_edge_errors() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("d");
    two_node_dataset(&d);
    assert_eq!(code(&run(&[&"add-edge", &d, &"0", &"9"])), 3);
    assert_eq!(
        code(&run(&[&"add-edge", &d, &"0", &"1", &"--guess", &"0 0"])),
        1
    );
    // Node 2 has no cloud file.
    assert_ne!(code(&run(&[&"add-edge", &d, &"0", &"2"])), 0);
    assert_eq!(io::read_graph(&d.join("graph.pg")).unwrap().edges.len(), 1);
}

#[test]
fn export_cloud_writes_map() {
    let tmp = tempdir().unwrap();
    let d = tmp.path().join("d");
    two_node_dataset(&d);
    let o = run(&[&"export-cloud", &d, &"--voxel", &"0.1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let n = stdout_json(&o)["points"].as_u64().unwrap();
    let c = io::read_ply(&d.join("map.ply")).unwrap();
    assert_eq!(c.len() as u64, n);
    assert!(n > 0);
    assert_eq!(code(&run(&[&"export-cloud", &d, &"--voxel", &"-1"])), 1);
}

#[test]
fn project_rgbd_and_laser() {
    let tmp = tempdir().unwrap();
    let gt = fixture("table_chair_gt");
    let png = tmp.path().join("d.png");
    // Camera at (0, 0, 0.4) looking along +x.
    let pose = "0 0 0.4 -0.5 0.5 -0.5 0.5";
    let args: [&dyn AsRef<std::ffi::OsStr>; 10] = [
        &"project",
        &gt,
        &"--pose",
        &pose,
        &"--sensor",
        &"rgbd",
        &"--intrinsics",
        &"100 100 63.5 47.5 128 96",
        &"--out",
        &png,
    ];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let img = io::read_depth_png(&png).unwrap();
    assert_eq!((img.width, img.height), (128, 96));
    assert_eq!(
        stdout_json(&o)["valid_pixels"].as_u64().unwrap() as usize,
        img.valid_count()
    );
    let first = std::fs::read(&png).unwrap();
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(std::fs::read(&png).unwrap(), first);

    let o = run(&[
        &"project",
        &gt,
        &"--pose",
        &"0 0 0.4 0 0 0 1",
        &"--sensor",
        &"laser",
        &"--laser",
        &"-1.5 1.5 61 10 0.5",
    ]);
    assert_eq!(code(&o), 0);
    let r = stdout_json(&o);
    let ranges = r["ranges"].as_array().unwrap();
    assert_eq!(ranges.len(), 61);
    assert!(ranges.iter().all(|v| {
        let v = v.as_f64().unwrap();
        v > 0.0 && v <= 10.0
    }));
    assert_eq!(
        code(&run(&[
            &"project",
            &gt,
            &"--pose",
            &pose,
            &"--sensor",
            &"rgbd"
        ])),
        1
    );
}

fn wall_image(z: f64) -> DepthImage {
    DepthImage::from_vec(64, 48, vec![z; 64 * 48]).unwrap()
}

#[test]
fn calibrate_intrinsics_on_undistorted_walls() {
    let tmp = tempdir().unwrap();
    let mut lines = String::new();
    for (i, z) in [1.0, 1.5, 2.0].into_iter().enumerate() {
        io::write_depth_png(&tmp.path().join(format!("w{i}.png")), &wall_image(z)).unwrap();
        lines.push_str(&format!("w{i}.png 0 0 1 {z}\n"));
    }
    let planes = tmp.path().join("planes.txt");
    std::fs::write(&planes, lines).unwrap();
    let out = tmp.path().join("model.dist");
    let o = run(&[
        &"calibrate",
        &"intrinsics",
        &planes,
        &"--intrinsics",
        &"50 50 31.5 23.5 64 48",
        &"--out",
        &out,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = io::read_distortion(&out).unwrap();
    assert!(m.multipliers.iter().all(|x| (x - 1.0).abs() < 1e-9));

    std::fs::write(&planes, "w0.png 0 0\n").unwrap();
    assert_eq!(
        code(&run(&[
            &"calibrate",
            &"intrinsics",
            &planes,
            &"--intrinsics",
            &"50 50 31.5 23.5 64 48",
            &"--out",
            &out,
        ])),
        2
    );
}

#[test]
fn calibrate_sensor_sensor_and_assemble() {
    let tmp = tempdir().unwrap();
    let cloud = common::three_planes(1.5, 0.05);
    let offset = RigidTransform::from_axis_angle(
        nalgebra::Vector3::new(0.3, -0.2, 1.0),
        0.05,
        nalgebra::Vector3::new(0.04, -0.03, 0.02),
    );
    // The second camera sees the scene expressed in its own frame.
    let seen = cloud.transformed(&offset.inverse());
    let (ra, rb) = (tmp.path().join("ref.ply"), tmp.path().join("cam2.ply"));
    io::write_ply(&ra, &cloud).unwrap();
    io::write_ply(&rb, &seen).unwrap();
    let ss = tmp.path().join("ss.tree");
    let o = run(&[
        &"calibrate",
        &"sensor-sensor",
        &"--reference",
        &format!("cam1={}", ra.display()),
        &"--sensor",
        &format!("cam2={}", rb.display()),
        &"--out",
        &ss,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tree = io::read_tree(&ss).unwrap();
    let (ang, tr) = tree.resolve("cam1", "cam2").unwrap().difference(&offset);
    assert!(ang < 1e-3 && tr < 1e-3, "{ang} {tr}");

    let sb = tmp.path().join("sb.tree");
    std::fs::write(&sb, "root base\ncam1 base 0.2 0 1 -0.5 0.5 -0.5 0.5\n").unwrap();
    let full = tmp.path().join("full.tree");
    let o = run(&[
        &"calibrate",
        &"assemble",
        &"--sensor-base",
        &sb,
        &"--sensor-sensor",
        &ss,
        &"--out",
        &full,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = io::read_tree(&full).unwrap();
    assert_eq!(t.root(), "base");
    assert_eq!(t.len(), 3);
    let expect = io::read_tree(&sb)
        .unwrap()
        .pose_in_root("cam1")
        .unwrap()
        .compose(&offset);
    let (ang, tr) = t.pose_in_root("cam2").unwrap().difference(&expect);
    assert!(ang < 1e-3 && tr < 1e-3);
}

#[test]
fn simulate_is_deterministic_and_planar_sensor_base_is_unobservable() {
    let tmp = tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = run(&[&"simulate", d, &"--seed", &"3", &"--spacing", &"0.05"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "log/log.txt",
        "gt/ontology.kb",
        "gt/boxes.ann",
        "gt/map.ply",
        "annotations/ontology.kb",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let first_png = std::fs::read_dir(a.join("log/depth"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "png"))
        .unwrap();
    let name = first_png.strip_prefix(&a).unwrap();
    assert_eq!(
        std::fs::read(&first_png).unwrap(),
        std::fs::read(b.join(name)).unwrap()
    );
    assert_eq!(code(&run(&[&"validate", &a.join("gt")])), 0);

    // A robot driving on a plane rotates about one axis only.
    let o = run(&[
        &"calibrate",
        &"sensor-base",
        &a.join("log/log.txt"),
        &"--sensor",
        &"camera",
        &"--out",
        &tmp.path().join("sb.tree"),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    let ds = Dataset::open(a.join("gt")).unwrap();
    assert!(ds.cloud.is_some());
}

#[test]
fn simulate_rejects_bad_spacing() {
    let tmp = tempdir().unwrap();
    assert_eq!(
        code(&run(&[&"simulate", &tmp.path(), &"--spacing", &"0"])),
        1
    );
}
