use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::ptr;

use semmap_ffi::*;

fn fixture(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { semmap_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(511)].iter().map(|&b| b as u8).collect();
    String::from_utf8(bytes).unwrap()
}

const IDENTITY: [f64; 7] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];

#[test]
fn kb_entailment() {
    unsafe {
        let mut kb = ptr::null_mut();
        let src = c("class Furniture.\nclass Table.\nis-a(Table, Furniture).\nindividual t1.\ninstance-of(t1, Table).\n");
        assert_eq!(
            semmap_kb_parse(src.as_ptr(), &mut kb),
            SemmapStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(last_error(), "");
        let mut yes = false;
        assert_eq!(
            semmap_kb_entails_instance_of(kb, c("t1").as_ptr(), c("Furniture").as_ptr(), &mut yes),
            SemmapStatus::Ok
        );
        assert!(yes);
        assert_eq!(
            semmap_kb_entails_is_a(kb, c("Furniture").as_ptr(), c("Table").as_ptr(), &mut yes),
            SemmapStatus::Ok
        );
        assert!(!yes);
        let mut n = 0;
        assert_eq!(semmap_kb_closure_size(kb, &mut n), SemmapStatus::Ok);
        assert!(n > 2);
        semmap_kb_free(kb);
    }
}

#[test]
fn kb_errors_are_reported() {
    unsafe {
        let mut kb = ptr::null_mut();
        assert_eq!(
            semmap_kb_parse(c("is-a(\n").as_ptr(), &mut kb),
            SemmapStatus::Parse
        );
        assert!(kb.is_null());
        assert!(last_error().contains("line 1"), "{}", last_error());
        assert_eq!(
            semmap_kb_parse(ptr::null(), &mut kb),
            SemmapStatus::NullArgument
        );
        assert_eq!(
            semmap_kb_read(c("/nonexistent/x.kb").as_ptr(), &mut kb),
            SemmapStatus::Io
        );
        let bad = [0xffu8, 0];
        assert_eq!(
            semmap_kb_parse(bad.as_ptr().cast(), &mut kb),
            SemmapStatus::InvalidUtf8
        );
        let mut mall = ptr::null_mut();
        assert_eq!(
            semmap_kb_read(fixture("mall.kb").as_ptr(), &mut mall),
            SemmapStatus::Ok
        );
        let mut yes = true;
        assert_eq!(
            semmap_kb_entails_is_a(mall, ptr::null(), c("Thing").as_ptr(), &mut yes),
            SemmapStatus::NullArgument
        );
        semmap_kb_free(mall);
        semmap_kb_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates_and_reports_length() {
    unsafe {
        let mut kb = ptr::null_mut();
        semmap_kb_read(c("/nonexistent/x.kb").as_ptr(), &mut kb);
        let full = semmap_last_error(ptr::null_mut(), 0);
        assert!(full > 4);
        let mut buf = [1 as c_char; 4];
        assert_eq!(semmap_last_error(buf.as_mut_ptr(), 4), full);
        assert_eq!(buf[3], 0);
    }
}

#[test]
fn evaluate_self_and_against_truth() {
    unsafe {
        let mut gt = ptr::null_mut();
        let mut other = ptr::null_mut();
        assert_eq!(
            semmap_dataset_open(fixture("table_chair_gt").as_ptr(), &mut gt),
            SemmapStatus::Ok
        );
        assert_eq!(
            semmap_dataset_open(fixture("missing_ps").as_ptr(), &mut other),
            SemmapStatus::Ok
        );
        let mut r = SemmapReport::default();
        assert_eq!(
            semmap_evaluate(gt, gt, ptr::null(), ptr::null(), &mut r),
            SemmapStatus::Ok
        );
        assert_eq!(r, SemmapReport::default());

        let w = semmap_default_weights();
        assert_eq!(
            semmap_evaluate(gt, gt, IDENTITY.as_ptr(), &w, &mut r),
            SemmapStatus::Ok
        );
        let neg = SemmapWeights { w_g: -1.0, ..w };
        assert_eq!(
            semmap_evaluate(gt, gt, ptr::null(), &neg, &mut r),
            SemmapStatus::Validation
        );

        let bad_pose = [0.0; 7];
        assert_eq!(
            semmap_evaluate(gt, gt, bad_pose.as_ptr(), ptr::null(), &mut r),
            SemmapStatus::Validation
        );
        semmap_dataset_free(other);
        semmap_dataset_free(gt);
    }
}

#[test]
fn graph_optimize_and_write() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(
            semmap_graph_read(fixture("square_loop.pg").as_ptr(), &mut g),
            SemmapStatus::Ok
        );
        let (mut nodes, mut edges) = (0, 0);
        assert_eq!(
            semmap_graph_counts(g, &mut nodes, &mut edges),
            SemmapStatus::Ok
        );
        assert!(nodes >= 2 && edges >= 1);
        let mut first = [0.0; 7];
        assert_eq!(
            semmap_graph_node_pose(g, 0, first.as_mut_ptr()),
            SemmapStatus::Ok
        );
        let mut rep = SemmapOptimizeReport::default();
        assert_eq!(semmap_graph_optimize(g, 50, &mut rep), SemmapStatus::Ok);
        assert!(rep.chi2_after <= rep.chi2_before);
        let mut after = [0.0; 7];
        semmap_graph_node_pose(g, 0, after.as_mut_ptr());
        assert_eq!(first, after, "lowest node stays fixed");
        assert_eq!(
            semmap_graph_node_pose(g, 9999, after.as_mut_ptr()),
            SemmapStatus::Validation
        );

        let dir = tempfile::tempdir().unwrap();
        let path = c(dir.path().join("out.pg").to_str().unwrap());
        assert_eq!(semmap_graph_write(g, path.as_ptr()), SemmapStatus::Ok);
        let mut g2 = ptr::null_mut();
        assert_eq!(semmap_graph_read(path.as_ptr(), &mut g2), SemmapStatus::Ok);
        let mut rep2 = SemmapOptimizeReport::default();
        semmap_graph_optimize(g2, 0, &mut rep2);
        assert!((rep2.chi2_before - rep.chi2_after).abs() <= 1e-9 * (1.0 + rep.chi2_after));
        semmap_graph_free(g2);
        semmap_graph_free(g);
    }
}

fn planes() -> Vec<f64> {
    let mut xyz = Vec::new();
    for i in 0..20 {
        for j in 0..20 {
            let (a, b) = (i as f64 * 0.05, j as f64 * 0.05);
            xyz.extend([a, b, 0.0, 0.0, a, b, a, 0.0, b]);
        }
    }
    xyz
}

#[test]
fn cloud_register_render() {
    unsafe {
        let xyz = planes();
        let n = xyz.len() / 3;
        let mut target = ptr::null_mut();
        assert_eq!(
            semmap_cloud_from_xyz(xyz.as_ptr(), n, &mut target),
            SemmapStatus::Ok
        );
        assert_eq!(semmap_cloud_len(target), n);

        let shifted: Vec<f64> = xyz
            .chunks(3)
            .flat_map(|p| [p[0] + 0.03, p[1] - 0.02, p[2] + 0.01])
            .collect();
        let mut source = ptr::null_mut();
        semmap_cloud_from_xyz(shifted.as_ptr(), n, &mut source);
        let mut r = SemmapRegistration::default();
        assert_eq!(
            semmap_register(source, target, ptr::null(), &mut r),
            SemmapStatus::Ok,
            "{}",
            last_error()
        );
        assert!(r.converged);
        for (got, want) in r.transform[..3].iter().zip([-0.03, 0.02, -0.01]) {
            assert!((got - want).abs() < 1e-3, "{:?}", r.transform);
        }

        let mut back = vec![0.0; 3 * n];
        assert_eq!(
            semmap_cloud_points(target, back.as_mut_ptr(), n),
            SemmapStatus::Ok
        );
        assert_eq!(back, xyz);
        assert_eq!(
            semmap_cloud_points(target, back.as_mut_ptr(), n - 1),
            SemmapStatus::BufferTooSmall
        );

        let k = SemmapIntrinsics {
            fx: 60.0,
            fy: 60.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
            near: 0.1,
            far: 10.0,
        };
        // Camera two metres above the floor looking straight down.
        let pose = [0.5, 0.5, 2.0, 1.0, 0.0, 0.0, 0.0];
        let mut depth = vec![0.0; 64 * 48];
        assert_eq!(
            semmap_render_depth(target, pose.as_ptr(), &k, depth.as_mut_ptr(), depth.len()),
            SemmapStatus::Ok
        );
        assert!(depth.iter().any(|&d| (d - 2.0).abs() < 1e-9));
        assert!(depth.iter().all(|&d| d == 0.0 || (0.1..=10.0).contains(&d)));
        assert_eq!(
            semmap_render_depth(target, pose.as_ptr(), &k, depth.as_mut_ptr(), 10),
            SemmapStatus::BufferTooSmall
        );
        let bad = SemmapIntrinsics { fx: -1.0, ..k };
        assert_eq!(
            semmap_render_depth(target, pose.as_ptr(), &bad, depth.as_mut_ptr(), depth.len()),
            SemmapStatus::Validation
        );

        let mut empty = ptr::null_mut();
        assert_eq!(
            semmap_cloud_from_xyz(ptr::null(), 0, &mut empty),
            SemmapStatus::Ok
        );
        assert_eq!(
            semmap_register(empty, target, ptr::null(), &mut r),
            SemmapStatus::Validation
        );
        let nan = [f64::NAN, 0.0, 0.0];
        let mut c2 = ptr::null_mut();
        assert_eq!(
            semmap_cloud_from_xyz(nan.as_ptr(), 1, &mut c2),
            SemmapStatus::Validation
        );

        semmap_cloud_free(empty);
        semmap_cloud_free(source);
        semmap_cloud_free(target);
        assert_eq!(semmap_cloud_len(ptr::null()), 0);
    }
}

#[test]
fn cloud_read_fixture() {
    unsafe {
        let mut cl = ptr::null_mut();
        assert_eq!(
            semmap_cloud_read(fixture("points.ply").as_ptr(), &mut cl),
            SemmapStatus::Ok
        );
        assert!(semmap_cloud_len(cl) > 0);
        semmap_cloud_free(cl);
        assert_eq!(
            semmap_cloud_read(fixture("mall.kb").as_ptr(), &mut cl),
            SemmapStatus::Parse
        );
    }
}

/// Rotation about `axis` by `angle` plus a translation, packed.
fn motion(axis: [f64; 3], angle: f64, t: [f64; 3]) -> [f64; 7] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let s = (angle / 2.0).sin() / n;
    [
        t[0],
        t[1],
        t[2],
        axis[0] * s,
        axis[1] * s,
        axis[2] * s,
        (angle / 2.0).cos(),
    ]
}

#[test]
fn hand_eye_recovers_offset() {
    use semmap::RigidTransform;
    let x = motion([0.2, -0.4, 1.0], 0.7, [0.1, -0.05, 0.3]);
    let xt = RigidTransform::from_components([x[0], x[1], x[2]], [x[3], x[4], x[5], x[6]]).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (axis, angle, t) in [
        ([1.0, 0.0, 0.2], 0.5, [0.3, 0.0, 0.1]),
        ([0.0, 1.0, -0.3], 0.8, [0.0, 0.4, 0.2]),
        ([0.3, 0.2, 1.0], 1.1, [0.5, -0.2, 0.0]),
    ] {
        let m = motion(axis, angle, t);
        let at =
            RigidTransform::from_components([m[0], m[1], m[2]], [m[3], m[4], m[5], m[6]]).unwrap();
        let bt = xt.inverse().compose(&at).compose(&xt);
        a.extend(m);
        b.extend(bt.to_components());
    }
    let mut got = [0.0; 7];
    unsafe {
        assert_eq!(
            semmap_calibrate_sensor_base(a.as_ptr(), b.as_ptr(), 3, false, got.as_mut_ptr()),
            SemmapStatus::Ok,
            "{}",
            last_error()
        );
        let gt = RigidTransform::from_components(
            [got[0], got[1], got[2]],
            [got[3], got[4], got[5], got[6]],
        )
        .unwrap();
        let (ang, tr) = gt.difference(&xt);
        assert!(ang < 1e-6 && tr < 1e-6, "{ang} {tr}");
        assert_eq!(
            semmap_calibrate_sensor_base(a.as_ptr(), b.as_ptr(), 1, false, got.as_mut_ptr()),
            SemmapStatus::Numerical
        );
    }
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/semmap.h"))
            .unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs"))
        .unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        return;
    };
    if !cc.status.success() {
        return;
    }
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"])
        .arg(dir.join("include/semmap.h"))
        .status()
        .unwrap();
    assert!(status.success());
}
