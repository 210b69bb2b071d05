//! C ABI over the semmap toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_read` /
//! `*_parse` / `*_open` functions and released by the matching `*_free`.
//! Every fallible call returns a [`SemmapStatus`]; on failure a message is
//! kept per thread and can be fetched with [`semmap_last_error`].
//! Rigid transforms are passed as 7 doubles `tx ty tz qx qy qz qw`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::Vector3;
use semmap::calibration::calibrate_sensor_base;
use semmap::evaluation::{evaluate, EvaluationConfig, EvaluationWeights};
use semmap::io::{self, Dataset, IoError};
use semmap::mapping::{optimize, PoseGraph};
use semmap::projection::{render_depth, PinholeIntrinsics};
use semmap::registration::{register, RegistrationConfig};
use semmap::{Atom, KnowledgeBase, PointCloud, RigidTransform};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemmapStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Knowledge base handle.
pub struct SemmapKb(KnowledgeBase);
/// Point cloud handle.
pub struct SemmapCloud(PointCloud);
/// Pose graph handle.
pub struct SemmapGraph(PoseGraph);
/// Dataset (semantic map on disk) handle.
pub struct SemmapDataset(Dataset);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SemmapWeights {
    pub w_g: f64,
    pub w_s: f64,
    pub w_d: f64,
    pub w_u: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SemmapReport {
    pub geometric_error: f64,
    pub delta_count: usize,
    pub gamma_count: usize,
    pub spatial_distance: f64,
    pub unmatched_1: usize,
    pub unmatched_gt: usize,
    pub scalar: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SemmapOptimizeReport {
    pub chi2_before: f64,
    pub chi2_after: f64,
    pub iterations: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SemmapRegistration {
    /// Maps source points into the target frame.
    pub transform: [f64; 7],
    pub converged: bool,
    pub mean_residual: f64,
    pub inlier_fraction: f64,
    pub iterations: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemmapIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(SemmapStatus, String);

impl Failure {
    fn new(status: SemmapStatus, msg: impl ToString) -> Self {
        Failure(status, msg.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let status = match e {
            IoError::Parse { .. } | IoError::Diagnostics { .. } => SemmapStatus::Parse,
            IoError::Invalid(_) => SemmapStatus::Validation,
            _ => SemmapStatus::Io,
        };
        Failure::new(status, e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SemmapStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (SemmapStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (SemmapStatus::Panic, format!("internal error: {m}"))
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn null() -> Failure {
    Failure::new(SemmapStatus::NullArgument, "null argument")
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Failure::new(SemmapStatus::InvalidUtf8, e))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(null)
}

unsafe fn handle_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(null)
}

unsafe fn transform_in(p: *const f64) -> Result<RigidTransform, Failure> {
    if p.is_null() {
        return Err(null());
    }
    let c = std::slice::from_raw_parts(p, 7);
    RigidTransform::from_components([c[0], c[1], c[2]], [c[3], c[4], c[5], c[6]]).ok_or_else(|| {
        Failure::new(
            SemmapStatus::Validation,
            "transform is not finite or has a zero quaternion",
        )
    })
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length.
/// An empty message means the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn semmap_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

// Knowledge bases

/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semmap_kb_parse(
    text_: *const c_char,
    out_: *mut *mut SemmapKb,
) -> SemmapStatus {
    guard(|| {
        let s = text(text_)?;
        let o = out(out_)?;
        let kb = io::parse_kb(s).map_err(|d| {
            let msg = d
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("\n");
            Failure::new(SemmapStatus::Parse, msg)
        })?;
        *o = boxed(SemmapKb(kb));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semmap_kb_read(
    path: *const c_char,
    out_: *mut *mut SemmapKb,
) -> SemmapStatus {
    guard(|| {
        let p = text(path)?;
        let o = out(out_)?;
        *o = boxed(SemmapKb(io::read_kb(Path::new(p))?));
        Ok(())
    })
}

/// # Safety
/// `kb` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semmap_kb_free(kb: *mut SemmapKb) {
    free(kb)
}

fn entails(kb: &SemmapKb, atom: Atom, out_: &mut bool) -> Result<(), Failure> {
    *out_ =
        kb.0.entails(&atom)
            .map_err(|e| Failure::new(SemmapStatus::Validation, e))?;
    Ok(())
}

/// Whether `sub` is a subclass of `sup` after closure.
///
/// # Safety
/// `kb` must be a live handle, the names NUL-terminated strings and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn semmap_kb_entails_is_a(
    kb: *const SemmapKb,
    sub: *const c_char,
    sup: *const c_char,
    out_: *mut bool,
) -> SemmapStatus {
    guard(|| entails(handle(kb)?, Atom::is_a(text(sub)?, text(sup)?), out(out_)?))
}

/// Whether `individual` is an instance of `class` after closure.
///
/// # Safety
/// `kb` must be a live handle, the names NUL-terminated strings and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn semmap_kb_entails_instance_of(
    kb: *const SemmapKb,
    individual: *const c_char,
    class: *const c_char,
    out_: *mut bool,
) -> SemmapStatus {
    guard(|| {
        entails(
            handle(kb)?,
            Atom::instance_of(text(individual)?, text(class)?),
            out(out_)?,
        )
    })
}

/// Number of atoms in the closure.
///
/// # Safety
/// `kb` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn semmap_kb_closure_size(
    kb: *const SemmapKb,
    out_: *mut usize,
) -> SemmapStatus {
    guard(|| {
        let kb = handle(kb)?;
        *out(out_)? =
            kb.0.closure()
                .map_err(|e| Failure::new(SemmapStatus::Validation, e))?
                .len();
        Ok(())
    })
}

// Datasets and evaluation

/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_open(
    dir: *const c_char,
    out_: *mut *mut SemmapDataset,
) -> SemmapStatus {
    guard(|| {
        let d = text(dir)?;
        let o = out(out_)?;
        *o = boxed(SemmapDataset(Dataset::open(d)?));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_free(ds: *mut SemmapDataset) {
    free(ds)
}

/// Default evaluation weights.
#[no_mangle]
pub extern "C" fn semmap_default_weights() -> SemmapWeights {
    let w = EvaluationWeights::default();
    SemmapWeights {
        w_g: w.w_g,
        w_s: w.w_s,
        w_d: w.w_d,
        w_u: w.w_u,
    }
}

/// Compares `candidate` against `ground_truth`. `align` may be null for the
/// identity, `weights` null for the defaults.
///
/// # Safety
/// Handles must be live; `align` null or 7 doubles; `weights` null or valid;
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn semmap_evaluate(
    candidate: *const SemmapDataset,
    ground_truth: *const SemmapDataset,
    align: *const f64,
    weights: *const SemmapWeights,
    out_: *mut SemmapReport,
) -> SemmapStatus {
    guard(|| {
        let c = handle(candidate)?;
        let g = handle(ground_truth)?;
        let o = out(out_)?;
        let align = if align.is_null() {
            RigidTransform::identity()
        } else {
            transform_in(align)?
        };
        let mut cfg = EvaluationConfig::default();
        if let Some(w) = weights.as_ref() {
            cfg.weights = EvaluationWeights::new(w.w_g, w.w_s, w.w_d, w.w_u)
                .map_err(|e| Failure::new(SemmapStatus::Validation, e))?;
        }
        let r = evaluate(&c.0.semantic_map(), &g.0.semantic_map(), &cfg, &align)
            .map_err(|e| Failure::new(SemmapStatus::Validation, e))?;
        *o = SemmapReport {
            geometric_error: r.geometric_error,
            delta_count: r.delta_count,
            gamma_count: r.gamma_count,
            spatial_distance: r.spatial_distance,
            unmatched_1: r.unmatched_1,
            unmatched_gt: r.unmatched_gt,
            scalar: r.scalar,
        };
        Ok(())
    })
}

// Pose graphs

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semmap_graph_read(
    path: *const c_char,
    out_: *mut *mut SemmapGraph,
) -> SemmapStatus {
    guard(|| {
        let p = text(path)?;
        let o = out(out_)?;
        *o = boxed(SemmapGraph(io::read_graph(Path::new(p))?));
        Ok(())
    })
}

/// # Safety
/// `graph` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn semmap_graph_write(
    graph: *const SemmapGraph,
    path: *const c_char,
) -> SemmapStatus {
    guard(|| {
        let g = handle(graph)?;
        io::write_graph(Path::new(text(path)?), &g.0)?;
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semmap_graph_free(graph: *mut SemmapGraph) {
    free(graph)
}

/// # Safety
/// `graph` must be a live handle and the outputs valid.
#[no_mangle]
pub unsafe extern "C" fn semmap_graph_counts(
    graph: *const SemmapGraph,
    nodes: *mut usize,
    edges: *mut usize,
) -> SemmapStatus {
    guard(|| {
        let g = handle(graph)?;
        *out(nodes)? = g.0.nodes.len();
        *out(edges)? = g.0.edges.len();
        Ok(())
    })
}

/// Pose of node `id` in the map frame.
///
/// # Safety
/// `graph` must be a live handle and `pose` point to 7 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn semmap_graph_node_pose(
    graph: *const SemmapGraph,
    id: u32,
    pose: *mut f64,
) -> SemmapStatus {
    guard(|| {
        let g = handle(graph)?;
        if pose.is_null() {
            return Err(null());
        }
        let p = g
            .0
            .pose(id)
            .ok_or_else(|| Failure::new(SemmapStatus::Validation, format!("unknown node {id}")))?;
        std::slice::from_raw_parts_mut(pose, 7).copy_from_slice(&p.to_components());
        Ok(())
    })
}

/// Optimizes the graph in place; the lowest node id stays fixed.
///
/// # Safety
/// `graph` must be a live handle; `report` null or valid.
#[no_mangle]
pub unsafe extern "C" fn semmap_graph_optimize(
    graph: *mut SemmapGraph,
    max_iterations: usize,
    report: *mut SemmapOptimizeReport,
) -> SemmapStatus {
    guard(|| {
        let g = handle_mut(graph)?;
        let (opt, r) =
            optimize(&g.0, max_iterations).map_err(|e| Failure::new(SemmapStatus::Numerical, e))?;
        g.0 = opt;
        if let Some(rep) = report.as_mut() {
            *rep = SemmapOptimizeReport {
                chi2_before: r.chi2_before,
                chi2_after: r.chi2_after,
                iterations: r.iterations,
            };
        }
        Ok(())
    })
}

// Point clouds

/// Builds a cloud from `n` packed xyz triples.
///
/// # Safety
/// `xyz` must point to `3 n` doubles (may be null when `n` is 0) and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn semmap_cloud_from_xyz(
    xyz: *const f64,
    n: usize,
    out_: *mut *mut SemmapCloud,
) -> SemmapStatus {
    guard(|| {
        let o = out(out_)?;
        let coords = if n == 0 {
            &[][..]
        } else if xyz.is_null() {
            return Err(null());
        } else {
            std::slice::from_raw_parts(xyz, 3 * n)
        };
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Failure::new(
                SemmapStatus::Validation,
                "non-finite coordinate",
            ));
        }
        let points = coords
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        *o = boxed(SemmapCloud(PointCloud::new(points)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semmap_cloud_read(
    path: *const c_char,
    out_: *mut *mut SemmapCloud,
) -> SemmapStatus {
    guard(|| {
        let p = text(path)?;
        let o = out(out_)?;
        *o = boxed(SemmapCloud(io::read_ply(Path::new(p))?));
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semmap_cloud_free(cloud: *mut SemmapCloud) {
    free(cloud)
}

/// Number of points, 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semmap_cloud_len(cloud: *const SemmapCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the points as packed xyz into `xyz`, which holds `capacity` points.
///
/// # Safety
/// `cloud` must be a live handle and `xyz` point to `3 capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn semmap_cloud_points(
    cloud: *const SemmapCloud,
    xyz: *mut f64,
    capacity: usize,
) -> SemmapStatus {
    guard(|| {
        let c = handle(cloud)?;
        if c.0.len() > capacity {
            return Err(Failure::new(
                SemmapStatus::BufferTooSmall,
                format!("need room for {} points", c.0.len()),
            ));
        }
        if c.0.is_empty() {
            return Ok(());
        }
        if xyz.is_null() {
            return Err(null());
        }
        let dst = std::slice::from_raw_parts_mut(xyz, 3 * c.0.len());
        for (d, p) in dst.chunks_exact_mut(3).zip(&c.0.points) {
            d.copy_from_slice(p.as_slice());
        }
        Ok(())
    })
}

// Registration, rendering, calibration

/// Aligns `source` onto `target` with the default configuration, starting
/// from `guess` (null for the identity).
///
/// # Safety
/// Handles must be live, `guess` null or 7 doubles, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn semmap_register(
    source: *const SemmapCloud,
    target: *const SemmapCloud,
    guess: *const f64,
    out_: *mut SemmapRegistration,
) -> SemmapStatus {
    guard(|| {
        let s = handle(source)?;
        let t = handle(target)?;
        let o = out(out_)?;
        let guess = if guess.is_null() {
            RigidTransform::identity()
        } else {
            transform_in(guess)?
        };
        let r = register(&s.0, &t.0, &guess, &RegistrationConfig::default())
            .map_err(|e| Failure::new(SemmapStatus::Validation, e))?;
        *o = SemmapRegistration {
            transform: r.transform.to_components(),
            converged: r.converged,
            mean_residual: r.mean_residual,
            inlier_fraction: r.inlier_fraction,
            iterations: r.iterations,
        };
        Ok(())
    })
}

/// Renders the cloud as a depth image seen from `pose` (camera to map).
/// `depth` receives `width * height` row-major values in metres, 0 where
/// nothing was hit.
///
/// # Safety
/// `cloud` must be live, `pose` 7 doubles, `k` valid, `depth` `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn semmap_render_depth(
    cloud: *const SemmapCloud,
    pose: *const f64,
    k: *const SemmapIntrinsics,
    depth: *mut f64,
    capacity: usize,
) -> SemmapStatus {
    guard(|| {
        let c = handle(cloud)?;
        let pose = transform_in(pose)?;
        let k = handle(k)?;
        let k = PinholeIntrinsics {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            near: k.near,
            far: k.far,
        };
        k.validate()
            .map_err(|e| Failure::new(SemmapStatus::Validation, e))?;
        let n = k.width as usize * k.height as usize;
        if capacity < n {
            return Err(Failure::new(
                SemmapStatus::BufferTooSmall,
                format!("need {n} values"),
            ));
        }
        if depth.is_null() {
            return Err(null());
        }
        let img = render_depth(&c.0, &pose, &k, 1);
        let dst = std::slice::from_raw_parts_mut(depth, n);
        for v in 0..k.height {
            for u in 0..k.width {
                dst[(v * k.width + u) as usize] = img.get(u, v);
            }
        }
        Ok(())
    })
}

/// Solves `A_i X = X B_i` for the sensor pose `X` in the base frame from
/// `n` robot motions `a` and matching sensor motions `b`, each packed as 7
/// doubles per motion.
///
/// # Safety
/// `a` and `b` must each point to `7 n` doubles and `out` to 7 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn semmap_calibrate_sensor_base(
    a: *const f64,
    b: *const f64,
    n: usize,
    refine: bool,
    out_: *mut f64,
) -> SemmapStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out_.is_null() {
            return Err(null());
        }
        let motions = (0..n)
            .map(|i| Ok((transform_in(a.add(7 * i))?, transform_in(b.add(7 * i))?)))
            .collect::<Result<Vec<_>, Failure>>()?;
        let x = calibrate_sensor_base(&motions, refine)
            .map_err(|e| Failure::new(SemmapStatus::Numerical, e))?;
        std::slice::from_raw_parts_mut(out_, 7).copy_from_slice(&x.to_components());
        Ok(())
    })
}
