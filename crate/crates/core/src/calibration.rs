//! Depth undistortion, hand-eye (sensor to base) calibration, sensor to
//! sensor offsets and transform-tree assembly.

use nalgebra::{
    DMatrix, DVector, Matrix3, Matrix4, Quaternion, SMatrix, SymmetricEigen, UnitQuaternion,
    Vector3, Vector6,
};
use serde::Serialize;

use crate::acquisition::AcquisitionLog;
use crate::frames::TransformTree;
use crate::geometry::PointCloud;
use crate::projection::{unproject, DepthImage, PinholeIntrinsics};
use crate::registration::{register, RegistrationConfig, RegistrationError};
use crate::transform::RigidTransform;

pub const DEFAULT_GRID_W: usize = 8;
pub const DEFAULT_GRID_H: usize = 6;
pub const MIN_VALID_PIXELS: usize = 100;
pub const MULTIPLIER_MIN: f64 = 0.5;
pub const MULTIPLIER_MAX: f64 = 2.0;

/// Ratio below which the second principal rotation axis counts as absent.
const AXIS_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("need at least {needed} motion pairs, got {got}")]
    TooFewMotions { needed: usize, got: usize },
    #[error("rotation about axis ({:.3}, {:.3}, {:.3}) is unobservable: all motion rotation axes are parallel", .0[0], .0[1], .0[2])]
    UnobservableAxis([f64; 3]),
    #[error("rotation is unobservable: motions contain no rotation")]
    NoRotation,
    #[error("reference sensor {reference} out of range for {n} sensors")]
    BadReference { reference: usize, n: usize },
    #[error("invalid distortion model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

/// Exact at both ends and when `a == b`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Per-cell depth multipliers at control depths 0.5, 1.5, ..., 4.5 m.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthDistortionModel {
    pub image_width: u32,
    pub image_height: u32,
    pub grid_w: usize,
    pub grid_h: usize,
    pub levels: Vec<f64>,
    /// Indexed `[level][row][col]`, flattened.
    pub multipliers: Vec<f64>,
}

impl DepthDistortionModel {
    pub fn identity(image_width: u32, image_height: u32) -> Self {
        Self::uniform(image_width, image_height, 1.0)
    }

    pub fn uniform(image_width: u32, image_height: u32, m: f64) -> Self {
        let levels: Vec<f64> = (0..5).map(|i| 0.5 + i as f64).collect();
        Self {
            image_width,
            image_height,
            grid_w: DEFAULT_GRID_W,
            grid_h: DEFAULT_GRID_H,
            multipliers: vec![m; levels.len() * DEFAULT_GRID_W * DEFAULT_GRID_H],
            levels,
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |m: &str| Err(CalibrationError::InvalidModel(m.to_string()));
        if self.grid_w == 0 || self.grid_h == 0 || self.image_width == 0 || self.image_height == 0 {
            return bad("empty grid or image");
        }
        if self.levels.is_empty() || !self.levels.windows(2).all(|w| w[0] < w[1]) {
            return bad("depth levels must be strictly increasing");
        }
        if self.multipliers.len() != self.levels.len() * self.grid_w * self.grid_h {
            return bad("multiplier count does not match grid size");
        }
        if !self
            .multipliers
            .iter()
            .all(|m| (MULTIPLIER_MIN..=MULTIPLIER_MAX).contains(m))
        {
            return bad("multipliers must lie in [0.5, 2.0]");
        }
        Ok(())
    }

    fn idx(&self, level: usize, row: usize, col: usize) -> usize {
        (level * self.grid_h + row) * self.grid_w + col
    }

    pub fn get(&self, level: usize, row: usize, col: usize) -> f64 {
        self.multipliers[self.idx(level, row, col)]
    }

    fn cell_of(&self, u: f64, v: f64) -> (usize, usize) {
        let col = (u / self.image_width as f64 * self.grid_w as f64).floor();
        let row = (v / self.image_height as f64 * self.grid_h as f64).floor();
        (
            (row.max(0.0) as usize).min(self.grid_h - 1),
            (col.max(0.0) as usize).min(self.grid_w - 1),
        )
    }

    /// Bilinear between cell centers, extrapolating linearly past the outer
    /// centers.
    fn spatial(&self, level: usize, u: f64, v: f64) -> f64 {
        let axis = |x: f64, extent: f64, n: usize| -> (usize, usize, f64) {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let g = x / extent * n as f64 - 0.5;
            let i0 = (g.floor().max(0.0) as usize).min(n - 2);
            (i0, i0 + 1, g - i0 as f64)
        };
        let (c0, c1, tx) = axis(u + 0.5, self.image_width as f64, self.grid_w);
        let (r0, r1, ty) = axis(v + 0.5, self.image_height as f64, self.grid_h);
        let top = lerp(self.get(level, r0, c0), self.get(level, r0, c1), tx);
        let bottom = lerp(self.get(level, r1, c0), self.get(level, r1, c1), tx);
        lerp(top, bottom, ty)
    }

    /// Multiplier at pixel `(u, v)` for measured depth `z`; depth is clamped
    /// to the level range.
    pub fn multiplier(&self, u: f64, v: f64, z: f64) -> f64 {
        let n = self.levels.len();
        let m = if z <= self.levels[0] || n == 1 {
            self.spatial(0, u, v)
        } else if z >= self.levels[n - 1] {
            self.spatial(n - 1, u, v)
        } else {
            let l1 = self.levels.partition_point(|&l| l <= z).min(n - 1);
            let l0 = l1 - 1;
            let t = (z - self.levels[l0]) / (self.levels[l1] - self.levels[l0]);
            lerp(self.spatial(l0, u, v), self.spatial(l1, u, v), t)
        };
        m.clamp(MULTIPLIER_MIN, MULTIPLIER_MAX)
    }
}

/// A depth image of a flat target whose plane `normal . x = offset` is known
/// in the camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneObservation {
    pub image: DepthImage,
    pub normal: Vector3<f64>,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthFit {
    pub model: DepthDistortionModel,
    /// Indices of observations skipped for having too few valid pixels.
    pub skipped: Vec<usize>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Each sample votes its expected/measured depth ratio into its pixel cell at
/// every control level within 1 m of the measured depth; multipliers are the
/// per-bin medians.
pub fn fit_depth_model(observations: &[PlaneObservation], k: &PinholeIntrinsics) -> DepthFit {
    let mut model = DepthDistortionModel::identity(k.width, k.height);
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); model.multipliers.len()];
    let mut skipped = Vec::new();
    for (oi, obs) in observations.iter().enumerate() {
        let img = &obs.image;
        if img.valid_count() < MIN_VALID_PIXELS {
            log::warn!("observation {oi}: fewer than {MIN_VALID_PIXELS} valid pixels, skipped");
            skipped.push(oi);
            continue;
        }
        let n = obs.normal.normalize();
        let offset = obs.offset / obs.normal.norm();
        let su = model.image_width as f64 / img.width as f64;
        let sv = model.image_height as f64 / img.height as f64;
        for v in 0..img.height {
            for u in 0..img.width {
                let d = img.get(u, v);
                if d <= 0.0 {
                    continue;
                }
                let denom = n.dot(&k.ray(u as f64, v as f64));
                if denom.abs() < 1e-9 {
                    continue;
                }
                let expected = offset / denom;
                if expected <= 0.0 {
                    continue;
                }
                let ratio = expected / d;
                if !(MULTIPLIER_MIN..=MULTIPLIER_MAX).contains(&ratio) {
                    continue;
                }
                let (row, col) = model.cell_of(u as f64 * su, v as f64 * sv);
                for (li, &l) in model.levels.iter().enumerate() {
                    if (l - d).abs() <= 1.0 {
                        bins[model.idx(li, row, col)].push(ratio);
                    }
                }
            }
        }
    }
    for (m, bin) in model.multipliers.iter_mut().zip(bins.iter_mut()) {
        if !bin.is_empty() {
            *m = median(bin).clamp(MULTIPLIER_MIN, MULTIPLIER_MAX);
        }
    }
    DepthFit { model, skipped }
}

/// Scales every nonzero depth by the model multiplier; zeros stay zero.
pub fn undistort(img: &DepthImage, model: &DepthDistortionModel) -> DepthImage {
    let su = model.image_width as f64 / img.width as f64;
    let sv = model.image_height as f64 / img.height as f64;
    let mut out = img.clone();
    for v in 0..img.height {
        for u in 0..img.width {
            let d = img.get(u, v);
            if d > 0.0 {
                out.set(u, v, d * model.multiplier(u as f64 * su, v as f64 * sv, d));
            }
        }
    }
    out
}

fn quat_left(q: &Quaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w)
}

fn quat_right(q: &Quaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(w, -x, -y, -z, x, w, z, -y, y, -z, w, x, z, y, -x, w)
}

fn as_wxyz(q: &UnitQuaternion<f64>) -> Quaternion<f64> {
    *q.quaternion()
}

/// Checks that the robot rotations span at least two axes.
fn check_observability(
    motions: &[(RigidTransform, RigidTransform)],
) -> Result<(), CalibrationError> {
    let scatter = motions.iter().fold(Matrix3::zeros(), |acc, (a, _)| {
        let r = a.rotation.scaled_axis();
        acc + r * r.transpose()
    });
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let (l0, l1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if l0 <= 1e-18 {
        return Err(CalibrationError::NoRotation);
    }
    if l1 <= AXIS_RATIO * l0 {
        let mut axis: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
        if axis
            .iter()
            .find(|c| c.abs() > 1e-12)
            .is_some_and(|c| *c < 0.0)
        {
            axis = -axis;
        }
        return Err(CalibrationError::UnobservableAxis([axis.x, axis.y, axis.z]));
    }
    Ok(())
}

/// Solves `A_i * X = X * B_i` for the camera pose `X` in the base frame,
/// where `A_i` are robot motions and `B_i` the matching camera motions.
/// Rotation first from the stacked quaternion constraints, then translation
/// by linear least squares; `refine` adds a joint nonlinear pass.
pub fn calibrate_sensor_base(
    motions: &[(RigidTransform, RigidTransform)],
    refine: bool,
) -> Result<RigidTransform, CalibrationError> {
    if motions.len() < 2 {
        return Err(CalibrationError::TooFewMotions {
            needed: 2,
            got: motions.len(),
        });
    }
    check_observability(motions)?;

    let n = motions.len();
    let mut m = DMatrix::<f64>::zeros(4 * n, 4);
    for (i, (a, b)) in motions.iter().enumerate() {
        let qa = as_wxyz(&a.rotation);
        let mut qb = as_wxyz(&b.rotation);
        if qa.w * qb.w < 0.0 {
            qb = -qb;
        }
        let blk = quat_left(&qa) - quat_right(&qb);
        m.view_mut((4 * i, 0), (4, 4)).copy_from(&blk);
    }
    let mtm = m.transpose() * &m;
    let eig = SymmetricEigen::new(mtm);
    let imin = eig.eigenvalues.argmin().0;
    let v = eig.eigenvectors.column(imin);
    let rotation = UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]));
    let rx = rotation.to_rotation_matrix().into_inner();

    let mut lhs = DMatrix::<f64>::zeros(3 * n, 3);
    let mut rhs = DVector::<f64>::zeros(3 * n);
    for (i, (a, b)) in motions.iter().enumerate() {
        let ra = a.rotation_matrix();
        lhs.view_mut((3 * i, 0), (3, 3))
            .copy_from(&(ra - Matrix3::identity()));
        let r = rx * b.translation - a.translation;
        rhs.rows_mut(3 * i, 3).copy_from(&r);
    }
    let svd = lhs.svd(true, true);
    let t = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| CalibrationError::InvalidModel(e.to_string()))?;
    let mut x = RigidTransform::new(rotation, Vector3::new(t[0], t[1], t[2]));
    if refine {
        x = refine_hand_eye(motions, x);
    }
    Ok(x)
}

fn hand_eye_residuals(
    motions: &[(RigidTransform, RigidTransform)],
    x: &RigidTransform,
) -> DVector<f64> {
    let mut r = DVector::zeros(6 * motions.len());
    for (i, (a, b)) in motions.iter().enumerate() {
        let e = a.compose(x).compose(&x.compose(b).inverse()).log();
        r.rows_mut(6 * i, 6).copy_from(&e);
    }
    r
}

/// Damped Gauss-Newton on `sum |log(A_i X (X B_i)^-1)|^2`.
fn refine_hand_eye(
    motions: &[(RigidTransform, RigidTransform)],
    init: RigidTransform,
) -> RigidTransform {
    let mut x = init;
    let mut r = hand_eye_residuals(motions, &x);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-4;
    let h = 1e-7;
    for _ in 0..50 {
        let mut jac = DMatrix::<f64>::zeros(r.len(), 6);
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let rp = hand_eye_residuals(motions, &x.compose(&RigidTransform::exp(&d)));
            let rm = hand_eye_residuals(motions, &x.compose(&RigidTransform::exp(&-d)));
            jac.set_column(k, &((rp - rm) / (2.0 * h)));
        }
        let hess: SMatrix<f64, 6, 6> = (jac.transpose() * &jac).fixed_view::<6, 6>(0, 0).into();
        let g: Vector6<f64> = (jac.transpose() * &r).fixed_rows::<6>(0).into();
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = hess;
            for i in 0..6 {
                a[(i, i)] += lambda * hess[(i, i)].max(1e-12);
            }
            let Some(ch) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = ch.solve(&-g);
            let cand = x.compose(&RigidTransform::exp(&delta));
            let rc = hand_eye_residuals(motions, &cand);
            let c = rc.norm_squared();
            if c < cost {
                improved = cost - c > 1e-15 * cost.max(1e-300) && delta.norm() > 1e-12;
                x = cand;
                r = rc;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    x
}

/// Robot and camera motion pairs from consecutive depth frames of one sensor:
/// robot motion from odometry, camera motion by registering each frame onto
/// the previous one. Pairs whose registration fails are dropped.
pub fn motions_from_log(
    log: &AcquisitionLog,
    sensor: &str,
    reg_cfg: &RegistrationConfig,
) -> Result<Vec<(RigidTransform, RigidTransform)>, CalibrationError> {
    let mut out = Vec::new();
    let mut prev: Option<(RigidTransform, PointCloud)> = None;
    for f in log.frames().into_iter().filter(|f| f.sensor == sensor) {
        let (Some(odom), Some(k)) = (f.odom, log.intrinsics.get(sensor)) else {
            continue;
        };
        let cloud = unproject(f.image, k, &RigidTransform::identity()).voxel_downsample(0.02);
        if cloud.is_empty() {
            continue;
        }
        if let Some((prev_odom, prev_cloud)) = &prev {
            let res = register(&cloud, prev_cloud, &RigidTransform::identity(), reg_cfg)?;
            if res.converged {
                out.push((prev_odom.inverse().compose(&odom), res.transform));
            } else {
                log::warn!(
                    "frame at {}: camera motion not recovered ({})",
                    f.stamp,
                    res.diagnostic.unwrap_or_default()
                );
            }
        }
        prev = Some((odom, cloud));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SensorOffset {
    Ok(RigidTransform),
    Failed(String),
}

/// Offsets `reference <- sensor_i` by registering each sensor's cloud onto
/// the reference cloud. A failed sensor yields a failure entry.
pub fn calibrate_sensor_sensor(
    clouds: &[PointCloud],
    reference: usize,
    guesses: Option<&[RigidTransform]>,
    reg_cfg: &RegistrationConfig,
) -> Result<Vec<SensorOffset>, CalibrationError> {
    if reference >= clouds.len() {
        return Err(CalibrationError::BadReference {
            reference,
            n: clouds.len(),
        });
    }
    let target = &clouds[reference];
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i == reference {
                return Ok(SensorOffset::Ok(RigidTransform::identity()));
            }
            let guess = guesses.and_then(|g| g.get(i).copied()).unwrap_or_default();
            if c.is_empty() || target.is_empty() {
                return Ok(SensorOffset::Failed(format!("sensor {i}: empty cloud")));
            }
            let res = register(c, target, &guess, reg_cfg)?;
            Ok(if res.converged {
                SensorOffset::Ok(res.transform)
            } else {
                SensorOffset::Failed(format!(
                    "sensor {i}: {}",
                    res.diagnostic.unwrap_or_default()
                ))
            })
        })
        .collect()
}

/// Tree rooted at `base` with the reference camera below it and every other
/// sensor below the reference.
pub fn assemble_tree(
    base: &str,
    reference: &str,
    base_to_ref: &RigidTransform,
    ref_to_sensors: &[(String, RigidTransform)],
) -> Result<TransformTree, crate::frames::FrameError> {
    let mut tree = TransformTree::new(base);
    tree.add(reference, base, *base_to_ref)?;
    for (name, t) in ref_to_sensors {
        tree.add(name, reference, *t)?;
    }
    Ok(tree)
}

/// Everything produced by the calibration protocol for `n` sensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSuite {
    pub reference_sensor: usize,
    pub models: Vec<DepthDistortionModel>,
    pub tree: TransformTree,
}

impl CalibrationSuite {
    pub fn n(&self) -> usize {
        self.models.len()
    }
}
