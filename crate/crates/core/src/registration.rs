//! Point-to-plane ICP for 3D clouds and point-to-line ICP for planar scans.
//!
//! Both solvers share one damped Gauss-Newton loop: a step is accepted only
//! if the mean inlier residual does not grow, otherwise the damping is
//! raised tenfold and the step retried.

use nalgebra::{
    DMatrix, Matrix2, Matrix3, SMatrix, SVector, SymmetricEigen, Vector2, Vector3, Vector6,
};
use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;
use crate::spatial::{PointIndex, PointIndex2};
use crate::transform::{Pose2, RigidTransform};

/// Neighbours used for scan line normals; scans are sparse along the wall.
const SCAN_NORMAL_K: usize = 5;
const LAMBDA_INIT: f64 = 1e-4;
const LAMBDA_MAX: f64 = 1e12;
/// Scaled-Hessian eigenvalue ratio below which a direction is unobservable.
const DEGENERACY_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistrationError {
    #[error("{0} cloud is empty")]
    EmptyCloud(&'static str),
    #[error("invalid registration config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    pub convergence_eps: f64,
    pub correspondence_gate: f64,
    pub normal_angle_gate: f64,
    pub normal_k: usize,
    pub min_inlier_fraction: f64,
    pub max_mean_residual: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_eps: 1e-6,
            correspondence_gate: 0.5,
            normal_angle_gate: 0.8,
            normal_k: 20,
            min_inlier_fraction: 0.4,
            max_mean_residual: 0.05,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.max_iterations == 0 {
            return Err(RegistrationError::InvalidConfig(
                "max_iterations must be positive",
            ));
        }
        if !positive(self.convergence_eps) {
            return Err(RegistrationError::InvalidConfig(
                "convergence_eps must be positive",
            ));
        }
        if !positive(self.correspondence_gate) {
            return Err(RegistrationError::InvalidConfig(
                "correspondence_gate must be positive",
            ));
        }
        if !positive(self.normal_angle_gate) {
            return Err(RegistrationError::InvalidConfig(
                "normal_angle_gate must be positive",
            ));
        }
        if self.normal_k < 3 {
            return Err(RegistrationError::InvalidConfig(
                "normal_k must be at least 3",
            ));
        }
        if !(self.min_inlier_fraction > 0.0 && self.min_inlier_fraction <= 1.0) {
            return Err(RegistrationError::InvalidConfig(
                "min_inlier_fraction must lie in (0, 1]",
            ));
        }
        if !positive(self.max_mean_residual) {
            return Err(RegistrationError::InvalidConfig(
                "max_mean_residual must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub converged: bool,
    pub mean_residual: f64,
    pub inlier_fraction: f64,
    pub iterations: usize,
    /// Why the result is not converged, when it is not.
    pub diagnostic: Option<String>,
    /// Mean inlier residual after each accepted step, starting at the guess.
    pub residual_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanMatchResult {
    pub pose: Pose2,
    pub converged: bool,
    pub mean_residual: f64,
    pub inlier_fraction: f64,
    pub iterations: usize,
    pub diagnostic: Option<String>,
    pub residual_history: Vec<f64>,
}

/// Zero vectors mark points whose neighbourhood has rank below 2.
pub fn normal_is_valid(n: &Vector3<f64>) -> bool {
    n.norm_squared() > 0.5
}

/// Normals oriented toward the origin of the cloud's frame.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> PointCloud {
    estimate_normals_toward(cloud, k, &Vector3::zeros())
}

/// Per-point normal from the smallest eigenvector of the k-NN covariance,
/// flipped to face `viewpoint`.
pub fn estimate_normals_toward(
    cloud: &PointCloud,
    k: usize,
    viewpoint: &Vector3<f64>,
) -> PointCloud {
    let index = PointIndex::new(&cloud.points);
    let normals = cloud
        .points
        .iter()
        .map(|p| {
            let nbrs: Vec<Vector3<f64>> = index
                .knn(p, k)
                .iter()
                .map(|&(_, i)| cloud.points[i])
                .collect();
            let Some(mut n) = fit_normal(&nbrs) else {
                return Vector3::zeros();
            };
            if n.dot(&(viewpoint - p)) < 0.0 {
                n = -n;
            }
            n
        })
        .collect();
    PointCloud {
        normals: Some(normals),
        ..cloud.clone()
    }
}

fn fit_normal(pts: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if pts.len() < 3 {
        return None;
    }
    let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let cov = pts.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if l2 <= 1e-24 || l1 <= 1e-9 * l2 {
        return None;
    }
    Some(eig.eigenvectors.column(order[0]).normalize())
}

fn fit_line_normal(pts: &[Vector2<f64>]) -> Option<Vector2<f64>> {
    if pts.len() < 2 {
        return None;
    }
    let mean = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
    let cov = pts.iter().fold(Matrix2::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(cov);
    let (small, large) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    if eig.eigenvalues[large] <= 1e-24 {
        return None;
    }
    Some(eig.eigenvectors.column(small).normalize())
}

/// Normal equations for one correspondence set.
struct Linearization<const N: usize> {
    h: SMatrix<f64, N, N>,
    g: SVector<f64, N>,
    inliers: usize,
    sum_abs: f64,
}

impl<const N: usize> Linearization<N> {
    fn new() -> Self {
        Self {
            h: SMatrix::zeros(),
            g: SVector::zeros(),
            inliers: 0,
            sum_abs: 0.0,
        }
    }

    fn add(&mut self, j: &SVector<f64, N>, r: f64) {
        self.h += j * j.transpose();
        self.g += j * r;
        self.inliers += 1;
        self.sum_abs += r.abs();
    }

    fn mean(&self) -> f64 {
        if self.inliers == 0 {
            0.0
        } else {
            self.sum_abs / self.inliers as f64
        }
    }

    /// Least observable direction of the Jacobi-scaled Hessian, if its
    /// eigenvalue is negligible relative to the largest.
    fn unobservable_direction(&self) -> Option<SVector<f64, N>> {
        let scale = SVector::<f64, N>::from_fn(|i, _| {
            let d = self.h[(i, i)];
            if d > 1e-300 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        });
        if let Some(i) = (0..N).find(|&i| scale[i] == 0.0) {
            return Some(SVector::from_fn(|r, _| if r == i { 1.0 } else { 0.0 }));
        }
        let d = SMatrix::<f64, N, N>::from_diagonal(&scale);
        let scaled = d * self.h * d;
        let eig = SymmetricEigen::new(DMatrix::from_column_slice(N, N, scaled.as_slice()));
        let (imin, lmin) = eig.eigenvalues.argmin();
        let lmax = eig.eigenvalues.max();
        if lmin <= DEGENERACY_RATIO * lmax {
            let v =
                d * SVector::<f64, N>::from_column_slice(eig.eigenvectors.column(imin).as_slice());
            Some(v.normalize())
        } else {
            None
        }
    }
}

struct Outcome<S, const N: usize> {
    state: S,
    lin: Linearization<N>,
    update_small: bool,
    iterations: usize,
    history: Vec<f64>,
}

fn damped_gauss_newton<S, const N: usize>(
    init: S,
    cfg: &RegistrationConfig,
    linearize: impl Fn(&S) -> Linearization<N>,
    step: impl Fn(&S, &SVector<f64, N>) -> S,
) -> Outcome<S, N> {
    let mut state = init;
    let mut lin = linearize(&state);
    let mut history = vec![lin.mean()];
    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;
    let mut update_small = false;
    if lin.inliers == 0 {
        return Outcome {
            state,
            lin,
            update_small,
            iterations,
            history,
        };
    }
    'outer: while iterations < cfg.max_iterations {
        iterations += 1;
        loop {
            let mut a = lin.h;
            for i in 0..N {
                a[(i, i)] += lambda * lin.h[(i, i)].max(1e-12);
            }
            let delta = match a.cholesky() {
                Some(c) => c.solve(&(-lin.g)),
                None => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        break 'outer;
                    }
                    continue;
                }
            };
            if !delta.iter().all(|v| v.is_finite()) {
                break 'outer;
            }
            if delta.norm() < cfg.convergence_eps {
                update_small = true;
                break 'outer;
            }
            let cand = step(&state, &delta);
            let cand_lin = linearize(&cand);
            if cand_lin.inliers > 0 && cand_lin.mean() <= lin.mean() {
                state = cand;
                lin = cand_lin;
                history.push(lin.mean());
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                break 'outer;
            }
        }
    }
    Outcome {
        state,
        lin,
        update_small,
        iterations,
        history,
    }
}

/// Convergence verdict shared by both solvers.
fn verdict<S, const N: usize>(
    out: &Outcome<S, N>,
    total: usize,
    cfg: &RegistrationConfig,
    labels: [&str; N],
) -> (bool, f64, Option<String>) {
    let fraction = (out.lin.inliers as f64 / total as f64).clamp(0.0, 1.0);
    let mean = out.lin.mean();
    let diagnostic = if out.lin.inliers == 0 {
        Some("no correspondences within the gates".to_string())
    } else if let Some(dir) = out.lin.unobservable_direction() {
        let parts: Vec<String> = labels
            .iter()
            .zip(dir.iter())
            .map(|(l, v)| format!("{l}={v:.3}"))
            .collect();
        Some(format!("unobservable direction ({})", parts.join(", ")))
    } else if !out.update_small {
        Some(format!(
            "no convergence after {} iterations",
            out.iterations
        ))
    } else if fraction < cfg.min_inlier_fraction {
        Some(format!(
            "inlier fraction {fraction:.3} below {}",
            cfg.min_inlier_fraction
        ))
    } else if mean > cfg.max_mean_residual {
        Some(format!(
            "mean residual {mean:.4} m above {}",
            cfg.max_mean_residual
        ))
    } else {
        None
    };
    (diagnostic.is_none(), fraction, diagnostic)
}

/// Aligns `source` onto `target`, returning the transform that maps source
/// points into the target frame.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    guess: &RigidTransform,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult, RegistrationError> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(RegistrationError::EmptyCloud("source"));
    }
    if target.is_empty() {
        return Err(RegistrationError::EmptyCloud("target"));
    }
    let target_normals = match &target.normals {
        Some(n) if n.len() == target.len() => n.clone(),
        _ => estimate_normals(target, cfg.normal_k)
            .normals
            .unwrap_or_default(),
    };
    let source_normals = match &source.normals {
        Some(n) if n.len() == source.len() => n.clone(),
        _ => estimate_normals(source, cfg.normal_k)
            .normals
            .unwrap_or_default(),
    };
    let index = PointIndex::new(&target.points);
    let cos_gate = cfg.normal_angle_gate.min(std::f64::consts::FRAC_PI_2).cos();

    let linearize = |t: &RigidTransform| {
        let mut lin = Linearization::<6>::new();
        for (p, ns) in source.points.iter().zip(&source_normals) {
            let q = t.apply_point(p);
            let Some(&(_, j)) = index.nearest_within(&q, cfg.correspondence_gate, 1).first() else {
                continue;
            };
            let nt = &target_normals[j];
            if !normal_is_valid(nt) {
                continue;
            }
            if normal_is_valid(ns) && t.apply_vector(ns).dot(nt).abs() < cos_gate {
                continue;
            }
            let r = nt.dot(&(q - target.points[j]));
            let c = q.cross(nt);
            lin.add(&Vector6::new(nt.x, nt.y, nt.z, c.x, c.y, c.z), r);
        }
        lin
    };
    let step = |t: &RigidTransform, d: &Vector6<f64>| RigidTransform::exp(d).compose(t);

    let out = damped_gauss_newton(*guess, cfg, linearize, step);
    let (converged, inlier_fraction, diagnostic) = verdict(
        &out,
        source.len(),
        cfg,
        ["tx", "ty", "tz", "rx", "ry", "rz"],
    );
    Ok(RegistrationResult {
        transform: out.state,
        converged,
        mean_residual: out.lin.mean(),
        inlier_fraction,
        iterations: out.iterations,
        diagnostic,
        residual_history: out.history,
    })
}

fn scan_normals(points: &[[f64; 2]], index: &PointIndex2) -> Vec<Option<Vector2<f64>>> {
    points
        .iter()
        .map(|p| {
            let nbrs: Vec<Vector2<f64>> = index
                .knn_array(p, SCAN_NORMAL_K)
                .iter()
                .map(|&(_, i)| {
                    let q = index.point(i);
                    Vector2::new(q[0], q[1])
                })
                .collect();
            fit_line_normal(&nbrs)
        })
        .collect()
}

/// Planar point-to-line ICP over `(x, y, yaw)`; the returned pose maps source
/// scan points into the target scan frame.
pub fn match_scans(
    source: &[[f64; 2]],
    target: &[[f64; 2]],
    guess: &Pose2,
    cfg: &RegistrationConfig,
) -> Result<ScanMatchResult, RegistrationError> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(RegistrationError::EmptyCloud("source"));
    }
    if target.is_empty() {
        return Err(RegistrationError::EmptyCloud("target"));
    }
    let index = PointIndex2::from_arrays(target);
    let target_normals = scan_normals(target, &index);
    let source_normals = scan_normals(source, &PointIndex2::from_arrays(source));
    let cos_gate = cfg.normal_angle_gate.min(std::f64::consts::FRAC_PI_2).cos();

    let linearize = |pose: &Pose2| {
        let mut lin = Linearization::<3>::new();
        let (s, c) = pose.yaw.sin_cos();
        for (p, ns) in source.iter().zip(&source_normals) {
            let q = pose.apply(*p);
            let Some(&(_, j)) = index
                .nearest_within_array(&q, cfg.correspondence_gate, 1)
                .first()
            else {
                continue;
            };
            let Some(nt) = target_normals[j] else {
                continue;
            };
            if let Some(ns) = ns {
                let rotated = Vector2::new(c * ns.x - s * ns.y, s * ns.x + c * ns.y);
                if rotated.dot(&nt).abs() < cos_gate {
                    continue;
                }
            }
            let d = Vector2::new(q[0] - target[j][0], q[1] - target[j][1]);
            let r = nt.dot(&d);
            let jac = Vector3::new(nt.x, nt.y, -q[1] * nt.x + q[0] * nt.y);
            lin.add(&jac, r);
        }
        lin
    };
    let step = |pose: &Pose2, d: &Vector3<f64>| Pose2::new(d[0], d[1], d[2]).compose(pose);

    let out = damped_gauss_newton(*guess, cfg, linearize, step);
    let (converged, inlier_fraction, diagnostic) =
        verdict(&out, source.len(), cfg, ["x", "y", "yaw"]);
    Ok(ScanMatchResult {
        pose: out.state,
        converged,
        mean_residual: out.lin.mean(),
        inlier_fraction,
        iterations: out.iterations,
        diagnostic,
        residual_history: out.history,
    })
}
