//! Synthetic scenes and sensor logs with known ground truth.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::acquisition::{AcquisitionLog, Record, RecordKind};
use crate::geometry::{BoundingBox, PointCloud};
use crate::kb::{Atom, KnowledgeBase, LOCATION, PHYSICAL_THING};
use crate::projection::{
    render_depth, render_scan, LaserConfig, PinholeIntrinsics, ProjectionError,
};
use crate::transform::{wrap_angle, Pose2, RigidTransform};

/// Solid object resting on the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub class_name: String,
    pub individual: String,
    /// Footprint center on the floor.
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub half_extents: Vector3<f64>,
}

/// Box-shaped room with floor at z = 0. The world origin is inside.
#[derive(Clone, Debug, PartialEq)]
pub struct Room {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
    pub objects: Vec<SceneObject>,
}

/// Margin added around object extents for annotation boxes.
pub const BOX_MARGIN: f64 = 0.03;

impl Room {
    /// 6 x 4 m room holding a table and a chair.
    pub fn table_and_chair() -> Self {
        Self {
            min: [-1.5, -2.0],
            max: [4.5, 2.0],
            height: 2.5,
            objects: vec![
                SceneObject {
                    class_name: "Table".into(),
                    individual: "table1".into(),
                    x: 3.2,
                    y: 1.1,
                    yaw: 0.2,
                    half_extents: Vector3::new(0.6, 0.4, 0.375),
                },
                SceneObject {
                    class_name: "Chair".into(),
                    individual: "chair1".into(),
                    x: 3.4,
                    y: -1.0,
                    yaw: -0.4,
                    half_extents: Vector3::new(0.25, 0.25, 0.45),
                },
            ],
        }
    }

    /// Room without furniture.
    pub fn empty(min: [f64; 2], max: [f64; 2], height: f64) -> Self {
        Self {
            min,
            max,
            height,
            objects: Vec::new(),
        }
    }

    /// Surface samples on a regular grid of the given spacing: walls, floor,
    /// ceiling and the visible faces of every object.
    pub fn cloud(&self, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        let [x0, y0] = self.min;
        let [x1, y1] = self.max;
        let h = self.height;
        let mut patch = |origin: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>| {
            let (lu, lv) = (u.norm(), v.norm());
            let (nu, nv) = (
                (lu / spacing).round().max(1.0) as usize,
                (lv / spacing).round().max(1.0) as usize,
            );
            for i in 0..=nu {
                for j in 0..=nv {
                    pts.push(origin + u * (i as f64 / nu as f64) + v * (j as f64 / nv as f64));
                }
            }
        };
        let (dx, dy, dz) = (
            Vector3::x() * (x1 - x0),
            Vector3::y() * (y1 - y0),
            Vector3::z() * h,
        );
        patch(Vector3::new(x0, y0, 0.0), dx, dy);
        patch(Vector3::new(x0, y0, h), dx, dy);
        patch(Vector3::new(x0, y0, 0.0), dx, dz);
        patch(Vector3::new(x0, y1, 0.0), dx, dz);
        patch(Vector3::new(x0, y0, 0.0), dy, dz);
        patch(Vector3::new(x1, y0, 0.0), dy, dz);
        for o in &self.objects {
            let r = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), o.yaw);
            let c = Vector3::new(o.x, o.y, o.half_extents.z);
            let e = o.half_extents;
            let ax = r * Vector3::x() * (2.0 * e.x);
            let ay = r * Vector3::y() * (2.0 * e.y);
            let az = Vector3::z() * (2.0 * e.z);
            let corner = c - r * Vector3::new(e.x, e.y, 0.0) - Vector3::z() * e.z;
            patch(corner + az, ax, ay);
            patch(corner, ax, az);
            patch(corner + ay, ax, az);
            patch(corner, ay, az);
            patch(corner + ax, ay, az);
        }
        // Shared patch edges produce duplicates; keep one of each.
        let snap = |v: f64| (v * 1e9).round() / 1e9;
        let mut seen = std::collections::HashSet::new();
        pts.retain(|p| seen.insert([snap(p.x), snap(p.y), snap(p.z)].map(f64::to_bits)));
        PointCloud::new(pts)
    }

    /// Annotation box per object, slightly larger than the object.
    pub fn boxes(&self) -> Vec<BoundingBox> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| BoundingBox {
                id: format!("box{}", i + 1),
                class_name: o.class_name.clone(),
                individual: o.individual.clone(),
                center: Vector3::new(o.x, o.y, o.half_extents.z),
                half_extents: o.half_extents.add_scalar(BOX_MARGIN),
                orientation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), o.yaw),
            })
            .collect()
    }

    /// Classes, individuals and memberships for the room and its objects,
    /// without spatial facts.
    pub fn kb(&self) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        kb.declare_class("Room").expect("valid name");
        kb.assert(Atom::is_a("Room", LOCATION)).expect("declared");
        kb.declare_individual("room1").expect("valid name");
        kb.assert(Atom::instance_of("room1", "Room"))
            .expect("declared");
        for o in &self.objects {
            kb.declare_class(o.class_name.clone()).expect("valid name");
            kb.assert(Atom::is_a(o.class_name.clone(), PHYSICAL_THING))
                .expect("declared");
            kb.declare_individual(o.individual.clone())
                .expect("valid name");
            kb.assert(Atom::instance_of(
                o.individual.clone(),
                o.class_name.clone(),
            ))
            .expect("declared");
            kb.assert(Atom::new(
                "locatedIn",
                vec![
                    crate::kb::Term::name(o.individual.clone()),
                    crate::kb::Term::name("room1"),
                ],
            ))
            .expect("declared");
        }
        kb
    }
}

/// Camera frame convention: z forward, x right, y down. Returns the mount of
/// a forward-looking camera at `height` above the base origin.
pub fn forward_camera_mount(height: f64) -> RigidTransform {
    #[rustfmt::skip]
    let m = Matrix3::new(
        0.0, 0.0, 1.0,
        -1.0, 0.0, 0.0,
        0.0, -1.0, 0.0,
    );
    let r = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m));
    RigidTransform::new(r, Vector3::new(0.0, 0.0, height))
}

/// Planar path through `waypoints`, moving at most `step` meters or
/// `turn` radians between consecutive poses.
pub fn interpolate_path(waypoints: &[Pose2], step: f64, turn: f64) -> Vec<Pose2> {
    let Some(first) = waypoints.first() else {
        return Vec::new();
    };
    let mut out = vec![*first];
    for w in waypoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dyaw = wrap_angle(b.yaw - a.yaw);
        let dist = (b.x - a.x).hypot(b.y - a.y);
        let n = ((dist / step).ceil().max((dyaw.abs() / turn).ceil()) as usize).max(1);
        for i in 1..=n {
            let t = i as f64 / n as f64;
            out.push(Pose2::new(
                a.x + (b.x - a.x) * t,
                a.y + (b.y - a.y) * t,
                wrap_angle(a.yaw + dyaw * t),
            ));
        }
    }
    out
}

/// Sensor setup and noise for [`simulate_log`].
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub intrinsics: PinholeIntrinsics,
    pub camera_mount: RigidTransform,
    /// Laser scanner; `None` disables scans.
    pub laser: Option<(LaserConfig, RigidTransform)>,
    pub odometry: bool,
    /// Odometry noise: standard deviation per meter travelled and per radian turned.
    pub odom_trans_noise: f64,
    pub odom_rot_noise: f64,
    /// Depth noise standard deviation at 1 m, growing with the squared depth.
    pub depth_noise: f64,
    pub splat_px: u32,
    pub dt: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            intrinsics: PinholeIntrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 63.5,
                cy: 47.5,
                width: 128,
                height: 96,
                near: 0.2,
                far: 8.0,
            },
            camera_mount: forward_camera_mount(1.0),
            laser: None,
            odometry: true,
            odom_trans_noise: 0.02,
            odom_rot_noise: 0.02,
            depth_noise: 0.0,
            splat_px: 1,
            dt: 0.1,
            seed: 0,
        }
    }
}

/// Full-circle scanner 0.3 m above the base origin.
pub fn default_laser() -> (LaserConfig, RigidTransform) {
    (
        LaserConfig::default(),
        RigidTransform::from_translation(0.0, 0.0, 0.3),
    )
}

pub const CAMERA: &str = "camera";
pub const LASER: &str = "laser";

/// Renders one depth frame (and optionally odometry and a scan) at every
/// pose of `path`, returning the log and the true base poses. Depth image
/// paths are `depth/NNNNNN.png`.
pub fn simulate_log(
    scene: &PointCloud,
    path: &[Pose2],
    cfg: &SimConfig,
) -> Result<AcquisitionLog, ProjectionError> {
    cfg.intrinsics.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut log = AcquisitionLog::default();
    log.intrinsics.insert(CAMERA.into(), cfg.intrinsics);
    log.mounts.insert(CAMERA.into(), cfg.camera_mount);
    if let Some((lc, mount)) = &cfg.laser {
        lc.validate()?;
        log.laser = Some(*lc);
        log.mounts.insert(LASER.into(), *mount);
    }
    let mut odom = path.first().copied().unwrap_or_else(Pose2::identity);
    for (i, truth) in path.iter().enumerate() {
        let stamp = i as f64 * cfg.dt;
        if i > 0 {
            let rel = path[i - 1].inverse().compose(truth);
            let d = rel.x.hypot(rel.y);
            let noisy = Pose2::new(
                rel.x + cfg.odom_trans_noise * d * unit.sample(&mut rng),
                rel.y + cfg.odom_trans_noise * d * unit.sample(&mut rng),
                rel.yaw + cfg.odom_rot_noise * rel.yaw.abs().max(0.1 * d) * unit.sample(&mut rng),
            );
            odom = odom.compose(&noisy);
        }
        let base = truth.to_rigid();
        if cfg.odometry {
            log.records.push(Record {
                stamp,
                kind: RecordKind::Odom(odom.to_rigid()),
            });
        }
        if let Some((lc, mount)) = &cfg.laser {
            log.records.push(Record {
                stamp,
                kind: RecordKind::Laser(render_scan(scene, &base.compose(mount), lc)?),
            });
        }
        let mut image = render_depth(
            scene,
            &base.compose(&cfg.camera_mount),
            &cfg.intrinsics,
            cfg.splat_px,
        );
        if cfg.depth_noise > 0.0 {
            for z in image.depth.iter_mut().filter(|z| **z > 0.0) {
                *z = (*z + cfg.depth_noise * *z * *z * unit.sample(&mut rng))
                    .max(cfg.intrinsics.near);
            }
        }
        log.records.push(Record {
            stamp,
            kind: RecordKind::Depth {
                sensor: CAMERA.into(),
                path: format!("depth/{i:06}.png"),
                image,
            },
        });
    }
    Ok(log)
}

/// Default survey of [`Room::table_and_chair`]: a drive along the room with
/// turns toward both objects and back to the start.
pub fn survey_path() -> Vec<Pose2> {
    let w = [
        Pose2::new(0.0, 0.0, 0.0),
        Pose2::new(0.0, 0.0, 0.5),
        Pose2::new(0.0, 0.0, -0.5),
        Pose2::new(0.0, 0.0, 0.0),
        Pose2::new(1.0, 0.0, 0.0),
        Pose2::new(1.0, 0.0, 0.6),
        Pose2::new(1.0, 0.0, -0.6),
        Pose2::new(1.0, 0.0, 0.0),
        Pose2::new(0.0, 0.0, 0.0),
    ];
    interpolate_path(&w, 0.1, 0.1)
}
