//! Local-map construction from acquisition logs and pose-graph optimization.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionLog;
use crate::geometry::PointCloud;
use crate::projection::unproject;
use crate::registration::{
    estimate_normals, match_scans, register, RegistrationConfig, RegistrationError,
    RegistrationResult,
};
use crate::transform::{Pose2, RigidTransform};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MappingError {
    #[error("log contains no depth frames")]
    NoDepthFrames,
    #[error("no intrinsics for sensor `{0}`")]
    MissingIntrinsics(String),
    #[error("log timestamps decrease")]
    Unordered,
    #[error(
        "cannot initialize: no odometry or laser and the first frame pair failed to register ({0})"
    )]
    UnrecoverableInitialization(String),
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error("duplicate node {0}")]
    DuplicateNode(u32),
    #[error("edge endpoints must differ (node {0})")]
    SelfEdge(u32),
    #[error("information matrix of edge {from}->{to} is not symmetric positive-definite")]
    BadInformation { from: u32, to: u32 },
    #[error("pose graph is disconnected: {0}")]
    Disconnected(Components),
    #[error("no cloud for node {0}")]
    MissingCloud(u32),
    #[error("invalid builder config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

/// Connected components of a disconnected graph, for error messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Components(pub Vec<Vec<u32>>);

impl fmt::Display for Components {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|c| {
                let ids: Vec<String> = c.iter().map(u32::to_string).collect();
                format!("{{{}}}", ids.join(", "))
            })
            .collect();
        write!(f, "{} components {}", self.0.len(), parts.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuilderConfig {
    pub trans_trigger: f64,
    pub rot_trigger: f64,
    pub voxel_size: f64,
    /// Coarser voxel used for the clouds fed to frame-to-map registration.
    pub registration_voxel: f64,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            trans_trigger: 1.0,
            rot_trigger: 0.5,
            voxel_size: 0.02,
            registration_voxel: 0.05,
        }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<(), MappingError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ![
            self.trans_trigger,
            self.rot_trigger,
            self.voxel_size,
            self.registration_voxel,
        ]
        .into_iter()
        .all(ok)
        {
            return Err(MappingError::InvalidConfig(
                "triggers and voxel sizes must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalMap {
    pub id: u32,
    /// Points in the local frame (the robot base at the first frame).
    pub cloud: PointCloud,
    pub origin_pose: RigidTransform,
    /// Indices of the depth frames integrated into this map.
    pub frames: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub pose: RigidTransform,
    /// Cloud file relative to the dataset directory.
    pub cloud: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge {
    pub from: u32,
    pub to: u32,
    /// Pose of `to` expressed in the frame of `from`.
    pub measurement: RigidTransform,
    pub information: Matrix6<f64>,
}

impl GraphEdge {
    /// Residual `log(Z^-1 * Ti^-1 * Tj)`.
    pub fn error(&self, ti: &RigidTransform, tj: &RigidTransform) -> Vector6<f64> {
        self.measurement
            .inverse()
            .compose(&ti.inverse())
            .compose(tj)
            .log()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraph {
    pub nodes: BTreeMap<u32, GraphNode>,
    pub edges: Vec<GraphEdge>,
}

fn is_spd(m: &Matrix6<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
        && (m - m.transpose()).abs().max() <= 1e-9 * m.abs().max().max(1.0)
        && m.cholesky().is_some()
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(
        &mut self,
        id: u32,
        pose: RigidTransform,
        cloud: Option<String>,
    ) -> Result<(), MappingError> {
        if self.nodes.contains_key(&id) {
            return Err(MappingError::DuplicateNode(id));
        }
        self.nodes.insert(id, GraphNode { pose, cloud });
        Ok(())
    }

    pub fn add_edge(
        &mut self,
        from: u32,
        to: u32,
        measurement: RigidTransform,
        information: Matrix6<f64>,
    ) -> Result<(), MappingError> {
        let edge = GraphEdge {
            from,
            to,
            measurement,
            information,
        };
        self.check_edge(&edge)?;
        self.edges.push(edge);
        Ok(())
    }

    fn check_edge(&self, e: &GraphEdge) -> Result<(), MappingError> {
        for id in [e.from, e.to] {
            if !self.nodes.contains_key(&id) {
                return Err(MappingError::UnknownNode(id));
            }
        }
        if e.from == e.to {
            return Err(MappingError::SelfEdge(e.from));
        }
        if !is_spd(&e.information) {
            return Err(MappingError::BadInformation {
                from: e.from,
                to: e.to,
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), MappingError> {
        self.edges.iter().try_for_each(|e| self.check_edge(e))
    }

    pub fn pose(&self, id: u32) -> Option<&RigidTransform> {
        self.nodes.get(&id).map(|n| &n.pose)
    }

    /// Connected components, each sorted, ordered by smallest id.
    pub fn components(&self) -> Vec<Vec<u32>> {
        let ids: Vec<u32> = self.nodes.keys().copied().collect();
        let pos: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            if let (Some(&a), Some(&b)) = (pos.get(&e.from), pos.get(&e.to)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for (i, &id) in ids.iter().enumerate() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(id);
        }
        groups.into_values().collect()
    }

    pub fn chi2(&self) -> f64 {
        chi2_with(&self.edges, |id| self.nodes[&id].pose)
    }
}

fn chi2_with(edges: &[GraphEdge], pose: impl Fn(u32) -> RigidTransform) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = e.error(&pose(e.from), &pose(e.to));
            (r.transpose() * e.information * r)[(0, 0)]
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizeReport {
    pub chi2_before: f64,
    pub chi2_after: f64,
    pub iterations: usize,
}

const JACOBIAN_STEP: f64 = 1e-6;

/// Levenberg-Marquardt over right perturbations `T <- T * exp(d)` of every
/// node but the lowest id, which fixes the gauge.
pub fn optimize(
    graph: &PoseGraph,
    max_iter: usize,
) -> Result<(PoseGraph, OptimizeReport), MappingError> {
    graph.validate()?;
    let comps = graph.components();
    if comps.len() > 1 {
        return Err(MappingError::Disconnected(Components(comps)));
    }
    let chi2_before = graph.chi2();
    let mut out = graph.clone();
    let free: Vec<u32> = graph.nodes.keys().copied().skip(1).collect();
    if free.is_empty() || graph.edges.is_empty() {
        return Ok((
            out,
            OptimizeReport {
                chi2_before,
                chi2_after: chi2_before,
                iterations: 0,
            },
        ));
    }
    let slot: BTreeMap<u32, usize> = free.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let dim = 6 * free.len();
    let mut poses: BTreeMap<u32, RigidTransform> =
        graph.nodes.iter().map(|(&id, n)| (id, n.pose)).collect();
    let mut chi2 = chi2_before;
    let mut lambda = 1e-4;
    let mut iterations = 0;

    while iterations < max_iter && chi2 > 0.0 {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for e in &graph.edges {
            let (ti, tj) = (poses[&e.from], poses[&e.to]);
            let r = e.error(&ti, &tj);
            let jac = |which: usize| {
                let mut j = Matrix6::zeros();
                for k in 0..6 {
                    let mut d = Vector6::zeros();
                    d[k] = JACOBIAN_STEP;
                    let plus = RigidTransform::exp(&d);
                    let minus = RigidTransform::exp(&-d);
                    let (ep, em) = if which == 0 {
                        (
                            e.error(&ti.compose(&plus), &tj),
                            e.error(&ti.compose(&minus), &tj),
                        )
                    } else {
                        (
                            e.error(&ti, &tj.compose(&plus)),
                            e.error(&ti, &tj.compose(&minus)),
                        )
                    };
                    j.set_column(k, &((ep - em) / (2.0 * JACOBIAN_STEP)));
                }
                j
            };
            let blocks = [(slot.get(&e.from), jac(0)), (slot.get(&e.to), jac(1))];
            for (si, ji) in &blocks {
                let Some(&si) = si else { continue };
                let g = ji.transpose() * e.information * r;
                for k in 0..6 {
                    b[6 * si + k] += g[k];
                }
                for (sj, jj) in &blocks {
                    let Some(&sj) = sj else { continue };
                    let blk = ji.transpose() * e.information * jj;
                    for r_ in 0..6 {
                        for c_ in 0..6 {
                            h[(6 * si + r_, 6 * sj + c_)] += blk[(r_, c_)];
                        }
                    }
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = h.clone();
            for k in 0..dim {
                a[(k, k)] += lambda * h[(k, k)].max(1e-9);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&b));
            let cand: BTreeMap<u32, RigidTransform> = poses
                .iter()
                .map(|(&id, t)| {
                    let t = match slot.get(&id) {
                        Some(&s) => t.compose(&RigidTransform::exp(&Vector6::from_column_slice(
                            &delta.as_slice()[6 * s..6 * s + 6],
                        ))),
                        None => *t,
                    };
                    (id, t)
                })
                .collect();
            let c = chi2_with(&graph.edges, |id| cand[&id]);
            if c < chi2 {
                let small = delta.norm() < 1e-12 || chi2 - c <= 1e-15 * chi2;
                poses = cand;
                chi2 = c;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    for (id, n) in out.nodes.iter_mut() {
        n.pose = poses[id];
    }
    Ok((
        out,
        OptimizeReport {
            chi2_before,
            chi2_after: chi2,
            iterations,
        },
    ))
}

/// Information matrix for an edge backed by `inliers` correspondences.
pub fn default_information(inliers: usize) -> Matrix6<f64> {
    Matrix6::identity() * (inliers.max(1) as f64)
}

fn scan_motion(
    log: &AcquisitionLog,
    prev: &[f64],
    cur: &[f64],
    reg_cfg: &RegistrationConfig,
) -> Option<RigidTransform> {
    let laser = log.laser.as_ref()?;
    let a = laser.scan_points(prev);
    let b = laser.scan_points(cur);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let res = match_scans(&b, &a, &Pose2::identity(), reg_cfg).ok()?;
    if !res.converged {
        log::warn!(
            "scan matcher failed: {}",
            res.diagnostic.unwrap_or_default()
        );
        return None;
    }
    let mount = log.mount("laser");
    Some(
        mount
            .compose(&res.pose.to_rigid())
            .compose(&mount.inverse()),
    )
}

struct Builder<'a> {
    cfg: &'a BuilderConfig,
    reg_cfg: &'a RegistrationConfig,
    maps: Vec<LocalMap>,
    graph: PoseGraph,
    /// Coarse copy of the current map with normals, the registration target.
    target: PointCloud,
}

impl Builder<'_> {
    fn start(
        &mut self,
        origin: RigidTransform,
        cloud: PointCloud,
        frames: Vec<usize>,
        inliers: usize,
    ) {
        let id = self.maps.len() as u32;
        self.graph
            .add_node(id, origin, Some(format!("clouds/node_{id}.ply")))
            .expect("fresh id");
        if let Some(prev) = self.maps.last() {
            let z = prev.origin_pose.inverse().compose(&origin);
            self.graph
                .add_edge(prev.id, id, z, default_information(inliers))
                .expect("valid edge");
        }
        self.maps.push(LocalMap {
            id,
            cloud,
            origin_pose: origin,
            frames,
        });
        self.refresh_target();
    }

    fn refresh_target(&mut self) {
        let voxel = self.cfg.registration_voxel;
        let coarse = self.current().cloud.voxel_downsample(voxel);
        self.target = estimate_normals(&coarse, self.reg_cfg.normal_k);
    }

    fn current(&mut self) -> &mut LocalMap {
        self.maps.last_mut().expect("started")
    }

    fn integrate(&mut self, frame: usize, cloud: &PointCloud, rel: &RigidTransform) {
        let voxel = self.cfg.voxel_size;
        let map = self.current();
        map.cloud.extend(&cloud.transformed(rel));
        map.cloud = map.cloud.voxel_downsample(voxel);
        map.frames.push(frame);
        self.refresh_target();
    }
}

/// Splits the depth stream into local maps. A new map starts when motion
/// since the current map's origin exceeds a trigger or when a frame fails to
/// register; consecutive maps are linked by an edge.
pub fn build_local_maps(
    log: &AcquisitionLog,
    cfg: &BuilderConfig,
    reg_cfg: &RegistrationConfig,
) -> Result<(Vec<LocalMap>, PoseGraph), MappingError> {
    cfg.validate()?;
    reg_cfg.validate()?;
    if !log.is_ordered() {
        return Err(MappingError::Unordered);
    }
    let frames = log.frames();
    if frames.is_empty() {
        return Err(MappingError::NoDepthFrames);
    }
    let use_odom = log.has_odometry();
    let use_laser = !use_odom && log.has_laser();

    let mut b = Builder {
        cfg,
        reg_cfg,
        maps: Vec::new(),
        graph: PoseGraph::new(),
        target: PointCloud::default(),
    };
    let mut pending: Vec<usize> = Vec::new();
    let mut prev_pose = RigidTransform::identity();
    let mut prev_odom: Option<RigidTransform> = None;
    let mut prev_scan: Option<&[f64]> = None;
    let mut registered_pairs = 0usize;

    for (i, f) in frames.iter().enumerate() {
        let k = log
            .intrinsics
            .get(f.sensor)
            .ok_or_else(|| MappingError::MissingIntrinsics(f.sensor.to_string()))?;
        let cloud = unproject(f.image, k, &log.mount(f.sensor)).voxel_downsample(cfg.voxel_size);

        let guess_world = match (use_odom, use_laser) {
            (true, _) => match (prev_odom, f.odom) {
                (Some(a), Some(c)) => prev_pose.compose(&a.inverse().compose(&c)),
                _ => prev_pose,
            },
            (false, true) => match (prev_scan, f.scan) {
                (Some(a), Some(c)) => scan_motion(log, a, c, reg_cfg)
                    .map(|m| prev_pose.compose(&m))
                    .unwrap_or(prev_pose),
                _ => prev_pose,
            },
            _ => prev_pose,
        };
        if f.odom.is_some() {
            prev_odom = f.odom;
        }
        if f.scan.is_some() {
            prev_scan = f.scan;
        }

        if cloud.is_empty() {
            // Frames without valid depth join the current map unchanged.
            match b.maps.last_mut() {
                Some(m) => m.frames.push(i),
                None => pending.push(i),
            }
            prev_pose = guess_world;
            continue;
        }
        if b.maps.is_empty() {
            pending.push(i);
            b.start(guess_world, cloud, std::mem::take(&mut pending), 1);
            prev_pose = guess_world;
            continue;
        }

        let origin = b.current().origin_pose;
        let guess_rel = origin.inverse().compose(&guess_world);
        let source = cloud.voxel_downsample(cfg.registration_voxel);
        let res: RegistrationResult = register(&source, &b.target, &guess_rel, reg_cfg)?;
        registered_pairs += 1;
        if res.converged {
            let rel = res.transform;
            let pose = origin.compose(&rel);
            let inliers = (res.inlier_fraction * source.len() as f64).round() as usize;
            if rel.translation_norm() > cfg.trans_trigger || rel.rotation_angle() > cfg.rot_trigger
            {
                b.start(pose, cloud, vec![i], inliers);
            } else {
                b.integrate(i, &cloud, &rel);
            }
            prev_pose = pose;
        } else {
            let why = res.diagnostic.unwrap_or_default();
            if !use_odom && !use_laser && registered_pairs == 1 {
                return Err(MappingError::UnrecoverableInitialization(why));
            }
            log::info!("frame {i}: registration failed ({why}); starting a new local map");
            b.start(guess_world, cloud, vec![i], 1);
            prev_pose = guess_world;
        }
    }
    if b.maps.is_empty() {
        return Err(MappingError::NoDepthFrames);
    }
    if !pending.is_empty() {
        b.maps[0].frames.extend(pending);
    }
    for m in &mut b.maps {
        m.frames.sort_unstable();
    }
    Ok((b.maps, b.graph))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManualEdgeOutcome {
    pub accepted: bool,
    pub registration: RegistrationResult,
    pub diagnostic: Option<String>,
}

/// Registers node `a`'s cloud onto node `b`'s and, on convergence, appends
/// the edge `a -> b`. `guess` maps `a`'s frame into `b`'s; by default it is
/// taken from the current node poses.
pub fn add_manual_edge(
    graph: &mut PoseGraph,
    clouds: &BTreeMap<u32, PointCloud>,
    a: u32,
    b: u32,
    guess: Option<RigidTransform>,
    reg_cfg: &RegistrationConfig,
) -> Result<ManualEdgeOutcome, MappingError> {
    let (ta, tb) = match (graph.pose(a), graph.pose(b)) {
        (Some(ta), Some(tb)) => (*ta, *tb),
        (None, _) => return Err(MappingError::UnknownNode(a)),
        (_, None) => return Err(MappingError::UnknownNode(b)),
    };
    if a == b {
        return Err(MappingError::SelfEdge(a));
    }
    let ca = clouds.get(&a).ok_or(MappingError::MissingCloud(a))?;
    let cb = clouds.get(&b).ok_or(MappingError::MissingCloud(b))?;
    let guess = guess.unwrap_or_else(|| tb.inverse().compose(&ta));
    let res = register(ca, cb, &guess, reg_cfg)?;
    if !res.converged {
        let why = res.diagnostic.clone().unwrap_or_default();
        return Ok(ManualEdgeOutcome {
            accepted: false,
            registration: res,
            diagnostic: Some(format!("edge {a}->{b} rejected: {why}")),
        });
    }
    let inliers = (res.inlier_fraction * ca.len() as f64).round() as usize;
    graph.add_edge(a, b, res.transform.inverse(), default_information(inliers))?;
    Ok(ManualEdgeOutcome {
        accepted: true,
        registration: res,
        diagnostic: None,
    })
}

/// Concatenates every local cloud at its node pose and downsamples.
pub fn export_global_cloud(maps: &[LocalMap], graph: &PoseGraph, voxel_size: f64) -> PointCloud {
    let mut out = PointCloud::default();
    for m in maps {
        let pose = graph.pose(m.id).copied().unwrap_or(m.origin_pose);
        out.extend(&m.cloud.transformed(&pose));
    }
    out.voxel_downsample(voxel_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(x: f64, y: f64, yaw: f64) -> RigidTransform {
        Pose2::new(x, y, yaw).to_rigid()
    }

    fn noisy(rng: &mut ChaCha8Rng, p: &RigidTransform, s: f64) -> RigidTransform {
        let d = Vector6::from_fn(|_, _| rng.gen_range(-s..s));
        p.compose(&RigidTransform::exp(&d))
    }

    fn chain(rng: &mut ChaCha8Rng) -> (PoseGraph, Vec<RigidTransform>) {
        let truth = vec![t(0.0, 0.0, 0.0), t(1.0, 0.0, 0.3), t(1.5, 1.0, 1.0)];
        let mut g = PoseGraph::new();
        for (i, p) in truth.iter().enumerate() {
            let init = if i == 0 { *p } else { noisy(rng, p, 0.2) };
            g.add_node(i as u32, init, None).unwrap();
        }
        for i in 0..2u32 {
            let z = truth[i as usize].inverse().compose(&truth[i as usize + 1]);
            g.add_edge(i, i + 1, z, Matrix6::identity()).unwrap();
        }
        (g, truth)
    }

    #[test]
    fn consistent_chain_reaches_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (g, truth) = chain(&mut rng);
        let (opt, rep) = optimize(&g, 50).unwrap();
        assert!(rep.chi2_after < 1e-12, "{rep:?}");
        assert!(rep.chi2_after < rep.chi2_before);
        for (i, p) in truth.iter().enumerate() {
            let (a, d) = opt.nodes[&(i as u32)].pose.difference(p);
            assert!(a < 1e-6 && d < 1e-6);
        }
    }

    #[test]
    fn single_node_unchanged() {
        let mut g = PoseGraph::new();
        g.add_node(0, t(1.0, 2.0, 0.5), None).unwrap();
        let (opt, rep) = optimize(&g, 10).unwrap();
        assert_eq!(opt, g);
        assert_eq!(rep.chi2_after, 0.0);
    }

    #[test]
    fn disconnected_graph_names_components() {
        let mut g = PoseGraph::new();
        for i in 0..4 {
            g.add_node(i, RigidTransform::identity(), None).unwrap();
        }
        g.add_edge(0, 1, RigidTransform::identity(), Matrix6::identity())
            .unwrap();
        g.add_edge(2, 3, RigidTransform::identity(), Matrix6::identity())
            .unwrap();
        let err = optimize(&g, 10).unwrap_err();
        assert_eq!(
            err.to_string(),
            "pose graph is disconnected: 2 components {0, 1} {2, 3}"
        );
    }

    #[test]
    fn rejects_bad_edges() {
        let mut g = PoseGraph::new();
        g.add_node(0, RigidTransform::identity(), None).unwrap();
        g.add_node(1, RigidTransform::identity(), None).unwrap();
        assert!(matches!(
            g.add_edge(0, 5, RigidTransform::identity(), Matrix6::identity()),
            Err(MappingError::UnknownNode(5))
        ));
        assert!(g
            .add_edge(0, 1, RigidTransform::identity(), -Matrix6::identity())
            .is_err());
        assert!(g
            .add_edge(1, 1, RigidTransform::identity(), Matrix6::identity())
            .is_err());
    }

    #[test]
    fn gauge_follows_common_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (g, _) = chain(&mut rng);
        let common = RigidTransform::from_axis_angle(
            Vector3::new(1.0, 2.0, 3.0),
            0.7,
            Vector3::new(3.0, -1.0, 2.0),
        );
        let mut moved = g.clone();
        for n in moved.nodes.values_mut() {
            n.pose = common.compose(&n.pose);
        }
        let (a, _) = optimize(&g, 50).unwrap();
        let (b, _) = optimize(&moved, 50).unwrap();
        for (id, n) in &a.nodes {
            let (ang, d) = common.compose(&n.pose).difference(&b.nodes[id].pose);
            assert!(ang < 1e-6 && d < 1e-6);
        }
    }

    #[test]
    fn redundant_edge_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (g, _) = chain(&mut rng);
        let (opt, _) = optimize(&g, 50).unwrap();
        let mut twice = opt.clone();
        let e = twice.edges[0].clone();
        twice.edges.push(e);
        let (again, _) = optimize(&twice, 50).unwrap();
        for (id, n) in &opt.nodes {
            let (a, d) = n.pose.difference(&again.nodes[id].pose);
            assert!(a < 1e-9 && d < 1e-9);
        }
    }

    #[test]
    fn export_single_map_at_identity() {
        let cloud = PointCloud::new(vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ]);
        let maps = vec![LocalMap {
            id: 0,
            cloud: cloud.clone(),
            origin_pose: RigidTransform::identity(),
            frames: vec![0],
        }];
        let mut g = PoseGraph::new();
        g.add_node(0, RigidTransform::identity(), None).unwrap();
        assert_eq!(export_global_cloud(&maps, &g, 0.0), cloud);
    }

    #[test]
    fn manual_edge_unknown_and_rejected() {
        let mut g = PoseGraph::new();
        g.add_node(0, RigidTransform::identity(), None).unwrap();
        g.add_node(1, t(100.0, 0.0, 0.0), None).unwrap();
        let clouds: BTreeMap<u32, PointCloud> = BTreeMap::new();
        assert!(matches!(
            add_manual_edge(&mut g, &clouds, 0, 7, None, &RegistrationConfig::default()),
            Err(MappingError::UnknownNode(7))
        ));
        let pts: Vec<Vector3<f64>> = (0..400)
            .map(|i| Vector3::new((i % 20) as f64 * 0.1, (i / 20) as f64 * 0.1, 0.0))
            .collect();
        let mut clouds = BTreeMap::new();
        clouds.insert(0, PointCloud::new(pts.clone()));
        clouds.insert(
            1,
            PointCloud::new(
                pts.iter()
                    .map(|p| p + Vector3::new(0.0, 0.0, 30.0))
                    .collect(),
            ),
        );
        let before = g.clone();
        let out = add_manual_edge(
            &mut g,
            &clouds,
            0,
            1,
            Some(RigidTransform::identity()),
            &Default::default(),
        )
        .unwrap();
        assert!(!out.accepted);
        assert!(out.diagnostic.is_some());
        assert_eq!(g, before);
    }
}
