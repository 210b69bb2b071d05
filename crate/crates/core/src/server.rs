//! HTTP/JSON API over one dataset directory.
//!
//! Reads are served from an immutable snapshot. Writes are queued to a
//! single writer task that applies them to a copy, persists the touched
//! files, swaps the snapshot and answers with the current violations.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot};

use crate::geometry::{BoundingBox, PointCloud};
use crate::io::{
    fuse, read_node_clouds, write_boxes, write_graph, write_kb, Dataset, DatasetLock, IoError,
};
use crate::kb::{is_valid_identifier, Atom, Term, INSTANCE_OF, IS_A, THING};
use crate::map::{map_warnings, validate_map};
use crate::mapping::{add_manual_edge, optimize, PoseGraph};
use crate::registration::RegistrationConfig;
use crate::transform::RigidTransform;
use crate::violation::Violation;

/// Upper bound on the number of points served by `/api/map`.
pub const MAX_SERVED_POINTS: usize = 500_000;
pub const DEFAULT_CHUNK: usize = 50_000;
const OPTIMIZE_ITERATIONS: usize = 100;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(m: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: m.into(),
        }
    }

    fn not_found(m: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: m.into(),
        }
    }

    fn internal(m: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: m.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// What a write touched, so only those files are rewritten.
#[derive(Default)]
struct Touched {
    graph: bool,
    annotations: bool,
}

type Job = Box<dyn FnOnce(&mut Snapshot) -> Result<(Value, Touched), ApiError> + Send>;

#[derive(Clone)]
struct Snapshot {
    dataset: Dataset,
    node_clouds: Arc<BTreeMap<u32, PointCloud>>,
    decimated: Arc<PointCloud>,
}

#[derive(Clone)]
pub struct AppState {
    snapshot: Arc<RwLock<Arc<Snapshot>>>,
    writer: mpsc::Sender<(Job, oneshot::Sender<Result<Value, ApiError>>)>,
    reg_cfg: RegistrationConfig,
}

/// Voxel subsample doubling the voxel size until at most `max` points remain.
pub fn decimate(cloud: &PointCloud, max: usize) -> PointCloud {
    if cloud.len() <= max {
        return cloud.clone();
    }
    let mut voxel = 0.01;
    loop {
        let d = cloud.voxel_downsample(voxel);
        if d.len() <= max {
            return d;
        }
        voxel *= 2.0;
    }
}

impl AppState {
    /// Loads the dataset and starts the writer task; must run inside a
    /// tokio runtime. The returned lock must be held while serving.
    pub fn open(dir: impl Into<PathBuf>) -> Result<(Self, DatasetLock), IoError> {
        let dataset = Dataset::open(dir)?;
        let lock = DatasetLock::acquire(&dataset.dir)?;
        let node_clouds = match &dataset.graph {
            Some(g) => read_node_clouds(&dataset.dir, g)?,
            None => BTreeMap::new(),
        };
        let decimated = dataset
            .cloud
            .as_ref()
            .map(|c| decimate(c, MAX_SERVED_POINTS))
            .unwrap_or_default();
        let snapshot = Arc::new(RwLock::new(Arc::new(Snapshot {
            dataset,
            node_clouds: Arc::new(node_clouds),
            decimated: Arc::new(decimated),
        })));
        let (tx, mut rx) = mpsc::channel::<(Job, oneshot::Sender<Result<Value, ApiError>>)>(64);
        let shared = snapshot.clone();
        tokio::spawn(async move {
            while let Some((job, reply)) = rx.recv().await {
                let current = shared.read().expect("snapshot lock").clone();
                let mut next = (*current).clone();
                let result = job(&mut next).and_then(|(mut body, touched)| {
                    persist(&next.dataset, &touched)?;
                    body["violations"] = json!(violations(&next.dataset));
                    *shared.write().expect("snapshot lock") = Arc::new(next);
                    Ok(body)
                });
                let _ = reply.send(result);
            }
        });
        Ok((
            Self {
                snapshot,
                writer: tx,
                reg_cfg: RegistrationConfig::default(),
            },
            lock,
        ))
    }

    fn read(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    async fn write(&self, job: Job) -> ApiResult {
        let (tx, rx) = oneshot::channel();
        self.writer
            .send((job, tx))
            .await
            .map_err(|_| ApiError::internal("writer stopped"))?;
        rx.await
            .map_err(|_| ApiError::internal("writer dropped the request"))?
            .map(Json)
    }
}

fn persist(ds: &Dataset, touched: &Touched) -> Result<(), ApiError> {
    let io = |e: IoError| ApiError::internal(e.to_string());
    if touched.graph {
        if let Some(g) = &ds.graph {
            write_graph(&ds.dir.join(crate::io::GRAPH_FILE), g).map_err(io)?;
        }
    }
    if touched.annotations {
        write_boxes(&ds.dir.join(crate::io::BOXES_FILE), &ds.boxes).map_err(io)?;
        write_kb(&ds.dir.join(crate::io::KB_FILE), &ds.kb).map_err(io)?;
    }
    Ok(())
}

fn violations(ds: &Dataset) -> Vec<Violation> {
    let map = ds.semantic_map();
    let mut v = validate_map(&map);
    v.extend(map_warnings(&map));
    v
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/map", get(get_map))
        .route("/api/graph", get(get_graph))
        .route("/api/edges", post(post_edge))
        .route("/api/optimize", post(post_optimize))
        .route("/api/boxes", get(get_boxes).post(post_box))
        .route("/api/boxes/:id", axum::routing::delete(delete_box))
        .route("/api/boxes/:id/class", post(post_box_class))
        .route("/api/hierarchy", get(get_hierarchy))
        .with_state(state)
}

/// Serves `dir` on `addr` until the process ends.
pub async fn serve(dir: PathBuf, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let (state, _lock) = AppState::open(dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn pose_json(t: &RigidTransform) -> Value {
    json!(t.to_components())
}

fn parse_pose(v: &[f64]) -> Result<RigidTransform, ApiError> {
    match v {
        [tx, ty, tz, qx, qy, qz, qw] => {
            RigidTransform::from_components([*tx, *ty, *tz], [*qx, *qy, *qz, *qw]).ok_or_else(
                || ApiError::bad_request("pose must be finite with a non-zero quaternion"),
            )
        }
        _ => Err(ApiError::bad_request(
            "pose must have 7 values: tx ty tz qx qy qz qw",
        )),
    }
}

#[derive(Deserialize)]
struct MapQuery {
    chunk: Option<usize>,
    chunk_size: Option<usize>,
}

async fn get_map(State(st): State<AppState>, Query(q): Query<MapQuery>) -> ApiResult {
    let snap = st.read();
    let cloud = &snap.decimated;
    let size = q.chunk_size.unwrap_or(DEFAULT_CHUNK).max(1);
    let chunks = cloud.len().div_ceil(size);
    let chunk = q.chunk.unwrap_or(0);
    if chunk > 0 && chunk >= chunks {
        return Err(ApiError::not_found(format!(
            "chunk {chunk} out of range ({chunks} chunks)"
        )));
    }
    let range = (chunk * size).min(cloud.len())..((chunk + 1) * size).min(cloud.len());
    let points: Vec<[f64; 3]> = cloud.points[range.clone()]
        .iter()
        .map(|p| [p.x, p.y, p.z])
        .collect();
    let colors = cloud.colors.as_ref().map(|c| c[range].to_vec());
    Ok(Json(json!({
        "frame": snap.dataset.frame_name(),
        "total_points": cloud.len(),
        "chunk": chunk,
        "chunks": chunks,
        "points": points,
        "colors": colors,
    })))
}

fn graph_json(g: &PoseGraph) -> Value {
    let nodes: Vec<Value> = g
        .nodes
        .iter()
        .map(|(id, n)| json!({ "id": id, "pose": pose_json(&n.pose), "cloud": n.cloud }))
        .collect();
    let edges: Vec<Value> = g
        .edges
        .iter()
        .map(|e| {
            let mut info = Vec::with_capacity(21);
            for r in 0..6 {
                for c in r..6 {
                    info.push(e.information[(r, c)]);
                }
            }
            json!({ "from": e.from, "to": e.to, "measurement": pose_json(&e.measurement), "information": info })
        })
        .collect();
    json!({ "nodes": nodes, "edges": edges, "chi2": g.chi2() })
}

async fn get_graph(State(st): State<AppState>) -> ApiResult {
    let snap = st.read();
    let g = snap
        .dataset
        .graph
        .as_ref()
        .ok_or_else(|| ApiError::not_found("dataset has no pose graph"))?;
    Ok(Json(graph_json(g)))
}

#[derive(Deserialize)]
struct EdgeRequest {
    a: u32,
    b: u32,
    guess: Option<Vec<f64>>,
}

async fn post_edge(State(st): State<AppState>, Json(req): Json<EdgeRequest>) -> ApiResult {
    let guess = req.guess.as_deref().map(parse_pose).transpose()?;
    let reg_cfg = st.reg_cfg.clone();
    st.write(Box::new(move |snap: &mut Snapshot| {
        let graph = snap
            .dataset
            .graph
            .as_mut()
            .ok_or_else(|| ApiError::not_found("dataset has no pose graph"))?;
        let outcome = add_manual_edge(graph, &snap.node_clouds, req.a, req.b, guess, &reg_cfg)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let touched = Touched {
            graph: outcome.accepted,
            ..Default::default()
        };
        let mut body =
            serde_json::to_value(&outcome).map_err(|e| ApiError::internal(e.to_string()))?;
        body["chi2"] = json!(graph.chi2());
        Ok((body, touched))
    }))
    .await
}

async fn post_optimize(State(st): State<AppState>) -> ApiResult {
    st.write(Box::new(|snap: &mut Snapshot| {
        let graph = snap
            .dataset
            .graph
            .as_mut()
            .ok_or_else(|| ApiError::not_found("dataset has no pose graph"))?;
        let (optimized, report) = optimize(graph, OPTIMIZE_ITERATIONS)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        *graph = optimized;
        let body = json!({
            "chi2_before": report.chi2_before,
            "chi2_after": report.chi2_after,
            "iterations": report.iterations,
            "graph": graph_json(graph),
        });
        Ok((
            body,
            Touched {
                graph: true,
                ..Default::default()
            },
        ))
    }))
    .await
}

/// Box as exchanged with clients; orientation is `[qx, qy, qz, qw]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoxJson {
    pub id: String,
    #[serde(rename = "class")]
    pub class_name: String,
    pub individual: String,
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default = "identity_quat")]
    pub orientation: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

impl From<&BoundingBox> for BoxJson {
    fn from(b: &BoundingBox) -> Self {
        let q = b.orientation.quaternion();
        Self {
            id: b.id.clone(),
            class_name: b.class_name.clone(),
            individual: b.individual.clone(),
            center: b.center.into(),
            half_extents: b.half_extents.into(),
            orientation: [q.i, q.j, q.k, q.w],
        }
    }
}

impl BoxJson {
    fn to_box(&self) -> Result<BoundingBox, ApiError> {
        for (name, what) in [
            (&self.id, "box id"),
            (&self.class_name, "class"),
            (&self.individual, "individual"),
        ] {
            if !is_valid_identifier(name) {
                return Err(ApiError::bad_request(format!("invalid {what} `{name}`")));
            }
        }
        let [qx, qy, qz, qw] = self.orientation;
        let q = Quaternion::new(qw, qx, qy, qz);
        if !(q.norm() > 1e-9) || !q.norm().is_finite() {
            return Err(ApiError::bad_request(
                "orientation must be a non-zero quaternion",
            ));
        }
        let b = BoundingBox {
            id: self.id.clone(),
            class_name: self.class_name.clone(),
            individual: self.individual.clone(),
            center: Vector3::from(self.center),
            half_extents: Vector3::from(self.half_extents),
            orientation: UnitQuaternion::from_quaternion(q),
        };
        b.validate()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(b)
    }
}

async fn get_boxes(State(st): State<AppState>) -> ApiResult {
    let boxes: Vec<BoxJson> = st.read().dataset.boxes.iter().map(BoxJson::from).collect();
    Ok(Json(json!(boxes)))
}

/// Declares the box individual if needed, records its class membership and
/// refreshes the spatial facts.
fn apply_box(ds: &mut Dataset, b: BoundingBox) -> Result<(), ApiError> {
    let bad = |e: crate::kb::KbError| ApiError::bad_request(e.to_string());
    let mut kb = ds.kb.clone();
    if !kb.is_class(&b.class_name) {
        return Err(ApiError::bad_request(format!(
            "unknown class `{}`",
            b.class_name
        )));
    }
    kb.declare_individual(b.individual.clone()).map_err(bad)?;
    kb.assert(Atom::instance_of(
        b.individual.clone(),
        b.class_name.clone(),
    ))
    .map_err(bad)?;
    let mut boxes = ds.boxes.clone();
    match boxes.iter_mut().find(|x| x.id == b.id) {
        Some(slot) => *slot = b,
        None => boxes.push(b),
    }
    fuse(&mut kb, &boxes).map_err(bad)?;
    ds.kb = kb;
    ds.boxes = boxes;
    Ok(())
}

async fn post_box(State(st): State<AppState>, Json(req): Json<BoxJson>) -> ApiResult {
    let b = req.to_box()?;
    st.write(Box::new(move |snap: &mut Snapshot| {
        let json = BoxJson::from(&b);
        apply_box(&mut snap.dataset, b)?;
        Ok((
            json!({ "box": json }),
            Touched {
                annotations: true,
                ..Default::default()
            },
        ))
    }))
    .await
}

async fn delete_box(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    st.write(Box::new(move |snap: &mut Snapshot| {
        let ds = &mut snap.dataset;
        let pos = ds
            .boxes
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| ApiError::not_found(format!("no box `{id}`")))?;
        let mut boxes = ds.boxes.clone();
        boxes.remove(pos);
        let mut kb = ds.kb.clone();
        fuse(&mut kb, &boxes).map_err(|e| ApiError::bad_request(e.to_string()))?;
        ds.kb = kb;
        ds.boxes = boxes;
        Ok((
            json!({ "deleted": id }),
            Touched {
                annotations: true,
                ..Default::default()
            },
        ))
    }))
    .await
}

#[derive(Deserialize)]
struct ClassRequest {
    #[serde(rename = "class")]
    class_name: String,
}

async fn post_box_class(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ClassRequest>,
) -> ApiResult {
    st.write(Box::new(move |snap: &mut Snapshot| {
        let ds = &mut snap.dataset;
        let old = ds
            .boxes
            .iter()
            .find(|b| b.id == id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no box `{id}`")))?;
        let still_used = ds.boxes.iter().any(|b| {
            b.id != id && b.individual == old.individual && b.class_name == old.class_name
        });
        let mut trial = ds.clone();
        if !still_used {
            trial.kb.retract(&Atom::instance_of(
                old.individual.clone(),
                old.class_name.clone(),
            ));
        }
        let b = BoundingBox {
            class_name: req.class_name.clone(),
            ..old
        };
        let json = BoxJson::from(&b);
        apply_box(&mut trial, b)?;
        *ds = trial;
        Ok((
            json!({ "box": json }),
            Touched {
                annotations: true,
                ..Default::default()
            },
        ))
    }))
    .await
}

#[derive(Serialize)]
struct ClassNode {
    name: String,
    children: Vec<ClassNode>,
}

/// Class tree below `Thing` from the asserted subclass links. A class with
/// several parents appears under each of them.
async fn get_hierarchy(State(st): State<AppState>) -> ApiResult {
    let snap = st.read();
    let kb = &snap.dataset.kb;
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut has_parent = std::collections::BTreeSet::new();
    for a in kb.atoms().iter().filter(|a| a.predicate == IS_A) {
        if let (Some(sub), Some(sup)) = (a.args[0].as_name(), a.args[1].as_name()) {
            if sub != sup {
                children.entry(sup).or_default().push(sub);
                has_parent.insert(sub);
            }
        }
    }
    fn build<'a>(
        name: &'a str,
        children: &BTreeMap<&'a str, Vec<&'a str>>,
        path: &mut Vec<&'a str>,
    ) -> ClassNode {
        path.push(name);
        let next: Vec<&str> = children
            .get(name)
            .map(|v| v.iter().copied().filter(|c| !path.contains(c)).collect())
            .unwrap_or_default();
        let kids = next.into_iter().map(|c| build(c, children, path)).collect();
        path.pop();
        ClassNode {
            name: name.to_string(),
            children: kids,
        }
    }
    let mut root = build(THING, &children, &mut Vec::new());
    for c in kb
        .classes()
        .iter()
        .filter(|c| c.as_str() != THING && !has_parent.contains(c.as_str()))
    {
        root.children.push(build(c, &children, &mut Vec::new()));
    }
    let instances: BTreeMap<String, Vec<String>> = kb
        .atoms()
        .iter()
        .filter(|a| a.predicate == INSTANCE_OF)
        .fold(BTreeMap::new(), |mut m, a| {
            if let (Term::Name(i), Term::Name(c)) = (&a.args[0], &a.args[1]) {
                m.entry(c.clone()).or_default().push(i.clone());
            }
            m
        });
    Ok(Json(json!({ "root": root, "instances": instances })))
}
