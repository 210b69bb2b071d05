use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use semmap::io::{self, Dataset};
use semmap::kb::Atom;
use semmap::mapping::{default_information, PoseGraph};
use semmap::server::{decimate, router, AppState};
use semmap::{PointCloud, RigidTransform};
use serde_json::{json, Value};
use std::path::Path;
use tempfile::TempDir;
use tower::ServiceExt;

mod common;

struct Fixture {
    _tmp: TempDir,
    dir: std::path::PathBuf,
    app: Router,
    _lock: io::DatasetLock,
}

/// Ground-truth fixture plus a two-node graph with registrable clouds.
fn setup() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ds");
    common::copy_dir(&common::fixture("table_chair_gt"), &dir);
    let cloud = common::three_planes(1.5, 0.05);
    io::write_ply(&dir.join("n0.ply"), &cloud).unwrap();
    io::write_ply(&dir.join("n1.ply"), &cloud).unwrap();
    let mut g = PoseGraph::new();
    g.add_node(0, RigidTransform::identity(), Some("n0.ply".into()))
        .unwrap();
    g.add_node(
        1,
        RigidTransform::from_translation(0.5, 0.1, 0.0),
        Some("n1.ply".into()),
    )
    .unwrap();
    g.add_edge(
        0,
        1,
        RigidTransform::from_translation(0.4, 0.0, 0.0),
        default_information(50),
    )
    .unwrap();
    io::write_graph(&dir.join("graph.pg"), &g).unwrap();
    let (state, lock) = AppState::open(&dir).unwrap();
    Fixture {
        _tmp: tmp,
        dir,
        app: router(state),
        _lock: lock,
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

fn on_disk(dir: &Path) -> Dataset {
    Dataset::open(dir).unwrap()
}

#[tokio::test]
async fn map_is_chunked() {
    let f = setup();
    let (s, v) = get(&f.app, "/api/map?chunk_size=4").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["frame"], "map");
    assert_eq!(v["total_points"], 10);
    assert_eq!(v["chunks"], 3);
    assert_eq!(v["points"].as_array().unwrap().len(), 4);
    let (_, last) = get(&f.app, "/api/map?chunk_size=4&chunk=2").await;
    assert_eq!(last["points"].as_array().unwrap().len(), 2);
    let cloud = io::read_ply(&f.dir.join("map.ply")).unwrap();
    let p = &cloud.points[9];
    assert_eq!(last["points"][1], json!([p.x, p.y, p.z]));
    let (s, v) = get(&f.app, "/api/map?chunk=3&chunk_size=4").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
}

#[test]
fn decimation_caps_point_count() {
    let pts = (0..2000)
        .map(|i| nalgebra::Vector3::new(i as f64 * 0.001, 0.0, 0.0))
        .collect();
    let c = PointCloud::new(pts);
    assert_eq!(decimate(&c, 5000).len(), 2000);
    let d = decimate(&c, 100);
    assert!(d.len() <= 100 && !d.is_empty());
}

#[tokio::test]
async fn graph_and_optimize() {
    let f = setup();
    let (s, g) = get(&f.app, "/api/graph").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["nodes"].as_array().unwrap().len(), 2);
    assert_eq!(g["edges"][0]["information"].as_array().unwrap().len(), 21);
    let before = g["chi2"].as_f64().unwrap();
    assert!(before > 0.0);

    let (s, r) = post(&f.app, "/api/optimize", json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["chi2_before"].as_f64().unwrap(), before);
    let after = r["chi2_after"].as_f64().unwrap();
    assert!(after < before);
    assert_eq!(r["violations"], json!([]));

    // A fresh read equals the write acknowledgement, in memory and on disk.
    let (_, g2) = get(&f.app, "/api/graph").await;
    assert_eq!(g2, r["graph"]);
    let disk = on_disk(&f.dir).graph.unwrap();
    assert!((disk.chi2() - after).abs() < 1e-9);
}

#[tokio::test]
async fn manual_edge_registration() {
    let f = setup();
    let (s, r) = post(&f.app, "/api/edges", json!({ "a": 1, "b": 0 })).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["accepted"], true);
    assert!(r["chi2"].is_number());
    assert!(r["violations"].is_array());
    let (_, g) = get(&f.app, "/api/graph").await;
    assert_eq!(g["edges"].as_array().unwrap().len(), 2);
    assert_eq!(on_disk(&f.dir).graph.unwrap().edges.len(), 2);

    let (s, _) = post(&f.app, "/api/edges", json!({ "a": 0, "b": 7 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(
        &f.app,
        "/api/edges",
        json!({ "a": 0, "b": 1, "guess": [1, 2] }),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(&f.app, "/api/edges", json!({ "b": 1 })).await;
    assert!(s.is_client_error());
    assert_eq!(on_disk(&f.dir).graph.unwrap().edges.len(), 2);
}

fn table2() -> Value {
    json!({
        "id": "b3",
        "class": "Table",
        "individual": "table2",
        "center": [0.5, 0.5, 0.3],
        "half_extents": [0.4, 0.3, 0.3],
    })
}

#[tokio::test]
async fn create_box_updates_kb_and_files() {
    let f = setup();
    let (_, boxes) = get(&f.app, "/api/boxes").await;
    assert_eq!(boxes.as_array().unwrap().len(), 2);
    assert_eq!(boxes[0]["orientation"], json!([0.0, 0.0, 0.0, 1.0]));

    let (s, r) = post(&f.app, "/api/boxes", table2()).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["violations"], json!([]));
    let (_, boxes) = get(&f.app, "/api/boxes").await;
    assert_eq!(boxes.as_array().unwrap().len(), 3);

    let ds = on_disk(&f.dir);
    assert_eq!(ds.boxes.len(), 3);
    assert!(ds.kb.is_individual("table2"));
    assert!(ds
        .kb
        .atoms()
        .contains(&Atom::instance_of("table2", "Table")));
    assert_eq!(ds.kb.spatial_atoms().count(), 9);
    assert!(semmap::validate_map(&ds.semantic_map()).is_empty());
}

#[tokio::test]
async fn rejected_box_writes_leave_state_untouched() {
    let f = setup();
    let before = std::fs::read(f.dir.join("ontology.kb")).unwrap();
    let mut bad = table2();
    bad["class"] = json!("Sofa");
    assert_eq!(
        post(&f.app, "/api/boxes", bad).await.0,
        StatusCode::BAD_REQUEST
    );
    let mut bad = table2();
    bad["half_extents"] = json!([0.4, -1.0, 0.3]);
    assert_eq!(
        post(&f.app, "/api/boxes", bad).await.0,
        StatusCode::BAD_REQUEST
    );
    let mut bad = table2();
    bad["orientation"] = json!([0.0, 0.0, 0.0, 0.0]);
    assert_eq!(
        post(&f.app, "/api/boxes", bad).await.0,
        StatusCode::BAD_REQUEST
    );
    let mut bad = table2();
    bad["individual"] = json!("not valid");
    assert_eq!(
        post(&f.app, "/api/boxes", bad).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(std::fs::read(f.dir.join("ontology.kb")).unwrap(), before);
    let (_, boxes) = get(&f.app, "/api/boxes").await;
    assert_eq!(boxes.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn delete_box() {
    let f = setup();
    let (s, r) = call(&f.app, Method::DELETE, "/api/boxes/b2", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["deleted"], "b2");
    let ds = on_disk(&f.dir);
    assert_eq!(ds.boxes.len(), 1);
    assert_eq!(ds.kb.spatial_atoms().count(), 3);
    let (s, _) = call(&f.app, Method::DELETE, "/api/boxes/b2", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // Deleting the last box empties the spatial subset, which is reported.
    let (_, r) = call(&f.app, Method::DELETE, "/api/boxes/b1", None).await;
    assert!(r["violations"]
        .as_array()
        .unwrap()
        .iter()
        .any(|v| v["kind"] == "empty-spatial-subset"));
}

#[tokio::test]
async fn reclassify_box() {
    let f = setup();
    let (s, r) = post(&f.app, "/api/boxes/b1/class", json!({ "class": "Chair" })).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["box"]["class"], "Chair");
    let ds = on_disk(&f.dir);
    assert!(!ds
        .kb
        .atoms()
        .contains(&Atom::instance_of("table1", "Table")));
    assert!(ds
        .kb
        .atoms()
        .contains(&Atom::instance_of("table1", "Chair")));
    assert_eq!(ds.boxes[0].class_name, "Chair");

    let (s, _) = post(&f.app, "/api/boxes/b1/class", json!({ "class": "Nope" })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(&f.app, "/api/boxes/zz/class", json!({ "class": "Table" })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn hierarchy_lists_classes_and_instances() {
    let f = setup();
    let (s, h) = get(&f.app, "/api/hierarchy").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h["root"]["name"], "Thing");
    let physical = h["root"]["children"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "Physical_Thing")
        .unwrap();
    let names: Vec<&str> = physical["children"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"Table") && names.contains(&"Chair"));
    assert_eq!(h["instances"]["Table"], json!(["table1"]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writes_are_serialized() {
    let f = setup();
    let mut tasks = Vec::new();
    for i in 0..16 {
        let app = f.app.clone();
        tasks.push(tokio::spawn(async move {
            let body = json!({
                "id": format!("n{i}"),
                "class": "Chair",
                "individual": format!("chair_n{i}"),
                "center": [i as f64, -3.0, 0.4],
                "half_extents": [0.2, 0.2, 0.4],
            });
            post(&app, "/api/boxes", body).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let (_, boxes) = get(&f.app, "/api/boxes").await;
    assert_eq!(boxes.as_array().unwrap().len(), 18);
    let ds = on_disk(&f.dir);
    assert_eq!(ds.boxes.len(), 18);
    assert_eq!(ds.kb.spatial_atoms().count(), 18 * 3);
}

#[tokio::test]
async fn second_server_on_same_dataset_is_refused() {
    let f = setup();
    assert!(matches!(
        AppState::open(&f.dir),
        Err(io::IoError::Locked(_))
    ));
}

#[tokio::test]
async fn missing_graph_is_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("gt");
    common::copy_dir(&common::fixture("table_chair_gt"), &dir);
    let (state, _lock) = AppState::open(&dir).unwrap();
    let app = router(state);
    assert_eq!(get(&app, "/api/graph").await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        post(&app, "/api/optimize", json!({})).await.0,
        StatusCode::NOT_FOUND
    );
}
