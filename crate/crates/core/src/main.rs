use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use semmap::calibration::{
    assemble_tree, calibrate_sensor_base, calibrate_sensor_sensor, fit_depth_model,
    motions_from_log, PlaneObservation, SensorOffset,
};
use semmap::evaluation::{evaluate, EvaluationConfig, EvaluationWeights};
use semmap::io::{self, fuse, Dataset, DatasetLock, IoError};
use semmap::map::{map_warnings, validate_map};
use semmap::mapping::{
    add_manual_edge, build_local_maps, export_global_cloud, optimize, BuilderConfig, LocalMap,
    MappingError,
};
use semmap::projection::{render_depth, render_rgb, render_scan, LaserConfig, PinholeIntrinsics};
use semmap::registration::RegistrationConfig;
use semmap::synth::{default_laser, simulate_log, survey_path, Room, SimConfig};
use semmap::{RigidTransform, Severity, TransformTree};

/// Semantic map toolkit: calibration, map building, annotation and evaluation.
#[derive(Parser)]
#[command(name = "semmap", version)]
struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sensor calibration tools.
    #[command(subcommand)]
    Calibrate(Calibrate),
    /// Build local maps and a pose graph from an acquisition log.
    BuildMap {
        log: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        builder: BuilderArgs,
    },
    /// Optimize the dataset's pose graph in place.
    Optimize {
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
    },
    /// Register two graph nodes and add the resulting edge.
    AddEdge {
        dataset: PathBuf,
        a: u32,
        b: u32,
        /// Initial guess mapping node a into node b: "tx ty tz qx qy qz qw".
        #[arg(long, allow_hyphen_values = true)]
        guess: Option<String>,
    },
    /// Merge the node clouds at their optimized poses into map.ply.
    ExportCloud {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        voxel: f64,
    },
    /// Write box annotations into the knowledge base and validate the map.
    Fuse { dataset: PathBuf },
    /// Render a simulated sensor reading from the map.
    Project(ProjectArgs),
    /// Compare a dataset against a ground truth; prints a JSON report.
    Evaluate {
        dataset: PathBuf,
        ground_truth: PathBuf,
        /// Weights wg ws wd wu.
        #[arg(long, num_args = 4, value_names = ["WG", "WS", "WD", "WU"])]
        weights: Option<Vec<f64>>,
        /// Transform applied to the dataset before comparison: "tx ty tz qx qy qz qw".
        #[arg(long, allow_hyphen_values = true)]
        align: Option<String>,
        /// Element matching gate in meters.
        #[arg(long, default_value_t = 0.5)]
        gate: f64,
    },
    /// Check the semantic-map invariants; exit code 0 iff clean.
    Validate { dataset: PathBuf },
    /// Serve the annotation API.
    Serve {
        dataset: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Generate a synthetic room, its ground-truth dataset and a sensor log.
    Simulate {
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ground-truth surface sampling in meters.
        #[arg(long, default_value_t = 0.02)]
        spacing: f64,
        /// Also record laser scans.
        #[arg(long)]
        laser: bool,
        /// Omit odometry records.
        #[arg(long)]
        no_odometry: bool,
    },
}

#[derive(Args)]
struct BuilderArgs {
    #[arg(long, default_value_t = 1.0)]
    trans_trigger: f64,
    #[arg(long, default_value_t = 0.5)]
    rot_trigger: f64,
    #[arg(long, default_value_t = 0.02)]
    voxel: f64,
}

#[derive(Subcommand)]
enum Calibrate {
    /// Fit a depth distortion model from views of known planes.
    Intrinsics {
        /// Lines of `image.png nx ny nz offset`, the plane in camera coordinates.
        planes: PathBuf,
        /// "fx fy cx cy width height".
        #[arg(long)]
        intrinsics: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Camera pose on the robot base from odometry and camera motion.
    SensorBase {
        log: PathBuf,
        #[arg(long)]
        sensor: String,
        #[arg(long, default_value = "base")]
        base: String,
        /// Add a joint nonlinear refinement pass.
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offsets of each camera relative to a reference camera.
    SensorSensor {
        /// Reference camera as NAME=cloud.ply.
        #[arg(long)]
        reference: String,
        /// Other cameras as NAME=cloud.ply (repeatable).
        #[arg(long = "sensor", required = true)]
        sensors: Vec<String>,
        /// Initial guess for a sensor as NAME="tx ty tz qx qy qz qw" (repeatable).
        #[arg(long = "guess", allow_hyphen_values = true)]
        guesses: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine sensor-base and sensor-sensor results into one tree.
    Assemble {
        #[arg(long)]
        sensor_base: PathBuf,
        #[arg(long)]
        sensor_sensor: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SensorKind {
    Rgbd,
    Laser,
}

#[derive(Args)]
struct ProjectArgs {
    dataset: PathBuf,
    /// Sensor pose in the map frame: "tx ty tz qx qy qz qw".
    #[arg(long, allow_hyphen_values = true)]
    pose: String,
    #[arg(long, value_enum)]
    sensor: SensorKind,
    /// "fx fy cx cy width height" for rgbd.
    #[arg(long)]
    intrinsics: Option<String>,
    /// "angle_min angle_max beams max_range slab_half_height" for laser.
    #[arg(long, allow_hyphen_values = true)]
    laser: Option<String>,
    #[arg(long, default_value_t = 1)]
    splat: u32,
    /// Depth PNG (rgbd) or JSON ranges (laser); laser prints to stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Color PNG, rgbd only.
    #[arg(long)]
    rgb: Option<PathBuf>,
}

/// Failure with its exit code.
enum Failure {
    Usage(String),
    Io(String),
    Validation(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Validation(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Validation(m) | Failure::Numerical(m) => {
                m
            }
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<MappingError> for Failure {
    fn from(e: MappingError) -> Self {
        match e {
            MappingError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            MappingError::UnrecoverableInitialization(_) | MappingError::Registration(_) => {
                Failure::Numerical(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Calibrate(c) => calibrate(c),
        Command::BuildMap { log, out, builder } => build_map(&log, &out, &builder),
        Command::Optimize { dataset, max_iter } => optimize_cmd(&dataset, max_iter),
        Command::AddEdge {
            dataset,
            a,
            b,
            guess,
        } => add_edge(&dataset, a, b, guess.as_deref()),
        Command::ExportCloud { dataset, voxel } => export_cloud(&dataset, voxel),
        Command::Fuse { dataset } => fuse_cmd(&dataset),
        Command::Project(args) => project(&args),
        Command::Evaluate {
            dataset,
            ground_truth,
            weights,
            align,
            gate,
        } => evaluate_cmd(
            &dataset,
            &ground_truth,
            weights.as_deref(),
            align.as_deref(),
            gate,
        ),
        Command::Validate { dataset } => validate_cmd(&dataset),
        Command::Serve {
            dataset,
            port,
            host,
        } => serve(dataset, std::net::SocketAddr::new(host, port)),
        Command::Simulate {
            out,
            seed,
            spacing,
            laser,
            no_odometry,
        } => simulate(&out, seed, spacing, laser, !no_odometry),
    }
}

fn numbers<const N: usize>(s: &str, what: &str) -> Result<[f64; N], Failure> {
    let v: Vec<f64> = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("{what}: expected {N} numbers, got `{s}`")))?;
    v.try_into().map_err(|v: Vec<f64>| {
        Failure::Usage(format!("{what}: expected {N} numbers, got {}", v.len()))
    })
}

fn pose_arg(s: &str, what: &str) -> Result<RigidTransform, Failure> {
    let v = numbers::<7>(s, what)?;
    RigidTransform::from_components([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])
        .ok_or_else(|| Failure::Usage(format!("{what}: degenerate pose")))
}

fn intrinsics_arg(s: &str) -> Result<PinholeIntrinsics, Failure> {
    let v = numbers::<6>(s, "intrinsics")?;
    let k = PinholeIntrinsics {
        fx: v[0],
        fy: v[1],
        cx: v[2],
        cy: v[3],
        width: v[4] as u32,
        height: v[5] as u32,
        ..PinholeIntrinsics::default()
    };
    k.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(k)
}

fn named(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('=')
        .filter(|(n, v)| !n.is_empty() && !v.is_empty())
        .ok_or_else(|| Failure::Usage(format!("expected NAME=VALUE, got `{s}`")))
}

fn print_json(v: &serde_json::Value) {
    use std::io::Write;
    // A closed pipe on stdout is not an error worth reporting.
    let _ = writeln!(
        std::io::stdout(),
        "{}",
        serde_json::to_string_pretty(v).expect("serializable")
    );
}

fn calibrate(c: Calibrate) -> CliResult {
    match c {
        Calibrate::Intrinsics {
            planes,
            intrinsics,
            out,
        } => {
            let k = intrinsics_arg(&intrinsics)?;
            let text = std::fs::read_to_string(&planes)
                .map_err(|e| Failure::Io(format!("{}: {e}", planes.display())))?;
            let dir = planes.parent().unwrap_or(Path::new(""));
            let mut obs = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (path, rest) = line.split_once(char::is_whitespace).ok_or_else(|| {
                    Failure::Io(format!(
                        "{}: line {}: expected `image nx ny nz offset`",
                        planes.display(),
                        i + 1
                    ))
                })?;
                let v = numbers::<4>(rest, "plane").map_err(|f| {
                    Failure::Io(format!(
                        "{}: line {}: {}",
                        planes.display(),
                        i + 1,
                        f.message()
                    ))
                })?;
                let normal = nalgebra::Vector3::new(v[0], v[1], v[2]);
                if !(normal.norm() > 1e-9) {
                    return Err(Failure::Io(format!(
                        "{}: line {}: zero plane normal",
                        planes.display(),
                        i + 1
                    )));
                }
                let n = normal.norm();
                obs.push(PlaneObservation {
                    image: io::read_depth_png(&dir.join(path))?,
                    normal: normal / n,
                    offset: v[3] / n,
                });
            }
            let fit = fit_depth_model(&obs, &k);
            for i in &fit.skipped {
                log::warn!(
                    "observation {i} skipped: fewer than {} valid pixels",
                    semmap::calibration::MIN_VALID_PIXELS
                );
            }
            io::write_distortion(&out, &fit.model)?;
            print_json(&json!({ "observations": obs.len(), "skipped": fit.skipped }));
            Ok(())
        }
        Calibrate::SensorBase {
            log,
            sensor,
            base,
            refine,
            out,
        } => {
            let log = io::read_log(&log)?;
            if !log.intrinsics.contains_key(&sensor) {
                return Err(Failure::Usage(format!("log has no sensor `{sensor}`")));
            }
            let motions = motions_from_log(&log, &sensor, &RegistrationConfig::default())
                .map_err(|e| Failure::Numerical(e.to_string()))?;
            let x = calibrate_sensor_base(&motions, refine)
                .map_err(|e| Failure::Numerical(e.to_string()))?;
            let mut tree = TransformTree::new(base.clone());
            tree.add(sensor, base, x)
                .map_err(|e| Failure::Usage(e.to_string()))?;
            io::write_tree(&out, &tree)?;
            print_json(&json!({ "motions": motions.len(), "transform": x.to_components() }));
            Ok(())
        }
        Calibrate::SensorSensor {
            reference,
            sensors,
            guesses,
            out,
        } => {
            let (ref_name, ref_path) = named(&reference)?;
            let mut names = vec![ref_name.to_string()];
            let mut clouds = vec![io::read_ply(Path::new(ref_path))?];
            for s in &sensors {
                let (n, p) = named(s)?;
                names.push(n.to_string());
                clouds.push(io::read_ply(Path::new(p))?);
            }
            let mut guess = vec![RigidTransform::identity(); names.len()];
            for g in &guesses {
                let (n, v) = named(g)?;
                let i = names
                    .iter()
                    .position(|x| x == n)
                    .ok_or_else(|| Failure::Usage(format!("guess for unknown sensor `{n}`")))?;
                guess[i] = pose_arg(v, "guess")?;
            }
            let offsets =
                calibrate_sensor_sensor(&clouds, 0, Some(&guess), &RegistrationConfig::default())
                    .map_err(|e| Failure::Usage(e.to_string()))?;
            let mut tree = TransformTree::new(ref_name);
            let mut failed = Vec::new();
            for (name, off) in names.iter().zip(&offsets).skip(1) {
                match off {
                    SensorOffset::Ok(t) => tree
                        .add(name.clone(), ref_name, *t)
                        .map_err(|e| Failure::Usage(e.to_string()))?,
                    SensorOffset::Failed(why) => {
                        log::error!("{name}: {why}");
                        failed.push(name.clone());
                    }
                }
            }
            io::write_tree(&out, &tree)?;
            print_json(&json!({ "calibrated": tree.len() - 1, "failed": failed }));
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Numerical(format!(
                    "registration failed for {}",
                    failed.join(", ")
                )))
            }
        }
        Calibrate::Assemble {
            sensor_base,
            sensor_sensor,
            out,
        } => {
            let base_tree = io::read_tree(&sensor_base)?;
            let ss = io::read_tree(&sensor_sensor)?;
            let reference = ss.root().to_string();
            let base_to_ref = base_tree
                .resolve(base_tree.root(), &reference)
                .map_err(|e| Failure::Validation(format!("sensor-base tree: {e}")))?;
            let others: Vec<(String, RigidTransform)> = ss
                .edges()
                .map(|(c, _, _)| c.to_string())
                .map(|c| {
                    let t = ss.pose_in_root(&c).expect("frame from this tree");
                    (c, t)
                })
                .collect();
            let tree = assemble_tree(base_tree.root(), &reference, &base_to_ref, &others)
                .map_err(|e| Failure::Validation(e.to_string()))?;
            io::write_tree(&out, &tree)?;
            Ok(())
        }
    }
}

fn build_map(log_path: &Path, out: &Path, b: &BuilderArgs) -> CliResult {
    let log = io::read_log(log_path)?;
    let cfg = BuilderConfig {
        trans_trigger: b.trans_trigger,
        rot_trigger: b.rot_trigger,
        voxel_size: b.voxel,
        ..BuilderConfig::default()
    };
    let (maps, graph) = build_local_maps(&log, &cfg, &RegistrationConfig::default())?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let _lock = DatasetLock::acquire(out)?;
    let mut ds = if out.join(io::META_FILE).exists() {
        Dataset::open(out)?
    } else {
        Dataset::new(out)
    };
    for m in &maps {
        let node = &graph.nodes[&m.id];
        io::write_ply(
            &out.join(node.cloud.as_deref().expect("builder names node clouds")),
            &m.cloud,
        )?;
    }
    ds.graph = Some(graph);
    ds.save()?;
    print_json(&json!({
        "local_maps": maps.len(),
        "frames": maps.iter().map(|m| m.frames.len()).collect::<Vec<_>>(),
    }));
    Ok(())
}

fn open_graph(dir: &Path) -> Result<(Dataset, semmap::mapping::PoseGraph), Failure> {
    let ds = Dataset::open(dir)?;
    let g = ds.graph.clone().ok_or_else(|| {
        Failure::Io(format!(
            "{}: dataset has no {}",
            dir.display(),
            io::GRAPH_FILE
        ))
    })?;
    Ok((ds, g))
}

fn optimize_cmd(dir: &Path, max_iter: usize) -> CliResult {
    let _lock = DatasetLock::acquire(dir)?;
    let (ds, graph) = open_graph(dir)?;
    let (out, report) = optimize(&graph, max_iter)?;
    io::write_graph(&ds.dir.join(io::GRAPH_FILE), &out)?;
    print_json(&json!({
        "chi2_before": report.chi2_before,
        "chi2_after": report.chi2_after,
        "iterations": report.iterations,
    }));
    Ok(())
}

fn add_edge(dir: &Path, a: u32, b: u32, guess: Option<&str>) -> CliResult {
    let guess = guess.map(|g| pose_arg(g, "guess")).transpose()?;
    let _lock = DatasetLock::acquire(dir)?;
    let (ds, mut graph) = open_graph(dir)?;
    let clouds = io::read_node_clouds(&ds.dir, &graph)?;
    let outcome = add_manual_edge(
        &mut graph,
        &clouds,
        a,
        b,
        guess,
        &RegistrationConfig::default(),
    )?;
    print_json(&serde_json::to_value(&outcome).expect("serializable"));
    if !outcome.accepted {
        return Err(Failure::Numerical(format!(
            "edge {a}->{b} rejected: {}",
            outcome.diagnostic.unwrap_or_default()
        )));
    }
    io::write_graph(&ds.dir.join(io::GRAPH_FILE), &graph)?;
    Ok(())
}

fn export_cloud(dir: &Path, voxel: f64) -> CliResult {
    if !(voxel >= 0.0) {
        return Err(Failure::Usage("voxel must be non-negative".into()));
    }
    let _lock = DatasetLock::acquire(dir)?;
    let (mut ds, graph) = open_graph(dir)?;
    let clouds = io::read_node_clouds(&ds.dir, &graph)?;
    let maps: Vec<LocalMap> = clouds
        .into_iter()
        .map(|(id, cloud)| LocalMap {
            id,
            cloud,
            origin_pose: graph.nodes[&id].pose,
            frames: Vec::new(),
        })
        .collect();
    let cloud = export_global_cloud(&maps, &graph, voxel);
    io::write_ply(&ds.dir.join(io::MAP_FILE), &cloud)?;
    ds.cloud = Some(cloud);
    print_json(&json!({ "points": ds.cloud.as_ref().map_or(0, |c| c.len()) }));
    Ok(())
}

fn report_violations(ds: &Dataset) -> CliResult {
    let map = ds.semantic_map();
    let mut v = validate_map(&map);
    v.extend(map_warnings(&map));
    if let Some(g) = &ds.graph {
        if let Err(e) = g.validate() {
            v.push(semmap::Violation::error(
                semmap::ViolationKind::InvalidCloud,
                format!("pose graph: {e}"),
            ));
        }
        for (id, n) in &g.nodes {
            if let Some(c) = &n.cloud {
                if !ds.dir.join(c).exists() {
                    v.push(semmap::Violation::error(
                        semmap::ViolationKind::InvalidCloud,
                        format!("node {id} references missing cloud `{c}`"),
                    ));
                }
            }
        }
    }
    print_json(&json!({ "violations": v }));
    let errors = v.iter().filter(|x| x.severity == Severity::Error).count();
    if errors > 0 {
        Err(Failure::Validation(format!("{errors} violation(s)")))
    } else {
        Ok(())
    }
}

fn fuse_cmd(dir: &Path) -> CliResult {
    let _lock = DatasetLock::acquire(dir)?;
    let mut ds = Dataset::open(dir)?;
    let boxes = ds.boxes.clone();
    fuse(&mut ds.kb, &boxes).map_err(|e| Failure::Validation(e.to_string()))?;
    io::write_kb(&ds.dir.join(io::KB_FILE), &ds.kb)?;
    report_violations(&ds)
}

fn validate_cmd(dir: &Path) -> CliResult {
    report_violations(&Dataset::open(dir)?)
}

fn project(a: &ProjectArgs) -> CliResult {
    let ds = Dataset::open(&a.dataset)?;
    let cloud = ds.cloud.as_ref().ok_or_else(|| {
        Failure::Io(format!(
            "{}: dataset has no {}",
            a.dataset.display(),
            io::MAP_FILE
        ))
    })?;
    let pose = pose_arg(&a.pose, "pose")?;
    match a.sensor {
        SensorKind::Rgbd => {
            let k = match &a.intrinsics {
                Some(s) => intrinsics_arg(s)?,
                None => PinholeIntrinsics::default(),
            };
            let out = a
                .out
                .as_ref()
                .ok_or_else(|| Failure::Usage("--out is required for rgbd".into()))?;
            let depth = render_depth(cloud, &pose, &k, a.splat);
            io::write_depth_png(out, &depth)?;
            if let Some(rgb) = &a.rgb {
                let img = render_rgb(cloud, &pose, &k, a.splat)
                    .map_err(|e| Failure::Usage(e.to_string()))?;
                io::write_rgb_png(rgb, &img)?;
            }
            print_json(&json!({ "valid_pixels": depth.valid_count() }));
        }
        SensorKind::Laser => {
            let cfg = match &a.laser {
                Some(s) => {
                    let v = numbers::<5>(s, "laser")?;
                    LaserConfig {
                        angle_min: v[0],
                        angle_max: v[1],
                        n_beams: v[2] as usize,
                        max_range: v[3],
                        slab_half_height: v[4],
                    }
                }
                None => LaserConfig::default(),
            };
            let ranges =
                render_scan(cloud, &pose, &cfg).map_err(|e| Failure::Usage(e.to_string()))?;
            let body = json!({ "angle_min": cfg.angle_min, "increment": cfg.increment(), "ranges": ranges });
            match &a.out {
                Some(p) => std::fs::write(
                    p,
                    serde_json::to_string_pretty(&body).expect("serializable"),
                )
                .map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?,
                None => print_json(&body),
            }
        }
    }
    Ok(())
}

fn evaluate_cmd(
    d1: &Path,
    dgt: &Path,
    weights: Option<&[f64]>,
    align: Option<&str>,
    gate: f64,
) -> CliResult {
    let weights = match weights {
        Some(w) => EvaluationWeights::new(w[0], w[1], w[2], w[3])
            .map_err(|e| Failure::Usage(e.to_string()))?,
        None => EvaluationWeights::default(),
    };
    let align = align
        .map(|s| pose_arg(s, "align"))
        .transpose()?
        .unwrap_or_default();
    let m1 = Dataset::open(d1)?.semantic_map();
    let mgt = Dataset::open(dgt)?.semantic_map();
    let cfg = EvaluationConfig {
        weights,
        gate,
        ..EvaluationConfig::default()
    };
    let report = evaluate(&m1, &mgt, &cfg, &align).map_err(|e| match e {
        semmap::evaluation::EvalError::InvalidGate
        | semmap::evaluation::EvalError::InvalidWeights => Failure::Usage(e.to_string()),
        e => Failure::Validation(e.to_string()),
    })?;
    print_json(&serde_json::to_value(&report).expect("serializable"));
    Ok(())
}

fn serve(dir: PathBuf, addr: std::net::SocketAddr) -> CliResult {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    rt.block_on(semmap::server::serve(dir, addr))
        .map_err(|e| match e.downcast::<IoError>() {
            Ok(io) => Failure::from(io),
            Err(e) => Failure::Io(e.to_string()),
        })
}

fn simulate(out: &Path, seed: u64, spacing: f64, laser: bool, odometry: bool) -> CliResult {
    if !(spacing > 0.0) {
        return Err(Failure::Usage("spacing must be positive".into()));
    }
    let room = Room::table_and_chair();
    let cloud = room.cloud(spacing);
    let cfg = SimConfig {
        seed,
        odometry,
        laser: laser.then(default_laser),
        ..SimConfig::default()
    };
    let log =
        simulate_log(&cloud, &survey_path(), &cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    io::write_log(&out.join("log").join("log.txt"), &log)?;

    let mut gt = Dataset::new(out.join("gt"));
    gt.cloud = Some(cloud);
    gt.boxes = room.boxes();
    gt.kb = room.kb();
    let boxes = gt.boxes.clone();
    fuse(&mut gt.kb, &boxes).map_err(|e| Failure::Validation(e.to_string()))?;
    gt.save()?;

    // Annotations a user would make on the built map: boxes and the
    // non-spatial knowledge, before fusion.
    let ann = out.join("annotations");
    io::write_boxes(&ann.join(io::BOXES_FILE), &room.boxes())?;
    io::write_kb(&ann.join(io::KB_FILE), &room.kb())?;

    let mut counts = BTreeMap::new();
    counts.insert("frames", log.depth_count());
    counts.insert("gt_points", gt.cloud.as_ref().map_or(0, |c| c.len()));
    print_json(&json!(counts));
    Ok(())
}
