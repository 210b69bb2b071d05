//! Semantic maps as a triple of reference frame, geometry and knowledge
//! base, with the metrics used to compare a robot-built map against a
//! ground truth and the tooling that builds such ground truths from sensor
//! logs.

pub mod acquisition;
pub mod calibration;
pub mod evaluation;
pub mod frames;
pub mod geometry;
pub mod io;
pub mod kb;
pub mod map;
pub mod mapping;
pub mod projection;
pub mod registration;
pub mod server;
pub mod spatial;
pub mod synth;
pub mod transform;
pub mod violation;

pub use frames::{ReferenceFrame, TransformTree};
pub use geometry::{BoundingBox, GeometricElement, GeometricSet, PointCloud, Primitive};
pub use kb::{Atom, KnowledgeBase, Term};
pub use map::{validate_map, SemanticMap};
pub use transform::{Pose2, RigidTransform};
pub use violation::{Severity, Violation, ViolationKind};
