//! In-memory acquisition log: depth frames, odometry and laser scans in
//! timestamp order, plus the static sensor description.

use std::collections::BTreeMap;

use crate::projection::{DepthImage, LaserConfig, PinholeIntrinsics};
use crate::transform::RigidTransform;

#[derive(Clone, Debug, PartialEq)]
pub enum RecordKind {
    /// Depth frame from `sensor`; `path` is the image file relative to the log.
    Depth {
        sensor: String,
        path: String,
        image: DepthImage,
    },
    /// Robot base pose in the odometry frame. Planar odometry is lifted.
    Odom(RigidTransform),
    Laser(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub stamp: f64,
    pub kind: RecordKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AcquisitionLog {
    pub intrinsics: BTreeMap<String, PinholeIntrinsics>,
    /// Sensor mounting poses (sensor to robot base).
    pub mounts: BTreeMap<String, RigidTransform>,
    pub laser: Option<LaserConfig>,
    pub records: Vec<Record>,
}

/// One depth frame with the most recent odometry and laser readings at or
/// before its timestamp.
#[derive(Clone, Debug)]
pub struct Frame<'a> {
    pub stamp: f64,
    pub sensor: &'a str,
    pub image: &'a DepthImage,
    pub odom: Option<RigidTransform>,
    pub scan: Option<&'a [f64]>,
}

impl AcquisitionLog {
    pub fn has_odometry(&self) -> bool {
        self.records
            .iter()
            .any(|r| matches!(r.kind, RecordKind::Odom(_)))
    }

    pub fn has_laser(&self) -> bool {
        self.laser.is_some()
            && self
                .records
                .iter()
                .any(|r| matches!(r.kind, RecordKind::Laser(_)))
    }

    pub fn depth_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r.kind, RecordKind::Depth { .. }))
            .count()
    }

    /// Timestamps are non-decreasing.
    pub fn is_ordered(&self) -> bool {
        self.records.windows(2).all(|w| w[0].stamp <= w[1].stamp)
    }

    pub fn mount(&self, sensor: &str) -> RigidTransform {
        self.mounts.get(sensor).copied().unwrap_or_default()
    }

    /// Depth frames in log order, each paired with the latest odometry and
    /// scan seen so far.
    pub fn frames(&self) -> Vec<Frame<'_>> {
        let mut odom = None;
        let mut scan: Option<&[f64]> = None;
        let mut out = Vec::new();
        for r in &self.records {
            match &r.kind {
                RecordKind::Odom(t) => odom = Some(*t),
                RecordKind::Laser(ranges) => scan = Some(ranges),
                RecordKind::Depth { sensor, image, .. } => out.push(Frame {
                    stamp: r.stamp,
                    sensor,
                    image,
                    odom,
                    scan,
                }),
            }
        }
        out
    }
}
