//! On-disk formats.
//!
//! Everything is UTF-8 JSON with object keys in sorted order and every float
//! written with 17 significant digits, so equal values always produce equal
//! bytes and parse back to the same bits.
//!
//! A sequence directory holds `calibration.json` and one
//! `frames/NNNNNN.json` per lidar sweep. Masks inside a frame are
//! run-length encoded.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::geometry::Pose;
use crate::ingest::{CameraModel, IngestError, InstanceId, InstanceMask, LidarFrame, RleMask};
use crate::moteval::TrackFrame;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Ingest { path: PathBuf, source: IngestError },
}

/// Forwards to an inner formatter, writing floats as `d.dddddddddddddddde±x`.
struct FixedFloats<F>(F);

impl<F: Formatter> Formatter for FixedFloats<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Canonical JSON text of `value`, terminated by a newline. Large
/// per-frame records are best written compact.
pub fn to_canonical_json<T: Serialize>(value: &T, pretty: bool) -> serde_json::Result<String> {
    // Round-tripping through `Value` sorts object keys.
    let value = serde_json::to_value(value)?;
    let mut out = Vec::new();
    if pretty {
        let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats(PrettyFormatter::new()));
        value.serialize(&mut ser)?;
    } else {
        let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats(CompactFormatter));
        value.serialize(&mut ser)?;
    }
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), IoError> {
    let text = to_canonical_json(value, pretty).map_err(|source| IoError::Json {
        path: path.to_owned(),
        source,
    })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| IoError::Io {
            path: parent.to_owned(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_owned(),
        source,
    })
}

/// Pose as a unit quaternion `[w, x, y, z]` (with `w >= 0`) and a translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(pose: &Pose) -> Self {
        let t = pose.translation();
        Self {
            rotation: pose.quaternion_wxyz(),
            translation: [t.x, t.y, t.z],
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Pose {
        Pose::from_quaternion(self.rotation, Vector3::from(self.translation))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub name: String,
    /// Row-major pinhole matrix.
    pub intrinsics: [[f64; 3]; 3],
    /// Camera-from-world rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// Camera-from-world translation.
    pub translation: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl CameraRecord {
    pub fn from_model(name: &str, cam: &CameraModel) -> Self {
        let rows = |m: &Matrix3<f64>| [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]);
        Self {
            name: name.to_owned(),
            intrinsics: rows(cam.intrinsics()),
            rotation: rows(cam.extrinsic().rotation()),
            translation: (*cam.extrinsic().translation()).into(),
            width: cam.width(),
            height: cam.height(),
        }
    }

    pub fn to_model(&self) -> Result<CameraModel, IngestError> {
        let k = Matrix3::from_fn(|r, c| self.intrinsics[r][c]);
        let r = Matrix3::from_fn(|r, c| self.rotation[r][c]);
        let extrinsic = Pose::new(r, Vector3::from(self.translation));
        CameraModel::new(k, extrinsic, self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub cameras: Vec<CameraRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarRecord {
    pub origin: [f64; 3],
    pub points: Vec<[f64; 3]>,
    pub descriptors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub camera: String,
    pub id: u32,
    pub label: String,
    pub rle: RleMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub timestamp: f64,
    pub lidar: LidarRecord,
    pub masks: Vec<MaskRecord>,
}

impl FrameRecord {
    pub fn from_parts(lidar: &LidarFrame, masks: &[(String, InstanceMask)]) -> Self {
        Self {
            timestamp: lidar.timestamp,
            lidar: LidarRecord {
                origin: lidar.origin.into(),
                points: lidar.points().iter().map(|p| (*p).into()).collect(),
                descriptors: lidar.descriptors().iter().map(|d| d.as_slice().to_vec()).collect(),
            },
            masks: masks
                .iter()
                .map(|(camera, m)| MaskRecord {
                    camera: camera.clone(),
                    id: m.id.0,
                    label: m.label.clone(),
                    rle: m.to_rle(),
                })
                .collect(),
        }
    }
}

/// One decoded sweep with its masks, keyed by camera name.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub lidar: LidarFrame,
    pub masks: Vec<(String, InstanceMask)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub cameras: Vec<(String, CameraModel)>,
    pub frames: Vec<Frame>,
}

impl Sequence {
    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.lidar.timestamp).collect()
    }

    pub fn camera(&self, name: &str) -> Option<&CameraModel> {
        self.cameras.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("frames").join(format!("{index:06}.json"))
}

pub fn write_sequence(dir: &Path, sequence: &Sequence) -> Result<(), IoError> {
    let calibration = CalibrationRecord {
        cameras: sequence
            .cameras
            .iter()
            .map(|(name, cam)| CameraRecord::from_model(name, cam))
            .collect(),
    };
    write_json(&dir.join("calibration.json"), &calibration, true)?;
    for (i, frame) in sequence.frames.iter().enumerate() {
        write_json(
            &frame_path(dir, i),
            &FrameRecord::from_parts(&frame.lidar, &frame.masks),
            false,
        )?;
    }
    Ok(())
}

/// Reads a sequence directory; frames are ordered by file name and must
/// have strictly increasing timestamps.
pub fn read_sequence(dir: &Path) -> Result<Sequence, IoError> {
    let calib_path = dir.join("calibration.json");
    let calibration: CalibrationRecord = read_json(&calib_path)?;
    let cameras = calibration
        .cameras
        .iter()
        .map(|c| {
            c.to_model()
                .map(|m| (c.name.clone(), m))
                .map_err(|source| IoError::Ingest {
                    path: calib_path.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let frames_dir = dir.join("frames");
    let listing = fs::read_dir(&frames_dir).map_err(|source| IoError::Io {
        path: frames_dir.clone(),
        source,
    })?;
    let mut paths = Vec::new();
    for entry in listing {
        let entry = entry.map_err(|source| IoError::Io {
            path: frames_dir.clone(),
            source,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(IoError::Schema {
            path: frames_dir,
            message: "no frame files".into(),
        });
    }

    let mut frames: Vec<Frame> = Vec::with_capacity(paths.len());
    for path in paths {
        let record: FrameRecord = read_json(&path)?;
        let ingest = |source| IoError::Ingest {
            path: path.clone(),
            source,
        };
        let lidar = LidarFrame::new(
            record.timestamp,
            Vector3::from(record.lidar.origin),
            record.lidar.points.iter().map(|&p| Vector3::from(p)).collect(),
            record.lidar.descriptors,
        )
        .map_err(ingest)?;
        let mut masks = Vec::with_capacity(record.masks.len());
        for m in &record.masks {
            if !cameras.iter().any(|(n, _)| *n == m.camera) {
                return Err(IoError::Schema {
                    path: path.clone(),
                    message: format!("mask {} refers to unknown camera {:?}", m.id, m.camera),
                });
            }
            let mask =
                InstanceMask::from_rle(InstanceId(m.id), m.label.clone(), record.timestamp, &m.rle).map_err(ingest)?;
            masks.push((m.camera.clone(), mask));
        }
        if let Some(prev) = frames.last() {
            if record.timestamp.partial_cmp(&prev.lidar.timestamp) != Some(std::cmp::Ordering::Greater) {
                return Err(IoError::Schema {
                    path,
                    message: "frame timestamps must increase".into(),
                });
            }
        }
        frames.push(Frame { lidar, masks });
    }
    Ok(Sequence { cameras, frames })
}

/// Track positions per frame, the input format of the evaluator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracksRecord {
    pub frames: Vec<TrackFrame>,
}
