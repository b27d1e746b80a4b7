//! Lift, cluster, register and smooth every instance of a sequence.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use trajlift::ctsmooth::{smooth_measurements, SmoothError, SmoothedTrajectory};
use trajlift::ingest::{keep_largest_cluster, lift_instance_points, InstanceMask};
use trajlift::io::{PoseRecord, Sequence};
use trajlift::moteval::{TrackEntry, TrackFrame};
use trajlift::register::{build_trajectory, mix_seed, MeasuredTrajectory, Measurement, RegistrationFailure};
use trajlift::{InstanceId, InstanceObservation, Pose};

use crate::config::PipelineConfig;

/// One structured log line. Events are emitted in a fixed order (frames
/// first, then instances by id) and carry no wall-clock data, so logs from
/// seeded runs can be compared verbatim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Lift {
        timestamp: f64,
        instances: Vec<u32>,
        points: usize,
    },
    ClusterDropped {
        timestamp: f64,
        id: u32,
    },
    Registered {
        id: u32,
        observations: usize,
        measurements: usize,
        failures: usize,
    },
    RegisterFailed {
        id: u32,
        error: String,
    },
    Smoothed {
        id: u32,
        states: usize,
        rejected: usize,
        is_static: bool,
        final_cost: f64,
    },
    SmoothFailed {
        id: u32,
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub timestamp: f64,
    pub pose: PoseRecord,
    pub fitness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub timestamp: f64,
    #[serde(flatten)]
    pub failure: RegistrationFailure,
}

/// Registration output for one instance, plus the timestep grid it will be
/// smoothed over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRecord {
    pub id: u32,
    pub label: String,
    pub init_time: f64,
    pub canonical_points: usize,
    pub grid: Vec<f64>,
    pub measurements: Vec<MeasurementRecord>,
    pub failures: Vec<FailureRecord>,
}

impl MeasuredRecord {
    pub fn from_trajectory(traj: &MeasuredTrajectory, label: &str, grid: Vec<f64>) -> Self {
        Self {
            id: traj.id.0,
            label: label.to_owned(),
            init_time: traj.init_time,
            canonical_points: traj.canonical.points.len(),
            grid,
            measurements: traj
                .measurements
                .iter()
                .map(|m| MeasurementRecord {
                    timestamp: m.timestamp,
                    pose: PoseRecord::from(&m.pose),
                    fitness: m.fitness,
                })
                .collect(),
            failures: traj
                .failures
                .iter()
                .map(|&(timestamp, failure)| FailureRecord { timestamp, failure })
                .collect(),
        }
    }

    pub fn measurements(&self) -> Vec<Measurement> {
        self.measurements
            .iter()
            .map(|m| Measurement {
                timestamp: m.timestamp,
                pose: m.pose.to_pose(),
                fitness: m.fitness,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub timestamp: f64,
    pub pose: PoseRecord,
    pub speed: f64,
    pub curvature: f64,
    pub measured: bool,
    pub rejected: bool,
}

/// Smoothed trajectory of one instance. When smoothing fails outright the
/// raw measurements are passed through with `smoothed` unset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedRecord {
    pub id: u32,
    pub label: String,
    pub smoothed: bool,
    pub is_static: bool,
    pub final_cost: f64,
    /// Body-to-motion-frame rotation as `[w, x, y, z]`.
    pub shared_rotation: [f64; 4],
    pub states: Vec<StateRecord>,
}

impl SmoothedRecord {
    pub fn from_smoothed(s: &SmoothedTrajectory, label: &str) -> Self {
        Self {
            id: s.id.0,
            label: label.to_owned(),
            smoothed: true,
            is_static: s.is_static,
            final_cost: s.final_cost,
            shared_rotation: Pose::from_rotation(s.state.shared_rotation).quaternion_wxyz(),
            states: (0..s.timestamps.len())
                .map(|k| StateRecord {
                    timestamp: s.timestamps[k],
                    pose: PoseRecord::from(&s.state.poses[k]),
                    speed: s.state.speeds[k],
                    curvature: s.state.curvatures[k],
                    measured: s.measured[k],
                    rejected: s.rejected.contains(&s.timestamps[k]),
                })
                .collect(),
        }
    }

    pub fn passthrough(record: &MeasuredRecord) -> Self {
        Self {
            id: record.id,
            label: record.label.clone(),
            smoothed: false,
            is_static: false,
            final_cost: 0.0,
            shared_rotation: [1.0, 0.0, 0.0, 0.0],
            states: record
                .measurements
                .iter()
                .map(|m| StateRecord {
                    timestamp: m.timestamp,
                    pose: m.pose,
                    speed: 0.0,
                    curvature: 0.0,
                    measured: true,
                    rejected: false,
                })
                .collect(),
        }
    }

    pub fn rejected_count(&self) -> usize {
        self.states.iter().filter(|s| s.rejected).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub id: u32,
    pub label: String,
    pub observations: usize,
    pub measurements: usize,
    pub registration_failures: usize,
    pub rejected: usize,
    pub is_static: bool,
    /// `smoothed`, `passthrough` or `failed`.
    pub status: String,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub instances: usize,
    pub smoothed: usize,
    pub static_count: usize,
    pub rejected_measurements: usize,
    pub failed: Vec<u32>,
    pub per_instance: Vec<InstanceSummary>,
}

/// Everything one instance produced on its way through the pipeline.
#[derive(Clone, Debug)]
pub struct InstanceOutcome {
    pub id: InstanceId,
    pub label: String,
    pub observations: usize,
    pub measured: Option<MeasuredRecord>,
    pub smoothed: Option<SmoothedRecord>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub outcomes: Vec<InstanceOutcome>,
    pub events: Vec<Event>,
    pub tracks: Vec<TrackFrame>,
    pub summary: RunSummary,
}

/// Instance observations of one frame, merged over cameras and reduced to
/// their largest cluster.
fn lift_frame(
    frame: &trajlift::io::Frame,
    sequence: &Sequence,
    config: &PipelineConfig,
) -> (Vec<InstanceObservation>, Vec<Event>) {
    let mut by_camera: BTreeMap<&str, Vec<InstanceMask>> = BTreeMap::new();
    for (camera, mask) in &frame.masks {
        by_camera.entry(camera.as_str()).or_default().push(mask.clone());
    }

    let mut merged: BTreeMap<InstanceId, InstanceObservation> = BTreeMap::new();
    for (camera, masks) in by_camera {
        let cam = sequence
            .camera(camera)
            .expect("cameras are checked when the sequence is read");
        for obs in lift_instance_points(&frame.lidar, &masks, cam, &config.lift) {
            match merged.get_mut(&obs.id) {
                None => {
                    merged.insert(obs.id, obs);
                }
                Some(acc) => {
                    let seen: std::collections::HashSet<[u64; 3]> = acc.points.iter().map(point_key).collect();
                    for (p, d) in obs.points.into_iter().zip(obs.descriptors) {
                        if !seen.contains(&point_key(&p)) {
                            acc.points.push(p);
                            acc.descriptors.push(d);
                        }
                    }
                }
            }
        }
    }

    let timestamp = frame.lidar.timestamp;
    let mut events = vec![Event::Lift {
        timestamp,
        instances: merged.keys().map(|id| id.0).collect(),
        points: merged.values().map(|o| o.len()).sum(),
    }];
    let mut kept = Vec::new();
    for (id, obs) in merged {
        match keep_largest_cluster(&obs, config.cluster.eps, config.cluster.min_points) {
            Ok(o) => kept.push(o),
            Err(_) => events.push(Event::ClusterDropped { timestamp, id: id.0 }),
        }
    }
    (kept, events)
}

fn point_key(p: &Vector3<f64>) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

/// Sequence timestamps inside the span of the measurements.
fn smoothing_grid(timestamps: &[f64], measurements: &[MeasurementRecord]) -> Vec<f64> {
    let (Some(first), Some(last)) = (measurements.first(), measurements.last()) else {
        return Vec::new();
    };
    timestamps
        .iter()
        .copied()
        .filter(|&t| t >= first.timestamp && t <= last.timestamp)
        .collect()
}

/// Smooths one registered instance, falling back to the raw measurements
/// when outlier pruning leaves nothing to smooth.
pub fn smooth_record(record: &MeasuredRecord, config: &PipelineConfig) -> Result<SmoothedRecord, SmoothError> {
    let id = InstanceId(record.id);
    match smooth_measurements(id, &record.measurements(), &record.grid, &config.smooth) {
        Ok(s) => Ok(SmoothedRecord::from_smoothed(&s, &record.label)),
        Err(SmoothError::AllMeasurementsRejected { rejected }) => {
            log::warn!("instance {id}: all {rejected} measurements rejected, keeping raw poses");
            Ok(SmoothedRecord::passthrough(record))
        }
        Err(e) => Err(e),
    }
}

/// Lifts and registers every instance of the sequence.
pub fn register_sequence(sequence: &Sequence, config: &PipelineConfig) -> (Vec<InstanceOutcome>, Vec<Event>) {
    let lifted: Vec<_> = sequence
        .frames
        .par_iter()
        .map(|f| lift_frame(f, sequence, config))
        .collect();

    let mut labels: BTreeMap<InstanceId, String> = BTreeMap::new();
    for frame in &sequence.frames {
        for (_, m) in &frame.masks {
            labels.entry(m.id).or_insert_with(|| m.label.clone());
        }
    }

    let mut events = Vec::new();
    let mut grouped: BTreeMap<InstanceId, Vec<InstanceObservation>> = BTreeMap::new();
    for (obs, ev) in lifted {
        events.extend(ev);
        for o in obs {
            grouped.entry(o.id).or_default().push(o);
        }
    }
    for id in labels.keys() {
        grouped.entry(*id).or_default();
    }

    let timestamps = sequence.timestamps();
    let outcomes: Vec<InstanceOutcome> = grouped
        .into_par_iter()
        .map(|(id, obs)| {
            let label = labels.get(&id).cloned().unwrap_or_default();
            let mut outcome = InstanceOutcome {
                id,
                label,
                observations: obs.len(),
                measured: None,
                smoothed: None,
                error: None,
            };
            match build_trajectory(&obs, &config.register, mix_seed(config.seed, id.0 as u64)) {
                Ok(traj) => {
                    let mut record = MeasuredRecord::from_trajectory(&traj.recentered(), &outcome.label, Vec::new());
                    record.grid = smoothing_grid(&timestamps, &record.measurements);
                    outcome.measured = Some(record);
                }
                Err(e) => outcome.error = Some(e.to_string()),
            }
            outcome
        })
        .collect();

    for o in &outcomes {
        events.push(match (&o.measured, &o.error) {
            (Some(m), _) => Event::Registered {
                id: o.id.0,
                observations: o.observations,
                measurements: m.measurements.len(),
                failures: m.failures.len(),
            },
            (None, e) => Event::RegisterFailed {
                id: o.id.0,
                error: e.clone().unwrap_or_default(),
            },
        });
    }
    (outcomes, events)
}

/// Smooths every registered instance in place and logs the results.
pub fn smooth_outcomes(outcomes: &mut [InstanceOutcome], config: &PipelineConfig) -> Vec<Event> {
    outcomes.par_iter_mut().for_each(|o| {
        let Some(record) = &o.measured else {
            return;
        };
        match smooth_record(record, config) {
            Ok(s) => o.smoothed = Some(s),
            Err(e) => o.error = Some(e.to_string()),
        }
    });
    outcomes
        .iter()
        .filter(|o| o.measured.is_some())
        .map(|o| match &o.smoothed {
            Some(s) => Event::Smoothed {
                id: o.id.0,
                states: s.states.len(),
                rejected: s.rejected_count(),
                is_static: s.is_static,
                final_cost: s.final_cost,
            },
            None => Event::SmoothFailed {
                id: o.id.0,
                error: o.error.clone().unwrap_or_default(),
            },
        })
        .collect()
}

/// Predicted track positions at every sequence timestamp.
pub fn predicted_tracks(timestamps: &[f64], smoothed: &[&SmoothedRecord]) -> Vec<TrackFrame> {
    timestamps
        .iter()
        .map(|&t| TrackFrame {
            timestamp: t,
            entries: smoothed
                .iter()
                .filter_map(|s| {
                    s.states.iter().find(|st| st.timestamp == t).map(|st| TrackEntry {
                        id: s.id,
                        position: st.pose.translation,
                    })
                })
                .collect(),
        })
        .collect()
}

pub fn summarize(frames: usize, outcomes: &[InstanceOutcome]) -> RunSummary {
    let per_instance: Vec<InstanceSummary> = outcomes
        .iter()
        .map(|o| {
            let status = match &o.smoothed {
                Some(s) if s.smoothed => "smoothed",
                Some(_) => "passthrough",
                None => "failed",
            };
            InstanceSummary {
                id: o.id.0,
                label: o.label.clone(),
                observations: o.observations,
                measurements: o.measured.as_ref().map_or(0, |m| m.measurements.len()),
                registration_failures: o.measured.as_ref().map_or(0, |m| m.failures.len()),
                rejected: o.smoothed.as_ref().map_or(0, |s| s.rejected_count()),
                is_static: o.smoothed.as_ref().is_some_and(|s| s.is_static),
                status: status.to_owned(),
                error: o.error.clone(),
            }
        })
        .collect();
    RunSummary {
        frames,
        instances: per_instance.len(),
        smoothed: per_instance.iter().filter(|s| s.status == "smoothed").count(),
        static_count: per_instance.iter().filter(|s| s.is_static).count(),
        rejected_measurements: per_instance.iter().map(|s| s.rejected).sum(),
        failed: per_instance
            .iter()
            .filter(|s| s.status == "failed")
            .map(|s| s.id)
            .collect(),
        per_instance,
    }
}

/// The whole pipeline on an in-memory sequence.
pub fn run(sequence: &Sequence, config: &PipelineConfig) -> RunOutput {
    let (mut outcomes, mut events) = register_sequence(sequence, config);
    events.extend(smooth_outcomes(&mut outcomes, config));
    let smoothed: Vec<&SmoothedRecord> = outcomes.iter().filter_map(|o| o.smoothed.as_ref()).collect();
    let tracks = predicted_tracks(&sequence.timestamps(), &smoothed);
    let summary = summarize(sequence.frames.len(), &outcomes);
    RunOutput {
        outcomes,
        events,
        tracks,
        summary,
    }
}
