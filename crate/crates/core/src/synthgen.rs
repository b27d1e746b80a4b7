//! Synthetic scenes with known ground truth.
//!
//! Each object is a box whose surface (top and sides) is sampled once into a
//! canonical point set with a random unit descriptor per point. The box
//! drives along a coordinated-turn trajectory; every frame shows a random
//! contiguous angular sector of its surface, optionally with position and
//! descriptor noise, whole-frame dropout or a grossly displaced pose. A
//! single top-down pinhole camera supplies instance masks and sparse ground
//! points serve as background clutter.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ctsmooth::ct_predict;
use crate::geometry::Pose;
use crate::ingest::{CameraModel, InstanceId, InstanceMask, LidarFrame};
use crate::io::{self, Frame, IoError, PoseRecord, Sequence, TracksRecord};
use crate::moteval::{TrackEntry, TrackFrame};
use crate::register::mix_seed;

/// Name of the single camera of generated sequences.
pub const CAMERA_NAME: &str = "top";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub frames: usize,
    pub dt: f64,
    #[serde(default)]
    pub start_time: f64,
    pub objects: Vec<ObjectConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub scene: SceneConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub id: u32,
    #[serde(default = "default_label")]
    pub label: String,
    /// Box length (local x), width (y) and height (z) in meters.
    pub size: [f64; 3],
    /// Surface points per square meter. The default keeps every surface point
    /// a DBSCAN core point under the pipeline defaults (0.5 m, 10 points).
    #[serde(default = "default_density")]
    pub density: f64,
    pub speed: Profile,
    pub curvature: Profile,
    pub spawn: Spawn,
}

fn default_label() -> String {
    "car".into()
}

fn default_density() -> f64 {
    40.0
}

/// Ground-plane position and heading at the first frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spawn {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw: f64,
}

/// A scalar over time: a constant, or piecewise constant steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Steps(Vec<Step>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    /// Seconds since the start of the sequence.
    pub from: f64,
    pub value: f64,
}

impl Profile {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Steps(steps) => steps
                .iter()
                .take_while(|s| s.from <= t)
                .last()
                .or(steps.first())
                .map_or(0.0, |s| s.value),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Profile::Constant(v) => vec![*v],
            Profile::Steps(steps) => steps.iter().map(|s| s.value).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Isotropic Gaussian noise on observed point positions, meters.
    pub point_sigma: f64,
    /// Per-object, per-frame probability of not being observed at all.
    pub dropout: f64,
    /// Per-object, per-frame probability of being observed at a displaced pose.
    pub outlier_frames: f64,
    /// Horizontal displacement of outlier frames, meters.
    pub outlier_shift: f64,
    /// Gaussian noise on each descriptor component before renormalizing.
    pub descriptor_sigma: f64,
    /// Range of the visible angular sector of the surface, degrees.
    pub visible_sector: [f64; 2],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            point_sigma: 0.0,
            dropout: 0.0,
            outlier_frames: 0.0,
            outlier_shift: 5.0,
            descriptor_sigma: 0.0,
            visible_sector: [360.0, 360.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub descriptor_dim: usize,
    /// Ground points per frame.
    pub background_points: usize,
    /// Minimum horizontal gap between ground points and any object, meters.
    pub background_clearance: f64,
    pub lidar_origin: [f64; 3],
    pub camera: CameraConfig,
    /// Masks cover the projected box grown by this many pixels.
    pub mask_margin: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            descriptor_dim: 32,
            background_points: 200,
            background_clearance: 2.0,
            lidar_origin: [0.0, 0.0, 2.0],
            camera: CameraConfig::default(),
            mask_margin: 4.5,
        }
    }
}

/// Nadir-looking pinhole camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Ground point under the image center.
    pub center: [f64; 2],
    pub altitude: f64,
    /// Ground sampling distance at z = 0, meters per pixel.
    pub pixel_size: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            altitude: 1000.0,
            pixel_size: 0.25,
            width: 640,
            height: 480,
        }
    }
}

impl CameraConfig {
    pub fn model(&self) -> CameraModel {
        let f = self.altitude / self.pixel_size;
        let k = Matrix3::new(
            f,
            0.0,
            self.width as f64 / 2.0,
            0.0,
            f,
            self.height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        // Camera x = world x, camera y = -world y, looking down world -z.
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        let eye = Vector3::new(self.center[0], self.center[1], self.altitude);
        CameraModel::new(k, Pose::new(r, -(r * eye)), self.width, self.height).expect("validated camera configuration")
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn check(ok: bool, field: impl Into<String>, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError {
            field: field.into(),
            message: message.into(),
        })
    }
}

fn probability(value: f64, field: &str) -> Result<(), ConfigError> {
    check(
        (0.0..=1.0).contains(&value),
        field,
        format!("must be a probability in [0, 1], got {value}"),
    )
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.frames > 0, "frames", "must be at least 1")?;
        check(
            self.dt.is_finite() && self.dt > 0.0,
            "dt",
            format!("must be positive, got {}", self.dt),
        )?;
        check(self.start_time.is_finite(), "start_time", "must be finite")?;
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        check(ids.windows(2).all(|w| w[0] != w[1]), "objects", "ids must be unique")?;
        for (i, o) in self.objects.iter().enumerate() {
            let field = |name: &str| format!("objects[{i}].{name}");
            check(o.id != 0, field("id"), "0 is reserved for the background")?;
            check(
                o.size.iter().all(|s| s.is_finite() && *s > 0.0),
                field("size"),
                "dimensions must be positive",
            )?;
            check(
                o.density.is_finite() && o.density > 0.0,
                field("density"),
                "must be positive",
            )?;
            check(
                o.speed.values().iter().all(|v| v.is_finite()),
                field("speed"),
                "must be finite",
            )?;
            check(
                o.curvature.values().iter().all(|v| v.is_finite()),
                field("curvature"),
                "must be finite",
            )?;
            check(
                o.size[2] < self.scene.camera.altitude,
                field("size"),
                "box is taller than the camera altitude",
            )?;
        }
        let n = &self.noise;
        probability(n.dropout, "noise.dropout")?;
        probability(n.outlier_frames, "noise.outlier_frames")?;
        check(
            n.point_sigma >= 0.0 && n.point_sigma.is_finite(),
            "noise.point_sigma",
            "must be non-negative",
        )?;
        check(
            n.descriptor_sigma >= 0.0 && n.descriptor_sigma.is_finite(),
            "noise.descriptor_sigma",
            "must be non-negative",
        )?;
        check(n.outlier_shift.is_finite(), "noise.outlier_shift", "must be finite")?;
        let [lo, hi] = n.visible_sector;
        check(
            0.0 < lo && lo <= hi && hi <= 360.0,
            "noise.visible_sector",
            "must satisfy 0 < min <= max <= 360",
        )?;
        let s = &self.scene;
        check(s.descriptor_dim > 0, "scene.descriptor_dim", "must be at least 1")?;
        check(
            s.background_clearance >= 0.0,
            "scene.background_clearance",
            "must be non-negative",
        )?;
        check(s.mask_margin >= 0.0, "scene.mask_margin", "must be non-negative")?;
        let c = &s.camera;
        check(
            c.altitude.is_finite() && c.altitude > 0.0,
            "scene.camera.altitude",
            "must be positive",
        )?;
        check(
            c.pixel_size.is_finite() && c.pixel_size > 0.0,
            "scene.camera.pixel_size",
            "must be positive",
        )?;
        check(c.width > 0 && c.height > 0, "scene.camera", "image must be non-empty")?;
        Ok(())
    }

    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.frames).map(|k| self.start_time + k as f64 * self.dt).collect()
    }
}

/// Everything known about one object.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTruth {
    pub id: InstanceId,
    pub label: String,
    pub size: Vector3<f64>,
    /// World-from-object pose at every frame; the origin is the box center.
    pub poses: Vec<Pose>,
    pub speeds: Vec<f64>,
    pub curvatures: Vec<f64>,
    /// Surface points in the object frame.
    pub canonical_points: Vec<Vector3<f64>>,
    /// Unit descriptors of `canonical_points`.
    pub canonical_descriptors: Vec<Vec<f64>>,
}

/// The points one object contributed to one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectView {
    pub id: InstanceId,
    /// Pose the points were generated at (displaced for outlier frames).
    pub pose: Pose,
    pub outlier: bool,
    pub points: Vec<Vector3<f64>>,
    pub descriptors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFrame {
    pub timestamp: f64,
    /// Observed objects; dropped-out objects are absent.
    pub views: Vec<ObjectView>,
    pub frame: Frame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub timestamps: Vec<f64>,
    pub camera: CameraModel,
    pub objects: Vec<ObjectTruth>,
    pub frames: Vec<SyntheticFrame>,
}

fn sample_surface(size: &Vector3<f64>, density: f64, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let (l, w, h) = (size.x, size.y, size.z);
    // Top, then the +x/-x and +y/-y sides; the underside is never seen.
    let areas = [l * w, w * h, w * h, l * h, l * h];
    let total: f64 = areas.iter().sum();
    let count = (density * total).round().max(1.0) as usize;
    (0..count)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut face = 0;
            while face + 1 < areas.len() && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let a = rng.random_range(-0.5..0.5);
            let b = rng.random_range(-0.5..0.5);
            match face {
                0 => Vector3::new(a * l, b * w, h / 2.0),
                1 => Vector3::new(l / 2.0, a * w, b * h),
                2 => Vector3::new(-l / 2.0, a * w, b * h),
                3 => Vector3::new(a * l, w / 2.0, b * h),
                _ => Vector3::new(a * l, -w / 2.0, b * h),
            }
        })
        .collect()
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn integrate(config: &ScenarioConfig, object: &ObjectConfig, size: &Vector3<f64>) -> (Vec<Pose>, Vec<f64>, Vec<f64>) {
    let times = config.timestamps();
    let mut pose = Pose::new(
        *Pose::rot_z(object.spawn.yaw).rotation(),
        Vector3::new(object.spawn.x, object.spawn.y, size.z / 2.0),
    );
    let (mut poses, mut speeds, mut curvatures) = (Vec::new(), Vec::new(), Vec::new());
    for &t in &times {
        let rel = t - config.start_time;
        let (v, kappa) = (object.speed.at(rel), object.curvature.at(rel));
        poses.push(pose);
        speeds.push(v);
        curvatures.push(kappa);
        pose = ct_predict(&pose, v, kappa, config.dt);
    }
    (poses, speeds, curvatures)
}

fn box_corners(pose: &Pose, size: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let half = size / 2.0;
    (0..8)
        .map(|i| {
            let s = |bit: usize| if i & (1 << bit) == 0 { -1.0 } else { 1.0 };
            pose.transform_point(&Vector3::new(s(0) * half.x, s(1) * half.y, s(2) * half.z))
        })
        .collect()
}

/// Convex hull, counter-clockwise, without collinear points.
fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| (a - o).perp(&(b - o));
    let mut hull: Vec<Vector2<f64>> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let s = ((p - a).dot(&ab) / ab.norm_squared().max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

/// Pixels whose centers lie inside the polygon or within `margin` of it.
fn polygon_mask(
    id: InstanceId,
    label: &str,
    time: f64,
    cam: &CameraModel,
    hull: &[Vector2<f64>],
    margin: f64,
) -> InstanceMask {
    let (w, h) = (cam.width(), cam.height());
    let mut mask = InstanceMask::empty(id, label, time, w, h);
    if hull.is_empty() {
        return mask;
    }
    let lo = hull.iter().fold(Vector2::repeat(f64::INFINITY), |m, p| m.inf(p)) - Vector2::repeat(margin + 1.0);
    let hi = hull.iter().fold(Vector2::repeat(f64::NEG_INFINITY), |m, p| m.sup(p)) + Vector2::repeat(margin + 1.0);
    let x0 = lo.x.floor().max(0.0) as u32;
    let y0 = lo.y.floor().max(0.0) as u32;
    let x1 = (hi.x.ceil().max(0.0) as u32).min(w);
    let y1 = (hi.y.ceil().max(0.0) as u32).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let c = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let n = hull.len();
            let inside = n >= 3 && (0..n).all(|i| (hull[(i + 1) % n] - hull[i]).perp(&(c - hull[i])) >= 0.0);
            let near = (0..n).any(|i| segment_distance(&c, &hull[i], &hull[(i + 1) % n]) <= margin);
            if inside || near {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

pub fn generate(config: &ScenarioConfig) -> Result<Scenario, ConfigError> {
    config.validate()?;
    let camera = config.scene.camera.model();
    let timestamps = config.timestamps();
    let dim = config.scene.descriptor_dim;
    let noise = &config.noise;

    let objects: Vec<ObjectTruth> = config
        .objects
        .iter()
        .map(|o| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, o.id as u64));
            let size = Vector3::from(o.size);
            let canonical_points = sample_surface(&size, o.density, &mut rng);
            let canonical_descriptors = canonical_points.iter().map(|_| unit_gaussian(dim, &mut rng)).collect();
            let (poses, speeds, curvatures) = integrate(config, o, &size);
            ObjectTruth {
                id: InstanceId(o.id),
                label: o.label.clone(),
                size,
                poses,
                speeds,
                curvatures,
                canonical_points,
                canonical_descriptors,
            }
        })
        .collect();

    let point_noise = Normal::new(0.0, noise.point_sigma).expect("validated sigma");
    let descriptor_noise = Normal::new(0.0, noise.descriptor_sigma).expect("validated sigma");
    let origin = Vector3::from(config.scene.lidar_origin);
    let cam_cfg = &config.scene.camera;
    let half_extent = Vector2::new(
        cam_cfg.width as f64 * cam_cfg.pixel_size / 2.0,
        cam_cfg.height as f64 * cam_cfg.pixel_size / 2.0,
    );

    let mut frames = Vec::with_capacity(timestamps.len());
    for (k, &t) in timestamps.iter().enumerate() {
        let mut views = Vec::new();
        for obj in &objects {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(config.seed, obj.id.0 as u64), k as u64 + 1));
            // Draw every random decision up front so each knob only changes its own effect.
            let dropped = rng.random::<f64>() < noise.dropout;
            let outlier = rng.random::<f64>() < noise.outlier_frames;
            let shift_dir = rng.random_range(-PI..PI);
            let sector_center = rng.random_range(-PI..PI);
            let [lo, hi] = noise.visible_sector;
            let sector = if hi > lo { rng.random_range(lo..=hi) } else { lo }.to_radians();
            if dropped {
                continue;
            }
            let mut pose = obj.poses[k];
            if outlier {
                let shift = Vector3::new(shift_dir.cos(), shift_dir.sin(), 0.0) * noise.outlier_shift;
                pose = Pose::new(*pose.rotation(), pose.translation() + shift);
            }
            let mut points = Vec::new();
            let mut descriptors = Vec::new();
            for (p, d) in obj.canonical_points.iter().zip(&obj.canonical_descriptors) {
                let azimuth = p.y.atan2(p.x);
                if sector < 2.0 * PI && wrap_angle(azimuth - sector_center).abs() > sector / 2.0 {
                    continue;
                }
                let mut q = pose.transform_point(p);
                if noise.point_sigma > 0.0 {
                    q += Vector3::from_fn(|_, _| point_noise.sample(&mut rng));
                }
                points.push(q);
                descriptors.push(if noise.descriptor_sigma > 0.0 {
                    let noisy: Vec<f64> = d.iter().map(|x| x + descriptor_noise.sample(&mut rng)).collect();
                    let norm = noisy.iter().map(|x| x * x).sum::<f64>().sqrt();
                    noisy.into_iter().map(|x| x / norm).collect()
                } else {
                    d.clone()
                });
            }
            views.push(ObjectView {
                id: obj.id,
                pose,
                outlier,
                points,
                descriptors,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed ^ 0xB4C6_0000, k as u64));
        let center = Vector2::from(cam_cfg.center);
        let mut ground = Vec::new();
        for _ in 0..config.scene.background_points {
            let p = Vector2::new(
                center.x + rng.random_range(-half_extent.x..half_extent.x),
                center.y + rng.random_range(-half_extent.y..half_extent.y),
            );
            let clear = views.iter().all(|v| {
                let obj = objects.iter().find(|o| o.id == v.id).expect("view of known object");
                (p - v.pose.translation().xy()).norm() > obj.size.xy().norm() / 2.0 + config.scene.background_clearance
            });
            let descriptor = unit_gaussian(dim, &mut rng);
            if clear {
                ground.push((Vector3::new(p.x, p.y, 0.0), descriptor));
            }
        }

        let mut points = Vec::new();
        let mut descriptors = Vec::new();
        for v in &views {
            points.extend(v.points.iter().copied());
            descriptors.extend(v.descriptors.iter().cloned());
        }
        for (p, d) in ground {
            points.push(p);
            descriptors.push(d);
        }
        let lidar = LidarFrame::new(t, origin, points, descriptors).expect("generated descriptors are unit vectors");

        let masks = views
            .iter()
            .map(|v| {
                let obj = objects.iter().find(|o| o.id == v.id).expect("view of known object");
                let projected = box_corners(&v.pose, &obj.size)
                    .iter()
                    .map(|c| {
                        let (u, vv, _) = camera.project(c);
                        Vector2::new(u, vv)
                    })
                    .collect();
                let hull = convex_hull(projected);
                let mask = polygon_mask(v.id, &obj.label, t, &camera, &hull, config.scene.mask_margin);
                (CAMERA_NAME.to_owned(), mask)
            })
            .filter(|(_, m)| !m.is_empty())
            .collect();

        frames.push(SyntheticFrame {
            timestamp: t,
            views,
            frame: Frame { lidar, masks },
        });
    }

    Ok(Scenario {
        config: config.clone(),
        timestamps,
        camera,
        objects,
        frames,
    })
}

impl Scenario {
    pub fn sequence(&self) -> Sequence {
        Sequence {
            cameras: vec![(CAMERA_NAME.to_owned(), self.camera.clone())],
            frames: self.frames.iter().map(|f| f.frame.clone()).collect(),
        }
    }

    /// Ground-truth box centers at every frame where the center lies inside
    /// the image and within `max_range` of the lidar origin.
    pub fn ground_truth_tracks(&self, max_range: f64) -> Vec<TrackFrame> {
        let origin = Vector3::from(self.config.scene.lidar_origin);
        self.timestamps
            .iter()
            .enumerate()
            .map(|(k, &t)| TrackFrame {
                timestamp: t,
                entries: self
                    .objects
                    .iter()
                    .map(|o| *o.poses[k].translation())
                    .zip(&self.objects)
                    .filter(|(c, _)| (c - origin).norm() <= max_range && self.camera.pixel(c).is_some())
                    .map(|(c, o)| TrackEntry {
                        id: o.id.0,
                        position: c.into(),
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn ground_truth_record(&self) -> GroundTruthRecord {
        GroundTruthRecord {
            timestamps: self.timestamps.clone(),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id.0,
                    label: o.label.clone(),
                    size: o.size.into(),
                    states: (0..o.poses.len())
                        .map(|k| StateRecord {
                            timestamp: self.timestamps[k],
                            pose: PoseRecord::from(&o.poses[k]),
                            speed: o.speeds[k],
                            curvature: o.curvatures[k],
                            observed: self.frames[k].views.iter().any(|v| v.id == o.id),
                            outlier: self.frames[k].views.iter().any(|v| v.id == o.id && v.outlier),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub timestamp: f64,
    pub pose: PoseRecord,
    pub speed: f64,
    pub curvature: f64,
    pub observed: bool,
    pub outlier: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: u32,
    pub label: String,
    pub size: [f64; 3],
    pub states: Vec<StateRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub timestamps: Vec<f64>,
    pub objects: Vec<ObjectRecord>,
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const GROUND_TRUTH_TRACKS_FILE: &str = "ground_truth_tracks.json";
pub const SCENARIO_FILE: &str = "scenario.json";

/// Writes the sequence plus ground truth, tracks for the evaluator
/// (gated by `max_range`) and a copy of the configuration.
pub fn emit(scenario: &Scenario, dir: &Path, max_range: f64) -> Result<(), IoError> {
    io::write_sequence(dir, &scenario.sequence())?;
    io::write_json(&dir.join(GROUND_TRUTH_FILE), &scenario.ground_truth_record(), true)?;
    let tracks = TracksRecord {
        frames: scenario.ground_truth_tracks(max_range),
    };
    io::write_json(&dir.join(GROUND_TRUTH_TRACKS_FILE), &tracks, true)?;
    io::write_json(&dir.join(SCENARIO_FILE), &scenario.config, true)
}
