//! Pipeline hyperparameters, loaded from an optional JSON file and
//! `section.field=value` overrides on top of the defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use trajlift::ctsmooth::SmootherParams;
use trajlift::ingest::LiftParams;
use trajlift::moteval::DEFAULT_THRESHOLDS;
use trajlift::register::RegistrationParams;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_points: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps: 0.5,
            min_points: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    /// Matching distance thresholds in meters.
    pub thresholds: Vec<f64>,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub lift: LiftParams,
    pub cluster: ClusterParams,
    pub register: RegistrationParams,
    pub smooth: SmootherParams,
    pub eval: EvalParams,
}

impl PipelineConfig {
    /// Defaults, then the file at `path` (if any), then each `key=value`
    /// override in order. Values parse as JSON and fall back to plain strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(Self::default()).expect("config serializes");
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            merge(&mut value, file, "")?;
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override {item:?} is not of the form key=value")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
            set_path(&mut value, key.trim(), parsed)?;
        }
        let config: Self = serde_json::from_value(value).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, field: &str, what: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError(format!("{field}: {what}")))
            }
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        check(positive(self.lift.max_range), "lift.max_range", "must be positive")?;
        check(positive(self.cluster.eps), "cluster.eps", "must be positive")?;
        check(self.cluster.min_points >= 1, "cluster.min_points", "must be at least 1")?;

        let r = &self.register;
        check(r.iterations >= 1, "register.iterations", "must be at least 1")?;
        check(
            (-1.0..=1.0).contains(&r.min_similarity),
            "register.min_similarity",
            "must lie in [-1, 1]",
        )?;
        check(positive(r.inlier_radius), "register.inlier_radius", "must be positive")?;
        check(
            (0.0..=1.0).contains(&r.fitness_threshold),
            "register.fitness_threshold",
            "must lie in [0, 1]",
        )?;
        check(r.max_points >= 3, "register.max_points", "must be at least 3")?;
        check(
            r.confidence > 0.0 && r.confidence <= 1.0,
            "register.confidence",
            "must lie in (0, 1]",
        )?;

        let s = &self.smooth;
        for (name, v) in [
            ("smooth.measurement_rot_sigma", s.measurement_rot_sigma),
            ("smooth.measurement_trans_sigma", s.measurement_trans_sigma),
            ("smooth.motion_rot_sigma", s.motion_rot_sigma),
            ("smooth.motion_trans_sigma", s.motion_trans_sigma),
            ("smooth.speed_variance_rate", s.speed_variance_rate),
            ("smooth.curvature_variance_rate", s.curvature_variance_rate),
            ("smooth.attitude_sigma", s.attitude_sigma),
            ("smooth.curvature_prior_sigma", s.curvature_prior_sigma),
            ("smooth.outlier_threshold", s.outlier_threshold),
            ("smooth.initial_lambda", s.initial_lambda),
        ] {
            check(positive(v), name, "must be positive")?;
        }
        check(
            s.measurement_huber.is_none_or(positive),
            "smooth.measurement_huber",
            "must be positive or null",
        )?;
        check(
            s.relative_tolerance >= 0.0,
            "smooth.relative_tolerance",
            "must be non-negative",
        )?;
        check(
            s.static_threshold >= 0.0,
            "smooth.static_threshold",
            "must be non-negative",
        )?;

        check(!self.eval.thresholds.is_empty(), "eval.thresholds", "must not be empty")?;
        check(
            self.eval.thresholds.iter().all(|&t| positive(t)),
            "eval.thresholds",
            "must all be positive",
        )?;
        Ok(())
    }
}

/// Overlays `patch` onto `base`, refusing keys the base does not have.
fn merge(base: &mut Value, patch: Value, prefix: &str) -> Result<(), ConfigError> {
    match (base, patch) {
        (Value::Object(base), Value::Object(patch)) => {
            for (key, v) in patch {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                let slot = base
                    .get_mut(&key)
                    .ok_or_else(|| ConfigError(format!("unknown configuration field {path}")))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let unknown = || ConfigError(format!("unknown configuration field {key}"));
    let mut node = root;
    for part in key.split('.') {
        node = node.as_object_mut().and_then(|m| m.get_mut(part)).ok_or_else(unknown)?;
    }
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn get(config: &PipelineConfig, path: &str) -> Value {
        let mut v = serde_json::to_value(config).unwrap();
        for part in path.split('.') {
            v = v[part].take();
        }
        v
    }

    #[test]
    fn defaults_match_reference_values() {
        let c = PipelineConfig::default();
        let table: &[(&str, Value)] = &[
            ("lift.erosion_radius", 3.into()),
            ("lift.max_range", 80.0.into()),
            ("cluster.eps", 0.5.into()),
            ("cluster.min_points", 10.into()),
            ("register.min_similarity", 0.8.into()),
            ("register.iterations", 100_000.into()),
            ("register.inlier_radius", 0.1.into()),
            ("register.fitness_threshold", 0.5.into()),
            ("register.max_points", 5000.into()),
            ("smooth.measurement_huber", 1.0.into()),
            ("smooth.measurement_rot_sigma", 0.1.into()),
            ("smooth.measurement_trans_sigma", 0.2.into()),
            ("smooth.motion_rot_sigma", 0.1.into()),
            ("smooth.motion_trans_sigma", 0.2.into()),
            ("smooth.speed_variance_rate", 0.5.into()),
            ("smooth.curvature_variance_rate", 1e-5.into()),
            ("smooth.attitude_sigma", 0.4.into()),
            ("smooth.curvature_prior_sigma", 0.01.into()),
            ("smooth.outlier_threshold", 1.345.into()),
            ("smooth.max_iterations", 10.into()),
            ("smooth.static_threshold", 1.0.into()),
            ("eval.thresholds", serde_json::json!([0.5, 1.0, 2.0, 3.0, 5.0, 10.0])),
        ];
        for (path, want) in table {
            assert_eq!(&get(&c, path), want, "{path}");
        }
    }

    #[test]
    fn overrides_apply_in_order() {
        let c = PipelineConfig::load(
            None,
            &[
                "register.iterations=50".into(),
                "seed=9".into(),
                "register.iterations=70".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.register.iterations, 70);
        assert_eq!(c.seed, 9);
        let c = PipelineConfig::load(None, &["smooth.measurement_huber=null".into()]).unwrap();
        assert_eq!(c.smooth.measurement_huber, None);
    }

    #[test]
    fn bad_overrides_name_the_field() {
        let err = |o: &str| PipelineConfig::load(None, &[o.into()]).unwrap_err().0;
        assert!(err("register.nope=1").contains("register.nope"));
        assert!(err("cluster.eps=-1").contains("cluster.eps"));
        assert!(err("register.iterations=many").contains("invalid type"));
        assert!(err("seed").contains("key=value"));
        assert!(err("eval.thresholds=[]").contains("eval.thresholds"));
    }

    #[test]
    fn file_layer_rejects_unknown_keys() {
        let dir = std::env::temp_dir().join(format!("trajlift-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        std::fs::write(&path, r#"{"cluster": {"eps": 0.7}}"#).unwrap();
        assert_eq!(PipelineConfig::load(Some(&path), &[]).unwrap().cluster.eps, 0.7);
        std::fs::write(&path, r#"{"cluster": {"radius": 0.7}}"#).unwrap();
        assert!(PipelineConfig::load(Some(&path), &[])
            .unwrap_err()
            .0
            .contains("cluster.radius"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
