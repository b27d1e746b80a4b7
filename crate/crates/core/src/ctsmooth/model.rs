use nalgebra::Vector3;

use crate::geometry::Pose;

/// Curvatures below this use the series form of the arc increment.
pub const STRAIGHT_LINE_KAPPA: f64 = 1e-8;

/// Body-frame increment of the coordinated-turn model over `dt`: an arc of
/// length `v dt` with curvature `kappa` in the local xy-plane.
pub fn ct_increment(v: f64, kappa: f64, dt: f64) -> Pose {
    let theta = kappa * v * dt;
    let (dx, dy) = if kappa.abs() < STRAIGHT_LINE_KAPPA {
        (v * dt, kappa * v * v * dt * dt / 2.0)
    } else {
        // 1 - cos(theta) = 2 sin^2(theta / 2), without the cancellation.
        let half = (theta / 2.0).sin();
        (theta.sin() / kappa, 2.0 * half * half / kappa)
    };
    let rot = Pose::rot_z(theta);
    Pose::new(*rot.rotation(), Vector3::new(dx, dy, 0.0))
}

/// Propagates `pose` (local x forward) one coordinated-turn step.
pub fn ct_predict(pose: &Pose, v: f64, kappa: f64, dt: f64) -> Pose {
    pose.compose(&ct_increment(v, kappa, dt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_speed_is_stationary() {
        let p = Pose::new(*Pose::rot_z(0.4).rotation(), Vector3::new(1.0, 2.0, 3.0));
        for kappa in [0.0, 1e-9, 0.3, -2.0] {
            assert_eq!(ct_predict(&p, 0.0, kappa, 0.7), p);
        }
    }

    #[test]
    fn straight_line_step() {
        let inc = ct_increment(10.0, 0.0, 0.1);
        assert_eq!(inc.translation(), &Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(inc.rotation(), &nalgebra::Matrix3::identity());
    }

    #[test]
    fn turning_step_matches_closed_form() {
        let inc = ct_increment(10.0, 0.1, 0.1);
        // sin(0.1)/0.1 and (1 - cos(0.1))/0.1 at 40 digits.
        assert!((inc.translation().x - 0.998_334_166_468_281_5).abs() < 1e-12);
        assert!((inc.translation().y - 0.049_958_347_219_742_34).abs() < 1e-12);
        assert!((inc.angle() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn branch_switch_is_continuous() {
        for v in [1.0, 10.0, 30.0] {
            for dt in [0.05, 0.1, 0.5] {
                let below = ct_increment(v, STRAIGHT_LINE_KAPPA * 0.999_999, dt);
                let above = ct_increment(v, STRAIGHT_LINE_KAPPA * 1.000_001, dt);
                assert!((below.translation() - above.translation()).norm() < 1e-9);
            }
        }
    }
}
