use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::actuation::{torque, FieldTriple, MagnetMoment, DEFAULT_FIELD_PER_VOLT};

pub const LEG_COUNT: usize = 3;

/// Leg layout and magnetization of the robot, all in the body frame.
///
/// Each leg magnet is magnetized tangentially in the body plane, so a
/// horizontal field produces a torque about the body normal whose sign and
/// size depend on how well the field lines up with the leg. The hinge axis
/// picks out that component: the leg pointing along the field feels the
/// largest lifting torque.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegGeometry {
    /// Azimuth of each leg in the body frame, degrees.
    pub leg_angles_deg: [f64; LEG_COUNT],
    /// Unit magnetization direction of each leg magnet.
    pub magnetization: [[f64; 3]; LEG_COUNT],
    /// Unit axis about which a positive torque component lifts the leg.
    pub hinge_axes: [[f64; 3]; LEG_COUNT],
    /// Magnet moment magnitude, A·m².
    pub moment: f64,
    /// Hinge torque a leg must exceed before it leaves the ground, N·m.
    pub lift_threshold: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        let angles = [0.0, 120.0, 240.0];
        let magnetization = angles.map(|a: f64| {
            let (s, c) = a.to_radians().sin_cos();
            [-s, c, 0.0]
        });
        let moment = 0.01;
        Self {
            leg_angles_deg: angles,
            magnetization,
            hinge_axes: [[0.0, 0.0, -1.0]; LEG_COUNT],
            moment,
            // lift onset at the field of 1.2 V through the nominal coil gain
            lift_threshold: moment * DEFAULT_FIELD_PER_VOLT * 1.2,
        }
    }
}

impl LegGeometry {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidConfig(msg.into()));
        if !(self.moment.is_finite() && self.moment > 0.0) {
            return bad("leg moment must be positive");
        }
        if !(self.lift_threshold.is_finite() && self.lift_threshold > 0.0) {
            return bad("lift threshold must be positive");
        }
        for m in self.magnetization.iter().chain(self.hinge_axes.iter()) {
            let n = Vector3::from(*m).norm();
            if (n - 1.0).abs() > 1e-9 {
                return bad("magnetization and hinge axes must be unit vectors");
            }
        }
        for i in 0..LEG_COUNT {
            let a = Vector3::from(self.magnetization[i]);
            let b = Vector3::from(self.magnetization[(i + 1) % LEG_COUNT]);
            if a.z.abs() > 1e-9 {
                return bad("magnetization must lie in the body plane");
            }
            let angle = a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees();
            if (angle - 120.0).abs() > 1e-6 {
                return bad("leg magnets must be 120 degrees apart");
            }
        }
        Ok(())
    }

    /// Unit radial direction of a leg in the world plane at heading `psi`.
    pub fn radial(&self, leg: usize, psi: f64) -> [f64; 2] {
        let (s, c) = (psi + self.leg_angles_deg[leg].to_radians()).sin_cos();
        [c, s]
    }

    /// Unit tangential (counter-clockwise) direction of a leg in the world plane.
    pub fn tangential(&self, leg: usize, psi: f64) -> [f64; 2] {
        let [c, s] = self.radial(leg, psi);
        [-s, c]
    }

    /// World-frame torque on each leg magnet.
    pub fn leg_torques(&self, psi: f64, b: FieldTriple) -> [Vector3<f64>; LEG_COUNT] {
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), psi);
        std::array::from_fn(|leg| {
            let m = MagnetMoment::new(rot * Vector3::from(self.magnetization[leg]) * self.moment).expect("validated magnetization");
            torque(&m, b)
        })
    }

    /// Torque component about each leg's hinge axis.
    pub fn hinge_torques(&self, psi: f64, b: FieldTriple) -> [f64; LEG_COUNT] {
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), psi);
        let torques = self.leg_torques(psi, b);
        std::array::from_fn(|leg| torques[leg].dot(&(rot * Vector3::from(self.hinge_axes[leg]))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_is_valid() {
        LegGeometry::default().validate().unwrap();
    }

    #[test]
    fn field_along_leg_lifts_that_leg() {
        let g = LegGeometry::default();
        for leg in 0..LEG_COUNT {
            for psi in [0.0, 0.7, 2.0, 4.5] {
                let [rx, ry] = g.radial(leg, psi);
                let b = FieldTriple { bx: 2e-3 * rx, by: 2e-3 * ry, bz: 0.0 };
                let t = g.hinge_torques(psi, b);
                let best = (0..LEG_COUNT).max_by(|&a, &b| t[a].total_cmp(&t[b])).unwrap();
                assert_eq!(best, leg);
                assert!((t[leg] - g.moment * 2e-3).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn vertical_field_has_no_hinge_torque() {
        let g = LegGeometry::default();
        let t = g.hinge_torques(0.3, FieldTriple { bx: 0.0, by: 0.0, bz: 2e-3 });
        assert!(t.iter().all(|x| x.abs() < 1e-18));
    }

    #[test]
    fn rejects_bad_layout() {
        let mut g = LegGeometry::default();
        g.magnetization[1] = [1.0, 0.0, 0.0];
        assert!(g.validate().is_err());
    }
}
