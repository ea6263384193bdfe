use proptest::prelude::*;

use trileg_core::actuation::{apply_increment, SafetyEnvelope, VoltageTriple};
use trileg_core::robot::{reset, step, RobotCalibration, RobotModel, RobotState, SimConfig};

fn model() -> RobotModel {
    RobotModel::default()
}

fn drive(states: &RobotState, dvs: &[[f64; 3]], cfg: &SimConfig) -> Vec<RobotState> {
    let env = SafetyEnvelope::default();
    let mut out = vec![states.clone()];
    for dv in dvs {
        let s = out.last().unwrap();
        let (v, _) = apply_increment(s.v, VoltageTriple::from_array(*dv), &env).unwrap();
        out.push(step(s, v, cfg, &model()).unwrap());
    }
    out
}

fn dv_seq() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-0.6f64..0.6), 1..150)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deterministic_and_invariant(seed in 0u64..1000, dvs in dv_seq(), noise in 0.0f64..1.0) {
        let cal = RobotCalibration::default();
        let cfg = SimConfig { noise_std: noise, seed, ..Default::default() };
        let s0 = reset(seed, true, &cal);
        let a = drive(&s0, &dvs, &cfg);
        let b = drive(&s0, &dvs, &cfg);
        prop_assert_eq!(&a, &b);
        for s in &a {
            prop_assert!(s.p.iter().all(|c| (0.0..=50.0).contains(c)));
            prop_assert!(s.h.iter().any(|&h| h <= cal.contact_eps));
            prop_assert!(s.h.iter().all(|&h| h >= 0.0));
            prop_assert!(s.z >= cal.z_min() && s.z <= cal.z_max());
            prop_assert!((0.0..std::f64::consts::TAU).contains(&s.psi));
        }
    }

    #[test]
    fn sub_deadband_drive_never_translates(
        amps in prop::collection::vec(-1.2f64..=1.2, 1..120),
        psi in 0.0f64..std::f64::consts::TAU,
        vz in -2.0f64..2.0,
    ) {
        let cal = RobotCalibration::default();
        let cfg = SimConfig::default();
        let mut s = RobotState { psi, ..RobotState::rest(&cal) };
        let p0 = s.p;
        for (i, a) in amps.iter().enumerate() {
            // alternate the sign and spread the drive over both axes
            let sgn = if i % 2 == 0 { 1.0 } else { -1.0 };
            let (sn, cs) = (0.3 * i as f64).sin_cos();
            let v = VoltageTriple::new(sgn * a * cs, sgn * a * sn, vz).snapped();
            s = step(&s, v, &cfg, &model()).unwrap();
        }
        prop_assert_eq!(s.p, p0);
    }

    #[test]
    fn held_vz_converges_monotonically(vz in -2.5f64..2.5) {
        let cal = RobotCalibration::default();
        let cfg = SimConfig::default();
        let target = cal.z0 + cal.curves.squat_curve.eval(vz);
        let mut s = RobotState::rest(&cal);
        let mut gap = (s.z - target).abs();
        for _ in 0..60 {
            s = step(&s, VoltageTriple::new(0.0, 0.0, vz), &cfg, &model()).unwrap();
            let g = (s.z - target).abs();
            // the model maps vz through the coil matrix, so the target can differ in the last ulp
            prop_assert!(g <= gap + 1e-12);
            gap = g;
        }
        prop_assert!(gap < 1e-9);
    }
}

#[test]
fn fig_two_anchors() {
    let cal = RobotCalibration::default();
    let cfg = SimConfig::default();
    for (vz, expected) in [(-2.0, 3.0), (2.0, -5.0)] {
        let mut s = RobotState::rest(&cal);
        for _ in 0..20 {
            s = step(&s, VoltageTriple::new(0.0, 0.0, vz), &cfg, &model()).unwrap();
        }
        assert!((s.z - cal.z0 - expected).abs() <= 0.1, "{vz}: {}", s.z);
    }
}
