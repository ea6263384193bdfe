use serde::{Deserialize, Serialize};

use super::SimError;

/// Piecewise-linear response anchored at `(volts, mm)` points. Interpolates
/// linearly between anchors and holds the end values beyond them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct ResponseCurve {
    anchors: Vec<[f64; 2]>,
}

impl ResponseCurve {
    pub fn new(anchors: Vec<[f64; 2]>) -> Result<Self, SimError> {
        if anchors.is_empty() {
            return Err(SimError::InvalidCurve("empty anchor list".into()));
        }
        if anchors.iter().flatten().any(|c| !c.is_finite()) {
            return Err(SimError::InvalidCurve("non-finite anchor".into()));
        }
        if anchors.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(SimError::InvalidCurve("anchor voltages must be strictly increasing".into()));
        }
        let curve = Self { anchors };
        if curve.eval(0.0) != 0.0 {
            return Err(SimError::InvalidCurve("curve must pass through (0, 0)".into()));
        }
        Ok(curve)
    }

    pub fn anchors(&self) -> &[[f64; 2]] {
        &self.anchors
    }

    pub fn eval(&self, v: f64) -> f64 {
        let a = &self.anchors;
        let first = a[0];
        let last = a[a.len() - 1];
        if v <= first[0] {
            return first[1];
        }
        if v >= last[0] {
            return last[1];
        }
        // first anchor whose voltage is >= v; v lies strictly inside the range
        let i = a.partition_point(|p| p[0] < v);
        let [v1, y1] = a[i];
        if v1 == v {
            return y1;
        }
        let [v0, y0] = a[i - 1];
        y0 + (y1 - y0) * (v - v0) / (v1 - v0)
    }
}

impl TryFrom<Vec<[f64; 2]>> for ResponseCurve {
    type Error = SimError;
    fn try_from(anchors: Vec<[f64; 2]>) -> Result<Self, SimError> {
        Self::new(anchors)
    }
}

impl From<ResponseCurve> for Vec<[f64; 2]> {
    fn from(c: ResponseCurve) -> Self {
        c.anchors
    }
}

/// Free-function form of [`ResponseCurve::eval`] over a raw anchor list.
pub fn eval_curve(anchors: &[[f64; 2]], v: f64) -> Result<f64, SimError> {
    Ok(ResponseCurve::new(anchors.to_vec())?.eval(v))
}

/// Calibrated voltage-to-morphology responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurves {
    /// Body height change against `vz`. Negative drive lifts the body,
    /// positive drive squats it.
    pub squat_curve: ResponseCurve,
    /// Displacement per full alternating gait cycle against the signed
    /// drive amplitude.
    pub step_curve: ResponseCurve,
    /// Single-leg height against the equivalent hinge drive.
    pub lift_curve: ResponseCurve,
    /// Degrees of heading change per step per volt of yaw drive above the
    /// stiction threshold.
    pub rot_rate: f64,
    /// Half-width of the locomotion deadband, volts.
    pub stiction_v: f64,
}

impl Default for ResponseCurves {
    fn default() -> Self {
        let curve = |a: Vec<[f64; 2]>| ResponseCurve::new(a).expect("default curve");
        Self {
            squat_curve: curve(vec![[-2.0, 3.0], [-0.8, 0.0], [0.8, 0.0], [2.0, -5.0]]),
            step_curve: curve(vec![[-2.0, -15.0], [-1.2, 0.0], [1.2, 0.0], [2.0, 12.0]]),
            lift_curve: curve(vec![[0.0, 0.0], [1.2, 0.0], [2.0, 4.0]]),
            rot_rate: 3.0,
            stiction_v: 1.2,
        }
    }
}

impl ResponseCurves {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.stiction_v.is_finite() && self.stiction_v > 0.0) {
            return Err(SimError::InvalidConfig("stiction_v must be positive".into()));
        }
        if !(self.rot_rate.is_finite() && self.rot_rate >= 0.0) {
            return Err(SimError::InvalidConfig("rot_rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squat_examples() {
        let curves = ResponseCurves::default();
        assert_eq!(curves.squat_curve.eval(-2.0), 3.0);
        assert_eq!(curves.squat_curve.eval(0.0), 0.0);
        approx::assert_relative_eq!(curves.squat_curve.eval(-1.4), 1.5, epsilon = 1e-12);
        assert_eq!(curves.squat_curve.eval(2.0), -5.0);
        assert_eq!(curves.squat_curve.eval(-9.0), 3.0);
        assert_eq!(curves.squat_curve.eval(9.0), -5.0);
    }

    #[test]
    fn step_curve_endpoints() {
        let curves = ResponseCurves::default();
        assert_eq!(curves.step_curve.eval(-2.0), -15.0);
        assert_eq!(curves.step_curve.eval(2.0), 12.0);
        assert_eq!(curves.step_curve.eval(1.0), 0.0);
        assert_eq!(curves.step_curve.eval(-1.2), 0.0);
    }

    #[test]
    fn invalid_curves_rejected() {
        assert!(ResponseCurve::new(vec![]).is_err());
        assert!(ResponseCurve::new(vec![[0.0, 0.0], [0.0, 1.0]]).is_err());
        assert!(ResponseCurve::new(vec![[1.0, 0.0], [0.5, 1.0]]).is_err());
        assert!(ResponseCurve::new(vec![[-1.0, 1.0], [1.0, 2.0]]).is_err());
        assert!(eval_curve(&[], 0.0).is_err());
    }

    #[test]
    fn trend_segments_monotone() {
        let c = ResponseCurves::default().squat_curve;
        let mut prev = c.eval(-2.0);
        for i in 1..=120 {
            let v = -2.0 + 1.2 * i as f64 / 120.0;
            let y = c.eval(v);
            assert!(y <= prev && y >= 0.0);
            prev = y;
        }
        let mut prev = c.eval(0.8);
        for i in 1..=120 {
            let v = 0.8 + 1.2 * i as f64 / 120.0;
            let y = c.eval(v);
            assert!(y <= prev && y <= 0.0);
            prev = y;
        }
    }
}
