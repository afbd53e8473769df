//! Radius controllers of the two trust-region drivers, kept free of any
//! particle arithmetic so they can be driven by scripted inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this ratio the radius halves.
pub const SHRINK_BELOW: f64 = 1e-4;
/// Above this ratio the radius grows by half.
pub const GROW_ABOVE: f64 = 0.7;
pub const SHRINK_FACTOR: f64 = 0.5;
pub const GROW_FACTOR: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDecision {
    Accept,
    Reject,
    Converged,
}

/// Shared radius of the KL-ratio driver.
#[derive(Clone, Debug, PartialEq)]
pub struct TrustRegionKLState {
    radius: f64,
    pub iteration: usize,
    pub last_rho: Option<f64>,
}

impl TrustRegionKLState {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!(
                "initial radius must be positive, got {radius}"
            )));
        }
        Ok(TrustRegionKLState {
            radius,
            iteration: 0,
            last_rho: None,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Ratio `(u - o) / m`, or `None` when the model predicts no decrease.
    pub fn ratio(u: f64, o: f64, model_change: f64) -> Option<f64> {
        (model_change < 0.0).then(|| (u - o) / model_change)
    }

    /// Applies one iteration's outcome. `u` and `o` are the objective
    /// estimates after and before the step, `model_change` the predicted
    /// change, `gradient_magnitude` the current gradient magnitude.
    pub fn update(
        &mut self,
        u: f64,
        o: f64,
        model_change: f64,
        gradient_magnitude: f64,
    ) -> KlDecision {
        self.iteration += 1;
        if model_change >= 0.0 || model_change.is_nan() {
            self.last_rho = None;
            if model_change == 0.0 && gradient_magnitude == 0.0 {
                return KlDecision::Converged;
            }
            self.radius *= SHRINK_FACTOR;
            return KlDecision::Reject;
        }
        let rho = (u - o) / model_change;
        self.last_rho = Some(rho);
        self.update_with_ratio(rho)
    }

    /// Radius and acceptance rule given a ratio.
    pub fn update_with_ratio(&mut self, rho: f64) -> KlDecision {
        if rho < SHRINK_BELOW || rho.is_nan() {
            self.radius *= SHRINK_FACTOR;
        } else if rho > GROW_ABOVE {
            self.radius *= GROW_FACTOR;
        }
        if rho < 0.0 || rho.is_nan() {
            KlDecision::Reject
        } else {
            KlDecision::Accept
        }
    }
}

pub const B_MIN: f64 = 0.1;
pub const IMPROVEMENT_FACTOR: f64 = 0.999;
pub const B_DECAY: f64 = 0.9;

/// Gradient-magnitude driven controller; radius is `g / b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaTrustState {
    pub b: f64,
    pub w: f64,
    pub g: f64,
    pub b_min: f64,
    pub b_max: f64,
}

impl AdaTrustState {
    /// All of `b`, `w`, `b_max` and `g` start at the initial magnitude.
    pub fn new(g0: f64) -> Result<Self> {
        if !(g0 >= 0.0 && g0.is_finite()) {
            return Err(Error::invalid(format!(
                "gradient magnitude must be finite, got {g0}"
            )));
        }
        Ok(AdaTrustState {
            b: g0,
            w: g0,
            g: g0,
            b_min: B_MIN,
            b_max: g0,
        })
    }

    pub fn radius(&self) -> f64 {
        self.g / self.b
    }

    /// True when `b_max < b_min`, where the clamps overlap.
    pub fn clamps_inverted(&self) -> bool {
        self.b_max < self.b_min
    }

    /// Records the magnitude after a step. Returns whether it improved on
    /// the best magnitude by the required factor.
    pub fn update(&mut self, g: f64) -> bool {
        self.g = g;
        if g < IMPROVEMENT_FACTOR * self.w {
            self.b = self.b_min.max(B_DECAY * self.b);
            self.w = g;
            true
        } else {
            self.b = self.b_max.min(self.b + g * g / self.b);
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_model_grows_and_accepts() {
        let mut s = TrustRegionKLState::new(2.0).unwrap();
        assert_eq!(s.update(-0.5, 0.0, -0.5, 1.0), KlDecision::Accept);
        assert_eq!(s.radius(), 3.0);
        assert_eq!(s.last_rho, Some(1.0));
    }

    #[test]
    fn objective_increase_rejects_and_halves() {
        let mut s = TrustRegionKLState::new(2.0).unwrap();
        assert_eq!(s.update(0.3, 0.0, -0.5, 1.0), KlDecision::Reject);
        assert_eq!(s.radius(), 1.0);
    }

    #[test]
    fn middle_ratio_keeps_radius() {
        let mut s = TrustRegionKLState::new(2.0).unwrap();
        assert_eq!(s.update_with_ratio(0.5), KlDecision::Accept);
        assert_eq!(s.radius(), 2.0);
        assert_eq!(s.update_with_ratio(0.7), KlDecision::Accept);
        assert_eq!(s.radius(), 2.0);
        assert_eq!(s.update_with_ratio(1e-4), KlDecision::Accept);
        assert_eq!(s.radius(), 2.0);
    }

    #[test]
    fn tiny_positive_ratio_accepts_but_shrinks() {
        let mut s = TrustRegionKLState::new(2.0).unwrap();
        assert_eq!(s.update_with_ratio(5e-5), KlDecision::Accept);
        assert_eq!(s.radius(), 1.0);
    }

    #[test]
    fn non_negative_model_change() {
        let mut s = TrustRegionKLState::new(2.0).unwrap();
        assert_eq!(s.update(0.0, 0.0, 0.1, 1.0), KlDecision::Reject);
        assert_eq!(s.radius(), 1.0);
        assert_eq!(s.update(0.0, 0.0, 0.0, 1.0), KlDecision::Reject);
        assert_eq!(s.radius(), 0.5);
        assert_eq!(s.update(0.0, 0.0, 0.0, 0.0), KlDecision::Converged);
        assert_eq!(s.radius(), 0.5);
        assert!(TrustRegionKLState::new(0.0).is_err());
    }

    #[test]
    fn adatrust_initial_radius_is_one() {
        let s = AdaTrustState::new(3.7).unwrap();
        assert_eq!(s.radius(), 1.0);
        assert_eq!((s.b, s.w, s.b_max, s.g), (3.7, 3.7, 3.7, 3.7));
    }

    #[test]
    fn adatrust_improvement_and_stall() {
        let mut s = AdaTrustState::new(2.0).unwrap();
        assert!(s.update(1.0));
        assert_eq!((s.b, s.w), (1.8, 1.0));
        assert!(!s.update(1.0));
        assert_eq!(s.b, 2.0f64.min(1.8 + 1.0 / 1.8));
        assert_eq!(s.w, 1.0);
    }

    #[test]
    fn adatrust_clamps() {
        let mut s = AdaTrustState::new(1.0).unwrap();
        for k in 1..60 {
            s.update(0.5f64.powi(k));
        }
        assert_eq!(s.b, B_MIN);
        let mut s = AdaTrustState::new(1.0).unwrap();
        s.update(0.5);
        s.update(5.0);
        assert_eq!(s.b, 1.0);
        assert!(AdaTrustState::new(0.05).unwrap().clamps_inverted());
    }
}
