use serde::{Deserialize, Serialize};

/// Map from a natural-scale parameter to the inference scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
    Logit,
}

impl Transform {
    pub fn forward(self, natural: f64) -> f64 {
        match self {
            Transform::Identity => natural,
            Transform::Log => natural.ln(),
            Transform::Logit => (natural / (1.0 - natural)).ln(),
        }
    }

    pub fn inverse(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => theta,
            Transform::Log => theta.exp(),
            Transform::Logit => logistic(theta),
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(logistic(x))`.
pub fn log_logistic(x: f64) -> f64 {
    -softplus(-x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn logit_round_trip(p in 1e-6f64..(1.0 - 1e-6)) {
            let back = Transform::Logit.inverse(Transform::Logit.forward(p));
            prop_assert!((back - p).abs() <= 1e-12);
        }

        #[test]
        fn log_round_trip(x in 1e-8f64..1e6) {
            let back = Transform::Log.inverse(Transform::Log.forward(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn log_logistic_tails() {
        assert!((log_logistic(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_logistic(-800.0).is_finite());
        assert!((log_logistic(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_logistic(800.0) == 0.0 || log_logistic(800.0).abs() < 1e-300);
    }
}
