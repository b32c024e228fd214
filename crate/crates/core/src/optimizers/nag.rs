use crate::error::{Error, Result};
use crate::numerics::DenseVector;

/// Nesterov iterate pair `(wₜ, wₜ₋₁)` and the 1-based step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct NagState {
    pub w: DenseVector,
    pub w_prev: DenseVector,
    pub t: u64,
}

impl NagState {
    /// Starts at `t = 1` with `w_prev = w`, so the first look-ahead is zero.
    pub fn new(w: DenseVector) -> Self {
        Self {
            w_prev: w.clone(),
            w,
            t: 1,
        }
    }

    /// `dₜ = γ (wₜ − wₜ₋₁)`
    pub fn look_ahead(&self, gamma: f64) -> Result<DenseVector> {
        self.w.sub(&self.w_prev)?.scale(gamma)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "momentum coefficient {gamma} outside [0, 1)"
        )))
    }
}

/// `wₜ + γ (wₜ − wₜ₋₁)`: where the gradient for this step should be taken.
pub fn lookahead_point(state: &NagState, gamma: f64) -> Result<DenseVector> {
    check_gamma(gamma)?;
    state.w.add_scaled(gamma, &state.w.sub(&state.w_prev)?)
}

/// One Nesterov update with a caller-supplied gradient.
///
/// `discounted` scales the gradient term by `1 − γ`; without it this is the
/// classic iteration `wₜ₊₁ = wₜ + dₜ − η g`.
pub fn nag_step(state: &NagState, g: &DenseVector, gamma: f64, eta: f64, discounted: bool) -> Result<NagState> {
    check_gamma(gamma)?;
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::Validation(format!("learning rate must be positive, got {eta}")));
    }
    g.expect_len(state.w.len())?;
    let d = state.look_ahead(gamma)?;
    let coeff = if discounted { eta * (1.0 - gamma) } else { eta };
    let next = state.w.add(&d)?.add_scaled(-coeff, g)?;
    Ok(NagState {
        w: next,
        w_prev: state.w.clone(),
        t: state.t + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::gamma_nesterov;

    fn v(values: &[f64]) -> DenseVector {
        DenseVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn zero_momentum_is_gradient_descent() {
        let s = NagState::new(v(&[1.0, -2.0]));
        let g = v(&[0.5, 1.0]);
        for discounted in [true, false] {
            let n = nag_step(&s, &g, 0.0, 0.1, discounted).unwrap();
            assert_eq!(n.w, v(&[1.0 - 0.05, -2.0 - 0.1]));
            assert_eq!(n.w_prev, s.w);
            assert_eq!(n.t, 2);
        }
    }

    #[test]
    fn discounted_step_by_hand() {
        let s = NagState {
            w: v(&[1.0]),
            w_prev: v(&[0.8]),
            t: 5,
        };
        let n = nag_step(&s, &v(&[1.0]), 0.5, 0.1, true).unwrap();
        assert!((n.w[0] - 1.05).abs() < 1e-15);
        let base = nag_step(&s, &v(&[1.0]), 0.5, 0.1, false).unwrap();
        assert!((base.w[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lookahead_examples() {
        let s = NagState {
            w: v(&[2.0]),
            w_prev: v(&[1.0]),
            t: 3,
        };
        assert_eq!(lookahead_point(&s, 0.0).unwrap(), v(&[2.0]));
        assert_eq!(lookahead_point(&s, 0.5).unwrap(), v(&[2.5]));
        let fresh = NagState::new(v(&[3.0, 4.0]));
        assert_eq!(lookahead_point(&fresh, 0.9).unwrap(), v(&[3.0, 4.0]));
        assert!(lookahead_point(&s, 1.0).is_err());
    }

    #[test]
    fn errors() {
        let s = NagState::new(v(&[1.0, 2.0]));
        assert!(matches!(
            nag_step(&s, &v(&[1.0]), 0.5, 0.1, true),
            Err(Error::Dimension { .. })
        ));
        assert!(nag_step(&s, &v(&[1.0, 1.0]), 0.5, 0.0, true).is_err());
        assert!(nag_step(&s, &v(&[1.0, 1.0]), -0.1, 0.1, true).is_err());
    }

    /// Scalar oracle: f(w) = ½w², w₁ = 1, η = 1, γₜ = max(0, (t−2)/t),
    /// gradient at the look-ahead point, no delay.
    fn scalar_oracle(steps: usize) -> Vec<f64> {
        let (mut w, mut w_prev) = (1.0f64, 1.0f64);
        let mut out = vec![w];
        for t in 1..=steps {
            let gamma = ((t as f64 - 2.0) / t as f64).max(0.0);
            let d = gamma * (w - w_prev);
            let g = w + d;
            let next = w + d - (1.0 - gamma) * g;
            w_prev = w;
            w = next;
            out.push(w);
        }
        out
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_oracle() {
        let expected = scalar_oracle(10);
        // frozen from the oracle above
        let frozen = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(expected, frozen);
        let mut s = NagState::new(v(&[1.0]));
        let mut got = vec![s.w[0]];
        for _ in 0..10 {
            let gamma = gamma_nesterov(s.t).unwrap();
            let p = lookahead_point(&s, gamma).unwrap();
            s = nag_step(&s, &p, gamma, 1.0, true).unwrap();
            got.push(s.w[0]);
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn half_step_trajectory_matches_scalar_oracle() {
        // η = 0.5 keeps the trajectory nontrivial
        let (mut w, mut w_prev) = (1.0f64, 1.0f64);
        let mut s = NagState::new(v(&[1.0]));
        for t in 1..=10u64 {
            let gamma = ((t as f64 - 2.0) / t as f64).max(0.0);
            let d = gamma * (w - w_prev);
            let next = w + d - 0.5 * (1.0 - gamma) * (w + d);
            w_prev = w;
            w = next;

            let p = lookahead_point(&s, gamma).unwrap();
            s = nag_step(&s, &p, gamma, 0.5, true).unwrap();
            assert_eq!(s.w[0], w, "step {t}");
        }
        assert!((w - HALF_STEP_W11).abs() < 1e-15);
    }

    const HALF_STEP_W11: f64 = -0.03231225198412698;

    #[test]
    fn coasting_without_gradient() {
        let mut s = NagState {
            w: v(&[1.0, -1.0]),
            w_prev: v(&[0.5, -0.5]),
            t: 1,
        };
        let zero = DenseVector::zeros(2);
        for _ in 0..20 {
            let n = nag_step(&s, &zero, 0.9, 0.1, true).unwrap();
            let d = s.w.sub(&s.w_prev).unwrap().scale(0.9).unwrap();
            assert!(n.w.bit_eq(&s.w.add(&d).unwrap()));
            let step = n.w.sub(&s.w).unwrap();
            assert!(step.sub(&d).unwrap().norm() <= 1e-15);
            s = n;
        }
    }

    #[test]
    fn discounted_update_is_dominated_by_look_ahead() {
        let mut s = NagState {
            w: v(&[0.3, 0.7, -0.2]),
            w_prev: v(&[0.1, 0.9, -0.4]),
            t: 1,
        };
        let g = v(&[1.0, -2.0, 0.5]);
        for t in 3..200u64 {
            let gamma = gamma_nesterov(t).unwrap();
            let d = s.look_ahead(gamma).unwrap();
            let n = nag_step(&s, &g, gamma, 0.1, true).unwrap();
            let residual = n.w.sub(&s.w).unwrap().sub(&d).unwrap().norm();
            assert!(residual <= 0.1 * (1.0 - gamma) * g.norm() * (1.0 + 1e-9) + 1e-15);
            s = n;
        }
    }
}
