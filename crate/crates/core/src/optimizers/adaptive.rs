use crate::error::{Error, Result};
use crate::numerics::DenseVector;

/// Adam-family state. `t` counts completed steps (0 before the first).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub w: DenseVector,
    pub m: DenseVector,
    pub v: DenseVector,
    pub t: u64,
    /// Running product of the Nesterov momentum coefficients μ₁…μₜ.
    pub mu_product: f64,
}

impl AdaptiveState {
    pub fn new(w: DenseVector) -> Self {
        let n = w.len();
        Self {
            w,
            m: DenseVector::zeros(n),
            v: DenseVector::zeros(n),
            t: 0,
            mu_product: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub momentum_warmup: bool,
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Validation(format!("{name}={b} outside [0, 1)")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Validation(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Validation(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn mu(&self, t: u64) -> f64 {
        if self.momentum_warmup {
            self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * 0.004))
        } else {
            self.beta1
        }
    }
}

/// One AdamW (or NAdamW when `nesterov`) step with decoupled weight decay.
pub fn adaptive_step(
    state: &AdaptiveState,
    g: &DenseVector,
    eta: f64,
    params: &AdaptiveParams,
) -> Result<AdaptiveState> {
    params.validate()?;
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::Validation(format!("learning rate must be positive, got {eta}")));
    }
    g.expect_len(state.w.len())?;
    let t = state.t + 1;
    let (b1, b2) = (params.beta1, params.beta2);

    let w = state.w.scale(1.0 - eta * params.weight_decay)?;
    let m = state.m.scale(b1)?.add_scaled(1.0 - b1, g)?;
    let v = state.v.scale(b2)?.add_scaled(1.0 - b2, &g.hadamard(g)?)?;
    let bias2 = 1.0 - b2.powi(t as i32);
    let denom = v.map(|x| (x / bias2).sqrt() + params.eps)?;

    let (numerator, mu_product) = if params.nesterov {
        let mu_t = params.mu(t);
        let mu_next = params.mu(t + 1);
        let product = state.mu_product * mu_t;
        let product_next = product * mu_next;
        let grad_coeff = (1.0 - mu_t) / (1.0 - product);
        let mom_coeff = mu_next / (1.0 - product_next);
        (m.scale(mom_coeff)?.add_scaled(grad_coeff, g)?, product)
    } else {
        (m.scale(1.0 / (1.0 - b1.powi(t as i32)))?, state.mu_product)
    };
    let step = numerator.zip_map(&denom, |n, d| n / d)?;
    let w = w.add_scaled(-eta, &step)?;
    Ok(AdaptiveState { w, m, v, t, mu_product })
}
