use super::{NumericsError, ParamRegistry, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per registry entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamRegistry<T>) -> Self {
        let zeros = || {
            params
                .values()
                .map(|t| Tensor::zeros(t.shape()).expect("registered shapes are valid"))
                .collect()
        };
        AdamState {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place. `grads` follows the
/// registry order.
pub fn adam_step<T: Scalar>(
    params: &mut ParamRegistry<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    config: AdamConfig,
) -> Result<(), NumericsError> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            expected: vec![params.len()],
            got: vec![grads.len()],
        });
    }
    for (p, g) in params.values().zip(grads) {
        if p.shape() != g.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(config.beta1);
    let b2 = T::from_f64_lossy(config.beta2);
    let c1 = T::from_f64_lossy(1.0 - config.beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - config.beta2.powi(t));
    let eps = T::from_f64_lossy(config.epsilon);
    let lr = T::from_f64_lossy(lr);
    let one = T::one();

    for (((p, g), m), v) in params
        .values_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    for p in params.values() {
        p.ensure_finite("adam_step")?;
    }
    Ok(())
}
