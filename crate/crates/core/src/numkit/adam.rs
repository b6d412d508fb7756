use super::MlpParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam moment estimates for one [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step_count: u64,
    pub first_moment: MlpParams<F>,
    pub second_moment: MlpParams<F>,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &MlpParams<F>, beta1: F, beta2: F, epsilon: F) -> Self {
        AdamState {
            step_count: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn with_defaults(params: &MlpParams<F>) -> Self {
        Self::new(params, F::lit(0.9), F::lit(0.999), F::lit(1e-8))
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts before anything is modified.
pub fn adam_step<F: Scalar>(
    params: &mut MlpParams<F>,
    grads: &MlpParams<F>,
    state: &mut AdamState<F>,
    learning_rate: F,
) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::shape("adam_step grads", params.num_params(), grads.num_params()));
    }
    if !params.same_shape(&state.first_moment) || !params.same_shape(&state.second_moment) {
        return Err(Error::shape(
            "adam_step moments",
            params.num_params(),
            state.first_moment.num_params(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::numerical("adam_step", "non-finite gradient"));
    }
    state.step_count += 1;
    let t = i32::try_from(state.step_count).unwrap_or(i32::MAX);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = F::one() - b1.powi(t);
    let c2 = F::one() - b2.powi(t);
    let one = F::one();
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
