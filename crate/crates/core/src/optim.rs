use crate::model::{ModelError, ModelParams, Real};

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Adagrad squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F = f64> {
    pub accumulators: ModelParams<F>,
    pub lr: f64,
    pub epsilon: f64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(like: &ModelParams<F>, lr: f64, epsilon: f64) -> Self {
        OptimizerState { accumulators: ModelParams::zeros(like.input_dim(), like.hidden_dim()), lr, epsilon }
    }

    pub fn cast<G: Real>(&self) -> OptimizerState<G> {
        OptimizerState { accumulators: self.accumulators.cast(), lr: self.lr, epsilon: self.epsilon }
    }
}

/// `G += g^2; theta -= lr * g / (sqrt(G) + eps)`, component-wise, in place.
pub fn adagrad_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut OptimizerState<F>,
) -> Result<(), ModelError> {
    if !params.same_shape(grads) || !params.same_shape(&state.accumulators) {
        return Err(ModelError::ShapeMismatch("params, gradients and accumulators differ in shape".into()));
    }
    let lr = F::from_f64(state.lr);
    let eps = F::from_f64(state.epsilon);
    for ((theta, &g), acc) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grads.as_slice())
        .zip(state.accumulators.as_mut_slice())
    {
        *acc = *acc + g * g;
        *theta = *theta - lr * g / (acc.sqrt() + eps);
    }
    Ok(())
}
