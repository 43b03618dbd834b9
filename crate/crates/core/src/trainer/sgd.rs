//! SGD with momentum and L2 weight decay.
//!
//! Update rule per element: `g = grad + wd * p; v = mu * v + g;
//! p -= lr * v`. Weight decay applies to every trainable tensor, head
//! prototypes included.

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn zeros(shapes: &[usize]) -> Self {
        SgdState {
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Applies one SGD step in place. `params`, `grads`, and `state.velocity`
/// must be aligned tensor-for-tensor.
pub fn sgd_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.velocity.len());
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        assert_eq!(p.len(), g.len());
        assert_eq!(p.len(), v.len());
        for i in 0..p.len() {
            let grad = g[i] + weight_decay * p[i];
            v[i] = momentum * v[i] + grad;
            p[i] -= lr * v[i];
        }
    }
}
