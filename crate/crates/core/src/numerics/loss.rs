use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Mean negative log-likelihood over a `[batch, classes]` log-probability
/// tensor. Returns the loss and its gradient with respect to `log_probs`.
pub fn nll_loss<T: Scalar>(log_probs: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>)> {
    let &[batch, classes] = log_probs.shape() else {
        return Err(Error::Shape {
            op: "nll_loss",
            left: log_probs.shape().to_vec(),
            right: vec![targets.len()],
        });
    };
    if batch != targets.len() || batch == 0 {
        return Err(Error::Shape {
            op: "nll_loss",
            left: log_probs.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let mut grad = Tensor::zeros(&[batch, classes]);
    let scale = T::of(-1.0 / batch as f64);
    let mut total = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::arg(format!("target {t} out of range for {classes} classes")));
        }
        total -= log_probs.data()[i * classes + t].f64();
        grad.data_mut()[i * classes + t] = scale;
    }
    Ok((T::of(total / batch as f64), grad))
}
