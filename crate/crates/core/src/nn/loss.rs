//! Loss functions and their gradients.

use super::layers::softmax_row;
use super::{NnError, Scalar, Tensor};

fn check_finite<T: Scalar>(value: T, context: &str) -> Result<T, NnError> {
    if !value.is_finite() {
        return Err(NnError::NonFiniteLoss {
            value: value.to_f64(),
            context: context.to_string(),
        });
    }
    Ok(value)
}

/// Mean squared error over all elements, with its gradient w.r.t. `pred`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>), NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            op: "mse_loss",
            expected: target.shape().to_string(),
            got: pred.shape().to_string(),
        });
    }
    let n = T::from_f64(pred.numel() as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = T::zero();
    let two = T::from_f64(2.0);
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = two * d / n;
    }
    Ok((check_finite(loss / n, "mse_loss")?, grad))
}

/// Cross entropy of softmax over logits, averaged over the batch, with
/// its gradient w.r.t. the logits.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &Tensor<T>,
    classes: &[usize],
) -> Result<(T, Tensor<T>), NnError> {
    let shape = logits.shape();
    let k = shape.features();
    if classes.len() != shape.n {
        return Err(NnError::ShapeMismatch {
            op: "cross_entropy_loss",
            expected: format!("{} class labels", shape.n),
            got: format!("{}", classes.len()),
        });
    }
    let mut grad = Tensor::zeros(shape);
    let mut loss = T::zero();
    let inv_n = T::one() / T::from_f64(shape.n as f64);
    for (n, &class) in classes.iter().enumerate() {
        if class >= k {
            return Err(NnError::ClassOutOfRange { index: class, classes: k });
        }
        let mut probs = logits.data()[n * k..(n + 1) * k].to_vec();
        softmax_row(&mut probs);
        let p = probs[class].max(T::from_f64(1e-30));
        loss -= p.ln();
        let grow = &mut grad.data_mut()[n * k..(n + 1) * k];
        for (i, g) in grow.iter_mut().enumerate() {
            let indicator = if i == class { T::one() } else { T::zero() };
            *g = (probs[i] - indicator) * inv_n;
        }
    }
    Ok((check_finite(loss * inv_n, "cross_entropy_loss")?, grad))
}

/// Pieces of the variational loss, see [`vae_loss`].
#[derive(Debug, Clone, Copy)]
pub struct VaeLossParts<T> {
    pub total: T,
    pub reconstruction: T,
    pub kl: T,
}

/// Gradients of the variational loss.
pub struct VaeLossGrads<T> {
    pub d_recon: Tensor<T>,
    pub d_mean: Vec<T>,
    pub d_logvar: Vec<T>,
}

/// Variational loss: squared-error reconstruction term plus the KL
/// divergence `-1/2 sum(1 + logvar - mean^2 - exp(logvar))` of the
/// posterior against the standard normal, at weight beta = 1.
///
/// The reconstruction term sums squared error over each sample's pixels
/// (then averages over the batch, as does the KL term) so the two terms
/// stay on comparable scales for the 4096-pixel outputs.
pub fn vae_loss<T: Scalar>(
    recon: &Tensor<T>,
    target: &Tensor<T>,
    mean: &Tensor<T>,
    logvar: &Tensor<T>,
) -> Result<(VaeLossParts<T>, VaeLossGrads<T>), NnError> {
    if recon.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            op: "vae_loss",
            expected: target.shape().to_string(),
            got: recon.shape().to_string(),
        });
    }
    if mean.shape() != logvar.shape() || mean.shape().n != recon.shape().n {
        return Err(NnError::ShapeMismatch {
            op: "vae_loss",
            expected: format!("posterior stats for batch {}", recon.shape().n),
            got: format!("mean {} logvar {}", mean.shape(), logvar.shape()),
        });
    }
    let batch = T::from_f64(recon.shape().n as f64);
    let two = T::from_f64(2.0);
    let half = T::from_f64(0.5);

    let mut d_recon = Tensor::zeros(recon.shape());
    let mut rec_loss = T::zero();
    for ((g, &p), &t) in d_recon
        .data_mut()
        .iter_mut()
        .zip(recon.data())
        .zip(target.data())
    {
        let d = p - t;
        rec_loss += d * d;
        *g = two * d / batch;
    }
    rec_loss /= batch;

    let mut kl = T::zero();
    let mut d_mean = vec![T::zero(); mean.numel()];
    let mut d_logvar = vec![T::zero(); logvar.numel()];
    for i in 0..mean.numel() {
        let m = mean.data()[i];
        let lv = logvar.data()[i];
        kl -= half * (T::one() + lv - m * m - lv.exp());
        d_mean[i] = m / batch;
        d_logvar[i] = half * (lv.exp() - T::one()) / batch;
    }
    kl /= batch;

    let total = check_finite(rec_loss + kl, "vae_loss")?;
    Ok((
        VaeLossParts {
            total,
            reconstruction: rec_loss,
            kl,
        },
        VaeLossGrads {
            d_recon,
            d_mean,
            d_logvar,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Shape;

    fn t(n: usize, f: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(n, f, 1, 1), data).unwrap()
    }

    #[test]
    fn mse_of_identical_tensors_is_zero() {
        let a = t(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let (loss, grad) = mse_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_matches_hand_computation() {
        let pred = t(1, 2, vec![1.0, 3.0]);
        let target = t(1, 2, vec![0.0, 1.0]);
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        assert!((loss - (1.0 + 4.0) / 2.0).abs() < 1e-12);
        assert!((grad.data()[0] - 1.0).abs() < 1e-12); // 2*1/2
        assert!((grad.data()[1] - 2.0).abs() < 1e-12); // 2*2/2
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let logits = t(1, 3, vec![0.0; 3]);
        let (loss, _grad) = cross_entropy_loss(&logits, &[1]).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_class() {
        let logits = t(1, 3, vec![0.0; 3]);
        assert!(matches!(
            cross_entropy_loss(&logits, &[3]),
            Err(NnError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn kl_is_zero_for_standard_normal_posterior() {
        let recon = t(1, 2, vec![0.0, 0.0]);
        let mean = t(1, 1, vec![0.0]);
        let logvar = t(1, 1, vec![0.0]);
        let (parts, _grads) = vae_loss(&recon, &recon, &mean, &logvar).unwrap();
        assert_eq!(parts.kl, 0.0);
        assert_eq!(parts.reconstruction, 0.0);
    }

    #[test]
    fn kl_of_unit_mean_single_dim_is_half() {
        let recon = t(1, 2, vec![0.0, 0.0]);
        let mean = t(1, 1, vec![1.0]);
        let logvar = t(1, 1, vec![0.0]);
        let (parts, _grads) = vae_loss(&recon, &recon, &mean, &logvar).unwrap();
        assert!((parts.kl - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let pred = t(1, 1, vec![f64::INFINITY]);
        let target = t(1, 1, vec![0.0]);
        assert!(matches!(
            mse_loss(&pred, &target),
            Err(NnError::NonFiniteLoss { .. })
        ));
    }
}
