//! Dense networks with batch normalization, losses and Adam, in f64.

mod dense;
mod loss;
mod optim;

pub use dense::{Activation, BatchNorm, DenseNet, Layer, LayerGrads, Mode, NetGrads, LEAKY_SLOPE};
pub use loss::{
    adversarial_losses, cosine_distance, cosine_loss, cosine_loss_batch, cosine_loss_grad,
    disc_loss_grads, disc_real_grad, gen_loss, gen_loss_grad, mse_batch, squared_error_batch, AdversarialLoss, LossValue, ADV_EPS,
};
pub use optim::{Adam, AdamState, TrainState};

/// Stack rows of equal length into a batch.
pub fn batch_from_rows<'a, I>(rows: I, width: usize) -> crate::Result<ndarray::Array2<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != width {
            return Err(crate::Error::Shape(format!("row of length {} in batch of width {width}", r.len())));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    ndarray::Array2::from_shape_vec((n, width), data).map_err(|e| crate::Error::Shape(e.to_string()))
}
