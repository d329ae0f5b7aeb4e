//! One optimization step: crop and flip a sample, run the network, combine
//! the losses, backpropagate and apply Adam.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::Var;
use crate::data::{mirror_flip, one_hot, random_crop, Sample};
use crate::losses::{boundary_mse, ceu_loss, generalized_dice_loss, real_error_rate, total_loss, LossWeights};
use crate::model::{AepNet, Prediction};
use crate::optim::AdamState;
use crate::rng::{self, Purpose};
use crate::{Error, Gradients, Graph, Result, Tensor};

/// Network inputs for a sample: the image as `[1, D, H, W]` and the mask
/// one-hot as `[C, D, H, W]`.
pub fn network_inputs(sample: &Sample, num_classes: usize) -> Result<(Tensor, Tensor)> {
    let d = sample.dims();
    let image = Tensor::new(alloc::vec![1, d[0], d[1], d[2]], sample.image.data().to_vec())?;
    Ok((image, one_hot(&sample.mask, num_classes)?))
}

/// Two-channel reference `[2, D, H, W]` for the error map: channel 0 marks
/// errors, channel 1 marks correct voxels.
pub fn error_reference(sample: &Sample) -> Result<Tensor> {
    one_hot(&sample.error_map.map(|&v| u8::from(v != 0)), 2)
}

/// Scalar loss values of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l1: f64,
    pub l2: Option<f64>,
    pub l3: Option<f64>,
    pub total: f64,
}

impl StepLosses {
    pub fn is_finite(&self) -> bool {
        self.l1.is_finite()
            && self.l2.is_none_or(f64::is_finite)
            && self.l3.is_none_or(f64::is_finite)
            && self.total.is_finite()
    }
}

/// Forward pass and loss graph for `sample` on `graph`.
pub fn forward_loss<'g>(
    model: &AepNet,
    graph: &'g Graph,
    sample: &Sample,
    weights: &LossWeights,
) -> Result<(Var<'g>, StepLosses, Prediction<'g>)> {
    let (image, mask) = network_inputs(sample, model.config.num_classes)?;
    let pred = model.forward(graph, &image, &mask)?;
    let l1 = generalized_dice_loss(pred.error_prob, &error_reference(sample)?)?;
    let l2 = match pred.boundary {
        Some(b) => {
            let d = sample.dims();
            let target = Tensor::new(alloc::vec![1, d[0], d[1], d[2]], sample.boundary.data().to_vec())?;
            Some(boundary_mse(b, &target)?)
        }
        None => None,
    };
    let l3 = match pred.cer {
        Some(cer) => Some(ceu_loss(cer, real_error_rate(sample.error_map.data())?)),
        None => None,
    };
    let total = total_loss(l1, l2, l3, weights)?;
    let value = |v: Var<'_>| v.item().expect("scalar loss");
    let losses = StepLosses {
        l1: value(l1),
        l2: l2.map(value),
        l3: l3.map(value),
        total: value(total),
    };
    Ok((total, losses, pred))
}

/// Loss values and parameter gradients for `sample`.
pub fn loss_and_gradients(model: &AepNet, sample: &Sample, weights: &LossWeights) -> Result<(StepLosses, Gradients)> {
    let graph = Graph::new();
    let (total, losses, _) = forward_loss(model, &graph, sample, weights)?;
    let grads = graph.backward(total)?;
    Ok((losses, grads))
}

/// The augmented crop used at iteration `iter`: a random crop from the
/// `Crop` stream and random flips from the `Flip` stream, both indexed by
/// the iteration so a resumed run draws the same crops.
pub fn augment(sample: &Sample, crop: [usize; 3], flip_axes: &[usize], master: u64, iter: usize) -> Result<Sample> {
    let mut crop_rng = rng::stream(master, Purpose::Crop, iter as u64);
    let cropped = random_crop(sample, crop, &mut crop_rng);
    let mut flip_rng = rng::stream(master, Purpose::Flip, iter as u64);
    Ok(mirror_flip(&cropped, flip_axes, &mut flip_rng)?.0)
}

/// Backpropagates on `sample` and applies one Adam update at rate `lr`.
/// Non-finite losses abort before any parameter changes.
pub fn train_step(
    model: &mut AepNet,
    adam: &mut AdamState,
    sample: &Sample,
    weights: &LossWeights,
    lr: f64,
    iteration: usize,
) -> Result<StepLosses> {
    train_step_batch(model, adam, core::slice::from_ref(sample), weights, lr, iteration)
}

/// [`train_step`] over a batch: losses and gradients are averaged over the
/// samples before the update.
pub fn train_step_batch(
    model: &mut AepNet,
    adam: &mut AdamState,
    batch: &[Sample],
    weights: &LossWeights,
    lr: f64,
    iteration: usize,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grads = Gradients::default();
    let mut sum = StepLosses {
        l1: 0.0,
        l2: None,
        l3: None,
        total: 0.0,
    };
    for sample in batch {
        let (losses, g) = loss_and_gradients(model, sample, weights)?;
        if !losses.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                detail: format!("{losses:?}"),
            });
        }
        grads.merge(g);
        sum.l1 += losses.l1;
        sum.l2 = losses.l2.map(|v| v + sum.l2.unwrap_or(0.0));
        sum.l3 = losses.l3.map(|v| v + sum.l3.unwrap_or(0.0));
        sum.total += losses.total;
    }
    let k = batch.len() as f64;
    let losses = if batch.len() == 1 {
        sum
    } else {
        grads.scale(1.0 / k);
        StepLosses {
            l1: sum.l1 / k,
            l2: sum.l2.map(|v| v / k),
            l3: sum.l3.map(|v| v / k),
            total: sum.total / k,
        }
    };
    adam.update(&mut model.params, &grads, lr)?;
    Ok(losses)
}

/// Names of parameters that received no gradient, or only zeros.
pub fn dead_parameters<'a>(model: &'a AepNet, grads: &Gradients) -> Vec<&'a str> {
    model
        .params
        .iter()
        .filter(|(id, _, _)| grads.get(*id).is_none_or(|g| g.data().iter().all(|&v| v == 0.0)))
        .map(|(_, name, _)| name)
        .collect()
}
