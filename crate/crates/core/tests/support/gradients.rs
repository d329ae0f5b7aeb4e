//! Central finite-difference checks of the network ops and of the whole
//! network at an 8³ crop in double precision.

use aepnet_core::autodiff::gradcheck::{grad_check, grad_check_at, GradCheckReport};
use aepnet_core::boundary::boundary_target;
use aepnet_core::data::{one_hot, Volume};
use aepnet_core::losses::{boundary_mse, ceu_loss, generalized_dice_loss, total_loss, LossWeights};
use aepnet_core::model::{attention_fuse, AepNet, AepNetConfig, Variant};
use aepnet_core::nn::{concat_channels, conv3d, global_avg_pool, group_norm, max_pool3d, transposed_conv3d, ConvSpec};
use aepnet_core::rng::{stream, Purpose};
use aepnet_core::{Graph, ParamId, Result, Tensor, Var};
use rand::Rng;

pub const TOL: f64 = 1e-4;
pub const STEP: f64 = 1e-5;
/// Smaller step for the whole network: a bias shifts a full channel, and at
/// 1e-5 some pre-activations cross a relu kink inside the stencil.
pub const NETWORK_STEP: f64 = 1e-6;

pub type Named = (String, GradCheckReport);

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `y` with fixed random weights so every output coordinate
/// contributes to the scalar.
fn project<'g>(g: &'g Graph, y: Var<'g>, seed: u64) -> Result<Var<'g>> {
    let u = random(&mut stream(seed, Purpose::Sample, 99), &y.shape());
    Ok(y.mul(g.constant(u))?.sum())
}

pub fn convolutions() -> Vec<Named> {
    let mut out = Vec::new();
    for (i, (k, s, p)) in [(3, 1, 1), (2, 2, 0), (1, 1, 0), (3, 2, 1)].into_iter().enumerate() {
        let mut rng = stream(21, Purpose::Sample, i as u64);
        let spec = ConvSpec::cubic(2, 3, k, s, p);
        let params = [random(&mut rng, &[2, 4, 5, 3]), random(&mut rng, &spec.weight_shape()), random(&mut rng, &[3])];
        let r = grad_check(|g, v| project(g, conv3d(v[0], v[1], v[2], &spec)?, 1), &params, STEP).unwrap();
        out.push((format!("conv3d k{k} s{s} p{p}"), r));
    }
    for (i, (k, s)) in [(2, 2), (3, 1), (3, 2)].into_iter().enumerate() {
        let mut rng = stream(22, Purpose::Sample, i as u64);
        let spec = ConvSpec::cubic(3, 2, k, s, 0);
        let params = [
            random(&mut rng, &[3, 2, 3, 2]),
            random(&mut rng, &spec.transposed_weight_shape()),
            random(&mut rng, &[2]),
        ];
        let r = grad_check(|g, v| project(g, transposed_conv3d(v[0], v[1], v[2], &spec)?, 2), &params, STEP).unwrap();
        out.push((format!("transposed k{k} s{s}"), r));
    }
    out
}

pub fn pooling_norm_and_joins() -> Vec<Named> {
    let mut out = Vec::new();
    let mut rng = stream(23, Purpose::Sample, 0);
    let x = random(&mut rng, &[2, 4, 4, 6]);
    out.push(("max_pool3d".into(), grad_check(|g, v| project(g, max_pool3d(v[0])?, 3), &[x.clone()], STEP).unwrap()));
    out.push(("global_avg_pool".into(), grad_check(|g, v| project(g, global_avg_pool(v[0])?, 4), &[x], STEP).unwrap()));

    let y = random(&mut rng, &[4, 3, 2, 3]);
    let gamma = random(&mut rng, &[4]);
    let beta = random(&mut rng, &[4]);
    for groups in [1, 2, 4] {
        let r = grad_check(
            |g, v| project(g, group_norm(v[0], v[1], v[2], groups, 1e-5)?, 5),
            &[y.clone(), gamma.clone(), beta.clone()],
            STEP,
        )
        .unwrap();
        out.push((format!("group_norm g{groups}"), r));
    }

    let a = random(&mut rng, &[2, 2, 3, 2]);
    let b = random(&mut rng, &[3, 2, 3, 2]);
    out.push(("concat_channels".into(), grad_check(|g, v| project(g, concat_channels(v[0], v[1])?, 6), &[a, b], STEP).unwrap()));

    let fm = random(&mut rng, &[3, 2, 2, 3]);
    let fb = random(&mut rng, &[2, 2, 2, 3]);
    let w = random(&mut rng, &[3, 2, 1, 1, 1]);
    let bias = random(&mut rng, &[3]);
    let r = grad_check(|g, v| project(g, attention_fuse(v[0], v[1], v[2], v[3])?, 7), &[fm, fb, w, bias], STEP).unwrap();
    out.push(("attention_fuse".into(), r));

    let logits = random(&mut rng, &[2, 2, 3, 2]);
    out.push(("channel_softmax".into(), grad_check(|g, v| project(g, v[0].channel_softmax()?, 8), &[logits], STEP).unwrap()));
    out
}

/// Elementwise arithmetic, activations, the dense layer, reductions and the
/// three losses.
pub fn elementwise_and_losses() -> Vec<Named> {
    let mut out = Vec::new();
    let mut rng = stream(24, Purpose::Sample, 0);
    // Keep relu inputs away from the kink.
    let away = |v: f64| if v.abs() < 0.05 { v + 0.1 } else { v };
    let a = random(&mut rng, &[2, 3, 2, 2]).map(away);
    let b = random(&mut rng, &[2, 3, 2, 2]);
    let ab = [a.clone(), b.clone()];
    out.push(("add".into(), grad_check(|g, v| project(g, v[0].add(v[1])?, 9), &ab, STEP).unwrap()));
    out.push(("sub".into(), grad_check(|g, v| project(g, v[0].sub(v[1])?, 10), &ab, STEP).unwrap()));
    out.push(("mul".into(), grad_check(|g, v| project(g, v[0].mul(v[1])?, 11), &ab, STEP).unwrap()));
    out.push(("scale".into(), grad_check(|g, v| project(g, v[0].scale(-1.7), 12), &ab[..1], STEP).unwrap()));
    out.push(("add_scalar".into(), grad_check(|g, v| project(g, v[0].add_scalar(0.3), 13), &ab[..1], STEP).unwrap()));
    out.push(("relu".into(), grad_check(|g, v| project(g, v[0].relu(), 14), &ab[..1], STEP).unwrap()));
    out.push(("sigmoid".into(), grad_check(|g, v| project(g, v[0].sigmoid(), 15), &ab[..1], STEP).unwrap()));
    out.push(("mean".into(), grad_check(|_, v| Ok(v[0].mul(v[0])?.mean()), &ab[..1], STEP).unwrap()));
    out.push(("reshape".into(), grad_check(|g, v| project(g, v[0].reshape(&[6, 4])?, 16), &ab[..1], STEP).unwrap()));

    let x = random(&mut rng, &[5]);
    let w = random(&mut rng, &[3, 5]);
    let bias = random(&mut rng, &[3]);
    out.push(("linear".into(), grad_check(|g, v| project(g, v[0].linear(v[1], v[2])?, 17), &[x, w, bias], STEP).unwrap()));

    let dims = [3, 2, 2];
    let errors = Volume::new(dims, (0..12).map(|_| u8::from(rng.random_bool(0.7))).collect()).unwrap();
    let reference = one_hot(&errors, 2).unwrap();
    let logits = random(&mut rng, &[2, 3, 2, 2]);
    let r = grad_check(|_, v| generalized_dice_loss(v[0].channel_softmax()?, &reference), &[logits], STEP).unwrap();
    out.push(("generalized_dice_loss".into(), r));

    let target = random(&mut rng, &[1, 3, 2, 2]).map(f64::abs);
    let pred = random(&mut rng, &[1, 3, 2, 2]);
    out.push(("boundary_mse".into(), grad_check(|_, v| boundary_mse(v[0], &target), &[pred], STEP).unwrap()));

    let cer = Tensor::new(vec![1], vec![0.37]).unwrap();
    out.push(("ceu_loss".into(), grad_check(|_, v| Ok(ceu_loss(v[0], 0.81)), &[cer], STEP).unwrap()));

    let parts = Tensor::new(vec![3], vec![0.4, 0.9, 0.2]).unwrap();
    let weights = LossWeights::default();
    let r = grad_check(
        |g, v| {
            let p = v[0];
            let pick = |i: usize| -> Result<Var<'_>> {
                let mut e = vec![0.0; 3];
                e[i] = 1.0;
                Ok(p.mul(g.constant(Tensor::new(vec![3], e)?))?.sum())
            };
            total_loss(pick(0)?, Some(pick(1)?), Some(pick(2)?), &weights)
        },
        &[parts],
        STEP,
    )
    .unwrap();
    out.push(("total_loss".into(), r));
    out
}

fn scalar_fn<F>(f: F) -> F
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    f
}

/// Random `(param, index)` coordinates: up to `per_tensor` per tensor plus
/// the coordinate with the largest analytic gradient.
fn coordinates(model: &AepNet, per_tensor: usize, seed: u64, largest: &[usize]) -> Vec<(usize, usize)> {
    let mut coords = Vec::new();
    for (p, t) in model.params.values().iter().enumerate() {
        let mut rng = stream(seed, Purpose::Sample, p as u64);
        let k = per_tensor.min(t.len());
        let mut picked = Vec::new();
        while picked.len() < k {
            let i = rng.random_range(0..t.len());
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        coords.extend(picked.into_iter().map(|i| (p, i)));
        if !coords.contains(&(p, largest[p])) {
            coords.push((p, largest[p]));
        }
    }
    coords
}

/// Sampled coordinates of every parameter tensor for all three variants.
pub fn whole_network() -> Vec<Named> {
    let mut out = Vec::new();
    let config = AepNetConfig {
        crop: [8, 8, 8],
        ..AepNetConfig::default()
    };
    let dims = config.crop;
    let c = config.num_classes;
    let mut rng = stream(31, Purpose::Sample, 0);
    let image = random(&mut rng, &[1, 8, 8, 8]).map(|v| 0.5 + 0.5 * v);
    let labels = Volume::new(dims, (0..512).map(|_| rng.random_range(0..c) as u8).collect()).unwrap();
    let mask = one_hot(&labels, c).unwrap();
    let errors = Volume::new(dims, (0..512).map(|_| u8::from(rng.random_bool(0.8))).collect()).unwrap();
    let reference = one_hot(&errors, 2).unwrap();
    let rer = errors.data().iter().filter(|&&v| v == 0).count() as f64 / 512.0;
    let boundary = boundary_target(&labels, c).unwrap();
    let boundary = Tensor::new(vec![1, 8, 8, 8], boundary.data().to_vec()).unwrap();
    let weights = LossWeights::default();

    for variant in Variant::ALL {
        let model = AepNet::build(&config, variant, 5).unwrap();
        let f = scalar_fn(|g, p| {
            let pred = model.forward_with(p, g.constant(image.clone()), g.constant(mask.clone()))?;
            let l1 = generalized_dice_loss(pred.error_prob, &reference)?;
            let l2 = pred.boundary.map(|b| boundary_mse(b, &boundary)).transpose()?;
            let l3 = pred.cer.map(|v| ceu_loss(v, rer));
            total_loss(l1, l2, l3, &weights)
        });
        // Largest analytic gradient per tensor, so every tensor is probed
        // where it matters most as well as at random places.
        let graph = Graph::new();
        let vars: Vec<Var<'_>> = model
            .params
            .values()
            .iter()
            .enumerate()
            .map(|(i, t)| graph.param(ParamId(i), t.clone()))
            .collect();
        let grads = graph.backward(f(&graph, &vars).unwrap()).unwrap();
        let largest: Vec<usize> = (0..vars.len())
            .map(|i| {
                let g = grads.get(ParamId(i)).expect("every parameter has a gradient");
                (0..g.len()).max_by(|&a, &b| g.data()[a].abs().total_cmp(&g.data()[b].abs())).unwrap()
            })
            .collect();
        let coords = coordinates(&model, 4, 32, &largest);
        let r = grad_check_at(f, model.params.values(), NETWORK_STEP, &coords).unwrap();
        out.push((format!("network {}", variant.name()), r));
    }
    out
}
