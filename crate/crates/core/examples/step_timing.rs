//! Times training steps and a full-volume forward pass at desk defaults.
//!
//! cargo run --release -p aepnet-core --example step_timing [crop]

use std::time::Instant;

use aepnet_core::data::{degrade_mask, gen_phantom, preprocess, PhantomParams, Sample};
use aepnet_core::losses::LossWeights;
use aepnet_core::model::{AepNet, AepNetConfig, Variant};
use aepnet_core::optim::AdamState;
use aepnet_core::train::{augment, network_inputs, train_step};
use aepnet_core::Graph;

fn main() {
    let params = PhantomParams::default();
    let ph = gen_phantom(0, &params).unwrap();
    let mask = degrade_mask(&ph.labels, 4, 0.5, 0).unwrap();
    let sample = Sample::new(preprocess(&ph.image), mask, ph.labels, 4).unwrap();
    let mut config = AepNetConfig::default();
    if let Some(c) = std::env::args().nth(1) {
        config.crop = [c.parse().expect("crop edge"); 3];
    }
    for variant in Variant::ALL {
        let mut model = AepNet::build(&config, variant, 0).unwrap();
        let mut adam = AdamState::new(&model.params);
        let steps = 5;
        let start = Instant::now();
        for i in 0..steps {
            let crop = augment(&sample, config.crop, &[0, 2], 0, i).unwrap();
            train_step(&mut model, &mut adam, &crop, &LossWeights::default(), 1e-3, i).unwrap();
        }
        let per_step = start.elapsed().as_secs_f64() / steps as f64;
        let (image, onehot) = network_inputs(&sample, 4).unwrap();
        let start = Instant::now();
        let g = Graph::new();
        model.forward(&g, &image, &onehot).unwrap();
        let fwd = start.elapsed().as_secs_f64();
        println!(
            "{:>12}: {} params, {:.3} s/step at {:?}, {:.3} s forward at 32^3",
            variant.name(),
            model.parameter_count(),
            per_step,
            config.crop,
            fwd
        );
    }
}
