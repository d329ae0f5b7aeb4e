//! Prints the measured Seg.DSC distribution per degradation severity.
//!
//! cargo run --release -p aepnet-core --example calibrate_degradation

use aepnet_core::data::{degrade_mask, gen_phantom, PhantomParams};
use aepnet_core::metrics::{seg_quality, spearman};
use aepnet_core::rng::{stream, Purpose};
use rand::Rng;

fn main() {
    let params = PhantomParams::default();
    let seeds = 50u64;
    println!("severity  mean_dsc  min_dsc  max_dsc");
    for step in 0..=20 {
        let s = step as f64 / 20.0;
        let dscs: Vec<f64> = (0..seeds)
            .map(|seed| {
                let gt = gen_phantom(1000 + seed, &params).unwrap().labels;
                let m = degrade_mask(&gt, params.num_classes, s, seed).unwrap();
                seg_quality(&m, &gt, params.num_classes).unwrap().dsc
            })
            .collect();
        let mean = dscs.iter().sum::<f64>() / dscs.len() as f64;
        let min = dscs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = dscs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{s:8.2}  {mean:8.4}  {min:7.4}  {max:7.4}");
    }

    let mut rng = stream(77, Purpose::Sample, 0);
    let (mut sev, mut dsc) = (Vec::new(), Vec::new());
    for seed in 0..100u64 {
        let s: f64 = rng.random_range(0.0..=1.0);
        let gt = gen_phantom(2000 + seed % 10, &params).unwrap().labels;
        let m = degrade_mask(&gt, params.num_classes, s, seed).unwrap();
        sev.push(s);
        dsc.push(seg_quality(&m, &gt, params.num_classes).unwrap().dsc);
    }
    println!("spearman(severity, Seg.DSC) over 100 draws: {:.4}", spearman(&sev, &dsc).unwrap());
}
