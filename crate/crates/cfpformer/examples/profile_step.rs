//! Rough timing of one training step's components at the default scale.
use std::time::Instant;

use cfpformer::loss::{DiceCrossEntropy, Loss};
use cfpformer::model::{CfpFormer, ModelConfig};
use cfpformer::rng::SeedSplitter;
use cfpformer::tensor::Tensor;

fn main() {
    let model = CfpFormer::<f32>::new(ModelConfig::default()).unwrap();
    let seeds = SeedSplitter::new(0);
    let mut rng = seeds.rng("x");
    use rand::Rng;
    let img = Tensor::from_vec(&[8, 1, 64, 64], (0..8 * 64 * 64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let targets: Vec<Vec<u8>> = (0..8).map(|_| (0..4096).map(|_| rng.gen_range(0..4u8)).collect()).collect();

    let t = Instant::now();
    let pyr = model.backbone.forward(&img).unwrap();
    println!("backbone fwd: {:?}", t.elapsed());

    let t = Instant::now();
    let logits = model.decoder.forward(&pyr, true, &mut rng).unwrap();
    println!("decoder fwd: {:?}", t.elapsed());

    let t = Instant::now();
    let loss = DiceCrossEntropy::default().compute(&logits, &targets, 4).unwrap();
    println!("loss fwd: {:?}", t.elapsed());

    let t = Instant::now();
    loss.backward().unwrap();
    println!("backward: {:?}", t.elapsed());
}
