//! The evaluation metrics on their own: prompted hit rates from a rigged
//! sampler, the Gaussian-summary distribution distance with its closed-form
//! one-dimensional case, and the prompt-alignment score.
//!
//! Run with: cargo run --example evaluation_metrics

use flowerase::data::{generate_mixture, ConceptPrompt};
use flowerase::eval::{asr, asr_split, frechet_distance};
use flowerase::perception::train_perception;
use flowerase::rng::rng_from;
use rand::Rng;

fn main() -> flowerase::Result<()> {
    let data = generate_mixture(4, 300, 2, 2.0, 5)?;
    let (det, _emb) = train_perception(&data, 0, 200, 5)?;

    // a "perfect" sampler that answers each prompt with a noisy draw around
    // the prompted concept's mean, and a "broken" one that always emits the
    // mean of concept 3
    let means = data.means.clone();
    let perfect = move |p: ConceptPrompt, seed: u64| -> flowerase::Result<Vec<f64>> {
        let k = p.concept.unwrap();
        let mut rng = rng_from(seed, &[1]);
        Ok(means[k].iter().map(|m| m + 0.3 * rng.gen_range(-1.0..1.0)).collect())
    };
    let broken_mean = data.means[3].clone();
    let broken =
        move |_p: ConceptPrompt, _seed: u64| -> flowerase::Result<Vec<f64>> { Ok(broken_mean.clone()) };

    let concepts = [0usize, 1, 2, 3];
    let rates = asr(&perfect, &det, &concepts, 200, 0)?;
    println!("prompted hit rates, faithful sampler: {rates:?}");
    let rates = asr(&broken, &det, &concepts, 200, 0)?;
    println!("prompted hit rates, collapsed sampler: {rates:?}");
    let (erased, retained) = asr_split(&rates, &[0usize].into_iter().collect());
    println!("  split over erase set {{0}}: erased {erased:?}, retained {retained:?}");

    // distribution distance: identical sets, the 1-D closed form, and the
    // effect of a mean shift
    let a: Vec<Vec<f64>> = vec![vec![-1.0], vec![1.0]];
    let b: Vec<Vec<f64>> = vec![vec![0.0], vec![2.0]];
    println!("\ndistance(identical) = {:.2e}", frechet_distance(&a, &a)?);
    println!("distance(unit mean shift, equal variances) = {:.6}", frechet_distance(&a, &b)?);
    let mut rng = rng_from(9, &[2]);
    let big_a: Vec<Vec<f64>> =
        (0..2000).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let big_b: Vec<Vec<f64>> =
        (0..2000).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    println!("distance(two draws of one distribution) = {:.4}", frechet_distance(&big_a, &big_b)?);
    Ok(())
}
