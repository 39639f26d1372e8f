//! One group-relative policy update, end to end: sample a group of
//! trajectories for a prompt, score them, z-score the rewards within the
//! group, and take a clipped-surrogate step against a frozen reference.
//!
//! Run with: cargo run --example policy_update

use flowerase::data::ConceptPrompt;
use flowerase::flow::{Activation, SamplerConfig, VelocityField};
use flowerase::grpo::{kl_estimate, policy_step, sample_group, UpdateConfig};
use flowerase::optim::Optimizer;

fn main() -> flowerase::Result<()> {
    let mut field = VelocityField::new(1, 4, 2, &[8], Activation::Tanh, 3);
    let reference = field.clone();
    let sampler = SamplerConfig { steps: 6, sigma: 0.4, data_dim: 1 };
    let cfg = UpdateConfig { group_size: 8, clip: 0.2, kl_coef: 0.01, epochs_per_rollout: 1 };
    let mut opt = Optimizer::adam(0.01, &field.param_shapes())?;

    // toy objective: generations for concept 0 should land near +2
    let target = 2.0;
    println!("iter   mean reward    kl          clip%");
    for iter in 0..150u64 {
        let mut batch = sample_group(&field, ConceptPrompt::of(0), 8, &sampler, 1000 + 8 * iter)?;
        let rewards: Vec<f64> = batch
            .trajectories
            .iter()
            .map(|t| -(t.final_state()[0] - target).abs())
            .collect();
        batch.set_rewards(rewards)?;
        let m = policy_step(&mut field, &reference, &[batch], &cfg, &mut opt)?;
        if iter % 25 == 0 {
            println!(
                "{iter:>4}   {:+.4}        {:.2e}    {:.1}",
                m.mean_reward,
                m.kl,
                100.0 * m.clip_fraction
            );
        }
    }

    let final_batch = sample_group(&field, ConceptPrompt::of(0), 8, &sampler, 999_999)?;
    let mean: f64 =
        final_batch.trajectories.iter().map(|t| t.final_state()[0]).sum::<f64>() / 8.0;
    println!("\nfinal sample mean: {mean:+.3} (target {target:+.1})");
    println!(
        "divergence from the frozen reference: {:.4}",
        kl_estimate(&field, &reference, &final_batch)?
    );
    Ok(())
}
