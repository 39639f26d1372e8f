//! The two non-policy baselines on a shared base model: negative-guidance
//! fine-tuning (retrains the field toward anti-concept targets) and the
//! training-free velocity correction (steers sampling away from the erased
//! concept at generation time). Both are evaluated by the same harness.
//!
//! Run with: cargo run --example baseline_comparison

use flowerase::pipeline::{
    cmd_baseline, cmd_eval, cmd_train_base, files, BaselineMethod, EvalTarget,
};
use flowerase::RunConfig;

fn main() -> flowerase::Result<()> {
    let cfg = RunConfig::default();
    let dir = std::env::temp_dir().join("flowerase-baselines");
    let _ = std::fs::remove_dir_all(&dir);

    println!("training base model...");
    cmd_train_base(&cfg, &dir)?;
    let base = cmd_eval(&cfg, &dir, &EvalTarget::Checkpoint(dir.join(files::BASE)))?;

    println!("running negative-guidance fine-tuning...");
    let esd_path = cmd_baseline(&cfg, &dir, BaselineMethod::Esd)?;
    let esd = cmd_eval(&cfg, &dir, &EvalTarget::Checkpoint(esd_path))?;

    println!("writing the training-free correction artifact...");
    let dve_path = cmd_baseline(&cfg, &dir, BaselineMethod::Dve)?;
    let dve = cmd_eval(&cfg, &dir, &EvalTarget::detect(&dve_path)?)?;

    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "n/a".into());
    println!("\nmethod                 erased%   retained%   alignment");
    println!("base model             {:>7}   {:>9}   {:>9.2}", fmt(base.asr_e), fmt(base.asr_k), base.alignment);
    println!("negative guidance      {:>7}   {:>9}   {:>9.2}", fmt(esd.asr_e), fmt(esd.asr_k), esd.alignment);
    println!("velocity correction    {:>7}   {:>9}   {:>9.2}", fmt(dve.asr_e), fmt(dve.asr_k), dve.alignment);
    Ok(())
}
