//! The full pipeline in one program: generate data, train the base model and
//! the frozen perception pair, erase one concept with the dual-path policy
//! loop, and compare the before/after evaluation reports.
//!
//! Takes roughly half a minute. Run with: cargo run --example erase_end_to_end

use flowerase::pipeline::{cmd_erase, cmd_eval, cmd_train_base, files, EvalTarget};
use flowerase::RunConfig;

fn main() -> flowerase::Result<()> {
    let cfg = RunConfig::default();
    let dir = std::env::temp_dir().join("flowerase-demo");
    let _ = std::fs::remove_dir_all(&dir);
    println!("run directory: {}", dir.display());
    println!("erasing concept set {:?} of {} concepts\n", cfg.erase_set, cfg.num_concepts);

    println!("[1/3] training base model and perception (with quality gates)...");
    cmd_train_base(&cfg, &dir)?;
    let base = cmd_eval(&cfg, &dir, &EvalTarget::Checkpoint(dir.join(files::BASE)))?;
    println!("{}", base.text());

    println!("[2/3] dual-path policy-gradient erasure ({} epochs)...", cfg.erase_epochs);
    cmd_erase(&cfg, &dir, true, None)?;

    println!("[3/3] evaluating the erased model...");
    let erased = cmd_eval(&cfg, &dir, &EvalTarget::Checkpoint(dir.join(files::ERASED)))?;
    println!("{}", erased.text());

    println!("routing trace (last 5 epochs):");
    let trace = std::fs::read_to_string(dir.join(files::TRACE))?;
    for line in trace.lines().take(1).chain(trace.lines().rev().take(5).collect::<Vec<_>>().into_iter().rev()) {
        println!("  {line}");
    }
    Ok(())
}
