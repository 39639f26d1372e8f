//! The dual-path routing controller in isolation: feed it a scripted stream
//! of per-epoch erasure rewards and watch the smoothed estimate and the
//! routing probability react (rise above the upper threshold, hold inside
//! the band, fall below the lower threshold).
//!
//! Run with: cargo run --example scheduler_dynamics

use flowerase::rewards::PathTag;
use flowerase::scheduler::{Scheduler, SchedulerConfig};

fn main() -> flowerase::Result<()> {
    let cfg = SchedulerConfig::default();
    println!(
        "thresholds: raise above {}, lower below {}, step {}, bounds [{}, {}]\n",
        cfg.tau_high, cfg.tau_low, cfg.delta, cfg.rho_min, cfg.rho_max
    );
    let mut sched = Scheduler::new(cfg)?;

    // routing is probabilistic per batch, seeded by (seed, epoch, batch)
    let routed: Vec<PathTag> = (0..10).map(|b| sched.choose_path(0, 0, b)).collect();
    print!("epoch-0 routing at rho={}: ", cfg.rho_init);
    for p in &routed {
        print!("{p} ");
    }
    println!("\n");

    // scripted erase-reward means: strong -> mediocre -> collapsing -> strong
    let mut script: Vec<Option<f64>> = Vec::new();
    script.extend(std::iter::repeat(Some(0.9)).take(8));
    script.extend(std::iter::repeat(Some(0.55)).take(6));
    script.push(None); // an epoch with no erase batches carries the estimate
    script.extend(std::iter::repeat(Some(0.1)).take(10));
    script.extend(std::iter::repeat(Some(0.95)).take(8));

    for r in script {
        sched.end_epoch(r, 0, 0);
    }
    println!("{}", sched.trace_csv());
    Ok(())
}
