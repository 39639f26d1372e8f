//! Dual-path scheduler: routes each batch to the erasure path or the
//! preservation path with probability rho, tracks an exponential moving
//! average of erasure-path rewards, and adapts rho with a hysteresis band.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rewards::PathTag;
use crate::rng::rng_from;
use rand::Rng;

/// Scheduler hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct SchedulerConfig {
    /// EMA smoothing factor in [0,1); weight on the previous estimate.
    pub ema: f64,
    /// Step size for rho adjustments.
    pub delta: f64,
    /// EMA above this raises rho (erasure is going well).
    pub tau_high: f64,
    /// EMA below this lowers rho (erasure needs attention).
    pub tau_low: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_init: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            ema: 0.9,
            delta: 0.05,
            tau_high: 0.7,
            tau_low: 0.4,
            rho_min: 0.1,
            rho_max: 0.6,
            rho_init: 0.3,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ema) {
            return Err(Error::InvalidArg(format!("ema must be in [0,1), got {}", self.ema)));
        }
        if self.delta <= 0.0 {
            return Err(Error::InvalidArg(format!("delta must be > 0, got {}", self.delta)));
        }
        if self.tau_low >= self.tau_high {
            return Err(Error::InvalidArg(format!(
                "tau_low {} must be below tau_high {}",
                self.tau_low, self.tau_high
            )));
        }
        if !(0.0..=1.0).contains(&self.rho_min)
            || !(0.0..=1.0).contains(&self.rho_max)
            || self.rho_min > self.rho_max
        {
            return Err(Error::InvalidArg(format!(
                "need 0 <= rho_min <= rho_max <= 1, got [{}, {}]",
                self.rho_min, self.rho_max
            )));
        }
        if !(self.rho_min..=self.rho_max).contains(&self.rho_init) {
            return Err(Error::InvalidArg(format!(
                "rho_init {} outside [{}, {}]",
                self.rho_init, self.rho_min, self.rho_max
            )));
        }
        Ok(())
    }
}

/// Mutable scheduler state; everything needed to resume mid-run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerState {
    pub rho: f64,
    /// EMA of erasure-path mean rewards; None until the first epoch that saw
    /// at least one erasure batch.
    pub r_hat: Option<f64>,
    pub epoch: u64,
}

/// One row of the per-epoch scheduler trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub epoch: u64,
    pub r_bar_e: Option<f64>,
    pub r_hat: Option<f64>,
    pub rho: f64,
    pub ns_batches: usize,
    pub ce_batches: usize,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    pub cfg: SchedulerConfig,
    pub state: SchedulerState,
    trace: Vec<TraceRow>,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Scheduler {
            cfg,
            state: SchedulerState { rho: cfg.rho_init, r_hat: None, epoch: 0 },
            trace: Vec::new(),
        })
    }

    pub fn resume(cfg: SchedulerConfig, state: SchedulerState) -> Result<Self> {
        cfg.validate()?;
        Ok(Scheduler { cfg, state, trace: Vec::new() })
    }

    /// Route one batch: preservation path with probability rho. Seeded per
    /// (master seed, epoch, batch) so routing is deterministic and
    /// resume-stable.
    pub fn choose_path(&self, master_seed: u64, epoch: u64, batch: u64) -> PathTag {
        let mut rng = rng_from(master_seed, &[0x90u64, epoch, batch]);
        let u: f64 = rng.gen();
        if u < self.state.rho {
            PathTag::Ns
        } else {
            PathTag::Ce
        }
    }

    /// Fold one epoch's erasure-path mean reward into the EMA. The first
    /// observation initializes the EMA directly; epochs with no erasure
    /// batches carry the previous value unchanged.
    pub fn update_ema(&mut self, r_bar_e: Option<f64>) -> Option<f64> {
        if let Some(r) = r_bar_e {
            self.state.r_hat = Some(match self.state.r_hat {
                Some(prev) => self.cfg.ema * prev + (1.0 - self.cfg.ema) * r,
                None => r,
            });
        }
        self.state.r_hat
    }

    /// Hysteresis update: raise rho when the EMA clears tau_high, lower it
    /// when the EMA falls below tau_low, hold inside the band. Clamped to
    /// [rho_min, rho_max]. No-op while the EMA is unset.
    pub fn update_rho(&mut self) -> f64 {
        if let Some(r_hat) = self.state.r_hat {
            if r_hat > self.cfg.tau_high {
                self.state.rho = (self.state.rho + self.cfg.delta).min(self.cfg.rho_max);
            } else if r_hat < self.cfg.tau_low {
                self.state.rho = (self.state.rho - self.cfg.delta).max(self.cfg.rho_min);
            }
        }
        self.state.rho
    }

    /// Close out an epoch: EMA update, rho update, trace row.
    pub fn end_epoch(&mut self, r_bar_e: Option<f64>, ns_batches: usize, ce_batches: usize) {
        let epoch = self.state.epoch;
        self.update_ema(r_bar_e);
        let r_hat = self.state.r_hat;
        let rho = self.update_rho();
        self.trace.push(TraceRow { epoch, r_bar_e, r_hat, rho, ns_batches, ce_batches });
        self.state.epoch += 1;
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Render the trace as CSV with a header row.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,r_bar_e,r_hat,rho,ns_batches,ce_batches\n");
        for row in &self.trace {
            let fmt_opt = |v: Option<f64>| match v {
                Some(x) => format!("{x:?}"),
                None => "n/a".to_string(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{:?},{},{}",
                row.epoch,
                fmt_opt(row.r_bar_e),
                fmt_opt(row.r_hat),
                row.rho,
                row.ns_batches,
                row.ce_batches
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> Scheduler {
        Scheduler::new(SchedulerConfig::default()).unwrap()
    }

    #[test]
    fn ema_reference_value() {
        let mut s = sched();
        s.state.r_hat = Some(0.5);
        let r = s.update_ema(Some(0.7)).unwrap();
        assert!((r - 0.52).abs() < 1e-12, "{r}");
    }

    #[test]
    fn ema_first_observation_initializes() {
        let mut s = sched();
        assert_eq!(s.update_ema(Some(0.3)), Some(0.3));
    }

    #[test]
    fn ema_carries_through_empty_epochs() {
        let mut s = sched();
        s.update_ema(Some(0.6));
        assert_eq!(s.update_ema(None), Some(0.6));
        assert_eq!(s.update_ema(None), Some(0.6));
    }

    #[test]
    fn rho_hysteresis_band() {
        let mut s = sched();
        // inside the dead band: no movement
        s.state.r_hat = Some(0.55);
        assert_eq!(s.update_rho(), 0.3);
        // above tau_high: up by delta
        s.state.r_hat = Some(0.75);
        assert!((s.update_rho() - 0.35).abs() < 1e-12);
        // below tau_low: down by delta
        s.state.r_hat = Some(0.2);
        assert!((s.update_rho() - 0.30).abs() < 1e-12);
        // boundary values sit in the hold region (strict inequalities)
        s.state.r_hat = Some(0.7);
        assert!((s.update_rho() - 0.30).abs() < 1e-12);
        s.state.r_hat = Some(0.4);
        assert!((s.update_rho() - 0.30).abs() < 1e-12);
    }

    #[test]
    fn rho_respects_caps() {
        let mut s = sched();
        s.state.r_hat = Some(0.95);
        for _ in 0..20 {
            s.update_rho();
        }
        assert!((s.state.rho - 0.6).abs() < 1e-12);
        s.state.r_hat = Some(0.05);
        for _ in 0..20 {
            s.update_rho();
        }
        assert!((s.state.rho - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rho_stays_on_quantized_grid() {
        // random walk of EMA values: rho must always equal
        // clamp(rho_init + k * delta) for integer k
        let mut s = sched();
        let mut rng = rng_from(42, &[1]);
        for _ in 0..500 {
            s.state.r_hat = Some(rng.gen::<f64>());
            let rho = s.update_rho();
            let k = ((rho - s.cfg.rho_init) / s.cfg.delta).round();
            let reconstructed = (s.cfg.rho_init + k * s.cfg.delta)
                .clamp(s.cfg.rho_min, s.cfg.rho_max);
            assert!((rho - reconstructed).abs() < 1e-9, "rho {rho} off-grid");
            assert!((s.cfg.rho_min - 1e-12..=s.cfg.rho_max + 1e-12).contains(&rho));
        }
    }

    #[test]
    fn routing_frequency_matches_rho() {
        let s = sched();
        let n = 200_000u64;
        let mut ns = 0u64;
        for b in 0..n {
            if s.choose_path(7, 0, b) == PathTag::Ns {
                ns += 1;
            }
        }
        let frac = ns as f64 / n as f64;
        assert!((frac - 0.3).abs() < 0.005, "{frac}");
    }

    #[test]
    fn routing_is_deterministic_and_seed_sensitive() {
        let s = sched();
        let a: Vec<PathTag> = (0..100).map(|b| s.choose_path(1, 3, b)).collect();
        let b: Vec<PathTag> = (0..100).map(|b| s.choose_path(1, 3, b)).collect();
        assert_eq!(a, b);
        let c: Vec<PathTag> = (0..100).map(|b| s.choose_path(2, 3, b)).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn trace_rows_and_determinism() {
        let run = || {
            let mut s = sched();
            s.end_epoch(Some(0.8), 3, 13);
            s.end_epoch(None, 5, 11);
            s.end_epoch(Some(0.2), 4, 12);
            s.trace_csv()
        };
        let a = run();
        assert_eq!(a, run());
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines[0], "epoch,r_bar_e,r_hat,rho,ns_batches,ce_batches");
        assert_eq!(lines.len(), 4);
        let fields: Vec<Vec<&str>> =
            lines[1..].iter().map(|l| l.split(',').collect()).collect();
        assert_eq!(fields[0][..3], ["0", "0.8", "0.8"]);
        assert!((fields[0][3].parse::<f64>().unwrap() - 0.35).abs() < 1e-12);
        assert_eq!(fields[0][4..], ["3", "13"]);
        // empty epoch carries r_hat, rho moves again (0.8 > tau_high)
        assert_eq!(fields[1][..3], ["1", "n/a", "0.8"]);
        assert!((fields[1][3].parse::<f64>().unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(fields[1][4..], ["5", "11"]);
    }

    #[test]
    fn config_validation() {
        let mut c = SchedulerConfig::default();
        c.tau_low = 0.8;
        assert!(c.validate().is_err());
        let mut c = SchedulerConfig::default();
        c.ema = 1.0;
        assert!(c.validate().is_err());
        let mut c = SchedulerConfig::default();
        c.rho_init = 0.9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn resume_reproduces_state() {
        let mut s = sched();
        s.end_epoch(Some(0.8), 1, 1);
        s.end_epoch(Some(0.75), 1, 1);
        let snap = s.state;
        let mut resumed = Scheduler::resume(s.cfg, snap).unwrap();
        s.end_epoch(Some(0.1), 1, 1);
        resumed.end_epoch(Some(0.1), 1, 1);
        assert_eq!(s.state, resumed.state);
    }
}
