//! Run configuration: a flat "key = value" text format with full defaults,
//! strict unknown-key rejection, cross-field validation and a canonical
//! digest that is stable under key reordering.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Every tunable of every module, with defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // dataset
    pub num_concepts: usize,
    pub samples_per_concept: usize,
    pub data_dim: usize,
    pub separation: f64,
    // velocity field
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: String,
    // base training
    pub base_steps: usize,
    pub base_batch: usize,
    pub base_lr: f64,
    pub perception_epochs: usize,
    // sampler
    pub steps: usize,
    pub sigma: f64,
    // rewards
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub erase_set: BTreeSet<usize>,
    pub sensitive_concept: usize,
    pub sensitive_mode: bool,
    // grpo
    pub group_size: usize,
    pub clip: f64,
    pub kl_coef: f64,
    /// KL weight on retain-path batches (the retained-prompt anchor).
    pub kl_coef_ns: f64,
    pub rl_lr: f64,
    pub erase_epochs: usize,
    pub batches_per_epoch: usize,
    pub prompts_per_batch: usize,
    // scheduler
    pub ema: f64,
    pub delta: f64,
    pub tau_high: f64,
    pub tau_low: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_init: f64,
    // baselines
    pub esd_eta: f64,
    pub esd_steps: usize,
    pub esd_batch: usize,
    pub esd_lr: f64,
    pub dve_gamma: f64,
    pub dve_tau: f64,
    pub dve_anchor: usize,
    pub dve_t_early: f64,
    // eval
    pub eval_n: usize,
    // run
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            num_concepts: 4,
            samples_per_concept: 500,
            data_dim: 2,
            separation: 2.0,
            hidden: vec![64, 64],
            embed_dim: 8,
            activation: "tanh".into(),
            base_steps: 3000,
            base_batch: 64,
            base_lr: 0.003,
            perception_epochs: 300,
            steps: 12,
            sigma: 0.3,
            alpha: 1.0,
            beta: -2.0,
            gamma: 1.0,
            lambda: 0.5,
            erase_set: [0].into(),
            sensitive_concept: 0,
            sensitive_mode: true,
            group_size: 8,
            clip: 0.2,
            kl_coef: 0.01,
            kl_coef_ns: 20.0,
            rl_lr: 1e-4,
            erase_epochs: 40,
            batches_per_epoch: 16,
            prompts_per_batch: 4,
            ema: 0.9,
            delta: 0.05,
            tau_high: 0.7,
            tau_low: 0.4,
            rho_min: 0.1,
            rho_max: 0.6,
            rho_init: 0.3,
            esd_eta: 1.0,
            esd_steps: 400,
            esd_batch: 32,
            esd_lr: 0.003,
            dve_gamma: 2.0,
            dve_tau: -0.5,
            dve_anchor: 2,
            dve_t_early: 0.5,
            eval_n: 200,
            seed: 0,
        }
    }
}

/// Fixed key order for the canonical form (and thus the digest).
const KEYS: &[&str] = &[
    "num_concepts",
    "samples_per_concept",
    "data_dim",
    "separation",
    "hidden",
    "embed_dim",
    "activation",
    "base_steps",
    "base_batch",
    "base_lr",
    "perception_epochs",
    "steps",
    "sigma",
    "alpha",
    "beta",
    "gamma",
    "lambda",
    "erase_set",
    "sensitive_concept",
    "sensitive_mode",
    "group_size",
    "clip",
    "kl_coef",
    "kl_coef_ns",
    "rl_lr",
    "erase_epochs",
    "batches_per_epoch",
    "prompts_per_batch",
    "ema",
    "delta",
    "tau_high",
    "tau_low",
    "rho_min",
    "rho_max",
    "rho_init",
    "esd_eta",
    "esd_steps",
    "esd_batch",
    "esd_lr",
    "dve_gamma",
    "dve_tau",
    "dve_anchor",
    "dve_t_early",
    "eval_n",
    "seed",
];

fn join_usizes(v: impl IntoIterator<Item = usize>) -> String {
    v.into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_usize_list(s: &str) -> Option<Vec<usize>> {
    if s.trim().is_empty() {
        return Some(vec![]);
    }
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

impl RunConfig {
    fn get(&self, key: &str) -> String {
        match key {
            "num_concepts" => self.num_concepts.to_string(),
            "samples_per_concept" => self.samples_per_concept.to_string(),
            "data_dim" => self.data_dim.to_string(),
            "separation" => format!("{:?}", self.separation),
            "hidden" => join_usizes(self.hidden.iter().copied()),
            "embed_dim" => self.embed_dim.to_string(),
            "activation" => self.activation.clone(),
            "base_steps" => self.base_steps.to_string(),
            "base_batch" => self.base_batch.to_string(),
            "base_lr" => format!("{:?}", self.base_lr),
            "perception_epochs" => self.perception_epochs.to_string(),
            "steps" => self.steps.to_string(),
            "sigma" => format!("{:?}", self.sigma),
            "alpha" => format!("{:?}", self.alpha),
            "beta" => format!("{:?}", self.beta),
            "gamma" => format!("{:?}", self.gamma),
            "lambda" => format!("{:?}", self.lambda),
            "erase_set" => join_usizes(self.erase_set.iter().copied()),
            "sensitive_concept" => self.sensitive_concept.to_string(),
            "sensitive_mode" => self.sensitive_mode.to_string(),
            "group_size" => self.group_size.to_string(),
            "clip" => format!("{:?}", self.clip),
            "kl_coef" => format!("{:?}", self.kl_coef),
            "kl_coef_ns" => format!("{:?}", self.kl_coef_ns),
            "rl_lr" => format!("{:?}", self.rl_lr),
            "erase_epochs" => self.erase_epochs.to_string(),
            "batches_per_epoch" => self.batches_per_epoch.to_string(),
            "prompts_per_batch" => self.prompts_per_batch.to_string(),
            "ema" => format!("{:?}", self.ema),
            "delta" => format!("{:?}", self.delta),
            "tau_high" => format!("{:?}", self.tau_high),
            "tau_low" => format!("{:?}", self.tau_low),
            "rho_min" => format!("{:?}", self.rho_min),
            "rho_max" => format!("{:?}", self.rho_max),
            "rho_init" => format!("{:?}", self.rho_init),
            "esd_eta" => format!("{:?}", self.esd_eta),
            "esd_steps" => self.esd_steps.to_string(),
            "esd_batch" => self.esd_batch.to_string(),
            "esd_lr" => format!("{:?}", self.esd_lr),
            "dve_gamma" => format!("{:?}", self.dve_gamma),
            "dve_tau" => format!("{:?}", self.dve_tau),
            "dve_anchor" => self.dve_anchor.to_string(),
            "dve_t_early" => format!("{:?}", self.dve_t_early),
            "eval_n" => self.eval_n.to_string(),
            "seed" => self.seed.to_string(),
            _ => unreachable!("key list and getter are maintained together"),
        }
    }

    fn set(&mut self, key: &str, raw: &str, line: usize) -> Result<()> {
        let bad = |what: &str| Error::Config {
            line,
            msg: format!("key '{key}': expected {what}, got '{raw}'"),
        };
        macro_rules! num {
            ($field:ident, $ty:ty, $what:expr) => {{
                self.$field = raw.trim().parse::<$ty>().map_err(|_| bad($what))?;
            }};
        }
        match key {
            "num_concepts" => num!(num_concepts, usize, "a non-negative integer"),
            "samples_per_concept" => num!(samples_per_concept, usize, "a non-negative integer"),
            "data_dim" => num!(data_dim, usize, "a non-negative integer"),
            "separation" => num!(separation, f64, "a real number"),
            "hidden" => {
                self.hidden =
                    parse_usize_list(raw).ok_or_else(|| bad("a comma-separated integer list"))?
            }
            "embed_dim" => num!(embed_dim, usize, "a non-negative integer"),
            "activation" => {
                let v = raw.trim();
                if v != "tanh" && v != "relu" {
                    return Err(bad("'tanh' or 'relu'"));
                }
                self.activation = v.to_string();
            }
            "base_steps" => num!(base_steps, usize, "a non-negative integer"),
            "base_batch" => num!(base_batch, usize, "a non-negative integer"),
            "base_lr" => num!(base_lr, f64, "a real number"),
            "perception_epochs" => num!(perception_epochs, usize, "a non-negative integer"),
            "steps" => num!(steps, usize, "a non-negative integer"),
            "sigma" => num!(sigma, f64, "a real number"),
            "alpha" => num!(alpha, f64, "a real number"),
            "beta" => num!(beta, f64, "a real number"),
            "gamma" => num!(gamma, f64, "a real number"),
            "lambda" => num!(lambda, f64, "a real number"),
            "erase_set" => {
                self.erase_set = parse_usize_list(raw)
                    .ok_or_else(|| bad("a comma-separated integer list"))?
                    .into_iter()
                    .collect()
            }
            "sensitive_concept" => num!(sensitive_concept, usize, "a non-negative integer"),
            "sensitive_mode" => num!(sensitive_mode, bool, "'true' or 'false'"),
            "group_size" => num!(group_size, usize, "a non-negative integer"),
            "clip" => num!(clip, f64, "a real number"),
            "kl_coef" => num!(kl_coef, f64, "a real number"),
            "kl_coef_ns" => num!(kl_coef_ns, f64, "a real number"),
            "rl_lr" => num!(rl_lr, f64, "a real number"),
            "erase_epochs" => num!(erase_epochs, usize, "a non-negative integer"),
            "batches_per_epoch" => num!(batches_per_epoch, usize, "a non-negative integer"),
            "prompts_per_batch" => num!(prompts_per_batch, usize, "a non-negative integer"),
            "ema" => num!(ema, f64, "a real number"),
            "delta" => num!(delta, f64, "a real number"),
            "tau_high" => num!(tau_high, f64, "a real number"),
            "tau_low" => num!(tau_low, f64, "a real number"),
            "rho_min" => num!(rho_min, f64, "a real number"),
            "rho_max" => num!(rho_max, f64, "a real number"),
            "rho_init" => num!(rho_init, f64, "a real number"),
            "esd_eta" => num!(esd_eta, f64, "a real number"),
            "esd_steps" => num!(esd_steps, usize, "a non-negative integer"),
            "esd_batch" => num!(esd_batch, usize, "a non-negative integer"),
            "esd_lr" => num!(esd_lr, f64, "a real number"),
            "dve_gamma" => num!(dve_gamma, f64, "a real number"),
            "dve_tau" => num!(dve_tau, f64, "a real number"),
            "dve_anchor" => num!(dve_anchor, usize, "a non-negative integer"),
            "dve_t_early" => num!(dve_t_early, f64, "a real number"),
            "eval_n" => num!(eval_n, usize, "a non-negative integer"),
            "seed" => num!(seed, u64, "a non-negative integer"),
            _ => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key '{key}'"),
                })
            }
        }
        Ok(())
    }

    /// Parse flat "key = value" text over the defaults. Blank lines and
    /// '#' comments are ignored; unknown keys and malformed values are
    /// rejected with their line number.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            cfg.set(key.trim(), value.trim(), line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    /// Cross-field constraint checks; each failure names the offending key.
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| {
            Err(Error::Config { line: 0, msg: format!("key '{key}': {msg}") })
        };
        if self.num_concepts < 2 {
            return fail("num_concepts", format!("need >= 2, got {}", self.num_concepts));
        }
        if self.data_dim < 2 {
            return fail("data_dim", format!("need >= 2, got {}", self.data_dim));
        }
        if self.separation <= 0.0 {
            return fail("separation", format!("need > 0, got {}", self.separation));
        }
        if self.samples_per_concept == 0 {
            return fail("samples_per_concept", "need >= 1".into());
        }
        if self.steps == 0 {
            return fail("steps", "need >= 1".into());
        }
        if self.sigma <= 0.0 {
            return fail("sigma", format!("need > 0, got {}", self.sigma));
        }
        if self.lambda < 0.0 {
            return fail("lambda", format!("need >= 0, got {}", self.lambda));
        }
        for &k in &self.erase_set {
            if k >= self.num_concepts {
                return fail(
                    "erase_set",
                    format!("concept {k} out of range ({} concepts)", self.num_concepts),
                );
            }
        }
        if self.erase_set.len() >= self.num_concepts {
            return fail("erase_set", "cannot erase every concept".into());
        }
        if self.sensitive_concept >= self.num_concepts {
            return fail(
                "sensitive_concept",
                format!("out of range ({} concepts)", self.num_concepts),
            );
        }
        if self.group_size < 2 {
            return fail("group_size", format!("need >= 2, got {}", self.group_size));
        }
        if !(0.0 < self.clip && self.clip < 1.0) {
            return fail("clip", format!("need a value in (0,1), got {}", self.clip));
        }
        if self.kl_coef < 0.0 {
            return fail("kl_coef", format!("need >= 0, got {}", self.kl_coef));
        }
        if self.kl_coef_ns < 0.0 {
            return fail("kl_coef_ns", format!("need >= 0, got {}", self.kl_coef_ns));
        }
        for (key, v) in [("base_lr", self.base_lr), ("rl_lr", self.rl_lr), ("esd_lr", self.esd_lr)]
        {
            if v <= 0.0 {
                return fail(key, format!("need > 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.ema) {
            return fail("ema", format!("need a value in [0,1), got {}", self.ema));
        }
        if self.delta <= 0.0 {
            return fail("delta", format!("need > 0, got {}", self.delta));
        }
        if self.tau_low >= self.tau_high {
            return fail(
                "tau_high",
                format!("tau_low {} must be below tau_high {}", self.tau_low, self.tau_high),
            );
        }
        if !(0.0..=1.0).contains(&self.rho_min)
            || !(0.0..=1.0).contains(&self.rho_max)
            || self.rho_min > self.rho_max
        {
            return fail(
                "rho_min",
                format!("need 0 <= rho_min <= rho_max <= 1, got [{}, {}]", self.rho_min, self.rho_max),
            );
        }
        if !(self.rho_min..=self.rho_max).contains(&self.rho_init) {
            return fail(
                "rho_init",
                format!("{} outside [{}, {}]", self.rho_init, self.rho_min, self.rho_max),
            );
        }
        if self.dve_gamma <= 0.0 {
            return fail("dve_gamma", format!("need > 0, got {}", self.dve_gamma));
        }
        if self.dve_tau > 0.0 {
            return fail("dve_tau", format!("need <= 0, got {}", self.dve_tau));
        }
        if self.dve_anchor >= self.num_concepts {
            return fail("dve_anchor", format!("out of range ({} concepts)", self.num_concepts));
        }
        if self.erase_set.contains(&self.dve_anchor) {
            return fail("dve_anchor", format!("anchor {} is in the erase set", self.dve_anchor));
        }
        if !(0.0..=1.0).contains(&self.dve_t_early) {
            return fail("dve_t_early", format!("need a value in [0,1], got {}", self.dve_t_early));
        }
        if self.eval_n == 0 {
            return fail("eval_n", "need >= 1".into());
        }
        if self.batches_per_epoch == 0 || self.prompts_per_batch == 0 {
            return fail("batches_per_epoch", "epoch geometry needs >= 1".into());
        }
        if self.embed_dim == 0 {
            return fail("embed_dim", "need >= 1".into());
        }
        Ok(())
    }

    /// Canonical "key = value" text in fixed key order; parsing it back
    /// yields an equal config and digest.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    /// Hex SHA-256 of the canonical form.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical().as_bytes());
        let out = h.finalize();
        out.iter().fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }

    pub fn write_effective(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.canonical())?;
        Ok(())
    }

    pub fn flow_activation(&self) -> crate::flow::Activation {
        match self.activation.as_str() {
            "relu" => crate::flow::Activation::Relu,
            _ => crate::flow::Activation::Tanh,
        }
    }
}
