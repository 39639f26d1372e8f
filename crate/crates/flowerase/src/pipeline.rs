//! End-to-end pipelines: dataset generation, base-model training with its
//! quality gates, the policy-gradient erasure loop with dual-path routing
//! and resumable state, baseline runs, and evaluation/report assembly.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::baselines::{train_esd, DveField, EsdConfig};
use crate::checkpoint::{find, load_tensors, save_tensors};
use crate::config::RunConfig;
use crate::data::{
    build_retain_set, generate_mixture, load_dataset, save_dataset, ConceptDataset, ConceptPrompt,
};
use crate::error::{Error, Result};
use crate::eval::{build_report, ErasureReport};
use crate::flow::{cfm_loss_graph, sample_ode, Activation, SamplerConfig, VelocityField};
use crate::graph::Graph;
use crate::grpo::{policy_step, sample_group, GroupBatch, UpdateConfig};
use crate::optim::Optimizer;
use crate::perception::{perception_from_tensors, train_perception, Detector, Embedder};
use crate::rewards::{reward_ce, reward_ns, PathTag, RewardConfig, RewardSample};
use crate::rng::{derive_seed, rng_from};
use crate::scheduler::{Scheduler, SchedulerConfig, SchedulerState};
use crate::tensor::RealArray;

/// File names inside a run directory.
pub mod files {
    pub const DATASET: &str = "dataset.tsv";
    pub const EFFECTIVE: &str = "effective.cfg";
    pub const PERCEPTION: &str = "perception.ferl";
    pub const BASE: &str = "base.ferl";
    pub const ERASED: &str = "erased.ferl";
    pub const ESD: &str = "esd.ferl";
    pub const DVE: &str = "dve.cfg";
    pub const STATE: &str = "erase_state.ferl";
    pub const BASE_LOSS: &str = "base_loss.csv";
    pub const METRICS: &str = "metrics.csv";
    pub const REWARD_LOG: &str = "reward_log.csv";
    pub const TRACE: &str = "scheduler_trace.csv";
    pub const REPORTS: &str = "reports.csv";
}

fn append_line(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:?}"),
        None => "n/a".to_string(),
    }
}

// ---------------------------------------------------------------- checkpoints

fn activation_code(a: Activation) -> f64 {
    match a {
        Activation::Tanh => 0.0,
        Activation::Relu => 1.0,
    }
}

/// Field tensors plus an architecture descriptor so checkpoints are
/// self-contained.
pub fn field_to_tensors(field: &VelocityField) -> Vec<(String, RealArray)> {
    let mut meta = vec![
        field.data_dim as f64,
        field.embed_dim as f64,
        field.num_concepts as f64,
        activation_code(field.activation),
        field.hidden.len() as f64,
    ];
    meta.extend(field.hidden.iter().map(|&h| h as f64));
    let mut out = vec![("meta".to_string(), RealArray::vector(meta))];
    out.extend(field.named_params());
    out
}

pub fn field_from_tensors(tensors: &[(String, RealArray)]) -> Result<VelocityField> {
    let meta = find(tensors, "meta")?.values().to_vec();
    if meta.len() < 5 {
        return Err(Error::Checkpoint("truncated field meta tensor".into()));
    }
    let hidden: Vec<usize> = meta[5..5 + meta[4] as usize].iter().map(|&v| v as usize).collect();
    let activation = if meta[3] == 1.0 { Activation::Relu } else { Activation::Tanh };
    let mut field = VelocityField::new(
        meta[0] as usize,
        meta[1] as usize,
        meta[2] as usize,
        &hidden,
        activation,
        0,
    );
    let params: Vec<(String, RealArray)> = field
        .named_params()
        .iter()
        .map(|(name, _)| Ok((name.clone(), find(tensors, name)?.clone())))
        .collect::<Result<_>>()?;
    field.set_params(&params)?;
    Ok(field)
}

pub fn save_field(path: &Path, field: &VelocityField) -> Result<()> {
    save_tensors(path, &field_to_tensors(field))
}

pub fn load_field(path: &Path) -> Result<VelocityField> {
    field_from_tensors(&load_tensors(path)?)
}

pub fn save_perception(path: &Path, det: &Detector, emb: &Embedder) -> Result<()> {
    let mut tensors = vec![(
        "pmeta".to_string(),
        RealArray::vector(vec![
            det.data_dim as f64,
            det.num_concepts as f64,
            det.sensitive_concept as f64,
        ]),
    )];
    tensors.extend(det.named_params());
    tensors.extend(emb.named_params());
    save_tensors(path, &tensors)
}

pub fn load_perception(path: &Path) -> Result<(Detector, Embedder)> {
    let tensors = load_tensors(path)?;
    let meta = find(&tensors, "pmeta")?.values().to_vec();
    perception_from_tensors(&tensors, meta[0] as usize, meta[1] as usize, meta[2] as usize)
}

// ------------------------------------------------------------------ gen-data

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let data = generate_mixture(
        cfg.num_concepts,
        cfg.samples_per_concept,
        cfg.data_dim,
        cfg.separation,
        cfg.seed,
    )?;
    let path = out.join(files::DATASET);
    save_dataset(&path, &data)?;
    cfg.write_effective(&out.join(files::EFFECTIVE))?;
    Ok(path)
}

fn load_or_generate_data(cfg: &RunConfig, out: &Path) -> Result<ConceptDataset> {
    let path = out.join(files::DATASET);
    if path.exists() {
        let data = load_dataset(&path)?;
        if data.num_concepts != cfg.num_concepts || data.dim != cfg.data_dim {
            return Err(Error::InvalidArg(format!(
                "dataset at {} has {} concepts / dim {}, config wants {} / {}",
                path.display(),
                data.num_concepts,
                data.dim,
                cfg.num_concepts,
                cfg.data_dim
            )));
        }
        Ok(data)
    } else {
        let data = generate_mixture(
            cfg.num_concepts,
            cfg.samples_per_concept,
            cfg.data_dim,
            cfg.separation,
            cfg.seed,
        )?;
        save_dataset(&path, &data)?;
        Ok(data)
    }
}

// ---------------------------------------------------------------- train-base

fn sampler_of(cfg: &RunConfig) -> SamplerConfig {
    SamplerConfig { steps: cfg.steps, sigma: cfg.sigma, data_dim: cfg.data_dim }
}

fn ode_sampler_of(cfg: &RunConfig) -> SamplerConfig {
    SamplerConfig { steps: cfg.steps, sigma: 0.0, data_dim: cfg.data_dim }
}

/// Train the conditional flow model on the dataset. A tenth of the batch
/// rows use the null concept so the unconditional row is usable later.
pub fn train_base_field(
    cfg: &RunConfig,
    data: &ConceptDataset,
    loss_log: Option<&Path>,
) -> Result<VelocityField> {
    let mut field = VelocityField::new(
        cfg.data_dim,
        cfg.embed_dim,
        cfg.num_concepts,
        &cfg.hidden,
        cfg.flow_activation(),
        cfg.seed,
    );
    let mut opt = Optimizer::adam(cfg.base_lr, &field.param_shapes())?;
    for step in 0..cfg.base_steps {
        let mut rng = rng_from(cfg.seed, &[0xbace, step as u64]);
        let mut x0s = Vec::with_capacity(cfg.base_batch);
        let mut x1s = Vec::with_capacity(cfg.base_batch);
        let mut ts = Vec::with_capacity(cfg.base_batch);
        let mut rows = Vec::with_capacity(cfg.base_batch);
        for _ in 0..cfg.base_batch {
            let (k, x1) = &data.records[rng.gen_range(0..data.records.len())];
            let x0 = crate::rng::normal_vec(&mut rng, data.dim);
            let t: f64 = rng.gen();
            let unconditional: f64 = rng.gen();
            let row = if unconditional < 0.1 { cfg.num_concepts } else { *k };
            x0s.push(x0);
            x1s.push(x1.clone());
            ts.push(t);
            rows.push(row);
        }
        let mut g = Graph::new();
        let nodes = field.params_on(&mut g);
        let loss = cfm_loss_graph(&field, &mut g, &nodes, &x0s, &x1s, &ts, &rows)?;
        let loss_val = g.value(loss).item();
        if !loss_val.is_finite() {
            return Err(Error::Divergence(format!("base loss is {loss_val} at step {step}")));
        }
        g.backward(loss)?;
        let grads = field.grads_from(&g, &nodes);
        let mut params = field.named_params();
        opt.apply(&mut params, &grads)?;
        field.set_params(&params)?;
        if let Some(path) = loss_log {
            if step % 20 == 0 || step + 1 == cfg.base_steps {
                append_line(path, "step,loss", &format!("{step},{loss_val:?}"))?;
            }
        }
    }
    Ok(field)
}

/// Full base pipeline: perception training (with its accuracy gate), flow
/// training, then the per-concept generation-quality gate.
pub fn cmd_train_base(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    cfg.write_effective(&out.join(files::EFFECTIVE))?;
    let data = load_or_generate_data(cfg, out)?;
    let (det, emb) = train_perception(&data, cfg.sensitive_concept, cfg.perception_epochs, cfg.seed)?;
    save_perception(&out.join(files::PERCEPTION), &det, &emb)?;

    let field = train_base_field(cfg, &data, Some(&out.join(files::BASE_LOSS)))?;

    // generation-quality gate: every concept must hit >= 90% top-1
    let sampler = ode_sampler_of(cfg);
    let sample = |p: ConceptPrompt, s: u64| {
        Ok(sample_ode(&field, p, &sampler, s)?.final_state().to_vec())
    };
    let concepts: Vec<usize> = (0..cfg.num_concepts).collect();
    let rates = crate::eval::asr(&sample, &det, &concepts, cfg.eval_n, cfg.seed)?;
    for (k, rate) in &rates {
        if *rate < 90.0 {
            return Err(Error::Gate(format!(
                "base model hit rate for concept {k} is {rate:.1}% < 90%"
            )));
        }
    }
    save_field(&out.join(files::BASE), &field)?;
    Ok(())
}

// --------------------------------------------------------------------- erase

struct EraseState {
    field: VelocityField,
    opt: Optimizer,
    sched: Scheduler,
    next_epoch: usize,
    global_iter: u64,
}

fn save_erase_state(path: &Path, st: &EraseState) -> Result<()> {
    let mut tensors = field_to_tensors(&st.field);
    tensors.extend(st.opt.moment_tensors());
    let (flag, r_hat) = match st.sched.state.r_hat {
        Some(v) => (1.0, v),
        None => (0.0, 0.0),
    };
    tensors.push((
        "run".to_string(),
        RealArray::vector(vec![
            st.next_epoch as f64,
            st.global_iter as f64,
            st.opt.step as f64,
            st.sched.state.rho,
            flag,
            r_hat,
        ]),
    ));
    save_tensors(path, &tensors)
}

fn load_erase_state(path: &Path, cfg: &RunConfig, scfg: SchedulerConfig) -> Result<EraseState> {
    let tensors = load_tensors(path)?;
    let field = field_from_tensors(&tensors)?;
    let mut opt = Optimizer::adam(cfg.rl_lr, &field.param_shapes())?;
    opt.restore_moments(&tensors)?;
    let run = find(&tensors, "run")?.values().to_vec();
    opt.step = run[2] as u64;
    let state = SchedulerState {
        rho: run[3],
        r_hat: if run[4] == 1.0 { Some(run[5]) } else { None },
        epoch: run[0] as u64,
    };
    Ok(EraseState {
        field,
        opt,
        sched: Scheduler::resume(scfg, state)?,
        next_epoch: run[0] as usize,
        global_iter: run[1] as u64,
    })
}

fn scheduler_cfg(cfg: &RunConfig) -> SchedulerConfig {
    SchedulerConfig {
        ema: cfg.ema,
        delta: cfg.delta,
        tau_high: cfg.tau_high,
        tau_low: cfg.tau_low,
        rho_min: cfg.rho_min,
        rho_max: cfg.rho_max,
        rho_init: cfg.rho_init,
    }
}

fn reward_cfg(cfg: &RunConfig) -> RewardConfig {
    RewardConfig {
        alpha: cfg.alpha,
        beta: cfg.beta,
        gamma: cfg.gamma,
        lambda: cfg.lambda,
        erase_set: cfg.erase_set.clone(),
        sensitive_mode: cfg.sensitive_mode,
    }
}

fn group_mean(samples: &[RewardSample], f: impl Fn(&RewardSample) -> f64) -> f64 {
    samples.iter().map(&f).sum::<f64>() / samples.len().max(1) as f64
}

/// The erasure loop. `dual_path = false` forces every batch onto the CE
/// path (the ablation). `stop_after` limits how many further epochs this
/// invocation runs (used to test interruption + resume); the run resumes
/// from the state file when one exists in `out`.
pub fn cmd_erase(
    cfg: &RunConfig,
    out: &Path,
    dual_path: bool,
    stop_after: Option<usize>,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    cfg.write_effective(&out.join(files::EFFECTIVE))?;
    if cfg.erase_set.is_empty() {
        return Err(Error::InvalidArg("erase run needs a non-empty erase_set".into()));
    }
    let data = load_or_generate_data(cfg, out)?;
    let (det, emb) = load_perception(&out.join(files::PERCEPTION))?;
    let base = load_field(&out.join(files::BASE))?;
    let rcfg = reward_cfg(cfg);
    rcfg.validate()?;
    let retain = build_retain_set(&data, &cfg.erase_set, 256, cfg.seed)?;
    let retained: Vec<usize> =
        (0..cfg.num_concepts).filter(|k| !cfg.erase_set.contains(k)).collect();
    let erase: Vec<usize> = cfg.erase_set.iter().copied().collect();
    let sampler = sampler_of(cfg);
    // The KL weight is path-dependent: light on the erase path so the policy
    // can leave the reference, heavy on the retain path where the rolled-out
    // trajectories visit retained-prompt states and the KL acts as a
    // function-space anchor on non-target generation.
    let ucfg_ce = UpdateConfig {
        group_size: cfg.group_size,
        clip: cfg.clip,
        kl_coef: cfg.kl_coef,
        epochs_per_rollout: 1,
    };
    ucfg_ce.validate()?;
    let ucfg_ns = UpdateConfig { kl_coef: cfg.kl_coef_ns, ..ucfg_ce };
    ucfg_ns.validate()?;

    let state_path = out.join(files::STATE);
    let mut st = if state_path.exists() {
        load_erase_state(&state_path, cfg, scheduler_cfg(cfg))?
    } else {
        EraseState {
            field: base.clone(),
            opt: Optimizer::adam(cfg.rl_lr, &base.param_shapes())?,
            sched: Scheduler::new(scheduler_cfg(cfg))?,
            next_epoch: 0,
            global_iter: 0,
        }
    };

    let metrics_path = out.join(files::METRICS);
    let reward_path = out.join(files::REWARD_LOG);
    let trace_path = out.join(files::TRACE);

    let end_epoch = match stop_after {
        Some(n) => (st.next_epoch + n).min(cfg.erase_epochs),
        None => cfg.erase_epochs,
    };

    for epoch in st.next_epoch..end_epoch {
        let mut ce_sum = 0.0;
        let mut ce_groups = 0usize;
        let mut ns_batches = 0usize;
        let mut ce_batches = 0usize;
        for b in 0..cfg.batches_per_epoch {
            let path = if dual_path {
                st.sched.choose_path(cfg.seed, epoch as u64, b as u64)
            } else {
                PathTag::Ce
            };
            match path {
                PathTag::Ns => ns_batches += 1,
                PathTag::Ce => ce_batches += 1,
            }
            let mut rng = rng_from(cfg.seed, &[0xba7c, epoch as u64, b as u64]);
            let mut groups: Vec<GroupBatch> = Vec::with_capacity(cfg.prompts_per_batch);
            for p in 0..cfg.prompts_per_batch {
                let gseed = derive_seed(cfg.seed, &[0x6e0, epoch as u64, b as u64, p as u64]);
                let mut gb;
                let samples: Vec<RewardSample> = match path {
                    PathTag::Ce => {
                        let c = erase[rng.gen_range(0..erase.len())];
                        let c_top = retained[rng.gen_range(0..retained.len())];
                        gb = sample_group(
                            &st.field,
                            ConceptPrompt::of(c),
                            cfg.group_size,
                            &sampler,
                            gseed,
                        )?;
                        gb.c_top = Some(ConceptPrompt::of(c_top));
                        gb.path = PathTag::Ce;
                        gb.trajectories
                            .iter()
                            .map(|t| {
                                reward_ce(
                                    t.final_state(),
                                    (ConceptPrompt::of(c), ConceptPrompt::of(c_top)),
                                    &det,
                                    &emb,
                                    &rcfg,
                                )
                            })
                            .collect::<Result<_>>()?
                    }
                    PathTag::Ns => {
                        let (cp, xr) =
                            retain.records[rng.gen_range(0..retain.records.len())].clone();
                        gb = sample_group(&st.field, cp, cfg.group_size, &sampler, gseed)?;
                        gb.retain_ref = Some(xr.clone());
                        gb.path = PathTag::Ns;
                        gb.trajectories
                            .iter()
                            .map(|t| reward_ns(t.final_state(), cp, &xr, &emb, &rcfg))
                            .collect::<Result<_>>()?
                    }
                };
                let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
                gb.set_rewards(rewards)?;
                append_line(
                    &reward_path,
                    "epoch,batch,path,reward,r_nd,r_sa,anchor",
                    &format!(
                        "{epoch},{b},{path},{:?},{:?},{:?},{:?}",
                        gb.mean_reward(),
                        group_mean(&samples, |s| s.r_nd),
                        group_mean(&samples, |s| s.r_sa),
                        group_mean(&samples, |s| s.anchor),
                    ),
                )?;
                if path == PathTag::Ce {
                    ce_sum += gb.mean_reward();
                    ce_groups += 1;
                }
                groups.push(gb);
            }
            let ucfg = match path {
                PathTag::Ce => &ucfg_ce,
                PathTag::Ns => &ucfg_ns,
            };
            let m = policy_step(&mut st.field, &base, &groups, ucfg, &mut st.opt)?;
            let rho_now = if dual_path { st.sched.state.rho } else { 0.0 };
            append_line(
                &metrics_path,
                "iter,path,mean_reward,kl,clip_frac,rho_t,r_hat",
                &format!(
                    "{},{path},{:?},{:?},{:?},{rho_now:?},{}",
                    st.global_iter,
                    m.mean_reward,
                    m.kl,
                    m.clip_fraction,
                    fmt_opt(st.sched.state.r_hat),
                ),
            )?;
            st.global_iter += 1;
        }
        let r_bar_e = if ce_groups > 0 { Some(ce_sum / ce_groups as f64) } else { None };
        st.sched.end_epoch(r_bar_e, ns_batches, ce_batches);
        let row = *st.sched.trace().last().expect("end_epoch pushed a row");
        let rho_col = if dual_path { row.rho } else { 0.0 };
        append_line(
            &trace_path,
            "epoch,r_bar_e,r_hat,rho,ns_batches,ce_batches",
            &format!(
                "{},{},{},{rho_col:?},{},{}",
                row.epoch,
                fmt_opt(row.r_bar_e),
                fmt_opt(row.r_hat),
                row.ns_batches,
                row.ce_batches
            ),
        )?;
        st.next_epoch = epoch + 1;
        save_field(&out.join(files::ERASED), &st.field)?;
        save_erase_state(&state_path, &st)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- baselines

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Esd,
    Dve,
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "esd" => Ok(BaselineMethod::Esd),
            "dve" => Ok(BaselineMethod::Dve),
            other => Err(Error::InvalidArg(format!(
                "unknown baseline method '{other}' (expected 'esd' or 'dve')"
            ))),
        }
    }
}

pub fn cmd_baseline(cfg: &RunConfig, out: &Path, method: BaselineMethod) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    cfg.write_effective(&out.join(files::EFFECTIVE))?;
    match method {
        BaselineMethod::Esd => {
            let data = load_or_generate_data(cfg, out)?;
            let mut field = load_field(&out.join(files::BASE))?;
            let ecfg = EsdConfig {
                eta: cfg.esd_eta,
                steps: cfg.esd_steps,
                batch: cfg.esd_batch,
                lr: cfg.esd_lr,
                erase_set: cfg.erase_set.clone(),
            };
            train_esd(&mut field, &data, &ecfg, cfg.seed)?;
            let path = out.join(files::ESD);
            save_field(&path, &field)?;
            Ok(path)
        }
        BaselineMethod::Dve => {
            // stateless artifact consumed by eval
            let dcfg = dve_field_of(cfg)?;
            let path = out.join(files::DVE);
            let erase = dcfg
                .erase
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(",");
            std::fs::write(
                &path,
                format!(
                    "FERL-DVE v1\nbase = {}\nerase = {erase}\nanchor = {}\ngamma = {:?}\ntau = {:?}\nt_early = {:?}\n",
                    files::BASE,
                    dcfg.anchor,
                    dcfg.gamma,
                    dcfg.tau,
                    dcfg.t_early
                ),
            )?;
            Ok(path)
        }
    }
}

fn dve_field_of(cfg: &RunConfig) -> Result<DveField> {
    let mut d = DveField::new(cfg.erase_set.clone(), cfg.dve_anchor, cfg.dve_gamma, cfg.dve_tau)?;
    d.t_early = cfg.dve_t_early;
    d.validate()?;
    Ok(d)
}

fn parse_dve_artifact(path: &Path) -> Result<DveField> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("FERL-DVE v1") => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "{}: expected FERL-DVE v1 header, got {other:?}",
                path.display()
            )))
        }
    }
    let mut erase: BTreeSet<usize> = BTreeSet::new();
    let mut anchor = 0usize;
    let mut gamma = 0.0;
    let mut tau = 0.0;
    let mut t_early = 0.5;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad dve artifact line: {line}")))?;
        let v = v.trim();
        match k.trim() {
            "base" => {}
            "erase" => {
                erase = v
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Checkpoint(format!("bad erase list: {v}")))?
            }
            "anchor" => anchor = v.parse().map_err(|_| Error::Checkpoint("bad anchor".into()))?,
            "gamma" => gamma = v.parse().map_err(|_| Error::Checkpoint("bad gamma".into()))?,
            "tau" => tau = v.parse().map_err(|_| Error::Checkpoint("bad tau".into()))?,
            "t_early" => {
                t_early = v.parse().map_err(|_| Error::Checkpoint("bad t_early".into()))?
            }
            other => {
                return Err(Error::Checkpoint(format!("unknown dve artifact key: {other}")))
            }
        }
    }
    let mut d = DveField::new(erase, anchor, gamma, tau)?;
    d.t_early = t_early;
    d.validate()?;
    Ok(d)
}

// ---------------------------------------------------------------------- eval

/// Which model an eval run scores.
pub enum EvalTarget {
    /// A FERL1 field checkpoint.
    Checkpoint(PathBuf),
    /// A FERL-DVE artifact: the base model sampled with the correction.
    DveArtifact(PathBuf),
}

impl EvalTarget {
    /// Sniff the target kind from the file contents.
    pub fn detect(path: &Path) -> Result<EvalTarget> {
        let mut head = [0u8; 5];
        use std::io::Read as _;
        let mut f = std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let n = f.read(&mut head)?;
        if &head[..n] == crate::checkpoint::MAGIC {
            Ok(EvalTarget::Checkpoint(path.to_path_buf()))
        } else {
            Ok(EvalTarget::DveArtifact(path.to_path_buf()))
        }
    }

    fn path(&self) -> &Path {
        match self {
            EvalTarget::Checkpoint(p) | EvalTarget::DveArtifact(p) => p,
        }
    }
}

/// Evaluate a target model. When the run directory holds a base checkpoint
/// and the target is not the base itself, the base model's retained-concept
/// features serve as the Frechet reference.
pub fn cmd_eval(cfg: &RunConfig, out: &Path, target: &EvalTarget) -> Result<ErasureReport> {
    std::fs::create_dir_all(out)?;
    let (det, emb) = load_perception(&out.join(files::PERCEPTION))?;
    let sampler = ode_sampler_of(cfg);
    let digest = cfg.digest();

    let field;
    let dve;
    let sample: Box<dyn Fn(ConceptPrompt, u64) -> Result<Vec<f64>>> = match target {
        EvalTarget::Checkpoint(path) => {
            field = load_field(path)?;
            let f = &field;
            let s = sampler;
            Box::new(move |p, seed| Ok(sample_ode(f, p, &s, seed)?.final_state().to_vec()))
        }
        EvalTarget::DveArtifact(path) => {
            field = load_field(&out.join(files::BASE))?;
            dve = parse_dve_artifact(path)?;
            let f = &field;
            let d = dve;
            let s = sampler;
            Box::new(move |p, seed| {
                Ok(crate::baselines::dve_sample(f, p, &d, &s, seed)?
                    .final_state()
                    .to_vec())
            })
        }
    };

    // reference features from the base model, if this is not the base
    let base_path = out.join(files::BASE);
    let is_base = matches!(target, EvalTarget::Checkpoint(p)
        if p.canonicalize().ok() == base_path.canonicalize().ok());
    let reference = if base_path.exists() && !is_base {
        let base = load_field(&base_path)?;
        let s = sampler;
        let base_sample =
            move |p: ConceptPrompt, seed: u64| -> Result<Vec<f64>> {
                Ok(sample_ode(&base, p, &s, seed)?.final_state().to_vec())
            };
        let base_report = build_report(
            &base_sample,
            &det,
            &emb,
            cfg.num_concepts,
            &cfg.erase_set,
            None,
            cfg.eval_n,
            cfg.seed,
            &digest,
        )?;
        Some(base_report.retained_features)
    } else {
        None
    };

    let report = build_report(
        &sample,
        &det,
        &emb,
        cfg.num_concepts,
        &cfg.erase_set,
        reference.as_deref(),
        cfg.eval_n,
        cfg.seed,
        &digest,
    )?;
    let stem = target
        .path()
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    std::fs::write(out.join(format!("report_{stem}.txt")), report.text())?;
    report.append_csv(&out.join(files::REPORTS))?;
    Ok(report)
}
