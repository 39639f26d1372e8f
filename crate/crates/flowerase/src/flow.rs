//! Conditional flow-matching model: an MLP velocity field over
//! (state, concept embedding, time features), the CFM regression loss,
//! deterministic Euler ODE sampling and stochastic SDE sampling with exact
//! per-step Gaussian transition log-densities.



use crate::data::ConceptPrompt;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::{normal_vec, rng_from, standard_normal};
use crate::tensor::{vecops, RealArray};

pub const TIME_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// Time features: raw t plus one sin/cos pair.
pub fn time_feats(t: f64) -> [f64; TIME_FEATURES] {
    let w = 2.0 * std::f64::consts::PI * t;
    [t, w.sin(), w.cos()]
}

/// Conditional MLP velocity field v(x_t, c, t). The condition enters through
/// a learned embedding table with one reserved null-concept row (index
/// `num_concepts`) for unconditional use.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub data_dim: usize,
    pub embed_dim: usize,
    pub num_concepts: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// (weight [in x out], bias [out]) per layer.
    pub layers: Vec<(RealArray, RealArray)>,
    /// [(num_concepts + 1) x embed_dim]; last row is the null concept.
    pub embed: RealArray,
}

impl VelocityField {
    pub fn new(
        data_dim: usize,
        embed_dim: usize,
        num_concepts: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Self {
        let input_dim = data_dim + embed_dim + TIME_FEATURES;
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        let mut rng = rng_from(seed, &[0xf1e1d]);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (i, o) = (d[0], d[1]);
                let scale = (2.0 / (i + o) as f64).sqrt();
                let w = RealArray::new(
                    vec![i, o],
                    (0..i * o).map(|_| scale * standard_normal(&mut rng)).collect(),
                )
                .unwrap();
                (w, RealArray::zeros(vec![o]))
            })
            .collect();
        let embed = RealArray::new(
            vec![num_concepts + 1, embed_dim],
            (0..(num_concepts + 1) * embed_dim)
                .map(|_| 0.5 * standard_normal(&mut rng))
                .collect(),
        )
        .unwrap();
        Self {
            data_dim,
            embed_dim,
            num_concepts,
            hidden: hidden.to_vec(),
            activation,
            layers,
            embed,
        }
    }

    /// Embedding-table row for a prompt (null concept -> reserved last row).
    pub fn concept_row(&self, prompt: ConceptPrompt) -> Result<usize> {
        match prompt.concept {
            None => Ok(self.num_concepts),
            Some(k) if k < self.num_concepts => Ok(k),
            Some(k) => Err(Error::InvalidArg(format!(
                "concept {k} out of range ({} concepts)",
                self.num_concepts
            ))),
        }
    }

    /// Plain (untracked) forward pass for one state.
    pub fn eval(&self, x: &[f64], prompt: ConceptPrompt, t: f64) -> Result<Vec<f64>> {
        if x.len() != self.data_dim {
            return Err(Error::InvalidArg(format!(
                "state has dim {}, field expects {}",
                x.len(),
                self.data_dim
            )));
        }
        let row = self.concept_row(prompt)?;
        let mut h: Vec<f64> = Vec::with_capacity(x.len() + self.embed_dim + TIME_FEATURES);
        h.extend_from_slice(x);
        h.extend_from_slice(self.embed.row(row));
        h.extend_from_slice(&time_feats(t));
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let hv = RealArray::vector(h);
            let mut y = hv.matmul(w)?;
            for (yv, bv) in y.values_mut().iter_mut().zip(b.values()) {
                *yv += bv;
            }
            h = y.values().to_vec();
            if i + 1 < self.layers.len() {
                for v in &mut h {
                    *v = match self.activation {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                    };
                }
            }
        }
        Ok(h)
    }

    /// Ordered named parameters (checkpoint and optimizer order).
    pub fn named_params(&self) -> Vec<(String, RealArray)> {
        let mut out = vec![("emb.table".to_string(), self.embed.clone())];
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push((format!("l{i}.w"), w.clone()));
            out.push((format!("l{i}.b"), b.clone()));
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.named_params()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect()
    }

    pub fn set_params(&mut self, params: &[(String, RealArray)]) -> Result<()> {
        let expected = 1 + 2 * self.layers.len();
        if params.len() != expected {
            return Err(Error::InvalidArg(format!(
                "field expects {expected} parameter tensors, got {}",
                params.len()
            )));
        }
        self.embed = params[0].1.clone();
        for (i, (w, b)) in self.layers.iter_mut().enumerate() {
            *w = params[1 + 2 * i].1.clone();
            *b = params[2 + 2 * i].1.clone();
        }
        Ok(())
    }

    /// Register parameters on a graph and return their node ids in
    /// `named_params` order.
    pub fn params_on(&self, g: &mut Graph) -> FieldNodes {
        let embed = g.param(self.embed.clone());
        let layers = self
            .layers
            .iter()
            .map(|(w, b)| (g.param(w.clone()), g.param(b.clone())))
            .collect();
        FieldNodes { embed, layers }
    }

    /// Tracked batched forward: states [n x d], one concept row and time per
    /// row. Returns the velocity matrix node [n x d].
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        nodes: &FieldNodes,
        states: &RealArray,
        rows: &[usize],
        ts: &[f64],
    ) -> Result<NodeId> {
        let n = states.rows();
        if rows.len() != n || ts.len() != n {
            return Err(Error::InvalidArg(format!(
                "forward batch size mismatch: {n} states, {} rows, {} times",
                rows.len(),
                ts.len()
            )));
        }
        let x = g.constant(states.clone());
        let emb = g.gather_rows(nodes.embed, rows.to_vec())?;
        let tf = RealArray::matrix(
            &ts.iter().map(|&t| time_feats(t).to_vec()).collect::<Vec<_>>(),
        )?;
        let tf = g.constant(tf);
        let mut h = g.concat_cols(&[x, emb, tf])?;
        for (i, &(w, b)) in nodes.layers.iter().enumerate() {
            h = g.affine(h, w, b)?;
            if i + 1 < nodes.layers.len() {
                h = match self.activation {
                    Activation::Tanh => g.tanh(h),
                    Activation::Relu => g.relu(h),
                };
            }
        }
        Ok(h)
    }

    /// Collect gradients for this field's parameters from a graph after
    /// backward, in `named_params` order.
    pub fn grads_from(&self, g: &Graph, nodes: &FieldNodes) -> Vec<Option<RealArray>> {
        let mut out = vec![g.grad(nodes.embed).cloned()];
        for &(w, b) in &nodes.layers {
            out.push(g.grad(w).cloned());
            out.push(g.grad(b).cloned());
        }
        out
    }
}

/// Node ids of a field's parameters on some graph.
pub struct FieldNodes {
    pub embed: NodeId,
    pub layers: Vec<(NodeId, NodeId)>,
}

/// Straight-line interpolation x_t = (1-t) x0 + t x1.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    if x0.len() != x1.len() {
        return Err(Error::InvalidArg(format!(
            "interpolate endpoints differ in dim: {} vs {}",
            x0.len(),
            x1.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArg(format!("t={t} outside [0,1]")));
    }
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect())
}

/// Single-triple CFM loss: ||v(x_t, c, t) - (x1 - x0)||^2. The conditional
/// form is selected by passing a concrete prompt; `ConceptPrompt::null()`
/// gives the unconditional term.
pub fn cfm_loss(
    field: &VelocityField,
    x0: &[f64],
    x1: &[f64],
    t: f64,
    c: ConceptPrompt,
) -> Result<f64> {
    let xt = interpolate(x0, x1, t)?;
    let v = field.eval(&xt, c, t)?;
    let target = vecops::sub(x1, x0);
    Ok(vecops::sq_dist(&v, &target))
}

/// Batched CFM loss node (mean over the batch) for training.
pub fn cfm_loss_graph(
    field: &VelocityField,
    g: &mut Graph,
    nodes: &FieldNodes,
    x0s: &[Vec<f64>],
    x1s: &[Vec<f64>],
    ts: &[f64],
    rows: &[usize],
) -> Result<NodeId> {
    let n = x0s.len();
    let mut xts = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        xts.push(interpolate(&x0s[i], &x1s[i], ts[i])?);
        targets.push(vecops::sub(&x1s[i], &x0s[i]));
    }
    let v = field.forward_graph(g, nodes, &RealArray::matrix(&xts)?, rows, ts)?;
    let tgt = g.constant(RealArray::matrix(&targets)?);
    let resid = g.sub(v, tgt)?;
    let per_row = g.row_sum_sq(resid);
    Ok(g.mean(per_row))
}

/// Sampler settings; sigma = 0 means pure ODE.
#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub steps: usize,
    pub sigma: f64,
    pub data_dim: usize,
}

/// One sampled generation path: states on the timestep grid plus (for SDE
/// trajectories) per-step Gaussian transition log-densities.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub condition: ConceptPrompt,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step_logps: Vec<f64>,
    pub sigma: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has states")
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    /// Sum of step log-densities (trajectory log-density under the
    /// generating policy).
    pub fn logprob(&self) -> f64 {
        self.step_logps.iter().sum()
    }
}

fn uniform_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

fn gaussian_step_logp(x_next: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x_next.len() as f64;
    -0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - vecops::sq_dist(x_next, mean) / (2.0 * var)
}

/// Deterministic Euler integration of dx/dt = v; the seed fixes only the
/// initial noise draw.
pub fn sample_ode(
    field: &VelocityField,
    c: ConceptPrompt,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Trajectory> {
    sample_ode_with(field, c, cfg, seed, |_t, v| v)
}

/// ODE sampling with a per-step velocity hook (used by the DVE baseline to
/// correct the velocity in flight).
pub fn sample_ode_with(
    field: &VelocityField,
    c: ConceptPrompt,
    cfg: &SamplerConfig,
    seed: u64,
    mut correct: impl FnMut(f64, Vec<f64>) -> Vec<f64>,
) -> Result<Trajectory> {
    if cfg.steps == 0 {
        return Err(Error::InvalidArg("sampler needs at least 1 step".into()));
    }
    let mut rng = rng_from(seed, &[0x0de]);
    let grid = uniform_grid(cfg.steps);
    let mut x = normal_vec(&mut rng, cfg.data_dim);
    let mut states = vec![x.clone()];
    for k in 0..cfg.steps {
        let dt = grid[k + 1] - grid[k];
        let v = correct(grid[k], field.eval(&x, c, grid[k])?);
        x = vecops::add(&x, &vecops::scale(&v, dt));
        states.push(x.clone());
    }
    Ok(Trajectory {
        condition: c,
        seed,
        grid,
        states,
        step_logps: vec![],
        sigma: 0.0,
    })
}

/// Stochastic sampler: each step draws
/// x_{k+1} ~ Normal(x_k + v dt, sigma^2 dt I) and records the transition
/// log-density, making the trajectory likelihood tractable.
pub fn sample_sde_with_logprob(
    field: &VelocityField,
    c: ConceptPrompt,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Trajectory> {
    if cfg.sigma <= 0.0 {
        return Err(Error::InvalidArg(
            "sigma must be positive for SDE sampling; use sample_ode for sigma = 0".into(),
        ));
    }
    if cfg.steps == 0 {
        return Err(Error::InvalidArg("sampler needs at least 1 step".into()));
    }
    let mut rng = rng_from(seed, &[0x5de]);
    let grid = uniform_grid(cfg.steps);
    let mut x = normal_vec(&mut rng, cfg.data_dim);
    let mut states = vec![x.clone()];
    let mut step_logps = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let dt = grid[k + 1] - grid[k];
        let var = cfg.sigma * cfg.sigma * dt;
        let v = field.eval(&x, c, grid[k])?;
        let mean = vecops::add(&x, &vecops::scale(&v, dt));
        let noise = normal_vec(&mut rng, cfg.data_dim);
        let x_next = vecops::add(&mean, &vecops::scale(&noise, var.sqrt()));
        step_logps.push(gaussian_step_logp(&x_next, &mean, var));
        states.push(x_next.clone());
        x = x_next;
    }
    Ok(Trajectory {
        condition: c,
        seed,
        grid,
        states,
        step_logps,
        sigma: cfg.sigma,
    })
}

/// Per-step transition log-densities of a recorded trajectory under a
/// (possibly different) field. Does not mutate the trajectory.
pub fn recompute_logprob(field: &VelocityField, traj: &Trajectory) -> Result<Vec<f64>> {
    if traj.step_logps.is_empty() {
        return Err(Error::InvalidArg(
            "trajectory has no stochastic steps (ODE sampler); log-densities undefined".into(),
        ));
    }
    let mut out = Vec::with_capacity(traj.steps());
    for k in 0..traj.steps() {
        let dt = traj.grid[k + 1] - traj.grid[k];
        let var = traj.sigma * traj.sigma * dt;
        let v = field.eval(&traj.states[k], traj.condition, traj.grid[k])?;
        let mean = vecops::add(&traj.states[k], &vecops::scale(&v, dt));
        out.push(gaussian_step_logp(&traj.states[k + 1], &mean, var));
    }
    Ok(out)
}

/// Debug dump: one `{step, t, state..., logp}` decimal-text line per grid
/// point (log-density column empty for ODE trajectories and the last point).
pub fn dump_trajectory(traj: &Trajectory, w: &mut impl std::io::Write) -> Result<()> {
    for (k, (t, x)) in traj.grid.iter().zip(&traj.states).enumerate() {
        let vals: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        let lp = traj
            .step_logps
            .get(k)
            .map(|l| format!("{l:?}"))
            .unwrap_or_default();
        writeln!(w, "{k}\t{t:?}\t{}\t{lp}", vals.join(","))?;
    }
    Ok(())
}
