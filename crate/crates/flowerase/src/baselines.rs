//! Comparator methods: negatively-guided fine-tuning of the velocity field
//! against a frozen copy (ESD) and the training-free projection-gated
//! velocity correction applied during sampling (DVE).

use std::collections::BTreeSet;

use rand::Rng;

use crate::data::{ConceptDataset, ConceptPrompt};
use crate::error::{Error, Result};
use crate::flow::{interpolate, SamplerConfig, Trajectory, VelocityField};
use crate::graph::Graph;
use crate::optim::Optimizer;
use crate::rng::{normal_vec, rng_from};
use crate::tensor::{vecops, RealArray};

/// ESD fine-tuning settings.
#[derive(Debug, Clone)]
pub struct EsdConfig {
    /// Negative-guidance strength.
    pub eta: f64,
    /// Training iterations.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub erase_set: BTreeSet<usize>,
}

impl EsdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidArg("esd needs steps >= 1 and batch >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidArg(format!("esd lr must be > 0, got {}", self.lr)));
        }
        if self.erase_set.is_empty() {
            return Err(Error::InvalidArg("esd erase set is empty".into()));
        }
        Ok(())
    }
}

/// Negatively guided target velocity from the frozen copy:
/// v*(x,null,t) - eta * (v*(x,c,t) - v*(x,null,t)).
fn esd_target(
    frozen: &VelocityField,
    x_t: &[f64],
    c: ConceptPrompt,
    t: f64,
    eta: f64,
) -> Result<Vec<f64>> {
    let v_uncond = frozen.eval(x_t, ConceptPrompt::null(), t)?;
    let v_cond = frozen.eval(x_t, c, t)?;
    let guided: Vec<f64> = v_uncond
        .iter()
        .zip(&v_cond)
        .map(|(u, cv)| u - eta * (cv - u))
        .collect();
    Ok(guided)
}

/// ESD loss for one interpolated state: squared distance between the
/// trainable field's conditional velocity and the frozen negatively guided
/// target.
pub fn esd_loss(
    field: &VelocityField,
    frozen: &VelocityField,
    x_t: &[f64],
    c: ConceptPrompt,
    t: f64,
    eta: f64,
) -> Result<f64> {
    if c.concept.is_none() {
        return Err(Error::InvalidArg("esd loss needs a concrete erased concept".into()));
    }
    let target = esd_target(frozen, x_t, c, t, eta)?;
    let v = field.eval(x_t, c, t)?;
    Ok(vecops::sq_dist(&v, &target))
}

/// Fine-tune `field` toward negatively guided velocities on the erased
/// concepts. The frozen copy is captured before the first update and never
/// touched. Returns the per-step batch-mean losses.
pub fn train_esd(
    field: &mut VelocityField,
    data: &ConceptDataset,
    cfg: &EsdConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    for &k in &cfg.erase_set {
        if k >= data.num_concepts {
            return Err(Error::InvalidArg(format!(
                "erase concept {k} out of range ({} concepts)",
                data.num_concepts
            )));
        }
    }
    let frozen = field.clone();
    let erase: Vec<usize> = cfg.erase_set.iter().copied().collect();
    let mut opt = Optimizer::adam(cfg.lr, &field.param_shapes())?;
    let mut losses = Vec::with_capacity(cfg.steps);
    let by_concept: Vec<Vec<&Vec<f64>>> = (0..data.num_concepts)
        .map(|k| data.records.iter().filter(|(c, _)| *c == k).map(|(_, x)| x).collect())
        .collect();
    for step in 0..cfg.steps {
        let mut rng = rng_from(seed, &[0xe5d, step as u64]);
        let mut xts = Vec::with_capacity(cfg.batch);
        let mut targets = Vec::with_capacity(cfg.batch);
        let mut rows = Vec::with_capacity(cfg.batch);
        let mut ts = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let k = erase[rng.gen_range(0..erase.len())];
            let pool = &by_concept[k];
            let x1 = pool[rng.gen_range(0..pool.len())];
            let x0 = normal_vec(&mut rng, data.dim);
            let t: f64 = rng.gen();
            let x_t = interpolate(&x0, x1, t)?;
            targets.push(esd_target(&frozen, &x_t, ConceptPrompt::of(k), t, cfg.eta)?);
            rows.push(field.concept_row(ConceptPrompt::of(k))?);
            ts.push(t);
            xts.push(x_t);
        }
        let mut g = Graph::new();
        let nodes = field.params_on(&mut g);
        let v = field.forward_graph(&mut g, &nodes, &RealArray::matrix(&xts)?, &rows, &ts)?;
        let tgt = g.constant(RealArray::matrix(&targets)?);
        let resid = g.sub(v, tgt)?;
        let per_row = g.row_sum_sq(resid);
        let loss = g.mean(per_row);
        let loss_val = g.value(loss).item();
        if !loss_val.is_finite() {
            return Err(Error::Divergence(format!("esd loss is {loss_val} at step {step}")));
        }
        g.backward(loss)?;
        let grads = field.grads_from(&g, &nodes);
        let mut params = field.named_params();
        opt.apply(&mut params, &grads)?;
        field.set_params(&params)?;
        losses.push(loss_val);
    }
    Ok(losses)
}

/// Training-free velocity-correction settings. Multi-concept erasure applies
/// the correction once per erased concept in ascending id order.
#[derive(Debug, Clone)]
pub struct DveField {
    pub erase: BTreeSet<usize>,
    pub anchor: usize,
    /// Erasure strength (> 0).
    pub gamma: f64,
    /// Negative projection threshold (<= 0).
    pub tau: f64,
    /// Correction applies only while t < t_early.
    pub t_early: f64,
}

impl DveField {
    pub fn new(erase: BTreeSet<usize>, anchor: usize, gamma: f64, tau: f64) -> Result<Self> {
        let cfg = DveField { erase, anchor, gamma, tau, t_early: 0.5 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 {
            return Err(Error::InvalidArg(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.tau > 0.0 {
            return Err(Error::InvalidArg(format!("tau must be <= 0, got {}", self.tau)));
        }
        if self.erase.contains(&self.anchor) {
            return Err(Error::InvalidArg(format!(
                "anchor concept {} is in the erase set",
                self.anchor
            )));
        }
        if self.erase.is_empty() {
            return Err(Error::InvalidArg("dve erase set is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.t_early) {
            return Err(Error::InvalidArg(format!(
                "t_early must be in [0,1], got {}",
                self.t_early
            )));
        }
        Ok(())
    }
}

/// Directional discrepancy between anchor and erase concepts at a state:
/// v(x,anchor,t) - v(x,erase,t). Not normalized.
pub fn dve_delta_v(
    field: &VelocityField,
    x_t: &[f64],
    t: f64,
    erase: usize,
    anchor: usize,
) -> Result<Vec<f64>> {
    if erase == anchor {
        return Err(Error::InvalidArg(format!(
            "dve delta needs distinct concepts, got erase == anchor == {erase}"
        )));
    }
    let va = field.eval(x_t, ConceptPrompt::of(anchor), t)?;
    let ve = field.eval(x_t, ConceptPrompt::of(erase), t)?;
    Ok(vecops::sub(&va, &ve))
}

/// Projection-gated correction: with u = delta_v / ||delta_v|| and
/// s = <v_user, u>, returns v_user + gamma (tau - s) u when s < tau and
/// v_user untouched otherwise. Degenerate delta_v passes through.
pub fn dve_correct(v_user: &[f64], delta_v: &[f64], cfg: &DveField) -> Vec<f64> {
    let norm = vecops::norm(delta_v);
    if norm <= 1e-12 {
        return v_user.to_vec();
    }
    let u = vecops::scale(delta_v, 1.0 / norm);
    let s = vecops::dot(v_user, &u);
    if s < cfg.tau {
        vecops::add(v_user, &vecops::scale(&u, cfg.gamma * (cfg.tau - s)))
    } else {
        v_user.to_vec()
    }
}

/// ODE sampling with the correction applied during the early phase
/// (t < t_early), sequentially for each erased concept in ascending order.
pub fn dve_sample(
    field: &VelocityField,
    prompt: ConceptPrompt,
    cfg: &DveField,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    let erase: Vec<usize> = cfg.erase.iter().copied().collect();
    // the correction needs the current state, not just the velocity, so
    // integrate here with the same grid and initial draw as sample_ode
    if sampler.steps == 0 {
        return Err(Error::InvalidArg("sampler needs at least 1 step".into()));
    }
    let mut rng = rng_from(seed, &[0x0de]);
    let grid: Vec<f64> = (0..=sampler.steps)
        .map(|k| k as f64 / sampler.steps as f64)
        .collect();
    let mut x = normal_vec(&mut rng, sampler.data_dim);
    let mut states = vec![x.clone()];
    for k in 0..sampler.steps {
        let t = grid[k];
        let dt = grid[k + 1] - grid[k];
        let mut v = field.eval(&x, prompt, t)?;
        if t < cfg.t_early {
            for &e in &erase {
                let dv = dve_delta_v(field, &x, t, e, cfg.anchor)?;
                v = dve_correct(&v, &dv, cfg);
            }
        }
        x = vecops::add(&x, &vecops::scale(&v, dt));
        states.push(x.clone());
    }
    Ok(Trajectory {
        condition: prompt,
        seed,
        grid,
        states,
        step_logps: vec![],
        sigma: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_mixture;
    use crate::flow::{sample_ode, Activation};

    fn field(seed: u64) -> VelocityField {
        VelocityField::new(2, 4, 3, &[8], Activation::Tanh, seed)
    }

    fn dcfg() -> DveField {
        DveField::new([0].into(), 1, 2.0, -0.1).unwrap()
    }

    #[test]
    fn esd_eta_zero_target_is_unconditional() {
        let frozen = field(1);
        let x = [0.3, -0.4];
        let t = 0.4;
        let target = esd_target(&frozen, &x, ConceptPrompt::of(0), t, 0.0).unwrap();
        let uncond = frozen.eval(&x, ConceptPrompt::null(), t).unwrap();
        assert_eq!(target, uncond);
        // rig a field to output exactly the unconditional velocity -> loss 0
        // (checked via the loss on the frozen field against itself when the
        // conditional row equals the null row)
        let mut rigged = frozen.clone();
        let null_row = rigged.embed.row(rigged.num_concepts).to_vec();
        for j in 0..rigged.embed_dim {
            let idx = 0 * rigged.embed_dim + j;
            rigged.embed.values_mut()[idx] = null_row[j];
        }
        let l = esd_loss(&rigged, &rigged, &x, ConceptPrompt::of(0), t, 0.0).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn esd_degenerate_condition_makes_target_eta_independent() {
        // conditional == unconditional in the frozen copy -> eta drops out
        let mut frozen = field(2);
        let null_row = frozen.embed.row(frozen.num_concepts).to_vec();
        for j in 0..frozen.embed_dim {
            frozen.embed.values_mut()[2 * frozen.embed_dim + j] = null_row[j];
        }
        let x = [0.2, 0.7];
        let a = esd_target(&frozen, &x, ConceptPrompt::of(2), 0.3, 0.0).unwrap();
        let b = esd_target(&frozen, &x, ConceptPrompt::of(2), 0.3, 5.0).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn esd_loss_rejects_null_prompt() {
        let f = field(3);
        assert!(esd_loss(&f, &f, &[0.0, 0.0], ConceptPrompt::null(), 0.5, 1.0).is_err());
    }

    #[test]
    fn esd_training_leaves_frozen_copy_untouched_and_reduces_loss() {
        let data = generate_mixture(3, 60, 2, 2.0, 11).unwrap();
        let mut f = field(4);
        let before = f.named_params();
        let cfg = EsdConfig { eta: 1.0, steps: 60, batch: 16, lr: 0.01, erase_set: [0].into() };
        let losses = train_esd(&mut f, &data, &cfg, 5).unwrap();
        // frozen copy is cloned internally; the caller's pre-training params
        // serve as the reference: loss against them must have dropped
        let first = losses[..5].iter().sum::<f64>() / 5.0;
        let last = losses[losses.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(last < first, "first {first} last {last}");
        // and training moved the trainable field
        let after = f.named_params();
        assert!(before
            .iter()
            .zip(&after)
            .any(|((_, a), (_, b))| a.values() != b.values()));
    }

    #[test]
    fn esd_training_is_deterministic() {
        let data = generate_mixture(3, 40, 2, 2.0, 12).unwrap();
        let cfg = EsdConfig { eta: 1.0, steps: 10, batch: 8, lr: 0.01, erase_set: [1].into() };
        let mut f1 = field(6);
        let mut f2 = field(6);
        let l1 = train_esd(&mut f1, &data, &cfg, 9).unwrap();
        let l2 = train_esd(&mut f2, &data, &cfg, 9).unwrap();
        assert_eq!(l1, l2);
        for ((_, a), (_, b)) in f1.named_params().iter().zip(&f2.named_params()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn delta_v_guard_and_antisymmetry() {
        let f = field(7);
        let x = [0.1, 0.9];
        assert!(dve_delta_v(&f, &x, 0.2, 1, 1).is_err());
        let ab = dve_delta_v(&f, &x, 0.2, 0, 1).unwrap();
        let ba = dve_delta_v(&f, &x, 0.2, 1, 0).unwrap();
        for (p, q) in ab.iter().zip(&ba) {
            assert!((p + q).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_v_zero_for_condition_independent_field() {
        let mut f = field(8);
        // zero the embedding table: condition no longer influences output
        f.embed = RealArray::zeros(f.embed.shape().to_vec());
        let dv = dve_delta_v(&f, &[0.4, -0.2], 0.3, 0, 2).unwrap();
        assert!(vecops::norm(&dv) < 1e-12);
    }

    #[test]
    fn correct_passthrough_is_bit_identical() {
        let cfg = dcfg();
        let v = [0.123456789, -0.987654321];
        // s = <v, u> with u along +x: s = 0.123... >= tau = -0.1
        let out = dve_correct(&v, &[1.0, 0.0], &cfg);
        assert_eq!(out, v.to_vec());
        // degenerate delta: passthrough regardless of s
        let out = dve_correct(&v, &[0.0, 0.0], &cfg);
        assert_eq!(out, v.to_vec());
    }

    #[test]
    fn correct_one_dimensional_reference_case() {
        let cfg = DveField::new([0].into(), 1, 2.0, -0.1).unwrap();
        let out = dve_correct(&[-0.5], &[2.0], &cfg);
        assert!((out[0] - 0.3).abs() < 1e-12, "{}", out[0]);
    }

    #[test]
    fn correct_projection_identity() {
        let cfg = dcfg();
        let dv = [0.6, -0.8];
        let u = vecops::scale(&dv, 1.0 / vecops::norm(&dv));
        let v = [-0.9, -0.7]; // s = -0.54 + 0.56 = 0.02? compute below
        let s = vecops::dot(&v, &u);
        let out = dve_correct(&v, &dv, &cfg);
        let s_out = vecops::dot(&out, &u);
        if s < cfg.tau {
            assert!((s_out - (s + cfg.gamma * (cfg.tau - s))).abs() < 1e-12);
        } else {
            assert_eq!(out, v.to_vec());
        }
        // gamma = 1 pins the corrected projection at tau
        let mut c1 = dcfg();
        c1.gamma = 1.0;
        let v2 = [-0.9, 0.7]; // projection well below tau for -u direction?
        let s2 = vecops::dot(&v2, &u);
        if s2 < c1.tau {
            let out2 = dve_correct(&v2, &dv, &c1);
            assert!((vecops::dot(&out2, &u) - c1.tau).abs() < 1e-12);
        }
        // orthogonal component untouched when correction fires
        let v3 = vecops::scale(&u, c1.tau - 1.0); // s = tau - 1 < tau
        let mut v3p = v3.clone();
        v3p[0] += u[1] * 0.5;
        v3p[1] -= u[0] * 0.5; // add orthogonal part
        let out3 = dve_correct(&v3p, &dv, &cfg);
        let orth_in = vecops::dot(&v3p, &[u[1], -u[0]]);
        let orth_out = vecops::dot(&out3, &[u[1], -u[0]]);
        assert!((orth_in - orth_out).abs() < 1e-12);
    }

    #[test]
    fn sample_small_gamma_converges_to_uncorrected() {
        let f = field(9);
        let sampler = SamplerConfig { steps: 10, sigma: 0.0, data_dim: 2 };
        let base = sample_ode(&f, ConceptPrompt::of(0), &sampler, 42).unwrap();
        let mut prev = f64::INFINITY;
        for gamma in [1e-1, 1e-2, 1e-3] {
            let cfg = DveField::new([0].into(), 1, gamma, -0.1).unwrap();
            let tr = dve_sample(&f, ConceptPrompt::of(0), &cfg, &sampler, 42).unwrap();
            let dev = tr
                .states
                .iter()
                .zip(&base.states)
                .map(|(a, b)| vecops::sq_dist(a, b).sqrt())
                .fold(0.0f64, f64::max);
            assert!(dev <= prev + 1e-15, "gamma {gamma}: dev {dev} prev {prev}");
            prev = dev;
        }
        assert!(prev < 0.05, "smallest gamma deviation {prev}");
    }

    #[test]
    fn sample_shares_initial_draw_with_plain_ode() {
        let f = field(10);
        let sampler = SamplerConfig { steps: 8, sigma: 0.0, data_dim: 2 };
        let base = sample_ode(&f, ConceptPrompt::of(2), &sampler, 7).unwrap();
        let tr = dve_sample(&f, ConceptPrompt::of(2), &dcfg(), &sampler, 7).unwrap();
        assert_eq!(base.states[0], tr.states[0]);
        assert_eq!(base.grid, tr.grid);
        assert!(tr.step_logps.is_empty());
    }

    #[test]
    fn sample_late_phase_is_plain_euler() {
        // t_early = 0: no correction at all -> identical to sample_ode
        let f = field(11);
        let sampler = SamplerConfig { steps: 6, sigma: 0.0, data_dim: 2 };
        let mut cfg = dcfg();
        cfg.t_early = 0.0;
        let tr = dve_sample(&f, ConceptPrompt::of(0), &cfg, &sampler, 3).unwrap();
        let base = sample_ode(&f, ConceptPrompt::of(0), &sampler, 3).unwrap();
        assert_eq!(tr.states, base.states);
    }

    #[test]
    fn config_guards() {
        assert!(DveField::new([0].into(), 0, 2.0, -0.1).is_err()); // anchor erased
        assert!(DveField::new([0].into(), 1, 0.0, -0.1).is_err()); // gamma
        assert!(DveField::new([0].into(), 1, 2.0, 0.1).is_err()); // tau
        assert!(DveField::new([].into(), 1, 2.0, -0.1).is_err()); // empty
    }
}
