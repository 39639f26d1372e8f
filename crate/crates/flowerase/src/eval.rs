//! Quantitative evaluation: per-concept attack success rates, a toy Frechet
//! distance over frozen embedder features, the alignment score, and report
//! assembly (text + appending CSV).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::ConceptPrompt;
use crate::error::{Error, Result};
use crate::perception::{Detector, Embedder, SimRef};

/// Generation hook used by the metrics: (prompt, sample seed) -> final
/// sample. Lets the same harness evaluate plain checkpoints and corrected
/// samplers alike.
pub type SampleFn<'a> = dyn Fn(ConceptPrompt, u64) -> Result<Vec<f64>> + 'a;

/// Per-concept hit rates in percent: fraction of generations whose top-1
/// class equals the prompted concept.
pub fn asr(
    sample: &SampleFn,
    detector: &Detector,
    concepts: &[usize],
    n_per_concept: usize,
    seed: u64,
) -> Result<BTreeMap<usize, f64>> {
    if n_per_concept == 0 {
        return Err(Error::InvalidArg("asr needs n_per_concept >= 1".into()));
    }
    let mut rates = BTreeMap::new();
    for &k in concepts {
        let mut hits = 0usize;
        for i in 0..n_per_concept {
            let s = crate::rng::derive_seed(seed, &[0xa52, k as u64, i as u64]);
            let x = sample(ConceptPrompt::of(k), s)?;
            if detector.classify_top1(&x)? == k {
                hits += 1;
            }
        }
        rates.insert(k, 100.0 * hits as f64 / n_per_concept as f64);
    }
    Ok(rates)
}

/// Split per-concept rates into the erased-set mean and retained-set mean.
pub fn asr_split(
    rates: &BTreeMap<usize, f64>,
    erase_set: &BTreeSet<usize>,
) -> (Option<f64>, Option<f64>) {
    let mean = |pred: &dyn Fn(usize) -> bool| {
        let vals: Vec<f64> = rates
            .iter()
            .filter(|(k, _)| pred(**k))
            .map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    (
        mean(&|k| erase_set.contains(&k)),
        mean(&|k| !erase_set.contains(&k)),
    )
}

fn gaussian_summary(feats: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = feats.len();
    let d = feats[0].len();
    let mut mu = DVector::zeros(d);
    for f in feats {
        mu += DVector::from_column_slice(f);
    }
    mu /= n as f64;
    let mut sigma = DMatrix::zeros(d, d);
    for f in feats {
        let c = DVector::from_column_slice(f) - &mu;
        sigma += &c * c.transpose();
    }
    sigma /= n as f64;
    // small-sample toy runs can be rank-deficient
    for i in 0..d {
        sigma[(i, i)] += 1e-6;
    }
    (mu, sigma)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Frechet distance between the Gaussian summaries of two feature sets:
/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 sqrt(S_a S_b)).
pub fn frechet_distance(feats_a: &[Vec<f64>], feats_b: &[Vec<f64>]) -> Result<f64> {
    for (name, f) in [("first", feats_a), ("second", feats_b)] {
        if f.is_empty() {
            return Err(Error::InvalidArg(format!("{name} feature set is empty")));
        }
        let d = f[0].len();
        if f.len() < d + 1 {
            return Err(Error::InvalidArg(format!(
                "{name} feature set has {} samples for dim {d}; need at least {}",
                f.len(),
                d + 1
            )));
        }
        if f.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidArg(format!("{name} feature set is ragged")));
        }
    }
    if feats_a[0].len() != feats_b[0].len() {
        return Err(Error::InvalidArg(format!(
            "feature dims differ: {} vs {}",
            feats_a[0].len(),
            feats_b[0].len()
        )));
    }
    let (mu_a, sig_a) = gaussian_summary(feats_a);
    let (mu_b, sig_b) = gaussian_summary(feats_b);
    let diff = &mu_a - &mu_b;
    let mean_term = diff.dot(&diff);
    let root_a = sym_sqrt(&sig_a);
    let inner = &root_a * &sig_b * &root_a;
    let inner_sym = (&inner + inner.transpose()) * 0.5;
    let eig = inner_sym.symmetric_eigen();
    let cross: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let dist = mean_term + sig_a.trace() + sig_b.trace() - 2.0 * cross;
    Ok(dist.max(0.0))
}

/// Mean prompt similarity over generated samples, scaled by 100.
pub fn alignment_score(
    sample: &SampleFn,
    embedder: &Embedder,
    prompts: &[ConceptPrompt],
    n_per_prompt: usize,
    seed: u64,
) -> Result<f64> {
    if prompts.is_empty() || n_per_prompt == 0 {
        return Err(Error::InvalidArg("alignment needs prompts and n >= 1".into()));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for (pi, &p) in prompts.iter().enumerate() {
        for i in 0..n_per_prompt {
            let s = crate::rng::derive_seed(seed, &[0xa119, pi as u64, i as u64]);
            let x = sample(p, s)?;
            acc += embedder.similarity(&x, SimRef::Prompt(p))?;
            n += 1;
        }
    }
    Ok(100.0 * acc / n as f64)
}

/// Assembled evaluation of one model against one concept world.
#[derive(Debug, Clone)]
pub struct ErasureReport {
    pub asr_e: Option<f64>,
    pub asr_k: Option<f64>,
    pub frechet: Option<f64>,
    pub alignment: f64,
    pub per_concept: BTreeMap<usize, f64>,
    pub erase_set: BTreeSet<usize>,
    pub n_per_concept: usize,
    pub seed: u64,
    pub config_digest: String,
    /// Embedder features of retained-concept generations, kept so a later
    /// report can use this model as its Frechet reference.
    pub retained_features: Vec<Vec<f64>>,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "n/a".to_string(),
    }
}

impl ErasureReport {
    /// Fixed "key: value" lines plus the per-concept breakdown.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "asr_e: {}", fmt_opt(self.asr_e));
        let _ = writeln!(out, "asr_k: {}", fmt_opt(self.asr_k));
        let _ = writeln!(out, "frechet (toy): {}", fmt_opt(self.frechet));
        let _ = writeln!(out, "alignment: {:.4}", self.alignment);
        let _ = writeln!(out, "n: {}", self.n_per_concept);
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "config_digest: {}", self.config_digest);
        for (k, rate) in &self.per_concept {
            let tag = if self.erase_set.contains(k) { " (erased)" } else { "" };
            let _ = writeln!(out, "concept {k}: {rate:.2}{tag}");
        }
        out
    }

    pub fn csv_header() -> &'static str {
        "asr_e,asr_k,frechet,alignment,n,seed,config_digest"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{},{},{}",
            fmt_opt(self.asr_e),
            fmt_opt(self.asr_k),
            fmt_opt(self.frechet),
            self.alignment,
            self.n_per_concept,
            self.seed,
            self.config_digest
        )
    }

    /// Append this report's CSV row, writing the header only when the file
    /// is new. Never truncates.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        if fresh {
            writeln!(f, "{}", Self::csv_header())?;
        }
        writeln!(f, "{}", self.csv_row())?;
        Ok(())
    }
}

/// Run the full metric suite for one sampler. `reference_features`, when
/// given, supplies the Frechet comparison set (typically the base model's
/// retained-concept features from an earlier report).
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    sample: &SampleFn,
    detector: &Detector,
    embedder: &Embedder,
    num_concepts: usize,
    erase_set: &BTreeSet<usize>,
    reference_features: Option<&[Vec<f64>]>,
    n_per_concept: usize,
    seed: u64,
    config_digest: &str,
) -> Result<ErasureReport> {
    if num_concepts == 0 {
        return Err(Error::InvalidArg("report needs at least 1 concept".into()));
    }
    let concepts: Vec<usize> = (0..num_concepts).collect();
    let per_concept = asr(sample, detector, &concepts, n_per_concept, seed)?;
    let (asr_e, asr_k) = asr_split(&per_concept, erase_set);

    let retained: Vec<ConceptPrompt> = concepts
        .iter()
        .filter(|k| !erase_set.contains(k))
        .map(|&k| ConceptPrompt::of(k))
        .collect();
    let align_prompts: &[ConceptPrompt] = if retained.is_empty() {
        &[]
    } else {
        &retained
    };
    let alignment = if align_prompts.is_empty() {
        0.0
    } else {
        alignment_score(sample, embedder, align_prompts, n_per_concept, seed)?
    };

    let mut retained_features = Vec::new();
    for (pi, p) in retained.iter().enumerate() {
        for i in 0..n_per_concept {
            let s = crate::rng::derive_seed(seed, &[0xfea7, pi as u64, i as u64]);
            let x = sample(*p, s)?;
            retained_features.push(embedder.embed(&x)?);
        }
    }
    let frechet = match reference_features {
        Some(reference) if !retained_features.is_empty() => {
            Some(frechet_distance(&retained_features, reference)?)
        }
        _ => None,
    };

    Ok(ErasureReport {
        asr_e,
        asr_k,
        frechet,
        alignment,
        per_concept,
        erase_set: erase_set.clone(),
        n_per_concept,
        seed,
        config_digest: config_digest.to_string(),
        retained_features,
    })
}
