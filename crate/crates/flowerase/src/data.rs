//! Synthetic concept world: labeled Gaussian mixture datasets, prompts,
//! prompt pairs and the retain set.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{normal_vec, rng_from};

/// Per-concept sample noise (standard deviation around the mixture mean).
pub const MIXTURE_NOISE: f64 = 0.1;

/// A prompt is a concept id (or the null-concept sentinel) plus a template id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConceptPrompt {
    /// `None` is the null concept (unconditional row).
    pub concept: Option<usize>,
    pub template: usize,
}

impl ConceptPrompt {
    pub fn of(concept: usize) -> Self {
        Self {
            concept: Some(concept),
            template: 0,
        }
    }

    pub fn null() -> Self {
        Self {
            concept: None,
            template: 0,
        }
    }
}

/// Labeled mixture dataset; concept k's samples are drawn from
/// Normal(mu_k, MIXTURE_NOISE^2 I) with the means placed on a circle.
#[derive(Debug, Clone)]
pub struct ConceptDataset {
    pub dim: usize,
    pub num_concepts: usize,
    pub seed: u64,
    pub separation: f64,
    pub records: Vec<(usize, Vec<f64>)>,
    pub means: Vec<Vec<f64>>,
}

impl ConceptDataset {
    pub fn per_concept_count(&self) -> usize {
        self.records.len() / self.num_concepts
    }

    pub fn records_of(&self, concept: usize) -> impl Iterator<Item = &Vec<f64>> {
        self.records
            .iter()
            .filter(move |(c, _)| *c == concept)
            .map(|(_, x)| x)
    }
}

/// Mixture means on a circle of radius `separation` in the first two dims.
pub fn concept_means(num_concepts: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..num_concepts)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / num_concepts as f64;
            let mut m = vec![0.0; dim];
            m[0] = separation * angle.cos();
            m[1] = separation * angle.sin();
            m
        })
        .collect()
}

pub fn generate_mixture(
    num_concepts: usize,
    per_concept: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<ConceptDataset> {
    if num_concepts < 2 {
        return Err(Error::InvalidArg(format!(
            "need at least 2 concepts, got {num_concepts}"
        )));
    }
    if separation <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "separation must be positive, got {separation}"
        )));
    }
    if dim < 2 {
        return Err(Error::InvalidArg(format!("dim must be >= 2, got {dim}")));
    }
    let means = concept_means(num_concepts, dim, separation);
    let mut records = Vec::with_capacity(num_concepts * per_concept);
    for (k, mean) in means.iter().enumerate() {
        let mut rng = rng_from(seed, &[0xda7a, k as u64]);
        for _ in 0..per_concept {
            let noise = normal_vec(&mut rng, dim);
            let x: Vec<f64> = mean
                .iter()
                .zip(&noise)
                .map(|(m, n)| m + MIXTURE_NOISE * n)
                .collect();
            records.push((k, x));
        }
    }
    Ok(ConceptDataset {
        dim,
        num_concepts,
        seed,
        separation,
        records,
        means,
    })
}

/// Prompt pair (c, c_top): c names the target, c_top a uniformly chosen
/// different concept (the "most similar safe prompt" stand-in).
pub fn make_prompt_pair<R: Rng>(
    target: usize,
    num_concepts: usize,
    rng: &mut R,
) -> Result<(ConceptPrompt, ConceptPrompt)> {
    if num_concepts < 2 {
        return Err(Error::InvalidArg(
            "prompt pairs need at least 2 configured concepts".into(),
        ));
    }
    if target >= num_concepts {
        return Err(Error::InvalidArg(format!(
            "target concept {target} out of range ({num_concepts} concepts)"
        )));
    }
    let mut other = rng.gen_range(0..num_concepts - 1);
    if other >= target {
        other += 1;
    }
    Ok((ConceptPrompt::of(target), ConceptPrompt::of(other)))
}

/// Retain set: (non-erased prompt, reference sample) pairs drawn from the
/// dataset's own records.
#[derive(Debug, Clone)]
pub struct RetainSet {
    pub records: Vec<(ConceptPrompt, Vec<f64>)>,
}

pub fn build_retain_set(
    data: &ConceptDataset,
    erase_set: &BTreeSet<usize>,
    size: usize,
    seed: u64,
) -> Result<RetainSet> {
    let retained: Vec<usize> = (0..data.num_concepts)
        .filter(|k| !erase_set.contains(k))
        .collect();
    if retained.is_empty() {
        return Err(Error::InvalidArg(
            "erase set covers every concept; retain set would be empty".into(),
        ));
    }
    let mut rng = rng_from(seed, &[0x4e7a]);
    let mut records = Vec::with_capacity(size);
    for _ in 0..size {
        let k = retained[rng.gen_range(0..retained.len())];
        let pool: Vec<&Vec<f64>> = data.records_of(k).collect();
        let x = pool[rng.gen_range(0..pool.len())].clone();
        records.push((ConceptPrompt::of(k), x));
    }
    Ok(RetainSet { records })
}

/// Text dataset format: header `FERL-DATA v1 dim=D concepts=K seed=S`, then
/// one `concept_id<TAB>v1,v2,...,vD` line per record.
pub fn save_dataset(path: &Path, data: &ConceptDataset) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "FERL-DATA v1 dim={} concepts={} seed={}",
        data.dim, data.num_concepts, data.seed
    )?;
    for (k, x) in &data.records {
        let vals: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{k}\t{}", vals.join(","))?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<ConceptDataset> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArg("empty dataset file".into()))??;
    let mut dim = 0usize;
    let mut num_concepts = 0usize;
    let mut seed = 0u64;
    if !header.starts_with("FERL-DATA v1") {
        return Err(Error::InvalidArg(format!("bad dataset header: {header}")));
    }
    for tok in header.split_whitespace().skip(2) {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::InvalidArg(format!("bad header token: {tok}")))?;
        match k {
            "dim" => dim = v.parse().map_err(|_| Error::InvalidArg("bad dim".into()))?,
            "concepts" => {
                num_concepts = v
                    .parse()
                    .map_err(|_| Error::InvalidArg("bad concepts".into()))?
            }
            "seed" => seed = v.parse().map_err(|_| Error::InvalidArg("bad seed".into()))?,
            _ => return Err(Error::InvalidArg(format!("unknown header key: {k}"))),
        }
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (k, xs) = line
            .split_once('\t')
            .ok_or_else(|| Error::InvalidArg(format!("bad record: {line}")))?;
        let k: usize = k
            .parse()
            .map_err(|_| Error::InvalidArg(format!("bad concept id: {k}")))?;
        let x: Vec<f64> = xs
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArg(format!("bad values: {xs}")))?;
        if x.len() != dim {
            return Err(Error::InvalidArg(format!(
                "record has {} values, expected {dim}",
                x.len()
            )));
        }
        if k >= num_concepts {
            return Err(Error::InvalidArg(format!("record concept {k} out of range")));
        }
        records.push((k, x));
    }
    // means are derivable from the header params
    let separation = records
        .iter()
        .map(|(_, x)| (x[0] * x[0] + x[1] * x[1]).sqrt())
        .sum::<f64>()
        / records.len().max(1) as f64;
    Ok(ConceptDataset {
        dim,
        num_concepts,
        seed,
        separation,
        means: concept_means(num_concepts, dim, separation),
        records,
    })
}
