//! Frozen perception stand-ins: a two-headed concept/sensitivity classifier
//! (detector) and an embedding model with per-concept prototypes (embedder).
//! Both share one trunk and are trained jointly, then frozen.

use crate::data::{ConceptDataset, ConceptPrompt};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::Optimizer;
use crate::tensor::{vecops, RealArray};

pub const EMBED_DIM: usize = 8;

/// Simplex pair from the binary sensitivity head.
#[derive(Debug, Clone, Copy)]
pub struct DetectorScores {
    /// "Neutral" prediction score.
    pub lab_n: f64,
    /// "Sensitive" prediction score.
    pub lab_p: f64,
}

/// Frozen classifier: shared trunk plus a K-way concept head and a binary
/// {neutral, sensitive} head.
#[derive(Debug, Clone)]
pub struct Detector {
    pub data_dim: usize,
    pub num_concepts: usize,
    pub sensitive_concept: usize,
    trunk: Vec<(RealArray, RealArray)>,
    head_concept: (RealArray, RealArray),
    head_binary: (RealArray, RealArray),
}

/// Frozen encoder (data dim -> embedding dim) with unit-norm per-concept
/// prototype vectors.
#[derive(Debug, Clone)]
pub struct Embedder {
    pub data_dim: usize,
    pub embed_dim: usize,
    trunk: Vec<(RealArray, RealArray)>,
    pub prototypes: Vec<Vec<f64>>,
}

fn trunk_eval(trunk: &[(RealArray, RealArray)], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, (w, b)) in trunk.iter().enumerate() {
        let hv = RealArray::vector(h);
        let mut y = hv.matmul(w).expect("trunk shapes fixed at build time");
        for (yv, bv) in y.values_mut().iter_mut().zip(b.values()) {
            *yv += bv;
        }
        h = y.values().to_vec();
        if i + 1 < trunk.len() {
            for v in &mut h {
                *v = v.tanh();
            }
        }
    }
    h
}

fn head_eval(head: &(RealArray, RealArray), h: &[f64]) -> Vec<f64> {
    let hv = RealArray::vector(h.to_vec());
    let mut y = hv.matmul(&head.0).expect("head shapes fixed at build time");
    for (yv, bv) in y.values_mut().iter_mut().zip(head.1.values()) {
        *yv += bv;
    }
    y.values().to_vec()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl Detector {
    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.data_dim {
            return Err(Error::InvalidArg(format!(
                "sample has dim {}, detector expects {}",
                x.len(),
                self.data_dim
            )));
        }
        Ok(())
    }

    /// Softmax pair of the sensitivity head.
    pub fn detect(&self, x: &[f64]) -> Result<DetectorScores> {
        self.check_dim(x)?;
        let h = trunk_eval(&self.trunk, x);
        let p = softmax(&head_eval(&self.head_binary, &h));
        Ok(DetectorScores {
            lab_n: p[0],
            lab_p: p[1],
        })
    }

    pub fn concept_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let h = trunk_eval(&self.trunk, x);
        Ok(head_eval(&self.head_concept, &h))
    }

    /// Argmax of the K-way head; ties break toward the lowest id.
    pub fn classify_top1(&self, x: &[f64]) -> Result<usize> {
        let logits = self.concept_logits(x)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn named_params(&self) -> Vec<(String, RealArray)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.trunk.iter().enumerate() {
            out.push((format!("det.trunk{i}.w"), w.clone()));
            out.push((format!("det.trunk{i}.b"), b.clone()));
        }
        out.push(("det.head_k.w".into(), self.head_concept.0.clone()));
        out.push(("det.head_k.b".into(), self.head_concept.1.clone()));
        out.push(("det.head_s.w".into(), self.head_binary.0.clone()));
        out.push(("det.head_s.b".into(), self.head_binary.1.clone()));
        out
    }
}

/// Reference for a similarity query: a concept prompt (compared against its
/// prototype) or another sample (embedded first).
pub enum SimRef<'a> {
    Prompt(ConceptPrompt),
    Sample(&'a [f64]),
}

impl Embedder {
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.data_dim {
            return Err(Error::InvalidArg(format!(
                "sample has dim {}, embedder expects {}",
                x.len(),
                self.data_dim
            )));
        }
        Ok(trunk_eval(&self.trunk, x))
    }

    fn unit(&self, v: Vec<f64>) -> Result<Vec<f64>> {
        let n = vecops::norm(&v);
        if n < 1e-12 {
            return Err(Error::InvalidArg("zero-norm embedding".into()));
        }
        Ok(vecops::scale(&v, 1.0 / n))
    }

    /// Cosine similarity between a sample and a prompt prototype or another
    /// sample, in [-1, 1].
    pub fn similarity(&self, x: &[f64], reference: SimRef) -> Result<f64> {
        let a = self.unit(self.embed(x)?)?;
        let b = match reference {
            SimRef::Prompt(p) => {
                let k = p.concept.ok_or_else(|| {
                    Error::InvalidArg("similarity against the null concept is undefined".into())
                })?;
                self.prototypes
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArg(format!("no prototype for concept {k}")))?
            }
            SimRef::Sample(s) => self.unit(self.embed(s)?)?,
        };
        Ok(vecops::dot(&a, &b))
    }

    pub fn named_params(&self) -> Vec<(String, RealArray)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.trunk.iter().enumerate() {
            out.push((format!("emb.trunk{i}.w"), w.clone()));
            out.push((format!("emb.trunk{i}.b"), b.clone()));
        }
        out.push((
            "emb.proto".into(),
            RealArray::matrix(&self.prototypes).expect("prototypes rectangular"),
        ));
        out
    }
}

/// Canonical record order: by concept id, then lexicographically by value
/// bits. Training is invariant to the incoming record permutation.
fn canonicalize(data: &ConceptDataset) -> Vec<(usize, Vec<f64>)> {
    let mut recs = data.records.clone();
    recs.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            for (x, y) in a.1.iter().zip(&b.1) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Equal => continue,
                    o => return o,
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    recs
}

/// Train the shared-trunk detector/embedder pair and freeze it. Fails if
/// held-out concept accuracy lands below 95%.
pub fn train_perception(
    data: &ConceptDataset,
    sensitive_concept: usize,
    epochs: usize,
    seed: u64,
) -> Result<(Detector, Embedder)> {
    if data.num_concepts < 2 {
        return Err(Error::InvalidArg("perception needs at least 2 concepts".into()));
    }
    if sensitive_concept >= data.num_concepts {
        return Err(Error::InvalidArg(format!(
            "sensitive concept {sensitive_concept} out of range"
        )));
    }
    let recs = canonicalize(data);
    // deterministic held-out split: every 5th record
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, r) in recs.iter().enumerate() {
        if i % 5 == 4 {
            held.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }

    let hidden = 32usize;
    let dims = [data.dim, hidden, EMBED_DIM];
    let mut rng = crate::rng::rng_from(seed, &[0x9e4c]);
    let mut init = |i: usize, o: usize| -> RealArray {
        let scale = (2.0 / (i + o) as f64).sqrt();
        RealArray::new(
            vec![i, o],
            (0..i * o)
                .map(|_| scale * crate::rng::standard_normal(&mut rng))
                .collect(),
        )
        .unwrap()
    };
    let mut params: Vec<(String, RealArray)> = vec![
        ("t0.w".into(), init(dims[0], dims[1])),
        ("t0.b".into(), RealArray::zeros(vec![dims[1]])),
        ("t1.w".into(), init(dims[1], dims[2])),
        ("t1.b".into(), RealArray::zeros(vec![dims[2]])),
        ("hk.w".into(), init(dims[2], data.num_concepts)),
        ("hk.b".into(), RealArray::zeros(vec![data.num_concepts])),
        ("hs.w".into(), init(dims[2], 2)),
        ("hs.b".into(), RealArray::zeros(vec![2])),
    ];
    let shapes: Vec<Vec<usize>> = params.iter().map(|(_, t)| t.shape().to_vec()).collect();
    let mut opt = Optimizer::adam(0.01, &shapes)?;

    let xs = RealArray::matrix(&train.iter().map(|(_, x)| x.clone()).collect::<Vec<_>>())?;
    let t_concept =
        RealArray::vector(train.iter().map(|(k, _)| *k as f64).collect::<Vec<f64>>());
    let t_binary = RealArray::vector(
        train
            .iter()
            .map(|(k, _)| if *k == sensitive_concept { 1.0 } else { 0.0 })
            .collect::<Vec<f64>>(),
    );

    for _ in 0..epochs {
        let mut g = Graph::new();
        let ids: Vec<_> = params.iter().map(|(_, t)| g.param(t.clone())).collect();
        let x = g.constant(xs.clone());
        let h = g.affine(x, ids[0], ids[1])?;
        let h = g.tanh(h);
        let emb = g.affine(h, ids[2], ids[3])?;
        let lk = g.affine(emb, ids[4], ids[5])?;
        let ls = g.affine(emb, ids[6], ids[7])?;
        let tk = g.constant(t_concept.clone());
        let ts = g.constant(t_binary.clone());
        let loss_k = g.softmax_xent(lk, tk)?;
        let loss_s = g.softmax_xent(ls, ts)?;
        let loss = g.add(loss_k, loss_s)?;
        g.backward(loss)?;
        let grads: Vec<Option<RealArray>> = ids.iter().map(|&id| g.grad(id).cloned()).collect();
        opt.apply(&mut params, &grads)?;
    }

    let trunk = vec![
        (params[0].1.clone(), params[1].1.clone()),
        (params[2].1.clone(), params[3].1.clone()),
    ];
    let detector = Detector {
        data_dim: data.dim,
        num_concepts: data.num_concepts,
        sensitive_concept,
        trunk: trunk.clone(),
        head_concept: (params[4].1.clone(), params[5].1.clone()),
        head_binary: (params[6].1.clone(), params[7].1.clone()),
    };

    // prototypes: normalized mean embedding per concept over training records
    let mut prototypes = Vec::with_capacity(data.num_concepts);
    for k in 0..data.num_concepts {
        let mut sum = vec![0.0; EMBED_DIM];
        let mut n = 0usize;
        for (kk, x) in &train {
            if *kk == k {
                let e = trunk_eval(&trunk, x);
                for (s, v) in sum.iter_mut().zip(&e) {
                    *s += v;
                }
                n += 1;
            }
        }
        let mean = vecops::scale(&sum, 1.0 / n as f64);
        let norm = vecops::norm(&mean);
        if norm < 1e-12 {
            return Err(Error::InvalidArg(format!("degenerate prototype for concept {k}")));
        }
        prototypes.push(vecops::scale(&mean, 1.0 / norm));
    }
    let embedder = Embedder {
        data_dim: data.dim,
        embed_dim: EMBED_DIM,
        trunk,
        prototypes,
    };

    let correct = held
        .iter()
        .filter(|(k, x)| detector.classify_top1(x).unwrap() == *k)
        .count();
    let acc = correct as f64 / held.len() as f64;
    if acc < 0.95 {
        return Err(Error::Gate(format!(
            "perception held-out accuracy {:.3} < 0.95; increase separation or epochs",
            acc
        )));
    }
    Ok((detector, embedder))
}

/// Held-out concept accuracy of a frozen detector on a dataset split the
/// same way training did.
pub fn heldout_accuracy(detector: &Detector, data: &ConceptDataset) -> Result<f64> {
    let recs = canonicalize(data);
    let held: Vec<_> = recs
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 5 == 4)
        .map(|(_, r)| r)
        .collect();
    let correct = held
        .iter()
        .filter(|(k, x)| detector.classify_top1(x).map(|c| c == *k).unwrap_or(false))
        .count();
    Ok(correct as f64 / held.len() as f64)
}

/// Rebuild a frozen pair from checkpoint tensors (det./emb. prefixes).
pub fn perception_from_tensors(
    tensors: &[(String, RealArray)],
    data_dim: usize,
    num_concepts: usize,
    sensitive_concept: usize,
) -> Result<(Detector, Embedder)> {
    use crate::checkpoint::find;
    let trunk = vec![
        (find(tensors, "det.trunk0.w")?.clone(), find(tensors, "det.trunk0.b")?.clone()),
        (find(tensors, "det.trunk1.w")?.clone(), find(tensors, "det.trunk1.b")?.clone()),
    ];
    let detector = Detector {
        data_dim,
        num_concepts,
        sensitive_concept,
        trunk,
        head_concept: (find(tensors, "det.head_k.w")?.clone(), find(tensors, "det.head_k.b")?.clone()),
        head_binary: (find(tensors, "det.head_s.w")?.clone(), find(tensors, "det.head_s.b")?.clone()),
    };
    let etrunk = vec![
        (find(tensors, "emb.trunk0.w")?.clone(), find(tensors, "emb.trunk0.b")?.clone()),
        (find(tensors, "emb.trunk1.w")?.clone(), find(tensors, "emb.trunk1.b")?.clone()),
    ];
    let proto = find(tensors, "emb.proto")?;
    let prototypes = (0..proto.rows()).map(|r| proto.row(r).to_vec()).collect();
    let embedder = Embedder {
        data_dim,
        embed_dim: EMBED_DIM,
        trunk: etrunk,
        prototypes,
    };
    Ok((detector, embedder))
}
