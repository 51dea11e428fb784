//! Evaluation protocols over embedded datasets: zero-shot nearest
//! prototype, SimpleShot few-shot with CL2N, logistic probes (single or
//! exact-match multi-label), semi-supervised K-means with Hungarian-matched
//! clustering accuracy, and the cross-variant alignment / variant
//! differentiation pair.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{textual_prototypes, PrototypeSet};
use crate::model::{encode_images, EmbeddingBatch, ImageHead, ModelState};
use crate::numeric::{dot, hungarian_assign, Matrix, Rng};
use crate::synth::{Dataset, Sample, Split, VariantAxis};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub accuracy: f64,
    pub correct: usize,
    pub n: usize,
    pub details: BTreeMap<String, Counts>,
}

impl EvalReport {
    fn from_outcomes(task: &str, outcomes: &[(String, bool)]) -> Result<EvalReport> {
        if outcomes.is_empty() {
            return Err(Error::Other(format!("{task}: no evaluation points")));
        }
        let mut details: BTreeMap<String, Counts> = BTreeMap::new();
        let mut correct = 0usize;
        for (class, ok) in outcomes {
            let c = details.entry(class.clone()).or_insert(Counts { correct: 0, total: 0 });
            c.total += 1;
            if *ok {
                c.correct += 1;
                correct += 1;
            }
        }
        Ok(EvalReport {
            task: task.to_string(),
            accuracy: correct as f64 / outcomes.len() as f64,
            correct,
            n: outcomes.len(),
            details,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub lr: f64,
    pub steps: usize,
    pub l2: f64,
    pub seed: u64,
    /// Width of an optional tanh hidden layer; 0 keeps the probe linear.
    pub hidden: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { lr: 0.5, steps: 300, l2: 1e-4, seed: 0, hidden: 0 }
    }
}

// ── zero-shot ────────────────────────────────────────────────────────────

/// Nearest label prototype by cosine score; ties go to the lowest species
/// index.
pub fn zero_shot_ncc(
    embs: &EmbeddingBatch,
    labels: &[usize],
    protos: &PrototypeSet,
) -> Result<EvalReport> {
    if embs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: format!("{} embeddings, {} labels", embs.len(), labels.len()),
        });
    }
    for &l in labels {
        if !protos.species_ids.contains(&l) {
            return Err(Error::MissingPrototype { species: l });
        }
    }
    // scan prototypes in ascending species order so strict improvement
    // implements the tie rule
    let mut order: Vec<usize> = (0..protos.len()).collect();
    order.sort_by_key(|&i| protos.species_ids[i]);
    let mut outcomes = Vec::with_capacity(embs.len());
    for i in 0..embs.len() {
        let mut best = f64::NEG_INFINITY;
        let mut pred = 0usize;
        for &p in &order {
            let score = dot(embs.row(i), protos.mu.row(p));
            if score > best {
                best = score;
                pred = protos.species_ids[p];
            }
        }
        outcomes.push((labels[i].to_string(), pred == labels[i]));
    }
    EvalReport::from_outcomes("zero_shot_ncc", &outcomes)
}

// ── SimpleShot ───────────────────────────────────────────────────────────

/// Few-shot nearest centroid with CL2N: pick k support shots per class
/// (seeded subsample when more are available), subtract the support grand
/// mean, renormalize, and classify queries by nearest class centroid.
pub fn simpleshot(
    support: (&Matrix, &[usize]),
    query: (&Matrix, &[usize]),
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    let (s_embs, s_labels) = support;
    let (q_embs, q_labels) = query;
    if s_embs.rows() != s_labels.len() || q_embs.rows() != q_labels.len() {
        return Err(Error::DimensionMismatch { context: "simpleshot label counts".into() });
    }
    if s_embs.cols() != q_embs.cols() {
        return Err(Error::DimensionMismatch { context: "simpleshot widths".into() });
    }
    if k == 0 {
        return Err(Error::ConfigInvalid { reason: "shot count must be >= 1".into() });
    }
    let classes: BTreeSet<usize> = s_labels.iter().copied().collect();
    for &q in q_labels {
        if !classes.contains(&q) {
            return Err(Error::InsufficientSupport { class: q });
        }
    }

    let mut rng = Rng::new(seed);
    let mut chosen: Vec<usize> = Vec::new();
    for &class in &classes {
        let mut idx: Vec<usize> =
            (0..s_labels.len()).filter(|&i| s_labels[i] == class).collect();
        if idx.len() > k {
            rng.shuffle(&mut idx);
            idx.truncate(k);
            idx.sort_unstable();
        }
        chosen.extend(idx);
    }

    let d = s_embs.cols();
    let mut grand = vec![0.0; d];
    for &i in &chosen {
        for (g, v) in grand.iter_mut().zip(s_embs.row(i)) {
            *g += v;
        }
    }
    for g in grand.iter_mut() {
        *g /= chosen.len() as f64;
    }
    let center = |v: &[f64]| -> Result<Vec<f64>> {
        let c: Vec<f64> = v.iter().zip(&grand).map(|(a, g)| a - g).collect();
        crate::numeric::normalize(&c)
    };

    let mut centroids: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &class in &classes {
        let rows: Vec<Vec<f64>> = chosen
            .iter()
            .filter(|&&i| s_labels[i] == class)
            .map(|&i| center(s_embs.row(i)))
            .collect::<Result<_>>()?;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= rows.len() as f64;
        }
        centroids.insert(class, mean);
    }

    let mut outcomes = Vec::with_capacity(q_embs.rows());
    for i in 0..q_embs.rows() {
        let q = center(q_embs.row(i))?;
        let mut best = f64::INFINITY;
        let mut pred = 0usize;
        for (&class, c) in &centroids {
            let dist: f64 = q.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best {
                best = dist;
                pred = class;
            }
        }
        outcomes.push((q_labels[i].to_string(), pred == q_labels[i]));
    }
    EvalReport::from_outcomes("simpleshot", &outcomes)
}

// ── probes ───────────────────────────────────────────────────────────────

struct Probe {
    w1: Option<Matrix>,
    b1: Option<Vec<f64>>,
    w2: Matrix,
    b2: Vec<f64>,
}

impl Probe {
    fn init(d_in: usize, d_out: usize, cfg: &ProbeConfig) -> Probe {
        let mut rng = Rng::new(cfg.seed);
        let mut scaled = |n: usize, fan_in: usize| -> Vec<f64> {
            let s = 1.0 / (fan_in as f64).sqrt();
            rng.fill_gaussian(n).into_iter().map(|v| v * s).collect()
        };
        if cfg.hidden > 0 {
            let h = cfg.hidden;
            let w1 = Matrix::from_vec(h, d_in, scaled(h * d_in, d_in)).unwrap();
            let w2 = Matrix::from_vec(d_out, h, scaled(d_out * h, h)).unwrap();
            Probe { w1: Some(w1), b1: Some(vec![0.0; h]), w2, b2: vec![0.0; d_out] }
        } else {
            let w2 = Matrix::from_vec(d_out, d_in, scaled(d_out * d_in, d_in)).unwrap();
            Probe { w1: None, b1: None, w2, b2: vec![0.0; d_out] }
        }
    }

    /// Returns (logits, hidden activations if any) for one input.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        match (&self.w1, &self.b1) {
            (Some(w1), Some(b1)) => {
                let mut a = w1.matvec(x).unwrap();
                for (v, b) in a.iter_mut().zip(b1) {
                    *v = (*v + b).tanh();
                }
                let mut logits = self.w2.matvec(&a).unwrap();
                for (l, b) in logits.iter_mut().zip(&self.b2) {
                    *l += b;
                }
                (logits, Some(a))
            }
            _ => {
                let mut logits = self.w2.matvec(x).unwrap();
                for (l, b) in logits.iter_mut().zip(&self.b2) {
                    *l += b;
                }
                (logits, None)
            }
        }
    }

    /// One full-batch step; `dlogits` maps (row, logits) -> dLoss/dlogits
    /// already divided by the batch size.
    fn step(&mut self, xs: &Matrix, cfg: &ProbeConfig, dlogits: &dyn Fn(usize, &[f64]) -> Vec<f64>) {
        let n = xs.rows();
        let d_out = self.b2.len();
        let mut gw2 = Matrix::zeros(self.w2.rows(), self.w2.cols());
        let mut gb2 = vec![0.0; d_out];
        let (mut gw1, mut gb1) = match &self.w1 {
            Some(w1) => (Some(Matrix::zeros(w1.rows(), w1.cols())), Some(vec![0.0; w1.rows()])),
            None => (None, None),
        };
        for i in 0..n {
            let x = xs.row(i);
            let (logits, act) = self.forward(x);
            let dl = dlogits(i, &logits);
            let input: &[f64] = act.as_deref().unwrap_or(x);
            for o in 0..d_out {
                gb2[o] += dl[o];
                for (j, v) in input.iter().enumerate() {
                    gw2[(o, j)] += dl[o] * v;
                }
            }
            if let (Some(gw1), Some(gb1), Some(a)) = (&mut gw1, &mut gb1, &act) {
                // back through tanh
                for h in 0..a.len() {
                    let mut da = 0.0;
                    for o in 0..d_out {
                        da += self.w2[(o, h)] * dl[o];
                    }
                    let dpre = da * (1.0 - a[h] * a[h]);
                    gb1[h] += dpre;
                    for (j, v) in x.iter().enumerate() {
                        gw1[(h, j)] += dpre * v;
                    }
                }
            }
        }
        let lr = cfg.lr;
        let l2 = cfg.l2;
        for (w, g) in self.w2.data_mut().iter_mut().zip(gw2.data()) {
            *w -= lr * (g + l2 * *w);
        }
        for (b, g) in self.b2.iter_mut().zip(&gb2) {
            *b -= lr * g;
        }
        if let (Some(w1), Some(gw1)) = (&mut self.w1, &gw1) {
            for (w, g) in w1.data_mut().iter_mut().zip(gw1.data()) {
                *w -= lr * (g + l2 * *w);
            }
        }
        if let (Some(b1), Some(gb1)) = (&mut self.b1, &gb1) {
            for (b, g) in b1.iter_mut().zip(gb1) {
                *b -= lr * g;
            }
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Softmax probe trained by deterministic full-batch gradient descent.
pub fn linear_probe(
    train: (&Matrix, &[usize]),
    test: (&Matrix, &[usize]),
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<EvalReport> {
    let (x_tr, y_tr) = train;
    let (x_te, y_te) = test;
    if x_tr.rows() != y_tr.len() || x_te.rows() != y_te.len() {
        return Err(Error::DimensionMismatch { context: "probe label counts".into() });
    }
    if cfg.steps == 0 {
        return Err(Error::ConfigInvalid { reason: "probe needs steps >= 1".into() });
    }
    let distinct: BTreeSet<usize> = y_tr.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::SingleClassTrain);
    }
    if let Some(&bad) = y_tr.iter().chain(y_te).find(|&&y| y >= n_classes) {
        return Err(Error::IndexOutOfRange { index: bad, len: n_classes });
    }

    let mut probe = Probe::init(x_tr.cols(), n_classes, cfg);
    let n = x_tr.rows() as f64;
    for _ in 0..cfg.steps {
        probe.step(x_tr, cfg, &|i, logits| {
            let mut p = softmax(logits);
            p[y_tr[i]] -= 1.0;
            p.iter_mut().for_each(|v| *v /= n);
            p
        });
    }

    let mut outcomes = Vec::with_capacity(x_te.rows());
    for i in 0..x_te.rows() {
        let (logits, _) = probe.forward(x_te.row(i));
        let mut pred = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (c, &l) in logits.iter().enumerate() {
            if l > best {
                best = l;
                pred = c;
            }
        }
        outcomes.push((y_te[i].to_string(), pred == y_te[i]));
    }
    EvalReport::from_outcomes("linear_probe", &outcomes)
}

/// Independent sigmoid outputs, one per label; a prediction counts only
/// when every label is right.
pub fn multilabel_probe(
    train: (&Matrix, &[Vec<bool>]),
    test: (&Matrix, &[Vec<bool>]),
    cfg: &ProbeConfig,
) -> Result<EvalReport> {
    let (x_tr, y_tr) = train;
    let (x_te, y_te) = test;
    if x_tr.rows() != y_tr.len() || x_te.rows() != y_te.len() {
        return Err(Error::DimensionMismatch { context: "probe label counts".into() });
    }
    let n_labels = y_tr.first().map(|v| v.len()).unwrap_or(0);
    if n_labels == 0 {
        return Err(Error::Other("multilabel probe needs at least one label".into()));
    }
    if y_tr.iter().chain(y_te).any(|v| v.len() != n_labels) {
        return Err(Error::DimensionMismatch { context: "ragged multilabel rows".into() });
    }

    let mut probe = Probe::init(x_tr.cols(), n_labels, cfg);
    let n = x_tr.rows() as f64;
    for _ in 0..cfg.steps {
        probe.step(x_tr, cfg, &|i, logits| {
            logits
                .iter()
                .enumerate()
                .map(|(l, &z)| {
                    let p = 1.0 / (1.0 + (-z).exp());
                    (p - if y_tr[i][l] { 1.0 } else { 0.0 }) / n
                })
                .collect()
        });
    }

    let mut outcomes = Vec::with_capacity(x_te.rows());
    for i in 0..x_te.rows() {
        let (logits, _) = probe.forward(x_te.row(i));
        let all_right = logits.iter().zip(&y_te[i]).all(|(&z, &want)| (z > 0.0) == want);
        let key = y_te[i].iter().map(|&b| if b { '1' } else { '0' }).collect::<String>();
        outcomes.push((key, all_right));
    }
    EvalReport::from_outcomes("multilabel_probe", &outcomes)
}

// ── semi-supervised K-means ──────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansOutcome {
    pub report: EvalReport,
    /// Cluster index per unlabeled point.
    pub clusters: Vec<usize>,
    /// Ground-truth class each cluster was matched to, if any.
    pub cluster_to_class: Vec<Option<usize>>,
}

/// Constrained K-means: labeled points stay pinned to their class cluster,
/// extra clusters start from seeded D^2 sampling over the unlabeled
/// points, and unlabeled accuracy is scored through a Hungarian match of
/// novel clusters onto novel ground-truth classes.
pub fn ssl_kmeans(
    labeled: (&Matrix, &[usize]),
    unlabeled: (&Matrix, &[usize]),
    k_total: usize,
    seed: u64,
) -> Result<KmeansOutcome> {
    let (l_embs, l_labels) = labeled;
    let (u_embs, u_truth) = unlabeled;
    if l_embs.rows() != l_labels.len() || u_embs.rows() != u_truth.len() {
        return Err(Error::DimensionMismatch { context: "kmeans label counts".into() });
    }
    if l_labels.is_empty() || u_truth.is_empty() {
        return Err(Error::Other("kmeans needs labeled and unlabeled points".into()));
    }
    if l_embs.cols() != u_embs.cols() {
        return Err(Error::DimensionMismatch { context: "kmeans widths".into() });
    }
    let known: Vec<usize> = l_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if k_total < known.len() {
        return Err(Error::KTooSmall { k: k_total, classes: known.len() });
    }
    let d = l_embs.cols();
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // init: one centroid per known class, then D^2-sampled unlabeled points
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k_total);
    for &class in &known {
        let mut mean = vec![0.0; d];
        let mut count = 0usize;
        for i in 0..l_embs.rows() {
            if l_labels[i] == class {
                for (m, v) in mean.iter_mut().zip(l_embs.row(i)) {
                    *m += v;
                }
                count += 1;
            }
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        centroids.push(mean);
    }
    let mut rng = Rng::new(seed);
    while centroids.len() < k_total {
        let d2: Vec<f64> = (0..u_embs.rows())
            .map(|i| {
                centroids
                    .iter()
                    .map(|c| dist2(u_embs.row(i), c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.next_f64() * total;
            let mut chosen = u_embs.rows() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            0
        };
        centroids.push(u_embs.row(pick).to_vec());
    }

    // pinned labeled sums per known cluster, computed once
    let mut pinned_sum = vec![vec![0.0; d]; known.len()];
    let mut pinned_count = vec![0usize; known.len()];
    for i in 0..l_embs.rows() {
        let c = known.iter().position(|&k| k == l_labels[i]).unwrap();
        for (s, v) in pinned_sum[c].iter_mut().zip(l_embs.row(i)) {
            *s += v;
        }
        pinned_count[c] += 1;
    }

    let mut assign = vec![usize::MAX; u_embs.rows()];
    for _ in 0..100 {
        let mut next = vec![0usize; u_embs.rows()];
        for i in 0..u_embs.rows() {
            let mut best = f64::INFINITY;
            let mut arg = 0usize;
            for (c, cent) in centroids.iter().enumerate() {
                let dst = dist2(u_embs.row(i), cent);
                if dst < best {
                    best = dst;
                    arg = c;
                }
            }
            next[i] = arg;
        }
        if next == assign {
            break;
        }
        assign = next;
        for (c, cent) in centroids.iter_mut().enumerate() {
            let mut sum = if c < known.len() { pinned_sum[c].clone() } else { vec![0.0; d] };
            let mut count = if c < known.len() { pinned_count[c] } else { 0 };
            for i in 0..u_embs.rows() {
                if assign[i] == c {
                    for (s, v) in sum.iter_mut().zip(u_embs.row(i)) {
                        *s += v;
                    }
                    count += 1;
                }
            }
            if count > 0 {
                for (dst, s) in cent.iter_mut().zip(&sum) {
                    *dst = s / count as f64;
                }
            }
        }
    }

    // known clusters keep their class; novel clusters get matched onto
    // novel ground-truth classes by maximum overlap
    let novel_classes: Vec<usize> = u_truth
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|c| !known.contains(c))
        .collect();
    let novel_clusters: Vec<usize> = (known.len()..k_total).collect();
    let mut cluster_to_class: Vec<Option<usize>> = (0..k_total)
        .map(|c| if c < known.len() { Some(known[c]) } else { None })
        .collect();
    if !novel_clusters.is_empty() && !novel_classes.is_empty() {
        let side = novel_clusters.len().max(novel_classes.len());
        let mut cost = Matrix::zeros(side, side);
        for (ci, &cluster) in novel_clusters.iter().enumerate() {
            for (gi, &class) in novel_classes.iter().enumerate() {
                let overlap = (0..u_embs.rows())
                    .filter(|&i| assign[i] == cluster && u_truth[i] == class)
                    .count();
                cost[(ci, gi)] = -(overlap as f64);
            }
        }
        let matched = hungarian_assign(&cost)?;
        for (ci, &cluster) in novel_clusters.iter().enumerate() {
            let gi = matched.row_to_col[ci];
            if gi < novel_classes.len() {
                cluster_to_class[cluster] = Some(novel_classes[gi]);
            }
        }
    }

    let outcomes: Vec<(String, bool)> = (0..u_embs.rows())
        .map(|i| {
            let ok = cluster_to_class[assign[i]] == Some(u_truth[i]);
            (u_truth[i].to_string(), ok)
        })
        .collect();
    let report = EvalReport::from_outcomes("ssl_kmeans", &outcomes)?;
    Ok(KmeansOutcome { report, clusters: assign, cluster_to_class })
}

// ── variant tasks ────────────────────────────────────────────────────────

/// (i) alignment: species classifier fit on the train-split value-0 means,
/// scored on test-split value-1 embeddings; (ii) differentiation: a probe
/// on the variant value itself, species pooled, train split to test split.
pub fn variant_tasks(
    embs: &EmbeddingBatch,
    samples: &[Sample],
    axis: &VariantAxis,
    probe: &ProbeConfig,
) -> Result<(EvalReport, EvalReport)> {
    if embs.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            context: format!("{} embeddings, {} samples", embs.len(), samples.len()),
        });
    }
    let value_of = |smp: &Sample| -> Option<usize> {
        smp.variants.get(&axis.name).and_then(|v| axis.values.iter().position(|x| x == v))
    };

    // alignment
    let d = embs.vectors().cols();
    let species: BTreeSet<usize> = samples.iter().map(|r| r.sid).collect();
    let mut centroids: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &s in &species {
        let mut mean = vec![0.0; d];
        let mut count = 0usize;
        for (i, smp) in samples.iter().enumerate() {
            if smp.sid == s && smp.split == Split::Train && value_of(smp) == Some(0) {
                for (m, v) in mean.iter_mut().zip(embs.row(i)) {
                    *m += v;
                }
                count += 1;
            }
        }
        if count > 0 {
            for m in mean.iter_mut() {
                *m /= count as f64;
            }
            centroids.insert(s, mean);
        }
    }
    let queries: Vec<usize> = (0..samples.len())
        .filter(|&i| {
            samples[i].split == Split::Test
                && value_of(&samples[i]) == Some(1)
                && centroids.contains_key(&samples[i].sid)
        })
        .collect();
    let qualifying: BTreeSet<usize> = queries.iter().map(|&i| samples[i].sid).collect();
    if qualifying.len() < 2 {
        return Err(Error::NoQualifyingSpecies { axis: axis.name.clone() });
    }
    let mut outcomes = Vec::with_capacity(queries.len());
    for &i in &queries {
        let mut best = f64::INFINITY;
        let mut pred = 0usize;
        for (&s, c) in &centroids {
            let dst: f64 = embs.row(i).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if dst < best {
                best = dst;
                pred = s;
            }
        }
        outcomes.push((samples[i].sid.to_string(), pred == samples[i].sid));
    }
    let mut alignment = EvalReport::from_outcomes("variant_alignment", &outcomes)?;
    alignment.task = format!("variant_alignment:{}", axis.name);

    // differentiation
    let gather = |split: Split| -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, smp) in samples.iter().enumerate() {
            if smp.split == split {
                if let Some(v) = value_of(smp) {
                    xs.push(embs.row(i).to_vec());
                    ys.push(v);
                }
            }
        }
        (xs, ys)
    };
    let (tr_x, tr_y) = gather(Split::Train);
    let (te_x, te_y) = gather(Split::Test);
    if tr_x.is_empty() || te_x.is_empty() {
        return Err(Error::NoQualifyingSpecies { axis: axis.name.clone() });
    }
    let tr = Matrix::from_rows(&tr_x)?;
    let te = Matrix::from_rows(&te_x)?;
    let mut differentiation = linear_probe((&tr, &tr_y), (&te, &te_y), 2, probe)?;
    differentiation.task = format!("variant_differentiation:{}", axis.name);
    Ok((alignment, differentiation))
}

// ── full suite ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub shots: usize,
    pub seed: u64,
    pub probe: ProbeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { shots: 5, seed: 0, probe: ProbeConfig::default() }
    }
}

/// Run every protocol on a trained model: zero-shot over all species,
/// SimpleShot, species probe, variant multilabel probe, the attribute
/// probe, discovery K-means (head half of the species labeled, tail half
/// novel), and both variant tasks per axis.
pub fn full_eval(m: &ModelState, ds: &Dataset, cfg: &EvalConfig) -> Result<Vec<EvalReport>> {
    let split_set = |split: Split| -> Result<(EmbeddingBatch, Vec<usize>, Vec<Sample>)> {
        let picked: Vec<Sample> = ds.samples.iter().filter(|r| r.split == split).cloned().collect();
        let xs = Matrix::from_rows(&picked.iter().map(|r| r.x.clone()).collect::<Vec<_>>())?;
        let embs = encode_images(m, &xs, ImageHead::Main)?;
        let sids = picked.iter().map(|r| r.sid).collect();
        Ok((embs, sids, picked))
    };
    let (tr_embs, tr_sids, tr_samples) = split_set(Split::Train)?;
    let (te_embs, te_sids, te_samples) = split_set(Split::Test)?;
    let mut reports = Vec::new();

    let all_species: Vec<usize> = (0..ds.species_count()).collect();
    let protos = textual_prototypes(m, ds, &all_species)?;
    reports.push(zero_shot_ncc(&te_embs, &te_sids, &protos)?);

    reports.push(simpleshot(
        (tr_embs.vectors(), &tr_sids),
        (te_embs.vectors(), &te_sids),
        cfg.shots,
        cfg.seed,
    )?);

    reports.push(linear_probe(
        (tr_embs.vectors(), &tr_sids),
        (te_embs.vectors(), &te_sids),
        ds.species_count(),
        &cfg.probe,
    )?);

    if !ds.config.variant_axes.is_empty() {
        let labels = |samples: &[Sample]| -> Vec<Vec<bool>> {
            samples
                .iter()
                .map(|smp| {
                    ds.config
                        .variant_axes
                        .iter()
                        .map(|ax| ds.variant_value_index(smp, ax) == Some(1))
                        .collect()
                })
                .collect()
        };
        reports.push(multilabel_probe(
            (tr_embs.vectors(), &labels(&tr_samples)),
            (te_embs.vectors(), &labels(&te_samples)),
            &cfg.probe,
        )?);
    }

    if let Some(attr) = ds.attributes.get("grp_attr") {
        let to_y = |sids: &[usize]| -> Vec<usize> {
            sids.iter().map(|&s| usize::from(attr[s])).collect()
        };
        let mut rep = linear_probe(
            (tr_embs.vectors(), &to_y(&tr_sids)),
            (te_embs.vectors(), &to_y(&te_sids)),
            2,
            &cfg.probe,
        )?;
        rep.task = "attribute_probe".into();
        reports.push(rep);
    }

    // discovery: head half of the species is labeled, the rest novel
    let known_limit = (ds.species_count() / 2).max(1);
    let keep: Vec<usize> = (0..tr_sids.len()).filter(|&i| tr_sids[i] < known_limit).collect();
    let l_rows: Vec<Vec<f64>> = keep.iter().map(|&i| tr_embs.row(i).to_vec()).collect();
    let l_labels: Vec<usize> = keep.iter().map(|&i| tr_sids[i]).collect();
    let km = ssl_kmeans(
        (&Matrix::from_rows(&l_rows)?, &l_labels),
        (te_embs.vectors(), &te_sids),
        ds.species_count(),
        cfg.seed,
    )?;
    reports.push(km.report);

    let all_samples = ds.samples.clone();
    let all_xs = Matrix::from_rows(&all_samples.iter().map(|r| r.x.clone()).collect::<Vec<_>>())?;
    let all_embs = encode_images(m, &all_xs, ImageHead::Main)?;
    for ax in &ds.config.variant_axes {
        let (alignment, differentiation) = variant_tasks(&all_embs, &all_samples, ax, &cfg.probe)?;
        reports.push(alignment);
        reports.push(differentiation);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PrototypeSource;
    use crate::numeric::normalize;

    fn unit_batch(rows: Vec<Vec<f64>>) -> EmbeddingBatch {
        EmbeddingBatch::new(unit_rows(rows)).unwrap()
    }

    fn unit_rows(rows: Vec<Vec<f64>>) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| normalize(r).unwrap()).collect::<Vec<_>>())
            .unwrap()
    }

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn proto_pair() -> PrototypeSet {
        PrototypeSet::new(
            PrototypeSource::Textual,
            Matrix::from_rows(&[basis(4, 0), basis(4, 1)]).unwrap(),
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn zero_shot_exact_prototype_and_tie_rule() {
        let p = proto_pair();
        let q = unit_batch(vec![basis(4, 1), vec![1.0, 1.0, 0.0, 0.0]]);
        let rep = zero_shot_ncc(&q, &[1, 0], &p).unwrap();
        // row 0 sits on prototype 1; row 1 ties between 0 and 1 -> species 0
        assert_eq!(rep.correct, 2);
        assert_eq!(rep.accuracy, 1.0);
        assert!(matches!(
            zero_shot_ncc(&q, &[1, 7], &p),
            Err(Error::MissingPrototype { species: 7 })
        ));
    }

    #[test]
    fn zero_shot_random_prototypes_score_chance() {
        let mut rng = Rng::new(60);
        let protos = PrototypeSet::new(
            PrototypeSource::Textual,
            Matrix::from_rows(&[
                normalize(&rng.fill_gaussian(16)).unwrap(),
                normalize(&rng.fill_gaussian(16)).unwrap(),
            ])
            .unwrap(),
            vec![0, 1],
        )
        .unwrap();
        let n = 10_000;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| rng.fill_gaussian(16)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let rep = zero_shot_ncc(&unit_batch(rows), &labels, &protos).unwrap();
        assert!((rep.accuracy - 0.5).abs() < 0.05, "accuracy {}", rep.accuracy);
    }

    #[test]
    fn simpleshot_recovers_support_point_class() {
        let support = unit_rows(vec![basis(4, 0), basis(4, 1)]);
        let rep = simpleshot((&support, &[0, 1]), (&support, &[0, 1]), 1, 0).unwrap();
        assert_eq!(rep.accuracy, 1.0);
    }

    #[test]
    fn simpleshot_separated_clusters_are_perfect() {
        let mut rng = Rng::new(61);
        let mut s_rows = Vec::new();
        let mut s_labels = Vec::new();
        let mut q_rows = Vec::new();
        let mut q_labels = Vec::new();
        for class in 0..2 {
            for _ in 0..12 {
                let mut v = basis(6, class * 3);
                for e in v.iter_mut() {
                    *e += 0.05 * rng.next_gaussian();
                }
                s_rows.push(v.clone());
                s_labels.push(class);
                let mut q = basis(6, class * 3);
                for e in q.iter_mut() {
                    *e += 0.05 * rng.next_gaussian();
                }
                q_rows.push(q);
                q_labels.push(class);
            }
        }
        for k in [1, 3, 8] {
            let rep = simpleshot(
                (&unit_rows(s_rows.clone()), &s_labels),
                (&unit_rows(q_rows.clone()), &q_labels),
                k,
                9,
            )
            .unwrap();
            assert_eq!(rep.accuracy, 1.0, "k = {k}");
        }
    }

    #[test]
    fn simpleshot_centering_cancels_constant_shift() {
        // centered(x + c) = (x + c) - (grand_mean + c) = centered(x), so
        // shifting every vector by the same offset leaves the task intact
        let mut rng = Rng::new(59);
        let s_rows: Vec<Vec<f64>> = (0..12).map(|_| rng.fill_gaussian(5)).collect();
        let s_labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let q_rows: Vec<Vec<f64>> = (0..9).map(|_| rng.fill_gaussian(5)).collect();
        let q_labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let shift = |rows: &[Vec<f64>], c: f64| -> Matrix {
            Matrix::from_rows(
                &rows
                    .iter()
                    .map(|r| r.iter().map(|v| v + c).collect::<Vec<f64>>())
                    .collect::<Vec<_>>(),
            )
            .unwrap()
        };
        let base = simpleshot(
            (&shift(&s_rows, 0.0), &s_labels),
            (&shift(&q_rows, 0.0), &q_labels),
            3,
            7,
        )
        .unwrap();
        let moved = simpleshot(
            (&shift(&s_rows, 4.25), &s_labels),
            (&shift(&q_rows, 4.25), &q_labels),
            3,
            7,
        )
        .unwrap();
        assert_eq!(base.details, moved.details);
        assert_eq!(base.accuracy, moved.accuracy);
    }

    #[test]
    fn simpleshot_requires_support_for_query_classes() {
        let support = unit_rows(vec![basis(4, 0)]);
        let query = unit_rows(vec![basis(4, 1)]);
        assert!(matches!(
            simpleshot((&support, &[0]), (&query, &[3]), 1, 0),
            Err(Error::InsufficientSupport { class: 3 })
        ));
    }

    #[test]
    fn probe_separates_two_clouds() {
        let mut rng = Rng::new(62);
        let mut cloud = |center: f64, n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let mut v = rng.fill_gaussian(8);
                    v[0] = v[0] * 0.3 + center;
                    v
                })
                .collect()
        };
        let tr: Vec<Vec<f64>> = cloud(-2.0, 30).into_iter().chain(cloud(2.0, 30)).collect();
        let y_tr: Vec<usize> = (0..60).map(|i| usize::from(i >= 30)).collect();
        let te: Vec<Vec<f64>> = cloud(-2.0, 20).into_iter().chain(cloud(2.0, 20)).collect();
        let y_te: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let rep = linear_probe(
            (&Matrix::from_rows(&tr).unwrap(), &y_tr),
            (&Matrix::from_rows(&te).unwrap(), &y_te),
            2,
            &ProbeConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.accuracy, 1.0);
    }

    #[test]
    fn probe_random_labels_score_the_prior() {
        let mut rng = Rng::new(63);
        let mut rows = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| rng.fill_gaussian(8)).collect() };
        let tr = Matrix::from_rows(&rows(200)).unwrap();
        let te = Matrix::from_rows(&rows(1000)).unwrap();
        let y_tr: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let y_te: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let rep =
            linear_probe((&tr, &y_tr), (&te, &y_te), 2, &ProbeConfig::default()).unwrap();
        assert!((rep.accuracy - 0.5).abs() < 0.1, "accuracy {}", rep.accuracy);
    }

    #[test]
    fn probe_duplicated_training_set_is_identical() {
        let mut rng = Rng::new(64);
        let tr: Vec<Vec<f64>> = (0..20).map(|_| rng.fill_gaussian(6)).collect();
        let y: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let te: Vec<Vec<f64>> = (0..30).map(|_| rng.fill_gaussian(6)).collect();
        let y_te: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let doubled: Vec<Vec<f64>> = tr.iter().chain(&tr).cloned().collect();
        let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
        let cfg = ProbeConfig { steps: 80, ..ProbeConfig::default() };
        let a = linear_probe(
            (&Matrix::from_rows(&tr).unwrap(), &y),
            (&Matrix::from_rows(&te).unwrap(), &y_te),
            3,
            &cfg,
        )
        .unwrap();
        let b = linear_probe(
            (&Matrix::from_rows(&doubled).unwrap(), &y2),
            (&Matrix::from_rows(&te).unwrap(), &y_te),
            3,
            &cfg,
        )
        .unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.details, b.details);
    }

    #[test]
    fn probe_rejects_single_class() {
        let x = Matrix::from_rows(&[basis(3, 0), basis(3, 1)]).unwrap();
        assert!(matches!(
            linear_probe((&x, &[1, 1]), (&x, &[1, 1]), 2, &ProbeConfig::default()),
            Err(Error::SingleClassTrain)
        ));
    }

    #[test]
    fn multilabel_probe_scores_exact_match() {
        let mut rng = Rng::new(65);
        // two independent separable labels on different coordinates
        let mut mk = |n: usize| -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in 0..n {
                let a = i % 2 == 0;
                let b = (i / 2) % 2 == 0;
                let mut v = rng.fill_gaussian(6);
                v[0] = v[0] * 0.2 + if a { 2.0 } else { -2.0 };
                v[1] = v[1] * 0.2 + if b { 2.0 } else { -2.0 };
                xs.push(v);
                ys.push(vec![a, b]);
            }
            (xs, ys)
        };
        let (tr_x, tr_y) = mk(40);
        let (te_x, te_y) = mk(24);
        let rep = multilabel_probe(
            (&Matrix::from_rows(&tr_x).unwrap(), &tr_y),
            (&Matrix::from_rows(&te_x).unwrap(), &te_y),
            &ProbeConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert!(rep.details.contains_key("11"));
    }

    #[test]
    fn two_layer_probe_solves_a_nonlinear_split() {
        // xor-ish labels on coordinate signs need the hidden layer
        let mut rng = Rng::new(66);
        let mut mk = |n: usize| -> (Vec<Vec<f64>>, Vec<usize>) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for _ in 0..n {
                let mut v = rng.fill_gaussian(4);
                v[0] += if v[0] >= 0.0 { 1.0 } else { -1.0 };
                v[1] += if v[1] >= 0.0 { 1.0 } else { -1.0 };
                ys.push(usize::from((v[0] >= 0.0) != (v[1] >= 0.0)));
                xs.push(v);
            }
            (xs, ys)
        };
        let (tr_x, tr_y) = mk(200);
        let (te_x, te_y) = mk(100);
        let cfg = ProbeConfig { hidden: 16, steps: 600, lr: 0.8, l2: 0.0, seed: 2 };
        let rep = linear_probe(
            (&Matrix::from_rows(&tr_x).unwrap(), &tr_y),
            (&Matrix::from_rows(&te_x).unwrap(), &te_y),
            2,
            &cfg,
        )
        .unwrap();
        assert!(rep.accuracy > 0.95, "accuracy {}", rep.accuracy);
    }

    #[test]
    fn kmeans_separated_clusters_with_exact_k() {
        let mut rng = Rng::new(67);
        let cluster = |axis: usize, n: usize, rng: &mut Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let mut v = basis(6, axis);
                    for e in v.iter_mut() {
                        *e += 0.03 * rng.next_gaussian();
                    }
                    v
                })
                .collect()
        };
        // classes 0,1 labeled; 2,3 novel
        let mut l_rows = Vec::new();
        let mut l_labels = Vec::new();
        for class in 0..2 {
            for r in cluster(class, 8, &mut rng) {
                l_rows.push(r);
                l_labels.push(class);
            }
        }
        let mut u_rows = Vec::new();
        let mut u_truth = Vec::new();
        for class in 0..4 {
            for r in cluster(class, 10, &mut rng) {
                u_rows.push(r);
                u_truth.push(class);
            }
        }
        let out = ssl_kmeans(
            (&unit_rows(l_rows), &l_labels),
            (&unit_rows(u_rows), &u_truth),
            4,
            5,
        )
        .unwrap();
        assert_eq!(out.report.accuracy, 1.0);
        assert_eq!(out.cluster_to_class[0], Some(0));
        assert_eq!(out.cluster_to_class[1], Some(1));
    }

    #[test]
    fn kmeans_equidistant_points_take_lowest_cluster() {
        let labeled = unit_rows(vec![basis(4, 0), basis(4, 1)]);
        let mid = normalize(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        let unlabeled = unit_rows(vec![mid.clone(), mid.clone(), mid]);
        let out = ssl_kmeans((&labeled, &[0, 1]), (&unlabeled, &[0, 0, 0]), 2, 0).unwrap();
        assert!(out.clusters.iter().all(|&c| c == 0), "clusters {:?}", out.clusters);
    }

    #[test]
    fn kmeans_rejects_small_k() {
        let labeled = unit_rows(vec![basis(4, 0), basis(4, 1)]);
        let unlabeled = unit_rows(vec![basis(4, 2)]);
        assert!(matches!(
            ssl_kmeans((&labeled, &[0, 1]), (&unlabeled, &[2]), 1, 0),
            Err(Error::KTooSmall { k: 1, classes: 2 })
        ));
    }

    #[test]
    fn kmeans_accuracy_matches_exhaustive_matching() {
        // final clusters in hand, the Hungarian score must equal the best
        // injective novel-cluster -> novel-class map found by brute force
        let mut rng = Rng::new(68);
        let mut l_rows = Vec::new();
        let mut l_labels = Vec::new();
        for r in 0..4 {
            let mut v = basis(5, 0);
            v[4] += 0.2 * rng.next_gaussian();
            v[0] += 0.1 * r as f64;
            l_rows.push(v);
            l_labels.push(0);
        }
        let mut u_rows = Vec::new();
        let mut u_truth = Vec::new();
        for i in 0..12 {
            let class = i % 3; // 0 known, 1..2 novel
            let mut v = basis(5, class + usize::from(class > 0));
            for e in v.iter_mut() {
                *e += 0.25 * rng.next_gaussian();
            }
            u_rows.push(v);
            u_truth.push(class);
        }
        let out = ssl_kmeans(
            (&unit_rows(l_rows), &l_labels),
            (&unit_rows(u_rows.clone()), &u_truth),
            3,
            11,
        )
        .unwrap();

        // brute force over all maps {cluster 1, cluster 2} -> {class 1, class 2}
        let novel_clusters = [1usize, 2];
        let novel_classes = [1usize, 2];
        let mut best = 0usize;
        for perm in [[0usize, 1], [1, 0]] {
            let mut correct = 0usize;
            for i in 0..u_truth.len() {
                let c = out.clusters[i];
                let mapped = if c == 0 {
                    Some(0)
                } else {
                    let pos = novel_clusters.iter().position(|&x| x == c).unwrap();
                    Some(novel_classes[perm[pos]])
                };
                if mapped == Some(u_truth[i]) {
                    correct += 1;
                }
            }
            best = best.max(correct);
        }
        assert_eq!(out.report.correct, best);
    }

    #[test]
    fn variant_tasks_on_identical_distributions() {
        let mut rng = Rng::new(69);
        let axis = VariantAxis {
            name: "stage".into(),
            values: ["juvenile".into(), "adult".into()],
            offset_scale: 0.0,
        };
        let mut rows = Vec::new();
        let mut samples = Vec::new();
        for sid in 0..3 {
            for i in 0..40 {
                let mut v = basis(6, sid * 2);
                for e in v.iter_mut() {
                    *e += 0.1 * rng.next_gaussian();
                }
                rows.push(v);
                let mut variants = BTreeMap::new();
                variants.insert(
                    "stage".to_string(),
                    axis.values[i % 2].clone(),
                );
                samples.push(Sample {
                    sid,
                    variants,
                    split: if i >= 30 { Split::Test } else { Split::Train },
                    x: vec![],
                });
            }
        }
        let embs = unit_batch(rows);
        let (alignment, differentiation) =
            variant_tasks(&embs, &samples, &axis, &ProbeConfig::default()).unwrap();
        // species stay separable across the variant split
        assert_eq!(alignment.accuracy, 1.0);
        // the variant itself is unlearnable
        assert!((differentiation.accuracy - 0.5).abs() < 0.35, "diff {}", differentiation.accuracy);
        assert!(alignment.task.ends_with("stage"));
    }

    #[test]
    fn full_eval_is_deterministic() {
        use crate::model::{init_model, ModelConfig};
        use crate::synth::{generate_dataset, SynthConfig};
        let ds = generate_dataset(&SynthConfig {
            seed: 31,
            branching: [2, 1, 1, 1, 1, 1, 2],
            d_latent: 6,
            d_in: 10,
            samples_per_species: 24,
            ..SynthConfig::default()
        })
        .unwrap();
        let m = init_model(&ModelConfig { d_emb: 8, ..ModelConfig::default() }, 4, &ds).unwrap();
        let cfg = EvalConfig { probe: ProbeConfig { steps: 40, ..ProbeConfig::default() }, ..EvalConfig::default() };
        let a = full_eval(&m, &ds, &cfg).unwrap();
        let b = full_eval(&m, &ds, &cfg).unwrap();
        assert_eq!(a, b);
        let tasks: Vec<&str> = a.iter().map(|r| r.task.as_str()).collect();
        assert!(tasks.contains(&"zero_shot_ncc"));
        assert!(tasks.contains(&"ssl_kmeans"));
        assert!(tasks.iter().any(|t| t.starts_with("variant_alignment:")));
        for r in &a {
            assert!(r.accuracy >= 0.0 && r.accuracy <= 1.0);
            assert_eq!(r.accuracy, r.correct as f64 / r.n as f64);
        }
    }
}
