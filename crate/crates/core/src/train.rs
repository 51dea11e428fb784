//! Symmetric contrastive training: InfoNCE over the in-batch similarity
//! matrix with an optional replay stream, exact analytic gradients through
//! every normalization, Adam with warmup and decoupled weight decay, and
//! the epoch loop that emits per-epoch instrument rows.

use serde::{Deserialize, Serialize};

use crate::eval::zero_shot_ncc;
use crate::geometry::{axis_instruments, default_analysis_species, textual_prototypes};
use crate::model::{
    caption_id, EmbeddingBatch, Layout, ModelState, OptimizerState, ReplayInclusion,
};
use crate::numeric::{dot, norm, ordered_mean, Matrix, Rng};
use crate::synth::{Dataset, Sample, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    None,
    SharedProj,
    SeparateProj,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau: f64,
    pub lr_max: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// 0 disables the replay stream regardless of mode.
    pub replay_batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub replay_mode: ReplayMode,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.05,
            lr_max: 0.01,
            warmup_steps: 20,
            weight_decay: 0.0,
            batch_size: 32,
            replay_batch_size: 0,
            epochs: 5,
            seed: 0,
            replay_mode: ReplayMode::None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::ConfigInvalid { reason: reason.to_string() });
        if !(self.lr_max > 0.0) {
            return bad("lr_max must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be nonnegative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        Ok(())
    }

    pub fn replay_enabled(&self) -> bool {
        self.replay_mode != ReplayMode::None && self.replay_batch_size > 0
    }
}

/// Which replay parameters the flat vector should carry for this config.
pub fn replay_inclusion(cfg: &TrainConfig) -> ReplayInclusion {
    if !cfg.replay_enabled() {
        ReplayInclusion::Off
    } else if cfg.replay_mode == ReplayMode::SharedProj {
        ReplayInclusion::CaptionsOnly
    } else {
        ReplayInclusion::HeadAndCaptions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub main: f64,
    pub replay: f64,
    /// Main-batch cross-entropies: (image to text, text to image).
    pub per_direction: (f64, f64),
}

/// Paired replay draw: the i-th image is the positive of the i-th caption.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBatch {
    pub image_idx: Vec<usize>,
    pub caption_ids: Vec<String>,
}

// ── symmetric InfoNCE core ───────────────────────────────────────────────

struct BlockOut {
    /// Logits z_i . c_j / tau.
    logits: Matrix,
    /// dLoss/dlogits.
    grad: Matrix,
    i2t: f64,
    t2i: f64,
    loss: f64,
}

/// Shared core for the n x n symmetric cross-entropy. Rows are raw f64
/// slices; no unit check so that non-finite states propagate to the report
/// instead of erroring out mid-step.
fn symmetric_block(z: &[Vec<f64>], c: &[Vec<f64>], tau: f64) -> BlockOut {
    let n = z.len();
    let mut logits = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            logits[(i, j)] = dot(&z[i], &c[j]) / tau;
        }
    }

    let row_ce = |fetch: &dyn Fn(usize, usize) -> f64, i: usize| -> f64 {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            max = max.max(fetch(i, j));
        }
        let mut sum = 0.0;
        for j in 0..n {
            sum += (fetch(i, j) - max).exp();
        }
        max + sum.ln() - fetch(i, i)
    };
    let by_row = |i: usize, j: usize| logits[(i, j)];
    let by_col = |j: usize, i: usize| logits[(i, j)];
    let i2t_terms: Vec<f64> = (0..n).map(|i| row_ce(&by_row, i)).collect();
    let t2i_terms: Vec<f64> = (0..n).map(|j| row_ce(&by_col, j)).collect();
    let i2t = ordered_mean(&i2t_terms);
    let t2i = ordered_mean(&t2i_terms);
    let loss = 0.5 * (i2t + t2i);

    // dL/dlogits = (softmax_rows + softmax_cols - 2I) / (2n)
    let mut grad = Matrix::zeros(n, n);
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            max = max.max(logits[(i, j)]);
        }
        let mut z_sum = 0.0;
        for j in 0..n {
            z_sum += (logits[(i, j)] - max).exp();
        }
        for j in 0..n {
            grad[(i, j)] += scale * (logits[(i, j)] - max).exp() / z_sum;
        }
    }
    for j in 0..n {
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            max = max.max(logits[(i, j)]);
        }
        let mut z_sum = 0.0;
        for i in 0..n {
            z_sum += (logits[(i, j)] - max).exp();
        }
        for i in 0..n {
            grad[(i, j)] += scale * (logits[(i, j)] - max).exp() / z_sum;
        }
    }
    for i in 0..n {
        grad[(i, i)] -= 2.0 * scale;
    }
    BlockOut { logits, grad, i2t, t2i, loss }
}

/// Symmetric InfoNCE over paired unit embeddings. A single pair is legal
/// for analysis use and scores zero; an empty batch is an error.
pub fn contrastive_loss(z: &EmbeddingBatch, c: &EmbeddingBatch, tau: f64) -> Result<LossReport> {
    if z.len() != c.len() {
        return Err(Error::DimensionMismatch {
            context: format!("{} image rows vs {} text rows", z.len(), c.len()),
        });
    }
    if z.is_empty() {
        return Err(Error::BatchTooSmall { got: 0 });
    }
    if !(tau > 0.0) {
        return Err(Error::ConfigInvalid { reason: "tau must be positive".into() });
    }
    let zr: Vec<Vec<f64>> = (0..z.len()).map(|i| z.row(i).to_vec()).collect();
    let cr: Vec<Vec<f64>> = (0..c.len()).map(|i| c.row(i).to_vec()).collect();
    let block = symmetric_block(&zr, &cr, tau);
    Ok(LossReport {
        total: block.loss,
        main: block.loss,
        replay: 0.0,
        per_direction: (block.i2t, block.t2i),
    })
}

// ── gradient assembly ────────────────────────────────────────────────────

/// Forward intermediates for one image through the trunk (and optionally
/// the replay head).
struct ImageTrace {
    x: Vec<f64>,
    h: Option<Vec<f64>>,
    u: Vec<f64>,
    u_norm: f64,
    z: Vec<f64>,
    head: Option<(Vec<f64>, f64)>,
}

fn trace_image(m: &ModelState, x: &[f64], through_replay_head: bool) -> Result<ImageTrace> {
    let h = match &m.hidden {
        None => None,
        Some((w_h, b_h)) => {
            let mut a = w_h.matvec(x)?;
            for (v, b) in a.iter_mut().zip(b_h) {
                *v = (*v + b).tanh();
            }
            Some(a)
        }
    };
    let input: &[f64] = h.as_deref().unwrap_or(x);
    let mut u = m.w_enc.matvec(input)?;
    for (v, b) in u.iter_mut().zip(&m.b_enc) {
        *v += b;
    }
    if through_replay_head {
        let mut v = m.replay_head.0.matvec(&u)?;
        for (e, b) in v.iter_mut().zip(&m.replay_head.1) {
            *e += b;
        }
        let v_norm = norm(&v);
        let z = v.iter().map(|e| e / v_norm).collect();
        Ok(ImageTrace { x: x.to_vec(), h, u_norm: norm(&u), head: Some((v, v_norm)), u, z })
    } else {
        let u_norm = norm(&u);
        let z = u.iter().map(|e| e / u_norm).collect();
        Ok(ImageTrace { x: x.to_vec(), h, u, u_norm, z, head: None })
    }
}

struct LabelTrace {
    s_norm: f64,
    c: Vec<f64>,
    /// Rank-table segment names contributing to the sum.
    segments: Vec<String>,
}

fn trace_label(m: &ModelState, ds: &Dataset, sid: usize) -> Result<LabelTrace> {
    let taxon = ds
        .taxa
        .get(sid)
        .ok_or(Error::IndexOutOfRange { index: sid, len: ds.taxa.len() })?;
    let mut acc = vec![0.0; m.config.d_emb];
    let mut segments = Vec::new();
    for (rank, name) in taxon.present() {
        if m.config.label_mode == crate::model::LabelMode::ScientificName
            && rank != crate::taxa::RankLevel::GENUS
            && rank != crate::taxa::RankLevel::SPECIES
        {
            continue;
        }
        let entry = m.rank_tables[rank.index()].get(name).ok_or_else(|| {
            Error::UnknownTaxonNode { rank: rank.name().to_string(), name: name.to_string() }
        })?;
        for (a, b) in acc.iter_mut().zip(entry) {
            *a += b;
        }
        segments.push(format!("t{}:{}", rank.index(), name));
    }
    if segments.is_empty() {
        return Err(Error::EmptyLabelEncoding);
    }
    let s_norm = norm(&acc);
    let c = acc.iter().map(|e| e / s_norm).collect();
    Ok(LabelTrace { s_norm, c, segments })
}

/// Backprop through z = u / |u|: du = (g - (g.z) z) / |u|.
fn through_unit(g: &[f64], z: &[f64], u_norm: f64) -> Vec<f64> {
    let gz = dot(g, z);
    g.iter().zip(z).map(|(gi, zi)| (gi - gz * zi) / u_norm).collect()
}

struct GradSink<'a> {
    layout: &'a Layout,
    flat: Vec<f64>,
}

impl<'a> GradSink<'a> {
    fn new(layout: &'a Layout) -> GradSink<'a> {
        GradSink { layout, flat: vec![0.0; layout.len()] }
    }

    fn add(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let (at, len) = self
            .layout
            .span(name)
            .ok_or_else(|| Error::DimensionMismatch { context: format!("no segment {name}") })?;
        if len != values.len() {
            return Err(Error::DimensionMismatch { context: format!("segment {name} width") });
        }
        for (slot, v) in self.flat[at..at + len].iter_mut().zip(values) {
            *slot += v;
        }
        Ok(())
    }

    fn add_scalar(&mut self, name: &str, v: f64) -> Result<()> {
        self.add(name, &[v])
    }
}

/// Accumulate encoder gradients for one image given dLoss/du (gradient at
/// the pre-normalization trunk output).
fn backprop_trunk(m: &ModelState, tr: &ImageTrace, du: &[f64], sink: &mut GradSink) -> Result<()> {
    let d_emb = m.config.d_emb;
    let input: &[f64] = tr.h.as_deref().unwrap_or(&tr.x);
    let mut gw = vec![0.0; d_emb * input.len()];
    for o in 0..d_emb {
        for (k, v) in input.iter().enumerate() {
            gw[o * input.len() + k] = du[o] * v;
        }
    }
    sink.add("w_enc", &gw)?;
    sink.add("b_enc", du)?;
    if let (Some(h), Some((w_h, _))) = (&tr.h, &m.hidden) {
        let mut dpre = vec![0.0; h.len()];
        for (hh, dp) in (0..h.len()).zip(dpre.iter_mut()) {
            let mut da = 0.0;
            for o in 0..d_emb {
                da += m.w_enc[(o, hh)] * du[o];
            }
            *dp = da * (1.0 - h[hh] * h[hh]);
        }
        let mut gwh = vec![0.0; w_h.rows() * w_h.cols()];
        for o in 0..w_h.rows() {
            for (k, v) in tr.x.iter().enumerate() {
                gwh[o * w_h.cols() + k] = dpre[o] * v;
            }
        }
        sink.add("w_h", &gwh)?;
        sink.add("b_h", &dpre)?;
    }
    Ok(())
}

/// Loss and exact analytic gradients for one step, flattened per `layout`.
pub fn loss_and_grads(
    m: &ModelState,
    ds: &Dataset,
    batch: &[usize],
    replay: Option<&ReplayBatch>,
    layout: &Layout,
    cfg: &TrainConfig,
) -> Result<(LossReport, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::BatchTooSmall { got: 0 });
    }
    let tau = m.tau;
    let mut sink = GradSink::new(layout);

    // main block
    let mut images = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for &idx in batch {
        let sample = ds
            .samples
            .get(idx)
            .ok_or(Error::IndexOutOfRange { index: idx, len: ds.samples.len() })?;
        images.push(trace_image(m, &sample.x, false)?);
        labels.push(trace_label(m, ds, sample.sid)?);
    }
    let z_rows: Vec<Vec<f64>> = images.iter().map(|t| t.z.clone()).collect();
    let c_rows: Vec<Vec<f64>> = labels.iter().map(|t| t.c.clone()).collect();
    let main = symmetric_block(&z_rows, &c_rows, tau);

    let n = batch.len();
    let d_emb = m.config.d_emb;
    let mut dlog_tau = 0.0;
    for i in 0..n {
        let mut gz = vec![0.0; d_emb];
        for j in 0..n {
            let w = main.grad[(i, j)] / tau;
            for (g, cv) in gz.iter_mut().zip(&c_rows[j]) {
                *g += w * cv;
            }
        }
        let du = through_unit(&gz, &images[i].z, images[i].u_norm);
        backprop_trunk(m, &images[i], &du, &mut sink)?;
    }
    for j in 0..n {
        let mut gc = vec![0.0; d_emb];
        for i in 0..n {
            let w = main.grad[(i, j)] / tau;
            for (g, zv) in gc.iter_mut().zip(&z_rows[i]) {
                *g += w * zv;
            }
        }
        let ds_vec = through_unit(&gc, &labels[j].c, labels[j].s_norm);
        for seg in &labels[j].segments {
            sink.add(seg, &ds_vec)?;
        }
    }
    for i in 0..n {
        for j in 0..n {
            dlog_tau -= main.grad[(i, j)] * main.logits[(i, j)];
        }
    }

    // replay block
    let mut replay_loss = 0.0;
    if cfg.replay_enabled() {
        if let Some(rb) = replay {
            if rb.image_idx.len() != rb.caption_ids.len() {
                return Err(Error::DimensionMismatch {
                    context: "replay images and captions must pair up".into(),
                });
            }
            if !rb.image_idx.is_empty() {
                let separate = cfg.replay_mode == ReplayMode::SeparateProj;
                let mut r_images = Vec::with_capacity(rb.image_idx.len());
                for &idx in &rb.image_idx {
                    let sample = ds
                        .samples
                        .get(idx)
                        .ok_or(Error::IndexOutOfRange { index: idx, len: ds.samples.len() })?;
                    r_images.push(trace_image(m, &sample.x, separate)?);
                }
                let mut caps = Vec::with_capacity(rb.caption_ids.len());
                for id in &rb.caption_ids {
                    let raw = m.replay_text_table.get(id).ok_or_else(|| {
                        Error::UnknownTaxonNode { rank: "caption".into(), name: id.clone() }
                    })?;
                    let w_norm = norm(raw);
                    let cw: Vec<f64> = raw.iter().map(|e| e / w_norm).collect();
                    caps.push((id.clone(), w_norm, cw));
                }
                let rz: Vec<Vec<f64>> = r_images.iter().map(|t| t.z.clone()).collect();
                let rc: Vec<Vec<f64>> = caps.iter().map(|(_, _, c)| c.clone()).collect();
                let rep = symmetric_block(&rz, &rc, tau);
                replay_loss = rep.loss;

                let rn = rz.len();
                for i in 0..rn {
                    let mut gz = vec![0.0; d_emb];
                    for j in 0..rn {
                        let w = rep.grad[(i, j)] / tau;
                        for (g, cv) in gz.iter_mut().zip(&rc[j]) {
                            *g += w * cv;
                        }
                    }
                    let tr = &r_images[i];
                    let du = match &tr.head {
                        Some((_, v_norm)) => {
                            // separate head: z = (W u + b) / |W u + b|
                            let dv = through_unit(&gz, &tr.z, *v_norm);
                            let mut gw = vec![0.0; d_emb * d_emb];
                            for o in 0..d_emb {
                                for (k, uv) in tr.u.iter().enumerate() {
                                    gw[o * d_emb + k] = dv[o] * uv;
                                }
                            }
                            sink.add("w_rp", &gw)?;
                            sink.add("b_rp", &dv)?;
                            let mut du = vec![0.0; d_emb];
                            for (k, slot) in du.iter_mut().enumerate() {
                                let mut acc = 0.0;
                                for o in 0..d_emb {
                                    acc += m.replay_head.0[(o, k)] * dv[o];
                                }
                                *slot = acc;
                            }
                            du
                        }
                        None => through_unit(&gz, &tr.z, tr.u_norm),
                    };
                    backprop_trunk(m, tr, &du, &mut sink)?;
                }
                for j in 0..rn {
                    let mut gc = vec![0.0; d_emb];
                    for i in 0..rn {
                        let w = rep.grad[(i, j)] / tau;
                        for (g, zv) in gc.iter_mut().zip(&rz[i]) {
                            *g += w * zv;
                        }
                    }
                    let (id, w_norm, cw) = &caps[j];
                    let dw = through_unit(&gc, cw, *w_norm);
                    sink.add(&format!("cap:{id}"), &dw)?;
                }
                for i in 0..rn {
                    for j in 0..rn {
                        dlog_tau -= rep.grad[(i, j)] * rep.logits[(i, j)];
                    }
                }
            }
        }
    }

    if layout.learn_tau {
        sink.add_scalar("log_tau", dlog_tau)?;
    }
    let report = LossReport {
        total: main.loss + replay_loss,
        main: main.loss,
        replay: replay_loss,
        per_direction: (main.i2t, main.t2i),
    };
    Ok((report, sink.flat))
}

// ── optimizer ────────────────────────────────────────────────────────────

/// Learning rate at 1-based step t: linear warmup to lr_max, then constant
/// or cosine-decayed to zero at total_steps.
pub fn lr_at(cfg: &TrainConfig, t: u64, total_steps: u64) -> f64 {
    if cfg.warmup_steps > 0 && t <= cfg.warmup_steps {
        return cfg.lr_max * t as f64 / cfg.warmup_steps as f64;
    }
    if cfg.cosine_decay && total_steps > cfg.warmup_steps {
        let progress =
            (t - cfg.warmup_steps) as f64 / (total_steps - cfg.warmup_steps) as f64;
        let progress = progress.min(1.0);
        return cfg.lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    }
    cfg.lr_max
}

/// One Adam update with bias correction. Decoupled weight decay multiplies
/// masked parameters by (1 - lr wd) before the moment update is applied.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    total_steps: u64,
    decay_mask: &[bool],
) -> Result<f64> {
    let len = params.len();
    if grads.len() != len || opt.m.len() != len || opt.v.len() != len || decay_mask.len() != len {
        return Err(Error::DimensionMismatch { context: "adam buffer sizes".into() });
    }
    opt.t += 1;
    let t = opt.t;
    let lr = lr_at(cfg, t, total_steps);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for k in 0..len {
        if decay_mask[k] {
            params[k] *= 1.0 - lr * cfg.weight_decay;
        }
        opt.m[k] = b1 * opt.m[k] + (1.0 - b1) * grads[k];
        opt.v[k] = b2 * opt.v[k] + (1.0 - b2) * grads[k] * grads[k];
        let m_hat = opt.m[k] / bc1;
        let v_hat = opt.v[k] / bc2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(lr)
}

// ── training loop ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub main_loss: f64,
    pub replay_loss: f64,
    pub zeroshot_acc: f64,
    /// Per variant axis: (explained-variance ratio, mean per-species FDR),
    /// measured on the test split of the analysis species.
    pub axes: Vec<(Option<f64>, Option<f64>)>,
}

pub const METRICS_HEADER: &str =
    "step,epoch,loss,main_loss,replay_loss,zeroshot_acc,rho_axis0,fdr_axis0,rho_axis1,fdr_axis1";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let mut fields = vec![
            r.step.to_string(),
            r.epoch.to_string(),
            r.loss.to_string(),
            r.main_loss.to_string(),
            r.replay_loss.to_string(),
            r.zeroshot_acc.to_string(),
        ];
        for a in 0..2 {
            match r.axes.get(a) {
                Some(&(rho, fdr)) => {
                    fields.push(cell(rho));
                    fields.push(cell(fdr));
                }
                None => {
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub optimizer: OptimizerState,
    pub metrics: Vec<MetricsRow>,
}

/// Full training loop: seeded per-epoch shuffles, fixed-size batches with
/// the trailing remainder dropped, optional per-step replay draws, Adam
/// updates, and one metrics row per epoch.
pub fn train_run<F: FnMut(&MetricsRow)>(
    model: ModelState,
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut m = model;
    m.tau = cfg.tau;
    let inclusion = replay_inclusion(cfg);
    let layout = Layout::new(&m, inclusion, m.config.learn_tau);
    let mask = layout.decay_mask();
    let mut params = layout.flatten(&m);
    let mut opt = OptimizerState {
        t: 0,
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        replay: inclusion,
        learn_tau: m.config.learn_tau,
    };

    let train_idx: Vec<usize> = (0..ds.samples.len())
        .filter(|&i| ds.samples[i].split == Split::Train)
        .collect();
    let test_idx: Vec<usize> = (0..ds.samples.len())
        .filter(|&i| ds.samples[i].split == Split::Test)
        .collect();
    if test_idx.is_empty() {
        return Err(Error::ConfigInvalid { reason: "dataset has no test split".into() });
    }
    let steps_per_epoch = train_idx.len() / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::ConfigInvalid {
            reason: format!(
                "batch size {} exceeds the {}-sample train split",
                cfg.batch_size,
                train_idx.len()
            ),
        });
    }
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;
    let pool = m.config.replay_captions;
    let all_species: Vec<usize> = (0..ds.species_count()).collect();
    let analysis = default_analysis_species(ds.species_count(), 6);

    let test_samples: Vec<Sample> = test_idx.iter().map(|&i| ds.samples[i].clone()).collect();
    let test_xs = Matrix::from_rows(&test_samples.iter().map(|s| s.x.clone()).collect::<Vec<_>>())?;
    let test_sids: Vec<usize> = test_samples.iter().map(|s| s.sid).collect();
    // analysis species that actually hold test samples; long tails can
    // leave a species with none
    let covered: Vec<usize> = analysis
        .iter()
        .copied()
        .filter(|s| test_sids.contains(s))
        .collect();
    let subset_pos: Vec<usize> =
        (0..test_samples.len()).filter(|&i| covered.contains(&test_sids[i])).collect();
    let subset_samples: Vec<Sample> =
        subset_pos.iter().map(|&i| test_samples[i].clone()).collect();

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = Rng::new(cfg.seed.wrapping_add(epoch as u64));
        let mut order = train_idx.clone();
        rng.shuffle(&mut order);
        let mut step_reports = Vec::with_capacity(steps_per_epoch);
        for b in 0..steps_per_epoch {
            let chunk = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let replay = if cfg.replay_enabled() {
                let mut image_idx = Vec::with_capacity(cfg.replay_batch_size);
                let mut caption_ids = Vec::with_capacity(cfg.replay_batch_size);
                for _ in 0..cfg.replay_batch_size {
                    image_idx.push(train_idx[rng.next_below(train_idx.len())]);
                    caption_ids.push(caption_id(rng.next_below(pool)));
                }
                Some(ReplayBatch { image_idx, caption_ids })
            } else {
                None
            };
            let (report, grads) = loss_and_grads(&m, ds, chunk, replay.as_ref(), &layout, cfg)?;
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss { step: step + 1 });
            }
            adam_step(&mut params, &grads, &mut opt, cfg, total_steps, &mask)?;
            layout.apply(&mut m, &params)?;
            step_reports.push(report);
            step += 1;
        }

        let mean_of = |pick: &dyn Fn(&LossReport) -> f64| -> f64 {
            let vals: Vec<f64> = step_reports.iter().map(|r| pick(r)).collect();
            ordered_mean(&vals)
        };
        let test_embs = crate::model::encode_images(&m, &test_xs, crate::model::ImageHead::Main)?;
        let protos = textual_prototypes(&m, ds, &all_species)?;
        let zs = zero_shot_ncc(&test_embs, &test_sids, &protos)?.accuracy;
        let axes = if subset_pos.is_empty() || ds.config.variant_axes.is_empty() {
            ds.config.variant_axes.iter().map(|_| (None, None)).collect()
        } else {
            let rows: Vec<Vec<f64>> =
                subset_pos.iter().map(|&i| test_embs.row(i).to_vec()).collect();
            let subset_embs = EmbeddingBatch::new(Matrix::from_rows(&rows)?)?;
            axis_instruments(&subset_embs, &subset_samples, &ds.config.variant_axes, &covered)?
        };
        let row = MetricsRow {
            step,
            epoch: epoch + 1,
            loss: mean_of(&|r| r.total),
            main_loss: mean_of(&|r| r.main),
            replay_loss: mean_of(&|r| r.replay),
            zeroshot_acc: zs,
            axes,
        };
        on_epoch(&row);
        metrics.push(row);
    }
    Ok(TrainOutcome { model: m, optimizer: opt, metrics })
}
