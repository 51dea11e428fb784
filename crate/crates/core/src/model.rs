//! Two-tower model. The image tower is a linear (or one-hidden-layer) map
//! into a unit sphere; the label tower sums one learned vector per taxon
//! rank and normalizes, so labels sharing a prefix share prototype mass.
//! A separate replay projector reuses the image trunk with its own head.
//!
//! Parameters flatten into one canonical vector (see [`Layout`]) so the
//! optimizer, checkpoints, and finite-difference checks all agree on
//! ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::{normalize, Matrix, Rng};
use crate::synth::Dataset;
use crate::taxa::{RankLevel, Taxon, RANK_COUNT};
use crate::{Error, Result};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    Linear,
    Mlp,
}

/// How the label tower reads a taxon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Sum entries for every rank present in the taxon.
    Taxonomic,
    /// Genus and species entries only.
    ScientificName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub mode: EncoderMode,
    pub d_hidden: usize,
    pub tau: f64,
    /// Treat ln(tau) as a trainable parameter.
    pub learn_tau: bool,
    pub label_mode: LabelMode,
    /// Number of synthetic generic captions in the replay table.
    pub replay_captions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_emb: 16,
            mode: EncoderMode::Linear,
            d_hidden: 32,
            tau: 0.05,
            learn_tau: false,
            label_mode: LabelMode::Taxonomic,
            replay_captions: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::ConfigInvalid { reason });
        if self.d_emb < 3 {
            return fail("d_emb must be at least 3 (species-plane projection needs it)".into());
        }
        if !(self.tau > 0.0) {
            return fail("tau must be > 0".into());
        }
        if self.mode == EncoderMode::Mlp && self.d_hidden == 0 {
            return fail("mlp mode needs d_hidden >= 1".into());
        }
        if self.replay_captions == 0 {
            return fail("replay_captions must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    /// d_emb x d_in in linear mode, d_emb x d_hidden in mlp mode.
    pub w_enc: Matrix,
    pub b_enc: Vec<f64>,
    /// First layer (d_hidden x d_in) and its bias, mlp mode only.
    pub hidden: Option<(Matrix, Vec<f64>)>,
    /// One table per rank, node name -> d_emb vector.
    pub rank_tables: Vec<BTreeMap<String, Vec<f64>>>,
    /// (w_rp: d_emb x d_emb, b_rp: d_emb).
    pub replay_head: (Matrix, Vec<f64>),
    /// Caption id -> d_emb vector, normalized at encode time.
    pub replay_text_table: BTreeMap<String, Vec<f64>>,
    pub tau: f64,
}

/// Batch of unit-norm embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    vectors: Matrix,
}

impl EmbeddingBatch {
    pub fn new(vectors: Matrix) -> Result<Self> {
        for i in 0..vectors.rows() {
            let n = crate::numeric::norm(vectors.row(i));
            if (n - 1.0).abs() > 1e-10 {
                return Err(Error::Other(format!("embedding row {i} has norm {n}")));
            }
        }
        Ok(EmbeddingBatch { vectors })
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }
}

pub fn caption_id(i: usize) -> String {
    format!("cap{i:03}")
}

pub fn init_model(cfg: &ModelConfig, seed: u64, dataset: &Dataset) -> Result<ModelState> {
    cfg.validate()?;
    let d_in = dataset.config.d_in;
    let mut rng = Rng::new(seed);

    let scaled = |rng: &mut Rng, n: usize, fan_in: usize| -> Vec<f64> {
        let s = 1.0 / (fan_in as f64).sqrt();
        rng.fill_gaussian(n).into_iter().map(|v| v * s).collect()
    };

    let (hidden, trunk_in) = match cfg.mode {
        EncoderMode::Linear => (None, d_in),
        EncoderMode::Mlp => {
            let w_h = Matrix::from_vec(cfg.d_hidden, d_in, scaled(&mut rng, cfg.d_hidden * d_in, d_in))?;
            (Some((w_h, vec![0.0; cfg.d_hidden])), cfg.d_hidden)
        }
    };
    let w_enc = Matrix::from_vec(cfg.d_emb, trunk_in, scaled(&mut rng, cfg.d_emb * trunk_in, trunk_in))?;
    let b_enc = vec![0.0; cfg.d_emb];

    // vocabulary closure: exactly the node names appearing in the dataset
    let mut vocab: Vec<BTreeSet<String>> = vec![BTreeSet::new(); RANK_COUNT];
    for t in &dataset.taxa {
        for (rank, name) in t.present() {
            vocab[rank.index()].insert(name.to_string());
        }
    }
    let mut rank_tables = Vec::with_capacity(RANK_COUNT);
    for names in &vocab {
        let mut table = BTreeMap::new();
        for name in names {
            table.insert(name.clone(), scaled(&mut rng, cfg.d_emb, cfg.d_emb));
        }
        rank_tables.push(table);
    }

    let w_rp = Matrix::from_vec(cfg.d_emb, cfg.d_emb, scaled(&mut rng, cfg.d_emb * cfg.d_emb, cfg.d_emb))?;
    let b_rp = vec![0.0; cfg.d_emb];
    let mut replay_text_table = BTreeMap::new();
    for i in 0..cfg.replay_captions {
        replay_text_table.insert(caption_id(i), scaled(&mut rng, cfg.d_emb, cfg.d_emb));
    }

    Ok(ModelState {
        config: cfg.clone(),
        w_enc,
        b_enc,
        hidden,
        rank_tables,
        replay_head: (w_rp, b_rp),
        replay_text_table,
        tau: cfg.tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageHead {
    Main,
    Replay,
}

impl ModelState {
    /// Pre-normalization trunk output W*x + b (after tanh hidden layer in
    /// mlp mode).
    pub fn trunk(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h;
        let input: &[f64] = match &self.hidden {
            None => x,
            Some((w_h, b_h)) => {
                let mut a = w_h.matvec(x)?;
                for (v, b) in a.iter_mut().zip(b_h) {
                    *v = (*v + b).tanh();
                }
                h = a;
                &h
            }
        };
        let mut u = self.w_enc.matvec(input)?;
        for (v, b) in u.iter_mut().zip(&self.b_enc) {
            *v += b;
        }
        Ok(u)
    }

    pub fn encode_image(&self, x: &[f64], head: ImageHead) -> Result<Vec<f64>> {
        let u = self.trunk(x)?;
        let u = match head {
            ImageHead::Main => u,
            ImageHead::Replay => {
                let mut v = self.replay_head.0.matvec(&u)?;
                for (e, b) in v.iter_mut().zip(&self.replay_head.1) {
                    *e += b;
                }
                v
            }
        };
        normalize(&u)
    }

    pub fn encode_label(&self, taxon: &Taxon) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.config.d_emb];
        let mut used = 0usize;
        for (rank, name) in taxon.present() {
            if self.config.label_mode == LabelMode::ScientificName
                && rank != RankLevel::GENUS
                && rank != RankLevel::SPECIES
            {
                continue;
            }
            let entry = self.rank_tables[rank.index()].get(name).ok_or_else(|| {
                Error::UnknownTaxonNode { rank: rank.name().to_string(), name: name.to_string() }
            })?;
            for (a, b) in acc.iter_mut().zip(entry) {
                *a += b;
            }
            used += 1;
        }
        if used == 0 {
            return Err(Error::EmptyLabelEncoding);
        }
        normalize(&acc)
    }

    pub fn encode_caption(&self, id: &str) -> Result<Vec<f64>> {
        let entry = self.replay_text_table.get(id).ok_or_else(|| Error::UnknownTaxonNode {
            rank: "caption".to_string(),
            name: id.to_string(),
        })?;
        normalize(entry)
    }
}

pub fn encode_images(m: &ModelState, xs: &Matrix, head: ImageHead) -> Result<EmbeddingBatch> {
    if !xs.all_finite() {
        return Err(Error::Other("image batch contains non-finite values".into()));
    }
    let mut out = Matrix::zeros(xs.rows(), m.config.d_emb);
    for i in 0..xs.rows() {
        let z = m.encode_image(xs.row(i), head)?;
        out.row_mut(i).copy_from_slice(&z);
    }
    EmbeddingBatch::new(out)
}

pub fn encode_labels(m: &ModelState, taxa: &[Taxon]) -> Result<EmbeddingBatch> {
    let mut out = Matrix::zeros(taxa.len(), m.config.d_emb);
    for (i, t) in taxa.iter().enumerate() {
        let c = m.encode_label(t)?;
        out.row_mut(i).copy_from_slice(&c);
    }
    EmbeddingBatch::new(out)
}

// ── canonical parameter layout ───────────────────────────────────────────

/// Named view of the flat parameter vector. Segment order is fixed:
/// hidden layer, encoder, rank tables (rank then name), replay head,
/// replay captions, optional ln(tau). Replay segments are omitted when the
/// run does not train them, so the optimizer can never touch them.
/// Which replay-side parameters join the flat vector. A shared projector
/// trains the caption table but never the dedicated replay head, so the
/// two cannot collapse into one switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayInclusion {
    Off,
    CaptionsOnly,
    HeadAndCaptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<(String, usize)>,
    offsets: BTreeMap<String, (usize, usize)>,
    pub replay: ReplayInclusion,
    pub learn_tau: bool,
}

impl Layout {
    pub fn new(m: &ModelState, replay: ReplayInclusion, learn_tau: bool) -> Layout {
        let mut segments: Vec<(String, usize)> = Vec::new();
        if let Some((w_h, b_h)) = &m.hidden {
            segments.push(("w_h".into(), w_h.data().len()));
            segments.push(("b_h".into(), b_h.len()));
        }
        segments.push(("w_enc".into(), m.w_enc.data().len()));
        segments.push(("b_enc".into(), m.b_enc.len()));
        for (rank, table) in m.rank_tables.iter().enumerate() {
            for (name, v) in table {
                segments.push((format!("t{rank}:{name}"), v.len()));
            }
        }
        if replay == ReplayInclusion::HeadAndCaptions {
            segments.push(("w_rp".into(), m.replay_head.0.data().len()));
            segments.push(("b_rp".into(), m.replay_head.1.len()));
        }
        if replay != ReplayInclusion::Off {
            for (id, v) in &m.replay_text_table {
                segments.push((format!("cap:{id}"), v.len()));
            }
        }
        if learn_tau {
            segments.push(("log_tau".into(), 1));
        }
        let mut offsets = BTreeMap::new();
        let mut at = 0usize;
        for (name, len) in &segments {
            offsets.insert(name.clone(), (at, *len));
            at += len;
        }
        Layout { segments, offsets, replay, learn_tau }
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|(_, l)| l).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn span(&self, name: &str) -> Option<(usize, usize)> {
        self.offsets.get(name).copied()
    }

    pub fn segments(&self) -> &[(String, usize)] {
        &self.segments
    }

    /// True for slots that weight decay applies to (everything but ln tau).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.len()];
        if let Some((at, len)) = self.span("log_tau") {
            for m in mask.iter_mut().skip(at).take(len) {
                *m = false;
            }
        }
        mask
    }

    pub fn flatten(&self, m: &ModelState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (name, _) in &self.segments {
            match name.as_str() {
                "w_h" => out.extend_from_slice(m.hidden.as_ref().unwrap().0.data()),
                "b_h" => out.extend_from_slice(&m.hidden.as_ref().unwrap().1),
                "w_enc" => out.extend_from_slice(m.w_enc.data()),
                "b_enc" => out.extend_from_slice(&m.b_enc),
                "w_rp" => out.extend_from_slice(m.replay_head.0.data()),
                "b_rp" => out.extend_from_slice(&m.replay_head.1),
                "log_tau" => out.push(m.tau.ln()),
                s => {
                    if let Some(id) = s.strip_prefix("cap:") {
                        out.extend_from_slice(&m.replay_text_table[id]);
                    } else {
                        let (rank, node) = parse_table_key(s);
                        out.extend_from_slice(&m.rank_tables[rank][node]);
                    }
                }
            }
        }
        out
    }

    pub fn apply(&self, m: &mut ModelState, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: format!("parameter vector has {} slots, layout expects {}", flat.len(), self.len()),
            });
        }
        let mut at = 0usize;
        for (name, len) in &self.segments {
            let chunk = &flat[at..at + len];
            at += len;
            match name.as_str() {
                "w_h" => m.hidden.as_mut().unwrap().0.data_mut().copy_from_slice(chunk),
                "b_h" => m.hidden.as_mut().unwrap().1.copy_from_slice(chunk),
                "w_enc" => m.w_enc.data_mut().copy_from_slice(chunk),
                "b_enc" => m.b_enc.copy_from_slice(chunk),
                "w_rp" => m.replay_head.0.data_mut().copy_from_slice(chunk),
                "b_rp" => m.replay_head.1.copy_from_slice(chunk),
                "log_tau" => m.tau = chunk[0].exp(),
                s => {
                    if let Some(id) = s.strip_prefix("cap:") {
                        m.replay_text_table.get_mut(id).unwrap().copy_from_slice(chunk);
                    } else {
                        let (rank, node) = parse_table_key(s);
                        m.rank_tables[rank].get_mut(node).unwrap().copy_from_slice(chunk);
                    }
                }
            }
        }
        Ok(())
    }
}

fn parse_table_key(s: &str) -> (usize, &str) {
    let (rank, node) = s[1..].split_once(':').expect("table segment key");
    (rank.parse().expect("rank digit"), node)
}

// ── checkpoints ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub replay: ReplayInclusion,
    pub learn_tau: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    #[serde(flatten)]
    pub state: ModelState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer_state: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(state: ModelState, optimizer_state: Option<OptimizerState>) -> Checkpoint {
        Checkpoint { version: CHECKPOINT_VERSION, state, optimizer_state }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Other(format!("unsupported checkpoint version {}", self.version)));
        }
        self.state.config.validate()?;
        if !(self.state.tau > 0.0) {
            return Err(Error::ConfigInvalid { reason: "checkpoint tau must be > 0".into() });
        }
        let finite = self.state.w_enc.all_finite()
            && self.state.b_enc.iter().all(|v| v.is_finite())
            && self.state.replay_head.0.all_finite()
            && self.state.replay_head.1.iter().all(|v| v.is_finite())
            && self.state.rank_tables.iter().flat_map(|t| t.values()).flatten().all(|v| v.is_finite())
            && self.state.replay_text_table.values().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Other("checkpoint contains non-finite parameters".into()));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, ckpt)?;
    use std::io::Write as _;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path)?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(f))?;
    ckpt.validate()?;
    Ok(ckpt)
}
