//! Seeded generator of synthetic taxonomic datasets. Species prototypes are
//! sums of per-node latent vectors along the rank tree (so relatedness in
//! the tree means closeness in latent space), intra-species variation comes
//! from globally shared offset directions, and raw features are a fixed
//! linear mixing of the unit-normalized latents. One RNG stream in a fixed
//! draw order makes the whole dataset a pure function of the config.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::{normalize, Matrix, Rng};
use crate::taxa::{RankLevel, Taxon, RANK_COUNT};
use crate::{Error, Result};

const FILE_VERSION: u32 = 1;
/// One-letter rank prefixes for generated node names.
const RANK_PREFIX: [&str; RANK_COUNT] = ["k", "p", "c", "o", "f", "g", "s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantAxis {
    pub name: String,
    pub values: [String; 2],
    pub offset_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Children per node at each rank; the product is the species count.
    pub branching: [usize; RANK_COUNT],
    pub d_latent: usize,
    pub d_in: usize,
    pub samples_per_species: usize,
    /// 0 = balanced; larger values thin out high-index species.
    pub longtail_alpha: f64,
    pub noise_sigma: f64,
    pub variant_axes: Vec<VariantAxis>,
    /// Scale applied per tree depth to node vectors, in (0, 1].
    pub rank_weight_decay: f64,
    /// Rank whose ancestor-index parity defines the "grp_attr" attribute.
    pub attribute_rank: RankLevel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            branching: [2, 2, 1, 1, 2, 1, 2],
            d_latent: 8,
            d_in: 16,
            samples_per_species: 40,
            longtail_alpha: 0.0,
            noise_sigma: 0.3,
            variant_axes: vec![VariantAxis {
                name: "stage".into(),
                values: ["juvenile".into(), "adult".into()],
                offset_scale: 0.4,
            }],
            rank_weight_decay: 0.8,
            attribute_rank: RankLevel::KINGDOM,
        }
    }
}

impl SynthConfig {
    pub fn species_count(&self) -> usize {
        self.branching.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::ConfigInvalid { reason });
        if self.branching.iter().any(|&b| b == 0) {
            return fail("branching factors must be positive".into());
        }
        if self.species_count() < 2 {
            return fail("branching product (species count) must be at least 2".into());
        }
        if self.d_latent < 2 || self.d_in < 2 {
            return fail("dimensions must be at least 2".into());
        }
        if self.d_in < self.d_latent {
            return fail(format!("d_in {} must be >= d_latent {}", self.d_in, self.d_latent));
        }
        if self.samples_per_species == 0 {
            return fail("samples_per_species must be positive".into());
        }
        if !(self.longtail_alpha >= 0.0) {
            return fail("longtail_alpha must be >= 0".into());
        }
        if !(self.noise_sigma > 0.0) {
            return fail("noise_sigma must be > 0".into());
        }
        if !(self.rank_weight_decay > 0.0 && self.rank_weight_decay <= 1.0) {
            return fail("rank_weight_decay must lie in (0, 1]".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for ax in &self.variant_axes {
            if ax.name.is_empty() || ax.values[0].is_empty() || ax.values[1].is_empty() {
                return fail("variant axis and value names must be nonempty".into());
            }
            if ax.values[0] == ax.values[1] {
                return fail(format!("axis {:?} values must differ", ax.name));
            }
            if !(ax.offset_scale >= 0.0) {
                return fail(format!("axis {:?} offset_scale must be >= 0", ax.name));
            }
            if !seen.insert(ax.name.clone()) {
                return fail(format!("duplicate variant axis {:?}", ax.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Species index; the taxon lives in `Dataset::taxa`.
    pub sid: usize,
    pub variants: BTreeMap<String, String>,
    pub split: Split,
    pub x: Vec<f64>,
}

/// Generator internals kept for diagnostics; training never reads these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// S x d_latent unit rows.
    pub latent_prototypes: Matrix,
    /// Per axis: the two value offset vectors (unit direction x offset_scale).
    pub variant_offsets: Vec<[Vec<f64>; 2]>,
    /// d_in x d_latent mixing applied to every latent.
    pub mixing: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub taxa: Vec<Taxon>,
    pub attributes: BTreeMap<String, Vec<bool>>,
    pub ground_truth: GroundTruth,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn species_count(&self) -> usize {
        self.taxa.len()
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn taxon_of(&self, species: usize) -> &Taxon {
        &self.taxa[species]
    }

    /// Value index (0 or 1) of `axis` for a sample, by declared value order.
    pub fn variant_value_index(&self, sample: &Sample, axis: &VariantAxis) -> Option<usize> {
        let v = sample.variants.get(&axis.name)?;
        axis.values.iter().position(|x| x == v)
    }
}

/// Sample count floor implied by "at least 2 per variant value": smallest n
/// whose alternating variant assignment covers every value twice.
fn species_count_floor(axes: usize) -> usize {
    let mut n = 2;
    loop {
        let ok = (0..axes).all(|a| {
            let ones = (0..n).filter(|i| (i >> a) & 1 == 1).count();
            ones >= 2 && n - ones >= 2
        });
        if ok {
            return n;
        }
        n += 1;
    }
}

/// Global index of the ancestor of species `s` at `rank`, counting nodes of
/// that rank across the whole tree in generation order.
fn ancestor_index(branching: &[usize; RANK_COUNT], s: usize, rank: usize) -> usize {
    let stride: usize = branching[rank + 1..].iter().product();
    s / stride
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let s_count = cfg.species_count();
    let mut rng = Rng::new(cfg.seed);

    // (1) node vectors, rank by rank, index order within rank
    let mut node_vectors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(RANK_COUNT);
    let mut nodes_at_rank = 1usize;
    for rank in 0..RANK_COUNT {
        nodes_at_rank *= cfg.branching[rank];
        let scale = cfg.rank_weight_decay.powi(rank as i32);
        let mut level = Vec::with_capacity(nodes_at_rank);
        for _ in 0..nodes_at_rank {
            let mut v = rng.fill_gaussian(cfg.d_latent);
            for e in v.iter_mut() {
                *e *= scale;
            }
            level.push(v);
        }
        node_vectors.push(level);
    }

    let mut taxa = Vec::with_capacity(s_count);
    let mut prototypes = Matrix::zeros(s_count, cfg.d_latent);
    for s in 0..s_count {
        let mut names = Vec::with_capacity(RANK_COUNT);
        let mut acc = vec![0.0; cfg.d_latent];
        for rank in 0..RANK_COUNT {
            let idx = ancestor_index(&cfg.branching, s, rank);
            names.push(format!("{}{}", RANK_PREFIX[rank], idx));
            for (a, b) in acc.iter_mut().zip(&node_vectors[rank][idx]) {
                *a += b;
            }
        }
        let p = normalize(&acc)?;
        prototypes.row_mut(s).copy_from_slice(&p);
        taxa.push(Taxon::from_parts(names)?);
    }

    // (2) global variant offsets: declared axis order, value 0 then 1
    let mut variant_offsets: Vec<[Vec<f64>; 2]> = Vec::with_capacity(cfg.variant_axes.len());
    for ax in &cfg.variant_axes {
        let mut pair: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for v in 0..2 {
            let dir = normalize(&rng.fill_gaussian(cfg.d_latent))?;
            pair[v] = dir.into_iter().map(|e| e * ax.offset_scale).collect();
        }
        variant_offsets.push(pair);
    }

    // (4, drawn up front) mixing matrix then bias
    let mixing = Matrix::from_vec(cfg.d_in, cfg.d_latent, rng.fill_gaussian(cfg.d_in * cfg.d_latent))?;
    let bias = rng.fill_gaussian(cfg.d_in);

    // (6) long-tail counts
    let weights: Vec<f64> = (0..s_count).map(|s| ((s + 1) as f64).powf(-cfg.longtail_alpha)).collect();
    let normalizer = s_count as f64 / weights.iter().sum::<f64>();
    let floor = species_count_floor(cfg.variant_axes.len());
    let counts: Vec<usize> = weights
        .iter()
        .map(|w| ((cfg.samples_per_species as f64 * w * normalizer).round() as usize).max(floor))
        .collect();

    // (3)+(7) samples: species order, then generation order within species
    let noise_scale = cfg.noise_sigma / (cfg.d_latent as f64).sqrt();
    let mut samples = Vec::with_capacity(counts.iter().sum());
    for s in 0..s_count {
        let n = counts[s];
        let n_test = n / 4;
        for i in 0..n {
            let mut latent: Vec<f64> = prototypes.row(s).to_vec();
            let mut variants = BTreeMap::new();
            for (a, ax) in cfg.variant_axes.iter().enumerate() {
                let v = (i >> a) & 1;
                variants.insert(ax.name.clone(), ax.values[v].clone());
                for (l, o) in latent.iter_mut().zip(&variant_offsets[a][v]) {
                    *l += o;
                }
            }
            for l in latent.iter_mut() {
                *l += rng.next_gaussian() * noise_scale;
            }
            let latent = normalize(&latent)?;
            let mut x = mixing.matvec(&latent)?;
            for (e, b) in x.iter_mut().zip(&bias) {
                *e += b;
            }
            let split = if i >= n - n_test { Split::Test } else { Split::Train };
            samples.push(Sample { sid: s, variants, split, x });
        }
    }

    // (5) attribute from ancestor parity at attribute_rank
    let grp_attr: Vec<bool> = (0..s_count)
        .map(|s| ancestor_index(&cfg.branching, s, cfg.attribute_rank.index()) % 2 == 0)
        .collect();
    let mut attributes = BTreeMap::new();
    attributes.insert("grp_attr".to_string(), grp_attr);

    let ds = Dataset {
        config: cfg.clone(),
        taxa,
        attributes,
        ground_truth: GroundTruth { latent_prototypes: prototypes, variant_offsets, mixing, bias },
        samples,
    };
    validate_coverage(&ds)?;
    Ok(ds)
}

/// Every species must keep at least one train sample per variant value.
fn validate_coverage(ds: &Dataset) -> Result<()> {
    for (s, _) in ds.taxa.iter().enumerate() {
        for ax in &ds.config.variant_axes {
            for v in 0..2 {
                let hit = ds.samples.iter().any(|smp| {
                    smp.sid == s
                        && smp.split == Split::Train
                        && ds.variant_value_index(smp, ax) == Some(v)
                });
                if !hit {
                    return Err(Error::ConfigInvalid {
                        reason: format!(
                            "species {s} has no train sample with {}={}",
                            ax.name, ax.values[v]
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Stratified train-split subsample: keep one train sample per
/// (species, axis, value) first, then fill the budget from a seeded shuffle
/// of the remaining train samples. Test split is untouched. Subsamples of
/// growing budgets under the same seed are nested.
pub fn subsample_scale(ds: &Dataset, n_train: usize, seed: u64) -> Result<Dataset> {
    let train: Vec<usize> = ds.indices_of(Split::Train);
    if n_train > train.len() {
        return Err(Error::TooFewSamples { needed: n_train, budget: train.len() });
    }

    let mut kept: Vec<bool> = vec![false; ds.samples.len()];
    let mut kept_count = 0usize;
    for s in 0..ds.species_count() {
        if ds.config.variant_axes.is_empty() {
            // still guarantee one train sample per species
            if let Some(&i) = train.iter().find(|&&i| ds.samples[i].sid == s) {
                if !kept[i] {
                    kept[i] = true;
                    kept_count += 1;
                }
            }
            continue;
        }
        for ax in &ds.config.variant_axes {
            for v in 0..2 {
                let already = train.iter().any(|&i| {
                    kept[i]
                        && ds.samples[i].sid == s
                        && ds.variant_value_index(&ds.samples[i], ax) == Some(v)
                });
                if already {
                    continue;
                }
                let pick = train.iter().find(|&&i| {
                    !kept[i]
                        && ds.samples[i].sid == s
                        && ds.variant_value_index(&ds.samples[i], ax) == Some(v)
                });
                if let Some(&i) = pick {
                    kept[i] = true;
                    kept_count += 1;
                }
            }
        }
    }
    if kept_count > n_train {
        return Err(Error::TooFewSamples { needed: kept_count, budget: n_train });
    }

    let mut pool: Vec<usize> = train.iter().copied().filter(|&i| !kept[i]).collect();
    Rng::new(seed).shuffle(&mut pool);
    for &i in pool.iter().take(n_train - kept_count) {
        kept[i] = true;
    }

    let samples: Vec<Sample> = ds
        .samples
        .iter()
        .enumerate()
        .filter(|(i, smp)| smp.split == Split::Test || kept[*i])
        .map(|(_, smp)| smp.clone())
        .collect();

    Ok(Dataset {
        config: ds.config.clone(),
        taxa: ds.taxa.clone(),
        attributes: ds.attributes.clone(),
        ground_truth: ds.ground_truth.clone(),
        samples,
    })
}

// ── serialization ────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct Metadata {
    version: u32,
    config: SynthConfig,
    taxa: Vec<Taxon>,
    attributes: BTreeMap<String, Vec<bool>>,
    variant_axes: Vec<VariantAxis>,
    ground_truth: GroundTruth,
}

/// JSON-lines: metadata object first, then one line per sample.
pub fn write_jsonl<W: std::io::Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let meta = Metadata {
        version: FILE_VERSION,
        config: ds.config.clone(),
        taxa: ds.taxa.clone(),
        attributes: ds.attributes.clone(),
        variant_axes: ds.config.variant_axes.clone(),
        ground_truth: ds.ground_truth.clone(),
    };
    serde_json::to_writer(&mut w, &meta)?;
    w.write_all(b"\n")?;
    for smp in &ds.samples {
        serde_json::to_writer(&mut w, smp)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: std::io::BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Other("dataset file is empty".into()))??;
    let meta: Metadata = serde_json::from_str(&head)?;
    if meta.version != FILE_VERSION {
        return Err(Error::Other(format!("unsupported dataset version {}", meta.version)));
    }
    let mut samples = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let smp: Sample = serde_json::from_str(&line)?;
        if smp.sid >= meta.taxa.len() {
            return Err(Error::IndexOutOfRange { index: smp.sid, len: meta.taxa.len() });
        }
        if !smp.x.iter().all(|v| v.is_finite()) {
            return Err(Error::Other("sample features contain non-finite values".into()));
        }
        samples.push(smp);
    }
    meta.ground_truth.latent_prototypes.validate()?;
    meta.ground_truth.mixing.validate()?;
    Ok(Dataset {
        config: meta.config,
        taxa: meta.taxa,
        attributes: meta.attributes,
        ground_truth: meta.ground_truth,
        samples,
    })
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_jsonl(ds, BufWriter::new(f))
}

pub fn load(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    read_jsonl(BufReader::new(f))
}
