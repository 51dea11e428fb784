//! Embedding-space instruments. Everything here is a pure function of
//! embeddings and metadata: species prototypes (empirical means or label
//! tower outputs), the stacked intra-species variation matrix, the
//! explained-variance ratio of that variation inside the prototype span,
//! Fisher discriminant ratios with their numerator/denominator split, a 3D
//! projection around the prototype plane, and a Taylor expansion of the
//! contrastive loss around a prototype that separates first-order,
//! quadratic, and higher-order parts.


use serde::{Deserialize, Serialize};

use crate::model::{encode_images, encode_labels, EmbeddingBatch, ImageHead, ModelState};
use crate::numeric::{dot, householder_qr, jacobi_svd, normalize, ordered_mean, ordered_sum, Matrix};
use crate::synth::{Dataset, Sample, VariantAxis};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeSource {
    Empirical,
    Textual,
}

/// Unit-norm prototype rows, one per species in `species_ids` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub source: PrototypeSource,
    pub mu: Matrix,
    pub species_ids: Vec<usize>,
}

impl PrototypeSet {
    pub fn new(source: PrototypeSource, mu: Matrix, species_ids: Vec<usize>) -> Result<Self> {
        if mu.rows() == 0 || mu.rows() != species_ids.len() {
            return Err(Error::DimensionMismatch {
                context: format!("{} prototype rows for {} species", mu.rows(), species_ids.len()),
            });
        }
        for i in 0..mu.rows() {
            let n = crate::numeric::norm(mu.row(i));
            if (n - 1.0).abs() > 1e-10 {
                return Err(Error::Other(format!("prototype row {i} has norm {n}")));
            }
        }
        Ok(PrototypeSet { source, mu, species_ids })
    }

    pub fn len(&self) -> usize {
        self.species_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species_ids.is_empty()
    }

    pub fn row_of(&self, species: usize) -> Option<&[f64]> {
        self.species_ids.iter().position(|&s| s == species).map(|i| self.mu.row(i))
    }
}

/// Mean embedding per species, renormalized to the sphere.
pub fn empirical_prototypes(
    embs: &EmbeddingBatch,
    species_ids: &[usize],
    wanted: &[usize],
) -> Result<PrototypeSet> {
    if embs.len() != species_ids.len() {
        return Err(Error::DimensionMismatch {
            context: format!("{} embeddings, {} species ids", embs.len(), species_ids.len()),
        });
    }
    let d = embs.vectors().cols();
    let mut mu = Matrix::zeros(wanted.len(), d);
    for (w, &s) in wanted.iter().enumerate() {
        let mut acc = vec![0.0; d];
        let mut count = 0usize;
        for i in 0..embs.len() {
            if species_ids[i] == s {
                for (a, b) in acc.iter_mut().zip(embs.row(i)) {
                    *a += b;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptySpecies { species: s });
        }
        for a in acc.iter_mut() {
            *a /= count as f64;
        }
        mu.row_mut(w).copy_from_slice(&normalize(&acc)?);
    }
    PrototypeSet::new(PrototypeSource::Empirical, mu, wanted.to_vec())
}

/// Label-tower prototypes for the given species.
pub fn textual_prototypes(m: &ModelState, ds: &Dataset, wanted: &[usize]) -> Result<PrototypeSet> {
    for &s in wanted {
        if s >= ds.species_count() {
            return Err(Error::IndexOutOfRange { index: s, len: ds.species_count() });
        }
    }
    let taxa: Vec<_> = wanted.iter().map(|&s| ds.taxa[s].clone()).collect();
    let embs = encode_labels(m, &taxa)?;
    PrototypeSet::new(PrototypeSource::Textual, embs.vectors().clone(), wanted.to_vec())
}

/// Columns are per-species differences mean(value 0) - mean(value 1) on one
/// variant axis. Species missing a value are skipped and listed; columns
/// that come out exactly zero are listed too (they cannot support a ratio).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationMatrix {
    pub d: Matrix,
    pub axis: String,
    /// Species providing the columns, in column order.
    pub species: Vec<usize>,
    pub skipped: Vec<usize>,
    pub zero_columns: Vec<usize>,
}

pub fn variation_diffs(
    embs: &EmbeddingBatch,
    samples: &[Sample],
    axis: &VariantAxis,
    wanted: &[usize],
) -> Result<VariationMatrix> {
    if embs.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            context: format!("{} embeddings, {} samples", embs.len(), samples.len()),
        });
    }
    let d_emb = embs.vectors().cols();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut species = Vec::new();
    let mut skipped = Vec::new();
    let mut zero_columns = Vec::new();
    for &s in wanted {
        let mut means = [vec![0.0; d_emb], vec![0.0; d_emb]];
        let mut counts = [0usize; 2];
        for (i, smp) in samples.iter().enumerate() {
            if smp.sid != s {
                continue;
            }
            let Some(v) = smp.variants.get(&axis.name).and_then(|val| {
                axis.values.iter().position(|x| x == val)
            }) else {
                continue;
            };
            for (a, b) in means[v].iter_mut().zip(embs.row(i)) {
                *a += b;
            }
            counts[v] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 {
            skipped.push(s);
            continue;
        }
        let col: Vec<f64> = (0..d_emb)
            .map(|j| means[0][j] / counts[0] as f64 - means[1][j] / counts[1] as f64)
            .collect();
        if col.iter().all(|&v| v == 0.0) {
            zero_columns.push(s);
        }
        cols.push(col);
        species.push(s);
    }
    if species.is_empty() {
        return Err(Error::NoQualifyingSpecies { axis: axis.name.clone() });
    }
    let mut d = Matrix::zeros(d_emb, cols.len());
    for (j, col) in cols.iter().enumerate() {
        for i in 0..d_emb {
            d[(i, j)] = col[i];
        }
    }
    Ok(VariationMatrix { d, axis: axis.name.clone(), species, skipped, zero_columns })
}

/// Fraction of the variation energy lying inside the prototype span:
/// |U^T D|_F^2 / |D|_F^2, U an orthonormal basis of the prototype rows.
pub fn explained_variance_ratio(protos: &PrototypeSet, d: &VariationMatrix) -> Result<f64> {
    let den = d.d.frobenius_norm().powi(2);
    if den < 1e-30 {
        return Err(Error::ZeroVariation);
    }
    let qr = householder_qr(&protos.mu.transpose())?;
    let num = qr.q.transpose().matmul(&d.d)?.frobenius_norm().powi(2);
    Ok((num / den).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdrResult {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

/// Fisher discriminant ratio |mean_a - mean_b|^2 / (var_a + var_b), where
/// each variance is the population total variance (mean squared distance to
/// the group mean).
pub fn fdr(group_a: &Matrix, group_b: &Matrix) -> Result<FdrResult> {
    let stats = |g: &Matrix, which: &'static str| -> Result<(Vec<f64>, f64)> {
        if g.rows() == 0 {
            return Err(Error::EmptyGroup { which });
        }
        let n = g.rows() as f64;
        let mut mean = vec![0.0; g.cols()];
        for i in 0..g.rows() {
            for (m, v) in mean.iter_mut().zip(g.row(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let sq: Vec<f64> = (0..g.rows())
            .map(|i| g.row(i).iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
            .collect();
        Ok((mean, ordered_sum(&sq) / n))
    };
    let (mean_a, var_a) = stats(group_a, "a")?;
    let (mean_b, var_b) = stats(group_b, "b")?;
    if mean_a.len() != mean_b.len() {
        return Err(Error::DimensionMismatch {
            context: format!("group dims {} vs {}", mean_a.len(), mean_b.len()),
        });
    }
    let numerator: f64 = mean_a.iter().zip(&mean_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let denominator = var_a + var_b;
    if denominator < 1e-15 {
        return Err(Error::DegenerateGroups);
    }
    Ok(FdrResult { numerator, denominator, ratio: numerator / denominator })
}

/// 3D view: two in-plane axes from the top singular directions of the
/// centered species means, plus one residual axis (first principal
/// direction of the points' out-of-plane parts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneProjection {
    pub center: Vec<f64>,
    /// Rows: in-plane axis 1, in-plane axis 2, residual axis.
    pub basis: Matrix,
    /// One (px, py, pz) row per input embedding.
    pub coords: Matrix,
    /// One row per species in `species_ids` order.
    pub species_coords: Matrix,
    pub species_ids: Vec<usize>,
    /// Per axis: variation columns projected into the same 3D frame.
    pub arrows: Vec<(String, Matrix)>,
}

pub fn species_plane_projection(
    embs: &EmbeddingBatch,
    species_ids: &[usize],
    diffs: &[&VariationMatrix],
) -> Result<PlaneProjection> {
    let mut wanted: Vec<usize> = species_ids.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    if wanted.len() < 2 {
        return Err(Error::TooFewSpecies { got: wanted.len() });
    }
    let protos = empirical_prototypes(embs, species_ids, &wanted)?;
    let d = embs.vectors().cols();
    let s_count = wanted.len();

    let mut center = vec![0.0; d];
    for i in 0..s_count {
        for (c, v) in center.iter_mut().zip(protos.mu.row(i)) {
            *c += v;
        }
    }
    for c in center.iter_mut() {
        *c /= s_count as f64;
    }
    let mut centered = Matrix::zeros(s_count, d);
    for i in 0..s_count {
        for j in 0..d {
            centered[(i, j)] = protos.mu[(i, j)] - center[j];
        }
    }
    let svd = jacobi_svd(&centered)?;
    let v1 = svd.vt.row(0).to_vec();
    let v2 = if svd.vt.rows() > 1 { svd.vt.row(1).to_vec() } else { vec![0.0; d] };

    // residuals of every sample point after removing the in-plane part
    let n = embs.len();
    let mut residuals = Matrix::zeros(n, d);
    let mut in_plane = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = embs.row(i).iter().zip(&center).map(|(a, c)| a - c).collect();
        let px = dot(&x, &v1);
        let py = dot(&x, &v2);
        for j in 0..d {
            residuals[(i, j)] = x[j] - px * v1[j] - py * v2[j];
        }
        in_plane.push((px, py));
    }
    let res_svd = jacobi_svd(&residuals)?;
    let w1 = if res_svd.singular_values.first().copied().unwrap_or(0.0) > 1e-12 {
        res_svd.vt.row(0).to_vec()
    } else {
        vec![0.0; d]
    };

    let mut coords = Matrix::zeros(n, 3);
    for i in 0..n {
        coords[(i, 0)] = in_plane[i].0;
        coords[(i, 1)] = in_plane[i].1;
        coords[(i, 2)] = dot(residuals.row(i), &w1);
    }
    let mut species_coords = Matrix::zeros(s_count, 3);
    for i in 0..s_count {
        let x: Vec<f64> = protos.mu.row(i).iter().zip(&center).map(|(a, c)| a - c).collect();
        species_coords[(i, 0)] = dot(&x, &v1);
        species_coords[(i, 1)] = dot(&x, &v2);
        let res: Vec<f64> = (0..d)
            .map(|j| x[j] - species_coords[(i, 0)] * v1[j] - species_coords[(i, 1)] * v2[j])
            .collect();
        species_coords[(i, 2)] = dot(&res, &w1);
    }

    let mut basis = Matrix::zeros(3, d);
    basis.row_mut(0).copy_from_slice(&v1);
    basis.row_mut(1).copy_from_slice(&v2);
    basis.row_mut(2).copy_from_slice(&w1);

    let mut arrows = Vec::new();
    for dm in diffs {
        let mut proj = Matrix::zeros(3, dm.d.cols());
        for j in 0..dm.d.cols() {
            let col = dm.d.col(j);
            proj[(0, j)] = dot(&col, &v1);
            proj[(1, j)] = dot(&col, &v2);
            proj[(2, j)] = dot(&col, &w1);
        }
        arrows.push((dm.axis.clone(), proj));
    }

    Ok(PlaneProjection {
        center,
        basis,
        coords,
        species_coords,
        species_ids: wanted,
        arrows,
    })
}

/// Expansion of the contrastive loss l(mu_s + delta, c_s) around the
/// prototype, with the prototype set as the softmax candidates. The
/// quadratic is reported twice: with the exact softmax mean m, and with
/// mu_s substituted for m (the near-converged approximation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorAnalysis {
    pub a: Vec<f64>,
    pub z_partition: f64,
    pub w: Vec<f64>,
    pub m: Vec<f64>,
    pub first_order: f64,
    pub quadratic: f64,
    pub quadratic_substituted: f64,
    pub exact_delta: f64,
    pub remainder: f64,
}

/// Contrastive loss of embedding z against species s with the prototype
/// rows as candidates; z is used as given, not renormalized.
pub fn prototype_loss(protos: &PrototypeSet, s: usize, z: &[f64], tau: f64) -> Result<f64> {
    if s >= protos.len() {
        return Err(Error::IndexOutOfRange { index: s, len: protos.len() });
    }
    let logits: Vec<f64> = (0..protos.len()).map(|k| dot(z, protos.mu.row(k)) / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[s])
}

pub fn taylor_analysis(
    protos: &PrototypeSet,
    s: usize,
    delta: &[f64],
    tau: f64,
) -> Result<TaylorAnalysis> {
    if s >= protos.len() {
        return Err(Error::IndexOutOfRange { index: s, len: protos.len() });
    }
    if delta.len() != protos.mu.cols() {
        return Err(Error::DimensionMismatch {
            context: format!("delta has {} entries, prototypes {}", delta.len(), protos.mu.cols()),
        });
    }
    let k_count = protos.len();
    let mu_s = protos.mu.row(s);
    let a: Vec<f64> = (0..k_count).map(|k| dot(mu_s, protos.mu.row(k)) / tau).collect();
    let z_partition: f64 = a.iter().map(|v| v.exp()).sum();
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stable_z: f64 = a.iter().map(|v| (v - max).exp()).sum();
    let w: Vec<f64> = a.iter().map(|v| (v - max).exp() / stable_z).collect();
    let d = protos.mu.cols();
    let mut m = vec![0.0; d];
    for k in 0..k_count {
        for (mm, v) in m.iter_mut().zip(protos.mu.row(k)) {
            *mm += w[k] * v;
        }
    }

    let first_order = (dot(&m, delta) - dot(mu_s, delta)) / tau;
    let dk: Vec<f64> = (0..k_count).map(|k| dot(delta, protos.mu.row(k))).collect();
    let weighted_sq: f64 = (0..k_count).map(|k| w[k] * dk[k] * dk[k]).sum();
    let dm = dot(delta, &m);
    let dmu = dot(delta, mu_s);
    let quadratic = (weighted_sq - dm * dm) / (2.0 * tau * tau);
    let quadratic_substituted = (weighted_sq - dmu * dmu) / (2.0 * tau * tau);

    let z_pert: Vec<f64> = mu_s.iter().zip(delta).map(|(a, b)| a + b).collect();
    let exact_delta =
        prototype_loss(protos, s, &z_pert, tau)? - prototype_loss(protos, s, mu_s, tau)?;
    let remainder = exact_delta - first_order - quadratic;

    Ok(TaylorAnalysis {
        a,
        z_partition,
        w,
        m,
        first_order,
        quadratic,
        quadratic_substituted,
        exact_delta,
        remainder,
    })
}

// ── aggregate report ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisRho {
    pub axis: String,
    pub empirical: Option<f64>,
    pub textual: Option<f64>,
    pub skipped_species: Vec<usize>,
    pub zero_columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesFdr {
    pub species: usize,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisFdr {
    pub axis: String,
    pub per_species: Vec<SpeciesFdr>,
    pub mean_numerator: Option<f64>,
    pub mean_denominator: Option<f64>,
    pub mean_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub analysis_species: Vec<usize>,
    pub empirical: PrototypeSet,
    pub textual: PrototypeSet,
    pub rho: Vec<AxisRho>,
    pub fdr: Vec<AxisFdr>,
    /// Separation of the two grp_attr prototype groups over all species.
    pub attribute_separation: Option<FdrResult>,
    pub plane: PlaneProjection,
    /// Indices into the dataset's sample list, aligned with plane.coords.
    pub plane_samples: Vec<usize>,
}

/// Evenly spaced species subset used for the span/projection instruments.
/// Using every species would make the prototype span the whole embedding
/// space whenever S >= d_emb, pinning the ratio at 1.
pub fn default_analysis_species(species_count: usize, subset: usize) -> Vec<usize> {
    if species_count <= subset {
        return (0..species_count).collect();
    }
    (0..subset).map(|i| i * species_count / subset).collect()
}

/// Per-axis instruments on an embedded sample set: explained-variance
/// ratio from empirical prototypes and mean per-species discriminant
/// ratio. `None` entries mean the statistic was undefined on this data.
pub fn axis_instruments(
    embs: &EmbeddingBatch,
    samples: &[Sample],
    axes: &[VariantAxis],
    analysis: &[usize],
) -> Result<Vec<(Option<f64>, Option<f64>)>> {
    let protos = empirical_prototypes(
        embs,
        &samples.iter().map(|r| r.sid).collect::<Vec<_>>(),
        analysis,
    )?;
    let mut out = Vec::with_capacity(axes.len());
    for ax in axes {
        let rho = match variation_diffs(embs, samples, ax, analysis) {
            Ok(dm) => explained_variance_ratio(&protos, &dm).ok(),
            Err(_) => None,
        };
        let fdr_mean = axis_species_fdr(embs, samples, ax, analysis)
            .map(|rows| ordered_mean(&rows.iter().map(|r| r.ratio).collect::<Vec<_>>()));
        out.push((rho, fdr_mean));
    }
    Ok(out)
}

/// Per-species FDR between the two variant groups of one axis. Species
/// without both values, or with collapsed groups, are silently skipped.
fn axis_species_fdr(
    embs: &EmbeddingBatch,
    samples: &[Sample],
    ax: &VariantAxis,
    analysis: &[usize],
) -> Option<Vec<SpeciesFdr>> {
    let mut rows = Vec::new();
    for &s in analysis {
        let group = |v: usize| -> Matrix {
            let picks: Vec<Vec<f64>> = samples
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    r.sid == s
                        && r.variants.get(&ax.name).map(|val| &ax.values[v] == val).unwrap_or(false)
                })
                .map(|(i, _)| embs.row(i).to_vec())
                .collect();
            Matrix::from_rows(&picks).unwrap_or_else(|_| Matrix::zeros(0, embs.vectors().cols()))
        };
        let (ga, gb) = (group(0), group(1));
        if ga.rows() == 0 || gb.rows() == 0 {
            continue;
        }
        if let Ok(f) = fdr(&ga, &gb) {
            rows.push(SpeciesFdr {
                species: s,
                numerator: f.numerator,
                denominator: f.denominator,
                ratio: f.ratio,
            });
        }
    }
    if rows.is_empty() {
        None
    } else {
        Some(rows)
    }
}

/// Full geometry bundle for a model/dataset pair, computed on all samples
/// of the analysis subset plus all-species prototypes for the attribute
/// separation check.
pub fn geometry_report(
    m: &ModelState,
    ds: &Dataset,
    analysis: &[usize],
) -> Result<GeometryReport> {
    if analysis.len() < 2 {
        return Err(Error::TooFewSpecies { got: analysis.len() });
    }
    for &s in analysis {
        if s >= ds.species_count() {
            return Err(Error::IndexOutOfRange { index: s, len: ds.species_count() });
        }
    }
    let subset_idx: Vec<usize> = (0..ds.samples.len())
        .filter(|&i| analysis.contains(&ds.samples[i].sid))
        .collect();
    let subset: Vec<Sample> = subset_idx.iter().map(|&i| ds.samples[i].clone()).collect();
    let xs = Matrix::from_rows(&subset.iter().map(|r| r.x.clone()).collect::<Vec<_>>())?;
    let embs = encode_images(m, &xs, ImageHead::Main)?;
    let sids: Vec<usize> = subset.iter().map(|r| r.sid).collect();

    let empirical = empirical_prototypes(&embs, &sids, analysis)?;
    let textual = textual_prototypes(m, ds, analysis)?;

    let mut rho = Vec::new();
    let mut fdr_rows = Vec::new();
    let mut diff_store = Vec::new();
    for ax in &ds.config.variant_axes {
        match variation_diffs(&embs, &subset, ax, analysis) {
            Ok(dm) => {
                rho.push(AxisRho {
                    axis: ax.name.clone(),
                    empirical: explained_variance_ratio(&empirical, &dm).ok(),
                    textual: explained_variance_ratio(&textual, &dm).ok(),
                    skipped_species: dm.skipped.clone(),
                    zero_columns: dm.zero_columns.clone(),
                });
                diff_store.push(dm);
            }
            Err(_) => rho.push(AxisRho {
                axis: ax.name.clone(),
                empirical: None,
                textual: None,
                skipped_species: analysis.to_vec(),
                zero_columns: Vec::new(),
            }),
        }
        let per_species = axis_species_fdr(&embs, &subset, ax, analysis).unwrap_or_default();
        let collect = |f: fn(&SpeciesFdr) -> f64| -> Option<f64> {
            if per_species.is_empty() {
                None
            } else {
                Some(ordered_mean(&per_species.iter().map(f).collect::<Vec<_>>()))
            }
        };
        fdr_rows.push(AxisFdr {
            axis: ax.name.clone(),
            mean_numerator: collect(|r| r.numerator),
            mean_denominator: collect(|r| r.denominator),
            mean_ratio: collect(|r| r.ratio),
            per_species,
        });
    }

    // attribute separation over every species prototype
    let all_species: Vec<usize> = (0..ds.species_count()).collect();
    let all_xs = Matrix::from_rows(&ds.samples.iter().map(|r| r.x.clone()).collect::<Vec<_>>())?;
    let all_embs = encode_images(m, &all_xs, ImageHead::Main)?;
    let all_sids: Vec<usize> = ds.samples.iter().map(|r| r.sid).collect();
    let all_protos = empirical_prototypes(&all_embs, &all_sids, &all_species)?;
    let attribute_separation = ds.attributes.get("grp_attr").and_then(|attr| {
        let pick = |flag: bool| -> Matrix {
            let rows: Vec<Vec<f64>> = all_species
                .iter()
                .filter(|&&s| attr[s] == flag)
                .map(|&s| all_protos.row_of(s).unwrap().to_vec())
                .collect();
            Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, m.config.d_emb))
        };
        let (t, f) = (pick(true), pick(false));
        if t.rows() == 0 || f.rows() == 0 {
            None
        } else {
            fdr(&t, &f).ok()
        }
    });

    let plane = species_plane_projection(
        &embs,
        &sids,
        &diff_store.iter().collect::<Vec<_>>(),
    )?;

    Ok(GeometryReport {
        analysis_species: analysis.to_vec(),
        empirical,
        textual,
        rho,
        fdr: fdr_rows,
        attribute_separation,
        plane,
        plane_samples: subset_idx,
    })
}
