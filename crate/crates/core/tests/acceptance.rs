//! Acceptance gate for the whole pipeline. Each test checks one release
//! criterion and prints exactly one `criterion N [PASS|FAIL]` line; run
//! with `cargo test --test acceptance -- --nocapture` to see them all.
//!
//! The scaling criteria (4, 5, 9) share a single run of the committed
//! sweep config so the gate stays inside its time budget.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use sha2::{Digest, Sha256};

use eclab::geometry::{
    explained_variance_ratio, prototype_loss, taylor_analysis, PrototypeSet, PrototypeSource,
    VariationMatrix,
};
use eclab::model::{init_model, EncoderMode, Layout, ModelConfig};
use eclab::numeric::{hungarian_assign, householder_qr, normalize, Matrix, Rng};
use eclab::synth::{generate_dataset, SynthConfig, VariantAxis};
use eclab::train::{loss_and_grads, replay_inclusion, ReplayBatch, ReplayMode, TrainConfig};

// ── shared plumbing ──────────────────────────────────────────────────────

fn announce(n: usize, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} [{tag}] {name}: {detail}");
    assert!(pass, "criterion {n} {name}: {detail}");
}

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eclab"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().expect("spawn eclab");
    assert!(
        out.status.success(),
        "`{:?}` failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn sha256_hex(path: &std::path::Path) -> String {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("read {path:?}: {e}"));
    let mut h = Sha256::new();
    h.update(&bytes);
    format!("{:x}", h.finalize())
}

/// `configs/digests.txt` entry for (config, artifact).
fn expected_digest(config: &str, artifact: &str) -> String {
    let text = std::fs::read_to_string(repo_path("configs/digests.txt")).expect("digests.txt");
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        if parts.next() == Some(config) && parts.next() == Some(artifact) {
            return parts.next().expect("digest column").to_string();
        }
    }
    panic!("no digest recorded for {config} {artifact}");
}

struct SweepRun {
    dir: tempfile::TempDir,
    /// trend.csv rows keyed by scale, cells keyed by header name.
    trend: BTreeMap<u64, BTreeMap<String, String>>,
    secs: f64,
}

impl SweepRun {
    fn cell(&self, scale: u64, col: &str) -> f64 {
        self.trend[&scale][col].parse().unwrap_or_else(|e| panic!("{col}@{scale}: {e}"))
    }
}

fn main_sweep() -> &'static SweepRun {
    static RUN: OnceLock<SweepRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let start = Instant::now();
        run_ok(bin()
            .arg("sweep")
            .arg("--config")
            .arg(repo_path("configs/sweep_main.json"))
            .arg("--out-dir")
            .arg(dir.path()));
        let secs = start.elapsed().as_secs_f64();
        let text = std::fs::read_to_string(dir.path().join("trend.csv")).expect("trend.csv");
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().expect("header").split(',').collect();
        let mut trend = BTreeMap::new();
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            let row: BTreeMap<String, String> =
                header.iter().zip(&cells).map(|(h, c)| (h.to_string(), c.to_string())).collect();
            let scale: u64 = row["scale"].parse().expect("scale");
            trend.insert(scale, row);
        }
        SweepRun { dir, trend, secs }
    })
}

fn report_json(rel: &str) -> serde_json::Value {
    let path = main_sweep().dir.path().join(rel);
    serde_json::from_str(&std::fs::read_to_string(&path).expect("report"))
        .unwrap_or_else(|e| panic!("parse {rel}: {e}"))
}

// ── criterion 1: analytic gradients match finite differences ─────────────

fn fd_case(i: u64) -> (SynthConfig, ModelConfig, TrainConfig, u64) {
    let mut rng = Rng::new(9000 + i);
    let synth = SynthConfig {
        seed: 500 + i,
        branching: [2, 1, 1, 1, 1, 1, 2],
        d_latent: 5,
        d_in: 8,
        samples_per_species: 6,
        noise_sigma: 0.3 + 0.2 * rng.next_f64(),
        variant_axes: vec![VariantAxis {
            name: "stage".into(),
            values: ["juvenile".into(), "adult".into()],
            offset_scale: 0.25,
        }],
        ..SynthConfig::default()
    };
    let model = ModelConfig {
        d_emb: 4,
        mode: if i % 2 == 0 { EncoderMode::Linear } else { EncoderMode::Mlp },
        d_hidden: 5,
        learn_tau: i % 3 == 0,
        replay_captions: 4,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        tau: 0.06 + 0.1 * rng.next_f64(),
        replay_mode: [ReplayMode::None, ReplayMode::SharedProj, ReplayMode::SeparateProj]
            [(i % 3) as usize],
        replay_batch_size: 2,
        ..TrainConfig::default()
    };
    (synth, model, train, 700 + i)
}

#[test]
fn c1_gradients_match_finite_differences() {
    let start = Instant::now();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (synth, mcfg, tcfg, model_seed) = fd_case(i);
        let ds = generate_dataset(&synth).expect("dataset");
        let m = init_model(&mcfg, model_seed, &ds).expect("model");
        let layout = Layout::new(&m, replay_inclusion(&tcfg), mcfg.learn_tau);
        let batch: Vec<usize> = (0..6).collect();
        let replay = ReplayBatch {
            image_idx: vec![6 % ds.samples.len(), 7 % ds.samples.len()],
            caption_ids: vec![eclab::model::caption_id(0), eclab::model::caption_id(2)],
        };
        let rb = if tcfg.replay_enabled() { Some(&replay) } else { None };
        let (_, analytic) = loss_and_grads(&m, &ds, &batch, rb, &layout, &tcfg).expect("grads");
        let base = layout.flatten(&m);
        let scale = analytic.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        assert!(scale > 1e-6, "instance {i} produced a vanishing gradient");
        for k in 0..base.len() {
            let probe = |delta: f64| -> f64 {
                let mut p = base.clone();
                p[k] += delta;
                let mut mm = m.clone();
                layout.apply(&mut mm, &p).expect("apply");
                loss_and_grads(&mm, &ds, &batch, rb, &layout, &tcfg).expect("probe").0.total
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            worst = worst.max((analytic[k] - fd).abs() / scale);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-6 && secs < 5.0;
    announce(
        1,
        "finite-difference gradient check",
        pass,
        &format!("20 instances, worst rel err {worst:.3e} (tol 1e-6), {secs:.2}s (budget 5s)"),
    );
}

// ── criterion 2: curvature expansion of the prototype loss ───────────────

fn random_prototypes(rng: &mut Rng, s_count: usize, d: usize) -> PrototypeSet {
    let rows: Vec<Vec<f64>> = (0..s_count)
        .map(|_| normalize(&rng.fill_gaussian(d)).expect("unit row"))
        .collect();
    PrototypeSet::new(
        PrototypeSource::Empirical,
        Matrix::from_rows(&rows).expect("matrix"),
        (0..s_count).collect(),
    )
    .expect("prototype set")
}

fn orthonormal_prototypes(rng: &mut Rng, s_count: usize, d: usize) -> PrototypeSet {
    let a = Matrix::from_vec(d, s_count, rng.fill_gaussian(d * s_count)).expect("seed matrix");
    let q = householder_qr(&a).expect("qr").q;
    let rows: Vec<Vec<f64>> = (0..s_count).map(|j| (0..d).map(|i| q[(i, j)]).collect()).collect();
    PrototypeSet::new(
        PrototypeSource::Empirical,
        Matrix::from_rows(&rows).expect("matrix"),
        (0..s_count).collect(),
    )
    .expect("orthonormal set")
}

/// Component of `v` orthogonal to every prototype row, normalized.
fn out_of_span_dir(rng: &mut Rng, protos: &PrototypeSet) -> Vec<f64> {
    let d = protos.mu.cols();
    let basis = householder_qr(&protos.mu.transpose()).expect("span basis").q;
    let mut v = rng.fill_gaussian(d);
    for j in 0..basis.cols() {
        let col: Vec<f64> = (0..d).map(|i| basis[(i, j)]).collect();
        let c: f64 = v.iter().zip(&col).map(|(a, b)| a * b).sum();
        for (vi, bi) in v.iter_mut().zip(&col) {
            *vi -= c * bi;
        }
    }
    normalize(&v).expect("orthogonal direction")
}

fn in_span_dir(rng: &mut Rng, protos: &PrototypeSet) -> Vec<f64> {
    let d = protos.mu.cols();
    let mut v = vec![0.0; d];
    for k in 0..protos.len() {
        let c = 0.4 + rng.next_f64();
        for (vi, mi) in v.iter_mut().zip(protos.mu.row(k)) {
            *vi += c * mi;
        }
    }
    normalize(&v).expect("in-span direction")
}

#[test]
fn c2_curvature_expansion_verifier() {
    let start = Instant::now();
    let taus = [0.2, 0.5, 1.0];
    let mut max_quad = 0.0f64;
    let mut max_drift = 0.0f64;
    let mut max_first = 0.0f64;
    let mut min_weight = 1.0f64;
    for i in 0..10u64 {
        let mut rng = Rng::new(4000 + i);
        let s_count = 4 + (i as usize % 5);
        let d = (8 + (3 * i as usize) % 9).max(s_count + 2);
        let tau = taus[i as usize % 3];
        let protos = random_prototypes(&mut rng, s_count, d);
        let s = rng.next_below(s_count);

        // out-of-span displacement: both quadratic forms must vanish
        let orth = out_of_span_dir(&mut rng, &protos);
        let t = taylor_analysis(&protos, s, &orth, tau).expect("taylor");
        max_quad = max_quad
            .max(t.quadratic.abs())
            .max(t.quadratic_substituted.abs())
            .max((t.quadratic - t.quadratic_substituted).abs());

        // in-span displacement: remainder shrinks like t^3
        let dir = in_span_dir(&mut rng, &protos);
        let coeffs: Vec<f64> = [0.1f64, 0.05, 0.025]
            .iter()
            .map(|&scale| {
                let delta: Vec<f64> = dir.iter().map(|v| v * scale).collect();
                let t = taylor_analysis(&protos, s, &delta, tau).expect("taylor");
                t.remainder / scale.powi(3)
            })
            .collect();
        if coeffs.iter().any(|c| c.abs() > 1e-9) {
            for pair in coeffs.windows(2) {
                max_drift =
                    max_drift.max((pair[0] - pair[1]).abs() / pair[0].abs().max(pair[1].abs()));
            }
        }

        // orthonormal prototypes at sharp temperature: the linear term dies
        let on = orthonormal_prototypes(&mut rng, s_count, d);
        let probe = normalize(&rng.fill_gaussian(d)).expect("probe dir");
        let tc = taylor_analysis(&on, s, &probe, 0.02).expect("taylor");
        min_weight = min_weight.min(tc.w[s]);
        max_first = max_first.max(tc.first_order.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = max_quad < 1e-12
        && max_drift < 0.25
        && max_first < 1e-10
        && min_weight > 1.0 - 1e-9
        && secs < 5.0;
    announce(
        2,
        "curvature expansion verifier",
        pass,
        &format!(
            "quad residual {max_quad:.2e} (tol 1e-12), cubic drift {max_drift:.3} (tol 0.25), \
             first-order {max_first:.2e} at weight {min_weight:.12} ({secs:.2}s)"
        ),
    );
}

// ── criterion 3: explained-variance ratio on known subspaces ─────────────

#[test]
fn c3_explained_variance_ratio_limits() {
    let mut rng = Rng::new(77);
    let mut worst_in = 0.0f64;
    let mut worst_out = 0.0f64;
    for _ in 0..6 {
        let protos = random_prototypes(&mut rng, 4, 10);
        let in_cols: Vec<Vec<f64>> = (0..3).map(|_| in_span_dir(&mut rng, &protos)).collect();
        let d_in = VariationMatrix {
            d: Matrix::from_rows(&in_cols).expect("cols").transpose(),
            axis: "synthetic".into(),
            species: vec![0; 3],
            skipped: vec![],
            zero_columns: vec![],
        };
        worst_in =
            worst_in.max((explained_variance_ratio(&protos, &d_in).expect("rho") - 1.0).abs());
        let out_cols: Vec<Vec<f64>> = (0..3).map(|_| out_of_span_dir(&mut rng, &protos)).collect();
        let d_out = VariationMatrix {
            d: Matrix::from_rows(&out_cols).expect("cols").transpose(),
            axis: "synthetic".into(),
            species: vec![0; 3],
            skipped: vec![],
            zero_columns: vec![],
        };
        worst_out = worst_out.max(explained_variance_ratio(&protos, &d_out).expect("rho"));
    }

    // hand instance: span {e1, e2} in R^3, variation (1,0,1)/sqrt(2)
    let protos = PrototypeSet::new(
        PrototypeSource::Empirical,
        Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).expect("rows"),
        vec![0, 1],
    )
    .expect("hand prototypes");
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let hand = VariationMatrix {
        d: Matrix::from_rows(&[vec![r, 0.0, r]]).expect("col").transpose(),
        axis: "hand".into(),
        species: vec![0],
        skipped: vec![],
        zero_columns: vec![],
    };
    let hand_err = (explained_variance_ratio(&protos, &hand).expect("rho") - 0.5).abs();

    let pass = worst_in < 1e-10 && worst_out < 1e-10 && hand_err < 1e-12;
    announce(
        3,
        "explained-variance ratio limits",
        pass,
        &format!(
            "in-span err {worst_in:.2e}, out-of-span err {worst_out:.2e} (tol 1e-10), \
             hand instance err {hand_err:.2e} (tol 1e-12)"
        ),
    );
}

// ── criteria 4 + 5: trends across the committed scaling sweep ────────────

#[test]
fn c4_scaling_trends_on_committed_sweep() {
    let run = main_sweep();
    let (lo, hi) = (2000, 32000);
    let rho_ok = run.cell(hi, "rho_axis0") < run.cell(lo, "rho_axis0")
        && run.cell(hi, "rho_axis1") < run.cell(lo, "rho_axis1");
    let fdr_ok = run.cell(hi, "fdr_axis0") > run.cell(lo, "fdr_axis0")
        && run.cell(hi, "fdr_axis1") > run.cell(lo, "fdr_axis1");
    let zs: Vec<f64> =
        [2000, 8000, 32000].iter().map(|&s| run.cell(s, "zeroshot_acc")).collect();
    let zs_ok = zs[0] < zs[1] && zs[1] < zs[2];
    let pass = rho_ok && fdr_ok && zs_ok && run.secs < 600.0;
    announce(
        4,
        "variation rotates out of span while gaining contrast",
        pass,
        &format!(
            "rho0 {:.3}->{:.3}, rho1 {:.3}->{:.3} (must fall); fdr0 {:.4}->{:.4}, \
             fdr1 {:.4}->{:.4} (must rise); zeroshot {:.3}<{:.3}<{:.3}; {:.0}s (budget 600s)",
            run.cell(lo, "rho_axis0"),
            run.cell(hi, "rho_axis0"),
            run.cell(lo, "rho_axis1"),
            run.cell(hi, "rho_axis1"),
            run.cell(lo, "fdr_axis0"),
            run.cell(hi, "fdr_axis0"),
            run.cell(lo, "fdr_axis1"),
            run.cell(hi, "fdr_axis1"),
            zs[0],
            zs[1],
            zs[2],
            run.secs
        ),
    );
}

#[test]
fn c5_variant_tasks_improve_with_scale() {
    let run = main_sweep();
    let (lo, hi) = (2000, 32000);
    let align = (run.cell(lo, "alignment"), run.cell(hi, "alignment"));
    let diff = (run.cell(lo, "differentiation"), run.cell(hi, "differentiation"));
    let pass = align.1 > align.0 && diff.1 > diff.0;
    announce(
        5,
        "variant alignment and differentiation improve",
        pass,
        &format!(
            "alignment {:.3}->{:.3}, differentiation {:.3}->{:.3} (both must rise)",
            align.0, align.1, diff.0, diff.1
        ),
    );
}

// ── criterion 6: replay projector ablation ───────────────────────────────

#[test]
fn c6_replay_projector_ablation() {
    let dir = tempfile::tempdir().expect("tempdir");
    let ds = dir.path().join("ablation.jsonl");
    run_ok(bin()
        .arg("gen")
        .arg("--config")
        .arg(repo_path("configs/replay_ablation.json"))
        .arg("--out")
        .arg(&ds));

    let train = |tag: &str, extra: &[&str]| -> (f64, f64, f64) {
        let ckpt = dir.path().join(format!("{tag}.ckpt.json"));
        let metrics = dir.path().join(format!("{tag}.metrics.csv"));
        let mut cmd = bin();
        cmd.arg("train")
            .arg("--data")
            .arg(&ds)
            .arg("--config")
            .arg(repo_path("configs/replay_ablation.json"))
            .arg("--out-ckpt")
            .arg(&ckpt)
            .arg("--metrics")
            .arg(&metrics);
        for e in extra {
            cmd.arg("--set").arg(e);
        }
        run_ok(&mut cmd);
        let text = std::fs::read_to_string(&metrics).expect("metrics");
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().expect("header").split(',').collect();
        let col = header.iter().position(|h| *h == "replay_loss").expect("replay_loss column");
        let rows: Vec<f64> = lines
            .map(|l| l.split(',').nth(col).unwrap().parse().expect("replay loss"))
            .collect();

        let report = dir.path().join(format!("{tag}.eval.json"));
        run_ok(bin()
            .arg("eval")
            .arg("--task")
            .arg("zeroshot")
            .arg("--ckpt")
            .arg(&ckpt)
            .arg("--data")
            .arg(&ds)
            .arg("--report")
            .arg(&report));
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&report).expect("eval")).expect("json");
        let acc = v[0]["accuracy"].as_f64().expect("accuracy");
        (acc, rows[0], *rows.last().expect("last row"))
    };

    let (sep_acc, sep_first, sep_last) = train("separate", &[]);
    let (sh_acc, sh_first, sh_last) =
        train("shared", &["train.replay_mode=shared_proj"]);
    let pass = sep_acc >= sh_acc && sep_last < sep_first && sh_last < sh_first;
    announce(
        6,
        "separate replay projector protects zero-shot",
        pass,
        &format!(
            "zeroshot separate {sep_acc:.4} >= shared {sh_acc:.4}; replay loss \
             separate {sep_first:.3}->{sep_last:.3}, shared {sh_first:.3}->{sh_last:.3}"
        ),
    );
}

// ── criterion 7: assignment and loss cross-checks ────────────────────────

fn brute_force_assignment(cost: &Matrix) -> f64 {
    fn go(cost: &Matrix, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.rows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for col in 0..cost.cols() {
            if !used[col] {
                used[col] = true;
                best = best.min(cost[(row, col)] + go(cost, row + 1, used));
                used[col] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.cols()])
}

#[test]
fn c7_assignment_and_loss_cross_checks() {
    // 50 integer-valued cost matrices, n <= 6: optimal cost must be exact
    let mut rng = Rng::new(31);
    let mut hungarian_exact = true;
    for i in 0..50 {
        let n = 1 + i % 6;
        let data: Vec<f64> = (0..n * n).map(|_| rng.next_below(10) as f64).collect();
        let cost = Matrix::from_vec(n, n, data).expect("cost");
        let fast = hungarian_assign(&cost).expect("assignment").total_cost;
        if fast != brute_force_assignment(&cost) {
            hungarian_exact = false;
        }
    }

    // clustering: Hungarian cluster->class map must reach the brute-force
    // optimum on a 12-point instance with 2 known and 2 novel classes
    let mut labeled_rows = Vec::new();
    let mut labeled_y = Vec::new();
    let mut unlabeled_rows = Vec::new();
    let mut unlabeled_y = Vec::new();
    let centers =
        [vec![4.0, 0.0], vec![-4.0, 0.0], vec![0.0, 4.0], vec![0.0, -4.0]];
    for (class, c) in centers.iter().enumerate() {
        for j in 0..3 {
            let p = vec![c[0] + 0.2 * (j as f64), c[1] - 0.1 * (j as f64)];
            unlabeled_rows.push(p);
            unlabeled_y.push(class);
        }
        if class < 2 {
            for j in 0..2 {
                labeled_rows.push(vec![c[0] - 0.15 * (j as f64), c[1] + 0.25]);
                labeled_y.push(class);
            }
        }
    }
    let outcome = eclab::eval::ssl_kmeans(
        (&Matrix::from_rows(&labeled_rows).expect("labeled"), &labeled_y),
        (&Matrix::from_rows(&unlabeled_rows).expect("unlabeled"), &unlabeled_y),
        4,
        123,
    )
    .expect("kmeans");
    // score every bijection of the two novel clusters onto classes {2, 3}
    let mut brute_best = 0usize;
    for novel_map in [[2usize, 3usize], [3usize, 2usize]] {
        let correct = outcome
            .clusters
            .iter()
            .zip(&unlabeled_y)
            .filter(|(&c, &truth)| {
                let pred = if c < 2 { Some(c) } else { Some(novel_map[c - 2]) };
                pred == Some(truth)
            })
            .count();
        brute_best = brute_best.max(correct);
    }
    let clustering_exact = outcome.report.correct == brute_best;

    // two-point contrastive loss against an identity prototype pair
    let protos = PrototypeSet::new(
        PrototypeSource::Empirical,
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).expect("rows"),
        vec![0, 1],
    )
    .expect("hand prototypes");
    let want = (1.0 + (-1.0f64).exp()).ln();
    let l0 = prototype_loss(&protos, 0, &[1.0, 0.0], 1.0).expect("loss 0");
    let l1 = prototype_loss(&protos, 1, &[0.0, 1.0], 1.0).expect("loss 1");
    let hand_err = (l0 - want).abs().max((l1 - want).abs());

    let pass = hungarian_exact && clustering_exact && hand_err < 1e-12;
    announce(
        7,
        "assignment and loss cross-checks",
        pass,
        &format!(
            "hungarian exact over 50 matrices: {hungarian_exact}; clustering matched \
             brute force ({} of {} correct): {clustering_exact}; hand loss err {hand_err:.2e}",
            outcome.report.correct, outcome.report.n
        ),
    );
}

// ── criterion 8: byte-level reproducibility ──────────────────────────────

fn tree_files(root: &std::path::Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("read_dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).expect("prefix").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn c8_reruns_are_byte_identical() {
    let smoke = repo_path("configs/smoke.json");
    let (a, b) = (tempfile::tempdir().expect("a"), tempfile::tempdir().expect("b"));
    for dir in [&a, &b] {
        run_ok(bin().arg("sweep").arg("--config").arg(&smoke).arg("--out-dir").arg(dir.path()));
    }
    let files = tree_files(a.path());
    let mut sweeps_identical = files == tree_files(b.path());
    if sweeps_identical {
        for rel in &files {
            if std::fs::read(a.path().join(rel)).expect("a bytes")
                != std::fs::read(b.path().join(rel)).expect("b bytes")
            {
                sweeps_identical = false;
            }
        }
    }

    let g1 = a.path().join("gen1.jsonl");
    let g2 = a.path().join("gen2.jsonl");
    for out in [&g1, &g2] {
        run_ok(bin().arg("gen").arg("--config").arg(&smoke).arg("--out").arg(out));
    }
    let gens_identical = std::fs::read(&g1).expect("g1") == std::fs::read(&g2).expect("g2");

    // outputs must also match the digests committed next to the configs
    let digests_match = sha256_hex(&a.path().join("trend.csv"))
        == expected_digest("smoke", "trend.csv")
        && sha256_hex(&g1) == expected_digest("smoke", "smoke_data.jsonl")
        && sha256_hex(&main_sweep().dir.path().join("trend.csv"))
            == expected_digest("sweep_main", "trend.csv")
        && sha256_hex(&main_sweep().dir.path().join("baseline.json"))
            == expected_digest("sweep_main", "baseline.json");

    let pass = sweeps_identical && gens_identical && digests_match;
    announce(
        8,
        "reruns are byte-identical",
        pass,
        &format!(
            "sweep reruns identical: {sweeps_identical}; gen reruns identical: \
             {gens_identical}; committed digests match: {digests_match}"
        ),
    );
}

// ── criterion 9: attribute structure strengthens with training ───────────

#[test]
fn c9_attribute_separation_grows_with_training() {
    let untrained = report_json("baseline.json")["attribute_separation"]["ratio"]
        .as_f64()
        .expect("baseline ratio");
    let trained = report_json("scale_32000/report.json")["attribute_separation"]["ratio"]
        .as_f64()
        .expect("trained ratio");
    let pass = trained > untrained;
    announce(
        9,
        "attribute separation grows with training",
        pass,
        &format!("untrained {untrained:.5} -> trained {trained:.5} (must rise)"),
    );
}
