//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `--nocapture`). Oracles here are independent straight-line
//! evaluations; tolerances are pinned in the assertions.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use morphotr_core::baselines::combat_fit_transform;
use morphotr_core::dataio::{generate_synthetic, preprocess, Dataset, SynthConfig};
use morphotr_core::encoder::{encode_dataset, EncoderConfig, ModelParams};
use morphotr_core::hyena::{hyena_forward, implicit_filter, HyenaLayerParams};
use morphotr_core::metrics::{
    aggregate, ari, batch_classifier_score, compute_report, graph_connectivity, knn_adjacency,
    mean_average_precision, nmi, silhouette_samples, BatchKey, EmbeddingTable, MapMode,
    MetricConfig, MetricReport, BATCH_METRIC_NAMES, BIO_METRIC_NAMES,
};
use morphotr_core::tensor::{conv_long, grad_check, Array, ConvMode, Graph};
use morphotr_core::training::{
    label_ids, loss_cwmm, loss_cwmm_graph, loss_supcon, loss_supcon_graph, run_curriculum,
    run_stage, BatchPolicy, MaskPlan, TrainConfig,
};

fn pass(name: &str) {
    eprintln!("ACCEPTANCE {name}: PASS");
}

// ── 1. Convolution oracle ───────────────────────────────────────────────

fn direct_conv(u: &[f64], h: &[f64], mode: ConvMode) -> Vec<f64> {
    let len = u.len() as isize;
    (0..len)
        .map(|t| {
            (0..len)
                .map(|tau| {
                    let idx = t - tau;
                    let hv = match mode {
                        ConvMode::Circular => h[idx.rem_euclid(len) as usize],
                        ConvMode::Linear => {
                            if (0..len).contains(&idx) {
                                h[idx as usize]
                            } else {
                                0.0
                            }
                        }
                    };
                    hv * u[tau as usize]
                })
                .sum()
        })
        .collect()
}

#[test]
fn acceptance_01_fft_convolution_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    for len in 1..=128usize {
        for trial in 0..100 {
            let u: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let h: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mode = if trial % 2 == 0 {
                ConvMode::Circular
            } else {
                ConvMode::Linear
            };
            let got = conv_long(&Array::vector(&u), &Array::vector(&h), mode).unwrap();
            let want = direct_conv(&u, &h, mode);
            for (g, w) in got.data().iter().zip(&want) {
                assert!(
                    (g - w).abs() < 1e-9,
                    "L={len} trial={trial} mode={mode:?}: {g} vs {w}"
                );
            }
        }
    }
    pass("01 convolution oracle (L=1..128, 100 trials each, <1e-9)");
}

// ── 2. Hyena oracle ─────────────────────────────────────────────────────

fn hyena_oracle(p: &HyenaLayerParams, input: &Array) -> Array {
    let (s, d) = (input.shape()[0], input.shape()[1]);
    let project = |w: &Array, b: &Array| -> Vec<Vec<f64>> {
        (0..s)
            .map(|t| {
                (0..d)
                    .map(|j| {
                        let mut acc = b.data()[j];
                        for i in 0..d {
                            acc += input.at(t, i) * w.at(i, j);
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    };
    let mut z = project(&p.in_proj_w[0], &p.in_proj_b[0]);
    for r in 0..p.recurrence_depth() {
        let gate = project(&p.in_proj_w[r + 1], &p.in_proj_b[r + 1]);
        let filt = implicit_filter(&p.filters[r], s).unwrap();
        let mut next = vec![vec![0.0; d]; s];
        for c in 0..d {
            for t in 0..s {
                let mut acc = 0.0;
                for k in 0..2 * s - 1 {
                    let tau = k as isize - (s as isize - 1);
                    let src = t as isize - tau;
                    if (0..s as isize).contains(&src) {
                        acc += filt.at(k, c) * z[src as usize][c];
                    }
                }
                next[t][c] = gate[t][c] * acc;
            }
        }
        z = next;
    }
    let mut out = Array::zeros(vec![s, d]);
    for t in 0..s {
        for j in 0..d {
            let mut acc = p.out_b.data()[j];
            for i in 0..d {
                acc += z[t][i] * p.out_w.at(i, j);
            }
            out.data_mut()[t * d + j] = acc;
        }
    }
    out
}

#[test]
fn acceptance_02_hyena_forward_matches_literal_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    for seq in 1..=16usize {
        for _ in 0..5 {
            let p = HyenaLayerParams::init(3, 3, 6, 3, &mut rng);
            let input = Array::randn(vec![seq, 3], 1.0, &mut rng);
            let got = hyena_forward(&p, &input).unwrap();
            let want = hyena_oracle(&p, &input);
            assert!(
                got.max_abs_diff(&want) < 1e-9,
                "seq={seq}: max diff {}",
                got.max_abs_diff(&want)
            );
        }
    }
    pass("02 hyena oracle (L<=16, N=3, <1e-9)");
}

// ── 3. Gradient suite through the toy encoder ───────────────────────────

fn toy_model(l: usize, seed: u64) -> ModelParams {
    let schema = morphotr_core::dataio::FeatureSchema::from_names(
        (0..l).map(|i| format!("cells_ch{}_m{i:02}", i % 2)).collect(),
    )
    .unwrap();
    ModelParams::init(
        schema,
        vec!["source_1".into(), "source_2".into()],
        EncoderConfig {
            d_model: 4,
            n_blocks: 1,
            n_recurrences: 3,
            filter_hidden: 4,
            n_freqs: 2,
            mlp_ratio: 2,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn acceptance_03_gradient_suite_through_toy_encoder() {
    use morphotr_core::encoder::{forward_batch, BatchInput, ModelVars};
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    for l in 6..=8usize {
        let params = toy_model(l, 2000 + l as u64);
        let values: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..l).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let plans: Vec<MaskPlan> = values
            .iter()
            .map(|v| {
                let mut rng = ChaCha8Rng::seed_from_u64(l as u64);
                morphotr_core::training::plan_cwmm_mask(v, &params.schema, (0.5, 0.5), &mut rng)
                    .unwrap()
            })
            .collect();
        assert!(plans.iter().all(|p| !p.is_empty()));
        let arrays: Vec<Array> = params.collect().into_iter().map(|(_, a)| a.clone()).collect();
        let labels = vec![0usize, 0];

        // masked-reconstruction loss, contrastive loss, and their sum.
        for (name, with_cwmm, with_supcon) in
            [("cwmm", true, false), ("supcon", false, true), ("combined", true, true)]
        {
            let err = grad_check(&arrays, 1e-4, |g, vars| {
                let mv = ModelVars::from_vars(&params, vars.to_vec());
                let out = forward_batch(
                    g,
                    &mv,
                    &BatchInput {
                        values: values.clone(),
                        sources: vec![0, 1],
                        masks: Some(plans.iter().map(|p| p.flags(l)).collect()),
                    },
                    l,
                );
                let mut loss = g.constant(Array::scalar(0.0));
                if with_cwmm {
                    loss = loss.add(
                        &loss_cwmm_graph(g, &out.recon, &values, &plans, l).unwrap(),
                    );
                }
                if with_supcon {
                    loss = loss.add(&loss_supcon_graph(g, &out.cls, &labels, 0.1).unwrap());
                }
                loss
            })
            .unwrap();
            assert!(err < 1e-4, "L={l} {name}: grad err {err}");
        }
    }
    pass("03 gradient suite (cwmm, supcon, combined through toy encoder, <1e-4)");
}

#[test]
fn acceptance_03b_shallow_cwmm_gradcheck_at_small_step() {
    // The loss itself, differentiated w.r.t. a 5-feature prediction vector.
    let plan = MaskPlan {
        masked_by_group: vec![vec![0, 2], vec![3, 4]],
        p: 0.5,
    };
    let truth = vec![vec![0.6, -1.0, 2.0, 0.3, -0.7]];
    let preds = Array::new(vec![7, 1], vec![0.0, 0.0, 0.4, 9.0, 1.7, 0.2, -0.5]).unwrap();
    let err = grad_check(&[preds], 1e-5, |g, vars| {
        loss_cwmm_graph(g, &vars[0], &truth, &[plan.clone()], 5).unwrap()
    })
    .unwrap();
    assert!(err < 1e-4, "shallow cwmm grad err {err}");
    pass("03b shallow masked-loss gradient (step 1e-5, <1e-4)");
}

// ── 4. Loss oracles ─────────────────────────────────────────────────────

#[test]
fn acceptance_04_loss_fixtures() {
    let plan = MaskPlan {
        masked_by_group: vec![vec![0], vec![1, 2]],
        p: 0.3,
    };
    let loss = loss_cwmm(&[1.0, 2.0, 3.0], &[0.5, 2.0, 2.0], &plan).unwrap();
    assert!((loss - 0.375).abs() < 1e-12, "cwmm fixture {loss}");

    // Batch of three, labels {A, A, B}: direct evaluation of the
    // log-ratio sum.
    let rows = vec![
        vec![1.0, 0.0, 0.5],
        vec![0.8, 0.2, 0.4],
        vec![-0.3, 0.9, 0.1],
    ];
    let unit = |v: &Vec<f64>| -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    };
    let normed: Vec<Vec<f64>> = rows.iter().map(unit).collect();
    let sim = |i: usize, j: usize| -> f64 {
        normed[i].iter().zip(&normed[j]).map(|(a, b)| a * b).sum::<f64>() / 0.1
    };
    let labels = ["A", "A", "B"];
    let mut want = 0.0;
    for i in 0..3 {
        let pos: Vec<usize> = (0..3).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..3).filter(|&a| a != i).map(|a| sim(i, a).exp()).sum();
        for &p in &pos {
            want -= (sim(i, p).exp() / denom).ln() / pos.len() as f64;
        }
    }
    let got = loss_supcon(
        &Array::from_rows(&rows).unwrap(),
        &["A".into(), "A".into(), "B".into()],
        0.1,
    )
    .unwrap();
    assert!((got - want).abs() < 1e-9, "supcon {got} vs {want}");
    pass("04 loss oracles (cwmm fixture = 0.375, supcon batch-of-3 <1e-9)");
}

// ── 5. Aggregate arithmetic ─────────────────────────────────────────────

#[test]
fn acceptance_05_aggregate_reproduces_reference_rows() {
    let rows: Vec<(&str, [f64; 4], [f64; 5], [f64; 3])> = vec![
        (
            "baseline",
            [0.86, 0.93, 0.57, 0.40],
            [0.41, 0.20, 0.50, 0.48, 0.58],
            [0.69, 0.43, 0.56],
        ),
        (
            "combat",
            [0.85, 0.93, 0.56, 0.37],
            [0.39, 0.12, 0.50, 0.48, 0.58],
            [0.68, 0.41, 0.54],
        ),
        (
            "harmony",
            [0.93, 0.80, 0.57, 0.40],
            [0.42, 0.24, 0.50, 0.47, 0.58],
            [0.68, 0.44, 0.56],
        ),
    ];
    let tol = 0.005 + 1e-9;
    for (method, batch, bio, want) in rows {
        let report = aggregate(
            method,
            batch
                .iter()
                .enumerate()
                .map(|(i, &v)| (BATCH_METRIC_NAMES[i].to_string(), v))
                .collect(),
            bio.iter()
                .enumerate()
                .map(|(i, &v)| (BIO_METRIC_NAMES[i].to_string(), v))
                .collect(),
        )
        .unwrap();
        assert!((report.batch_aggregate() - want[0]).abs() <= tol, "{method} batch");
        assert!((report.bio_aggregate() - want[1]).abs() <= tol, "{method} bio");
        assert!(
            (report.overall() - want[2]).abs() <= tol,
            "{method} overall {} vs {}",
            report.overall(),
            want[2]
        );
    }
    pass("05 aggregate arithmetic (reference rows within ±0.005)");
}

// ── 6. Metric oracles on small fixtures ─────────────────────────────────

#[test]
fn acceptance_06_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);

    // Graph connectivity vs union-find on a 40-point instance.
    let matrix: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    let labels: Vec<String> = (0..40).map(|_| format!("l{}", rng.gen_range(0..3))).collect();
    let adj = knn_adjacency(&matrix, 4).unwrap();
    let mut per_label = Vec::new();
    for l in ["l0", "l1", "l2"] {
        let members: Vec<usize> = (0..40).filter(|&i| labels[i] == l).collect();
        if members.len() < 2 {
            continue;
        }
        // Union-find.
        let mut parent: Vec<usize> = (0..40).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        let set: std::collections::HashSet<usize> = members.iter().copied().collect();
        for &u in &members {
            for &v in &adj[u] {
                if set.contains(&v) {
                    let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                    if ru != rv {
                        parent[ru] = rv;
                    }
                }
            }
        }
        let mut counts = std::collections::HashMap::new();
        for &u in &members {
            *counts.entry(find(&mut parent, u)).or_insert(0usize) += 1;
        }
        per_label.push(*counts.values().max().unwrap() as f64 / members.len() as f64);
    }
    let want = per_label.iter().sum::<f64>() / per_label.len() as f64;
    let got = graph_connectivity(&matrix, &labels, 4).unwrap();
    assert_eq!(got, want, "graph connectivity vs union-find oracle");

    // Silhouette vs the textbook O(n²) evaluation on 30 points.
    let m30: Vec<Vec<f64>> = (0..30)
        .map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let l30: Vec<String> = (0..30).map(|_| format!("c{}", rng.gen_range(0..3))).collect();
    let got = silhouette_samples(&m30, &l30).unwrap();
    for (i, g) in got.iter().enumerate() {
        let own: Vec<usize> = (0..30).filter(|&j| j != i && l30[j] == l30[i]).collect();
        let dist = |a: usize, b: usize| -> f64 {
            m30[a].iter().zip(&m30[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        let w = if own.is_empty() {
            0.0
        } else {
            let a = own.iter().map(|&j| dist(i, j)).sum::<f64>() / own.len() as f64;
            let mut others: Vec<&String> = l30.iter().filter(|l| **l != l30[i]).collect();
            others.sort();
            others.dedup();
            let b = others
                .iter()
                .map(|l| {
                    let mem: Vec<usize> = (0..30).filter(|&j| &l30[j] == *l).collect();
                    mem.iter().map(|&j| dist(i, j)).sum::<f64>() / mem.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            (b - a) / a.max(b)
        };
        assert!((g - w).abs() < 1e-9, "silhouette sample {i}");
    }

    // NMI/ARI vs direct probability/pair-count evaluation on 20 points.
    let a = vec![0usize, 0, 0, 1, 1, 1, 2, 2, 0, 1, 2, 2, 0, 1, 1, 2, 0, 0, 2, 1];
    let b = vec![1usize, 1, 0, 1, 2, 2, 2, 0, 0, 1, 2, 2, 1, 0, 1, 2, 0, 1, 0, 1];
    let n = a.len();
    let (mut both, mut only_a, mut only_b) = (0.0, 0.0, 0.0);
    let mut total_pairs = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total_pairs += 1.0;
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                _ => {}
            }
        }
    }
    let expected = (both + only_a) * (both + only_b) / total_pairs;
    let max_index = 0.5 * ((both + only_a) + (both + only_b));
    let want_ari = (both - expected) / (max_index - expected);
    assert!((ari(&a, &b) - want_ari).abs() < 1e-9, "ari oracle");

    let mut joint = vec![vec![0.0; 3]; 3];
    for (&x, &y) in a.iter().zip(&b) {
        joint[x][y] += 1.0 / n as f64;
    }
    let pa: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let pb: Vec<f64> = (0..3).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for x in 0..3 {
        for y in 0..3 {
            if joint[x][y] > 0.0 {
                mi += joint[x][y] * (joint[x][y] / (pa[x] * pb[y])).ln();
            }
        }
    }
    let h = |p: &[f64]| -> f64 { p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum() };
    let want_nmi = 2.0 * mi / (h(&pa) + h(&pb));
    assert!((nmi(&a, &b) - want_nmi).abs() < 1e-9, "nmi oracle");

    // Retrieval: replicates strictly closer than negatives → mAP = 1.
    let rows = vec![
        vec![1.0, 0.0],
        vec![0.99, 0.05],
        vec![0.98, -0.04],
        vec![0.0, 1.0],
        vec![0.05, 0.99],
    ];
    let table = EmbeddingTable {
        matrix: rows,
        batch: vec!["b".into(); 5],
        source: vec!["s".into(); 5],
        bio: vec!["A".into(), "A".into(), "A".into(), "DMSO".into(), "DMSO".into()],
        compound: vec!["A".into(), "A".into(), "A".into(), "DMSO".into(), "DMSO".into()],
        plate: vec!["p".into(); 5],
        well: (0..5).map(|i| format!("W{i}")).collect(),
        control: vec![false, false, false, true, true],
    };
    assert_eq!(mean_average_precision(&table, MapMode::Control).unwrap().map, 1.0);

    pass("06 metric oracles (connectivity exact, silhouette/NMI/ARI <1e-9, mAP fixture)");
}

// ── 7. Planted-effect recovery ──────────────────────────────────────────

#[test]
fn acceptance_07_combat_recovers_planted_effects() {
    let (data, truth) = generate_synthetic(&SynthConfig {
        n_sources: 2,
        plates_per_source: 1,
        wells_per_plate: 500,
        controls_per_plate: 50,
        n_compounds: 20,
        n_moas: 5,
        n_features: 30,
        n_groups: 5,
        bio_effect: 1.0,
        gamma_shift: 2.0,
        delta_scale: 1.5,
        noise: 0.2,
        seed: 1007,
    })
    .unwrap();
    assert_eq!(truth.plate_effects[1].gamma, 2.0);
    assert_eq!(truth.plate_effects[1].delta, 1.5);

    let x = data.matrix();
    let batches: Vec<String> = data.profiles.iter().map(|p| p.source.clone()).collect();
    let (corrected, model) = combat_fit_transform(&x, &batches).unwrap();

    let f = x[0].len();
    let shift: f64 = (0..f)
        .map(|ft| model.location_shift_raw(1, ft) - model.location_shift_raw(0, ft))
        .sum::<f64>()
        / f as f64;
    assert!(
        (shift - 2.0).abs() / 2.0 < 0.10,
        "estimated location shift {shift} vs planted 2.0"
    );

    let uncorrected = batch_classifier_score(&x, &batches, 15, 5).unwrap();
    let corrected_score = batch_classifier_score(&corrected, &batches, 15, 5).unwrap();
    assert!(
        corrected_score - uncorrected >= 0.2,
        "classifier score improved only {uncorrected} -> {corrected_score}"
    );
    pass("07 planted-effect recovery (γ̂ within 10%, classifier score +0.2)");
}

// ── 8 & 9. Curriculum benchmark (shared fixture) ────────────────────────

struct CurriculumFixture {
    reports: Vec<MetricReport>,
    elapsed_secs: f64,
    model: ModelParams,
    preprocessed: Dataset,
}

fn benchmark_config() -> SynthConfig {
    SynthConfig {
        n_sources: 3,
        plates_per_source: 2,
        wells_per_plate: 336,
        controls_per_plate: 34,
        n_compounds: 40,
        n_moas: 8,
        n_features: 200,
        n_groups: 10,
        bio_effect: 1.5,
        gamma_shift: 2.5,
        delta_scale: 1.3,
        noise: 0.8,
        seed: 777,
    }
}

fn encoder_benchmark_config() -> EncoderConfig {
    EncoderConfig {
        d_model: 32,
        n_blocks: 2,
        n_recurrences: 3,
        filter_hidden: 16,
        n_freqs: 4,
        mlp_ratio: 2,
    }
}

fn stage_configs() -> [TrainConfig; 3] {
    let mut s1 = TrainConfig::stage_defaults(1).unwrap();
    // Desk-scale schedule: the canonical learning rates assume orders of
    // magnitude more optimizer steps; scale them up so lr × steps stays
    // comparable while epochs stay small.
    s1.learning_rate = 1e-3;
    s1.epochs = 3;
    s1.seed = 101;
    let mut s2 = TrainConfig::stage_defaults(2).unwrap();
    s2.learning_rate = 3e-4;
    s2.epochs = 5;
    s2.seed = 102;
    let mut s3 = TrainConfig::stage_defaults(3).unwrap();
    s3.learning_rate = 3e-4;
    s3.epochs = 5;
    s3.seed = 103;
    [s1, s2, s3]
}

fn curriculum_fixture() -> &'static CurriculumFixture {
    static FIXTURE: OnceLock<CurriculumFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        let (raw, _) = generate_synthetic(&benchmark_config()).unwrap();
        let (data, _) = preprocess(&raw).unwrap();
        let result = run_curriculum(&data, encoder_benchmark_config(), &stage_configs(), 4242)
            .unwrap();
        let metric_cfg = MetricConfig::default();
        let mut reports = Vec::new();
        for (i, stage) in result.stages.iter().enumerate() {
            let emb = encode_dataset(&stage.params, &data, 64, None).unwrap();
            let table = EmbeddingTable::new(&data, emb, BatchKey::Source).unwrap();
            let report =
                compute_report(&table, &format!("encoder_stage{}", i + 1), &metric_cfg).unwrap();
            reports.push(report);
        }
        let elapsed_secs = start.elapsed().as_secs_f64();
        CurriculumFixture {
            reports,
            elapsed_secs,
            model: result.stages.last().unwrap().params.clone(),
            preprocessed: data,
        }
    })
}

#[test]
fn acceptance_08_curriculum_stage_ordering() {
    let fx = curriculum_fixture();
    let [s1, s2, s3] = [&fx.reports[0], &fx.reports[1], &fx.reports[2]];
    eprintln!(
        "  stage1 batch {:.3} bio {:.3} | stage2 batch {:.3} bio {:.3} | stage3 batch {:.3} bio {:.3}",
        s1.batch_aggregate(),
        s1.bio_aggregate(),
        s2.batch_aggregate(),
        s2.bio_aggregate(),
        s3.batch_aggregate(),
        s3.bio_aggregate()
    );
    assert!(
        s3.batch_aggregate() >= s2.batch_aggregate(),
        "stage-3 batch aggregate {} < stage-2 {}",
        s3.batch_aggregate(),
        s2.batch_aggregate()
    );
    assert!(
        s2.bio_aggregate() >= s1.bio_aggregate(),
        "stage-2 bio aggregate {} < stage-1 {}",
        s2.bio_aggregate(),
        s1.bio_aggregate()
    );
    assert!(
        fx.elapsed_secs < 1800.0,
        "curriculum benchmark took {:.0}s",
        fx.elapsed_secs
    );
    pass("08 curriculum ordering (batch: s3>=s2, bio: s2>=s1, <30 min)");
}

#[test]
fn acceptance_09_out_of_distribution_path() {
    let fx = curriculum_fixture();
    let model = &fx.model;

    // A foreign dataset: new sources, 30% feature overlap by name.
    let (mut ood_raw, _) = generate_synthetic(&SynthConfig {
        n_sources: 2,
        plates_per_source: 1,
        wells_per_plate: 250,
        controls_per_plate: 25,
        n_compounds: 20,
        n_moas: 8,
        bio_effect: 1.5,
        gamma_shift: 1.5,
        delta_scale: 1.2,
        noise: 0.8,
        seed: 9090,
        ..benchmark_config()
    })
    .unwrap();
    for p in &mut ood_raw.profiles {
        p.source = p.source.replace("source", "lab");
        p.plate = p.plate.replace("source", "lab");
    }
    // Keep 30% of the names; disguise the rest.
    let names: Vec<String> = ood_raw
        .schema
        .names()
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if i % 10 < 3 {
                n.clone()
            } else {
                format!("foreign_ch{}_m{i:03}", i % 7)
            }
        })
        .collect();
    let groups = ood_raw.schema.groups().to_vec();
    let schema = morphotr_core::dataio::FeatureSchema::new(names, groups).unwrap();
    let ood = Dataset::new(schema, ood_raw.profiles).unwrap();

    let (ood_pre, _) = preprocess(&ood).unwrap();
    let (aligned, report) =
        morphotr_core::dataio::align_features(&ood_pre, &model.schema).unwrap();
    assert_eq!(report.matched, 60, "expected 30% of 200 features to match");

    // Proxy source token: the first training source.
    let emb = encode_dataset(model, &aligned, 64, Some(0)).unwrap();
    assert!(emb.iter().flatten().all(|v| v.is_finite()));

    let cfg = MetricConfig::default();
    let corrected = EmbeddingTable::new(&aligned, emb, BatchKey::Source).unwrap();
    let corrected_report = compute_report(&corrected, "encoder_ood", &cfg).unwrap();
    let baseline = EmbeddingTable::from_features(&aligned, BatchKey::Source).unwrap();
    let baseline_report = compute_report(&baseline, "identity_ood", &cfg).unwrap();
    eprintln!(
        "  ood batch aggregate: encoder {:.3} vs baseline {:.3}",
        corrected_report.batch_aggregate(),
        baseline_report.batch_aggregate()
    );
    assert!(
        corrected_report.batch_aggregate() >= baseline_report.batch_aggregate(),
        "encoder {} < baseline {}",
        corrected_report.batch_aggregate(),
        baseline_report.batch_aggregate()
    );
    pass("09 OOD path (30% overlap, proxy source, finite embeddings, batch agg >= baseline)");
}

// ── 10. Determinism ─────────────────────────────────────────────────────

#[test]
fn acceptance_10_every_stage_is_bit_reproducible() {
    let config = SynthConfig {
        n_sources: 2,
        plates_per_source: 1,
        wells_per_plate: 40,
        controls_per_plate: 6,
        n_compounds: 8,
        n_moas: 3,
        n_features: 12,
        n_groups: 3,
        seed: 313,
        ..SynthConfig::default()
    };
    let (d1, t1) = generate_synthetic(&config).unwrap();
    let (d2, t2) = generate_synthetic(&config).unwrap();
    assert_eq!(d1, d2);
    assert_eq!(t1, t2);

    let (p1, _) = preprocess(&d1).unwrap();
    let (p2, _) = preprocess(&d2).unwrap();
    assert_eq!(p1, p2);

    let enc = EncoderConfig {
        d_model: 8,
        n_blocks: 1,
        n_recurrences: 2,
        filter_hidden: 4,
        n_freqs: 2,
        mlp_ratio: 2,
    };
    let mut train_cfg = TrainConfig::stage_defaults(1).unwrap();
    train_cfg.epochs = 2;
    train_cfg.seed = 7;
    let run = || -> ModelParams {
        let mut m = ModelParams::init(p1.schema.clone(), p1.sources(), enc, 55).unwrap();
        run_stage(&mut m, &p1, &train_cfg).unwrap();
        m
    };
    let m1 = run();
    let m2 = run();
    assert_eq!(m1, m2);

    let e1 = encode_dataset(&m1, &p1, 16, None).unwrap();
    let e2 = encode_dataset(&m2, &p2, 16, None).unwrap();
    assert_eq!(e1, e2);

    let table1 = EmbeddingTable::new(&p1, e1, BatchKey::Source).unwrap();
    let table2 = EmbeddingTable::new(&p2, e2, BatchKey::Source).unwrap();
    let cfg = MetricConfig::default();
    // Tiny fixture: fall back to plate-free metrics with smaller k.
    let small = MetricConfig {
        graph_k: 5,
        classifier_k: 5,
        classifier_folds: 3,
        ..cfg
    };
    let r1 = compute_report(&table1, "m", &small).unwrap();
    let r2 = compute_report(&table2, "m", &small).unwrap();
    assert_eq!(r1, r2);

    let dir = tempfile::tempdir().unwrap();
    let (f1, f2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    morphotr_core::dataio::save_csv(&p1, &f1).unwrap();
    morphotr_core::dataio::save_csv(&p2, &f2).unwrap();
    assert_eq!(std::fs::read(f1).unwrap(), std::fs::read(f2).unwrap());

    // Batching and masking under a fixed seed.
    let mut rng_a = ChaCha8Rng::seed_from_u64(99);
    let mut rng_b = ChaCha8Rng::seed_from_u64(99);
    let ba = morphotr_core::training::make_batches(&p1, BatchPolicy::MixedSource, 8, &mut rng_a)
        .unwrap();
    let bb = morphotr_core::training::make_batches(&p1, BatchPolicy::MixedSource, 8, &mut rng_b)
        .unwrap();
    assert_eq!(ba, bb);
    let la = label_ids(&p1.profiles.iter().map(|p| p.compound.clone()).collect::<Vec<_>>());
    assert_eq!(la.len(), p1.len());

    pass("10 determinism (generate, preprocess, train, encode, evaluate, serialize)");
}
