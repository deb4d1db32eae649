//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs everything; pass criterion numbers
//! (`cargo test --test acceptance -- 3 7`) to run a subset. The process
//! fails when a criterion fails that is not listed in `KNOWN_FAILURES`.

use std::path::Path;
use std::time::Instant;

use chrono::NaiveDate;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use infoflow::config::RunConfig;
use infoflow::dataset::{build_dataset, make_windows, DateSegments, SplitPlan};
use infoflow::knn::{chebyshev, KdTree, PointSet};
use infoflow::ksg::{ksg_conditional_mi, ksg_entropy, ksg_mutual_info, transfer_entropy, EmbeddingConfig};
use infoflow::metrics::{evaluate, pairwise_auc, report, roc_auc, ConfusionMatrix};
use infoflow::net::gradcheck::check_gradients;
use infoflow::net::train::binary_accuracy;
use infoflow::net::{train, AmsGrad, Network, NetworkSpec, Preset, TrainConfig};
use infoflow::oracle::{analytic_te, sign_task, simulate, synthetic_price_panel, SourceModel, Var1Spec};
use infoflow::panel::{daily_calendar, Panel};
use infoflow::pipeline;
use infoflow::prep::{describe, log_return, StatsSummary};
use infoflow::select::{select_features, Correction, GridSpec, SigParams};
use infoflow::sig::{permutation_test, permutation_test_dense};

/// Criteria that cannot hold as stated. Each entry is explained in the
/// README.
const KNOWN_FAILURES: &[usize] = &[];

type Outcome = (bool, String);

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c1_entropy() -> Outcome {
    let exact = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let t = Instant::now();
    let estimates: Vec<f64> = (0..10)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ksg_entropy(&PointSet::new(gaussian(2000, &mut rng), 1).unwrap(), 4).unwrap()
        })
        .collect();
    let secs = t.elapsed().as_secs_f64();
    let mean = estimates.iter().sum::<f64>() / 10.0;
    (
        (mean - exact).abs() <= 0.05 && secs < 5.0,
        format!("mean {mean:.4} vs {exact:.4}, {secs:.2} s"),
    )
}

fn c2_mutual_info() -> Outcome {
    let mi = |rho: f64, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(5000, &mut rng);
        let w = gaussian(5000, &mut rng);
        let y: Vec<f64> = z.iter().zip(&w).map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b).collect();
        ksg_mutual_info(&PointSet::new(z, 1).unwrap(), &PointSet::new(y, 1).unwrap(), 4)
            .unwrap()
            .global
    };
    // One draw has a spread of about 0.015 nats at this size, so the
    // estimator is judged by its mean over 10 seeds.
    let mean = |rho: f64| (0..10).map(|seed| mi(rho, 20 * seed + u64::from(rho > 0.0))).sum::<f64>() / 10.0;
    let exact = -0.5 * (1.0_f64 - 0.36).ln();
    let coupled = mean(0.6);
    let null = mean(0.0);
    (
        (coupled - exact).abs() <= 0.02 && null.abs() < 0.01,
        format!("mean of 10 seeds, rho=0.6: {coupled:.4} vs {exact:.5}; rho=0: {null:.4}"),
    )
}

fn c3_te_oracle() -> Outcome {
    let spec = Var1Spec::new(0.5, 0.5, 0.5, SourceModel::IidNormal).unwrap();
    let truth = analytic_te(&spec).unwrap();
    let cfg = EmbeddingConfig::new(1, 1, 4);
    let medians: Vec<f64> = [500, 2000, 8000]
        .iter()
        .map(|&n| {
            median(
                (0..10)
                    .map(|seed| {
                        let (x, y) = simulate(&spec, n, 100 + seed).unwrap();
                        (transfer_entropy(&x, &y, &cfg).unwrap().global - truth).abs()
                    })
                    .collect(),
            )
        })
        .collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    (
        (truth - 0.34657).abs() < 1e-5 && medians[2] < 0.03 && decreasing,
        format!("analytic {truth:.5}; median |error| at 500/2000/8000: {medians:.4?}"),
    )
}

fn c4_local_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    let mut checked = 0;
    for (b, seed) in [(0.8, 1), (0.5, 2), (0.0, 3)] {
        let spec = Var1Spec::new(0.5, b, 0.5, SourceModel::IidNormal).unwrap();
        let (x, y) = simulate(&spec, 600, seed).unwrap();
        for (k, l, kk) in [(1, 1, 4), (2, 1, 3), (1, 3, 1), (3, 2, 8)] {
            let e = transfer_entropy(&x, &y, &EmbeddingConfig::new(k, l, kk)).unwrap();
            let mean = e.locals.iter().sum::<f64>() / e.locals.len() as f64;
            worst = worst.max((mean - e.global).abs());
            negative += e.locals.iter().filter(|v| **v < 0.0).count();
            checked += 1;
        }
        let set = |v: &[f64]| PointSet::new(v.to_vec(), 1).unwrap();
        let m = ksg_mutual_info(&set(&x), &set(&y), 4).unwrap();
        worst = worst.max((m.locals.iter().sum::<f64>() / m.locals.len() as f64 - m.global).abs());
        let c = ksg_conditional_mi(&set(&x[1..]), &set(&y[..599]), &set(&x[..599]), 4).unwrap();
        worst = worst.max((c.locals.iter().sum::<f64>() / c.locals.len() as f64 - c.global).abs());
        checked += 2;
    }
    (
        worst <= 1e-10 && negative > 0,
        format!("{checked} estimates, max |mean(local) - global| {worst:.1e}, {negative} negative locals"),
    )
}

fn c5_permutation() -> Outcome {
    let cfg = EmbeddingConfig::new(1, 1, 4);
    let null = Var1Spec::new(0.5, 0.0, 0.5, SourceModel::IidNormal).unwrap();
    let rejected = (0..200)
        .filter(|&trial| {
            let (x, y) = simulate(&null, 200, 1000 + trial).unwrap();
            permutation_test_dense(&x, &y, &cfg, 100, 0.05, trial, &Default::default())
                .unwrap()
                .significant
        })
        .count();
    let rate = rejected as f64 / 200.0;
    let coupled = Var1Spec::new(0.5, 0.8, 0.5, SourceModel::IidNormal).unwrap();
    let seeds = 20;
    let minimal = (0..seeds)
        .filter(|&seed| {
            let (x, y) = simulate(&coupled, 3000, 2000 + seed).unwrap();
            permutation_test(&x, &y, &cfg, 100, 0.05, seed).unwrap().p_value == 1.0 / 101.0
        })
        .count();
    (
        (0.01..=0.10).contains(&rate) && minimal as f64 >= 0.95 * seeds as f64,
        format!("null rejection rate {rate:.3}; coupled p = 1/101 in {minimal}/{seeds} seeds"),
    )
}

fn c6_selection() -> Outcome {
    let grid = GridSpec::full();
    let candidates: Vec<String> = ["coupled", "noise1", "noise2"].map(String::from).to_vec();
    let start = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
    let mut passed = 0;
    let mut full_grids = true;
    let mut misses = Vec::new();
    for seed in 0..20 {
        let prices = synthetic_price_panel(0.8, 2, 150, start, seed).unwrap();
        let names = prices.names().to_vec();
        let returns: Vec<Vec<f64>> = names.iter().map(|n| log_return(&prices.values(n).unwrap()).unwrap()).collect();
        let panel = Panel::from_complete(prices.dates()[1..].to_vec(), names, returns).unwrap();
        let sig = SigParams { seed, correction: Correction::Pooled, ..SigParams::default() };
        let sel = select_features(&panel, "target", &candidates, &grid, &sig).unwrap();
        full_grids &= sel.grids.iter().all(|g| g.cells.len() == 1000);
        let chosen = sel.features.selected_drivers();
        if chosen == ["coupled"] {
            passed += 1;
        } else {
            misses.push(format!("seed {seed}: {chosen:?}"));
        }
    }
    (
        passed >= 18 && full_grids && grid.cell_count() == 1000,
        format!("{passed}/20 seeds select exactly the coupled driver, 1000 cells per driver {misses:?}"),
    )
}

fn c7_knn() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut queries = 0;
    let mut mismatches = 0;
    while queries < 10_000 {
        let n = rng.random_range(2..=2000);
        let dim = rng.random_range(1..=8);
        // Coarse values half the time, so ties are common.
        let coarse = rng.random_bool(0.5);
        let data: Vec<f64> = (0..n * dim)
            .map(|_| {
                let v: f64 = rng.random_range(-1.0..1.0);
                if coarse {
                    (v * 4.0).round() / 4.0
                } else {
                    v
                }
            })
            .collect();
        let tree = KdTree::build(PointSet::new(data, dim).unwrap());
        let pts = tree.points();
        for _ in 0..500 {
            let i = rng.random_range(0..n);
            let k = rng.random_range(1..=(n - 1).min(10));
            let mut brute: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (chebyshev(pts.point(i), pts.point(j)), j)).collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            brute.truncate(k);
            let r = brute[k - 1].0;
            let open = (0..n).filter(|&j| j != i && chebyshev(pts.point(i), pts.point(j)) < r).count();
            let closed = (0..n).filter(|&j| j != i && chebyshev(pts.point(i), pts.point(j)) <= r).count();
            let same = tree.k_nearest(i, k).unwrap() == brute
                && tree.count_within(i, r, true).unwrap() == open
                && tree.count_within(i, r, false).unwrap() == closed;
            mismatches += usize::from(!same);
            queries += 1;
        }
    }
    (mismatches == 0, format!("{queries} queries, {mismatches} mismatches"))
}

fn c8_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: (f64, String) = (0.0, String::new());
    let (mut checked, mut kinks) = (0, 0);
    let mut run = |spec: &NetworkSpec, window: usize, features: usize, dropout: Option<u64>, label: String| {
        let x = Array3::from_shape_fn((3, window, features), |_| rng.random_range(-1.0..1.0));
        let net = Network::new(spec, window, features, 1).unwrap();
        let r = check_gradients(&net, x.view(), &[1.0, 0.0, 1.0], dropout, 12, 3).unwrap();
        checked += r.checked;
        kinks += r.kinks;
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, label);
        }
    };
    let layers = [
        "flatten dense(1,sigmoid)",
        "lstm(3) dense(1,sigmoid)",
        "lstm(3,seq) flatten dense(1,sigmoid)",
        "bilstm(2) dense(1,sigmoid)",
        "bilstm(2,seq) flatten dense(1,sigmoid)",
        "conv1d(3,2) flatten dense(1,sigmoid)",
        "conv1d(3,2) maxpool(2) flatten dense(1,sigmoid)",
        "lstm(3) dense(4,relu) dense(1,sigmoid)",
        "lstm(3) dense(4,linear) dense(1,sigmoid)",
        "lstm(3,seq) dropout(0.5) flatten dense(1,sigmoid)",
    ];
    for text in layers {
        let dropout = text.contains("dropout").then_some(11);
        run(&NetworkSpec::parse(text).unwrap(), 6, 2, dropout, text.to_string());
    }
    for p in Preset::ALL {
        run(&p.spec(0.5), 14, 2, Some(12), p.to_string());
    }
    (
        worst.0 < 1e-4,
        format!(
            "{} layer stacks and {} presets, {checked} coordinates ({kinks} skipped at kinks), max relative error {:.2e} ({})",
            layers.len(),
            Preset::ALL.len(),
            worst.0,
            worst.1
        ),
    )
}

fn c9_optimizer() -> Outcome {
    let mut params = vec![Array2::from_elem((1, 1), 0.5)];
    let mut opt = AmsGrad::new(&params);
    opt.update(&mut params, &[Array2::from_elem((1, 1), 1.0)], 0.001);
    // m̂ = 1, v̂ = 1: θ₁ = θ₀ − 0.001 / (1 + 1e-8).
    let expected = 0.5 - 0.001 / (1.0 + 1e-8);
    let first = (params[0][[0, 0]] - expected).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = vec![Array2::zeros((3, 4)), Array2::zeros((1, 5))];
    let mut opt = AmsGrad::new(&params);
    let mut monotone = true;
    for _ in 0..1000 {
        let scale = 10f64.powf(rng.random_range(-3.0..2.0));
        let grads: Vec<Array2<f64>> =
            params.iter().map(|p| p.mapv(|_| scale * rng.random_range(-1.0..1.0))).collect();
        let before = opt.v_max.clone();
        opt.update(&mut params, &grads, 0.01);
        for (k, vm) in opt.v_max.iter().enumerate() {
            monotone &= vm.iter().zip(&before[k]).all(|(a, b)| a >= b);
            monotone &= vm.iter().zip(&opt.v[k]).all(|(a, v)| a >= v);
        }
    }
    (
        first <= 1e-12 && monotone,
        format!("first step error {first:.1e}; v-hat non-decreasing over 1000 steps: {monotone}"),
    )
}

fn c10_metrics() -> Outcome {
    let r = report(&ConfusionMatrix { tp: 3, tn: 2, fp: 1, fn_: 2 });
    let expected = [
        (r.acc, 0.625),
        (r.tpr, 0.6),
        (r.tnr, 2.0 / 3.0),
        (r.ppv, 0.75),
        (r.for_rate, 0.5),
        (r.ba, 19.0 / 30.0),
        (r.f1, 2.0 / 3.0),
    ];
    let hand = expected.iter().all(|(v, e)| v.is_some_and(|v| (v - e).abs() <= 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut exact = true;
    for _ in 0..500 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        exact &= roc_auc(&scores, &labels).unwrap() == pairwise_auc(&scores, &labels);
    }
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
    let null = evaluate(&scores, &labels).unwrap().auc.unwrap();
    (
        hand && exact && (null - 0.5).abs() <= 0.02,
        format!("hand example exact: {hand}; AUC = pairwise on 500 cases: {exact}; null AUC {null:.4}"),
    )
}

fn c11_learning() -> Outcome {
    let t = Instant::now();
    let mut passed = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let (x, y) = sign_task(256, 8, 40 + 2 * seed);
        let (vx, vy) = sign_task(128, 8, 41 + 2 * seed);
        let cfg = TrainConfig { max_epochs: 50, patience: 50, seed, ..TrainConfig::default() };
        let m = train(&Preset::D2.spec(0.5), x.view(), &y, vx.view(), &vy, &cfg).unwrap();
        let train_acc = binary_accuracy(&m.network.predict(x.view()).unwrap(), &y);
        let val_acc = m.best().val_acc;
        passed += usize::from(train_acc >= 0.95 && val_acc >= 0.9);
        detail.push(format!("{train_acc:.2}/{val_acc:.2}"));
    }
    let secs = t.elapsed().as_secs_f64();
    (
        passed >= 9 && secs < 120.0,
        format!("{passed}/10 seeds (train/val {}), {secs:.1} s", detail.join(" ")),
    )
}

fn c12_windowing() -> Outcome {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let dates = daily_calendar(start, start + chrono::Days::new(99));
    let p = Panel::from_complete(dates, vec!["x".into()], vec![(0..100).map(|t| (t as f64).cos()).collect()]).unwrap();
    let small = make_windows(&p, "x", 10, 1).unwrap().len();

    let prices = daily_calendar(NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(), NaiveDate::from_ymd_opt(2021, 1, 9).unwrap());
    let n = prices.len() - 1;
    let panel = Panel::from_complete(prices[1..].to_vec(), vec!["x".into()], vec![(0..n).map(|t| (t as f64).sin()).collect()])
        .unwrap();
    let ds = build_dataset(&panel, "x", &["x".into()], 74, 1, &SplitPlan::Dates(DateSegments::paper()), true).unwrap();
    let sizes = ds.split().unwrap().sizes();
    (
        small == 90 && sizes == [1024, 114, 107],
        format!("100/10/1 -> {small} samples; calendar split {sizes:?}"),
    )
}

fn run_pipeline(config: &Path, out: &Path, workers: usize) {
    let text = std::fs::read_to_string(config).unwrap();
    let mut cfg = RunConfig::from_toml(&text, None).unwrap();
    cfg.workers = workers;
    cfg.out = out.to_path_buf();
    cfg.validate().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
    pool.install(|| {
        pipeline::write_effective_config(&cfg).unwrap();
        pipeline::cmd_prep(&cfg).unwrap();
        pipeline::cmd_select(&cfg).unwrap();
        pipeline::cmd_train(&cfg).unwrap();
        pipeline::cmd_evaluate(&cfg).unwrap();
        pipeline::cmd_report(&cfg).unwrap();
    });
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&path).unwrap();
            if rel == pipeline::EFFECTIVE_CONFIG {
                // Records the worker count and output path; compare its header.
                let text = String::from_utf8(bytes).unwrap();
                bytes = text.lines().next().unwrap().as_bytes().to_vec();
            }
            out.push((rel, bytes));
        }
    }
    out.sort();
    out
}

fn c13_reproducibility() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let csv = tmp.path().join("prices.csv");
    let prices = synthetic_price_panel(0.8, 2, 260, NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(), 3).unwrap();
    prices.write(&csv, None).unwrap();
    let config = tmp.path().join("run.toml");
    let text = format!(
        "defaults = \"smoke\"\nseed = 4\n\n[data]\ninput = {:?}\ntarget = \"target\"\n\n[experiment]\ndesigns = [\"D2\", \"D5\"]\nscenarios = [\"S1\", \"S3\", \"S5\"]\nlearning_rate = [0.01, 0.001]\n",
        csv.to_str().unwrap()
    );
    std::fs::write(&config, text).unwrap();
    let runs = [(1, "a"), (2, "b"), (1, "c"), (3, "d")];
    let outputs: Vec<_> = runs
        .iter()
        .map(|(w, name)| {
            let out = tmp.path().join(name);
            run_pipeline(&config, &out, *w);
            files(&out)
        })
        .collect();
    let identical = outputs.iter().all(|o| *o == outputs[0]);
    (
        identical && outputs[0].len() > 10,
        format!("{} files, byte-identical over reruns at 1, 2 and 3 workers: {identical}", outputs[0].len()),
    )
}

fn c14_statistics() -> Outcome {
    let n = 1469;
    let calm = (0..100)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            describe(&gaussian(n, &mut rng)).unwrap().jb_pvalue > 0.10
        })
        .count();
    // United Nations row: S = 0.1748, excess kurtosis = 0.2747, JB 11.9228.
    let un = StatsSummary::from_moments(n, 0.0007, 3.2689, 0.1748, 0.2747);
    let rel = (un.jb - 11.9228).abs() / 11.9228;
    (
        calm >= 95 && rel <= 0.02,
        format!("normal panel non-significant at 10% in {calm}/100 seeds; UN JB {:.4} ({:.2}% off)", un.jb, 100.0 * rel),
    )
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 14] = [
        (1, "KSG entropy", c1_entropy),
        (2, "KSG mutual information", c2_mutual_info),
        (3, "TE oracle", c3_te_oracle),
        (4, "local identity", c4_local_identity),
        (5, "permutation calibration", c5_permutation),
        (6, "selection pipeline", c6_selection),
        (7, "kNN correctness", c7_knn),
        (8, "gradient checks", c8_gradients),
        (9, "optimizer", c9_optimizer),
        (10, "metrics", c10_metrics),
        (11, "learning sanity", c11_learning),
        (12, "windowing arithmetic", c12_windowing),
        (13, "reproducibility", c13_reproducibility),
        (14, "statistics", c14_statistics),
    ];
    // Ignore libtest-style flags cargo may pass through.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = check();
        let status = if ok { "PASS" } else { "FAIL" };
        println!("{status} {id:2} {name}: {detail} [{:.1} s]", t.elapsed().as_secs_f64());
        if !ok && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        println!("no unexpected failures (known: {KNOWN_FAILURES:?})");
    } else {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
