//! Acceptance suite: every headline claim of the toolkit, one test per
//! criterion, each printing a `[PASS]` line with the measured numbers.
//! Accuracy thresholds, stability contrasts, the gradient oracle, the
//! structural-invariant battery, the LoDOG brute-force check, and the
//! performance bounds are all pinned here.

use std::path::PathBuf;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use delala::bench::run;
use delala::config::{ExperimentConfig, Pipeline};
use delala::dataset::{
    gaussian_kernel, load_csv, pairwise_distances, zscore_normalize, CsvSchema, Dataset,
    DistanceMatrix,
};
use delala::forest::{lodog_cut, LeadingForest};
use delala::klmca::{classify_1nn, gamma_step, loss, target_neighbors};
use delala::labeling::{select_labeled, selection_scores};
use delala::lapoleaf::propagate;
use delala::linalg::{sqdist, Mat};
use delala::pipeline::draw_indices;

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../..")).join(rel)
}

fn profile(name: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_file(&repo_path(&format!("profiles/{name}.conf"))).expect("profile parses");
    cfg.dataset = repo_path(&format!("data/{name}.csv"));
    cfg
}

fn accuracy_with_timing(cfg: &ExperimentConfig) -> (f64, f64) {
    let t = Instant::now();
    let report = run(cfg).expect("run succeeds");
    (report.accuracy, t.elapsed().as_secs_f64())
}

#[test]
fn criterion_1_iris_accuracy() {
    let (acc, secs) = accuracy_with_timing(&profile("iris"));
    assert!(acc >= 93.5, "iris accuracy {acc:.2} below 93.5");
    assert!(secs < 2.0, "iris runtime {secs:.2}s exceeds 2s");
    println!("[PASS] criterion 1: iris delala accuracy {acc:.2}% (>= 93.5) in {secs:.3}s (< 2s)");
}

#[test]
fn criterion_2_wine_accuracy() {
    let (acc, secs) = accuracy_with_timing(&profile("wine"));
    assert!(acc >= 93.5, "wine accuracy {acc:.2} below 93.5");
    assert!(secs < 2.0, "wine runtime {secs:.2}s exceeds 2s");
    println!("[PASS] criterion 2: wine delala accuracy {acc:.2}% (>= 93.5) in {secs:.3}s (< 2s)");
}

#[test]
fn criterion_3_yeast_multimetric_accuracy() {
    let cfg = profile("yeast");
    assert_eq!(cfg.pipeline, Pipeline::Multimetric, "yeast profile uses the multi-metric pipeline");
    let (acc, secs) = accuracy_with_timing(&cfg);
    assert!(acc >= 40.0, "yeast accuracy {acc:.2} below 40");
    assert!(secs < 30.0, "yeast runtime {secs:.2}s exceeds 30s");
    println!("[PASS] criterion 3: yeast multimetric accuracy {acc:.2}% (>= 40) in {secs:.3}s (< 30s)");
}

#[test]
fn criterion_4_stability_contrast() {
    let mut zero_stds = Vec::new();
    let mut random_stds = Vec::new();
    for name in ["iris", "wine", "yeast"] {
        let mut cfg = profile(name);
        cfg.repeats = 10;
        let det = run(&cfg).expect("deterministic run");
        zero_stds.push((name, det.repeats.std));
        assert_eq!(det.repeats.std, 0.0, "{name}: deterministic pipeline must have std 0");
        assert!(
            det.repeats.accuracies.iter().all(|&a| a == det.repeats.accuracies[0]),
            "{name}: repeated runs must be identical"
        );

        let mut rnd = cfg.clone();
        rnd.pipeline = Pipeline::RandomBaseline;
        let rep = run(&rnd).expect("random baseline run");
        random_stds.push((name, rep.repeats.std));
    }
    let spread = random_stds.iter().filter(|(_, s)| *s > 1.0).count();
    assert!(
        spread >= 2,
        "random-baseline std must exceed 1 point on at least two datasets, got {random_stds:?}"
    );
    println!(
        "[PASS] criterion 4: deterministic std {:?} all zero; random-baseline std {:?} (> 1 on {spread}/3)",
        zero_stds, random_stds
    );
}

#[test]
fn criterion_5_beats_lapoleaf_baseline() {
    for name in ["iris", "wine", "yeast"] {
        let cfg = profile(name);
        let ours = run(&cfg).expect("tuned run").accuracy;
        let mut base = cfg.clone();
        base.pipeline = Pipeline::Lapoleaf;
        base.repeats = 10;
        let lap = run(&base).expect("lapoleaf baseline").repeats.mean;
        assert!(
            ours > lap,
            "{name}: deterministic pipeline ({ours:.2}) must beat lapoleaf mean ({lap:.2})"
        );
        println!("[PASS] criterion 5 ({name}): {ours:.2}% > lapoleaf mean {lap:.2}%");
    }
}

/// All hinge arguments stay clear of the kink by the given margin.
fn hinge_smooth(
    omega: &Mat,
    kernel: &delala::dataset::KernelMatrix,
    tn: &delala::klmca::TargetNeighbors,
    margin: f64,
) -> bool {
    let proj = omega.matmul(kernel.values());
    let l = kernel.rows();
    for &(i, j) in &tn.pairs {
        let dij = sqdist(&proj.col(i), &proj.col(j));
        for m in 0..l {
            if tn.same_class[i][m] {
                continue;
            }
            let s = dij - sqdist(&proj.col(i), &proj.col(m)) + 1.0;
            if s.abs() <= margin {
                return false;
            }
        }
    }
    true
}

#[test]
fn criterion_6_gradient_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(606);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    while checked < 50 {
        let l = rng.gen_range(4..9);
        let d = rng.gen_range(1..4);
        let rows: Vec<Vec<f64>> =
            (0..l).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<usize> = (0..l).map(|_| rng.gen_range(1..3)).collect();
        if labels.iter().all(|&c| c == labels[0]) {
            continue; // need impostors for the push term
        }
        let ds = Dataset::new("g", Mat::from_rows(rows), vec![None; l], vec![]).unwrap();
        let dist = pairwise_distances(&ds);
        let block = dist.block(&(0..l).collect::<Vec<_>>(), &(0..l).collect::<Vec<_>>());
        let kernel = gaussian_kernel(&block, 1.5).unwrap();
        let tn = target_neighbors(&labels, &block, 2);
        let p = rng.gen_range(1..4);
        let mut omega = Mat::zeros(p, l);
        for i in 0..p {
            for j in 0..l {
                omega.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        if !hinge_smooth(&omega, &kernel, &tn, 1e-3) {
            continue;
        }
        let c = 1.0;
        let grad = gamma_step(&omega, &kernel, &tn, c);
        let eps = 1e-5;
        for i in 0..p {
            for j in 0..l {
                let mut plus = omega.clone();
                plus.set(i, j, omega.get(i, j) + eps);
                let mut minus = omega.clone();
                minus.set(i, j, omega.get(i, j) - eps);
                let fd = (loss(&plus, &kernel, &tn, c) - loss(&minus, &kernel, &tn, c)) / (2.0 * eps);
                let denom = fd.abs().max(grad.get(i, j).abs()).max(1e-8);
                let rel = ((grad.get(i, j) - fd) / denom).abs();
                worst = worst.max(rel);
                assert!(
                    rel < 1e-4,
                    "config {checked}: gradient entry ({i},{j}) rel err {rel:.2e}"
                );
            }
        }
        checked += 1;
    }
    println!(
        "[PASS] criterion 6: gradient vs central differences on 50 hinge-smooth configs, worst rel err {worst:.2e} (< 1e-4)"
    );
}

#[test]
fn criterion_7_structural_invariants() {
    let mut rng = StdRng::seed_from_u64(707);
    for case in 0..200 {
        let n = rng.gen_range(5..=300);
        let d = rng.gen_range(1..=5);
        let class_count = rng.gen_range(1..=4).min(n);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let labels: Vec<Option<usize>> =
            (0..n).map(|i| Some(i % class_count + 1)).collect();
        let class_names: Vec<String> = (1..=class_count).map(|c| format!("c{c}")).collect();
        let ds = Dataset::new("inv", Mat::from_rows(rows), labels, class_names).unwrap();
        let work = zscore_normalize(&ds);
        let dist = pairwise_distances(&work);
        let sigma = rng.gen_range(0.3..2.0);
        let mut forest = LeadingForest::build(&dist, sigma).unwrap();
        let g = lodog_cut(&mut forest, 0.5, n).unwrap();

        // parent-density monotonicity under the tie-broken order
        for i in 0..n {
            if let Some(p) = forest.parent()[i] {
                let denser = forest.rho()[p] > forest.rho()[i]
                    || (forest.rho()[p] == forest.rho()[i] && p < i);
                assert!(denser, "case {case}: parent of {i} is not denser");
            }
        }
        // forest partition soundness
        assert_eq!(forest.roots().len(), g.n_g);
        let mut seen = vec![false; n];
        for (t, members) in forest.subtree_members().iter().enumerate() {
            for &m in members {
                assert_eq!(forest.tree_id()[m], t + 1);
                assert!(!seen[m]);
                seen[m] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // γ = ρδ exactly and the layer recurrence
        for i in 0..n {
            assert_eq!(forest.gamma()[i], forest.rho()[i] * forest.delta()[i]);
            match forest.parent()[i] {
                Some(p) => assert_eq!(forest.layer()[i], forest.layer()[p] + 1),
                None => assert_eq!(forest.layer()[i], 1),
            }
        }

        // lapoleaf completeness and seed preservation
        let seed_count = rng.gen_range(1..=n.min(10));
        let seed_nodes = draw_indices(n, seed_count, 1000 + case as u64);
        let seeds: Vec<(usize, usize)> =
            seed_nodes.iter().map(|&s| (s, ds.label(s).unwrap())).collect();
        let preds = propagate(&forest, &dist, &seeds, class_count).unwrap();
        assert_eq!(preds.len(), n);
        for &(node, class) in &seeds {
            assert_eq!(preds[node], class, "case {case}: seed overwritten");
        }

        // 1NN equals the exhaustive scan
        let l_cols = seed_nodes.len();
        let mut pl = Mat::zeros(d, l_cols);
        for (col, &s) in seed_nodes.iter().enumerate() {
            for r in 0..d {
                pl.set(r, col, work.features().get(s, r));
            }
        }
        let u_nodes: Vec<usize> = (0..n).filter(|i| !seed_nodes.contains(i)).collect();
        let mut pu = Mat::zeros(d, u_nodes.len());
        for (col, &u) in u_nodes.iter().enumerate() {
            for r in 0..d {
                pu.set(r, col, work.features().get(u, r));
            }
        }
        let seed_classes: Vec<usize> = seeds.iter().map(|&(_, c)| c).collect();
        let fast = classify_1nn(&pl, &seed_classes, &pu).unwrap();
        for (ui, &u) in u_nodes.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (col, &s) in seed_nodes.iter().enumerate() {
                let dd = sqdist(work.row(u), work.row(s));
                if dd < best.0 {
                    best = (dd, col);
                }
            }
            assert_eq!(fast[ui], seed_classes[best.1], "case {case}: 1NN mismatch");
        }

        // selection determinism and quota soundness
        if n >= 2 * class_count {
            let scores = selection_scores(&forest, 0.5).unwrap();
            let k = 1usize;
            let l_budget = (2 * class_count).min(n);
            let run_sel = || {
                select_labeled(&scores, class_count, l_budget, k, &mut |i| ds.label(i)).unwrap()
            };
            let a = run_sel();
            let b = run_sel();
            assert_eq!(a.selected, b.selected, "case {case}: selection not deterministic");
            assert_eq!(a.selected.len(), l_budget);
            for c in 1..=class_count {
                assert!(
                    a.per_class.get(&c).map_or(0, |v| v.len()) >= k,
                    "case {case}: class {c} under quota"
                );
            }
        }
    }
    println!("[PASS] criterion 7: structural invariants hold on 200 randomized datasets (n <= 300)");
}

#[test]
fn criterion_8_lodog_brute_force_equivalence() {
    let pts =
        vec![vec![0.0], vec![0.1], vec![0.2], vec![10.0], vec![10.1], vec![10.2]];
    let ds = Dataset::new("blobs", Mat::from_rows(pts), vec![None; 6], vec![]).unwrap();
    let dist = pairwise_distances(&ds);
    let mut forest = LeadingForest::build(&dist, 1.0).unwrap();
    let g = lodog_cut(&mut forest, 0.5, 6).unwrap();
    assert_eq!(g.n_g, 2, "two blobs with alpha 0.5 must cut into two granules");

    // independent direct evaluation: cut a fresh forest at every candidate
    // count and sum δ over non-root members per granule
    let mut direct_cost = Vec::new();
    for ng in 1..=6 {
        let mut fresh = LeadingForest::build(&dist, 1.0).unwrap();
        fresh.cut_at(ng).unwrap();
        let mut cost = 0.0;
        for members in fresh.subtree_members() {
            for m in members {
                if fresh.parent()[m].is_some() {
                    cost += fresh.delta()[m];
                }
            }
        }
        direct_cost.push(cost);
    }
    let minmax = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        v.iter().map(|x| (x - lo) / (hi - lo)).collect::<Vec<f64>>()
    };
    let hn = minmax(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let dn = minmax(&direct_cost);
    let mut best = 0usize;
    for i in 0..6 {
        let q = 0.5 * hn[i] + 0.5 * dn[i];
        assert!(
            (q - g.objective_curve[i]).abs() < 1e-9,
            "Q({}) direct {q} vs incremental {}",
            i + 1,
            g.objective_curve[i]
        );
        if q < 0.5 * hn[best] + 0.5 * dn[best] {
            best = i;
        }
    }
    assert_eq!(best + 1, g.n_g, "argmin of the direct curve must match");
    // granules separate the blobs
    assert_eq!(forest.tree_id()[0], forest.tree_id()[2]);
    assert_eq!(forest.tree_id()[3], forest.tree_id()[5]);
    assert_ne!(forest.tree_id()[0], forest.tree_id()[3]);
    println!("[PASS] criterion 8: LoDOG curve matches direct evaluation, N_g = {}", g.n_g);
}

fn synthetic_blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let centers = [(0.0, 0.0), (8.0, 1.0), (4.0, 7.0), (-6.0, 5.0)];
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (cx, cy) = centers[i % centers.len()];
            vec![cx + rng.gen_range(-1.5..1.5), cy + rng.gen_range(-1.5..1.5)]
        })
        .collect();
    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(i % centers.len() + 1)).collect();
    let names = (1..=centers.len()).map(|c| format!("c{c}")).collect();
    Dataset::new("synthetic", Mat::from_rows(rows), labels, names).unwrap()
}

/// One selection stage is tens of microseconds, far too brief to time
/// reliably on shared hardware, so each sample batches 50 executions and the
/// least noise-contaminated sample (the minimum) is reported.
fn best_selection_time(ds: &Dataset, dist: &DistanceMatrix, samples: usize) -> f64 {
    const BATCH: usize = 50;
    let forest = {
        let mut f = LeadingForest::build(dist, 1.0).unwrap();
        lodog_cut(&mut f, 0.5, 64).unwrap();
        f
    };
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let t = Instant::now();
        for _ in 0..BATCH {
            let scores = selection_scores(&forest, 0.5).unwrap();
            let sel = select_labeled(&scores, ds.class_count(), 4 * ds.class_count(), 1, &mut |i| {
                ds.label(i)
            })
            .unwrap();
            assert_eq!(sel.selected.len(), 4 * ds.class_count());
        }
        best = best.min(t.elapsed().as_secs_f64() / BATCH as f64);
    }
    best
}

#[test]
fn criterion_9_performance_sanity() {
    // selection stage scaling: doubling n must not reach 2.5x the time.
    // Rounds alternate between the two sizes and the smallest ratio is kept:
    // genuine superlinear scaling would show up in every round, while
    // transient machine noise does not survive the minimum.
    let small = synthetic_blobs(2000, 9);
    let large = synthetic_blobs(4000, 9);
    let dist_small = pairwise_distances(&small);
    let dist_large = pairwise_distances(&large);
    let _ = best_selection_time(&small, &dist_small, 1);
    let _ = best_selection_time(&large, &dist_large, 1);
    let mut ratio = f64::INFINITY;
    let (mut t_small, mut t_large) = (0.0, 0.0);
    for _ in 0..5 {
        let ts = best_selection_time(&small, &dist_small, 3);
        let tl = best_selection_time(&large, &dist_large, 3);
        if tl / ts < ratio {
            ratio = tl / ts;
            (t_small, t_large) = (ts, tl);
        }
    }
    assert!(
        ratio < 2.5,
        "selection time ratio {ratio:.2} (= {t_large:.6}s / {t_small:.6}s) exceeds 2.5"
    );

    // the full iris pipeline stays within 100x of the reported 29 ms
    let t = Instant::now();
    let report = run(&profile("iris")).expect("iris run");
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 2.9, "iris pipeline took {secs:.3}s, bound is 2.9s");
    assert!(report.accuracy > 90.0);
    println!(
        "[PASS] criterion 9: selection 2000->4000 time ratio {ratio:.2} (< 2.5); iris pipeline {:.1} ms (< 2900 ms)",
        secs * 1e3
    );
}

/// Optional smoke test on a 2,000-sample subsample of the bundled Letter
/// data: multimetric must complete and beat chance (1/26).
#[test]
fn letter_subsample_smoke() {
    let letter_path = repo_path("data/letter.csv");
    if !letter_path.exists() {
        eprintln!("[SKIP] letter smoke: data/letter.csv not bundled");
        return;
    }
    let full = load_csv(&letter_path, &CsvSchema::default()).expect("letter loads");
    assert_eq!(full.n(), 20000);
    assert_eq!(full.class_count(), 26);
    let keep = draw_indices(full.n(), 2000, 2626);
    let mut keep = keep;
    keep.sort_unstable();
    let rows: Vec<Vec<f64>> = keep.iter().map(|&i| full.row(i).to_vec()).collect();
    let labels: Vec<Option<usize>> = keep.iter().map(|&i| full.label(i)).collect();
    let sub = Dataset::new(
        "letter-2000",
        Mat::from_rows(rows),
        labels,
        full.class_names().to_vec(),
    )
    .unwrap();

    // write the subsample out and run through the ordinary entry point
    let dir = std::env::temp_dir().join("delala-letter-smoke");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("letter-2000.csv");
    std::fs::write(&path, delala::dataset::save_csv(&sub)).unwrap();

    let cfg = ExperimentConfig {
        dataset: path,
        pipeline: Pipeline::Multimetric,
        k: 1,
        l: Some(200),
        c_tilde: 5,
        alpha_lodog: 0.3,
        lambda: 0.01,
        ..Default::default()
    };
    let report = run(&cfg).expect("letter smoke run completes");
    let chance = 100.0 / 26.0;
    assert!(
        report.accuracy > chance,
        "letter accuracy {:.2} not above chance {chance:.2}",
        report.accuracy
    );
    println!(
        "[PASS] letter smoke: multimetric on a 2000-sample subsample reached {:.2}% (> {chance:.2}% chance)",
        report.accuracy
    );
}
