//! End-to-end pipeline runners. Pipelines receive an unlabeled dataset view
//! plus an annotation oracle; ground truth never flows in any other way, so
//! scoring stays outside and honest.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::{gaussian_kernel, pairwise_distances, zscore_normalize, Dataset, DistanceMatrix};
use crate::error::{Error, Result};
use crate::forest::{default_density_bandwidth, lodog_cut, GranulationResult, LeadingForest};
use crate::klmca::{classify_1nn, project, target_neighbors, train, KlmcaConfig};
use crate::labeling::{objective_value, select_labeled, selection_scores, SelectionResult};
use crate::lapoleaf::propagate;

/// Pay-per-query access to ground-truth classes.
pub struct LabelOracle {
    labels: Vec<Option<usize>>,
    queried: BTreeSet<usize>,
}

impl LabelOracle {
    pub fn new(ground_truth: &Dataset) -> Self {
        LabelOracle { labels: ground_truth.labels().to_vec(), queried: BTreeSet::new() }
    }

    pub fn query(&mut self, idx: usize) -> Option<usize> {
        self.queried.insert(idx);
        self.labels.get(idx).copied().flatten()
    }

    pub fn queries(&self) -> usize {
        self.queried.len()
    }
}

/// Wall-clock milliseconds per pipeline stage.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub forest_ms: f64,
    pub selection_ms: f64,
    pub training_ms: f64,
    pub inference_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.forest_ms + self.selection_ms + self.training_ms + self.inference_ms
    }
}

/// One leaf classifier's share of a multi-metric run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubtreeReport {
    pub root: usize,
    pub size: usize,
    pub local_classes: usize,
    pub labels_used: usize,
    pub method: String,
    /// Filled by the scoring harness; pipelines cannot see ground truth.
    pub local_accuracy: Option<f64>,
    #[serde(skip)]
    pub members: Vec<usize>,
}

/// What a pipeline hands back for scoring and reporting.
#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    /// (node, predicted class) for every node outside the labeled set.
    pub predictions: Vec<(usize, usize)>,
    /// Indices whose true labels were consumed as training/seed data.
    pub labeled: Vec<usize>,
    pub selection: Option<SelectionResult>,
    pub objective_j: Option<f64>,
    pub granule_count: Option<usize>,
    pub loss_history: Option<Vec<f64>>,
    pub per_subtree: Option<Vec<SubtreeReport>>,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
}

/// Shared front half: normalization, distances, σ resolution, leading tree,
/// LoDOG cut.
pub struct Prepared {
    pub work: Dataset,
    pub dist: DistanceMatrix,
    pub sigma: f64,
    pub forest: LeadingForest,
    pub granulation: GranulationResult,
    pub forest_ms: f64,
}

pub fn default_n_max(n: usize) -> usize {
    n.min(4 * (n as f64).sqrt().ceil() as usize).max(1)
}

pub fn prepare(view: &Dataset, cfg: &ExperimentConfig) -> Result<Prepared> {
    let t0 = Instant::now();
    let work = if cfg.normalize { zscore_normalize(view) } else { view.clone() };
    let dist = pairwise_distances(&work);
    let sigma = match cfg.sigma {
        Some(s) => s,
        None => default_density_bandwidth(&dist),
    };
    let mut forest = LeadingForest::build(&dist, sigma)?;
    let n_max = cfg.n_max.unwrap_or_else(|| default_n_max(view.n()));
    let granulation = lodog_cut(&mut forest, cfg.alpha_lodog, n_max)?;
    Ok(Prepared {
        work,
        dist,
        sigma,
        forest,
        granulation,
        forest_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn resolve_budget(cfg: &ExperimentConfig, class_count: usize) -> usize {
    cfg.l.unwrap_or(cfg.k * class_count)
}

fn resolve_sigma_tilde(cfg: &ExperimentConfig, dist: &DistanceMatrix, warnings: &mut Vec<String>) -> f64 {
    if let Some(s) = cfg.sigma_tilde {
        return s;
    }
    match dist.offdiag_median() {
        Some(m) if m > 0.0 => m,
        _ => {
            warnings.push("degenerate distance distribution; kernel bandwidth fell back to 1".into());
            1.0
        }
    }
}

fn resolve_p(cfg: &ExperimentConfig, class_count: usize, l: usize) -> usize {
    cfg.p.unwrap_or_else(|| (class_count + 2).min(l.saturating_sub(1))).max(1)
}

/// What the KLMCA-and-1NN back half of a pipeline produces.
pub struct ClassifyOutcome {
    pub predictions: Vec<(usize, usize)>,
    pub loss_history: Vec<f64>,
    pub warnings: Vec<String>,
    pub training_ms: f64,
    pub inference_ms: f64,
}

/// Train a KLMCA model on the given labeled indices (basis order preserved)
/// and 1NN-classify every other node.
#[allow(clippy::too_many_arguments)]
pub fn klmca_classify(
    dist: &DistanceMatrix,
    labeled: &[usize],
    labels: &[usize],
    others: &[usize],
    sigma_tilde: f64,
    p: usize,
    cfg: &ExperimentConfig,
) -> Result<ClassifyOutcome> {
    let t0 = Instant::now();
    let train_block = dist.block(labeled, labeled);
    let kernel = gaussian_kernel(&train_block, sigma_tilde)?;
    let neighbors = target_neighbors(labels, &train_block, cfg.k);
    let klmca_cfg = KlmcaConfig {
        k: cfg.k,
        c: cfg.c,
        lambda: cfg.lambda,
        max_iters: cfg.max_iters,
        p,
        bandwidth: sigma_tilde,
        tol: cfg.tol,
        seed: cfg.seed,
    };
    let model = train(kernel, labeled.to_vec(), &neighbors, &klmca_cfg)?;
    let training_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let train_kernel = model.train_kernel.as_ref().expect("fresh model keeps its kernel");
    let proj_labeled = project(&model, train_kernel.values())?;
    let cross = gaussian_kernel(&dist.block(labeled, others), sigma_tilde)?;
    let proj_others = project(&model, cross.values())?;
    let classes = classify_1nn(&proj_labeled, labels, &proj_others)?;
    let predictions = others.iter().copied().zip(classes).collect();
    Ok(ClassifyOutcome {
        predictions,
        loss_history: model.loss_history.clone(),
        warnings: model.warnings.clone(),
        training_ms,
        inference_ms: t1.elapsed().as_secs_f64() * 1e3,
    })
}

/// The flat deterministic pipeline: OLF, XOR selection, one global KLMCA,
/// 1NN over the projection.
pub fn run_delala(view: &Dataset, oracle: &mut LabelOracle, cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    let prep = prepare(view, cfg)?;
    let mut warnings = Vec::new();

    let t1 = Instant::now();
    let scores = selection_scores(&prep.forest, cfg.w)?;
    let l = resolve_budget(cfg, view.class_count());
    let selection = select_labeled(&scores, view.class_count(), l, cfg.k, &mut |i| oracle.query(i))?;
    let objective_j = objective_value(&selection, &scores, cfg.alpha_select.unwrap_or(cfg.w));
    let selection_ms = t1.elapsed().as_secs_f64() * 1e3;

    let labeled = selection.selected.clone();
    let classes: Vec<usize> = labeled
        .iter()
        .map(|&i| oracle.query(i).expect("selected samples were already annotated"))
        .collect();
    let sigma_tilde = resolve_sigma_tilde(cfg, &prep.dist, &mut warnings);
    let p = resolve_p(cfg, view.class_count(), l);
    let in_l: BTreeSet<usize> = labeled.iter().copied().collect();
    let others: Vec<usize> = (0..view.n()).filter(|i| !in_l.contains(i)).collect();
    let mut back =
        klmca_classify(&prep.dist, &labeled, &classes, &others, sigma_tilde, p, cfg)?;
    warnings.append(&mut back.warnings);

    Ok(PipelineOutcome {
        predictions: back.predictions,
        labeled,
        selection: Some(selection),
        objective_j: Some(objective_j),
        granule_count: Some(prep.granulation.n_g),
        loss_history: Some(back.loss_history),
        per_subtree: None,
        timings: StageTimings {
            forest_ms: prep.forest_ms,
            selection_ms,
            training_ms: back.training_ms,
            inference_ms: back.inference_ms,
        },
        warnings,
    })
}

/// Uniform draw of `count` distinct indices, deterministic in the seed.
pub fn draw_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    let take = count.min(n);
    for i in 0..take {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool
}

/// LaPOLeaF baseline: random seeds, then three-pass propagation on the OLF.
pub fn run_lapoleaf(
    view: &Dataset,
    oracle: &mut LabelOracle,
    cfg: &ExperimentConfig,
    repeat: u64,
) -> Result<PipelineOutcome> {
    let prep = prepare(view, cfg)?;
    let t1 = Instant::now();
    let l = resolve_budget(cfg, view.class_count());
    let seed_nodes = draw_indices(view.n(), l, cfg.seed.wrapping_add(repeat));
    let mut seeds = Vec::with_capacity(seed_nodes.len());
    for &node in &seed_nodes {
        let class = oracle
            .query(node)
            .ok_or_else(|| Error::Data(format!("no ground-truth label for seed {node}")))?;
        seeds.push((node, class));
    }
    let selection_ms = t1.elapsed().as_secs_f64() * 1e3;

    let t2 = Instant::now();
    let all_preds = propagate(&prep.forest, &prep.dist, &seeds, view.class_count())?;
    let in_l: BTreeSet<usize> = seed_nodes.iter().copied().collect();
    let predictions: Vec<(usize, usize)> =
        (0..view.n()).filter(|i| !in_l.contains(i)).map(|i| (i, all_preds[i])).collect();
    let inference_ms = t2.elapsed().as_secs_f64() * 1e3;

    Ok(PipelineOutcome {
        predictions,
        labeled: seed_nodes,
        selection: None,
        objective_j: None,
        granule_count: Some(prep.granulation.n_g),
        loss_history: None,
        per_subtree: None,
        timings: StageTimings {
            forest_ms: prep.forest_ms,
            selection_ms,
            training_ms: 0.0,
            inference_ms,
        },
        warnings: Vec::new(),
    })
}

/// Random-labeling baseline with the identical KLMCA+1NN downstream, so the
/// selection strategy is the only varying factor against the flat pipeline.
pub fn run_random_baseline(
    view: &Dataset,
    oracle: &mut LabelOracle,
    cfg: &ExperimentConfig,
    repeat: u64,
) -> Result<PipelineOutcome> {
    let prep = prepare(view, cfg)?;
    let mut warnings = Vec::new();

    let t1 = Instant::now();
    let l = resolve_budget(cfg, view.class_count());
    let labeled = draw_indices(view.n(), l, cfg.seed.wrapping_add(repeat));
    let mut classes = Vec::with_capacity(labeled.len());
    for &node in &labeled {
        let class = oracle
            .query(node)
            .ok_or_else(|| Error::Data(format!("no ground-truth label for sample {node}")))?;
        classes.push(class);
    }
    let selection_ms = t1.elapsed().as_secs_f64() * 1e3;

    let sigma_tilde = resolve_sigma_tilde(cfg, &prep.dist, &mut warnings);
    let p = resolve_p(cfg, view.class_count(), l);
    let in_l: BTreeSet<usize> = labeled.iter().copied().collect();
    let others: Vec<usize> = (0..view.n()).filter(|i| !in_l.contains(i)).collect();
    let mut back =
        klmca_classify(&prep.dist, &labeled, &classes, &others, sigma_tilde, p, cfg)?;
    warnings.append(&mut back.warnings);

    Ok(PipelineOutcome {
        predictions: back.predictions,
        labeled,
        selection: None,
        objective_j: None,
        granule_count: Some(prep.granulation.n_g),
        loss_history: Some(back.loss_history),
        per_subtree: None,
        timings: StageTimings {
            forest_ms: prep.forest_ms,
            selection_ms,
            training_ms: back.training_ms,
            inference_ms: back.inference_ms,
        },
        warnings,
    })
}
