//! Multi-metric driver: when the data has more classes than one global
//! metric handles well, each OLF subtree gets its own locally selected
//! labels and its own KLMCA leaf classifier, recursing into subtrees whose
//! labeled class count still exceeds the threshold.
//!
//! The labeling budget is split across subtrees proportionally to size.
//! Recursion never buys new labels; it refines the forest around the ones
//! already paid for. Subtrees that end up with no labels borrow the leaf
//! classifier of the nearest labeled subtree root.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::dataset::{gaussian_kernel, pairwise_distances, zscore_normalize, Dataset, DistanceMatrix};
use crate::error::{Error, Result};
use crate::forest::{default_density_bandwidth, lodog_cut, LeadingForest};
use crate::klmca::{classify_1nn, project, target_neighbors, train, KlmcaConfig};
use crate::labeling::{conti_xor_small, selection_scores};
use crate::pipeline::{
    default_n_max, resolve_budget, run_delala, LabelOracle, PipelineOutcome, StageTimings,
    SubtreeReport,
};

const MAX_DEPTH: usize = 3;

struct Driver<'a> {
    dist: &'a DistanceMatrix,
    oracle: &'a mut LabelOracle,
    cfg: &'a ExperimentConfig,
    n_total: usize,
    /// Every class revealed so far, keyed by sample index.
    paid: BTreeMap<usize, usize>,
    selected: BTreeSet<usize>,
    preds: BTreeMap<usize, usize>,
    subtrees: Vec<SubtreeReport>,
    timings: StageTimings,
    warnings: Vec<String>,
}

impl Driver<'_> {
    fn class_of(&mut self, idx: usize) -> Result<usize> {
        if let Some(&c) = self.paid.get(&idx) {
            return Ok(c);
        }
        let c = self
            .oracle
            .query(idx)
            .ok_or_else(|| Error::Data(format!("no ground-truth label for sample {idx}")))?;
        self.paid.insert(idx, c);
        Ok(c)
    }

    /// Proportional budget shares with a small-subtree floor, trimmed and
    /// grown by largest remainder so the total lands on the budget.
    fn shares(sizes: &[usize], budget: usize, k: usize) -> Vec<usize> {
        let total: usize = sizes.iter().sum();
        if total == 0 || budget == 0 {
            return vec![0; sizes.len()];
        }
        let raw: Vec<f64> =
            sizes.iter().map(|&s| budget as f64 * s as f64 / total as f64).collect();
        let mut base: Vec<usize> = raw
            .iter()
            .zip(sizes)
            .map(|(&f, &sz)| (f as usize).max(k.min(sz)).min(sz))
            .collect();
        while base.iter().sum::<usize>() > budget {
            let mut best = 0usize;
            for j in 1..base.len() {
                let (oj, bj) = (base[j] as f64 - raw[j], base[j]);
                let (ob, bb) = (base[best] as f64 - raw[best], base[best]);
                if oj > ob || (oj == ob && bj > bb) {
                    best = j;
                }
            }
            if base[best] == 0 {
                break;
            }
            base[best] -= 1;
        }
        let mut order: Vec<usize> = (0..base.len()).collect();
        order.sort_by(|&i, &j| {
            let ri = raw[i] - base[i] as f64;
            let rj = raw[j] - base[j] as f64;
            rj.partial_cmp(&ri).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
        });
        let mut gi = 0usize;
        while base.iter().sum::<usize>() < budget && gi < 10 * base.len() {
            let i = order[gi % base.len()];
            if base[i] < sizes[i] {
                base[i] += 1;
            }
            gi += 1;
        }
        base
    }

    /// Quota walk over a subtree's local ranking with classes discovered on
    /// the fly: k per class, extras capped at budget − k·(classes seen).
    fn local_select(
        &mut self,
        rank_local: &[usize],
        members: &[usize],
        budget: usize,
        preseed: &[usize],
    ) -> Result<Vec<usize>> {
        let k = self.cfg.k;
        let mut sel: Vec<usize> = preseed.to_vec();
        let mut per: BTreeMap<usize, usize> = BTreeMap::new();
        for &m in &sel {
            let c = self.class_of(m)?;
            *per.entry(c).or_insert(0) += 1;
        }
        let mut extras: usize = per.values().map(|&cnt| cnt.saturating_sub(k)).sum();
        let chosen: BTreeSet<usize> = sel.iter().copied().collect();
        let mut chosen = chosen;
        for &li in rank_local {
            if sel.len() >= budget {
                break;
            }
            let m = members[li];
            if chosen.contains(&m) {
                continue;
            }
            let c = self.class_of(m)?;
            let count = per.entry(c).or_insert(0);
            if *count < k {
                *count += 1;
                sel.push(m);
                chosen.insert(m);
            } else {
                let cap = budget.saturating_sub(k * per.len());
                if extras < cap {
                    extras += 1;
                    sel.push(m);
                    chosen.insert(m);
                }
            }
        }
        Ok(sel)
    }

    /// Classify `members ∖ labeled` with a classifier fit to the labeled
    /// subset: a KLMCA leaf when there is enough to train, otherwise the
    /// documented fallbacks.
    fn train_leaf(&mut self, labeled: &[usize], members: &[usize]) -> Result<(BTreeMap<usize, usize>, &'static str)> {
        let labs: Vec<usize> = {
            let set: BTreeSet<usize> = labeled.iter().copied().collect();
            set.into_iter().collect()
        };
        let lab_set: BTreeSet<usize> = labs.iter().copied().collect();
        let others: Vec<usize> =
            members.iter().copied().filter(|m| !lab_set.contains(m)).collect();
        let mut out = BTreeMap::new();
        if others.is_empty() {
            return Ok((out, "exhausted"));
        }
        let mut classes = Vec::with_capacity(labs.len());
        for &m in &labs {
            classes.push(self.class_of(m)?);
        }
        let distinct: BTreeSet<usize> = classes.iter().copied().collect();
        if distinct.len() == 1 {
            let only = *distinct.iter().next().unwrap();
            for &m in &others {
                out.insert(m, only);
            }
            return Ok((out, "single-class"));
        }

        let lab_block = self.dist.block(&labs, &labs);
        let sigma_tilde = match self.cfg.sigma_tilde {
            Some(s) => s,
            None => {
                let sub = self.dist.submatrix(&labs);
                match sub.offdiag_median() {
                    Some(m) if m > 0.0 => m,
                    _ => 1.0,
                }
            }
        };
        let p = self
            .cfg
            .p
            .unwrap_or_else(|| (distinct.len() + 2).min(labs.len().saturating_sub(1)))
            .max(1);
        if labs.len() < p || labs.len() < 2 {
            // too few labeled samples for a projection: 1NN in input space
            for &m in &others {
                let mut best = labs[0];
                let mut best_d = self.dist.get(m, labs[0]);
                for &lb in &labs[1..] {
                    let d = self.dist.get(m, lb);
                    if d < best_d || (d == best_d && lb < best) {
                        best = lb;
                        best_d = d;
                    }
                }
                out.insert(m, self.paid[&best]);
            }
            return Ok((out, "nn-input-space"));
        }

        let kernel = gaussian_kernel(&lab_block, sigma_tilde)?;
        let neighbors = target_neighbors(&classes, &lab_block, self.cfg.k);
        let klmca_cfg = KlmcaConfig {
            k: self.cfg.k,
            c: self.cfg.c,
            lambda: self.cfg.lambda,
            max_iters: self.cfg.max_iters,
            p,
            bandwidth: sigma_tilde,
            tol: self.cfg.tol,
            seed: self.cfg.seed,
        };
        let model = train(kernel, labs.clone(), &neighbors, &klmca_cfg)?;
        let train_kernel = model.train_kernel.as_ref().expect("fresh model keeps its kernel");
        let proj_l = project(&model, train_kernel.values())?;
        let cross = gaussian_kernel(&self.dist.block(&labs, &others), sigma_tilde)?;
        let proj_u = project(&model, cross.values())?;
        let got = classify_1nn(&proj_l, &classes, &proj_u)?;
        for (&m, c) in others.iter().zip(got) {
            out.insert(m, c);
        }
        Ok((out, "klmca"))
    }

    fn recurse(&mut self, members: &[usize], budget: usize, preseed: &[usize], depth: usize) -> Result<()> {
        let t0 = Instant::now();
        let local_dist = self.dist.submatrix(members);
        let sigma = if members.len() == self.n_total {
            self.cfg.sigma.unwrap_or_else(|| default_density_bandwidth(&local_dist))
        } else {
            default_density_bandwidth(&local_dist)
        };
        let mut forest = LeadingForest::build(&local_dist, sigma)?;
        let n_max = if members.len() == self.n_total {
            self.cfg.n_max.unwrap_or_else(|| default_n_max(members.len()))
        } else {
            default_n_max(members.len())
        };
        lodog_cut(&mut forest, self.cfg.alpha_lodog, n_max)?;
        self.timings.forest_ms += t0.elapsed().as_secs_f64() * 1e3;

        let t1 = Instant::now();
        let scores = selection_scores(&forest, self.cfg.w)?;
        let rank = conti_xor_small(&scores.typicalness, &scores.divergence, self.cfg.w)?;
        self.timings.selection_ms += t1.elapsed().as_secs_f64() * 1e3;

        let local_subs = forest.subtree_members();
        let sizes: Vec<usize> = local_subs.iter().map(|s| s.len()).collect();
        let shares = if budget > 0 { Self::shares(&sizes, budget, self.cfg.k) } else { vec![0; sizes.len()] };

        // donors remember each handled subtree's root and labels so that
        // label-less subtrees can borrow afterwards
        let mut donors: Vec<(usize, Vec<usize>)> = Vec::new();
        let mut pending: Vec<(Vec<usize>, usize)> = Vec::new();
        for (ti, local_members) in local_subs.iter().enumerate() {
            let sub: Vec<usize> = local_members.iter().map(|&li| members[li]).collect();
            let root_global = members[forest.roots()[ti]];
            let rank_local: Vec<usize> =
                rank.iter().copied().filter(|&li| forest.tree_id()[li] == ti + 1).collect();
            let pre: Vec<usize> =
                preseed.iter().copied().filter(|m| sub.contains(m)).collect();
            let want = shares[ti].max(pre.len());

            let t2 = Instant::now();
            let sel = self.local_select(&rank_local, members, want, &pre)?;
            self.timings.selection_ms += t2.elapsed().as_secs_f64() * 1e3;
            for &m in &sel {
                self.selected.insert(m);
            }
            let mut class_set = BTreeSet::new();
            for &m in &sel {
                class_set.insert(self.paid[&m]);
            }
            let cs = class_set.len();
            if cs == 0 {
                pending.push((sub, root_global));
                continue;
            }
            if cs > self.cfg.c_tilde && depth + 1 < MAX_DEPTH && sel.len() < sub.len() {
                self.recurse(&sub, 0, &sel, depth + 1)?;
                self.subtrees.push(SubtreeReport {
                    root: root_global,
                    size: sub.len(),
                    local_classes: cs,
                    labels_used: sel.len(),
                    method: "recursed".into(),
                    local_accuracy: None,
                    members: sub.clone(),
                });
            } else {
                let t3 = Instant::now();
                let (preds, method) = self.train_leaf(&sel, &sub)?;
                self.timings.training_ms += t3.elapsed().as_secs_f64() * 1e3;
                self.preds.extend(preds);
                self.subtrees.push(SubtreeReport {
                    root: root_global,
                    size: sub.len(),
                    local_classes: cs,
                    labels_used: sel.len(),
                    method: method.into(),
                    local_accuracy: None,
                    members: sub.clone(),
                });
            }
            donors.push((root_global, sel));
        }

        for (sub, root_global) in pending {
            if donors.is_empty() {
                // no labels anywhere in this branch; inherited guarantee says
                // the parent branch had some, so fall back to class 1
                self.warnings.push(format!(
                    "subtree rooted at {root_global} had no labeled donor; defaulted"
                ));
                for &m in &sub {
                    self.preds.insert(m, 1);
                }
                continue;
            }
            let mut best = 0usize;
            for i in 1..donors.len() {
                if self.dist.get(root_global, donors[i].0) < self.dist.get(root_global, donors[best].0) {
                    best = i;
                }
            }
            let lab = donors[best].1.clone();
            let union: Vec<usize> = {
                let mut s: BTreeSet<usize> = sub.iter().copied().collect();
                s.extend(lab.iter().copied());
                s.into_iter().collect()
            };
            let t3 = Instant::now();
            let (preds, _method) = self.train_leaf(&lab, &union)?;
            self.timings.training_ms += t3.elapsed().as_secs_f64() * 1e3;
            for &m in &sub {
                if let Some(&c) = preds.get(&m) {
                    self.preds.insert(m, c);
                }
            }
            self.subtrees.push(SubtreeReport {
                root: root_global,
                size: sub.len(),
                local_classes: 0,
                labels_used: 0,
                method: format!("borrowed-from-{}", donors[best].0),
                local_accuracy: None,
                members: sub.clone(),
            });
        }
        Ok(())
    }
}

/// Recursive multi-metric classification. With C ≤ C̃ the flat pipeline runs
/// instead, bit-identically.
pub fn run_multimetric(view: &Dataset, oracle: &mut LabelOracle, cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    if view.class_count() <= cfg.c_tilde {
        return run_delala(view, oracle, cfg);
    }
    let t0 = Instant::now();
    let work = if cfg.normalize { zscore_normalize(view) } else { view.clone() };
    let dist = pairwise_distances(&work);
    let prep_ms = t0.elapsed().as_secs_f64() * 1e3;

    let budget = resolve_budget(cfg, view.class_count());
    let members: Vec<usize> = (0..view.n()).collect();
    let mut driver = Driver {
        dist: &dist,
        oracle,
        cfg,
        n_total: view.n(),
        paid: BTreeMap::new(),
        selected: BTreeSet::new(),
        preds: BTreeMap::new(),
        subtrees: Vec::new(),
        timings: StageTimings { forest_ms: prep_ms, ..Default::default() },
        warnings: Vec::new(),
    };
    driver.recurse(&members, budget, &[], 0)?;

    let selected = driver.selected;
    let predictions: Vec<(usize, usize)> = driver
        .preds
        .iter()
        .filter(|(node, _)| !selected.contains(node))
        .map(|(&n, &c)| (n, c))
        .collect();
    // partition soundness: exactly the unselected nodes get predictions
    for i in 0..view.n() {
        if !selected.contains(&i) && !driver.preds.contains_key(&i) {
            return Err(Error::Contract(format!("node {i} was never classified")));
        }
    }
    Ok(PipelineOutcome {
        predictions,
        labeled: selected.into_iter().collect(),
        selection: None,
        objective_j: None,
        granule_count: Some(driver.subtrees.len()),
        loss_history: None,
        per_subtree: Some(driver.subtrees),
        timings: driver.timings,
        warnings: driver.warnings,
    })
}

/// Distinct ground-truth classes among a subtree's already-labeled members.
/// Unlabeled members are unknowable by design, so they count for nothing.
pub fn subtree_class_count(members: &[usize], labeled_classes: &BTreeMap<usize, usize>) -> usize {
    let mut classes = BTreeSet::new();
    for m in members {
        if let Some(&c) = labeled_classes.get(m) {
            classes.insert(c);
        }
    }
    classes.len()
}
