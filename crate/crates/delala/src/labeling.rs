//! Deterministic choice of the samples to label: a weighted continuous-XOR
//! composite ranks every node by being strongly typical (high γ) or strongly
//! divergent (low density deep in a subtree), and a quota walk takes the
//! ranking subject to per-class minimums.
//!
//! Ground-truth classes enter only through the annotation oracle, queried
//! when a sample is popped from the ranking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::LeadingForest;

/// Min-max rescale to [0,1]; a constant array maps to all 0.5, which is
/// neutral under the composite's (1-x) reflection.
pub fn minmax01(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Per-node selection scores plus their normalized copies.
#[derive(Clone, Debug)]
pub struct SelectionScores {
    /// h(γ) after rescaling γ into [1+1e-6, e]; strictly decreasing in γ.
    pub typicalness: Vec<f64>,
    /// ψ = ρ / layer.
    pub divergence: Vec<f64>,
    pub w: f64,
    pub typ_norm: Vec<f64>,
    pub div_norm: Vec<f64>,
}

/// h(γ) = 1/log(γ) is only defined above γ = 1, so γ is min-max rescaled
/// into [1+1e-6, e] first; a constant γ vector maps to all e (h = 1).
fn h_of_gamma(gamma: &[f64]) -> Vec<f64> {
    let lo = gamma.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gamma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo2, hi2) = (1.0 + 1e-6, std::f64::consts::E);
    gamma
        .iter()
        .map(|&g| {
            let resc = if hi > lo { lo2 + (g - lo) / (hi - lo) * (hi2 - lo2) } else { hi2 };
            1.0 / resc.ln()
        })
        .collect()
}

pub fn selection_scores(forest: &LeadingForest, w: f64) -> Result<SelectionScores> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Config(format!("selection weight w must lie in [0,1], got {w}")));
    }
    let typicalness = h_of_gamma(forest.gamma());
    let divergence: Vec<f64> = forest
        .rho()
        .iter()
        .zip(forest.layer())
        .map(|(&r, &l)| r / l as f64)
        .collect();
    let typ_norm = minmax01(&typicalness);
    let div_norm = minmax01(&divergence);
    Ok(SelectionScores { typicalness, divergence, w, typ_norm, div_norm })
}

/// Weighted continuous XOR of two score arrays after min-max normalization:
/// `w·a*(1−b*) + (1−w)·b*(1−a*)`, sorted descending with index ties ascending.
pub fn conti_xor_small(a: &[f64], b: &[f64], w: f64) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "conti_xor_small arrays differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Config(format!("XOR weight w must lie in [0,1], got {w}")));
    }
    let an = minmax01(a);
    let bn = minmax01(b);
    let com: Vec<f64> = an
        .iter()
        .zip(&bn)
        .map(|(x, y)| w * x * (1.0 - y) + (1.0 - w) * y * (1.0 - x))
        .collect();
    Ok(rank_descending(&com))
}

/// Indices sorted by value descending, ties broken by ascending index.
///
/// Values are packed into total-order integer keys so the sort is a single
/// branchless integer sort (the arrays are NaN-free by construction).
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut keys: Vec<u128> = values
        .iter()
        .zip(0u64..)
        .map(|(&v, i)| {
            let bits = v.to_bits();
            // order-preserving f64 -> u64 map, then inverted for descending
            let ord = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
            ((!ord as u128) << 64) | i as u128
        })
        .collect();
    keys.sort_unstable();
    keys.into_iter().map(|k| (k & u64::MAX as u128) as usize).collect()
}

/// Which side of the XOR composite put a sample into the labeled set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Central,
    Divergent,
}

/// The deterministic labeled set with its quota bookkeeping.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected node indices in pop order; length is exactly the budget.
    pub selected: Vec<usize>,
    /// Class id -> members selected under that class quota.
    pub per_class: BTreeMap<usize, Vec<usize>>,
    /// Samples taken beyond the class quotas.
    pub global_extras: Vec<usize>,
    /// Role per selected sample, parallel to `selected`.
    pub roles: Vec<Role>,
    /// Number of annotation-oracle queries spent (pops, including skips).
    pub label_queries: usize,
}

impl SelectionResult {
    pub fn contains(&self, idx: usize) -> bool {
        self.selected.contains(&idx)
    }
}

fn role_of(scores: &SelectionScores, i: usize) -> Role {
    let a = scores.typ_norm[i];
    let b = scores.div_norm[i];
    let term_div = scores.w * a * (1.0 - b);
    let term_cen = (1.0 - scores.w) * b * (1.0 - a);
    if term_div > term_cen {
        Role::Divergent
    } else {
        Role::Central
    }
}

/// Walk the XOR ranking, filling k slots per class and `l − k·C` global
/// extras. The oracle is consulted once per popped sample; skipped samples
/// are never revisited.
pub fn select_labeled(
    scores: &SelectionScores,
    class_count: usize,
    l: usize,
    k: usize,
    oracle: &mut dyn FnMut(usize) -> Option<usize>,
) -> Result<SelectionResult> {
    if class_count == 0 {
        return Err(Error::Config("selection needs a positive class count".into()));
    }
    if l < k * class_count {
        return Err(Error::Config(format!(
            "infeasible budget: l = {l} is smaller than k·C = {}",
            k * class_count
        )));
    }
    let ranking = conti_xor_small(&scores.typicalness, &scores.divergence, scores.w)?;
    let p_g = l - k * class_count;

    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut global_extras = Vec::new();
    let mut selected = Vec::with_capacity(l);
    let mut roles = Vec::with_capacity(l);
    let mut queries = 0usize;
    for &i in &ranking {
        if selected.len() >= l {
            break;
        }
        queries += 1;
        let class = oracle(i).ok_or_else(|| {
            Error::Data(format!("annotation oracle has no label for sample {i}"))
        })?;
        if class == 0 || class > class_count {
            return Err(Error::Contract(format!("oracle returned class {class} outside 1..={class_count}")));
        }
        let slot = per_class.entry(class).or_default();
        if slot.len() < k {
            slot.push(i);
        } else if global_extras.len() < p_g {
            global_extras.push(i);
        } else {
            continue; // skipped permanently
        }
        selected.push(i);
        roles.push(role_of(scores, i));
    }
    if selected.len() < l {
        let deficient: Vec<usize> = (1..=class_count)
            .filter(|c| per_class.get(c).map_or(0, |v| v.len()) < k)
            .collect();
        return Err(Error::Data(format!(
            "ranking exhausted with {} of {l} selected; classes below the {k}-quota: {deficient:?}",
            selected.len()
        )));
    }
    Ok(SelectionResult { selected, per_class, global_extras, roles, label_queries: queries })
}

/// J(L) = α Σ_{central} h(γ) + (1−α) Σ_{divergent} ψ. Lower is better;
/// reported for auditing and regression, not optimized directly.
pub fn objective_value(sel: &SelectionResult, scores: &SelectionScores, alpha: f64) -> f64 {
    let mut central = 0.0;
    let mut divergent = 0.0;
    for (&i, role) in sel.selected.iter().zip(&sel.roles) {
        match role {
            Role::Central => central += scores.typicalness[i],
            Role::Divergent => divergent += scores.divergence[i],
        }
    }
    alpha * central + (1.0 - alpha) * divergent
}
