//! Leading tree construction and the LoDOG cut that turns it into an
//! optimal leading forest.
//!
//! Every node points at its nearest strictly-denser neighbor; density ties
//! are broken by node index so the ordering is total even on duplicate
//! points. The tree is cut at the highest-γ nodes, with the cut count chosen
//! by minimizing a normalized balance of granule count and within-granule
//! δ cost.

use crate::dataset::DistanceMatrix;
use crate::error::{Error, Result};

/// The leading tree / forest over one dataset, with per-node statistics.
#[derive(Clone, Debug)]
pub struct LeadingForest {
    rho: Vec<f64>,
    /// Working parent links; `None` exactly at subtree roots.
    parent: Vec<Option<usize>>,
    /// Parent links of the uncut tree; `None` only at the global root.
    parent_full: Vec<Option<usize>>,
    delta: Vec<f64>,
    gamma: Vec<f64>,
    layer: Vec<usize>,
    tree_id: Vec<usize>,
    roots: Vec<usize>,
}

/// Outcome of the LoDOG granule-count search.
#[derive(Clone, Debug)]
pub struct GranulationResult {
    pub n_g: usize,
    /// Q(N_g) for every candidate N_g in 1..=N_max.
    pub objective_curve: Vec<f64>,
    /// Raw ΣDistCost per candidate, before min-max normalization.
    pub dist_cost_curve: Vec<f64>,
    pub alpha_lodog: f64,
}

/// True when node `i` precedes node `j` in the tie-broken density order.
#[inline]
pub(crate) fn denser(rho: &[f64], i: usize, j: usize) -> bool {
    rho[i] > rho[j] || (rho[i] == rho[j] && i < j)
}

/// ρ_i = Σ_{j≠i} exp(−(d_ij/σ)²). For n = 1 the sum is empty and ρ = [0].
pub fn local_density(dist: &DistanceMatrix, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("density bandwidth must be positive, got {sigma}")));
    }
    let n = dist.n();
    let mut rho = vec![0.0; n];
    for (i, r) in rho.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..n {
            if j != i {
                let t = dist.get(i, j) / sigma;
                acc += (-t * t).exp();
            }
        }
        *r = acc;
    }
    Ok(rho)
}

/// Default density bandwidth: the 2% percentile of off-diagonal distances,
/// falling back to the smallest positive distance when that percentile is 0.
pub fn default_density_bandwidth(dist: &DistanceMatrix) -> f64 {
    match dist.offdiag_percentile(0.02) {
        Some(s) if s > 0.0 => s,
        _ => {
            let n = dist.n();
            let mut best = f64::INFINITY;
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = dist.get(i, j);
                    if d > 0.0 && d < best {
                        best = d;
                    }
                }
            }
            if best.is_finite() {
                best
            } else {
                1.0
            }
        }
    }
}

/// Parent (leading node) and δ-distance for every node. The unique density
/// maximum has no parent and takes the largest distance in the matrix as δ.
pub fn leading_nodes(dist: &DistanceMatrix, rho: &[f64]) -> (Vec<Option<usize>>, Vec<f64>) {
    let n = dist.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        rho[j].partial_cmp(&rho[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let mut parent = vec![None; n];
    let mut delta = vec![0.0; n];
    let mut global_max_dist = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            global_max_dist = global_max_dist.max(dist.get(i, j));
        }
    }
    for pos in 0..n {
        let i = order[pos];
        if pos == 0 {
            delta[i] = global_max_dist;
            continue;
        }
        let mut best = order[0];
        let mut best_d = dist.get(i, best);
        for &j in &order[1..pos] {
            let d = dist.get(i, j);
            if d < best_d || (d == best_d && j < best) {
                best = j;
                best_d = d;
            }
        }
        parent[i] = Some(best);
        delta[i] = best_d;
    }
    (parent, delta)
}

impl LeadingForest {
    /// Build the uncut leading tree: densities, parents, δ, γ, layers.
    pub fn build(dist: &DistanceMatrix, sigma: f64) -> Result<LeadingForest> {
        let rho = local_density(dist, sigma)?;
        let (parent, delta) = leading_nodes(dist, &rho);
        let gamma: Vec<f64> = rho.iter().zip(&delta).map(|(r, d)| r * d).collect();
        let mut forest = LeadingForest {
            rho,
            parent_full: parent.clone(),
            parent,
            delta,
            gamma,
            layer: Vec::new(),
            tree_id: Vec::new(),
            roots: Vec::new(),
        };
        forest.relabel()?;
        Ok(forest)
    }

    /// Recompute roots, layers (BFS depth, root = 1) and tree ids from the
    /// working parent links.
    fn relabel(&mut self) -> Result<()> {
        let n = self.parent.len();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut roots = Vec::new();
        for i in 0..n {
            match self.parent[i] {
                Some(p) => children[p].push(i),
                None => roots.push(i),
            }
        }
        roots.sort_unstable();
        let mut layer = vec![0usize; n];
        let mut tree_id = vec![0usize; n];
        let mut seen = 0usize;
        let mut queue = std::collections::VecDeque::new();
        for (t, &r) in roots.iter().enumerate() {
            layer[r] = 1;
            tree_id[r] = t + 1;
            queue.push_back(r);
            while let Some(u) = queue.pop_front() {
                seen += 1;
                for &ch in &children[u] {
                    layer[ch] = layer[u] + 1;
                    tree_id[ch] = tree_id[u];
                    queue.push_back(ch);
                }
            }
        }
        if seen != n {
            return Err(Error::Contract(
                "cycle detected in parent links; density ordering should forbid this".into(),
            ));
        }
        self.layer = layer;
        self.tree_id = tree_id;
        self.roots = roots;
        Ok(())
    }

    /// Non-root nodes of the full tree ranked by γ descending (index breaks
    /// ties); prefix k of this list is the cut set for N_g = k + 1.
    fn cut_candidates(&self) -> Vec<usize> {
        let mut cands: Vec<usize> =
            (0..self.len()).filter(|&i| self.parent_full[i].is_some()).collect();
        cands.sort_by(|&i, &j| {
            self.gamma[j]
                .partial_cmp(&self.gamma[i])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        });
        cands
    }

    /// Detach the top-(n_g − 1) γ candidates from their parents, restoring
    /// the full tree first so repeated cuts do not compound.
    pub fn cut_at(&mut self, n_g: usize) -> Result<()> {
        let n = self.len();
        if n_g < 1 || n_g > n {
            return Err(Error::Config(format!("granule count {n_g} outside 1..={n}")));
        }
        self.parent = self.parent_full.clone();
        let cands = self.cut_candidates();
        for &c in cands.iter().take(n_g - 1) {
            self.parent[c] = None;
        }
        self.relabel()
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn parent(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn layer(&self) -> &[usize] {
        &self.layer
    }

    pub fn tree_id(&self) -> &[usize] {
        &self.tree_id
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    /// Members of each subtree, indexed by tree id − 1.
    pub fn subtree_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.roots.len()];
        for (i, &t) in self.tree_id.iter().enumerate() {
            out[t - 1].push(i);
        }
        out
    }

    /// Edge-list text dump: node, parent, rho, delta, gamma, layer, tree_id.
    pub fn edge_list_dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::from("node\tparent\trho\tdelta\tgamma\tlayer\ttree_id\n");
        for i in 0..self.len() {
            let p = self.parent[i].map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{i}\t{p}\t{}\t{}\t{}\t{}\t{}",
                self.rho[i], self.delta[i], self.gamma[i], self.layer[i], self.tree_id[i]
            );
        }
        s
    }
}

/// Evaluate the LoDOG objective over all candidate granule counts, cut the
/// forest at the minimizer, and report the curve.
///
/// Q(N_g) = α·H̃(N_g) + (1−α)·D̃(N_g), where H is the identity on the granule
/// count, D is the δ cost summed over non-root members of every granule, and
/// both are min-max normalized over the candidate range. Ties pick the
/// smallest N_g.
pub fn lodog_cut(forest: &mut LeadingForest, alpha_lodog: f64, n_max: usize) -> Result<GranulationResult> {
    if !(alpha_lodog > 0.0 && alpha_lodog < 1.0) {
        return Err(Error::Config(format!(
            "alpha_lodog must lie strictly inside (0,1), got {alpha_lodog}"
        )));
    }
    let n = forest.len();
    let n_max = n_max.clamp(1, n);
    let cands = forest.cut_candidates();
    let total_nonroot_delta: f64 = cands.iter().map(|&i| forest.delta[i]).sum();

    let mut dist_cost_curve = Vec::with_capacity(n_max);
    let mut removed = 0.0;
    for ng in 1..=n_max {
        if ng >= 2 {
            removed += forest.delta[cands[ng - 2]];
        }
        dist_cost_curve.push(total_nonroot_delta - removed);
    }
    let h_curve: Vec<f64> = (1..=n_max).map(|ng| ng as f64).collect();

    let minmax = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            return vec![0.0; v.len()];
        }
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    };
    let hn = minmax(&h_curve);
    let dn = minmax(&dist_cost_curve);
    let objective_curve: Vec<f64> = hn
        .iter()
        .zip(&dn)
        .map(|(h, d)| alpha_lodog * h + (1.0 - alpha_lodog) * d)
        .collect();

    let mut n_g = 1;
    for (i, &q) in objective_curve.iter().enumerate() {
        if q < objective_curve[n_g - 1] {
            n_g = i + 1;
        }
    }
    forest.cut_at(n_g)?;
    Ok(GranulationResult { n_g, objective_curve, dist_cost_curve, alpha_lodog })
}
