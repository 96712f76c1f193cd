//! Non-iterative label propagation over the optimal leading forest in three
//! passes: children-to-parent, root-to-root, parent-to-children.
//!
//! A node is labeled iff its row of the label matrix has a positive entry.
//! Seed rows are one-hot and are never overwritten by any pass.

use crate::dataset::DistanceMatrix;
use crate::error::{Error, Result};
use crate::forest::{denser, LeadingForest};
use crate::linalg::Mat;

const EPS_DIST: f64 = 1e-12;

/// Per-node label vectors (n×C) plus node populations (all 1 here; fat
/// granule nodes are out of scope).
#[derive(Clone, Debug)]
pub struct LabelMatrix {
    vectors: Mat,
    populations: Vec<f64>,
}

impl LabelMatrix {
    pub fn new(n: usize, class_count: usize) -> Self {
        LabelMatrix { vectors: Mat::zeros(n, class_count), populations: vec![1.0; n] }
    }

    pub fn seed(&mut self, node: usize, class: usize) {
        for c in 0..self.vectors.cols() {
            self.vectors.set(node, c, 0.0);
        }
        self.vectors.set(node, class - 1, 1.0);
    }

    pub fn is_labeled(&self, node: usize) -> bool {
        self.vectors.row(node).iter().any(|&v| v > 0.0)
    }

    pub fn row(&self, node: usize) -> &[f64] {
        self.vectors.row(node)
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    /// Predicted class id: the argmax entry, lowest class id on ties.
    pub fn predicted_class(&self, node: usize) -> usize {
        let row = self.vectors.row(node);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        best + 1
    }

    fn copy_row(&mut self, from: usize, to: usize) {
        for c in 0..self.vectors.cols() {
            let v = self.vectors.get(from, c);
            self.vectors.set(to, c, v);
        }
    }
}

fn children_of(forest: &LeadingForest) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); forest.len()];
    for (i, p) in forest.parent().iter().enumerate() {
        if let Some(p) = *p {
            children[p].push(i);
        }
    }
    children
}

/// Bottom-up pass: an unlabeled parent with at least one labeled child takes
/// the population/distance-weighted average of all its children's rows
/// (unlabeled children contribute zero vectors but still carry weight).
pub fn c2p_pass(forest: &LeadingForest, dist: &DistanceMatrix, labels: &mut LabelMatrix) {
    let children = children_of(forest);
    let max_layer = forest.layer().iter().copied().max().unwrap_or(1);
    let c = labels.vectors.cols();
    for lay in (1..max_layer).rev() {
        for q in 0..forest.len() {
            if forest.layer()[q] != lay || labels.is_labeled(q) || children[q].is_empty() {
                continue;
            }
            if !children[q].iter().any(|&ch| labels.is_labeled(ch)) {
                continue;
            }
            let mut num = vec![0.0; c];
            let mut den = 0.0;
            for &ch in &children[q] {
                let w = labels.populations[ch] / dist.get(ch, q).max(EPS_DIST);
                den += w;
                for (acc, &v) in num.iter_mut().zip(labels.vectors.row(ch)) {
                    *acc += w * v;
                }
            }
            for (col, v) in num.into_iter().enumerate() {
                labels.vectors.set(q, col, v / den);
            }
        }
    }
}

/// Root-to-root pass: every unlabeled root borrows the row of the nearest
/// labeled root of strictly higher density; the densest root, when
/// unlabeled, borrows from the nearest labeled root unconditionally.
/// Processing in descending-density order resolves transitive borrowing in
/// one sweep.
pub fn r2r_pass(forest: &LeadingForest, dist: &DistanceMatrix, labels: &mut LabelMatrix) -> Result<()> {
    let mut roots: Vec<usize> = forest.roots().to_vec();
    roots.sort_by(|&i, &j| {
        if denser(forest.rho(), i, j) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    if !roots.iter().any(|&r| labels.is_labeled(r)) {
        return Err(Error::Data(
            "label propagation needs at least one labeled root (seed set empty?)".into(),
        ));
    }
    for pos in 0..roots.len() {
        let r = roots[pos];
        if labels.is_labeled(r) {
            continue;
        }
        // superiors are exactly the roots processed before r; all of them are
        // labeled by now, so the fallback only ever fires for the densest root
        let candidates: Vec<usize> = if pos == 0 {
            roots.iter().copied().filter(|&s| labels.is_labeled(s)).collect()
        } else {
            roots[..pos].to_vec()
        };
        let donor = candidates
            .into_iter()
            .min_by(|&a, &b| {
                dist.get(r, a)
                    .partial_cmp(&dist.get(r, b))
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            })
            .ok_or_else(|| Error::Contract("no borrow candidate for an unlabeled root".into()))?;
        labels.copy_row(donor, r);
    }
    Ok(())
}

/// Top-down pass: every still-unlabeled node copies its parent's row, layer
/// by layer, so mid-tree labels shadow the root for their descendants.
pub fn p2c_pass(forest: &LeadingForest, labels: &mut LabelMatrix) {
    let max_layer = forest.layer().iter().copied().max().unwrap_or(1);
    for lay in 2..=max_layer {
        for q in 0..forest.len() {
            if forest.layer()[q] != lay || labels.is_labeled(q) {
                continue;
            }
            let p = forest.parent()[q].expect("non-root node has a parent");
            labels.copy_row(p, q);
        }
    }
}

/// C2P, R2R, P2C in sequence, then row-argmax. Seeds are (node, class) pairs.
pub fn propagate(
    forest: &LeadingForest,
    dist: &DistanceMatrix,
    seeds: &[(usize, usize)],
    class_count: usize,
) -> Result<Vec<usize>> {
    if seeds.is_empty() {
        return Err(Error::Data("propagation needs a non-empty seed set".into()));
    }
    let mut labels = LabelMatrix::new(forest.len(), class_count);
    for &(node, class) in seeds {
        if class == 0 || class > class_count {
            return Err(Error::Contract(format!("seed class {class} outside 1..={class_count}")));
        }
        labels.seed(node, class);
    }
    c2p_pass(forest, dist, &mut labels);
    r2r_pass(forest, dist, &mut labels)?;
    p2c_pass(forest, &mut labels);
    for i in 0..forest.len() {
        if !labels.is_labeled(i) {
            return Err(Error::Contract(format!("node {i} left unlabeled after propagation")));
        }
    }
    Ok((0..forest.len()).map(|i| labels.predicted_class(i)).collect())
}
