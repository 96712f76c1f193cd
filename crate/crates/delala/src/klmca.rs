//! Kernelized large-margin component analysis: learn a low-dimensional
//! projection Ω over the labeled kernel basis by gradient descent on a
//! pull/push hinge loss, then classify by nearest neighbor in the projected
//! space.
//!
//! Projections of sample q never need the feature map explicitly: with the
//! training kernel K over the l labeled samples, the projection is Ω·k_q
//! where k_q is q's kernel column against the labeled set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Mat};
use crate::dataset::KernelMatrix;

/// Training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KlmcaConfig {
    /// Target-neighbor count (shared with the selection quota k).
    pub k: usize,
    /// Push-loss weight.
    pub c: f64,
    /// Initial learning rate; halved when a step would increase the loss.
    pub lambda: f64,
    pub max_iters: usize,
    /// Requested projection dimension; truncated to the centered-kernel rank.
    pub p: usize,
    /// Kernel bandwidth σ̃.
    pub bandwidth: f64,
    /// Relative loss-change convergence threshold.
    pub tol: f64,
    /// Seed for the degenerate-rank fallback initialization only.
    pub seed: u64,
}

impl Default for KlmcaConfig {
    fn default() -> Self {
        KlmcaConfig {
            k: 3,
            c: 1.0,
            lambda: 1e-3,
            max_iters: 100,
            p: 2,
            bandwidth: 1.0,
            tol: 1e-7,
            seed: 42,
        }
    }
}

impl KlmcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("target-neighbor count k must be at least 1".into()));
        }
        if !(self.c > 0.0) {
            return Err(Error::Config(format!("push weight c must be positive, got {}", self.c)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lambda)));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.p < 1 {
            return Err(Error::Config("projected dimension p must be at least 1".into()));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::Config(format!(
                "kernel bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

/// η and the same-class mask over the labeled set.
#[derive(Clone, Debug)]
pub struct TargetNeighbors {
    /// eta[i][j]: j is one of i's k nearest same-class neighbors.
    pub eta: Vec<Vec<bool>>,
    /// same_class[i][m]: y_i == y_m.
    pub same_class: Vec<Vec<bool>>,
    /// η pairs (i, j) in deterministic order.
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
}

/// k nearest same-class neighbors per labeled sample; distance ties break by
/// index, and classes smaller than k+1 simply yield fewer neighbors.
pub fn target_neighbors(labels: &[usize], dist_block: &Mat, k: usize) -> TargetNeighbors {
    let l = labels.len();
    assert_eq!(dist_block.rows(), l, "distance block must cover the labeled set");
    let mut eta = vec![vec![false; l]; l];
    let mut same_class = vec![vec![false; l]; l];
    let mut pairs = Vec::new();
    for i in 0..l {
        for m in 0..l {
            same_class[i][m] = labels[i] == labels[m];
        }
    }
    for i in 0..l {
        let mut cands: Vec<usize> =
            (0..l).filter(|&j| j != i && labels[j] == labels[i]).collect();
        cands.sort_by(|&a, &b| {
            dist_block
                .get(i, a)
                .partial_cmp(&dist_block.get(i, b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &j in cands.iter().take(k) {
            eta[i][j] = true;
            pairs.push((i, j));
        }
    }
    TargetNeighbors { eta, same_class, pairs, labels: labels.to_vec() }
}

/// A trained projection.
#[derive(Clone, Debug)]
pub struct KlmcaModel {
    /// p_eff × l projection coefficients over the labeled kernel basis.
    pub omega: Mat,
    pub train_indices: Vec<usize>,
    pub bandwidth: f64,
    pub loss_history: Vec<f64>,
    pub train_kernel: Option<KernelMatrix>,
    pub warnings: Vec<String>,
}

/// KPCA initial guess: top-p eigenpairs of the doubly centered kernel
/// H K H (H = I − 11ᵀ/l), whitened so mapped components have unit variance.
///
/// Eigenvalues at or below 1e-12 are dropped (p truncates, with a warning);
/// if nothing survives, a small seeded uniform matrix is returned instead.
pub fn kpca_init(train_kernel: &KernelMatrix, p: usize, seed: u64) -> (Mat, Vec<String>) {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    let l = train_kernel.rows();
    assert_eq!(l, train_kernel.cols(), "kpca_init needs the square training kernel");
    let p_req = p.min(l);
    let mut warnings = Vec::new();
    if p_req < p {
        warnings.push(format!("projection dimension reduced from {p} to {p_req} (l = {l})"));
    }

    // B = H K H
    let k = train_kernel.values();
    let mut h = Mat::zeros(l, l);
    let inv = 1.0 / l as f64;
    for i in 0..l {
        for j in 0..l {
            h.set(i, j, if i == j { 1.0 - inv } else { -inv });
        }
    }
    let b_raw = h.matmul(k).matmul(&h);
    let mut b = Mat::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            b.set(i, j, 0.5 * (b_raw.get(i, j) + b_raw.get(j, i)));
        }
    }
    let (vals, vecs) = sym_eigen(&b);
    let keep: Vec<usize> = (0..p_req).filter(|&i| vals[i] > 1e-12).collect();
    if keep.len() < p_req {
        warnings.push(format!(
            "centered kernel rank {} is below the requested dimension {p_req}",
            keep.len()
        ));
    }
    if keep.is_empty() {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut omega = Mat::zeros(p_req.max(1), l);
        for i in 0..omega.rows() {
            for j in 0..l {
                omega.set(i, j, rng.gen_range(-0.01..0.01));
            }
        }
        warnings.push("degenerate centered kernel; falling back to seeded random init".into());
        return (omega, warnings);
    }
    // Ω₀ = Λ^{-1/2} Vᵀ H
    let mut vt = Mat::zeros(keep.len(), l);
    for (row, &ei) in keep.iter().enumerate() {
        let scale = 1.0 / vals[ei].sqrt();
        for j in 0..l {
            vt.set(row, j, vecs.get(j, ei) * scale);
        }
    }
    (vt.matmul(&h), warnings)
}

/// Squared distances between all column pairs of a p×l matrix.
fn projected_sqdists(p: &Mat) -> Vec<Vec<f64>> {
    let l = p.cols();
    let dims = p.rows();
    let mut d2 = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in (i + 1)..l {
            let mut acc = 0.0;
            for r in 0..dims {
                let diff = p.get(r, i) - p.get(r, j);
                acc += diff * diff;
            }
            d2[i][j] = acc;
            d2[j][i] = acc;
        }
    }
    d2
}

/// ε(Ω) = Σ η_ij ‖Ω(k_i−k_j)‖² + c Σ η_ij (1−y_im) h(s_ijm) with the unit
/// margin s_ijm = ‖Ω(k_i−k_j)‖² − ‖Ω(k_i−k_m)‖² + 1 and hinge h.
pub fn loss(omega: &Mat, kernel: &KernelMatrix, neighbors: &TargetNeighbors, c: f64) -> f64 {
    let proj = omega.matmul(kernel.values());
    let d2 = projected_sqdists(&proj);
    let mut pull = 0.0;
    let mut push = 0.0;
    let l = kernel.rows();
    for &(i, j) in &neighbors.pairs {
        pull += d2[i][j];
        for m in 0..l {
            if neighbors.same_class[i][m] {
                continue;
            }
            let s = d2[i][j] - d2[i][m] + 1.0;
            if s > 0.0 {
                push += s;
            }
        }
    }
    pull + c * push
}

/// ∂ε/∂Ω: 2Ω Σ η_ij ℰ_ij + 2cΩ Σ η_ij h'(s_ijm)(1−y_im)(ℰ_ij − ℰ_im) with
/// ℰ_ab the outer product (k_a−k_b)(k_a−k_b)ᵀ. Ω(k_a−k_b) is read off the
/// precomputed projection columns, so each term costs O(p·l).
///
/// The hinge subgradient is 0 at the kink: h'(s) = 1 iff s > 0.
pub fn gamma_step(omega: &Mat, kernel: &KernelMatrix, neighbors: &TargetNeighbors, c: f64) -> Mat {
    let k = kernel.values();
    let proj = omega.matmul(k);
    let d2 = projected_sqdists(&proj);
    let l = kernel.rows();
    let p = omega.rows();
    let mut grad = Mat::zeros(p, l);

    // rank-one accumulation: grad += coef * (proj_a − proj_b)(k_a − k_b)ᵀ
    let add_outer = |grad: &mut Mat, a: usize, b: usize, coef: f64| {
        for r in 0..p {
            let u = proj.get(r, a) - proj.get(r, b);
            if u == 0.0 {
                continue;
            }
            let row = grad.row_mut(r);
            let cu = coef * u;
            for t in 0..l {
                row[t] += cu * (k.get(t, a) - k.get(t, b));
            }
        }
    };

    for &(i, j) in &neighbors.pairs {
        add_outer(&mut grad, i, j, 2.0);
        for m in 0..l {
            if neighbors.same_class[i][m] {
                continue;
            }
            let s = d2[i][j] - d2[i][m] + 1.0;
            if s > 0.0 {
                add_outer(&mut grad, i, j, 2.0 * c);
                add_outer(&mut grad, i, m, -2.0 * c);
            }
        }
    }
    grad
}

/// Gradient descent from the KPCA initial guess with step-halving: a step
/// that would increase ε halves λ and retries, up to 20 times per iteration,
/// so the recorded loss history is never increasing.
pub fn train(
    train_kernel: KernelMatrix,
    train_indices: Vec<usize>,
    neighbors: &TargetNeighbors,
    config: &KlmcaConfig,
) -> Result<KlmcaModel> {
    config.validate()?;
    let (mut omega, warnings) = kpca_init(&train_kernel, config.p, config.seed);
    let mut history = vec![loss(&omega, &train_kernel, neighbors, config.c)];
    if !history[0].is_finite() {
        return Err(Error::Training(format!(
            "initial loss is not finite ({}); check kernel bandwidth and inputs",
            history[0]
        )));
    }
    for _ in 0..config.max_iters {
        let grad = gamma_step(&omega, &train_kernel, neighbors, config.c);
        let prev = *history.last().unwrap();
        let mut accepted = None;
        // the halving budget (and the step itself) reset every iteration
        let mut step = config.lambda;
        for _attempt in 0..=20 {
            let mut cand = omega.clone();
            cand.sub_scaled(&grad, step);
            let cand_loss = loss(&cand, &train_kernel, neighbors, config.c);
            if cand_loss.is_finite() && cand_loss <= prev {
                accepted = Some((cand, cand_loss));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_loss)) = accepted else {
            break; // no descent direction within step precision
        };
        omega = next;
        history.push(next_loss);
        let rel = (prev - next_loss).abs() / prev.max(1e-12);
        if rel < config.tol {
            break;
        }
    }
    if !history.iter().all(|v| v.is_finite()) {
        return Err(Error::Training("non-finite loss encountered during training".into()));
    }
    Ok(KlmcaModel {
        omega,
        train_indices,
        bandwidth: train_kernel.bandwidth(),
        loss_history: history,
        train_kernel: Some(train_kernel),
        warnings,
    })
}

/// Ω times a kernel block whose rows are ordered like the training set.
pub fn project(model: &KlmcaModel, kernel_block: &Mat) -> Result<Mat> {
    if kernel_block.rows() != model.omega.cols() {
        return Err(Error::Contract(format!(
            "kernel block has {} rows but the model basis has {}",
            kernel_block.rows(),
            model.omega.cols()
        )));
    }
    Ok(model.omega.matmul(kernel_block))
}

/// Nearest labeled column for every unlabeled column (squared Euclidean in
/// the projected space); distance ties pick the lowest labeled index.
pub fn classify_1nn(proj_labeled: &Mat, labels: &[usize], proj_unlabeled: &Mat) -> Result<Vec<usize>> {
    let l = proj_labeled.cols();
    if l == 0 {
        return Err(Error::Contract("classify_1nn needs at least one labeled column".into()));
    }
    if labels.len() != l {
        return Err(Error::Contract("labels length must match labeled columns".into()));
    }
    if proj_labeled.rows() != proj_unlabeled.rows() {
        return Err(Error::Contract("projected dimensions differ between sets".into()));
    }
    let p = proj_labeled.rows();
    let mut out = Vec::with_capacity(proj_unlabeled.cols());
    for u in 0..proj_unlabeled.cols() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for j in 0..l {
            let mut d = 0.0;
            for r in 0..p {
                let diff = proj_labeled.get(r, j) - proj_unlabeled.get(r, u);
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        out.push(labels[best]);
    }
    Ok(out)
}

/// Serialized model artifact, reloadable for projection without retraining.
#[derive(Serialize, Deserialize)]
struct ModelArtifact {
    version: u32,
    train_indices: Vec<usize>,
    bandwidth: f64,
    omega: Mat,
    loss_history: Vec<f64>,
}

const MODEL_VERSION: u32 = 1;

pub fn model_to_json(model: &KlmcaModel) -> String {
    let artifact = ModelArtifact {
        version: MODEL_VERSION,
        train_indices: model.train_indices.clone(),
        bandwidth: model.bandwidth,
        omega: model.omega.clone(),
        loss_history: model.loss_history.clone(),
    };
    serde_json::to_string_pretty(&artifact).expect("model serialization cannot fail")
}

pub fn model_from_json(text: &str) -> Result<KlmcaModel> {
    let artifact: ModelArtifact =
        serde_json::from_str(text).map_err(|e| Error::Data(format!("bad model artifact: {e}")))?;
    if artifact.version != MODEL_VERSION {
        return Err(Error::Data(format!(
            "unsupported model version {} (expected {MODEL_VERSION})",
            artifact.version
        )));
    }
    Ok(KlmcaModel {
        omega: artifact.omega,
        train_indices: artifact.train_indices,
        bandwidth: artifact.bandwidth,
        loss_history: artifact.loss_history,
        train_kernel: None,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gaussian_kernel, pairwise_distances, Dataset};
    use crate::linalg::sqdist;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn dist_block(points: &[Vec<f64>]) -> Mat {
        let ds = Dataset::new(
            "t",
            Mat::from_rows(points.to_vec()),
            vec![None; points.len()],
            vec![],
        )
        .unwrap();
        pairwise_distances(&ds).values().clone()
    }

    fn kernel_of(points: &[Vec<f64>], bw: f64) -> KernelMatrix {
        gaussian_kernel(&dist_block(points), bw).unwrap()
    }

    /// Independent loss oracle: explicit matvec per difference vector,
    /// triple loops straight from the definition.
    fn loss_brute(omega: &Mat, kernel: &KernelMatrix, tn: &TargetNeighbors, c: f64) -> f64 {
        let l = kernel.rows();
        let dist_sq = |a: usize, b: usize| -> f64 {
            let va = kernel.basis_column(a);
            let vb = kernel.basis_column(b);
            let diff: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
            let proj = omega.matvec(&diff);
            proj.iter().map(|v| v * v).sum()
        };
        let mut total = 0.0;
        for i in 0..l {
            for j in 0..l {
                if !tn.eta[i][j] {
                    continue;
                }
                total += dist_sq(i, j);
                for m in 0..l {
                    if tn.labels[i] != tn.labels[m] {
                        let s = dist_sq(i, j) - dist_sq(i, m) + 1.0;
                        total += c * s.max(0.0);
                    }
                }
            }
        }
        total
    }

    #[test]
    fn target_neighbors_small_class() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        let labels = vec![1, 1, 2];
        let tn = target_neighbors(&labels, &dist_block(&pts), 3);
        assert!(tn.eta[0][1] && tn.eta[1][0]);
        assert!(!tn.eta[2].iter().any(|&b| b), "singleton class has no neighbors");
        assert_eq!(tn.pairs.len(), 2);
    }

    #[test]
    fn target_neighbors_one_dim_example() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0]];
        let labels = vec![1, 1, 1];
        let tn = target_neighbors(&labels, &dist_block(&pts), 1);
        assert!(tn.eta[0][1]);
        assert!(tn.eta[1][0]);
        assert!(tn.eta[2][1], "5 is nearest to 1");
    }

    #[test]
    fn target_neighbors_same_class_only() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.gen_range(4..20);
            let pts: Vec<Vec<f64>> =
                (0..n).map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(1..4)).collect();
            let tn = target_neighbors(&labels, &dist_block(&pts), 2);
            for (i, j) in tn.pairs {
                assert_eq!(labels[i], labels[j]);
                assert_ne!(i, j);
            }
        }
    }

    #[test]
    fn kpca_degenerate_falls_back_to_seeded_random() {
        let k = kernel_of(&[vec![1.0], vec![1.0]], 1.0);
        let (omega, warnings) = kpca_init(&k, 2, 42);
        assert_eq!((omega.rows(), omega.cols()), (2, 2));
        assert!(warnings.iter().any(|w| w.contains("degenerate")));
        let (omega2, _) = kpca_init(&k, 2, 42);
        assert_eq!(omega.data(), omega2.data(), "fallback must be seed-deterministic");
    }

    #[test]
    fn kpca_equilateral_symmetry() {
        // equilateral triangle: two equal positive eigenvalues; projected
        // points stay pairwise equidistant
        let h = 3.0f64.sqrt() / 2.0;
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]];
        let k = kernel_of(&pts, 1.0);
        let mut lmat = Mat::zeros(3, 3);
        let inv = 1.0 / 3.0;
        for i in 0..3 {
            for j in 0..3 {
                lmat.set(i, j, if i == j { 1.0 - inv } else { -inv });
            }
        }
        let b = lmat.matmul(k.values()).matmul(&lmat);
        let (vals, _) = sym_eigen(&b);
        assert!((vals[0] - vals[1]).abs() < 1e-9, "symmetry forces an eigenvalue pair");

        let (omega, warnings) = kpca_init(&k, 2, 42);
        assert!(warnings.is_empty());
        let proj = omega.matmul(k.values());
        let d01 = sqdist(&proj.col(0), &proj.col(1));
        let d02 = sqdist(&proj.col(0), &proj.col(2));
        let d12 = sqdist(&proj.col(1), &proj.col(2));
        assert!((d01 - d02).abs() < 1e-6);
        assert!((d01 - d12).abs() < 1e-6);
    }

    #[test]
    fn kpca_whitening_identity() {
        let mut rng = StdRng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> =
            (0..8).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let k = kernel_of(&pts, 1.5);
        let (omega, warnings) = kpca_init(&k, 3, 42);
        assert!(warnings.is_empty());
        let l = 8;
        let mut h = Mat::zeros(l, l);
        for i in 0..l {
            for j in 0..l {
                h.set(i, j, if i == j { 1.0 - 1.0 / l as f64 } else { -1.0 / l as f64 });
            }
        }
        let b = h.matmul(k.values()).matmul(&h);
        let w = omega.matmul(&b).matmul(&omega.transpose());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((w.get(i, j) - want).abs() < 1e-6, "Ω (HKH) Ωᵀ should be I");
            }
        }
    }

    fn four_point_fixture() -> (KernelMatrix, TargetNeighbors) {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![4.0, 0.0], vec![5.0, 0.3]];
        let labels = vec![1, 1, 2, 2];
        let k = kernel_of(&pts, 2.0);
        let tn = target_neighbors(&labels, &dist_block(&pts), 1);
        (k, tn)
    }

    #[test]
    fn loss_zero_omega() {
        let (k, tn) = four_point_fixture();
        let omega = Mat::zeros(2, 4);
        // pull = 0; every (i,j,m) triple contributes h(1) = 1
        let triples: usize = tn
            .pairs
            .iter()
            .map(|&(i, _)| tn.same_class[i].iter().filter(|&&s| !s).count())
            .sum();
        let c = 0.7;
        assert!((loss(&omega, &k, &tn, c) - c * triples as f64).abs() < 1e-12);
    }

    #[test]
    fn loss_single_class_has_no_push() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.5]];
        let labels = vec![1, 1, 1];
        let k = kernel_of(&pts, 1.0);
        let tn = target_neighbors(&labels, &dist_block(&pts), 2);
        let (omega, _) = kpca_init(&k, 2, 42);
        let val = loss(&omega, &k, &tn, 5.0);
        let pull_only: f64 = {
            let proj = omega.matmul(k.values());
            tn.pairs.iter().map(|&(i, j)| sqdist(&proj.col(i), &proj.col(j))).sum()
        };
        assert!((val - pull_only).abs() < 1e-9);
    }

    #[test]
    fn loss_matches_brute_force() {
        let (k, tn) = four_point_fixture();
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..10 {
            let mut omega = Mat::zeros(2, 4);
            for i in 0..2 {
                for j in 0..4 {
                    omega.set(i, j, rng.gen_range(-1.0..1.0));
                }
            }
            let fast = loss(&omega, &k, &tn, 1.3);
            let slow = loss_brute(&omega, &k, &tn, 1.3);
            assert!((fast - slow).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_zero_at_zero_omega() {
        let (k, tn) = four_point_fixture();
        let omega = Mat::zeros(2, 4);
        let g = gamma_step(&omega, &k, &tn, 1.0);
        assert!(g.max_abs() == 0.0);
    }

    #[test]
    fn gradient_single_pull_pair_identity_omega() {
        // two same-class points, identity Ω: Γ = 2 (η_ij + η_ji) outer parts
        let pts = vec![vec![0.0], vec![1.0]];
        let labels = vec![1, 1];
        let k = kernel_of(&pts, 1.0);
        let tn = target_neighbors(&labels, &dist_block(&pts), 1);
        let omega = Mat::identity(2);
        let g = gamma_step(&omega, &k, &tn, 1.0);
        // v = k_0 - k_1; both ordered pairs (0,1) and (1,0) contribute 2vvᵀ
        let v: Vec<f64> = (0..2).map(|t| k.get(t, 0) - k.get(t, 1)).collect();
        for r in 0..2 {
            for t in 0..2 {
                let want = 4.0 * v[r] * v[t];
                assert!((g.get(r, t) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (k, tn) = four_point_fixture();
        let mut rng = StdRng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 10 {
            let mut omega = Mat::zeros(2, 4);
            for i in 0..2 {
                for j in 0..4 {
                    omega.set(i, j, rng.gen_range(-0.8..0.8));
                }
            }
            if !hinge_smooth(&omega, &k, &tn, 1e-3) {
                continue;
            }
            let g = gamma_step(&omega, &k, &tn, 1.0);
            let eps = 1e-5;
            for i in 0..2 {
                for j in 0..4 {
                    let mut plus = omega.clone();
                    plus.set(i, j, omega.get(i, j) + eps);
                    let mut minus = omega.clone();
                    minus.set(i, j, omega.get(i, j) - eps);
                    let fd = (loss(&plus, &k, &tn, 1.0) - loss(&minus, &k, &tn, 1.0)) / (2.0 * eps);
                    let denom = fd.abs().max(g.get(i, j).abs()).max(1e-8);
                    assert!(
                        ((g.get(i, j) - fd) / denom).abs() < 1e-4,
                        "grad {} vs fd {}",
                        g.get(i, j),
                        fd
                    );
                }
            }
            checked += 1;
        }
    }

    /// All hinge arguments stay at least `margin` away from the kink.
    fn hinge_smooth(omega: &Mat, k: &KernelMatrix, tn: &TargetNeighbors, margin: f64) -> bool {
        let proj = omega.matmul(k.values());
        let l = k.rows();
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
    fn train_single_class_monotone() {
        let pts = vec![vec![0.0], vec![0.7], vec![2.0], vec![3.1]];
        let labels = vec![1usize, 1, 1, 1];
        let k = kernel_of(&pts, 1.0);
        let tn = target_neighbors(&labels, &dist_block(&pts), 2);
        let cfg = KlmcaConfig { p: 2, lambda: 1e-2, max_iters: 60, ..Default::default() };
        let model = train(k, vec![0, 1, 2, 3], &tn, &cfg).unwrap();
        for w in model.loss_history.windows(2) {
            assert!(w[1] <= w[0], "loss history must be non-increasing");
        }
        assert!(model.loss_history.last().unwrap() < &model.loss_history[0]);
    }

    #[test]
    fn train_two_blob_margins_improve() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.4, 0.1],
            vec![0.2, 0.5],
            vec![3.0, 3.0],
            vec![3.3, 2.8],
            vec![2.9, 3.4],
        ];
        let labels = vec![1usize, 1, 1, 2, 2, 2];
        let k = kernel_of(&pts, 2.0);
        let tn = target_neighbors(&labels, &dist_block(&pts), 1);
        let cfg = KlmcaConfig { p: 2, lambda: 1e-2, max_iters: 100, c: 1.0, ..Default::default() };
        let kern = k.clone();
        let model = train(k, (0..6).collect(), &tn, &cfg).unwrap();
        assert!(
            model.loss_history.last().unwrap() < &model.loss_history[0],
            "training should reduce the loss on separable blobs"
        );
        // the stored Ω reproduces the final recorded loss
        let recomputed = loss(&model.omega, &kern, &tn, cfg.c);
        assert!((recomputed - model.loss_history.last().unwrap()).abs() < 1e-8);
    }

    #[test]
    fn train_infinite_tol_runs_one_iteration() {
        let (k, tn) = four_point_fixture();
        let cfg = KlmcaConfig { p: 2, tol: f64::INFINITY, max_iters: 50, ..Default::default() };
        let model = train(k, vec![0, 1, 2, 3], &tn, &cfg).unwrap();
        assert_eq!(model.loss_history.len(), 2, "init loss plus exactly one step");
    }

    #[test]
    fn project_identity_rows_and_duplicates() {
        let (k, tn) = four_point_fixture();
        let cfg = KlmcaConfig { p: 2, max_iters: 5, lambda: 1e-3, ..Default::default() };
        let model = train(k.clone(), vec![0, 1, 2, 3], &tn, &cfg).unwrap();

        // identity Ω picks out the first p rows of the block
        let ident = KlmcaModel {
            omega: {
                let mut m = Mat::zeros(2, 4);
                m.set(0, 0, 1.0);
                m.set(1, 1, 1.0);
                m
            },
            train_indices: vec![0, 1, 2, 3],
            bandwidth: k.bandwidth(),
            loss_history: vec![],
            train_kernel: None,
            warnings: vec![],
        };
        let block = Mat::from_rows(vec![
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 6.0],
            vec![7.0, 8.0],
        ]);
        let proj = project(&ident, &block).unwrap();
        assert_eq!(proj.row(0), &[1.0, 2.0]);
        assert_eq!(proj.row(1), &[3.0, 4.0]);

        // a duplicated unlabeled point projects exactly onto its twin
        let dup = {
            let mut b = Mat::zeros(4, 1);
            for r in 0..4 {
                b.set(r, 0, k.get(r, 2));
            }
            b
        };
        let pu = project(&model, &dup).unwrap();
        let pl = project(&model, k.values()).unwrap();
        for r in 0..pu.rows() {
            assert!((pu.get(r, 0) - pl.get(r, 2)).abs() < 1e-9);
        }

        // row-count mismatch is a contract error
        assert!(project(&model, &Mat::zeros(3, 1)).is_err());
    }

    #[test]
    fn classify_1nn_halfspace_and_oracle() {
        let pl = Mat::from_rows(vec![vec![-1.0, 1.0]]);
        let pu = Mat::from_rows(vec![vec![-0.2, 0.9]]);
        let got = classify_1nn(&pl, &[1, 2], &pu).unwrap();
        assert_eq!(got, vec![1, 2]);

        // coincident point takes its twin's label
        let pu2 = Mat::from_rows(vec![vec![1.0]]);
        assert_eq!(classify_1nn(&pl, &[1, 2], &pu2).unwrap(), vec![2]);

        // exhaustive-scan oracle on random fixtures
        let mut rng = StdRng::seed_from_u64(30);
        for _ in 0..20 {
            let l = rng.gen_range(1..8);
            let u = rng.gen_range(1..8);
            let p = rng.gen_range(1..4);
            let mut plm = Mat::zeros(p, l);
            let mut pum = Mat::zeros(p, u);
            for r in 0..p {
                for j in 0..l {
                    plm.set(r, j, rng.gen_range(-3.0..3.0));
                }
                for j in 0..u {
                    pum.set(r, j, rng.gen_range(-3.0..3.0));
                }
            }
            let labels: Vec<usize> = (0..l).map(|_| rng.gen_range(1..4)).collect();
            let got = classify_1nn(&plm, &labels, &pum).unwrap();
            for uu in 0..u {
                let mut best = (f64::INFINITY, 0usize);
                for j in 0..l {
                    let d = sqdist(&plm.col(j), &pum.col(uu));
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                assert_eq!(got[uu], labels[best.1]);
            }
        }
        assert!(classify_1nn(&Mat::zeros(1, 0), &[], &pu).is_err());
    }

    #[test]
    fn loss_invariant_under_orthogonal_rotation() {
        let (k, tn) = four_point_fixture();
        let mut rng = StdRng::seed_from_u64(13);
        let mut omega = Mat::zeros(2, 4);
        for i in 0..2 {
            for j in 0..4 {
                omega.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let theta: f64 = 0.83;
        let rot = Mat::from_rows(vec![
            vec![theta.cos(), -theta.sin()],
            vec![theta.sin(), theta.cos()],
        ]);
        let rotated = rot.matmul(&omega);
        let a = loss(&omega, &k, &tn, 1.0);
        let b = loss(&rotated, &k, &tn, 1.0);
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn model_json_round_trip() {
        let (k, tn) = four_point_fixture();
        let cfg = KlmcaConfig { p: 2, max_iters: 10, lambda: 1e-2, ..Default::default() };
        let model = train(k, vec![3, 1, 4, 9], &tn, &cfg).unwrap();
        let text = model_to_json(&model);
        let back = model_from_json(&text).unwrap();
        assert_eq!(back.train_indices, model.train_indices);
        assert_eq!(back.omega.data(), model.omega.data(), "Ω must round-trip bit-exactly");
        assert_eq!(back.loss_history, model.loss_history);
        assert!(model_from_json(&text.replace("\"version\": 1", "\"version\": 9")).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = KlmcaConfig::default();
        assert!(ok.validate().is_ok());
        assert!(KlmcaConfig { k: 0, ..ok.clone() }.validate().is_err());
        assert!(KlmcaConfig { c: 0.0, ..ok.clone() }.validate().is_err());
        assert!(KlmcaConfig { lambda: -1.0, ..ok.clone() }.validate().is_err());
        assert!(KlmcaConfig { p: 0, ..ok.clone() }.validate().is_err());
        assert!(KlmcaConfig { bandwidth: 0.0, ..ok }.validate().is_err());
    }
}
