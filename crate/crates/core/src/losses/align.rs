//! Image–text contrastive alignment (InfoNCE over the batch similarity matrix).

use serde::{Deserialize, Serialize};

use super::LossError;
use crate::numerics::{l2_norm, l2_normalize, softmax_temp, Tensor2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Similarity temperature κ.
    pub kappa: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { kappa: 1.0 }
    }
}

/// `S_ij = ẑᵢ·ĥⱼ / κ` plus its row softmax `σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    scores: Tensor2D,
    sigma: Tensor2D,
    kappa: f64,
}

impl SimilarityMatrix {
    /// Wraps precomputed scores. Used by tests and the gradient oracle, which
    /// need to perturb `S` directly.
    pub fn from_scores(scores: Tensor2D, kappa: f64) -> Result<Self, LossError> {
        if scores.rows() < 2 {
            return Err(LossError::BatchTooSmall(scores.rows()));
        }
        if scores.rows() != scores.cols() {
            return Err(LossError::ShapeMismatch {
                left: scores.shape(),
                right: (scores.cols(), scores.rows()),
            });
        }
        if !(kappa > 0.0) {
            return Err(LossError::BadTemperature(kappa));
        }
        let k = scores.rows();
        let mut sigma = Tensor2D::zeros(k, k);
        for i in 0..k {
            let p = softmax_temp(scores.row(i), 1.0)?;
            sigma.row_mut(i).copy_from_slice(&p);
        }
        Ok(Self { scores, sigma, kappa })
    }

    pub fn scores(&self) -> &Tensor2D {
        &self.scores
    }

    pub fn sigma(&self) -> &Tensor2D {
        &self.sigma
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn batch(&self) -> usize {
        self.scores.rows()
    }
}

fn normalized_rows(m: &Tensor2D) -> Result<Tensor2D, LossError> {
    let mut out = Tensor2D::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&l2_normalize(m.row(r))?);
    }
    Ok(out)
}

/// Pairwise similarities between ℓ2-normalized visual rows `z` and text rows `h`.
pub fn similarity_matrix(z: &Tensor2D, h: &Tensor2D, cfg: AlignConfig) -> Result<SimilarityMatrix, LossError> {
    if z.shape() != h.shape() {
        return Err(LossError::ShapeMismatch {
            left: z.shape(),
            right: h.shape(),
        });
    }
    if z.rows() < 2 {
        return Err(LossError::BatchTooSmall(z.rows()));
    }
    if !(cfg.kappa > 0.0) {
        return Err(LossError::BadTemperature(cfg.kappa));
    }
    let zn = normalized_rows(z)?;
    let hn = normalized_rows(h)?;
    let scores = zn.matmul_bt(&hn).scaled(1.0 / cfg.kappa);
    SimilarityMatrix::from_scores(scores, cfg.kappa)
}

/// `−(1/K) Σᵢ log(exp(S_ii) / Σⱼ exp(S_ij))`, evaluated with a stable log-sum-exp.
pub fn alignment_loss(sim: &SimilarityMatrix) -> f64 {
    let s = sim.scores();
    let k = s.rows();
    let mut total = 0.0;
    for i in 0..k {
        let row = s.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().fold(0.0, |a, &x| a + (x - max).exp()).ln();
        total += lse - row[i];
    }
    total / k as f64
}

/// `∂L/∂S`: `−(1 − σ_ii)/K` on the diagonal, `σ_ij/K` elsewhere.
pub fn alignment_grad(sim: &SimilarityMatrix) -> Tensor2D {
    let k = sim.batch();
    let inv_k = 1.0 / k as f64;
    let mut g = Tensor2D::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let s = sim.sigma().get(i, j);
            let v = if i == j { -(1.0 - s) * inv_k } else { s * inv_k };
            g.set(i, j, v);
        }
    }
    g
}

/// Chains `∂L/∂S` back through `S = ẑĥᵀ/κ` and the row normalizations.
/// Returns `(∂L/∂z, ∂L/∂h)` for the raw, unnormalized embeddings.
pub fn similarity_backward(
    z: &Tensor2D,
    h: &Tensor2D,
    grad_s: &Tensor2D,
    kappa: f64,
) -> Result<(Tensor2D, Tensor2D), LossError> {
    let zn = normalized_rows(z)?;
    let hn = normalized_rows(h)?;
    let g_zn = grad_s.matmul(&hn).scaled(1.0 / kappa);
    let g_hn = grad_s.matmul_at(&zn).scaled(1.0 / kappa);
    Ok((unnormalize_grad(z, &zn, &g_zn), unnormalize_grad(h, &hn, &g_hn)))
}

/// Backward of `x̂ = x/‖x‖`: `(g − x̂(x̂·g)) / ‖x‖` per row.
fn unnormalize_grad(raw: &Tensor2D, unit: &Tensor2D, g: &Tensor2D) -> Tensor2D {
    let mut out = Tensor2D::zeros(raw.rows(), raw.cols());
    for r in 0..raw.rows() {
        let norm = l2_norm(raw.row(r));
        let u = unit.row(r);
        let gr = g.row(r);
        let dot = u.iter().zip(gr).fold(0.0, |a, (x, y)| a + x * y);
        for ((o, &gi), &ui) in out.row_mut(r).iter_mut().zip(gr).zip(u) {
            *o = (gi - ui * dot) / norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error, RngSeed, SplitMix64};

    fn eye2() -> Tensor2D {
        Tensor2D::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor2D {
        let data = (0..rows * cols).map(|_| rng.normal()).collect();
        Tensor2D::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let s = similarity_matrix(&eye2(), &eye2(), AlignConfig { kappa: 1.0 }).unwrap();
        assert_eq!(s.scores().data(), &[1.0, 0.0, 0.0, 1.0]);
        let s = similarity_matrix(&eye2(), &eye2(), AlignConfig { kappa: 0.5 }).unwrap();
        assert_eq!(s.scores().data(), &[2.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn similarity_bounded_by_inverse_kappa() {
        let mut rng = SplitMix64::new(RngSeed(3));
        for &kappa in &[0.5, 1.0, 0.07] {
            let z = random(4, 8, &mut rng);
            let h = random(4, 8, &mut rng);
            let s = similarity_matrix(&z, &h, AlignConfig { kappa }).unwrap();
            // Brute-force Cauchy–Schwarz: |z·h| ≤ ‖z‖‖h‖.
            for i in 0..4 {
                for j in 0..4 {
                    let dot: f64 = z.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum();
                    let bound = l2_norm(z.row(i)) * l2_norm(h.row(j));
                    assert!(dot.abs() <= bound + 1e-12);
                    assert!(s.scores().get(i, j).abs() <= 1.0 / kappa + 1e-9);
                }
            }
        }
    }

    #[test]
    fn similarity_errors() {
        let one = Tensor2D::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(
            similarity_matrix(&one, &one, AlignConfig::default()),
            Err(LossError::BatchTooSmall(1))
        );
        let zero = Tensor2D::zeros(2, 2);
        assert!(matches!(
            similarity_matrix(&zero, &eye2(), AlignConfig::default()),
            Err(LossError::Numerics(_))
        ));
    }

    #[test]
    fn loss_examples() {
        let s = similarity_matrix(&eye2(), &eye2(), AlignConfig::default()).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((alignment_loss(&s) - expected).abs() < 1e-12);
        assert!((expected - 0.3133).abs() < 1e-4);

        // Each row constant: σ is uniform in every row.
        let rows = Tensor2D::from_rows(&[vec![0.3; 3], vec![-1.0; 3], vec![2.0; 3]]).unwrap();
        let s = SimilarityMatrix::from_scores(rows, 1.0).unwrap();
        assert!((alignment_loss(&s) - 3f64.ln()).abs() < 1e-12);

        let mut diag = Tensor2D::zeros(3, 3);
        for i in 0..3 {
            diag.set(i, i, 20.0);
        }
        let s = SimilarityMatrix::from_scores(diag, 1.0).unwrap();
        assert!(alignment_loss(&s) < 1e-8);
    }

    #[test]
    fn grad_examples() {
        let s = similarity_matrix(&eye2(), &eye2(), AlignConfig::default()).unwrap();
        let g = alignment_grad(&s);
        assert!((g.get(0, 0) + 0.1345).abs() < 1e-4);
        assert!((g.get(0, 1) - 0.1345).abs() < 1e-4);

        let mut diag = Tensor2D::zeros(2, 2);
        diag.set(0, 0, 40.0);
        diag.set(1, 1, 40.0);
        let g = alignment_grad(&SimilarityMatrix::from_scores(diag, 1.0).unwrap());
        assert!(g.get(0, 0).abs() < 1e-15);
    }

    #[test]
    fn grad_matches_finite_differences_and_rows_sum_to_zero() {
        let mut rng = SplitMix64::new(RngSeed(11));
        for _ in 0..20 {
            let k = 2 + rng.below(7);
            let s = random(k, k, &mut rng);
            let sim = SimilarityMatrix::from_scores(s.clone(), 1.0).unwrap();
            let g = alignment_grad(&sim);
            for i in 0..k {
                let sum: f64 = g.row(i).iter().sum();
                assert!(sum.abs() < 1e-9);
            }
            let f = |x: &[f64]| {
                let t = Tensor2D::from_vec(k, k, x.to_vec()).unwrap();
                alignment_loss(&SimilarityMatrix::from_scores(t, 1.0).unwrap())
            };
            let num = finite_diff_grad(f, s.data(), 1e-5).unwrap();
            for (a, b) in g.data().iter().zip(&num) {
                assert!(relative_error(*a, *b, 1e-3) < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn embedding_backward_matches_finite_differences() {
        let mut rng = SplitMix64::new(RngSeed(5));
        let (k, d, kappa) = (4, 6, 0.5);
        let z = random(k, d, &mut rng);
        let h = random(k, d, &mut rng);
        let cfg = AlignConfig { kappa };
        let sim = similarity_matrix(&z, &h, cfg).unwrap();
        let (gz, gh) = similarity_backward(&z, &h, &alignment_grad(&sim), kappa).unwrap();
        let fz = |x: &[f64]| {
            let zz = Tensor2D::from_vec(k, d, x.to_vec()).unwrap();
            alignment_loss(&similarity_matrix(&zz, &h, cfg).unwrap())
        };
        let fh = |x: &[f64]| {
            let hh = Tensor2D::from_vec(k, d, x.to_vec()).unwrap();
            alignment_loss(&similarity_matrix(&z, &hh, cfg).unwrap())
        };
        let nz = finite_diff_grad(fz, z.data(), 1e-5).unwrap();
        let nh = finite_diff_grad(fh, h.data(), 1e-5).unwrap();
        for (a, b) in gz.data().iter().zip(&nz).chain(gh.data().iter().zip(&nh)) {
            assert!(relative_error(*a, *b, 1e-3) < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn loss_decreases_when_positive_pair_strengthens() {
        let mut rng = SplitMix64::new(RngSeed(9));
        let s = random(5, 5, &mut rng);
        for i in 0..5 {
            let base = alignment_loss(&SimilarityMatrix::from_scores(s.clone(), 1.0).unwrap());
            let mut bumped = s.clone();
            bumped.set(i, i, s.get(i, i) + 0.25);
            let after = alignment_loss(&SimilarityMatrix::from_scores(bumped, 1.0).unwrap());
            assert!(after < base);
        }
    }

    #[test]
    fn row_scaling_leaves_similarity_unchanged() {
        let mut rng = SplitMix64::new(RngSeed(21));
        let z = random(3, 5, &mut rng);
        let h = random(3, 5, &mut rng);
        let mut zs = z.clone();
        let mut hs = h.clone();
        for r in 0..3 {
            let (a, b) = (0.1 + rng.next_f64() * 10.0, 0.1 + rng.next_f64() * 10.0);
            zs.row_mut(r).iter_mut().for_each(|v| *v *= a);
            hs.row_mut(r).iter_mut().for_each(|v| *v *= b);
        }
        let cfg = AlignConfig { kappa: 0.5 };
        let s1 = similarity_matrix(&z, &h, cfg).unwrap();
        let s2 = similarity_matrix(&zs, &hs, cfg).unwrap();
        for (a, b) in s1.scores().data().iter().zip(s2.scores().data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
