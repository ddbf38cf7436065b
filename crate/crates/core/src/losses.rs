//! Contrastive objectives, the view-generator rewards and the sampler
//! objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{cosine, Tensor, Var};
use crate::views::ContrastiveView;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the cross-view term; the bottleneck term gets `1 - beta`.
    pub beta: f64,
    pub tau: f64,
    /// Loss level above which views count as hard.
    pub eps_prime: f64,
    /// Reward for easy views.
    pub xi: f64,
    /// Weight of the hardness reward against the alignment reward.
    pub w1: f64,
    pub infobn_drop: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.1,
            tau: 0.5,
            eps_prime: 1.2,
            xi: 0.1,
            w1: 0.5,
            infobn_drop: 0.2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, v: f64, range: &str| Err(Error::Config(format!("loss.{k} must lie in {range}, got {v}")));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", self.beta, "[0, 1]");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau", self.tau, "(0, inf)");
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return bad("xi", self.xi, "(0, 1)");
        }
        if !(0.0..=1.0).contains(&self.w1) {
            return bad("w1", self.w1, "[0, 1]");
        }
        if !(0.0..1.0).contains(&self.infobn_drop) {
            return bad("infobn_drop", self.infobn_drop, "[0, 1)");
        }
        if !self.eps_prime.is_finite() {
            return bad("eps_prime", self.eps_prime, "finite reals");
        }
        Ok(())
    }
}

/// Local row indices of the nodes present in both views, in ascending
/// global order.
pub fn shared_rows(a: &ContrastiveView, b: &ContrastiveView) -> (Vec<usize>, Vec<usize>) {
    let (mut ia, mut ib) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.nodes.len() && j < b.nodes.len() {
        match a.nodes[i].cmp(&b.nodes[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                ia.push(i);
                ib.push(j);
                i += 1;
                j += 1;
            }
        }
    }
    (ia, ib)
}

/// `-Σ_i log softmax_j(cos(a_i, b_j) / τ)[i]` over aligned rows.
pub fn contrast<'t>(a: Var<'t>, b: Var<'t>, tau: f64) -> Result<Var<'t>> {
    let n = a.shape()[0];
    if n == 0 || b.shape()[0] != n {
        return Err(Error::DegenerateBatch(format!(
            "contrastive term needs equal non-empty row counts, got {} and {}",
            n,
            b.shape()[0]
        )));
    }
    Ok(a.cosine_matrix(b)?.scale(1.0 / tau).log_softmax_rows()?.diag()?.sum().scale(-1.0))
}

/// Cross-view InfoNCE over rows already aligned by shared node.
pub fn info_nce<'t>(h1: Var<'t>, h2: Var<'t>, tau: f64) -> Result<Var<'t>> {
    let n = h1.shape()[0];
    if n < 2 {
        return Err(Error::DegenerateBatch(format!("InfoNCE needs at least 2 shared nodes, got {n}")));
    }
    contrast(h1, h2, tau)
}

/// InfoNCE between the two view encodings restricted to shared nodes.
pub fn info_nce_views<'t>(
    h1: Var<'t>,
    h2: Var<'t>,
    v1: &ContrastiveView,
    v2: &ContrastiveView,
    tau: f64,
) -> Result<Var<'t>> {
    let (r1, r2) = shared_rows(v1, v2);
    if r1.len() < 2 {
        return Err(Error::DegenerateBatch(format!(
            "InfoNCE needs at least 2 shared nodes, got {}",
            r1.len()
        )));
    }
    info_nce(h1.gather_rows(&r1)?, h2.gather_rows(&r2)?, tau)
}

/// Bottleneck term: each view contrasted with its own re-augmented encoding.
pub fn info_bn<'t>(h1: Var<'t>, h1_aug: Var<'t>, h2: Var<'t>, h2_aug: Var<'t>, tau: f64) -> Result<Var<'t>> {
    contrast(h1, h1_aug, tau)?.add(contrast(h2, h2_aug, tau)?)
}

/// `β·nce + (1 − β)·bn`.
pub fn overall_loss<'t>(nce: Var<'t>, bn: Var<'t>, beta: f64) -> Result<Var<'t>> {
    nce.scale(beta).add(bn.scale(1.0 - beta))
}

/// 1 for hard views (`loss > eps_prime`), `xi` otherwise.
pub fn reward_r1(loss: f64, eps_prime: f64, xi: f64) -> f64 {
    if loss > eps_prime {
        1.0
    } else {
        xi
    }
}

/// One minus the mean row cosine between aligned rows.
pub fn reward_r2(h1: &Tensor, h2: &Tensor) -> Result<f64> {
    let n = h1.rows();
    if n == 0 || h2.rows() != n {
        return Err(Error::DegenerateBatch(format!(
            "alignment reward needs equal non-empty row counts, got {n} and {}",
            h2.rows()
        )));
    }
    let mean = (0..n).map(|i| cosine(h1.row(i), h2.row(i))).sum::<f64>() / n as f64;
    Ok(1.0 - mean)
}

pub fn combined_reward(r1: f64, r2: f64, w1: f64) -> f64 {
    w1 * r1 + (1.0 - w1) * r2
}

/// `reward · (rec1 + rec2)` with the reward held constant.
pub fn sampler_objective<'t>(reward: f64, rec1: Var<'t>, rec2: Var<'t>) -> Result<Var<'t>> {
    Ok(rec1.add(rec2)?.scale(reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_views_give_n_log_n() {
        let tape = Tape::new();
        let row = vec![0.3, -1.0, 2.0];
        let h = tape.constant(Tensor::from_rows(&vec![row; 5]).unwrap());
        let l = info_nce(h, h, 0.5).unwrap().value().item();
        assert!((l - 5.0 * 5f64.ln()).abs() < 1e-9);
        let bn = info_bn(h, h, h, h, 0.5).unwrap().value().item();
        assert!((bn - 2.0 * 5.0 * 5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn nce_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::randn(&[3, 4], 0.0, 1.0, &mut rng);
        let b = Tensor::randn(&[3, 4], 0.0, 1.0, &mut rng);
        let tape = Tape::new();
        let got = info_nce(tape.constant(a.clone()), tape.constant(b.clone()), 0.5).unwrap().value().item();
        let mut want = 0.0;
        for i in 0..3 {
            let denom: f64 = (0..3).map(|j| (cosine(a.row(i), b.row(j)) / 0.5).exp()).sum();
            want -= ((cosine(a.row(i), b.row(i)) / 0.5).exp() / denom).ln();
        }
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn nce_needs_two_shared_nodes() {
        let tape = Tape::new();
        let h = tape.constant(Tensor::ones(&[1, 2]));
        assert!(matches!(info_nce(h, h, 0.5), Err(Error::DegenerateBatch(_))));
        let e = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(matches!(info_bn(e, e, h, h, 0.5), Err(Error::DegenerateBatch(_))));
    }

    #[test]
    fn two_node_bn_closed_form() {
        // Orthogonal rows against themselves: cos = I, so each term is
        // -log(e^{1/τ} / (e^{1/τ} + 1)).
        let tape = Tape::new();
        let h = tape.constant(Tensor::eye(2));
        let single = contrast(h, h, 0.5).unwrap().value().item();
        let want = -2.0 * (2f64.exp() / (2f64.exp() + 1.0)).ln();
        assert!((single - want).abs() < 1e-12);
    }

    #[test]
    fn mixing_and_rewards() {
        let tape = Tape::new();
        let l = overall_loss(tape.constant(Tensor::scalar(2.0)), tape.constant(Tensor::scalar(10.0)), 0.1)
            .unwrap()
            .value()
            .item();
        assert!((l - 9.2).abs() < 1e-12);
        assert_eq!(reward_r1(1.2, 1.2, 0.1), 0.1);
        assert_eq!(reward_r1(1.21, 1.2, 0.1), 1.0);
        assert_eq!(combined_reward(1.0, 0.0, 0.5), 0.5);
        assert!((combined_reward(0.1, 0.3, 0.5) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn r2_examples() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(reward_r2(&a, &a).unwrap(), 0.0);
        let b = Tensor::from_rows(&[vec![0.0, 2.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(reward_r2(&a, &b).unwrap(), 1.0);
        let c = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(reward_r2(&a, &c).unwrap(), 0.5);
    }

    #[test]
    fn shared_rows_aligns_by_global_id() {
        let v1 = ContrastiveView { nodes: vec![1, 3, 4, 7], edges: vec![], seeds: vec![] };
        let v2 = ContrastiveView { nodes: vec![0, 3, 7, 9], edges: vec![], seeds: vec![] };
        assert_eq!(shared_rows(&v1, &v2), (vec![1, 3], vec![1, 2]));
    }
}
