//! Decision rules mapping perception vectors to mixed strategies.

use crate::error::{invalid, Result};

/// A map from each player's perception vector to a mixed strategy.
///
/// Implementations must be continuous and strictly interior: every strategy
/// receives positive probability for every finite perception vector.
pub trait DecisionRule: Send + Sync {
    fn num_players(&self) -> usize;

    /// Writes `sigma^i(x_i)` into `out` (same length as `x_i`).
    fn sigma_into(&self, i: usize, x_i: &[f64], out: &mut [f64]);

    fn sigma(&self, i: usize, x_i: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x_i.len()];
        self.sigma_into(i, x_i, &mut out);
        out
    }

    /// Applies the rule to every player.
    fn profile(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter().enumerate().map(|(i, xi)| self.sigma(i, xi)).collect()
    }
}

/// Softmax with max-subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, 1.0, &mut out);
    out
}

fn softmax_into(z: &[f64], beta: f64, out: &mut [f64]) {
    let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (beta * (v - m)).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// The logit rule `sigma^{is}(x) ∝ exp(beta_i x^{is})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRule {
    betas: Vec<f64>,
}

impl LogitRule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return invalid("a logit rule needs at least one player");
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
            return invalid(format!("smoothing parameters must be positive and finite, got {b}"));
        }
        Ok(Self { betas })
    }

    /// Same smoothing parameter for all `n` players.
    pub fn uniform(n: usize, beta: f64) -> Result<Self> {
        Self::new(vec![beta; n])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i]
    }

    /// Logit choice probabilities, rejecting NaN perceptions.
    pub fn logit_sigma(&self, i: usize, x_i: &[f64]) -> Result<Vec<f64>> {
        if i >= self.betas.len() {
            return invalid(format!("player {i} out of range"));
        }
        if x_i.is_empty() {
            return invalid("empty perception vector");
        }
        if x_i.iter().any(|v| v.is_nan()) {
            return invalid("perception vector contains NaN");
        }
        Ok(self.sigma(i, x_i))
    }

    /// `max_i sum_{j != i} beta_j`; zero for a single player.
    pub fn alpha(&self) -> f64 {
        let total: f64 = self.betas.iter().sum();
        if self.betas.len() < 2 {
            return 0.0;
        }
        self.betas.iter().map(|b| total - b).fold(0.0, f64::max)
    }

    /// Sup-norm Lipschitz constant of `sigma^i`: `2 beta_i`.
    pub fn lipschitz_bound(&self, i: usize) -> f64 {
        2.0 * self.betas[i]
    }

    /// Lower bound on every logit probability of player `i` (with `k`
    /// strategies) when perceptions stay in the box `[-m, m]^k`.
    pub fn interiority_bound(&self, i: usize, k: usize, m: f64) -> f64 {
        1.0 / (1.0 + (k as f64 - 1.0) * (2.0 * self.betas[i] * m).exp())
    }

    /// `d sigma^{is} / d x^{ir} = beta_i sigma^s (delta_sr - sigma^r)`.
    pub fn sigma_jacobian(&self, i: usize, x_i: &[f64]) -> Vec<Vec<f64>> {
        let p = self.sigma(i, x_i);
        let b = self.betas[i];
        p.iter()
            .enumerate()
            .map(|(s, &ps)| {
                p.iter()
                    .enumerate()
                    .map(|(r, &pr)| b * ps * (f64::from(u8::from(s == r)) - pr))
                    .collect()
            })
            .collect()
    }
}

impl DecisionRule for LogitRule {
    fn num_players(&self) -> usize {
        self.betas.len()
    }

    fn sigma_into(&self, i: usize, x_i: &[f64], out: &mut [f64]) {
        softmax_into(x_i, self.betas[i], out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn symmetric_perceptions_give_uniform() {
        let rule = LogitRule::uniform(1, 7.0).unwrap();
        assert_eq!(rule.logit_sigma(0, &[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn log_two_gap() {
        let rule = LogitRule::uniform(1, 1.0).unwrap();
        let p = rule.logit_sigma(0, &[2f64.ln(), 0.0]).unwrap();
        assert!(sup_dist(&p, &[2.0 / 3.0, 1.0 / 3.0]) < 1e-15);
    }

    #[test]
    fn large_perceptions_do_not_overflow() {
        let rule = LogitRule::uniform(1, 10.0).unwrap();
        let p = rule.logit_sigma(0, &[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(p[0], 1.0);
        // exp(-10000) underflows to zero in double precision, the exact value
        // being far below the smallest subnormal.
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn nan_is_rejected() {
        let rule = LogitRule::uniform(1, 1.0).unwrap();
        assert!(rule.logit_sigma(0, &[f64::NAN, 0.0]).is_err());
        assert!(rule.logit_sigma(1, &[0.0]).is_err());
    }

    #[test]
    fn invalid_betas() {
        assert!(LogitRule::new(vec![]).is_err());
        assert!(LogitRule::new(vec![1.0, 0.0]).is_err());
        assert!(LogitRule::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn alpha_values() {
        assert_eq!(LogitRule::new(vec![0.4, 0.4]).unwrap().alpha(), 0.4);
        assert_eq!(LogitRule::new(vec![1.0, 2.0, 3.0]).unwrap().alpha(), 5.0);
        assert_eq!(LogitRule::new(vec![2.0]).unwrap().alpha(), 0.0);
        let n = 6;
        let r = LogitRule::uniform(n, 0.3).unwrap();
        assert!((r.alpha() - (n as f64 - 1.0) * 0.3).abs() < 1e-15);
    }

    #[test]
    fn lipschitz_bound_values() {
        assert_eq!(LogitRule::uniform(1, 0.5).unwrap().lipschitz_bound(0), 1.0);
        assert_eq!(LogitRule::uniform(1, 0.4).unwrap().lipschitz_bound(0), 0.8);
        assert_eq!(LogitRule::uniform(1, 2.0).unwrap().lipschitz_bound(0), 4.0);
    }

    #[test]
    fn lipschitz_bound_holds_on_samples() {
        let rule = LogitRule::uniform(1, 0.4).unwrap();
        let k = rule.lipschitz_bound(0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0_f64;
        for _ in 0..10_000 {
            let dim = rng.gen_range(2..6);
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let scale = 10f64.powf(rng.gen_range(-4.0..0.5));
            let y: Vec<f64> = x.iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect();
            let dx = sup_dist(&x, &y);
            if dx == 0.0 {
                continue;
            }
            worst = worst.max(sup_dist(&rule.sigma(0, &x), &rule.sigma(0, &y)) / dx);
        }
        assert!(worst <= k, "sampled ratio {worst} exceeds {k}");
    }

    #[test]
    fn interiority_bound_is_attained_at_box_corner() {
        let rule = LogitRule::uniform(1, 0.8).unwrap();
        let m = 2.0;
        let xi = rule.interiority_bound(0, 3, m);
        assert!(xi > 0.0);
        let p = rule.sigma(0, &[-m, m, m]);
        assert!((p[0] - xi).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let rule = LogitRule::uniform(1, 1.3).unwrap();
        let x = [0.2, -0.7, 1.1];
        let jac = rule.sigma_jacobian(0, &x);
        let h = 1e-6;
        for r in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[r] += h;
            xm[r] -= h;
            let (pp, pm) = (rule.sigma(0, &xp), rule.sigma(0, &xm));
            for s in 0..3 {
                assert!(((pp[s] - pm[s]) / (2.0 * h) - jac[s][r]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn translation_invariance(x in prop::collection::vec(-50.0f64..50.0, 1..6), c in -100.0f64..100.0, b in 0.01f64..5.0) {
            let rule = LogitRule::uniform(1, b).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            prop_assert!(sup_dist(&rule.sigma(0, &x), &rule.sigma(0, &shifted)) < 1e-12);
        }

        #[test]
        fn valid_interior_distribution(x in prop::collection::vec(-20.0f64..20.0, 1..6), b in 0.01f64..3.0) {
            let rule = LogitRule::uniform(1, b).unwrap();
            let p = rule.sigma(0, &x);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let xi = rule.interiority_bound(0, x.len(), m);
            prop_assert!(p.iter().all(|&v| v >= xi * (1.0 - 1e-12)));
        }

        #[test]
        fn argmax_is_preserved(x in prop::collection::vec(-10.0f64..10.0, 2..6), b in 0.01f64..5.0) {
            let rule = LogitRule::uniform(1, b).unwrap();
            let p = rule.sigma(0, &x);
            let best = (0..x.len()).max_by(|&a, &c| x[a].total_cmp(&x[c])).unwrap();
            let unique = x.iter().enumerate().all(|(s, &v)| s == best || v < x[best] - 1e-9);
            prop_assume!(unique);
            let pbest = (0..p.len()).max_by(|&a, &c| p[a].total_cmp(&p[c])).unwrap();
            prop_assert_eq!(best, pbest);
        }

        #[test]
        fn monotone_in_own_coordinate(x in prop::collection::vec(-10.0f64..10.0, 2..6), s in 0usize..6, d in 1e-3f64..3.0) {
            let s = s % x.len();
            let rule = LogitRule::uniform(1, 0.7).unwrap();
            let mut y = x.clone();
            y[s] += d;
            prop_assert!(rule.sigma(0, &y)[s] > rule.sigma(0, &x)[s]);
        }

        #[test]
        fn continuity_under_small_perturbation(x in prop::collection::vec(-10.0f64..10.0, 2..6), e in -1e-7f64..1e-7) {
            let rule = LogitRule::uniform(1, 2.0).unwrap();
            let mut y = x.clone();
            y[0] += e;
            prop_assert!(sup_dist(&rule.sigma(0, &x), &rule.sigma(0, &y)) <= 4.0 * e.abs() + 1e-15);
        }
    }
}
