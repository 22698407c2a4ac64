//! Finite N-player normal-form games and their multilinear extensions.
//!
//! Payoffs are stored densely, one table per player, indexed by pure profiles
//! in row-major order: player 0 is the most significant digit and the last
//! player's strategy varies fastest.

use crate::error::{invalid, Error, Result};
use crate::rules::softmax;

/// Tolerance used when validating that a mixed strategy sums to one.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Default tolerance of [`Game::is_logit_equilibrium`].
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    counts: Vec<usize>,
    strides: Vec<usize>,
    payoffs: Vec<Vec<f64>>,
}

/// A pure strategy profile, one 0-based index per player.
pub type PureProfile = Vec<usize>;

impl Game {
    /// Builds a game from per-player payoff tables in row-major profile order.
    pub fn new(counts: Vec<usize>, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        if counts.is_empty() {
            return invalid("a game needs at least one player");
        }
        if counts.iter().any(|&c| c == 0) {
            return invalid("every player needs at least one strategy");
        }
        if payoffs.len() != counts.len() {
            return invalid(format!(
                "expected {} payoff tables, got {}",
                counts.len(),
                payoffs.len()
            ));
        }
        let profiles: usize = counts.iter().product();
        for (i, table) in payoffs.iter().enumerate() {
            if table.len() != profiles {
                return invalid(format!(
                    "payoff table of player {i} has {} entries, expected {profiles}",
                    table.len()
                ));
            }
            if let Some(v) = table.iter().find(|v| !v.is_finite()) {
                return invalid(format!("payoff table of player {i} contains {v}"));
            }
        }
        let mut strides = vec![1; counts.len()];
        for j in (0..counts.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * counts[j + 1];
        }
        Ok(Self {
            counts,
            strides,
            payoffs,
        })
    }

    /// Builds a game by evaluating `f(player, profile)` on every pure profile.
    pub fn from_fn(counts: Vec<usize>, f: impl Fn(usize, &[usize]) -> f64) -> Result<Self> {
        if counts.is_empty() || counts.iter().any(|&c| c == 0) {
            return invalid("strategy counts must be nonempty and positive");
        }
        let n = counts.len();
        let mut payoffs = vec![Vec::new(); n];
        for profile in Profiles::new(&counts) {
            for (i, table) in payoffs.iter_mut().enumerate() {
                table.push(f(i, &profile));
            }
        }
        Self::new(counts, payoffs)
    }

    /// Two-player game from the row player's matrix `a[s1][s2]` and the
    /// column player's matrix `b[s1][s2]`.
    pub fn bimatrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        let rows = a.len();
        let cols = a.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return invalid("bimatrix games need nonempty matrices");
        }
        if b.len() != rows || a.iter().chain(b).any(|row| row.len() != cols) {
            return invalid("bimatrix payoff matrices must share one rectangular shape");
        }
        Self::from_fn(vec![rows, cols], |i, p| {
            if i == 0 {
                a[p[0]][p[1]]
            } else {
                b[p[0]][p[1]]
            }
        })
    }

    /// Symmetric two-player game where both players receive `m[own][other]`.
    pub fn symmetric(m: &[Vec<f64>]) -> Result<Self> {
        let k = m.len();
        if m.iter().any(|row| row.len() != k) {
            return invalid("symmetric games need a square payoff matrix");
        }
        let transposed: Vec<Vec<f64>> = (0..k).map(|s| (0..k).map(|r| m[r][s]).collect()).collect();
        Self::bimatrix(m, &transposed)
    }

    pub fn num_players(&self) -> usize {
        self.counts.len()
    }

    pub fn strategy_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_strategies(&self, i: usize) -> usize {
        self.counts[i]
    }

    /// Total number of (player, strategy) pairs, i.e. the perception dimension.
    pub fn total_strategies(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn num_profiles(&self) -> usize {
        self.payoffs[0].len()
    }

    pub fn payoff_table(&self, i: usize) -> &[f64] {
        &self.payoffs[i]
    }

    pub fn profile_index(&self, profile: &[usize]) -> usize {
        profile.iter().zip(&self.strides).map(|(s, k)| s * k).sum()
    }

    pub fn profile_at(&self, mut index: usize) -> PureProfile {
        self.strides
            .iter()
            .map(|&k| {
                let s = index / k;
                index %= k;
                s
            })
            .collect()
    }

    pub fn payoff(&self, i: usize, profile: &[usize]) -> f64 {
        self.payoffs[i][self.profile_index(profile)]
    }

    /// Iterates over all pure profiles in storage order.
    pub fn profiles(&self) -> Profiles {
        Profiles::new(&self.counts)
    }

    /// Largest payoff magnitude over all players and profiles.
    pub fn max_abs_payoff(&self) -> f64 {
        self.payoffs
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn check_player(&self, i: usize) -> Result<()> {
        if i >= self.num_players() {
            return invalid(format!(
                "player {i} out of range for a {}-player game",
                self.num_players()
            ));
        }
        Ok(())
    }

    pub fn check_strategy(&self, i: usize, s: usize) -> Result<()> {
        self.check_player(i)?;
        if s >= self.counts[i] {
            return invalid(format!(
                "strategy {s} out of range for player {i} ({} strategies)",
                self.counts[i]
            ));
        }
        Ok(())
    }

    pub fn check_profile(&self, pi: &MixedProfile) -> Result<()> {
        let shape: Vec<usize> = pi.0.iter().map(Vec::len).collect();
        if shape != self.counts {
            return invalid(format!(
                "profile shape {shape:?} does not match strategy counts {:?}",
                self.counts
            ));
        }
        Ok(())
    }

    /// `G^i(s, pi^{-i})`: expected payoff of player `i` playing `s` against
    /// the opponents' mixed strategies in `opponents` (player `i`'s own entry
    /// is ignored).
    pub fn expected_payoff(&self, i: usize, s: usize, opponents: &MixedProfile) -> Result<f64> {
        self.check_strategy(i, s)?;
        self.check_profile(opponents)?;
        Ok(self.multilinear_payoff(i, s, &opponents.0))
    }

    /// Multilinear extension of `G^i(s, .)` evaluated at arbitrary per-player
    /// weight vectors. No simplex check is made on `weights`.
    pub fn multilinear_payoff(&self, i: usize, s: usize, weights: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        let mut profile = vec![0; self.num_players()];
        profile[i] = s;
        self.accumulate_over(i, &mut profile, 0, 1.0, weights, &mut |idx, w| {
            total += w * self.payoffs[i][idx]
        });
        total
    }

    // Recursive enumeration of S^{-i} with player `fixed` pinned to profile[fixed].
    fn accumulate_over(
        &self,
        fixed: usize,
        profile: &mut [usize],
        j: usize,
        weight: f64,
        weights: &[Vec<f64>],
        sink: &mut dyn FnMut(usize, f64),
    ) {
        if j == profile.len() {
            sink(self.profile_index(profile), weight);
            return;
        }
        if j == fixed {
            self.accumulate_over(fixed, profile, j + 1, weight, weights, sink);
            return;
        }
        for r in 0..self.counts[j] {
            let w = weights[j][r];
            if w == 0.0 {
                continue;
            }
            profile[j] = r;
            self.accumulate_over(fixed, profile, j + 1, weight * w, weights, sink);
        }
    }

    /// All expected payoffs `G^i(s, weights^{-i})` at once, in one pass over
    /// the pure profiles.
    pub fn payoff_field(&self, weights: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.num_players();
        let mut out: Vec<Vec<f64>> = self.counts.iter().map(|&k| vec![0.0; k]).collect();
        let mut prefix = vec![1.0; n + 1];
        let mut suffix = vec![1.0; n + 1];
        for (idx, profile) in self.profiles().enumerate() {
            for j in 0..n {
                prefix[j + 1] = prefix[j] * weights[j][profile[j]];
            }
            for j in (0..n).rev() {
                suffix[j] = suffix[j + 1] * weights[j][profile[j]];
            }
            for i in 0..n {
                let w = prefix[i] * suffix[i + 1];
                if w != 0.0 {
                    out[i][profile[i]] += w * self.payoffs[i][idx];
                }
            }
        }
        out
    }

    /// `G^i(s, r, pi^{-(i,j)})`: the payoff of `i` playing `s` when player
    /// `j` plays `r` and every other opponent mixes according to `others`.
    pub fn partial_expected_payoff(
        &self,
        i: usize,
        s: usize,
        j: usize,
        r: usize,
        others: &MixedProfile,
    ) -> Result<f64> {
        self.check_strategy(i, s)?;
        self.check_strategy(j, r)?;
        self.check_profile(others)?;
        if i == j {
            return invalid("partial expected payoff needs two distinct players");
        }
        let mut weights = others.0.clone();
        weights[j] = (0..self.counts[j]).map(|q| f64::from(u8::from(q == r))).collect();
        Ok(self.multilinear_payoff(i, s, &weights))
    }

    /// For fixed `(i, s)`, the table `H[j][r] = G^i(s, r, weights^{-(i,j)})`
    /// for every opponent `j` (the row for `j == i` is left at zero).
    pub fn pairwise_payoffs(&self, i: usize, s: usize, weights: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.num_players();
        let mut out: Vec<Vec<f64>> = self.counts.iter().map(|&k| vec![0.0; k]).collect();
        for (idx, profile) in self.profiles().enumerate() {
            if profile[i] != s {
                continue;
            }
            let g = self.payoffs[i][idx];
            for j in (0..n).filter(|&j| j != i) {
                let w: f64 = (0..n)
                    .filter(|&k| k != i && k != j)
                    .map(|k| weights[k][profile[k]])
                    .product();
                out[j][profile[j]] += w * g;
            }
        }
        out
    }

    /// Maximal payoff change a player can experience when exactly one
    /// opponent switches strategy. Zero for one-player games.
    pub fn eta(&self) -> f64 {
        let n = self.num_players();
        let mut eta = 0.0_f64;
        for (idx, profile) in self.profiles().enumerate() {
            for i in 0..n {
                let g = self.payoffs[i][idx];
                for j in (0..n).filter(|&j| j != i) {
                    for r in profile[j] + 1..self.counts[j] {
                        let other = idx + (r - profile[j]) * self.strides[j];
                        eta = eta.max((g - self.payoffs[i][other]).abs());
                    }
                }
            }
        }
        eta
    }

    /// Entropy-perturbed payoff of player `i` at the interior profile `pi`.
    pub fn perturbed_payoff(&self, i: usize, pi: &MixedProfile, beta_i: f64) -> Result<f64> {
        self.check_player(i)?;
        self.check_profile(pi)?;
        if !(beta_i > 0.0) {
            return invalid(format!("smoothing parameter must be positive, got {beta_i}"));
        }
        let own = &pi.0[i];
        if let Some(p) = own.iter().find(|&&p| p <= 0.0) {
            return Err(Error::Domain(format!(
                "entropy term undefined at boundary probability {p}"
            )));
        }
        let field = self.payoff_field(&pi.0);
        let linear: f64 = own.iter().zip(&field[i]).map(|(p, g)| p * g).sum();
        let entropy: f64 = own.iter().map(|p| p * (p.ln() - 1.0)).sum();
        Ok(linear - entropy / beta_i)
    }

    /// Whether `pi` is a Nash equilibrium of the entropy-perturbed game, i.e.
    /// `pi^i = softmax(beta_i G^i(., pi^{-i}))` for every player within `tol`.
    pub fn is_logit_equilibrium(&self, pi: &MixedProfile, betas: &[f64], tol: f64) -> bool {
        if self.check_profile(pi).is_err() || betas.len() != self.num_players() {
            return false;
        }
        self.logit_equilibrium_gap(pi, betas) <= tol
    }

    /// Sup-norm distance between `pi` and its logit response.
    pub fn logit_equilibrium_gap(&self, pi: &MixedProfile, betas: &[f64]) -> f64 {
        let field = self.payoff_field(&pi.0);
        field
            .iter()
            .zip(betas)
            .zip(&pi.0)
            .flat_map(|((g, &b), p)| {
                let scaled: Vec<f64> = g.iter().map(|v| b * v).collect();
                softmax(&scaled)
                    .into_iter()
                    .zip(p)
                    .map(|(q, p)| (q - p).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }
}

/// Odometer over pure profiles, last player fastest.
#[derive(Debug, Clone)]
pub struct Profiles {
    counts: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Profiles {
    fn new(counts: &[usize]) -> Self {
        Self {
            counts: counts.to_vec(),
            next: Some(vec![0; counts.len()]),
        }
    }
}

impl Iterator for Profiles {
    type Item = PureProfile;

    fn next(&mut self) -> Option<PureProfile> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for j in (0..succ.len()).rev() {
            succ[j] += 1;
            if succ[j] < self.counts[j] {
                self.next = Some(succ);
                break;
            }
            succ[j] = 0;
        }
        Some(current)
    }
}

/// One probability vector per player.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedProfile(Vec<Vec<f64>>);

impl MixedProfile {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_tolerance(probs, SIMPLEX_TOL)
    }

    pub fn with_tolerance(probs: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        for (i, p) in probs.iter().enumerate() {
            if p.is_empty() {
                return invalid(format!("player {i} has an empty mixed strategy"));
            }
            if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return invalid(format!("player {i} has a negative or non-finite probability"));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > tol {
                return invalid(format!("player {i} probabilities sum to {sum}"));
            }
        }
        Ok(Self(probs))
    }

    pub fn uniform(counts: &[usize]) -> Self {
        Self(counts.iter().map(|&k| vec![1.0 / k as f64; k]).collect())
    }

    pub fn pure(counts: &[usize], profile: &[usize]) -> Self {
        Self(
            counts
                .iter()
                .zip(profile)
                .map(|(&k, &s)| (0..k).map(|r| f64::from(u8::from(r == s))).collect())
                .collect(),
        )
    }

    pub fn player(&self, i: usize) -> &[f64] {
        &self.0[i]
    }

    pub fn num_players(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.0
    }

    /// Whether every component is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.0.iter().flatten().all(|&p| p > 0.0)
    }
}
