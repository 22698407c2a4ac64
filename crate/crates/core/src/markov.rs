//! Payoffs modulated by a finite Markov chain whose transitions depend on the
//! players' empirical frequencies.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{psi, solve_fixed_point, JointState, Perceptions, PsiValue, SolveMethod, SolveOptions};
use crate::error::{invalid, Error, Result};
use crate::game::Game;
use crate::rules::{DecisionRule, LogitRule};
use crate::simulate::{
    make_sample, realize_payoffs, sample_actions, sample_index, update, History, PerceptionState, ProcessKind,
    RunConfig, StepRecord, StepSize, Streams, Trajectory,
};

/// Tolerance for row sums of transition matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A transition matrix `P(lambda)` depending on the empirical frequencies.
pub trait ChainFamily: Send + Sync + fmt::Debug {
    fn num_states(&self) -> usize;

    fn transition(&self, lambda: &[Vec<f64>]) -> DMatrix<f64>;

    /// `P` does not depend on `lambda`.
    fn is_constant(&self) -> bool {
        false
    }

    /// Checks the family against the players' strategy counts.
    fn check_shape(&self, _counts: &[usize]) -> Result<()> {
        Ok(())
    }
}

/// Checks that `p` is square, nonnegative and row-stochastic.
pub fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return invalid("transition matrix must be square and nonempty");
    }
    for (w, row) in p.row_iter().enumerate() {
        if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid(format!("row {w} has a negative or non-finite entry"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return invalid(format!("row {w} sums to {sum}"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantChain {
    p: DMatrix<f64>,
}

impl ConstantChain {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        check_stochastic(&p)?;
        Ok(Self { p })
    }
}

impl ChainFamily for ConstantChain {
    fn num_states(&self) -> usize {
        self.p.nrows()
    }

    fn transition(&self, _lambda: &[Vec<f64>]) -> DMatrix<f64> {
        self.p.clone()
    }

    fn is_constant(&self) -> bool {
        true
    }
}

/// `P(lambda) = (1 - t) P0 + t P1` with `t = lambda^{player, strategy}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineChain {
    pub p0: DMatrix<f64>,
    pub p1: DMatrix<f64>,
    pub player: usize,
    pub strategy: usize,
}

impl AffineChain {
    pub fn new(p0: DMatrix<f64>, p1: DMatrix<f64>, player: usize, strategy: usize) -> Result<Self> {
        check_stochastic(&p0)?;
        check_stochastic(&p1)?;
        if p0.shape() != p1.shape() {
            return invalid("affine chain endpoints differ in size");
        }
        Ok(Self {
            p0,
            p1,
            player,
            strategy,
        })
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        &self.p0 * (1.0 - t) + &self.p1 * t
    }

    /// `d tau / d t` at `t`, from `dtau (I - P) = tau (P1 - P0)` with
    /// `dtau . 1 = 0`.
    pub fn invariant_derivative(&self, t: f64) -> Result<Vec<f64>> {
        let p = self.at(t);
        let tau = invariant_measure(&p, 1e-10)?;
        let w = p.nrows();
        let tau_row = DVector::from_vec(tau);
        let rhs_row = (&self.p1 - &self.p0).transpose() * &tau_row;
        let mut a = DMatrix::zeros(w + 1, w);
        a.view_mut((0, 0), (w, w))
            .copy_from(&(DMatrix::identity(w, w) - p.transpose()));
        for c in 0..w {
            a[(w, c)] = 1.0;
        }
        let mut b = DVector::zeros(w + 1);
        b.rows_mut(0, w).copy_from(&rhs_row);
        let svd = a.svd(true, true);
        let d = svd
            .solve(&b, 1e-14)
            .map_err(|e| Error::AssumptionViolation(e.to_string()))?;
        Ok(d.iter().copied().collect())
    }

    /// `max_t |d tau / d t|_inf` over `points` equally spaced values of `t`.
    /// Since `|t - t'| <= |lambda - lambda'|_inf`, this bounds the Lipschitz
    /// constant of `tau`.
    pub fn analytic_lipschitz(&self, points: usize) -> Result<f64> {
        let mut k: f64 = 0.0;
        for q in 0..points.max(2) {
            let t = q as f64 / (points.max(2) - 1) as f64;
            let d = self.invariant_derivative(t)?;
            k = k.max(d.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        Ok(k)
    }
}

impl ChainFamily for AffineChain {
    fn num_states(&self) -> usize {
        self.p0.nrows()
    }

    fn transition(&self, lambda: &[Vec<f64>]) -> DMatrix<f64> {
        self.at(lambda[self.player][self.strategy])
    }

    fn check_shape(&self, counts: &[usize]) -> Result<()> {
        if self.player >= counts.len() || self.strategy >= counts[self.player] {
            return invalid("affine chain control coordinate out of range");
        }
        Ok(())
    }
}

/// Unique invariant probability of `p`, from the null space of `I - P^T`
/// completed by the normalisation row. Periodic chains are handled.
pub fn invariant_measure(p: &DMatrix<f64>, tol: f64) -> Result<Vec<f64>> {
    check_stochastic(p)?;
    let w = p.nrows();
    let m = DMatrix::identity(w, w) - p.transpose();
    if w > 1 {
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(f64::total_cmp);
        if sv[1] <= 1e-10 * sv[w - 1].max(1.0) {
            return Err(Error::AssumptionViolation(format!(
                "invariant probability is not unique (singular value {:e})",
                sv[1]
            )));
        }
    }
    let mut a = DMatrix::zeros(w + 1, w);
    a.view_mut((0, 0), (w, w)).copy_from(&m);
    for c in 0..w {
        a[(w, c)] = 1.0;
    }
    let mut b = DVector::zeros(w + 1);
    b[w] = 1.0;
    let tau = a
        .svd(true, true)
        .solve(&b, 1e-15)
        .map_err(|e| Error::AssumptionViolation(e.to_string()))?;
    let mut tau: Vec<f64> = tau.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = tau.iter().sum();
    tau.iter_mut().for_each(|v| *v /= total);
    let r = invariance_residual(p, &tau);
    if !(r <= tol) {
        return Err(Error::NonConvergence {
            iterations: 1,
            residual: r,
        });
    }
    Ok(tau)
}

/// `|tau P - tau|_inf`.
pub fn invariance_residual(p: &DMatrix<f64>, tau: &[f64]) -> f64 {
    let t = DVector::from_column_slice(tau);
    let moved = p.transpose() * &t;
    (moved - t).amax()
}

#[derive(Debug, Clone)]
pub struct MarkovEnvironment {
    games: Vec<Game>,
    chain: Arc<dyn ChainFamily>,
}

impl MarkovEnvironment {
    /// One game per environment state, all with the same strategy counts.
    pub fn new(games: Vec<Game>, chain: Arc<dyn ChainFamily>) -> Result<Self> {
        if games.is_empty() {
            return invalid("an environment needs at least one state");
        }
        if games.len() != chain.num_states() {
            return invalid(format!(
                "{} payoff tables for a chain on {} states",
                games.len(),
                chain.num_states()
            ));
        }
        let counts = games[0].strategy_counts();
        if games.iter().any(|g| g.strategy_counts() != counts) {
            return invalid("payoff tables differ in strategy counts");
        }
        chain.check_shape(counts)?;
        Ok(Self { games, chain })
    }

    /// A single-state environment with payoffs `game`.
    pub fn deterministic(game: Game) -> Self {
        let chain = ConstantChain::new(DMatrix::from_element(1, 1, 1.0)).expect("1x1 identity is stochastic");
        Self {
            games: vec![game],
            chain: Arc::new(chain),
        }
    }

    pub fn num_states(&self) -> usize {
        self.games.len()
    }

    pub fn game(&self, w: usize) -> &Game {
        &self.games[w]
    }

    pub fn chain(&self) -> &dyn ChainFamily {
        self.chain.as_ref()
    }

    pub fn strategy_counts(&self) -> &[usize] {
        self.games[0].strategy_counts()
    }

    pub fn transition(&self, lambda: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let p = self.chain.transition(lambda);
        check_stochastic(&p)?;
        Ok(p)
    }

    pub fn invariant(&self, lambda: &[Vec<f64>], tol: f64) -> Result<Vec<f64>> {
        invariant_measure(&self.transition(lambda)?, tol)
    }

    /// The game with payoffs `sum_w tau_w G^i(s, w)`.
    pub fn averaged_game(&self, tau: &[f64]) -> Result<Game> {
        if tau.len() != self.num_states() {
            return invalid("environment weights have the wrong length");
        }
        let first = &self.games[0];
        let payoffs = (0..first.num_players())
            .map(|i| {
                (0..first.num_profiles())
                    .map(|k| self.games.iter().zip(tau).map(|(g, t)| t * g.payoff_table(i)[k]).sum())
                    .collect()
            })
            .collect();
        Game::new(first.strategy_counts().to_vec(), payoffs)
    }

    /// Largest unilateral-deviation payoff change over environment states.
    pub fn eta_bar(&self) -> f64 {
        self.games.iter().map(Game::eta).fold(0.0, f64::max)
    }

    /// Largest payoff change caused by the environment alone.
    pub fn eta_tilde(&self) -> f64 {
        let first = &self.games[0];
        let mut best: f64 = 0.0;
        for i in 0..first.num_players() {
            for k in 0..first.num_profiles() {
                let (lo, hi) = self.games.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| {
                    let v = g.payoff_table(i)[k];
                    (lo.min(v), hi.max(v))
                });
                best = best.max(hi - lo);
            }
        }
        best
    }
}

/// Invariant law of (profile, environment state): `prod_i sigma^{i s^i} tau_w`,
/// indexed `[profile][w]` with profiles in the game's order.
pub fn product_invariant(
    env: &MarkovEnvironment,
    rule: &dyn DecisionRule,
    x: &[Vec<f64>],
    lambda: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    let tau = env.invariant(lambda, tol)?;
    let sigma = rule.profile(x);
    Ok(env
        .game(0)
        .profiles()
        .map(|p| {
            let mass: f64 = p.iter().enumerate().map(|(i, &s)| sigma[i][s]).product();
            tau.iter().map(|t| mass * t).collect()
        })
        .collect())
}

/// Invariant measures are solved to this residual inside the mean field.
const TAU_TOL: f64 = 1e-10;

/// Mean field of the random-environment process: the adjusted-process field
/// of the game averaged by `tau(lambda)`.
pub fn psi_bar(env: &MarkovEnvironment, rule: &dyn DecisionRule, state: &JointState) -> Result<PsiValue> {
    let tau = env.invariant(&state.lambda, TAU_TOL)?;
    psi(&env.averaged_game(&tau)?, rule, state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvRestPoint {
    pub state: JointState,
    pub tau: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub method: SolveMethod,
}

/// Rest point of the random-environment mean field, by iterating
/// `x <- G(., sigma(x), tau(sigma(x)))`.
pub fn solve_env_rest_point(
    env: &MarkovEnvironment,
    rule: &dyn DecisionRule,
    x0: &[Vec<f64>],
    opts: SolveOptions,
) -> Result<EnvRestPoint> {
    // Failures inside the map (non-unique tau) surface as non-finite values.
    let map = |x: &[Vec<f64>]| -> Perceptions {
        let sigma = rule.profile(x);
        match env.invariant(&sigma, TAU_TOL).and_then(|tau| env.averaged_game(&tau)) {
            Ok(g) => g.payoff_field(&sigma),
            Err(_) => x.iter().map(|v| vec![f64::NAN; v.len()]).collect(),
        }
    };
    let (x, iterations, residual, method) = solve_fixed_point(&map, x0, opts)?;
    let lambda = rule.profile(&x);
    let tau = env.invariant(&lambda, TAU_TOL)?;
    Ok(EnvRestPoint {
        state: JointState { x, lambda },
        tau,
        iterations,
        residual,
        method,
    })
}

/// One stage of the random-environment process: payoffs are read in the
/// current state `w`, perceptions are updated as in the adjusted process,
/// then the environment moves with `P(lambda_n)` evaluated at the
/// pre-update frequencies. Returns the stage record and the next state.
pub fn step_apm(
    env: &MarkovEnvironment,
    rule: &dyn DecisionRule,
    state: &mut PerceptionState,
    w: usize,
    streams: &mut Streams,
) -> Result<(StepRecord, usize)> {
    let n = state.x.len();
    let mut sigma: Vec<Vec<f64>> = state.x.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut actions = vec![0; n];
    let mut payoffs = vec![0.0; n];
    let p = env.transition(&state.lambda())?;
    sample_actions(rule, &state.x, streams, &mut sigma, &mut actions);
    realize_payoffs(env.game(w), &actions, &mut payoffs);
    update(ProcessKind::Apm, StepSize::Harmonic, state, &actions, &payoffs);
    let row: Vec<f64> = p.row(w).iter().copied().collect();
    let next = sample_index(&row, streams.env());
    Ok((StepRecord { actions, payoffs }, next))
}

/// Runs the random-environment process from environment state `w0`.
pub fn run_apm(env: &MarkovEnvironment, rule: &dyn DecisionRule, cfg: &RunConfig, w0: usize) -> Result<Trajectory> {
    if cfg.steps == 0 {
        return invalid("a run needs at least one step");
    }
    if w0 >= env.num_states() {
        return invalid(format!("initial environment state {w0} out of range"));
    }
    let game0 = env.game(0);
    if rule.num_players() != game0.num_players() {
        return invalid("decision rule and environment disagree on the number of players");
    }
    let stages = cfg.sampling.stages(cfg.steps)?;
    let mut state = PerceptionState::new(game0, cfg.x0.as_deref(), cfg.theta0)?;
    let mut streams = Streams::new(cfg.seed, game0.num_players());
    let n = game0.num_players();
    let mut sigma: Vec<Vec<f64>> = state.x.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut actions = vec![0; n];
    let mut payoffs = vec![0.0; n];
    let mut history = cfg.record_history.then(|| History {
        num_players: n,
        ..History::default()
    });
    let fixed = if env.chain().is_constant() {
        Some(env.transition(&state.lambda())?)
    } else {
        None
    };
    let mut w = w0;
    let mut samples = Vec::with_capacity(stages.len());
    let mut next = 0;
    let mut row = vec![0.0; env.num_states()];
    while state.n < cfg.steps {
        match &fixed {
            Some(p) => copy_row(p, w, &mut row),
            None => copy_row(&env.transition(&state.lambda())?, w, &mut row),
        }
        sample_actions(rule, &state.x, &mut streams, &mut sigma, &mut actions);
        realize_payoffs(env.game(w), &actions, &mut payoffs);
        update(ProcessKind::Apm, cfg.step_size, &mut state, &actions, &payoffs);
        w = sample_index(&row, streams.env());
        if let Some(h) = history.as_mut() {
            h.push(&actions, &payoffs);
        }
        if stages[next] == state.n {
            samples.push(make_sample(rule, &state, &actions, &payoffs, Some(w)));
            next += 1;
        }
    }
    Ok(Trajectory {
        process: ProcessKind::Apm,
        seed: cfg.seed,
        samples,
        terminal: state,
        history,
    })
}

fn copy_row(p: &DMatrix<f64>, w: usize, out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(p.row(w).iter()) {
        *o = *v;
    }
}

pub fn run_apm_batch(
    env: &MarkovEnvironment,
    rule: &dyn DecisionRule,
    cfg: &RunConfig,
    w0: usize,
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    seeds
        .par_iter()
        .map(|&seed| run_apm(env, rule, &cfg.with_seed(seed), w0))
        .collect()
}

/// Estimated Lipschitz constant of `tau` in the sup norm on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    pub k: f64,
    /// Finite-difference step along coordinate directions.
    pub resolution: f64,
    pub quotients: usize,
}

/// Maximises `|tau(l) - tau(l')|_inf / |l - l'|_inf` over finite differences
/// along every direction `e_is - e_ir` at `bases` random interior base
/// points, plus `pairs` random pairs.
pub fn estimate_lipschitz(
    env: &MarkovEnvironment,
    bases: usize,
    pairs: usize,
    resolution: f64,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if !(resolution > 0.0 && resolution < 0.5) {
        return invalid("resolution must lie in (0, 1/2)");
    }
    let counts = env.strategy_counts().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_profile = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        counts
            .iter()
            .map(|&k| {
                let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|v| v / total).collect()
            })
            .collect()
    };
    let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let lam_sup = |a: &[Vec<f64>], b: &[Vec<f64>]| crate::linalg::sup_distance(a, b);
    let mut k: f64 = 0.0;
    let mut quotients = 0;
    for _ in 0..bases {
        let base = random_profile(&mut rng);
        let tau0 = env.invariant(&base, TAU_TOL)?;
        for i in 0..counts.len() {
            for s in 0..counts[i] {
                for r in (0..counts[i]).filter(|&r| r != s) {
                    let h = resolution.min(base[i][r]);
                    let mut moved = base.clone();
                    moved[i][s] += h;
                    moved[i][r] -= h;
                    let tau1 = env.invariant(&moved, TAU_TOL)?;
                    k = k.max(sup(&tau0, &tau1) / h);
                    quotients += 1;
                }
            }
        }
    }
    for _ in 0..pairs {
        let a = random_profile(&mut rng);
        let b = random_profile(&mut rng);
        let d = lam_sup(&a, &b);
        if d > 0.0 {
            k = k.max(sup(&env.invariant(&a, TAU_TOL)?, &env.invariant(&b, TAU_TOL)?) / d);
            quotients += 1;
        }
    }
    Ok(LipschitzEstimate {
        k,
        resolution,
        quotients,
    })
}

/// Sufficient condition for almost-sure convergence in a random environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub eta_bar: f64,
    pub eta_tilde: f64,
    pub alpha: f64,
    pub k: f64,
    pub num_states: usize,
    /// `2 eta_bar alpha + eta_tilde sqrt(|W|) k`.
    pub lhs: f64,
    pub main_ok: bool,
    /// `2 max_i beta_i`.
    pub beta_cap: f64,
    pub beta_cap_ok: bool,
    /// The chain does not depend on the frequencies (`k = 0`).
    pub constant_chain: bool,
    /// Constant chain: `2 eta_bar alpha < 1` alone. Otherwise both
    /// inequalities.
    pub satisfied: bool,
}

pub fn condition_report(env: &MarkovEnvironment, rule: &LogitRule, k: f64) -> Result<ConditionReport> {
    if !(k >= 0.0) {
        return invalid("Lipschitz constant must be nonnegative");
    }
    let constant_chain = env.chain().is_constant();
    let k = if constant_chain { 0.0 } else { k };
    let eta_bar = env.eta_bar();
    let eta_tilde = env.eta_tilde();
    let alpha = rule.alpha();
    let lhs = 2.0 * eta_bar * alpha + eta_tilde * (env.num_states() as f64).sqrt() * k;
    let beta_cap = 2.0 * rule.betas().iter().copied().fold(0.0, f64::max);
    let main_ok = lhs < 1.0;
    let beta_cap_ok = beta_cap < 1.0;
    Ok(ConditionReport {
        eta_bar,
        eta_tilde,
        alpha,
        k,
        num_states: env.num_states(),
        lhs,
        main_ok,
        beta_cap,
        beta_cap_ok,
        constant_chain,
        satisfied: if constant_chain { main_ok } else { main_ok && beta_cap_ok },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::cyclic_3x3;
    use crate::simulate::{run, Sampling};

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat())
    }

    #[test]
    fn identity_chain_is_not_unique() {
        let p = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(invariant_measure(&p, 1e-12), Err(Error::AssumptionViolation(_))));
    }

    #[test]
    fn symmetric_two_state_chains() {
        for p in [0.1, 0.5, 1.0] {
            let tau = invariant_measure(&m(&[&[1.0 - p, p], &[p, 1.0 - p]]), 1e-12).unwrap();
            assert!((tau[0] - 0.5).abs() < 1e-14 && (tau[1] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn periodic_three_cycle() {
        let p = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let tau = invariant_measure(&p, 1e-12).unwrap();
        for t in tau {
            assert!((t - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn non_stochastic_rejected() {
        assert!(invariant_measure(&m(&[&[0.5, 0.6], &[0.5, 0.5]]), 1e-12).is_err());
        assert!(ConstantChain::new(m(&[&[1.5, -0.5], &[0.5, 0.5]])).is_err());
    }

    fn two_state_env() -> MarkovEnvironment {
        let g0 = cyclic_3x3();
        let g1 = Game::from_fn(vec![3, 3], |i, p| g0.payoff(i, p) * 0.5 + 0.25).unwrap();
        let chain = ConstantChain::new(m(&[&[0.7, 0.3], &[0.4, 0.6]])).unwrap();
        MarkovEnvironment::new(vec![g0, g1], Arc::new(chain)).unwrap()
    }

    #[test]
    fn product_invariant_marginals() {
        let env = two_state_env();
        let rule = LogitRule::uniform(2, 0.7).unwrap();
        let x = vec![vec![0.1, 0.5, -0.2], vec![0.3, 0.0, 0.9]];
        let lambda = rule.profile(&x);
        let joint = product_invariant(&env, &rule, &x, &lambda, 1e-12).unwrap();
        let tau = env.invariant(&lambda, 1e-12).unwrap();
        let total: f64 = joint.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for w in 0..2 {
            let mw: f64 = joint.iter().map(|r| r[w]).sum();
            assert!((mw - tau[w]).abs() < 1e-12);
        }
        let game = env.game(0);
        for i in 0..2 {
            for s in 0..3 {
                let ms: f64 = game
                    .profiles()
                    .zip(&joint)
                    .filter(|(p, _)| p[i] == s)
                    .map(|(_, r)| r.iter().sum::<f64>())
                    .sum();
                assert!((ms - lambda[i][s]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_state_matches_deterministic() {
        let game = cyclic_3x3();
        let env = MarkovEnvironment::deterministic(game.clone());
        let rule = LogitRule::uniform(2, 0.4).unwrap();
        let state = JointState::new(vec![vec![0.1, 0.2, 0.3], vec![0.0, -0.5, 1.0]], vec![vec![0.2, 0.3, 0.5]; 2]).unwrap();
        assert_eq!(psi_bar(&env, &rule, &state).unwrap(), psi(&game, &rule, &state).unwrap());
        let mut cfg = RunConfig::new(3000, 21);
        cfg.sampling = Sampling::Linear { every: 100 };
        let a = run(ProcessKind::Ap, &game, &rule, &cfg).unwrap();
        let b = run_apm(&env, &rule, &cfg, 0).unwrap();
        assert_eq!(a.terminal, b.terminal);
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.actions, sb.actions);
        }
    }

    #[test]
    fn step_apm_matches_run() {
        let env = two_state_env();
        let rule = LogitRule::uniform(2, 0.4).unwrap();
        let cfg = RunConfig::new(500, 8);
        let traj = run_apm(&env, &rule, &cfg, 1).unwrap();
        let mut state = PerceptionState::new(env.game(0), None, 1.0).unwrap();
        let mut streams = Streams::new(8, 2);
        let mut w = 1;
        for _ in 0..500 {
            w = step_apm(&env, &rule, &mut state, w, &mut streams).unwrap().1;
        }
        assert_eq!(state, traj.terminal);
        assert_eq!(Some(w), traj.last().env);
    }

    #[test]
    fn constant_chain_mean_field_is_averaged_game() {
        let env = two_state_env();
        let rule = LogitRule::uniform(2, 0.4).unwrap();
        let tau = env.invariant(&[vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]], 1e-12).unwrap();
        assert!((tau[0] - 4.0 / 7.0).abs() < 1e-13);
        let state = JointState::new(vec![vec![0.1, 0.2, 0.3]; 2], vec![vec![0.2, 0.3, 0.5]; 2]).unwrap();
        let avg = env.averaged_game(&tau).unwrap();
        let a = psi_bar(&env, &rule, &state).unwrap();
        let b = psi(&avg, &rule, &state).unwrap();
        assert!(crate::linalg::sup_distance(&a.x, &b.x) < 1e-12);
    }

    #[test]
    fn env_rest_point_zeroes_mean_field() {
        let g0 = cyclic_3x3();
        let g1 = Game::from_fn(vec![3, 3], |i, p| 1.0 - g0.payoff(i, p)).unwrap();
        let chain = AffineChain::new(
            m(&[&[0.9, 0.1], &[0.2, 0.8]]),
            m(&[&[0.3, 0.7], &[0.6, 0.4]]),
            0,
            1,
        )
        .unwrap();
        let env = MarkovEnvironment::new(vec![g0, g1], Arc::new(chain)).unwrap();
        let rule = LogitRule::uniform(2, 0.3).unwrap();
        let rest = solve_env_rest_point(&env, &rule, &vec![vec![0.0; 3]; 2], SolveOptions::default()).unwrap();
        let v = psi_bar(&env, &rule, &rest.state).unwrap();
        assert!(v.x.iter().chain(&v.lambda).flatten().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn affine_lipschitz_estimate_matches_analytic() {
        let g = cyclic_3x3();
        let chain = AffineChain::new(
            m(&[&[0.9, 0.1], &[0.2, 0.8]]),
            m(&[&[0.3, 0.7], &[0.6, 0.4]]),
            0,
            0,
        )
        .unwrap();
        let analytic = chain.analytic_lipschitz(201).unwrap();
        let env = MarkovEnvironment::new(vec![g.clone(), g], Arc::new(chain)).unwrap();
        let est = estimate_lipschitz(&env, 200, 200, 1e-4, 3).unwrap();
        assert!(est.k <= analytic * 1.001);
        assert!(est.k >= 0.9 * analytic, "{} vs {analytic}", est.k);
    }

    #[test]
    fn condition_regimes() {
        let env = two_state_env();
        let rule = LogitRule::uniform(2, 0.4).unwrap();
        let rep = condition_report(&env, &rule, 5.0).unwrap();
        assert!(rep.constant_chain);
        assert_eq!(rep.k, 0.0);
        assert!((rep.lhs - 0.8).abs() < 1e-12);
        assert!(rep.satisfied);
        assert!(rep.beta_cap_ok);
        let single = MarkovEnvironment::deterministic(cyclic_3x3());
        let rep = condition_report(&single, &rule, 0.0).unwrap();
        assert_eq!(rep.eta_tilde, 0.0);
    }

    #[test]
    fn ergodic_frequencies_of_constant_chain() {
        let env = two_state_env();
        let rule = LogitRule::uniform(2, 0.4).unwrap();
        let mut cfg = RunConfig::new(200_000, 5);
        cfg.sampling = Sampling::Linear { every: 1 };
        let traj = run_apm(&env, &rule, &cfg, 0).unwrap();
        let visits = traj.samples.iter().filter(|s| s.env == Some(0)).count() as f64;
        let n = traj.samples.len() as f64;
        let freq = visits / n;
        // Lag-one correlation of this chain is 0.3; inflate the iid error.
        let se = (4.0 / 7.0 * 3.0 / 7.0 / n * (1.3 / 0.7)).sqrt();
        assert!((freq - 4.0 / 7.0).abs() < 3.0 * se, "{freq}");
    }
}
