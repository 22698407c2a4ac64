//! The discrete learning processes and their empirical diagnostics.
//!
//! In the adjusted process each player averages the payoff she receives into
//! the perception of the action just played, with weight `1/theta` where
//! `theta` counts her plays of that action. The baseline process uses the
//! global step `1/(n+1)` instead.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{JointState, Perceptions};
use crate::error::{invalid, Error, Result};
use crate::game::{Game, MixedProfile, PureProfile};
use crate::linalg::sup_distance;
use crate::rules::DecisionRule;

/// Which process generated a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProcessKind {
    /// Adjusted process: per-action step `1/theta`.
    Ap,
    /// Baseline process: global step `gamma_{n+1}` on the played action.
    Cms,
    /// Adjusted process in a Markov-modulated environment.
    Apm,
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProcessKind::Ap => "AP",
            ProcessKind::Cms => "CMS",
            ProcessKind::Apm => "APM",
        })
    }
}

impl std::str::FromStr for ProcessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AP" => Ok(ProcessKind::Ap),
            "CMS" => Ok(ProcessKind::Cms),
            "APM" => Ok(ProcessKind::Apm),
            _ => invalid(format!("unknown process '{s}' (expected AP, CMS or APM)")),
        }
    }
}

/// Step-size sequence of the baseline process.
///
/// Only the harmonic sequence is implemented; other schedules would be added
/// as variants here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepSize {
    #[default]
    Harmonic,
}

impl StepSize {
    /// `gamma_n` for `n >= 1`.
    pub fn gamma(&self, n: u64) -> f64 {
        match self {
            StepSize::Harmonic => 1.0 / n as f64,
        }
    }
}

/// Full state of the adjusted (or baseline) process.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionState {
    pub x: Perceptions,
    /// Play counters, initialised to `theta0` and incremented on each play.
    pub theta: Vec<Vec<f64>>,
    /// Number of stages played.
    pub n: u64,
}

impl PerceptionState {
    /// Starts from `x0` (zero when `None`) with every counter at `theta0`.
    pub fn new(game: &Game, x0: Option<&[Vec<f64>]>, theta0: f64) -> Result<Self> {
        if !(theta0 > 0.0 && theta0 <= 1.0) {
            return invalid(format!("initial counters must lie in (0, 1], got {theta0}"));
        }
        let counts = game.strategy_counts();
        let x = match x0 {
            Some(x0) => {
                if x0.len() != counts.len() || x0.iter().zip(counts).any(|(v, &k)| v.len() != k) {
                    return invalid("initial perceptions do not match the strategy counts");
                }
                if x0.iter().flatten().any(|v| !v.is_finite()) {
                    return invalid("initial perceptions must be finite");
                }
                x0.to_vec()
            }
            None => counts.iter().map(|&k| vec![0.0; k]).collect(),
        };
        let theta = counts.iter().map(|&k| vec![theta0; k]).collect();
        Ok(Self { x, theta, n: 0 })
    }

    /// Empirical frequencies `theta^{is} / sum_r theta^{ir}`.
    pub fn lambda(&self) -> Vec<Vec<f64>> {
        self.theta
            .iter()
            .map(|t| {
                let total: f64 = t.iter().sum();
                t.iter().map(|v| v / total).collect()
            })
            .collect()
    }

    pub fn joint(&self) -> JointState {
        JointState {
            x: self.x.clone(),
            lambda: self.lambda(),
        }
    }
}

/// Independent random streams: one per player for action sampling and one
/// for the environment.
#[derive(Debug, Clone)]
pub struct Streams {
    players: Vec<ChaCha8Rng>,
    env: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64, num_players: usize) -> Self {
        let stream = |k: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            rng
        };
        Self {
            players: (0..num_players).map(stream).collect(),
            env: stream(num_players),
        }
    }

    pub fn player(&mut self, i: usize) -> f64 {
        self.players[i].gen()
    }

    pub fn env(&mut self) -> f64 {
        self.env.gen()
    }
}

/// Inverse-CDF draw from `probs` with the uniform `u`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (s, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    probs.len() - 1
}

/// Actions and payoffs realised in one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub actions: PureProfile,
    pub payoffs: Vec<f64>,
}

/// Draws one action per player from `sigma(x)`, writing the choice
/// probabilities into `sigma`.
pub(crate) fn sample_actions(
    rule: &dyn DecisionRule,
    x: &[Vec<f64>],
    streams: &mut Streams,
    sigma: &mut [Vec<f64>],
    actions: &mut [usize],
) {
    for i in 0..x.len() {
        rule.sigma_into(i, &x[i], &mut sigma[i]);
        actions[i] = sample_index(&sigma[i], streams.player(i));
    }
}

pub(crate) fn realize_payoffs(game: &Game, actions: &[usize], payoffs: &mut [f64]) {
    let idx = game.profile_index(actions);
    for (i, g) in payoffs.iter_mut().enumerate() {
        *g = game.payoff_table(i)[idx];
    }
}

/// Applies one update given the realised actions and payoffs.
pub(crate) fn update(kind: ProcessKind, step: StepSize, state: &mut PerceptionState, actions: &[usize], payoffs: &[f64]) {
    let gamma = step.gamma(state.n + 1);
    for (i, (&s, &g)) in actions.iter().zip(payoffs).enumerate() {
        let x = &mut state.x[i][s];
        let theta = &mut state.theta[i][s];
        let w = match kind {
            ProcessKind::Ap | ProcessKind::Apm => 1.0 / *theta,
            ProcessKind::Cms => gamma,
        };
        *x += w * (g - *x);
        *theta += 1.0;
    }
    state.n += 1;
}

fn step_with(
    kind: ProcessKind,
    game: &Game,
    rule: &dyn DecisionRule,
    state: &mut PerceptionState,
    streams: &mut Streams,
) -> StepRecord {
    let n = game.num_players();
    let mut sigma: Vec<Vec<f64>> = state.x.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut actions = vec![0; n];
    let mut payoffs = vec![0.0; n];
    sample_actions(rule, &state.x, streams, &mut sigma, &mut actions);
    realize_payoffs(game, &actions, &mut payoffs);
    update(kind, StepSize::Harmonic, state, &actions, &payoffs);
    StepRecord { actions, payoffs }
}

/// One stage of the adjusted process.
pub fn step_ap(game: &Game, rule: &dyn DecisionRule, state: &mut PerceptionState, streams: &mut Streams) -> StepRecord {
    step_with(ProcessKind::Ap, game, rule, state, streams)
}

/// One stage of the baseline process with harmonic steps.
pub fn step_cms(game: &Game, rule: &dyn DecisionRule, state: &mut PerceptionState, streams: &mut Streams) -> StepRecord {
    step_with(ProcessKind::Cms, game, rule, state, streams)
}

/// Which stages a trajectory records. The terminal stage is always recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Stages `ceil(ratio^k)`.
    Geometric { ratio: f64 },
    /// Every `every` stages.
    Linear { every: u64 },
    /// Terminal stage only.
    None,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Geometric { ratio: 1.2 }
    }
}

impl Sampling {
    /// Strictly increasing recorded stages in `1..=steps`.
    pub fn stages(&self, steps: u64) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        match *self {
            Sampling::Geometric { ratio } => {
                if !(ratio > 1.0) || !ratio.is_finite() {
                    return invalid(format!("geometric sampling ratio must exceed 1, got {ratio}"));
                }
                let mut v = 1.0_f64;
                while v.ceil() < steps as f64 {
                    let s = v.ceil() as u64;
                    if out.last() != Some(&s) {
                        out.push(s);
                    }
                    v *= ratio;
                }
            }
            Sampling::Linear { every } => {
                if every == 0 {
                    return invalid("linear sampling interval must be positive");
                }
                out.extend((1..).map(|k| k * every).take_while(|&s| s < steps));
            }
            Sampling::None => {}
        }
        out.push(steps);
        Ok(out)
    }
}

/// A recorded stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub stage: u64,
    pub x: Perceptions,
    pub lambda: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    /// Actions and payoffs of the stage that produced this state.
    pub actions: PureProfile,
    pub payoffs: Vec<f64>,
    /// Environment state after the stage (random-environment runs only).
    pub env: Option<usize>,
}

/// Every realised action and payoff, stored flat (stride = player count).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub num_players: usize,
    pub actions: Vec<usize>,
    pub payoffs: Vec<f64>,
}

impl History {
    pub fn len(&self) -> usize {
        if self.num_players == 0 {
            0
        } else {
            self.actions.len() / self.num_players
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Actions and payoffs of stage `k` (1-based).
    pub fn stage(&self, k: usize) -> (&[usize], &[f64]) {
        let n = self.num_players;
        let r = (k - 1) * n..k * n;
        (&self.actions[r.clone()], &self.payoffs[r])
    }

    pub(crate) fn push(&mut self, actions: &[usize], payoffs: &[f64]) {
        self.actions.extend_from_slice(actions);
        self.payoffs.extend_from_slice(payoffs);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub process: ProcessKind,
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub terminal: PerceptionState,
    pub history: Option<History>,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectories record the terminal stage")
    }
}

/// Settings of a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub steps: u64,
    pub seed: u64,
    pub sampling: Sampling,
    pub theta0: f64,
    pub x0: Option<Perceptions>,
    pub step_size: StepSize,
    pub record_history: bool,
}

impl RunConfig {
    pub fn new(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            seed,
            sampling: Sampling::default(),
            theta0: 1.0,
            x0: None,
            step_size: StepSize::Harmonic,
            record_history: false,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

pub(crate) fn make_sample(
    rule: &dyn DecisionRule,
    state: &PerceptionState,
    actions: &[usize],
    payoffs: &[f64],
    env: Option<usize>,
) -> Sample {
    Sample {
        stage: state.n,
        x: state.x.clone(),
        lambda: state.lambda(),
        sigma: rule.profile(&state.x),
        actions: actions.to_vec(),
        payoffs: payoffs.to_vec(),
        env,
    }
}

/// Runs the adjusted or baseline process for `cfg.steps` stages.
pub fn run(kind: ProcessKind, game: &Game, rule: &dyn DecisionRule, cfg: &RunConfig) -> Result<Trajectory> {
    if kind == ProcessKind::Apm {
        return invalid("random-environment runs go through the markov module");
    }
    if cfg.steps == 0 {
        return invalid("a run needs at least one step");
    }
    if rule.num_players() != game.num_players() {
        return invalid("decision rule and game disagree on the number of players");
    }
    let stages = cfg.sampling.stages(cfg.steps)?;
    let mut state = PerceptionState::new(game, cfg.x0.as_deref(), cfg.theta0)?;
    let mut streams = Streams::new(cfg.seed, game.num_players());
    let n = game.num_players();
    let mut sigma: Vec<Vec<f64>> = state.x.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut actions = vec![0; n];
    let mut payoffs = vec![0.0; n];
    let mut history = cfg.record_history.then(|| History {
        num_players: n,
        ..History::default()
    });
    let mut samples = Vec::with_capacity(stages.len());
    let mut next = 0;
    while state.n < cfg.steps {
        sample_actions(rule, &state.x, &mut streams, &mut sigma, &mut actions);
        realize_payoffs(game, &actions, &mut payoffs);
        update(kind, cfg.step_size, &mut state, &actions, &payoffs);
        if let Some(h) = history.as_mut() {
            h.push(&actions, &payoffs);
        }
        if stages[next] == state.n {
            samples.push(make_sample(rule, &state, &actions, &payoffs, None));
            next += 1;
        }
    }
    Ok(Trajectory {
        process: kind,
        seed: cfg.seed,
        samples,
        terminal: state,
        history,
    })
}

/// Runs one trajectory per seed in parallel; results are in seed order.
pub fn run_batch(
    kind: ProcessKind,
    game: &Game,
    rule: &dyn DecisionRule,
    cfg: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    seeds
        .par_iter()
        .map(|&seed| run(kind, game, rule, &cfg.with_seed(seed)))
        .collect()
}

/// Reconstructs perceptions from a recorded history in closed form: after
/// `k` plays of an action with payoffs `g_1..g_k`,
/// `x = ((theta0 - 1) x0 + g_1 + ... + g_k) / (theta0 - 1 + k)`.
pub fn reconstruct_average(game: &Game, history: &History, x0: &[Vec<f64>], theta0: f64) -> Perceptions {
    let mut sums: Vec<Vec<f64>> = x0.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut plays: Vec<Vec<f64>> = sums.clone();
    for k in 1..=history.len() {
        let (a, g) = history.stage(k);
        for i in 0..game.num_players() {
            sums[i][a[i]] += g[i];
            plays[i][a[i]] += 1.0;
        }
    }
    x0.iter()
        .enumerate()
        .map(|(i, xi)| {
            xi.iter()
                .enumerate()
                .map(|(s, &x)| {
                    if plays[i][s] == 0.0 {
                        x
                    } else {
                        ((theta0 - 1.0) * x + sums[i][s]) / (theta0 - 1.0 + plays[i][s])
                    }
                })
                .collect()
        })
        .collect()
}

/// Minimum empirical frequency of every action over samples at or after
/// `burn_in`.
pub fn frequency_floor(traj: &Trajectory, burn_in: u64) -> Result<Vec<Vec<f64>>> {
    if burn_in >= traj.terminal.n {
        return invalid(format!(
            "burn-in {burn_in} must be below the horizon {}",
            traj.terminal.n
        ));
    }
    let mut floor: Option<Vec<Vec<f64>>> = None;
    for sample in traj.samples.iter().filter(|s| s.stage >= burn_in) {
        match floor.as_mut() {
            None => floor = Some(sample.lambda.clone()),
            Some(f) => {
                for (fi, li) in f.iter_mut().zip(&sample.lambda) {
                    for (a, b) in fi.iter_mut().zip(li) {
                        *a = a.min(*b);
                    }
                }
            }
        }
    }
    floor.ok_or_else(|| Error::InvalidArgument("no samples after the burn-in".into()))
}

/// Least-squares power-law fit `error_n ~ n^{-delta}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub delta_hat: f64,
    pub r2: f64,
    pub window: (u64, u64),
    pub points: usize,
    /// Errors reached the rounding floor; the slope is meaningless.
    pub degenerate: bool,
}

/// Errors at or below this are treated as exact convergence.
pub const ERROR_FLOOR: f64 = 1e-13;

/// Fits `log error = c - delta log n` by least squares.
pub fn fit_power_law(stages: &[u64], errors: &[f64]) -> Result<RateFit> {
    if stages.len() != errors.len() {
        return invalid("stages and errors have different lengths");
    }
    if stages.len() < 3 {
        return invalid("a rate fit needs at least three points");
    }
    let window = (stages[0], stages[stages.len() - 1]);
    if errors.iter().any(|&e| e <= ERROR_FLOOR) {
        return Ok(RateFit {
            delta_hat: f64::NAN,
            r2: 0.0,
            window,
            points: stages.len(),
            degenerate: true,
        });
    }
    let xs: Vec<f64> = stages.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("rate fit window spans a single stage");
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit {
        delta_hat: -slope,
        r2,
        window,
        points: stages.len(),
        degenerate: false,
    })
}

/// Distance used for rate estimates: Euclidean norm of `(x, lambda)` for the
/// adjusted processes, of `x` alone for the baseline process.
pub fn sample_error(kind: ProcessKind, sample: &Sample, rest: &JointState) -> f64 {
    let dx: f64 = crate::linalg::squared_distance(&sample.x, &rest.x);
    let dl = match kind {
        ProcessKind::Cms => 0.0,
        ProcessKind::Ap | ProcessKind::Apm => crate::linalg::squared_distance(&sample.lambda, &rest.lambda),
    };
    (dx + dl).sqrt()
}

/// Estimates the convergence exponent of a trajectory over the stage window
/// `[lo, hi]`. The terminal error must be below `threshold`.
pub fn rate_fit(traj: &Trajectory, rest: &JointState, window: (u64, u64), threshold: f64) -> Result<RateFit> {
    let (lo, hi) = window;
    if lo == 0 || lo >= hi || hi > traj.terminal.n {
        return invalid(format!("window [{lo}, {hi}] is not inside the trajectory"));
    }
    let terminal = sample_error(traj.process, traj.last(), rest);
    if !(terminal < threshold) {
        return Err(Error::Diagnostic(format!(
            "trajectory has not converged: terminal error {terminal:e} >= {threshold:e}"
        )));
    }
    let (stages, errors): (Vec<u64>, Vec<f64>) = traj
        .samples
        .iter()
        .filter(|s| s.stage >= lo && s.stage <= hi)
        .map(|s| (s.stage, sample_error(traj.process, s, rest)))
        .unzip();
    fit_power_law(&stages, &errors)
}

/// A periodic play sequence whose empirical frequencies approximate a target
/// profile by rationals `k^{is} / D_i`.
///
/// One block plays each pure profile `s` exactly `prod_i k^{i s^i}` times, so
/// block length is `prod_i D_i` and the per-player frequencies within a block
/// are exactly the rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSchedule {
    pub denominators: Vec<u64>,
    pub numerators: Vec<Vec<u64>>,
    pub target: Vec<Vec<f64>>,
    pub block_len: u64,
}

/// Longest block accepted by [`block_schedule`].
pub const MAX_BLOCK_LEN: u64 = 10_000_000;

/// Builds a block schedule with `|k^{is}/D_i - lambda^{is}| <= epsilon`.
pub fn block_schedule(game: &Game, target: &MixedProfile, epsilon: f64, max_block_len: u64) -> Result<BlockSchedule> {
    if !(epsilon > 0.0) {
        return invalid("epsilon must be positive");
    }
    game.check_profile(target)?;
    if !target.is_interior() {
        return invalid("target frequencies must be interior");
    }
    let mut denominators = Vec::new();
    let mut numerators = Vec::new();
    let mut block_len: u64 = 1;
    for lambda in target.as_slice() {
        let (d, k) = rational_approximation(lambda, epsilon, max_block_len)?;
        block_len = block_len
            .checked_mul(d)
            .filter(|&b| b <= max_block_len)
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "block length exceeds {max_block_len} at epsilon {epsilon}"
                ))
            })?;
        denominators.push(d);
        numerators.push(k);
    }
    Ok(BlockSchedule {
        denominators,
        numerators,
        target: target.as_slice().to_vec(),
        block_len,
    })
}

// Smallest denominator whose largest-remainder rounding (every numerator at
// least 1) is within epsilon of lambda.
fn rational_approximation(lambda: &[f64], epsilon: f64, cap: u64) -> Result<(u64, Vec<u64>)> {
    let m = lambda.len() as u64;
    if m == 1 {
        return Ok((1, vec![1]));
    }
    let limit = ((m as f64 / epsilon).ceil() as u64 + m).min(cap);
    for d in m..=limit {
        let k = largest_remainder(lambda, d);
        let err = k
            .iter()
            .zip(lambda)
            .map(|(&k, &l)| (k as f64 / d as f64 - l).abs())
            .fold(0.0, f64::max);
        if err <= epsilon {
            return Ok((d, k));
        }
    }
    Err(Error::Capacity(format!(
        "no denominator up to {limit} approximates the target within {epsilon}"
    )))
}

fn largest_remainder(lambda: &[f64], d: u64) -> Vec<u64> {
    let scaled: Vec<f64> = lambda.iter().map(|l| l * d as f64).collect();
    let mut k: Vec<u64> = scaled.iter().map(|v| (v.floor() as u64).max(1)).collect();
    let mut total: u64 = k.iter().sum();
    let mut order: Vec<usize> = (0..lambda.len()).collect();
    order.sort_by(|&a, &b| (scaled[b] - k[b] as f64).total_cmp(&(scaled[a] - k[a] as f64)));
    let mut idx = 0;
    while total < d {
        k[order[idx % order.len()]] += 1;
        total += 1;
        idx += 1;
    }
    // Flooring up to 1 can overshoot; take back from the largest entries.
    while total > d {
        let j = (0..k.len()).max_by_key(|&j| k[j]).expect("nonempty");
        k[j] -= 1;
        total -= 1;
    }
    k
}

impl BlockSchedule {
    /// Rational frequencies `k / D`.
    pub fn approximation(&self) -> Vec<Vec<f64>> {
        self.numerators
            .iter()
            .zip(&self.denominators)
            .map(|(k, &d)| k.iter().map(|&k| k as f64 / d as f64).collect())
            .collect()
    }

    /// Number of consecutive plays of each pure profile in one block.
    pub fn multiplicity(&self, profile: &[usize]) -> u64 {
        profile
            .iter()
            .zip(&self.numerators)
            .map(|(&s, k)| k[s])
            .product()
    }

    /// Profiles of one block in lexicographic order, each with its
    /// multiplicity.
    pub fn block(&self, game: &Game) -> Vec<(PureProfile, u64)> {
        game.profiles().map(|p| {
            let m = self.multiplicity(&p);
            (p, m)
        }).collect()
    }

    /// Plays `blocks` blocks through the adjusted update.
    pub fn play(&self, game: &Game, blocks: u64, x0: Option<&[Vec<f64>]>, theta0: f64) -> Result<PerceptionState> {
        let mut state = PerceptionState::new(game, x0, theta0)?;
        let mut payoffs = vec![0.0; game.num_players()];
        let block = self.block(game);
        for _ in 0..blocks {
            for (profile, m) in &block {
                realize_payoffs(game, profile, &mut payoffs);
                for _ in 0..*m {
                    update(ProcessKind::Ap, StepSize::Harmonic, &mut state, profile, &payoffs);
                }
            }
        }
        Ok(state)
    }

    /// Guaranteed accuracy after `blocks` blocks from perceptions bounded by
    /// `x0_sup`: returns `(lambda_bound, x_bound)` with
    /// `|lambda - target|_inf <= lambda_bound` and
    /// `|x^{is} - G^i(s, target^{-i})| <= x_bound`.
    ///
    /// `x_bound = max_i (range_i / 2) sum_{j != i} |k_j/D_j - target_j|_1
    /// + |theta0 - 1| (x0_sup + M) / (theta0 - 1 + blocks * min_s n_s)`
    /// where `range_i` is the spread of player i's payoffs and `M` the
    /// largest payoff magnitude; the second term is the residual weight of the
    /// initial perceptions.
    pub fn accuracy(&self, game: &Game, blocks: u64, x0_sup: f64, theta0: f64) -> (f64, f64) {
        let approx = self.approximation();
        let l1: Vec<f64> = approx
            .iter()
            .zip(&self.target)
            .map(|(a, t)| a.iter().zip(t).map(|(a, t)| (a - t).abs()).sum())
            .collect();
        let rational = approx
            .iter()
            .zip(&self.target)
            .flat_map(|(a, t)| a.iter().zip(t).map(|(a, t)| (a - t).abs()))
            .fold(0.0, f64::max);
        let mut lambda_bound = rational;
        let mut x_bound: f64 = 0.0;
        let big = game.max_abs_payoff();
        for i in 0..game.num_players() {
            let k = game.num_strategies(i) as f64;
            let d = self.denominators[i] as f64;
            // Counters start at theta0 per action.
            let total = k * theta0 + blocks as f64 * d;
            lambda_bound = lambda_bound.max(rational + k * theta0 / total);
            let table = game.payoff_table(i);
            let lo = table.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let others: f64 = (0..game.num_players()).filter(|&j| j != i).map(|j| l1[j]).sum();
            let min_plays = self.numerators[i].iter().copied().min().unwrap_or(1) as f64
                * (self.block_len as f64 / d)
                * blocks as f64;
            let init = if blocks == 0 {
                f64::INFINITY
            } else {
                (theta0 - 1.0).abs() * (x0_sup + big) / (theta0 - 1.0 + min_plays)
            };
            x_bound = x_bound.max((hi - lo) / 2.0 * others + init);
        }
        (lambda_bound, x_bound)
    }
}

/// Settings of [`cycle_detector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOptions {
    /// Trailing fraction of the horizon inspected.
    pub tail_fraction: f64,
    /// `c` in the noise floor `c / sqrt(n)`.
    pub noise_constant: f64,
    /// Multiple of the noise floor below which a sample counts as converged.
    pub multiple: f64,
}

/// Noise constant from pilot runs of the adjusted process on the cyclic 3x3
/// game at `beta = 0.4`: the 99th percentile of `sqrt(n) |x_n - x_*|_inf`
/// over 200 seeds at `n = 10^5` is about 2.3.
pub const DEFAULT_NOISE_CONSTANT: f64 = 2.5;

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            tail_fraction: 0.5,
            noise_constant: DEFAULT_NOISE_CONSTANT,
            multiple: 10.0,
        }
    }
}

impl CycleOptions {
    pub fn noise_floor(&self, n: u64) -> f64 {
        self.noise_constant / (n.max(1) as f64).sqrt()
    }
}

/// Tail statistics of a trajectory relative to a rest point.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    /// Every tail sample lies within `multiple` noise floors (evaluated at
    /// its own stage) of the rest point.
    pub converged: bool,
    pub tail_start: u64,
    pub tail_samples: usize,
    pub tail_min_distance: f64,
    pub tail_max_distance: f64,
    /// Largest ratio of distance to noise floor in the tail.
    pub tail_max_ratio: f64,
    /// Average of `sigma(x_n)` over tail samples.
    pub tail_sigma_mean: Vec<Vec<f64>>,
}

/// Classifies the tail of a trajectory as converged to `rest` (sup-norm
/// distance in perceptions) or not.
pub fn cycle_detector(traj: &Trajectory, rest: &[Vec<f64>], opts: CycleOptions) -> Result<CycleReport> {
    if !(opts.tail_fraction > 0.0 && opts.tail_fraction < 1.0) {
        return invalid("tail fraction must lie in (0, 1)");
    }
    let horizon = traj.terminal.n;
    let tail_start = ((1.0 - opts.tail_fraction) * horizon as f64).floor() as u64;
    let tail: Vec<&Sample> = traj.samples.iter().filter(|s| s.stage >= tail_start).collect();
    let mut sigma_mean: Vec<Vec<f64>> = rest.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut min_d = f64::INFINITY;
    let mut max_d: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    for s in &tail {
        let d = sup_distance(&s.x, rest);
        min_d = min_d.min(d);
        max_d = max_d.max(d);
        max_ratio = max_ratio.max(d / opts.noise_floor(s.stage));
        for (m, p) in sigma_mean.iter_mut().zip(&s.sigma) {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b / tail.len() as f64;
            }
        }
    }
    Ok(CycleReport {
        converged: max_ratio < opts.multiple,
        tail_start,
        tail_samples: tail.len(),
        tail_min_distance: min_d,
        tail_max_distance: max_d,
        tail_max_ratio: max_ratio,
        tail_sigma_mean: sigma_mean,
    })
}

/// Estimates the noise constant `c` as the `quantile` of
/// `sqrt(n) |x_n - x_*|_inf` at the terminal stage of pilot trajectories.
pub fn estimate_noise_constant(pilots: &[Trajectory], rest: &[Vec<f64>], quantile: f64) -> Result<f64> {
    if pilots.is_empty() || !(0.0..=1.0).contains(&quantile) {
        return invalid("need pilot trajectories and a quantile in [0, 1]");
    }
    let mut v: Vec<f64> = pilots
        .iter()
        .map(|t| (t.terminal.n as f64).sqrt() * sup_distance(&t.terminal.x, rest))
        .collect();
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() - 1) as f64 * quantile).round() as usize;
    Ok(v[idx])
}

/// Decomposition of one adjusted-process increment around the mean field.
///
/// With `gamma = 1 / sum_s theta^{is}`, the update reads
/// `x' = x + gamma (Psi_x + U)` and
/// `lambda' = lambda + gamma (Psi_lambda + M + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    pub gamma: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

/// Noise terms of the adjusted process for a realised stage taken from
/// `state`.
pub fn one_step_noise(game: &Game, rule: &dyn DecisionRule, state: &PerceptionState, record: &StepRecord) -> NoiseSample {
    let sigma = rule.profile(&state.x);
    let field = game.payoff_field(&sigma);
    let lambda = state.lambda();
    let mut out = NoiseSample {
        gamma: Vec::new(),
        u: Vec::new(),
        m: Vec::new(),
        b: Vec::new(),
    };
    for i in 0..game.num_players() {
        let total: f64 = state.theta[i].iter().sum();
        out.gamma.push(1.0 / total);
        let k = state.x[i].len();
        let mut u = vec![0.0; k];
        let mut m = vec![0.0; k];
        let mut b = vec![0.0; k];
        for s in 0..k {
            let played = if record.actions[i] == s { 1.0 } else { 0.0 };
            let x = state.x[i][s];
            let l = lambda[i][s];
            u[s] = (played * (record.payoffs[i] - x) - sigma[i][s] * (field[i][s] - x)) / l;
            m[s] = played - sigma[i][s];
            b[s] = -(played - l) / (total + 1.0);
        }
        out.u.push(u);
        out.m.push(m);
        out.b.push(b);
    }
    out
}
