//! Mean dynamics of the learning processes.
//!
//! `psi` is the vector field of the adjusted process on perceptions and
//! empirical frequencies, `phi` the field of the baseline process on
//! perceptions alone. Both vanish exactly at fixed points of the payoff map
//! `F(x) = G(., sigma(x))`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::builtin::constant_row_sum;
use crate::error::{invalid, Error, Result};
use crate::game::Game;
use crate::linalg::{self, flatten, sup_distance, unflatten};
use crate::ode::rk4_step;
use crate::rules::{DecisionRule, LogitRule};

/// Residual threshold (sup norm) for a point to count as a rest point.
pub const REST_POINT_TOL: f64 = 1e-8;

/// Per-player perception vectors.
pub type Perceptions = Vec<Vec<f64>>;

/// A point `(x, lambda)` of the joint state space.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub x: Perceptions,
    pub lambda: Vec<Vec<f64>>,
}

impl JointState {
    /// Validates finiteness of `x` and strict positivity of `lambda`.
    pub fn new(x: Perceptions, lambda: Vec<Vec<f64>>) -> Result<Self> {
        if x.len() != lambda.len() || x.iter().zip(&lambda).any(|(a, b)| a.len() != b.len()) {
            return invalid("perceptions and frequencies have different shapes");
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("perceptions must be finite");
        }
        check_interior(&lambda)?;
        Ok(Self { x, lambda })
    }

    /// The state `(x, sigma(x))`.
    pub fn on_response(rule: &dyn DecisionRule, x: Perceptions) -> Self {
        let lambda = rule.profile(&x);
        Self { x, lambda }
    }

    fn counts(&self) -> Vec<usize> {
        self.x.iter().map(Vec::len).collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = flatten(&self.x);
        v.extend(self.lambda.iter().flatten());
        v
    }

    pub fn from_flat(flat: &[f64], counts: &[usize]) -> Self {
        let t: usize = counts.iter().sum();
        Self {
            x: unflatten(&flat[..t], counts),
            lambda: unflatten(&flat[t..], counts),
        }
    }
}

fn check_interior(lambda: &[Vec<f64>]) -> Result<()> {
    if let Some(v) = lambda.iter().flatten().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!(
            "empirical frequencies must be strictly positive, found {v}"
        )));
    }
    Ok(())
}

/// Value of a vector field on the joint state space.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiValue {
    pub x: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
}

/// `F^{is}(x) = G^i(s, sigma^{-i}(x))`.
pub fn f_map(game: &Game, rule: &dyn DecisionRule, x: &[Vec<f64>]) -> Perceptions {
    game.payoff_field(&rule.profile(x))
}

/// Sup-norm residual `|F(x) - x|`.
pub fn rest_residual(game: &Game, rule: &dyn DecisionRule, x: &[Vec<f64>]) -> f64 {
    sup_distance(&f_map(game, rule, x), x)
}

/// Adjusted-process mean field `Psi(x, lambda)`.
pub fn psi(game: &Game, rule: &dyn DecisionRule, state: &JointState) -> Result<PsiValue> {
    check_interior(&state.lambda)?;
    Ok(psi_unchecked(game, rule, &state.x, &state.lambda))
}

fn psi_unchecked(
    game: &Game,
    rule: &dyn DecisionRule,
    x: &[Vec<f64>],
    lambda: &[Vec<f64>],
) -> PsiValue {
    let sigma = rule.profile(x);
    let field = game.payoff_field(&sigma);
    psi_from_parts(x, lambda, &sigma, &field)
}

pub(crate) fn psi_from_parts(
    x: &[Vec<f64>],
    lambda: &[Vec<f64>],
    sigma: &[Vec<f64>],
    field: &[Vec<f64>],
) -> PsiValue {
    let mut dx = Vec::with_capacity(x.len());
    let mut dl = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        dx.push(
            (0..x[i].len())
                .map(|s| sigma[i][s] / lambda[i][s] * (field[i][s] - x[i][s]))
                .collect(),
        );
        dl.push(
            (0..x[i].len())
                .map(|s| sigma[i][s] - lambda[i][s])
                .collect(),
        );
    }
    PsiValue { x: dx, lambda: dl }
}

/// Baseline-process mean field `Phi(x) = sigma(x) (F(x) - x)`.
pub fn phi(game: &Game, rule: &dyn DecisionRule, x: &[Vec<f64>]) -> Perceptions {
    let sigma = rule.profile(x);
    let field = game.payoff_field(&sigma);
    sigma
        .iter()
        .zip(&field)
        .zip(x)
        .map(|((p, f), xi)| {
            p.iter()
                .zip(f)
                .zip(xi)
                .map(|((p, f), x)| p * (f - x))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    FixedPoint,
    Damped,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestPoint {
    pub x: Perceptions,
    pub sigma: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
    pub method: SolveMethod,
}

impl RestPoint {
    pub fn state(&self) -> JointState {
        JointState {
            x: self.x.clone(),
            lambda: self.sigma.clone(),
        }
    }
}

/// Finds `x` with `F(x) = x`.
///
/// Plain iteration `x <- F(x)` first (a contraction when `2 eta alpha < 1`),
/// then damped iteration with weight 1/2, then Newton's method on `Phi`.
pub fn solve_rest_point(
    game: &Game,
    rule: &dyn DecisionRule,
    x0: &[Vec<f64>],
    opts: SolveOptions,
) -> Result<RestPoint> {
    solve_fixed_point(&|x: &[Vec<f64>]| f_map(game, rule, x), x0, opts).map(|(x, iterations, residual, method)| {
        RestPoint {
            sigma: rule.profile(&x),
            x,
            iterations,
            residual,
            method,
        }
    })
}

/// Generic fixed-point solver shared with the random-environment dynamics.
pub(crate) fn solve_fixed_point(
    map: &dyn Fn(&[Vec<f64>]) -> Perceptions,
    x0: &[Vec<f64>],
    opts: SolveOptions,
) -> Result<(Perceptions, usize, f64, SolveMethod)> {
    if !(opts.tol > 0.0) {
        return invalid("solver tolerance must be positive");
    }
    if x0.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("initial perceptions must be finite");
    }
    let counts: Vec<usize> = x0.iter().map(Vec::len).collect();
    let residual = |x: &[Vec<f64>]| sup_distance(&map(x), x);
    let mut best = (x0.to_vec(), residual(x0));

    for (gamma, method) in [(1.0, SolveMethod::FixedPoint), (0.5, SolveMethod::Damped)] {
        let mut x = x0.to_vec();
        for it in 0..=opts.max_iter {
            let fx = map(&x);
            let r = sup_distance(&fx, &x);
            if !r.is_finite() {
                break;
            }
            if r < best.1 {
                best = (x.clone(), r);
            }
            if r <= opts.tol {
                return Ok((x, it, r, method));
            }
            for (xi, fi) in x.iter_mut().zip(&fx) {
                for (a, b) in xi.iter_mut().zip(fi) {
                    *a = (1.0 - gamma) * *a + gamma * b;
                }
            }
        }
    }

    // Newton on G(x) = F(x) - x, which shares its zeros with Phi and is
    // better scaled when some choice probabilities are tiny.
    let g = |y: &[f64]| -> Vec<f64> {
        let x = unflatten(y, &counts);
        flatten(&map(&x))
            .iter()
            .zip(y)
            .map(|(f, x)| f - x)
            .collect()
    };
    let mut y = flatten(&best.0);
    let mut gy = g(&y);
    let mut r = linalg::sup_norm(&gy);
    for it in 0..200 {
        if r <= opts.tol {
            return Ok((unflatten(&y, &counts), it, r, SolveMethod::Newton));
        }
        let jac = numeric_jacobian(&g, &y);
        let rhs = nalgebra::DVector::from_iterator(gy.len(), gy.iter().map(|v| -v));
        let Some(step) = jac.lu().solve(&rhs) else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-6 {
            let trial: Vec<f64> = y.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let gt = g(&trial);
            let rt = linalg::sup_norm(&gt);
            if rt.is_finite() && rt < r {
                y = trial;
                gy = gt;
                r = rt;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if r <= opts.tol {
        return Ok((unflatten(&y, &counts), 200, r, SolveMethod::Newton));
    }
    Err(Error::NonConvergence {
        iterations: 2 * opts.max_iter + 200,
        residual: r.min(best.1),
    })
}

/// Rest points reached from several starting points, deduplicated at `1e-6`.
/// Not guaranteed to be exhaustive.
pub fn find_rest_points(
    game: &Game,
    rule: &dyn DecisionRule,
    starts: &[Perceptions],
    opts: SolveOptions,
) -> Vec<RestPoint> {
    let mut found: Vec<RestPoint> = Vec::new();
    for start in starts {
        if let Ok(p) = solve_rest_point(game, rule, start, opts) {
            if found.iter().all(|q| sup_distance(&q.x, &p.x) > 1e-6) {
                found.push(p);
            }
        }
    }
    found
}

/// The rest point `x = k/|S|` of a symmetric two-player game whose payoff
/// rows all sum to `k`; it exists for every smoothing parameter.
pub fn centered_rest_point(game: &Game) -> Option<Perceptions> {
    let k = constant_row_sum(game)?;
    let m = game.num_strategies(0);
    Some(vec![vec![k / m as f64; m]; 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Psi,
    Phi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Record every `sample_every`-th step (the initial and terminal states
    /// are always recorded).
    pub sample_every: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            dt: 0.01,
            sample_every: 10,
        }
    }
}

/// Sampled solution of a mean ODE. In `Phi` mode the `lambda` component of
/// each state is `sigma(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdePath {
    pub field: Field,
    pub times: Vec<f64>,
    pub states: Vec<JointState>,
}

impl OdePath {
    pub fn terminal(&self) -> &JointState {
        self.states.last().expect("paths hold at least the initial state")
    }
}

/// Fixed-step RK4 solution of `Psi` or `Phi` from `start`.
pub fn integrate(
    game: &Game,
    rule: &dyn DecisionRule,
    field: Field,
    start: &JointState,
    opts: IntegrateOptions,
) -> Result<OdePath> {
    if !(opts.dt > 0.0) || !(opts.t_end >= 0.0) {
        return invalid("integration needs dt > 0 and t_end >= 0");
    }
    let counts = start.counts();
    let t_len: usize = counts.iter().sum();
    let steps = (opts.t_end / opts.dt).round() as usize;
    let every = opts.sample_every.max(1);

    let mut y = match field {
        Field::Psi => {
            check_interior(&start.lambda)?;
            start.to_flat()
        }
        Field::Phi => flatten(&start.x),
    };
    let snapshot = |y: &[f64]| match field {
        Field::Psi => JointState::from_flat(y, &counts),
        Field::Phi => JointState::on_response(rule, unflatten(y, &counts)),
    };
    let mut f = |y: &[f64], dy: &mut [f64]| match field {
        Field::Psi => {
            let x = unflatten(&y[..t_len], &counts);
            let lambda = unflatten(&y[t_len..], &counts);
            let v = psi_unchecked(game, rule, &x, &lambda);
            dy[..t_len].copy_from_slice(&flatten(&v.x));
            dy[t_len..].copy_from_slice(&flatten(&v.lambda));
        }
        Field::Phi => {
            let x = unflatten(y, &counts);
            dy.copy_from_slice(&flatten(&phi(game, rule, &x)));
        }
    };

    let mut times = vec![0.0];
    let mut states = vec![snapshot(&y)];
    for step in 1..=steps {
        rk4_step(&mut f, &mut y, opts.dt);
        let t = step as f64 * opts.dt;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                time: t,
                reason: "state is no longer finite".into(),
            });
        }
        if field == Field::Psi {
            let lambda = unflatten(&y[t_len..], &counts);
            for (i, l) in lambda.iter().enumerate() {
                let sum: f64 = l.iter().sum();
                if l.iter().any(|v| *v <= 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Integration {
                        time: t,
                        reason: format!(
                            "frequencies of player {i} left the open simplex; reduce dt"
                        ),
                    });
                }
            }
        }
        if step % every == 0 || step == steps {
            times.push(t);
            states.push(snapshot(&y));
        }
    }
    Ok(OdePath {
        field,
        times,
        states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// Closed form, valid only at a rest point.
    Analytic,
    /// Central finite differences, valid anywhere.
    Numeric,
}

/// Jacobian of a mean field together with its spectrum and Gershgorin data.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub jacobian: DMatrix<f64>,
    pub eigenvalues: Vec<Complex64>,
    /// Largest real part of the eigenvalues.
    pub rho: f64,
    pub trace: f64,
    /// Diagonal entries of the perception rows.
    pub gershgorin_centers: Vec<f64>,
    /// Off-diagonal absolute row sums over perception columns.
    pub gershgorin_radii: Vec<f64>,
    /// Theoretical radius bound per perception row: `eta alpha` for `Psi`,
    /// `sigma^{is} eta alpha` for `Phi`.
    pub radius_bounds: Vec<f64>,
    pub stable: bool,
}

impl SpectralReport {
    fn build(jacobian: DMatrix<f64>, x_dim: usize, radius_bounds: Vec<f64>) -> Self {
        let eigenvalues = linalg::eigenvalues(&jacobian);
        let rho = linalg::max_real_part(&eigenvalues);
        let (gershgorin_centers, gershgorin_radii) = linalg::gershgorin(&jacobian, x_dim, x_dim);
        Self {
            trace: jacobian.trace(),
            jacobian,
            eigenvalues,
            rho,
            gershgorin_centers,
            gershgorin_radii,
            radius_bounds,
            stable: rho < 0.0,
        }
    }

    /// Whether every eigenvalue lies in the disc `|z - center| <= radius + slack`.
    pub fn eigenvalues_within(&self, center: f64, radius: f64, slack: f64) -> bool {
        self.eigenvalues
            .iter()
            .all(|z| (z - Complex64::new(center, 0.0)).norm() <= radius + slack)
    }
}

fn require_rest_point(game: &Game, rule: &LogitRule, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let r = rest_residual(game, rule, x);
    if !(r <= REST_POINT_TOL) {
        return Err(Error::Precondition(format!(
            "analytic Jacobian requires a rest point (residual {r:e})"
        )));
    }
    Ok(rule.profile(x))
}

/// `d F^{is} / d x^{jr}` at `x` for the logit rule (zero when `i == j`).
pub fn payoff_map_jacobian(game: &Game, rule: &LogitRule, sigma: &[Vec<f64>]) -> DMatrix<f64> {
    let counts = game.strategy_counts();
    let offsets = offsets(counts);
    let t = game.total_strategies();
    let field = game.payoff_field(sigma);
    let mut m = DMatrix::zeros(t, t);
    for i in 0..counts.len() {
        for s in 0..counts[i] {
            let h = game.pairwise_payoffs(i, s, sigma);
            for j in (0..counts.len()).filter(|&j| j != i) {
                for r in 0..counts[j] {
                    m[(offsets[i] + s, offsets[j] + r)] =
                        rule.beta(j) * sigma[j][r] * (h[j][r] - field[i][s]);
                }
            }
        }
    }
    m
}

fn offsets(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .scan(0, |acc, &k| {
            let o = *acc;
            *acc += k;
            Some(o)
        })
        .collect()
}

/// Jacobian of `Psi` at `state`.
pub fn jacobian_psi(
    game: &Game,
    rule: &LogitRule,
    state: &JointState,
    mode: JacobianMode,
) -> Result<SpectralReport> {
    check_interior(&state.lambda)?;
    let t = game.total_strategies();
    let bound = game.eta() * rule.alpha();
    let jac = match mode {
        JacobianMode::Analytic => {
            let sigma = require_rest_point(game, rule, &state.x)?;
            let gap = sup_distance(&sigma, &state.lambda);
            if gap > REST_POINT_TOL {
                return Err(Error::Precondition(format!(
                    "analytic Jacobian requires lambda = sigma(x) (gap {gap:e})"
                )));
            }
            let counts = game.strategy_counts();
            let offsets = offsets(counts);
            let dfx = payoff_map_jacobian(game, rule, &sigma);
            let mut m = DMatrix::zeros(2 * t, 2 * t);
            // x-block: dF/dx - I (the sigma/lambda factor is 1 and its
            // derivatives multiply F - x = 0).
            m.view_mut((0, 0), (t, t)).copy_from(&dfx);
            for k in 0..t {
                m[(k, k)] -= 1.0;
                m[(t + k, t + k)] = -1.0;
            }
            // lambda-block: d sigma / d x, player-diagonal.
            for (i, xi) in state.x.iter().enumerate() {
                let ds = rule.sigma_jacobian(i, xi);
                for s in 0..xi.len() {
                    for r in 0..xi.len() {
                        m[(t + offsets[i] + s, offsets[i] + r)] = ds[s][r];
                    }
                }
            }
            m
        }
        JacobianMode::Numeric => {
            let counts = state.counts();
            let f = |y: &[f64]| -> Vec<f64> {
                let s = JointState::from_flat(y, &counts);
                let v = psi_unchecked(game, rule, &s.x, &s.lambda);
                let mut out = flatten(&v.x);
                out.extend(v.lambda.iter().flatten());
                out
            };
            numeric_jacobian(&f, &state.to_flat())
        }
    };
    Ok(SpectralReport::build(jac, t, vec![bound; t]))
}

/// Jacobian of `Phi` at `x`.
pub fn jacobian_phi(
    game: &Game,
    rule: &LogitRule,
    x: &[Vec<f64>],
    mode: JacobianMode,
) -> Result<SpectralReport> {
    let t = game.total_strategies();
    let bound = game.eta() * rule.alpha();
    let sigma = rule.profile(x);
    let jac = match mode {
        JacobianMode::Analytic => {
            require_rest_point(game, rule, x)?;
            let mut m = payoff_map_jacobian(game, rule, &sigma);
            let flat_sigma = flatten(&sigma);
            for k in 0..t {
                m[(k, k)] -= 1.0;
                for c in 0..t {
                    m[(k, c)] *= flat_sigma[k];
                }
            }
            m
        }
        JacobianMode::Numeric => {
            let counts = game.strategy_counts().to_vec();
            let f = |y: &[f64]| flatten(&phi(game, rule, &unflatten(y, &counts)));
            numeric_jacobian(&f, &flatten(x))
        }
    };
    let bounds = flatten(&sigma).iter().map(|p| p * bound).collect();
    Ok(SpectralReport::build(jac, t, bounds))
}

/// Central-difference Jacobian with step `1e-6 * max(1, |v|)`.
pub fn numeric_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, at: &[f64]) -> DMatrix<f64> {
    let n = at.len();
    let m = f(at).len();
    let mut jac = DMatrix::zeros(m, n);
    let mut y = at.to_vec();
    for c in 0..n {
        let h = 1e-6 * at[c].abs().max(1.0);
        y[c] = at[c] + h;
        let fp = f(&y);
        y[c] = at[c] - h;
        let fm = f(&y);
        y[c] = at[c];
        for r in 0..m {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

/// Spectral classification of a list of rest points.
#[derive(Debug, Clone)]
pub struct Census {
    pub reports: Vec<SpectralReport>,
    pub two_eta_alpha: f64,
    /// `2 eta alpha < 1`: unique, globally attracting rest point.
    pub contraction_regime: bool,
    /// `1 <= 2 eta alpha < 2`: unique rest point, linearly stable.
    pub unique_stable_regime: bool,
}

pub fn stability_census(game: &Game, rule: &LogitRule, rest_points: &[Perceptions]) -> Result<Census> {
    let reports = rest_points
        .iter()
        .map(|x| {
            let state = JointState::on_response(rule, x.clone());
            jacobian_psi(game, rule, &state, JacobianMode::Analytic)
        })
        .collect::<Result<Vec<_>>>()?;
    let two_eta_alpha = 2.0 * game.eta() * rule.alpha();
    Ok(Census {
        reports,
        two_eta_alpha,
        contraction_regime: two_eta_alpha < 1.0,
        unique_stable_regime: (1.0..2.0).contains(&two_eta_alpha),
    })
}

/// `max{|x - x_*|, |lambda - lambda_*| / zeta}` in the sup norm.
pub fn lyapunov_value(state: &JointState, rest: &JointState, zeta: f64) -> f64 {
    sup_distance(&state.x, &rest.x).max(sup_distance(&state.lambda, &rest.lambda) / zeta)
}

/// Weight `zeta = 2 max_i (2 beta_i)`, above every logit Lipschitz constant.
pub fn default_zeta(rule: &LogitRule) -> f64 {
    2.0 * (0..rule.betas().len())
        .map(|i| rule.lipschitz_bound(i))
        .fold(0.0, f64::max)
}
