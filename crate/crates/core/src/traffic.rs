//! Congestion game on a network of parallel routes.
//!
//! Each of `N` players picks a route; a route carrying `u` users costs
//! `c_u` to each of them and a player's payoff is minus her cost. Route loads
//! under mixed play are Poisson-binomial and are computed exactly by
//! convolution.

use nalgebra::DMatrix;

use crate::dynamics::{
    jacobian_psi, numeric_jacobian, solve_rest_point, JacobianMode, JointState, Perceptions, SolveOptions,
    SpectralReport,
};
use crate::error::{invalid, Error, Result};
use crate::game::Game;
use crate::linalg::{self, flatten, sup_distance, unflatten};
use crate::rules::{softmax, DecisionRule, LogitRule};

/// Largest payoff tensor `to_game` will build.
pub const MAX_PROFILES: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficNetwork {
    /// `costs[r][u - 1]` is the cost of route `r` under load `u`.
    costs: Vec<Vec<f64>>,
}

impl TrafficNetwork {
    /// One nondecreasing cost sequence per route, each of length `N`.
    pub fn new(costs: Vec<Vec<f64>>) -> Result<Self> {
        if costs.is_empty() {
            return invalid("a network needs at least one route");
        }
        let n = costs[0].len();
        if n == 0 {
            return invalid("a network needs at least one player");
        }
        for (r, c) in costs.iter().enumerate() {
            if c.len() != n {
                return invalid(format!("route {r} has {} costs, expected {n}", c.len()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return invalid(format!("route {r} has a non-finite cost"));
            }
            if c.windows(2).any(|w| w[1] < w[0]) {
                return invalid(format!("costs of route {r} must be nondecreasing"));
            }
        }
        Ok(Self { costs })
    }

    pub fn num_routes(&self) -> usize {
        self.costs.len()
    }

    pub fn num_players(&self) -> usize {
        self.costs[0].len()
    }

    pub fn costs(&self) -> &[Vec<f64>] {
        &self.costs
    }

    /// Cost of route `r` with `u >= 1` users.
    pub fn cost(&self, r: usize, u: usize) -> f64 {
        self.costs[r][u - 1]
    }

    /// Largest cost increment `c_u - c_{u-1}` over routes and `2 <= u <= N`.
    pub fn eta(&self) -> f64 {
        self.costs
            .iter()
            .flat_map(|c| c.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }

    /// The normal-form game with `G^i(r) = -c_u^{r^i}`, `u` the load on
    /// player i's route.
    pub fn to_game(&self) -> Result<Game> {
        let n = self.num_players();
        let routes = self.num_routes();
        let size = (routes as f64).powi(n as i32);
        if size > MAX_PROFILES as f64 {
            return Err(Error::Capacity(format!(
                "{routes}^{n} profiles exceed the limit of {MAX_PROFILES}"
            )));
        }
        Game::from_fn(vec![routes; n], |i, p| {
            let load = p.iter().filter(|&&r| r == p[i]).count();
            -self.cost(p[i], load)
        })
    }

    fn check_profile(&self, pi: &[Vec<f64>]) -> Result<()> {
        if pi.len() != self.num_players() || pi.iter().any(|p| p.len() != self.num_routes()) {
            return invalid("profile shape does not match the network");
        }
        Ok(())
    }

    /// Distribution of the load on route `r` (indices `0..=N`) when every
    /// player `i` not in `exclude` uses it independently with probability
    /// `pi[i][r]`.
    pub fn load_distribution(&self, r: usize, pi: &[Vec<f64>], exclude: &[usize]) -> Result<Vec<f64>> {
        self.check_profile(pi)?;
        if r >= self.num_routes() {
            return invalid(format!("route {r} out of range"));
        }
        if let Some(i) = exclude.iter().find(|&&i| i >= self.num_players()) {
            return invalid(format!("player {i} out of range"));
        }
        let probs: Vec<f64> = (0..self.num_players())
            .filter(|i| !exclude.contains(i))
            .map(|i| pi[i][r])
            .collect();
        let mut dist = poisson_binomial(&probs);
        dist.resize(self.num_players() + 1, 0.0);
        Ok(dist)
    }

    /// Exact potential `-E[sum_r sum_{u=1}^{U^r} c_u^r]`.
    pub fn potential(&self, pi: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for r in 0..self.num_routes() {
            let dist = self.load_distribution(r, pi, &[])?;
            let mut cumulative = 0.0;
            for (u, p) in dist.iter().enumerate().skip(1) {
                cumulative += self.cost(r, u);
                total += p * cumulative;
            }
        }
        Ok(-total)
    }

    /// `G^i(s, pi^{-i}) = -E[c^s_{1 + U^s_{-i}}]`, computed from load
    /// distributions rather than the payoff tensor.
    pub fn expected_payoffs(&self, pi: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_profile(pi)?;
        (0..self.num_players())
            .map(|i| {
                (0..self.num_routes())
                    .map(|s| {
                        let dist = self.load_distribution(s, pi, &[i])?;
                        Ok(-(0..self.num_players()).map(|u| dist[u] * self.cost(s, u + 1)).sum::<f64>())
                    })
                    .collect()
            })
            .collect()
    }

    /// `d^2 Potential / d pi^{jr} d pi^{ir} = E[c^r_{U+1} - c^r_{U+2}]` with
    /// `U` the load from players other than `i` and `j`.
    pub fn second_partial(&self, pi: &[Vec<f64>], i: usize, j: usize, r: usize) -> Result<f64> {
        if i == j {
            return invalid("second partial needs two distinct players");
        }
        let dist = self.load_distribution(r, pi, &[i, j])?;
        let n = self.num_players();
        Ok((0..=n - 2).map(|u| dist[u] * (self.cost(r, u + 1) - self.cost(r, u + 2))).sum())
    }
}

/// Distribution of a sum of independent Bernoulli variables, by the
/// convolution recurrence.
pub fn poisson_binomial(probs: &[f64]) -> Vec<f64> {
    let mut dist = vec![0.0; probs.len() + 1];
    dist[0] = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        for u in (1..=k + 1).rev() {
            dist[u] = dist[u] * (1.0 - p) + dist[u - 1] * p;
        }
        dist[0] *= 1.0 - p;
    }
    dist
}

// Expected cost of route r for one player when each of the other N - 1
// players uses it with probability p.
fn symmetric_route_cost(net: &TrafficNetwork, r: usize, p: f64) -> f64 {
    let dist = poisson_binomial(&vec![p; net.num_players() - 1]);
    dist.iter().enumerate().map(|(u, q)| q * net.cost(r, u + 1)).sum()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f(lo) <= 0 <= f(hi), f nondecreasing.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Rest point with every player holding the same perceptions `x̂`.
///
/// With `p_r = sigma^r(x̂)`, the rest-point equations reduce to
/// `p_r = exp(-beta h_r(p_r) - mu)` where `h_r(p)` is the expected cost of
/// route `r` against `N - 1` players using it with probability `p` and `mu`
/// normalises `sum_r p_r = 1`. Each `p_r(mu)` is found by bisection (the
/// right-hand side is nonincreasing in `p`), then `mu` by bisection. Falls
/// back to the full solver when the reduced solution misses `tol`.
pub fn symmetric_rest_point(net: &TrafficNetwork, beta: f64, tol: f64) -> Result<JointState> {
    if !(beta > 0.0) || !beta.is_finite() {
        return invalid(format!("beta must be positive, got {beta}"));
    }
    let n = net.num_players();
    let routes = net.num_routes();
    let rule = LogitRule::uniform(n, beta)?;
    let p_of_mu = |r: usize, mu: f64| -> f64 {
        let g = |p: f64| p - (-beta * symmetric_route_cost(net, r, p) - mu).exp();
        if g(1.0) <= 0.0 {
            1.0
        } else {
            bisect(0.0, 1.0, g)
        }
    };
    let cmin = net.costs.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let cmax = net.costs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    // Total probability decreases in mu: at mu_lo every p_r is 1, at mu_hi
    // every p_r is at most 1/R.
    let mu_lo = -beta * cmax;
    let mu_hi = -beta * cmin + (routes as f64).ln();
    let mu = bisect(mu_lo, mu_hi, |mu| 1.0 - (0..routes).map(|r| p_of_mu(r, mu)).sum::<f64>());
    let p: Vec<f64> = (0..routes).map(|r| p_of_mu(r, mu)).collect();
    // One exact map application removes the bisection error in x.
    let x_hat: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(r, &pr)| -symmetric_route_cost(net, r, pr))
        .collect();
    let sigma_hat = softmax(&x_hat.iter().map(|v| beta * v).collect::<Vec<_>>());
    let x_hat: Vec<f64> = sigma_hat
        .iter()
        .enumerate()
        .map(|(r, &pr)| -symmetric_route_cost(net, r, pr))
        .collect();
    let x: Perceptions = vec![x_hat; n];
    if traffic_residual(net, &rule, &x)? <= tol {
        return Ok(JointState::on_response(&rule, x));
    }
    let game = net.to_game()?;
    let opts = SolveOptions {
        tol,
        ..SolveOptions::default()
    };
    let rest = solve_rest_point(&game, &rule, &x, opts)?;
    Ok(rest.state())
}

/// Sup-norm residual `|F(x) - x|` of the traffic game.
pub fn traffic_residual(net: &TrafficNetwork, rule: &LogitRule, x: &[Vec<f64>]) -> Result<f64> {
    let f = net.expected_payoffs(&rule.profile(x))?;
    Ok(sup_distance(&f, x))
}

/// Stability analysis of a symmetric traffic rest point.
#[derive(Debug, Clone)]
pub struct TrafficCertificate {
    pub eta_beta: f64,
    /// `J[is, jr] = beta lambda^r (1 - lambda^r) E[c^r_{U+1} - c^r_{U+2}]`
    /// for `s = r`, `i != j`, minus the identity. Cross-route couplings are
    /// not part of this matrix.
    pub j_beta: DMatrix<f64>,
    /// `max |J - J^T|`.
    pub asymmetry: f64,
    /// Eigenvalues of the symmetric part of `j_beta`, ascending.
    pub symmetric_eigenvalues: Vec<f64>,
    pub negative_definite: bool,
    /// Largest gap between `j_beta` and a finite-difference `d Psi_x / d x`
    /// over entries with `s = r` or `i = j`.
    pub route_diagonal_gap: f64,
    /// Largest gap over the remaining (cross-route, cross-player) entries;
    /// these are the couplings `j_beta` leaves out.
    pub cross_route_gap: f64,
    /// Spectrum of the complete Jacobian of `Psi` at the rest point.
    pub spectral: SpectralReport,
}

fn is_symmetric_state(state: &JointState) -> bool {
    state
        .x
        .iter()
        .all(|xi| sup_distance(std::slice::from_ref(xi), std::slice::from_ref(&state.x[0])) <= 1e-8)
}

pub fn traffic_stability_certificate(net: &TrafficNetwork, beta: f64, rest: &JointState) -> Result<TrafficCertificate> {
    let n = net.num_players();
    let routes = net.num_routes();
    if rest.x.len() != n || rest.x.iter().any(|v| v.len() != routes) {
        return invalid("rest point shape does not match the network");
    }
    if !is_symmetric_state(rest) {
        return Err(Error::Precondition("the certificate needs a symmetric rest point".into()));
    }
    let rule = LogitRule::uniform(n, beta)?;
    let lambda = &rest.lambda;
    let t = n * routes;
    let idx = |i: usize, s: usize| i * routes + s;

    let mut j_beta = DMatrix::<f64>::zeros(t, t);
    for i in 0..n {
        for j in 0..n {
            for r in 0..routes {
                if i != j {
                    let l = lambda[j][r];
                    j_beta[(idx(i, r), idx(j, r))] = beta * l * (1.0 - l) * net.second_partial(lambda, i, j, r)?;
                }
            }
        }
    }
    for k in 0..t {
        j_beta[(k, k)] -= 1.0;
    }
    let asymmetry = (&j_beta - j_beta.transpose()).amax();
    let symmetric_eigenvalues = linalg::symmetric_eigenvalues(&j_beta);
    let negative_definite = symmetric_eigenvalues.iter().all(|&v| v < 0.0);

    let counts = vec![routes; n];
    let psi_x = |y: &[f64]| -> Vec<f64> {
        let x = unflatten(y, &counts);
        let sigma = rule.profile(&x);
        let f = net.expected_payoffs(&sigma).expect("shape checked above");
        let mut out = Vec::with_capacity(t);
        for i in 0..n {
            for s in 0..routes {
                out.push(sigma[i][s] / lambda[i][s] * (f[i][s] - x[i][s]));
            }
        }
        out
    };
    let numeric = numeric_jacobian(&psi_x, &flatten(&rest.x));
    let mut route_diagonal_gap: f64 = 0.0;
    let mut cross_route_gap: f64 = 0.0;
    for i in 0..n {
        for s in 0..routes {
            for j in 0..n {
                for r in 0..routes {
                    let gap = (numeric[(idx(i, s), idx(j, r))] - j_beta[(idx(i, s), idx(j, r))]).abs();
                    if s == r || i == j {
                        route_diagonal_gap = route_diagonal_gap.max(gap);
                    } else {
                        cross_route_gap = cross_route_gap.max(gap);
                    }
                }
            }
        }
    }
    let game = net.to_game()?;
    let spectral = jacobian_psi(&game, &rule, rest, JacobianMode::Analytic)?;
    Ok(TrafficCertificate {
        eta_beta: net.eta() * beta,
        j_beta,
        asymmetry,
        symmetric_eigenvalues,
        negative_definite,
        route_diagonal_gap,
        cross_route_gap,
        spectral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::MixedProfile;

    fn two_route_net() -> TrafficNetwork {
        TrafficNetwork::new(vec![vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 2.0]]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(TrafficNetwork::new(vec![]).is_err());
        assert!(TrafficNetwork::new(vec![vec![1.0, 0.5]]).is_err());
        assert!(TrafficNetwork::new(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(TrafficNetwork::new(vec![vec![1.0, 1.0]]).is_ok());
    }

    #[test]
    fn single_route_forces_full_load() {
        let net = TrafficNetwork::new(vec![vec![1.0, 4.0, 9.0]]).unwrap();
        let game = net.to_game().unwrap();
        for i in 0..3 {
            assert_eq!(game.payoff(i, &[0, 0, 0]), -9.0);
        }
    }

    #[test]
    fn two_players_two_routes() {
        let net = TrafficNetwork::new(vec![vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let game = net.to_game().unwrap();
        assert_eq!(game.payoff(0, &[0, 1]), -1.0);
        assert_eq!(game.payoff(1, &[0, 1]), -1.0);
        assert_eq!(game.payoff(0, &[1, 1]), -2.0);
        assert_eq!(game.payoff(1, &[0, 0]), -2.0);
    }

    #[test]
    fn eta_matches_game_eta() {
        let net = TrafficNetwork::new(vec![vec![1.0, 3.0, 3.5], vec![0.0, 0.2, 2.2]]).unwrap();
        assert_eq!(net.eta(), 2.0);
        assert!((net.to_game().unwrap().eta() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn load_distributions() {
        let net = two_route_net();
        let zero = vec![vec![0.0, 1.0]; 3];
        assert_eq!(net.load_distribution(0, &zero, &[]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let net2 = TrafficNetwork::new(vec![vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let half = vec![vec![0.5, 0.5]; 2];
        assert_eq!(net2.load_distribution(0, &half, &[]).unwrap(), vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn poisson_binomial_matches_enumeration() {
        let p = [0.1, 0.35, 0.5, 0.77, 0.9];
        let d = poisson_binomial(&p);
        let mut brute = [0.0; 6];
        for mask in 0..32u32 {
            let prob: f64 = (0..5)
                .map(|k| if mask & (1 << k) != 0 { p[k] } else { 1.0 - p[k] })
                .product();
            brute[mask.count_ones() as usize] += prob;
        }
        for u in 0..6 {
            assert!((d[u] - brute[u]).abs() < 1e-14);
        }
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn potential_of_deterministic_load() {
        let net = TrafficNetwork::new(vec![vec![1.0, 2.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(net.potential(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(), -3.0);
    }

    #[test]
    fn expected_payoffs_agree_with_tensor() {
        let net = two_route_net();
        let game = net.to_game().unwrap();
        let pi = vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.5, 0.5]];
        let profile = MixedProfile::new(pi.clone()).unwrap();
        let f = net.expected_payoffs(&pi).unwrap();
        for i in 0..3 {
            for s in 0..2 {
                let g = game.expected_payoff(i, s, &profile).unwrap();
                assert!((f[i][s] - g).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn second_partials_lie_in_range() {
        let net = two_route_net();
        let pi = vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.5, 0.5]];
        for i in 0..3 {
            for j in (0..3).filter(|&j| j != i) {
                for r in 0..2 {
                    let v = net.second_partial(&pi, i, j, r).unwrap();
                    assert!(v <= 1e-10 && v >= -net.eta() - 1e-10);
                }
            }
        }
        assert!(net.second_partial(&pi, 1, 1, 0).is_err());
    }

    #[test]
    fn identical_routes_give_uniform_rest_point() {
        let net = TrafficNetwork::new(vec![vec![1.0, 2.0, 4.0]; 3]).unwrap();
        let rest = symmetric_rest_point(&net, 0.5, 1e-12).unwrap();
        for xi in &rest.x {
            assert!((xi[0] - xi[1]).abs() < 1e-12 && (xi[1] - xi[2]).abs() < 1e-12);
        }
        for li in &rest.lambda {
            for l in li {
                assert!((l - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduced_solver_certifies_residual() {
        let net = two_route_net();
        let rest = symmetric_rest_point(&net, 0.2, 1e-10).unwrap();
        let rule = LogitRule::uniform(3, 0.2).unwrap();
        assert!(traffic_residual(&net, &rule, &rest.x).unwrap() <= 1e-10);
        let game = net.to_game().unwrap();
        assert!(crate::dynamics::rest_residual(&game, &rule, &rest.x) <= 1e-10);
    }

    #[test]
    fn certificate_small_coupling() {
        let net = two_route_net();
        let rest = symmetric_rest_point(&net, 0.2, 1e-12).unwrap();
        let cert = traffic_stability_certificate(&net, 0.2, &rest).unwrap();
        assert!(cert.asymmetry <= 1e-10);
        assert!(cert.negative_definite);
        assert!(cert.route_diagonal_gap < 1e-6);
        assert!(cert.spectral.stable);
    }

    #[test]
    fn vanishing_beta_gives_minus_identity() {
        let net = two_route_net();
        let rest = symmetric_rest_point(&net, 1e-9, 1e-12).unwrap();
        let cert = traffic_stability_certificate(&net, 1e-9, &rest).unwrap();
        for v in &cert.symmetric_eigenvalues {
            assert!((v + 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn asymmetric_rest_point_is_rejected() {
        let net = two_route_net();
        let state = JointState {
            x: vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0]],
            lambda: vec![vec![0.5, 0.5]; 3],
        };
        assert!(matches!(
            traffic_stability_certificate(&net, 0.2, &state),
            Err(Error::Precondition(_))
        ));
    }
}
