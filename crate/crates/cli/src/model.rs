use adaptive_play::builtin::{cyclic_3x3, rock_scissors_paper, zero_sum_2x2};
use adaptive_play::dynamics::{
    centered_rest_point, find_rest_points, rest_residual, solve_rest_point, JointState, RestPoint, SolveOptions,
    REST_POINT_TOL,
};
use adaptive_play::game::MixedProfile;
use adaptive_play::io;
use adaptive_play::markov::{solve_env_rest_point, EnvRestPoint, MarkovEnvironment};
use adaptive_play::traffic::{symmetric_rest_point, TrafficNetwork};
use adaptive_play::{Game, LogitRule};

use crate::config::{ExperimentConfig, GameSource};
use crate::CliError;

/// The object an experiment runs on.
pub enum Model {
    Game(Game),
    Traffic { net: TrafficNetwork, game: Game },
    Environment(MarkovEnvironment),
}

impl Model {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        if let Some(p) = &cfg.environment {
            return Ok(Model::Environment(io::load_environment(p)?));
        }
        Ok(match cfg.game.as_ref().expect("config holds a game or an environment") {
            GameSource::Game13 => Model::Game(cyclic_3x3()),
            GameSource::Rsp(a, b) => Model::Game(rock_scissors_paper(*a, *b)),
            GameSource::ZeroSum17 => Model::Game(zero_sum_2x2()),
            GameSource::File(p) => Model::Game(io::load_game(p)?),
            GameSource::Traffic(p) => {
                let net = io::load_network(p)?;
                let game = net.to_game()?;
                Model::Traffic { net, game }
            }
        })
    }

    /// The game played (the state-0 game for an environment).
    pub fn game(&self) -> &Game {
        match self {
            Model::Game(g) | Model::Traffic { game: g, .. } => g,
            Model::Environment(env) => env.game(0),
        }
    }

    pub fn rule(&self, cfg: &ExperimentConfig) -> Result<LogitRule, CliError> {
        let n = self.game().num_players();
        let rule = match cfg.beta.len() {
            1 => LogitRule::uniform(n, cfg.beta[0])?,
            k if k == n => LogitRule::new(cfg.beta.clone())?,
            k => {
                return Err(CliError::Config(format!(
                    "beta: expected 1 or {n} values, found {k}"
                )))
            }
        };
        if matches!(self, Model::Traffic { .. }) && rule.betas().iter().any(|b| *b != rule.beta(0)) {
            return Err(CliError::Config("beta: traffic networks need a common beta".into()));
        }
        Ok(rule)
    }
}

/// Deterministic starting points for the multistart solver: the payoff field
/// against the uniform profile and against every pure profile (first 64).
pub fn starts(game: &Game) -> Vec<Vec<Vec<f64>>> {
    let counts = game.strategy_counts();
    let mut out = vec![game.payoff_field(MixedProfile::uniform(counts).as_slice())];
    out.extend(
        game.profiles()
            .take(64)
            .map(|p| game.payoff_field(MixedProfile::pure(counts, &p).as_slice())),
    );
    out
}

/// Every rest point found by multistart, the centered one first when it
/// exists.
pub fn game_rest_points(game: &Game, rule: &LogitRule) -> Result<Vec<RestPoint>, CliError> {
    let mut found = Vec::new();
    if let Some(x) = centered_rest_point(game) {
        if rest_residual(game, rule, &x) <= REST_POINT_TOL {
            found.push(solve_rest_point(game, rule, &x, SolveOptions::default())?);
        }
    }
    for p in find_rest_points(game, rule, &starts(game), SolveOptions::default()) {
        if found
            .iter()
            .all(|q: &RestPoint| adaptive_play::linalg::sup_distance(&q.x, &p.x) > 1e-6)
        {
            found.push(p);
        }
    }
    if found.is_empty() {
        // Surface the solver's residual.
        solve_rest_point(game, rule, &starts(game)[0], SolveOptions::default())?;
    }
    Ok(found)
}

pub fn env_rest_point(env: &MarkovEnvironment, rule: &LogitRule) -> Result<EnvRestPoint, CliError> {
    let x0: Vec<Vec<f64>> = env.strategy_counts().iter().map(|&k| vec![0.0; k]).collect();
    Ok(solve_env_rest_point(env, rule, &x0, SolveOptions::default())?)
}

/// Reference rest point for error and convergence diagnostics.
pub fn reference_rest_point(model: &Model, rule: &LogitRule) -> Result<JointState, CliError> {
    match model {
        Model::Game(g) => Ok(game_rest_points(g, rule)?[0].state()),
        Model::Traffic { net, .. } => Ok(symmetric_rest_point(net, rule.beta(0), 1e-12)?),
        Model::Environment(env) => Ok(env_rest_point(env, rule)?.state),
    }
}
