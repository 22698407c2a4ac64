//! Structural invariants of the stochastic processes on every built-in game.

use adaptive_play::builtin::{cyclic_3x3, rock_scissors_paper, zero_sum_2x2};
use adaptive_play::simulate::{
    one_step_noise, reconstruct_average, run, step_ap, step_cms, PerceptionState, ProcessKind, RunConfig, Streams,
};
use adaptive_play::traffic::TrafficNetwork;
use adaptive_play::{DecisionRule, Game, LogitRule};
use proptest::prelude::*;

fn builtins() -> Vec<(&'static str, Game, f64)> {
    let net = TrafficNetwork::new(vec![vec![1.0, 2.0, 3.0], vec![1.5, 1.5, 2.5]]).unwrap();
    vec![
        ("game13", cyclic_3x3(), 0.4),
        ("rsp(1,2)", rock_scissors_paper(1.0, 2.0), 4.0),
        ("rsp(2,1)", rock_scissors_paper(2.0, 1.0), 1.0),
        ("zerosum17", zero_sum_2x2(), 1.0),
        ("traffic", net.to_game().unwrap(), 1.0),
    ]
}

fn assert_simplex(v: &[Vec<f64>], what: &str) {
    for (i, p) in v.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "{what} of player {i} sums to {sum}");
        assert!(p.iter().all(|&q| q > 0.0 && q <= 1.0), "{what} of player {i} leaves the open simplex: {p:?}");
    }
}

#[test]
fn counters_unplayed_coordinates_and_simplex() {
    for (name, game, beta) in builtins() {
        let rule = LogitRule::uniform(game.num_players(), beta).unwrap();
        for kind in [ProcessKind::Ap, ProcessKind::Cms] {
            let mut state = PerceptionState::new(&game, None, 1.0).unwrap();
            let mut streams = Streams::new(11, game.num_players());
            let mut plays: Vec<Vec<u64>> = game.strategy_counts().iter().map(|&k| vec![0; k]).collect();
            for n in 1..=2000u64 {
                let before = state.x.clone();
                let rec = match kind {
                    ProcessKind::Ap => step_ap(&game, &rule, &mut state, &mut streams),
                    _ => step_cms(&game, &rule, &mut state, &mut streams),
                };
                for i in 0..game.num_players() {
                    plays[i][rec.actions[i]] += 1;
                    for s in (0..game.num_strategies(i)).filter(|&s| s != rec.actions[i]) {
                        assert_eq!(state.x[i][s].to_bits(), before[i][s].to_bits(), "{name}: unplayed coordinate moved");
                    }
                    let total: f64 = state.theta[i].iter().sum();
                    assert_eq!(total, game.num_strategies(i) as f64 + n as f64, "{name}: counter identity");
                    for s in 0..game.num_strategies(i) {
                        assert_eq!(state.theta[i][s], 1.0 + plays[i][s] as f64);
                    }
                }
                assert_eq!(state.n, n);
                assert_simplex(&state.lambda(), "lambda");
                assert_simplex(&rule.profile(&state.x), "sigma");
            }
        }
    }
}

#[test]
fn average_form_reconstruction() {
    for (name, game, beta) in builtins() {
        let rule = LogitRule::uniform(game.num_players(), beta).unwrap();
        let x0: Vec<Vec<f64>> = game
            .strategy_counts()
            .iter()
            .map(|&k| (0..k).map(|s| 0.3 * s as f64 - 0.2).collect())
            .collect();
        for theta0 in [1.0, 0.5, 0.05] {
            let mut cfg = RunConfig::new(5000, 4);
            cfg.record_history = true;
            cfg.x0 = Some(x0.clone());
            cfg.theta0 = theta0;
            let traj = run(ProcessKind::Ap, &game, &rule, &cfg).unwrap();
            let rebuilt = reconstruct_average(&game, traj.history.as_ref().unwrap(), &x0, theta0);
            for (a, b) in rebuilt.iter().flatten().zip(traj.terminal.x.iter().flatten()) {
                assert!((a - b).abs() < 1e-12, "{name} theta0 {theta0}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn noise_has_conditional_mean_zero() {
    const DRAWS: u64 = 20_000;
    for (name, game, beta) in builtins() {
        let rule = LogitRule::uniform(game.num_players(), beta).unwrap();
        // A state reached by the process, then many independent next stages.
        let mut state = PerceptionState::new(&game, None, 1.0).unwrap();
        let mut streams = Streams::new(5, game.num_players());
        for _ in 0..50 {
            step_ap(&game, &rule, &mut state, &mut streams);
        }
        let counts = game.strategy_counts().to_vec();
        let zeros = || -> Vec<Vec<f64>> { counts.iter().map(|&k| vec![0.0; k]).collect() };
        let (mut su, mut su2, mut sm, mut sm2) = (zeros(), zeros(), zeros(), zeros());
        for seed in 0..DRAWS {
            let mut next = state.clone();
            let rec = step_ap(&game, &rule, &mut next, &mut Streams::new(1000 + seed, game.num_players()));
            let noise = one_step_noise(&game, &rule, &state, &rec);
            for i in 0..counts.len() {
                for s in 0..counts[i] {
                    su[i][s] += noise.u[i][s];
                    su2[i][s] += noise.u[i][s].powi(2);
                    sm[i][s] += noise.m[i][s];
                    sm2[i][s] += noise.m[i][s].powi(2);
                }
            }
        }
        let d = DRAWS as f64;
        for i in 0..counts.len() {
            for s in 0..counts[i] {
                for (sum, sq, what) in [(su[i][s], su2[i][s], "u"), (sm[i][s], sm2[i][s], "m")] {
                    let mean = sum / d;
                    let se = ((sq / d - mean * mean).max(0.0) / d).sqrt();
                    assert!(mean.abs() <= 3.0 * se + 1e-12, "{name}: mean of {what}[{i}][{s}] = {mean} (se {se})");
                }
            }
        }
    }
}

#[test]
fn excitation_near_the_rest_point() {
    // Conditional variance of 1{s played} - sigma at the rest point is
    // sigma (1 - sigma); check the empirical value against half of it.
    const DRAWS: u64 = 20_000;
    for (name, game, beta) in builtins() {
        let rule = LogitRule::uniform(game.num_players(), beta).unwrap();
        let x0: Vec<Vec<f64>> = game.strategy_counts().iter().map(|&k| vec![0.0; k]).collect();
        let rest = adaptive_play::dynamics::solve_rest_point(&game, &rule, &x0, Default::default()).unwrap();
        let mut state = PerceptionState::new(&game, Some(&rest.x), 1.0).unwrap();
        for (t, s) in state.theta.iter_mut().zip(&rest.sigma) {
            for (a, b) in t.iter_mut().zip(s) {
                *a = 1000.0 * b;
            }
        }
        let counts = game.strategy_counts().to_vec();
        let mut sq: Vec<Vec<f64>> = counts.iter().map(|&k| vec![0.0; k]).collect();
        for seed in 0..DRAWS {
            let mut next = state.clone();
            let rec = step_ap(&game, &rule, &mut next, &mut Streams::new(seed, counts.len()));
            let noise = one_step_noise(&game, &rule, &state, &rec);
            for i in 0..counts.len() {
                for s in 0..counts[i] {
                    sq[i][s] += noise.m[i][s].powi(2);
                }
            }
        }
        for i in 0..counts.len() {
            for s in 0..counts[i] {
                let var = sq[i][s] / DRAWS as f64;
                let p = rest.sigma[i][s];
                assert!(var >= 0.5 * p * (1.0 - p), "{name}: variance {var} for sigma {p}");
            }
        }
    }
}

#[test]
fn replay_is_bitwise_identical() {
    for (_, game, beta) in builtins() {
        let rule = LogitRule::uniform(game.num_players(), beta).unwrap();
        for kind in [ProcessKind::Ap, ProcessKind::Cms] {
            let mut cfg = RunConfig::new(3000, 99);
            cfg.record_history = true;
            let a = run(kind, &game, &rule, &cfg).unwrap();
            let b = run(kind, &game, &rule, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }
}

fn random_game() -> impl Strategy<Value = Game> {
    (prop::collection::vec(2usize..=3, 2..=3)).prop_flat_map(|counts| {
        let profiles: usize = counts.iter().product();
        let n = counts.len();
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, profiles), n)
            .prop_map(move |payoffs| Game::new(counts.clone(), payoffs).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reconstruction_on_random_games(game in random_game(), seed in 0u64..1000, beta in 0.0f64..3.0) {
        let rule = LogitRule::uniform(game.num_players(), beta).unwrap();
        let mut cfg = RunConfig::new(500, seed);
        cfg.record_history = true;
        let traj = run(ProcessKind::Ap, &game, &rule, &cfg).unwrap();
        let x0: Vec<Vec<f64>> = game.strategy_counts().iter().map(|&k| vec![0.0; k]).collect();
        let rebuilt = reconstruct_average(&game, traj.history.as_ref().unwrap(), &x0, 1.0);
        for (a, b) in rebuilt.iter().flatten().zip(traj.terminal.x.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for i in 0..game.num_players() {
            let total: f64 = traj.terminal.theta[i].iter().sum();
            prop_assert_eq!(total, (game.num_strategies(i) + 500) as f64);
        }
    }

    #[test]
    fn perceptions_stay_in_payoff_hull(game in random_game(), seed in 0u64..1000) {
        let rule = LogitRule::uniform(game.num_players(), 1.0).unwrap();
        let traj = run(ProcessKind::Ap, &game, &rule, &RunConfig::new(300, seed)).unwrap();
        for i in 0..game.num_players() {
            let lo = game.payoff_table(i).iter().copied().fold(0.0, f64::min);
            let hi = game.payoff_table(i).iter().copied().fold(0.0, f64::max);
            prop_assert!(traj.terminal.x[i].iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
