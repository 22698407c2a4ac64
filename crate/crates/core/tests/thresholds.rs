//! Closed-form anchors and stability thresholds of the built-in games.

use adaptive_play::builtin::{cyclic_3x3, rock_scissors_paper, zero_sum_2x2, zero_sum_2x2_rest_point};
use adaptive_play::dynamics::{
    centered_rest_point, jacobian_phi, jacobian_psi, solve_rest_point, JacobianMode, JointState, SolveOptions,
};
use adaptive_play::{Game, LogitRule};

fn centered_rho(game: &Game, beta: f64) -> f64 {
    let rule = LogitRule::uniform(2, beta).unwrap();
    let x = centered_rest_point(game).expect("symmetric game with constant row sums");
    let state = JointState::on_response(&rule, x);
    jacobian_psi(game, &rule, &state, JacobianMode::Analytic).unwrap().rho
}

#[test]
fn zero_sum_closed_form_and_spectrum() {
    let game = zero_sum_2x2();
    for beta in [0.5, 1.0, 2.0] {
        let rule = LogitRule::uniform(2, beta).unwrap();
        let rest = solve_rest_point(&game, &rule, &[vec![0.0; 2], vec![0.0; 2]], SolveOptions::default()).unwrap();
        let (x, sigma) = zero_sum_2x2_rest_point(beta);
        for i in 0..2 {
            for s in 0..2 {
                assert!((rest.x[i][s] - x[s]).abs() < 1e-10);
                assert!((rest.sigma[i][s] - sigma[s]).abs() < 1e-10);
            }
        }
        let report = jacobian_psi(&game, &rule, &rest.state(), JacobianMode::Analytic).unwrap();
        for z in &report.eigenvalues {
            assert!((z.re + 1.0).abs() < 1e-8 && z.im.abs() < 1e-8, "{z}");
        }
    }
}

#[test]
fn cyclic_game_anchor() {
    let game = cyclic_3x3();
    let rule = LogitRule::uniform(2, 0.4).unwrap();
    assert!((2.0 * game.eta() * rule.alpha() - 0.8).abs() < 1e-15);
    let x = centered_rest_point(&game).unwrap();
    let phi = jacobian_phi(&game, &rule, &x, JacobianMode::Analytic).unwrap();
    assert!((phi.rho.abs() - 0.3).abs() < 0.05, "rho(grad Phi) = {}", phi.rho);
}

#[test]
fn cyclic_game_spectral_abscissa_is_linear_in_beta() {
    // rho(grad Psi) at the centered rest point is beta/6 - 1.
    let game = cyclic_3x3();
    for beta in [0.4, 1.4, 1.6, 3.0, 5.0, 7.0] {
        let rho = centered_rho(&game, beta);
        assert!((rho - (beta / 6.0 - 1.0)).abs() < 1e-9, "beta {beta}: {rho}");
    }
}

#[test]
fn cyclic_game_loses_stability_at_six() {
    let game = cyclic_3x3();
    assert!(centered_rho(&game, 5.9) < 0.0);
    assert!(centered_rho(&game, 6.1) > 0.0);
}

#[test]
fn rock_scissors_paper_threshold() {
    // The centered rest point of RSP(a, b) destabilises at beta = 6 / |b - a|.
    for (a, b) in [(1.0, 2.0), (1.0, 3.0), (2.0, 1.0), (0.5, 2.0)] {
        let game = rock_scissors_paper(a, b);
        let threshold = 6.0 / f64::abs(b - a);
        assert!(centered_rho(&game, 0.98 * threshold) < 0.0, "rsp({a},{b})");
        assert!(centered_rho(&game, 1.02 * threshold) > 0.0, "rsp({a},{b})");
    }
}

#[test]
fn rock_scissors_paper_strong_smoothing_is_unstable() {
    let rho = centered_rho(&rock_scissors_paper(1.0, 2.0), 20.0);
    assert!(rho > 0.0, "{rho}");
}
