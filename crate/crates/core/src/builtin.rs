//! Games used throughout the experiments.

use crate::game::Game;

/// Two-player cyclic 3x3 game: each player earns 1 when her strategy is the
/// cyclic successor-beater of the opponent's, 0 otherwise. Row player matrix
/// `[[0,1,0],[0,0,1],[1,0,0]]`, column player matrix `[[0,0,1],[1,0,0],[0,1,0]]`.
pub fn cyclic_3x3() -> Game {
    let a = vec![
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0],
    ];
    let b = vec![
        vec![0.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
    ];
    Game::bimatrix(&a, &b).expect("static game is well formed")
}

/// Symmetric Rock-Scissors-Paper with win payoff `a` and loss payoff `-b`.
/// `0 < b < a` is the "good" variant, `0 < a < b` the "bad" one.
pub fn rock_scissors_paper(a: f64, b: f64) -> Game {
    let m = vec![vec![0.0, a, -b], vec![-b, 0.0, a], vec![a, -b, 0.0]];
    Game::symmetric(&m).expect("static game is well formed")
}

/// Two-player zero-sum game with row matrix `[[0,-1],[1,0]]`.
pub fn zero_sum_2x2() -> Game {
    let a = vec![vec![0.0, -1.0], vec![1.0, 0.0]];
    let b: Vec<Vec<f64>> = a.iter().map(|row| row.iter().map(|v| -v).collect()).collect();
    Game::bimatrix(&a, &b).expect("static game is well formed")
}

/// Closed-form logit rest point of [`zero_sum_2x2`] for a common `beta`:
/// perceptions `(-e^b/(1+e^b), 1/(1+e^b))` and choice probabilities
/// `(1/(1+e^b), e^b/(1+e^b))` for both players.
pub fn zero_sum_2x2_rest_point(beta: f64) -> (Vec<f64>, Vec<f64>) {
    let e = beta.exp();
    (
        vec![-e / (1.0 + e), 1.0 / (1.0 + e)],
        vec![1.0 / (1.0 + e), e / (1.0 + e)],
    )
}

/// Row sum `k` of a symmetric two-player game with constant row sums, if it
/// has them. The centered rest point then has `x = k / |S|` everywhere.
pub fn constant_row_sum(game: &Game) -> Option<f64> {
    if game.num_players() != 2 || game.num_strategies(0) != game.num_strategies(1) {
        return None;
    }
    let k = game.num_strategies(0);
    let symmetric = game
        .profiles()
        .all(|p| game.payoff(0, &p) == game.payoff(1, &[p[1], p[0]]));
    if !symmetric {
        return None;
    }
    let row = |s: usize| (0..k).map(|r| game.payoff(0, &[s, r])).sum::<f64>();
    let first = row(0);
    (0..k).all(|s| (row(s) - first).abs() < 1e-12).then_some(first)
}
