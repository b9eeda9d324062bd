use rayon::prelude::*;

use super::mdp::{argmin, dynamic_gaps, policy_iteration};
use super::{
    check_discount, continuation, stage_game, sup_distance, PolicyProfile, SolveMethod,
    SolveReport, StationaryPolicyProfile, ValueTable,
};
use crate::error::{domain, Result};
use crate::model::Horizon;
use crate::quantize::FiniteGame;
use crate::stage_nash::{best_response_gap, matrix_game_value, MatrixGameValue, MixedProfile};

const MAX_SWEEPS: usize = 1_000_000;

fn check_zero_sum(g: &FiniteGame) -> Result<()> {
    if g.num_players() != 2 {
        return domain("zero-sum solver needs exactly two players");
    }
    let bad = g.costs[0]
        .iter()
        .flatten()
        .zip(g.costs[1].iter().flatten())
        .any(|(a, b)| (a + b).abs() > 1e-12);
    if bad {
        return domain("costs are not zero-sum (c2 != -c1)");
    }
    Ok(())
}

fn check_common(g: &FiniteGame) -> Result<()> {
    for i in 1..g.num_players() {
        let bad = g.costs[0]
            .iter()
            .flatten()
            .zip(g.costs[i].iter().flatten())
            .any(|(a, b)| (a - b).abs() > 1e-12);
        if bad {
            return domain(format!("player {i} does not share the common cost"));
        }
    }
    Ok(())
}

fn check_values(g: &FiniteGame, j: &[f64]) -> Result<()> {
    if j.len() != g.k {
        return domain("value vector length does not match the state count");
    }
    Ok(())
}

fn matrix_at(g: &FiniteGame, x: usize, beta: f64, j: &[f64]) -> Vec<Vec<f64>> {
    let (m, n) = (g.action_counts[0], g.action_counts[1]);
    (0..m)
        .map(|a| {
            (0..n)
                .map(|b| {
                    let joint = a * n + b;
                    g.costs[0][x][joint] + beta * continuation(&g.transitions[x][joint], j)
                })
                .collect()
        })
        .collect()
}

fn shapley_games(g: &FiniteGame, beta: f64, j: &[f64]) -> Result<Vec<MatrixGameValue>> {
    (0..g.k)
        .into_par_iter()
        .map(|x| matrix_game_value(&matrix_at(g, x, beta, j)))
        .collect()
}

/// `(T J)(x) = val[c(x,·,·) + β Σ_y J(y) p(y|x,·,·)]` with player 0 minimizing.
pub fn shapley_operator(g: &FiniteGame, beta: f64, j: &[f64]) -> Result<Vec<f64>> {
    check_zero_sum(g)?;
    check_discount(beta)?;
    check_values(g, j)?;
    Ok(shapley_games(g, beta, j)?
        .into_iter()
        .map(|v| v.value)
        .collect())
}

/// `(L J)(x) = min_a [c(x,a) + β Σ_y J(y) p(y|x,a)]` over joint actions.
pub fn team_operator(g: &FiniteGame, beta: f64, j: &[f64]) -> Result<Vec<f64>> {
    check_common(g)?;
    check_discount(beta)?;
    check_values(g, j)?;
    Ok((0..g.k).map(|x| team_q(g, x, beta, j).1).collect())
}

fn team_q(g: &FiniteGame, x: usize, beta: f64, j: &[f64]) -> (usize, f64) {
    argmin(
        (0..g.num_joint()).map(|a| g.costs[0][x][a] + beta * continuation(&g.transitions[x][a], j)),
    )
}

/// `‖J^{k+1} − J^k‖ ≤ tol·(1−β)/(2β)` bounds the distance to the fixed point by `tol`.
fn stop_threshold(tol: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - beta) / (2.0 * beta)
    }
}

fn iterate(
    beta: f64,
    tol: f64,
    k: usize,
    op: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, bool)> {
    let stop = stop_threshold(tol, beta);
    let mut j = vec![0.0; k];
    let mut history = Vec::new();
    for _ in 0..MAX_SWEEPS {
        let next = op(&j)?;
        let r = sup_distance(&[next.clone()], &[j.clone()]);
        history.push(r);
        if r <= stop {
            return Ok((j, next, history, true));
        }
        j = next;
    }
    let next = op(&j)?;
    Ok((j, next, history, false))
}

/// Value iteration with the Shapley operator for two-player zero-sum games.
///
/// The returned profile holds the optimal mixes of the final matrix games;
/// player 1's values are the negated game values.
pub fn shapley_iteration(g: &FiniteGame, beta: f64, tol: f64) -> Result<SolveReport> {
    g.validate()?;
    check_zero_sum(g)?;
    check_discount(beta)?;
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let (prev, value, history, converged) =
        iterate(beta, tol, g.k, |j| shapley_operator(g, beta, j))?;
    let games = shapley_games(g, beta, &prev)?;
    let profile = StationaryPolicyProfile(
        games
            .iter()
            .map(|v| MixedProfile(vec![v.row_mix.clone(), v.col_mix.clone()]))
            .collect(),
    );
    let wrapped = PolicyProfile::Stationary(profile);
    let dyn_gaps = dynamic_gaps(g, &wrapped, Horizon::Discounted(beta))?;
    let stage_gaps = games
        .iter()
        .zip(0..g.k)
        .map(|(v, x)| saddle_gaps(&matrix_at(g, x, beta, &prev), v))
        .collect();
    let neg: Vec<f64> = value.iter().map(|v| -v).collect();
    Ok(SolveReport {
        method: SolveMethod::Shapley,
        profile: wrapped,
        values: ValueTable(vec![vec![value, neg]]),
        stage_gaps: vec![stage_gaps],
        within_tol: converged && dyn_gaps.iter().all(|&d| d <= 2.0 * tol + 1e-9),
        dynamic_gaps: dyn_gaps,
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(0.0),
        residual_history: history,
        converged,
    })
}

fn saddle_gaps(m: &[Vec<f64>], v: &MatrixGameValue) -> Vec<f64> {
    let row_worst = (0..m[0].len())
        .map(|b| (0..m.len()).map(|a| v.row_mix[a] * m[a][b]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let col_best = (0..m.len())
        .map(|a| (0..m[0].len()).map(|b| v.col_mix[b] * m[a][b]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let val: f64 = (0..m.len())
        .map(|a| {
            (0..m[0].len())
                .map(|b| v.row_mix[a] * m[a][b] * v.col_mix[b])
                .sum::<f64>()
        })
        .sum();
    vec![(val - col_best).max(0.0), (row_worst - val).max(0.0)]
}

/// Value iteration over joint actions for common-cost games, followed by
/// policy iteration so that the returned deterministic joint policy is
/// exactly optimal for the finite model.
pub fn team_value_iteration(g: &FiniteGame, beta: f64, tol: f64) -> Result<SolveReport> {
    g.validate()?;
    check_common(g)?;
    check_discount(beta)?;
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let (_, _, history, converged) = iterate(beta, tol, g.k, |j| team_operator(g, beta, j))?;
    let induced: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..g.k)
        .map(|x| (g.costs[0][x].clone(), g.transitions[x].clone()))
        .collect();
    let opt = policy_iteration(&induced, beta)?;
    let profile = StationaryPolicyProfile(
        opt.policy[0]
            .iter()
            .map(|&a| MixedProfile::pure(&g.action_counts, &g.decode(a)))
            .collect(),
    );
    let wrapped = PolicyProfile::Stationary(profile);
    let dyn_gaps = dynamic_gaps(g, &wrapped, Horizon::Discounted(beta))?;
    let values = vec![opt.values[0].clone(); g.num_players()];
    let stage_gaps = (0..g.k)
        .map(|x| best_response_gap(&stage_game(g, x, &values, beta), wrapped.at(0, x)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SolveReport {
        method: SolveMethod::Team,
        profile: wrapped,
        values: ValueTable(vec![values]),
        stage_gaps: vec![stage_gaps],
        within_tol: converged && dyn_gaps.iter().all(|&d| d <= 1e-9),
        dynamic_gaps: dyn_gaps,
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(0.0),
        residual_history: history,
        converged,
    })
}
