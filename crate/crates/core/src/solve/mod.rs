//! Equilibria and best responses of finite stochastic games.
//!
//! Finite-horizon games are solved by backward induction over stage games,
//! discounted games by damped Nash value iteration with a regret-search
//! fallback. Zero-sum and common-cost games have dedicated value iterations.
//! Every report carries dynamic-game gaps recomputed from scratch by exact
//! best-response dynamic programming against the returned profile.

mod mdp;
mod nash;
mod special;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::Horizon;
use crate::quantize::FiniteGame;
use crate::stage_nash::{MixedProfile, NormalFormGame};

pub use mdp::{
    best_response_dp, best_response_operator, dynamic_gaps, policy_evaluation, BestResponse,
};
pub use nash::{
    backward_induction_nash, nash_value_iteration, stationary_regret_search, NashViOptions,
    StageOptions,
};
pub use special::{shapley_iteration, shapley_operator, team_operator, team_value_iteration};

/// One mixed profile per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationaryPolicyProfile(pub Vec<MixedProfile>);

impl StationaryPolicyProfile {
    pub fn uniform(k: usize, counts: &[usize]) -> Self {
        Self(vec![MixedProfile::uniform(counts); k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Time-indexed profiles, `stages[t]` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkovPolicyProfile(pub Vec<StationaryPolicyProfile>);

impl MarkovPolicyProfile {
    pub fn horizon(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyProfile {
    Stationary(StationaryPolicyProfile),
    Markov(MarkovPolicyProfile),
}

impl PolicyProfile {
    /// Profile in force at time `t` and state `x`; stationary profiles ignore `t`.
    pub fn at(&self, t: usize, x: usize) -> &MixedProfile {
        match self {
            PolicyProfile::Stationary(p) => &p.0[x],
            PolicyProfile::Markov(m) => &m.0[t].0[x],
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            PolicyProfile::Stationary(p) => p.len(),
            PolicyProfile::Markov(m) => m.0.first().map_or(0, |s| s.len()),
        }
    }

    /// Checks shapes against `g` and, for Markov profiles, the horizon.
    pub fn validate(&self, g: &FiniteGame, horizon: Horizon) -> Result<()> {
        let stages: Vec<&StationaryPolicyProfile> = match self {
            PolicyProfile::Stationary(p) => vec![p],
            PolicyProfile::Markov(m) => {
                match horizon {
                    Horizon::Finite(t) if t == m.horizon() => {}
                    Horizon::Finite(t) => {
                        return domain(format!(
                            "Markov profile has {} stages, horizon is {t}",
                            m.horizon()
                        ))
                    }
                    Horizon::Discounted(_) => {
                        return domain("discounted games need a stationary profile")
                    }
                }
                m.0.iter().collect()
            }
        };
        for s in stages {
            if s.len() != g.k {
                return domain(format!(
                    "profile covers {} states, game has {}",
                    s.len(),
                    g.k
                ));
            }
            for mp in &s.0 {
                mp.validate(&g.action_counts)?;
            }
        }
        Ok(())
    }
}

/// Values indexed `[t][player][state]`; discounted tables have a single stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueTable(pub Vec<Vec<Vec<f64>>>);

impl ValueTable {
    /// Values of `player` at time 0 (the stationary values when discounted).
    pub fn initial(&self, player: usize) -> &[f64] {
        &self.0[0][player]
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    BackwardInduction,
    NashValueIteration,
    RegretSearch,
    Shapley,
    Team,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: SolveMethod,
    pub profile: PolicyProfile,
    pub values: ValueTable,
    /// `[t][state][player]` gaps of the stage games that produced the profile
    pub stage_gaps: Vec<Vec<Vec<f64>>>,
    /// per player: max over times and states of own cost minus best-response cost
    pub dynamic_gaps: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// every stage gap and dynamic gap is within the requested tolerance
    pub within_tol: bool,
}

impl SolveReport {
    pub fn max_dynamic_gap(&self) -> f64 {
        self.dynamic_gaps.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_stage_gap(&self) -> f64 {
        self.stage_gaps
            .iter()
            .flatten()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Stage game at state `x`: `u^i(a) = c^i(x,a) + scale·Σ_y J^i(y) p(y|x,a)`.
pub fn stage_game(g: &FiniteGame, x: usize, cont: &[Vec<f64>], scale: f64) -> NormalFormGame {
    let costs = (0..g.num_players())
        .map(|i| {
            (0..g.num_joint())
                .map(|a| g.costs[i][x][a] + scale * continuation(&g.transitions[x][a], &cont[i]))
                .collect()
        })
        .collect();
    NormalFormGame {
        action_counts: g.action_counts.clone(),
        costs,
    }
}

pub(crate) fn continuation(row: &[f64], j: &[f64]) -> f64 {
    row.iter().zip(j).map(|(p, v)| p * v).sum()
}

pub(crate) fn sup_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn check_discount(beta: f64) -> Result<()> {
    Horizon::Discounted(beta).validate()
}
