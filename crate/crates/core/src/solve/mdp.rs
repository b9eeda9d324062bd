use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_discount, continuation, PolicyProfile, StationaryPolicyProfile, ValueTable};
use crate::error::{domain, Error, Result};
use crate::model::Horizon;
use crate::quantize::FiniteGame;
use crate::stage_nash::MixedProfile;

/// Probability of every joint action under `mp`; player `skip`'s factor is 1.
pub(crate) fn joint_weights(mp: &MixedProfile, counts: &[usize], skip: Option<usize>) -> Vec<f64> {
    let mut w = vec![1.0];
    for (i, &m) in counts.iter().enumerate() {
        let mut next = Vec::with_capacity(w.len() * m);
        for &prefix in &w {
            for k in 0..m {
                next.push(if Some(i) == skip {
                    prefix
                } else {
                    prefix * mp.0[i][k]
                });
            }
        }
        w = next;
    }
    w
}

/// Single-agent problem of `player` at one state: `(cost[k], row[k][y])`.
fn induced_state(
    g: &FiniteGame,
    player: usize,
    x: usize,
    mp: &MixedProfile,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = g.action_counts[player];
    let w = joint_weights(mp, &g.action_counts, Some(player));
    let mut cost = vec![0.0; m];
    let mut rows = vec![vec![0.0; g.k]; m];
    for (a, &wa) in w.iter().enumerate() {
        if wa == 0.0 {
            continue;
        }
        let own = g.decode(a)[player];
        cost[own] += wa * g.costs[player][x][a];
        for (r, p) in rows[own].iter_mut().zip(&g.transitions[x][a]) {
            *r += wa * p;
        }
    }
    (cost, rows)
}

/// Markov chain of the joint profile at one time: `(c[i][x], P[x][y])`.
fn joint_chain(
    g: &FiniteGame,
    profile: &PolicyProfile,
    t: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = g.num_players();
    let mut c = vec![vec![0.0; g.k]; n];
    let mut p = vec![vec![0.0; g.k]; g.k];
    for x in 0..g.k {
        let w = joint_weights(profile.at(t, x), &g.action_counts, None);
        for (a, &wa) in w.iter().enumerate() {
            if wa == 0.0 {
                continue;
            }
            for i in 0..n {
                c[i][x] += wa * g.costs[i][x][a];
            }
            for (r, q) in p[x].iter_mut().zip(&g.transitions[x][a]) {
                *r += wa * q;
            }
        }
    }
    (c, p)
}

/// Solves `(I − βP) J = c` for every right-hand side in `rhs`.
fn solve_discounted(p: &[Vec<f64>], beta: f64, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = p.len();
    let m = DMatrix::from_fn(k, k, |r, c| if r == c { 1.0 } else { 0.0 } - beta * p[r][c]);
    let b = DMatrix::from_fn(k, rhs.len(), |r, c| rhs[c][r]);
    let sol = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Domain("singular policy-evaluation system".into()))?;
    Ok((0..rhs.len())
        .map(|c| sol.column(c).iter().copied().collect())
        .collect())
}

fn check_player(g: &FiniteGame, player: usize) -> Result<()> {
    if player >= g.num_players() {
        return domain(format!(
            "player index {player} out of range for {} players",
            g.num_players()
        ));
    }
    Ok(())
}

/// Exact cost of every player under `profile`: a linear solve when
/// discounted, backward recursion from `J_T = 0` for a finite horizon.
pub fn policy_evaluation(
    g: &FiniteGame,
    profile: &PolicyProfile,
    horizon: Horizon,
) -> Result<ValueTable> {
    horizon.validate()?;
    profile.validate(g, horizon)?;
    match horizon {
        Horizon::Discounted(beta) => {
            let (c, p) = joint_chain(g, profile, 0);
            Ok(ValueTable(vec![solve_discounted(&p, beta, &c)?]))
        }
        Horizon::Finite(t_max) => {
            let n = g.num_players();
            let mut stages = vec![vec![vec![0.0; g.k]; n]; t_max];
            let mut next = vec![vec![0.0; g.k]; n];
            for t in (0..t_max).rev() {
                let (c, p) = joint_chain(g, profile, t);
                for i in 0..n {
                    for x in 0..g.k {
                        stages[t][i][x] = c[i][x] + continuation(&p[x], &next[i]);
                    }
                }
                next = stages[t].clone();
            }
            Ok(ValueTable(stages))
        }
    }
}

/// Optimal values `[t][x]` and a deterministic optimal policy of one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub values: Vec<Vec<f64>>,
    pub policy: Vec<Vec<usize>>,
    pub iterations: usize,
}

/// Best response of `player` against the other players' part of `others`.
///
/// Discounted problems are solved exactly by policy iteration with an LU
/// evaluation step; finite-horizon problems by backward induction.
pub fn best_response_dp(
    g: &FiniteGame,
    player: usize,
    others: &PolicyProfile,
    horizon: Horizon,
) -> Result<BestResponse> {
    check_player(g, player)?;
    horizon.validate()?;
    others.validate(g, horizon)?;
    match horizon {
        Horizon::Discounted(beta) => {
            let induced: Vec<_> = (0..g.k)
                .map(|x| induced_state(g, player, x, others.at(0, x)))
                .collect();
            policy_iteration(&induced, beta)
        }
        Horizon::Finite(t_max) => {
            let mut values = vec![vec![0.0; g.k]; t_max];
            let mut policy = vec![vec![0; g.k]; t_max];
            let mut next = vec![0.0; g.k];
            for t in (0..t_max).rev() {
                for x in 0..g.k {
                    let (cost, rows) = induced_state(g, player, x, others.at(t, x));
                    let (k, v) =
                        argmin((0..cost.len()).map(|a| cost[a] + continuation(&rows[a], &next)));
                    values[t][x] = v;
                    policy[t][x] = k;
                }
                next = values[t].clone();
            }
            Ok(BestResponse {
                values,
                policy,
                iterations: t_max,
            })
        }
    }
}

pub(crate) fn argmin(it: impl Iterator<Item = f64>) -> (usize, f64) {
    it.enumerate().fold(
        (0, f64::INFINITY),
        |acc, (k, v)| if v < acc.1 { (k, v) } else { acc },
    )
}

/// Howard policy iteration; a state switches action only on strict improvement.
pub(crate) fn policy_iteration(
    induced: &[(Vec<f64>, Vec<Vec<f64>>)],
    beta: f64,
) -> Result<BestResponse> {
    let k = induced.len();
    let mut pol: Vec<usize> = induced
        .iter()
        .map(|(c, _)| argmin(c.iter().copied()).0)
        .collect();
    for iteration in 1..=10_000 {
        let p: Vec<Vec<f64>> = (0..k).map(|x| induced[x].1[pol[x]].clone()).collect();
        let c: Vec<f64> = (0..k).map(|x| induced[x].0[pol[x]]).collect();
        let j = solve_discounted(&p, beta, &[c])?
            .pop()
            .expect("one right-hand side");
        let mut changed = false;
        for x in 0..k {
            let (cost, rows) = &induced[x];
            let q = |a: usize| cost[a] + beta * continuation(&rows[a], &j);
            let cur = q(pol[x]);
            let (best, v) = argmin((0..cost.len()).map(q));
            if v < cur - 1e-13 * (1.0 + cur.abs()) {
                pol[x] = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(BestResponse {
                values: vec![j],
                policy: vec![pol],
                iterations: iteration,
            });
        }
    }
    domain("policy iteration did not terminate")
}

/// `(T J)(x) = min_k [c(x,k) + β Σ_y J(y) p(y|x,k)]` for one player against
/// the others' stationary profile.
pub fn best_response_operator(
    g: &FiniteGame,
    player: usize,
    others: &StationaryPolicyProfile,
    beta: f64,
    j: &[f64],
) -> Result<Vec<f64>> {
    check_player(g, player)?;
    check_discount(beta)?;
    PolicyProfile::Stationary(others.clone()).validate(g, Horizon::Discounted(beta))?;
    if j.len() != g.k {
        return domain("value vector length does not match the state count");
    }
    Ok((0..g.k)
        .map(|x| {
            let (cost, rows) = induced_state(g, player, x, &others.0[x]);
            argmin((0..cost.len()).map(|a| cost[a] + beta * continuation(&rows[a], j))).1
        })
        .collect())
}

/// Per player, the max over times and states of own cost under `profile`
/// minus the best-response cost against the others' part of `profile`.
pub fn dynamic_gaps(g: &FiniteGame, profile: &PolicyProfile, horizon: Horizon) -> Result<Vec<f64>> {
    let own = policy_evaluation(g, profile, horizon)?;
    (0..g.num_players())
        .map(|i| {
            let br = best_response_dp(g, i, profile, horizon)?;
            Ok(own
                .0
                .iter()
                .zip(&br.values)
                .flat_map(|(ot, bt)| ot[i].iter().zip(bt).map(|(a, b)| a - b))
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pure_profile(g: &FiniteGame, acts: &[Vec<usize>]) -> PolicyProfile {
        PolicyProfile::Stationary(StationaryPolicyProfile(
            acts.iter()
                .map(|a| MixedProfile::pure(&g.action_counts, a))
                .collect(),
        ))
    }

    #[test]
    fn constant_cost_evaluates_to_geometric_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = FiniteGame::random(&mut rng, 3, &[2, 2], Horizon::Discounted(0.8));
        for c in g.costs.iter_mut().flatten().flatten() {
            *c = 1.0;
        }
        let prof = PolicyProfile::Stationary(StationaryPolicyProfile::uniform(3, &[2, 2]));
        let v = policy_evaluation(&g, &prof, Horizon::Discounted(0.8)).unwrap();
        for x in v.0[0].iter().flatten() {
            assert!((x - 5.0).abs() < 1e-12);
        }
        let v = policy_evaluation(&g, &prof, Horizon::Finite(3)).unwrap();
        for (t, expected) in [(0, 3.0), (1, 2.0), (2, 1.0)] {
            assert!(v.0[t][1].iter().all(|x| (x - expected).abs() < 1e-14));
        }
    }

    #[test]
    fn absorbing_zero_cost_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = FiniteGame::random(&mut rng, 2, &[1], Horizon::Discounted(0.9));
        g.transitions = vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]];
        g.costs = vec![vec![vec![0.7], vec![0.0]]];
        let v = policy_evaluation(
            &g,
            &pure_profile(&g, &[vec![0], vec![0]]),
            Horizon::Discounted(0.9),
        )
        .unwrap();
        assert!((v.0[0][0][0] - 0.7).abs() < 1e-15 && v.0[0][0][1] == 0.0);
    }

    #[test]
    fn best_response_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = 0.85;
        for _ in 0..5 {
            let g = FiniteGame::random(&mut rng, 2, &[3, 2], Horizon::Discounted(beta));
            let others = PolicyProfile::Stationary(StationaryPolicyProfile::uniform(2, &[3, 2]));
            let br = best_response_dp(&g, 0, &others, Horizon::Discounted(beta)).unwrap();
            // enumerate the 9 deterministic stationary policies of player 0
            let mut best = vec![f64::INFINITY; 2];
            for a0 in 0..3 {
                for a1 in 0..3 {
                    let mut p = others.clone();
                    if let PolicyProfile::Stationary(s) = &mut p {
                        s.0[0].0[0] = (0..3).map(|k| if k == a0 { 1.0 } else { 0.0 }).collect();
                        s.0[1].0[0] = (0..3).map(|k| if k == a1 { 1.0 } else { 0.0 }).collect();
                    }
                    let v = policy_evaluation(&g, &p, Horizon::Discounted(beta)).unwrap();
                    for x in 0..2 {
                        best[x] = best[x].min(v.0[0][0][x]);
                    }
                }
            }
            for x in 0..2 {
                assert!((br.values[0][x] - best[x]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn operator_is_a_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let beta = 0.9;
        let g = FiniteGame::random(&mut rng, 4, &[2, 3], Horizon::Discounted(beta));
        let others = StationaryPolicyProfile::uniform(4, &[2, 3]);
        let j1 = vec![0.3, -2.0, 1.0, 4.0];
        let j2 = vec![1.3, 0.5, -1.0, 2.0];
        let t1 = best_response_operator(&g, 1, &others, beta, &j1).unwrap();
        let t2 = best_response_operator(&g, 1, &others, beta, &j2).unwrap();
        let lhs = t1
            .iter()
            .zip(&t2)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(lhs <= beta * 2.5 + 1e-12);
        let br = best_response_dp(
            &g,
            1,
            &PolicyProfile::Stationary(others.clone()),
            Horizon::Discounted(beta),
        )
        .unwrap();
        let fixed = best_response_operator(&g, 1, &others, beta, &br.values[0]).unwrap();
        for (a, b) in fixed.iter().zip(&br.values[0]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_player() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = FiniteGame::random(&mut rng, 2, &[2], Horizon::Discounted(0.5));
        let p = PolicyProfile::Stationary(StationaryPolicyProfile::uniform(2, &[2]));
        assert!(best_response_dp(&g, 1, &p, Horizon::Discounted(0.5)).is_err());
        assert!(policy_evaluation(&g, &p, Horizon::Finite(2)).is_ok());
    }
}
