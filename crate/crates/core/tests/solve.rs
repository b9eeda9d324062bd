use markov_quant::model::Horizon;
use markov_quant::quantize::FiniteGame;
use markov_quant::solve::*;
use markov_quant::stage_nash::{matrix_game_value, MixedProfile};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_game(seed: u64, k: usize, counts: &[usize], h: Horizon) -> FiniteGame {
    FiniteGame::random(&mut rng(seed), k, counts, h)
}

fn zero_sum(seed: u64, k: usize, m: usize, n: usize, beta: f64) -> FiniteGame {
    let mut g = random_game(seed, k, &[m, n], Horizon::Discounted(beta));
    g.costs[1] = g.costs[0]
        .iter()
        .map(|r| r.iter().map(|c| -c).collect())
        .collect();
    g
}

fn common_cost(seed: u64, k: usize, counts: &[usize], beta: f64) -> FiniteGame {
    let mut g = random_game(seed, k, counts, Horizon::Discounted(beta));
    for i in 1..counts.len() {
        g.costs[i] = g.costs[0].clone();
    }
    g
}

/// Probability of the joint action under a mixed profile, coded directly.
fn joint_prob(g: &FiniteGame, mp: &MixedProfile, joint: usize) -> f64 {
    g.decode(joint)
        .iter()
        .enumerate()
        .map(|(i, &a)| mp.0[i][a])
        .product()
}

/// Finite-horizon cost of player `i` by explicit recursion over trajectories.
fn rollout_exact(
    g: &FiniteGame,
    i: usize,
    t: usize,
    x: usize,
    horizon: usize,
    act: &dyn Fn(usize, usize) -> MixedProfile,
) -> f64 {
    if t == horizon {
        return 0.0;
    }
    let mp = act(t, x);
    (0..g.num_joint())
        .map(|a| {
            let w = joint_prob(g, &mp, a);
            if w == 0.0 {
                return 0.0;
            }
            let future: f64 = (0..g.k)
                .map(|y| g.transitions[x][a][y] * rollout_exact(g, i, t + 1, y, horizon, act))
                .sum();
            w * (g.costs[i][x][a] + future)
        })
        .sum()
}

fn with_player(mp: &MixedProfile, i: usize, action: usize) -> MixedProfile {
    let mut q = mp.clone();
    q.0[i] = (0..q.0[i].len())
        .map(|k| if k == action { 1.0 } else { 0.0 })
        .collect();
    q
}

#[test]
fn one_step_horizon_is_per_state_nash() {
    let g = random_game(11, 3, &[2, 2], Horizon::Finite(1));
    let r = backward_induction_nash(&g, 1, &StageOptions::default()).unwrap();
    for x in 0..3 {
        let mp = r.profile.at(0, x);
        for i in 0..2 {
            let own: f64 = (0..4)
                .map(|a| joint_prob(&g, mp, a) * g.costs[i][x][a])
                .sum();
            for dev in 0..2 {
                let q = with_player(mp, i, dev);
                let alt: f64 = (0..4)
                    .map(|a| joint_prob(&g, &q, a) * g.costs[i][x][a])
                    .sum();
                assert!(own <= alt + 1e-9);
            }
            assert!((r.values.0[0][i][x] - own).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_costs_telescope() {
    let mut g = random_game(12, 3, &[2, 3], Horizon::Finite(4));
    for c in g.costs.iter_mut().flatten().flatten() {
        *c = 1.0;
    }
    let r = backward_induction_nash(&g, 4, &StageOptions::default()).unwrap();
    for t in 0..4 {
        for v in r.values.0[t].iter().flatten() {
            assert!((v - (4 - t) as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_induction_survives_pure_markov_deviations() {
    for seed in 0..10 {
        let g = random_game(100 + seed, 2, &[2, 2], Horizon::Finite(2));
        let r = backward_induction_nash(&g, 2, &StageOptions::default()).unwrap();
        let prof = |t: usize, x: usize| r.profile.at(t, x).clone();
        for i in 0..2 {
            for x0 in 0..2 {
                let own = rollout_exact(&g, i, 0, x0, 2, &prof);
                // deterministic Markov deviations: one action per (t, x), 16 in total
                for code in 0..16usize {
                    let dev = |t: usize, x: usize| {
                        with_player(r.profile.at(t, x), i, (code >> (2 * t + x)) & 1)
                    };
                    let alt = rollout_exact(&g, i, 0, x0, 2, &dev);
                    assert!(
                        own - alt <= r.dynamic_gaps[i] + 1e-9,
                        "seed {seed} player {i}"
                    );
                }
            }
            assert!(r.dynamic_gaps[i] <= 1e-9);
        }
    }
}

#[test]
fn value_iteration_constant_cost() {
    let mut g = random_game(13, 3, &[2, 2], Horizon::Discounted(0.9));
    for c in g.costs.iter_mut().flatten().flatten() {
        *c = 0.4;
    }
    let r = nash_value_iteration(&g, 0.9, &NashViOptions::default()).unwrap();
    assert!(r.converged);
    for v in r.values.0[0].iter().flatten() {
        assert!((v - 4.0).abs() < 1e-7);
    }
    assert!(r.max_dynamic_gap() < 1e-9);
}

#[test]
fn value_iteration_without_discount_is_one_shot() {
    let g = random_game(14, 3, &[2, 2], Horizon::Discounted(0.0));
    let vi = nash_value_iteration(&g, 0.0, &NashViOptions::default()).unwrap();
    let bi = backward_induction_nash(&g, 1, &StageOptions::default()).unwrap();
    assert!(vi.converged);
    for x in 0..3 {
        assert!(vi.profile.at(0, x).distance(bi.profile.at(0, x)) < 1e-12);
    }
}

#[test]
fn zero_sum_through_general_path_matches_shapley() {
    for seed in 0..10 {
        let g = zero_sum(200 + seed, 3, 2, 2, 0.8);
        let opts = NashViOptions {
            tol: 1e-9,
            ..NashViOptions::default()
        };
        let vi = nash_value_iteration(&g, 0.8, &opts).unwrap();
        let sh = shapley_iteration(&g, 0.8, 1e-10).unwrap();
        for x in 0..3 {
            assert!((vi.values.0[0][0][x] - sh.values.0[0][0][x]).abs() < 1e-6);
        }
        assert!(vi.max_dynamic_gap() < 1e-6);
        assert!(sh.max_dynamic_gap() < 1e-6);
    }
}

#[test]
fn shapley_constant_and_static_cases() {
    let mut g = zero_sum(15, 3, 2, 3, 0.75);
    for v in g.costs[0].iter_mut().flatten() {
        *v = 1.0;
    }
    for v in g.costs[1].iter_mut().flatten() {
        *v = -1.0;
    }
    let r = shapley_iteration(&g, 0.75, 1e-10).unwrap();
    assert!(r.values.0[0][0].iter().all(|v| (v - 4.0).abs() < 1e-9));

    let g = zero_sum(16, 3, 2, 3, 0.0);
    let r = shapley_iteration(&g, 0.0, 1e-10).unwrap();
    for x in 0..3 {
        let m: Vec<Vec<f64>> = (0..2)
            .map(|a| (0..3).map(|b| g.costs[0][x][a * 3 + b]).collect())
            .collect();
        assert_eq!(r.values.0[0][0][x], matrix_game_value(&m).unwrap().value);
    }
}

#[test]
fn shapley_residuals_contract() {
    let beta = 0.9;
    let g = zero_sum(17, 3, 2, 2, beta);
    let r = shapley_iteration(&g, beta, 1e-10).unwrap();
    assert!(r.residual_history.len() > 5);
    for w in r.residual_history.windows(2) {
        assert!(w[1] <= beta * w[0] + 1e-12);
    }
    assert!(shapley_iteration(
        &random_game(1, 2, &[2, 2], Horizon::Discounted(0.5)),
        0.5,
        1e-8
    )
    .is_err());
}

#[test]
fn team_value_matches_policy_enumeration() {
    let beta = 0.85;
    for seed in 0..5 {
        let g = common_cost(300 + seed, 3, &[2, 2], beta);
        let r = team_value_iteration(&g, beta, 1e-10).unwrap();
        // all 4^3 deterministic stationary joint policies, evaluated by power iteration
        let mut best = [f64::INFINITY; 3];
        for code in 0..64usize {
            let pol: Vec<usize> = (0..3).map(|x| (code >> (2 * x)) & 3).collect();
            let mut j = [0.0; 3];
            for _ in 0..400 {
                let mut n = [0.0; 3];
                for x in 0..3 {
                    n[x] = g.costs[0][x][pol[x]]
                        + beta
                            * (0..3)
                                .map(|y| g.transitions[x][pol[x]][y] * j[y])
                                .sum::<f64>();
                }
                j = n;
            }
            for x in 0..3 {
                best[x] = best[x].min(j[x]);
            }
        }
        for x in 0..3 {
            assert!((r.values.0[0][0][x] - best[x]).abs() < 1e-8);
        }
        // team optimum is an equilibrium of the general-sum game
        let gaps = dynamic_gaps(&g, &r.profile, Horizon::Discounted(beta)).unwrap();
        assert!(gaps.iter().all(|&d| d.abs() < 1e-9));
    }
}

#[test]
fn team_edge_cases() {
    let mut g = common_cost(18, 2, &[1, 1], 0.5);
    for c in g.costs.iter_mut().flatten().flatten() {
        *c = 0.3;
    }
    let r = team_value_iteration(&g, 0.5, 1e-12).unwrap();
    assert!(r.values.0[0][1].iter().all(|v| (v - 0.6).abs() < 1e-12));

    let g = common_cost(19, 3, &[2, 3], 0.0);
    let r = team_value_iteration(&g, 0.0, 1e-12).unwrap();
    for x in 0..3 {
        let best = g.costs[0][x].iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(r.values.0[0][0][x], best);
    }
    assert!(team_value_iteration(
        &random_game(2, 2, &[2, 2], Horizon::Discounted(0.5)),
        0.5,
        1e-8
    )
    .is_err());
}

#[test]
fn regret_search_finds_dominant_profile() {
    let beta = 0.7;
    let mut g = random_game(20, 3, &[3, 2], Horizon::Discounted(beta));
    // joint action (2, 1) costs -1 for both players, anything else costs +1
    let target = g.encode(&[2, 1]);
    for i in 0..2 {
        for x in 0..3 {
            for a in 0..6 {
                let idx = g.decode(a);
                let own_on_path = if i == 0 { idx[0] == 2 } else { idx[1] == 1 };
                g.costs[i][x][a] = if a == target {
                    -1.0
                } else if own_on_path {
                    0.0
                } else {
                    1.0
                };
            }
        }
    }
    let r = stationary_regret_search(&g, beta, 1e-9, 4, 1, None).unwrap();
    assert!(r.max_dynamic_gap() <= 1e-9);
    for x in 0..3 {
        assert_eq!(r.profile.at(0, x), &MixedProfile::pure(&[3, 2], &[2, 1]));
    }
}

#[test]
fn regret_search_zero_cost_and_warm_start() {
    let mut g = random_game(21, 3, &[2, 2], Horizon::Discounted(0.9));
    for c in g.costs.iter_mut().flatten().flatten() {
        *c = 0.0;
    }
    let r = stationary_regret_search(&g, 0.9, 1e-9, 4, 0, None).unwrap();
    assert_eq!(r.max_dynamic_gap(), 0.0);
    assert_eq!(r.iterations, 1);

    let g = random_game(22, 3, &[2, 2], Horizon::Discounted(0.9));
    let opts = NashViOptions {
        max_iter: 3,
        fallback_budget: 0,
        ..NashViOptions::default()
    };
    let vi = nash_value_iteration(&g, 0.9, &opts).unwrap();
    assert!(!vi.converged);
    let PolicyProfile::Stationary(warm) = &vi.profile else {
        panic!()
    };
    let s = stationary_regret_search(&g, 0.9, 1e-9, 3, 5, Some(warm)).unwrap();
    assert!(s.max_dynamic_gap() <= vi.max_dynamic_gap());
}

#[test]
fn best_response_decoupling_and_no_choice() {
    let beta = 0.8;
    let h = Horizon::Discounted(beta);
    // player 0's cost and the kernel ignore player 1's action
    let mut g = random_game(23, 3, &[2, 2], h);
    for x in 0..3 {
        for a0 in 0..2 {
            g.costs[0][x][a0 * 2 + 1] = g.costs[0][x][a0 * 2];
            g.transitions[x][a0 * 2 + 1] = g.transitions[x][a0 * 2].clone();
        }
    }
    let mut marginal = random_game(0, 3, &[2], h);
    for x in 0..3 {
        for a0 in 0..2 {
            marginal.costs[0][x][a0] = g.costs[0][x][a0 * 2];
            marginal.transitions[x][a0] = g.transitions[x][a0 * 2].clone();
        }
    }
    let mut rr = rng(9);
    let others = PolicyProfile::Stationary(StationaryPolicyProfile(
        (0..3)
            .map(|_| {
                let p: f64 = rr.random();
                MixedProfile(vec![vec![0.5, 0.5], vec![p, 1.0 - p]])
            })
            .collect(),
    ));
    let a = best_response_dp(&g, 0, &others, h).unwrap();
    let single = PolicyProfile::Stationary(StationaryPolicyProfile::uniform(3, &[2]));
    let b = best_response_dp(&marginal, 0, &single, h).unwrap();
    for x in 0..3 {
        assert!((a.values[0][x] - b.values[0][x]).abs() < 1e-12);
    }

    // player 1 has a single action: its best response is plain evaluation
    let g = random_game(24, 3, &[3, 1], h);
    let prof = PolicyProfile::Stationary(StationaryPolicyProfile::uniform(3, &[3, 1]));
    let br = best_response_dp(&g, 1, &prof, h).unwrap();
    let ev = policy_evaluation(&g, &prof, h).unwrap();
    for x in 0..3 {
        assert!((br.values[0][x] - ev.0[0][1][x]).abs() < 1e-12);
    }
}

#[test]
fn policy_evaluation_matches_monte_carlo() {
    let beta = 0.5;
    let g = random_game(25, 3, &[2, 2], Horizon::Discounted(beta));
    let prof = StationaryPolicyProfile(
        (0..3)
            .map(|x| {
                MixedProfile(vec![
                    vec![0.3, 0.7],
                    vec![0.2 + 0.2 * x as f64, 0.8 - 0.2 * x as f64],
                ])
            })
            .collect(),
    );
    let wrapped = PolicyProfile::Stationary(prof.clone());
    let exact = policy_evaluation(&g, &wrapped, Horizon::Discounted(beta)).unwrap();
    let mut r = rng(77);
    let episodes = 100_000;
    let draw = |r: &mut ChaCha8Rng, p: &[f64]| {
        let u: f64 = r.random();
        let mut acc = 0.0;
        for (k, &q) in p.iter().enumerate() {
            acc += q;
            if u < acc {
                return k;
            }
        }
        p.len() - 1
    };
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut x = 0;
        let mut disc = 1.0;
        let mut total = 0.0;
        // β^60 is far below the Monte-Carlo error
        for _ in 0..60 {
            let a: Vec<usize> = (0..2).map(|i| draw(&mut r, &prof.0[x].0[i])).collect();
            let j = g.encode(&a);
            total += disc * g.costs[0][x][j];
            disc *= beta;
            x = draw(&mut r, &g.transitions[x][j]);
        }
        sum += total;
        sq += total * total;
    }
    let mean = sum / episodes as f64;
    let se = ((sq / episodes as f64 - mean * mean) / episodes as f64).sqrt();
    assert!(
        (mean - exact.0[0][0][0]).abs() <= 3.0 * se,
        "mc {mean} exact {} se {se}",
        exact.0[0][0][0]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn operators_contract(seed in 0u64..10_000, beta in 0.0f64..0.99) {
        let g = zero_sum(seed, 4, 2, 3, beta);
        let mut r = rng(seed ^ 0xABCD);
        let j1: Vec<f64> = (0..4).map(|_| r.random_range(-5.0..5.0)).collect();
        let j2: Vec<f64> = (0..4).map(|_| r.random_range(-5.0..5.0)).collect();
        let d = j1.iter().zip(&j2).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let t1 = shapley_operator(&g, beta, &j1).unwrap();
        let t2 = shapley_operator(&g, beta, &j2).unwrap();
        prop_assert!(dist(&t1, &t2) <= beta * d + 1e-10);
        let others = StationaryPolicyProfile::uniform(4, &[2, 3]);
        let b1 = best_response_operator(&g, 0, &others, beta, &j1).unwrap();
        let b2 = best_response_operator(&g, 0, &others, beta, &j2).unwrap();
        prop_assert!(dist(&b1, &b2) <= beta * d + 1e-10);
    }

    #[test]
    fn reports_are_sound_and_bounded(seed in 0u64..10_000, beta in 0.0f64..0.95) {
        let h = Horizon::Discounted(beta);
        let g = random_game(seed, 3, &[2, 2], h);
        let r = nash_value_iteration(&g, beta, &NashViOptions::default()).unwrap();
        let own = policy_evaluation(&g, &r.profile, h).unwrap();
        prop_assert!(own.max_abs() <= g.cost_bound / (1.0 - beta) + 1e-9);
        prop_assert!(r.values.max_abs() <= g.cost_bound / (1.0 - beta) + 1e-9);
        for i in 0..2 {
            let br = best_response_dp(&g, i, &r.profile, h).unwrap();
            for x in 0..3 {
                let gap = own.0[0][i][x] - br.values[0][x];
                prop_assert!(gap >= -1e-9);
                prop_assert!(gap <= r.dynamic_gaps[i] + 1e-9);
            }
        }
    }

    #[test]
    fn finite_horizon_values_bounded(seed in 0u64..10_000, t in 1usize..5) {
        let g = random_game(seed, 3, &[2, 2], Horizon::Finite(t));
        let r = backward_induction_nash(&g, t, &StageOptions::default()).unwrap();
        for (s, stage) in r.values.0.iter().enumerate() {
            for v in stage.iter().flatten() {
                prop_assert!(v.abs() <= g.cost_bound * (t - s) as f64 + 1e-9);
            }
        }
        prop_assert!(r.max_dynamic_gap() <= 1e-8);
    }
}
