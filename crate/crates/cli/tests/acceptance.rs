//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use markov_quant::model::{zoo, Horizon, QuadratureRule};
use markov_quant::quantize::{
    build_finite_game, encode_joint, Caps, FiniteGame, QuadConfig, Quantization,
};
use markov_quant::solve::*;
use markov_quant::stage_nash::{matrix_game_value, MixedProfile};
use markov_quant::truncate::{build_truncated_game, build_truncation, Ladder};
use markov_quant::verify::{
    certify_epsilon, fixed_point_residual, CellLookup, CertifyOptions, ExtendedPolicyProfile,
    Refinable,
};
use markov_quant_cli::{run, write_artifacts, RunConfig, RunResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn zero_sum(mut g: FiniteGame) -> FiniteGame {
    g.costs[1] = g.costs[0]
        .iter()
        .map(|r| r.iter().map(|c| -c).collect())
        .collect();
    g
}

fn common(mut g: FiniteGame) -> FiniteGame {
    g.costs[1] = g.costs[0].clone();
    g
}

fn random_shape(rng: &mut impl Rng) -> (usize, Vec<usize>) {
    (
        rng.random_range(1..=5),
        vec![rng.random_range(1..=3), rng.random_range(1..=3)],
    )
}

fn c1_contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let (k, counts) = random_shape(&mut rng);
        let beta = rng.random_range(0.5..0.99);
        let g = FiniteGame::random(&mut rng, k, &counts, Horizon::Discounted(beta));
        let zs = zero_sum(g.clone());
        let team = common(g.clone());
        let others = StationaryPolicyProfile(
            (0..k)
                .map(|_| {
                    MixedProfile(
                        counts
                            .iter()
                            .map(|&m| {
                                let w: Vec<f64> =
                                    (0..m).map(|_| rng.random::<f64>() + 0.01).collect();
                                let s: f64 = w.iter().sum();
                                w.iter().map(|x| x / s).collect()
                            })
                            .collect(),
                    )
                })
                .collect(),
        );
        for _ in 0..10 {
            let j: Vec<f64> = (0..k).map(|_| rng.random_range(-10.0..10.0)).collect();
            let jp: Vec<f64> = (0..k).map(|_| rng.random_range(-10.0..10.0)).collect();
            let d = sup(&j, &jp);
            let pairs = [
                (
                    shapley_operator(&zs, beta, &j),
                    shapley_operator(&zs, beta, &jp),
                ),
                (
                    team_operator(&team, beta, &j),
                    team_operator(&team, beta, &jp),
                ),
                (
                    best_response_operator(&g, 0, &others, beta, &j),
                    best_response_operator(&g, 0, &others, beta, &jp),
                ),
                (
                    best_response_operator(&g, 1, &others, beta, &j),
                    best_response_operator(&g, 1, &others, beta, &jp),
                ),
            ];
            for (a, b) in pairs {
                let (a, b) = (a.map_err(|e| e.to_string())?, b.map_err(|e| e.to_string())?);
                let excess = sup(&a, &b) - beta * d;
                worst = worst.max(excess);
                check(excess <= 1e-10, || {
                    format!("‖TJ−TJ'‖ − β‖J−J'‖ = {excess:e}")
                })?;
            }
        }
    }
    Ok(format!(
        "20 games × 10 pairs × 4 operators, max excess {worst:.2e}"
    ))
}

fn c2_lossless() -> Outcome {
    let mut rows = 0usize;
    for id in [
        "tg-2p-smooth",
        "quad-2p",
        "team-2p",
        "window-1p",
        "pc-2p-lossless",
        "zs-mp",
        "coupled-2p",
        "quad-1p",
    ] {
        let game = zoo::build(id, &BTreeMap::new(), Horizon::Discounted(0.9))
            .map_err(|e| e.to_string())?;
        for delta in [0.2, 0.1, 0.05] {
            let q = Quantization::new(&game, delta, QuadConfig::default(), Caps::default())
                .map_err(|e| e.to_string())?;
            let g = build_finite_game(&q).map_err(|e| e.to_string())?;
            for row in g.transitions.iter().flatten() {
                rows += 1;
                let s: f64 = row.iter().sum();
                check(s == 1.0 && row.iter().all(|&p| p >= 0.0), || {
                    format!("{id} δ={delta}: row sums to {s:.17}")
                })?;
            }
        }
    }
    let game = zoo::build("pc-2p-lossless", &BTreeMap::new(), Horizon::Discounted(0.9)).unwrap();
    let mut worst: f64 = 0.0;
    let mut eps_worst: f64 = 0.0;
    for delta in [0.25, 0.125, 0.0625] {
        let q = Quantization::new(&game, delta, QuadConfig::default(), Caps::default()).unwrap();
        let g = build_finite_game(&q).unwrap();
        for (j, z) in q.snet.points.iter().enumerate() {
            for a in 0..g.num_joint() {
                let act = q.anet.joint_action(a);
                for i in 0..2 {
                    worst =
                        worst.max((g.costs[i][j][a] - game.eval_cost(i, z, &act).unwrap()).abs());
                }
                for (l, cell) in q.snet.cells.iter().enumerate() {
                    let p = game
                        .eval_kernel_mass(cell, z, &act, &QuadratureRule::midpoint(1))
                        .unwrap();
                    worst = worst.max((g.transitions[j][a][l] - p).abs());
                }
            }
        }
        let r =
            nash_value_iteration(&g, 0.9, &NashViOptions::default()).map_err(|e| e.to_string())?;
        let ext = ExtendedPolicyProfile::new(r.profile, CellLookup::of_model(&q)).unwrap();
        let cert =
            certify_epsilon(&q, &ext, 4, &CertifyOptions::default()).map_err(|e| e.to_string())?;
        eps_worst = eps_worst.max(cert.max_eps());
    }
    check(worst <= 1e-12, || {
        format!("lossless model differs by {worst:e}")
    })?;
    check(eps_worst <= 1e-6, || {
        format!("ε̂ = {eps_worst:e} on the lossless model")
    })?;
    Ok(format!(
        "{rows} rows sum to exactly 1; lossless max diff {worst:.1e}; max ε̂ {eps_worst:.1e}"
    ))
}

/// Player `i`'s cost-to-go from every `(t, x)` when `i` plays pure `dev[t][x]`
/// (or the profile when `None`) and the others follow `profile`.
fn markov_cost(
    g: &FiniteGame,
    p: &MarkovPolicyProfile,
    i: usize,
    dev: Option<&[Vec<usize>]>,
) -> Vec<Vec<f64>> {
    let horizon = p.0.len();
    let mut v = vec![vec![0.0; g.k]; horizon + 1];
    for t in (0..horizon).rev() {
        for x in 0..g.k {
            let mix = &p.0[t].0[x].0;
            let mut total = 0.0;
            for a0 in 0..g.action_counts[0] {
                for a1 in 0..g.action_counts[1] {
                    let acts = [a0, a1];
                    let mut w = 1.0;
                    for (pl, &ap) in acts.iter().enumerate() {
                        w *= match (pl == i, dev) {
                            (true, Some(d)) => f64::from(u8::from(d[t][x] == ap)),
                            _ => mix[pl][ap],
                        };
                    }
                    if w == 0.0 {
                        continue;
                    }
                    let a = encode_joint(&acts, &g.action_counts);
                    let cont: f64 = (0..g.k).map(|y| g.transitions[x][a][y] * v[t + 1][y]).sum();
                    total += w * (g.costs[i][x][a] + cont);
                }
            }
            v[t][x] = total;
        }
    }
    v.truncate(horizon);
    v
}

fn c3_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        let g = FiniteGame::random(&mut rng, 2, &[2, 2], Horizon::Finite(2));
        let r =
            backward_induction_nash(&g, 2, &StageOptions::default()).map_err(|e| e.to_string())?;
        let PolicyProfile::Markov(p) = &r.profile else {
            return Err("finite-horizon solve returned a stationary profile".into());
        };
        for i in 0..2 {
            let own = markov_cost(&g, p, i, None);
            let mut best = own.clone();
            // all 2^(T·k) = 16 pure Markov policies of player i
            for code in 0..16usize {
                let dev: Vec<Vec<usize>> = (0..2)
                    .map(|t| (0..2).map(|x| (code >> (2 * t + x)) & 1).collect())
                    .collect();
                let c = markov_cost(&g, p, i, Some(&dev));
                for t in 0..2 {
                    for x in 0..2 {
                        best[t][x] = best[t][x].min(c[t][x]);
                    }
                }
            }
            let gap = (0..2)
                .flat_map(|t| (0..2).map(move |x| (t, x)))
                .map(|(t, x)| own[t][x] - best[t][x])
                .fold(0.0, f64::max);
            let excess = gap - r.dynamic_gaps[i];
            worst = worst.max(excess);
            check(excess <= 1e-9, || {
                format!(
                    "brute-force gap {gap:e} vs reported {:e}",
                    r.dynamic_gaps[i]
                )
            })?;
        }
    }
    Ok(format!(
        "10 instances, max (brute − reported) gap {worst:.1e}"
    ))
}

/// Discounted cost of every stationary pure policy of `i` against `p`, minimized per state.
fn brute_stationary_best(
    g: &FiniteGame,
    p: &StationaryPolicyProfile,
    i: usize,
    beta: f64,
) -> Vec<f64> {
    let m = g.action_counts[i];
    let total = m.pow(g.k as u32);
    let mut best = vec![f64::INFINITY; g.k];
    for code in 0..total {
        let pol: Vec<usize> = (0..g.k).map(|x| (code / m.pow(x as u32)) % m).collect();
        let mut v = vec![0.0; g.k];
        for _ in 0..2000 {
            v = (0..g.k)
                .map(|x| {
                    let mix = &p.0[x].0;
                    let mut tot = 0.0;
                    for a in 0..g.num_joint() {
                        let idx = g.decode(a);
                        if idx[i] != pol[x] {
                            continue;
                        }
                        let w: f64 = (0..2)
                            .filter(|&pl| pl != i)
                            .map(|pl| mix[pl][idx[pl]])
                            .product();
                        let cont: f64 = (0..g.k).map(|y| g.transitions[x][a][y] * v[y]).sum();
                        tot += w * (g.costs[i][x][a] + beta * cont);
                    }
                    tot
                })
                .collect();
        }
        for x in 0..g.k {
            best[x] = best[x].min(v[x]);
        }
    }
    best
}

fn c4_cross_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let beta = 0.9;
    let mut zs_worst: f64 = 0.0;
    for _ in 0..10 {
        let (k, counts) = random_shape(&mut rng);
        let g = zero_sum(FiniteGame::random(
            &mut rng,
            k,
            &counts,
            Horizon::Discounted(beta),
        ));
        let nash =
            nash_value_iteration(&g, beta, &NashViOptions::default()).map_err(|e| e.to_string())?;
        let shap = shapley_iteration(&g, beta, 1e-10).map_err(|e| e.to_string())?;
        let d = sup(nash.values.initial(0), shap.values.initial(0));
        zs_worst = zs_worst.max(d);
        check(d <= 1e-6, || {
            format!("zero-sum: Nash VI and Shapley differ by {d:e}")
        })?;
    }
    let mut team_worst: f64 = 0.0;
    for _ in 0..10 {
        let (k, counts) = random_shape(&mut rng);
        let g = common(FiniteGame::random(
            &mut rng,
            k,
            &counts,
            Horizon::Discounted(beta),
        ));
        let r = team_value_iteration(&g, beta, 1e-10).map_err(|e| e.to_string())?;
        let PolicyProfile::Stationary(p) = &r.profile else {
            return Err("team solve returned a Markov profile".into());
        };
        let own = policy_evaluation(&g, &r.profile, Horizon::Discounted(beta))
            .map_err(|e| e.to_string())?;
        for i in 0..2 {
            let best = brute_stationary_best(&g, p, i, beta);
            let gap = own.0[0][i]
                .iter()
                .zip(&best)
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            team_worst = team_worst.max(gap);
            check(gap <= 1e-9, || {
                format!("team profile has deviation gain {gap:e}")
            })?;
        }
    }
    Ok(format!(
        "zero-sum max value diff {zs_worst:.1e}; team max deviation gain {team_worst:.1e}"
    ))
}

fn config(body: &str) -> Result<RunConfig, String> {
    RunConfig::parse(body).map_err(|e| e.to_string())
}

const C5: &str = r#"
[model]
id = "tg-2p-smooth"
mode = "nonzero-sum-discounted"
beta = 0.9

[quantize]
deltas = [0.2, 0.1, 0.05]

[verify]
refine = 4
"#;

fn run_ok(cfg: &RunConfig) -> Result<RunResult, String> {
    match run(cfg) {
        (res, None) => Ok(res),
        (_, Some(e)) => Err(e.to_string()),
    }
}

fn eps_ladder(res: &RunResult) -> Result<String, String> {
    let eps: Vec<&Vec<f64>> = res.rungs.iter().map(|r| &r.certificate.eps).collect();
    for w in eps.windows(2) {
        for (i, (a, b)) in w[0].iter().zip(w[1]).enumerate() {
            check(*b <= 1.1 * a, || {
                format!("player {}: ε̂ rose from {a:.4} to {b:.4}", i + 1)
            })?;
        }
    }
    Ok(eps
        .iter()
        .map(|e| format!("[{:.4}, {:.4}]", e[0], e[1]))
        .collect::<Vec<_>>()
        .join(" → "))
}

fn c5_discounted_ladder() -> Outcome {
    let cfg = config(C5)?;
    let res = run_ok(&cfg)?;
    let trail = eps_ladder(&res)?;
    let bound = 0.1 * 1.0 / (1.0 - 0.9);
    let last = &res.rungs.last().unwrap().certificate.eps;
    check(last.iter().all(|&e| e <= bound), || {
        format!("final ε̂ {last:?} above {bound}")
    })?;
    check(res.rungs.iter().all(|r| r.solve.converged), || {
        "a rung did not converge".into()
    })?;
    Ok(format!("ε̂ {trail}"))
}

fn c6_finite_ladder() -> Outcome {
    let cfg = config(&C5.replace(
        "mode = \"nonzero-sum-discounted\"\nbeta = 0.9",
        "mode = \"nonzero-sum-finite-horizon\"\nhorizon = 3",
    ))?;
    let res = run_ok(&cfg)?;
    Ok(format!("ε̂ {}", eps_ladder(&res)?))
}

fn c7_fixed_point() -> Outcome {
    let beta = 0.9;
    let opts = NashViOptions::default();
    let nash_stop = opts.tol * (1.0 - beta);
    let special_stop = 1e-8 * (1.0 - beta) / (2.0 * beta);
    let mut checked = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    let mut record = |name: String, res: f64, stop: f64, converged: bool| -> Result<(), String> {
        if !converged {
            return Err(format!("{name}: solve did not converge"));
        }
        worst_ratio = worst_ratio.max(res / stop);
        check(res <= 10.0 * stop, || {
            format!("{name}: residual {res:e} > 10 × {stop:e}")
        })?;
        checked.push(name);
        Ok(())
    };
    for info in [
        "const-2p",
        "coupled-2p",
        "pc-2p-lossless",
        "quad-1p",
        "quad-2p",
        "team-2p",
        "tg-2p-smooth",
        "window-1p",
        "zs-mp",
    ] {
        let game = zoo::build(info, &BTreeMap::new(), Horizon::Discounted(beta))
            .map_err(|e| e.to_string())?;
        let q = Quantization::new(&game, 0.1, QuadConfig::default(), Caps::default())
            .map_err(|e| e.to_string())?;
        let g = build_finite_game(&q).map_err(|e| e.to_string())?;
        let r = nash_value_iteration(&g, beta, &opts).map_err(|e| e.to_string())?;
        let res = fixed_point_residual(&q, &r, beta).map_err(|e| e.to_string())?;
        record(info.to_string(), res, nash_stop, r.converged)?;
        if info == "zs-mp" {
            let r = shapley_iteration(&g, beta, 1e-8).map_err(|e| e.to_string())?;
            record(
                "zs-mp/shapley".into(),
                fixed_point_residual(&q, &r, beta).map_err(|e| e.to_string())?,
                special_stop,
                r.converged,
            )?;
        }
        if info == "team-2p" || info == "const-2p" {
            let r = team_value_iteration(&g, beta, 1e-8).map_err(|e| e.to_string())?;
            record(
                format!("{info}/team"),
                fixed_point_residual(&q, &r, beta).map_err(|e| e.to_string())?,
                special_stop,
                r.converged,
            )?;
        }
    }
    let game = zoo::build(
        "gauss-drift-2p",
        &BTreeMap::new(),
        Horizon::Discounted(beta),
    )
    .unwrap();
    let t = build_truncation(&game, 1, &Ladder::unit(1)).map_err(|e| e.to_string())?;
    let tq = build_truncated_game(&game, t)
        .and_then(|tg| tg.quantize(0.1, QuadConfig::default(), Caps::default()))
        .map_err(|e| e.to_string())?;
    let g = build_finite_game(&tq).map_err(|e| e.to_string())?;
    let r = nash_value_iteration(&g, beta, &opts).map_err(|e| e.to_string())?;
    record(
        "gauss-drift-2p@K1".into(),
        fixed_point_residual(&tq, &r, beta).map_err(|e| e.to_string())?,
        nash_stop,
        r.converged,
    )?;
    let _ = tq.refined(2).map_err(|e| e.to_string())?;
    Ok(format!(
        "{} solves, max residual/stop ratio {worst_ratio:.2}",
        checked.len()
    ))
}

fn c8_truncation() -> Outcome {
    let cfg = config(
        r#"
[model]
id = "gauss-drift-2p"
mode = "nonzero-sum-discounted"
beta = 0.9

[quantize]
deltas = [0.1]

[verify]
refine = 4

[truncate]
levels = [1, 2, 3]
probe_lower = [-1.0]
probe_upper = [1.0]
probe_points = 201
"#,
    )?;
    let res = run_ok(&cfg)?;
    let tr: Vec<_> = res
        .rungs
        .iter()
        .map(|r| r.truncation.clone().unwrap())
        .collect();
    let leaks: Vec<f64> = tr.iter().map(|t| t.max_leak).collect();
    let changes: Vec<f64> = tr.iter().filter_map(|t| t.probe_change).collect();
    check(leaks.windows(2).all(|w| w[1] < w[0]), || {
        format!("leakage not strictly decreasing: {leaks:?}")
    })?;
    check(changes.len() == 2 && changes[1] < changes[0], || {
        format!("probe changes not decreasing: {changes:?}")
    })?;
    Ok(format!(
        "leak {:.3e} → {:.3e} → {:.3e}; ‖ΔĴ‖ on K {:.3e} → {:.3e}",
        leaks[0], leaks[1], leaks[2], changes[0], changes[1]
    ))
}

fn c9_matrix_games() -> Outcome {
    let v = matrix_game_value(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).map_err(|e| e.to_string())?;
    check(v.value.abs() <= 1e-12, || {
        format!("matching pennies value {}", v.value)
    })?;
    check(
        v.row_mix
            .iter()
            .chain(&v.col_mix)
            .all(|p| (p - 0.5).abs() <= 1e-12),
        || "mixes not uniform".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let a: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let v = matrix_game_value(&a).map_err(|e| e.to_string())?.value;
        let minmax = a
            .iter()
            .map(|r| r.iter().copied().fold(f64::MIN, f64::max))
            .fold(f64::MAX, f64::min);
        let maxmin = (0..n)
            .map(|j| a.iter().map(|r| r[j]).fold(f64::MAX, f64::min))
            .fold(f64::MIN, f64::max);
        check(minmax >= v - 1e-12 && v >= maxmin - 1e-12, || {
            format!("sandwich fails: {maxmin} ≤ {v} ≤ {minmax}")
        })?;
    }
    Ok("matching pennies exact; 100 random sandwiches hold".into())
}

fn c10_reproducible() -> Outcome {
    let cfg = config(C5)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut docs = Vec::new();
    for k in 0..2 {
        let res = run_ok(&cfg)?;
        let (json, _) = write_artifacts(&res, &cfg, &dir.path().join(format!("run{k}")))
            .map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(json).map_err(|e| e.to_string())?;
        let cut = text.find("\"timing\"").ok_or("no timing field")?;
        docs.push(text[..cut].to_string());
    }
    check(docs[0] == docs[1], || {
        "result.json differs outside the timing field".into()
    })?;
    Ok(format!(
        "{} bytes identical before the timing field",
        docs[0].len()
    ))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("1 contraction", Duration::from_secs(5), c1_contraction),
        (
            "2 stochasticity and lossless quantization",
            Duration::from_secs(10),
            c2_lossless,
        ),
        (
            "3 finite-horizon brute force",
            Duration::from_secs(10),
            c3_brute_force,
        ),
        (
            "4 cross-solver consistency",
            Duration::from_secs(30),
            c4_cross_solver,
        ),
        (
            "5 discounted δ ladder",
            Duration::from_secs(300),
            c5_discounted_ladder,
        ),
        (
            "6 finite-horizon δ ladder",
            Duration::from_secs(120),
            c6_finite_ladder,
        ),
        (
            "7 extended-operator fixed point",
            Duration::MAX,
            c7_fixed_point,
        ),
        (
            "8 truncation ladder",
            Duration::from_secs(180),
            c8_truncation,
        ),
        (
            "9 matrix-game exactness",
            Duration::from_secs(5),
            c9_matrix_games,
        ),
        ("10 reproducibility", Duration::MAX, c10_reproducible),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > limit => Err(format!("{msg}; took {took:.1?}, limit {limit:.0?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS criterion {name}: {msg} ({took:.2?})"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg} ({took:.2?})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
