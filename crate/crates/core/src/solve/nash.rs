use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mdp::{best_response_dp, best_response_operator, dynamic_gaps, policy_evaluation};
use super::{
    check_discount, stage_game, sup_distance, MarkovPolicyProfile, PolicyProfile, SolveMethod,
    SolveReport, StationaryPolicyProfile, ValueTable,
};
use crate::error::{domain, Result};
use crate::model::Horizon;
use crate::quantize::{random_simplex_point, FiniteGame};
use crate::stage_nash::{
    best_response_gap, bimatrix_equilibria, nplayer_nash, pure_equilibria, regret_search,
    MixedProfile, NormalFormGame, RegretSearch, StageSolution,
};

/// How each per-state stage game is solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOptions {
    pub tol: f64,
    pub seed: u64,
    pub search: RegretSearch,
    /// at most this many stage equilibria are enumerated for selection
    pub max_candidates: usize,
}

impl Default for StageOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            seed: 0,
            search: RegretSearch::default(),
            max_candidates: 64,
        }
    }
}

impl StageOptions {
    fn seed_for(&self, t: usize, x: usize) -> u64 {
        self.seed ^ (((t as u64) << 32) | x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NashViOptions {
    /// value tolerance; iteration stops at `‖ΔJ‖ ≤ tol·(1−β)`
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// dynamic gap above which a report is flagged
    pub gap_tol: f64,
    /// restarts of the regret-search fallback; 0 disables it
    pub fallback_budget: usize,
    pub stage: StageOptions,
}

impl Default for NashViOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            damping: 0.5,
            gap_tol: 1e-6,
            fallback_budget: 8,
            stage: StageOptions::default(),
        }
    }
}

/// Stage equilibrium closest (profile distance) to `prev`; the first one in
/// enumeration order without a previous profile or on ties.
fn select_equilibrium(
    game: &NormalFormGame,
    prev: Option<&MixedProfile>,
    opts: &StageOptions,
    seed: u64,
) -> Result<StageSolution> {
    let candidates = match game.num_players() {
        2 => bimatrix_equilibria(game, opts.tol, opts.max_candidates),
        _ => pure_equilibria(game, opts.tol, opts.max_candidates),
    };
    if let Some(first) = candidates.first() {
        let Some(prev) = prev else {
            return Ok(first.clone());
        };
        let mut best = first;
        let mut best_d = prev.distance(&first.profile);
        for c in &candidates[1..] {
            let d = prev.distance(&c.profile);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        return Ok(best.clone());
    }
    if let Some(prev) = prev {
        let s = regret_search(game, opts.tol, seed, &opts.search, Some(prev));
        if s.within_tol {
            return Ok(s);
        }
    }
    nplayer_nash(game, opts.tol, seed, opts.search.restarts.max(1))
}

/// Markov perfect equilibrium by backward induction from `J_T = 0`.
pub fn backward_induction_nash(
    g: &FiniteGame,
    horizon: usize,
    opts: &StageOptions,
) -> Result<SolveReport> {
    g.validate()?;
    Horizon::Finite(horizon).validate()?;
    let n = g.num_players();
    let mut next = vec![vec![0.0; g.k]; n];
    let mut values = vec![Vec::new(); horizon];
    let mut stages = vec![StationaryPolicyProfile(Vec::new()); horizon];
    let mut stage_gaps = vec![Vec::new(); horizon];
    let mut all_within = true;
    for t in (0..horizon).rev() {
        let sols: Vec<StageSolution> = (0..g.k)
            .into_par_iter()
            .map(|x| {
                select_equilibrium(
                    &stage_game(g, x, &next, 1.0),
                    None,
                    opts,
                    opts.seed_for(t, x),
                )
            })
            .collect::<Result<_>>()?;
        all_within &= sols.iter().all(|s| s.within_tol);
        let vt: Vec<Vec<f64>> = (0..n)
            .map(|i| sols.iter().map(|s| s.values[i]).collect())
            .collect();
        stage_gaps[t] = sols.iter().map(|s| s.gaps.clone()).collect();
        stages[t] = StationaryPolicyProfile(sols.into_iter().map(|s| s.profile).collect());
        next = vt.clone();
        values[t] = vt;
    }
    let profile = PolicyProfile::Markov(MarkovPolicyProfile(stages));
    let dyn_gaps = dynamic_gaps(g, &profile, Horizon::Finite(horizon))?;
    let bound = opts.tol * horizon as f64 + 1e-9;
    Ok(SolveReport {
        method: SolveMethod::BackwardInduction,
        profile,
        values: ValueTable(values),
        stage_gaps,
        within_tol: all_within && dyn_gaps.iter().all(|&d| d <= bound),
        dynamic_gaps: dyn_gaps,
        iterations: horizon,
        residual: 0.0,
        residual_history: Vec::new(),
        converged: true,
    })
}

/// Stationary perfect equilibrium by damped Nash value iteration.
///
/// The reported values are the iterate at which the final stage games were
/// solved, so they pair with the reported profile. Without convergence the
/// last iterate is returned flagged and, if enabled, handed to
/// [`stationary_regret_search`] as a warm start.
pub fn nash_value_iteration(
    g: &FiniteGame,
    beta: f64,
    opts: &NashViOptions,
) -> Result<SolveReport> {
    g.validate()?;
    check_discount(beta)?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return domain("damping must lie in (0, 1]");
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return domain("value iteration needs a positive tolerance and at least one iteration");
    }
    let n = g.num_players();
    let d = opts.damping;
    let stop = opts.tol * (1.0 - beta);
    let mut j = vec![vec![0.0; g.k]; n];
    let mut prev: Option<Vec<MixedProfile>> = None;
    let mut history = Vec::new();
    let mut sols: Vec<StageSolution> = Vec::new();
    let mut converged = false;
    for it in 0..opts.max_iter {
        sols = (0..g.k)
            .into_par_iter()
            .map(|x| {
                let game = stage_game(g, x, &j, beta);
                select_equilibrium(
                    &game,
                    prev.as_ref().map(|p| &p[x]),
                    &opts.stage,
                    opts.stage.seed_for(it, x),
                )
            })
            .collect::<Result<_>>()?;
        let next: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..g.k)
                    .map(|x| (1.0 - d) * j[i][x] + d * sols[x].values[i])
                    .collect()
            })
            .collect();
        let r = sup_distance(&next, &j);
        history.push(r);
        prev = Some(sols.iter().map(|s| s.profile.clone()).collect());
        if r <= stop {
            converged = true;
            break;
        }
        j = next;
    }
    let profile = StationaryPolicyProfile(sols.iter().map(|s| s.profile.clone()).collect());
    let wrapped = PolicyProfile::Stationary(profile.clone());
    let dyn_gaps = dynamic_gaps(g, &wrapped, Horizon::Discounted(beta))?;
    let report = SolveReport {
        method: SolveMethod::NashValueIteration,
        profile: wrapped,
        values: ValueTable(vec![j]),
        stage_gaps: vec![sols.iter().map(|s| s.gaps.clone()).collect()],
        within_tol: converged && dyn_gaps.iter().all(|&x| x <= opts.gap_tol),
        dynamic_gaps: dyn_gaps,
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(0.0),
        residual_history: history,
        converged,
    };
    if converged || opts.fallback_budget == 0 {
        return Ok(report);
    }
    let search = stationary_regret_search(
        g,
        beta,
        opts.gap_tol,
        opts.fallback_budget,
        opts.stage.seed,
        Some(&profile),
    )?;
    Ok(if search.max_dynamic_gap() < report.max_dynamic_gap() {
        search
    } else {
        report
    })
}

struct Evaluated {
    gap: f64,
    brs: Vec<Vec<usize>>,
}

fn evaluate(g: &FiniteGame, beta: f64, p: &StationaryPolicyProfile) -> Result<Evaluated> {
    let wrapped = PolicyProfile::Stationary(p.clone());
    let h = Horizon::Discounted(beta);
    let own = policy_evaluation(g, &wrapped, h)?;
    let mut gap = f64::NEG_INFINITY;
    let mut brs = Vec::with_capacity(g.num_players());
    for i in 0..g.num_players() {
        let br = best_response_dp(g, i, &wrapped, h)?;
        for (a, b) in own.0[0][i].iter().zip(&br.values[0]) {
            gap = gap.max(a - b);
        }
        brs.push(br.policy[0].clone());
    }
    Ok(Evaluated { gap, brs })
}

/// Moves the mixes of `players` a fraction `eta` toward their best responses.
fn mix_toward(
    g: &FiniteGame,
    p: &StationaryPolicyProfile,
    brs: &[Vec<usize>],
    players: &[usize],
    eta: f64,
) -> StationaryPolicyProfile {
    let mut q = p.clone();
    for (x, mp) in q.0.iter_mut().enumerate() {
        for &i in players {
            for (k, v) in mp.0[i].iter_mut().enumerate() {
                let target = if k == brs[i][x] { 1.0 } else { 0.0 };
                *v = (1.0 - eta) * *v + eta * target;
            }
            crate::quantize::normalize_exact(&mut mp.0[i]);
        }
        debug_assert!(mp.validate(&g.action_counts).is_ok());
    }
    q
}

const STEPS: [f64; 6] = [1.0, 0.5, 0.25, 0.1, 0.05, 0.01];

/// Seeded multi-start local search over stationary profiles minimizing the
/// largest dynamic best-response gap, each evaluated exactly.
///
/// Starts are `warm` (if any), the uniform profile, then random profiles, for
/// `budget` starts in total. The best profile seen is returned, so a warm
/// start is never made worse.
pub fn stationary_regret_search(
    g: &FiniteGame,
    beta: f64,
    tol: f64,
    budget: usize,
    seed: u64,
    warm: Option<&StationaryPolicyProfile>,
) -> Result<SolveReport> {
    g.validate()?;
    check_discount(beta)?;
    if budget == 0 {
        return domain("budget must be at least 1");
    }
    if let Some(w) = warm {
        PolicyProfile::Stationary(w.clone()).validate(g, Horizon::Discounted(beta))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.num_players();
    let all: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, StationaryPolicyProfile)> = None;
    let mut evaluations = 0;
    for r in 0..budget {
        let mut p = match (r, warm) {
            (0, Some(w)) => w.clone(),
            (0, None) | (1, Some(_)) => StationaryPolicyProfile::uniform(g.k, &g.action_counts),
            _ => StationaryPolicyProfile(
                (0..g.k)
                    .map(|_| {
                        MixedProfile(
                            g.action_counts
                                .iter()
                                .map(|&m| random_simplex_point(&mut rng, m))
                                .collect(),
                        )
                    })
                    .collect(),
            ),
        };
        let mut cur = evaluate(g, beta, &p)?;
        evaluations += 1;
        for _ in 0..200 {
            if cur.gap <= tol {
                break;
            }
            let mut moved = false;
            'steps: for &eta in &STEPS {
                let groups = std::iter::once(all.clone()).chain((0..n).map(|i| vec![i]));
                for players in groups.take(if n == 1 { 1 } else { n + 1 }) {
                    let q = mix_toward(g, &p, &cur.brs, &players, eta);
                    let e = evaluate(g, beta, &q)?;
                    evaluations += 1;
                    if e.gap < cur.gap {
                        p = q;
                        cur = e;
                        moved = true;
                        break 'steps;
                    }
                }
            }
            if !moved {
                break;
            }
        }
        if best.as_ref().is_none_or(|(bg, _)| cur.gap < *bg) {
            best = Some((cur.gap, p));
        }
        if best.as_ref().is_some_and(|(bg, _)| *bg <= tol) {
            break;
        }
    }
    let (_, profile) = best.expect("at least one start");
    let wrapped = PolicyProfile::Stationary(profile.clone());
    let h = Horizon::Discounted(beta);
    let values = policy_evaluation(g, &wrapped, h)?;
    let dyn_gaps = dynamic_gaps(g, &wrapped, h)?;
    let mut residual: f64 = 0.0;
    for i in 0..n {
        let tj = best_response_operator(g, i, &profile, beta, &values.0[0][i])?;
        for (a, b) in tj.iter().zip(&values.0[0][i]) {
            residual = residual.max((a - b).abs());
        }
    }
    let stage_gaps = (0..g.k)
        .map(|x| best_response_gap(&stage_game(g, x, &values.0[0], beta), &profile.0[x]))
        .collect::<Result<Vec<_>>>()?;
    let within = dyn_gaps.iter().all(|&x| x <= tol);
    Ok(SolveReport {
        method: SolveMethod::RegretSearch,
        profile: wrapped,
        values,
        stage_gaps: vec![stage_gaps],
        dynamic_gaps: dyn_gaps,
        iterations: evaluations,
        residual,
        residual_history: Vec::new(),
        converged: within,
        within_tol: within,
    })
}
