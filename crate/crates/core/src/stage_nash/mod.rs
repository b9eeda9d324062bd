//! Equilibria of one-shot normal-form games in which every player minimizes
//! its own cost.
//!
//! * [`matrix_game_value`]: exact value and optimal mixes of a zero-sum matrix
//!   game via linear programming.
//! * [`bimatrix_nash`]: support enumeration for two players.
//! * [`nplayer_nash`]: pure enumeration, then the two-player path, then a
//!   seeded multi-start projected-gradient search on the total gap.

mod simplex;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quantize::{decode_joint, normalize_exact, random_simplex_point};

/// Finite game in normal form; `costs[i][joint]` with player 0 most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFormGame {
    pub action_counts: Vec<usize>,
    pub costs: Vec<Vec<f64>>,
}

impl NormalFormGame {
    pub fn new(action_counts: Vec<usize>, costs: Vec<Vec<f64>>) -> Result<Self> {
        let nj: usize = action_counts.iter().product();
        if action_counts.is_empty() || nj == 0 {
            return domain("normal-form game needs players with nonempty action sets");
        }
        if costs.len() != action_counts.len() || costs.iter().any(|c| c.len() != nj) {
            return domain("cost tensors do not match the action counts");
        }
        if costs.iter().flatten().any(|c| !c.is_finite()) {
            return domain("cost entries must be finite");
        }
        Ok(Self {
            action_counts,
            costs,
        })
    }

    /// Two-player game from row-player and column-player cost matrices.
    pub fn bimatrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        let (m, n) = shape(a)?;
        if shape(b)? != (m, n) {
            return domain("bimatrix cost matrices differ in shape");
        }
        Self::new(vec![m, n], vec![a.concat(), b.concat()])
    }

    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn num_joint(&self) -> usize {
        self.action_counts.iter().product()
    }
}

fn shape(m: &[Vec<f64>]) -> Result<(usize, usize)> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || m.iter().any(|r| r.len() != cols) {
        return domain("matrix must be nonempty and rectangular");
    }
    Ok((rows, cols))
}

/// One probability vector per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixedProfile(pub Vec<Vec<f64>>);

impl MixedProfile {
    pub fn uniform(counts: &[usize]) -> Self {
        MixedProfile(counts.iter().map(|&m| vec![1.0 / m as f64; m]).collect())
    }

    pub fn pure(counts: &[usize], actions: &[usize]) -> Self {
        MixedProfile(
            counts
                .iter()
                .zip(actions)
                .map(|(&m, &k)| (0..m).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn validate(&self, counts: &[usize]) -> Result<()> {
        if self.0.len() != counts.len() {
            return domain("profile has the wrong number of players");
        }
        for (i, (v, &m)) in self.0.iter().zip(counts).enumerate() {
            if v.len() != m {
                return domain(format!(
                    "mix of player {i} has {} entries, expected {m}",
                    v.len()
                ));
            }
            if v.iter().any(|&p| !(p >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return domain(format!("mix of player {i} is not a probability vector"));
            }
        }
        Ok(())
    }

    /// Sum over players of the L1 distance between mixes.
    pub fn distance(&self, other: &MixedProfile) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageMethod {
    PureEnum,
    SupportEnum,
    LpMinimax,
    RegretSearch,
}

/// A profile with its expected costs and exact best-response gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSolution {
    pub profile: MixedProfile,
    pub values: Vec<f64>,
    pub gaps: Vec<f64>,
    pub method: StageMethod,
    /// `max gap ≤ tol` for the tolerance the solver was asked for
    pub within_tol: bool,
}

impl StageSolution {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }

    pub(crate) fn certify(
        g: &NormalFormGame,
        profile: MixedProfile,
        method: StageMethod,
        tol: f64,
    ) -> Self {
        let dev = deviation_costs(g, &profile);
        let values: Vec<f64> = dev.iter().zip(&profile.0).map(|(d, s)| dot(d, s)).collect();
        let gaps: Vec<f64> = dev
            .iter()
            .zip(&values)
            .map(|(d, v)| v - min_of(d))
            .collect();
        let within_tol = gaps.iter().all(|&gap| gap <= tol);
        Self {
            profile,
            values,
            gaps,
            method,
            within_tol,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `out[i][k] = E[u^i | player i plays k, others follow the profile]`.
pub fn deviation_costs(g: &NormalFormGame, profile: &MixedProfile) -> Vec<Vec<f64>> {
    let n = g.num_players();
    let mut out: Vec<Vec<f64>> = g.action_counts.iter().map(|&m| vec![0.0; m]).collect();
    for joint in 0..g.num_joint() {
        let idx = decode_joint(joint, &g.action_counts);
        for i in 0..n {
            let mut w = 1.0;
            for (j, &aj) in idx.iter().enumerate() {
                if j != i {
                    w *= profile.0[j][aj];
                }
            }
            if w != 0.0 {
                out[i][idx[i]] += w * g.costs[i][joint];
            }
        }
    }
    out
}

/// Per-player gap `E[u^i] − min_k E[u^i | i deviates to k]`.
pub fn best_response_gap(g: &NormalFormGame, profile: &MixedProfile) -> Result<Vec<f64>> {
    profile.validate(&g.action_counts)?;
    let dev = deviation_costs(g, profile);
    Ok(dev
        .iter()
        .zip(&profile.0)
        .map(|(d, s)| dot(d, s) - min_of(d))
        .collect())
}

/// Value of a zero-sum matrix game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGameValue {
    pub value: f64,
    /// optimal mix of the minimizing row player
    pub row_mix: Vec<f64>,
    /// optimal mix of the maximizing column player
    pub col_mix: Vec<f64>,
}

/// `min_μ max_ν μᵀ M ν` with optimal strategies (row player minimizes).
pub fn matrix_game_value(m: &[Vec<f64>]) -> Result<MatrixGameValue> {
    let (rows, cols) = shape(m)?;
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return domain("matrix entries must be finite");
    }
    let lo = m.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - lo;
    // constraint per column: Σ_i (M_ij + shift) u_i ≤ 1
    let a: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| m[i][j] + shift).collect())
        .collect();
    let sol = simplex::solve_packing(&a);
    let total: f64 = sol.primal.iter().sum();
    let mut row_mix: Vec<f64> = sol.primal.iter().map(|u| u.max(0.0)).collect();
    let mut col_mix = sol.dual;
    normalize_exact(&mut row_mix);
    normalize_exact(&mut col_mix);
    Ok(MatrixGameValue {
        value: 1.0 / total - shift,
        row_mix,
        col_mix,
    })
}

const LINEAR_RESIDUAL: f64 = 1e-9;

/// First mixed Nash equilibrium in support-enumeration order.
///
/// Support pairs are visited by increasing total size, then lexicographically
/// (row support first). A pair is accepted once the exact gaps of the
/// candidate are all at most `tol`. If no support pair yields an equilibrium
/// (possible for degenerate games) the projected-gradient search is used and
/// the result is flagged through `within_tol`.
pub fn bimatrix_nash(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> Result<StageSolution> {
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let g = NormalFormGame::bimatrix(a, b)?;
    if let Some(s) = support_enumeration(&g, tol, 1).into_iter().next() {
        return Ok(s);
    }
    Ok(regret_search(&g, tol, 0, &RegretSearch::default(), None))
}

/// Up to `limit` distinct equilibria of a bimatrix game, in enumeration order.
pub fn bimatrix_equilibria(g: &NormalFormGame, tol: f64, limit: usize) -> Vec<StageSolution> {
    support_enumeration(g, tol, limit)
}

fn support_enumeration(g: &NormalFormGame, tol: f64, limit: usize) -> Vec<StageSolution> {
    let (m, n) = (g.action_counts[0], g.action_counts[1]);
    let a = |i: usize, j: usize| g.costs[0][i * n + j];
    let b = |i: usize, j: usize| g.costs[1][i * n + j];
    let mut found: Vec<StageSolution> = Vec::new();
    for total in 2..=m + n {
        for rs in total.saturating_sub(n).max(1)..=m.min(total - 1) {
            let cs = total - rs;
            for rows in subsets(m, rs) {
                for cols in subsets(n, cs) {
                    // column mix makes the row player indifferent on `rows`
                    let Some(y) = indifference(&rows, &cols, |i, j| a(i, j)) else {
                        continue;
                    };
                    let Some(x) = indifference(&cols, &rows, |j, i| b(i, j)) else {
                        continue;
                    };
                    let mut xm = vec![0.0; m];
                    let mut ym = vec![0.0; n];
                    for (&i, &v) in rows.iter().zip(&x) {
                        xm[i] = v;
                    }
                    for (&j, &v) in cols.iter().zip(&y) {
                        ym[j] = v;
                    }
                    let sol = StageSolution::certify(
                        g,
                        MixedProfile(vec![xm, ym]),
                        StageMethod::SupportEnum,
                        tol,
                    );
                    if !sol.within_tol {
                        continue;
                    }
                    if found
                        .iter()
                        .any(|f| f.profile.distance(&sol.profile) < 1e-9)
                    {
                        continue;
                    }
                    found.push(sol);
                    if found.len() >= limit {
                        return found;
                    }
                }
            }
        }
    }
    found
}

/// Mix over `support` (size s) making the opponent indifferent across `indiff`:
/// `Σ_{j∈support} cost(i, j) y_j = v` for all `i ∈ indiff`, `Σ y = 1`, `y ≥ 0`.
fn indifference(
    indiff: &[usize],
    support: &[usize],
    cost: impl Fn(usize, usize) -> f64,
) -> Option<Vec<f64>> {
    let (r, s) = (indiff.len(), support.len());
    if s == 1 {
        return Some(vec![1.0]);
    }
    let mut mat = DMatrix::<f64>::zeros(r + 1, s + 1);
    let mut rhs = DVector::<f64>::zeros(r + 1);
    for (ri, &i) in indiff.iter().enumerate() {
        for (cj, &j) in support.iter().enumerate() {
            mat[(ri, cj)] = cost(i, j);
        }
        mat[(ri, s)] = -1.0;
    }
    for cj in 0..s {
        mat[(r, cj)] = 1.0;
    }
    rhs[r] = 1.0;
    let sol = mat.clone().svd(true, true).solve(&rhs, 1e-13).ok()?;
    if (&mat * &sol - &rhs).amax() > LINEAR_RESIDUAL {
        return None;
    }
    let mut y: Vec<f64> = sol.iter().take(s).copied().collect();
    if y.iter().any(|&v| v < -1e-12) {
        return None;
    }
    for v in y.iter_mut() {
        *v = v.max(0.0);
    }
    normalize_exact(&mut y);
    Some(y)
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Hyperparameters of the projected-gradient gap search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretSearch {
    pub step: f64,
    pub restarts: usize,
    pub iterations: usize,
}

impl Default for RegretSearch {
    fn default() -> Self {
        Self {
            step: 0.1,
            restarts: 32,
            iterations: 400,
        }
    }
}

/// Equilibrium of an N-player game: pure enumeration, then support
/// enumeration for two players, then seeded gap search with `budget` restarts.
///
/// The returned gaps are always recomputed exactly; a profile whose gap
/// exceeds `tol` is returned with `within_tol = false`.
pub fn nplayer_nash(
    g: &NormalFormGame,
    tol: f64,
    seed: u64,
    budget: usize,
) -> Result<StageSolution> {
    if budget == 0 {
        return domain("budget must be at least 1");
    }
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    if let Some(s) = pure_equilibrium(g, tol) {
        return Ok(s);
    }
    if g.num_players() == 2 {
        if let Some(s) = support_enumeration(g, tol, 1).into_iter().next() {
            return Ok(s);
        }
    }
    let opts = RegretSearch {
        restarts: budget,
        ..RegretSearch::default()
    };
    Ok(regret_search(g, tol, seed, &opts, None))
}

/// First pure profile (lexicographic) whose gaps are all within `tol`.
pub fn pure_equilibrium(g: &NormalFormGame, tol: f64) -> Option<StageSolution> {
    pure_equilibria(g, tol, 1).into_iter().next()
}

/// Up to `limit` pure profiles whose gaps are all within `tol`, in
/// lexicographic order of the joint action.
pub fn pure_equilibria(g: &NormalFormGame, tol: f64, limit: usize) -> Vec<StageSolution> {
    let n = g.num_players();
    let mut strides = vec![1; n];
    for i in (0..n.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * g.action_counts[i + 1];
    }
    let mut out = Vec::new();
    'outer: for joint in 0..g.num_joint() {
        let idx = decode_joint(joint, &g.action_counts);
        for i in 0..n {
            let base = joint - idx[i] * strides[i];
            let own = g.costs[i][joint];
            for k in 0..g.action_counts[i] {
                if own - g.costs[i][base + k * strides[i]] > tol {
                    continue 'outer;
                }
            }
        }
        let profile = MixedProfile::pure(&g.action_counts, &idx);
        out.push(StageSolution::certify(
            g,
            profile,
            StageMethod::PureEnum,
            tol,
        ));
        if out.len() >= limit {
            break;
        }
    }
    out
}

/// Multi-start projected (sub)gradient descent on `Σ_i gap_i` over the
/// product of simplices. The first start is `warm` (if given), then uniform,
/// then seeded random interior points.
pub fn regret_search(
    g: &NormalFormGame,
    tol: f64,
    seed: u64,
    opts: &RegretSearch,
    warm: Option<&MixedProfile>,
) -> StageSolution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, MixedProfile)> = None;
    for r in 0..opts.restarts.max(1) {
        let start = match (r, warm) {
            (0, Some(w)) => w.clone(),
            (0, None) | (1, Some(_)) => MixedProfile::uniform(&g.action_counts),
            _ => MixedProfile(
                g.action_counts
                    .iter()
                    .map(|&m| random_simplex_point(&mut rng, m))
                    .collect(),
            ),
        };
        let (f, p) = descend(g, start, opts, tol);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, p));
        }
        if f <= tol {
            break;
        }
    }
    let (_, p) = best.expect("at least one restart");
    StageSolution::certify(g, p, StageMethod::RegretSearch, tol)
}

fn total_gap(g: &NormalFormGame, p: &MixedProfile) -> (f64, f64) {
    let dev = deviation_costs(g, p);
    let gaps: Vec<f64> = dev
        .iter()
        .zip(&p.0)
        .map(|(d, s)| dot(d, s) - min_of(d))
        .collect();
    (gaps.iter().sum(), gaps.iter().copied().fold(0.0, f64::max))
}

fn descend(
    g: &NormalFormGame,
    mut p: MixedProfile,
    opts: &RegretSearch,
    tol: f64,
) -> (f64, MixedProfile) {
    let (mut f, mut fmax) = total_gap(g, &p);
    let mut step = opts.step;
    for _ in 0..opts.iterations {
        if fmax <= tol || step < 1e-12 {
            break;
        }
        let grad = gap_gradient(g, &p);
        let cand = MixedProfile(
            p.0.iter()
                .zip(&grad)
                .map(|(s, gr)| {
                    project_simplex(
                        &s.iter()
                            .zip(gr)
                            .map(|(x, d)| x - step * d)
                            .collect::<Vec<_>>(),
                    )
                })
                .collect(),
        );
        let (cf, cmax) = total_gap(g, &cand);
        if cf < f {
            p = cand;
            f = cf;
            fmax = cmax;
            step = (step * 1.5).min(1.0);
        } else {
            step *= 0.5;
        }
    }
    (fmax, p)
}

/// Subgradient of `Σ_i gap_i` with respect to every player's mix.
fn gap_gradient(g: &NormalFormGame, p: &MixedProfile) -> Vec<Vec<f64>> {
    let n = g.num_players();
    let dev = deviation_costs(g, p);
    let best: Vec<usize> = dev
        .iter()
        .map(|d| {
            d.iter()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc },
                )
                .0
        })
        .collect();
    let mut grad: Vec<Vec<f64>> = g.action_counts.iter().map(|&m| vec![0.0; m]).collect();
    for joint in 0..g.num_joint() {
        let idx = decode_joint(joint, &g.action_counts);
        for i in 0..n {
            let u = g.costs[i][joint];
            for j in 0..n {
                // ∂E[u^i]/∂σ_j(a_j): weight excludes player j
                let w: f64 = (0..n).filter(|&l| l != j).map(|l| p.0[l][idx[l]]).product();
                grad[j][idx[j]] += w * u;
                if j != i && idx[i] == best[i] {
                    // minus ∂ min_k E[u^i | k]/∂σ_j(a_j) at the minimizing k
                    let w2: f64 = (0..n)
                        .filter(|&l| l != j && l != i)
                        .map(|l| p.0[l][idx[l]])
                        .product();
                    grad[j][idx[j]] -= w2 * u;
                }
            }
        }
    }
    grad
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    normalize_exact(&mut out);
    out
}
