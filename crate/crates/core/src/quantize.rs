//! Finite state-action approximation of a continuous game.
//!
//! A uniform grid with cell side at most `2δ` is a δ-net in the Chebyshev
//! metric. Its cells partition the state space; `ν_δ^j` is normalized
//! Lebesgue measure on cell `j`, realized by the cell's quadrature nodes. The
//! finite game averages costs and pushed-forward kernel masses against these
//! measures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{
    chebyshev, ActionSpace, AxisBox, ContinuousGame, Horizon, JointAction, Quadrature,
    QuadratureRule,
};

/// Size limits applied before allocating nets and tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub max_states: usize,
    /// Cap on `states × joint actions × states` transition entries.
    pub max_tensor_entries: u128,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_states: 200_000,
            max_tensor_entries: 2_000_000,
        }
    }
}

/// Quadrature used for cell averages (`ν_δ^j`) and for kernel masses of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub cell: QuadratureRule,
    pub kernel: QuadratureRule,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            cell: QuadratureRule::midpoint(8),
            kernel: QuadratureRule::gauss_legendre(16),
        }
    }
}

/// Uniform tensor grid over a bounded box, row-major with the last dimension fastest.
#[derive(Debug, Clone, PartialEq)]
struct Grid {
    space: AxisBox,
    counts: Vec<usize>,
    side: Vec<f64>,
}

impl Grid {
    fn new(space: &AxisBox, delta: f64, cap: usize, what: &str) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return domain(format!("net spacing must be positive, got {delta}"));
        }
        if !space.is_bounded() {
            return domain(format!("{what} net requires a bounded box"));
        }
        let counts: Vec<usize> = space
            .widths()
            .iter()
            .map(|w| ((w / (2.0 * delta)) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
            .collect();
        Self::with_counts(space, counts, cap, &format!("{what} net at delta={delta}"))
    }

    fn with_counts(space: &AxisBox, counts: Vec<usize>, cap: usize, what: &str) -> Result<Self> {
        let total: u128 = counts.iter().map(|&c| c as u128).product();
        if total > cap as u128 {
            return Err(Error::Resource {
                what: what.to_string(),
                needed: total,
                cap: cap as u128,
            });
        }
        let side = space
            .widths()
            .iter()
            .zip(&counts)
            .map(|(w, &c)| w / c as f64)
            .collect();
        Ok(Self {
            space: space.clone(),
            counts,
            side,
        })
    }

    fn len(&self) -> usize {
        self.counts.iter().product()
    }

    fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.counts.len()];
        for d in (0..self.counts.len()).rev() {
            idx[d] = flat % self.counts[d];
            flat /= self.counts[d];
        }
        idx
    }

    fn center(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.space.lower[d] + (i as f64 + 0.5) * self.side[d])
            .collect()
    }

    fn cell(&self, flat: usize) -> AxisBox {
        let idx = self.unflatten(flat);
        let mut lower = Vec::with_capacity(idx.len());
        let mut upper = Vec::with_capacity(idx.len());
        for (d, &i) in idx.iter().enumerate() {
            lower.push(self.space.lower[d] + i as f64 * self.side[d]);
            upper.push(if i + 1 == self.counts[d] {
                self.space.upper[d]
            } else {
                self.space.lower[d] + (i + 1) as f64 * self.side[d]
            });
        }
        AxisBox { lower, upper }
    }

    /// Per-dimension nearest center; a point on a cell boundary goes to the lower index.
    fn locate(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for (d, &v) in x.iter().enumerate() {
            let t = (v - self.space.lower[d]) / self.side[d];
            let i = (t.ceil() - 1.0).clamp(0.0, (self.counts[d] - 1) as f64) as usize;
            flat = flat * self.counts[d] + i;
        }
        flat
    }
}

/// δ-net of the state space with its induced partition into cells.
#[derive(Debug, Clone, PartialEq)]
pub struct StateNet {
    pub delta: f64,
    pub points: Vec<Vec<f64>>,
    pub cells: Vec<AxisBox>,
    grid: Grid,
}

impl StateNet {
    /// Uniform grid with `Π_d ceil(width_d / 2δ)` cells, representatives at cell centers.
    pub fn build(space: &AxisBox, delta: f64, max_states: usize) -> Result<Self> {
        Ok(Self::from_grid(
            delta,
            Grid::new(space, delta, max_states, "state")?,
        ))
    }

    /// Splits every cell into `factor` pieces per dimension, so each new cell
    /// lies inside one old cell; the result is a `(δ/factor)`-net.
    pub fn subdivide(&self, factor: usize, max_states: usize) -> Result<Self> {
        if factor == 0 {
            return domain("subdivision factor must be at least 1");
        }
        let counts = self.grid.counts.iter().map(|c| c * factor).collect();
        let delta = self.delta / factor as f64;
        let what = format!("state net at delta={delta}");
        Ok(Self::from_grid(
            delta,
            Grid::with_counts(&self.grid.space, counts, max_states, &what)?,
        ))
    }

    fn from_grid(delta: f64, grid: Grid) -> Self {
        let n = grid.len();
        Self {
            delta,
            points: (0..n).map(|j| grid.center(j)).collect(),
            cells: (0..n).map(|j| grid.cell(j)).collect(),
            grid,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn space(&self) -> &AxisBox {
        &self.grid.space
    }

    pub fn counts(&self) -> &[usize] {
        &self.grid.counts
    }

    /// `Q_δ(x)`: index of the nearest net point.
    ///
    /// Among Chebyshev-nearest points the Euclidean-nearest one is chosen, and
    /// remaining ties go to the smallest index. On the uniform grid this is the
    /// per-dimension nearest center, i.e. cell membership with boundaries
    /// assigned to the lower cell.
    pub fn nearest_state(&self, x: &[f64]) -> Result<usize> {
        if !self.grid.space.contains(x) {
            return domain(format!("state {x:?} outside the quantized box"));
        }
        Ok(self.grid.locate(x))
    }
}

/// Per-player δ-nets of the action spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionNet {
    pub deltas: Vec<f64>,
    pub points: Vec<Vec<Vec<f64>>>,
}

impl ActionNet {
    /// Grid-center nets for box action spaces; finite action sets are kept as is.
    pub fn build(spaces: &[ActionSpace], delta: f64, max_points: usize) -> Result<Self> {
        let mut points = Vec::with_capacity(spaces.len());
        for space in spaces {
            points.push(match space {
                ActionSpace::Finite(pts) => pts.clone(),
                ActionSpace::Continuous(b) => {
                    let g = Grid::new(b, delta, max_points, "action")?;
                    (0..g.len()).map(|j| g.center(j)).collect()
                }
            });
        }
        Ok(Self {
            deltas: vec![delta; spaces.len()],
            points,
        })
    }

    /// `prefix` points first, followed by the points of `extra` not already present.
    pub fn union(prefix: &ActionNet, extra: &ActionNet) -> Self {
        let points = prefix
            .points
            .iter()
            .zip(&extra.points)
            .map(|(p, e)| {
                let mut all = p.clone();
                for q in e {
                    if !all.iter().any(|r| chebyshev(r, q) <= 1e-12) {
                        all.push(q.clone());
                    }
                }
                all
            })
            .collect();
        let deltas = prefix
            .deltas
            .iter()
            .zip(&extra.deltas)
            .map(|(a, b)| a.min(*b))
            .collect();
        Self { deltas, points }
    }

    pub fn num_players(&self) -> usize {
        self.points.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.points.iter().map(Vec::len).collect()
    }

    pub fn num_joint(&self) -> usize {
        self.points.iter().map(Vec::len).product()
    }

    /// `Q_{i,δ}(a)`: nearest net point of player `player`, same tie rule as states.
    pub fn nearest_action(&self, player: usize, a: &[f64]) -> Result<usize> {
        let pts = self
            .points
            .get(player)
            .ok_or_else(|| Error::Domain(format!("player index {player} out of range")))?;
        if pts.first().is_some_and(|p| p.len() != a.len()) {
            return domain("action dimension mismatch");
        }
        let key = |p: &Vec<f64>| {
            let e: f64 = p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
            (chebyshev(p, a), e)
        };
        let mut best = 0;
        let mut best_key = key(&pts[0]);
        for (j, p) in pts.iter().enumerate().skip(1) {
            let k = key(p);
            if k.0 < best_key.0 || (k.0 == best_key.0 && k.1 < best_key.1) {
                best = j;
                best_key = k;
            }
        }
        Ok(best)
    }

    pub fn joint_action(&self, joint: usize) -> JointAction {
        let idx = decode_joint(joint, &self.counts());
        JointAction(
            idx.iter()
                .enumerate()
                .map(|(i, &k)| self.points[i][k].clone())
                .collect(),
        )
    }

    pub fn joint_actions(&self) -> Vec<JointAction> {
        (0..self.num_joint())
            .map(|j| self.joint_action(j))
            .collect()
    }
}

/// Joint index → per-player action indices (player 0 most significant).
pub fn decode_joint(mut joint: usize, counts: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; counts.len()];
    for i in (0..counts.len()).rev() {
        idx[i] = joint % counts[i];
        joint /= counts[i];
    }
    idx
}

pub fn encode_joint(idx: &[usize], counts: &[usize]) -> usize {
    idx.iter().zip(counts).fold(0, |acc, (&k, &c)| acc * c + k)
}

/// Where a finite game came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub delta: f64,
    pub cell_rule: Option<QuadratureRule>,
    pub kernel_rule: Option<QuadratureRule>,
    /// max over rows of `|Σ_l p(S_l | ·) − 1|` before renormalization
    pub max_row_defect: f64,
    /// index of the pseudo-state of a truncated model, if any
    pub pseudo_state: Option<usize>,
}

/// Finite N-player stochastic game.
///
/// `costs[i][x][a]` is player `i`'s stage cost; `transitions[x][a][y]` is a
/// probability vector over next states. Joint actions are row-major with
/// player 0 most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteGame {
    pub k: usize,
    pub action_counts: Vec<usize>,
    pub costs: Vec<Vec<Vec<f64>>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub beta_or_t: Horizon,
    pub cost_bound: f64,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct FiniteGameDoc {
    k: usize,
    action_counts: Vec<usize>,
    costs: Vec<Vec<Vec<f64>>>,
    transitions: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "beta_or_T")]
    beta_or_t: Horizon,
    cost_bound: f64,
    provenance: Provenance,
}

impl FiniteGame {
    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn num_joint(&self) -> usize {
        self.action_counts.iter().product()
    }

    pub fn decode(&self, joint: usize) -> Vec<usize> {
        decode_joint(joint, &self.action_counts)
    }

    pub fn encode(&self, idx: &[usize]) -> usize {
        encode_joint(idx, &self.action_counts)
    }

    pub fn discount(&self) -> Option<f64> {
        match self.beta_or_t {
            Horizon::Discounted(b) => Some(b),
            Horizon::Finite(_) => None,
        }
    }

    /// Shape, stochasticity and cost-bound checks.
    pub fn validate(&self) -> Result<()> {
        let nj = self.num_joint();
        if self.k == 0 || nj == 0 {
            return domain("finite game needs at least one state and one joint action");
        }
        if self.costs.len() != self.num_players()
            || self
                .costs
                .iter()
                .any(|c| c.len() != self.k || c.iter().any(|r| r.len() != nj))
        {
            return domain("cost tensor shape mismatch");
        }
        if self.transitions.len() != self.k {
            return domain("transition tensor shape mismatch");
        }
        for (x, rows) in self.transitions.iter().enumerate() {
            if rows.len() != nj {
                return domain("transition tensor shape mismatch");
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != self.k || row.iter().any(|&p| !(p >= 0.0)) {
                    return domain(format!(
                        "transition row ({x},{a}) is not a probability vector"
                    ));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return domain(format!("transition row ({x},{a}) sums to {s}"));
                }
            }
        }
        let slack = 1e-9 * self.cost_bound.max(1.0);
        if self
            .costs
            .iter()
            .flatten()
            .flatten()
            .any(|c| !c.is_finite() || c.abs() > self.cost_bound + slack)
        {
            return domain("cost entry exceeds the declared bound");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = FiniteGameDoc {
            k: self.k,
            action_counts: self.action_counts.clone(),
            costs: self.costs.clone(),
            transitions: self.transitions.clone(),
            beta_or_t: self.beta_or_t,
            cost_bound: self.cost_bound,
            provenance: self.provenance.clone(),
        };
        crate::json::to_string(&doc).expect("finite game serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: FiniteGameDoc = serde_json::from_str(s)
            .map_err(|e| Error::Config(format!("bad finite game document: {e}")))?;
        let g = FiniteGame {
            k: d.k,
            action_counts: d.action_counts,
            costs: d.costs,
            transitions: d.transitions,
            beta_or_t: d.beta_or_t,
            cost_bound: d.cost_bound,
            provenance: d.provenance,
        };
        g.validate()?;
        Ok(g)
    }

    /// Random game with costs uniform in `[-1, 1]` and random stochastic rows.
    pub fn random(rng: &mut impl Rng, k: usize, action_counts: &[usize], horizon: Horizon) -> Self {
        let nj: usize = action_counts.iter().product();
        let costs = (0..action_counts.len())
            .map(|_| {
                (0..k)
                    .map(|_| (0..nj).map(|_| rng.random_range(-1.0..=1.0)).collect())
                    .collect()
            })
            .collect();
        let transitions = (0..k)
            .map(|_| (0..nj).map(|_| random_simplex_point(rng, k)).collect())
            .collect();
        FiniteGame {
            k,
            action_counts: action_counts.to_vec(),
            costs,
            transitions,
            beta_or_t: horizon,
            cost_bound: 1.0,
            provenance: Provenance {
                source: "random".into(),
                delta: 0.0,
                cell_rule: None,
                kernel_rule: None,
                max_row_defect: 0.0,
                pseudo_state: None,
            },
        }
    }
}

/// Random point of the probability simplex, renormalized to sum exactly to one.
pub(crate) fn random_simplex_point(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    let mut v: Vec<f64> = raw.iter().map(|r| r / s).collect();
    normalize_exact(&mut v);
    v
}

/// Scale to unit sum, then correct the last positive entry until the
/// left-to-right sum is exactly one.
pub(crate) fn normalize_exact(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    for p in v.iter_mut() {
        *p /= s;
    }
    // later zeros add exactly, so only the final rounding step matters
    let Some(last) = v.iter().rposition(|&p| p > 0.0) else {
        return;
    };
    // the sum is monotone in v[last]; bisect between values giving < 1 and > 1
    let (mut lo, mut hi) = (
        (v[last] - 4.0 * f64::EPSILON).max(0.0),
        v[last] + 4.0 * f64::EPSILON,
    );
    for _ in 0..128 {
        let s: f64 = v.iter().sum();
        if s == 1.0 {
            return;
        }
        if s < 1.0 {
            lo = v[last];
        } else {
            hi = v[last];
        }
        let mid = lo + (hi - lo) / 2.0;
        if mid == lo || mid == hi {
            return;
        }
        v[last] = mid;
    }
}

/// A partition of the state domain into cells, each with its averaging
/// measure, together with the model's costs and cell-wise pushforward kernel.
///
/// Implemented by [`Quantization`] (compact state spaces) and by the
/// truncated models of [`crate::truncate`], whose pseudo-state is one extra
/// cell.
pub trait CellModel: Sync {
    fn num_players(&self) -> usize;
    fn num_cells(&self) -> usize;
    /// Net of the compact part of the domain; its cells come first.
    fn state_net(&self) -> &StateNet;
    fn action_net(&self) -> &ActionNet;
    fn joint_actions(&self) -> &[JointAction];
    /// Nodes and normalized weights of the averaging measure of `cell`.
    fn cell_nodes(&self, cell: usize) -> &[(Vec<f64>, f64)];
    fn stage_cost(&self, player: usize, x: &[f64], a: &JointAction) -> f64;
    /// `out[l] = p(S_l | x, a)` for every cell `l`.
    fn pushforward(&self, x: &[f64], a: &JointAction, out: &mut [f64]);
    /// Cell of an arbitrary point of the domain.
    fn locate(&self, x: &[f64]) -> Result<usize>;
    /// Net point of `cell`, or `None` for a pseudo-state.
    fn representative(&self, cell: usize) -> Option<&[f64]>;
    /// Bounded box from which sample states are drawn.
    fn sampling_box(&self) -> &AxisBox;
    fn action_spaces(&self) -> &[ActionSpace];
    fn horizon(&self) -> Horizon;
    fn cost_bound(&self) -> f64;
    fn caps(&self) -> Caps;
    fn provenance(&self) -> Provenance;
}

/// A compact game together with its state and action nets.
#[derive(Clone)]
pub struct Quantization<'g> {
    pub game: &'g ContinuousGame,
    pub snet: StateNet,
    pub anet: ActionNet,
    pub quad: QuadConfig,
    pub caps: Caps,
    joint: Vec<JointAction>,
    nodes: Vec<Vec<(Vec<f64>, f64)>>,
    dest: Vec<Quadrature>,
}

impl<'g> Quantization<'g> {
    /// Nets with spacing `delta` for both states and actions.
    pub fn new(game: &'g ContinuousGame, delta: f64, quad: QuadConfig, caps: Caps) -> Result<Self> {
        let snet = StateNet::build(&game.state_space, delta, caps.max_states)?;
        let anet = ActionNet::build(&game.action_spaces, delta, caps.max_states)?;
        Self::with_nets(game, snet, anet, quad, caps)
    }

    pub fn with_nets(
        game: &'g ContinuousGame,
        snet: StateNet,
        anet: ActionNet,
        quad: QuadConfig,
        caps: Caps,
    ) -> Result<Self> {
        if snet.space() != &game.state_space {
            return domain("state net was not built for this game's state space");
        }
        if anet.num_players() != game.num_players {
            return domain("action net has the wrong number of players");
        }
        let nodes = cell_averaging_nodes(&snet.cells, &quad.cell)?;
        let dest = if game.has_exact_cell_mass() {
            Vec::new()
        } else {
            snet.cells
                .iter()
                .map(|c| quad.kernel.on_box(c))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            game,
            joint: anet.joint_actions(),
            snet,
            anet,
            quad,
            caps,
            nodes,
            dest,
        })
    }

    /// Nets with spacing `δ / factor`. State cells are subdivided so that each
    /// refined cell lies in one coarse cell, and the action net keeps the
    /// current points as a prefix so coarse profiles embed into the refined game.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor < 1 {
            return domain("refinement factor must be at least 1");
        }
        let delta = self.snet.delta / factor as f64;
        let snet = self.snet.subdivide(factor, self.caps.max_states)?;
        let fine = ActionNet::build(&self.game.action_spaces, delta, self.caps.max_states)?;
        let anet = ActionNet::union(&self.anet, &fine);
        Self::with_nets(self.game, snet, anet, self.quad, self.caps)
    }
}

pub(crate) fn cell_averaging_nodes(
    cells: &[AxisBox],
    rule: &QuadratureRule,
) -> Result<Vec<Vec<(Vec<f64>, f64)>>> {
    cells
        .iter()
        .map(|c| {
            let q = rule.on_box(c)?;
            let total = q.total_weight();
            if !(total > 0.0) {
                return Err(Error::Quadrature("cell with zero averaging weight".into()));
            }
            Ok(q.nodes
                .into_iter()
                .zip(q.weights.iter().map(|w| w / total))
                .collect())
        })
        .collect()
}

impl CellModel for Quantization<'_> {
    fn num_players(&self) -> usize {
        self.game.num_players
    }
    fn num_cells(&self) -> usize {
        self.snet.len()
    }
    fn state_net(&self) -> &StateNet {
        &self.snet
    }
    fn action_net(&self) -> &ActionNet {
        &self.anet
    }
    fn joint_actions(&self) -> &[JointAction] {
        &self.joint
    }
    fn cell_nodes(&self, cell: usize) -> &[(Vec<f64>, f64)] {
        &self.nodes[cell]
    }
    fn stage_cost(&self, player: usize, x: &[f64], a: &JointAction) -> f64 {
        self.game.cost_unchecked(player, x, a)
    }
    fn pushforward(&self, x: &[f64], a: &JointAction, out: &mut [f64]) {
        if self.dest.is_empty() {
            for (o, cell) in out.iter_mut().zip(&self.snet.cells) {
                *o = self
                    .game
                    .exact_mass(cell, x, a)
                    .expect("exact mass available");
            }
        } else {
            for (o, q) in out.iter_mut().zip(&self.dest) {
                *o = self.game.mass_with(q, x, a);
            }
        }
    }
    fn locate(&self, x: &[f64]) -> Result<usize> {
        self.snet.nearest_state(x)
    }
    fn representative(&self, cell: usize) -> Option<&[f64]> {
        self.snet.points.get(cell).map(Vec::as_slice)
    }
    fn sampling_box(&self) -> &AxisBox {
        &self.game.state_space
    }
    fn action_spaces(&self) -> &[ActionSpace] {
        &self.game.action_spaces
    }
    fn horizon(&self) -> Horizon {
        self.game.horizon
    }
    fn cost_bound(&self) -> f64 {
        self.game.cost_bound
    }
    fn caps(&self) -> Caps {
        self.caps
    }
    fn provenance(&self) -> Provenance {
        Provenance {
            source: self.game.id.clone(),
            delta: self.snet.delta,
            cell_rule: Some(self.quad.cell),
            kernel_rule: (!self.game.has_exact_cell_mass()).then_some(self.quad.kernel),
            max_row_defect: 0.0,
            pseudo_state: None,
        }
    }
}

/// Averaged stage data of one source cell: costs `[player][joint]`, rows `[joint][cell]`,
/// and the worst pre-normalization row defect.
pub(crate) struct CellRow {
    pub costs: Vec<Vec<f64>>,
    pub rows: Vec<Vec<f64>>,
    pub defect: f64,
}

/// Average costs and pushforward masses over the averaging measure of `cell`;
/// rows are renormalized to sum exactly to one.
pub(crate) fn average_cell<M: CellModel + ?Sized>(
    m: &M,
    cell: usize,
    joints: &[usize],
) -> Result<CellRow> {
    let n = m.num_players();
    let k = m.num_cells();
    let mut costs = vec![Vec::with_capacity(joints.len()); n];
    let mut rows = Vec::with_capacity(joints.len());
    let mut defect: f64 = 0.0;
    let mut buf = vec![0.0; k];
    for &j in joints {
        let a = &m.joint_actions()[j];
        let mut c = vec![0.0; n];
        let mut row = vec![0.0; k];
        for (x, w) in m.cell_nodes(cell) {
            for (i, ci) in c.iter_mut().enumerate() {
                *ci += w * m.stage_cost(i, x, a);
            }
            m.pushforward(x, a, &mut buf);
            for (r, b) in row.iter_mut().zip(&buf) {
                *r += w * b.max(0.0);
            }
        }
        let s: f64 = row.iter().sum();
        if !(s >= 0.5) {
            return Err(Error::Quadrature(format!(
                "row of cell {cell}, joint action {j} has mass {s} before normalization; increase quadrature resolution"
            )));
        }
        defect = defect.max((s - 1.0).abs());
        normalize_exact(&mut row);
        for (i, ci) in c.into_iter().enumerate() {
            costs[i].push(ci);
        }
        rows.push(row);
    }
    Ok(CellRow {
        costs,
        rows,
        defect,
    })
}

/// Build the finite game `(X_δ, A_δ, c_δ, p_δ)` of a cell model.
pub fn build_finite_game<M: CellModel + ?Sized>(m: &M) -> Result<FiniteGame> {
    let k = m.num_cells();
    let counts = m.action_net().counts();
    let nj: usize = counts.iter().product();
    let entries = k as u128 * nj as u128 * k as u128;
    let caps = m.caps();
    if entries > caps.max_tensor_entries {
        return Err(Error::Resource {
            what: "transition tensor".into(),
            needed: entries,
            cap: caps.max_tensor_entries,
        });
    }
    let joints: Vec<usize> = (0..nj).collect();
    let cells: Vec<CellRow> = (0..k)
        .into_par_iter()
        .map(|j| average_cell(m, j, &joints))
        .collect::<Result<_>>()?;
    let n = m.num_players();
    let mut costs = vec![Vec::with_capacity(k); n];
    let mut transitions = Vec::with_capacity(k);
    let mut defect: f64 = 0.0;
    for cell in cells {
        for (i, c) in cell.costs.into_iter().enumerate() {
            costs[i].push(c);
        }
        transitions.push(cell.rows);
        defect = defect.max(cell.defect);
    }
    let mut provenance = m.provenance();
    provenance.max_row_defect = defect;
    Ok(FiniteGame {
        k,
        action_counts: counts,
        costs,
        transitions,
        beta_or_t: m.horizon(),
        cost_bound: m.cost_bound(),
        provenance,
    })
}

/// Sampled lower bound on the TV modulus `ω_δ(radius)` of the quantized kernel.
///
/// Pairs `(x, a), (y, b)` with `d_X(x, y) + d_A(a, b) ≤ radius` are drawn from
/// a seeded generator; `d_A` is the max over players of the Chebyshev distance.
pub fn estimate_tv_modulus<M: CellModel + ?Sized>(
    m: &M,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if !(radius > 0.0) {
        return domain("radius must be positive");
    }
    if samples == 0 {
        return domain("need at least one sample");
    }
    let k = m.num_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bx = m.sampling_box().clone();
    let mut p = vec![0.0; k];
    let mut q = vec![0.0; k];
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let x = crate::model::sample_box(&bx, &mut rng);
        let a = JointAction(
            m.action_spaces()
                .iter()
                .map(|s| s.sample(&mut rng))
                .collect(),
        );
        let rx = radius * rng.random::<f64>();
        let ra = radius - rx;
        let mut y: Vec<f64> = x
            .iter()
            .map(|v| v + rx * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        bx.clamp(&mut y);
        let b = JointAction(
            m.action_spaces()
                .iter()
                .zip(&a.0)
                .map(|(space, ai)| perturb_action(space, ai, ra, &mut rng))
                .collect(),
        );
        m.pushforward(&x, &a, &mut p);
        m.pushforward(&y, &b, &mut q);
        let tv: f64 = p.iter().zip(&q).map(|(u, v)| (u - v).abs()).sum();
        best = best.max(tv);
    }
    Ok(best)
}

fn perturb_action(space: &ActionSpace, a: &[f64], r: f64, rng: &mut impl Rng) -> Vec<f64> {
    match space {
        ActionSpace::Continuous(b) => {
            let mut v: Vec<f64> = a
                .iter()
                .map(|x| x + r * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            b.clamp(&mut v);
            v
        }
        ActionSpace::Finite(pts) => {
            let near: Vec<&Vec<f64>> = pts.iter().filter(|p| chebyshev(p, a) <= r).collect();
            if near.is_empty() {
                a.to_vec()
            } else {
                near[rng.random_range(0..near.len())].clone()
            }
        }
    }
}
