//! Continuous-space Markov games: state/action geometry, evaluable costs and
//! transition densities, and numerical spot checks of the standing
//! assumptions (bounded costs, normalized kernels, continuity).

mod quadrature;
pub mod zoo;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub use quadrature::{Quadrature, QuadratureRule, Scheme};

/// Slack used for domain membership tests on floating-point inputs.
const MEMBERSHIP_SLACK: f64 = 1e-12;

/// Axis-aligned box with the max-coordinate (Chebyshev) metric.
///
/// Bounds may be infinite, which is how unbounded state domains are expressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return domain("box needs matching, nonempty bound vectors");
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l < u) || l.is_nan())
        {
            return domain(format!(
                "box bounds must satisfy lower < upper: {lower:?} / {upper:?}"
            ));
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn unit(dim: usize) -> Self {
        Self::cube(dim, 0.0, 1.0).expect("unit cube is valid")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(d, &v)| {
                v >= self.lower[d] - MEMBERSHIP_SLACK && v <= self.upper[d] + MEMBERSHIP_SLACK
            })
    }

    /// Strict interior membership (no slack).
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(d, &v)| v > self.lower[d] && v < self.upper[d])
    }

    /// `other ⊂ interior(self)`.
    pub fn contains_box_in_interior(&self, other: &AxisBox) -> bool {
        other.dim() == self.dim()
            && (0..self.dim())
                .all(|d| other.lower[d] > self.lower[d] && other.upper[d] < self.upper[d])
    }

    pub fn intersect(&self, other: &AxisBox) -> Option<AxisBox> {
        let lower: Vec<f64> = self
            .lower
            .iter()
            .zip(&other.lower)
            .map(|(a, b)| a.max(*b))
            .collect();
        let upper: Vec<f64> = self
            .upper
            .iter()
            .zip(&other.upper)
            .map(|(a, b)| a.min(*b))
            .collect();
        if lower.iter().zip(&upper).all(|(l, u)| l < u) {
            Some(AxisBox { lower, upper })
        } else {
            None
        }
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (d, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[d], self.upper[d]);
        }
    }
}

/// Chebyshev distance between two points of equal dimension.
pub fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A player's action set: a compact box or an explicit finite list of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSpace {
    Continuous(AxisBox),
    Finite(Vec<Vec<f64>>),
}

impl ActionSpace {
    pub fn finite_scalars(values: &[f64]) -> Self {
        ActionSpace::Finite(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Continuous(b) => b.dim(),
            ActionSpace::Finite(pts) => pts.first().map_or(0, Vec::len),
        }
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        match self {
            ActionSpace::Continuous(b) => b.contains(a),
            ActionSpace::Finite(pts) => pts.iter().any(|p| chebyshev(p, a) <= MEMBERSHIP_SLACK),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            ActionSpace::Continuous(b) => sample_box(b, rng),
            ActionSpace::Finite(pts) => pts[rng.random_range(0..pts.len())].clone(),
        }
    }
}

/// One action point per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAction(pub Vec<Vec<f64>>);

impl JointAction {
    pub fn player(&self, i: usize) -> &[f64] {
        &self.0[i]
    }

    /// Scalar convenience accessor: first coordinate of player `i`'s action.
    pub fn scalar(&self, i: usize) -> f64 {
        self.0[i][0]
    }

    pub fn scalars(values: &[f64]) -> Self {
        JointAction(values.iter().map(|&v| vec![v]).collect())
    }
}

/// Horizon of the cost criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    #[serde(rename = "T")]
    Finite(usize),
    #[serde(rename = "beta")]
    Discounted(f64),
}

impl Horizon {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Horizon::Finite(0) => domain("finite horizon must be at least 1"),
            Horizon::Discounted(b) if !(0.0..1.0).contains(&b) => {
                domain(format!("discount factor must lie in [0, 1), got {b}"))
            }
            _ => Ok(()),
        }
    }

    /// Bound on any value table entry given a per-stage cost bound.
    pub fn value_bound(&self, cost_bound: f64) -> f64 {
        match *self {
            Horizon::Finite(t) => cost_bound * t as f64,
            Horizon::Discounted(b) => cost_bound / (1.0 - b),
        }
    }
}

pub type CostFn = Arc<dyn Fn(usize, &[f64], &JointAction) -> f64 + Send + Sync>;
pub type DensityFn = Arc<dyn Fn(&[f64], &[f64], &JointAction) -> f64 + Send + Sync>;
pub type CellMassFn = Arc<dyn Fn(&AxisBox, &[f64], &JointAction) -> f64 + Send + Sync>;

/// An N-player Markov game with continuous state space.
///
/// Costs are evaluated through `cost(player, x, a)`; the transition kernel is
/// given as a Lebesgue density `density(y, x, a)` on the state space. Models
/// whose kernels are piecewise constant may also supply an exact `cell_mass`
/// callback, which then replaces quadrature in [`ContinuousGame::eval_kernel_mass`].
#[derive(Clone)]
pub struct ContinuousGame {
    pub id: String,
    pub num_players: usize,
    pub state_space: AxisBox,
    pub action_spaces: Vec<ActionSpace>,
    pub cost_bound: f64,
    pub horizon: Horizon,
    cost: CostFn,
    density: DensityFn,
    cell_mass: Option<CellMassFn>,
}

impl fmt::Debug for ContinuousGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousGame")
            .field("id", &self.id)
            .field("num_players", &self.num_players)
            .field("state_space", &self.state_space)
            .field("action_spaces", &self.action_spaces)
            .field("cost_bound", &self.cost_bound)
            .field("horizon", &self.horizon)
            .field("exact_cell_mass", &self.cell_mass.is_some())
            .finish()
    }
}

impl ContinuousGame {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        state_space: AxisBox,
        action_spaces: Vec<ActionSpace>,
        cost_bound: f64,
        horizon: Horizon,
        cost: CostFn,
        density: DensityFn,
    ) -> Result<Self> {
        if action_spaces.is_empty() {
            return domain("a game needs at least one player");
        }
        if !(cost_bound.is_finite() && cost_bound >= 0.0) {
            return domain("cost bound must be finite and nonnegative");
        }
        for (i, space) in action_spaces.iter().enumerate() {
            if let ActionSpace::Finite(pts) = space {
                if pts.is_empty() {
                    return domain(format!("player {i} has an empty finite action set"));
                }
            }
        }
        horizon.validate()?;
        Ok(Self {
            id: id.into(),
            num_players: action_spaces.len(),
            state_space,
            action_spaces,
            cost_bound,
            horizon,
            cost,
            density,
            cell_mass: None,
        })
    }

    pub fn with_cell_mass(mut self, cell_mass: CellMassFn) -> Self {
        self.cell_mass = Some(cell_mass);
        self
    }

    pub fn with_horizon(mut self, horizon: Horizon) -> Result<Self> {
        horizon.validate()?;
        self.horizon = horizon;
        Ok(self)
    }

    pub fn has_exact_cell_mass(&self) -> bool {
        self.cell_mass.is_some()
    }

    fn check_point(&self, x: &[f64], a: &JointAction) -> Result<()> {
        if !self.state_space.contains(x) {
            return domain(format!("state {x:?} outside the state space"));
        }
        if a.0.len() != self.num_players {
            return domain(format!(
                "joint action has {} components, game has {} players",
                a.0.len(),
                self.num_players
            ));
        }
        for (i, (ai, space)) in a.0.iter().zip(&self.action_spaces).enumerate() {
            if !space.contains(ai) {
                return domain(format!(
                    "action {ai:?} of player {i} outside its action space"
                ));
            }
        }
        Ok(())
    }

    /// One-stage cost `c^player(x, a)`.
    pub fn eval_cost(&self, player: usize, x: &[f64], a: &JointAction) -> Result<f64> {
        if player >= self.num_players {
            return domain(format!("player index {player} out of range"));
        }
        self.check_point(x, a)?;
        Ok(self.cost_unchecked(player, x, a))
    }

    pub(crate) fn cost_unchecked(&self, player: usize, x: &[f64], a: &JointAction) -> f64 {
        (self.cost)(player, x, a)
    }

    pub fn density(&self, y: &[f64], x: &[f64], a: &JointAction) -> f64 {
        (self.density)(y, x, a)
    }

    /// `p(region | x, a)`: exact if the model supplies cell masses, otherwise
    /// `rule` applied to the density over `region ∩ X`.
    pub fn eval_kernel_mass(
        &self,
        region: &AxisBox,
        x: &[f64],
        a: &JointAction,
        rule: &QuadratureRule,
    ) -> Result<f64> {
        self.check_point(x, a)?;
        let Some(region) = region.intersect(&self.state_space) else {
            return Ok(0.0);
        };
        if let Some(mass) = &self.cell_mass {
            return Ok(mass(&region, x, a));
        }
        let quad = rule.on_box(&region)?;
        Ok(self.mass_with(&quad, x, a))
    }

    /// Kernel mass against a prepared quadrature of the destination region.
    pub(crate) fn mass_with(&self, quad: &Quadrature, x: &[f64], a: &JointAction) -> f64 {
        quad.integrate(|y| (self.density)(y, x, a))
    }

    pub(crate) fn exact_mass(&self, region: &AxisBox, x: &[f64], a: &JointAction) -> Option<f64> {
        self.cell_mass.as_ref().map(|m| m(region, x, a))
    }

    pub fn sample_joint_action(&self, rng: &mut impl Rng) -> JointAction {
        JointAction(self.action_spaces.iter().map(|s| s.sample(rng)).collect())
    }
}

pub(crate) fn sample_box(b: &AxisBox, rng: &mut impl Rng) -> Vec<f64> {
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(l, u)| l + (u - l) * rng.random::<f64>())
        .collect()
}

/// Outcome of [`validate_game`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    /// max over samples of `|p(X | x, a) − 1|`
    pub max_normalization_defect: f64,
    pub max_abs_cost: f64,
    pub cost_bound_violated: bool,
    /// max over samples of `∫ |p(y|x,a) − p(y|x',a)| dy` for `d(x, x') = probe_radius`
    pub max_tv_proxy: f64,
    pub probe_radius: f64,
}

/// Spot-check the standing assumptions on `samples` seeded random points.
///
/// Defects are reported, never raised. The state space must be bounded.
pub fn validate_game(
    game: &ContinuousGame,
    rule: &QuadratureRule,
    samples: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if samples == 0 {
        return domain("validation needs at least one sample");
    }
    if !game.state_space.is_bounded() {
        return domain(
            "validate_game requires a bounded state space; validate a truncation instead",
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = rule.on_box(&game.state_space)?;
    let probe_radius = 1e-3
        * game
            .state_space
            .widths()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
    let mut report = ValidationReport {
        samples,
        max_normalization_defect: 0.0,
        max_abs_cost: 0.0,
        cost_bound_violated: false,
        max_tv_proxy: 0.0,
        probe_radius,
    };
    for _ in 0..samples {
        let x = sample_box(&game.state_space, &mut rng);
        let a = game.sample_joint_action(&mut rng);
        let mass = match game.exact_mass(&game.state_space, &x, &a) {
            Some(m) => m,
            None => game.mass_with(&full, &x, &a),
        };
        report.max_normalization_defect = report.max_normalization_defect.max((mass - 1.0).abs());
        for i in 0..game.num_players {
            let c = game.cost_unchecked(i, &x, &a).abs();
            report.max_abs_cost = report.max_abs_cost.max(c);
        }
        let mut x2: Vec<f64> = x.iter().map(|v| v + probe_radius).collect();
        game.state_space.clamp(&mut x2);
        let tv = full.integrate(|y| (game.density(y, &x, &a) - game.density(y, &x2, &a)).abs());
        report.max_tv_proxy = report.max_tv_proxy.max(tv);
    }
    report.cost_bound_violated = report.max_abs_cost > game.cost_bound;
    Ok(report)
}
