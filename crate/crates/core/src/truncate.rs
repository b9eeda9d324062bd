//! Compact truncations of games on unbounded state domains.
//!
//! `K_n` is a box of radius `r_n` around a center. Mass leaving `K_n` is sent
//! to a pseudo-state `Δ_n`, whose own costs and transitions are averages over
//! a probability measure `ν_n` on the annulus `K_{n+1} \ K_n`. After
//! quantizing `K_n`, `Δ_n` is one extra finite state, placed after the cells.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{
    ActionSpace, AxisBox, ContinuousGame, Horizon, JointAction, Quadrature, QuadratureRule,
};
use crate::quantize::{
    cell_averaging_nodes, ActionNet, Caps, CellModel, FiniteGame, Provenance, QuadConfig, StateNet,
};
use crate::solve::PolicyProfile;
use crate::verify::{CellLookup, ExtendedPolicyProfile, ExtendedValue, Refinable};

/// Leak masses below this are rounding noise of the row sum and count as zero.
const LEAK_FLOOR: f64 = 1e-12;

/// `K_n = center ± (radius0 + step·(n−1))`, intersected with the state domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub center: Vec<f64>,
    pub radius0: f64,
    pub step: f64,
    /// midpoint nodes per dimension laid over `K_{n+1}` to realize `ν_n`
    pub annulus_resolution: usize,
}

impl Ladder {
    /// Radii `r_n = n` around the origin.
    pub fn unit(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            radius0: 1.0,
            step: 1.0,
            annulus_resolution: 64,
        }
    }

    pub fn radius(&self, n: usize) -> f64 {
        self.radius0 + self.step * (n as f64 - 1.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius0 > 0.0 && self.radius0.is_finite()) {
            return Err(Error::Config(format!(
                "ladder radius0 must be positive, got {}",
                self.radius0
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!(
                "ladder radii must grow (step > 0), got step {}",
                self.step
            )));
        }
        if self.annulus_resolution < 2 {
            return Err(Error::Config(
                "annulus resolution must be at least 2".into(),
            ));
        }
        if self.center.is_empty() || self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("ladder center must be a finite point".into()));
        }
        Ok(())
    }

    /// `K_n` within `domain`.
    pub fn compact(&self, n: usize, domain_box: &AxisBox) -> Result<AxisBox> {
        self.validate()?;
        if n == 0 {
            return Err(Error::Config("truncation index starts at 1".into()));
        }
        if self.center.len() != domain_box.dim() {
            return Err(Error::Config(
                "ladder center has the wrong dimension".into(),
            ));
        }
        let r = self.radius(n);
        let raw = AxisBox {
            lower: self.center.iter().map(|c| c - r).collect(),
            upper: self.center.iter().map(|c| c + r).collect(),
        };
        raw.intersect(domain_box)
            .filter(AxisBox::is_bounded)
            .ok_or_else(|| {
                Error::Config(format!(
                    "K_{n} does not meet the state domain in a bounded box"
                ))
            })
    }
}

/// The `n`-th truncation of a game: `K_n` and the measure `ν_n` of `Δ_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub n: usize,
    pub compact: AxisBox,
    pub outer: AxisBox,
    /// nodes of `ν_n` (outside `K_n`) with weights summing to one
    pub nu_nodes: Vec<Vec<f64>>,
    pub nu_weights: Vec<f64>,
    pub source: String,
}

fn strictly_outside(b: &AxisBox, x: &[f64]) -> bool {
    x.iter()
        .zip(b.lower.iter().zip(&b.upper))
        .any(|(v, (l, u))| v < l || v > u)
}

/// `K_n`, `K_{n+1}` and `ν_n` = normalized midpoint grid of `K_{n+1}` with
/// the nodes in `K_n` removed.
pub fn build_truncation(game: &ContinuousGame, n: usize, ladder: &Ladder) -> Result<Truncation> {
    let compact = ladder.compact(n, &game.state_space)?;
    let outer = ladder.compact(n + 1, &game.state_space)?;
    if outer == compact {
        return Err(Error::Config(format!(
            "K_{n} already covers the state domain; nothing to truncate"
        )));
    }
    let grid = Quadrature::on_box(
        &outer,
        crate::model::Scheme::MidpointGrid,
        ladder.annulus_resolution,
    )?;
    let nu_nodes: Vec<Vec<f64>> = grid
        .nodes
        .into_iter()
        .filter(|x| strictly_outside(&compact, x))
        .collect();
    if nu_nodes.is_empty() {
        return Err(Error::Quadrature(format!(
            "no annulus nodes outside K_{n}; the domain leaves no room for the pseudo-state measure"
        )));
    }
    let w = 1.0 / nu_nodes.len() as f64;
    Ok(Truncation {
        n,
        compact,
        outer,
        nu_weights: vec![w; nu_nodes.len()],
        nu_nodes,
        source: game.id.clone(),
    })
}

/// A point of the truncated state set `K_n ∪ {Δ_n}`.
#[derive(Debug, Clone, PartialEq)]
pub enum TruncatedState {
    Point(Vec<f64>),
    Pseudo,
}

/// The game on `K_n ∪ {Δ_n}` with kernel `p_n` and costs `c_n`.
#[derive(Clone, Debug)]
pub struct TruncatedGame<'g> {
    pub game: &'g ContinuousGame,
    pub trunc: Truncation,
}

pub fn build_truncated_game<'g>(
    game: &'g ContinuousGame,
    trunc: Truncation,
) -> Result<TruncatedGame<'g>> {
    if trunc.source != game.id {
        return domain("truncation was built for a different game");
    }
    Ok(TruncatedGame { game, trunc })
}

impl<'g> TruncatedGame<'g> {
    fn point_mass(
        &self,
        region: &AxisBox,
        x: &[f64],
        a: &JointAction,
        rule: &QuadratureRule,
    ) -> Result<f64> {
        match region.intersect(&self.trunc.compact) {
            Some(r) => self.game.eval_kernel_mass(&r, x, a, rule),
            None => Ok(0.0),
        }
    }

    /// `c_n^i(s, a)`: the original cost on `K_n`, its `ν_n` average at `Δ_n`.
    pub fn cost(&self, player: usize, s: &TruncatedState, a: &JointAction) -> Result<f64> {
        match s {
            TruncatedState::Point(x) => {
                if !self.trunc.compact.contains(x) {
                    return domain(format!("state {x:?} outside K_{}", self.trunc.n));
                }
                self.game.eval_cost(player, x, a)
            }
            TruncatedState::Pseudo => {
                let mut total = 0.0;
                for (z, w) in self.trunc.nu_nodes.iter().zip(&self.trunc.nu_weights) {
                    total += w * self.game.eval_cost(player, z, a)?;
                }
                Ok(total)
            }
        }
    }

    /// `p_n(region ∩ K_n | s, a)`.
    pub fn mass(
        &self,
        region: &AxisBox,
        s: &TruncatedState,
        a: &JointAction,
        rule: &QuadratureRule,
    ) -> Result<f64> {
        match s {
            TruncatedState::Point(x) => self.point_mass(region, x, a, rule),
            TruncatedState::Pseudo => {
                let mut total = 0.0;
                for (z, w) in self.trunc.nu_nodes.iter().zip(&self.trunc.nu_weights) {
                    total += w * self.point_mass(region, z, a, rule)?;
                }
                Ok(total)
            }
        }
    }

    /// `p_n({Δ_n} | s, a) = p(K_n^c | ·)`, averaged over `ν_n` at `Δ_n`.
    pub fn pseudo_mass(
        &self,
        s: &TruncatedState,
        a: &JointAction,
        rule: &QuadratureRule,
    ) -> Result<f64> {
        let inside = self.mass(&self.trunc.compact, s, a, rule)?;
        Ok(floor_leak(1.0 - inside))
    }

    /// Quantization of `K_n` with spacing `delta`, plus `Δ_n`.
    pub fn quantize(
        &self,
        delta: f64,
        quad: QuadConfig,
        caps: Caps,
    ) -> Result<TruncatedQuantization<'g>> {
        let snet = StateNet::build(&self.trunc.compact, delta, caps.max_states)?;
        let anet = ActionNet::build(&self.game.action_spaces, delta, caps.max_states)?;
        TruncatedQuantization::new(self.clone(), snet, anet, quad, caps)
    }
}

fn floor_leak(leak: f64) -> f64 {
    if leak > LEAK_FLOOR {
        leak
    } else {
        0.0
    }
}

/// Cell model of a truncated game: the cells of `K_n`, then `Δ_n`.
#[derive(Clone)]
pub struct TruncatedQuantization<'g> {
    pub tgame: TruncatedGame<'g>,
    pub snet: StateNet,
    pub anet: ActionNet,
    pub quad: QuadConfig,
    pub caps: Caps,
    joint: Vec<JointAction>,
    nodes: Vec<Vec<(Vec<f64>, f64)>>,
    dest: Vec<Quadrature>,
}

impl<'g> TruncatedQuantization<'g> {
    pub fn new(
        tgame: TruncatedGame<'g>,
        snet: StateNet,
        anet: ActionNet,
        quad: QuadConfig,
        caps: Caps,
    ) -> Result<Self> {
        if snet.space() != &tgame.trunc.compact {
            return domain("state net was not built on K_n");
        }
        let mut nodes = cell_averaging_nodes(&snet.cells, &quad.cell)?;
        nodes.push(
            tgame
                .trunc
                .nu_nodes
                .iter()
                .cloned()
                .zip(tgame.trunc.nu_weights.iter().copied())
                .collect(),
        );
        let dest = if tgame.game.has_exact_cell_mass() {
            Vec::new()
        } else {
            snet.cells
                .iter()
                .map(|c| quad.kernel.on_box(c))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            joint: anet.joint_actions(),
            tgame,
            snet,
            anet,
            quad,
            caps,
            nodes,
            dest,
        })
    }

    pub fn pseudo_index(&self) -> usize {
        self.snet.len()
    }

    pub fn truncation(&self) -> &Truncation {
        &self.tgame.trunc
    }

    /// Largest transition mass into `Δ_n` from any cell of `K_n` in `g`.
    pub fn max_leak(&self, g: &FiniteGame) -> f64 {
        let p = self.pseudo_index();
        g.transitions[..p]
            .iter()
            .flatten()
            .map(|row| row[p])
            .fold(0.0, f64::max)
    }
}

impl Refinable for TruncatedQuantization<'_> {
    /// Subdivides the cells of `K_n`; `Δ_n` and `ν_n` stay as they are.
    fn refined(&self, factor: usize) -> Result<Self> {
        let snet = self.snet.subdivide(factor, self.caps.max_states)?;
        let fine = ActionNet::build(
            &self.tgame.game.action_spaces,
            snet.delta,
            self.caps.max_states,
        )?;
        let anet = ActionNet::union(&self.anet, &fine);
        Self::new(self.tgame.clone(), snet, anet, self.quad, self.caps)
    }
}

impl CellModel for TruncatedQuantization<'_> {
    fn num_players(&self) -> usize {
        self.tgame.game.num_players
    }
    fn num_cells(&self) -> usize {
        self.snet.len() + 1
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
        self.tgame.game.cost_unchecked(player, x, a)
    }
    fn pushforward(&self, x: &[f64], a: &JointAction, out: &mut [f64]) {
        let k = self.snet.len();
        let game = self.tgame.game;
        let mut inside = 0.0;
        for l in 0..k {
            let m = if self.dest.is_empty() {
                game.exact_mass(&self.snet.cells[l], x, a)
                    .expect("exact mass available")
            } else {
                game.mass_with(&self.dest[l], x, a)
            };
            out[l] = m;
            inside += m;
        }
        out[k] = floor_leak(1.0 - inside);
    }
    fn locate(&self, x: &[f64]) -> Result<usize> {
        if x.len() == self.snet.space().dim() && strictly_outside(self.snet.space(), x) {
            return Ok(self.pseudo_index());
        }
        self.snet.nearest_state(x)
    }
    fn representative(&self, cell: usize) -> Option<&[f64]> {
        self.snet.points.get(cell).map(Vec::as_slice)
    }
    fn sampling_box(&self) -> &AxisBox {
        self.snet.space()
    }
    fn action_spaces(&self) -> &[ActionSpace] {
        &self.tgame.game.action_spaces
    }
    fn horizon(&self) -> Horizon {
        self.tgame.game.horizon
    }
    fn cost_bound(&self) -> f64 {
        self.tgame.game.cost_bound
    }
    fn caps(&self) -> Caps {
        self.caps
    }
    fn provenance(&self) -> Provenance {
        Provenance {
            source: format!("{}@K{}", self.tgame.game.id, self.tgame.trunc.n),
            delta: self.snet.delta,
            cell_rule: Some(self.quad.cell),
            kernel_rule: (!self.tgame.game.has_exact_cell_mass()).then_some(self.quad.kernel),
            max_row_defect: 0.0,
            pseudo_state: Some(self.snet.len()),
        }
    }
}

/// Extends a solution on `K_n ∪ {Δ_n}` to the whole domain: cell lookup on
/// `K_n`, the `Δ_n` entry everywhere else.
pub fn lift_from_truncation(
    m: &TruncatedQuantization<'_>,
    profile: PolicyProfile,
    values: Vec<f64>,
) -> Result<(ExtendedPolicyProfile, ExtendedValue)> {
    let lookup = CellLookup::of_model(m);
    Ok((
        ExtendedPolicyProfile::new(profile, lookup.clone())?,
        ExtendedValue::new(values, lookup)?,
    ))
}
