//! Lifting finite-model solutions to the continuous game and certifying them.
//!
//! A finite profile is extended piecewise constantly through the quantizer.
//! Its ε is certified against a refined finite model: for every player the
//! cost of the lifted profile is compared with an exact best response on
//! the refined grid, with the maximum taken over refined cell representatives.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::Horizon;
use crate::quantize::{
    average_cell, build_finite_game, estimate_tv_modulus, CellModel, Quantization, StateNet,
};
use crate::solve::{
    best_response_dp, policy_evaluation, MarkovPolicyProfile, PolicyProfile, SolveReport,
    StationaryPolicyProfile,
};
use crate::stage_nash::MixedProfile;

/// Cell models that can be rebuilt on a finer grid.
pub trait Refinable: CellModel + Sized {
    fn refined(&self, factor: usize) -> Result<Self>;
}

impl Refinable for Quantization<'_> {
    fn refined(&self, factor: usize) -> Result<Self> {
        self.refine(factor)
    }
}

/// Lookup `x ↦ cell`: the quantizer on the net's box and, when a pseudo-state
/// exists, that state everywhere outside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLookup {
    pub net: StateNet,
    pub pseudo: Option<usize>,
}

impl CellLookup {
    pub fn of_model<M: CellModel + ?Sized>(m: &M) -> Self {
        Self {
            net: m.state_net().clone(),
            pseudo: m.provenance().pseudo_state,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.net.len() + usize::from(self.pseudo.is_some())
    }

    pub fn cell_of(&self, x: &[f64]) -> Result<usize> {
        match self.pseudo {
            Some(p) if x.len() == self.net.space().dim() && !self.net.space().contains(x) => Ok(p),
            _ => self.net.nearest_state(x),
        }
    }
}

/// `π̂(x) = π(Q(x))` for a finite profile `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPolicyProfile {
    pub profile: PolicyProfile,
    pub lookup: CellLookup,
}

/// Extends a profile defined on the points of `snet`.
pub fn extend_policy(profile: PolicyProfile, snet: &StateNet) -> Result<ExtendedPolicyProfile> {
    ExtendedPolicyProfile::new(
        profile,
        CellLookup {
            net: snet.clone(),
            pseudo: None,
        },
    )
}

impl ExtendedPolicyProfile {
    pub fn new(profile: PolicyProfile, lookup: CellLookup) -> Result<Self> {
        if profile.num_states() != lookup.num_cells() {
            return domain(format!(
                "profile covers {} states but the net has {} cells",
                profile.num_states(),
                lookup.num_cells()
            ));
        }
        Ok(Self { profile, lookup })
    }

    /// Mixes in force at time `t` and state `x`.
    pub fn at(&self, t: usize, x: &[f64]) -> Result<&MixedProfile> {
        Ok(self.profile.at(t, self.lookup.cell_of(x)?))
    }

    /// Profile of the finer model `fine`, whose action net must contain the
    /// coarse action points as a prefix. Every fine cell takes the mixes of
    /// the coarse cell of its representative; a fine pseudo-state takes the
    /// coarse pseudo-state's mixes.
    pub fn lift_onto<M: CellModel + ?Sized>(&self, fine: &M) -> Result<PolicyProfile> {
        let counts = fine.action_net().counts();
        let coarse_pseudo = self.lookup.pseudo;
        let map: Vec<usize> = (0..fine.num_cells())
            .map(|c| match (fine.representative(c), coarse_pseudo) {
                (Some(z), _) => self.lookup.cell_of(z),
                (None, Some(p)) => Ok(p),
                (None, None) => domain("fine model has a pseudo-state the coarse one lacks"),
            })
            .collect::<Result<_>>()?;
        let pad = |mp: &MixedProfile| -> Result<MixedProfile> {
            mp.0.iter()
                .zip(&counts)
                .map(|(v, &m)| {
                    if v.len() > m {
                        return domain("fine action net is smaller than the coarse one");
                    }
                    let mut out = v.clone();
                    out.resize(m, 0.0);
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
                .map(MixedProfile)
        };
        let stage = |t: usize| -> Result<StationaryPolicyProfile> {
            map.iter()
                .map(|&c| pad(self.profile.at(t, c)))
                .collect::<Result<Vec<_>>>()
                .map(StationaryPolicyProfile)
        };
        Ok(match &self.profile {
            PolicyProfile::Stationary(_) => PolicyProfile::Stationary(stage(0)?),
            PolicyProfile::Markov(m) => PolicyProfile::Markov(MarkovPolicyProfile(
                (0..m.horizon()).map(stage).collect::<Result<_>>()?,
            )),
        })
    }
}

/// Piecewise-constant extension of a per-cell function.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedValue {
    pub values: Vec<f64>,
    pub lookup: CellLookup,
}

impl ExtendedValue {
    pub fn new(values: Vec<f64>, lookup: CellLookup) -> Result<Self> {
        if values.len() != lookup.num_cells() {
            return domain("value vector does not match the number of cells");
        }
        Ok(Self { values, lookup })
    }

    pub fn at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.values[self.lookup.cell_of(x)?])
    }
}

/// One step of the extended best-response operator of `player`, per cell:
///
/// `min_{a^i} ∫ [c^i(z, a) + s·Σ_l J(l) p(S_l | z, a)] π̂^{-i}(da^{-i}) ν_j(dz)`
///
/// with `s = β` when discounted and `s = 1` for a finite horizon, where `t`
/// selects the others' stage mixes. Kernel rows are normalized per joint
/// action exactly as in the finite game.
pub fn apply_extended_operator<M: CellModel + ?Sized>(
    m: &M,
    profile: &ExtendedPolicyProfile,
    j: &ExtendedValue,
    player: usize,
    horizon: Horizon,
    t: usize,
) -> Result<Vec<f64>> {
    horizon.validate()?;
    if player >= m.num_players() {
        return domain(format!("player index {player} out of range"));
    }
    if j.values.len() != m.num_cells() || profile.profile.num_states() != m.num_cells() {
        return domain("profile or value table does not match the model's cells");
    }
    let scale = match horizon {
        Horizon::Discounted(b) => b,
        Horizon::Finite(h) if t < h => 1.0,
        Horizon::Finite(h) => return domain(format!("time {t} outside horizon {h}")),
    };
    let counts = m.action_net().counts();
    let nj = m.joint_actions().len();
    let joints: Vec<usize> = (0..nj).collect();
    use rayon::prelude::*;
    (0..m.num_cells())
        .into_par_iter()
        .map(|cell| {
            let row = average_cell(m, cell, &joints)?;
            let mp = profile.profile.at(t, cell);
            let mut q = vec![0.0; counts[player]];
            for a in 0..nj {
                let idx = crate::quantize::decode_joint(a, &counts);
                let w: f64 = idx
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != player)
                    .map(|(i, &ai)| mp.0[i][ai])
                    .product();
                if w == 0.0 {
                    continue;
                }
                let cont: f64 = row.rows[a].iter().zip(&j.values).map(|(p, v)| p * v).sum();
                q[idx[player]] += w * (row.costs[player][a] + scale * cont);
            }
            Ok(q.into_iter().fold(f64::INFINITY, f64::min))
        })
        .collect()
}

/// `max_{i, cells} |T̂_i Ĵ_i − Ĵ_i|` for a stationary report solved on the
/// finite game of `m`.
pub fn fixed_point_residual<M: CellModel + ?Sized>(
    m: &M,
    report: &SolveReport,
    beta: f64,
) -> Result<f64> {
    let PolicyProfile::Stationary(_) = &report.profile else {
        return domain("fixed-point residual needs a stationary profile");
    };
    let lookup = CellLookup::of_model(m);
    let prof = ExtendedPolicyProfile::new(report.profile.clone(), lookup.clone())?;
    let mut worst: f64 = 0.0;
    for i in 0..m.num_players() {
        let j = ExtendedValue::new(report.values.initial(i).to_vec(), lookup.clone())?;
        let tj = apply_extended_operator(m, &prof, &j, i, Horizon::Discounted(beta), 0)?;
        for (a, b) in tj.iter().zip(&j.values) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// samples for the `ω̂_δ(2δ)` diagnostic; 0 skips it
    pub omega_samples: usize,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            omega_samples: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertTimings {
    pub refine_seconds: f64,
    pub evaluate_seconds: f64,
}

/// Per-player ε̂ of a lifted profile against the refined finite model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsCertificate {
    pub delta: f64,
    pub refine: usize,
    pub k_states: usize,
    pub k_refined: usize,
    /// `max_x [J^i(π̂; x) − J*_i(π̂^{-i}; x)]` over refined representatives
    /// (and all times for a finite horizon)
    pub eps: Vec<f64>,
    /// extended-operator residual of the coarse solve, when available
    pub residual: Option<f64>,
    /// sampled lower bound on `ω_δ(2δ)`
    pub omega_hat: Option<f64>,
    pub max_row_defect: f64,
    pub max_row_defect_refined: f64,
    /// best responses range over the refined finite model, not the continuous game
    pub reference: String,
    pub timings: CertTimings,
}

impl EpsCertificate {
    pub fn max_eps(&self) -> f64 {
        self.eps.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Certifies `profile` (a solution on the finite game of `m`) on the model
/// refined by `refine`. Pseudo-states are kept as single states and are not
/// part of the maximum.
pub fn certify_epsilon<M: Refinable>(
    m: &M,
    profile: &ExtendedPolicyProfile,
    refine: usize,
    opts: &CertifyOptions,
) -> Result<EpsCertificate> {
    if refine < 2 {
        return domain("refinement factor must be at least 2");
    }
    let horizon = m.horizon();
    let start = Instant::now();
    let fine = m.refined(refine)?;
    let gfine = build_finite_game(&fine)?;
    let refine_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let lifted = profile.lift_onto(&fine)?;
    let own = policy_evaluation(&gfine, &lifted, horizon)?;
    let inside: Vec<usize> = (0..fine.num_cells())
        .filter(|&c| fine.representative(c).is_some())
        .collect();
    let mut eps = Vec::with_capacity(m.num_players());
    for i in 0..m.num_players() {
        let br = best_response_dp(&gfine, i, &lifted, horizon)?;
        let mut e = f64::NEG_INFINITY;
        for (ot, bt) in own.0.iter().zip(&br.values) {
            for &c in &inside {
                e = e.max(ot[i][c] - bt[c]);
            }
        }
        eps.push(e);
    }
    let evaluate_seconds = start.elapsed().as_secs_f64();
    let omega_hat = if opts.omega_samples > 0 {
        Some(estimate_tv_modulus(
            m,
            2.0 * m.state_net().delta,
            opts.omega_samples,
            opts.seed,
        )?)
    } else {
        None
    };
    Ok(EpsCertificate {
        delta: m.state_net().delta,
        refine,
        k_states: m.num_cells(),
        k_refined: fine.num_cells(),
        eps,
        residual: None,
        omega_hat,
        max_row_defect: m.provenance().max_row_defect,
        max_row_defect_refined: gfine.provenance.max_row_defect,
        reference: format!("refined finite model with delta/{refine}"),
        timings: CertTimings {
            refine_seconds,
            evaluate_seconds,
        },
    })
}
