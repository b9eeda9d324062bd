//! Benchmark games selectable by string identifier.
//!
//! Every model takes an optional map of named real parameters; unknown names
//! are rejected so typos in run configs surface early.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::sync::Arc;

use statrs::function::erf::erf;

use super::{ActionSpace, AxisBox, ContinuousGame, Horizon, JointAction};
use crate::error::{Error, Result};

/// Version of the registry listing; bump when models or defaults change.
pub const ZOO_VERSION: &str = "1";

pub struct ModelInfo {
    pub id: &'static str,
    pub summary: &'static str,
    pub players: usize,
    pub bounded: bool,
    pub params: &'static [(&'static str, f64, &'static str)],
}

pub const MODELS: &[ModelInfo] = &[
    ModelInfo {
        id: "const-2p",
        summary: "X=[0,1], A^i={0,1}, c^i = 1, uniform kernel",
        players: 2,
        bounded: true,
        params: &[],
    },
    ModelInfo {
        id: "coupled-2p",
        summary: "X=[0,1], A^i=[0,1], c^1 = x a1 a2, c^2 = (1-x)(1-a1) a2, uniform kernel",
        players: 2,
        bounded: true,
        params: &[],
    },
    ModelInfo {
        id: "gauss-drift-2p",
        summary: "X=R, A^i={-0.5,0,0.5}, y ~ N(rho x + drift (a1+a2), sigma^2), \
                  c^1 = 1-exp(-(x-0.5)^2)+0.1|a1|, c^2 = 1-exp(-(x+0.5)^2)+0.1|a2|",
        players: 2,
        bounded: false,
        params: &[
            ("sigma", 0.4, "kernel standard deviation"),
            ("rho", 0.5, "state persistence"),
            ("drift", 0.4, "action push per unit action"),
        ],
    },
    ModelInfo {
        id: "pc-2p-lossless",
        summary: "X=[0,1] split into [0,0.5) and [0.5,1], A^i={0,1}; costs and kernel \
                  piecewise constant on the halves (prisoner's dilemma / coordination)",
        players: 2,
        bounded: true,
        params: &[],
    },
    ModelInfo {
        id: "quad-1p",
        summary: "single player, X=[0,1], A=[0,1], c = (x-0.7)^2 + 0.2 (a-x)^2, \
                  next state ~ truncated N(a, sigma^2)",
        players: 1,
        bounded: true,
        params: &[("sigma", 0.15, "kernel standard deviation")],
    },
    ModelInfo {
        id: "quad-2p",
        summary: "X=[0,1], A^i=[0,1], c^i = (x - a^i)^2, next state ~ truncated \
                  N((x+a1+a2)/3, sigma^2)",
        players: 2,
        bounded: true,
        params: &[("sigma", 0.2, "kernel standard deviation")],
    },
    ModelInfo {
        id: "team-2p",
        summary: "X=[0,1], A^i={0,0.5,1}, common cost (x-0.5)^2 + 0.2 (a1-a2)^2 + 0.1 (a1+a2) x, \
                  next state ~ truncated N(0.25 + 0.25 x + 0.25 (a1+a2), sigma^2)",
        players: 2,
        bounded: true,
        params: &[("sigma", 0.15, "kernel standard deviation")],
    },
    ModelInfo {
        id: "tg-2p-smooth",
        summary:
            "X=[0,1], A^i={0,1}, next state ~ N(0.2+0.3x+0.25a1+0.2a2, sigma^2) truncated to X; \
                  inspection game: c^1 = 0.2(x-0.25)^2 + [a1!=a2](a2 ? 0.4+0.4x : 0.8-0.4x), \
                  c^2 = 0.2(x-0.75)^2 + [a1==a2](a2 ? 0.7-0.3x : 0.3+0.5x)",
        players: 2,
        bounded: true,
        params: &[("sigma", 0.15, "kernel standard deviation")],
    },
    ModelInfo {
        id: "window-1p",
        summary: "single player, X=[0,1], A={0}, c = x, next state uniform on \
                  [x(1-w), x(1-w)+w]",
        players: 1,
        bounded: true,
        params: &[("width", 0.3, "window width w")],
    },
    ModelInfo {
        id: "zs-mp",
        summary: "zero-sum matching pennies on a dummy state: X=[0,1], A^i={0,1}, \
                  c^1 = +1 on match, -1 otherwise, c^2 = -c^1, uniform kernel",
        players: 2,
        bounded: true,
        params: &[],
    },
];

/// Human-readable listing of the registry.
pub fn list_models() -> String {
    let mut out = format!("model zoo v{ZOO_VERSION}\n");
    for m in MODELS {
        let _ = writeln!(
            out,
            "{}  ({} player{}{})",
            m.id,
            m.players,
            if m.players == 1 { "" } else { "s" },
            if m.bounded {
                ""
            } else {
                ", unbounded state space"
            }
        );
        let _ = writeln!(out, "    {}", m.summary);
        for (name, default, doc) in m.params {
            let _ = writeln!(out, "    param {name} = {default}  {doc}");
        }
    }
    out
}

pub fn info(id: &str) -> Option<&'static ModelInfo> {
    MODELS.iter().find(|m| m.id == id)
}

/// Build a zoo model with the given parameter overrides and horizon.
pub fn build(id: &str, params: &BTreeMap<String, f64>, horizon: Horizon) -> Result<ContinuousGame> {
    let info = info(id).ok_or_else(|| Error::Config(format!("unknown model id `{id}`")))?;
    for key in params.keys() {
        if !info.params.iter().any(|(n, _, _)| n == key) {
            return Err(Error::Config(format!(
                "model `{id}` has no parameter `{key}`"
            )));
        }
    }
    let p = |name: &str| -> f64 {
        params.get(name).copied().unwrap_or_else(|| {
            info.params
                .iter()
                .find(|(n, _, _)| *n == name)
                .map(|(_, d, _)| *d)
                .expect("declared param")
        })
    };
    let unit = AxisBox::unit(1);
    let bits = ActionSpace::finite_scalars(&[0.0, 1.0]);
    let game = match id {
        "const-2p" => ContinuousGame::new(
            id,
            unit,
            vec![bits.clone(), bits],
            1.0,
            horizon,
            Arc::new(|_, _, _| 1.0),
            Arc::new(|_, _, _| 1.0),
        )?,
        "coupled-2p" => ContinuousGame::new(
            id,
            unit.clone(),
            vec![
                ActionSpace::Continuous(unit.clone()),
                ActionSpace::Continuous(unit),
            ],
            1.0,
            horizon,
            Arc::new(|i, x, a| {
                let (a1, a2) = (a.scalar(0), a.scalar(1));
                if i == 0 {
                    x[0] * a1 * a2
                } else {
                    (1.0 - x[0]) * (1.0 - a1) * a2
                }
            }),
            Arc::new(|_, _, _| 1.0),
        )?,
        "gauss-drift-2p" => {
            let (sigma, rho, drift) = (positive(p("sigma"), "sigma")?, p("rho"), p("drift"));
            let acts = ActionSpace::finite_scalars(&[-0.5, 0.0, 0.5]);
            ContinuousGame::new(
                id,
                AxisBox::new(vec![f64::NEG_INFINITY], vec![f64::INFINITY])?,
                vec![acts.clone(), acts],
                1.1,
                horizon,
                Arc::new(|i, x, a| {
                    let target = if i == 0 { 0.5 } else { -0.5 };
                    1.0 - (-(x[0] - target).powi(2)).exp() + 0.1 * a.scalar(i).abs()
                }),
                Arc::new(move |y, x, a| {
                    let mean = rho * x[0] + drift * (a.scalar(0) + a.scalar(1));
                    normal_pdf(y[0], mean, sigma)
                }),
            )?
            .with_cell_mass(Arc::new(move |region, x, a| {
                let mean = rho * x[0] + drift * (a.scalar(0) + a.scalar(1));
                let z = |v: f64| (v - mean) / sigma;
                normal_cdf(z(region.upper[0])) - normal_cdf(z(region.lower[0]))
            }))
        }
        "pc-2p-lossless" => piecewise_constant(horizon)?,
        "quad-1p" => {
            let sigma = positive(p("sigma"), "sigma")?;
            ContinuousGame::new(
                id,
                unit.clone(),
                vec![ActionSpace::Continuous(unit)],
                1.0,
                horizon,
                Arc::new(|_, x, a| (x[0] - 0.7).powi(2) + 0.2 * (a.scalar(0) - x[0]).powi(2)),
                Arc::new(move |y, _, a| truncated_normal_pdf(y[0], a.scalar(0), sigma, 0.0, 1.0)),
            )?
        }
        "quad-2p" => {
            let sigma = positive(p("sigma"), "sigma")?;
            ContinuousGame::new(
                id,
                unit.clone(),
                vec![
                    ActionSpace::Continuous(unit.clone()),
                    ActionSpace::Continuous(unit),
                ],
                1.0,
                horizon,
                Arc::new(|i, x, a| (x[0] - a.scalar(i)).powi(2)),
                Arc::new(move |y, x, a| {
                    let mean = (x[0] + a.scalar(0) + a.scalar(1)) / 3.0;
                    truncated_normal_pdf(y[0], mean, sigma, 0.0, 1.0)
                }),
            )?
        }
        "team-2p" => {
            let sigma = positive(p("sigma"), "sigma")?;
            let acts = ActionSpace::finite_scalars(&[0.0, 0.5, 1.0]);
            ContinuousGame::new(
                id,
                unit,
                vec![acts.clone(), acts],
                1.0,
                horizon,
                Arc::new(|_, x, a| {
                    let (a1, a2) = (a.scalar(0), a.scalar(1));
                    (x[0] - 0.5).powi(2) + 0.2 * (a1 - a2).powi(2) + 0.1 * (a1 + a2) * x[0]
                }),
                Arc::new(move |y, x, a| {
                    let mean = 0.25 + 0.25 * x[0] + 0.25 * (a.scalar(0) + a.scalar(1));
                    truncated_normal_pdf(y[0], mean, sigma, 0.0, 1.0)
                }),
            )?
        }
        "tg-2p-smooth" => {
            let sigma = positive(p("sigma"), "sigma")?;
            ContinuousGame::new(
                id,
                unit,
                vec![bits.clone(), bits],
                1.0,
                horizon,
                Arc::new(tg_smooth_cost),
                Arc::new(move |y, x, a| {
                    let mean = 0.2 + 0.3 * x[0] + 0.25 * a.scalar(0) + 0.2 * a.scalar(1);
                    truncated_normal_pdf(y[0], mean, sigma, 0.0, 1.0)
                }),
            )?
        }
        "window-1p" => {
            let w = p("width");
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Config(format!(
                    "window width must lie in (0, 1], got {w}"
                )));
            }
            ContinuousGame::new(
                id,
                unit,
                vec![ActionSpace::finite_scalars(&[0.0])],
                1.0,
                horizon,
                Arc::new(|_, x, _| x[0]),
                Arc::new(move |y, x, _| {
                    let lo = x[0] * (1.0 - w);
                    if y[0] >= lo && y[0] <= lo + w {
                        1.0 / w
                    } else {
                        0.0
                    }
                }),
            )?
            .with_cell_mass(Arc::new(move |region, x, _| {
                let lo = x[0] * (1.0 - w);
                let overlap = region.upper[0].min(lo + w) - region.lower[0].max(lo);
                overlap.max(0.0) / w
            }))
        }
        "zs-mp" => ContinuousGame::new(
            id,
            unit,
            vec![bits.clone(), bits],
            1.0,
            horizon,
            Arc::new(|i, _, a| {
                let c = if a.scalar(0) == a.scalar(1) {
                    1.0
                } else {
                    -1.0
                };
                if i == 0 {
                    c
                } else {
                    -c
                }
            }),
            Arc::new(|_, _, _| 1.0),
        )?,
        _ => unreachable!("registry and builder out of sync for `{id}`"),
    };
    Ok(game)
}

fn positive(v: f64, name: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!(
            "parameter `{name}` must be positive, got {v}"
        )))
    }
}

/// Inspection game with state-dependent stakes: player 1 wants to match
/// player 2's action, player 2 wants to mismatch, plus a small state cost.
fn tg_smooth_cost(i: usize, x: &[f64], a: &JointAction) -> f64 {
    let (x, a1, a2) = (x[0], a.scalar(0), a.scalar(1));
    let miss = a1 != a2;
    if i == 0 {
        let stake = if miss && a2 == 1.0 {
            0.4 + 0.4 * x
        } else if miss {
            0.8 - 0.4 * x
        } else {
            0.0
        };
        0.2 * (x - 0.25).powi(2) + stake
    } else {
        let stake = if miss {
            0.0
        } else if a2 == 0.0 {
            0.3 + 0.5 * x
        } else {
            0.7 - 0.3 * x
        };
        0.2 * (x - 0.75).powi(2) + stake
    }
}

// Cost tables indexed [half][a1][a2] and probability of landing in the right half.
const PC_COST: [[[[f64; 2]; 2]; 2]; 2] = [
    // player 1
    [[[1.0, 3.0], [0.0, 2.0]], [[0.0, 2.0], [2.0, 1.0]]],
    // player 2
    [[[1.0, 0.0], [3.0, 2.0]], [[0.0, 2.0], [2.0, 1.0]]],
];
const PC_TO_RIGHT: [[[f64; 2]; 2]; 2] = [[[0.2, 0.5], [0.6, 0.9]], [[0.3, 0.6], [0.4, 0.8]]];

fn half(x: f64) -> usize {
    usize::from(x >= 0.5)
}

fn bit(v: f64) -> usize {
    usize::from(v >= 0.5)
}

fn piecewise_constant(horizon: Horizon) -> Result<ContinuousGame> {
    let bits = ActionSpace::finite_scalars(&[0.0, 1.0]);
    let right_prob =
        |x: &[f64], a: &JointAction| PC_TO_RIGHT[half(x[0])][bit(a.scalar(0))][bit(a.scalar(1))];
    let game = ContinuousGame::new(
        "pc-2p-lossless",
        AxisBox::unit(1),
        vec![bits.clone(), bits],
        3.0,
        horizon,
        Arc::new(|i, x, a| PC_COST[i][half(x[0])][bit(a.scalar(0))][bit(a.scalar(1))]),
        Arc::new(move |y, x, a| {
            let q = right_prob(x, a);
            2.0 * if y[0] >= 0.5 { q } else { 1.0 - q }
        }),
    )?;
    Ok(game.with_cell_mass(Arc::new(move |region, x, a| {
        let q = right_prob(x, a);
        let (lo, hi) = (region.lower[0], region.upper[0]);
        let left = (hi.min(0.5) - lo.max(0.0)).max(0.0);
        let right = (hi.min(1.0) - lo.max(0.5)).max(0.0);
        2.0 * ((1.0 - q) * left + q * right)
    })))
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / SQRT_2))
}

pub fn normal_pdf(y: f64, mean: f64, sigma: f64) -> f64 {
    let z = (y - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Normal density restricted to `[lo, hi]` and renormalized.
pub fn truncated_normal_pdf(y: f64, mean: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if y < lo || y > hi {
        return 0.0;
    }
    let z = normal_cdf((hi - mean) / sigma) - normal_cdf((lo - mean) / sigma);
    normal_pdf(y, mean, sigma) / z
}
