//! The quantize → solve → certify pipeline over a δ ladder (and truncation levels).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use markov_quant::model::{zoo, AxisBox, ContinuousGame, Horizon};
use markov_quant::quantize::{build_finite_game, FiniteGame, Quantization};
use markov_quant::solve::{
    backward_induction_nash, nash_value_iteration, shapley_iteration, team_value_iteration,
    NashViOptions, SolveMethod, SolveReport, StageOptions,
};
use markov_quant::stage_nash::RegretSearch;
use markov_quant::truncate::{
    build_truncated_game, build_truncation, lift_from_truncation, Ladder,
};
use markov_quant::verify::{
    certify_epsilon, fixed_point_residual, CellLookup, CertifyOptions, ExtendedPolicyProfile,
    Refinable,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Mode, RunConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config at {0}")]
    Config(ConfigError),
    #[error("{0}")]
    Core(#[from] markov_quant::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    /// 2 for configuration problems, 3 for resource caps, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Core(markov_quant::Error::Config(_)) => 2,
            RunError::Core(markov_quant::Error::Resource { .. }) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub method: SolveMethod,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// `‖T̂Ĵ − Ĵ‖` of the extended operator (discounted modes)
    pub fixed_point_residual: Option<f64>,
    pub max_stage_gap: f64,
    pub dynamic_gaps: Vec<f64>,
    pub within_tol: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub k_refined: usize,
    pub eps: Vec<f64>,
    pub omega_hat: Option<f64>,
    pub max_row_defect: f64,
    pub max_row_defect_refined: f64,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRecord {
    pub n: usize,
    pub compact: AxisBox,
    /// largest one-step mass into the pseudo-state from a cell of `K_n`
    pub max_leak: f64,
    /// lifted time-0 values per player at the probe points
    pub probe_values: Vec<Vec<f64>>,
    /// max-norm change of `probe_values` from the previous level at the same delta
    pub probe_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungRecord {
    pub delta: f64,
    pub refine: usize,
    pub k_states: usize,
    pub num_joint_actions: usize,
    pub truncation: Option<TruncationRecord>,
    pub solve: SolveSummary,
    /// time-0 values, `[player][state]`
    pub values: Vec<Vec<f64>>,
    /// player 1's value per state (zero-sum mode)
    pub game_value: Option<Vec<f64>>,
    pub certificate: CertificateRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungTiming {
    pub quantize_seconds: f64,
    pub solve_seconds: f64,
    pub refine_seconds: f64,
    pub evaluate_seconds: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub rungs: Vec<RungTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub version: String,
    pub zoo_version: String,
    /// the run config as TOML
    pub config: String,
    pub completed: bool,
    pub error: Option<String>,
    pub rungs: Vec<RungRecord>,
    /// wall-clock figures; everything outside this field is reproducible
    pub timing: Timing,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        markov_quant::json::to_string(self).expect("result serializes")
    }

    /// `convergence.csv`: one row per rung.
    pub fn to_csv(&self) -> String {
        let players = self.rungs.first().map_or(0, |r| r.certificate.eps.len());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["delta", "refine", "k_states"].map(String::from).to_vec();
        header.extend((1..=players).map(|i| format!("eps_{i}")));
        header.extend(["residual", "omega_hat", "seconds"].map(String::from));
        w.write_record(&header).expect("in-memory csv");
        for (r, t) in self.rungs.iter().zip(&self.timing.rungs) {
            let sci = |v: f64| format!("{v:e}");
            let mut row = vec![
                r.delta.to_string(),
                r.refine.to_string(),
                r.k_states.to_string(),
            ];
            row.extend(r.certificate.eps.iter().copied().map(sci));
            row.push(sci(r
                .solve
                .fixed_point_residual
                .unwrap_or(r.solve.residual)));
            row.push(r.certificate.omega_hat.map_or(String::new(), sci));
            row.push(format!("{:.3}", t.seconds));
            w.write_record(&row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }
}

struct Rung {
    record: RungRecord,
    timing: RungTiming,
    /// lifted values at the probe points (truncated runs)
    probe: Option<Vec<Vec<f64>>>,
}

fn zero_sum_check(g: &FiniteGame) -> Result<(), markov_quant::Error> {
    let worst = g.costs[0]
        .iter()
        .flatten()
        .zip(g.costs[1].iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a + b).abs()));
    if worst > 1e-12 {
        return Err(markov_quant::Error::Config(format!(
            "zero-sum mode needs c^2 = -c^1; the quantized costs differ by {worst:e}"
        )));
    }
    Ok(())
}

fn solve(cfg: &RunConfig, g: &FiniteGame) -> Result<SolveReport, markov_quant::Error> {
    let s = &cfg.solve;
    let stage = StageOptions {
        tol: s.stage_tol,
        seed: s.seed,
        search: RegretSearch::default(),
        max_candidates: StageOptions::default().max_candidates,
    };
    match (cfg.model.mode, cfg.horizon()) {
        (Mode::NonzeroSumFiniteHorizon, Horizon::Finite(t)) => {
            backward_induction_nash(g, t, &stage)
        }
        (Mode::NonzeroSumDiscounted, Horizon::Discounted(beta)) => {
            let opts = NashViOptions {
                tol: s.tol,
                max_iter: s.max_iter,
                damping: s.damping,
                fallback_budget: s.budget,
                stage,
                ..NashViOptions::default()
            };
            nash_value_iteration(g, beta, &opts)
        }
        (Mode::ZeroSum, Horizon::Discounted(beta)) => {
            zero_sum_check(g)?;
            shapley_iteration(g, beta, s.tol)
        }
        (Mode::Team, Horizon::Discounted(beta)) => team_value_iteration(g, beta, s.tol),
        _ => unreachable!("mode and horizon validated together"),
    }
}

fn rung<M: Refinable>(
    cfg: &RunConfig,
    m: &M,
    quantize_start: Instant,
) -> Result<(Rung, ExtendedPolicyProfile, FiniteGame), markov_quant::Error> {
    let g = build_finite_game(m)?;
    let quantize_seconds = quantize_start.elapsed().as_secs_f64();
    let start = Instant::now();
    let report = solve(cfg, &g)?;
    let fpr = match cfg.horizon() {
        Horizon::Discounted(beta) => Some(fixed_point_residual(m, &report, beta)?),
        Horizon::Finite(_) => None,
    };
    let solve_seconds = start.elapsed().as_secs_f64();
    let ext = ExtendedPolicyProfile::new(report.profile.clone(), CellLookup::of_model(m))?;
    let opts = CertifyOptions {
        omega_samples: cfg.verify.omega_samples,
        seed: cfg.solve.seed,
    };
    let cert = certify_epsilon(m, &ext, cfg.verify.refine, &opts)?;
    let values: Vec<Vec<f64>> = (0..g.num_players())
        .map(|i| report.values.initial(i).to_vec())
        .collect();
    let record = RungRecord {
        delta: m.state_net().delta,
        refine: cfg.verify.refine,
        k_states: g.k,
        num_joint_actions: g.num_joint(),
        truncation: None,
        solve: SolveSummary {
            method: report.method,
            iterations: report.iterations,
            converged: report.converged,
            residual: report.residual,
            fixed_point_residual: fpr,
            max_stage_gap: report.max_stage_gap(),
            dynamic_gaps: report.dynamic_gaps.clone(),
            within_tol: report.within_tol,
        },
        game_value: (cfg.model.mode == Mode::ZeroSum).then(|| values[0].clone()),
        values,
        certificate: CertificateRecord {
            k_refined: cert.k_refined,
            eps: cert.eps,
            omega_hat: cert.omega_hat,
            max_row_defect: g.provenance.max_row_defect,
            max_row_defect_refined: cert.max_row_defect_refined,
            reference: cert.reference,
        },
    };
    let timing = RungTiming {
        quantize_seconds,
        solve_seconds,
        refine_seconds: cert.timings.refine_seconds,
        evaluate_seconds: cert.timings.evaluate_seconds,
        seconds: quantize_start.elapsed().as_secs_f64(),
    };
    Ok((
        Rung {
            record,
            timing,
            probe: None,
        },
        ext,
        g,
    ))
}

/// Uniform grid of `points` per dimension on the probe box.
fn probe_points(lower: &[f64], upper: &[f64], points: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| {
            (0..points)
                .map(|k| l + (u - l) * k as f64 / (points - 1) as f64)
                .collect()
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

fn run_rungs(
    cfg: &RunConfig,
    game: &ContinuousGame,
    rungs: &mut Vec<Rung>,
) -> Result<(), markov_quant::Error> {
    let quad = cfg.quantize.quad();
    let caps = cfg.quantize.caps();
    let Some(t) = &cfg.truncate else {
        for &delta in &cfg.quantize.deltas {
            let start = Instant::now();
            let q = Quantization::new(game, delta, quad, caps)?;
            rungs.push(rung(cfg, &q, start)?.0);
        }
        return Ok(());
    };
    let ladder = Ladder {
        center: t
            .center
            .clone()
            .unwrap_or_else(|| vec![0.0; game.state_space.dim()]),
        radius0: t.radius0,
        step: t.step,
        annulus_resolution: t.annulus_resolution,
    };
    if t.probe_lower.len() != game.state_space.dim() {
        return Err(markov_quant::Error::Config(
            "probe box has the wrong dimension".into(),
        ));
    }
    let probes = probe_points(&t.probe_lower, &t.probe_upper, t.probe_points);
    for &n in &t.levels {
        let trunc = build_truncation(game, n, &ladder)?;
        let compact = trunc.compact.clone();
        let tg = build_truncated_game(game, trunc)?;
        for &delta in &cfg.quantize.deltas {
            let start = Instant::now();
            let q = tg.quantize(delta, quad, caps)?;
            let (mut r, ext, g) = rung(cfg, &q, start)?;
            let mut table = Vec::with_capacity(g.num_players());
            for v in &r.record.values {
                let (_, lifted) = lift_from_truncation(&q, ext.profile.clone(), v.clone())?;
                table.push(
                    probes
                        .iter()
                        .map(|z| lifted.at(z))
                        .collect::<Result<Vec<f64>, _>>()?,
                );
            }
            let previous = rungs
                .iter()
                .rev()
                .find(|p| p.record.delta == delta && p.probe.is_some())
                .and_then(|p| p.probe.as_ref());
            let probe_change = previous.map(|prev| {
                prev.iter()
                    .flatten()
                    .zip(table.iter().flatten())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            });
            r.record.truncation = Some(TruncationRecord {
                n,
                compact: compact.clone(),
                max_leak: q.max_leak(&g),
                probe_values: table.clone(),
                probe_change,
            });
            r.probe = Some(table);
            rungs.push(r);
        }
    }
    Ok(())
}

/// Runs every rung of `cfg`. On failure the rungs completed so far are kept
/// and the error is returned alongside them.
pub fn run(cfg: &RunConfig) -> (RunResult, Option<RunError>) {
    let start = Instant::now();
    let mut rungs = Vec::new();
    let outcome = zoo::build(&cfg.model.id, &cfg.model.params, cfg.horizon())
        .and_then(|game| run_rungs(cfg, &game, &mut rungs));
    let err = outcome.err().map(RunError::from);
    let result = RunResult {
        version: env!("CARGO_PKG_VERSION").to_string(),
        zoo_version: zoo::ZOO_VERSION.to_string(),
        config: cfg.to_toml(),
        completed: err.is_none(),
        error: err.as_ref().map(ToString::to_string),
        timing: Timing {
            total_seconds: start.elapsed().as_secs_f64(),
            rungs: rungs.iter().map(|r| r.timing.clone()).collect(),
        },
        rungs: rungs.into_iter().map(|r| r.record).collect(),
    };
    (result, err)
}

/// Writes `result.json` and `convergence.csv`; returns their paths.
pub fn write_artifacts(
    result: &RunResult,
    cfg: &RunConfig,
    dir: &Path,
) -> Result<(PathBuf, PathBuf), RunError> {
    let io = |e: std::io::Error, p: &Path| RunError::Io(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let json = dir.join(&cfg.output.result);
    let csv = dir.join(&cfg.output.convergence);
    fs::write(&json, result.to_json()).map_err(|e| io(e, &json))?;
    fs::write(&csv, result.to_csv()).map_err(|e| io(e, &csv))?;
    Ok((json, csv))
}

/// Overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Loads, runs and writes artifacts. Artifacts are written even when a rung fails.
pub fn run_file(path: &Path, overrides: &Overrides) -> Result<RunResult, RunError> {
    let src =
        fs::read_to_string(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&src).map_err(|mut e| {
        e.file = Some(path.display().to_string());
        RunError::Config(e)
    })?;
    if let Some(seed) = overrides.seed {
        cfg.solve.seed = seed;
    }
    let dir = match &overrides.out_dir {
        Some(d) => d.clone(),
        None => PathBuf::from(&cfg.output.dir),
    };
    let (result, err) = run(&cfg);
    write_artifacts(&result, &cfg, &dir)?;
    match err {
        Some(e) => Err(e),
        None => Ok(result),
    }
}
