//! Run configuration: one TOML file with a flat section per pipeline stage.

use std::collections::BTreeMap;
use std::fmt;

use markov_quant::model::{zoo, Horizon, QuadratureRule, Scheme};
use markov_quant::quantize::{Caps, QuadConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    NonzeroSumDiscounted,
    NonzeroSumFiniteHorizon,
    ZeroSum,
    Team,
}

impl Mode {
    pub fn is_discounted(self) -> bool {
        self != Mode::NonzeroSumFiniteHorizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeSection {
    /// the δ ladder, strictly decreasing
    pub deltas: Vec<f64>,
    #[serde(default = "default_cell_scheme")]
    pub cell_scheme: Scheme,
    #[serde(default = "default_cell_resolution")]
    pub cell_resolution: usize,
    #[serde(default = "default_kernel_scheme")]
    pub kernel_scheme: Scheme,
    #[serde(default = "default_kernel_resolution")]
    pub kernel_resolution: usize,
    #[serde(default = "default_max_states")]
    pub max_states: usize,
    #[serde(default = "default_max_entries")]
    pub max_tensor_entries: u64,
}

fn default_cell_scheme() -> Scheme {
    QuadConfig::default().cell.scheme
}
fn default_cell_resolution() -> usize {
    QuadConfig::default().cell.resolution
}
fn default_kernel_scheme() -> Scheme {
    QuadConfig::default().kernel.scheme
}
fn default_kernel_resolution() -> usize {
    QuadConfig::default().kernel.resolution
}
fn default_max_states() -> usize {
    Caps::default().max_states
}
fn default_max_entries() -> u64 {
    Caps::default().max_tensor_entries as u64
}

impl QuantizeSection {
    pub fn quad(&self) -> QuadConfig {
        QuadConfig {
            cell: QuadratureRule {
                scheme: self.cell_scheme,
                resolution: self.cell_resolution,
            },
            kernel: QuadratureRule {
                scheme: self.kernel_scheme,
                resolution: self.kernel_resolution,
            },
        }
    }

    pub fn caps(&self) -> Caps {
        Caps {
            max_states: self.max_states,
            max_tensor_entries: u128::from(self.max_tensor_entries),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    /// value-iteration tolerance (discounted modes)
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// stage-game equilibrium tolerance
    pub stage_tol: f64,
    /// restarts of the regret-search fallback
    pub budget: usize,
    pub seed: u64,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            damping: 0.5,
            stage_tol: 1e-10,
            budget: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub refine: usize,
    /// samples for the TV-modulus diagnostic; 0 skips it
    pub omega_samples: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            refine: 4,
            omega_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncateSection {
    /// truncation indices n, strictly increasing
    pub levels: Vec<usize>,
    #[serde(default = "one")]
    pub radius0: f64,
    #[serde(default = "one")]
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default = "default_annulus")]
    pub annulus_resolution: usize,
    /// box on which lifted values are tabulated for comparison across levels
    pub probe_lower: Vec<f64>,
    pub probe_upper: Vec<f64>,
    #[serde(default = "default_probe_points")]
    pub probe_points: usize,
}

fn one() -> f64 {
    1.0
}
fn default_annulus() -> usize {
    64
}
fn default_probe_points() -> usize {
    201
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub result: String,
    pub convergence: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: ".".into(),
            result: "result.json".into(),
            convergence: "convergence.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub quantize: QuantizeSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<TruncateSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// Invalid configuration, anchored to a line of the source when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let file = self.file.as_deref().unwrap_or("<config>");
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{file}:{l}:{c}: {}", self.message),
            (Some(l), None) => write!(f, "{file}:{l}: {}", self.message),
            _ => write!(f, "{file}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Byte span of the value at `path` (or of the section header when the key is absent).
fn locate(src: &str, path: &[&str]) -> Option<std::ops::Range<usize>> {
    use toml::de::{DeTable, DeValue};
    let root = DeTable::parse(src).ok()?;
    let mut table = root.get_ref();
    let mut span = None;
    for key in path {
        let (k, v) = table.get_key_value(*key)?;
        span = Some(if v.span().is_empty() {
            k.span()
        } else {
            v.span()
        });
        match v.get_ref() {
            DeValue::Table(t) => table = t,
            _ => break,
        }
    }
    span
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| {
            let (line, column) = match e.span() {
                Some(s) => {
                    let (l, c) = line_col(src, s.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ConfigError {
                file: None,
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.validate().map_err(|(path, message)| {
            let at = path
                .iter()
                .rev()
                .enumerate()
                .find_map(|(cut, _)| locate(src, &path[..path.len() - cut]));
            let (line, column) = match at {
                Some(s) => {
                    let (l, c) = line_col(src, s.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ConfigError {
                file: None,
                line,
                column,
                message,
            }
        })?;
        Ok(cfg)
    }

    /// The config as TOML; parses back to an equal value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn horizon(&self) -> Horizon {
        match (self.model.beta, self.model.horizon) {
            (Some(b), _) if self.model.mode.is_discounted() => Horizon::Discounted(b),
            (_, Some(t)) => Horizon::Finite(t),
            _ => unreachable!("validated config has a horizon"),
        }
    }

    fn validate(&self) -> Result<(), (Vec<&'static str>, String)> {
        let err = |path: &[&'static str], msg: String| Err((path.to_vec(), msg));
        let m = &self.model;
        let Some(info) = zoo::info(&m.id) else {
            return err(
                &["model", "id"],
                format!("unknown model id `{}` (see `mquant list-models`)", m.id),
            );
        };
        for key in m.params.keys() {
            if !info.params.iter().any(|(n, _, _)| n == key) {
                return err(
                    &["model", "params"],
                    format!("model `{}` has no parameter `{key}`", m.id),
                );
            }
        }
        if m.mode.is_discounted() {
            match m.beta {
                Some(b) if (0.0..1.0).contains(&b) => {}
                Some(b) => {
                    return err(
                        &["model", "beta"],
                        format!("beta must lie in [0, 1), got {b}"),
                    )
                }
                None => {
                    return err(
                        &["model", "mode"],
                        format!("mode {:?} needs `beta`", m.mode),
                    )
                }
            }
            if m.horizon.is_some() {
                return err(
                    &["model", "horizon"],
                    "`horizon` only applies to nonzero-sum-finite-horizon".into(),
                );
            }
        } else {
            match m.horizon {
                Some(t) if t >= 1 => {}
                Some(_) => return err(&["model", "horizon"], "horizon must be at least 1".into()),
                None => {
                    return err(
                        &["model", "mode"],
                        "finite-horizon mode needs `horizon`".into(),
                    )
                }
            }
            if m.beta.is_some() {
                return err(
                    &["model", "beta"],
                    "`beta` does not apply to nonzero-sum-finite-horizon".into(),
                );
            }
        }
        if m.mode == Mode::ZeroSum && info.players != 2 {
            return err(
                &["model", "mode"],
                format!(
                    "zero-sum mode needs a 2-player model, `{}` has {}",
                    m.id, info.players
                ),
            );
        }

        let q = &self.quantize;
        if q.deltas.is_empty() {
            return err(&["quantize", "deltas"], "delta ladder is empty".into());
        }
        if q.deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return err(
                &["quantize", "deltas"],
                "every delta must be positive".into(),
            );
        }
        if q.deltas.windows(2).any(|w| w[1] >= w[0]) {
            return err(
                &["quantize", "deltas"],
                "delta ladder must be strictly decreasing".into(),
            );
        }
        if q.cell_resolution == 0 {
            return err(
                &["quantize", "cell_resolution"],
                "resolution must be at least 1".into(),
            );
        }
        if q.kernel_resolution == 0 {
            return err(
                &["quantize", "kernel_resolution"],
                "resolution must be at least 1".into(),
            );
        }

        let s = &self.solve;
        if !(s.tol > 0.0) {
            return err(&["solve", "tol"], "tol must be positive".into());
        }
        if !(s.stage_tol > 0.0) {
            return err(&["solve", "stage_tol"], "stage_tol must be positive".into());
        }
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return err(&["solve", "damping"], "damping must lie in (0, 1]".into());
        }
        if s.max_iter == 0 {
            return err(&["solve", "max_iter"], "max_iter must be at least 1".into());
        }
        if self.verify.refine < 2 {
            return err(&["verify", "refine"], "refine must be at least 2".into());
        }

        match &self.truncate {
            None if !info.bounded => err(
                &["model", "id"],
                format!(
                    "model `{}` has an unbounded state space and needs a [truncate] section",
                    m.id
                ),
            ),
            None => Ok(()),
            Some(t) => {
                if t.levels.is_empty() || t.levels.contains(&0) {
                    return err(
                        &["truncate", "levels"],
                        "levels must be nonempty and start at 1 or later".into(),
                    );
                }
                if t.levels.windows(2).any(|w| w[1] <= w[0]) {
                    return err(
                        &["truncate", "levels"],
                        "levels must be strictly increasing".into(),
                    );
                }
                if !(t.radius0 > 0.0) {
                    return err(&["truncate", "radius0"], "radius0 must be positive".into());
                }
                if !(t.step > 0.0) {
                    return err(&["truncate", "step"], "step must be positive".into());
                }
                if t.probe_lower.len() != t.probe_upper.len()
                    || t.probe_lower.is_empty()
                    || t.probe_lower
                        .iter()
                        .zip(&t.probe_upper)
                        .any(|(l, u)| !(l < u))
                {
                    return err(
                        &["truncate", "probe_upper"],
                        "probe box needs lower < upper in every dimension".into(),
                    );
                }
                if t.probe_points < 2 {
                    return err(
                        &["truncate", "probe_points"],
                        "probe_points must be at least 2".into(),
                    );
                }
                if t.annulus_resolution < 2 {
                    return err(
                        &["truncate", "annulus_resolution"],
                        "annulus_resolution must be at least 2".into(),
                    );
                }
                Ok(())
            }
        }
    }
}
