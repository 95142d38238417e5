//! JSON configuration schema. Unknown keys are rejected at every level.

use std::path::PathBuf;

use nldiff_core::expr::{Expr, Var};
use nldiff_core::hjb::{BoundaryMode, DtPolicy, GridSpec};
use nldiff_core::model::{CheckOptions, Condition, ControlSet, ControlSpec, DEFAULT_CONTROL_NODES};
use nldiff_core::sde::Policy;
use nldiff_core::terminal::Terminal;
use nldiff_core::verify::{CheckRequest, McParams, Tolerances};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_CHECK_SAMPLES: usize = 201;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub control: ControlBlock,
    pub grid: Option<GridBlock>,
    pub terminal: Option<TerminalBlock>,
    pub mc: Option<McBlock>,
    pub verify: Option<VerifyBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBlock {
    pub f_values: Option<Vec<f64>>,
    pub f_interval: Option<IntervalBlock>,
    pub b_expr: String,
    pub a_expr: String,
    #[serde(default)]
    pub conditions: Vec<Condition>,
    pub check_samples: Option<SampleBlock>,
    pub eps_cvx: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalBlock {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_control_nodes")]
    pub n: usize,
}

fn default_control_nodes() -> usize {
    DEFAULT_CONTROL_NODES
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBlock {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub horizon: f64,
    /// Fraction of the monotonicity bound used by the automatic step.
    pub cfl_safety: Option<f64>,
    /// Fixed time step; must respect the monotonicity bound.
    pub dt: Option<f64>,
    #[serde(default)]
    pub boundary: BoundaryMode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalBlock {
    pub builtin: Option<Builtin>,
    pub expr: Option<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Square,
    NegSquare,
    Abs,
    Tanh,
    Identity,
    IndicatorLeq(f64),
    Constant(f64),
    ExpCapped(f64),
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    /// Policy extracted from the solve of the configured terminal.
    #[default]
    Feedback,
    ExtremalAStar,
    ExtremalBStar,
    Constant(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub x0: f64,
    /// Defaults to the grid horizon.
    pub horizon: Option<f64>,
    pub n_steps: usize,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: PolicyChoice,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    pub checks: Vec<CheckItem>,
    pub tol_pde: Option<f64>,
    pub tol_mc_bias: Option<f64>,
}

/// A bare check id, or an object tagged by `"check"` with parameters.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum CheckItem {
    Id(CheckId),
    Entry(CheckEntry),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    Semigroup,
    LinearizationConvex,
    LinearizationIncreasing,
    Smoothing,
    SelectionAttains,
    MomentScaling,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckEntry {
    Semigroup {
        s: Option<f64>,
        t: Option<f64>,
    },
    LinearizationConvex,
    LinearizationIncreasing,
    Smoothing {
        t: Option<f64>,
        coarse_nx: Option<usize>,
    },
    SelectionAttains,
    MomentScaling {
        policy: Option<PolicyChoice>,
        n_gaps: Option<usize>,
    },
}

impl From<CheckId> for CheckEntry {
    fn from(id: CheckId) -> Self {
        match id {
            CheckId::Semigroup => CheckEntry::Semigroup { s: None, t: None },
            CheckId::LinearizationConvex => CheckEntry::LinearizationConvex,
            CheckId::LinearizationIncreasing => CheckEntry::LinearizationIncreasing,
            CheckId::Smoothing => CheckEntry::Smoothing {
                t: None,
                coarse_nx: None,
            },
            CheckId::SelectionAttains => CheckEntry::SelectionAttains,
            CheckId::MomentScaling => CheckEntry::MomentScaling {
                policy: None,
                n_gaps: None,
            },
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub value_csv: Option<PathBuf>,
    pub value_json: Option<PathBuf>,
    pub policy_csv: Option<PathBuf>,
    pub linear_csv: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    pub ensemble_csv: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn spec(&self) -> Result<ControlSpec, CliError> {
        let c = &self.control;
        let set = match (&c.f_values, &c.f_interval) {
            (Some(values), None) => ControlSet::Points(values.clone()),
            (None, Some(i)) => ControlSet::Interval {
                lo: i.lo,
                hi: i.hi,
                n: i.n,
            },
            _ => {
                return Err(CliError::Config(
                    "control: give exactly one of `f_values` and `f_interval`".into(),
                ))
            }
        };
        Ok(ControlSpec::from_strs(
            set,
            &c.b_expr,
            &c.a_expr,
            c.conditions.iter().copied(),
        )?)
    }

    pub fn check_options(&self) -> CheckOptions {
        CheckOptions {
            eps_cvx: self.control.eps_cvx,
        }
    }

    /// Sampling window for the condition checks: explicit, else the grid
    /// bounds, else `[-10, 10]`.
    pub fn check_samples(&self) -> SampleBlock {
        if let Some(s) = self.control.check_samples {
            return s;
        }
        match &self.grid {
            Some(g) => SampleBlock {
                x_min: g.x_min,
                x_max: g.x_max,
                n: DEFAULT_CHECK_SAMPLES,
            },
            None => SampleBlock {
                x_min: -10.0,
                x_max: 10.0,
                n: DEFAULT_CHECK_SAMPLES,
            },
        }
    }

    pub fn grid(&self, resolution: Option<usize>) -> Result<GridSpec, CliError> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| CliError::Config("missing `grid` block".into()))?;
        let dt_policy = match (g.cfl_safety, g.dt) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "grid: `cfl_safety` and `dt` are mutually exclusive".into(),
                ))
            }
            (_, Some(dt)) => DtPolicy::Fixed { dt },
            (safety, None) => DtPolicy::AutoCfl {
                safety: safety.unwrap_or(0.9),
            },
        };
        let grid = GridSpec {
            x_min: g.x_min,
            x_max: g.x_max,
            nx: resolution.unwrap_or(g.nx),
            horizon: g.horizon,
            dt_policy,
            boundary_mode: g.boundary,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn terminal(&self) -> Result<Terminal, CliError> {
        let t = self
            .terminal
            .as_ref()
            .ok_or_else(|| CliError::Config("missing `terminal` block".into()))?;
        match (t.builtin, &t.expr) {
            (Some(b), None) => Ok(match b {
                Builtin::Square => Terminal::Square,
                Builtin::NegSquare => Terminal::NegSquare,
                Builtin::Abs => Terminal::Abs,
                Builtin::Tanh => Terminal::Tanh,
                Builtin::Identity => Terminal::Identity,
                Builtin::IndicatorLeq(c) => Terminal::IndicatorLeq(c),
                Builtin::Constant(c) => Terminal::Constant(c),
                Builtin::ExpCapped(c) => Terminal::ExpCapped(c),
            }),
            (None, Some(src)) => {
                let expr = Expr::parse(src).map_err(nldiff_core::Error::from)?;
                if expr.uses(Var::F) {
                    return Err(CliError::Config(
                        "terminal: the expression may only use `x`".into(),
                    ));
                }
                Ok(Terminal::Expr(expr))
            }
            _ => Err(CliError::Config(
                "terminal: give exactly one of `builtin` and `expr`".into(),
            )),
        }
    }

    pub fn mc(&self) -> Result<&McBlock, CliError> {
        self.mc
            .as_ref()
            .ok_or_else(|| CliError::Config("missing `mc` block".into()))
    }

    pub fn mc_params(&self, seed: Option<u64>) -> Result<McParams, CliError> {
        let mc = self.mc()?;
        Ok(McParams {
            x0: mc.x0,
            n_steps: mc.n_steps,
            n_paths: mc.n_paths,
            seed: seed.unwrap_or(mc.seed),
        })
    }

    pub fn tolerances(&self) -> Tolerances {
        let mut tol = Tolerances::default();
        if let Some(v) = &self.verify {
            if let Some(p) = v.tol_pde {
                tol.pde = p;
            }
            if let Some(m) = v.tol_mc_bias {
                tol.mc_bias = m;
            }
        }
        tol
    }

    /// Configured checks, or every check with default parameters.
    pub fn check_entries(&self) -> Vec<CheckEntry> {
        match &self.verify {
            Some(v) => v
                .checks
                .iter()
                .map(|item| match item {
                    CheckItem::Id(id) => CheckEntry::from(*id),
                    CheckItem::Entry(e) => e.clone(),
                })
                .collect(),
            None => [
                CheckId::Semigroup,
                CheckId::LinearizationConvex,
                CheckId::LinearizationIncreasing,
                CheckId::Smoothing,
                CheckId::SelectionAttains,
                CheckId::MomentScaling,
            ]
            .into_iter()
            .map(CheckEntry::from)
            .collect(),
        }
    }
}

/// Resolves a check entry against the run grid, filling defaults.
pub fn check_request(
    entry: &CheckEntry,
    grid: &GridSpec,
    policy: impl FnOnce(&PolicyChoice) -> Result<Policy, CliError>,
) -> Result<CheckRequest, CliError> {
    Ok(match entry {
        CheckEntry::Semigroup { s, t } => CheckRequest::Semigroup {
            s: s.unwrap_or(grid.horizon / 2.0),
            t: t.unwrap_or(grid.horizon / 2.0),
        },
        CheckEntry::LinearizationConvex => CheckRequest::LinearizationConvex,
        CheckEntry::LinearizationIncreasing => CheckRequest::LinearizationIncreasing,
        CheckEntry::Smoothing { t, coarse_nx } => CheckRequest::Smoothing {
            t: t.unwrap_or(grid.horizon.min(0.25)),
            coarse_nx: coarse_nx.unwrap_or((grid.nx - 1) / 2 + 1),
        },
        CheckEntry::SelectionAttains => CheckRequest::SelectionAttains,
        CheckEntry::MomentScaling {
            policy: choice,
            n_gaps,
        } => CheckRequest::MomentScaling {
            policy: policy(choice.as_ref().unwrap_or(&PolicyChoice::ExtremalAStar))?,
            n_gaps: n_gaps.unwrap_or(6),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const G_HEAT: &str = r#"{
        "control": {"f_interval": {"lo": 1, "hi": 4}, "b_expr": "0", "a_expr": "f",
                    "conditions": ["zero_drift", "ellipticity"]},
        "grid": {"x_min": -10, "x_max": 10, "nx": 401, "horizon": 1},
        "terminal": {"builtin": "square"},
        "mc": {"x0": 0, "n_steps": 64, "n_paths": 1000, "seed": 9},
        "verify": {"checks": ["semigroup", {"check": "smoothing", "t": 0.5},
                              {"check": "moment_scaling", "policy": {"constant": 2.0}}]}
    }"#;

    #[test]
    fn full_config_round_trip() {
        let cfg = Config::parse(G_HEAT).unwrap();
        let spec = cfg.spec().unwrap();
        assert_eq!(spec.f_values().len(), DEFAULT_CONTROL_NODES);
        assert!(spec.declares(Condition::ZeroDrift));
        let grid = cfg.grid(Some(201)).unwrap();
        assert_eq!(grid.nx, 201);
        assert_eq!(grid.dt_policy, DtPolicy::AutoCfl { safety: 0.9 });
        assert_eq!(cfg.terminal().unwrap(), Terminal::Square);
        assert_eq!(cfg.mc_params(Some(3)).unwrap().seed, 3);
        assert_eq!(cfg.mc_params(None).unwrap().seed, 9);
        let entries = cfg.check_entries();
        assert_eq!(entries.len(), 3);
        let req = check_request(&entries[1], &grid, |_| unreachable!()).unwrap();
        assert_eq!(
            req,
            CheckRequest::Smoothing {
                t: 0.5,
                coarse_nx: 101
            }
        );
        let req = check_request(&entries[2], &grid, |p| match p {
            PolicyChoice::Constant(f) => Ok(Policy::Constant(*f)),
            _ => unreachable!(),
        })
        .unwrap();
        assert_eq!(
            req,
            CheckRequest::MomentScaling {
                policy: Policy::Constant(2.0),
                n_gaps: 6
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            r#"{"control": {"f_values": [1], "b_expr": "0", "a_expr": "1", "colour": 1}}"#,
            r#"{"control": {"f_values": [1], "b_expr": "0", "a_expr": "1"}, "extra": {}}"#,
            r#"{"control": {"f_values": [1], "b_expr": "0", "a_expr": "1"},
                "grid": {"x_min": 0, "x_max": 1, "nx": 5, "horizon": 1, "nt": 3}}"#,
        ] {
            assert!(
                matches!(Config::parse(bad), Err(CliError::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn block_level_validation() {
        let both = Config::parse(
            r#"{"control": {"f_values": [1], "f_interval": {"lo": 0, "hi": 1},
                            "b_expr": "0", "a_expr": "1"}}"#,
        )
        .unwrap();
        assert!(matches!(both.spec(), Err(CliError::Config(_))));
        let f_terminal = Config::parse(
            r#"{"control": {"f_values": [1], "b_expr": "0", "a_expr": "1"},
                "terminal": {"expr": "x + f"}}"#,
        )
        .unwrap();
        assert!(matches!(f_terminal.terminal(), Err(CliError::Config(_))));
        let syntax =
            Config::parse(r#"{"control": {"f_values": [1], "b_expr": "0", "a_expr": "2*("}}"#)
                .unwrap();
        match syntax.spec() {
            Err(CliError::Core(e)) => assert_eq!(e.kind(), "SyntaxError"),
            other => panic!("{other:?}"),
        }
        let indicator = Config::parse(
            r#"{"control": {"f_values": [1], "b_expr": "0", "a_expr": "1"},
                "terminal": {"builtin": {"indicator_leq": 0.5}}}"#,
        )
        .unwrap();
        assert_eq!(indicator.terminal().unwrap(), Terminal::IndicatorLeq(0.5));
    }
}
