//! Euler–Maruyama simulation of controlled diffusions
//!
//! ```text
//! Y_{k+1} = Y_k + b(f_k, Y_k) Δt + sqrt(a(f_k, Y_k) Δt) ξ_k
//! ```
//!
//! under a constant control, a feedback table or the extremal coefficients
//! `a*`, `b*`. Path `p` draws its normals from [`PathStream::new`]`(seed, p)`,
//! so ensembles replay exactly and two policies simulated with one seed share
//! their noise.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::EvalError;
use crate::field::PolicyField;
use crate::hjb::nearest_index;
use crate::model::{Condition, ControlSpec};
use crate::rng::PathStream;
use crate::terminal::Terminal;

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Constant(f64),
    /// Nearest-node lookup in `(t, x)`.
    Feedback(PolicyField),
    /// Zero drift, variance `a*(x)`.
    ExtremalAStar,
    /// Drift `b*(x)`, variance `a*(x)`.
    ExtremalBStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimParams {
    pub x0: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep every path, not just its endpoint.
    pub keep_paths: bool,
}

impl SimParams {
    pub fn new(x0: f64, horizon: f64, n_steps: usize, n_paths: usize, seed: u64) -> Self {
        SimParams {
            x0,
            horizon,
            n_steps,
            n_paths,
            seed,
            keep_paths: false,
        }
    }

    pub fn with_paths(mut self) -> Self {
        self.keep_paths = true;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub params: SimParams,
    pub terminal: Vec<f64>,
    /// `paths[p][k]` is the state of path `p` after `k` steps.
    pub paths: Option<Vec<Vec<f64>>>,
}

impl PathEnsemble {
    /// One terminal value per line, in path order.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        for v in &self.terminal {
            w.write_record([v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

enum Coefficients<'a> {
    Fixed(f64, f64),
    Control {
        spec: &'a ControlSpec,
        f: f64,
    },
    Feedback {
        spec: &'a ControlSpec,
        // control index per (time row, node)
        table: Vec<Vec<usize>>,
        row_for_step: Vec<usize>,
        x_first: f64,
        dx: f64,
        // (b, a) per control index when they ignore the state
        cached: Option<Vec<(f64, f64)>>,
    },
    AStar {
        spec: &'a ControlSpec,
        cached: Option<f64>,
    },
    BStar {
        spec: &'a ControlSpec,
        cached: Option<(f64, f64)>,
    },
}

impl<'a> Coefficients<'a> {
    fn new(spec: &'a ControlSpec, policy: &Policy, params: &SimParams) -> Result<Self> {
        let state_free = !spec.depends_on_state();
        Ok(match policy {
            Policy::Constant(f) => {
                if !spec.f_values().contains(f) {
                    return Err(Error::InvalidPolicy(format!("control {f} is not in F")));
                }
                if state_free {
                    Coefficients::Fixed(spec.drift(*f, 0.0)?, spec.variance(*f, 0.0)?)
                } else {
                    Coefficients::Control { spec, f: *f }
                }
            }
            Policy::Feedback(field) => {
                let f_values = spec.f_values();
                if field.xs.len() < 2 || field.times.is_empty() {
                    return Err(Error::InvalidPolicy("feedback table is too small".into()));
                }
                if field.f_star.len() != field.times.len()
                    || field.f_star.iter().any(|r| r.len() != field.xs.len())
                {
                    return Err(Error::InvalidPolicy("feedback table is ragged".into()));
                }
                let table = field
                    .f_star
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|f| {
                                f_values.binary_search_by(|v| v.total_cmp(f)).map_err(|_| {
                                    Error::InvalidPolicy(format!("control {f} is not in F"))
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let dt = params.dt();
                let row_for_step = (0..params.n_steps)
                    .map(|k| nearest_index(&field.times, k as f64 * dt))
                    .collect();
                let n = field.xs.len();
                let cached = if state_free {
                    Some(
                        f_values
                            .iter()
                            .map(|&f| Ok((spec.drift(f, 0.0)?, spec.variance(f, 0.0)?)))
                            .collect::<Result<Vec<_>>>()?,
                    )
                } else {
                    None
                };
                Coefficients::Feedback {
                    spec,
                    table,
                    row_for_step,
                    x_first: field.xs[0],
                    dx: (field.xs[n - 1] - field.xs[0]) / (n - 1) as f64,
                    cached,
                }
            }
            Policy::ExtremalAStar => Coefficients::AStar {
                spec,
                cached: if state_free {
                    Some(spec.a_star(0.0)?)
                } else {
                    None
                },
            },
            Policy::ExtremalBStar => Coefficients::BStar {
                spec,
                cached: if state_free {
                    Some((spec.b_star(0.0)?, spec.a_star(0.0)?))
                } else {
                    None
                },
            },
        })
    }

    #[inline]
    fn at(&self, step: usize, x: f64) -> Result<(f64, f64)> {
        match self {
            Coefficients::Fixed(b, a) => Ok((*b, *a)),
            Coefficients::Control { spec, f } => Ok((spec.drift(*f, x)?, spec.variance(*f, x)?)),
            Coefficients::Feedback {
                spec,
                table,
                row_for_step,
                x_first,
                dx,
                cached,
            } => {
                let row = &table[row_for_step[step]];
                let j = ((x - x_first) / dx)
                    .round()
                    .clamp(0.0, (row.len() - 1) as f64) as usize;
                let k = row[j];
                match cached {
                    Some(c) => Ok(c[k]),
                    None => {
                        let f = spec.f_values()[k];
                        Ok((spec.drift(f, x)?, spec.variance(f, x)?))
                    }
                }
            }
            Coefficients::AStar { spec, cached } => match cached {
                Some(a) => Ok((0.0, *a)),
                None => Ok((0.0, spec.a_star(x)?)),
            },
            Coefficients::BStar { spec, cached } => match cached {
                Some(c) => Ok(*c),
                None => Ok((spec.b_star(x)?, spec.a_star(x)?)),
            },
        }
    }
}

pub fn simulate(spec: &ControlSpec, policy: &Policy, params: &SimParams) -> Result<PathEnsemble> {
    if params.n_steps == 0 || params.n_paths == 0 {
        return Err(Error::Precondition(
            "n_steps and n_paths must be at least 1".into(),
        ));
    }
    if !(params.x0.is_finite() && params.horizon.is_finite() && params.horizon > 0.0) {
        return Err(Error::Precondition(
            "x0 must be finite and the horizon positive".into(),
        ));
    }
    let coeffs = Coefficients::new(spec, policy, params)?;
    let dt = params.dt();
    let run = |p: usize| -> Result<(f64, Option<Vec<f64>>)> {
        let mut stream = PathStream::new(params.seed, p as u64);
        let mut y = params.x0;
        let mut path = params.keep_paths.then(|| {
            let mut v = Vec::with_capacity(params.n_steps + 1);
            v.push(y);
            v
        });
        for k in 0..params.n_steps {
            let (b, a) = coeffs.at(k, y)?;
            if a < 0.0 {
                return Err(Error::NegativeVariance {
                    value: a,
                    x: y,
                    t: k as f64 * dt,
                });
            }
            let z = stream.next_normal();
            y += b * dt + (a * dt).sqrt() * z;
            if !y.is_finite() {
                return Err(Error::PathDiverged {
                    path: p,
                    step: k + 1,
                });
            }
            if let Some(path) = path.as_mut() {
                path.push(y);
            }
        }
        Ok((y, path))
    };
    let results: Vec<_> = (0..params.n_paths).into_par_iter().map(run).collect();
    let mut terminal = Vec::with_capacity(params.n_paths);
    let mut paths = params
        .keep_paths
        .then(|| Vec::with_capacity(params.n_paths));
    for r in results {
        let (y, path) = r?;
        terminal.push(y);
        if let (Some(all), Some(path)) = (paths.as_mut(), path) {
            all.push(path);
        }
    }
    Ok(PathEnsemble {
        params: *params,
        terminal,
        paths,
    })
}

/// Sample mean of `ψ(Y_T)` with standard error `s / sqrt(n)` (`s` the
/// `n − 1` sample deviation; zero for a single path).
pub fn estimate(
    ens: &PathEnsemble,
    psi: impl Fn(f64) -> Result<f64, EvalError>,
) -> Result<Estimate> {
    let values = ens
        .terminal
        .iter()
        .map(|&y| psi(y))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_stderr(&values))
}

pub fn mean_stderr(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Estimate { mean, stderr: 0.0 };
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Estimate {
        mean,
        stderr: (ss / (n - 1.0)).sqrt() / n.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexOrderRecord {
    pub psi: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub pass: bool,
}

/// `E^P ψ(X_T) ≤ E^{a*} ψ(X_T)` within three standard errors, using common
/// random numbers for both laws.
pub fn convex_order_check(
    spec: &ControlSpec,
    policy: &Policy,
    psi: &Terminal,
    params: &SimParams,
) -> Result<ConvexOrderRecord> {
    Ok(
        convex_order_checks(spec, policy, std::slice::from_ref(psi), params)?
            .pop()
            .expect("one record per terminal"),
    )
}

/// Several convex terminals against one pair of ensembles.
pub fn convex_order_checks(
    spec: &ControlSpec,
    policy: &Policy,
    psis: &[Terminal],
    params: &SimParams,
) -> Result<Vec<ConvexOrderRecord>> {
    if !spec.declares(Condition::ZeroDrift) {
        return Err(Error::HypothesisViolated(
            "convex order comparison needs zero_drift".into(),
        ));
    }
    let lhs_ens = simulate(spec, policy, params)?;
    let rhs_ens = simulate(spec, &Policy::ExtremalAStar, params)?;
    psis.iter()
        .map(|psi| {
            let lhs = estimate(&lhs_ens, |y| psi.eval(y))?;
            let rhs = estimate(&rhs_ens, |y| psi.eval(y))?;
            Ok(ConvexOrderRecord {
                psi: psi.to_string(),
                lhs,
                rhs,
                pass: lhs.mean <= rhs.mean + 3.0 * (lhs.stderr + rhs.stderr),
            })
        })
        .collect()
}
