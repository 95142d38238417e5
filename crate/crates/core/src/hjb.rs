//! Explicit monotone scheme for the terminal-value problem
//!
//! ```text
//! ∂_t v + max_f { b(f,x) ∂_x v + ½ a(f,x) ∂²_x v } = 0,   v(T, ·) = ψ
//! ```
//!
//! on a truncated interval. Each candidate control gets its own upwind first
//! difference (forward when `b ≥ 0`, backward otherwise) and the central
//! second difference; a node takes the largest candidate update. With
//! `dt ≤ dx² / (A_max + dx B_max)` every candidate update is a convex
//! combination of neighbouring values, so the sweep is monotone and
//! preserves constants.
//!
//! Truncation guidance: for values of interest near `x₀`, choose bounds with
//! `|x_min|, x_max ≥ |x₀| + 6 sqrt(A_max T) + B_max T`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldMeta, PolicyField, ValueField};
use crate::model::{linspace, ControlSpec};

pub const SCHEME_ID: &str = "explicit-upwind-bellman";

/// Below this many node-candidate evaluations per step the sweep stays
/// on the calling thread.
const PARALLEL_WORK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicy {
    AutoCfl { safety: f64 },
    Fixed { dt: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Ghost nodes by linear extrapolation: no second difference at the edge.
    #[default]
    LinearExtrapolation,
    /// Edge values held at the terminal data.
    DirichletFrozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub horizon: f64,
    pub dt_policy: DtPolicy,
    pub boundary_mode: BoundaryMode,
}

impl GridSpec {
    /// Auto-CFL grid with safety 0.9 and linear-extrapolation boundaries.
    pub fn new(x_min: f64, x_max: f64, nx: usize, horizon: f64) -> Self {
        GridSpec {
            x_min,
            x_max,
            nx,
            horizon,
            dt_policy: DtPolicy::AutoCfl { safety: 0.9 },
            boundary_mode: BoundaryMode::LinearExtrapolation,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_nx(mut self, nx: usize) -> Self {
        self.nx = nx;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max) {
            return Err(Error::InvalidGrid(format!(
                "bounds [{}, {}] are not a proper interval",
                self.x_min, self.x_max
            )));
        }
        if self.nx < 3 {
            return Err(Error::InvalidGrid(format!("nx = {} < 3", self.nx)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon {} must be positive",
                self.horizon
            )));
        }
        match self.dt_policy {
            DtPolicy::AutoCfl { safety } if !(safety > 0.0 && safety <= 1.0) => Err(
                Error::InvalidGrid(format!("CFL safety {safety} not in (0, 1]")),
            ),
            DtPolicy::Fixed { dt } if !(dt.is_finite() && dt > 0.0) => Err(Error::InvalidGrid(
                format!("fixed dt {dt} must be positive"),
            )),
            _ => Ok(()),
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        linspace(self.x_min, self.x_max, self.nx)
    }

    /// Indices of the middle half of the nodes.
    pub fn interior(&self) -> std::ops::Range<usize> {
        let q = self.nx / 4;
        q..self.nx - q
    }
}

/// `safety · dx² / (A_max + dx · B_max)`; infinite when both maxima vanish.
pub fn cfl_bound(a_max: f64, b_max: f64, dx: f64, safety: f64) -> f64 {
    let denom = a_max + dx * b_max;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        safety * dx * dx / denom
    }
}

/// Drift and variance sampled per candidate control and node.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    drift: Vec<Vec<f64>>,
    variance: Vec<Vec<f64>>,
}

impl CoefficientTable {
    pub fn from_spec(spec: &ControlSpec, xs: &[f64]) -> Result<Self> {
        let mut drift = Vec::new();
        let mut variance = Vec::new();
        for &f in spec.f_values() {
            drift.push(
                xs.iter()
                    .map(|&x| spec.drift(f, x))
                    .collect::<Result<Vec<_>>>()?,
            );
            variance.push(
                xs.iter()
                    .map(|&x| spec.variance(f, x))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Self::new(drift, variance, xs)
    }

    pub fn single(drift: Vec<f64>, variance: Vec<f64>, xs: &[f64]) -> Result<Self> {
        Self::new(vec![drift], vec![variance], xs)
    }

    fn new(drift: Vec<Vec<f64>>, variance: Vec<Vec<f64>>, xs: &[f64]) -> Result<Self> {
        for (k, row) in variance.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                if !a.is_finite() || !drift[k][j].is_finite() {
                    return Err(Error::NonFinite {
                        time_index: 0,
                        node: j,
                    });
                }
                if a < 0.0 {
                    return Err(Error::NegativeVariance {
                        value: a,
                        x: xs[j],
                        t: f64::NAN,
                    });
                }
            }
        }
        Ok(CoefficientTable { drift, variance })
    }

    pub fn a_max(&self) -> f64 {
        self.variance.iter().flatten().fold(0.0, |m, &a| m.max(a))
    }

    pub fn b_max(&self) -> f64 {
        self.drift
            .iter()
            .flatten()
            .fold(0.0, |m, &b| m.max(b.abs()))
    }

    pub fn n_controls(&self) -> usize {
        self.drift.len()
    }
}

fn dt_for_table(table: &CoefficientTable, grid: &GridSpec) -> Result<f64> {
    let dx = grid.dx();
    match grid.dt_policy {
        DtPolicy::AutoCfl { safety } => Ok(cfl_bound(table.a_max(), table.b_max(), dx, safety)),
        DtPolicy::Fixed { dt } => {
            let bound = cfl_bound(table.a_max(), table.b_max(), dx, 1.0);
            if dt > bound * (1.0 + 1e-12) {
                Err(Error::UnstableStep { dt, bound })
            } else {
                Ok(dt)
            }
        }
    }
}

/// Stable step for `spec` on `grid`: the CFL bound scaled by the safety
/// factor, or the validated fixed step.
pub fn cfl_dt(spec: &ControlSpec, grid: &GridSpec) -> Result<f64> {
    grid.validate()?;
    let table = CoefficientTable::from_spec(spec, &grid.xs())?;
    dt_for_table(&table, grid)
}

/// Uniform time levels: `steps = ceil(T / dt)`, effective step `T / steps`.
fn time_lattice(horizon: f64, dt: f64) -> (usize, f64) {
    let steps = if dt.is_finite() {
        ((horizon / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    } else {
        1
    };
    (steps, horizon / steps as f64)
}

struct Stencil<'a> {
    table: &'a CoefficientTable,
    dx: f64,
    dt: f64,
    boundary: BoundaryMode,
    frozen: &'a [f64],
}

impl Stencil<'_> {
    /// One backward step at node `j`: the best candidate value and its index.
    #[inline]
    fn update(&self, prev: &[f64], j: usize) -> (f64, usize) {
        let n = prev.len();
        let v = prev[j];
        let edge = j == 0 || j == n - 1;
        if edge && self.boundary == BoundaryMode::DirichletFrozen {
            return (self.frozen[j], 0);
        }
        let (d1_fwd, d1_bwd, d2) = if j == 0 {
            let d = (prev[1] - v) / self.dx;
            (d, d, 0.0)
        } else if j == n - 1 {
            let d = (v - prev[n - 2]) / self.dx;
            (d, d, 0.0)
        } else {
            let (vm, vp) = (prev[j - 1], prev[j + 1]);
            (
                (vp - v) / self.dx,
                (v - vm) / self.dx,
                (vp - 2.0 * v + vm) / (self.dx * self.dx),
            )
        };
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for k in 0..self.table.drift.len() {
            let b = self.table.drift[k][j];
            let a = self.table.variance[k][j];
            let d1 = if b >= 0.0 { d1_fwd } else { d1_bwd };
            let cand = v + self.dt * (b * d1 + 0.5 * a * d2);
            if cand > best {
                best = cand;
                arg = k;
            }
        }
        (best, arg)
    }

    fn step(&self, prev: &[f64], next: &mut [f64]) {
        let n = prev.len();
        if n * self.table.n_controls() >= PARALLEL_WORK {
            next.par_iter_mut()
                .enumerate()
                .with_min_len(64)
                .for_each(|(j, out)| *out = self.update(prev, j).0);
        } else {
            for (j, out) in next.iter_mut().enumerate() {
                *out = self.update(prev, j).0;
            }
        }
    }
}

/// Backward sweep on a prepared coefficient table.
pub fn solve_with_table(
    table: &CoefficientTable,
    grid: &GridSpec,
    terminal: &[f64],
) -> Result<ValueField> {
    grid.validate()?;
    let xs = grid.xs();
    if terminal.len() != xs.len() {
        return Err(Error::GridMismatch(format!(
            "terminal has {} samples, grid has {} nodes",
            terminal.len(),
            xs.len()
        )));
    }
    if let Some(j) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            time_index: 0,
            node: j,
        });
    }
    let cfl = dt_for_table(table, grid)?;
    let (steps, dt) = time_lattice(grid.horizon, cfl);
    let stencil = Stencil {
        table,
        dx: grid.dx(),
        dt,
        boundary: grid.boundary_mode,
        frozen: terminal,
    };
    let mut values = vec![vec![0.0; xs.len()]; steps + 1];
    values[steps].copy_from_slice(terminal);
    for i in (0..steps).rev() {
        let (head, tail) = values.split_at_mut(i + 1);
        stencil.step(&tail[0], &mut head[i]);
        if let Some(j) = head[i].iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                time_index: i,
                node: j,
            });
        }
    }
    let times = (0..=steps)
        .map(|i| {
            if i == steps {
                grid.horizon
            } else {
                i as f64 * dt
            }
        })
        .collect();
    Ok(ValueField {
        times,
        xs,
        values,
        meta: FieldMeta {
            scheme: SCHEME_ID.to_string(),
            dt,
            cfl_dt: cfl,
            boundary_mode: grid.boundary_mode,
            n_controls: table.n_controls(),
        },
    })
}

pub fn solve_nonlinear(
    spec: &ControlSpec,
    grid: &GridSpec,
    terminal: &[f64],
) -> Result<ValueField> {
    grid.validate()?;
    let table = CoefficientTable::from_spec(spec, &grid.xs())?;
    solve_with_table(&table, grid, terminal)
}

/// The same scheme for a single drift/variance pair.
pub fn solve_linear(
    drift: impl Fn(f64) -> f64,
    diffusion: impl Fn(f64) -> f64,
    grid: &GridSpec,
    terminal: &[f64],
) -> Result<ValueField> {
    grid.validate()?;
    let xs = grid.xs();
    let table = CoefficientTable::single(
        xs.iter().map(|&x| drift(x)).collect(),
        xs.iter().map(|&x| diffusion(x)).collect(),
        &xs,
    )?;
    solve_with_table(&table, grid, terminal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    /// Zero drift, variance `a*`.
    AStar,
    /// Drift `b*`, variance `a*`.
    BStar,
}

/// Linear solve with the extremal coefficients of `spec`.
pub fn solve_linearized(
    spec: &ControlSpec,
    grid: &GridSpec,
    terminal: &[f64],
    kind: Linearization,
) -> Result<ValueField> {
    grid.validate()?;
    let xs = grid.xs();
    let variance = xs
        .iter()
        .map(|&x| spec.a_star(x))
        .collect::<Result<Vec<_>>>()?;
    let drift = match kind {
        Linearization::AStar => vec![0.0; xs.len()],
        Linearization::BStar => xs
            .iter()
            .map(|&x| spec.b_star(x))
            .collect::<Result<Vec<_>>>()?,
    };
    let table = CoefficientTable::single(drift, variance, &xs)?;
    solve_with_table(&table, grid, terminal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupRow {
    pub values: Vec<f64>,
    /// Lattice time `t` was snapped to.
    pub t: f64,
    pub snap_distance: f64,
}

/// `T_t ψ` on the grid nodes: row `T − t` of the nonlinear solve.
pub fn semigroup_apply(
    spec: &ControlSpec,
    grid: &GridSpec,
    terminal: &[f64],
    t: f64,
) -> Result<SemigroupRow> {
    if !(t >= 0.0 && t <= grid.horizon) {
        return Err(Error::Precondition(format!(
            "t = {t} outside [0, {}]",
            grid.horizon
        )));
    }
    let field = solve_nonlinear(spec, grid, terminal)?;
    Ok(semigroup_row(&field, t))
}

pub fn semigroup_row(field: &ValueField, t: f64) -> SemigroupRow {
    let target = field.horizon() - t;
    let i = nearest_index(&field.times, target);
    SemigroupRow {
        values: field.values[i].clone(),
        t: field.horizon() - field.times[i],
        snap_distance: (field.times[i] - target).abs(),
    }
}

pub(crate) fn nearest_index(sorted: &[f64], target: f64) -> usize {
    let k = sorted.partition_point(|&v| v < target);
    if k == 0 {
        0
    } else if k >= sorted.len() {
        sorted.len() - 1
    } else if (sorted[k] - target).abs() < (target - sorted[k - 1]).abs() {
        k
    } else {
        k - 1
    }
}

/// Discrete Markov selection: the candidate chosen at every node when the
/// sweep produced `field`. The control on `[t_i, t_{i+1})` comes from the
/// derivatives of row `i + 1`; the last row uses its own derivatives.
pub fn extract_policy(
    spec: &ControlSpec,
    grid: &GridSpec,
    field: &ValueField,
) -> Result<PolicyField> {
    grid.validate()?;
    let xs = grid.xs();
    if field.xs != xs {
        return Err(Error::GridMismatch("x-coordinates differ".into()));
    }
    if field.values.len() != field.times.len() || field.values.iter().any(|r| r.len() != xs.len()) {
        return Err(Error::GridMismatch(
            "value rows do not match the lattice".into(),
        ));
    }
    let table = CoefficientTable::from_spec(spec, &xs)?;
    if field.meta.n_controls != table.n_controls() {
        return Err(Error::GridMismatch(format!(
            "field was solved with {} controls, spec has {}",
            field.meta.n_controls,
            table.n_controls()
        )));
    }
    let cfl = dt_for_table(&table, grid)?;
    let (steps, dt) = time_lattice(grid.horizon, cfl);
    if steps + 1 != field.times.len() || dt != field.meta.dt {
        return Err(Error::GridMismatch(format!(
            "time lattice ({} levels, dt {dt:e}) differs from the field ({} levels, dt {:e})",
            steps + 1,
            field.times.len(),
            field.meta.dt
        )));
    }
    let stencil = Stencil {
        table: &table,
        dx: grid.dx(),
        dt,
        boundary: grid.boundary_mode,
        frozen: field.terminal(),
    };
    let f_values = spec.f_values();
    let f_star = (0..=steps)
        .map(|i| {
            let src = &field.values[(i + 1).min(steps)];
            (0..xs.len())
                .map(|j| f_values[stencil.update(src, j).1])
                .collect()
        })
        .collect();
    Ok(PolicyField {
        times: field.times.clone(),
        xs,
        f_star,
    })
}
