//! Control set, coefficient maps and the admissible set `Θ(x)`.
//!
//! The compact control set `F` is represented by a finite ascending grid, so
//! every supremum over `F` is an exact finite maximum.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};

pub const DEFAULT_CONTROL_NODES: usize = 33;

/// How the control set was specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSet {
    /// Isolated control values.
    Points(Vec<f64>),
    /// Equispaced discretization of `[lo, hi]` with `n` nodes.
    Interval { lo: f64, hi: f64, n: usize },
}

impl ControlSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        ControlSet::Interval {
            lo,
            hi,
            n: DEFAULT_CONTROL_NODES,
        }
    }

    fn values(&self) -> Result<Vec<f64>> {
        match self {
            ControlSet::Points(values) => {
                if values.is_empty() {
                    return Err(Error::InvalidSpec("control set is empty".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidSpec("control values must be finite".into()));
                }
                if values.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidSpec(
                        "control values must be strictly ascending".into(),
                    ));
                }
                Ok(values.clone())
            }
            &ControlSet::Interval { lo, hi, n } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidSpec("interval bounds must be finite".into()));
                }
                if n == 0 {
                    return Err(Error::InvalidSpec(
                        "interval needs at least one node".into(),
                    ));
                }
                if n == 1 {
                    if lo != hi {
                        return Err(Error::InvalidSpec(
                            "a one-node interval needs lo == hi".into(),
                        ));
                    }
                    return Ok(vec![lo]);
                }
                if lo >= hi {
                    return Err(Error::InvalidSpec(format!(
                        "interval [{lo}, {hi}] is empty or degenerate"
                    )));
                }
                Ok(linspace(lo, hi, n))
            }
        }
    }
}

/// Equispaced nodes with exact endpoints.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let m = (n - 1) as f64;
    (0..n)
        .map(|j| {
            let j = j as f64;
            (lo * (m - j) + hi * j) / m
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Convexity,
    LinearGrowth,
    Lipschitz,
    LocalHolder,
    Ellipticity,
    ContinuityInControl,
    CertainVolatility,
    ZeroDrift,
    /// `a ≥ 0`; always checked since `a` maps into the nonnegative reals.
    NonnegativeVariance,
}

impl Condition {
    pub const ALL: [Condition; 9] = [
        Condition::NonnegativeVariance,
        Condition::Ellipticity,
        Condition::LinearGrowth,
        Condition::Lipschitz,
        Condition::LocalHolder,
        Condition::ContinuityInControl,
        Condition::Convexity,
        Condition::CertainVolatility,
        Condition::ZeroDrift,
    ];
}

#[derive(Debug, Clone)]
pub struct ControlSpec {
    set: ControlSet,
    f_values: Vec<f64>,
    b: Expr,
    a: Expr,
    declared: BTreeSet<Condition>,
}

impl ControlSpec {
    pub fn new(
        set: ControlSet,
        b: Expr,
        a: Expr,
        declared: impl IntoIterator<Item = Condition>,
    ) -> Result<Self> {
        let f_values = set.values()?;
        Ok(Self {
            set,
            f_values,
            b,
            a,
            declared: declared.into_iter().collect(),
        })
    }

    /// Convenience constructor from expression strings.
    pub fn from_strs(
        set: ControlSet,
        b: &str,
        a: &str,
        declared: impl IntoIterator<Item = Condition>,
    ) -> Result<Self> {
        Self::new(set, Expr::parse(b)?, Expr::parse(a)?, declared)
    }

    pub fn set(&self) -> &ControlSet {
        &self.set
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }

    pub fn drift_expr(&self) -> &Expr {
        &self.b
    }

    pub fn variance_expr(&self) -> &Expr {
        &self.a
    }

    pub fn declares(&self, condition: Condition) -> bool {
        self.declared.contains(&condition)
    }

    pub fn declared(&self) -> &BTreeSet<Condition> {
        &self.declared
    }

    pub fn drift(&self, f: f64, x: f64) -> Result<f64> {
        Ok(self.b.eval(f, x)?)
    }

    pub fn variance(&self, f: f64, x: f64) -> Result<f64> {
        Ok(self.a.eval(f, x)?)
    }

    /// `a*(x) = max_f a(f, x)`.
    pub fn a_star(&self, x: f64) -> Result<f64> {
        self.sup_over_controls(&self.a, x)
    }

    /// `b*(x) = max_f b(f, x)`.
    pub fn b_star(&self, x: f64) -> Result<f64> {
        self.sup_over_controls(&self.b, x)
    }

    fn sup_over_controls(&self, e: &Expr, x: f64) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for &f in &self.f_values {
            best = best.max(e.eval(f, x)?);
        }
        Ok(best)
    }

    /// `Θ(x)` as `(b, a)` pairs, one per control value in order.
    pub fn theta_set(&self, x: f64) -> Result<Vec<(f64, f64)>> {
        self.f_values
            .iter()
            .map(|&f| Ok((self.b.eval(f, x)?, self.a.eval(f, x)?)))
            .collect()
    }

    pub fn depends_on_state(&self) -> bool {
        self.b.uses(Var::X) || self.a.uses(Var::X)
    }

    /// Canonical description used for digests and reports.
    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "control_set": self.set,
            "f_values": self.f_values,
            "b_expr": self.b.to_string(),
            "a_expr": self.a.to_string(),
            "declared": self.declared,
        })
    }
}

/// A sample contradicting a condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    /// Offending point of the `(b, a)` plane, for the convexity test.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 2]>,
}

impl Witness {
    fn at(f: f64, x: f64) -> Self {
        Witness {
            x,
            f: Some(f),
            y: None,
            point: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRecord {
    pub condition: Condition,
    pub declared: bool,
    pub pass: bool,
    pub witness: Option<Witness>,
    pub estimated_constant: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    /// Absolute midpoint tolerance for the convexity test. Defaults to
    /// `1e-6 · diameter(Θ(x))`.
    pub eps_cvx: Option<f64>,
}

const COARSE_PAIR_NODES: usize = 41;
/// Allowed growth of the sampled modulus when the pair spacing halves.
const REFINEMENT_FACTOR: f64 = 1.25;
/// Allowed ratio between the whole-domain and unit-scale growth constants.
const GROWTH_FACTOR: f64 = 4.0;
/// Allowed ratio of bisected to nodal oscillation in the control variable.
const BISECTION_FACTOR: f64 = 0.75;

struct Samples {
    xs: Vec<f64>,
    // [control][node]
    b: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
}

fn sample(spec: &ControlSpec, xs: Vec<f64>) -> Result<Samples> {
    let mut b = Vec::with_capacity(spec.f_values.len());
    let mut a = Vec::with_capacity(spec.f_values.len());
    for &f in &spec.f_values {
        b.push(
            xs.iter()
                .map(|&x| spec.b.eval(f, x))
                .collect::<Result<Vec<_>, _>>()?,
        );
        a.push(
            xs.iter()
                .map(|&x| spec.a.eval(f, x))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok(Samples { xs, b, a })
}

/// Sampling certificates for the structural conditions on `b` and `a` over
/// `[lo, hi]`.
pub fn check_conditions(
    spec: &ControlSpec,
    lo: f64,
    hi: f64,
    n_samples: usize,
) -> Result<Vec<ConditionRecord>> {
    check_conditions_with(spec, lo, hi, n_samples, &CheckOptions::default())
}

pub fn check_conditions_with(
    spec: &ControlSpec,
    lo: f64,
    hi: f64,
    n_samples: usize,
    opts: &CheckOptions,
) -> Result<Vec<ConditionRecord>> {
    if n_samples < 2 {
        return Err(Error::Precondition("n_samples must be at least 2".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Precondition(format!(
            "check domain [{lo}, {hi}] is not a proper interval"
        )));
    }
    let fine = sample(spec, linspace(lo, hi, n_samples))?;
    let mut m = n_samples.min(COARSE_PAIR_NODES);
    if m.is_multiple_of(2) {
        m -= 1;
    }
    let coarse = sample(spec, linspace(lo, hi, m.max(2)))?;

    Condition::ALL
        .iter()
        .map(|&condition| {
            let (pass, witness, estimated_constant) = match condition {
                Condition::NonnegativeVariance => sign_check(spec, &fine, false),
                Condition::Ellipticity => sign_check(spec, &fine, true),
                Condition::LinearGrowth => linear_growth(spec, &fine),
                Condition::Lipschitz => pair_modulus(spec, &coarse, Modulus::Lipschitz),
                Condition::LocalHolder => pair_modulus(spec, &coarse, Modulus::HalfHolder),
                Condition::ContinuityInControl => continuity_in_control(spec, &fine)?,
                Condition::Convexity => convexity(spec, &fine, opts),
                Condition::CertainVolatility => certain_volatility(spec, &fine),
                Condition::ZeroDrift => zero_drift(spec, &fine),
            };
            Ok(ConditionRecord {
                condition,
                declared: spec.declares(condition),
                pass,
                witness,
                estimated_constant,
            })
        })
        .collect()
}

type Verdict = (bool, Option<Witness>, f64);

fn sign_check(spec: &ControlSpec, s: &Samples, strict: bool) -> Verdict {
    let mut min = f64::INFINITY;
    let mut witness = None;
    for (k, row) in s.a.iter().enumerate() {
        for (i, &a) in row.iter().enumerate() {
            min = min.min(a);
            let bad = if strict { a <= 0.0 } else { a < 0.0 };
            if bad && witness.is_none() {
                witness = Some(Witness::at(spec.f_values[k], s.xs[i]));
            }
        }
    }
    (witness.is_none(), witness, min)
}

fn linear_growth(spec: &ControlSpec, s: &Samples) -> Verdict {
    let min_abs = s.xs.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    let inner_radius = min_abs.max(1.0);
    let mut c_all = 0.0f64;
    let mut c_inner = 0.0f64;
    let mut arg = (spec.f_values[0], s.xs[0]);
    for k in 0..spec.f_values.len() {
        for (i, &x) in s.xs.iter().enumerate() {
            let ratio = (s.b[k][i].powi(2) + s.a[k][i].abs()) / (1.0 + x * x);
            if ratio > c_all {
                c_all = ratio;
                arg = (spec.f_values[k], x);
            }
            if x.abs() <= inner_radius {
                c_inner = c_inner.max(ratio);
            }
        }
    }
    let pass = c_all <= GROWTH_FACTOR * c_inner + 1e-12;
    let witness = (!pass).then(|| Witness::at(arg.0, arg.1));
    (pass, witness, c_all)
}

#[derive(Clone, Copy)]
enum Modulus {
    Lipschitz,
    HalfHolder,
}

fn pair_modulus(spec: &ControlSpec, s: &Samples, modulus: Modulus) -> Verdict {
    let root = |a: f64| a.max(0.0).sqrt();
    let constant_over = |stride: usize| {
        let mut best = 0.0f64;
        let mut arg = None;
        let nodes: Vec<usize> = (0..s.xs.len()).step_by(stride).collect();
        for k in 0..spec.f_values.len() {
            for (p, &i) in nodes.iter().enumerate() {
                for &j in &nodes[p + 1..] {
                    let dx = (s.xs[j] - s.xs[i]).abs();
                    let ra = (root(s.a[k][j]) - root(s.a[k][i])).abs();
                    let ratio = match modulus {
                        Modulus::Lipschitz => ((s.b[k][j] - s.b[k][i]).abs() + ra) / dx,
                        Modulus::HalfHolder => ra / dx.sqrt(),
                    };
                    if ratio > best {
                        best = ratio;
                        arg = Some((spec.f_values[k], s.xs[i], s.xs[j]));
                    }
                }
            }
        }
        (best, arg)
    };
    let (c_fine, arg) = constant_over(1);
    if s.xs.len() < 3 {
        return (true, None, c_fine);
    }
    let (c_half, _) = constant_over(2);
    let pass = c_fine <= REFINEMENT_FACTOR * c_half + 1e-12;
    let witness = if pass {
        None
    } else {
        arg.map(|(f, x, y)| Witness {
            x,
            f: Some(f),
            y: Some(y),
            point: None,
        })
    };
    (pass, witness, c_fine)
}

fn continuity_in_control(spec: &ControlSpec, s: &Samples) -> Result<Verdict> {
    let fv = &spec.f_values;
    if fv.len() < 2 {
        return Ok((true, None, 0.0));
    }
    let mut worst = 0.0f64;
    let mut witness = None;
    for (i, &x) in s.xs.iter().enumerate() {
        let mut nodal = 0.0f64;
        let mut bisected = 0.0f64;
        let mut scale = 1.0f64;
        let mut arg = fv[0];
        for k in 0..fv.len() - 1 {
            let lo = s.a[k][i];
            let hi = s.a[k + 1][i];
            let mid_f = 0.5 * (fv[k] + fv[k + 1]);
            let mid = spec.a.eval(mid_f, x)?;
            scale = scale.max(lo.abs()).max(hi.abs());
            nodal = nodal.max((hi - lo).abs());
            let local = (mid - lo).abs().max((hi - mid).abs());
            if local > bisected {
                bisected = local;
                arg = mid_f;
            }
        }
        worst = worst.max(nodal);
        if witness.is_none() && bisected > BISECTION_FACTOR * nodal + 1e-12 * scale {
            witness = Some(Witness::at(arg, x));
        }
    }
    Ok((witness.is_none(), witness, worst))
}

fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

fn convexity(spec: &ControlSpec, s: &Samples, opts: &CheckOptions) -> Verdict {
    let polyline = matches!(spec.set, ControlSet::Interval { .. });
    let n = spec.f_values.len();
    let mut worst = 0.0f64;
    let mut witness = None;
    for (i, &x) in s.xs.iter().enumerate() {
        let pts: Vec<[f64; 2]> = (0..n).map(|k| [s.b[k][i], s.a[k][i]]).collect();
        let mut diameter = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                diameter = diameter.max(distance_to_segment(pts[p], pts[q], pts[q]));
            }
        }
        let eps = opts.eps_cvx.unwrap_or(1e-6 * diameter);
        for p in 0..n {
            for q in p + 1..n {
                let mid = [0.5 * (pts[p][0] + pts[q][0]), 0.5 * (pts[p][1] + pts[q][1])];
                let dist = if polyline {
                    pts.windows(2)
                        .map(|w| distance_to_segment(mid, w[0], w[1]))
                        .fold(f64::INFINITY, f64::min)
                } else {
                    pts.iter()
                        .map(|&v| distance_to_segment(mid, v, v))
                        .fold(f64::INFINITY, f64::min)
                };
                worst = worst.max(dist);
                if dist > eps && witness.is_none() {
                    witness = Some(Witness {
                        x,
                        f: None,
                        y: None,
                        point: Some(mid),
                    });
                }
            }
        }
    }
    (witness.is_none(), witness, worst)
}

fn certain_volatility(spec: &ControlSpec, s: &Samples) -> Verdict {
    let mut worst = 0.0f64;
    let mut witness = None;
    for (i, &x) in s.xs.iter().enumerate() {
        let (mut lo, mut hi, mut arg) = (f64::INFINITY, f64::NEG_INFINITY, 0);
        for k in 0..spec.f_values.len() {
            let a = s.a[k][i];
            lo = lo.min(a);
            if a > hi {
                hi = a;
                arg = k;
            }
        }
        let spread = hi - lo;
        worst = worst.max(spread);
        if spread > 1e-12 * hi.abs().max(1.0) && witness.is_none() {
            witness = Some(Witness::at(spec.f_values[arg], x));
        }
    }
    (witness.is_none(), witness, worst)
}

fn zero_drift(spec: &ControlSpec, s: &Samples) -> Verdict {
    let mut worst = 0.0f64;
    let mut witness = None;
    for (k, row) in s.b.iter().enumerate() {
        for (i, &b) in row.iter().enumerate() {
            worst = worst.max(b.abs());
            if b != 0.0 && witness.is_none() {
                witness = Some(Witness::at(spec.f_values[k], s.xs[i]));
            }
        }
    }
    (witness.is_none(), witness, worst)
}
