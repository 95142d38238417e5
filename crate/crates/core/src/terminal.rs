//! Terminal functions `ψ`.

use std::fmt;

use crate::expr::{EvalError, Expr};

#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    Square,
    NegSquare,
    Abs,
    Tanh,
    Identity,
    /// `1{x ≤ c}`.
    IndicatorLeq(f64),
    Constant(f64),
    /// `exp(x)` continued linearly (with matching slope) above `x = c`;
    /// convex with linear growth.
    ExpCapped(f64),
    /// Expression in `x`; `f` evaluates to zero.
    Expr(Expr),
}

impl Terminal {
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        Ok(match self {
            Terminal::Square => x * x,
            Terminal::NegSquare => -(x * x),
            Terminal::Abs => x.abs(),
            Terminal::Tanh => x.tanh(),
            Terminal::Identity => x,
            Terminal::IndicatorLeq(c) => {
                if x <= *c {
                    1.0
                } else {
                    0.0
                }
            }
            Terminal::Constant(c) => *c,
            Terminal::ExpCapped(c) => {
                if x <= *c {
                    x.exp()
                } else {
                    c.exp() * (1.0 + (x - c))
                }
            }
            Terminal::Expr(e) => e.eval(0.0, x)?,
        })
    }

    pub fn sample(&self, xs: &[f64]) -> Result<Vec<f64>, EvalError> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Square => out.write_str("square"),
            Terminal::NegSquare => out.write_str("neg_square"),
            Terminal::Abs => out.write_str("abs"),
            Terminal::Tanh => out.write_str("tanh"),
            Terminal::Identity => out.write_str("identity"),
            Terminal::IndicatorLeq(c) => write!(out, "indicator_leq({c:?})"),
            Terminal::Constant(c) => write!(out, "constant({c:?})"),
            Terminal::ExpCapped(c) => write!(out, "exp_capped({c:?})"),
            Terminal::Expr(e) => write!(out, "expr({e})"),
        }
    }
}

/// Nodewise discrete convexity of samples on an equispaced grid.
pub fn is_convex_on_grid(values: &[f64]) -> bool {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    values
        .windows(3)
        .all(|w| w[2] - 2.0 * w[1] + w[0] >= -1e-12 * scale)
}

pub fn is_nondecreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0])
}
