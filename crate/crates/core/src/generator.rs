//! The nonlinear generator `G(x, p, q) = max_f { b(f,x) p + ½ a(f,x) q }`.

use crate::error::Result;
use crate::model::ControlSpec;

/// Value and maximizing control index; ties go to the lowest index.
pub fn sup_with_index(
    pairs: impl IntoIterator<Item = (f64, f64)>,
    p: f64,
    q: f64,
) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (k, (b, a)) in pairs.into_iter().enumerate() {
        let v = b * p + 0.5 * a * q;
        match best {
            Some((bv, _)) if v <= bv => {}
            _ => best = Some((v, k)),
        }
    }
    best
}

pub fn evaluate_g(spec: &ControlSpec, x: f64, p: f64, q: f64) -> Result<f64> {
    Ok(maximize(spec, x, p, q)?.0)
}

pub fn argmax_control(spec: &ControlSpec, x: f64, p: f64, q: f64) -> Result<f64> {
    let (_, k) = maximize(spec, x, p, q)?;
    Ok(spec.f_values()[k])
}

fn maximize(spec: &ControlSpec, x: f64, p: f64, q: f64) -> Result<(f64, usize)> {
    let theta = spec.theta_set(x)?;
    Ok(sup_with_index(theta, p, q).expect("control set is non-empty"))
}
