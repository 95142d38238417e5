//! Desk-scale acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::Instant;

use nldiff_core::field::PolicyField;
use nldiff_core::hjb::{solve_linear, solve_nonlinear, GridSpec};
use nldiff_core::model::{Condition, ControlSet, ControlSpec};
use nldiff_core::sde::{convex_order_checks, estimate, simulate, Policy, SimParams};
use nldiff_core::terminal::Terminal;
use nldiff_core::verify::{McParams, Tolerances, Verifier};
use nldiff_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL_PDE: f64 = 5e-3;
const N_PATHS: usize = 100_000;

fn g_heat() -> ControlSpec {
    ControlSpec::from_strs(
        ControlSet::interval(1.0, 4.0),
        "0",
        "f",
        [
            Condition::ZeroDrift,
            Condition::Ellipticity,
            Condition::Convexity,
        ],
    )
    .unwrap()
}

fn reference_grid(horizon: f64) -> GridSpec {
    GridSpec::new(-10.0, 10.0, 401, horizon)
}

/// `E|σ Z|` by the composite Simpson rule on `[-12, 12]`.
fn gaussian_abs_moment(sigma: f64) -> f64 {
    let n = 24_000;
    let h = 24.0 / n as f64;
    let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let g = |z: f64| (sigma * z).abs() * density(z);
    let mut sum = g(-12.0) + g(12.0);
    for k in 1..n {
        let z = -12.0 + k as f64 * h;
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * g(z);
    }
    sum * h / 3.0
}

type Outcome = Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Outcome);

fn c1_g_heat_oracle() -> Outcome {
    let spec = g_heat();
    let grid = reference_grid(1.0);
    let xs = grid.xs();
    let up = solve_nonlinear(&spec, &grid, &Terminal::Square.sample(&xs)?)?.interpolate(0, 0.0);
    let down =
        solve_nonlinear(&spec, &grid, &Terminal::NegSquare.sample(&xs)?)?.interpolate(0, 0.0);
    let ok = (up - 4.0).abs() <= 2e-2 && (down + 1.0).abs() <= 2e-2;
    Ok((
        ok,
        format!("v(0,0)[x^2] = {up:.6}, v(0,0)[-x^2] = {down:.6}"),
    ))
}

fn c2_linearization_convex() -> Outcome {
    let spec = g_heat();
    let grid = reference_grid(1.0);
    let rec = Verifier::new(&spec, Tolerances::default())
        .check_linearization_convex(&grid, &Terminal::Abs)?;
    let sup = rec.metrics["sup_distance"];
    let spot = rec.metrics["nonlinear_at_ref"];
    let oracle = gaussian_abs_moment(2.0);
    let ok = rec.pass == Some(true) && sup <= TOL_PDE && (spot - oracle).abs() <= 2e-2;
    Ok((
        ok,
        format!("sup = {sup:.3e}, v(0,0) = {spot:.6}, oracle = {oracle:.6}"),
    ))
}

fn c3_linearization_increasing() -> Outcome {
    let spec = ControlSpec::from_strs(
        ControlSet::interval(-1.0, 1.0),
        "f",
        "1",
        [Condition::CertainVolatility, Condition::Ellipticity],
    )?;
    let grid = reference_grid(1.0);
    let verifier = Verifier::new(&spec, Tolerances::default());
    let tanh = verifier.check_linearization_increasing(&grid, &Terminal::Tanh)?;
    let minus_x = Terminal::Expr(nldiff_core::Expr::parse("-x")?);
    let counter = verifier.check_linearization_increasing(&grid, &minus_x)?;
    let sup = tanh.metrics["sup_distance"];
    let gap = counter.metrics["discrepancy_at_ref"].abs();
    let ok = tanh.pass == Some(true) && sup <= TOL_PDE && counter.pass.is_none() && gap >= 1.5;
    Ok((
        ok,
        format!("tanh sup = {sup:.3e}, -x discrepancy at 0 = {gap:.6} (gated)"),
    ))
}

fn c4_semigroup() -> Outcome {
    let spec = g_heat();
    let grid = reference_grid(2.0);
    let verifier = Verifier::new(&spec, Tolerances::default());
    let mut ok = true;
    let mut detail = Vec::new();
    for psi in [Terminal::Square, Terminal::Abs] {
        let rec = verifier.check_semigroup(&grid, &psi, 1.0, 1.0)?;
        let sup = rec.metrics["sup_distance"];
        ok &= rec.pass == Some(true) && sup <= TOL_PDE;
        detail.push(format!("{psi}: {sup:.3e}"));
    }
    Ok((ok, detail.join(", ")))
}

fn c5_selection() -> Outcome {
    let spec = g_heat();
    let grid = reference_grid(1.0);
    let verifier = Verifier::new(&spec, Tolerances::default());
    let mc = McParams {
        x0: 0.0,
        n_steps: 200,
        n_paths: N_PATHS,
        seed: 20_240_501,
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for psi in [Terminal::Square, Terminal::NegSquare, Terminal::Abs] {
        let rec = verifier.check_selection_attains(&grid, &psi, &mc)?;
        let m = &rec.metrics;
        let band = 3.0 * m["mc_stderr"] + 2.5e-2;
        ok &= rec.pass == Some(true) && m["abs_error"] <= band;
        detail.push(format!(
            "{psi}: mc {:.4} vs pde {:.4} (|err| {:.4} <= {:.4})",
            m["mc_mean"], m["pde_value"], m["abs_error"], band
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn random_table(spec: &ControlSpec, seed: u64) -> PolicyField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = spec.f_values();
    let times: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let xs: Vec<f64> = (0..=80).map(|j| -10.0 + j as f64 * 0.25).collect();
    let f_star = times
        .iter()
        .map(|_| xs.iter().map(|_| f[rng.gen_range(0..f.len())]).collect())
        .collect();
    PolicyField { times, xs, f_star }
}

fn c6_convex_order() -> Outcome {
    let spec = g_heat();
    let psis = [Terminal::Square, Terminal::Abs, Terminal::ExpCapped(3.0)];
    let params = SimParams::new(0.0, 1.0, 100, N_PATHS, 77);
    let mut policies: Vec<(String, Policy)> = [1.0, 1.75, 2.5, 3.25, 4.0]
        .into_iter()
        .map(|f| (format!("f={f}"), Policy::Constant(f)))
        .collect();
    for seed in [11, 12] {
        policies.push((
            format!("table#{seed}"),
            Policy::Feedback(random_table(&spec, seed)),
        ));
    }
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for (_, policy) in &policies {
        for rec in convex_order_checks(&spec, policy, &psis, &params)? {
            ok &= rec.pass;
            let sigma = rec.lhs.stderr + rec.rhs.stderr;
            let margin = if sigma > 0.0 {
                (rec.lhs.mean - rec.rhs.mean) / sigma
            } else if rec.lhs.mean <= rec.rhs.mean {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(margin);
            count += 1;
        }
    }
    Ok((
        ok,
        format!("{count} comparisons, max (lhs - rhs)/sigma = {worst:.3}"),
    ))
}

fn c7_smoothing() -> Outcome {
    let spec = g_heat();
    let fine = reference_grid(1.0);
    let coarse = fine.with_nx(201);
    let verifier = Verifier::new(&spec, Tolerances::default());
    let rec = verifier.check_smoothing(&coarse, &fine, 0.25)?;
    let zero = verifier.check_smoothing(&coarse, &fine, 0.0)?;
    let m = &rec.metrics;
    let bound = 1.1 / (2.0 * std::f64::consts::PI * 1.0 * 0.25).sqrt();
    let (sc, sf) = (m["slope_coarse"], m["slope_fine"]);
    let ratio0 = zero.metrics["slope0_ratio"];
    let ok =
        rec.pass == Some(true) && sf <= 2.0 * sc && sc <= bound && sf <= bound && ratio0 >= 1.8;
    Ok((
        ok,
        format!("slopes {sc:.4} (201) / {sf:.4} (401), bound {bound:.4}, t=0 ratio {ratio0:.3}"),
    ))
}

fn c8_moment_scaling() -> Outcome {
    let spec = g_heat();
    let verifier = Verifier::new(&spec, Tolerances::default());
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, policy, seed) in [
        ("a*", Policy::ExtremalAStar, 5),
        ("f=1", Policy::Constant(1.0), 6),
        ("table", Policy::Feedback(random_table(&spec, 13)), 7),
    ] {
        let mc = McParams {
            x0: 0.0,
            n_steps: 64,
            n_paths: N_PATHS,
            seed,
        };
        let rec = verifier.check_moment_scaling(&policy, 1.0, &mc, 6)?;
        let slope = rec.metrics["slope"];
        ok &= rec.pass == Some(true) && (0.85..=1.15).contains(&slope);
        detail.push(format!("{name}: slope {slope:.4}"));
    }
    Ok((ok, detail.join(", ")))
}

fn random_terminal(rng: &mut ChaCha8Rng, xs: &[f64]) -> Vec<f64> {
    let (a, b, c, d) = (
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.2..0.2),
        rng.gen_range(-3.0..3.0),
        rng.gen_range(0.5..4.0),
    );
    xs.iter()
        .map(|&x| a * x + b * x * x + c * (d * x).sin() + rng.gen_range(-0.5..0.5))
        .collect()
}

fn c9_structure() -> Outcome {
    let spec = g_heat();
    let grid = reference_grid(1.0);
    let xs = grid.xs();
    let mut notes = Vec::new();

    let constant = solve_nonlinear(&spec, &grid, &vec![2.5; xs.len()])?;
    let const_err = constant
        .values
        .iter()
        .flatten()
        .map(|v| (v - 2.5).abs())
        .fold(0.0, f64::max);
    let mut ok = const_err <= 1e-12;
    notes.push(format!("constant err {const_err:.1e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut mono_violation, mut sub_violation) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let p1 = random_terminal(&mut rng, &xs);
        let p2 = random_terminal(&mut rng, &xs);
        let p2_above: Vec<f64> = p1.iter().map(|v| v + rng.gen_range(0.0..1.0)).collect();
        let sum: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a + b).collect();
        let v1 = solve_nonlinear(&spec, &grid, &p1)?;
        let v_above = solve_nonlinear(&spec, &grid, &p2_above)?;
        let v2 = solve_nonlinear(&spec, &grid, &p2)?;
        let v_sum = solve_nonlinear(&spec, &grid, &sum)?;
        for j in 0..xs.len() {
            let scale = 1.0 + v1.initial()[j].abs() + v2.initial()[j].abs();
            mono_violation = mono_violation.max((v1.initial()[j] - v_above.initial()[j]) / scale);
            sub_violation =
                sub_violation.max((v_sum.initial()[j] - v1.initial()[j] - v2.initial()[j]) / scale);
        }
    }
    // Rounding slack only: a few ulps relative to the values involved.
    ok &= mono_violation <= 1e-12 && sub_violation <= 1e-12;
    notes.push(format!(
        "monotonicity excess {mono_violation:.1e}, subadditivity excess {sub_violation:.1e}"
    ));

    let single = ControlSpec::from_strs(
        ControlSet::Points(vec![2.5]),
        "0.3*sin(x)",
        "f + 0.5*cos(x)^2",
        [],
    )?;
    let psi = Terminal::Tanh.sample(&xs)?;
    let nonlinear = solve_nonlinear(&single, &grid, &psi)?;
    let linear = solve_linear(
        |x| single.drift(2.5, x).unwrap(),
        |x| single.variance(2.5, x).unwrap(),
        &grid,
        &psi,
    )?;
    let bitwise = nonlinear
        .values
        .iter()
        .flatten()
        .zip(linear.values.iter().flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    ok &= bitwise;
    notes.push(format!("|F|=1 bitwise {bitwise}"));

    let params = SimParams::new(0.3, 1.0, 50, 2_000, 4242).with_paths();
    let first = simulate(&spec, &Policy::ExtremalAStar, &params)?;
    let second = simulate(&spec, &Policy::ExtremalAStar, &params)?;
    let replay = first
        .paths
        .as_ref()
        .unwrap()
        .iter()
        .flatten()
        .zip(second.paths.as_ref().unwrap().iter().flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && estimate(&first, |y| Ok(y * y))?.mean.to_bits()
            == estimate(&second, |y| Ok(y * y))?.mean.to_bits();
    ok &= replay;
    notes.push(format!("replay bitwise {replay}"));
    Ok((ok, notes.join(", ")))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 g-heat oracle", c1_g_heat_oracle),
        ("2 linearization (convex)", c2_linearization_convex),
        ("3 linearization (increasing)", c3_linearization_increasing),
        ("4 semigroup identity", c4_semigroup),
        ("5 selection attainment", c5_selection),
        ("6 convex order", c6_convex_order),
        ("7 smoothing", c7_smoothing),
        ("8 moment scaling", c8_moment_scaling),
        ("9 structural properties", c9_structure),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let (pass, detail) = match run() {
            Ok(outcome) => outcome,
            Err(e) => (false, format!("error kind={} {e}", e.kind())),
        };
        let secs = started.elapsed().as_secs_f64();
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{secs:.1}s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance: {} passed, {failures} failed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
