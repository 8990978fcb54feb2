//! The five commands. Each returns the files it produced and a JSON value
//! with its results, which ends up in `metadata.json`.

use std::fmt::Write;

use dec_ader::integrator::{
    convergence_study, damped_oscillator, damped_oscillator_exact, solve_ivp, Integrator, SplitLinearOde,
    StepperKind,
};
use dec_ader::pde::{run_convergence, run_single, RunConfig};
use dec_ader::stability::{d0_region, d1_region, minion_region, real_axis_border, scan_tableau, Evaluator};
use dec_ader::tableaux::{build_reduced, build_tableau, matrix_csv};
use dec_ader::von_neumann::{Engine, ScanSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{ConvergenceJob, RegionKind, SolveJob, StabilityJob, TableauJob, VonNeumannJob};
use crate::CliError;

/// Files of one job, in the order they are written.
pub type Files = Vec<(&'static str, Vec<u8>)>;

pub fn tableau(job: &TableauJob) -> Result<(Files, Value), CliError> {
    let spec = job.method.spec()?;
    let t = if job.reduce { build_reduced(&spec)? } else { build_tableau(&spec)? };
    let (main, explicit) = t.parts();
    let mut weights = String::from(if explicit.is_some() { "c,b,bHat\n" } else { "c,b\n" });
    for i in 0..t.stages() {
        write!(weights, "{:.16e},{:.16e}", main.c[i], main.b[i]).unwrap();
        if let Some(e) = explicit {
            write!(weights, ",{:.16e}", e.b[i]).unwrap();
        }
        weights.push('\n');
    }
    let mut files: Files = vec![
        ("tableau.json", pretty(&t.dump(&spec))?),
        ("A.csv", matrix_csv(&main.a).into_bytes()),
    ];
    if let Some(e) = explicit {
        files.push(("AHat.csv", matrix_csv(&e.a).into_bytes()));
    }
    files.push(("weights.csv", weights.into_bytes()));
    Ok((files, json!({ "stages": t.stages(), "structure": main.structure })))
}

pub fn stability(job: &StabilityJob) -> Result<(Files, Value), CliError> {
    let spec = job.method.spec()?;
    let ev = Evaluator::new(&build_reduced(&spec)?);
    let (n, off) = (job.resolution, job.offset);
    let mut results = json!({});
    let grid = match job.kind {
        RegionKind::Scalar => {
            results["realAxisBorder"] = json!(real_axis_border(&ev, job.re.0, 4 * n));
            scan_tableau(&ev, job.re, job.im, n, off)
        }
        RegionKind::Minion => {
            let region = minion_region(&ev, job.re, job.im, n, off);
            results["alphaDeg"] = json!(region.alpha_deg);
            region.grid
        }
        RegionKind::D0 => d0_region(&ev, job.re, job.im, n, off),
        RegionKind::D1 => d1_region(&ev, job.re, job.im, n, off),
    };
    results["stableCount"] = json!(grid.stable_count());
    results["points"] = json!(grid.values.len());
    Ok((vec![("region.csv", grid.to_csv().into_bytes()), ("region.pgm", grid.to_pgm())], results))
}

pub fn vonneumann(job: &VonNeumannJob) -> Result<(Files, Value), CliError> {
    let mut spec = ScanSpec::new(job.method.spec()?, job.adv, job.diff, job.plane).with_grid(job.resolution, job.n0);
    spec.c_range = job.c_range;
    spec.second_range = job.second_range;
    let engine = Engine::new(spec)?;
    let mut files = Files::new();
    let borders = if job.map {
        let map = engine.scan();
        files.push(("map.csv", map.to_csv().into_bytes()));
        files.push(("map.pgm", map.to_pgm()));
        engine.extract_borders(&map)
    } else {
        engine.borders()
    };
    files.push(("borders.json", pretty(&borders)?));
    Ok((files, json!({ "summary": borders.summary(), "borders": borders })))
}

pub fn convergence(job: &ConvergenceJob) -> Result<(Files, Value), CliError> {
    match job {
        ConvergenceJob::Pde { family, nodes, orders, cells, cfl, e, t_end } => {
            let table = run_convergence(*family, *nodes, orders, cells, *cfl, *e, *t_end)?;
            let observed: Vec<Vec<f64>> = (0..orders.len()).map(|i| table.observed(i)).collect();
            let results = json!({
                "observedOrders": observed,
                "errors": table.errors,
                "unstable": table.unstable,
            });
            Ok((vec![("convergence.csv", table.to_csv().into_bytes())], results))
        }
        ConvergenceJob::Dahlquist { method, lambda_i, lambda_e, h0, levels, t_end } => {
            let ode = SplitLinearOde::scalar(*lambda_i, *lambda_e, 1.0);
            let lambda = lambda_i + lambda_e;
            let exact = move |t: f64| DVector::from_element(1, (lambda * t).exp());
            ode_study(method.spec()?, &ode, &exact, *h0, *levels, *t_end)
        }
        ConvergenceJob::Oscillator { method, h0, levels, t_end } => {
            ode_study(method.spec()?, &damped_oscillator(), &damped_oscillator_exact, *h0, *levels, *t_end)
        }
    }
}

fn ode_study(
    spec: dec_ader::tableaux::MethodSpec,
    ode: &SplitLinearOde,
    exact: &dyn Fn(f64) -> DVector<f64>,
    h0: f64,
    levels: usize,
    t_end: f64,
) -> Result<(Files, Value), CliError> {
    let it = Integrator::new(spec, StepperKind::Tableau)?;
    let hs: Vec<f64> = (0..levels).map(|j| h0 * 0.5f64.powi(j as i32)).collect();
    let table = convergence_study(&it, ode, exact, t_end, &hs)?;
    let results = json!({ "finalOrder": table.final_order(), "fittedOrder": table.fitted_order() });
    Ok((vec![("convergence.csv", table.to_csv().into_bytes())], results))
}

pub fn solve(job: &SolveJob, seed: u64) -> Result<(Files, Value), CliError> {
    let ode_run = |method: &crate::config::MethodChoice, ode: &SplitLinearOde, h: f64, t_end: f64| {
        let it = Integrator::new(method.spec()?, StepperKind::Tableau)?;
        Ok::<_, CliError>(solve_ivp(&it, ode, t_end, h)?)
    };
    let (traj, exact) = match job {
        SolveJob::Dahlquist { method, lambda_i, lambda_e, h, t_end } => {
            let traj = ode_run(method, &SplitLinearOde::scalar(*lambda_i, *lambda_e, 1.0), *h, *t_end)?;
            let t = *traj.times.last().unwrap();
            (traj, Some(DVector::from_element(1, ((lambda_i + lambda_e) * t).exp())))
        }
        SolveJob::Oscillator { method, h, t_end } => {
            let traj = ode_run(method, &damped_oscillator(), *h, *t_end)?;
            let t = *traj.times.last().unwrap();
            (traj, Some(damped_oscillator_exact(t)))
        }
        SolveJob::Random { method, dim, h, t_end } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
            let (s, g, u0) = (draw(*dim, *dim), draw(*dim, *dim), draw(*dim, 1));
            let ode = SplitLinearOde::new(s, g, u0.column(0).into_owned())?;
            (ode_run(method, &ode, *h, *t_end)?, None)
        }
        SolveJob::Pde { method, cells, cfl, second, adv, diff, t_end } => {
            return solve_pde(RunConfig {
                method: method.spec()?,
                cells: *cells,
                a: 1.0,
                c: *cfl,
                second: *second,
                advection_order: *adv,
                second_order: *diff,
                t_end: *t_end,
            })
        }
    };
    let last = traj.last();
    let mut results = json!({ "steps": traj.times.len() - 1, "final": last.as_slice() });
    if let Some(u) = exact {
        results["error"] = json!((&last - u).norm());
    }
    let files = vec![("trajectory.csv", traj.to_csv().into_bytes())];
    if !last.iter().all(|v| v.is_finite()) {
        return Err(CliError::Numerical {
            message: "the solution became non-finite".into(),
            diagnostic: results,
            files,
        });
    }
    Ok((files, results))
}

fn solve_pde(cfg: RunConfig) -> Result<(Files, Value), CliError> {
    let result = run_single(&cfg)?;
    let problem = cfg.problem()?;
    let exact = problem.exact(result.t);
    let mut csv = String::from("x,u,exact\n");
    for (j, x) in problem.grid().iter().enumerate() {
        writeln!(csv, "{x:.16e},{:.16e},{:.16e}", result.state[j], exact[j]).unwrap();
    }
    let results = serde_json::to_value(&result)?;
    let files = vec![("solution.csv", csv.into_bytes())];
    if result.unstable {
        return Err(CliError::Numerical {
            message: format!("the solution blew up at t = {:e}", result.t),
            diagnostic: results,
            files,
        });
    }
    Ok((files, results))
}

pub fn pretty<T: serde::Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}
