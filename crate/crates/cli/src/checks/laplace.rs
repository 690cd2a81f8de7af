use gbesq::analytics::{classical_laplace, laplace_lower, laplace_upper};
use gbesq::control_opt::sup_expectation_vec;
use gbesq::pde::{solve_besq_hjb, BesqGrid};
use gbesq::{PdeSolution, Schedule};

use super::node;
use crate::config::{ConfigError, ExperimentConfig, LaplaceCheck};
use crate::report::{Assertion, Builder, RunOutput, Table};
use crate::row;

pub fn run(cfg: &ExperimentConfig, c: &LaplaceCheck) -> Result<RunOutput, ConfigError> {
    let dims = if c.dims.is_empty() { vec![cfg.model.d] } else { c.dims.clone() };
    let starts = if c.starts.is_empty() { vec![cfg.model.z] } else { c.starts.clone() };
    let nodes: Vec<usize> = c.times.iter().map(|&t| node(&cfg.grid, t, "times")).collect::<Result<_, _>>()?;
    let schedule: Schedule = cfg.grid.into();
    let (lo_sq, hi_sq) = cfg.model.band();
    let collapsed = lo_sq == hi_sq;
    let k = c.tolerance_se;
    let mut b = Builder::default();
    let mut table = Table::new(
        "laplace",
        &["d", "z", "lambda", "t", "lower", "upper", "mc", "mc_stderr", "best_control", "pde", "classical"],
    );
    let mut worst_pde_rel: f64 = 0.0;
    let mut pde_meta = Vec::new();
    for &d in &dims {
        // one HJB solve per (lambda, t) serves every start
        let mut solutions: Vec<Vec<PdeSolution>> = Vec::new();
        if c.pde {
            let z_far = starts.iter().cloned().fold(cfg.model.z, f64::max);
            let reach = cfg.model.with_dim(d).with_start(z_far).validate()?;
            for &lambda in &c.lambdas {
                let mut per_t = Vec::new();
                for &t in &c.times {
                    let grid = BesqGrid::radial(&reach, t, c.pde_per_unit);
                    let payoff = move |z: f64| (-lambda * z).exp();
                    let sol = solve_besq_hjb(&payoff, &format!("exp(-{lambda}z)"), &reach, &grid)?;
                    pde_meta.push(serde_json::json!({ "d": d, "lambda": lambda, "t": t, "meta": sol.meta }));
                    per_t.push(sol);
                }
                solutions.push(per_t);
            }
        }
        for &z in &starts {
            let params = cfg.model.with_dim(d).with_start(z).validate()?;
            let estimates = sup_expectation_vec(
                |w| {
                    let mut out = Vec::with_capacity(nodes.len() * c.lambdas.len());
                    for &n in &nodes {
                        w.run_until(n);
                        let zt = w.state().z;
                        out.extend(c.lambdas.iter().map(|l| (-l * zt).exp()));
                    }
                    out
                },
                &params,
                &schedule,
                &cfg.family,
                c.n_paths,
                cfg.rng,
            )?;
            for (j, &t) in c.times.iter().enumerate() {
                for (i, &lambda) in c.lambdas.iter().enumerate() {
                    let e = &estimates[j * c.lambdas.len() + i];
                    let lower = laplace_lower(lambda, t, &params)?;
                    let upper = laplace_upper(lambda, t, &params)?;
                    let classical = classical_laplace(lambda, t, z, d, hi_sq);
                    let tag = format!("d={d},z={z},lambda={lambda},t={t}");
                    b.check(Assertion::inside(
                        format!("mc_in_bounds[{tag}]"),
                        e.value,
                        lower - k * e.stderr,
                        upper + k * e.stderr,
                        Some(e.stderr),
                    ));
                    if collapsed {
                        b.check(Assertion::near(format!("mc_classical[{tag}]"), e.value, classical, k * e.stderr, Some(e.stderr)));
                        b.check(Assertion::near(format!("bounds_coincide[{tag}]"), upper, lower, 1e-12 * upper, None));
                    }
                    let pde = match solutions.get(i).and_then(|s| s.get(j)) {
                        Some(sol) => {
                            let v = sol.value_at(z);
                            b.check(Assertion::inside(
                                format!("pde_in_bounds[{tag}]"),
                                v,
                                lower - c.pde_slack,
                                upper + c.pde_slack,
                                None,
                            ));
                            if collapsed {
                                let rel = (v - classical).abs() / classical;
                                worst_pde_rel = worst_pde_rel.max(rel);
                                b.check(Assertion::at_most(format!("pde_classical_rel[{tag}]"), rel, 0.0, c.classical_rel, None));
                            }
                            v
                        }
                        None => f64::NAN,
                    };
                    table.push(row![d, z, lambda, t, lower, upper, e.value, e.stderr, e.best_control.id(), pde, classical]);
                }
            }
        }
    }
    if c.pde {
        b.value("pde_solves", pde_meta);
        if collapsed {
            b.value("pde_worst_classical_rel", worst_pde_rel);
        }
    }
    b.tables.push(table);
    Ok(b.finish(cfg))
}
