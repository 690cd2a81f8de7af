use gbesq::analytics::{taub_tail_bound, tau0_split_capacity, tau_a_finite_capacity, ScaleFunction};
use gbesq::besq::{attach_order, bessel_residual, euler_agreement, ResidualStats};
use gbesq::control_opt::{
    capacity_curve, decreasing_within, laplace_martingale, martingale_drift, stopped_scale_martingale, sup_expectation_vec,
    CurveKind,
};
use gbesq::paths::simulate_full;
use gbesq::{Schedule, TimeGrid};

use super::node;
use crate::config::{
    BesselSection, ConfigError, CurveExpectation, CurveSection, DriftSection, ExperimentConfig, ModulusSection,
    Overridable, PathProps, TailSection,
};
use crate::report::{Assertion, Builder, RunOutput, Table};
use crate::row;

pub fn run(cfg: &ExperimentConfig, c: &PathProps) -> Result<RunOutput, ConfigError> {
    let mut b = Builder::default();
    if let Some(d) = &c.drift {
        drift(cfg, d, &mut b)?;
    }
    if let Some(t) = &c.tail {
        tail(cfg, t, &mut b)?;
    }
    for curve in &c.curves {
        curves(cfg, curve, &mut b)?;
    }
    if let Some(m) = &c.modulus {
        modulus(cfg, m, &mut b)?;
    }
    if let Some(s) = &c.bessel {
        bessel(cfg, s, &mut b)?;
    }
    Ok(b.finish(cfg))
}

fn drift(cfg: &ExperimentConfig, s: &DriftSection, b: &mut Builder) -> Result<(), ConfigError> {
    let (model, grid, _) = s.resolve(cfg);
    let scale = ScaleFunction::new(model.d, s.a, s.b)?;
    let schedule: Schedule = grid.into();
    let lgrid = s.laplace_grid.unwrap_or(grid);
    let lschedule: Schedule = lgrid.into();
    let mut table = Table::new("drift", &["martingale", "control", "mean", "stderr", "ratio"]);
    for ctl in &s.controls {
        let id = ctl.id();
        let runs = [
            ("phi", martingale_drift(stopped_scale_martingale(scale, false), &model, &schedule, ctl, s.n_paths, cfg.rng)?),
            ("psi", martingale_drift(stopped_scale_martingale(scale, true), &model, &schedule, ctl, s.n_paths, cfg.rng)?),
            (
                "laplace",
                martingale_drift(laplace_martingale(s.lambda, lgrid.horizon), &model, &lschedule, ctl, s.n_paths, cfg.rng)?,
            ),
        ];
        for (name, st) in runs {
            let tol = if st.mean == 0.0 { 0.0 } else { s.tolerance_se * st.stderr };
            b.check(Assertion::near(format!("drift_{name}[{id}]"), st.mean, 0.0, tol, Some(st.stderr)));
            table.push(row![name, id, st.mean, st.stderr, st.mean / st.stderr]);
        }
    }
    b.tables.push(table);
    Ok(())
}

/// Capacity of `{|Y_{tau_b ^ t}| > t^{3/4}}` for each `t`, against `4 b sigma_hi^2 / sqrt(t)`.
fn tail(cfg: &ExperimentConfig, s: &TailSection, b: &mut Builder) -> Result<(), ConfigError> {
    let (model, grid, family) = s.resolve(cfg);
    let nodes: Vec<usize> = s.times.iter().map(|&t| node(&grid, t, "tail.times")).collect::<Result<_, _>>()?;
    let level = s.b;
    let est = sup_expectation_vec(
        |w| {
            nodes
                .iter()
                .zip(&s.times)
                .map(|(&n, &t)| {
                    while w.state().k < n && w.state().z < level && w.advance() {}
                    if w.state().y.abs() > t.powf(0.75) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        },
        &model,
        &grid.into(),
        &family,
        s.n_paths,
        cfg.rng,
    )?;
    let mut table = Table::new("tail", &["t", "capacity", "stderr", "bound", "best_control"]);
    for (e, &t) in est.iter().zip(&s.times) {
        let bound = taub_tail_bound(level, model.sigma_hi_sq, t);
        b.check(Assertion::at_most(format!("tail_bound[t={t}]"), e.value, bound, s.tolerance_se * e.stderr, Some(e.stderr)));
        table.push(row![t, e.value, e.stderr, bound, e.best_control.id()]);
    }
    b.tables.push(table);
    Ok(())
}

fn curves(cfg: &ExperimentConfig, s: &CurveSection, b: &mut Builder) -> Result<(), ConfigError> {
    let (model, grid, family) = s.resolve(cfg);
    let points = capacity_curve(s.curve, &s.sweep, &model, &grid.into(), &family, cfg.monitor, s.n_paths, cfg.rng)?;
    let mut table = Table::new(&format!("curve_{}", s.name), &["sweep", "estimate", "stderr", "best_control"]);
    for p in &points {
        table.push(row![p.sweep, p.estimate.value, p.estimate.stderr, p.estimate.best_control.id()]);
    }
    for rule in &s.expect {
        match *rule {
            CurveExpectation::Decreasing { joint_se } => {
                b.check(Assertion::flag(format!("{}_decreasing", s.name), decreasing_within(&points, joint_se)));
            }
            CurveExpectation::BelowClosedForm { se } => {
                for p in &points {
                    let bound = match s.curve {
                        CurveKind::MinBeforeTBelowA | CurveKind::TauALtT { .. } => {
                            tau_a_finite_capacity(model.z, p.sweep, model.d)?
                        }
                        CurveKind::TauBLtTau0 { .. } => tau0_split_capacity(model.z, p.sweep)?,
                        _ => {
                            return Err(ConfigError::Invalid(format!(
                                "curve {} has no closed-form capacity",
                                s.name
                            )))
                        }
                    };
                    let e = &p.estimate;
                    b.check(Assertion::at_most(
                        format!("{}_below_closed_form[{}]", s.name, p.sweep),
                        e.value,
                        bound,
                        se * e.stderr,
                        Some(e.stderr),
                    ));
                }
            }
        }
    }
    b.value(&format!("curve_{}", s.name), &points);
    b.tables.push(table);
    Ok(())
}

fn refinement<F>(grid: &TimeGrid, steps: &[usize], f: F) -> Result<Vec<ResidualStats>, ConfigError>
where
    F: Fn(&Schedule) -> gbesq::Result<ResidualStats>,
{
    let mut stats = steps
        .iter()
        .map(|&n| Ok(f(&TimeGrid::new(grid.horizon, n)?.into())?))
        .collect::<Result<Vec<_>, ConfigError>>()?;
    if stats.len() >= 2 {
        attach_order(&mut stats);
    }
    Ok(stats)
}

fn residual_table(name: &str, stats: &[ResidualStats]) -> Table {
    let mut t = Table::new(name, &["dt", "rms", "sup"]);
    for s in stats {
        t.push(row![s.dt, s.rms, s.sup]);
    }
    t
}

fn modulus(cfg: &ExperimentConfig, s: &ModulusSection, b: &mut Builder) -> Result<(), ConfigError> {
    let (model, grid, _) = s.resolve(cfg);
    let stats = refinement(&grid, &s.steps, |sch| {
        euler_agreement(&simulate_full(&model, sch, &s.control, s.n_paths, cfg.rng)?)
    })?;
    let order = stats[0].order_estimate.unwrap_or(f64::NAN);
    let (lo, hi) = s.order_range;
    b.check(Assertion::inside("modulus_euler_order", order, lo, hi, None));
    for w in stats.windows(2) {
        // ratio per halving of dt, whatever the spacing of the study
        let halvings = (w[0].dt / w[1].dt).log2();
        let ratio = (w[0].rms / w[1].rms).powf(1.0 / halvings);
        b.check(Assertion::inside(format!("modulus_halving_ratio[dt={}]", w[1].dt), ratio, s.ratio_range.0, s.ratio_range.1, None));
    }
    let finest = stats.last().expect("nonempty study");
    b.check(Assertion::at_most("modulus_euler_rms_finest", finest.rms, s.max_rms, 0.0, None));
    b.value("modulus_euler", &stats);
    b.tables.push(residual_table("modulus_euler", &stats));
    Ok(())
}

fn bessel(cfg: &ExperimentConfig, s: &BesselSection, b: &mut Builder) -> Result<(), ConfigError> {
    let (model, grid, _) = s.resolve(cfg);
    let stats = refinement(&grid, &s.steps, |sch| {
        bessel_residual(&simulate_full(&model, sch, &s.control, s.n_paths, cfg.rng)?)
    })?;
    let finest = stats.last().expect("nonempty study");
    b.check(Assertion::at_most("bessel_rms_finest", finest.rms, s.max_rms, 0.0, None));
    b.value("bessel_residual", &stats);
    b.tables.push(residual_table("bessel_residual", &stats));
    Ok(())
}
