use gbesq::besq::{scaling_transform, time_inversion};
use gbesq::paths::map_paths;
use gbesq::{Schedule, Summary, TimeGrid};

use super::joint;
use crate::config::{ConfigError, ExperimentConfig, ScalingCheck};
use crate::report::{Assertion, Builder, RunOutput, Table};
use crate::row;

fn z_series(w: &mut gbesq::PathWalker<'_>) -> Vec<f64> {
    let mut z = vec![w.state().z];
    while w.advance() {
        z.push(w.state().z);
    }
    z
}

pub fn run(cfg: &ExperimentConfig, c: &ScalingCheck) -> Result<RunOutput, ConfigError> {
    if !matches!(c.control, gbesq::ControlSpec::Constant { .. }) {
        return Err(ConfigError::Invalid("scaling-check control must be constant".into()));
    }
    let p = &cfg.model;
    let k = c.tolerance_se;
    let mut b = Builder::default();

    // lambda^{-1} Z_{lambda t} against a direct simulation started at z / lambda
    let target = cfg.grid;
    let source = TimeGrid::new(c.lambda * target.horizon, target.n_steps)?;
    let src_sched: Schedule = source.into();
    let scaled = map_paths(p, &src_sched, &c.control, c.n_paths, cfg.rng, |w| {
        scaling_transform(&z_series(w), &source, c.lambda, &target).map(|z| (z[0], *z.last().unwrap()))
    })?
    .into_iter()
    .collect::<gbesq::Result<Vec<_>>>()?;
    let start = scaled[0].0;
    b.check(Assertion::near("scaled_start", start, p.z / c.lambda, 1e-12 * p.z.max(1.0), None));
    let direct_params = p.with_start(p.z / c.lambda).validate()?;
    let direct = map_paths(&direct_params, &target.into(), &c.control, c.n_paths, cfg.rng.derive(1), |w| {
        w.run_to_end();
        w.state().z
    })?;
    let s_term: Vec<f64> = scaled.iter().map(|z| z.1).collect();
    let mut table = Table::new("scaling", &["moment", "scaled", "scaled_stderr", "direct", "direct_stderr"]);
    for (m, name) in [(1, "first"), (2, "second")] {
        let a = Summary::of(&s_term.iter().map(|v| v.powi(m)).collect::<Vec<_>>());
        let d = Summary::of(&direct.iter().map(|v| v.powi(m)).collect::<Vec<_>>());
        let se = joint(a.stderr, d.stderr);
        b.check(Assertion::near(format!("scaling_{name}_moment"), a.mean, d.mean, k * se, Some(se)));
        table.push(row![m, a.mean, a.stderr, d.mean, d.stderr]);
    }
    b.tables.push(table);

    if let Some(inv) = &c.inversion {
        let params = p.with_start(0.0).with_dim(inv.d).validate()?;
        let grid = TimeGrid::new(1.0 / inv.t_min, inv.n_steps)?;
        let sched: Schedule = grid.into();
        let inverted = map_paths(&params, &sched, &c.control, inv.n_paths, cfg.rng.derive(2), |w| {
            time_inversion(&z_series(w), &grid, inv.t_min, inv.t_max, inv.n_out)
        })?
        .into_iter()
        .collect::<gbesq::Result<Vec<_>>>()?;
        let times = inverted[0].times.clone();
        let idx: Vec<usize> = times
            .iter()
            .map(|&t| ((t / grid.dt()).round() as usize).min(grid.n_steps))
            .collect();
        let direct = map_paths(&params, &sched, &c.control, inv.n_paths, cfg.rng.derive(3), |w| {
            idx.iter()
                .map(|&k| {
                    w.run_until(k);
                    w.state().z
                })
                .collect::<Vec<f64>>()
        })?;
        b.check(Assertion::flag("inverted_start_zero", inverted.iter().all(|x| x.values[0] == 0.0)));
        let mut t_inv = Table::new("time_inversion", &["t", "X_mean", "X_stderr", "Z_mean", "Z_stderr", "Z_node_time"]);
        for (j, &t) in times.iter().enumerate().skip(1) {
            let xs = Summary::of(&inverted.iter().map(|x| x.values[j]).collect::<Vec<_>>());
            let zs = Summary::of(&direct.iter().map(|z| z[j]).collect::<Vec<_>>());
            let se = joint(xs.stderr, zs.stderr);
            b.check(Assertion::near(format!("inversion_mean[t={t}]"), xs.mean, zs.mean, k * se, Some(se)));
            t_inv.push(row![t, xs.mean, xs.stderr, zs.mean, zs.stderr, grid.time(idx[j])]);
        }
        b.tables.push(t_inv);
    }

    if let Some(dec) = &c.decay {
        let params = p.with_dim(dec.d).validate()?;
        let grid: Schedule = TimeGrid::new(dec.horizon, dec.n_steps)?.into();
        let ratio = map_paths(&params, &grid, &c.control, dec.n_paths, cfg.rng.derive(4), |w| {
            w.run_to_end();
            w.state().z / (dec.horizon * dec.horizon)
        })?;
        let max = ratio.iter().cloned().fold(0.0, f64::max);
        b.check(Assertion::at_most("decay_max_Z_T_over_T2", max, dec.threshold, 0.0, None));
        b.value("decay_max", max);
    }
    Ok(b.finish(cfg))
}
