use gbesq::besq::{attach_order, cir_moments, cir_transform, CirSpec};
use gbesq::TimeGrid;

use super::node;
use crate::config::{CirCheck, ConfigError, ExperimentConfig};
use crate::report::{Assertion, Builder, RunOutput, Table};
use crate::row;

pub fn run(cfg: &ExperimentConfig, c: &CirCheck) -> Result<RunOutput, ConfigError> {
    let cir = CirSpec { a: c.a, b: c.b, c: c.c };
    let p = &cfg.model;
    for &t in &c.times {
        node(&cfg.grid, t, "times")?;
    }
    let mut b = Builder::default();
    let moments = cir_moments(p, &cir, &cfg.grid, &c.control, &c.times, c.n_paths, cfg.rng)?;
    let mut table = Table::new("cir_mean", &["t", "mean", "stderr", "classical"]);
    for (s, &t) in moments.iter().zip(&c.times) {
        let exact = cir.classical_mean(p.z, t);
        b.check(Assertion::near(format!("cir_mean[t={t}]"), s.mean, exact, c.tolerance_se * s.stderr, Some(s.stderr)));
        table.push(row![t, s.mean, s.stderr, exact]);
    }
    b.tables.push(table);

    let (lo, hi) = p.band();
    let mut residuals = Vec::new();
    let mut worst_qv: f64 = 0.0;
    for &steps in &c.refinement {
        let grid = TimeGrid::new(cfg.grid.horizon, steps)?;
        let out = cir_transform(p, &cir, &grid, &c.control, c.residual_paths, cfg.rng)?;
        let dt = grid.dt();
        for path in &out.paths {
            for w in path.qv_bar.windows(2) {
                let inc = (w[1] - w[0]) / dt;
                let excess = ((lo - inc) / lo).max((inc - hi) / hi).max(0.0);
                worst_qv = worst_qv.max(excess);
            }
        }
        residuals.push(out.residual);
    }
    if residuals.len() >= 2 {
        let order = attach_order(&mut residuals);
        b.check(Assertion::inside("cir_residual_order", order, c.order_range.0, c.order_range.1, None));
    }
    b.check(Assertion::at_most("qv_bar_in_band", worst_qv, 0.0, c.qv_rel, None));
    let mut rt = Table::new("cir_residual", &["dt", "rms", "sup"]);
    for r in &residuals {
        rt.push(row![r.dt, r.rms, r.sup]);
    }
    b.tables.push(rt);
    b.value("cir", cir);
    b.value("residuals", &residuals);
    b.value("qv_bar_worst_relative_excess", worst_qv);
    Ok(b.finish(cfg))
}
