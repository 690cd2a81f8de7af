use gbesq::analytics::{scale_ratio_down, scale_ratio_up};
use gbesq::control_opt::{exit_split, MonitorMode};
use gbesq::{Schedule, TimeGrid};

use crate::config::{ConfigError, ExperimentConfig, HittingCheck};
use crate::report::{Assertion, Builder, RunOutput, Table};
use crate::row;

pub fn run(cfg: &ExperimentConfig, c: &HittingCheck) -> Result<RunOutput, ConfigError> {
    let p = &cfg.model;
    let controls = match &c.controls {
        Some(list) => list.clone(),
        None => cfg.family.members(p, cfg.grid.horizon)?,
    };
    for ctl in &controls {
        ctl.validate(p, cfg.grid.horizon)?;
    }
    let b_first = scale_ratio_down(p.z, c.a, c.b, p.d)?;
    let a_first = scale_ratio_up(p.z, c.a, c.b, p.d)?;
    let schedule: Schedule = cfg.grid.into();
    let mut b = Builder::default();
    b.value("closed_form", b_first);
    b.value("closed_form_complement", a_first);
    b.value("monitor", cfg.monitor);
    let mut table = Table::new(
        "hitting",
        &["control", "b_first", "b_first_stderr", "a_first", "a_first_stderr", "neither", "closed_form"],
    );
    let mut per_control = Vec::new();
    for ctl in &controls {
        let sp = exit_split(p, &schedule, ctl, c.a, c.b, cfg.monitor, c.n_paths, cfg.rng)?;
        let id = ctl.id();
        let (fb, sb) = (sp.frequency(sp.b_first), sp.stderr(sp.b_first));
        let (fa, sa) = (sp.frequency(sp.a_first), sp.stderr(sp.a_first));
        b.check(Assertion::near(format!("b_first[{id}]"), fb, b_first, (c.tolerance_se * sb).max(c.tolerance_abs), Some(sb)));
        b.check(Assertion::near(format!("a_first[{id}]"), fa, a_first, (c.tolerance_se * sa).max(c.tolerance_abs), Some(sa)));
        b.check(Assertion::flag(format!("counts_complementary[{id}]"), sp.a_first + sp.b_first + sp.neither == sp.n_paths));
        table.push(row![id, fb, sb, fa, sa, sp.frequency(sp.neither), b_first]);
        per_control.push(serde_json::json!({ "control": id, "split": sp, "b_first": fb, "b_first_stderr": sb }));
    }
    b.value("controls", per_control);
    b.tables.push(table);

    // bias of grid-only detection under refinement, first control
    if !c.refinement.is_empty() {
        let n = c.refinement_paths.unwrap_or(c.n_paths);
        let mut study = Table::new("hitting_refinement", &["n_steps", "dt", "grid_bias", "stderr"]);
        let mut biases = Vec::new();
        for &steps in &c.refinement {
            let grid: Schedule = TimeGrid::new(cfg.grid.horizon, steps)?.into();
            let sp = exit_split(p, &grid, &controls[0], c.a, c.b, MonitorMode::Grid, n, cfg.rng)?;
            let bias = sp.frequency(sp.b_first) - b_first;
            study.push(row![steps, cfg.grid.horizon / steps as f64, bias, sp.stderr(sp.b_first)]);
            biases.push((bias, sp.stderr(sp.b_first)));
        }
        let (first, last) = (biases[0], *biases.last().unwrap());
        b.check(Assertion::at_most(
            "grid_bias_shrinks",
            last.0.abs(),
            first.0.abs(),
            0.0,
            Some(super::joint(first.1, last.1)),
        ));
        b.value("grid_bias", biases.iter().map(|x| x.0).collect::<Vec<_>>());
        b.tables.push(study);
    }
    Ok(b.finish(cfg))
}
