use gbesq::paths::simulate_full;
use gbesq::Summary;

use crate::config::{ConfigError, ExperimentConfig, SimulateCheck};
use crate::report::{Assertion, Builder, RunOutput};

pub fn run(cfg: &ExperimentConfig, c: &SimulateCheck) -> Result<RunOutput, ConfigError> {
    let bundle = simulate_full(&cfg.model, &cfg.grid.into(), &c.control, c.n_paths, cfg.rng)?;
    let p = &cfg.model;
    let k = c.tolerance_se;
    let z = Summary::of(&bundle.terminal(|s| &s.z));
    let beta = Summary::of(&bundle.terminal(|s| &s.beta));
    let y = Summary::of(&bundle.terminal(|s| &s.y));
    let qv = Summary::of(&bundle.terminal(|s| &s.qv));
    let drift_free: Vec<f64> = bundle
        .paths
        .iter()
        .map(|s| s.z.last().unwrap() - p.z - p.d * s.qv.last().unwrap())
        .collect();
    let drift_free = Summary::of(&drift_free);
    let mut b = Builder::default();
    b.check(Assertion::near("beta_T_mean_zero", beta.mean, 0.0, k * beta.stderr, Some(beta.stderr)));
    b.check(Assertion::near("Y_T_mean_zero", y.mean, 0.0, k * y.stderr, Some(y.stderr)));
    b.check(Assertion::near(
        "Z_T_mean_matches_qv",
        drift_free.mean,
        0.0,
        k * drift_free.stderr,
        Some(drift_free.stderr),
    ));
    let (lo, hi) = p.band();
    let t = cfg.grid.horizon;
    b.check(Assertion::inside("qv_T_in_band", qv.mean, lo * t * (1.0 - 1e-12), hi * t * (1.0 + 1e-12), None));
    b.check(Assertion::flag("Z_nonnegative", bundle.paths.iter().all(|s| s.z.iter().all(|&v| v >= 0.0))));
    b.value("control", c.control.id());
    b.value("Z_T", z);
    b.value("beta_T", beta);
    b.value("Y_T", y);
    b.value("qv_T", qv);
    for i in 0..c.export_paths.min(bundle.len()) {
        let mut buf = Vec::new();
        bundle.write_csv(i, &mut buf).expect("in-memory write");
        b.files.push((format!("path_{i}.csv"), buf));
    }
    Ok(b.finish(cfg))
}
