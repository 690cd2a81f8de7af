use gbesq::analytics::scale_ratio_down;
use gbesq::pde::{solve_besq_hjb, solve_exit_ode, solve_gheat, BesqGrid, HeatGrid};
use gbesq::{ModelParams, PdeSolution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, ExperimentConfig, PdeSolve};
use crate::payoff::RandomPayoff;
use crate::report::{Assertion, Builder, RunOutput, Table};
use crate::row;

fn csv(sol: &PdeSolution) -> Vec<u8> {
    let mut buf = Vec::new();
    sol.write_csv(&mut buf).expect("in-memory write");
    buf
}

/// Pointwise `a <= b` on every node.
fn dominated(a: &PdeSolution, b: &PdeSolution) -> bool {
    a.values.iter().zip(&b.values).all(|(x, y)| x <= y)
}

pub fn run(cfg: &ExperimentConfig, c: &PdeSolve) -> Result<RunOutput, ConfigError> {
    let p = &cfg.model;
    let horizon = cfg.grid.horizon;
    let mut b = Builder::default();
    let mut meta = Vec::new();

    for (i, h) in c.heat.iter().enumerate() {
        let grid = HeatGrid { horizon, half_width: h.half_width, n_x: h.n_x, n_t: h.n_t };
        let f = h.payoff;
        let sol = solve_gheat(&move |x| f.eval(x), &f.id(), p, &grid)?;
        let v = sol.value_at(h.x);
        if let Some(expected) = h.expected {
            b.check(Assertion::near(format!("heat[{}]@{}", f.id(), h.x), v, expected, h.tolerance, None));
        }
        meta.push(serde_json::json!({ "solve": format!("heat_{i}"), "value": v, "meta": sol.meta }));
        b.files.push((format!("heat_{i}.csv"), csv(&sol)));
    }

    for (i, s) in c.besq.iter().enumerate() {
        let mut grid = BesqGrid::radial(p, horizon, s.per_unit);
        grid.n_t = s.n_t;
        if let Some(scheme) = s.scheme {
            grid.scheme = scheme;
        }
        let f = s.payoff;
        let sol = solve_besq_hjb(&move |z| f.eval(z), &f.id(), p, &grid)?;
        let v = sol.value_at(p.z);
        if let Some(expected) = s.expected {
            b.check(Assertion::near(format!("besq[{}]@{}", f.id(), p.z), v, expected, s.tolerance, None));
        }
        meta.push(serde_json::json!({ "solve": format!("besq_{i}"), "value": v, "meta": sol.meta }));
        b.files.push((format!("besq_{i}.csv"), csv(&sol)));
    }

    if let Some(e) = &c.exit {
        let mut table = Table::new("exit_ode", &["d", "w", "closed_form"]);
        for &d in &e.dims {
            let (nodes, w) = solve_exit_ode(e.a, e.b, d, e.n_z)?;
            let j = nodes.partition_point(|&x| x < e.z).min(nodes.len() - 1);
            let v = if nodes[j] == e.z {
                w[j]
            } else {
                let t = (e.z - nodes[j - 1]) / (nodes[j] - nodes[j - 1]);
                w[j - 1] * (1.0 - t) + w[j] * t
            };
            let exact = scale_ratio_down(e.z, e.a, e.b, d)?;
            b.check(Assertion::near(format!("exit_ode[d={d}]"), v, exact, e.tolerance, None));
            b.check(Assertion::flag(format!("exit_ode_boundary[d={d}]"), w[0] == 0.0 && *w.last().unwrap() == 1.0));
            table.push(row![d, v, exact]);
        }
        b.tables.push(table);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng.derive(0x5eed).master_seed);
    let small_besq = |params: &ModelParams, n_t: Option<usize>| BesqGrid {
        n_t,
        ..BesqGrid::radial(params, horizon, 16)
    };

    if let Some(cmp) = &c.comparison {
        let heat = HeatGrid { horizon, half_width: cmp.half_width, n_x: cmp.n_x, n_t: None };
        let mut ok_heat = 0;
        let mut ok_besq = 0;
        for _ in 0..cmp.count {
            let f = RandomPayoff::sample(&mut rng, cmp.half_width);
            let g = f.clone().with_bumps(&mut rng, cmp.half_width, 3);
            let (ff, gg) = (|x: f64| f.eval(x), |x: f64| g.eval(x));
            if dominated(&solve_gheat(&ff, "f", p, &heat)?, &solve_gheat(&gg, "g", p, &heat)?) {
                ok_heat += 1;
            }
            let grid = small_besq(p, None);
            if dominated(&solve_besq_hjb(&ff, "f", p, &grid)?, &solve_besq_hjb(&gg, "g", p, &grid)?) {
                ok_besq += 1;
            }
        }
        b.check(Assertion::near("comparison_heat_pairs", ok_heat as f64, cmp.count as f64, 0.0, None));
        b.check(Assertion::near("comparison_besq_pairs", ok_besq as f64, cmp.count as f64, 0.0, None));
    }

    if let Some(en) = &c.enlargement {
        let wide = ModelParams { sigma_lo_sq: en.sigma_lo_sq, sigma_hi_sq: en.sigma_hi_sq, ..*p }.validate()?;
        if wide.sigma_lo_sq > p.sigma_lo_sq || wide.sigma_hi_sq < p.sigma_hi_sq {
            return Err(ConfigError::Invalid("enlargement band must contain the model band".into()));
        }
        // both bands on the time step that is stable for the wider one
        let heat_wide = solve_gheat(&|x| x, "x", &wide, &HeatGrid { horizon, half_width: en.half_width, n_x: en.n_x, n_t: None })?;
        let heat = HeatGrid { horizon, half_width: en.half_width, n_x: en.n_x, n_t: Some(heat_wide.meta.n_t) };
        let besq_nt = solve_besq_hjb(&|z| z, "z", &wide, &small_besq(&wide, None))?.meta.n_t;
        let bgrid = small_besq(&wide, Some(besq_nt));
        let mut ok_heat = 0;
        let mut ok_besq = 0;
        for _ in 0..en.count {
            let f = RandomPayoff::sample(&mut rng, en.half_width);
            let ff = |x: f64| f.eval(x);
            if dominated(&solve_gheat(&ff, "f", p, &heat)?, &solve_gheat(&ff, "f", &wide, &heat)?) {
                ok_heat += 1;
            }
            if dominated(&solve_besq_hjb(&ff, "f", p, &bgrid)?, &solve_besq_hjb(&ff, "f", &wide, &bgrid)?) {
                ok_besq += 1;
            }
        }
        b.check(Assertion::near("enlargement_heat", ok_heat as f64, en.count as f64, 0.0, None));
        b.check(Assertion::near("enlargement_besq", ok_besq as f64, en.count as f64, 0.0, None));
    }
    b.value("solves", meta);
    Ok(b.finish(cfg))
}
