//! Experiment orchestration: single runs and seed sweeps written to metrics
//! files, the tabular identity self-check, and embedding export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::drivers::{run_training, RunOutput};
use crate::environments::{prop1_check, tabular_rho, tabular_start_value, TabularMdp, TabularPolicy};
use crate::error::{Error, Result};
use crate::linear_bandit::BanditState;
use crate::metrics::write_metrics;
use crate::numerics::{dot, gaussian_vector, solve_dense, RngStream};
use crate::representation::embedding_table;

pub fn metrics_path(out_dir: &Path, driver: &str, seed: u64) -> PathBuf {
    out_dir.join(format!("{driver}_seed{seed}.tsv"))
}

/// Runs one `(config, seed)` and writes its metrics under `out_dir`.
pub fn run_to_file(config: &RunConfig, seed: u64, out_dir: &Path) -> Result<(PathBuf, RunOutput)> {
    let out = run_training(config, seed)?;
    let path = metrics_path(out_dir, config.run.driver.name(), seed);
    write_metrics(&out.log, &path)?;
    Ok((path, out))
}

/// One run per configured seed, each to its own file.
pub fn sweep(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if config.run.seeds.is_empty() {
        return Err(Error::config("run.seeds", "sweep needs at least one seed"));
    }
    config.run.seeds.iter().map(|&s| run_to_file(config, s, out_dir).map(|(p, _)| p)).collect()
}

/// Tab-separated `episode, z_0 … z_{d−1}, g_tilde` rows for the retained
/// history of a representation-based run.
pub fn export_embeddings(out: &RunOutput) -> Result<String> {
    let state = out
        .state
        .as_ref()
        .ok_or_else(|| Error::config("run.driver", "embeddings exist only for repes and reppg runs"))?;
    let rows = embedding_table(&state.rep, &state.history)?;
    let d = state.rep.latent_dim();
    let mut text = String::from("# episode");
    for k in 0..d {
        write!(text, "\tz_{k}").expect("write to string");
    }
    text.push_str("\tg_tilde\n");
    for (episode, z, g) in rows {
        write!(text, "{episode}").expect("write to string");
        for v in z.iter().chain([&g]) {
            write!(text, "\t{v:.16e}").expect("write to string");
        }
        text.push('\n');
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst residual over the battery.
    pub worst: f64,
    pub tolerance: f64,
}

pub const BATTERY_GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];

/// `count` random MDPs with 1–8 states, 1–3 actions and discounts cycling
/// through [`BATTERY_GAMMAS`], each paired with a random policy.
pub fn tabular_battery(count: usize, seed: u64) -> Result<Vec<(TabularMdp, TabularPolicy)>> {
    let root = RngStream::new(seed, 0);
    (0..count)
        .map(|i| {
            let s = root.derive(i as u64);
            let ns = 1 + (s.derive(0).stream_id % 8) as usize;
            let na = 1 + (s.derive(1).stream_id % 3) as usize;
            let m = TabularMdp::random(ns, na, BATTERY_GAMMAS[i % 3], s.derive(2))?;
            let pi = m.random_policy(s.derive(3));
            Ok((m, pi))
        })
        .collect()
}

fn check(name: &'static str, residuals: impl IntoIterator<Item = f64>, tolerance: f64) -> OracleCheck {
    let worst = residuals.into_iter().fold(0.0, f64::max);
    OracleCheck { name, passed: worst <= tolerance, worst, tolerance }
}

/// The tabular identity suite and the ridge closed-form check.
pub fn oracle_check(seed: u64) -> Result<Vec<OracleCheck>> {
    let battery = tabular_battery(100, seed)?;
    let mut occupancy_sum = Vec::new();
    let mut linear_form = Vec::new();
    let mut linear_form_normalized = Vec::new();
    let mut prop1 = Vec::new();
    for (m, pi) in &battery {
        let rho = tabular_rho(m, pi)?;
        let v = tabular_start_value(m, pi)?;
        let (_, v_tilde) = prop1_check(m, pi)?;
        occupancy_sum.push((rho.iter().sum::<f64>() - 1.0).abs());
        linear_form.push((dot(&rho, &m.rewards) - v).abs());
        linear_form_normalized.push((dot(&rho, &m.rewards) - (1.0 - m.gamma) * v).abs());
        prop1.push((v_tilde * (1.0 - m.gamma) - v).abs());
    }
    let mut prop1_undiscounted = Vec::new();
    for (m, pi) in tabular_battery(20, seed ^ 0x5eed)? {
        let m0 = TabularMdp { gamma: 0.0, ..m };
        let (v, v_tilde) = prop1_check(&m0, &pi)?;
        prop1_undiscounted.push((v - v_tilde).abs());
    }
    Ok(vec![
        ridge_check(seed)?,
        check("occupancy sums to one", occupancy_sum, 1e-10),
        check("value equals <rho, r>", linear_form, 1e-10),
        check("(1 - gamma) value equals <rho, r>", linear_form_normalized, 1e-10),
        check("occupancy-start value times (1 - gamma) equals value", prop1, 1e-10),
        check("occupancy-start value equals value at gamma = 0", prop1_undiscounted, 1e-10),
    ])
}

/// 200 random updates with `d = 8`, `λ = 0.1` against the normal equations.
fn ridge_check(seed: u64) -> Result<OracleCheck> {
    let (d, lambda, n) = (8, 0.1, 200);
    let root = RngStream::new(seed, 1);
    let xs: Vec<Vec<f64>> = (0..n).map(|i| gaussian_vector(root.derive2(0, i), d)).collect();
    let ys: Vec<f64> = gaussian_vector(root.derive(1), n as usize);
    let mut state = BanditState::new(d, lambda)?;
    for (x, y) in xs.iter().zip(&ys) {
        state = state.update(x, *y)?;
    }
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for i in 0..d {
        a[i * d + i] = lambda;
    }
    for (x, y) in xs.iter().zip(&ys) {
        for i in 0..d {
            b[i] += x[i] * y;
            for j in 0..d {
                a[i * d + j] += x[i] * x[j];
            }
        }
    }
    let exact = solve_dense(d, &a, &b)?;
    let diffs = state.estimate().iter().zip(&exact).map(|(p, q)| (p - q).abs());
    Ok(check("ridge estimate equals closed form", diffs, 1e-8))
}
