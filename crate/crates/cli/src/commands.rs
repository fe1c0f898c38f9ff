//! The seven command runners.
//!
//! Each runner builds its inputs from the parsed configuration first, so a
//! bad parameter fails before the output directory exists, then computes the
//! requested diagnostics and writes every artifact through the manifest log.
//! No runner reads wall-clock time or unordered containers, so reruns of the
//! same configuration and seed reproduce every artifact byte for byte.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde_json::json;

use defectscope::conslaw::{
    canonical_probe_bump, compactness_probe, nonlinearity_index, oscillation_experiment,
    weak_residual, ExperimentParams,
};
use defectscope::hmeasure::{bump_partition, estimate_hmeasure, generate_sequence};
use defectscope::spectral::{GridSpec, SampledField};
use defectscope::symbols::{
    admissibility_defect, commutator_matrix, uvjet_modulus, write_symbol_lattice_csv,
    write_tail_profile_csv, SymbolFn,
};

use crate::config::{RunConfig, RunSection, SymbolChoice, WindowChoice};
use crate::manifest::ArtifactLog;
use crate::{CliError, CommandName};

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub fn run(
    command: CommandName,
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<usize, CliError> {
    let mut log = ArtifactLog::new(out_dir);
    match command {
        CommandName::Project => cmd_project(config, &mut log)?,
        CommandName::Symbol => cmd_symbol(config, seed, &mut log)?,
        CommandName::Commutator => cmd_commutator(config, &mut log)?,
        CommandName::Hmeasure => cmd_hmeasure(config, &mut log)?,
        CommandName::Nonlinearity => cmd_nonlinearity(config, &mut log)?,
        CommandName::Defect => cmd_defect(config, &mut log)?,
        CommandName::Experiment => cmd_experiment(config, &mut log)?,
    }
    let count = log.len();
    log.finish(command.as_str(), seed, config)?;
    Ok(count)
}

/// Projects each configured frequency point onto the manifold and reports
/// the curve parameter alongside the foot point.
fn cmd_project(config: &RunConfig, log: &mut ArtifactLog) -> Result<(), CliError> {
    let grid = config.build_grid()?;
    let fibration = config.build_fibration()?;
    let mesh = config.build_mesh()?;
    let dims = grid.dims();
    let xi_list = &config.run.xi_list;
    if xi_list.is_empty() {
        return Err(validation("project needs run.xi_list with at least one point"));
    }

    let mut csv = String::new();
    for k in 0..dims {
        let _ = write!(csv, "xi_{k},");
    }
    csv.push_str("t");
    for k in 0..dims {
        let _ = write!(csv, ",eta_{k}");
    }
    csv.push('\n');
    for xi in xi_list {
        if xi.len() != dims {
            return Err(validation(format!(
                "projection point has {} coordinates for {dims} dims",
                xi.len()
            )));
        }
        let foot = fibration.fibre_solve(xi)?;
        for v in xi {
            let _ = write!(csv, "{v},");
        }
        let _ = write!(csv, "{}", foot.t);
        for v in &foot.eta {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }

    log.add_text("projections.csv", &csv)?;
    log.add_with("mesh.csv", |p| mesh.write_csv(p))?;
    Ok(())
}

/// Dumps the normalized symbol lattice per component, profiles its
/// fibre-invariance defect along the curves, and optionally samples its
/// oscillation modulus at high frequency.
fn cmd_symbol(config: &RunConfig, seed: u64, log: &mut ArtifactLog) -> Result<(), CliError> {
    let grid = config.build_grid()?;
    let fibration = config.build_fibration()?;
    let mesh = config.build_mesh()?;
    let dims = grid.dims();
    let run = &config.run;
    if run.t_list.is_empty() {
        return Err(validation("symbol needs run.t_list with at least one value"));
    }

    let mut symbols = Vec::with_capacity(dims);
    for k in 0..dims {
        symbols.push(SymbolFn::normalized_fractional(k, fibration.alpha())?);
    }

    let mut defects = String::from("axis,t,defect\n");
    for (k, sym) in symbols.iter().enumerate() {
        for &t in &run.t_list {
            let d = admissibility_defect(sym, &fibration, t, &mesh)?;
            let _ = writeln!(defects, "{k},{t},{d}");
        }
    }

    let mut uvjet = None;
    if !run.uvjet_r_list.is_empty() {
        if run.axis >= dims {
            return Err(validation(format!(
                "run.axis {} out of range for {dims} dims",
                run.axis
            )));
        }
        let sym = &symbols[run.axis];
        let mut rows = String::from("r,modulus\n");
        for &r in &run.uvjet_r_list {
            let m = uvjet_modulus(sym, &grid, run.uvjet_gap, r, run.uvjet_samples, seed)?;
            let _ = writeln!(rows, "{r},{m}");
        }
        uvjet = Some(rows);
    }

    for (k, sym) in symbols.iter().enumerate() {
        log.add_with(&format!("symbol_axis{k}.csv"), |p| {
            write_symbol_lattice_csv(sym, &grid, p)
        })?;
    }
    log.add_text("defect_profile.csv", &defects)?;
    if let Some(rows) = uvjet {
        log.add_text("uvjet_profile.csv", &rows)?;
    }
    Ok(())
}

/// Assembles the dense commutator of a symbol with a window and profiles how
/// its operator norm survives high-frequency truncation.
fn cmd_commutator(config: &RunConfig, log: &mut ArtifactLog) -> Result<(), CliError> {
    let grid = config.build_grid()?;
    let run = &config.run;
    let dims = grid.dims();

    let symbol = match run.symbol {
        SymbolChoice::NormalizedFractional => {
            let fibration = config.build_fibration()?;
            if run.axis >= dims {
                return Err(validation(format!(
                    "run.axis {} out of range for {dims} dims",
                    run.axis
                )));
            }
            SymbolFn::normalized_fractional(run.axis, fibration.alpha())?
        }
        SymbolChoice::Constant => SymbolFn::new("constant", |_| Complex64::ONE),
    };

    let window = build_window(&grid, run)?;
    let op = commutator_matrix(&symbol, &window, run.band_limit_b)?;

    let cutoffs = if run.r_list.is_empty() {
        let max_r = (0..grid.total_points())
            .map(|idx| grid.frequency_norm(idx))
            .fold(0.0f64, f64::max);
        (0..=8).map(|k| k as f64 / 8.0 * max_r).collect()
    } else {
        run.r_list.clone()
    };
    let profile = op.tail_profile(&cutoffs);
    let full_norm = op.tail_operator_norm(0.0);

    log.add_with("tail_profile.csv", |p| write_tail_profile_csv(&profile, p))?;
    log.add_json(
        "commutator_summary.json",
        &json!({
            "symbol": match run.symbol {
                SymbolChoice::NormalizedFractional => "normalized_fractional",
                SymbolChoice::Constant => "constant",
            },
            "axis": run.axis,
            "symbol_sup": op.symbol_sup(),
            "window_sup": op.window_sup(),
            "norm_bound": op.norm_bound(),
            "operator_norm": full_norm,
            "band_limit_b": run.band_limit_b,
        }),
    )?;
    Ok(())
}

/// Estimates the direction-resolved defect measure of the configured
/// sequence on the manifold mesh.
fn cmd_hmeasure(config: &RunConfig, log: &mut ArtifactLog) -> Result<(), CliError> {
    let grid = config.build_grid()?;
    let mesh = config.build_mesh()?;
    let spec = config.build_sequence(&grid)?;
    let partition = build_partition(&grid, &config.run)?;
    let estimate = estimate_hmeasure(
        &grid,
        &[spec],
        &partition,
        &mesh,
        &config.run.n_list,
    )?;

    log.add_with("hmeasure.json", |p| estimate.write_json(p))?;
    log.add_with("hmeasure.csv", |p| estimate.write_csv(p))?;
    log.add_with("p_marginal.csv", |p| estimate.write_p_marginal_csv(&mesh, 0, p))?;
    Ok(())
}

/// Classifies the configured flux as genuinely nonlinear or degenerate on
/// the manifold mesh.
fn cmd_nonlinearity(config: &RunConfig, log: &mut ArtifactLog) -> Result<(), CliError> {
    let grid = config.build_grid()?;
    let mesh = config.build_mesh()?;
    let flux = config.build_flux(&grid)?;
    let report = nonlinearity_index(&flux, &grid, &mesh, config.run.tol, config.run.threshold)?;
    log.add_with("nonlinearity.json", |p| report.write_json(p))?;
    Ok(())
}

/// Probes the entropy defect of one sequence member against modulated bumps
/// and reports its weak residual.
fn cmd_defect(config: &RunConfig, log: &mut ArtifactLog) -> Result<(), CliError> {
    let grid = config.build_grid()?;
    let flux = config.build_flux(&grid)?;
    let spec = config.build_sequence(&grid)?;
    let run = &config.run;
    let u = generate_sequence(&grid, &spec, run.n)?;

    let count = flux.lambda().count();
    let idx = run.lambda_index.unwrap_or(count / 2);
    if idx >= count {
        return Err(validation(format!(
            "lambda_index {idx} out of range for {count} lambda nodes"
        )));
    }
    let lambda = flux.lambda().value(idx);

    let phi1 = canonical_probe_bump(&grid);
    let report = compactness_probe(&u, lambda, &phi1, &flux, &run.modulations)?;
    let residual = weak_residual(&u, &flux, &phi1, run.two_pi_derivative)?;

    log.add_with("defect.json", |p| report.write_json(p))?;
    log.add_json(
        "residual.json",
        &json!({
            "n": run.n,
            "lambda": lambda,
            "lambda_index": idx,
            "weak_residual": { "re": residual.re, "im": residual.im },
            "modulus": residual.norm(),
        }),
    )?;
    Ok(())
}

/// Relaxes the oscillating sequence under the configured flux and viscosity
/// and tabulates the surviving defect mass per oscillation index.
fn cmd_experiment(config: &RunConfig, log: &mut ArtifactLog) -> Result<(), CliError> {
    let grid = config.build_grid()?;
    let mesh = config.build_mesh()?;
    let flux = config.build_flux(&grid)?;
    let spec = config.build_sequence(&grid)?;
    let run = &config.run;
    let partition = build_partition(&grid, run)?;
    let params = ExperimentParams {
        tau_end: run.tau_end,
        dtau: run.dtau,
        two_pi: run.two_pi_derivative,
    };
    let report = oscillation_experiment(
        &grid,
        &flux,
        &spec,
        run.eps,
        &partition,
        &mesh,
        &run.n_list,
        &params,
    )?;

    log.add_with("experiment.json", |p| report.write_json(p))?;
    log.add_with("masses.csv", |p| report.write_csv(p))?;
    Ok(())
}

fn build_partition(grid: &GridSpec, run: &RunSection) -> Result<Vec<SampledField>, CliError> {
    if run.x_cells == 0 {
        return Err(validation("x_cells must be at least 1"));
    }
    if run.x_cells == 1 {
        return Ok(vec![SampledField::constant(grid.clone(), Complex64::ONE)]);
    }
    bump_partition(grid, run.x_cells, run.x_window_factor).map_err(CliError::from)
}

/// Builds the commutator window on the grid: a periodized Gaussian or a
/// compactly supported raised-cosine bump, centered and scaled per the run
/// section.
fn build_window(grid: &GridSpec, run: &RunSection) -> Result<SampledField, CliError> {
    let dims = grid.dims();
    let lengths = grid.lengths().to_vec();
    let center = match &run.window_center {
        Some(c) if c.len() == dims => c.clone(),
        Some(c) => {
            return Err(validation(format!(
                "window_center has {} entries for {dims} dims",
                c.len()
            )))
        }
        None => lengths.iter().map(|l| l / 2.0).collect(),
    };
    let w = run.window_width;
    if !(w > 0.0) || !w.is_finite() {
        return Err(validation(format!(
            "window_width must be positive, got {w}"
        )));
    }
    let field = match run.window {
        WindowChoice::Gaussian => SampledField::from_fn(grid.clone(), |x| {
            let mut q = 0.0;
            for k in 0..dims {
                let d = wrap(x[k] - center[k], lengths[k]) / w;
                q += d * d;
            }
            Complex64::from((-0.5 * q).exp())
        }),
        WindowChoice::Bump => SampledField::from_fn(grid.clone(), |x| {
            let mut v = 1.0;
            for k in 0..dims {
                let s = wrap(x[k] - center[k], lengths[k]) / w;
                if s.abs() >= 1.0 {
                    return Complex64::ZERO;
                }
                let c = (FRAC_PI_2 * s).cos();
                v *= c * c;
            }
            Complex64::from(v)
        }),
    };
    Ok(field)
}

/// Wraps a displacement into `[-length/2, length/2)`.
fn wrap(d: f64, length: f64) -> f64 {
    let mut r = d % length;
    if r < -length / 2.0 {
        r += length;
    } else if r >= length / 2.0 {
        r -= length;
    }
    r
}
