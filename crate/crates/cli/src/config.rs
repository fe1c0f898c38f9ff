//! Declarative run configuration.
//!
//! A run is described by one TOML file with sections for the grid, the curve
//! fibration, the manifold mesh, an oscillating sequence recipe, a flux
//! family, and command knobs. Unknown keys anywhere are rejected, as are
//! parameters outside their documented ranges, so a typo fails the run
//! before any artifact is written.
//!
//! Sequence windows and two-scale profiles cannot be arbitrary closures in a
//! config file, so the `[sequence]` section names built-in shapes: a raised
//! cosine window for modulated waves and a sine-in-the-fast-variable profile
//! (optionally enveloped in the slow variable) for two-scale data. Custom
//! fluxes are continuous piecewise-linear interpolants of a breakpoint
//! table, one value row per component.

use std::f64::consts::TAU;
use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use defectscope::conslaw::{FluxFamily, LambdaGrid};
use defectscope::fibration::{FibrationSpec, ManifoldMesh};
use defectscope::hmeasure::{SequenceKind, SequenceSpec};
use defectscope::spectral::GridSpec;

use crate::CliError;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub fibration: FibrationSection,
    #[serde(default)]
    pub mesh: MeshSection,
    pub sequence: Option<SequenceSection>,
    pub flux: Option<FluxSection>,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dims: usize,
    pub points: usize,
    pub lengths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FibrationKindName {
    RaySphere,
    Parabolic,
    Fractional,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FibrationSection {
    pub kind: FibrationKindName,
    /// Component exponents; required for `fractional`, rejected otherwise.
    pub alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub resolution: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { resolution: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKindName {
    PlaneWave,
    ModulatedWave,
    Concentration,
    TwoScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeName {
    Flat,
    Cosine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    pub kind: SequenceKindName,
    /// Lattice mode for plane and modulated waves.
    pub mode: Option<Vec<i64>>,
    /// Center of the raised-cosine window (modulated waves); defaults to the
    /// middle of the domain.
    pub window_center: Option<Vec<f64>>,
    /// Half-width of the window as a fraction of each axis length, in
    /// (0, 0.5]; defaults to 0.25.
    pub window_width: Option<f64>,
    /// Concentration center; defaults to the middle of the domain.
    pub center: Option<Vec<f64>>,
    /// Concentration width in physical units.
    pub width: Option<f64>,
    /// Two-scale amplitude; defaults to 1.
    pub amplitude: Option<f64>,
    /// Slow-variable envelope for two-scale data; defaults to `flat`.
    pub envelope: Option<EnvelopeName>,
    #[serde(default = "default_n_min")]
    pub n_min: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

fn default_n_min() -> usize {
    1
}

fn default_n_max() -> usize {
    4096
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxKindName {
    Zero,
    Linear,
    Burgers,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxTable {
    /// Strictly increasing breakpoints.
    pub lambda: Vec<f64>,
    /// One row of flux values per component, each row matching `lambda`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSection {
    pub kind: FluxKindName,
    pub alpha: Vec<f64>,
    /// Component speeds for the linear flux.
    pub speeds: Option<Vec<f64>>,
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "default_lambda_count")]
    pub lambda_count: usize,
    pub table: Option<FluxTable>,
}

fn default_lambda_min() -> f64 {
    -1.0
}

fn default_lambda_max() -> f64 {
    1.0
}

fn default_lambda_count() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolChoice {
    NormalizedFractional,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowChoice {
    Gaussian,
    Bump,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Root seed for every sampled diagnostic; `--seed` overrides it.
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub out: Option<PathBuf>,
    /// Frequency points to project (one row per point).
    pub xi_list: Vec<Vec<f64>>,
    /// Curve parameters for the fibre-invariance defect profile.
    pub t_list: Vec<f64>,
    /// Cutoff radii for commutator tail profiles; empty means an automatic
    /// sweep up to the Nyquist radius.
    pub r_list: Vec<f64>,
    /// Frequency floors for the sampled oscillation modulus; empty skips it.
    pub uvjet_r_list: Vec<f64>,
    /// Frequency-gap radius for the oscillation modulus.
    pub uvjet_gap: f64,
    /// Base points drawn per oscillation-modulus estimate.
    pub uvjet_samples: usize,
    /// Component index for single-symbol diagnostics.
    pub axis: usize,
    /// Symbol used by the commutator command.
    pub symbol: SymbolChoice,
    /// Window shape used by the commutator command.
    pub window: WindowChoice,
    pub window_center: Option<Vec<f64>>,
    /// Window width in physical units.
    pub window_width: f64,
    /// Optional spectral radius beyond which the window is truncated.
    pub band_limit_b: Option<f64>,
    /// Oscillation indices for measure estimates and experiments.
    pub n_list: Vec<usize>,
    /// Sequence index used by the defect command.
    pub n: usize,
    /// Physical-space partition cells per axis (1 keeps the whole domain).
    pub x_cells: usize,
    /// Hump width in cell units for the physical partition, in (1, x_cells].
    pub x_window_factor: f64,
    /// Flux-derivative tolerance for the nonlinearity index.
    pub tol: f64,
    /// Degenerate-fraction threshold for the nonlinearity index.
    pub threshold: f64,
    /// Index into the flux lambda grid for the defect command; defaults to
    /// the middle node.
    pub lambda_index: Option<usize>,
    /// Modulation frequencies for entropy-defect probes.
    pub modulations: Vec<i64>,
    /// Viscosity for the relaxation experiment.
    pub eps: f64,
    /// Relaxation horizon.
    pub tau_end: f64,
    /// Explicit relaxation step; defaults to the stability ceiling.
    pub dtau: Option<f64>,
    /// Whether spatial derivatives carry the 2 pi factor of the integral
    /// Fourier convention.
    pub two_pi_derivative: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out: None,
            xi_list: Vec::new(),
            t_list: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            r_list: Vec::new(),
            uvjet_r_list: Vec::new(),
            uvjet_gap: 4.0,
            uvjet_samples: 2000,
            axis: 0,
            symbol: SymbolChoice::NormalizedFractional,
            window: WindowChoice::Gaussian,
            window_center: None,
            window_width: 0.1,
            band_limit_b: None,
            n_list: vec![2, 4, 8, 16],
            n: 1,
            x_cells: 1,
            x_window_factor: 1.5,
            tol: 1e-3,
            threshold: 0.05,
            lambda_index: None,
            modulations: vec![0, 1, 2, 4, 8],
            eps: 1e-3,
            tau_end: 1.0,
            dtau: None,
            two_pi_derivative: true,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| validation(format!("config parse error: {e}")))
    }

    pub fn build_grid(&self) -> Result<GridSpec, CliError> {
        let g = &self.grid;
        let lengths = match &g.lengths {
            Some(l) => l.clone(),
            None => vec![1.0; g.dims],
        };
        if lengths.len() != g.dims {
            return Err(validation(format!(
                "grid lengths has {} entries for {} dims",
                lengths.len(),
                g.dims
            )));
        }
        GridSpec::new(g.dims, g.points, &lengths).map_err(CliError::from)
    }

    pub fn build_fibration(&self) -> Result<FibrationSpec, CliError> {
        let dims = self.grid.dims;
        match self.fibration.kind {
            FibrationKindName::Fractional => {
                let alpha = self
                    .fibration
                    .alpha
                    .as_deref()
                    .ok_or_else(|| validation("fractional fibration needs alpha"))?;
                if alpha.len() != dims {
                    return Err(validation(format!(
                        "fibration alpha has {} entries for {} grid dims",
                        alpha.len(),
                        dims
                    )));
                }
                FibrationSpec::fractional(alpha).map_err(CliError::from)
            }
            FibrationKindName::RaySphere | FibrationKindName::Parabolic => {
                if self.fibration.alpha.is_some() {
                    return Err(validation(
                        "alpha is only accepted by the fractional fibration",
                    ));
                }
                let spec = match self.fibration.kind {
                    FibrationKindName::RaySphere => FibrationSpec::ray_sphere(dims),
                    _ => FibrationSpec::parabolic(dims),
                };
                spec.map_err(CliError::from)
            }
        }
    }

    pub fn build_mesh(&self) -> Result<ManifoldMesh, CliError> {
        let fibration = self.build_fibration()?;
        ManifoldMesh::build(fibration, self.mesh.resolution).map_err(CliError::from)
    }

    pub fn build_sequence(&self, grid: &GridSpec) -> Result<SequenceSpec, CliError> {
        let s = self
            .sequence
            .as_ref()
            .ok_or_else(|| validation("this command needs a [sequence] section"))?;
        let dims = grid.dims();
        let lengths = grid.lengths().to_vec();
        let mid: Vec<f64> = lengths.iter().map(|l| l / 2.0).collect();

        let take_mode = || -> Result<Vec<i64>, CliError> {
            let mode = s
                .mode
                .clone()
                .ok_or_else(|| validation("sequence kind needs a mode"))?;
            if mode.len() != dims {
                return Err(validation(format!(
                    "sequence mode has {} entries for {} dims",
                    mode.len(),
                    dims
                )));
            }
            Ok(mode)
        };

        let kind = match s.kind {
            SequenceKindName::PlaneWave => SequenceKind::PlaneWave { mode: take_mode()? },
            SequenceKindName::ModulatedWave => {
                let mode = take_mode()?;
                let center = match &s.window_center {
                    Some(c) if c.len() == dims => c.clone(),
                    Some(c) => {
                        return Err(validation(format!(
                            "window_center has {} entries for {dims} dims",
                            c.len()
                        )))
                    }
                    None => mid.clone(),
                };
                let frac = s.window_width.unwrap_or(0.25);
                if !(frac > 0.0 && frac <= 0.5) {
                    return Err(validation(format!(
                        "window_width must lie in (0, 0.5], got {frac}"
                    )));
                }
                let half: Vec<f64> = lengths.iter().map(|l| frac * l).collect();
                let lens = lengths.clone();
                let window = Arc::new(move |x: &[f64]| {
                    let mut w = 1.0;
                    for k in 0..x.len() {
                        let s = wrap(x[k] - center[k], lens[k]) / half[k];
                        if s.abs() >= 1.0 {
                            return Complex64::ZERO;
                        }
                        let c = (std::f64::consts::FRAC_PI_2 * s).cos();
                        w *= c * c;
                    }
                    Complex64::from(w)
                });
                SequenceKind::ModulatedWave { mode, window }
            }
            SequenceKindName::Concentration => {
                let center = match &s.center {
                    Some(c) if c.len() == dims => c.clone(),
                    Some(c) => {
                        return Err(validation(format!(
                            "center has {} entries for {dims} dims",
                            c.len()
                        )))
                    }
                    None => mid.clone(),
                };
                let min_len = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
                let width = s.width.unwrap_or(0.05 * min_len);
                SequenceKind::Concentration { center, width }
            }
            SequenceKindName::TwoScale => {
                let amplitude = s.amplitude.unwrap_or(1.0);
                if !amplitude.is_finite() {
                    return Err(validation(format!(
                        "two-scale amplitude must be finite, got {amplitude}"
                    )));
                }
                let envelope = s.envelope.unwrap_or(EnvelopeName::Flat);
                let l0 = lengths[0];
                let profile = Arc::new(move |x: &[f64], y: &[f64]| {
                    let fast = (TAU * y[0]).sin();
                    let slow = match envelope {
                        EnvelopeName::Flat => 1.0,
                        EnvelopeName::Cosine => 0.5 + 0.5 * (TAU * x[0] / l0).cos(),
                    };
                    Complex64::from(amplitude * fast * slow)
                });
                SequenceKind::TwoScale { profile }
            }
        };
        SequenceSpec::new(kind, s.n_min, s.n_max).map_err(CliError::from)
    }

    pub fn build_flux(&self, grid: &GridSpec) -> Result<FluxFamily, CliError> {
        let f = self
            .flux
            .as_ref()
            .ok_or_else(|| validation("this command needs a [flux] section"))?;
        if f.alpha.len() != grid.dims() {
            return Err(validation(format!(
                "flux alpha has {} entries for {} grid dims",
                f.alpha.len(),
                grid.dims()
            )));
        }
        let lambda = LambdaGrid::new(f.lambda_min, f.lambda_max, f.lambda_count)?;
        let flux = match f.kind {
            FluxKindName::Zero => {
                reject_flux_extras(f, "zero")?;
                FluxFamily::zero(&f.alpha, lambda)?
            }
            FluxKindName::Burgers => {
                reject_flux_extras(f, "burgers")?;
                FluxFamily::burgers(&f.alpha, lambda)?
            }
            FluxKindName::Linear => {
                if f.table.is_some() {
                    return Err(validation("linear flux does not take a table"));
                }
                let speeds = f
                    .speeds
                    .as_deref()
                    .ok_or_else(|| validation("linear flux needs speeds"))?;
                FluxFamily::linear(&f.alpha, speeds, lambda)?
            }
            FluxKindName::Custom => {
                if f.speeds.is_some() {
                    return Err(validation("custom flux does not take speeds"));
                }
                let table = f
                    .table
                    .as_ref()
                    .ok_or_else(|| validation("custom flux needs a table"))?;
                build_table_flux(&f.alpha, lambda, table)?
            }
        };
        // Piecewise-linear tables carry derivative corners that a centered
        // difference straddles, so only the smooth built-ins are
        // cross-checked against finite differences.
        if f.kind != FluxKindName::Custom {
            flux.validate_on(grid)?;
        }
        Ok(flux)
    }
}

fn reject_flux_extras(f: &FluxSection, kind: &str) -> Result<(), CliError> {
    if f.speeds.is_some() {
        return Err(validation(format!("{kind} flux does not take speeds")));
    }
    if f.table.is_some() {
        return Err(validation(format!("{kind} flux does not take a table")));
    }
    Ok(())
}

fn build_table_flux(
    alpha: &[f64],
    lambda: LambdaGrid,
    table: &FluxTable,
) -> Result<FluxFamily, CliError> {
    let bp = &table.lambda;
    if bp.len() < 2 {
        return Err(validation("flux table needs at least two breakpoints"));
    }
    if bp.windows(2).any(|w| !(w[1] > w[0])) || bp.iter().any(|v| !v.is_finite()) {
        return Err(validation(
            "flux table breakpoints must be finite and strictly increasing",
        ));
    }
    if table.values.len() != alpha.len() {
        return Err(validation(format!(
            "flux table has {} value rows for {} components",
            table.values.len(),
            alpha.len()
        )));
    }
    for row in &table.values {
        if row.len() != bp.len() {
            return Err(validation(format!(
                "flux table row has {} values for {} breakpoints",
                row.len(),
                bp.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(validation("flux table values must be finite"));
        }
    }
    let bp_f = bp.clone();
    let rows_f = table.values.clone();
    let bp_d = bp.clone();
    let rows_d = table.values.clone();
    FluxFamily::custom(
        alpha,
        lambda,
        move |k, _x, l| table_eval(&bp_f, &rows_f[k], l),
        move |k, _x, l| table_slope(&bp_d, &rows_d[k], l),
    )
    .map_err(CliError::from)
}

/// Index of the segment containing `l`, clamping beyond the table so the
/// interpolant extends linearly with the boundary slopes.
fn table_segment(bp: &[f64], l: f64) -> usize {
    let pos = bp.partition_point(|&b| b <= l);
    pos.clamp(1, bp.len() - 1) - 1
}

fn table_eval(bp: &[f64], row: &[f64], l: f64) -> f64 {
    let s = table_segment(bp, l);
    let slope = (row[s + 1] - row[s]) / (bp[s + 1] - bp[s]);
    row[s] + slope * (l - bp[s])
}

fn table_slope(bp: &[f64], row: &[f64], l: f64) -> f64 {
    let s = table_segment(bp, l);
    (row[s + 1] - row[s]) / (bp[s + 1] - bp[s])
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
