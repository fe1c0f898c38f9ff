//! Defect-measure estimation for bounded oscillating sequences.
//!
//! A sequence `u_n` that converges weakly to zero can still carry energy;
//! the defect object tracked here records where that energy sits in physical
//! space and in which direction on the fibration manifold it escapes to high
//! frequency. For test functions `phi_1, phi_2` on the torus and `psi` on
//! the manifold, the sesquilinear form at a fixed resolution is
//!
//! ```text
//!   B_n(phi_1, phi_2, psi)
//!     = dxi * sum_{xi != 0} F(phi_1 u_n)(xi) conj(F(phi_2 u_n)(xi)) psi(project(xi))
//! ```
//!
//! with the manifold factor applied outside the conjugation. The frequency
//! origin is skipped: it lies on no fibre, and for sequences drifting to
//! high frequency it carries the (vanishing) mean.
//!
//! The estimator discretizes both localizations: physical space by a smooth
//! nonnegative partition of unity, the manifold by the cells of a
//! [`ManifoldMesh`]. For components `u^(i)`, x-cells `a` and manifold cells
//! `b` it tabulates
//!
//! ```text
//!   w[i, j, a, b] = dxi * sum_{cell(xi) = b} F(chi_a u^(i))(xi) conj(F(chi_a u^(j))(xi))
//! ```
//!
//! at each requested oscillation index `n`. Every block `w[., ., a, b]` is a
//! Gram matrix, hence Hermitian and positive semidefinite by construction;
//! summing over `b` regroups one absolutely convergent sum, so mesh
//! refinement preserves mass. Those identities, not external references, are
//! what the tests check.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fibration::ManifoldMesh;
use crate::spectral::{dft, window_apply, GridSpec, SampledField, Space};

/// Largest number of sequence components an estimate will hold.
pub const MAX_COMPONENTS: usize = 8;
/// Largest number of physical-space partition cells an estimate will hold.
pub const MAX_X_CELLS: usize = 64;
/// Largest number of manifold cells an estimate will hold.
pub const MAX_P_CELLS: usize = 256;

type Window = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;
type TwoScaleProfile = Arc<dyn Fn(&[f64], &[f64]) -> Complex64 + Send + Sync>;

/// Recipes for bounded sequences indexed by an oscillation parameter `n`.
#[derive(Clone)]
pub enum SequenceKind {
    /// `exp(2 pi i n m . x / L)`: pure oscillation along a fixed mode.
    PlaneWave { mode: Vec<i64> },
    /// A plane wave under a fixed smooth amplitude window.
    ModulatedWave { mode: Vec<i64>, window: Window },
    /// `n^(d/2) rho(n (x - c) / width)` with Gaussian profile `rho`:
    /// constant-energy concentration at the point `c`.
    Concentration { center: Vec<f64>, width: f64 },
    /// `v(x, n x)` for a two-scale profile `v`; the caller keeps `v`
    /// bounded and periodic in its fast argument.
    TwoScale { profile: TwoScaleProfile },
}

impl std::fmt::Debug for SequenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SequenceKind::PlaneWave { mode } => write!(f, "PlaneWave({mode:?})"),
            SequenceKind::ModulatedWave { mode, .. } => write!(f, "ModulatedWave({mode:?})"),
            SequenceKind::Concentration { center, width } => {
                write!(f, "Concentration({center:?}, width {width})")
            }
            SequenceKind::TwoScale { .. } => write!(f, "TwoScale"),
        }
    }
}

/// A sequence recipe together with the range of oscillation indices on
/// which it is declared admissible.
#[derive(Clone, Debug)]
pub struct SequenceSpec {
    kind: SequenceKind,
    n_min: usize,
    n_max: usize,
}

impl SequenceSpec {
    pub fn new(kind: SequenceKind, n_min: usize, n_max: usize) -> Result<Self> {
        if n_min == 0 || n_min > n_max {
            return Err(Error::Contract(format!(
                "oscillation range must satisfy 1 <= n_min <= n_max, got [{n_min}, {n_max}]"
            )));
        }
        Ok(SequenceSpec { kind, n_min, n_max })
    }

    pub fn kind(&self) -> &SequenceKind {
        &self.kind
    }

    pub fn range(&self) -> (usize, usize) {
        (self.n_min, self.n_max)
    }
}

/// Wraps a displacement into `[-length/2, length/2)`.
fn wrap_displacement(d: f64, length: f64) -> f64 {
    let mut r = d % length;
    if r < -length / 2.0 {
        r += length;
    } else if r >= length / 2.0 {
        r -= length;
    }
    r
}

/// Samples the `n`-th member of a sequence on the grid. Plane-wave modes
/// are checked against the Nyquist box after scaling by `n`.
pub fn generate_sequence(grid: &GridSpec, spec: &SequenceSpec, n: usize) -> Result<SampledField> {
    if n < spec.n_min || n > spec.n_max {
        return Err(Error::Contract(format!(
            "oscillation index {n} outside declared range [{}, {}]",
            spec.n_min, spec.n_max
        )));
    }
    match &spec.kind {
        SequenceKind::PlaneWave { mode } => {
            let scaled = scale_mode(grid, mode, n)?;
            SampledField::mode_field(grid.clone(), &scaled)
        }
        SequenceKind::ModulatedWave { mode, window } => {
            let scaled = scale_mode(grid, mode, n)?;
            let carrier = SampledField::mode_field(grid.clone(), &scaled)?;
            let w = window.clone();
            let amplitude = SampledField::from_fn(grid.clone(), move |x| w(x));
            window_apply(&amplitude, &carrier)
        }
        SequenceKind::Concentration { center, width } => {
            if center.len() != grid.dims() {
                return Err(Error::Contract(format!(
                    "concentration center has {} coordinates on a {}-d grid",
                    center.len(),
                    grid.dims()
                )));
            }
            if !(*width > 0.0) {
                return Err(Error::Domain(format!(
                    "concentration width must be positive, got {width}"
                )));
            }
            let c = center.clone();
            let w = *width;
            let lengths = grid.lengths().to_vec();
            let scale = (n as f64).powf(grid.dims() as f64 / 2.0);
            Ok(SampledField::from_fn(grid.clone(), move |x| {
                let mut q = 0.0;
                for (k, (&xk, &ck)) in x.iter().zip(&c).enumerate() {
                    let d = n as f64 * wrap_displacement(xk - ck, lengths[k]);
                    q += d * d;
                }
                Complex64::new(scale * (-q / (2.0 * w * w)).exp(), 0.0)
            }))
        }
        SequenceKind::TwoScale { profile } => {
            let v = profile.clone();
            Ok(SampledField::from_fn(grid.clone(), move |x| {
                let fast: Vec<f64> = x.iter().map(|&c| n as f64 * c).collect();
                v(x, &fast)
            }))
        }
    }
}

fn scale_mode(grid: &GridSpec, mode: &[i64], n: usize) -> Result<Vec<i64>> {
    if mode.len() != grid.dims() {
        return Err(Error::Contract(format!(
            "mode has {} components on a {}-d grid",
            mode.len(),
            grid.dims()
        )));
    }
    let scaled: Vec<i64> = mode.iter().map(|&m| m * n as i64).collect();
    // Surfaces an aliasing error before any field is built.
    grid.mode_index(&scaled)?;
    Ok(scaled)
}

/// Smooth nonnegative partition of unity from overlapping squared-cosine
/// humps, `cells_per_axis` per axis, tensorized over axes and normalized so
/// the node sum is exactly one. `width_factor` is the hump support measured
/// in cell widths; it must exceed 1 so neighboring humps overlap.
pub fn bump_partition(
    grid: &GridSpec,
    cells_per_axis: usize,
    width_factor: f64,
) -> Result<Vec<SampledField>> {
    if cells_per_axis == 0 {
        return Err(Error::Contract("partition needs at least one cell".into()));
    }
    if !(width_factor > 1.0) || width_factor > cells_per_axis as f64 {
        return Err(Error::Domain(format!(
            "hump width must lie in (1, cells_per_axis] cell widths, got {width_factor}"
        )));
    }
    let dims = grid.dims();
    let cells = cells_per_axis.pow(dims as u32);
    let np = grid.total_points();

    // Unnormalized humps, then a pointwise normalization; the tensor sum
    // is positive everywhere because adjacent humps overlap.
    let mut raw: Vec<Vec<f64>> = vec![vec![0.0; np]; cells];
    let mut total: Vec<f64> = vec![0.0; np];
    for (cell, values) in raw.iter_mut().enumerate() {
        let multi = decompose_cell(cell, cells_per_axis, dims);
        for (idx, slot) in values.iter_mut().enumerate() {
            let x = grid.point(idx);
            let mut g = 1.0;
            for axis in 0..dims {
                let h = grid.lengths()[axis] / cells_per_axis as f64;
                let center = (multi[axis] as f64 + 0.5) * h;
                let r = wrap_displacement(x[axis] - center, grid.lengths()[axis]);
                let support = width_factor * h / 2.0;
                if r.abs() >= support {
                    g = 0.0;
                    break;
                }
                let c = (std::f64::consts::FRAC_PI_2 * r / support).cos();
                g *= c * c;
            }
            *slot = g;
            total[idx] += g;
        }
    }
    let mut out = Vec::with_capacity(cells);
    for values in raw {
        let normalized: Vec<Complex64> = values
            .iter()
            .zip(&total)
            .map(|(&g, &t)| Complex64::new(g / t, 0.0))
            .collect();
        out.push(SampledField::new(grid.clone(), Space::Physical, normalized)?);
    }
    Ok(out)
}

fn decompose_cell(cell: usize, per_axis: usize, dims: usize) -> Vec<usize> {
    let mut multi = vec![0usize; dims];
    let mut rest = cell;
    for axis in (0..dims).rev() {
        multi[axis] = rest % per_axis;
        rest /= per_axis;
    }
    multi
}

/// Checks that the fields form a partition of unity: same physical grid,
/// real and nonnegative values, node sums within `1e-8` of one.
pub fn validate_partition(parts: &[SampledField]) -> Result<()> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("partition is empty".into()))?;
    let grid = first.grid();
    for (i, p) in parts.iter().enumerate() {
        if p.grid() != grid || p.space() != Space::Physical {
            return Err(Error::Contract(format!(
                "partition member {i} is not a physical field on the common grid"
            )));
        }
    }
    for idx in 0..grid.total_points() {
        let mut sum = 0.0;
        for (i, p) in parts.iter().enumerate() {
            let v = p.values()[idx];
            if v.im.abs() > 1e-12 || v.re < -1e-10 {
                return Err(Error::Contract(format!(
                    "partition member {i} is negative or complex at node {idx} ({v})"
                )));
            }
            sum += v.re;
        }
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::Contract(format!(
                "partition sums to {sum} at node {idx}"
            )));
        }
    }
    Ok(())
}

/// The sesquilinear form at one oscillation index: test functions on the
/// torus, manifold factor outside the conjugation, origin excluded.
pub fn quadratic_form(
    u: &SampledField,
    phi1: &SampledField,
    phi2: &SampledField,
    psi: &dyn Fn(&[f64]) -> Complex64,
    fibration: &crate::fibration::FibrationSpec,
) -> Result<Complex64> {
    let w1 = dft(&window_apply(phi1, u)?)?;
    let w2 = dft(&window_apply(phi2, u)?)?;
    let grid = u.grid();
    let dxi = grid.dual_cell_volume();
    let mut acc = Complex64::ZERO;
    for idx in 1..grid.total_points() {
        let xi = grid.frequency(idx);
        let eta = fibration.project(&xi)?;
        acc += w1.values()[idx] * w2.values()[idx].conj() * psi(&eta) * dxi;
    }
    Ok(acc)
}

/// The manifold cell of every lattice frequency, with the origin excluded
/// from every bin (it lies on no fibre).
pub fn manifold_cell_table(grid: &GridSpec, mesh: &ManifoldMesh) -> Result<Vec<Option<usize>>> {
    let np = grid.total_points();
    let mut table = Vec::with_capacity(np);
    table.push(None);
    for idx in 1..np {
        let eta = mesh.fibration().project(&grid.frequency(idx))?;
        table.push(Some(mesh.cell_of(&eta)?));
    }
    Ok(table)
}

/// Block tabulation of the defect estimate across oscillation indices.
#[derive(Clone, Debug)]
pub struct HMeasureEstimate {
    components: usize,
    x_cells: usize,
    p_cells: usize,
    n_list: Vec<usize>,
    /// One flat weight table per oscillation index, laid out as
    /// `((i * components + j) * x_cells + a) * p_cells + b`.
    snapshots: Vec<Vec<Complex64>>,
}

/// Runs the estimator: generates each component at each `n`, localizes by
/// the x-partition, bins spectra by manifold cell, and tabulates all
/// component pair correlations.
pub fn estimate_hmeasure(
    grid: &GridSpec,
    components: &[SequenceSpec],
    x_partition: &[SampledField],
    mesh: &ManifoldMesh,
    n_list: &[usize],
) -> Result<HMeasureEstimate> {
    let r = components.len();
    if r == 0 || r > MAX_COMPONENTS {
        return Err(Error::Size(format!(
            "component count {r} outside 1..={MAX_COMPONENTS}"
        )));
    }
    validate_partition(x_partition)?;
    let a_cells = x_partition.len();
    if a_cells > MAX_X_CELLS {
        return Err(Error::Size(format!(
            "{a_cells} x-cells exceed the cap {MAX_X_CELLS}"
        )));
    }
    let b_cells = mesh.cells().len();
    if b_cells > MAX_P_CELLS {
        return Err(Error::Size(format!(
            "{b_cells} manifold cells exceed the cap {MAX_P_CELLS}"
        )));
    }
    if x_partition[0].grid() != grid {
        return Err(Error::Contract(
            "x-partition lives on a different grid".into(),
        ));
    }
    if mesh.fibration().dim() != grid.dims() {
        return Err(Error::Contract(format!(
            "fibration dimension {} does not match grid dimension {}",
            mesh.fibration().dim(),
            grid.dims()
        )));
    }
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract(
            "oscillation indices must be strictly increasing and nonempty".into(),
        ));
    }

    // The manifold cell of every lattice frequency, fixed across n.
    let np = grid.total_points();
    let cell_of_xi = manifold_cell_table(grid, mesh)?;

    let dxi = grid.dual_cell_volume();
    let mut snapshots = Vec::with_capacity(n_list.len());
    for &n in n_list {
        // Localized spectra for every (component, x-cell) pair.
        let mut spectra: Vec<Vec<Complex64>> = Vec::with_capacity(r * a_cells);
        for spec in components {
            let field = generate_sequence(grid, spec, n)?;
            for chi in x_partition {
                let localized = dft(&window_apply(chi, &field)?)?;
                spectra.push(localized.values().to_vec());
            }
        }
        let mut weights = vec![Complex64::ZERO; r * r * a_cells * b_cells];
        for i in 0..r {
            for j in i..r {
                for a in 0..a_cells {
                    let wi = &spectra[i * a_cells + a];
                    let wj = &spectra[j * a_cells + a];
                    let base_ij = ((i * r + j) * a_cells + a) * b_cells;
                    for idx in 1..np {
                        if let Some(b) = cell_of_xi[idx] {
                            weights[base_ij + b] += wi[idx] * wj[idx].conj() * dxi;
                        }
                    }
                    if j > i {
                        let base_ji = ((j * r + i) * a_cells + a) * b_cells;
                        for b in 0..b_cells {
                            weights[base_ji + b] = weights[base_ij + b].conj();
                        }
                    }
                }
            }
        }
        snapshots.push(weights);
    }

    Ok(HMeasureEstimate {
        components: r,
        x_cells: a_cells,
        p_cells: b_cells,
        n_list: n_list.to_vec(),
        snapshots,
    })
}

impl HMeasureEstimate {
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn x_cells(&self) -> usize {
        self.x_cells
    }

    pub fn p_cells(&self) -> usize {
        self.p_cells
    }

    pub fn n_list(&self) -> &[usize] {
        &self.n_list
    }

    fn flat(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        ((i * self.components + j) * self.x_cells + a) * self.p_cells + b
    }

    /// Weight at the largest oscillation index.
    pub fn entry(&self, i: usize, j: usize, a: usize, b: usize) -> Complex64 {
        self.snapshots.last().unwrap()[self.flat(i, j, a, b)]
    }

    /// Weight at `n_list[n_idx]`.
    pub fn entry_at(&self, n_idx: usize, i: usize, j: usize, a: usize, b: usize) -> Complex64 {
        self.snapshots[n_idx][self.flat(i, j, a, b)]
    }

    /// The `r x r` component block at one `(x-cell, manifold-cell)` pair.
    pub fn block(&self, a: usize, b: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.components, self.components, |i, j| {
            self.entry(i, j, a, b)
        })
    }

    /// Smallest eigenvalue of the Hermitian block; the tabulation is a Gram
    /// matrix, so up to roundoff this is nonnegative.
    pub fn block_min_eigenvalue(&self, a: usize, b: usize) -> f64 {
        let block = self.block(a, b);
        // Symmetrize away the roundoff skew before the eigensolve.
        let herm = (&block + block.adjoint()).unscale(2.0);
        herm.symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, &l| acc.min(l))
    }

    /// Mass of component `i` per x-cell (manifold marginal summed out).
    pub fn per_x_cell_mass(&self, i: usize) -> Vec<f64> {
        (0..self.x_cells)
            .map(|a| {
                (0..self.p_cells)
                    .map(|b| self.entry(i, i, a, b).re)
                    .sum()
            })
            .collect()
    }

    /// Mass of component `i` per manifold cell (x marginal summed out).
    pub fn p_marginal(&self, i: usize) -> Vec<f64> {
        (0..self.p_cells)
            .map(|b| {
                (0..self.x_cells)
                    .map(|a| self.entry(i, i, a, b).re)
                    .sum()
            })
            .collect()
    }

    pub fn total_mass(&self, i: usize) -> f64 {
        self.per_x_cell_mass(i).iter().sum()
    }

    /// Largest entry change between consecutive oscillation indices; a
    /// settling sequence of tabulations drives this toward zero.
    pub fn stabilization(&self) -> Vec<f64> {
        self.snapshots
            .windows(2)
            .map(|pair| {
                pair[0]
                    .iter()
                    .zip(&pair[1])
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let snapshots: Vec<serde_json::Value> = self
            .n_list
            .iter()
            .zip(&self.snapshots)
            .map(|(n, weights)| {
                serde_json::json!({
                    "n": n,
                    "weights": weights
                        .iter()
                        .map(|w| serde_json::json!([w.re, w.im]))
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "components": self.components,
            "x_cells": self.x_cells,
            "p_cells": self.p_cells,
            "layout": "((i * components + j) * x_cells + a) * p_cells + b",
            "snapshots": snapshots,
        });
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &doc)
            .map_err(|e| Error::Parse(format!("serializing estimate: {e}")))?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "n,i,j,x_cell,p_cell,re,im")?;
        for (n, weights) in self.n_list.iter().zip(&self.snapshots) {
            for i in 0..self.components {
                for j in 0..self.components {
                    for a in 0..self.x_cells {
                        for b in 0..self.p_cells {
                            let v = weights[self.flat(i, j, a, b)];
                            writeln!(w, "{n},{i},{j},{a},{b},{},{}", v.re, v.im)?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Manifold marginal of one component with node coordinates attached,
    /// ready for plotting.
    pub fn write_p_marginal_csv(&self, mesh: &ManifoldMesh, i: usize, path: &Path) -> Result<()> {
        if mesh.cells().len() != self.p_cells {
            return Err(Error::Contract(format!(
                "mesh has {} cells but the estimate was built with {}",
                mesh.cells().len(),
                self.p_cells
            )));
        }
        let marginal = self.p_marginal(i);
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let dim = mesh.fibration().dim();
        let coords: Vec<String> = (1..=dim).map(|k| format!("eta_{k}")).collect();
        writeln!(w, "cell,{},mass", coords.join(","))?;
        for (b, cell) in mesh.cells().iter().enumerate() {
            let xs: Vec<String> = cell.node.iter().map(|c| format!("{c}")).collect();
            writeln!(w, "{b},{},{}", xs.join(","), marginal[b])?;
        }
        w.flush()?;
        Ok(())
    }
}
