//! Periodic grids and the discrete Fourier transform in integral convention.
//!
//! Fields live on the torus `[0, L_1) x ... x [0, L_d)` sampled on a uniform
//! lattice with `N` points per axis (`N` a power of two, `d <= 3`). The
//! forward transform approximates the continuum transform
//!
//! ```text
//!   u_hat(xi) = integral u(x) exp(-2 pi i x . xi) dx
//! ```
//!
//! so the raw FFT sum is scaled by the spatial cell volume `prod_k L_k / N`,
//! and the inverse sum is scaled by the dual cell volume `prod_k 1 / L_k`.
//! Frequencies are measured in cycles per unit length and run over the signed
//! lattice `{ m / L_k : -N/2 <= m < N/2 }` per axis, stored in FFT order
//! (non-negative modes first, then the negative tail).
//!
//! With these weights Plancherel holds exactly in exact arithmetic:
//! `sum_x |u|^2 dx = sum_xi |u_hat|^2 dxi`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Maximum supported dimension.
pub const MAX_DIMS: usize = 3;

/// Coordinate of a lattice point or frequency node. Derefs to a slice of
/// length `dims` so evaluators can take `&[f64]` without allocation.
#[derive(Clone, Copy, Debug)]
pub struct Coord {
    buf: [f64; MAX_DIMS],
    len: usize,
}

impl Coord {
    pub fn from_slice(v: &[f64]) -> Self {
        let mut buf = [0.0; MAX_DIMS];
        buf[..v.len()].copy_from_slice(v);
        Coord { buf, len: v.len() }
    }
}

impl std::ops::Deref for Coord {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.buf[..self.len]
    }
}

/// Shape of a periodic sampling lattice: dimension, points per axis, box
/// lengths per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    dims: usize,
    n: usize,
    lengths: Vec<f64>,
}

impl GridSpec {
    pub fn new(dims: usize, n: usize, lengths: &[f64]) -> Result<Self> {
        if dims == 0 || dims > MAX_DIMS {
            return Err(Error::Contract(format!(
                "grid dimension must be 1..={MAX_DIMS}, got {dims}"
            )));
        }
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::Contract(format!(
                "points per axis must be a power of two >= 2, got {n}"
            )));
        }
        if n.pow(dims as u32) < 4 {
            return Err(Error::Contract(format!(
                "total lattice size must be at least 4, got {}",
                n.pow(dims as u32)
            )));
        }
        if lengths.len() != dims {
            return Err(Error::Contract(format!(
                "expected {dims} box lengths, got {}",
                lengths.len()
            )));
        }
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Contract(format!(
                "box lengths must be positive and finite, got {lengths:?}"
            )));
        }
        Ok(GridSpec {
            dims,
            n,
            lengths: lengths.to_vec(),
        })
    }

    /// Square grid with unit box on every axis.
    pub fn unit(dims: usize, n: usize) -> Result<Self> {
        GridSpec::new(dims, n, &vec![1.0; dims])
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn total_points(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    /// Volume of one spatial cell, `prod_k L_k / N`.
    pub fn cell_volume(&self) -> f64 {
        self.lengths.iter().map(|l| l / self.n as f64).product()
    }

    /// Volume of one frequency cell, `prod_k 1 / L_k`.
    pub fn dual_cell_volume(&self) -> f64 {
        self.lengths.iter().map(|l| 1.0 / l).product()
    }

    /// Stride of `axis` in the row-major layout (axis 0 slowest).
    fn axis_stride(&self, axis: usize) -> usize {
        self.n.pow((self.dims - 1 - axis) as u32)
    }

    /// Per-axis lattice indices (unsigned, in `0..N`) of a linear index.
    pub fn decompose(&self, idx: usize) -> [usize; MAX_DIMS] {
        let mut out = [0usize; MAX_DIMS];
        let mut rest = idx;
        for axis in (0..self.dims).rev() {
            out[axis] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    /// Signed frequency integers per axis, each in `[-N/2, N/2)`.
    pub fn signed_mode(&self, idx: usize) -> [i64; MAX_DIMS] {
        let raw = self.decompose(idx);
        let mut out = [0i64; MAX_DIMS];
        let half = (self.n / 2) as i64;
        for axis in 0..self.dims {
            let m = raw[axis] as i64;
            out[axis] = if m >= half { m - self.n as i64 } else { m };
        }
        out
    }

    /// Linear index of the signed mode `m` (per axis in `[-N/2, N/2)`).
    pub fn mode_index(&self, m: &[i64]) -> Result<usize> {
        if m.len() != self.dims {
            return Err(Error::Contract(format!(
                "mode has {} components, grid has {}",
                m.len(),
                self.dims
            )));
        }
        let half = (self.n / 2) as i64;
        let mut idx = 0usize;
        for axis in 0..self.dims {
            if m[axis] < -half || m[axis] >= half {
                return Err(Error::Aliasing(format!(
                    "mode component {} on axis {axis} outside [-{half}, {half})",
                    m[axis]
                )));
            }
            let wrapped = m[axis].rem_euclid(self.n as i64) as usize;
            idx += wrapped * self.axis_stride(axis);
        }
        Ok(idx)
    }

    /// Spatial coordinates of lattice point `idx`.
    pub fn point(&self, idx: usize) -> Coord {
        let raw = self.decompose(idx);
        let mut buf = [0.0; MAX_DIMS];
        for axis in 0..self.dims {
            buf[axis] = raw[axis] as f64 * self.lengths[axis] / self.n as f64;
        }
        Coord {
            buf,
            len: self.dims,
        }
    }

    /// Frequency (cycles per unit length) of lattice node `idx`.
    pub fn frequency(&self, idx: usize) -> Coord {
        let m = self.signed_mode(idx);
        let mut buf = [0.0; MAX_DIMS];
        for axis in 0..self.dims {
            buf[axis] = m[axis] as f64 / self.lengths[axis];
        }
        Coord {
            buf,
            len: self.dims,
        }
    }

    /// Euclidean norm of the frequency at node `idx`.
    pub fn frequency_norm(&self, idx: usize) -> f64 {
        let f = self.frequency(idx);
        f.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest frequency norm on the lattice (corner of the Nyquist box).
    pub fn max_frequency_norm(&self) -> f64 {
        (0..self.dims)
            .map(|axis| {
                let m = (self.n / 2) as f64;
                let f = m / self.lengths[axis];
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Lattice node index of the periodic frequency difference `m_i - m_j`.
    pub fn wrapped_difference(&self, i: usize, j: usize) -> usize {
        let a = self.decompose(i);
        let b = self.decompose(j);
        let mut idx = 0usize;
        for axis in 0..self.dims {
            let diff = (a[axis] + self.n - b[axis]) % self.n;
            idx += diff * self.axis_stride(axis);
        }
        idx
    }
}

/// Which side of the transform a field currently lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Physical,
    Frequency,
}

/// A complex scalar field sampled on a [`GridSpec`] lattice, tagged with the
/// space it lives in.
#[derive(Clone, Debug)]
pub struct SampledField {
    grid: GridSpec,
    space: Space,
    values: Vec<Complex64>,
}

impl SampledField {
    pub fn new(grid: GridSpec, space: Space, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.total_points() {
            return Err(Error::Contract(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.total_points()
            )));
        }
        Ok(SampledField {
            grid,
            space,
            values,
        })
    }

    pub fn zeros(grid: GridSpec, space: Space) -> Self {
        let n = grid.total_points();
        SampledField {
            grid,
            space,
            values: vec![Complex64::ZERO; n],
        }
    }

    pub fn constant(grid: GridSpec, value: Complex64) -> Self {
        let n = grid.total_points();
        SampledField {
            grid,
            space: Space::Physical,
            values: vec![value; n],
        }
    }

    /// Physical-space field from a pointwise evaluator.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.total_points())
            .map(|i| f(&grid.point(i)))
            .collect();
        SampledField {
            grid,
            space: Space::Physical,
            values,
        }
    }

    /// The pure oscillation `exp(2 pi i (m/L) . x)` for a signed lattice mode.
    pub fn mode_field(grid: GridSpec, m: &[i64]) -> Result<Self> {
        grid.mode_index(m)?;
        let freq: Vec<f64> = m
            .iter()
            .zip(grid.lengths())
            .map(|(&mi, &l)| mi as f64 / l)
            .collect();
        Ok(SampledField::from_fn(grid, |x| {
            let phase: f64 = x.iter().zip(&freq).map(|(xi, fi)| xi * fi).sum();
            Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * phase)
        }))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// Squared L2 norm with the measure of the field's space.
    pub fn norm_sq(&self) -> f64 {
        let weight = match self.space {
            Space::Physical => self.grid.cell_volume(),
            Space::Frequency => self.grid.dual_cell_volume(),
        };
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * weight
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Mean value over the lattice (physical fields only).
    pub fn mean(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Writes `index,re,im` rows. Floats use shortest round-trip formatting,
    /// so a read-back reproduces the field bit for bit.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "index,re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i},{},{}", v.re, v.im)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(grid: GridSpec, space: Space, path: &Path) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut values = Vec::with_capacity(grid.total_points());
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "index,re,im" {
                    return Err(Error::Parse(format!("unexpected csv header: {line}")));
                }
                continue;
            }
            let mut parts = line.split(',');
            let idx: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad index on line {}", lineno + 1)))?;
            if idx != values.len() {
                return Err(Error::Parse(format!(
                    "non-sequential index {idx} on line {}",
                    lineno + 1
                )));
            }
            let re: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad re on line {}", lineno + 1)))?;
            let im: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad im on line {}", lineno + 1)))?;
            values.push(Complex64::new(re, im));
        }
        SampledField::new(grid, space, values)
    }

    /// Raw dump: little-endian f64 pairs (re, im) in row-major lattice order.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(grid: GridSpec, space: Space, path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let expected = grid.total_points() * 16;
        if bytes.len() != expected {
            return Err(Error::Parse(format!(
                "binary dump has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        SampledField::new(grid, space, values)
    }
}

/// In-place unnormalized FFT sweep along every axis.
fn fft_sweep(grid: &GridSpec, values: &mut [Complex64], inverse: bool) {
    let n = grid.points_per_axis();
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex64::ZERO; n];
    for axis in 0..grid.dims() {
        let stride = grid.axis_stride(axis);
        let block = n * stride;
        let blocks = grid.total_points() / block;
        for outer in 0..blocks {
            for inner in 0..stride {
                let base = outer * block + inner;
                for (k, slot) in line.iter_mut().enumerate() {
                    *slot = values[base + k * stride];
                }
                fft.process(&mut line);
                for (k, slot) in line.iter().enumerate() {
                    values[base + k * stride] = *slot;
                }
            }
        }
    }
}

/// Forward transform. Requires a physical-space field; the result carries the
/// cell-volume weight of the integral convention.
pub fn dft(u: &SampledField) -> Result<SampledField> {
    if u.space() != Space::Physical {
        return Err(Error::Contract(
            "dft expects a physical-space field".into(),
        ));
    }
    let mut values = u.values().to_vec();
    fft_sweep(u.grid(), &mut values, false);
    let scale = u.grid().cell_volume();
    for v in &mut values {
        *v *= scale;
    }
    SampledField::new(u.grid().clone(), Space::Frequency, values)
}

/// Inverse transform; exact two-sided inverse of [`dft`].
pub fn idft(u: &SampledField) -> Result<SampledField> {
    if u.space() != Space::Frequency {
        return Err(Error::Contract(
            "idft expects a frequency-space field".into(),
        ));
    }
    let mut values = u.values().to_vec();
    fft_sweep(u.grid(), &mut values, true);
    let scale = u.grid().dual_cell_volume();
    for v in &mut values {
        *v *= scale;
    }
    SampledField::new(u.grid().clone(), Space::Physical, values)
}

/// Pointwise product `w * u` of two physical fields on the same grid.
pub fn window_apply(w: &SampledField, u: &SampledField) -> Result<SampledField> {
    if w.grid() != u.grid() {
        return Err(Error::Contract(
            "window and field live on different grids".into(),
        ));
    }
    if w.space() != Space::Physical || u.space() != Space::Physical {
        return Err(Error::Contract(
            "window_apply expects physical-space fields".into(),
        ));
    }
    let values = w
        .values()
        .iter()
        .zip(u.values())
        .map(|(a, b)| a * b)
        .collect();
    SampledField::new(u.grid().clone(), Space::Physical, values)
}
