//! Curve families fibring frequency space and the manifolds they project to.
//!
//! A fibration assigns to every label `eta` on a compact manifold `P` a curve
//! escaping to infinity, such that the curves cover frequency space minus the
//! origin exactly once. Three families are built in:
//!
//! * `ray_sphere`: straight rays `xi = t * eta`, `P` the unit sphere;
//! * `fractional`: `xi_k = eta_k * t^(1/alpha_k)` with exponents
//!   `alpha_k` in `(0, 1]`, `P = { sum_k |eta_k|^alpha_k = 1 }`;
//! * `parabolic`: the fractional family with `alpha = (1, 1/2, ..., 1/2)`.
//!
//! Projecting `xi != 0` along its fibre has the closed form
//!
//! ```text
//!   t = sum_k |xi_k|^alpha_k,      eta_k = xi_k / t^(1/alpha_k),
//! ```
//!
//! which the ray family recovers as `t = |xi|`, `eta = xi / |xi|`. The origin
//! lies on no fibre and is treated as a singular point everywhere.
//!
//! Curves are labelled by points of `P`; where a unit-sphere label is needed
//! (the separation condition compares curve labels by their sphere anchors)
//! we use the direction of the curve at parameter 1, `eta / |eta|`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Tolerance to which constructed mesh nodes satisfy the manifold equation.
pub const NODE_TOL: f64 = 1e-12;

/// Tolerance to which inputs claimed to lie on the manifold are verified.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FibrationKind {
    RaySphere,
    Parabolic,
    Fractional,
}

impl FibrationKind {
    pub fn name(&self) -> &'static str {
        match self {
            FibrationKind::RaySphere => "ray_sphere",
            FibrationKind::Parabolic => "parabolic",
            FibrationKind::Fractional => "fractional",
        }
    }
}

/// A curve family fibring `R^d \ {0}` over a compact manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct FibrationSpec {
    kind: FibrationKind,
    dim: usize,
    alpha: Vec<f64>,
}

/// Result of projecting a frequency along its fibre: the label on `P` and
/// the curve parameter.
#[derive(Clone, Debug)]
pub struct FibrePoint {
    pub eta: Vec<f64>,
    pub t: f64,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > crate::spectral::MAX_DIMS {
        return Err(Error::Contract(format!(
            "fibration dimension must be 1..={}, got {dim}",
            crate::spectral::MAX_DIMS
        )));
    }
    Ok(())
}

impl FibrationSpec {
    pub fn ray_sphere(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(FibrationSpec {
            kind: FibrationKind::RaySphere,
            dim,
            alpha: vec![1.0; dim],
        })
    }

    pub fn parabolic(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut alpha = vec![0.5; dim];
        alpha[0] = 1.0;
        Ok(FibrationSpec {
            kind: FibrationKind::Parabolic,
            dim,
            alpha,
        })
    }

    pub fn fractional(alpha: &[f64]) -> Result<Self> {
        check_dim(alpha.len())?;
        if alpha.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::Domain(format!(
                "fractional exponents must lie in (0, 1], got {alpha:?}"
            )));
        }
        Ok(FibrationSpec {
            kind: FibrationKind::Fractional,
            dim: alpha.len(),
            alpha: alpha.to_vec(),
        })
    }

    pub fn kind(&self) -> FibrationKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    fn is_ray(&self) -> bool {
        self.kind == FibrationKind::RaySphere
    }

    /// Left-hand side of the manifold equation at `eta` (target value 1).
    pub fn manifold_value(&self, eta: &[f64]) -> f64 {
        if self.is_ray() {
            eta.iter().map(|e| e * e).sum::<f64>().sqrt()
        } else {
            eta.iter()
                .zip(&self.alpha)
                .map(|(e, a)| e.abs().powf(*a))
                .sum()
        }
    }

    /// Deviation of `eta` from the manifold, `|manifold_value - 1|`.
    pub fn manifold_defect(&self, eta: &[f64]) -> f64 {
        (self.manifold_value(eta) - 1.0).abs()
    }

    fn check_label(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.dim {
            return Err(Error::Contract(format!(
                "label has {} components, fibration has {}",
                eta.len(),
                self.dim
            )));
        }
        let defect = self.manifold_defect(eta);
        if !(defect <= ON_MANIFOLD_TOL) {
            return Err(Error::Contract(format!(
                "label is off the manifold by {defect:.3e} (tolerance {ON_MANIFOLD_TOL:.0e})"
            )));
        }
        Ok(())
    }

    /// Point of the fibre labelled `eta` at parameter `t > 0`.
    pub fn curve_point(&self, eta: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_label(eta)?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!(
                "curve parameter must be positive and finite, got {t}"
            )));
        }
        if self.is_ray() {
            Ok(eta.iter().map(|e| e * t).collect())
        } else {
            Ok(eta
                .iter()
                .zip(&self.alpha)
                .map(|(e, a)| e * t.powf(1.0 / a))
                .collect())
        }
    }

    /// Unique `(eta, t)` with `curve_point(eta, t) = xi`, for `xi != 0`.
    pub fn fibre_solve(&self, xi: &[f64]) -> Result<FibrePoint> {
        if xi.len() != self.dim {
            return Err(Error::Contract(format!(
                "frequency has {} components, fibration has {}",
                xi.len(),
                self.dim
            )));
        }
        if xi.iter().all(|&c| c == 0.0) {
            return Err(Error::Singular(
                "no fibre passes through the frequency origin".into(),
            ));
        }
        if self.is_ray() {
            let t = xi.iter().map(|c| c * c).sum::<f64>().sqrt();
            Ok(FibrePoint {
                eta: xi.iter().map(|c| c / t).collect(),
                t,
            })
        } else {
            let t: f64 = xi
                .iter()
                .zip(&self.alpha)
                .map(|(c, a)| c.abs().powf(*a))
                .sum();
            let eta = xi
                .iter()
                .zip(&self.alpha)
                .map(|(c, a)| c / t.powf(1.0 / a))
                .collect();
            Ok(FibrePoint { eta, t })
        }
    }

    /// Projection onto the manifold along fibres (the label of `xi`'s fibre).
    pub fn project(&self, xi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.fibre_solve(xi)?.eta)
    }

    /// Unit-sphere anchor of the curve labelled `eta`: the direction of the
    /// curve at parameter 1.
    pub fn sphere_anchor(&self, eta: &[f64]) -> Vec<f64> {
        let norm = eta.iter().map(|e| e * e).sum::<f64>().sqrt();
        eta.iter().map(|e| e / norm).collect()
    }

    /// Rescales a nonzero direction radially onto the manifold: finds
    /// `rho > 0` with `manifold_value(rho * dir) = 1` (Newton, residual
    /// below [`NODE_TOL`]).
    pub fn radial_push(&self, dir: &[f64]) -> Result<Vec<f64>> {
        let norm = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Singular(
                "cannot push the zero direction onto the manifold".into(),
            ));
        }
        if self.is_ray() {
            return Ok(dir.iter().map(|c| c / norm).collect());
        }
        // g(rho) = sum_k c_k rho^{alpha_k} - 1 with c_k >= 0 is increasing
        // and concave, so Newton approaches the root monotonically.
        let coeff: Vec<f64> = dir
            .iter()
            .zip(&self.alpha)
            .map(|(c, a)| c.abs().powf(*a))
            .collect();
        let mut rho = 1.0 / norm.max(1e-300);
        for _ in 0..200 {
            let g: f64 = coeff
                .iter()
                .zip(&self.alpha)
                .map(|(c, a)| c * rho.powf(*a))
                .sum::<f64>()
                - 1.0;
            if g.abs() <= NODE_TOL {
                return Ok(dir.iter().map(|c| c * rho).collect());
            }
            let dg: f64 = coeff
                .iter()
                .zip(&self.alpha)
                .map(|(c, a)| c * a * rho.powf(a - 1.0))
                .sum();
            let next = rho - g / dg;
            rho = if next > 0.0 { next } else { rho / 2.0 };
        }
        Err(Error::Numeric(format!(
            "radial rescaling onto the manifold did not converge for direction {dir:?}"
        )))
    }

    /// Seeded random point on the manifold (Gaussian direction pushed
    /// radially).
    pub fn random_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        loop {
            let dir: Vec<f64> = (0..self.dim).map(|_| gaussian(rng)).collect();
            if dir.iter().map(|c| c * c).sum::<f64>().sqrt() > 1e-8 {
                if let Ok(p) = self.radial_push(&dir) {
                    return p;
                }
            }
        }
    }

    /// Sampled infimum of the separation ratio
    /// `|phi(eta1, t1) - phi(eta2, t2)| / |anchor1 - anchor2|`
    /// over pairs with `min(t1, t2) = z` and distinct anchors. Half the
    /// samples sit on the equal-parameter diagonal `t1 = t2 = z`; the rest
    /// draw the larger parameter uniformly from `(z, 4z]`.
    pub fn separation_modulus(&self, z: f64, sample_count: usize, seed: u64) -> Result<f64> {
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!(
                "separation scale must be positive, got {z}"
            )));
        }
        if sample_count < 100 {
            return Err(Error::Contract(format!(
                "separation sampling needs at least 100 samples, got {sample_count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = f64::INFINITY;
        for _ in 0..sample_count {
            let mut pair = None;
            for _attempt in 0..10 {
                let eta1 = self.random_point(&mut rng);
                let eta2 = self.random_point(&mut rng);
                let a1 = self.sphere_anchor(&eta1);
                let a2 = self.sphere_anchor(&eta2);
                let sep = distance(&a1, &a2);
                if sep > 1e-12 {
                    pair = Some((eta1, eta2, sep));
                    break;
                }
            }
            let (eta1, eta2, anchor_sep) = pair.ok_or_else(|| {
                Error::Sampling(
                    "10 consecutive draws produced coinciding curve anchors".into(),
                )
            })?;
            let (t1, t2) = if rng.random_bool(0.5) {
                (z, z)
            } else {
                let larger = z * (1.0 + 3.0 * rng.random::<f64>());
                if rng.random_bool(0.5) {
                    (z, larger)
                } else {
                    (larger, z)
                }
            };
            let p1 = self.curve_point(&eta1, t1)?;
            let p2 = self.curve_point(&eta2, t2)?;
            let ratio = distance(&p1, &p2) / anchor_sep;
            if ratio < best {
                best = ratio;
            }
        }
        Ok(best)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One Box-Muller Gaussian draw.
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = loop {
        let u = rng.random::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One cell of a manifold mesh: a representative node on the manifold and
/// the surface measure of the cell's angular footprint.
#[derive(Clone, Debug)]
pub struct MeshCell {
    pub node: Vec<f64>,
    pub measure: f64,
}

/// A partition of the manifold into cells with representative nodes,
/// constructed by pushing an angular partition of the unit sphere radially
/// onto the manifold.
#[derive(Clone, Debug)]
pub struct ManifoldMesh {
    fibration: FibrationSpec,
    resolution: usize,
    cells: Vec<MeshCell>,
    /// d = 3 only: polar bands and azimuthal sectors of the angular chart.
    bands: usize,
    sectors: usize,
}

impl ManifoldMesh {
    /// Builds the mesh. `resolution` controls the angular refinement:
    /// d = 1 has the two manifold points regardless, d = 2 uses `resolution`
    /// equal angular sectors, d = 3 uses `resolution` polar bands times
    /// `2 * resolution` azimuthal sectors.
    pub fn build(fibration: FibrationSpec, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Contract("mesh resolution must be positive".into()));
        }
        let cells = match fibration.dim() {
            1 => build_cells_1d(&fibration)?,
            2 => build_cells_2d(&fibration, resolution)?,
            3 => build_cells_3d(&fibration, resolution)?,
            _ => unreachable!("dimension validated at fibration construction"),
        };
        for cell in &cells {
            debug_assert!(fibration.manifold_defect(&cell.node) <= NODE_TOL * 10.0);
            if !(cell.measure > 0.0) {
                return Err(Error::Numeric(
                    "mesh produced a cell with non-positive measure".into(),
                ));
            }
        }
        Ok(ManifoldMesh {
            bands: resolution,
            sectors: 2 * resolution,
            fibration,
            resolution,
            cells,
        })
    }

    pub fn fibration(&self) -> &FibrationSpec {
        &self.fibration
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[MeshCell] {
        &self.cells
    }

    pub fn node(&self, cell: usize) -> &[f64] {
        &self.cells[cell].node
    }

    pub fn total_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    /// Index of the cell whose angular footprint contains `eta`.
    pub fn cell_of(&self, eta: &[f64]) -> Result<usize> {
        if eta.len() != self.fibration.dim() {
            return Err(Error::Contract(format!(
                "point has {} components, mesh has {}",
                eta.len(),
                self.fibration.dim()
            )));
        }
        match self.fibration.dim() {
            1 => Ok(if eta[0] >= 0.0 { 0 } else { 1 }),
            2 => {
                let r = self.resolution;
                let step = 2.0 * std::f64::consts::PI / r as f64;
                let theta = eta[1].atan2(eta[0]).rem_euclid(2.0 * std::f64::consts::PI);
                Ok(((theta / step).round() as usize) % r)
            }
            3 => {
                let norm = eta.iter().map(|c| c * c).sum::<f64>().sqrt();
                if !(norm > 0.0) {
                    return Err(Error::Singular("zero vector has no mesh cell".into()));
                }
                let polar = (eta[2] / norm).clamp(-1.0, 1.0).acos();
                let azimuth = eta[1]
                    .atan2(eta[0])
                    .rem_euclid(2.0 * std::f64::consts::PI);
                let dp = std::f64::consts::PI / self.bands as f64;
                let da = 2.0 * std::f64::consts::PI / self.sectors as f64;
                let band = ((polar / dp) as usize).min(self.bands - 1);
                let sector = ((azimuth / da) as usize).min(self.sectors - 1);
                Ok(band * self.sectors + sector)
            }
            _ => unreachable!(),
        }
    }

    /// Writes `cell,node coordinates...,measure` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let coords: Vec<String> = (1..=self.fibration.dim())
            .map(|k| format!("eta_{k}"))
            .collect();
        writeln!(w, "cell,{},measure", coords.join(","))?;
        for (i, cell) in self.cells.iter().enumerate() {
            let node: Vec<String> = cell.node.iter().map(|c| format!("{c}")).collect();
            writeln!(w, "{i},{},{}", node.join(","), cell.measure)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn build_cells_1d(fib: &FibrationSpec) -> Result<Vec<MeshCell>> {
    // The manifold is the two points +-1; counting measure.
    Ok(vec![
        MeshCell {
            node: fib.radial_push(&[1.0])?,
            measure: 1.0,
        },
        MeshCell {
            node: fib.radial_push(&[-1.0])?,
            measure: 1.0,
        },
    ])
}

fn build_cells_2d(fib: &FibrationSpec, resolution: usize) -> Result<Vec<MeshCell>> {
    let r = resolution;
    let step = 2.0 * std::f64::consts::PI / r as f64;
    let mut cells = Vec::with_capacity(r);
    // Nodes sit at angles i * step; the cell around node i spans
    // [i - 1/2, i + 1/2] * step. Measure is the arc length of the pushed
    // polyline over 16 sub-segments.
    const SUB: usize = 16;
    for i in 0..r {
        let center = i as f64 * step;
        let node = fib.radial_push(&[center.cos(), center.sin()])?;
        let mut measure = 0.0;
        let mut prev: Option<Vec<f64>> = None;
        for j in 0..=SUB {
            let theta = center - step / 2.0 + step * j as f64 / SUB as f64;
            let p = fib.radial_push(&[theta.cos(), theta.sin()])?;
            if let Some(q) = prev {
                measure += distance(&p, &q);
            }
            prev = Some(p);
        }
        cells.push(MeshCell { node, measure });
    }
    Ok(cells)
}

fn build_cells_3d(fib: &FibrationSpec, resolution: usize) -> Result<Vec<MeshCell>> {
    let bands = resolution;
    let sectors = 2 * resolution;
    let dp = std::f64::consts::PI / bands as f64;
    let da = 2.0 * std::f64::consts::PI / sectors as f64;
    let dir = |polar: f64, azimuth: f64| -> [f64; 3] {
        [
            polar.sin() * azimuth.cos(),
            polar.sin() * azimuth.sin(),
            polar.cos(),
        ]
    };
    let mut cells = Vec::with_capacity(bands * sectors);
    // Cell measure: push a 4x4 sub-grid of the angular rectangle onto the
    // manifold and sum triangle areas.
    const SUB: usize = 4;
    for b in 0..bands {
        for s in 0..sectors {
            let p0 = b as f64 * dp;
            let a0 = s as f64 * da;
            let node = fib.radial_push(&dir(p0 + dp / 2.0, a0 + da / 2.0))?;
            let mut corner = vec![vec![Vec::new(); SUB + 1]; SUB + 1];
            for (i, row) in corner.iter_mut().enumerate() {
                for (j, slot) in row.iter_mut().enumerate() {
                    let polar = p0 + dp * i as f64 / SUB as f64;
                    let azimuth = a0 + da * j as f64 / SUB as f64;
                    // Clamp away from the exact poles where the azimuthal
                    // direction degenerates.
                    let polar = polar.clamp(1e-9, std::f64::consts::PI - 1e-9);
                    *slot = fib.radial_push(&dir(polar, azimuth))?;
                }
            }
            let mut measure = 0.0;
            for i in 0..SUB {
                for j in 0..SUB {
                    measure += triangle_area(&corner[i][j], &corner[i + 1][j], &corner[i][j + 1]);
                    measure +=
                        triangle_area(&corner[i + 1][j + 1], &corner[i + 1][j], &corner[i][j + 1]);
                }
            }
            cells.push(MeshCell { node, measure });
        }
    }
    Ok(cells)
}

fn triangle_area(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
}
