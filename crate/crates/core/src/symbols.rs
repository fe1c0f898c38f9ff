//! Fourier multipliers adapted to a fibration, and commutator diagnostics.
//!
//! The central family is the normalized fractional symbol
//!
//! ```text
//!   psi_k(xi) = (i xi_k)^alpha_k / (|xi_1|^alpha_1 + ... + |xi_d|^alpha_d)
//! ```
//!
//! with the principal branch
//!
//! ```text
//!   (i v)^a := |v|^a * exp(i a (pi/2) sgn v),       sgn 0 = 0,
//! ```
//!
//! so for example `(i * 1)^(1/2) = exp(i pi / 4)`. Every fractional power in
//! this crate uses that branch; the symbol value at the frequency origin is
//! defined to be 0 (the origin lies on no fibre).
//!
//! The normalized symbol is exactly constant along the fibres
//! `xi_k = eta_k t^(1/alpha_k)`: substituting gives numerator
//! `|eta_k|^alpha_k t e^(...)` over denominator `t`, independent of `t`.
//! That makes it admissible for the fractional fibration with limit
//! `psi_k(eta) = (i eta_k)^alpha_k` on the manifold, and it is the key
//! algebraic identity the tests pin down.
//!
//! A symbol `a` and a spatial window `b` generate the commutator
//! `C = A B - B A` (multiplier after windowing minus windowing after
//! multiplier). On the discrete torus its frequency-side kernel is
//!
//! ```text
//!   (C u_hat)(xi) = dxi * sum_eta b_hat(xi - eta) (a(xi) - a(eta)) u_hat(eta)
//! ```
//!
//! with periodic frequency differences. Compactness of the continuum
//! commutator shows up here as a decaying tail profile: the operator norm of
//! `C` restricted to high-frequency inputs drops as the cutoff grows. The
//! profile is a diagnostic, not a verdict; it quantifies, at one grid
//! resolution, how much of the commutator's action survives above each
//! cutoff.
//!
//! One discrete effect deserves a warning. On the frequency torus the modes
//! just below `+N/2` and just above `-N/2` are neighbours, so a symbol whose
//! positive- and negative-axis values differ (every conjugate-symmetric
//! symbol with nonzero imaginary part does this) jumps across that Nyquist
//! seam exactly as it jumps across the origin, and the window couples the
//! two sides at order one. Tail norms therefore flatten at the seam block
//! instead of decaying to zero: the seam is the grid's image of infinity,
//! and the profile measures it honestly. Comparing profiles across grid
//! resolutions, rather than reading one profile in absolute terms, is the
//! reliable way to see the continuum decay.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fibration::{FibrationSpec, ManifoldMesh};
use crate::spectral::{dft, idft, window_apply, GridSpec, SampledField, Space};

type Evaluator = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

/// Sign with `sgn 0 = 0`.
fn sgn(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else if v > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// The principal fractional power `(i v)^a` on the chosen branch.
pub fn frac_power_of_i(v: f64, a: f64) -> Complex64 {
    let magnitude = v.abs().powf(a);
    Complex64::from_polar(magnitude, a * std::f64::consts::FRAC_PI_2 * sgn(v))
}

/// Component `k` of the fractional symbol at `xi`, optionally normalized by
/// `sum_j |xi_j|^alpha_j`. The value at `xi = 0` is 0.
pub fn eval_fractional_symbol(xi: &[f64], k: usize, alpha: &[f64], normalized: bool) -> Complex64 {
    if xi.iter().all(|&c| c == 0.0) {
        return Complex64::ZERO;
    }
    let numerator = frac_power_of_i(xi[k], alpha[k]);
    if normalized {
        let denominator: f64 = xi
            .iter()
            .zip(alpha)
            .map(|(c, a)| c.abs().powf(*a))
            .sum();
        numerator / denominator
    } else {
        numerator
    }
}

/// A frequency symbol: a pointwise evaluator plus an optional declared
/// limit along fibres (a function of the manifold label), used by
/// admissibility diagnostics.
#[derive(Clone)]
pub struct SymbolFn {
    name: String,
    eval: Evaluator,
    limit: Option<Evaluator>,
}

impl std::fmt::Debug for SymbolFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymbolFn")
            .field("name", &self.name)
            .field("has_limit", &self.limit.is_some())
            .finish()
    }
}

impl SymbolFn {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        SymbolFn {
            name: name.into(),
            eval: Arc::new(eval),
            limit: None,
        }
    }

    pub fn with_limit(
        name: impl Into<String>,
        eval: impl Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
        limit: impl Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        SymbolFn {
            name: name.into(),
            eval: Arc::new(eval),
            limit: Some(Arc::new(limit)),
        }
    }

    /// Component `k` of the normalized fractional symbol, with its fibre
    /// limit `(i eta_k)^alpha_k` declared.
    pub fn normalized_fractional(k: usize, alpha: &[f64]) -> Result<Self> {
        if k >= alpha.len() {
            return Err(Error::Contract(format!(
                "axis {k} out of range for {} exponents",
                alpha.len()
            )));
        }
        let a_eval = alpha.to_vec();
        let a_limit = alpha.to_vec();
        Ok(SymbolFn::with_limit(
            format!("normalized_fractional[{k}]"),
            move |xi| eval_fractional_symbol(xi, k, &a_eval, true),
            move |eta| frac_power_of_i(eta[k], a_limit[k]),
        ))
    }

    /// Symbol of the fractional derivative along axis `k`: `(i xi_k)^a`, or
    /// `(2 pi i xi_k)^a` when `two_pi` is set.
    pub fn fractional_derivative(k: usize, a: f64, two_pi: bool) -> Result<Self> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Domain(format!(
                "derivative exponent must lie in (0, 1], got {a}"
            )));
        }
        let scale = if two_pi {
            2.0 * std::f64::consts::PI
        } else {
            1.0
        };
        Ok(SymbolFn::new(format!("derivative[{k}]^{a}"), move |xi| {
            frac_power_of_i(scale * xi[k], a)
        }))
    }

    /// Laplacian symbol `sum_k (c i xi_k)^2 = -c^2 |xi|^2` with the same
    /// 2-pi convention switch as [`SymbolFn::fractional_derivative`].
    pub fn laplacian(two_pi: bool) -> Self {
        let scale = if two_pi {
            2.0 * std::f64::consts::PI
        } else {
            1.0
        };
        SymbolFn::new("laplacian", move |xi| {
            let s: f64 = xi.iter().map(|c| scale * c * scale * c).sum();
            Complex64::new(-s, 0.0)
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, xi: &[f64]) -> Complex64 {
        (self.eval)(xi)
    }

    pub fn limit(&self, eta: &[f64]) -> Option<Complex64> {
        self.limit.as_ref().map(|f| f(eta))
    }

    pub fn has_limit(&self) -> bool {
        self.limit.is_some()
    }

    /// Sweeps the grid's frequency lattice and returns `sup |a|`; non-finite
    /// values anywhere are a contract violation.
    pub fn bounded_on(&self, grid: &GridSpec) -> Result<f64> {
        let mut sup = 0.0f64;
        for idx in 0..grid.total_points() {
            let v = self.eval(&grid.frequency(idx));
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::Contract(format!(
                    "symbol '{}' is not finite at lattice node {idx}",
                    self.name
                )));
            }
            sup = sup.max(v.norm());
        }
        Ok(sup)
    }
}

/// Lifts a function on the manifold to a symbol constant along fibres:
/// `a(xi) = psi(project(xi))`, zero at the origin, with declared limit
/// `psi` itself.
pub fn lift_symbol(
    name: impl Into<String>,
    psi: impl Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    fibration: FibrationSpec,
) -> SymbolFn {
    let psi: Evaluator = Arc::new(psi);
    let psi_limit = Arc::clone(&psi);
    let name = name.into();
    SymbolFn {
        name,
        eval: Arc::new(move |xi| match fibration.project(xi) {
            Ok(eta) => psi(&eta),
            Err(_) => Complex64::ZERO,
        }),
        limit: Some(psi_limit),
    }
}

/// Worst deviation of `a` from its declared fibre limit at curve parameter
/// `t`, over the nodes of `mesh`.
pub fn admissibility_defect(
    a: &SymbolFn,
    fibration: &FibrationSpec,
    t: f64,
    mesh: &ManifoldMesh,
) -> Result<f64> {
    if !a.has_limit() {
        return Err(Error::Contract(format!(
            "symbol '{}' declares no fibre limit",
            a.name()
        )));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "curve parameter must be positive, got {t}"
        )));
    }
    let mut worst = 0.0f64;
    for cell in mesh.cells() {
        let xi = fibration.curve_point(&cell.node, t)?;
        let defect = (a.eval(&xi) - a.limit(&cell.node).unwrap()).norm();
        worst = worst.max(defect);
    }
    Ok(worst)
}

/// Sampled oscillation modulus of `a` at controlled frequency gaps: the
/// supremum of `|a(xi) - a(eta)|` over lattice pairs with `|xi|, |eta| > r`
/// and `|xi - eta| <= big_r`. Base points are drawn with the seeded RNG;
/// for each base point every admissible lattice offset is enumerated, so at
/// fixed `(r, seed, sample_count)` the estimate is nondecreasing in `big_r`.
pub fn uvjet_modulus(
    a: &SymbolFn,
    grid: &GridSpec,
    big_r: f64,
    r: f64,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    if !(big_r > 0.0) {
        return Err(Error::Domain(format!(
            "gap radius must be positive, got {big_r}"
        )));
    }
    if r < 0.0 {
        return Err(Error::Domain(format!(
            "frequency floor must be nonnegative, got {r}"
        )));
    }
    if sample_count == 0 {
        return Err(Error::Contract("sample_count must be positive".into()));
    }
    let candidates: Vec<usize> = (0..grid.total_points())
        .filter(|&idx| grid.frequency_norm(idx) > r)
        .collect();
    if candidates.is_empty() {
        return Err(Error::InsufficientLattice(format!(
            "no lattice frequencies above |xi| = {r} (lattice radius {:.3})",
            grid.max_frequency_norm()
        )));
    }
    // Integer offsets whose frequency translate has norm <= big_r.
    let dims = grid.dims();
    let reach: Vec<i64> = (0..dims)
        .map(|axis| (big_r * grid.lengths()[axis]).floor() as i64)
        .collect();
    let mut offsets: Vec<Vec<i64>> = Vec::new();
    let mut stack = vec![0i64; dims];
    enumerate_offsets(grid, &reach, big_r, &mut stack, 0, &mut offsets);
    if offsets.is_empty() {
        return Err(Error::InsufficientLattice(format!(
            "gap radius {big_r} is below the frequency cell size of the lattice"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (grid.points_per_axis() / 2) as i64;
    let mut sup: Option<f64> = None;
    for _ in 0..sample_count {
        let idx = candidates[rng.random_range(0..candidates.len())];
        let m = grid.signed_mode(idx);
        let a_base = a.eval(&grid.frequency(idx));
        for offset in &offsets {
            let mut partner = [0i64; crate::spectral::MAX_DIMS];
            let mut inside = true;
            for axis in 0..dims {
                let c = m[axis] + offset[axis];
                if c < -half || c >= half {
                    inside = false;
                    break;
                }
                partner[axis] = c;
            }
            if !inside {
                continue;
            }
            let pidx = grid.mode_index(&partner[..dims])?;
            if grid.frequency_norm(pidx) <= r {
                continue;
            }
            let value = (a_base - a.eval(&grid.frequency(pidx))).norm();
            sup = Some(sup.map_or(value, |s: f64| s.max(value)));
        }
    }
    sup.ok_or_else(|| {
        Error::InsufficientLattice(format!(
            "no admissible pairs with |xi|, |eta| > {r} and gap <= {big_r} on this lattice"
        ))
    })
}

fn enumerate_offsets(
    grid: &GridSpec,
    reach: &[i64],
    big_r: f64,
    stack: &mut Vec<i64>,
    axis: usize,
    out: &mut Vec<Vec<i64>>,
) {
    if axis == grid.dims() {
        if stack.iter().all(|&c| c == 0) {
            return;
        }
        let norm: f64 = stack
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let f = c as f64 / grid.lengths()[k];
                f * f
            })
            .sum::<f64>()
            .sqrt();
        if norm <= big_r {
            out.push(stack.clone());
        }
        return;
    }
    for c in -reach[axis]..=reach[axis] {
        stack[axis] = c;
        enumerate_offsets(grid, reach, big_r, stack, axis + 1, out);
    }
    stack[axis] = 0;
}

/// Applies the Fourier multiplier with symbol `a` to a physical field:
/// `idft(a . dft(u))`.
pub fn apply_multiplier(u: &SampledField, a: &SymbolFn) -> Result<SampledField> {
    let mut hat = dft(u)?;
    let grid = hat.grid().clone();
    for idx in 0..grid.total_points() {
        let s = a.eval(&grid.frequency(idx));
        hat.values_mut()[idx] *= s;
    }
    idft(&hat)
}

/// Multiplier-then-window minus window-then-multiplier, computed matrix-free
/// through spectral operations.
pub fn commutator_apply(a: &SymbolFn, b: &SampledField, u: &SampledField) -> Result<SampledField> {
    let ab = apply_multiplier(&window_apply(b, u)?, a)?;
    let ba = window_apply(b, &apply_multiplier(u, a)?)?;
    let values = ab
        .values()
        .iter()
        .zip(ba.values())
        .map(|(x, y)| x - y)
        .collect();
    SampledField::new(u.grid().clone(), Space::Physical, values)
}

/// Largest dense commutator the crate will assemble (lattice points).
pub const MAX_DENSE_LATTICE: usize = 4096;

/// Dense frequency-side commutator of a symbol and a spatial window.
#[derive(Clone, Debug)]
pub struct CommutatorOp {
    grid: GridSpec,
    matrix: DMatrix<Complex64>,
    symbol_sup: f64,
    window_sup: f64,
}

/// Assembles the dense commutator matrix
/// `C[m, p] = dxi * b_hat(m - p) (a(xi_m) - a(xi_p))` with periodic
/// frequency differences. `band_limit` optionally zeroes the window spectrum
/// above the given frequency norm before assembly.
pub fn commutator_matrix(
    a: &SymbolFn,
    b: &SampledField,
    band_limit: Option<f64>,
) -> Result<CommutatorOp> {
    if b.space() != Space::Physical {
        return Err(Error::Contract(
            "commutator window must be a physical-space field".into(),
        ));
    }
    let grid = b.grid().clone();
    let np = grid.total_points();
    if np > MAX_DENSE_LATTICE {
        return Err(Error::Size(format!(
            "dense commutator needs {np} x {np} entries (limit {MAX_DENSE_LATTICE} lattice \
             points); use commutator_apply for matrix-free action"
        )));
    }
    let symbol_sup = a.bounded_on(&grid)?;
    let mut bhat = dft(b)?;
    if let Some(radius) = band_limit {
        if !(radius >= 0.0) {
            return Err(Error::Domain(format!(
                "band limit must be nonnegative, got {radius}"
            )));
        }
        for idx in 0..np {
            if grid.frequency_norm(idx) > radius {
                bhat.values_mut()[idx] = Complex64::ZERO;
            }
        }
    }
    let a_vals: Vec<Complex64> = (0..np).map(|idx| a.eval(&grid.frequency(idx))).collect();
    let dxi = grid.dual_cell_volume();
    let bhat_vals = bhat.values();

    // Column-major buffer, one column per input frequency, filled in
    // parallel by disjoint chunks (deterministic output).
    let mut data = vec![Complex64::ZERO; np * np];
    data.par_chunks_mut(np).enumerate().for_each(|(p, col)| {
        for (m, slot) in col.iter_mut().enumerate() {
            let diff = grid.wrapped_difference(m, p);
            *slot = dxi * bhat_vals[diff] * (a_vals[m] - a_vals[p]);
        }
    });
    let matrix = DMatrix::from_vec(np, np, data);
    let window_sup = b.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(CommutatorOp {
        grid,
        matrix,
        symbol_sup,
        window_sup,
    })
}

impl CommutatorOp {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// `sup |a|` over the lattice, recorded at assembly.
    pub fn symbol_sup(&self) -> f64 {
        self.symbol_sup
    }

    /// `sup |b|` over the grid, recorded at assembly.
    pub fn window_sup(&self) -> f64 {
        self.window_sup
    }

    /// Product bound `2 sup|a| sup|b|` that the operator norm never exceeds.
    pub fn norm_bound(&self) -> f64 {
        2.0 * self.symbol_sup * self.window_sup
    }

    /// Largest singular value of the commutator restricted to input
    /// frequencies with `|xi| > r`. `r = 0` is the plain operator norm;
    /// `r` beyond the lattice radius gives 0 (empty tail).
    pub fn tail_operator_norm(&self, r: f64) -> f64 {
        let np = self.grid.total_points();
        let kept: Vec<usize> = if r <= 0.0 {
            (0..np).collect()
        } else {
            (0..np)
                .filter(|&idx| self.grid.frequency_norm(idx) > r)
                .collect()
        };
        if kept.is_empty() {
            return 0.0;
        }
        let restricted = DMatrix::from_fn(np, kept.len(), |m, j| self.matrix[(m, kept[j])]);
        restricted
            .singular_values()
            .iter()
            .fold(0.0f64, |acc, &s| acc.max(s))
    }

    /// `(r, tail_operator_norm(r))` for each requested cutoff.
    pub fn tail_profile(&self, cutoffs: &[f64]) -> Vec<(f64, f64)> {
        cutoffs
            .iter()
            .map(|&r| (r, self.tail_operator_norm(r)))
            .collect()
    }

    /// Action on a frequency-side coefficient vector (used to cross-check
    /// the kernel against the matrix-free route).
    pub fn apply_to_spectrum(&self, hat: &[Complex64]) -> Vec<Complex64> {
        let v = DVector::from_column_slice(hat);
        (&self.matrix * v).iter().copied().collect()
    }
}

/// Writes a `(r, tail_norm)` profile as CSV.
pub fn write_tail_profile_csv(profile: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "r,tail_norm")?;
    for (r, norm) in profile {
        writeln!(w, "{r},{norm}")?;
    }
    w.flush()?;
    Ok(())
}

/// Dumps a symbol over the grid's frequency lattice as CSV.
pub fn write_symbol_lattice_csv(a: &SymbolFn, grid: &GridSpec, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let coords: Vec<String> = (1..=grid.dims()).map(|k| format!("xi_{k}")).collect();
    writeln!(w, "index,{},re,im", coords.join(","))?;
    for idx in 0..grid.total_points() {
        let xi = grid.frequency(idx);
        let v = a.eval(&xi);
        let xs: Vec<String> = xi.iter().map(|c| format!("{c}")).collect();
        writeln!(w, "{idx},{},{},{}", xs.join(","), v.re, v.im)?;
    }
    w.flush()?;
    Ok(())
}
