//! End-to-end acceptance checks, one test per numbered criterion. Each test
//! prints a single `criterion N: PASS/FAIL` line with the measured margins,
//! so a full run doubles as a report. Tolerances are pinned here, next to
//! the quantities they bound.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;
use std::time::Instant;

use defectscope::conslaw::{
    nonlinearity_index, oscillation_experiment, weak_residual, ExperimentParams, FluxFamily,
    LambdaGrid,
};
use defectscope::fibration::{FibrationSpec, ManifoldMesh};
use defectscope::hmeasure::{
    bump_partition, estimate_hmeasure, generate_sequence, quadratic_form, SequenceKind,
    SequenceSpec,
};
use defectscope::spectral::{GridSpec, SampledField};
use defectscope::symbols::{commutator_matrix, uvjet_modulus, SymbolFn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err(format!($($arg)*));
        }
    };
}

fn criterion(number: usize, body: impl FnOnce() -> Result<String, String>) {
    match body() {
        Ok(detail) => println!("criterion {number}: PASS - {detail}"),
        Err(reason) => {
            println!("criterion {number}: FAIL - {reason}");
            panic!("criterion {number} failed: {reason}");
        }
    }
}

fn err_str(e: defectscope::Error) -> String {
    e.to_string()
}

fn ones(grid: &GridSpec) -> SampledField {
    SampledField::constant(grid.clone(), Complex64::ONE)
}

#[test]
fn single_mode_measure_matches_closed_form_projection() {
    criterion(1, || {
        let start = Instant::now();
        let grid = GridSpec::unit(2, 128).map_err(err_str)?;
        let alpha = [1.0, 0.5];
        let fib = FibrationSpec::fractional(&alpha).map_err(err_str)?;
        let u = SampledField::mode_field(grid.clone(), &[7, -3]).map_err(err_str)?;
        let one = ones(&grid);

        // Hand solve of the fibre through (7, -3): the parameter satisfies
        // t = |7| + |-3|^(1/2) and the label is xi_k / t^(1/alpha_k).
        let t = 7.0 + 3.0f64.sqrt();
        let eta = [7.0 / t, -3.0 / (t * t)];

        let symbols: Vec<(&str, Box<dyn Fn(&[f64]) -> Complex64>)> = vec![
            ("constant", Box::new(|_: &[f64]| Complex64::ONE)),
            ("first label", Box::new(|e: &[f64]| Complex64::new(e[0], 0.0))),
            (
                "second label squared",
                Box::new(|e: &[f64]| Complex64::new(e[1] * e[1], 0.0)),
            ),
            (
                "trigonometric",
                Box::new(|e: &[f64]| Complex64::new((e[0] + 2.0 * e[1]).sin(), 0.0)),
            ),
            (
                "unimodular phase",
                Box::new(|e: &[f64]| Complex64::from_polar(1.0, e[0] - e[1])),
            ),
        ];
        let mut worst = 0.0f64;
        for (name, psi) in &symbols {
            let q = quadratic_form(&u, &one, &one, psi.as_ref(), &fib).map_err(err_str)?;
            let gap = (q - psi(&eta)).norm();
            ensure!(
                gap <= 1e-10,
                "psi ({name}): form is off the projected value by {gap:e}"
            );
            worst = worst.max(gap);
        }
        let elapsed = start.elapsed();
        ensure!(
            elapsed.as_secs_f64() < 1.0,
            "runtime {elapsed:?} exceeds the 1 s budget"
        );
        Ok(format!(
            "5 test symbols at mode (7,-3), worst gap {worst:.1e}, {elapsed:.2?}"
        ))
    });
}

#[test]
fn windowed_wave_mass_converges_to_the_limit_direction() {
    criterion(2, || {
        let start = Instant::now();
        let grid = GridSpec::unit(2, 256).map_err(err_str)?;
        let fib = FibrationSpec::fractional(&[1.0, 0.5]).map_err(err_str)?;
        let window: Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync> = Arc::new(|x: &[f64]| {
            let w = (PI * x[0]).sin().powi(2) * (PI * x[1]).sin().powi(2);
            Complex64::new(w, 0.0)
        });
        let spec = SequenceSpec::new(
            SequenceKind::ModulatedWave {
                mode: vec![1, 0],
                window: window.clone(),
            },
            1,
            64,
        )
        .map_err(err_str)?;
        let wfield = SampledField::from_fn(grid.clone(), |x| window(x));
        let energy = wfield.norm_sq();

        // The limit direction comes from the library's own fibre solve far
        // out along the carrier ray.
        let eta_inf = fib.project(&[1.0e6, 0.0]).map_err(err_str)?;
        let psi = |e: &[f64]| Complex64::new(e[0] + e[1] * e[1], 0.0);
        let target = psi(&eta_inf) * energy;

        let one = ones(&grid);
        let n_list = [4usize, 8, 16, 32, 64];
        let mut errs = Vec::new();
        for &n in &n_list {
            let u = generate_sequence(&grid, &spec, n).map_err(err_str)?;
            let q = quadratic_form(&u, &one, &one, &psi, &fib).map_err(err_str)?;
            errs.push((q - target).norm());
        }
        for (pair, n) in errs.windows(2).zip(&n_list[1..]) {
            ensure!(
                pair[1] <= pair[0] + 1e-14,
                "localization error grew at n = {n}: {errs:?}"
            );
        }
        ensure!(
            errs[4] <= 5e-2,
            "error at n = 64 is {:.3e}, budget 5e-2",
            errs[4]
        );
        let elapsed = start.elapsed();
        ensure!(
            elapsed.as_secs_f64() < 10.0,
            "runtime {elapsed:?} exceeds the 10 s budget"
        );
        Ok(format!(
            "errors over n {n_list:?}: {:.2e} down to {:.2e}, {elapsed:.2?}",
            errs[0], errs[4]
        ))
    });
}

#[test]
fn normalized_symbols_are_constant_along_fibres() {
    criterion(3, || {
        let grid = GridSpec::unit(2, 128).map_err(err_str)?;
        let mut worst = 0.0f64;
        for alpha in [[1.0, 0.5], [0.75, 0.25]] {
            let fib = FibrationSpec::fractional(&alpha).map_err(err_str)?;
            for k in 0..2 {
                let sym = SymbolFn::normalized_fractional(k, &alpha).map_err(err_str)?;
                for idx in 1..grid.total_points() {
                    let xi = grid.frequency(idx);
                    let eta = fib.project(&xi).map_err(err_str)?;
                    let limit = sym
                        .limit(&eta)
                        .ok_or_else(|| "normalized symbol lost its fibre limit".to_string())?;
                    let dev = (sym.eval(&xi) - limit).norm();
                    if dev > worst {
                        worst = dev;
                    }
                    ensure!(
                        dev <= 1e-12,
                        "component {k} of alpha {alpha:?} deviates by {dev:e} at {xi:?}"
                    );
                }
            }
        }
        Ok(format!(
            "two exponent pairs, full 128x128 lattice sweep, worst deviation {worst:.1e}"
        ))
    });
}

#[test]
fn fibre_solve_round_trips_on_random_lattice_points() {
    criterion(4, || {
        let fibs = [
            FibrationSpec::ray_sphere(3).map_err(err_str)?,
            FibrationSpec::parabolic(3).map_err(err_str)?,
            FibrationSpec::fractional(&[1.0, 0.5, 0.75]).map_err(err_str)?,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(424242);
        let mut worst = 0.0f64;
        for fib in &fibs {
            let mut count = 0usize;
            while count < 10_000 {
                let xi: Vec<f64> = (0..3)
                    .map(|_| rng.random_range(-32i64..32) as f64)
                    .collect();
                if xi.iter().all(|&c| c == 0.0) {
                    continue;
                }
                let p = fib.fibre_solve(&xi).map_err(err_str)?;
                let back = fib.curve_point(&p.eta, p.t).map_err(err_str)?;
                let gap: f64 = back
                    .iter()
                    .zip(&xi)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = xi.iter().map(|c| c * c).sum::<f64>().sqrt();
                let rel = gap / scale;
                ensure!(
                    rel <= 1e-9,
                    "{} fibration misses {xi:?} by relative {rel:e}",
                    fib.kind().name()
                );
                if rel > worst {
                    worst = rel;
                }
                count += 1;
            }
        }
        Ok(format!(
            "10000 lattice points per fibration kind, worst relative gap {worst:.1e}"
        ))
    });
}

#[test]
fn commutator_tails_vanish_and_oscillation_modulus_halves() {
    criterion(5, || {
        let start = Instant::now();
        let grid = GridSpec::unit(1, 256).map_err(err_str)?;
        let sym = SymbolFn::normalized_fractional(0, &[0.5]).map_err(err_str)?;
        let bump = SampledField::from_fn(grid.clone(), |x| {
            let z = (x[0] - 0.5) / 0.1;
            Complex64::new((-0.5 * z * z).exp(), 0.0)
        });
        let op = commutator_matrix(&sym, &bump, None).map_err(err_str)?;

        let full = op.tail_operator_norm(0.0);
        ensure!(full > 1e-3, "commutator is degenerate: full norm {full:e}");
        let profile = op.tail_profile(&[0.0, 16.0, 32.0, 48.0, 64.0, 96.0, 120.0]);
        for pair in profile.windows(2) {
            ensure!(
                pair[1].1 <= pair[0].1 + 1e-12 * full,
                "tail norms rose from r = {} to r = {}: {profile:?}",
                pair[0].0,
                pair[1].0
            );
        }
        let v16 = uvjet_modulus(&sym, &grid, 4.0, 16.0, 2000, 17).map_err(err_str)?;
        let v32 = uvjet_modulus(&sym, &grid, 4.0, 32.0, 2000, 17).map_err(err_str)?;
        // The one-axis normalized symbol is constant on each side of the
        // origin, so both moduli sit at roundoff; the halving is asserted
        // with an absolute floor for that degenerate-but-valid case.
        ensure!(
            v32 <= 0.5 * v16 + 1e-15,
            "modulus did not halve when the floor doubled: r=16 gives {v16:e}, r=32 gives {v32:e}"
        );
        let elapsed = start.elapsed();
        ensure!(
            elapsed.as_secs_f64() < 60.0,
            "runtime {elapsed:?} exceeds the 60 s budget"
        );

        // Known red: on the discrete frequency torus the modes just below
        // and just above the Nyquist seam are adjacent, the conjugate
        // symmetry of the symbol forces a sqrt(2) jump across that seam,
        // and the window couples them at order one. The seam lies inside
        // every tail with r < N/2, so the tail norm cannot drop below the
        // seam block. The profile above is honest about where the mass
        // sits; this bound asks the seam block to vanish and it does not.
        let quarter = op.tail_operator_norm(64.0);
        ensure!(
            quarter <= 0.15 * full,
            "tail norm past N/4 is {quarter:.6e} against full norm {full:.6e} \
             (ratio {:.4}); the Nyquist seam block of the wrapped-difference \
             kernel keeps the tail at the full norm",
            quarter / full
        );
        Ok(format!(
            "full norm {full:.3e}, tail at N/4 {quarter:.1e}, moduli {v16:.1e} -> {v32:.1e}, {elapsed:.2?}"
        ))
    });
}

#[test]
fn two_component_blocks_are_hermitian_and_refinement_stable() {
    criterion(6, || {
        let grid = GridSpec::unit(2, 64).map_err(err_str)?;
        let window: Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync> = Arc::new(|x: &[f64]| {
            Complex64::new(0.75 + 0.25 * (TAU * x[0]).cos() * (TAU * x[1]).cos(), 0.0)
        });
        let spec = SequenceSpec::new(
            SequenceKind::ModulatedWave {
                mode: vec![3, -2],
                window,
            },
            1,
            8,
        )
        .map_err(err_str)?;
        let components = vec![spec.clone(), spec];
        let partition = bump_partition(&grid, 2, 1.5).map_err(err_str)?;
        let fib = FibrationSpec::fractional(&[1.0, 0.5]).map_err(err_str)?;
        let coarse_mesh = ManifoldMesh::build(fib.clone(), 16).map_err(err_str)?;
        let fine_mesh = ManifoldMesh::build(fib, 64).map_err(err_str)?;
        let n_list = [2usize, 3, 5];
        let coarse =
            estimate_hmeasure(&grid, &components, &partition, &coarse_mesh, &n_list)
                .map_err(err_str)?;
        let fine = estimate_hmeasure(&grid, &components, &partition, &fine_mesh, &n_list)
            .map_err(err_str)?;

        // Every sampled 2x2 block must be exactly Hermitian and, being a
        // Gram matrix, nonnegative up to eigensolver roundoff.
        let mut min_eig = f64::INFINITY;
        for t in 0..n_list.len() {
            for a in 0..fine.x_cells() {
                for b in 0..fine.p_cells() {
                    for i in 0..2 {
                        for j in 0..2 {
                            let z = fine.entry_at(t, i, j, a, b);
                            let w = fine.entry_at(t, j, i, a, b);
                            ensure!(
                                z == w.conj(),
                                "block ({a},{b}) at n = {} is not Hermitian: {z} vs {w}",
                                n_list[t]
                            );
                        }
                    }
                    let p = fine.entry_at(t, 0, 0, a, b).re;
                    let q = fine.entry_at(t, 1, 1, a, b).re;
                    let z = fine.entry_at(t, 0, 1, a, b);
                    // Closed-form smallest eigenvalue of a 2x2 Hermitian
                    // block, independent of the library eigensolver.
                    let lo = 0.5 * (p + q)
                        - (0.25 * (p - q) * (p - q) + z.norm_sqr()).sqrt();
                    if lo < min_eig {
                        min_eig = lo;
                    }
                }
            }
        }
        ensure!(
            min_eig >= -1e-8,
            "a weight block has eigenvalue {min_eig:e}"
        );
        // Spot-check the library eigensolver against the closed form on the
        // final snapshot.
        for a in 0..fine.x_cells() {
            for b in 0..fine.p_cells() {
                let p = fine.entry(0, 0, a, b).re;
                let q = fine.entry(1, 1, a, b).re;
                let z = fine.entry(0, 1, a, b);
                let lo = 0.5 * (p + q) - (0.25 * (p - q) * (p - q) + z.norm_sqr()).sqrt();
                let solver = fine.block_min_eigenvalue(a, b);
                ensure!(
                    (lo - solver).abs() <= 1e-12 + 1e-9 * lo.abs(),
                    "eigensolver disagrees with the closed form at ({a},{b}): {solver} vs {lo}"
                );
            }
        }

        // Refining the manifold partition 4x only re-bins frequencies, so
        // per-x-cell masses are preserved.
        let mut worst = 0.0f64;
        for i in 0..2 {
            let mc = coarse.per_x_cell_mass(i);
            let mf = fine.per_x_cell_mass(i);
            for a in 0..mc.len() {
                let gap = (mc[a] - mf[a]).abs();
                ensure!(
                    gap <= 1e-10,
                    "component {i} mass in x-cell {a} moved by {gap:e} under refinement"
                );
                if gap > worst {
                    worst = gap;
                }
            }
        }
        Ok(format!(
            "blocks Hermitian over {} snapshots, min eigenvalue {min_eig:.1e}, \
             refinement 16 -> 64 cells moved masses by at most {worst:.1e}",
            n_list.len()
        ))
    });
}

#[test]
fn nonlinearity_verdicts_separate_burgers_from_linear_flux() {
    criterion(7, || {
        let grid = GridSpec::unit(2, 32).map_err(err_str)?;
        let lam = LambdaGrid::new(-1.0, 1.0, 64).map_err(err_str)?;
        let mesh = ManifoldMesh::build(
            FibrationSpec::fractional(&[1.0, 1.0]).map_err(err_str)?,
            64,
        )
        .map_err(err_str)?;
        let tol = 1e-3;
        let threshold = 0.05;

        let burgers_pair = FluxFamily::custom(
            &[1.0, 1.0],
            lam.clone(),
            |k, _, l| if k == 0 { 0.5 * l * l } else { l },
            |k, _, l| if k == 0 { l } else { 1.0 },
        )
        .map_err(err_str)?;
        let nonlinear =
            nonlinearity_index(&burgers_pair, &grid, &mesh, tol, threshold).map_err(err_str)?;
        ensure!(
            nonlinear.genuinely_nonlinear,
            "quadratic-linear flux pair misread as degenerate, worst fraction {}",
            nonlinear.worst_fraction
        );
        ensure!(
            nonlinear.degenerate_pairs.is_empty(),
            "quadratic-linear flux pair flagged {} nodes",
            nonlinear.degenerate_pairs.len()
        );

        let linear = FluxFamily::linear(&[1.0, 1.0], &[1.0, 1.0], lam).map_err(err_str)?;
        let degenerate =
            nonlinearity_index(&linear, &grid, &mesh, tol, threshold).map_err(err_str)?;
        ensure!(
            !degenerate.genuinely_nonlinear,
            "equal-speed linear flux misread as genuinely nonlinear"
        );
        ensure!(
            !degenerate.degenerate_pairs.is_empty(),
            "no degenerate direction found for the equal-speed linear flux"
        );
        // Every flagged direction must sit within one mesh cell of the
        // anti-diagonal eta_1 + eta_2 = 0.
        let mut farthest = 0.0f64;
        for &(_, cell) in &degenerate.degenerate_pairs {
            let node = mesh.node(cell);
            let dist = (node[0] + node[1]).abs() / 2.0f64.sqrt();
            let width = mesh.cells()[cell].measure;
            ensure!(
                dist <= width,
                "flagged cell {cell} at {node:?} lies {dist:e} from the dead line, cell width {width:e}"
            );
            if dist > farthest {
                farthest = dist;
            }
        }
        Ok(format!(
            "quadratic pair clean, linear flux flags {} directions at most {farthest:.1e} off the anti-diagonal",
            degenerate.degenerate_pairs.len()
        ))
    });
}

#[test]
fn weak_residual_vanishes_for_constants_and_matches_parts_quadrature() {
    criterion(8, || {
        let grid = GridSpec::unit(1, 128).map_err(err_str)?;
        let lam = LambdaGrid::new(-1.0, 1.0, 64).map_err(err_str)?;
        let flux = FluxFamily::burgers(&[1.0], lam).map_err(err_str)?;
        let phi = SampledField::from_fn(grid.clone(), |x| {
            Complex64::new((2.0 * TAU * x[0]).sin() + 0.2 * (TAU * x[0]).cos(), 0.0)
        });

        let constant = SampledField::constant(grid.clone(), Complex64::new(0.37, 0.0));
        let r0 = weak_residual(&constant, &flux, &phi, true).map_err(err_str)?;
        ensure!(
            r0.norm() <= 1e-10,
            "constant state residual {:e} exceeds 1e-10",
            r0.norm()
        );

        let u = SampledField::from_fn(grid.clone(), |x| {
            Complex64::new(0.3 * (TAU * x[0]).sin(), 0.0)
        });
        let r = weak_residual(&u, &flux, &phi, true).map_err(err_str)?;
        // Classical pairing with the hand derivative of phi.
        let mut oracle = Complex64::ZERO;
        let dx = grid.cell_volume();
        for idx in 0..grid.total_points() {
            let x = grid.point(idx);
            let uval = 0.3 * (TAU * x[0]).sin();
            let dphi = 2.0 * TAU * (2.0 * TAU * x[0]).cos() - 0.2 * TAU * (TAU * x[0]).sin();
            oracle += Complex64::new(flux.eval(0, &x, uval) * dphi * dx, 0.0);
        }
        let gap = (r - oracle).norm();
        ensure!(
            r.norm() > 1e-3,
            "oracle case degenerated to a trivial pairing: {:e}",
            r.norm()
        );
        ensure!(
            gap <= 1e-6,
            "spectral residual {r} differs from the parts quadrature {oracle} by {gap:e}"
        );
        Ok(format!(
            "constant residual {:.1e}, parts-quadrature gap {gap:.1e} at signal {:.3e}",
            r0.norm(),
            r.norm()
        ))
    });
}

#[test]
fn viscous_burgers_damps_oscillation_mass_versus_transport() {
    criterion(9, || {
        let start = Instant::now();
        let grid = GridSpec::unit(1, 256).map_err(err_str)?;
        let lam = LambdaGrid::new(-0.1, 0.1, 64).map_err(err_str)?;
        let flux = FluxFamily::burgers(&[1.0], lam.clone()).map_err(err_str)?;
        let transport = FluxFamily::zero(&[1.0], lam).map_err(err_str)?;
        let profile: Arc<dyn Fn(&[f64], &[f64]) -> Complex64 + Send + Sync> =
            Arc::new(|_x: &[f64], y: &[f64]| Complex64::new(0.02 * (TAU * y[0]).sin(), 0.0));
        let spec = SequenceSpec::new(SequenceKind::TwoScale { profile }, 1, 64).map_err(err_str)?;
        let partition = vec![ones(&grid)];
        let mesh = ManifoldMesh::build(
            FibrationSpec::fractional(&[1.0]).map_err(err_str)?,
            2,
        )
        .map_err(err_str)?;
        let n_list = [4usize, 8, 16, 32];
        let params = ExperimentParams {
            tau_end: 6.0,
            dtau: None,
            two_pi: true,
        };

        let viscous = oscillation_experiment(
            &grid, &flux, &spec, 1e-3, &partition, &mesh, &n_list, &params,
        )
        .map_err(err_str)?;
        let control = oscillation_experiment(
            &grid, &transport, &spec, 0.0, &partition, &mesh, &n_list, &params,
        )
        .map_err(err_str)?;

        // The mass table is part of the report whether or not the damping
        // ratio clears the bar.
        println!("criterion 9 mass table (n, viscous, transport control):");
        for (i, &n) in n_list.iter().enumerate() {
            println!(
                "  n = {n:>2}: {:.6e}  {:.6e}",
                viscous.totals[i], control.totals[i]
            );
        }

        ensure!(
            control.totals[3] > 1e-8,
            "transport control retained no oscillation mass: {:e}",
            control.totals[3]
        );
        ensure!(
            5.0 * viscous.totals[3] <= control.totals[3],
            "viscous mass {:e} at n = 32 is not 5x below the control {:e}",
            viscous.totals[3],
            control.totals[3]
        );
        let elapsed = start.elapsed();
        ensure!(
            elapsed.as_secs_f64() < 300.0,
            "runtime {elapsed:?} exceeds the 5 min budget"
        );
        Ok(format!(
            "mass at n = 32: viscous {:.3e} vs transport {:.3e}, {elapsed:.2?}",
            viscous.totals[3], control.totals[3]
        ))
    });
}
