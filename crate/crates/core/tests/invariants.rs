//! Randomized cross-module invariants.
//!
//! Each property here is a structural identity the library promises for all
//! admissible inputs, not just the frozen vectors of the unit tests: exact
//! transform round trips, norm preservation, linearity of the sesquilinear
//! form in its first window, fibre consistency of projections, monotone
//! commutator tails, and partitions that really sum to one.

use num_complex::Complex64;
use proptest::prelude::*;

use defectscope::fibration::FibrationSpec;
use defectscope::hmeasure::{
    bump_partition, generate_sequence, quadratic_form, validate_partition, SequenceKind,
    SequenceSpec,
};
use defectscope::spectral::{dft, idft, GridSpec, SampledField, Space};
use defectscope::symbols::{commutator_matrix, SymbolFn};

fn grid_1d(n: usize) -> GridSpec {
    GridSpec::new(1, n, &[1.0]).unwrap()
}

fn field_from(grid: &GridSpec, raw: &[(f64, f64)]) -> SampledField {
    let values = raw.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
    SampledField::new(grid.clone(), Space::Physical, values).unwrap()
}

fn complex_vals(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec(((-1.0f64..1.0), (-1.0f64..1.0)), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dft_round_trip_recovers_any_field(raw in complex_vals(16)) {
        let grid = grid_1d(16);
        let u = field_from(&grid, &raw);
        let back = idft(&dft(&u).unwrap()).unwrap();
        for (a, b) in u.values().iter().zip(back.values()) {
            prop_assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn plancherel_holds_for_any_field(raw in complex_vals(16)) {
        let grid = grid_1d(16);
        let u = field_from(&grid, &raw);
        let hat = dft(&u).unwrap();
        let scale = u.norm_sq().max(1e-12);
        prop_assert!((u.norm_sq() - hat.norm_sq()).abs() <= 1e-12 * scale);
    }

    #[test]
    fn dft_is_linear(
        raw_u in complex_vals(16),
        raw_v in complex_vals(16),
        a_re in -2.0f64..2.0,
        a_im in -2.0f64..2.0,
    ) {
        let grid = grid_1d(16);
        let a = Complex64::new(a_re, a_im);
        let u = field_from(&grid, &raw_u);
        let v = field_from(&grid, &raw_v);
        let combo_vals: Vec<Complex64> = u
            .values()
            .iter()
            .zip(v.values())
            .map(|(x, y)| a * x + y)
            .collect();
        let combo = SampledField::new(grid.clone(), Space::Physical, combo_vals).unwrap();
        let lhs = dft(&combo).unwrap();
        let hu = dft(&u).unwrap();
        let hv = dft(&v).unwrap();
        for ((l, x), y) in lhs.values().iter().zip(hu.values()).zip(hv.values()) {
            prop_assert!((l - (a * x + y)).norm() <= 1e-10);
        }
    }

    #[test]
    fn projection_is_constant_along_every_fibre(
        kind in 0usize..3,
        m0 in -20i64..20,
        m1 in -20i64..20,
        s in 0.2f64..25.0,
    ) {
        prop_assume!(m0 != 0 || m1 != 0);
        let fibration = match kind {
            0 => FibrationSpec::ray_sphere(2).unwrap(),
            1 => FibrationSpec::parabolic(2).unwrap(),
            _ => FibrationSpec::fractional(&[1.0, 0.5]).unwrap(),
        };
        let xi = [m0 as f64, m1 as f64];
        let eta = fibration.project(&xi).unwrap();
        // Sliding along the curve through eta must not change the foot point.
        let moved = fibration.curve_point(&eta, s).unwrap();
        let eta2 = fibration.project(&moved).unwrap();
        for (p, q) in eta.iter().zip(&eta2) {
            prop_assert!((p - q).abs() <= 1e-9 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn fibre_solve_inverts_curve_point(
        m0 in -20i64..20,
        m1 in -20i64..20,
    ) {
        prop_assume!(m0 != 0 || m1 != 0);
        let fibration = FibrationSpec::fractional(&[0.75, 0.5]).unwrap();
        let xi = [m0 as f64, m1 as f64];
        let foot = fibration.fibre_solve(&xi).unwrap();
        let back = fibration.curve_point(&foot.eta, foot.t).unwrap();
        for (p, q) in xi.iter().zip(&back) {
            prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn quadratic_form_is_linear_in_the_first_window(
        raw_u in complex_vals(16),
        raw_p in complex_vals(16),
        raw_q in complex_vals(16),
        raw_r in complex_vals(16),
        a_re in -2.0f64..2.0,
        a_im in -2.0f64..2.0,
    ) {
        let grid = grid_1d(16);
        let fibration = FibrationSpec::fractional(&[1.0]).unwrap();
        let a = Complex64::new(a_re, a_im);
        let u = field_from(&grid, &raw_u);
        let phi1 = field_from(&grid, &raw_p);
        let phi1b = field_from(&grid, &raw_q);
        let phi2 = field_from(&grid, &raw_r);
        let combo_vals: Vec<Complex64> = phi1
            .values()
            .iter()
            .zip(phi1b.values())
            .map(|(x, y)| a * x + y)
            .collect();
        let combo = SampledField::new(grid.clone(), Space::Physical, combo_vals).unwrap();
        let psi = |eta: &[f64]| Complex64::from(eta[0]);
        let lhs = quadratic_form(&u, &combo, &phi2, &psi, &fibration).unwrap();
        let b1 = quadratic_form(&u, &phi1, &phi2, &psi, &fibration).unwrap();
        let b2 = quadratic_form(&u, &phi1b, &phi2, &psi, &fibration).unwrap();
        prop_assert!((lhs - (a * b1 + b2)).norm() <= 1e-10 * (1.0 + b1.norm() + b2.norm()));
    }

    #[test]
    fn commutator_tails_never_grow_with_the_cutoff(
        width in 0.05f64..0.3,
        alpha_idx in 0usize..4,
    ) {
        let alpha = [0.25, 0.5, 0.75, 1.0][alpha_idx];
        let grid = grid_1d(32);
        let symbol = SymbolFn::normalized_fractional(0, &[alpha]).unwrap();
        let window = SampledField::from_fn(grid.clone(), |x| {
            Complex64::from((-0.5 * ((x[0] - 0.5) / width).powi(2)).exp())
        });
        let op = commutator_matrix(&symbol, &window, None).unwrap();
        let mut prev = f64::INFINITY;
        for r in [0.0, 2.0, 4.0, 8.0, 12.0, 16.0] {
            let norm = op.tail_operator_norm(r);
            prop_assert!(norm <= prev + 1e-12, "tail grew from {prev} to {norm} at r={r}");
            prev = norm;
        }
    }

    #[test]
    fn bump_partitions_always_sum_to_one(
        cells in 2usize..5,
        factor_frac in 0.05f64..1.0,
    ) {
        let grid = grid_1d(32);
        // Map the fraction into the legal hump-width range (1, cells].
        let width_factor = 1.0 + factor_frac * (cells as f64 - 1.0);
        let parts = bump_partition(&grid, cells, width_factor).unwrap();
        prop_assert_eq!(parts.len(), cells);
        validate_partition(&parts).unwrap();
        for idx in 0..grid.total_points() {
            let total: f64 = parts.iter().map(|p| p.values()[idx].re).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for p in &parts {
                prop_assert!(p.values()[idx].re >= -1e-15);
                prop_assert!(p.values()[idx].im == 0.0);
            }
        }
    }

    #[test]
    fn plane_waves_stay_on_the_unit_circle_for_every_index(
        mode in 1i64..4,
        n in 1usize..6,
    ) {
        let grid = grid_1d(32);
        let spec = SequenceSpec::new(
            SequenceKind::PlaneWave { mode: vec![mode] },
            1,
            8,
        )
        .unwrap();
        let u = generate_sequence(&grid, &spec, n).unwrap();
        for v in u.values() {
            prop_assert!((v.norm() - 1.0).abs() <= 1e-12);
        }
    }
}
