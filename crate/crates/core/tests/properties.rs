use ndopfe::forcing::{Forcing, ForcingSettings};
use ndopfe::grid::{self, Grid};
use ndopfe::identifiability::{collision_profile, Bound, CollisionPair};
use ndopfe::kernels::uptake_g;
use ndopfe::optimize::{minimize, NelderMeadOptions};
use ndopfe::params::{NdopParam, ParameterSet};
use ndopfe::solvers::{run_transient, Model, SolverSettings};
use ndopfe::transport::{build_synthetic, SyntheticCirculation};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn collision_pairs_share_uptake(
        ratio in 0.3f64..3.0,
        k_p2 in 0.05f64..2.0,
        k_i2 in 3.0f64..100.0,
        k_w2 in 0.005f64..0.05,
        i in 5.0f64..300.0,
        x3 in 0.0f64..120.0,
        y3 in 0.01f64..2.0,
    ) {
        let pair = CollisionPair::new(ParameterSet::default(), ratio, k_p2, k_i2, k_w2).unwrap();
        let scale = pair.c.iter().map(|c| c.abs()).fold(1.0, f64::max);
        prop_assert!(pair.constraint_defect().abs() <= 1e-14 * scale);
        if let Some(y1) = collision_profile(&pair, i, x3) {
            let g1 = uptake_g(y1, y3, i, x3, &pair.u1);
            let g2 = uptake_g(y1, y3, i, x3, &pair.u2);
            prop_assert!((g1 - g2).abs() <= 1e-12 * g1.abs().max(1e-3), "{} vs {}", g1, g2);
        }
    }

    #[test]
    fn unit_coordinates_round_trip(z in 0.0f64..=1.0, k in 0usize..7) {
        let b = Bound::default_for(NdopParam::ALL[k]);
        let x = b.from_unit(z);
        prop_assert!(x >= b.lo * (1.0 - 1e-12) && x <= b.hi * (1.0 + 1e-12));
        prop_assert!((b.to_unit(x) - z).abs() < 1e-12);
    }

    #[test]
    fn simplex_stays_in_box(t0 in -2.0f64..2.0, t1 in -2.0f64..2.0, s0 in 0.0f64..1.0, s1 in 0.0f64..1.0) {
        let f = |x: &[f64]| (x[0] - t0).powi(2) + 3.0 * (x[1] - t1).powi(2);
        let opts = NelderMeadOptions { max_evals: 400, ..Default::default() };
        let r = minimize(f, &[s0, s1], &[0.0, 0.0], &[1.0, 1.0], &opts);
        prop_assert!(r.x.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((r.x[0] - t0.clamp(0.0, 1.0)).abs() < 1e-4);
        prop_assert!((r.x[1] - t1.clamp(0.0, 1.0)).abs() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn short_runs_conserve_phosphorus(mass in 0.1f64..5.0, lambda in 0.005f64..0.1, b in 0.3f64..1.5) {
        let g = Grid::desk();
        let op = build_synthetic(&g, &SyntheticCirculation::default()).unwrap().operator;
        let f = Forcing::new(&g, &ForcingSettings::default(), 360.0);
        let p = ParameterSet { lambda, b, ..Default::default() };
        let m = Model::new(g, op, f, p).unwrap();
        let y0 = grid::uniform_state_with_mass(mass, &m.grid).unwrap();
        let (_, d) = run_transient(&m, &SolverSettings::default(), &y0, 30.0).unwrap();
        prop_assert!(d.max_mass_drift <= 1e-12, "{}", d.max_mass_drift);
    }
}
