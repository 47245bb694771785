use mlqmc_evp::coeff::{Coefficient, CoefficientExpansion, FamilyKind, ParamPoint};
use mlqmc_evp::fem::{assemble, assemble_full_mass, build_hierarchy, MeshLevel};
use proptest::prelude::*;

fn family(kind: FamilyKind, dim: usize, reaction: bool) -> CoefficientExpansion {
    CoefficientExpansion::builtin(kind, dim, 2.5, 16, reaction).unwrap()
}

fn y_strategy(s: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.5f64..0.5, s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn zero_padding_is_truncation(y in y_strategy(5), x0 in 0.0f64..1.0, x1 in 0.0f64..1.0, pad in 1usize..10) {
        for kind in [FamilyKind::SineDecay, FamilyKind::IndicatorPatches] {
            let exp = family(kind, 2, true);
            let short = ParamPoint::new(y.clone()).unwrap();
            let mut padded = y.clone();
            padded.resize(5 + pad, 0.0);
            let long = ParamPoint::new(padded).unwrap();
            for which in [Coefficient::A, Coefficient::B, Coefficient::C] {
                prop_assert_eq!(
                    exp.eval_truncated(which, &[x0, x1], &short).unwrap(),
                    exp.eval_truncated(which, &[x0, x1], &long).unwrap()
                );
            }
        }
    }

    #[test]
    fn fluctuation_is_linear(y1 in y_strategy(8), y2 in y_strategy(8), x0 in 0.0f64..1.0) {
        for kind in [FamilyKind::SineDecay, FamilyKind::IndicatorPatches] {
            let exp = family(kind, 1, false);
            let at = |y: Vec<f64>| exp.eval_truncated(Coefficient::A, &[x0], &ParamPoint::new(y).unwrap()).unwrap() - 1.0;
            // halve so the sum stays inside the parameter box
            let h1: Vec<f64> = y1.iter().map(|v| v / 2.0).collect();
            let h2: Vec<f64> = y2.iter().map(|v| v / 2.0).collect();
            let sum: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
            let lhs = at(sum);
            let rhs = at(h1) + at(h2);
            prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn coefficients_within_bounds(y in y_strategy(16), x0 in 0.0f64..1.0, x1 in 0.0f64..1.0) {
        for kind in [FamilyKind::SineDecay, FamilyKind::IndicatorPatches] {
            let exp = family(kind, 2, true);
            let y = ParamPoint::new(y.clone()).unwrap();
            let a = exp.eval_truncated(Coefficient::A, &[x0, x1], &y).unwrap();
            let b = exp.eval_truncated(Coefficient::B, &[x0, x1], &y).unwrap();
            prop_assert!(exp.amin <= a && a <= exp.amax);
            prop_assert!(0.0 <= b && b <= exp.amax);
        }
    }
}

#[test]
fn stiffness_is_affine_in_parameters() {
    for dim in [1, 2] {
        let exp = family(FamilyKind::SineDecay, dim, false);
        let mesh = MeshLevel::uniform(dim, 8).unwrap();
        let y: Vec<f64> = (0..16).map(|j| 0.4 * ((j as f64) * 1.3).sin()).collect();
        let a0 = assemble(&mesh, &exp, &ParamPoint::zeros(16)).unwrap().a.to_dense();
        let a1 = assemble(&mesh, &exp, &ParamPoint::new(y.clone()).unwrap()).unwrap().a.to_dense();
        let half: Vec<f64> = y.iter().map(|v| v / 2.0).collect();
        let ah = assemble(&mesh, &exp, &ParamPoint::new(half).unwrap()).unwrap().a.to_dense();
        for i in 0..a0.len() {
            for j in 0..a0.len() {
                let full = a1[i][j] - a0[i][j];
                let scaled = 2.0 * (ah[i][j] - a0[i][j]);
                assert!((full - scaled).abs() <= 1e-13 * a0[i][i].abs(), "dim {dim} ({i},{j})");
            }
        }
    }
}

#[test]
fn full_mass_integrates_to_domain_area() {
    for (dim, n) in [(1, 7), (1, 64), (2, 5), (2, 16)] {
        let exp = family(FamilyKind::SineDecay, dim, false);
        let mesh = MeshLevel::uniform(dim, n).unwrap();
        let m = assemble_full_mass(&mesh, &exp);
        let ones = vec![1.0; m.dim()];
        assert!((m.bilinear(&ones, &ones) - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn hierarchy_is_nested() {
    for dim in [1, 2] {
        let levels = build_hierarchy(dim, 0.5, 3).unwrap();
        for pair in levels.windows(2) {
            let fine: Vec<Vec<f64>> = pair[1].nodes().map(|p| p.to_vec()).collect();
            for p in pair[0].nodes() {
                assert!(fine.iter().any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-14)));
            }
            assert!(pair[1].h < pair[0].h);
        }
    }
}
