use mdpc_core::kernels::KernelKind;
use proptest::prelude::*;

fn kernel() -> impl Strategy<Value = KernelKind> {
    prop_oneof![
        (0.1f64..20.0, 0.05f64..2.0).prop_map(|(strength, radius)| KernelKind::BoundedConfidence { strength, radius }),
        (-1.0f64..1.0, 0.1f64..5.0, 0.1f64..2.0, 0.0f64..3.0)
            .prop_map(|(alpha, k, varsigma, gamma)| KernelKind::CuckerSmale { alpha, k, varsigma, gamma }),
        (2.0f64..6.0, 2.0f64..4.0)
            .prop_map(|(attraction, repulsion)| KernelKind::AttractionRepulsion { attraction, repulsion }),
    ]
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, dim)
}

proptest! {
    #[test]
    fn symmetric(k in kernel(), v in point(2), w in point(2)) {
        prop_assert_eq!(k.evaluate(&v, &w).unwrap(), k.evaluate(&w, &v).unwrap());
    }

    #[test]
    fn translation_invariant(k in kernel(), v in point(2), w in point(2), shift in point(2)) {
        let vs: Vec<f64> = v.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let ws: Vec<f64> = w.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let (p, q) = (k.evaluate(&v, &w).unwrap(), k.evaluate(&vs, &ws).unwrap());
        let near_threshold = matches!(k, KernelKind::BoundedConfidence { radius, .. }
            if ((v[0]-w[0]).hypot(v[1]-w[1]) - radius).abs() < 1e-9);
        prop_assume!(!near_threshold);
        prop_assert!((p - q).abs() <= 1e-9 * p.abs().max(1.0));
    }

    #[test]
    fn values_respect_bounds(k in kernel(), v in point(2), w in point(2)) {
        let r = ((v[0] - w[0]).powi(2) + (v[1] - w[1]).powi(2)).sqrt();
        let bnd = k.bounds(r.max(1e-3) * 1.0001);
        let p = k.evaluate(&v, &w).unwrap();
        let slack = 1e-9 * p.abs().max(1.0);
        prop_assert!(bnd.a >= 0.0 && bnd.b >= 0.0);
        prop_assert!(p >= -bnd.a - slack && p <= bnd.b + slack, "{p} not in [-{}, {}]", bnd.a, bnd.b);
    }

    #[test]
    fn linearization_is_diagonal_value(k in kernel(), v in point(3)) {
        prop_assert_eq!(k.linearization_coefficient(&v), k.evaluate(&v, &v).unwrap());
    }
}
