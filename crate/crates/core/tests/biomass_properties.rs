//! Conversion identities and allometric monotonicity over random inputs.

use proptest::prelude::*;
use woodvol_core::biomass::{agb_from_diameter, aggregate_tiles, volume_to_carbon, AllometricTable};

proptest! {
    #[test]
    fn carbon_is_half_of_agb(v in 0.0f64..1e4, rho in 1.0f64..1500.0, area in 1e-4f64..100.0) {
        let e = volume_to_carbon("t", v, rho, area).unwrap();
        prop_assert_eq!(e.carbon, 0.5 * e.agb);
        prop_assert!((e.agb - v * rho / 1000.0).abs() <= 1e-12 * e.agb.max(1.0));
        prop_assert_eq!(e.agb_per_ha, e.agb / area);
    }

    #[test]
    fn conversion_is_linear_and_additive(
        parts in prop::collection::vec((0.0f64..500.0, 1e-3f64..2.0), 1..12),
        rho in 100.0f64..1200.0,
    ) {
        let tiles: Vec<_> = parts
            .iter()
            .map(|&(v, a)| volume_to_carbon("t", v, rho, a).unwrap())
            .collect();
        let site = aggregate_tiles(&tiles, false).unwrap();
        let total_v: f64 = parts.iter().map(|p| p.0).sum();
        let total_a: f64 = parts.iter().map(|p| p.1).sum();
        let whole = volume_to_carbon("all", total_v, rho, total_a).unwrap();
        let tol = 1e-12 * whole.agb.max(1.0);
        prop_assert!((site.agb - whole.agb).abs() <= tol);
        prop_assert!((site.carbon - whole.carbon).abs() <= tol);
        prop_assert!((site.agb_per_ha - whole.agb_per_ha).abs() <= 1e-12 * whole.agb_per_ha.max(1.0));
        prop_assert_eq!(site.n_tiles, parts.len());
    }

    #[test]
    fn diameter_models_increase(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let table = AllometricTable::bundled();
        for m in &table.model {
            let hi = m.domain_max_cm;
            let (x, y) = (hi * a.min(b), hi * a.max(b));
            prop_assume!(x > 0.0 && x < y && y < hi);
            prop_assert!(agb_from_diameter(m, x).unwrap() < agb_from_diameter(m, y).unwrap());
        }
    }
}
