use proptest::prelude::*;

use rbergomi::asymptotics::{normalized_functions, spx_skew_limit, vix_limits_rbergomi};
use rbergomi::calibration::calibrate_spx_loadings;
use rbergomi::kernel::{
    build_system, cov_cross, cov_forward_integral, cov_rl_fbm, Coordinate, SchemeDescriptor,
};
use rbergomi::model::{variance, ModelParams};
use rbergomi::pricing::{bs_price, bs_vega, implied_vol};

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        ((a - b) / b).abs()
    }
}

prop_compose! {
    fn rough_params()(
        hurst in 0.01f64..0.16,
        nu in 0.2f64..3.0,
        eta in 0.2f64..3.0,
        rho in -0.7f64..1.0,
        chi in 0.05f64..0.95,
        v0 in 0.005f64..0.2,
        delta in 0.02f64..0.25,
    ) -> ModelParams {
        ModelParams { hurst, nu, eta, rho, chi, v0, delta, ..ModelParams::default() }
    }
}

proptest! {
    #[test]
    fn covariances_are_symmetric(h in 0.01f64..0.5, t in 1e-4f64..2.0, s in 1e-4f64..2.0, d in 0.0f64..1.0) {
        prop_assert_eq!(cov_rl_fbm(h, t, s).unwrap(), cov_rl_fbm(h, s, t).unwrap());
        let horizon = t.min(s);
        let (r1, r2) = (horizon + d, horizon + 0.5 * d);
        let a = cov_forward_integral(h, horizon, r1, r2).unwrap();
        let b = cov_forward_integral(h, horizon, r2, r1).unwrap();
        prop_assert!(rel(a, b) < 1e-12);
    }

    #[test]
    fn brownian_degeneracy(t in 1e-3f64..3.0, s in 1e-3f64..3.0, d in 0.0f64..1.0) {
        let m = t.min(s);
        prop_assert!(rel(cov_rl_fbm(0.5, t, s).unwrap(), m) < 1e-12);
        prop_assert!(rel(cov_cross(0.5, t, s).unwrap(), m) < 1e-12);
        prop_assert!(rel(cov_forward_integral(0.5, m, m + d, m + 0.3 * d).unwrap(), m) < 1e-12);
    }

    #[test]
    fn systems_satisfy_cauchy_schwarz(
        h in 0.02f64..0.5,
        times in prop::collection::btree_set(1u32..200, 1..8),
        maturity in 0.01f64..0.5,
    ) {
        let grid: Vec<f64> = times.iter().map(|&i| i as f64 / 100.0).collect();
        let nodes: Vec<f64> = grid.iter().map(|g| maturity + g / 10.0).collect();
        for desc in [SchemeDescriptor::spx(h, &grid), SchemeDescriptor::vix(h, maturity, &nodes)] {
            let sys = build_system(&desc).unwrap();
            let c = sys.cov();
            for i in 0..sys.dim() {
                for j in 0..sys.dim() {
                    prop_assert_eq!(c[(i, j)], c[(j, i)]);
                    prop_assert!(c[(i, j)].powi(2) <= c[(i, i)] * c[(j, j)] * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn bs_increasing_in_vol(x in -1.0f64..1.0, k in -1.0f64..1.0, s in 0.01f64..3.0, ds in 1e-3f64..1.0, t in 0.01f64..2.0) {
        let lo = bs_price(0.0, x, k, s, t);
        let hi = bs_price(0.0, x, k, s + ds, t);
        prop_assert!(hi >= lo);
        prop_assert!(hi <= x.exp());
        prop_assert!(lo >= (x.exp() - k.exp()).max(0.0));
    }

    // Restricted to prices whose vega resolves a 1e-10 change in σ.
    #[test]
    fn implied_vol_roundtrip(x in -1.0f64..1.0, dk in -2.0f64..2.0, sigma in 0.01f64..5.0) {
        let k = x + dk;
        let price = bs_price(0.0, x, k, sigma, 1.0);
        let vega = bs_vega(0.0, x, k, sigma, 1.0);
        prop_assume!(vega * 1e-10 > 64.0 * f64::EPSILON * price.max(x.exp()));
        let iv = implied_vol(price, 0.0, x, k, 1.0).unwrap();
        prop_assert!((iv - sigma).abs() < 1e-10, "σ={} iv={}", sigma, iv);
    }

    #[test]
    fn variance_is_positive(p in rough_params(), w1 in -5.0f64..5.0, w2 in -5.0f64..5.0, t in 1e-4f64..2.0) {
        prop_assert!(variance(&p, w1, w2, t) > 0.0);
    }

    #[test]
    fn limits_are_homogeneous_in_vol_of_vol(p in rough_params()) {
        let base = vix_limits_rbergomi(&p, true).unwrap();
        for c in [0.5, 2.0] {
            let q = ModelParams { nu: c * p.nu, eta: c * p.eta, ..p };
            let s = vix_limits_rbergomi(&q, true).unwrap();
            prop_assert!(rel(s.level, c * base.level) < 1e-12);
            prop_assert!(rel(s.skew_value, c * base.skew_value) < 1e-12);
            prop_assert!(rel(s.curvature_value.unwrap(), c * base.curvature_value.unwrap()) < 1e-12);
        }
    }

    #[test]
    fn vix_level_ignores_v0(p in rough_params()) {
        let levels: Vec<f64> = [0.01, 0.04, 0.09]
            .iter()
            .map(|&v0| vix_limits_rbergomi(&ModelParams { v0, ..p }, false).unwrap().level)
            .collect();
        prop_assert!(rel(levels[0], levels[1]) < 1e-15);
        prop_assert!(rel(levels[2], levels[1]) < 1e-15);
    }

    #[test]
    fn quotients_are_scale_free(p in rough_params(), c in 0.1f64..10.0) {
        let p = ModelParams { chi: 0.5, ..p };
        let q = ModelParams { nu: c * p.nu, eta: c * p.eta, ..p };
        let (a, b) = (vix_limits_rbergomi(&p, true).unwrap(), vix_limits_rbergomi(&q, true).unwrap());
        prop_assert!(rel(b.skew_value / b.level, a.skew_value / a.level) < 1e-12);
        prop_assert!(rel(b.curvature_value.unwrap() / b.level, a.curvature_value.unwrap() / a.level) < 1e-12);
    }

    #[test]
    fn normalized_functions_even_in_b(a in -3.0f64..3.0, b in 0.0f64..3.0, h in 0.01f64..0.16) {
        let p = normalized_functions(a, b, h, 1.0 / 12.0).unwrap();
        let m = normalized_functions(a, -b, h, 1.0 / 12.0).unwrap();
        prop_assert_eq!(p.phi_s, m.phi_s);
        prop_assert_eq!(p.phi_c, m.phi_c);
        prop_assert_eq!(p.psi, m.psi);
    }

    #[test]
    fn normalized_level_matches_explicit(p in rough_params()) {
        let p = ModelParams { chi: 0.5, ..p };
        let nf = normalized_functions(p.eta * p.rho / p.nu, p.eta * p.rho_bar() / p.nu, p.hurst, p.delta).unwrap();
        let (i0, s0, c0) = nf.limits(p.nu);
        let e = vix_limits_rbergomi(&p, true).unwrap();
        prop_assert!(rel(i0, e.level) < 1e-10);
        prop_assert!(rel(s0, e.skew_value) < 1e-9 || (s0 - e.skew_value).abs() < 1e-12 * e.level);
        prop_assert!(rel(c0, e.curvature_value.unwrap()) < 1e-10);
    }

    #[test]
    fn loadings_roundtrip(p in rough_params(), rho1 in -0.95f64..0.95) {
        let p = p.with_loadings(rho1, 0.0).unwrap();
        let target = spx_skew_limit(&p).skew_value;
        let (r1, r2, r3) = calibrate_spx_loadings(&p, target).unwrap();
        prop_assert!((r1 * r1 + r2 * r2 + r3 * r3 - 1.0).abs() < 1e-12);
        let q = p.with_loadings(r1, r2).unwrap();
        prop_assert!((spx_skew_limit(&q).skew_value - target).abs() <= 1e-10 * target.abs().max(1e-300));
    }
}

#[test]
fn coordinates_match_public_covariances() {
    let desc = SchemeDescriptor {
        hurst: 0.2,
        coordinates: vec![
            Coordinate::Fbm { t: 0.3 },
            Coordinate::Brownian { t: 0.2 },
            Coordinate::Forward { horizon: 0.3, r: 0.5 },
        ],
    };
    let sys = build_system(&desc).unwrap();
    let c = sys.cov();
    assert!(rel(c[(0, 0)], cov_rl_fbm(0.2, 0.3, 0.3).unwrap()) < 1e-12);
    assert!(rel(c[(0, 1)], cov_cross(0.2, 0.3, 0.2).unwrap()) < 1e-12);
    assert!(rel(c[(0, 2)], cov_forward_integral(0.2, 0.3, 0.3, 0.5).unwrap()) < 1e-12);
    assert_eq!(c[(1, 1)], 0.2);
}
