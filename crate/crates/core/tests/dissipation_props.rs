use fbe_core::dissipation::{geo_mean, log_mean, log_ratio};
use fbe_core::DissipationStructure::{self, Cosh, Quadratic};
use proptest::prelude::*;

fn structures() -> impl Strategy<Value = DissipationStructure> {
    prop_oneof![Just(Quadratic), Just(Cosh)]
}

/// Positive values spread over twelve decades.
fn positive() -> impl Strategy<Value = f64> {
    (-6.0f64..6.0).prop_map(|e| 10f64.powf(e))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

proptest! {
    #[test]
    fn log_ratio_is_antisymmetric_and_matches_logs(s in positive(), t in positive()) {
        let r = log_ratio(s, t);
        prop_assert!((r + log_ratio(t, s)).abs() <= 1e-14 * r.abs());
        prop_assert!((r - (s.ln() - t.ln())).abs() <= 1e-14 * (1.0 + s.ln().abs() + t.ln().abs()));
    }

    #[test]
    fn compatibility_identity(st in structures(), s in positive(), t in positive()) {
        let lhs = st.psi_star_prime(log_ratio(s, t)) * st.theta(s, t).unwrap();
        prop_assert!((lhs - (s - t)).abs() <= 1e-12 * s.max(t), "{lhs} vs {}", s - t);
    }

    #[test]
    fn fenchel_young(st in structures(), r in -20.0f64..20.0, xi in -20.0f64..20.0) {
        let gap = st.psi(r) + st.psi_star(xi) - r * xi;
        prop_assert!(gap >= -1e-12 * (1.0 + (r * xi).abs()), "{gap}");
    }

    #[test]
    fn fenchel_young_equality_on_the_derivative(st in structures(), xi in -20.0f64..20.0) {
        let r = st.psi_star_prime(xi);
        let gap = st.psi(r) + st.psi_star(xi) - r * xi;
        prop_assert!(gap.abs() <= 1e-10 * (1.0 + (r * xi).abs()), "{gap}");
    }

    #[test]
    fn psi_pair_is_even_and_nonnegative(st in structures(), r in -50.0f64..50.0) {
        prop_assert!(st.psi(r) >= 0.0 && st.psi_star(r) >= 0.0);
        prop_assert!(rel(st.psi(r), st.psi(-r)) <= 1e-14);
        prop_assert!(rel(st.psi_star(r), st.psi_star(-r)) <= 1e-14);
    }

    #[test]
    fn means_lie_between_min_and_arithmetic_mean(s in positive(), t in positive()) {
        let (lo, am) = (s.min(t), 0.5 * (s + t));
        let g = geo_mean(s, t).unwrap();
        let l = log_mean(s, t).unwrap();
        prop_assert!(lo * (1.0 - 1e-14) <= g && g <= l * (1.0 + 1e-12) && l <= am * (1.0 + 1e-14));
    }

    #[test]
    fn theta_is_symmetric_and_one_homogeneous(st in structures(), s in positive(), t in positive(), c in positive()) {
        let th = st.theta(s, t).unwrap();
        prop_assert!(rel(th, st.theta(t, s).unwrap()) <= 1e-14);
        prop_assert!(rel(st.theta(c * s, c * t).unwrap(), c * th) <= 1e-12);
    }

    #[test]
    fn log_mean_is_continuous_across_the_series_switch(s in positive(), x in 5e-5f64..4e-4, neg in any::<bool>()) {
        // the direct quotient is accurate to ~eps/|x|, fine on this band around the switch
        let t = s * if neg { -x } else { x }.exp();
        let direct = if s == t { s } else { (s - t) / (s.ln() - t.ln()) };
        prop_assert!(rel(log_mean(s, t).unwrap(), direct) <= 1e-9);
    }

    #[test]
    fn g_psi_star_matches_its_definition(st in structures(), s in positive(), t in positive()) {
        let g = st.g_psi_star(s, t).unwrap();
        let def = 0.25 * st.psi_star(log_ratio(t, s)) * st.theta(s, t).unwrap();
        prop_assert!(g >= 0.0);
        prop_assert!((g - def).abs() <= 1e-11 * def.max(1e-300) + 1e-300 * s.max(t), "{g} vs {def}");
        prop_assert!(rel(g, st.g_psi_star(t, s).unwrap()) <= 1e-13);
    }

    #[test]
    fn quadratic_g_psi_star_is_a_quarter_of_the_entropy_density(s in positive(), t in positive()) {
        let g = Quadratic.g_psi_star(s, t).unwrap();
        prop_assert!(rel(g, 0.125 * (s - t) * log_ratio(s, t)) <= 1e-13);
    }

    #[test]
    fn g_psi_is_convex_in_the_flux(
        st in structures(), s in positive(), t in positive(),
        u in -10.0f64..10.0, w in -10.0f64..10.0, lam in 0.0f64..1.0,
    ) {
        let g = |x: f64| st.g_psi(s, t, x).unwrap();
        let mid = g(lam * u + (1.0 - lam) * w);
        let chord = lam * g(u) + (1.0 - lam) * g(w);
        prop_assert!(mid <= chord * (1.0 + 1e-12) + 1e-300, "{mid} > {chord}");
    }

    #[test]
    fn true_flux_saturates_the_density_inequality(st in structures(), s in positive(), t in positive()) {
        // G_Ψ(s,t,U) + G_Ψ*(s,t) ≥ -¼ U (log t - log s), equality for U = s - t
        let xi = log_ratio(t, s);
        for u in [s - t, 0.5 * (s - t), 2.0 * (s - t) + 0.1 * s] {
            let total = st.g_psi(s, t, u).unwrap() + st.g_psi_star(s, t).unwrap();
            let pair = -0.25 * u * xi;
            prop_assert!(total >= pair - 1e-12 * total.abs().max(pair.abs()));
            if u == s - t {
                prop_assert!((total - pair).abs() <= 1e-10 * pair.abs().max(1e-300), "{total} vs {pair}");
            }
        }
    }
}

#[test]
fn degenerate_arguments() {
    assert_eq!(Quadratic.g_psi_star(0.0, 1.0).unwrap(), f64::INFINITY);
    assert_eq!(Quadratic.g_psi_star(0.0, 0.0).unwrap(), 0.0);
    assert_eq!(Cosh.g_psi_star(0.0, 4.0).unwrap(), 2.0);
    assert_eq!(Cosh.g_psi(0.0, 1.0, 0.0).unwrap(), 0.0);
    assert_eq!(Cosh.g_psi(0.0, 1.0, 0.5).unwrap(), f64::INFINITY);
    assert!(log_mean(-1.0, 1.0).is_err());
}
