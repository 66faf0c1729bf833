use landscape_core::theory::*;
use statrs::function::gamma::gamma;

fn order(h: u32) -> ModelOrder {
    ModelOrder::new(h).unwrap()
}

/// Adaptive Simpson quadrature, used as an oracle independent of the closed forms.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

fn big_i_quadrature(u: f64, e: f64) -> f64 {
    2.0 / (e * e) * simpson(&|t: f64| (t * t - e * e).max(0.0).sqrt(), u, -e, 1e-13)
}

#[test]
fn big_i_matches_integral_identity() {
    let h3 = order(3);
    let e = e_infinity(h3);
    for i in 0..=40 {
        let u = -5.0 + (5.0 - e) * i as f64 / 40.0;
        let closed = big_i(u, h3).unwrap();
        assert!((closed - big_i_quadrature(u, e)).abs() < 1e-8, "u = {u}");
    }
    // Frozen quadrature value.
    assert!((big_i(-2.0, h3).unwrap() - 0.2075464553).abs() < 1e-9);
}

#[test]
fn i1_matches_quadrature() {
    let r2 = std::f64::consts::SQRT_2;
    for i in 0..=30 {
        let v = r2 + (5.0 - r2) * i as f64 / 30.0;
        let q = simpson(&|x: f64| (x * x - 2.0).abs().sqrt(), r2, v, 1e-13);
        assert!((i1(v).unwrap() - q).abs() < 1e-8, "v = {v}");
    }
    assert!((i1(2.0).unwrap() - 0.53283998).abs() < 1e-8);
}

#[test]
fn airy_series_matches_gamma_form() {
    let reference = 3f64.powf(-2.0 / 3.0) / gamma(2.0 / 3.0);
    assert!((airy_ai_zero() - reference).abs() < 1e-12);
    assert!((airy_ai_zero() - 0.3550280539).abs() < 1e-10);
}

#[test]
fn frozen_thresholds_h3() {
    let t = Thresholds::compute(order(3), 5).unwrap();
    assert!((t.e_infinity - 1.632993161855452).abs() < 1e-12);
    assert!((t.e_0 - 1.656998363527).abs() < 1e-9);
    let frozen = [1.652873, 1.650253, 1.648399, 1.646999, 1.645893];
    for (got, want) in t.e_k.iter().zip(frozen) {
        assert!((got - want).abs() < 1e-6);
    }
}

#[test]
fn thresholds_ordered_for_h3_h4() {
    for h in [3, 4] {
        let t = Thresholds::compute(order(h), 8).unwrap();
        let mut seq = vec![t.e_0];
        seq.extend(&t.e_k);
        seq.push(t.e_infinity);
        assert!(seq.windows(2).all(|w| w[0] > w[1]), "H = {h}: {seq:?}");
    }
}

#[test]
fn low_index_complexity_below_total() {
    for h in [3, 4] {
        let o = order(h);
        let e = e_infinity(o);
        for i in 0..200 {
            let u = -3.0 + (3.0 - e) * i as f64 / 200.0;
            for k in 1..=5 {
                assert!(theta_kh(u, k, o) < theta_kh(u, 0, o), "H={h} k={k} u={u}");
            }
        }
    }
}

#[test]
fn theta_h_monotone_on_grid() {
    for h in 2..=5 {
        let o = order(h);
        let vals: Vec<f64> = (0..1000).map(|i| theta_h(-3.0 + 4.0 * i as f64 / 999.0, o)).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-15), "H = {h}");
    }
}

#[test]
fn theta_continuity_at_branch_points() {
    // Both sides share the slope -(H-2)u/(2(H-1)) at -E_inf (I' vanishes there) and 0 at u = 0,
    // so after removing the linear term the two-sided difference must vanish.
    for h in [3, 4, 5] {
        let o = order(h);
        let e = e_infinity(o);
        let hf = h as f64;
        let delta = 1e-6;
        let slope = (hf - 2.0) * e / (2.0 * (hf - 1.0));
        let jump = theta_h(-e + delta, o) - theta_h(-e - delta, o) - 2.0 * delta * slope;
        assert!(jump.abs() <= 1e-8, "H={h}: {jump}");
        let jump0 = theta_h(delta, o) - theta_h(-delta, o);
        assert!(jump0.abs() <= 1e-8);
        for k in 0..4 {
            let jk = theta_kh(-e + 1e-9, k, o) - theta_kh(-e - 1e-9, k, o);
            assert!(jk.abs() <= 1e-8);
        }
    }
}

#[test]
fn mean_count_rate_approaches_theta() {
    let h3 = order(3);
    for u in [-1.8, -1.0, 1.0] {
        let gaps: Vec<f64> = [100u64, 1000, 10_000]
            .iter()
            .map(|&lam| (mean_count(u, lam, h3).unwrap().log_value / lam as f64 - theta_h(u, h3)).abs())
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "u = {u}: {gaps:?}");
        assert!(gaps[2] < 1e-2);
    }
}

#[test]
fn curve_invariants() {
    for h in [3, 4] {
        let c = ComplexityCurve::tabulate(order(h), 5, -3.0, 1.0, 400).unwrap();
        c.check_invariants().unwrap();
    }
}
