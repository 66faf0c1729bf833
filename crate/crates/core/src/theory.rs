//! Complexity of the H-spin spherical spin glass.
//!
//! Everything here is a pure function of the model order `H` and the scaled
//! energy `u` (loss divided by `Λ`). The complexity functions `Θ_H` and
//! `Θ_{k,H}` give the exponential growth rate of the mean number of critical
//! values below `Λu` (all of them, and those of index `k` respectively). Their
//! zeros define the ground state `E_0` and the layered thresholds `E_k`, which
//! decrease strictly toward the energy barrier `E_∞ = 2 sqrt((H-1)/H)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bisection tolerance for the threshold roots.
pub const ROOT_TOLERANCE: f64 = 1e-10;
/// Largest scaled energy magnitude searched for a threshold root.
pub const ROOT_BRACKET_MAX: f64 = 10.0;
/// Inputs within this distance of `-E_∞` are treated as lying on the barrier.
pub const BARRIER_TOLERANCE: f64 = 1e-12;
/// Linear counts are reported only when `|log count|` is below this.
pub const LINEAR_LOG_LIMIT: f64 = 700.0;

/// Number of interacting spins, equivalently the network depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ModelOrder(u32);

impl ModelOrder {
    pub fn new(h: u32) -> Result<Self> {
        if h < 2 {
            return Err(Error::InvalidOrder { order: h, reason: "order must be at least 2" });
        }
        Ok(Self(h))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    fn h(self) -> f64 {
        self.0 as f64
    }

    /// The precise asymptotics (and the threshold roots) need `H >= 3`.
    pub fn require_asymptotic(self) -> Result<Self> {
        if self.0 < 3 {
            return Err(Error::InvalidOrder {
                order: self.0,
                reason: "asymptotic counts and threshold roots require H >= 3",
            });
        }
        Ok(self)
    }
}

impl TryFrom<u32> for ModelOrder {
    type Error = Error;
    fn try_from(h: u32) -> Result<Self> {
        Self::new(h)
    }
}

impl From<ModelOrder> for u32 {
    fn from(order: ModelOrder) -> u32 {
        order.0
    }
}

/// Energy barrier `E_∞(H) = 2 sqrt((H-1)/H)`.
pub fn e_infinity(order: ModelOrder) -> f64 {
    let h = order.h();
    2.0 * ((h - 1.0) / h).sqrt()
}

fn sqrt_excess(u: f64, e_inf: f64) -> f64 {
    (u * u - e_inf * e_inf).max(0.0).sqrt()
}

/// Rate function `I(u)` for `u <= -E_∞`.
pub fn big_i(u: f64, order: ModelOrder) -> Result<f64> {
    let e_inf = e_infinity(order);
    if !u.is_finite() || u > -e_inf + BARRIER_TOLERANCE {
        return Err(Error::Domain(format!("I(u) needs u <= -E_inf = {:.12}, got {u}", -e_inf)));
    }
    Ok(big_i_unchecked(u, e_inf))
}

fn big_i_unchecked(u: f64, e_inf: f64) -> f64 {
    let s = sqrt_excess(u, e_inf);
    let value = -u / (e_inf * e_inf) * s - (-u + s).ln() + e_inf.ln();
    value.max(0.0)
}

fn quadratic_part(u: f64, order: ModelOrder) -> f64 {
    let h = order.h();
    0.5 * (h - 1.0).ln() - (h - 2.0) * u * u / (4.0 * (h - 1.0))
}

/// Complexity of all critical values, `Θ_H(u)`.
pub fn theta_h(u: f64, order: ModelOrder) -> f64 {
    let e_inf = e_infinity(order);
    if u <= -e_inf {
        quadratic_part(u, order) - big_i_unchecked(u, e_inf)
    } else if u <= 0.0 {
        quadratic_part(u, order)
    } else {
        quadratic_part(0.0, order)
    }
}

/// Value of `Θ_{k,H}` on its plateau `u >= -E_∞`.
///
/// This is the limit of the lower branch at the barrier,
/// `½ log(H-1) - (H-2)/H`, which keeps the function continuous.
pub fn theta_k_plateau(order: ModelOrder) -> f64 {
    let h = order.h();
    0.5 * (h - 1.0).ln() - (h - 2.0) / h
}

/// Complexity of index-`k` critical values, `Θ_{k,H}(u)`.
pub fn theta_kh(u: f64, k: u32, order: ModelOrder) -> f64 {
    let e_inf = e_infinity(order);
    if u <= -e_inf {
        quadratic_part(u, order) - (k as f64 + 1.0) * big_i_unchecked(u, e_inf)
    } else {
        theta_k_plateau(order)
    }
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut f_lo, f_hi) = (f(lo), f(hi));
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::Numerical(format!(
            "root not bracketed in ({lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}"
        )));
    }
    while hi - lo > ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid > 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    debug_assert!(f_lo > 0.0);
    Ok(0.5 * (lo + hi))
}

/// Ground state `E_0(H)`: the level below which minima are exponentially rare.
pub fn e0(order: ModelOrder) -> Result<f64> {
    e_k(order, 0)
}

/// Layer threshold `E_k(H)`: root of `Θ_{k,H}(-u) = 0` above `E_∞`.
pub fn e_k(order: ModelOrder, k: u32) -> Result<f64> {
    let order = order.require_asymptotic()?;
    let e_inf = e_infinity(order);
    bisect(e_inf, ROOT_BRACKET_MAX, |x| theta_kh(-x, k, order))
}

/// `I_1(v) = ∫_{√2}^{v} sqrt(x² - 2) dx` from its antiderivative.
pub fn i1(v: f64) -> Result<f64> {
    let r2 = std::f64::consts::SQRT_2;
    if !v.is_finite() || v < r2 {
        return Err(Error::Domain(format!("I_1(v) needs v >= sqrt(2), got {v}")));
    }
    let s = (v * v - 2.0).max(0.0).sqrt();
    Ok((v * s / 2.0 - (v + s).ln() + r2.ln()).max(0.0))
}

fn i1_prime(v: f64) -> f64 {
    (v * v - 2.0).max(0.0).sqrt()
}

/// Values at `x` of the two Maclaurin solutions of `y'' = x y`, normalised by
/// `f(0)=1, f'(0)=0` and `g(0)=0, g'(0)=1`.
pub fn airy_maclaurin_pair(x: f64) -> (f64, f64) {
    let x3 = x * x * x;
    let (mut f, mut g) = (0.0, 0.0);
    let (mut tf, mut tg) = (1.0, x);
    for k in 0..400 {
        f += tf;
        g += tg;
        let k3 = 3.0 * k as f64;
        tf *= x3 / ((k3 + 2.0) * (k3 + 3.0));
        tg *= x3 / ((k3 + 3.0) * (k3 + 4.0));
        if tf.abs() <= 1e-18 * f.abs() && tg.abs() <= 1e-18 * g.abs() {
            break;
        }
    }
    (f, g)
}

/// `Ai(0)` from the Maclaurin solutions alone.
///
/// `Ai = c₁ f − c₂ g` decays, so `c₁/c₂ = lim g/f`; the Wronskian
/// `W(Ai, Bi) = 1/π` with `Bi = √3 (c₁ f + c₂ g)` fixes `c₁ c₂ = 1/(2√3 π)`.
pub fn airy_ai_zero() -> f64 {
    let (f, g) = airy_maclaurin_pair(10.0);
    let ratio = g / f;
    (ratio / (2.0 * 3f64.sqrt() * std::f64::consts::PI)).sqrt()
}

/// Leading-order mean count, kept on a log scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountEstimate {
    pub log_value: f64,
    /// `exp(log_value)` when `|log_value| < 700`.
    pub value: Option<f64>,
}

impl CountEstimate {
    fn from_log(log_value: f64) -> Self {
        let value = (log_value.abs() < LINEAR_LOG_LIMIT).then(|| log_value.exp());
        Self { log_value, value }
    }
}

fn check_lambda(lambda: u64) -> Result<f64> {
    if lambda < 1 {
        return Err(Error::Domain("Λ must be at least 1".into()));
    }
    Ok(lambda as f64)
}

/// Log prefactor shared by the total and minima counts below the barrier.
fn below_barrier_log_prefactor(u: f64, order: ModelOrder) -> Result<f64> {
    let h = order.h();
    let r2 = std::f64::consts::SQRT_2;
    let v = -u * (h / (2.0 * (h - 1.0))).sqrt();
    let hv = ((v - r2) / (v + r2)).abs().powf(0.25) + ((v + r2) / (v - r2)).abs().powf(0.25);
    let i1v = i1(v)?;
    let i1p = i1_prime(v);
    let neg_phi_prime = (h - 2.0) / h * v;
    Ok((hv / (2.0 * h * std::f64::consts::PI).sqrt()).ln() + i1v - 0.5 * v * i1p
        - (neg_phi_prime + i1p).ln())
}

/// Mean number of critical values below `Λu`, to leading order in `Λ`.
pub fn mean_count(u: f64, lambda: u64, order: ModelOrder) -> Result<CountEstimate> {
    let order = order.require_asymptotic()?;
    let lam = check_lambda(lambda)?;
    if !u.is_finite() {
        return Err(Error::Domain(format!("energy level must be finite, got {u}")));
    }
    let h = order.h();
    let e_inf = e_infinity(order);
    let log_value = if (u + e_inf).abs() <= BARRIER_TOLERANCE {
        let prefactor = 2.0 * airy_ai_zero() * (2.0 * h).sqrt() / (3.0 * (h - 2.0));
        prefactor.ln() - lam.ln() / 3.0 + lam * theta_h(-e_inf, order)
    } else if u < -e_inf {
        below_barrier_log_prefactor(u, order)? - 0.5 * lam.ln() + lam * theta_h(u, order)
    } else if u < 0.0 {
        let prefactor =
            2.0 * (2.0 * h * (e_inf * e_inf - u * u)).sqrt() / ((2.0 - h) * std::f64::consts::PI * u);
        prefactor.ln() + lam * theta_h(u, order)
    } else {
        let prefactor = 4.0 * std::f64::consts::SQRT_2 / (std::f64::consts::PI * (h - 2.0)).sqrt();
        prefactor.ln() + 0.5 * lam.ln() + lam * theta_h(0.0, order)
    };
    Ok(CountEstimate::from_log(log_value))
}

/// Mean number of local minima below `Λu` for `u < -E_∞`, to leading order.
pub fn mean_minima_count(u: f64, lambda: u64, order: ModelOrder) -> Result<CountEstimate> {
    let order = order.require_asymptotic()?;
    let lam = check_lambda(lambda)?;
    let e_inf = e_infinity(order);
    if !u.is_finite() || u >= -e_inf - BARRIER_TOLERANCE {
        return Err(Error::Domain(format!(
            "minima count needs u < -E_inf = {:.12}, got {u}",
            -e_inf
        )));
    }
    let log_value =
        below_barrier_log_prefactor(u, order)? - 0.5 * lam.ln() + lam * theta_h(u, order);
    Ok(CountEstimate::from_log(log_value))
}

/// `E_∞`, `E_0` and `E_1..E_kmax` for one order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub order: ModelOrder,
    pub e_infinity: f64,
    pub e_0: f64,
    /// `E_1, E_2, ..., E_kmax`.
    pub e_k: Vec<f64>,
}

impl Thresholds {
    pub fn compute(order: ModelOrder, k_max: u32) -> Result<Self> {
        let e_0 = e0(order)?;
        let e_k = (1..=k_max).map(|k| e_k(order, k)).collect::<Result<Vec<_>>>()?;
        let thresholds = Self { order, e_infinity: e_infinity(order), e_0, e_k };
        thresholds.check_ordering()?;
        Ok(thresholds)
    }

    /// `E_0 > E_1 > ... > E_∞`, strictly.
    pub fn check_ordering(&self) -> Result<()> {
        let chain: Vec<f64> = std::iter::once(self.e_0)
            .chain(self.e_k.iter().copied())
            .chain(std::iter::once(self.e_infinity))
            .collect();
        for pair in chain.windows(2) {
            if !(pair[0] > pair[1]) {
                return Err(Error::Invariant(format!(
                    "thresholds not strictly decreasing: {} <= {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }
}

/// One row of a tabulated complexity curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub u: f64,
    pub theta_h: f64,
    /// `Θ_{k,H}(u)` for `k = 0..=k_max`.
    pub theta_k: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityCurve {
    pub order: ModelOrder,
    pub points: Vec<CurvePoint>,
}

impl ComplexityCurve {
    pub fn tabulate(order: ModelOrder, k_max: u32, u_min: f64, u_max: f64, points: usize) -> Result<Self> {
        if points < 2 || !(u_min < u_max) || !u_min.is_finite() || !u_max.is_finite() {
            return Err(Error::Config(format!(
                "need at least 2 points on a finite increasing range, got {points} on [{u_min}, {u_max}]"
            )));
        }
        let step = (u_max - u_min) / (points - 1) as f64;
        let points = (0..points)
            .map(|i| {
                let u = if i + 1 == points { u_max } else { u_min + step * i as f64 };
                CurvePoint {
                    u,
                    theta_h: theta_h(u, order),
                    theta_k: (0..=k_max).map(|k| theta_kh(u, k, order)).collect(),
                }
            })
            .collect();
        let curve = Self { order, points };
        curve.check_invariants()?;
        Ok(curve)
    }

    /// Grid strictly increasing and every Θ column non-decreasing.
    pub fn check_invariants(&self) -> Result<()> {
        for pair in self.points.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if !(b.u > a.u) {
                return Err(Error::Invariant(format!("grid not increasing at u={}", b.u)));
            }
            if b.theta_h < a.theta_h - 1e-14 {
                return Err(Error::Invariant(format!("Θ_H decreases between {} and {}", a.u, b.u)));
            }
            for (k, (x, y)) in a.theta_k.iter().zip(&b.theta_k).enumerate() {
                if *y < *x - 1e-14 {
                    return Err(Error::Invariant(format!(
                        "Θ_{{{k},H}} decreases between {} and {}",
                        a.u, b.u
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(h: u32) -> ModelOrder {
        ModelOrder::new(h).unwrap()
    }

    #[test]
    fn barrier_values() {
        assert!((e_infinity(order(2)) - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((e_infinity(order(3)) - 1.6329931619).abs() < 1e-10);
        assert!(ModelOrder::new(1).is_err());
        assert!(ModelOrder::new(0).is_err());
    }

    #[test]
    fn big_i_edges() {
        let h3 = order(3);
        assert_eq!(big_i(-e_infinity(h3), h3).unwrap(), 0.0);
        assert!(big_i(-1.0, h3).is_err());
        // Closed form agrees with the independently computed quadrature value.
        assert!((big_i(-2.0, h3).unwrap() - 0.207_546_455_322_030).abs() < 1e-12);
    }

    #[test]
    fn theta_h_branches() {
        let h3 = order(3);
        let half_log2 = 0.5 * 2f64.ln();
        assert!((theta_h(0.0, h3) - half_log2).abs() < 1e-15);
        assert!((theta_h(7.0, h3) - half_log2).abs() < 1e-15);
        let at_barrier = theta_h(-e_infinity(h3), h3);
        assert!((at_barrier - (half_log2 - 1.0 / 3.0)).abs() < 1e-12);
        assert!((at_barrier - 0.0132402).abs() < 1e-6);
    }

    #[test]
    fn theta_kh_examples() {
        let h3 = order(3);
        let e = e_infinity(h3);
        assert!((theta_kh(-e, 0, h3) - theta_h(-e, h3)).abs() < 1e-12);
        let diff = theta_kh(-2.0, 0, h3) - theta_kh(-2.0, 1, h3);
        assert!((diff - big_i(-2.0, h3).unwrap()).abs() < 1e-14);
        assert!((theta_kh(-1.0, 3, h3) - 0.0132402).abs() < 1e-6);
    }

    #[test]
    fn theta_kh_plateau_is_continuous() {
        for h in 2..=6 {
            let o = order(h);
            let e = e_infinity(o);
            for k in 0..4 {
                let lower = quadratic_part(-e, o) - (k as f64 + 1.0) * big_i_unchecked(-e, e);
                assert!((lower - theta_k_plateau(o)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ground_state_and_layers() {
        let h3 = order(3);
        let e0_3 = e0(h3).unwrap();
        assert!(e0_3 > 1.63299 && e0_3 < 1.70);
        assert!(theta_kh(-e0_3, 0, h3).abs() < 1e-9);
        assert_eq!(e_k(h3, 0).unwrap(), e0_3);
        let e1 = e_k(h3, 1).unwrap();
        assert!(e1 < e0_3 && e1 > e_infinity(h3));
        assert!((e_k(h3, 50).unwrap() - e_infinity(h3)).abs() < 0.02);
        assert!(e0(order(2)).is_err());
    }

    #[test]
    fn i1_examples() {
        assert_eq!(i1(std::f64::consts::SQRT_2).unwrap(), 0.0);
        let expected = 2f64.sqrt() - (2.0 + 2f64.sqrt()).ln() + 2f64.sqrt().ln();
        assert!((i1(2.0).unwrap() - expected).abs() < 1e-14);
        assert!(i1(1.0).is_err());
    }

    #[test]
    fn mean_count_above_zero() {
        let h3 = order(3);
        let est = mean_count(1.0, 10, h3).unwrap();
        let expected_log = (4.0 * 2f64.sqrt() / std::f64::consts::PI.sqrt()).ln()
            + 0.5 * 10f64.ln()
            + 10.0 * theta_h(0.0, h3);
        assert!((est.log_value - expected_log).abs() < 1e-12);
        // exp(10 Θ_3(0)) = 2^5 exactly.
        let linear = 4.0 * 2f64.sqrt() / std::f64::consts::PI.sqrt() * 10f64.sqrt() * 32.0;
        assert!((est.value.unwrap() - linear).abs() < 1e-9);
        assert!((linear - 322.96).abs() < 0.01);
    }

    #[test]
    fn mean_count_uses_airy_on_barrier() {
        let h3 = order(3);
        let u = -e_infinity(h3);
        let est = mean_count(u, 100, h3).unwrap();
        let ai0 = 0.355_028_053_887_817_2;
        let expected = (2.0 * ai0 * 6f64.sqrt() / 3.0).ln() - 100f64.ln() / 3.0 + 100.0 * theta_h(u, h3);
        assert!((est.log_value - expected).abs() < 1e-10);
    }

    #[test]
    fn count_requires_h3() {
        assert!(mean_count(-1.0, 10, order(2)).is_err());
        assert!(mean_minima_count(-1.8, 10, order(2)).is_err());
    }

    #[test]
    fn minima_count_domain() {
        let h3 = order(3);
        assert!(mean_minima_count(-1.5, 50, h3).is_err());
        let minima = mean_minima_count(-1.8, 50, h3).unwrap();
        let all = mean_count(-1.8, 50, h3).unwrap();
        assert!(minima.log_value <= all.log_value);
        assert!((minima.log_value - all.log_value).abs() < 1e-12);
    }

    #[test]
    fn linear_value_dropped_when_huge() {
        let est = mean_count(1.0, 100_000, order(3)).unwrap();
        assert!(est.value.is_none());
        assert!(est.log_value > 700.0);
    }

    #[test]
    fn thresholds_are_ordered() {
        for h in [3, 4, 5] {
            let t = Thresholds::compute(order(h), 8).unwrap();
            assert!(t.e_0 > t.e_k[0]);
            assert!(*t.e_k.last().unwrap() > t.e_infinity);
        }
    }

    #[test]
    fn curve_tabulation() {
        let curve = ComplexityCurve::tabulate(order(3), 5, -3.0, 1.0, 101).unwrap();
        assert_eq!(curve.points.len(), 101);
        assert_eq!(curve.points[100].u, 1.0);
        assert!(ComplexityCurve::tabulate(order(3), 5, 1.0, -3.0, 10).is_err());
    }
}
