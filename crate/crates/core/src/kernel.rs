//! Non-negative decay sequences `k_t`, `t >= 1`, used for excitation, mark coupling
//! and per-lag influence bounds, together with their tail sums.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Terms summed explicitly before the Euler-Maclaurin remainder for polynomial tails.
const POLY_DIRECT_TERMS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DecayKernel {
    /// `c * exp(-rate * t)`
    Exponential { c: f64, rate: f64 },
    /// `c / (1 + t^power)`
    Polynomial { c: f64, power: f64 },
    /// `values[t - 1]`, zero past the end.
    Tabulated { values: Vec<f64> },
}

/// Tail sum `sum_{t > T} k_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSum {
    pub exact: f64,
    /// `c / rate * exp(-rate * T)`, only for exponential kernels. Dominates `exact`.
    pub integral_bound: Option<f64>,
}

impl DecayKernel {
    pub fn zero() -> Self {
        DecayKernel::Tabulated { values: Vec::new() }
    }

    pub fn exponential(c: f64, rate: f64) -> Self {
        DecayKernel::Exponential { c, rate }
    }

    pub fn polynomial(c: f64, power: f64) -> Self {
        DecayKernel::Polynomial { c, power }
    }

    pub fn tabulated(values: Vec<f64>) -> Self {
        DecayKernel::Tabulated { values }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DecayKernel::Exponential { c, rate } => {
                if !(c.is_finite() && *c >= 0.0) {
                    return Err(invalid("c", format!("must be finite and >= 0, got {c}")));
                }
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(invalid("rate", format!("must be finite and > 0, got {rate}")));
                }
            }
            DecayKernel::Polynomial { c, power } => {
                if !(c.is_finite() && *c >= 0.0) {
                    return Err(invalid("c", format!("must be finite and >= 0, got {c}")));
                }
                if !(power.is_finite() && *power > 0.0) {
                    return Err(invalid("power", format!("must be finite and > 0, got {power}")));
                }
            }
            DecayKernel::Tabulated { values } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("tabulated kernel"));
                }
                if values.iter().any(|v| *v < 0.0) {
                    return Err(invalid("values", "tabulated kernel entries must be >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Kernel value at lag `t`. Lag 0 carries no influence and evaluates to 0.
    pub fn value(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        match self {
            DecayKernel::Exponential { c, rate } => c * (-rate * t as f64).exp(),
            DecayKernel::Polynomial { c, power } => c / (1.0 + (t as f64).powf(*power)),
            DecayKernel::Tabulated { values } => values.get(t - 1).copied().unwrap_or(0.0),
        }
    }

    /// Values at lags `1..=len`.
    pub fn values(&self, len: usize) -> Vec<f64> {
        (1..=len).map(|t| self.value(t)).collect()
    }

    pub fn is_non_increasing(&self) -> bool {
        match self {
            DecayKernel::Tabulated { values } => values.windows(2).all(|w| w[1] <= w[0]),
            _ => true,
        }
    }

    pub fn is_summable(&self) -> bool {
        match self {
            DecayKernel::Polynomial { c, power } => *c == 0.0 || *power > 1.0,
            _ => true,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DecayKernel::Exponential { c, .. } | DecayKernel::Polynomial { c, .. } => *c == 0.0,
            DecayKernel::Tabulated { values } => values.iter().all(|v| *v == 0.0),
        }
    }

    /// Multiply every value by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            DecayKernel::Exponential { c, rate } => DecayKernel::Exponential {
                c: c * factor,
                rate: *rate,
            },
            DecayKernel::Polynomial { c, power } => DecayKernel::Polynomial {
                c: c * factor,
                power: *power,
            },
            DecayKernel::Tabulated { values } => DecayKernel::Tabulated {
                values: values.iter().map(|v| v * factor).collect(),
            },
        }
    }

    /// Tabulated copy restricted to lags `1..=len`.
    pub fn truncated(&self, len: usize) -> Self {
        DecayKernel::Tabulated {
            values: self.values(len),
        }
    }

    /// Pointwise sum of two kernels, tabulated over lags `1..=len`.
    pub fn sum_truncated(&self, other: &DecayKernel, len: usize) -> Self {
        DecayKernel::Tabulated {
            values: (1..=len).map(|t| self.value(t) + other.value(t)).collect(),
        }
    }

    /// `sum_{t > horizon} k_t`.
    pub fn tail_sum(&self, horizon: usize) -> Result<TailSum> {
        self.validate()?;
        match self {
            DecayKernel::Exponential { c, rate } => {
                let exact = c * (-rate * (horizon as f64 + 1.0)).exp() / -(-rate).exp_m1();
                let integral_bound = c / rate * (-rate * horizon as f64).exp();
                Ok(TailSum {
                    exact,
                    integral_bound: Some(integral_bound),
                })
            }
            DecayKernel::Polynomial { c, power } => {
                if *c == 0.0 {
                    return Ok(TailSum {
                        exact: 0.0,
                        integral_bound: None,
                    });
                }
                if *power <= 1.0 {
                    return Err(Error::NonSummable(format!(
                        "polynomial kernel with power {power} <= 1"
                    )));
                }
                Ok(TailSum {
                    exact: c * polynomial_tail(*power, horizon),
                    integral_bound: None,
                })
            }
            DecayKernel::Tabulated { values } => {
                let exact = values.iter().skip(horizon).rev().fold(0.0, |acc, v| acc + v);
                Ok(TailSum {
                    exact,
                    integral_bound: None,
                })
            }
        }
    }

    /// `sum_{t >= 1} k_t`.
    pub fn total(&self) -> Result<f64> {
        Ok(self.tail_sum(0)?.exact)
    }
}

/// `sum_{t > horizon} 1 / (1 + t^p)` for `p > 1`: explicit terms up to a cutoff, then
/// Euler-Maclaurin with the integral expanded as `sum_k (-1)^k t^{-p(k+1)}`.
fn polynomial_tail(p: f64, horizon: usize) -> f64 {
    let f = |t: f64| 1.0 / (1.0 + t.powf(p));
    let cutoff = horizon + POLY_DIRECT_TERMS;
    // smallest terms first
    let direct: f64 = (horizon + 1..=cutoff).rev().map(|t| f(t as f64)).sum();

    let m = cutoff as f64;
    let mut integral = 0.0;
    let mut k = 0.0;
    loop {
        let e = p * (k + 1.0) - 1.0;
        let term = m.powf(-e) / e;
        let signed = if (k as i64) % 2 == 0 { term } else { -term };
        integral += signed;
        if term < 1e-18 * integral.abs() || k > 200.0 {
            break;
        }
        k += 1.0;
    }
    let mp = m.powf(p);
    let f_m = 1.0 / (1.0 + mp);
    let df_m = -p * m.powf(p - 1.0) / ((1.0 + mp) * (1.0 + mp));
    // sum_{t > m} f(t) = int_m^inf f - f(m)/2 - f'(m)/12 + O(f''')
    direct + integral - 0.5 * f_m - df_m / 12.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_tail(k: &DecayKernel, horizon: usize) -> f64 {
        // numeric summation until the increment drops below 1e-16 of the running total
        let mut acc = 0.0;
        let mut t = horizon + 1;
        loop {
            let v = k.value(t);
            acc += v;
            if v <= 1e-16 * acc || t > horizon + 100_000 {
                break;
            }
            t += 1;
        }
        acc
    }

    #[test]
    fn zero_kernel_tail() {
        assert_eq!(DecayKernel::zero().tail_sum(0).unwrap().exact, 0.0);
        assert_eq!(DecayKernel::exponential(0.0, 1.0).tail_sum(3).unwrap().exact, 0.0);
    }

    #[test]
    fn exponential_tail_and_integral_bound() {
        let k = DecayKernel::exponential(1.0, 1.0);
        let tail = k.tail_sum(3).unwrap();
        let brute = brute_tail(&k, 3);
        assert!((tail.exact - brute).abs() <= 1e-12 * brute);
        assert!((tail.integral_bound.unwrap() - (-3.0f64).exp()).abs() < 1e-15);
        assert!(tail.integral_bound.unwrap() >= tail.exact);
    }

    #[test]
    fn tabulated_tail() {
        let k = DecayKernel::tabulated(vec![0.5, 0.25]);
        assert_eq!(k.tail_sum(1).unwrap().exact, 0.25);
        assert_eq!(k.tail_sum(0).unwrap().exact, 0.75);
        assert_eq!(k.tail_sum(5).unwrap().exact, 0.0);
        assert_eq!(k.value(3), 0.0);
    }

    #[test]
    fn polynomial_tail_matches_long_sum() {
        for &(p, h) in &[(2.0, 0usize), (2.0, 5), (3.5, 2), (1.5, 10)] {
            let k = DecayKernel::polynomial(1.0, p);
            let exact = k.tail_sum(h).unwrap().exact;
            // explicit sum to 2e6 plus a midpoint-integral remainder
            let n = 2_000_000usize;
            let mut s: f64 = (h + 1..=n).rev().map(|t| k.value(t)).sum();
            s += (n as f64 + 0.5).powf(1.0 - p) / (p - 1.0);
            assert!((exact - s).abs() <= 1e-9 * s, "p={p} h={h}: {exact} vs {s}");
        }
    }

    #[test]
    fn non_summable_polynomial_rejected() {
        assert!(matches!(
            DecayKernel::polynomial(1.0, 1.0).tail_sum(0),
            Err(Error::NonSummable(_))
        ));
    }

    #[test]
    fn validation() {
        assert!(DecayKernel::exponential(1.0, 0.0).validate().is_err());
        assert!(DecayKernel::exponential(-1.0, 1.0).validate().is_err());
        assert!(DecayKernel::tabulated(vec![0.1, f64::NAN]).validate().is_err());
        assert!(DecayKernel::tabulated(vec![0.1, -0.1]).validate().is_err());
        assert!(!DecayKernel::tabulated(vec![0.1, 0.2]).is_non_increasing());
    }

    #[test]
    fn toml_roundtrip() {
        #[derive(Serialize, Deserialize)]
        struct W {
            k: DecayKernel,
        }
        let w: W = toml::from_str("[k]\nkind = \"polynomial\"\nc = 1.0\npower = 2.0\n").unwrap();
        assert_eq!(w.k, DecayKernel::polynomial(1.0, 2.0));
    }
}
