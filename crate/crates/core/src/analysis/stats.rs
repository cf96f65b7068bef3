//! Paired t-test with a two-tailed p-value from the regularized incomplete
//! beta function (Lentz continued fraction).

use crate::error::{CoreError, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    /// Two-tailed p-value.
    pub p: f64,
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-14;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if math::abs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        let m2 = 2.0 * m_f;
        let aa = m_f * (b - m_f) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if math::abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if math::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m_f) * (qab + m_f) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if math::abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if math::abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if math::abs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = math::ln_gamma(a + b) - math::ln_gamma(a) - math::ln_gamma(b)
        + a * math::ln(x)
        + b * math::ln(1.0 - x);
    let front = math::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-tailed survival probability of |T| >= |t| for Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: usize) -> f64 {
    let v = df as f64;
    reg_inc_beta(v / 2.0, 0.5, v / (v + t * t))
}

/// Standard paired t-test.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(CoreError::Shape("paired samples must have equal length".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(CoreError::Data("paired t-test needs at least two pairs".into()));
    }
    let diffs: alloc::vec::Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if !(var > 0.0) {
        return Err(CoreError::Data(
            "paired t-test is undefined for zero difference variance".into(),
        ));
    }
    let t = mean / math::sqrt(var / n as f64);
    let df = n - 1;
    Ok(TTest {
        t,
        df,
        p: student_t_two_tailed(t, df),
    })
}
