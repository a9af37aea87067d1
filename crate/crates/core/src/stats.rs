//! Means, baseline-relative improvements and two-sample t-tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut sum = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t CDF with `dof` degrees of freedom (non-integer allowed).
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * inc_beta(dof / 2.0, 0.5, dof / (dof + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value for `t` at `dof`.
pub fn two_sided_p(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Serde adapter for floats that may be infinite (JSON has no literal for them).
pub mod extended_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    #[serde(with = "extended_float")]
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    /// Both samples had zero variance with different means.
    pub zero_variance: bool,
}

fn check_sample(name: &str, s: &[f64]) -> Result<()> {
    if s.len() < 2 {
        return Err(Error::invalid(format!(
            "sample {name} needs at least 2 values, got {}",
            s.len()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("sample {name} has non-finite values")));
    }
    Ok(())
}

fn degenerate(ma: f64, mb: f64, dof: f64) -> TTest {
    if ma == mb {
        TTest {
            t: 0.0,
            dof,
            p: 1.0,
            zero_variance: false,
        }
    } else {
        TTest {
            t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
            dof,
            p: 0.0,
            zero_variance: true,
        }
    }
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    check_sample("a", a)?;
    check_sample("b", b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (variance(a) / na, variance(b) / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        return Ok(degenerate(ma, mb, na + nb - 2.0));
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(TTest {
        t,
        dof,
        p: two_sided_p(t, dof),
        zero_variance: false,
    })
}

/// Student's pooled-variance t-test, two-sided.
pub fn pooled_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    check_sample("a", a)?;
    check_sample("b", b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let dof = na + nb - 2.0;
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / dof;
    let se2 = pooled * (1.0 / na + 1.0 / nb);
    if se2 == 0.0 {
        return Ok(degenerate(ma, mb, dof));
    }
    let t = (ma - mb) / se2.sqrt();
    Ok(TTest {
        t,
        dof,
        p: two_sided_p(t, dof),
        zero_variance: false,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    #[default]
    Welch,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_mean: f64,
    pub variant_mean: f64,
    /// `100 · (baseline − variant) / baseline`; negative means regression.
    pub improvement_pct: f64,
    #[serde(with = "extended_float")]
    pub t_stat: f64,
    pub dof: f64,
    pub p_value: f64,
    pub significant: bool,
    pub zero_variance: bool,
}

/// Compare a variant against the baseline.
pub fn compare(baseline: &[f64], variant: &[f64], alpha: f64, kind: TestKind) -> Result<Comparison> {
    let test = match kind {
        TestKind::Welch => welch_t(baseline, variant)?,
        TestKind::Pooled => pooled_t(baseline, variant)?,
    };
    let (bm, vm) = (mean(baseline), mean(variant));
    if bm == 0.0 {
        return Err(Error::UndefinedImprovement);
    }
    Ok(Comparison {
        baseline_mean: bm,
        variant_mean: vm,
        improvement_pct: 100.0 * (bm - vm) / bm,
        t_stat: test.t,
        dof: test.dof,
        p_value: test.p,
        significant: test.p < alpha,
        zero_variance: test.zero_variance,
    })
}
