//! Special functions behind every p-value in the crate.
//!
//! Survival probabilities are carried as [`LogProb`], which keeps the natural
//! log alongside the linear value. Summed chi-squared statistics over hundreds
//! of attribute pairs routinely produce p-values near 1e-250 and below, where
//! only the log representation remains meaningful.
//!
//! The incomplete gamma kernel follows the classic split: the power series for
//! `x < a + 1` and a modified-Lentz continued fraction otherwise, with the
//! common prefactor `x^a e^-x / Γ(a)` kept in log space throughout.

use std::f64::consts::{LN_10, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecialError {
    #[error("argument outside the function domain: {0}")]
    Domain(String),
    #[error("{0} failed to converge")]
    NoConvergence(&'static str),
}

pub type Result<T> = std::result::Result<T, SpecialError>;

/// A probability carried both linearly and as a natural log.
///
/// `linear` underflows to zero below ~1e-308 while `ln` stays finite, so
/// reports can still print magnitudes like `7e-248` or `1e-400`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "LogProbRepr", from = "LogProbRepr")]
pub struct LogProb {
    linear: f64,
    ln: f64,
}

impl LogProb {
    pub const ONE: LogProb = LogProb {
        linear: 1.0,
        ln: 0.0,
    };

    pub const ZERO: LogProb = LogProb {
        linear: 0.0,
        ln: f64::NEG_INFINITY,
    };

    /// Builds from a natural-log value, clamping positive logs to zero.
    pub fn from_ln(ln: f64) -> Self {
        let ln = ln.min(0.0);
        LogProb {
            linear: ln.exp(),
            ln,
        }
    }

    /// Builds from a linear probability in `[0, 1]`.
    pub fn from_linear(p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        LogProb {
            linear: p,
            ln: p.ln(),
        }
    }

    /// Builds from an already consistent pair; used where the linear value is
    /// computed more accurately than `exp(ln)` would give it.
    fn from_parts(linear: f64, ln: f64) -> Self {
        LogProb {
            linear: linear.clamp(0.0, 1.0),
            ln: ln.min(0.0),
        }
    }

    pub fn linear(&self) -> f64 {
        self.linear
    }

    pub fn ln(&self) -> f64 {
        self.ln
    }

    pub fn log10(&self) -> f64 {
        self.ln / LN_10
    }
}

/// Wire form: the linear value plus both logs, so reports stay readable when
/// the linear value has underflowed.
#[derive(Serialize, Deserialize)]
struct LogProbRepr {
    p_value: f64,
    ln_p: f64,
    log10_p: f64,
}

impl From<LogProb> for LogProbRepr {
    fn from(p: LogProb) -> Self {
        LogProbRepr {
            p_value: p.linear,
            ln_p: p.ln,
            log10_p: p.log10(),
        }
    }
}

impl From<LogProbRepr> for LogProb {
    fn from(r: LogProbRepr) -> Self {
        LogProb {
            linear: r.p_value,
            ln: r.ln_p,
        }
    }
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const TAYLOR_TERMS: usize = 64;

/// Riemann zeta at integer arguments via Euler-Maclaurin with a cutoff of 30.
fn zeta_int(s: u32) -> f64 {
    const N: u32 = 30;
    let sf = f64::from(s);
    let nf = f64::from(N);
    let mut sum = 0.0;
    for n in (1..N).rev() {
        sum += f64::from(n).powf(-sf);
    }
    let tail = nf.powf(1.0 - sf) / (sf - 1.0) + 0.5 * nf.powf(-sf);
    // Bernoulli corrections B2..B8
    let rising = |k: u32| (0..k).map(|i| sf + f64::from(i)).product::<f64>();
    let corr = rising(1) / 12.0 * nf.powf(-sf - 1.0) - rising(3) / 720.0 * nf.powf(-sf - 3.0)
        + rising(5) / 30240.0 * nf.powf(-sf - 5.0)
        - rising(7) / 1_209_600.0 * nf.powf(-sf - 7.0);
    sum + tail + corr
}

/// Coefficients of ln Γ(1+z) = -γz + Σ_{k≥2} (-1)^k ζ(k) z^k / k.
fn taylor_coefficients() -> &'static [f64; TAYLOR_TERMS] {
    static COEFFS: OnceLock<[f64; TAYLOR_TERMS]> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let mut c = [0.0; TAYLOR_TERMS];
        c[1] = -EULER_GAMMA;
        for (k, slot) in c.iter_mut().enumerate().skip(2) {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            *slot = sign * zeta_int(k as u32) / k as f64;
        }
        c
    })
}

/// ln Γ(1+z) for |z| ≤ 0.5.
fn ln_gamma_1p(z: f64) -> f64 {
    let c = taylor_coefficients();
    let mut acc = 0.0;
    for &ck in c.iter().skip(1).rev() {
        acc = acc * z + ck;
    }
    acc * z
}

/// Stirling series, valid to full precision for z ≥ 10.
fn ln_gamma_stirling(z: f64) -> f64 {
    const SERIES: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut corr = 0.0;
    for &c in SERIES.iter().rev() {
        corr = corr * inv2 + c;
    }
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + corr * inv
}

/// Natural log of the gamma function for positive arguments.
///
/// Below 10 the argument is reduced into [0.5, 2.5), where a Taylor
/// expansion in ζ values keeps the result relatively accurate near the roots
/// at 1 and 2. From 10 up the Stirling series is used.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(SpecialError::Domain(format!("log_gamma({x})")));
    }
    Ok(log_gamma_unchecked(x))
}

fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x) = Γ(x+1)/x
        return ln_gamma_1p(x) - x.ln();
    }
    if x < 1.5 {
        return ln_gamma_1p(x - 1.0);
    }
    if x < 2.5 {
        let z = x - 2.0;
        return z.ln_1p() + ln_gamma_1p(z);
    }
    if x >= 10.0 {
        return ln_gamma_stirling(x);
    }
    // Walk down into [1.5, 2.5): Γ(x) = (x-1)(x-2)...(x-k) Γ(x-k).
    let mut shifted = x;
    let mut prod = 1.0;
    while shifted >= 2.5 {
        shifted -= 1.0;
        prod *= shifted;
    }
    let z = shifted - 2.0;
    prod.ln() + z.ln_1p() + ln_gamma_1p(z)
}

fn max_iterations(a: f64) -> usize {
    10_000 + (50.0 * a.sqrt()) as usize
}

/// ln of x^a e^-x / Γ(a).
fn ln_prefactor(a: f64, x: f64) -> f64 {
    a * x.ln() - x - log_gamma_unchecked(a)
}

/// Lower regularized gamma P(a, x) by its power series, as (P, ln P).
fn gamma_p_series(a: f64, x: f64) -> Result<(f64, f64)> {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..max_iterations(a) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            let ln_p = ln_prefactor(a, x) + sum.ln();
            return Ok((ln_p.exp(), ln_p));
        }
    }
    Err(SpecialError::NoConvergence("incomplete gamma series"))
}

/// ln Q(a, x) by the modified Lentz continued fraction.
fn gamma_q_continued_fraction(a: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..max_iterations(a) {
        let fi = i as f64;
        let an = -fi * (fi - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            return Ok(ln_prefactor(a, x) + h.ln());
        }
    }
    Err(SpecialError::NoConvergence("incomplete gamma continued fraction"))
}

/// Upper regularized incomplete gamma Q(a, x) = Γ(a, x) / Γ(a).
pub fn regularized_gamma_q(a: f64, x: f64) -> Result<LogProb> {
    if !a.is_finite() || !x.is_finite() || a <= 0.0 || x < 0.0 {
        return Err(SpecialError::Domain(format!(
            "regularized_gamma_q(a = {a}, x = {x})"
        )));
    }
    if x == 0.0 {
        return Ok(LogProb::ONE);
    }
    if x < a + 1.0 {
        let (p, _) = gamma_p_series(a, x)?;
        Ok(LogProb::from_parts(1.0 - p, (-p).ln_1p()))
    } else {
        Ok(LogProb::from_ln(gamma_q_continued_fraction(a, x)?))
    }
}

/// Lower regularized incomplete gamma P(a, x), linear scale.
pub fn regularized_gamma_p(a: f64, x: f64) -> Result<f64> {
    if !a.is_finite() || !x.is_finite() || a <= 0.0 || x < 0.0 {
        return Err(SpecialError::Domain(format!(
            "regularized_gamma_p(a = {a}, x = {x})"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x < a + 1.0 {
        Ok(gamma_p_series(a, x)?.0)
    } else {
        Ok(-gamma_q_continued_fraction(a, x)?.exp_m1())
    }
}

/// P(X ≥ x) for X ~ χ²(df).
pub fn chi2_survival(x: f64, df: u64) -> Result<LogProb> {
    if df == 0 {
        return Err(SpecialError::Domain(
            "chi-squared survival with zero degrees of freedom".into(),
        ));
    }
    if !(x >= 0.0) {
        return Err(SpecialError::Domain(format!("chi2_survival(x = {x})")));
    }
    regularized_gamma_q(df as f64 / 2.0, x / 2.0)
}

/// Asymptotic one-sample Kolmogorov-Smirnov p-value, Q_KS(√n · d).
pub fn kolmogorov_ks_pvalue(d: f64, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&d) || n == 0 {
        return Err(SpecialError::Domain(format!(
            "kolmogorov_ks_pvalue(d = {d}, n = {n})"
        )));
    }
    Ok(kolmogorov_survival((n as f64).sqrt() * d))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    const TERM_EPS: f64 = 1e-12;
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form of the CDF; the alternating tail series converges
        // too slowly down here.
        let y = -PI * PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=64u32 {
            let odd = f64::from(2 * k - 1);
            let term = (odd * odd * y).exp();
            cdf += term;
            if term < TERM_EPS {
                break;
            }
        }
        let cdf = (2.0 * PI).sqrt() / lambda * cdf;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100u32 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < TERM_EPS {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
