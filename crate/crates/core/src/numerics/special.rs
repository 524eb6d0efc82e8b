//! Error function, incomplete gamma, normal and chi-square tails.
//!
//! Tails are available in log space as well; significances beyond 8σ are
//! routine for the scans this crate handles and the linear-scale values only
//! survive down to ~37σ before underflowing.

use std::f64::consts::{LN_2, PI};

use crate::error::{Result, TohmError};

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
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

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

/// erf(x) for |x| < 2 through the positive-term series
/// erf(x) = 2x e^{-x²}/√π Σ (2x²)^n / (2n+1)!!.
fn erf_series(x: f64) -> f64 {
    let x2 = 2.0 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= x2 / (2.0 * n + 1.0);
        sum += term;
        if term < EPS * sum {
            break;
        }
    }
    2.0 * FRAC_1_SQRT_PI * x * (-x * x).exp() * sum
}

/// Continued fraction for the scaled complement, e^{x²} erfc(x), x ≥ 2.
fn erfcx_cf(x: f64) -> f64 {
    // f = x + (1/2)/(x + 1/(x + (3/2)/(x + ...))), erfcx = 1/(√π f)
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for j in 1..5000 {
        let a = 0.5 * j as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    FRAC_1_SQRT_PI / f
}

pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.abs() < 2.0 {
        erf_series(x)
    } else {
        x.signum() * (1.0 - erfc(x.abs()))
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x < 2.0 {
        1.0 - erf_series(x)
    } else if x > 27.3 {
        0.0
    } else {
        erfcx_cf(x) * (-x * x).exp()
    }
}

/// Scaled complement e^{x²}·erfc(x); finite for all x ≥ 0.
pub fn erfcx(x: f64) -> f64 {
    if x < 2.0 {
        erfc(x) * (x * x).exp()
    } else {
        erfcx_cf(x)
    }
}

/// ln erfc(x), accurate deep into the upper tail.
pub fn ln_erfc(x: f64) -> f64 {
    if x < 2.0 {
        erfc(x).ln()
    } else {
        -x * x + erfcx_cf(x).ln()
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..10_000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// ln of the Lentz continued fraction part of Q(a, x); valid for x ≥ a + 1.
fn ln_gamma_q_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
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
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    -x + a * x.ln() - ln_gamma(a) + h.ln()
}

/// Regularized upper incomplete gamma Q(a, x) = Γ(a, x)/Γ(a).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        ln_gamma_q_cf(a, x).exp()
    }
}

/// ln Q(a, x).
pub fn ln_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        (1.0 - gamma_p_series(a, x)).ln()
    } else {
        ln_gamma_q_cf(a, x)
    }
}

/// Upper tail P(χ²_s > c).
pub fn chi2_survival(s: u32, c: f64) -> f64 {
    debug_assert!(s >= 1);
    gamma_q(0.5 * s as f64, 0.5 * c.max(0.0))
}

/// ln P(χ²_s > c).
pub fn ln_chi2_survival(s: u32, c: f64) -> f64 {
    ln_gamma_q(0.5 * s as f64, 0.5 * c.max(0.0))
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// 1 − Φ(z), without cancellation.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// ln Φ(z).
pub fn ln_normal_cdf(z: f64) -> f64 {
    ln_erfc(-z / std::f64::consts::SQRT_2) - LN_2
}

/// φ(z)/Φ(z), the reciprocal Mills ratio, for z ≤ 0 without underflow.
fn inverse_mills_lower(z: f64) -> f64 {
    SQRT_2_OVER_PI / erfcx(-z / std::f64::consts::SQRT_2)
}

// Acklam's rational approximation, used only as a starting point.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Lower-half quantile (p ≤ ½) by safeguarded Newton on ln Φ(z) − ln p.
fn lower_quantile(p: f64) -> f64 {
    let target = p.ln();
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    let mut z = acklam(p).clamp(lo, hi);
    for _ in 0..200 {
        let g = ln_normal_cdf(z) - target;
        if g == 0.0 {
            return z;
        }
        if g > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let mut next = z - g / inverse_mills_lower(z);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - z).abs();
        z = next;
        if step <= 4.0 * f64::EPSILON * z.abs().max(1.0) || hi - lo <= 4.0 * f64::EPSILON {
            break;
        }
    }
    z
}

/// Φ⁻¹(p) for p in (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(TohmError::invalid(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    Ok(if p <= 0.5 {
        lower_quantile(p)
    } else {
        -lower_quantile(1.0 - p)
    })
}

/// Upper-tail inverse: the z with 1 − Φ(z) = p. Avoids forming 1 − p.
pub fn normal_isf(p: f64) -> Result<f64> {
    normal_quantile(p).map(|z| -z)
}

/// Survival function of the Kolmogorov distribution, P(K > λ).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-theta form of the CDF converges fast for small λ
        let l2 = lambda * lambda;
        let mut cdf = 0.0;
        for k in 1..=50 {
            let m = (2 * k - 1) as f64;
            let term = (-m * m * PI * PI / (8.0 * l2)).exp();
            cdf += term;
            if term < 1e-18 {
                break;
            }
        }
        cdf *= (2.0 * PI).sqrt() / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-18 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test: returns (D, p-value).
///
/// The p-value uses Stephens' finite-sample scaling of D.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> (f64, f64) {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    let sn = n.sqrt();
    (d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d))
}
