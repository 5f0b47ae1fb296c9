//! Standard-normal special functions and Owen's T function.
//!
//! The checked entry points (`std_normal_*`, [`owens_t`]) validate their
//! arguments. The unchecked kernels ([`pdf`], [`cdf`], [`sf`], [`quantile`],
//! [`owen_t`]) skip validation and are what the samplers call per draw.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const INV_2PI: f64 = 0.159_154_943_091_895_35;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::Domain(format!("probability {value} outside [0, 1]")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Probability::new(v)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal cdf, `Phi(x)`.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("normal pdf needs a finite argument, got {x}")));
    }
    Ok(pdf(x))
}

/// `Phi(x)`; infinite arguments map to 0 and 1.
pub fn std_normal_cdf(x: f64) -> Result<Probability> {
    if x.is_nan() {
        return Err(Error::Domain("normal cdf of NaN".into()));
    }
    Ok(Probability(cdf(x)))
}

// Acklam's rational approximation, relative error below 1.2e-9.
const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const P_LOW: f64 = 0.02425;

fn acklam(p: f64) -> f64 {
    let (a, b, c, d) = (&ACKLAM_A, &ACKLAM_B, &ACKLAM_C, &ACKLAM_D);
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (-p).ln_1p()).sqrt();
        -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    }
}

/// `Phi^{-1}(p)` for `p` strictly inside `(0, 1)`; no validation.
///
/// Two Newton steps on the cdf (on the upper tail for `p > 0.5`) polish the
/// rational starting point to full double precision.
pub fn quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let mut z = acklam(p);
    for _ in 0..2 {
        let dens = pdf(z);
        if dens <= 0.0 || !z.is_finite() {
            break;
        }
        let step = if p <= 0.5 {
            (cdf(z) - p) / dens
        } else {
            ((1.0 - p) - sf(z)) / dens
        };
        z -= step;
    }
    z
}

pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("quantile of {p}, outside [0, 1]")));
    }
    if p == 0.0 || p == 1.0 {
        return Err(Error::Boundary(p));
    }
    Ok(quantile(p))
}

/// Owen's T function with argument checks.
pub fn owens_t(h: f64, a: f64) -> Result<f64> {
    if !h.is_finite() || !a.is_finite() {
        return Err(Error::Domain(format!("owens_t({h}, {a}) needs finite arguments")));
    }
    Ok(owen_t(h, a))
}

/// Owen's T function
///
/// `T(h, a) = 1/(2 pi) * int_0^a exp(-h^2 (1 + x^2) / 2) / (1 + x^2) dx`.
///
/// Patefield & Tandy (2000): the (h, a) plane is split into regions, each
/// evaluated by one of six series or quadrature rules of a tabulated order.
/// For `|a| > 1` the reflection identity maps the problem onto `1/|a|`.
pub fn owen_t(h: f64, a: f64) -> f64 {
    let abs_h = h.abs();
    let abs_a = a.abs();
    let ah = abs_a * abs_h;

    let t = if abs_a <= 1.0 {
        owen_t_region(abs_h, abs_a, ah)
    } else if abs_h <= 0.67 {
        let norm_h = 0.5 * libm::erf(abs_h * FRAC_1_SQRT_2);
        let norm_ah = 0.5 * libm::erf(ah * FRAC_1_SQRT_2);
        0.25 - norm_h * norm_ah - owen_t_region(ah, 1.0 / abs_a, abs_h)
    } else {
        let norm_h = sf(abs_h);
        let norm_ah = sf(ah);
        0.5 * (norm_h + norm_ah) - norm_h * norm_ah - owen_t_region(ah, 1.0 / abs_a, abs_h)
    };

    if a < 0.0 {
        -t
    } else {
        t
    }
}

const H_RANGE: [f64; 14] = [
    0.02, 0.06, 0.09, 0.125, 0.26, 0.4, 0.6, 1.6, 1.7, 2.33, 2.4, 3.36, 3.4, 4.8,
];
const A_RANGE: [f64; 7] = [0.025, 0.09, 0.15, 0.36, 0.5, 0.9, 0.99999];
const SELECT: [[u8; 15]; 8] = [
    [1, 1, 2, 13, 13, 13, 13, 13, 13, 13, 13, 16, 16, 16, 9],
    [1, 2, 2, 3, 3, 5, 5, 14, 14, 15, 15, 16, 16, 16, 9],
    [2, 2, 3, 3, 3, 5, 5, 15, 15, 15, 15, 16, 16, 16, 10],
    [2, 2, 3, 5, 5, 5, 5, 7, 7, 16, 16, 16, 16, 16, 10],
    [2, 3, 3, 5, 5, 6, 6, 8, 8, 17, 17, 17, 12, 12, 11],
    [2, 3, 5, 5, 5, 6, 6, 8, 8, 17, 17, 17, 12, 12, 12],
    [2, 3, 4, 4, 6, 6, 8, 8, 17, 17, 17, 17, 17, 12, 12],
    [2, 3, 4, 4, 6, 6, 18, 18, 18, 18, 17, 17, 17, 12, 12],
];
const ORDER: [usize; 18] = [2, 3, 4, 5, 7, 10, 12, 18, 10, 20, 30, 20, 4, 7, 8, 20, 13, 0];
const METHOD: [u8; 18] = [1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 4, 4, 4, 4, 5, 6];

const T3_COEF: [f64; 21] = [
    0.999_999_999_999_999_9,
    -0.999_999_999_999_888,
    0.999_999_999_982_907_5,
    -0.999_999_998_962_825,
    0.999_999_966_604_593_7,
    -0.999_999_339_862_724_7,
    0.999_991_256_111_369_6,
    -0.999_917_776_244_633_8,
    0.999_428_355_558_701_4,
    -0.996_973_117_207_23,
    0.987_514_480_372_753,
    -0.959_158_579_805_728_8,
    0.892_463_055_110_067_1,
    -0.768_934_259_904_64,
    0.588_935_284_684_846_9,
    -0.383_803_451_604_402_55,
    0.203_176_017_010_453,
    -8.281_363_160_700_499e-2,
    2.416_798_473_575_957_8e-2,
    -4.467_656_666_397_183e-3,
    3.914_116_940_237_383_6e-4,
];

// Squared abscissae and weights of the 13-point Gauss rule on (0, 1).
const T5_PTS: [f64; 13] = [
    3.508_203_967_645_171_6e-3,
    3.127_904_233_803_075_6e-2,
    8.526_682_628_321_945e-2,
    0.162_450_717_308_122_77,
    0.258_511_960_491_254_36,
    0.368_075_538_406_975_3,
    0.485_010_929_056_047,
    0.602_775_141_526_185_7,
    0.714_778_842_177_532_3,
    0.814_755_109_887_601,
    0.897_110_297_559_489_7,
    0.957_238_080_859_442_6,
    0.991_788_329_746_297,
];
const T5_WTS: [f64; 13] = [
    1.883_143_811_532_350_3e-2,
    1.856_708_624_397_765e-2,
    1.804_209_346_122_338_5e-2,
    1.726_382_960_639_875_2e-2,
    1.624_321_997_598_985_8e-2,
    1.499_459_203_411_670_5e-2,
    1.353_547_446_966_209e-2,
    1.188_635_160_582_016_5e-2,
    1.007_037_724_277_743_2e-2,
    8.113_054_574_229_958e-3,
    6.041_900_952_847_024e-3,
    3.886_221_701_074_205_7e-3,
    1.679_303_108_454_609e-3,
];

// T(h, a) for h >= 0 and 0 <= a <= 1; `ah` is a*h.
fn owen_t_region(h: f64, a: f64, ah: f64) -> f64 {
    let ih = H_RANGE.iter().position(|&r| h <= r).unwrap_or(14);
    let ia = A_RANGE.iter().position(|&r| a <= r).unwrap_or(7);
    let code = SELECT[ia][ih] as usize - 1;
    let m = ORDER[code];

    match METHOD[code] {
        1 => t1(h, a, m),
        2 => t2(h, a, ah, m),
        3 => t3(h, a, ah, m),
        4 => t4(h, a, m),
        5 => t5(h, a),
        _ => t6(h, a),
    }
}

fn t1(h: f64, a: f64, m: usize) -> f64 {
    let hs = -0.5 * h * h;
    let dhs = hs.exp();
    let a2 = a * a;
    let mut aj = INV_2PI * a;
    let mut dj = hs.exp_m1();
    let mut gj = hs * dhs;
    let mut jj = 1.0;
    let mut val = INV_2PI * a.atan();
    let mut j = 1;
    loop {
        val += dj * aj / jj;
        if j >= m {
            return val;
        }
        j += 1;
        jj += 2.0;
        aj *= a2;
        dj = gj - dj;
        gj *= hs / j as f64;
    }
}

fn t2(h: f64, a: f64, ah: f64, m: usize) -> f64 {
    let max_ii = 2 * m + 1;
    let hs = h * h;
    let neg_a2 = -a * a;
    let y = 1.0 / hs;
    let mut vi = INV_SQRT_2PI * a * (-0.5 * ah * ah).exp();
    let mut z = 0.5 * libm::erf(ah * FRAC_1_SQRT_2) / h;
    let mut val = 0.0;
    let mut ii = 1;
    loop {
        val += z;
        if ii >= max_ii {
            return val * INV_SQRT_2PI * (-0.5 * hs).exp();
        }
        z = y * (vi - ii as f64 * z);
        vi *= neg_a2;
        ii += 2;
    }
}

fn t3(h: f64, a: f64, ah: f64, m: usize) -> f64 {
    let hs = h * h;
    let a2 = a * a;
    let y = 1.0 / hs;
    let mut vi = INV_SQRT_2PI * a * (-0.5 * ah * ah).exp();
    let mut zi = 0.5 * libm::erf(ah * FRAC_1_SQRT_2) / h;
    let mut val = 0.0;
    let mut ii = 1.0;
    let mut i = 0;
    loop {
        val += zi * T3_COEF[i];
        if i >= m {
            return val * INV_SQRT_2PI * (-0.5 * hs).exp();
        }
        zi = y * (ii * zi - vi);
        vi *= a2;
        ii += 2.0;
        i += 1;
    }
}

fn t4(h: f64, a: f64, m: usize) -> f64 {
    let max_ii = 2 * m + 1;
    let hs = h * h;
    let neg_a2 = -a * a;
    let mut ai = INV_2PI * a * (-0.5 * hs * (1.0 - neg_a2)).exp();
    let mut yi = 1.0;
    let mut val = 0.0;
    let mut ii = 1;
    loop {
        val += ai * yi;
        if ii >= max_ii {
            return val;
        }
        ii += 2;
        yi = (1.0 - hs * yi) / ii as f64;
        ai *= neg_a2;
    }
}

fn t5(h: f64, a: f64) -> f64 {
    let a2 = a * a;
    let hs = -0.5 * h * h;
    let sum: f64 = T5_PTS
        .iter()
        .zip(T5_WTS.iter())
        .map(|(&p, &w)| {
            let r = 1.0 + a2 * p;
            w * (hs * r).exp() / r
        })
        .sum();
    a * sum
}

fn t6(h: f64, a: f64) -> f64 {
    let norm_h = sf(h);
    let y = 1.0 - a;
    let r = y.atan2(1.0 + a);
    let mut val = 0.5 * norm_h * (1.0 - norm_h);
    if r != 0.0 {
        val -= r * (-0.5 * y * h * h / r).exp() / (2.0 * PI);
    }
    val
}
