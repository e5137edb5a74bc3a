//! Standard normal CDF and quantile.
//!
//! `erfc` uses the piecewise rational minimax fits from Boost.Math (the same
//! tables statrs ships), which hold roughly 1e-16 relative error on each
//! interval. That relative accuracy carries into the far tails of [`phi`], so
//! [`probit`] can refine its initial guess by Newton steps without
//! cancellation down to `p ~ 1e-300`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Evaluates `c[0] + c[1] z + c[2] z^2 + ...` by Horner's rule.
fn poly(z: f64, c: &[f64]) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * z + k)
}

const ERF_AN: [f64; 8] = [
    0.003_379_167_095_512_573_9,
    -0.000_736_956_530_481_679_485_3,
    -0.374_732_337_392_919_607_868_241,
    0.081_744_244_873_358_719_607_174_3,
    -0.042_108_931_993_654_859_520_346_8,
    0.007_016_570_951_209_575_634_452_8,
    -0.004_950_912_559_824_351_103_374_58,
    0.000_871_646_599_037_922_480_317_225,
];
const ERF_AD: [f64; 8] = [
    1.0,
    -0.218_088_218_087_924_645_390_535,
    0.412_542_972_725_442_099_083_918,
    -0.084_189_114_787_310_675_541_027_1,
    0.065_533_885_640_024_151_969_069_5,
    -0.012_001_960_445_494_176_817_126_6,
    0.004_081_655_589_261_740_483_296_89,
    -0.000_615_900_721_557_769_691_924_509,
];

/// One rational piece `b + P(z - lo) / Q(z - lo)` of `erfc(z) * z * exp(z^2)`.
/// The biases were fitted as single-precision constants and must be rounded
/// through `f32` or each piece drifts by ~1e-10.
struct Piece {
    lo: f64,
    hi: f64,
    bias: f64,
    num: &'static [f64],
    den: &'static [f64],
}

const PIECES: [Piece; 7] = [
    Piece {
        lo: 0.5,
        hi: 0.75,
        bias: 0.344_024_211_2_f32 as f64,
        num: &[
            -0.036_179_039_071_826_247_136_025_8,
            0.292_251_883_444_882_683_221_149,
            0.281_447_041_797_604_512_774_415,
            0.125_610_208_862_766_947_294_894,
            0.027_413_502_826_893_054_924_077_6,
            0.002_508_396_721_680_657_627_869_37,
        ],
        den: &[
            1.0,
            1.854_500_589_790_348_649_984_5,
            1.435_758_030_378_314_180_749_62,
            0.582_827_658_753_036_572_454_135,
            0.124_810_476_932_949_746_447_682,
            0.011_372_417_654_635_328_577_848_1,
        ],
    },
    Piece {
        lo: 0.75,
        hi: 1.25,
        bias: 0.419_990_927_f32 as f64,
        num: &[
            -0.039_787_689_261_113_685_695_442_5,
            0.153_165_212_467_878_293_257_683,
            0.191_260_295_600_936_245_503_129,
            0.102_763_270_619_893_042_136_45,
            0.029_637_090_615_738_836_726_027,
            0.004_609_348_678_027_548_946_881_2,
            0.000_307_607_820_348_680_180_548_455,
        ],
        den: &[
            1.0,
            1.955_200_729_876_277_049_878_86,
            1.647_623_171_993_848_601_095_95,
            0.768_238_607_022_126_250_082_483,
            0.209_793_185_936_509_782_784_315,
            0.031_956_931_689_991_339_259_635_6,
            0.002_133_631_608_957_853_786_150_14,
        ],
    },
    Piece {
        lo: 1.25,
        hi: 2.25,
        bias: 0.489_862_501_6_f32 as f64,
        num: &[
            -0.030_083_856_055_794_971_732_834_1,
            0.053_857_882_984_445_450_853_055_2,
            0.072_621_154_165_191_418_269_295_9,
            0.036_762_846_988_804_934_842_901_8,
            0.009_646_290_155_725_275_296_052_67,
            0.001_334_534_800_752_910_767_452_75,
            0.778_087_599_782_504_251_917_881e-4,
        ],
        den: &[
            1.0,
            1.759_670_981_471_675_282_873_43,
            1.328_835_714_379_611_205_563_07,
            0.552_528_596_508_757_581_287_907,
            0.133_793_056_941_332_861_912_279,
            0.017_950_964_517_628_076_864_076_6,
            0.001_047_124_400_199_373_566_340_38,
            -0.106_640_381_820_357_337_177_643e-7,
        ],
    },
    Piece {
        lo: 2.25,
        hi: 3.5,
        bias: 0.531_737_089_2_f32 as f64,
        num: &[
            -0.011_790_757_013_722_784_782_773_2,
            0.014_262_132_090_538_809_896_674,
            0.020_223_443_590_296_082_002_076_5,
            0.009_306_682_999_904_320_090_422_39,
            0.002_133_578_024_220_659_943_225_16,
            0.000_250_229_873_864_601_023_953_82,
            0.120_534_912_219_588_189_822_126e-4,
        ],
        den: &[
            1.0,
            1.503_762_252_036_204_820_474_19,
            0.965_397_786_204_462_896_346_934,
            0.339_265_230_476_796_681_555_511,
            0.068_974_064_954_156_971_689_742_7,
            0.007_710_602_624_917_683_073_655_26,
            0.000_371_421_101_531_069_302_990_367,
        ],
    },
    Piece {
        lo: 3.5,
        hi: 5.25,
        bias: 0.548_997_342_6_f32 as f64,
        num: &[
            -0.005_469_547_955_387_293_074_829_55,
            0.004_041_902_787_317_071_102_453_94,
            0.005_496_336_955_316_117_052_135_6,
            0.002_126_164_726_039_453_994_378_62,
            0.000_394_984_014_495_083_900_689_956,
            0.365_565_477_064_442_377_259_271e-4,
            0.135_485_897_109_932_323_253_786e-5,
        ],
        den: &[
            1.0,
            1.210_196_977_736_307_848_322_51,
            0.620_914_668_221_143_886_601_045,
            0.173_038_430_661_142_762_569_515,
            0.027_655_081_377_343_204_759_453_9,
            0.002_406_259_744_243_097_097_453_82,
            0.891_811_817_251_336_577_241_006e-4,
            -0.465_528_836_283_382_684_461_025e-11,
        ],
    },
    Piece {
        lo: 5.25,
        hi: 8.0,
        bias: 0.557_174_086_6_f32 as f64,
        num: &[
            -0.002_707_225_359_057_783_479_991_96,
            0.001_318_756_342_502_940_046_137_8,
            0.001_199_259_332_610_023_339_239_89,
            0.000_278_496_198_113_446_642_482_35,
            0.267_822_988_218_331_849_989_363e-4,
            0.923_043_672_315_028_197_865_066e-6,
        ],
        den: &[
            1.0,
            0.814_632_808_543_141_591_118_279,
            0.268_901_665_856_299_542_168_425,
            0.044_987_721_610_304_111_869_498_9,
            0.003_817_596_633_202_484_591_689_94,
            0.000_131_571_897_888_596_914_350_697,
            0.404_815_359_675_764_138_445_257e-11,
        ],
    },
    Piece {
        lo: 8.0,
        hi: 11.5,
        bias: 0.560_980_796_8_f32 as f64,
        num: &[
            -0.001_099_467_206_917_421_968_143_23,
            0.000_406_425_442_750_422_675_169_153,
            0.000_274_499_489_416_900_707_787_024,
            0.465_293_770_646_659_383_436_343e-4,
            0.320_955_425_395_767_463_401_993e-5,
            0.778_286_018_145_020_892_261_936e-7,
        ],
        den: &[
            1.0,
            0.588_173_710_611_846_046_373_373,
            0.139_363_331_289_409_746_077_541,
            0.016_632_934_041_708_367_876_302_8,
            0.001_000_239_213_102_349_086_426_39,
            0.242_548_375_215_872_251_250_68e-4,
        ],
    },
];

/// Complementary error function for `x >= 0.5`, via the rational pieces
/// and the asymptotic series past the last piece.
fn erfc_tail(x: f64) -> f64 {
    debug_assert!(x >= 0.5);
    if x >= 27.3 {
        return 0.0;
    }
    let g = (-x * x).exp() / x;
    if let Some(p) = PIECES.iter().find(|p| x < p.hi) {
        let r = poly(x - p.lo, p.num) / poly(x - p.lo, p.den);
        return g * p.bias + g * r;
    }
    // x >= 11.5: truncation error of this series is below 1e-10 relative.
    let inv2 = 1.0 / (2.0 * x * x);
    let series = 1.0 - inv2 + 3.0 * inv2 * inv2 - 15.0 * inv2.powi(3) + 105.0 * inv2.powi(4)
        - 945.0 * inv2.powi(5);
    g * series / PI.sqrt()
}

/// `erf(x)` for `|x| < 0.5`.
fn erf_small(x: f64) -> f64 {
    let z = x.abs();
    let v = if z < 1e-10 {
        z * 1.125 + z * ERF_AN[0]
    } else {
        z * 1.125 + z * poly(z, &ERF_AN) / poly(z, &ERF_AD)
    };
    v.copysign(x)
}

/// Complementary error function with high relative accuracy on `x > 0`.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < -0.5 {
        2.0 - erfc_tail(-x)
    } else if x < 0.5 {
        1.0 - erf_small(x)
    } else {
        erfc_tail(x)
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

fn phi_unchecked(t: f64) -> f64 {
    0.5 * erfc(-t * FRAC_1_SQRT_2)
}

/// Standard normal CDF `P(Z <= t)`.
pub fn phi(t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("phi requires a finite argument, got {t}")));
    }
    Ok(phi_unchecked(t))
}

// Acklam's rational approximation for the lower half; relative error ~1.15e-9.
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

fn acklam_lower(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
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

/// Quantile for `0 < p <= 0.5`; the result is `<= 0`.
fn probit_lower(p: f64) -> f64 {
    let mut x = acklam_lower(p);
    // Halley steps; the second is usually a no-op at double precision.
    for _ in 0..2 {
        let e = phi_unchecked(x) - p;
        let u = e / normal_pdf(x);
        if !u.is_finite() {
            break;
        }
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Inverse of [`phi`] on the open interval `(0, 1)`.
///
/// Callers holding empirical accuracies should pass them through
/// [`clamp_accuracy`] first.
pub fn probit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probit requires 0 < p < 1, got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // 1 - p is exact for p in [0.5, 1), so the upper half reuses the lower
    // branch without losing tail precision.
    if p < 0.5 {
        Ok(probit_lower(p))
    } else {
        Ok(-probit_lower(1.0 - p))
    }
}

/// Clamps an empirical accuracy measured on `m` samples into
/// `[1/(2m), 1 - 1/(2m)]`.
pub fn clamp_accuracy(p: f64, m: u64) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("clamp_accuracy requires at least one evaluation sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("accuracy {p} outside [0, 1]")));
    }
    let lo = 1.0 / (2.0 * m as f64);
    Ok(p.clamp(lo, 1.0 - lo))
}
