//! Scalar numeric primitives: digamma, standard normal cdf/quantile,
//! log-sum-exp, and sample statistics.

use crate::error::{Error, Result};

/// Digamma function Ψ(x) for x > 0.
///
/// Uses the recurrence Ψ(x) = Ψ(x+1) − 1/x to push the argument above 10,
/// then the asymptotic series in inverse even powers. Absolute error is
/// well below 1e-10 over the positive axis.
pub fn digamma(x: f64) -> Result<f64> {
    if x.is_nan() || x <= 0.0 {
        return Err(Error::numeric(format!("digamma requires x > 0, got {x}")));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // ln x − 1/(2x) − Σ B_{2n}/(2n x^{2n}), Bernoulli numbers through B_14.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(acc + x.ln() - 0.5 * inv - series)
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, c| acc * x + c)
}

/// Standard normal cumulative distribution function.
///
/// Hart-style rational approximation (double precision over the full range).
pub fn normal_cdf(x: f64) -> f64 {
    let xa = x.abs();
    if xa > 37.0 {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let e = (-xa * xa / 2.0).exp();
    let p = if xa < 7.071_067_811_865_475 {
        const NUM: [f64; 7] = [
            0.035_262_496_599_891_1,
            0.700_383_064_443_688,
            6.373_962_203_531_65,
            33.912_866_078_383,
            112.079_291_497_871,
            221.213_596_169_931,
            220.206_867_912_376,
        ];
        const DEN: [f64; 8] = [
            0.088_388_347_648_318_4,
            1.755_667_163_182_64,
            16.064_177_579_207,
            86.780_732_202_946_1,
            296.564_248_779_674,
            637.333_633_378_831,
            793.826_512_519_948,
            440.413_735_824_752,
        ];
        e * horner(&NUM, xa) / horner(&DEN, xa)
    } else {
        let b = xa + 1.0 / (xa + 2.0 / (xa + 3.0 / (xa + 4.0 / (xa + 0.65))));
        e / (b * 2.506_628_274_631_000_5)
    };
    if x > 0.0 {
        1.0 - p
    } else {
        p
    }
}

/// Standard normal quantile Φ⁻¹(p) for p in (0, 1).
///
/// Acklam's rational approximation refined with one Halley step against
/// [`normal_cdf`]; accurate to well under 1e-8.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::numeric(format!(
            "normal quantile requires p in (0,1), got {p}"
        )));
    }

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
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement.
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

/// log Σ exp(v_i), stable against overflow. Returns −∞ for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sample mean of a slice; 0.0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (divisor n−1); 0.0 when fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Sample covariance (divisor n−1); 0.0 when fewer than two pairs.
pub fn sample_cov(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let ss: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    ss / (xs.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn digamma_matches_high_precision_references() {
        // Reference values computed with 30-digit arithmetic.
        let cases = [
            (1.0, -0.577_215_664_901_532_9),
            (0.5, -1.963_510_026_021_423_5),
            (3.25, 1.016_990_911_068_179),
            (10.7, 2.322_787_537_024_018_7),
            (0.1, -10.423_754_940_411_077),
            (25.0, 3.198_742_512_851_974),
            (100.5, 4.605_174_352_581_845),
        ];
        for (x, want) in cases {
            assert_abs_diff_eq!(digamma(x).unwrap(), want, epsilon = 1e-10);
        }
    }

    #[test]
    fn digamma_recurrence_identity() {
        for x in [0.5, 1.0, 3.25] {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert_abs_diff_eq!(lhs, 1.0 / x, epsilon = 1e-10);
        }
    }

    #[test]
    fn digamma_rejects_nonpositive() {
        assert!(digamma(-1.0).is_err());
        assert!(digamma(0.0).is_err());
    }

    #[test]
    fn normal_cdf_matches_references() {
        let cases = [
            (-8.0, 6.220_960_574_271_784e-16),
            (-3.0, 1.349_898_031_630_094_6e-3),
            (-1.959_963_984_540_054, 0.025),
            (-1.0, 0.158_655_253_931_457_05),
            (-0.5, 0.308_537_538_725_986_96),
            (0.0, 0.5),
            (0.3, 0.617_911_422_188_952_7),
            (1.644_853_626_951_472_2, 0.95),
            (5.0, 0.999_999_713_348_428_1),
        ];
        for (x, want) in cases {
            assert_abs_diff_eq!(normal_cdf(x), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_quantile_matches_references() {
        let cases = [
            (1e-9, -5.997_807_015_007_687),
            (0.0005, -3.290_526_731_491_895),
            (0.025, -1.959_963_984_540_054_2),
            (0.05, -1.644_853_626_951_472_7),
            (0.25, -0.674_489_750_196_081_7),
            (0.5, 0.0),
            (0.75, 0.674_489_750_196_081_7),
            (0.95, 1.644_853_626_951_472_7),
            (0.975, 1.959_963_984_540_054_2),
            (0.999, 3.090_232_306_167_813_5),
        ];
        for (p, want) in cases {
            assert_abs_diff_eq!(normal_quantile(p).unwrap(), want, epsilon = 1e-9);
        }
    }

    #[test]
    fn normal_quantile_round_trips_through_cdf() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            assert_abs_diff_eq!(normal_cdf(normal_quantile(p).unwrap()), p, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_quantile_rejects_out_of_range() {
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn log_sum_exp_is_shift_invariant() {
        let v = [-700.0, -701.0, -699.5];
        let shifted: Vec<f64> = v.iter().map(|x| x + 650.0).collect();
        assert_abs_diff_eq!(log_sum_exp(&v) + 650.0, log_sum_exp(&shifted), epsilon = 1e-12);
    }

    #[test]
    fn sample_std_two_points() {
        assert_abs_diff_eq!(sample_std(&[-2.0, -4.0]), std::f64::consts::SQRT_2, epsilon = 1e-15);
    }
}
