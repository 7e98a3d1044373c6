//! Eight-lane numeric kernels: a branch-free `exp` and a fixed-order lane sum.

use wide::{f64x8, u64x8};

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// `1.5 · 2⁵²`: adding it rounds to the nearest integer, kept in the mantissa.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
const MIN_ARG: f64 = -708.0;
const MAX_ARG: f64 = 709.0;

/// `eˣ` to within a few ulp on `[−708, 709]`; returns 0 below that range.
/// Scalar reference for [`exp_x8`].
#[cfg(test)]
fn exp(x: f64) -> f64 {
    let xc = x.clamp(MIN_ARG, MAX_ARG);
    let t = xc * LOG2_E + ROUND_MAGIC;
    let n = t - ROUND_MAGIC;
    let r = (xc - n * LN2_HI) - n * LN2_LO;
    // Taylor polynomial of degree 13 on |r| ≤ ln2/2.
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let k = t.to_bits().wrapping_sub(ROUND_MAGIC.to_bits());
    let scale = f64::from_bits(k.wrapping_add(1023) << 52);
    if x < MIN_ARG {
        0.0
    } else {
        p * scale
    }
}

/// Eight-lane `eˣ`, bit-identical lane by lane to the scalar reference used
/// in the tests; returns 0 below −708.
#[inline(always)]
pub(crate) fn exp_x8(x: f64x8) -> f64x8 {
    let xc = x.max(f64x8::splat(MIN_ARG)).min(f64x8::splat(MAX_ARG));
    let magic = f64x8::splat(ROUND_MAGIC);
    let t = xc * f64x8::splat(LOG2_E) + magic;
    let n = t - magic;
    let r = (xc - n * f64x8::splat(LN2_HI)) - n * f64x8::splat(LN2_LO);
    let mut p = f64x8::splat(1.0 / 6_227_020_800.0);
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + f64x8::splat(c);
    }
    let k = t.to_bits() - u64x8::splat(ROUND_MAGIC.to_bits());
    let scale = f64x8::from_bits((k + u64x8::splat(1023)) << 52u32);
    x.simd_lt(f64x8::splat(MIN_ARG)).select(f64x8::ZERO, p * scale)
}

/// Fixed-order sum of the eight lanes.
#[inline(always)]
pub(crate) fn tree_sum(a: f64x8) -> f64 {
    let a = a.to_array();
    ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]))
}

/// Eight lanes starting at `a[at]`.
#[inline(always)]
pub(crate) fn load(a: &[f64], at: usize) -> f64x8 {
    f64x8::new(a[at..at + 8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SimRng;

    #[test]
    fn exp_matches_std_within_few_ulp() {
        let mut rng = SimRng::new(3);
        let mut worst: f64 = 0.0;
        for i in 0..200_000 {
            let x = if i % 2 == 0 {
                -708.0 * rng.uniform()
            } else {
                40.0 * (rng.uniform() - 0.5)
            };
            let (got, want) = (exp(x), x.exp());
            worst = worst.max(((got - want) / want).abs());
        }
        assert!(worst < 4.0 * f64::EPSILON, "worst relative error {worst:e}");
        for x in [0.0, 1.0, -1.0, 709.0, -708.0, 0.5 * std::f64::consts::LN_2] {
            assert!(((exp(x) - x.exp()) / x.exp()).abs() < 4.0 * f64::EPSILON, "{x}");
        }
        assert_eq!(exp(0.0), 1.0);
        assert_eq!(exp(-750.0), 0.0);
        assert_eq!(exp(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn vector_exp_matches_scalar_bitwise() {
        let mut rng = SimRng::new(5);
        for _ in 0..10_000 {
            let x: [f64; 8] = std::array::from_fn(|_| 800.0 * (rng.uniform() - 0.9));
            let v = exp_x8(f64x8::new(x)).to_array();
            for (a, b) in v.iter().zip(x) {
                assert_eq!(a.to_bits(), exp(b).to_bits(), "{b}");
            }
        }
    }
}
