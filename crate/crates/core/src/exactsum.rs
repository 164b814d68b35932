//! Order-invariant exact summation of `f64` values.
//!
//! Permuting a network reorders the terms of every dot product. Plain
//! floating-point accumulation is not associative, so a reindexed network
//! evaluated with naive sums drifts from the original by a few ulps. The
//! reindexing contract promises bit-identical outputs, and this module makes
//! that testable: the accumulator keeps the exact running sum in a wide
//! fixed-point register, so the result depends only on the multiset of terms,
//! never on their order. The final value is the correctly rounded `f64` of
//! the exact sum.
//!
//! The register is a base 2^32 number held in `i64` limbs. A finite `f64`
//! contributes its 53-bit integer mantissa shifted to the right position;
//! carries are deferred until rounding, which caps the accumulator at about
//! 2^30 additions, far beyond any dot product in this crate.

/// Limb count covering exponents from 2^-1088 up past 2^1024 with carry room.
const LIMBS: usize = 67;
/// Bit position of 2^0 inside the register.
const BIAS: i64 = 1088;

#[derive(Clone)]
pub struct ExactAcc {
    limbs: [i64; LIMBS],
    count: u64,
}

impl Default for ExactAcc {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactAcc {
    pub fn new() -> Self {
        ExactAcc { limbs: [0; LIMBS], count: 0 }
    }

    /// Add a finite value exactly. Panics on NaN or infinity, which cannot
    /// appear in a healthy network.
    pub fn add(&mut self, x: f64) {
        assert!(x.is_finite(), "exact accumulator fed a non-finite value");
        if x == 0.0 {
            return;
        }
        self.count += 1;
        debug_assert!(self.count < 1 << 30, "accumulator carry capacity exceeded");
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let exp_field = ((bits >> 52) & 0x7FF) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if exp_field == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp_field - 1075)
        };
        let pos = (exp + BIAS) as usize;
        let (limb, off) = (pos / 32, pos % 32);
        let wide = (mant as u128) << off;
        for k in 0..3 {
            let chunk = ((wide >> (32 * k)) & 0xFFFF_FFFF) as i64;
            if chunk != 0 {
                if negative {
                    self.limbs[limb + k] -= chunk;
                } else {
                    self.limbs[limb + k] += chunk;
                }
            }
        }
    }

    /// Add the rounded product `a * b`, the same term a plain dot product
    /// would accumulate.
    pub fn add_product(&mut self, a: f64, b: f64) {
        self.add(a * b);
    }

    /// Correctly rounded `f64` of the exact sum (round half to even).
    pub fn value(&self) -> f64 {
        let mut limbs = self.limbs;
        // Resolve deferred carries so every limb is a base 2^32 digit.
        for i in 0..LIMBS - 1 {
            let rem = limbs[i].rem_euclid(1 << 32);
            let carry = (limbs[i] - rem) >> 32;
            limbs[i] = rem;
            limbs[i + 1] += carry;
        }
        let negative = limbs[LIMBS - 1] < 0;
        if negative {
            // Negate in base 2^32 to get the magnitude.
            let mut carry = 0i64;
            for l in limbs.iter_mut() {
                let t = -*l + carry;
                let rem = t.rem_euclid(1 << 32);
                carry = (t - rem) >> 32;
                *l = rem;
            }
        }
        let Some(h) = limbs.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        // Pull up to four limbs into a 128-bit window, highest limb first.
        let taken = h.min(3);
        let mut window = 0u128;
        for k in 0..=taken {
            window = (window << 32) | limbs[h - k] as u128;
        }
        let window_base = 32 * (h - taken) as i64 - BIAS;
        let msb = 127 - window.leading_zeros() as i64;
        let exp_msb = window_base + msb;
        // Unit in the last place of the target format, clamped for subnormals.
        let ulp_exp = (exp_msb - 52).max(-1074);
        let shift = ulp_exp - window_base;
        let (mut mant, round_up) = if shift <= 0 {
            (((window as u64) as u128) << (-shift), false)
        } else {
            let mant = window >> shift;
            let round_bit = (window >> (shift - 1)) & 1 == 1;
            let mut sticky = window & ((1u128 << (shift - 1)) - 1) != 0;
            if !sticky {
                sticky = limbs[..h - taken].iter().any(|&l| l != 0);
            }
            (mant, round_bit && (sticky || mant & 1 == 1))
        };
        let mut ulp_exp = ulp_exp;
        if round_up {
            mant += 1;
            if mant == 1 << 53 {
                mant >>= 1;
                ulp_exp += 1;
            }
        }
        let magnitude = compose(mant as u64, ulp_exp);
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }
}

/// `mant * 2^ulp_exp` where `mant < 2^53`. Exact by construction: the result
/// is either normal with a full mantissa or subnormal with `mant` already
/// rounded to the shorter precision.
fn compose(mant: u64, ulp_exp: i64) -> f64 {
    let power = if ulp_exp >= -1022 {
        f64::from_bits(((ulp_exp + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (ulp_exp + 1074))
    };
    mant as f64 * power
}

/// Dot product accumulated exactly, so the result is invariant under any
/// simultaneous permutation of the two slices.
pub fn exact_dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = ExactAcc::new();
    for (&x, &y) in a.iter().zip(b) {
        acc.add_product(x, y);
    }
    acc.value()
}
