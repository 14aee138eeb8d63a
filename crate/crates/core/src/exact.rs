//! Exact dyadic arithmetic used by the verification oracles.
//!
//! Every finite `f64` is a dyadic rational `mant * 2^exp`. Sums and
//! products of dyadics are exact, so a matrix-vector product whose matrix
//! entries are small integers scaled by dyadic factors can be evaluated
//! without rounding and rounded to `f64` exactly once at the end.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};

#[derive(Debug, Clone, PartialEq)]
pub struct Dyadic {
    mant: BigInt,
    exp: i64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Dyadic {
            mant: BigInt::zero(),
            exp: 0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    /// Exact decomposition of a finite f64.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "dyadic conversion requires finite input");
        if x == 0.0 {
            return Dyadic::zero();
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        Dyadic {
            mant: BigInt::from(mant) * sign,
            exp,
        }
    }

    pub fn from_i128(v: i128) -> Self {
        Dyadic {
            mant: BigInt::from(v),
            exp: 0,
        }
    }

    pub fn mul(&self, other: &Dyadic) -> Dyadic {
        Dyadic {
            mant: &self.mant * &other.mant,
            exp: self.exp + other.exp,
        }
    }

    pub fn mul_i64(&self, k: i64) -> Dyadic {
        Dyadic {
            mant: &self.mant * k,
            exp: self.exp,
        }
    }

    pub fn add_assign(&mut self, other: &Dyadic) {
        if other.mant.is_zero() {
            return;
        }
        if self.mant.is_zero() {
            *self = other.clone();
            return;
        }
        if self.exp == other.exp {
            self.mant += &other.mant;
        } else if self.exp > other.exp {
            let shift = (self.exp - other.exp) as u64;
            self.mant = (&self.mant << shift) + &other.mant;
            self.exp = other.exp;
        } else {
            let shift = (other.exp - self.exp) as u64;
            self.mant += &other.mant << shift;
        }
    }

    pub fn sub_assign(&mut self, other: &Dyadic) {
        let neg = Dyadic {
            mant: -other.mant.clone(),
            exp: other.exp,
        };
        self.add_assign(&neg);
    }

    /// Correctly rounded (nearest, ties to even) value of `self / den`.
    pub fn to_f64_div(&self, den: u64) -> f64 {
        assert!(den > 0);
        if self.mant.is_zero() {
            return 0.0;
        }
        let negative = self.mant.is_negative();
        let n = self.mant.abs();
        let den_big = BigInt::from(den);
        let n_bits = n.bits() as i64;
        let den_bits = 64 - den.leading_zeros() as i64;
        // Scale so the quotient carries at least 56 significant bits.
        let s = (56 + den_bits - n_bits).max(0) as u64;
        let scaled = &n << s;
        let (q, r) = num_integer::div_rem(scaled, den_big);
        let sticky = !r.is_zero();
        let q_bits = q.bits() as i64;
        let exp = self.exp - s as i64;
        let (top, pos_exp) = if q_bits <= 53 {
            // Only reachable for exact small quotients: the scaling above
            // guarantees at least 56 quotient bits whenever rounding could
            // matter.
            debug_assert!(!sticky);
            let t: u64 = (&q).try_into().expect("fits in 64 bits");
            (t, exp)
        } else {
            let drop = (q_bits - 53) as u64;
            let top: u64 = (&q >> drop).try_into().expect("53 bits");
            let rem = &q - (BigInt::from(top) << drop);
            let half = BigInt::from(1u8) << (drop - 1);
            let round_up = match rem.cmp(&half) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => sticky || (top & 1 == 1),
            };
            let mut t = top;
            let mut e = exp + drop as i64;
            if round_up {
                t += 1;
                if t == (1u64 << 53) {
                    t >>= 1;
                    e += 1;
                }
            }
            (t, e)
        };
        assemble(negative, top, pos_exp)
    }

    pub fn to_f64(&self) -> f64 {
        self.to_f64_div(1)
    }

    /// Fixed-point decimal rendering of `self / den` with `frac_digits`
    /// digits after the point. Display helper for digit-agreement tables.
    pub fn to_decimal_string(&self, den: u64, frac_digits: usize) -> String {
        if self.mant.is_zero() {
            return format!("0.{}", "0".repeat(frac_digits));
        }
        let negative = self.mant.is_negative();
        let mut num = self.mant.abs();
        let mut d = BigInt::from(den);
        if self.exp >= 0 {
            num <<= self.exp as u64;
        } else {
            d <<= (-self.exp) as u64;
        }
        let (ip, mut rem) = num_integer::div_rem(num, d.clone());
        let mut s = String::new();
        if negative {
            s.push('-');
        }
        s.push_str(&ip.to_string());
        s.push('.');
        for _ in 0..frac_digits {
            rem *= 10;
            let (digit, r) = num_integer::div_rem(rem, d.clone());
            s.push_str(&digit.to_string());
            rem = r;
        }
        s
    }
}

fn assemble(negative: bool, mant: u64, exp: i64) -> f64 {
    // Exact scaling by 2^exp in chunks that keep every intermediate (and
    // the result) in the normal range.
    let mut v = mant as f64; // exact for values up to 2^53
    let mut e = exp;
    while e > 0 {
        let step = e.min(960);
        v *= pow2(step);
        e -= step;
    }
    while e < 0 {
        let step = (-e).min(960);
        v *= pow2(-step);
        e += step;
    }
    debug_assert!(v.is_finite() && (v == 0.0 || v.is_normal()), "scale out of range");
    if negative {
        -v
    } else {
        v
    }
}

fn pow2(e: i64) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((1023 + e) as u64) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_f64_exactly() {
        for &x in &[0.0, 1.0, -0.5, 0.1, 1e100, -3.7e-200, f64::MIN_POSITIVE] {
            assert_eq!(Dyadic::from_f64(x).to_f64(), x);
        }
    }

    #[test]
    fn exact_sums_and_products() {
        // (2^-30 + 1) * (2^30) = 2^30 + 2^-0 exactly representable pieces.
        let mut a = Dyadic::from_f64(2f64.powi(-30));
        a.add_assign(&Dyadic::from_f64(1.0));
        let p = a.mul(&Dyadic::from_f64(2f64.powi(30)));
        assert_eq!(p.to_f64(), 2f64.powi(30) + 1.0);
    }

    #[test]
    fn division_rounds_to_nearest() {
        // 1/3 in f64 is the correctly rounded value of the rational 1/3.
        let one = Dyadic::from_f64(1.0);
        assert_eq!(one.to_f64_div(3), 1.0 / 3.0);
        let ten = Dyadic::from_f64(10.0);
        assert_eq!(ten.to_f64_div(3), 10.0 / 3.0);
        // 2^53 + 1 needs 54 bits; the tie rounds to the even neighbor 2^53.
        let mut big = Dyadic::from_f64(9007199254740992.0);
        big.add_assign(&Dyadic::from_f64(1.0));
        assert_eq!(big.to_f64(), 9007199254740992.0);
        // 2^53 + 3 rounds up to 2^53 + 4.
        let mut big = Dyadic::from_f64(9007199254740992.0);
        big.add_assign(&Dyadic::from_f64(3.0));
        assert_eq!(big.to_f64(), 9007199254740996.0);
    }

    #[test]
    fn division_matches_f64_semantics_on_random_values() {
        // to_f64_div must agree with hardware division x / d whenever the
        // numerator is a single f64 (both are correctly rounded).
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..20_000 {
            let x = f64::from_bits((next() >> 12) | (1023u64 << 52)) - 1.5; // [-0.5, 0.5)
            for &d in &[3u64, 27, 432, 768] {
                let got = Dyadic::from_f64(x).to_f64_div(d);
                let want = x / d as f64;
                assert_eq!(got, want, "x={x} d={d}");
            }
        }
    }

    #[test]
    fn decimal_rendering() {
        let d = Dyadic::from_f64(0.5);
        assert_eq!(d.to_decimal_string(1, 3), "0.500");
        let d = Dyadic::from_f64(-2.0);
        assert_eq!(d.to_decimal_string(4, 2), "-0.50");
        let d = Dyadic::from_f64(1.0);
        assert_eq!(d.to_decimal_string(3, 6), "0.333333");
    }
}
