//! Exact integer primitives shared by every tier.
//!
//! The Gray code used throughout is the "shifted" convention: digit `i` of `n`
//! is `<n / 2^i> mod 2`, where `<r>` rounds to the nearest integer with ties
//! going up. For `i >= 1` that is bit `i - 1` of the standard reflected Gray
//! code, and digit 0 is simply `n mod 2`.

use crate::error::{Error, Result};

/// `<a / 2^j>`: the nearest integer to `a / 2^j`, ties rounded up.
pub fn half_up_q(a: u64, j: u32) -> u64 {
    match j {
        0 => a,
        1..=64 => ((u128::from(a) + (1u128 << (j - 1))) >> j) as u64,
        // a < 2^64 <= 2^(j-1), so a / 2^j < 1/2.
        _ => 0,
    }
}

/// `d_j(a, b) = |<a / 2^j> - <b / 2^j>|`.
pub fn d(j: u32, a: u64, b: u64) -> u64 {
    half_up_q(a, j).abs_diff(half_up_q(b, j))
}

/// 2-adic valuation. Zero has none.
pub fn nu2(n: u64) -> Result<u32> {
    if n == 0 {
        Err(Error::ZeroValuation)
    } else {
        Ok(n.trailing_zeros())
    }
}

pub fn gray_digit(n: u64, i: u32) -> bool {
    half_up_q(n, i) & 1 == 1
}

/// `2^e` as a `u64`, or an overflow error.
pub fn pow2(e: u32) -> Result<u64> {
    1u64.checked_shl(e).ok_or(Error::Overflow("pow2"))
}

/// Gray digits `1..=len` of some `n < 2^len`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayDigits {
    // bits[i - 1] is digit i
    bits: Vec<bool>,
}

impl GrayDigits {
    pub const MAX_LEN: usize = 64;

    /// Builds from digits listed in index order: `digits[0]` is digit 1.
    pub fn from_low_first(digits: Vec<bool>) -> Result<Self> {
        if digits.len() > Self::MAX_LEN {
            return Err(Error::TooLong(digits.len()));
        }
        Ok(GrayDigits { bits: digits })
    }

    /// Digits `1..=len` of `n`.
    pub fn of(n: u64, len: usize) -> Result<Self> {
        Self::from_low_first((1..=len as u32).map(|i| gray_digit(n, i)).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Digit `i`, 1-based.
    pub fn digit(&self, i: usize) -> bool {
        self.bits[i - 1]
    }

    pub fn decode(&self) -> u64 {
        gray_decode(self)
    }
}

/// Inverse of [`GrayDigits::of`]: the unique `n < 2^len` with those digits.
pub fn gray_decode(digits: &GrayDigits) -> u64 {
    // Binary bit b_{i-1} is the XOR of digits i..=len.
    let mut n = 0u64;
    let mut bit = false;
    for (idx, &g) in digits.bits.iter().enumerate().rev() {
        bit ^= g;
        n |= u64::from(bit) << idx;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle for `gray_decode`.
    fn decode_by_search(digits: &GrayDigits) -> u64 {
        let len = digits.len() as u32;
        (0..1u64 << len)
            .find(|&n| (1..=len).all(|i| gray_digit(n, i) == digits.digit(i as usize)))
            .expect("every digit string decodes")
    }

    /// Floating-point reference for `<a/2^j>` on small inputs (exact in f64).
    fn nearest_ties_up(a: u64, j: u32) -> u64 {
        (a as f64 / 2f64.powi(j as i32) + 0.5).floor() as u64
    }

    #[test]
    fn half_up_examples() {
        assert_eq!(half_up_q(3, 1), 2);
        assert_eq!(half_up_q(1, 1), 1);
        assert_eq!(half_up_q(12345, 0), 12345);
        assert_eq!(half_up_q(u64::MAX, 64), 1);
        assert_eq!(half_up_q(u64::MAX, 65), 0);
        for a in 0..2000 {
            for j in 0..12 {
                assert_eq!(half_up_q(a, j), nearest_ties_up(a, j), "a={a} j={j}");
            }
        }
    }

    #[test]
    fn d_examples() {
        assert_eq!(d(0, 3, 10), 7);
        assert_eq!(d(0, 10, 3), 7);
        assert_eq!(d(1, 15, 34), 9);
        assert_eq!(d(2, 15, 34), 5);
    }

    #[test]
    fn nu2_examples() {
        assert_eq!(nu2(1), Ok(0));
        assert_eq!(nu2(8), Ok(3));
        assert_eq!(nu2(12), Ok(2));
        assert_eq!(nu2(0), Err(Error::ZeroValuation));
    }

    #[test]
    fn digit_table_of_31() {
        assert!(gray_digit(31, 5));
        for i in [1, 2, 3, 4, 6, 7] {
            assert!(!gray_digit(31, i), "digit {i}");
        }
        for i in 0..70 {
            assert!(!gray_digit(0, i));
        }
    }

    #[test]
    fn decode_examples() {
        let zeros = GrayDigits::from_low_first(vec![false; 9]).unwrap();
        assert_eq!(zeros.decode(), 0);
        let one = GrayDigits::from_low_first(vec![true]).unwrap();
        assert_eq!(one.decode(), 1);
        assert_eq!(decode_by_search(&one), 1);
        // parities of a_1..a_7 for (0,0,3,2,6,8,18,-1): only a_5 is odd
        let ex = GrayDigits::from_low_first(vec![false, false, false, false, true, false, false]).unwrap();
        assert_eq!(ex.decode(), 31);
    }

    #[test]
    fn decode_matches_brute_force() {
        for len in 0..=10usize {
            for mask in 0..1u32 << len {
                let digits = GrayDigits::from_low_first((0..len).map(|b| mask >> b & 1 == 1).collect()).unwrap();
                assert_eq!(digits.decode(), decode_by_search(&digits));
            }
        }
    }

    #[test]
    fn too_many_digits_rejected() {
        assert_eq!(GrayDigits::from_low_first(vec![false; 65]), Err(Error::TooLong(65)));
    }

    #[test]
    fn increment_flips_one_digit_and_digit_zero() {
        for n in 0..1u64 << 16 {
            let flips = (1..=18).filter(|&i| gray_digit(n, i) != gray_digit(n + 1, i)).count();
            assert_eq!(flips, 1, "n={n}");
            assert_ne!(gray_digit(n, 0), gray_digit(n + 1, 0));
        }
    }
}
