//! Number-theoretic core: Jacobi symbol, modular exponentiation, the
//! Solovay-Strassen witness predicate, Euler-liar enumeration, Carmichael
//! detection, and the probabilistic primality test.
//!
//! The witness predicate `W(i, n)` holds when
//! `jacobi(i, n) * i^((n-1)/2) != 1 (mod n)`, with the Jacobi value -1
//! represented as `n - 1` in the modular comparison. A base with
//! `gcd(i, n) > 1` has Jacobi symbol 0, so the product is 0 and such
//! bases are witnesses; base 1 always satisfies the congruence and is a
//! trivial liar.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitio::BitSource;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NumThError {
    #[error("modulus must be odd and positive, got {0}")]
    EvenModulus(BigUint),
    #[error("modulus must be nonzero")]
    ZeroModulus,
    #[error("{0} is not an odd composite greater than 3")]
    OutOfRange(u64),
    #[error("{0} is prime, expected an odd composite")]
    NotComposite(u64),
    #[error("base {i} out of range [1, {max}]")]
    BadBase { i: BigUint, max: BigUint },
    #[error("bit source exhausted while sampling a base")]
    SourceExhausted,
}

/// Jacobi symbol `(a/n)` for odd positive `n`. Zero exactly when
/// `gcd(a, n) > 1`.
pub fn jacobi(a: &BigUint, n: &BigUint) -> Result<i8, NumThError> {
    if !n.bit(0) {
        return Err(NumThError::EvenModulus(n.clone()));
    }
    let mut a = a % n;
    let mut n = n.clone();
    let mut t = 1i8;
    let zero = BigUint::from(0u32);
    let one = BigUint::from(1u32);
    let three = BigUint::from(3u32);
    while a != zero {
        while !a.bit(0) {
            a >>= 1;
            let r = u8::try_from(&n % 8u32).unwrap();
            if r == 3 || r == 5 {
                t = -t;
            }
        }
        std::mem::swap(&mut a, &mut n);
        if (&a % 4u32) == three && (&n % 4u32) == three {
            t = -t;
        }
        a %= &n;
    }
    if n == one {
        Ok(t)
    } else {
        Ok(0)
    }
}

/// `base^exp mod modulus` by square-and-multiply.
pub fn mod_pow(base: &BigUint, exp: &BigUint, modulus: &BigUint) -> Result<BigUint, NumThError> {
    if *modulus == BigUint::from(0u32) {
        return Err(NumThError::ZeroModulus);
    }
    Ok(base.modpow(exp, modulus))
}

/// The Solovay-Strassen predicate: true when `i` is an Euler witness of
/// `n`'s compositeness. Requires odd `n > 3` and `1 <= i <= n - 1`.
pub fn ss_witness(i: &BigUint, n: &BigUint) -> Result<bool, NumThError> {
    let three = BigUint::from(3u32);
    if *n <= three || !n.bit(0) {
        return Err(NumThError::OutOfRange(
            u64::try_from(n).unwrap_or(u64::MAX),
        ));
    }
    let one = BigUint::from(1u32);
    let max = n - &one;
    if *i < one || *i > max {
        return Err(NumThError::BadBase {
            i: i.clone(),
            max,
        });
    }
    let j = jacobi(i, n)?;
    let exp = (n - &one) >> 1;
    let power = i.modpow(&exp, n);
    let liar = match j {
        1 => power == one,
        -1 => power == n - &one,
        _ => false, // jacobi 0: product is 0, never congruent to 1
    };
    Ok(!liar)
}

/// `ss_witness` over machine-word operands.
pub fn ss_witness_u64(i: u64, n: u64) -> Result<bool, NumThError> {
    ss_witness(&BigUint::from(i), &BigUint::from(n))
}

/// Euler's totient by trial-division factorization.
pub fn euler_phi(n: u64) -> u64 {
    assert!(n > 0);
    let mut n = n;
    let mut phi = n;
    let mut p = 2u64;
    while p * p <= n {
        if n.is_multiple_of(p) {
            phi -= phi / p;
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        phi -= phi / n;
    }
    phi
}

/// Deterministic primality by trial division; adequate for the word-sized
/// moduli the benchmark enumerates.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut p = 3u64;
    while p * p <= n {
        if n.is_multiple_of(p) {
            return false;
        }
        p += 2;
    }
    true
}

/// The E-liar set of an odd composite, with the sampling probability
/// `beta = |liars| / (n - 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiarProfile {
    pub n: u64,
    /// Sorted E-liars in `[1, n - 1]`.
    pub liars: Vec<u64>,
}

impl LiarProfile {
    pub fn beta(&self) -> (u64, u64) {
        (self.liars.len() as u64, self.n - 1)
    }

    pub fn beta_f64(&self) -> f64 {
        self.liars.len() as f64 / (self.n - 1) as f64
    }

    pub fn contains(&self, i: u64) -> bool {
        self.liars.binary_search(&i).is_ok()
    }
}

/// Exhaustively enumerates the E-liars of an odd composite `n > 3`.
pub fn euler_liars(n: u64) -> Result<LiarProfile, NumThError> {
    if n <= 3 || n.is_multiple_of(2) {
        return Err(NumThError::OutOfRange(n));
    }
    if is_prime_u64(n) {
        return Err(NumThError::NotComposite(n));
    }
    let big_n = BigUint::from(n);
    let mut liars = Vec::new();
    for i in 1..n {
        if !ss_witness(&BigUint::from(i), &big_n)? {
            liars.push(i);
        }
    }
    Ok(LiarProfile { n, liars })
}

/// True when `n` is a Carmichael number: composite with
/// `b^(n-1) = 1 (mod n)` for every `b` coprime to `n`. Brute force over
/// all bases, intended for word-sized `n`.
pub fn is_carmichael(n: &BigUint) -> bool {
    let three = BigUint::from(3u32);
    if *n <= three {
        return false;
    }
    // Carmichael numbers are odd; an even n > 2 is composite but fails
    // the congruence at b = n - 1.
    let Ok(small) = u64::try_from(n) else {
        return is_carmichael_big(n);
    };
    if is_prime_u64(small) {
        return false;
    }
    let exp = n - 1u32;
    let one = BigUint::from(1u32);
    let mut b = 2u64;
    while b < small {
        if gcd_u64(b, small) == 1 {
            let base = BigUint::from(b);
            if base.modpow(&exp, n) != one {
                return false;
            }
        }
        b += 1;
    }
    true
}

fn is_carmichael_big(n: &BigUint) -> bool {
    // Arbitrary-precision fallback; practical only for moderate n.
    let one = BigUint::from(1u32);
    let exp = n - &one;
    // Fermat screen at a handful of small bases before the full sweep.
    for small in [2u32, 3, 5, 7] {
        let base = BigUint::from(small);
        if &base < n && gcd_big(&base, n) == one && base.modpow(&exp, n) != one {
            return false;
        }
    }
    if !is_composite_big(n) {
        return false;
    }
    let mut b = BigUint::from(2u32);
    while &b < n {
        if gcd_big(&b, n) == one && b.modpow(&exp, n) != one {
            return false;
        }
        b += 1u32;
    }
    true
}

fn is_composite_big(n: &BigUint) -> bool {
    let mut p = BigUint::from(2u32);
    let zero = BigUint::from(0u32);
    while &(&p * &p) <= n {
        if n % &p == zero {
            return true;
        }
        p += 1u32;
    }
    false
}

fn gcd_u64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

fn gcd_big(a: &BigUint, b: &BigUint) -> BigUint {
    let mut a = a.clone();
    let mut b = b.clone();
    let zero = BigUint::from(0u32);
    while b != zero {
        let r = &a % &b;
        a = b;
        b = r;
    }
    a
}

/// Verdict of the probabilistic primality test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Composite,
    ProbablePrime,
}

/// Solovay-Strassen primality test: draws `k` bases uniformly from
/// `[1, n - 1]` by rejection sampling from the supplied bit source and
/// reports `Composite` on the first witness found.
///
/// On a pass the caller may treat `n` as prime with confidence greater
/// than `1 - 2^-k`.
pub fn solovay_strassen(
    n: &BigUint,
    k: u32,
    source: &mut dyn BitSource,
) -> Result<Verdict, NumThError> {
    let three = BigUint::from(3u32);
    if *n <= three || !n.bit(0) {
        return Err(NumThError::OutOfRange(
            u64::try_from(n).unwrap_or(u64::MAX),
        ));
    }
    let one = BigUint::from(1u32);
    let range = n - &one; // bases are 1 + v for v in [0, range)
    let width = (&range - &one).bits();
    for _ in 0..k {
        let base = loop {
            let v = next_big(source, width).ok_or(NumThError::SourceExhausted)?;
            if v < range {
                break v + &one;
            }
        };
        if ss_witness(&base, n)? {
            return Ok(Verdict::Composite);
        }
    }
    Ok(Verdict::ProbablePrime)
}

fn next_big(source: &mut dyn BitSource, width: u64) -> Option<BigUint> {
    let mut v = BigUint::from(0u32);
    for _ in 0..width {
        v <<= 1;
        if source.next_bit()? {
            v |= BigUint::from(1u32);
        }
    }
    Some(v)
}
