//! Arithmetic in `Z_p` and the fixed-point codec that carries real-valued
//! gradients into the field and back.
//!
//! Only what additive secret sharing needs lives here: addition, negation,
//! subtraction, uniform sampling, and the encode/decode pair. Every value is
//! kept reduced in `[0, p)` and no floating-point arithmetic touches a field
//! operation.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Width of a serialized field element in every wire and file format.
pub const ELEMENT_BYTES: usize = 16;

/// Largest supported number of retained decimal places (`10^18 < 2^60`).
pub const MAX_DECIMAL_PLACES: u32 = 18;

/// 2^127 - 1, the default modulus.
pub const MERSENNE_127: u128 = (1u128 << 127) - 1;

/// A prime modulus `p < 2^128`, checked for primality on construction.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrimeModulus {
    p: u128,
    bit_width: u32,
}

impl PrimeModulus {
    pub fn new(p: u128) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::NotPrime(p));
        }
        Ok(Self::new_unchecked(p))
    }

    const fn new_unchecked(p: u128) -> Self {
        PrimeModulus {
            p,
            bit_width: 128 - (p - 1).leading_zeros(),
        }
    }

    /// `2^127 - 1`.
    pub const fn mersenne_127() -> Self {
        Self::new_unchecked(MERSENNE_127)
    }

    pub fn value(&self) -> u128 {
        self.p
    }

    /// Bits needed to represent `p - 1`.
    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    /// Largest magnitude representable under the centered lift.
    pub fn half(&self) -> u128 {
        (self.p - 1) / 2
    }

    /// Verifies `p > 2 * n_max * scale * ceil(v_max)`, the condition under
    /// which summing `n_max` encodings bounded by `v_max` never wraps.
    pub fn check_headroom(&self, n_max: u64, scale: u128, v_max: f64) -> Result<()> {
        if !(v_max.is_finite() && v_max >= 0.0) {
            return Err(Error::invalid(format!("v_max must be finite and >= 0, got {v_max}")));
        }
        let v = v_max.ceil();
        if v >= 2f64.powi(127) {
            return Err(Error::InsufficientHeadroom {
                required: format!("2*{n_max}*{scale}*{v}"),
                actual: self.p,
            });
        }
        let required = 2u128
            .checked_mul(n_max as u128)
            .and_then(|r| r.checked_mul(scale))
            .and_then(|r| r.checked_mul(v as u128));
        match required {
            Some(r) if self.p > r => Ok(()),
            Some(r) => Err(Error::InsufficientHeadroom {
                required: r.to_string(),
                actual: self.p,
            }),
            None => Err(Error::InsufficientHeadroom {
                required: format!("2*{n_max}*{scale}*{v} (exceeds 2^128)"),
                actual: self.p,
            }),
        }
    }

    pub fn zero(&self) -> FieldElement {
        FieldElement { value: 0, modulus: *self }
    }

    /// Reduces `value` mod p.
    pub fn element(&self, value: u128) -> FieldElement {
        FieldElement {
            value: value % self.p,
            modulus: *self,
        }
    }

    /// Parses a 16-byte big-endian element, rejecting unreduced values.
    pub fn element_from_be_bytes(&self, bytes: [u8; ELEMENT_BYTES]) -> Result<FieldElement> {
        let value = u128::from_be_bytes(bytes);
        if value >= self.p {
            return Err(Error::Frame(format!("field element {value} not reduced mod {}", self.p)));
        }
        Ok(FieldElement { value, modulus: *self })
    }
}

impl Default for PrimeModulus {
    fn default() -> Self {
        Self::mersenne_127()
    }
}

impl fmt::Debug for PrimeModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrimeModulus({})", self.p)
    }
}

/// A residue in `[0, p)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u128,
    modulus: PrimeModulus,
}

impl FieldElement {
    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn modulus(&self) -> PrimeModulus {
        self.modulus
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }

    pub fn to_be_bytes(&self) -> [u8; ELEMENT_BYTES] {
        self.value.to_be_bytes()
    }

    fn same_modulus(&self, other: &FieldElement) -> Result<u128> {
        if self.modulus != other.modulus {
            return Err(Error::ModulusMismatch {
                left: self.modulus.p,
                right: other.modulus.p,
            });
        }
        Ok(self.modulus.p)
    }

    pub fn neg(&self) -> FieldElement {
        let value = if self.value == 0 { 0 } else { self.modulus.p - self.value };
        FieldElement { value, modulus: self.modulus }
    }

    pub fn try_sub(&self, other: &FieldElement) -> Result<FieldElement> {
        field_add(self, &other.neg())
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldElement({})", self.value)
    }
}

/// `(a + b) mod p` without intermediate overflow for any `p < 2^128`.
#[inline]
fn add_mod(a: u128, b: u128, p: u128) -> u128 {
    let gap = p - b;
    if a >= gap {
        a - gap
    } else {
        a + b
    }
}

pub fn field_add(a: &FieldElement, b: &FieldElement) -> Result<FieldElement> {
    let p = a.same_modulus(b)?;
    Ok(FieldElement {
        value: add_mod(a.value, b.value, p),
        modulus: a.modulus,
    })
}

/// Samples uniformly from `[0, p)` by rejection on the smallest power-of-two
/// range covering `p`.
pub fn uniform_element<R: Rng + ?Sized>(rng: &mut R, modulus: PrimeModulus) -> FieldElement {
    let mask = if modulus.bit_width >= 128 {
        u128::MAX
    } else {
        (1u128 << modulus.bit_width) - 1
    };
    loop {
        let candidate = rng.random::<u128>() & mask;
        if candidate < modulus.p {
            return FieldElement { value: candidate, modulus };
        }
    }
}

/// Fixed-point codec with scaling factor `SF = 10^decimal_places`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedPointCodec {
    decimal_places: u32,
    scale: u128,
    modulus: PrimeModulus,
}

impl FixedPointCodec {
    pub fn new(decimal_places: u32, modulus: PrimeModulus) -> Result<Self> {
        if decimal_places > MAX_DECIMAL_PLACES {
            return Err(Error::invalid(format!(
                "decimal_places must be <= {MAX_DECIMAL_PLACES}, got {decimal_places}"
            )));
        }
        let scale = 10u128.pow(decimal_places);
        if scale > modulus.half() {
            return Err(Error::InsufficientHeadroom {
                required: format!("p > 2 * {scale}"),
                actual: modulus.p,
            });
        }
        Ok(FixedPointCodec {
            decimal_places,
            scale,
            modulus,
        })
    }

    pub fn decimal_places(&self) -> u32 {
        self.decimal_places
    }

    pub fn scale(&self) -> u128 {
        self.scale
    }

    pub fn modulus(&self) -> PrimeModulus {
        self.modulus
    }

    /// Largest decoding error of a single encoding, `1/(2 SF)`.
    pub fn quantization_bound(&self) -> f64 {
        0.5 / self.scale as f64
    }

    /// Exact `round(x * SF)` with ties away from zero, as a signed integer.
    ///
    /// `x * SF` is formed in integer arithmetic from the binary64
    /// decomposition of `x`, so no floating-point rounding precedes the
    /// decimal rounding.
    pub fn scaled_integer(&self, x: f64) -> Result<i128> {
        let overflow = || Error::EncodingOverflow {
            value: x,
            decimal_places: self.decimal_places,
        };
        if !x.is_finite() {
            return Err(overflow());
        }
        if x == 0.0 {
            return Ok(0);
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let fraction = bits & ((1u64 << 52) - 1);
        let (mantissa, exp2) = if biased == 0 {
            (fraction, -1074)
        } else {
            (fraction | (1u64 << 52), biased - 1075)
        };
        // mantissa < 2^53 and scale < 2^60
        let numerator = mantissa as u128 * self.scale;
        let magnitude = if exp2 >= 0 {
            let shift = exp2 as u32;
            if shift >= numerator.leading_zeros() {
                return Err(overflow());
            }
            numerator << shift
        } else {
            let shift = exp2.unsigned_abs();
            if shift >= 127 {
                0
            } else {
                let quotient = numerator >> shift;
                let remainder = numerator - (quotient << shift);
                let half = 1u128 << (shift - 1);
                quotient + u128::from(remainder >= half)
            }
        };
        if magnitude > self.modulus.half() {
            return Err(overflow());
        }
        let magnitude = magnitude as i128;
        Ok(if negative { -magnitude } else { magnitude })
    }

    pub fn encode(&self, x: f64) -> Result<FieldElement> {
        let k = self.scaled_integer(x)?;
        Ok(self.lift(k))
    }

    pub fn encode_vec(&self, xs: &[f64]) -> Result<Vec<FieldElement>> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    /// Centered lift of a signed integer into `Z_p`. Caller guarantees
    /// `|k| <= (p-1)/2`.
    fn lift(&self, k: i128) -> FieldElement {
        let p = self.modulus.p;
        let value = if k < 0 { p - k.unsigned_abs() } else { k as u128 };
        FieldElement {
            value,
            modulus: self.modulus,
        }
    }

    /// Inverse of the centered lift: residues above `(p-1)/2` are negative.
    pub fn centered(&self, e: &FieldElement) -> Result<i128> {
        self.check(e)?;
        let half = self.modulus.half();
        Ok(if e.value > half {
            -((self.modulus.p - e.value) as i128)
        } else {
            e.value as i128
        })
    }

    pub fn decode(&self, e: &FieldElement) -> Result<f64> {
        let k = self.centered(e)?;
        Ok(self.unscale(k))
    }

    pub fn decode_vec(&self, es: &[FieldElement]) -> Result<Vec<f64>> {
        es.iter().map(|e| self.decode(e)).collect()
    }

    /// `k / SF` in binary64.
    pub fn unscale(&self, k: i128) -> f64 {
        let magnitude = k.unsigned_abs();
        let value = if magnitude < (1u128 << 53) {
            magnitude as f64 / self.scale as f64
        } else {
            let whole = magnitude / self.scale;
            let rest = magnitude % self.scale;
            whole as f64 + rest as f64 / self.scale as f64
        };
        if k < 0 {
            -value
        } else {
            value
        }
    }

    fn check(&self, e: &FieldElement) -> Result<()> {
        if e.modulus != self.modulus {
            return Err(Error::ModulusMismatch {
                left: e.modulus.p,
                right: self.modulus.p,
            });
        }
        Ok(())
    }
}

fn mul_mod(mut a: u128, mut b: u128, p: u128) -> u128 {
    a %= p;
    b %= p;
    if a.leading_zeros() + b.leading_zeros() >= 128 {
        return (a * b) % p;
    }
    let mut acc = 0u128;
    while b > 0 {
        if b & 1 == 1 {
            acc = add_mod(acc, a, p);
        }
        a = add_mod(a, a, p);
        b >>= 1;
    }
    acc
}

fn pow_mod(mut base: u128, mut exp: u128, p: u128) -> u128 {
    let mut acc = 1u128 % p;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    acc
}

const SMALL_PRIMES: [u128; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Miller-Rabin with the first 13 prime bases is exact below this bound.
const MR_EXACT_BELOW: u128 = 3_317_044_064_679_887_385_961_981;

fn miller_rabin(n: u128, bases: &[u128]) -> bool {
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'bases: for &a in bases {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

/// Lucas-Lehmer for `2^q - 1` with odd prime `q`.
fn lucas_lehmer(q: u32) -> bool {
    let m = (1u128 << q) - 1;
    let mut s = 4u128;
    for _ in 0..q - 2 {
        s = add_mod(mul_mod(s, s, m), m - 2, m);
    }
    s == 0
}

/// Deterministic primality test for `n < 2^128`.
///
/// Exact Miller-Rabin below ~3.3e24, Lucas-Lehmer for Mersenne numbers, and
/// Miller-Rabin over the first 24 prime bases otherwise.
pub fn is_prime(n: u128) -> bool {
    if n < 2 {
        return false;
    }
    for &sp in &SMALL_PRIMES {
        if n == sp {
            return true;
        }
        if n % sp == 0 {
            return false;
        }
    }
    if n < MR_EXACT_BELOW {
        return miller_rabin(n, &SMALL_PRIMES[..13]);
    }
    if (n + 1).is_power_of_two() {
        let q = n.trailing_ones();
        return is_prime(q as u128) && lucas_lehmer(q);
    }
    miller_rabin(n, &SMALL_PRIMES)
}
