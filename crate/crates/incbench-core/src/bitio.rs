//! Bit and trit sequences, their file formats, and the base conversions
//! used by the CSS4 test.
//!
//! Bits are packed MSB-first within each byte, both in memory and in the
//! `.rbf` on-disk format. A bit string of length `L` occupies
//! `ceil(L / 8)` bytes and every pad bit in the final byte is zero.
//!
//! When a bit string is read as an integer (digit extraction, window
//! values), bit `t` in stream order contributes `2^t`: the first bit of
//! the stream is the least significant. This convention is what makes
//! sliding-window value updates cheap in the scanner.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BitIoError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("sidecar for {path} declares {declared} bits but the file holds {actual} bytes")]
    SidecarMismatch {
        path: String,
        declared: u64,
        actual: u64,
    },
    #[error("nonzero padding bits in final byte of {0}")]
    NonzeroPadding(String),
    #[error("invalid trit value {value} at index {index}")]
    InvalidTrit { value: u8, index: usize },
    #[error("invalid sidecar JSON for {path}: {source}")]
    SidecarJson {
        path: String,
        source: serde_json::Error,
    },
    #[error("chunk must be non-empty")]
    EmptyChunk,
    #[error("base conversion requires an odd modulus n > 2, got {0}")]
    BadModulus(u64),
}

/// A packed sequence of bits, MSB-first within each byte.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    bytes: Vec<u8>,
    len_bits: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len_bits: 0,
        }
    }

    /// Builds a bit string from unpacked bits (one value per element,
    /// anything nonzero counts as 1).
    pub fn from_bits<I: IntoIterator<Item = u8>>(bits: I) -> Self {
        let mut s = Self::new();
        for b in bits {
            s.push(b != 0);
        }
        s
    }

    /// Wraps packed bytes. The buffer must be exactly `ceil(len_bits / 8)`
    /// bytes and pad bits in the final byte must be zero.
    pub fn from_bytes(bytes: Vec<u8>, len_bits: usize) -> Result<Self, BitIoError> {
        assert_eq!(
            bytes.len(),
            len_bits.div_ceil(8),
            "byte count does not match bit length {len_bits}"
        );
        let s = Self { bytes, len_bits };
        if !s.padding_is_zero() {
            return Err(BitIoError::NonzeroPadding("<memory>".into()));
        }
        Ok(s)
    }

    /// Parses a string of `'0'`/`'1'` characters; any other character is
    /// ignored, which allows spacing for readability.
    pub fn from_bit_str(s: &str) -> Self {
        Self::from_bits(s.chars().filter_map(|c| match c {
            '0' => Some(0),
            '1' => Some(1),
            _ => None,
        }))
    }

    pub fn len(&self) -> usize {
        self.len_bits
    }

    pub fn is_empty(&self) -> bool {
        self.len_bits == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Bit `i` in stream order, as 0 or 1.
    #[inline]
    pub fn bit(&self, i: usize) -> u8 {
        debug_assert!(i < self.len_bits);
        (self.bytes[i >> 3] >> (7 - (i & 7))) & 1
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        let slot = self.len_bits & 7;
        if slot == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 1 << (7 - slot);
        }
        self.len_bits += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.len_bits).map(move |i| self.bit(i))
    }

    pub fn count_ones(&self) -> u64 {
        // Pad bits are zero by invariant, so a byte-level popcount is exact.
        self.bytes.iter().map(|b| b.count_ones() as u64).sum()
    }

    /// First `n` bits as a new string.
    pub fn prefix(&self, n: usize) -> BitString {
        assert!(n <= self.len_bits);
        let mut bytes = self.bytes[..n.div_ceil(8)].to_vec();
        if let Some(last) = bytes.last_mut() {
            let pad = 8 * n.div_ceil(8) - n;
            *last &= 0xffu8 << pad;
        }
        BitString {
            bytes,
            len_bits: n,
        }
    }

    /// Integer value of bits `[start, start + len)` with stream order as
    /// little-endian significance. `len` must be at most 128.
    pub fn window_value(&self, start: usize, len: usize) -> u128 {
        assert!(len <= 128);
        assert!(start + len <= self.len_bits);
        let mut v = 0u128;
        for t in 0..len {
            v |= (self.bit(start + t) as u128) << t;
        }
        v
    }

    /// Integer value of bits `[start, start + len)` for windows of any
    /// length.
    pub fn window_value_big(&self, start: usize, len: usize) -> BigUint {
        assert!(start + len <= self.len_bits);
        // Bit t contributes 2^t, so assemble bytes little-endian with
        // bit t at byte t/8, position t%8.
        let mut bytes = vec![0u8; len.div_ceil(8)];
        for t in 0..len {
            if self.bit(start + t) == 1 {
                bytes[t >> 3] |= 1 << (t & 7);
            }
        }
        BigUint::from_bytes_le(&bytes)
    }

    fn padding_is_zero(&self) -> bool {
        let pad = 8 * self.bytes.len() - self.len_bits;
        if pad == 0 {
            return true;
        }
        // MSB-first packing puts pad bits at the low end of the last byte.
        let last = *self.bytes.last().unwrap();
        last & ((1u8 << pad) - 1) == 0
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// A sequence of trits (values in {0, 1, 2}), one per byte in memory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TritString {
    trits: Vec<u8>,
}

impl TritString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_trits(trits: Vec<u8>) -> Result<Self, BitIoError> {
        for (index, &value) in trits.iter().enumerate() {
            if value > 2 {
                return Err(BitIoError::InvalidTrit { value, index });
            }
        }
        Ok(Self { trits })
    }

    pub fn len(&self) -> usize {
        self.trits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trits.is_empty()
    }

    #[inline]
    pub fn push(&mut self, trit: u8) {
        debug_assert!(trit <= 2);
        self.trits.push(trit);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.trits
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        self.trits.iter().copied()
    }
}

/// The alphabetic morphism from trits to bits: 1 maps to 1, both 0 and 2
/// map to 0. Length-preserving.
pub fn morphism_phi(t: &TritString) -> BitString {
    let mut out = BitString::with_capacity(t.len());
    for trit in t.iter() {
        out.push(trit == 1);
    }
    out
}

/// First `m` bits of the Champernowne binary sequence: all binary strings
/// concatenated in shortlex order (0, 1, 00, 01, 10, 11, 000, ...).
pub fn champernowne(m: usize) -> BitString {
    let mut out = BitString::with_capacity(m);
    let mut width = 1u32;
    'outer: loop {
        for value in 0..(1u64 << width) {
            for shift in (0..width).rev() {
                if out.len() == m {
                    break 'outer;
                }
                out.push((value >> shift) & 1 == 1);
            }
        }
        width += 1;
    }
    out
}

/// Digits of a chunk value in base `n - 1`, least significant first:
/// `digits[i]` is the coefficient of `(n-1)^i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitVector {
    digits: Vec<u64>,
    base: u64,
}

impl DigitVector {
    pub fn base(&self) -> u64 {
        self.base
    }

    /// Number of digits, always `k + 1` for the chunk's digit parameter `k`.
    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    /// Coefficient of `(n-1)^i`.
    pub fn digit(&self, i: usize) -> u64 {
        self.digits[i]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.digits
    }

    /// Reconstructs the integer value `sum(digits[i] * base^i)`.
    pub fn value(&self) -> BigUint {
        let base = BigUint::from(self.base);
        let mut acc = BigUint::from(0u32);
        for &d in self.digits.iter().rev() {
            acc = acc * &base + BigUint::from(d);
        }
        acc
    }
}

/// Rewrites the integer whose binary representation is `s` (bit `t`
/// weighted `2^t`) into base `n - 1`.
///
/// Returns exactly `k + 1` digits where `k` is the smallest integer with
/// `(n-1)^(k+1) > 2^m - 1` for `m = s.len()`, zero-padded at the top.
pub fn chunk_to_digits(s: &BitString, n: u64) -> Result<DigitVector, BitIoError> {
    if s.is_empty() {
        return Err(BitIoError::EmptyChunk);
    }
    if n <= 2 || n.is_multiple_of(2) {
        return Err(BitIoError::BadModulus(n));
    }
    let base = n - 1;
    let digit_count = digit_count_for(s.len(), n);
    let mut value = s.window_value_big(0, s.len());
    let big_base = BigUint::from(base);
    let mut digits = Vec::with_capacity(digit_count);
    for _ in 0..digit_count {
        let rem = &value % &big_base;
        digits.push(u64::try_from(rem).expect("remainder fits u64"));
        value /= &big_base;
    }
    debug_assert_eq!(value, BigUint::from(0u32), "digit count too small");
    Ok(DigitVector { digits, base })
}

/// Number of digits (`k + 1`) produced when an `m`-bit chunk is rewritten
/// in base `n - 1`: the smallest count with `(n-1)^count > 2^m - 1`.
pub fn digit_count_for(m: usize, n: u64) -> usize {
    assert!(m >= 1);
    assert!(n > 2 && n % 2 == 1);
    let base = BigUint::from(n - 1);
    let max = (BigUint::from(1u32) << m) - 1u32;
    let mut pow = BigUint::from(1u32);
    let mut count = 0usize;
    while pow <= max {
        pow *= &base;
        count += 1;
    }
    count.max(1)
}

/// Sidecar metadata stored next to `.rbf` and `.rtf` files.
///
/// `length_bits` is authoritative for the payload length; the remaining
/// fields record provenance and are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Sidecar {
    pub length_bits: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
    /// Resolved generator configuration, recorded verbatim by the CLI.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<serde_json::Value>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    os.into()
}

fn read_sidecar(path: &Path) -> Result<Option<Sidecar>, BitIoError> {
    let sc_path = sidecar_path(path);
    match fs::read_to_string(&sc_path) {
        Ok(text) => {
            let sc = serde_json::from_str(&text).map_err(|source| BitIoError::SidecarJson {
                path: sc_path.display().to_string(),
                source,
            })?;
            Ok(Some(sc))
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<(), BitIoError> {
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(sidecar_path(path), text + "\n")?;
    Ok(())
}

/// Writes a `.rbf` file: headerless packed bits plus a JSON sidecar.
pub fn write_rbf(path: impl AsRef<Path>, bits: &BitString) -> Result<(), BitIoError> {
    write_rbf_with_sidecar(
        path,
        bits,
        Sidecar {
            length_bits: bits.len() as u64,
            ..Sidecar::default()
        },
    )
}

/// Writes a `.rbf` file with caller-supplied sidecar metadata. The
/// sidecar's `length_bits` is forced to the actual bit count.
pub fn write_rbf_with_sidecar(
    path: impl AsRef<Path>,
    bits: &BitString,
    mut sidecar: Sidecar,
) -> Result<(), BitIoError> {
    let path = path.as_ref();
    sidecar.length_bits = bits.len() as u64;
    fs::write(path, bits.as_bytes())?;
    write_sidecar(path, &sidecar)
}

/// Reads a `.rbf` file. A missing sidecar defaults the length to
/// `8 * file size`; a sidecar that disagrees with the byte count is an
/// error, as are nonzero pad bits.
pub fn read_rbf(path: impl AsRef<Path>) -> Result<BitString, BitIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let len_bits = match read_sidecar(path)? {
        Some(sc) => {
            let declared = sc.length_bits;
            if (declared as usize).div_ceil(8) != bytes.len() {
                return Err(BitIoError::SidecarMismatch {
                    path: path.display().to_string(),
                    declared,
                    actual: bytes.len() as u64,
                });
            }
            declared as usize
        }
        None => bytes.len() * 8,
    };
    BitString::from_bytes(bytes, len_bits)
        .map_err(|_| BitIoError::NonzeroPadding(path.display().to_string()))
}

/// Writes a `.rtf` file: packed trits, 2 bits per trit MSB-first within
/// each byte, plus a JSON sidecar (`length_bits` counts trits here).
pub fn write_rtf(path: impl AsRef<Path>, trits: &TritString) -> Result<(), BitIoError> {
    write_rtf_with_sidecar(
        path,
        trits,
        Sidecar {
            length_bits: trits.len() as u64,
            ..Sidecar::default()
        },
    )
}

pub fn write_rtf_with_sidecar(
    path: impl AsRef<Path>,
    trits: &TritString,
    mut sidecar: Sidecar,
) -> Result<(), BitIoError> {
    let path = path.as_ref();
    sidecar.length_bits = trits.len() as u64;
    let mut bytes = vec![0u8; trits.len().div_ceil(4)];
    for (i, t) in trits.iter().enumerate() {
        bytes[i >> 2] |= t << (6 - 2 * (i & 3));
    }
    fs::write(path, &bytes)?;
    write_sidecar(path, &sidecar)
}

/// Reads a `.rtf` file. Any in-range slot holding the value 3 is invalid;
/// a missing sidecar defaults the length to `4 * file size`.
pub fn read_rtf(path: impl AsRef<Path>) -> Result<TritString, BitIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let len = match read_sidecar(path)? {
        Some(sc) => {
            let declared = sc.length_bits;
            if (declared as usize).div_ceil(4) != bytes.len() {
                return Err(BitIoError::SidecarMismatch {
                    path: path.display().to_string(),
                    declared,
                    actual: bytes.len() as u64,
                });
            }
            declared as usize
        }
        None => bytes.len() * 4,
    };
    let mut trits = Vec::with_capacity(len);
    for i in 0..len {
        let value = (bytes[i >> 2] >> (6 - 2 * (i & 3))) & 3;
        if value > 2 {
            return Err(BitIoError::InvalidTrit { value, index: i });
        }
        trits.push(value);
    }
    // Pad slots past the declared length must be zero, mirroring .rbf.
    for i in len..bytes.len() * 4 {
        if (bytes[i >> 2] >> (6 - 2 * (i & 3))) & 3 != 0 {
            return Err(BitIoError::NonzeroPadding(path.display().to_string()));
        }
    }
    Ok(TritString { trits })
}

/// A consumable stream of bits. Generators and recorded strings both
/// implement this; exhaustion is reported as `None`.
pub trait BitSource {
    fn next_bit(&mut self) -> Option<bool>;

    /// Next `width` bits as an integer, first bit most significant.
    fn next_bits(&mut self, width: u32) -> Option<u64> {
        debug_assert!(width <= 64);
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | self.next_bit()? as u64;
        }
        Some(v)
    }
}

/// Cursor over a recorded `BitString`, for use as a `BitSource`.
pub struct BitCursor<'a> {
    bits: &'a BitString,
    pos: usize,
}

impl<'a> BitCursor<'a> {
    pub fn new(bits: &'a BitString) -> Self {
        Self { bits, pos: 0 }
    }

}

impl BitSource for BitCursor<'_> {
    fn next_bit(&mut self) -> Option<bool> {
        if self.pos < self.bits.len() {
            let b = self.bits.bit(self.pos) == 1;
            self.pos += 1;
            Some(b)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn morphism_maps_only_one_to_one() {
        let t = TritString::from_trits(vec![0, 1, 2]).unwrap();
        assert_eq!(morphism_phi(&t).to_string(), "010");
        let t = TritString::from_trits(vec![2, 2, 2, 1]).unwrap();
        assert_eq!(morphism_phi(&t).to_string(), "0001");
        assert_eq!(morphism_phi(&TritString::new()).len(), 0);
    }

    #[test]
    fn trit_values_validated() {
        assert!(matches!(
            TritString::from_trits(vec![0, 3]),
            Err(BitIoError::InvalidTrit { value: 3, index: 1 })
        ));
    }

    #[test]
    fn champernowne_prefixes() {
        assert_eq!(champernowne(0).len(), 0);
        assert_eq!(champernowne(6).to_string(), "010001");
        assert_eq!(champernowne(13).to_string(), "0100011011000");
    }

    #[test]
    fn champernowne_is_prefix_closed() {
        let long = champernowne(4096);
        for m in [0, 1, 2, 6, 13, 100, 1000, 4095] {
            assert_eq!(long.prefix(m), champernowne(m));
        }
    }

    #[test]
    fn chunk_digits_zero_chunk() {
        let s = BitString::from_bits([0u8; 40]);
        let d = chunk_to_digits(&s, 9).unwrap();
        assert_eq!(d.len(), 14);
        assert!(d.as_slice().iter().all(|&x| x == 0));
        assert_eq!(d.base(), 8);
    }

    #[test]
    fn chunk_digits_value_nine() {
        // 9 = 1001 binary with bit 0 least significant: bits 0 and 3 set.
        let mut bits = vec![0u8; 40];
        bits[0] = 1;
        bits[3] = 1;
        let s = BitString::from_bits(bits);
        let d = chunk_to_digits(&s, 9).unwrap();
        assert_eq!(d.digit(0), 1);
        assert_eq!(d.digit(1), 1);
        assert!(d.as_slice()[2..].iter().all(|&x| x == 0));
        assert_eq!(d.len(), 14);
    }

    #[test]
    fn digit_counts_match_geometry() {
        assert_eq!(digit_count_for(40, 9), 14);
        assert_eq!(digit_count_for(40, 15), 11);
        assert_eq!(digit_count_for(96, 49), 18);
    }

    #[test]
    fn chunk_digits_reconstruct_value_exhaustive_small() {
        for n in [5u64, 9, 15] {
            for m in 1..=12usize {
                for value in 0..(1u64 << m) {
                    let s = BitString::from_bits((0..m).map(|t| ((value >> t) & 1) as u8));
                    let d = chunk_to_digits(&s, n).unwrap();
                    assert_eq!(d.value(), BigUint::from(value), "n={n} m={m} v={value}");
                }
            }
        }
    }

    #[test]
    fn bitstring_packing_msb_first() {
        let s = BitString::from_bits([1, 1, 1, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(s.as_bytes(), &[0xff, 0xc0]);
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn bitstring_rejects_dirty_padding() {
        assert!(BitString::from_bytes(vec![0xff, 0xc1], 10).is_err());
        assert!(BitString::from_bytes(vec![0xff, 0xc0], 10).is_ok());
    }

    #[test]
    fn window_values_little_endian() {
        let s = BitString::from_bit_str("1001 0000 0000");
        assert_eq!(s.window_value(0, 4), 9);
        assert_eq!(s.window_value(0, 12), 9);
        assert_eq!(s.window_value(1, 3), 4);
        assert_eq!(s.window_value_big(0, 12), BigUint::from(9u32));
    }

    #[test]
    fn rbf_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.rbf");
        let s = BitString::from_bits([1, 1, 1, 1, 1, 1, 1, 1, 1, 1]);
        write_rbf(&path, &s).unwrap();
        assert_eq!(fs::read(&path).unwrap(), vec![0xff, 0xc0]);
        let sc: Sidecar =
            serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(sc.length_bits, 10);
        assert_eq!(read_rbf(&path).unwrap(), s);
    }

    #[test]
    fn rbf_missing_sidecar_defaults_to_full_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.rbf");
        fs::write(&path, [0xab, 0xcd]).unwrap();
        let s = read_rbf(&path).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!(s.as_bytes(), &[0xab, 0xcd]);
    }

    #[test]
    fn rbf_sidecar_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rbf");
        let s = BitString::from_bits([1, 0, 1]);
        write_rbf(&path, &s).unwrap();
        fs::write(&path, [0u8; 4]).unwrap();
        assert!(matches!(
            read_rbf(&path),
            Err(BitIoError::SidecarMismatch { declared: 3, .. })
        ));
    }

    #[test]
    fn rtf_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.rtf");
        let t = TritString::from_trits(vec![0, 1, 2, 2, 1]).unwrap();
        write_rtf(&path, &t).unwrap();
        assert_eq!(read_rtf(&path).unwrap(), t);
        // 0b00_01_10_10, 0b01_000000
        assert_eq!(fs::read(&path).unwrap(), vec![0x1a, 0x40]);

        fs::write(&path, [0x1a, 0x70]).unwrap(); // second slot = 0b11
        fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(matches!(
            read_rtf(&path),
            Err(BitIoError::InvalidTrit { value: 3, .. })
        ));
    }

    #[test]
    fn bit_cursor_reports_exhaustion() {
        let s = BitString::from_bits([1, 0]);
        let mut c = BitCursor::new(&s);
        assert_eq!(c.next_bits(2), Some(0b10));
        assert_eq!(c.next_bit(), None);
    }
}
