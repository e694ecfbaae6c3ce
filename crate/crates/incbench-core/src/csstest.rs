//! The CSS4 test: per-composite geometry, the Z-predicate, and the
//! sliding-offset Z-liar scanner.
//!
//! For an odd composite `n` with an `l`-bit binary representation the
//! test fixes the certainty parameter `c = l - 1` and samples chunks of
//! `m = l * (l + 2c)` bits. A chunk is rewritten in base `n - 1` as
//! digits `d_k ... d_0`; the chunk is a Z-liar for `n` when every base
//! `1 + d_j` for `j < k` fails to witness `n`'s compositeness. The top
//! digit `d_k` — the one digit that is not uniformly distributed — is
//! not used.
//!
//! The scanner slides a window over the input at a configurable bit
//! step and counts Z-liars per composite. Results are deterministic and
//! independent of how the offset range is sharded across threads; the
//! [`reference`] module holds a recompute-everything implementation the
//! optimized path is tested against.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitio::{self, BitString};
use crate::numth::{self, LiarProfile, NumThError};

#[derive(Debug, Error)]
pub enum ScanError {
    #[error(transparent)]
    NumTh(#[from] NumThError),
    #[error("chunk is {got} bits, profile for n={n} needs {expected}")]
    LengthMismatch { n: u64, expected: usize, got: usize },
    #[error("composite list is empty")]
    EmptyComposites,
    #[error("offset step must be at least 1")]
    InvalidStep,
}

/// The odd composites below 50, the default composite set of the test.
pub const DEFAULT_COMPOSITES: [u64; 10] = [9, 15, 21, 25, 27, 33, 35, 39, 45, 49];

pub fn default_composites() -> Vec<u64> {
    DEFAULT_COMPOSITES.to_vec()
}

/// Per-composite test geometry and liar set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeProfile {
    pub n: u64,
    /// Bit length of n's binary representation.
    pub l: u32,
    /// Certainty parameter, fixed at `l - 1`.
    pub c: u32,
    /// Chunk length in bits, `l * (l + 2c)`.
    pub m: usize,
    /// Digit parameter: chunks yield `k + 1` digits in base `n - 1` and
    /// the Z-predicate tests the low `k` of them.
    pub k: usize,
    pub liar_profile: LiarProfile,
}

impl CompositeProfile {
    /// The digit base `n - 1`.
    pub fn base(&self) -> u64 {
        self.n - 1
    }

    /// True when base `1 + d` is an E-liar of `n`.
    pub fn digit_is_liar(&self, d: u64) -> bool {
        self.liar_profile.contains(1 + d)
    }
}

/// Builds the profile for an odd composite `n >= 9`.
pub fn composite_profile(n: u64) -> Result<CompositeProfile, ScanError> {
    let liar_profile = numth::euler_liars(n)?;
    let l = 64 - n.leading_zeros();
    let c = l - 1;
    let m = (l as usize) * (l as usize + 2 * c as usize);
    let k = bitio::digit_count_for(m, n) - 1;
    Ok(CompositeProfile {
        n,
        l,
        c,
        m,
        k,
        liar_profile,
    })
}

/// The Z-predicate: true when every base `1 + d_j`, `0 <= j < k`, drawn
/// from the chunk's base-(n-1) digits fails to witness `n`.
pub fn z_predicate(s: &BitString, profile: &CompositeProfile) -> Result<bool, ScanError> {
    if s.len() != profile.m {
        return Err(ScanError::LengthMismatch {
            n: profile.n,
            expected: profile.m,
            got: s.len(),
        });
    }
    let digits = bitio::chunk_to_digits(s, profile.n).expect("profile guarantees valid chunk");
    debug_assert_eq!(digits.len(), profile.k + 1);
    Ok((0..profile.k).all(|j| profile.digit_is_liar(digits.digit(j))))
}

/// Scan result for one composite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeScan {
    pub zliar_count: u64,
    /// Window offsets of the Z-liars found, ascending, capped; `None`
    /// when position recording is disabled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<u64>>,
}

/// Scan report over one input string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScanReport {
    pub source_id: String,
    pub input_length: u64,
    pub offset_step: u64,
    pub per_composite: BTreeMap<u64, CompositeScan>,
    /// Arithmetic mean of the per-composite Z-liar counts.
    pub average_metric: f64,
}

impl ZScanReport {
    pub fn count_for(&self, n: u64) -> Option<u64> {
        self.per_composite.get(&n).map(|c| c.zliar_count)
    }
}

/// Scanner configuration beyond the composite set and step.
#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub source_id: String,
    /// Offset-range shards per composite; results are identical for any
    /// value.
    pub threads: usize,
    /// Record Z-liar offsets up to this many per composite.
    pub record_positions: Option<usize>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            source_id: String::new(),
            threads: 1,
            record_positions: Some(DEFAULT_POSITION_CAP),
        }
    }
}

pub const DEFAULT_POSITION_CAP: usize = 1000;

/// Scans `input` for Z-liars of each composite, testing windows at
/// offsets `0, step, 2 step, ...` while the window fits.
pub fn scan(
    input: &BitString,
    composites: &[u64],
    step: usize,
    options: &ScanOptions,
) -> Result<ZScanReport, ScanError> {
    if composites.is_empty() {
        return Err(ScanError::EmptyComposites);
    }
    if step == 0 {
        return Err(ScanError::InvalidStep);
    }
    let threads = options.threads.max(1);
    let reversed = ReversedBits::new(input);
    let mut per_composite = BTreeMap::new();
    for &n in composites {
        if per_composite.contains_key(&n) {
            continue;
        }
        let profile = composite_profile(n)?;
        let outcome = scan_composite(
            input,
            &reversed,
            &profile,
            step,
            threads,
            options.record_positions,
        );
        per_composite.insert(n, outcome);
    }
    let average_metric = per_composite
        .values()
        .map(|c| c.zliar_count as f64)
        .sum::<f64>()
        / per_composite.len() as f64;
    Ok(ZScanReport {
        source_id: options.source_id.clone(),
        input_length: input.len() as u64,
        offset_step: step as u64,
        per_composite,
        average_metric,
    })
}

fn window_count(input_bits: usize, m: usize, step: usize) -> u64 {
    if input_bits < m {
        0
    } else {
        ((input_bits - m) / step + 1) as u64
    }
}

fn scan_composite(
    input: &BitString,
    reversed: &ReversedBits,
    profile: &CompositeProfile,
    step: usize,
    threads: usize,
    record_positions: Option<usize>,
) -> CompositeScan {
    let windows = window_count(input.len(), profile.m, step);
    if windows == 0 {
        return CompositeScan {
            zliar_count: 0,
            positions: record_positions.map(|_| Vec::new()),
        };
    }
    if profile.m > 128 {
        return scan_composite_wide(input, profile, step, record_positions);
    }
    let tables = ScanTables::new(profile);
    let shards = shard_ranges(windows, threads.min(windows as usize));
    let results: Vec<(u64, Vec<u64>)> = if shards.len() == 1 {
        vec![scan_shard(reversed, profile, &tables, step, shards[0], record_positions)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = shards
                .iter()
                .map(|&range| {
                    let tables = &tables;
                    scope.spawn(move || {
                        scan_shard(reversed, profile, tables, step, range, record_positions)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    };
    // Shards cover ascending offset ranges, so concatenation keeps the
    // position list sorted.
    let mut zliar_count = 0u64;
    let mut positions = record_positions.map(|_| Vec::new());
    for (count, pos) in results {
        zliar_count += count;
        if let Some(all) = positions.as_mut() {
            all.extend(pos);
        }
    }
    if let (Some(all), Some(cap)) = (positions.as_mut(), record_positions) {
        all.truncate(cap);
    }
    CompositeScan {
        zliar_count,
        positions,
    }
}

/// Digit-table scan for profiles whose chunks exceed 128 bits (the
/// Carmichael range). Arbitrary-precision per window, so far slower than
/// the sliding path; adequate for profile exploration, not bulk scans.
fn scan_composite_wide(
    input: &BitString,
    profile: &CompositeProfile,
    step: usize,
    record_positions: Option<usize>,
) -> CompositeScan {
    let base = BigUint::from(profile.base());
    let mut count = 0u64;
    let mut positions = record_positions.map(|_| Vec::new());
    let cap = record_positions.unwrap_or(0);
    let mut offset = 0usize;
    while offset + profile.m <= input.len() {
        let mut value = input.window_value_big(offset, profile.m);
        let mut liar = true;
        for _ in 0..profile.k {
            let d = u64::try_from(&value % &base).expect("digit fits u64");
            if !profile.digit_is_liar(d) {
                liar = false;
                break;
            }
            value /= &base;
        }
        if liar {
            count += 1;
            if let Some(p) = positions.as_mut() {
                if p.len() < cap {
                    p.push(offset as u64);
                }
            }
        }
        offset += step;
    }
    CompositeScan {
        zliar_count: count,
        positions,
    }
}

/// Splits `windows` window indices into contiguous, near-equal ranges.
fn shard_ranges(windows: u64, shards: usize) -> Vec<(u64, u64)> {
    let shards = shards.max(1) as u64;
    (0..shards)
        .map(|i| (i * windows / shards, (i + 1) * windows / shards))
        .filter(|(a, b)| a < b)
        .collect()
}

/// The input with each byte bit-reversed and 16 zero bytes of padding.
///
/// Stream bit `t` sits at byte `t / 8`, bit position `t % 8` (LSB
/// first), so the value of any window up to 96 bits is one unaligned
/// little-endian 16-byte load, a shift, and a mask.
struct ReversedBits {
    bytes: Vec<u8>,
    len_bits: usize,
}

impl ReversedBits {
    fn new(input: &BitString) -> Self {
        let mut bytes = Vec::with_capacity(input.as_bytes().len() + 16);
        bytes.extend(input.as_bytes().iter().map(|b| b.reverse_bits()));
        bytes.resize(bytes.len() + 16, 0);
        Self {
            bytes,
            len_bits: input.len(),
        }
    }

    #[inline]
    fn bit(&self, t: usize) -> u64 {
        ((self.bytes[t >> 3] >> (t & 7)) & 1) as u64
    }

    /// Window value with stream order as little-endian significance.
    /// Requires `len <= 96` so shift plus length fit in the load.
    #[inline]
    fn load_window(&self, offset: usize, len: usize) -> u128 {
        debug_assert!(len <= 96);
        debug_assert!(offset + len <= self.len_bits);
        let byte = offset >> 3;
        let raw = u128::from_le_bytes(self.bytes[byte..byte + 16].try_into().unwrap());
        (raw >> (offset & 7)) & (u128::MAX >> (128 - len))
    }

    /// Low 16 bits of the window at `offset` (caller masks).
    #[inline]
    fn load_low(&self, offset: usize) -> u64 {
        let byte = offset >> 3;
        let raw = u16::from_le_bytes([self.bytes[byte], self.bytes[byte + 1]]);
        (raw >> (offset & 7)) as u64
    }
}

/// Precomputed per-composite digit machinery.
///
/// The base `b = n - 1` is even, so split `b = 2^e * q` with `q` odd.
/// The low digit of a window value `V` is recovered without touching the
/// full window: `V mod 2^e` is a bit-field load and `V mod q` rolls
/// along the stream (2 is invertible mod odd q); a CRT table combines
/// them. Only windows whose first digit is a liar load the full value.
struct ScanTables {
    /// Bit d set when base 1 + d is an E-liar (base <= 48 fits u64).
    liar_mask: u64,
    base: u64,
    /// Power-of-two part: digit bits and mask.
    e: u32,
    emask: u64,
    /// Odd part; q == 1 means digits are pure bit slices.
    q: u64,
    /// crt[(lo * q) + rq] = unique d in [0, b) with d = lo (mod 2^e),
    /// d = rq (mod q); empty when q == 1.
    crt: Vec<u16>,
    /// rq_step[rq * 4 + old * 2 + new] = residue after the window drops
    /// `old` and gains `new` at the top; empty when q == 1.
    rq_step: Vec<u8>,
}

impl ScanTables {
    fn new(profile: &CompositeProfile) -> Self {
        let base = profile.base();
        let e = base.trailing_zeros();
        let q = base >> e;
        let mut liar_mask = 0u64;
        for d in 0..base {
            if profile.digit_is_liar(d) {
                liar_mask |= 1 << d;
            }
        }
        let mut crt = Vec::new();
        let mut rq_step = Vec::new();
        if q > 1 {
            crt = vec![0u16; base as usize];
            for d in 0..base {
                let lo = d & ((1 << e) - 1);
                let rq = d % q;
                crt[(lo * q + rq) as usize] = d as u16;
            }
            let inv2 = q.div_ceil(2); // inverse of 2 modulo odd q
            let pow2_m1 = pow2_mod(profile.m as u64 - 1, q);
            rq_step = vec![0u8; q as usize * 4];
            for rq in 0..q {
                for old in 0..2u64 {
                    for new in 0..2u64 {
                        // rq' = ((rq - old) / 2 + new * 2^(m-1)) mod q
                        let t = (rq + q - old) % q;
                        let next = (t * inv2 + new * pow2_m1) % q;
                        rq_step[(rq * 4 + old * 2 + new) as usize] = next as u8;
                    }
                }
            }
        }
        Self {
            liar_mask,
            base,
            e,
            emask: (1 << e) - 1,
            q,
            crt,
            rq_step,
        }
    }

    #[inline]
    fn digit_is_liar(&self, d: u64) -> bool {
        (self.liar_mask >> d) & 1 == 1
    }
}

fn scan_shard(
    reversed: &ReversedBits,
    profile: &CompositeProfile,
    tables: &ScanTables,
    step: usize,
    (w_start, w_end): (u64, u64),
    record_positions: Option<usize>,
) -> (u64, Vec<u64>) {
    debug_assert!(profile.m <= 128, "wide profiles use the big-window path");
    let m = profile.m;
    let mut count = 0u64;
    let mut positions = Vec::new();
    let cap = record_positions.unwrap_or(0);
    let mut offset = w_start as usize * step;
    let rolling = step == 1 && tables.q > 1;
    let mut rq = if rolling {
        (reversed.load_window(offset, m) % tables.q as u128) as u64
    } else {
        0
    };

    for w in w_start..w_end {
        if w != w_start {
            if rolling {
                let old = reversed.bit(offset);
                let new = reversed.bit(offset + m);
                rq = tables.rq_step[(rq as usize) << 2 | (old as usize) << 1 | new as usize]
                    as u64;
            }
            offset += step;
        }
        let d0 = if tables.q == 1 {
            reversed.load_low(offset) & tables.emask
        } else {
            let rq_here = if rolling {
                rq
            } else {
                (reversed.load_window(offset, m) % tables.q as u128) as u64
            };
            let lo = reversed.load_low(offset) & tables.emask;
            tables.crt[(lo * tables.q + rq_here) as usize] as u64
        };
        if !tables.digit_is_liar(d0) {
            continue;
        }
        if z_liar_remaining_digits(reversed.load_window(offset, m), profile, tables) {
            count += 1;
            if positions.len() < cap {
                positions.push(offset as u64);
            }
        }
    }
    (count, positions)
}

/// Checks digits d_1 .. d_{k-1} of window value `v` (d_0 already passed).
#[inline]
fn z_liar_remaining_digits(v: u128, profile: &CompositeProfile, tables: &ScanTables) -> bool {
    if tables.q == 1 {
        // Digits are e-bit slices of the window value.
        let mut rest = v >> tables.e;
        for _ in 1..profile.k {
            if rest == 0 {
                return true;
            }
            if !tables.digit_is_liar(rest as u64 & tables.emask) {
                return false;
            }
            rest >>= tables.e;
        }
        return true;
    }
    let base = tables.base as u128;
    let mut rest = v / base;
    for _ in 1..profile.k {
        if rest == 0 {
            // All remaining digits are 0; base 1 is a trivial liar.
            return true;
        }
        if !tables.digit_is_liar((rest % base) as u64) {
            return false;
        }
        rest /= base;
    }
    true
}

/// `2^exp mod q` for small odd q.
fn pow2_mod(exp: u64, q: u64) -> u64 {
    let mut result = 1u64;
    let mut base = 2u64 % q;
    let mut exp = exp;
    while exp > 0 {
        if exp & 1 == 1 {
            result = result * base % q;
        }
        base = base * base % q;
        exp >>= 1;
    }
    result
}

/// Recompute-everything implementations used as test oracles and as the
/// fallback for profiles wider than 128 bits. Exponentially slower than
/// the scanner: every window is converted through arbitrary-precision
/// arithmetic and every base re-tested with the full witness predicate.
pub mod reference {
    use super::*;

    /// Z-predicate from first principles: digit count found by scanning
    /// powers, digits by repeated division, bases tested with the
    /// arbitrary-precision witness predicate.
    pub fn z_predicate(s: &BitString, n: u64) -> Result<bool, ScanError> {
        let m = s.len();
        let base = BigUint::from(n - 1);
        let limit = (BigUint::from(1u32) << m) - 1u32;
        let mut pow = base.clone();
        let mut k = 0usize;
        while pow <= limit {
            pow *= &base;
            k += 1;
        }
        let big_n = BigUint::from(n);
        let one = BigUint::from(1u32);
        let mut value = s.window_value_big(0, m);
        for _ in 0..k {
            let digit = &value % &base;
            if numth::ss_witness(&(digit + &one), &big_n)? {
                return Ok(false);
            }
            value /= &base;
        }
        Ok(true)
    }

    /// Window-by-window scan built on [`z_predicate`].
    pub fn scan(
        input: &BitString,
        composites: &[u64],
        step: usize,
        source_id: &str,
    ) -> Result<ZScanReport, ScanError> {
        if composites.is_empty() {
            return Err(ScanError::EmptyComposites);
        }
        if step == 0 {
            return Err(ScanError::InvalidStep);
        }
        let mut per_composite = BTreeMap::new();
        for &n in composites {
            let profile = composite_profile(n)?;
            let mut count = 0u64;
            let mut positions = Vec::new();
            let mut offset = 0usize;
            while offset + profile.m <= input.len() {
                let window = window_bits(input, offset, profile.m);
                if z_predicate(&window, n)? {
                    count += 1;
                    positions.push(offset as u64);
                }
                offset += step;
            }
            per_composite.insert(
                n,
                CompositeScan {
                    zliar_count: count,
                    positions: Some(positions),
                },
            );
        }
        let average_metric = per_composite
            .values()
            .map(|c| c.zliar_count as f64)
            .sum::<f64>()
            / per_composite.len() as f64;
        Ok(ZScanReport {
            source_id: source_id.to_string(),
            input_length: input.len() as u64,
            offset_step: step as u64,
            per_composite,
            average_metric,
        })
    }

    fn window_bits(input: &BitString, offset: usize, m: usize) -> BitString {
        BitString::from_bits((0..m).map(|t| input.bit(offset + t)))
    }
}
