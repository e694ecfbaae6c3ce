//! Deterministic reference bit sources used as comparison baselines.
//!
//! Every non-file source is a pure function of its spec and the requested
//! bit count: the same `SourceSpec` always yields a bit-identical stream,
//! and the `m`-bit output is a prefix of the `m'`-bit output for `m < m'`.
//! Parallel generation is achieved only by distinct seeds; streams are
//! never split.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha3::{Digest, Sha3_256};
use thiserror::Error;

use crate::bitio::{self, BitIoError, BitSource, BitString, Sidecar};
use crate::qsim::{self, ConfusionMatrix, ProtocolVariant, QsimError};

#[derive(Debug, Error)]
pub enum SourceError {
    #[error(transparent)]
    BitIo(#[from] BitIoError),
    #[error(transparent)]
    Qsim(#[from] QsimError),
    #[error("recorded file {path} holds {available} bits, {requested} requested")]
    InsufficientBits {
        path: String,
        available: u64,
        requested: u64,
    },
}

/// MT19937 with the standard 32-bit recurrence and tempering.
///
/// Words are emitted MSB-first when the generator is used as a bit or
/// byte stream, matching the `.rbf` packing convention.
pub struct Mt19937 {
    state: [u32; 624],
    index: usize,
    buffered: BufferedBits,
}

const MT_N: usize = 624;
const MT_M: usize = 397;
const MT_MATRIX_A: u32 = 0x9908_b0df;
const MT_UPPER: u32 = 0x8000_0000;
const MT_LOWER: u32 = 0x7fff_ffff;

impl Mt19937 {
    /// Seeds with the standard initialization. Seeds wider than 32 bits
    /// are reduced modulo 2^32, since the reference recurrence is seeded
    /// from a single word.
    pub fn new(seed: u64) -> Self {
        let mut state = [0u32; MT_N];
        state[0] = seed as u32;
        for i in 1..MT_N {
            state[i] = 1_812_433_253u32
                .wrapping_mul(state[i - 1] ^ (state[i - 1] >> 30))
                .wrapping_add(i as u32);
        }
        Self {
            state,
            index: MT_N,
            buffered: BufferedBits::new(),
        }
    }

    pub fn next_u32(&mut self) -> u32 {
        if self.index >= MT_N {
            self.twist();
        }
        let mut y = self.state[self.index];
        self.index += 1;
        y ^= y >> 11;
        y ^= (y << 7) & 0x9d2c_5680;
        y ^= (y << 15) & 0xefc6_0000;
        y ^= y >> 18;
        y
    }

    fn twist(&mut self) {
        for i in 0..MT_N {
            let x = (self.state[i] & MT_UPPER) | (self.state[(i + 1) % MT_N] & MT_LOWER);
            let mut x_a = x >> 1;
            if x & 1 != 0 {
                x_a ^= MT_MATRIX_A;
            }
            self.state[i] = self.state[(i + MT_M) % MT_N] ^ x_a;
        }
        self.index = 0;
    }
}

impl ByteStream for Mt19937 {
    fn next_chunk(&mut self) -> Vec<u8> {
        self.next_u32().to_be_bytes().to_vec()
    }

    fn buffer(&mut self) -> &mut BufferedBits {
        &mut self.buffered
    }
}

/// SHA3-256 counter generator: the stream is the concatenation of
/// digests of `seed (8 bytes BE) || counter (8 bytes BE)` for counter
/// 0, 1, 2, ...
pub struct HashCtr {
    seed: u64,
    counter: u64,
    buffered: BufferedBits,
}

impl HashCtr {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            buffered: BufferedBits::new(),
        }
    }
}

impl ByteStream for HashCtr {
    fn next_chunk(&mut self) -> Vec<u8> {
        let mut hasher = Sha3_256::new();
        hasher.update(self.seed.to_be_bytes());
        hasher.update(self.counter.to_be_bytes());
        self.counter += 1;
        hasher.finalize().to_vec()
    }

    fn buffer(&mut self) -> &mut BufferedBits {
        &mut self.buffered
    }
}

/// Byte-oriented core shared by the generators. `next_chunk` produces the
/// next block of the stream (a tempered word, a digest); the trait turns
/// that into bit- and byte-level access with MSB-first ordering.
pub trait ByteStream {
    fn next_chunk(&mut self) -> Vec<u8>;
    fn buffer(&mut self) -> &mut BufferedBits;

    /// Fills `out` with the next bytes of the stream.
    fn fill_bytes(&mut self, out: &mut [u8]) {
        assert_eq!(self.buffer().bit_pos, 0, "fill_bytes requires byte alignment");
        let mut written = 0;
        while written < out.len() {
            if self.buffer().is_drained() {
                let chunk = self.next_chunk();
                self.buffer().refill(chunk);
            }
            written += self.buffer().drain_into(&mut out[written..]);
        }
    }

    /// First `m` bits of the remaining stream as a packed string.
    fn take_bits(&mut self, m: usize) -> BitString {
        let mut bytes = vec![0u8; m.div_ceil(8)];
        self.fill_bytes(&mut bytes);
        let pad = 8 * bytes.len() - m;
        if pad > 0 {
            let last = bytes.last_mut().unwrap();
            *last &= 0xffu8 << pad;
        }
        BitString::from_bytes(bytes, m).expect("pad bits cleared")
    }
}

/// Bit-position bookkeeping over buffered stream bytes.
#[derive(Default)]
pub struct BufferedBits {
    bytes: Vec<u8>,
    byte_pos: usize,
    bit_pos: u8,
}

impl BufferedBits {
    fn new() -> Self {
        Self::default()
    }

    fn is_drained(&self) -> bool {
        self.byte_pos == self.bytes.len()
    }

    fn refill(&mut self, chunk: Vec<u8>) {
        debug_assert!(self.is_drained());
        self.bytes = chunk;
        self.byte_pos = 0;
    }

    fn drain_into(&mut self, out: &mut [u8]) -> usize {
        let n = (self.bytes.len() - self.byte_pos).min(out.len());
        out[..n].copy_from_slice(&self.bytes[self.byte_pos..self.byte_pos + n]);
        self.byte_pos += n;
        n
    }

    fn next_bit_from<S: ByteStream + ?Sized>(stream: &mut S) -> bool {
        if stream.buffer().is_drained() {
            let chunk = stream.next_chunk();
            stream.buffer().refill(chunk);
        }
        let buf = stream.buffer();
        let byte = buf.bytes[buf.byte_pos];
        let bit = (byte >> (7 - buf.bit_pos)) & 1 == 1;
        buf.bit_pos += 1;
        if buf.bit_pos == 8 {
            buf.bit_pos = 0;
            buf.byte_pos += 1;
        }
        bit
    }
}

impl BitSource for Mt19937 {
    fn next_bit(&mut self) -> Option<bool> {
        Some(BufferedBits::next_bit_from(self))
    }
}

impl BitSource for HashCtr {
    fn next_bit(&mut self) -> Option<bool> {
        Some(BufferedBits::next_bit_from(self))
    }
}

/// First `m` bits of the MT19937 word stream for `seed`.
pub fn mt19937_bits(seed: u64, m: usize) -> BitString {
    Mt19937::new(seed).take_bits(m)
}

/// First `m` bits of the SHA3-256 counter stream for `seed`.
pub fn hashctr_bits(seed: u64, m: usize) -> BitString {
    HashCtr::new(seed).take_bits(m)
}

/// Fully deterministic description of a bit source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceSpec {
    Mt19937 {
        seed: u64,
    },
    HashCtr {
        seed: u64,
    },
    Champernowne,
    File {
        path: PathBuf,
    },
    Qsim {
        protocol: ProtocolVariant,
        #[serde(default)]
        noise: NoiseSetting,
        seed: u64,
    },
}

/// Readout noise selection for the simulated qutrit source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSetting {
    #[default]
    Default,
    None,
    Custom(ConfusionMatrix),
}

impl NoiseSetting {
    pub fn matrix(&self) -> Option<ConfusionMatrix> {
        match self {
            NoiseSetting::Default => Some(ConfusionMatrix::default_readout()),
            NoiseSetting::None => None,
            NoiseSetting::Custom(m) => Some(m.clone()),
        }
    }
}

impl SourceSpec {
    pub fn kind_label(&self) -> &'static str {
        match self {
            SourceSpec::Mt19937 { .. } => "mt19937",
            SourceSpec::HashCtr { .. } => "hashctr",
            SourceSpec::Champernowne => "champernowne",
            SourceSpec::File { .. } => "file",
            SourceSpec::Qsim { .. } => "qsim",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            SourceSpec::Mt19937 { seed }
            | SourceSpec::HashCtr { seed }
            | SourceSpec::Qsim { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    /// Materializes the first `m` bits of the source.
    pub fn bits(&self, m: usize) -> Result<BitString, SourceError> {
        match self {
            SourceSpec::Mt19937 { seed } => Ok(mt19937_bits(*seed, m)),
            SourceSpec::HashCtr { seed } => Ok(hashctr_bits(*seed, m)),
            SourceSpec::Champernowne => Ok(bitio::champernowne(m)),
            SourceSpec::File { path } => {
                let bits = bitio::read_rbf(path)?;
                if bits.len() < m {
                    return Err(SourceError::InsufficientBits {
                        path: path.display().to_string(),
                        available: bits.len() as u64,
                        requested: m as u64,
                    });
                }
                Ok(bits.prefix(m))
            }
            SourceSpec::Qsim {
                protocol,
                noise,
                seed,
            } => {
                let spec = protocol.spec();
                let trits = qsim::sample_trits(&spec, noise.matrix().as_ref(), m, *seed);
                Ok(bitio::morphism_phi(&trits))
            }
        }
    }
}

/// Generates `m` bits from `spec` and writes them as `out` (`.rbf` plus
/// sidecar recording the resolved spec).
pub fn generate(spec: &SourceSpec, m: usize, out: impl AsRef<Path>) -> Result<(), SourceError> {
    let bits = spec.bits(m)?;
    let sidecar = Sidecar {
        length_bits: m as u64,
        source: Some(spec.kind_label().to_string()),
        seed: spec.seed(),
        created: None,
        spec: Some(serde_json::to_value(spec).expect("spec serializes")),
    };
    bitio::write_rbf_with_sidecar(out, &bits, sidecar)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mt19937_known_answers() {
        // First tempered outputs for the reference default seed.
        let mut mt = Mt19937::new(5489);
        let expect = [
            3499211612u32,
            581869302,
            3890346734,
            3586334585,
            545404204,
            4161255391,
            3922919429,
            949333985,
            2715962298,
            1323567403,
        ];
        for (i, &want) in expect.iter().enumerate() {
            assert_eq!(mt.next_u32(), want, "output {i}");
        }
    }

    #[test]
    fn mt19937_word_serialization_msb_first() {
        let bits = mt19937_bits(5489, 32);
        let word = 3499211612u32;
        assert_eq!(bits.as_bytes(), word.to_be_bytes());
    }

    #[test]
    fn sha3_256_known_answer_empty_input() {
        // NIST FIPS 202 test vector for SHA3-256 of the empty message.
        let digest = Sha3_256::digest([]);
        assert_eq!(
            hex(&digest),
            "a7ffc6f8bf1ed76651c14756a061d662f580ff4de43b49fa82d80a4b80f8434a"
        );
    }

    #[test]
    fn hashctr_first_block_is_seed_counter_digest() {
        let bits = hashctr_bits(7, 256);
        let mut hasher = Sha3_256::new();
        hasher.update(7u64.to_be_bytes());
        hasher.update(0u64.to_be_bytes());
        assert_eq!(bits.as_bytes(), hasher.finalize().as_slice());
    }

    #[test]
    fn hashctr_seeds_diverge_in_first_block() {
        let a = hashctr_bits(0, 256);
        let b = hashctr_bits(1, 256);
        assert_ne!(a, b);
    }

    #[test]
    fn generators_are_deterministic_and_prefix_closed() {
        for spec in [
            SourceSpec::Mt19937 { seed: 42 },
            SourceSpec::HashCtr { seed: 42 },
            SourceSpec::Champernowne,
        ] {
            let long = spec.bits(4096).unwrap();
            let again = spec.bits(4096).unwrap();
            assert_eq!(long, again, "{spec:?}");
            for m in [0usize, 1, 31, 32, 33, 255, 256, 4095] {
                assert_eq!(long.prefix(m), spec.bits(m).unwrap(), "{spec:?} m={m}");
            }
        }
    }

    #[test]
    fn monobit_sanity_at_2_20() {
        for spec in [
            SourceSpec::Mt19937 { seed: 1 },
            SourceSpec::HashCtr { seed: 1 },
        ] {
            let m = 1usize << 20;
            let bits = spec.bits(m).unwrap();
            let frac = bits.count_ones() as f64 / m as f64;
            assert!((frac - 0.5).abs() < 0.005, "{spec:?}: ones fraction {frac}");
        }
    }

    #[test]
    fn bit_source_agrees_with_take_bits() {
        let reference = mt19937_bits(9, 100);
        let mut gen = Mt19937::new(9);
        let streamed: Vec<u8> = (0..100).map(|_| gen.next_bit().unwrap() as u8).collect();
        assert_eq!(BitString::from_bits(streamed), reference);
    }

    #[test]
    fn generate_writes_file_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.rbf");
        let spec = SourceSpec::Champernowne;
        generate(&spec, 6, &path).unwrap();
        let bits = bitio::read_rbf(&path).unwrap();
        assert_eq!(bits.to_string(), "010001");

        // file kind copies byte-identically at full length
        let copy = dir.path().join("copy.rbf");
        generate(&SourceSpec::File { path: path.clone() }, 6, &copy).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&copy).unwrap());

        // asking for more bits than recorded is an error
        let err = generate(&SourceSpec::File { path }, 7, dir.path().join("x.rbf"));
        assert!(matches!(err, Err(SourceError::InsufficientBits { .. })));
    }

    fn hex(bytes: &[u8]) -> String {
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }
}
