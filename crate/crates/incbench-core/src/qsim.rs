//! Simulation of the qutrit measurement protocols.
//!
//! A spin-1 source prepares an `S_z` eigenstate, the measurement is
//! rotated into the `S_x` eigenbasis, and the readout assigns one of the
//! three transmon levels, possibly misclassified according to a
//! row-stochastic confusion matrix. The assigned level is mapped to a
//! trit symbol by the protocol's outcome map.
//!
//! Basis conventions: state vectors are written in the `S_z` eigenbasis
//! ordered (+1, 0, -1); the rows of the measurement unitary are the
//! `S_x` eigenstates in the same (+1, 0, -1) order.
//!
//! The simulator is a model, not a QRNG: all sampling consumes a seeded
//! SHA3 counter stream, so every run is reproducible from its seed.

use std::f64::consts::SQRT_2;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitio::{self, BitIoError, BitSource, Sidecar, TritString};
use crate::sources::HashCtr;

#[derive(Debug, Error)]
pub enum QsimError {
    #[error("state vector norm deviates from 1 by {0:e}")]
    NotNormalized(f64),
    #[error("matrix is not unitary: residual {0:e}")]
    NotUnitary(f64),
    #[error("confusion matrix invalid: {0}")]
    BadConfusion(String),
    #[error(transparent)]
    BitIo(#[from] BitIoError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("recalibration failed {attempts} times before file {file_index}; giving up")]
    CalibrationExhausted { file_index: u32, attempts: u32 },
}

const NORM_TOL: f64 = 1e-12;

/// Three-component complex state vector, unit norm within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct QutritState {
    amplitudes: [Complex64; 3],
}

impl QutritState {
    pub fn new(amplitudes: [Complex64; 3]) -> Result<Self, QsimError> {
        let norm2: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(QsimError::NotNormalized((norm2 - 1.0).abs()));
        }
        Ok(Self { amplitudes })
    }

    /// Basis state `|i>` of the S_z eigenbasis (+1, 0, -1 ordering).
    pub fn basis(i: usize) -> Self {
        let mut amplitudes = [Complex64::ZERO; 3];
        amplitudes[i] = Complex64::ONE;
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &[Complex64; 3] {
        &self.amplitudes
    }

    /// The same physical state with a global phase applied.
    pub fn with_global_phase(&self, theta: f64) -> Self {
        let phase = Complex64::from_polar(1.0, theta);
        Self {
            amplitudes: self.amplitudes.map(|a| a * phase),
        }
    }
}

/// 3x3 complex matrix, unitary within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary3 {
    entries: [[Complex64; 3]; 3],
}

impl Unitary3 {
    pub fn new(entries: [[Complex64; 3]; 3]) -> Result<Self, QsimError> {
        let u = Self { entries };
        let residual = u.unitarity_residual();
        if residual > NORM_TOL {
            return Err(QsimError::NotUnitary(residual));
        }
        Ok(u)
    }

    pub fn identity() -> Self {
        let mut entries = [[Complex64::ZERO; 3]; 3];
        for (i, row) in entries.iter_mut().enumerate() {
            row[i] = Complex64::ONE;
        }
        Self { entries }
    }

    pub fn entries(&self) -> &[[Complex64; 3]; 3] {
        &self.entries
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row][col]
    }

    /// Max entry-wise deviation of `U * U^dagger` from the identity.
    pub fn unitarity_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = Complex64::ZERO;
                for k in 0..3 {
                    acc += self.entries[i][k] * self.entries[j][k].conj();
                }
                let expect = if i == j { Complex64::ONE } else { Complex64::ZERO };
                worst = worst.max((acc - expect).norm());
            }
        }
        worst
    }

    pub fn mul(&self, rhs: &Unitary3) -> Unitary3 {
        let mut entries = [[Complex64::ZERO; 3]; 3];
        for (i, row) in entries.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                for k in 0..3 {
                    *slot += self.entries[i][k] * rhs.entries[k][j];
                }
            }
        }
        Unitary3 { entries }
    }

    pub fn apply(&self, state: &QutritState) -> [Complex64; 3] {
        let mut out = [Complex64::ZERO; 3];
        for (i, slot) in out.iter_mut().enumerate() {
            for k in 0..3 {
                *slot += self.entries[i][k] * state.amplitudes[k];
            }
        }
        out
    }

    /// Max entry-wise distance to `rhs` after removing the best global
    /// phase, returned with the phase used.
    pub fn distance_up_to_phase(&self, rhs: &Unitary3) -> (f64, f64) {
        // Align on the largest-magnitude entry of rhs.
        let mut best = (0usize, 0usize);
        let mut best_mag = -1.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let mag = rhs.entries[i][j].norm();
                if mag > best_mag {
                    best_mag = mag;
                    best = (i, j);
                }
            }
        }
        let phase = (self.entries[best.0][best.1] / rhs.entries[best.0][best.1]).arg();
        let rot = Complex64::from_polar(1.0, phase);
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.entries[i][j] - rot * rhs.entries[i][j]).norm());
            }
        }
        (worst, phase)
    }
}

/// The measurement unitary for the spin-1 `S_x` operator:
/// rows are the `S_x` eigenstates (+1, 0, -1) expressed in the `S_z`
/// basis (+1, 0, -1).
pub fn u_x() -> Unitary3 {
    let h = 0.5;
    let s = SQRT_2 / 2.0;
    let re = |x: f64| Complex64::new(x, 0.0);
    Unitary3 {
        entries: [
            [re(h), re(s), re(h)],
            [re(s), re(0.0), re(-s)],
            [re(h), re(-s), re(h)],
        ],
    }
}

/// The four two-dimensional transformations whose product realises
/// `u_x`, in application order for a lossless-beam-splitter network
/// (the product of the list, left to right, equals `u_x`).
pub fn u_x_factors() -> [Unitary3; 4] {
    let c = Complex64::new;
    let a = 1.0 / 3.0f64.sqrt(); // 1/sqrt(3)
    let b = (2.0 / 3.0f64).sqrt(); // sqrt(2/3)
    let h = 0.5;
    let s3h = 3.0f64.sqrt() / 2.0; // sqrt(3)/2
    [
        Unitary3 {
            entries: [
                [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
                [c(0.0, 0.0), c(0.0, -1.0), c(0.0, 0.0)],
                [c(0.0, 0.0), c(0.0, 0.0), c(0.0, -1.0)],
            ],
        },
        Unitary3 {
            entries: [
                [c(a, 0.0), c(b, 0.0), c(0.0, 0.0)],
                [c(0.0, b), c(0.0, -a), c(0.0, 0.0)],
                [c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
            ],
        },
        Unitary3 {
            entries: [
                [c(s3h, 0.0), c(0.0, 0.0), c(0.0, -h)],
                [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
                [c(0.0, h), c(0.0, 0.0), c(-s3h, 0.0)],
            ],
        },
        Unitary3 {
            entries: [
                [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
                [c(0.0, 0.0), c(a, 0.0), c(b, 0.0)],
                [c(0.0, 0.0), c(0.0, b), c(0.0, -a)],
            ],
        },
    ]
}

/// Numerical report on `u_x` and its four-factor decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub unitarity_residual: f64,
    pub factor_unitarity_residuals: [f64; 4],
    /// Max entry-wise |product - u_x| with no phase adjustment.
    pub product_residual: f64,
    /// Max entry-wise |product - e^{i phase} u_x| at the best phase.
    pub product_residual_mod_phase: f64,
    pub global_phase: f64,
}

/// Multiplies the printed factors and measures how far the product is
/// from `u_x`, both directly and up to a global phase.
pub fn decomposition_report() -> DecompositionReport {
    let target = u_x();
    let factors = u_x_factors();
    let product = factors
        .iter()
        .skip(1)
        .fold(factors[0].clone(), |acc, f| acc.mul(f));
    let mut direct = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            direct = direct.max((product.entries[i][j] - target.entries[i][j]).norm());
        }
    }
    let (mod_phase, phase) = product.distance_up_to_phase(&target);
    DecompositionReport {
        unitarity_residual: target.unitarity_residual(),
        factor_unitarity_residuals: [
            factors[0].unitarity_residual(),
            factors[1].unitarity_residual(),
            factors[2].unitarity_residual(),
            factors[3].unitarity_residual(),
        ],
        product_residual: direct,
        product_residual_mod_phase: mod_phase,
        global_phase: phase,
    }
}

/// Born-rule outcome probabilities `|(U psi)_j|^2`.
pub fn born_probs(state: &QutritState, u: &Unitary3) -> [f64; 3] {
    let amp = u.apply(state);
    [amp[0].norm_sqr(), amp[1].norm_sqr(), amp[2].norm_sqr()]
}

/// Eigenvalue labels of the spin-1 operators, in vector-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpinEigen {
    Plus,
    Zero,
    Minus,
}

impl SpinEigen {
    /// Index in the (+1, 0, -1) vector ordering.
    pub fn index(self) -> usize {
        match self {
            SpinEigen::Plus => 0,
            SpinEigen::Zero => 1,
            SpinEigen::Minus => 2,
        }
    }
}

/// Which protocol realisation is being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolVariant {
    Fig1,
    Fig2,
}

impl ProtocolVariant {
    pub fn spec(self) -> ProtocolSpec {
        match self {
            ProtocolVariant::Fig1 => ProtocolSpec::fig1(),
            ProtocolVariant::Fig2 => ProtocolSpec::fig2(),
        }
    }
}

/// Full description of one protocol realisation.
///
/// `encoding` maps the prepared `S_z` eigenstates (-1, 0, +1 in that
/// order) to transmon levels; the level encoding 0 is the one prepared
/// by cooling. `sx_assignment` maps each transmon level, as read out
/// after the measurement rotations, to the `S_x` outcome it registers.
/// `outcome_map` maps the read-out level to the trit symbol recorded in
/// the data stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub variant: ProtocolVariant,
    pub encoding: [u8; 3],
    pub sx_assignment: [SpinEigen; 3],
    pub outcome_map: [u8; 3],
}

impl ProtocolSpec {
    pub fn fig1() -> Self {
        Self {
            variant: ProtocolVariant::Fig1,
            // {z-1, z0, z+1} -> {2, 0, 1}
            encoding: [2, 0, 1],
            // levels {0, 1, 2} -> {x+1, x-1, x0}
            sx_assignment: [SpinEigen::Plus, SpinEigen::Minus, SpinEigen::Zero],
            // branch labels: x+1 -> 1, x-1 -> 0, x0 -> 2 (never taken
            // without readout noise)
            outcome_map: [1, 0, 2],
        }
    }

    pub fn fig2() -> Self {
        Self {
            variant: ProtocolVariant::Fig2,
            // {z-1, z0, z+1} -> {1, 2, 0}
            encoding: [1, 2, 0],
            // levels {0, 1, 2} -> {x0, x-1, x+1}
            sx_assignment: [SpinEigen::Zero, SpinEigen::Minus, SpinEigen::Plus],
            // branch labels: x+1 -> 0, x0 -> 1, x-1 -> 2
            outcome_map: [1, 2, 0],
        }
    }

    /// The `S_z` eigenstate prepared by cooling to level 0.
    pub fn prepared_eigenstate(&self) -> SpinEigen {
        // encoding lists (z-1, z0, z+1); find the one assigned level 0.
        let pos = self
            .encoding
            .iter()
            .position(|&level| level == 0)
            .expect("encoding is a bijection");
        [SpinEigen::Minus, SpinEigen::Zero, SpinEigen::Plus][pos]
    }

    pub fn prepared_state(&self) -> QutritState {
        QutritState::basis(self.prepared_eigenstate().index())
    }

    /// Probability that the ideal (noise-free) readout assigns each
    /// transmon level, for the protocol's prepared state.
    pub fn ideal_level_probs(&self) -> [f64; 3] {
        let born = born_probs(&self.prepared_state(), &u_x());
        let mut p = [0.0f64; 3];
        for level in 0..3 {
            p[level] = born[self.sx_assignment[level].index()];
        }
        p
    }

    /// True when both `encoding` and `outcome_map` are bijections on
    /// {0, 1, 2}.
    pub fn is_well_formed(&self) -> bool {
        let bij = |m: &[u8; 3]| {
            let mut seen = [false; 3];
            m.iter().all(|&v| {
                (v as usize) < 3 && !std::mem::replace(&mut seen[v as usize], true)
            })
        };
        let mut seen_sx = [false; 3];
        bij(&self.encoding)
            && bij(&self.outcome_map)
            && self
                .sx_assignment
                .iter()
                .all(|s| !std::mem::replace(&mut seen_sx[s.index()], true))
    }
}

/// Row-stochastic readout confusion: `rows[prepared][assigned]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct ConfusionMatrix {
    rows: [[f64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self, QsimError> {
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > NORM_TOL {
                return Err(QsimError::BadConfusion(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(QsimError::BadConfusion(format!(
                    "row {i} has an entry outside [0, 1]"
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Default readout model: diagonal assignment fidelities
    /// (0.95, 0.88, 0.78), with misassignment mass directed toward
    /// lower levels (relaxation during readout), split 80/20 between
    /// the adjacent level and the rest. Level 0 has no lower level, so
    /// its leakage mirrors the same split upward.
    pub fn default_readout() -> Self {
        Self {
            rows: [
                [0.95, 0.04, 0.01],
                [0.12, 0.88, 0.0],
                [0.044, 0.176, 0.78],
            ],
        }
    }

    pub fn identity() -> Self {
        Self {
            rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64; 3] {
        &self.rows[i]
    }
}

impl TryFrom<[[f64; 3]; 3]> for ConfusionMatrix {
    type Error = String;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self, Self::Error> {
        ConfusionMatrix::new(rows).map_err(|e| e.to_string())
    }
}

impl From<ConfusionMatrix> for [[f64; 3]; 3] {
    fn from(m: ConfusionMatrix) -> Self {
        m.rows
    }
}

/// Categorical sampler over three outcomes driven by 32-bit draws.
///
/// Outcome j is chosen when the draw falls below the j-th cumulative
/// threshold scaled to 2^32. A point-mass distribution consumes no
/// randomness, so an identity confusion matrix reproduces the noise-free
/// stream bit for bit.
struct Categorical3 {
    thresholds: [u64; 3],
    point_mass: Option<u8>,
}

impl Categorical3 {
    fn new(probs: &[f64; 3]) -> Self {
        let point_mass = probs
            .iter()
            .position(|&p| p == 1.0)
            .map(|i| i as u8);
        let scale = (1u64 << 32) as f64;
        let c0 = probs[0];
        let c1 = probs[0] + probs[1];
        Self {
            thresholds: [
                (c0 * scale).round() as u64,
                (c1 * scale).round() as u64,
                1u64 << 32,
            ],
            point_mass,
        }
    }

    fn draw(&self, rng: &mut HashCtr) -> u8 {
        if let Some(fixed) = self.point_mass {
            return fixed;
        }
        let v = rng
            .next_bits(32)
            .expect("hash counter stream never exhausts");
        match self.thresholds.iter().position(|&t| v < t) {
            Some(j) => j as u8,
            None => 2,
        }
    }
}

/// Samples `count` trits from the protocol, reassigning each ideal
/// readout through the confusion row of its level when `noise` is given.
/// Deterministic for a given `(spec, noise, seed)`.
pub fn sample_trits(
    spec: &ProtocolSpec,
    noise: Option<&ConfusionMatrix>,
    count: usize,
    seed: u64,
) -> TritString {
    let mut rng = HashCtr::new(seed);
    let ideal = Categorical3::new(&spec.ideal_level_probs());
    let rows: Option<[Categorical3; 3]> = noise.map(|c| {
        [
            Categorical3::new(c.row(0)),
            Categorical3::new(c.row(1)),
            Categorical3::new(c.row(2)),
        ]
    });
    let mut out = TritString::new();
    for _ in 0..count {
        let level = ideal.draw(&mut rng);
        let assigned = match &rows {
            Some(rows) => rows[level as usize].draw(&mut rng),
            None => level,
        };
        out.push(spec.outcome_map[assigned as usize]);
    }
    out
}

/// Drift model for the generation loop: the scalar assignment fidelity
/// falls by a seeded random amount in `[0, 2 * step)` after each file
/// and is restored to `reset_fidelity` by a recalibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    pub initial_fidelity: f64,
    pub step: f64,
    pub reset_fidelity: f64,
}

impl DriftParams {
    pub fn disabled() -> Self {
        Self {
            initial_fidelity: DEFAULT_INITIAL_FIDELITY,
            step: 0.0,
            reset_fidelity: DEFAULT_INITIAL_FIDELITY,
        }
    }
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            initial_fidelity: DEFAULT_INITIAL_FIDELITY,
            step: 0.002,
            reset_fidelity: DEFAULT_INITIAL_FIDELITY,
        }
    }
}

/// Mean of the default readout's diagonal fidelities.
pub const DEFAULT_INITIAL_FIDELITY: f64 = 0.87;
/// Fidelity below which the loop recalibrates.
pub const FIDELITY_THRESHOLD: f64 = 0.86;
/// Recalibrations allowed within one recovery episode before giving up.
pub const MAX_RECALIBRATIONS: u32 = 5;
/// Default file count, mirroring the generation loop bound.
pub const DEFAULT_FILE_COUNT: u32 = 750;
/// Default symbols per file (2^26 repetitions).
pub const DEFAULT_SYMBOLS_PER_FILE: usize = 1 << 26;

/// Configuration for the generation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub protocol: ProtocolVariant,
    /// `None` simulates a perfect readout.
    pub noise: Option<ConfusionMatrix>,
    pub drift: DriftParams,
    pub files: u32,
    pub symbols_per_file: usize,
    pub seed: u64,
    /// Also write the morphism image of each trit file as `.rbf`.
    pub emit_bits: bool,
}

/// One recalibration event in the generation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationEvent {
    pub file_index: u32,
    pub attempt: u32,
    pub fidelity_before: f64,
}

/// Outcome of a generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub files_written: Vec<u32>,
    pub resumed_from: u32,
    pub recalibrations: Vec<RecalibrationEvent>,
    pub final_fidelity: f64,
}

/// Runs the generation loop, emulating the control flow of the hardware
/// procedure: files `random_<r>.rtf` are produced in sequence, fidelity
/// drifts downward between files, recalibration restores it, and more
/// than `MAX_RECALIBRATIONS` resets in one episode abort the run.
///
/// The run resumes after the last `random_<r>.rtf` already present in
/// `out_dir`; the replayed trajectory is deterministic in `seed`, so a
/// resumed run produces the same files as an uninterrupted one.
pub fn run_generation(
    config: &GenerationConfig,
    out_dir: impl AsRef<Path>,
) -> Result<GenerationLog, QsimError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let spec = config.protocol.spec();
    let resume_at = next_run_index(out_dir)?;
    let mut drift_rng = HashCtr::new(config.seed ^ 0x5f5f_5f5f_5f5f_5f5fu64);
    let mut fidelity = config.drift.initial_fidelity;
    let mut log = GenerationLog {
        files_written: Vec::new(),
        resumed_from: resume_at,
        recalibrations: Vec::new(),
        final_fidelity: fidelity,
    };
    for r in 0..config.files {
        // Recovery episode: recalibrate until above threshold or give up.
        let mut attempts = 0u32;
        while fidelity < FIDELITY_THRESHOLD {
            if attempts >= MAX_RECALIBRATIONS {
                return Err(QsimError::CalibrationExhausted {
                    file_index: r,
                    attempts,
                });
            }
            attempts += 1;
            log.recalibrations.push(RecalibrationEvent {
                file_index: r,
                attempt: attempts,
                fidelity_before: fidelity,
            });
            fidelity = config.drift.reset_fidelity;
        }
        if r >= resume_at {
            let trits = sample_trits(
                &spec,
                config.noise.as_ref(),
                config.symbols_per_file,
                config.seed.wrapping_add(r as u64),
            );
            let path = trit_file_path(out_dir, r);
            let sidecar = Sidecar {
                length_bits: trits.len() as u64,
                source: Some("qsim".into()),
                seed: Some(config.seed.wrapping_add(r as u64)),
                created: None,
                spec: Some(serde_json::to_value(config).expect("config serializes")),
            };
            bitio::write_rtf_with_sidecar(&path, &trits, sidecar)?;
            if config.emit_bits {
                let bits = bitio::morphism_phi(&trits);
                let bit_path = out_dir.join(format!("random_{r:03}.rbf"));
                bitio::write_rbf(bit_path, &bits)?;
            }
            log.files_written.push(r);
        }
        // Seeded downward walk: decrement uniform in [0, 2 * step).
        let u = drift_rng.next_bits(32).unwrap() as f64 / (1u64 << 32) as f64;
        fidelity -= 2.0 * config.drift.step * u;
    }
    log.final_fidelity = fidelity;
    let log_text = serde_json::to_string_pretty(&log).expect("log serializes");
    fs::write(out_dir.join("generation_log.json"), log_text + "\n")?;
    Ok(log)
}

fn trit_file_path(dir: &Path, r: u32) -> PathBuf {
    dir.join(format!("random_{r:03}.rtf"))
}

/// Index after the last `random_<r>.rtf` present, or 0 for a fresh dir.
fn next_run_index(dir: &Path) -> Result<u32, QsimError> {
    let mut max: Option<u32> = None;
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(num) = name
            .strip_prefix("random_")
            .and_then(|s| s.strip_suffix(".rtf"))
        {
            if let Ok(r) = num.parse::<u32>() {
                max = Some(max.map_or(r, |m| m.max(r)));
            }
        }
    }
    Ok(max.map_or(0, |m| m + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn u_x_entries_and_unitarity() {
        let u = u_x();
        assert_close(u.entry(0, 1).re, SQRT_2 / 2.0, 1e-15);
        assert_eq!(u.entry(0, 1).im, 0.0);
        assert!(u.unitarity_residual() < 1e-12);
    }

    #[test]
    fn factors_are_unitary_and_multiply_to_u_x() {
        let report = decomposition_report();
        for (i, r) in report.factor_unitarity_residuals.iter().enumerate() {
            assert!(*r < 1e-12, "factor {i} residual {r}");
        }
        assert!(
            report.product_residual_mod_phase < 1e-10,
            "residual {:e}",
            report.product_residual_mod_phase
        );
    }

    #[test]
    fn born_probs_for_prepared_states() {
        // S_z = +1 through the S_x splitter: (1/4, 1/2, 1/4).
        let p = born_probs(&QutritState::basis(0), &u_x());
        assert_close(p[0], 0.25, 1e-15);
        assert_close(p[1], 0.5, 1e-15);
        assert_close(p[2], 0.25, 1e-15);

        // S_z = 0: probability zero on the S_x = 0 branch.
        let p = born_probs(&QutritState::basis(1), &u_x());
        assert_close(p[0], 0.5, 1e-15);
        assert_close(p[1], 0.0, 1e-15);
        assert_close(p[2], 0.5, 1e-15);

        // Identity unitary on a basis state.
        let p = born_probs(&QutritState::basis(1), &Unitary3::identity());
        assert_eq!(p, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn born_probs_sum_to_one_and_ignore_global_phase() {
        let state = QutritState::new([
            Complex64::new(0.5, 0.1),
            Complex64::new(0.3, -0.2),
            Complex64::new(
                (1.0f64 - 0.26 - 0.13).sqrt(),
                0.0,
            ),
        ])
        .unwrap();
        let p = born_probs(&state, &u_x());
        assert_close(p.iter().sum::<f64>(), 1.0, 1e-12);
        let q = born_probs(&state.with_global_phase(1.234), &u_x());
        for j in 0..3 {
            assert_close(p[j], q[j], 1e-12);
        }
    }

    #[test]
    fn protocols_are_well_formed() {
        assert!(ProtocolSpec::fig1().is_well_formed());
        assert!(ProtocolSpec::fig2().is_well_formed());
        assert_eq!(ProtocolSpec::fig1().prepared_eigenstate(), SpinEigen::Zero);
        assert_eq!(ProtocolSpec::fig2().prepared_eigenstate(), SpinEigen::Plus);
    }

    #[test]
    fn ideal_level_probs_match_protocol() {
        // Fig2: level 0 reads the S_x = 0 branch.
        let p = ProtocolSpec::fig2().ideal_level_probs();
        assert_close(p[0], 0.5, 1e-15);
        assert_close(p[1], 0.25, 1e-15);
        assert_close(p[2], 0.25, 1e-15);

        let p = ProtocolSpec::fig1().ideal_level_probs();
        assert_close(p[0], 0.5, 1e-15);
        assert_close(p[1], 0.5, 1e-15);
        assert_close(p[2], 0.0, 1e-15);
    }

    #[test]
    fn fig2_trit_frequencies() {
        let n = 200_000usize;
        let trits = sample_trits(&ProtocolSpec::fig2(), None, n, 11);
        let mut counts = [0usize; 3];
        for t in trits.iter() {
            counts[t as usize] += 1;
        }
        let f: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        assert_close(f[0], 0.25, 0.01);
        assert_close(f[1], 0.5, 0.01);
        assert_close(f[2], 0.25, 0.01);
    }

    #[test]
    fn fig1_never_emits_the_zero_branch_trit() {
        let trits = sample_trits(&ProtocolSpec::fig1(), None, 50_000, 3);
        assert!(trits.iter().all(|t| t != 2));
    }

    #[test]
    fn identity_noise_reproduces_noise_free_stream() {
        let spec = ProtocolSpec::fig2();
        let clean = sample_trits(&spec, None, 10_000, 5);
        let ident = sample_trits(&spec, Some(&ConfusionMatrix::identity()), 10_000, 5);
        assert_eq!(clean, ident);
    }

    #[test]
    fn confusion_rows_validated() {
        assert!(ConfusionMatrix::new([[0.5, 0.5, 0.1], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(ConfusionMatrix::new([[1.5, -0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        let m = ConfusionMatrix::default_readout();
        for row in m.rows() {
            assert_close(row.iter().sum::<f64>(), 1.0, 1e-12);
        }
    }

    #[test]
    fn noisy_distribution_follows_confusion() {
        // With confusion C, level frequencies converge to p^T C.
        let spec = ProtocolSpec::fig2();
        let noise = ConfusionMatrix::default_readout();
        let ideal = spec.ideal_level_probs();
        let mut expect_level = [0.0f64; 3];
        for (i, pi) in ideal.iter().enumerate() {
            for (j, slot) in expect_level.iter_mut().enumerate() {
                *slot += pi * noise.row(i)[j];
            }
        }
        // Map level probabilities through the outcome map to trits.
        let mut expect_trit = [0.0f64; 3];
        for level in 0..3 {
            expect_trit[spec.outcome_map[level] as usize] += expect_level[level];
        }

        let n = 200_000usize;
        let trits = sample_trits(&spec, Some(&noise), n, 23);
        let mut counts = [0usize; 3];
        for t in trits.iter() {
            counts[t as usize] += 1;
        }
        for j in 0..3 {
            let f = counts[j] as f64 / n as f64;
            assert_close(f, expect_trit[j], 0.01);
        }
    }

    #[test]
    fn generation_without_drift_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let config = GenerationConfig {
            protocol: ProtocolVariant::Fig2,
            noise: Some(ConfusionMatrix::default_readout()),
            drift: DriftParams::disabled(),
            files: 3,
            symbols_per_file: 1 << 10,
            seed: 99,
            emit_bits: true,
        };
        let log = run_generation(&config, dir.path()).unwrap();
        assert_eq!(log.files_written, vec![0, 1, 2]);
        assert!(log.recalibrations.is_empty());
        for r in 0..3 {
            let t = bitio::read_rtf(dir.path().join(format!("random_{r:003}.rtf"))).unwrap();
            assert_eq!(t.len(), 1 << 10);
            let b = bitio::read_rbf(dir.path().join(format!("random_{r:003}.rbf"))).unwrap();
            assert_eq!(b, bitio::morphism_phi(&t));
        }
        assert!(dir.path().join("generation_log.json").exists());
    }

    #[test]
    fn generation_resumes_deterministically() {
        let full = tempfile::tempdir().unwrap();
        let split = tempfile::tempdir().unwrap();
        let mut config = GenerationConfig {
            protocol: ProtocolVariant::Fig2,
            noise: None,
            drift: DriftParams::default(),
            files: 4,
            symbols_per_file: 512,
            seed: 7,
            emit_bits: false,
        };
        run_generation(&config, full.path()).unwrap();

        config.files = 2;
        run_generation(&config, split.path()).unwrap();
        config.files = 4;
        let log = run_generation(&config, split.path()).unwrap();
        assert_eq!(log.resumed_from, 2);
        for r in 0..4 {
            let a = fs::read(full.path().join(format!("random_{r:03}.rtf"))).unwrap();
            let b = fs::read(split.path().join(format!("random_{r:03}.rtf"))).unwrap();
            assert_eq!(a, b, "file {r}");
        }
    }

    #[test]
    fn generation_fails_when_recalibration_cannot_recover() {
        let dir = tempfile::tempdir().unwrap();
        let config = GenerationConfig {
            protocol: ProtocolVariant::Fig2,
            noise: None,
            drift: DriftParams {
                initial_fidelity: 0.80,
                step: 0.0,
                reset_fidelity: 0.80, // stays below threshold
            },
            files: 2,
            symbols_per_file: 128,
            seed: 1,
            emit_bits: false,
        };
        let err = run_generation(&config, dir.path()).unwrap_err();
        match err {
            QsimError::CalibrationExhausted {
                file_index,
                attempts,
            } => {
                assert_eq!(file_index, 0);
                assert_eq!(attempts, MAX_RECALIBRATIONS);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn drift_triggers_recalibration_and_recovers() {
        let dir = tempfile::tempdir().unwrap();
        let config = GenerationConfig {
            protocol: ProtocolVariant::Fig2,
            noise: None,
            drift: DriftParams {
                initial_fidelity: 0.87,
                step: 0.01,
                reset_fidelity: 0.90,
            },
            files: 12,
            symbols_per_file: 64,
            seed: 3,
            emit_bits: false,
        };
        let log = run_generation(&config, dir.path()).unwrap();
        assert_eq!(log.files_written.len(), 12);
        assert!(
            !log.recalibrations.is_empty(),
            "downward walk should cross the threshold at least once"
        );
        for ev in &log.recalibrations {
            assert!(ev.fidelity_before < FIDELITY_THRESHOLD);
        }
    }
}
