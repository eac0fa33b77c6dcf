//! Monte Carlo execution of compiled programs.
//!
//! Three interchangeable execution paths:
//!
//! - [`run_shots`]: the production engine. One noiseless tableau pass
//!   records a reference outcome per measurement plus, for outcomes that are
//!   random, the pre-collapse stabilizer that maps one branch onto the
//!   other. Shots then reduce to Pauli-frame propagation, processed 64 per
//!   machine word. A random-reference measurement draws one fresh word of
//!   randomness and multiplies the recorded collapse operator into the
//!   frames of the drawn lanes, which reproduces collapse correlations
//!   exactly for Clifford circuits with Pauli noise.
//! - [`run_shots_tableau`]: one full tableau simulation per shot. Slow path
//!   used to cross-check the frame engine.
//! - [`dense_reference_run`] / [`exact_distribution`]: state-vector
//!   trajectories and exact density-matrix branch enumeration for programs
//!   on few elements; the independent oracle.
//!
//! Randomness is counter-based: every block of 64 shots (or every shot, for
//! the per-shot engines) owns a ChaCha stream derived from the master seed
//! and the block/shot index, so results are independent of thread count and
//! execution order.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::circuit::{CircuitProgram, InstructionKind, MeasLabel, MeasTag, StabKind};
use crate::code::Basis;
use crate::dense::{DensityMatrix, StateVector, MAX_DENSE_ELEMENTS};
use crate::gate::Gate;
use crate::noise::NoiseEvent;
use crate::pauli::{PauliKind, PauliString};
use crate::tableau::Tableau;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("program uses {0} elements; this engine supports at most 64")]
    TooManyElements(usize),
    #[error("dense execution supports at most {MAX_DENSE_ELEMENTS} elements, got {0}")]
    TooManyForDense(usize),
    #[error("batch I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a shot-batch container (bad magic or version)")]
    BadContainer,
}

/// One shot's measurement record, split by tag family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRecord {
    pub shot: usize,
    pub ancilla_x: Vec<bool>,
    pub ancilla_z: Vec<bool>,
    pub data: [bool; 4],
    pub basis: Basis,
}

/// Bit-packed measurement outcomes for a batch of shots, column-major by
/// measurement tag for fast post-selection scans.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotBatch {
    pub schema: Vec<MeasTag>,
    pub shots: usize,
    pub basis: Basis,
    pub cycles: usize,
    pub program_digest: [u8; 32],
    pub master_seed: u64,
    words_per_tag: usize,
    bits: Vec<u64>,
    ax_tags: Vec<usize>,
    az_tags: Vec<usize>,
    data_tags: [usize; 4],
}

impl ShotBatch {
    fn new(program: &CircuitProgram, shots: usize, seed: u64) -> Self {
        let words = shots.div_ceil(64);
        let schema = program.schema.clone();
        let ax_tags = program.ancilla_tag_indices(StabKind::X);
        let az_tags = program.ancilla_tag_indices(StabKind::Z);
        let data_tags = program.data_tag_indices();
        Self {
            shots,
            basis: program.basis,
            cycles: program.meta.cycles,
            program_digest: program.digest(),
            master_seed: seed,
            words_per_tag: words,
            bits: vec![0u64; schema.len() * words],
            schema,
            ax_tags,
            az_tags,
            data_tags,
        }
    }

    pub fn words_per_tag(&self) -> usize {
        self.words_per_tag
    }

    /// Packed outcome column of one measurement tag (bit s = shot s).
    pub fn column(&self, tag: usize) -> &[u64] {
        &self.bits[tag * self.words_per_tag..(tag + 1) * self.words_per_tag]
    }

    pub fn bit(&self, tag: usize, shot: usize) -> bool {
        (self.column(tag)[shot / 64] >> (shot % 64)) & 1 == 1
    }

    pub fn ancilla_tags(&self, stab: StabKind) -> &[usize] {
        match stab {
            StabKind::X => &self.ax_tags,
            StabKind::Z => &self.az_tags,
        }
    }

    pub fn data_tags(&self) -> [usize; 4] {
        self.data_tags
    }

    pub fn record(&self, shot: usize) -> RunRecord {
        RunRecord {
            shot,
            ancilla_x: self.ax_tags.iter().map(|&t| self.bit(t, shot)).collect(),
            ancilla_z: self.az_tags.iter().map(|&t| self.bit(t, shot)).collect(),
            data: self.data_tags.map(|t| t != usize::MAX && self.bit(t, shot)),
            basis: self.basis,
        }
    }

    /// Key packing all measurement bits of one shot in schema order.
    pub fn outcome_key(&self, shot: usize) -> u64 {
        debug_assert!(self.schema.len() <= 64);
        let mut key = 0u64;
        for tag in 0..self.schema.len() {
            if self.bit(tag, shot) {
                key |= 1 << tag;
            }
        }
        key
    }

    /// Empirical distribution over joint outcomes.
    pub fn empirical_distribution(&self) -> BTreeMap<u64, f64> {
        let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
        for s in 0..self.shots {
            *counts.entry(self.outcome_key(s)).or_default() += 1;
        }
        counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / self.shots as f64))
            .collect()
    }

    const MAGIC: &'static [u8; 8] = b"SB422\0v1";

    /// Binary container: header (digest, seed, shots, schema) + packed bits.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), EngineError> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&self.program_digest)?;
        w.write_all(&self.master_seed.to_le_bytes())?;
        w.write_all(&(self.shots as u64).to_le_bytes())?;
        w.write_all(&[match self.basis {
            Basis::Z => 0u8,
            Basis::X => 1u8,
        }])?;
        w.write_all(&(self.cycles as u64).to_le_bytes())?;
        w.write_all(&(self.schema.len() as u32).to_le_bytes())?;
        for tag in &self.schema {
            let (kind, value) = match tag.label {
                MeasLabel::AncillaX { cycle } => (0u8, cycle as u32),
                MeasLabel::AncillaZ { cycle } => (1u8, cycle as u32),
                MeasLabel::Data { index } => (2u8, index as u32),
            };
            w.write_all(&[kind])?;
            w.write_all(&value.to_le_bytes())?;
            w.write_all(&[tag.element as u8])?;
        }
        w.write_all(&(self.words_per_tag as u32).to_le_bytes())?;
        for word in &self.bits {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, EngineError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(EngineError::BadContainer);
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        let seed = read_u64(r)?;
        let shots = read_u64(r)? as usize;
        let mut basis_byte = [0u8; 1];
        r.read_exact(&mut basis_byte)?;
        let basis = if basis_byte[0] == 0 { Basis::Z } else { Basis::X };
        let cycles = read_u64(r)? as usize;
        let n_tags = read_u32(r)? as usize;
        let mut schema = Vec::with_capacity(n_tags);
        for _ in 0..n_tags {
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let value = read_u32(r)? as usize;
            let mut element = [0u8; 1];
            r.read_exact(&mut element)?;
            let label = match kind[0] {
                0 => MeasLabel::AncillaX { cycle: value },
                1 => MeasLabel::AncillaZ { cycle: value },
                2 => MeasLabel::Data { index: value },
                _ => return Err(EngineError::BadContainer),
            };
            schema.push(MeasTag { label, element: element[0] as usize });
        }
        let words = read_u32(r)? as usize;
        let mut bits = vec![0u64; n_tags * words];
        for word in &mut bits {
            *word = read_u64(r)?;
        }
        let mut ax: Vec<(usize, usize)> = Vec::new();
        let mut az: Vec<(usize, usize)> = Vec::new();
        let mut data_tags = [usize::MAX; 4];
        for (i, tag) in schema.iter().enumerate() {
            match tag.label {
                MeasLabel::AncillaX { cycle } => ax.push((cycle, i)),
                MeasLabel::AncillaZ { cycle } => az.push((cycle, i)),
                MeasLabel::Data { index } => data_tags[index] = i,
            }
        }
        ax.sort_unstable();
        az.sort_unstable();
        Ok(Self {
            schema,
            shots,
            basis,
            cycles,
            program_digest: digest,
            master_seed: seed,
            words_per_tag: words,
            bits,
            ax_tags: ax.into_iter().map(|(_, i)| i).collect(),
            az_tags: az.into_iter().map(|(_, i)| i).collect(),
            data_tags,
        })
    }

    /// CSV export: one row per shot, one 0/1 column per measurement tag.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<(), EngineError> {
        let names: Vec<String> = self.schema.iter().map(|t| t.name()).collect();
        writeln!(w, "shot,{}", names.join(","))?;
        for s in 0..self.shots {
            let row: Vec<&str> = (0..self.schema.len())
                .map(|t| if self.bit(t, s) { "1" } else { "0" })
                .collect();
            writeln!(w, "{s},{}", row.join(","))?;
        }
        Ok(())
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64, EngineError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, EngineError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Stable sub-seed for one run inside a multi-run pipeline.
pub fn derive_seed(master: u64, salt: &str, k: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(salt.as_bytes());
    h.update(k.to_le_bytes());
    let out: [u8; 32] = h.finalize().into();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

/// ChaCha key derived from the master seed; streams select shots/blocks.
fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"star422.engine");
    h.update(seed.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

// Lowered instruction stream for the hot loops.

#[derive(Debug, Clone, Copy)]
enum FrameGate {
    SwapXZ(usize),
    ZXorX(usize),
    XXorZ(usize),
    Cz(usize, usize),
    Cx(usize, usize),
    Swap(usize, usize),
    ISwap(usize, usize),
    Identity,
}

#[derive(Debug, Clone)]
enum Op {
    Gate(Gate, Vec<usize>),
    Noise(NoiseEvent),
    Measure { tag: usize, element: usize },
    Reset(usize),
}

fn lower(program: &CircuitProgram) -> Vec<Op> {
    let mut first_prep = vec![true; program.n_elements()];
    let mut ops = Vec::with_capacity(program.instructions.len());
    for ins in &program.instructions {
        match &ins.kind {
            InstructionKind::PrepareZero => {
                let e = ins.targets[0];
                // The simulators start in |0...0>; only later resets act.
                if !first_prep[e] {
                    ops.push(Op::Reset(e));
                }
                first_prep[e] = false;
            }
            InstructionKind::Gate { gate, .. } => {
                ops.push(Op::Gate(*gate, ins.targets.clone()));
            }
            InstructionKind::Measure { tag_index } => {
                ops.push(Op::Measure { tag: *tag_index, element: ins.targets[0] });
            }
            InstructionKind::Noise { event, .. } => {
                if !event.is_trivial() {
                    ops.push(Op::Noise(*event));
                }
            }
            InstructionKind::Barrier => {}
        }
    }
    ops
}

fn frame_gate(gate: Gate, targets: &[usize]) -> FrameGate {
    match gate {
        Gate::Hadamard | Gate::SqrtY | Gate::SqrtYDag => FrameGate::SwapXZ(targets[0]),
        Gate::S | Gate::SDag => FrameGate::ZXorX(targets[0]),
        Gate::SqrtX | Gate::SqrtXDag => FrameGate::XXorZ(targets[0]),
        Gate::X | Gate::Y | Gate::Z => FrameGate::Identity,
        Gate::Cz => FrameGate::Cz(targets[0], targets[1]),
        Gate::Cx => FrameGate::Cx(targets[0], targets[1]),
        Gate::Swap => FrameGate::Swap(targets[0], targets[1]),
        Gate::ISwap => FrameGate::ISwap(targets[0], targets[1]),
    }
}

/// Reference data from the noiseless tableau pass.
struct Reference {
    bits: Vec<bool>,
    /// For random-outcome measurements: (x_mask, z_mask) of the pre-collapse
    /// stabilizer over all elements.
    collapse: Vec<Option<(u64, u64)>>,
}

fn reference_run(program: &CircuitProgram, seed: u64) -> Reference {
    let n = program.n_elements();
    let mut t = Tableau::new(n);
    let mut rng = rng_for(seed, 0);
    let mut bits = vec![false; program.schema.len()];
    let mut collapse = vec![None; program.schema.len()];
    for op in lower(program) {
        match op {
            Op::Gate(g, targets) => t.apply(g, &targets).expect("valid program"),
            Op::Noise(_) => {}
            Op::Measure { tag, element } => {
                let out = t.measure_z(element, &mut rng);
                bits[tag] = out.bit;
                collapse[tag] = out.collapsed.map(|p| p.masks());
            }
            Op::Reset(e) => t.reset_z(e, &mut rng),
        }
    }
    Reference { bits, collapse }
}

/// Mask with each bit set independently with probability p, via geometric
/// skips (cheap for the small probabilities of the error model).
#[inline]
fn sample_mask(rng: &mut ChaCha8Rng, p: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return !0u64;
    }
    let q = (1.0 - p).ln();
    let mut mask = 0u64;
    let mut i = 0usize;
    loop {
        let u: f64 = rng.random();
        let skip = ((1.0 - u).ln() / q) as usize;
        i += skip;
        if i >= 64 {
            break;
        }
        mask |= 1u64 << i;
        i += 1;
    }
    mask
}

struct FrameKernel {
    ops: Vec<Op>,
    gates: Vec<FrameGate>,
    reference: Reference,
}

impl FrameKernel {
    fn new(program: &CircuitProgram, seed: u64) -> Self {
        let ops = lower(program);
        let gates = ops
            .iter()
            .map(|op| match op {
                Op::Gate(g, t) => frame_gate(*g, t),
                _ => FrameGate::Identity,
            })
            .collect();
        Self { ops, gates, reference: reference_run(program, seed) }
    }

    /// Simulate one block of 64 shots; returns one outcome word per tag.
    fn run_block(&self, seed: u64, block: u64, n_tags: usize) -> Vec<u64> {
        let mut rng = rng_for(seed, 1 + block);
        let mut fx = [0u64; 64];
        let mut fz = [0u64; 64];
        let mut out = vec![0u64; n_tags];
        for (i, op) in self.ops.iter().enumerate() {
            match op {
                Op::Gate(..) => match self.gates[i] {
                    FrameGate::SwapXZ(q) => std::mem::swap(&mut fx[q], &mut fz[q]),
                    FrameGate::ZXorX(q) => fz[q] ^= fx[q],
                    FrameGate::XXorZ(q) => fx[q] ^= fz[q],
                    FrameGate::Cz(a, b) => {
                        let (xa, xb) = (fx[a], fx[b]);
                        fz[a] ^= xb;
                        fz[b] ^= xa;
                    }
                    FrameGate::Cx(c, t) => {
                        fx[t] ^= fx[c];
                        fz[c] ^= fz[t];
                    }
                    FrameGate::Swap(a, b) => {
                        fx.swap(a, b);
                        fz.swap(a, b);
                    }
                    FrameGate::ISwap(a, b) => {
                        fz[a] ^= fx[a];
                        fz[b] ^= fx[b];
                        let (xa, xb) = (fx[a], fx[b]);
                        fz[a] ^= xb;
                        fz[b] ^= xa;
                        fx.swap(a, b);
                        fz.swap(a, b);
                    }
                    FrameGate::Identity => {}
                },
                Op::Noise(event) => match *event {
                    NoiseEvent::BitFlip { p, target } => {
                        fx[target] ^= sample_mask(&mut rng, p);
                    }
                    NoiseEvent::Depolarize1 { p, target } => {
                        let mut m = sample_mask(&mut rng, p);
                        while m != 0 {
                            let bit = m & m.wrapping_neg();
                            match rng.random_range(0..3u8) {
                                0 => fx[target] ^= bit,
                                1 => fz[target] ^= bit,
                                _ => {
                                    fx[target] ^= bit;
                                    fz[target] ^= bit;
                                }
                            }
                            m ^= bit;
                        }
                    }
                    NoiseEvent::Depolarize2 { p, targets } => {
                        let mut m = sample_mask(&mut rng, p);
                        while m != 0 {
                            let bit = m & m.wrapping_neg();
                            let k: u8 = rng.random_range(1..16);
                            if k & 1 != 0 {
                                fx[targets[0]] ^= bit;
                            }
                            if k & 2 != 0 {
                                fz[targets[0]] ^= bit;
                            }
                            if k & 4 != 0 {
                                fx[targets[1]] ^= bit;
                            }
                            if k & 8 != 0 {
                                fz[targets[1]] ^= bit;
                            }
                            m ^= bit;
                        }
                    }
                    NoiseEvent::PauliChannel1 { px, py, pz, target } => {
                        let total = px + py + pz;
                        let mut m = sample_mask(&mut rng, total);
                        while m != 0 {
                            let bit = m & m.wrapping_neg();
                            let u: f64 = rng.random::<f64>() * total;
                            if u < px {
                                fx[target] ^= bit;
                            } else if u < px + py {
                                fx[target] ^= bit;
                                fz[target] ^= bit;
                            } else {
                                fz[target] ^= bit;
                            }
                            m ^= bit;
                        }
                    }
                },
                Op::Measure { tag, element } => {
                    if let Some((xm, zm)) = self.reference.collapse[*tag] {
                        // Branch selector: lanes with the bit set take the
                        // other collapse branch; multiply the collapse
                        // operator into their frames.
                        let r = rng.next_u64();
                        let mut xmask = xm;
                        while xmask != 0 {
                            let j = xmask.trailing_zeros() as usize;
                            fx[j] ^= r;
                            xmask &= xmask - 1;
                        }
                        let mut zmask = zm;
                        while zmask != 0 {
                            let j = zmask.trailing_zeros() as usize;
                            fz[j] ^= r;
                            zmask &= zmask - 1;
                        }
                    }
                    let ref_word = if self.reference.bits[*tag] { !0u64 } else { 0 };
                    out[*tag] = ref_word ^ fx[*element];
                }
                Op::Reset(e) => {
                    fx[*e] = 0;
                    fz[*e] = 0;
                }
            }
        }
        out
    }
}

/// Run a compiled (or explicitly noiseless) program with the bit-packed
/// frame engine. Deterministic in (program, seed) and independent of thread
/// count; shots are processed in parallel blocks of 64.
pub fn run_shots(
    program: &CircuitProgram,
    shots: usize,
    seed: u64,
) -> Result<ShotBatch, EngineError> {
    if program.n_elements() > 64 {
        return Err(EngineError::TooManyElements(program.n_elements()));
    }
    let mut batch = ShotBatch::new(program, shots, seed);
    let kernel = FrameKernel::new(program, seed);
    let n_tags = program.schema.len();
    let words = batch.words_per_tag;
    let block_words: Vec<Vec<u64>> = (0..words as u64)
        .into_par_iter()
        .map(|block| {
            let mut out = kernel.run_block(seed, block, n_tags);
            // Zero unused lanes of the final block for byte determinism.
            if block as usize == words - 1 && shots % 64 != 0 {
                let valid = (!0u64) >> (64 - shots % 64);
                for w in &mut out {
                    *w &= valid;
                }
            }
            out
        })
        .collect();
    for (block, tag_words) in block_words.iter().enumerate() {
        for (tag, &word) in tag_words.iter().enumerate() {
            batch.bits[tag * words + block] = word;
        }
    }
    Ok(batch)
}

/// Per-shot tableau Monte Carlo; the slow validation path. Each shot owns
/// the ChaCha stream (1 + shot index).
pub fn run_shots_tableau(
    program: &CircuitProgram,
    shots: usize,
    seed: u64,
) -> Result<ShotBatch, EngineError> {
    if program.n_elements() > 64 {
        return Err(EngineError::TooManyElements(program.n_elements()));
    }
    let mut batch = ShotBatch::new(program, shots, seed);
    let ops = lower(program);
    let n = program.n_elements();
    let n_tags = program.schema.len();
    let words = batch.words_per_tag;
    let block_words: Vec<Vec<u64>> = (0..words)
        .into_par_iter()
        .map(|block| {
            let mut out = vec![0u64; n_tags];
            let lanes = (shots - block * 64).min(64);
            for lane in 0..lanes {
                let shot = block * 64 + lane;
                let mut rng = rng_for(seed, 1 + shot as u64);
                let mut t = Tableau::new(n);
                for op in &ops {
                    match op {
                        Op::Gate(g, targets) => t.apply(*g, targets).expect("valid program"),
                        Op::Noise(event) => {
                            if let Some(pauli) = event.sample(n, &mut rng) {
                                t.apply_pauli(&pauli);
                            }
                        }
                        Op::Measure { tag, element } => {
                            if t.measure_z(*element, &mut rng).bit {
                                out[*tag] |= 1u64 << lane;
                            }
                        }
                        Op::Reset(e) => t.reset_z(*e, &mut rng),
                    }
                }
            }
            out
        })
        .collect();
    for (block, tag_words) in block_words.iter().enumerate() {
        for (tag, &word) in tag_words.iter().enumerate() {
            batch.bits[tag * words + block] = word;
        }
    }
    Ok(batch)
}

/// State-vector trajectory sampling; the empirical dense oracle. Returns
/// the joint distribution over all measurement bits keyed in schema order.
pub fn dense_reference_run(
    program: &CircuitProgram,
    shots: usize,
    seed: u64,
) -> Result<BTreeMap<u64, f64>, EngineError> {
    let n = program.n_elements();
    if n > MAX_DENSE_ELEMENTS {
        return Err(EngineError::TooManyForDense(n));
    }
    let ops = lower(program);
    let counts: BTreeMap<u64, u64> = (0..shots)
        .into_par_iter()
        .fold(BTreeMap::new, |mut acc: BTreeMap<u64, u64>, shot| {
            let mut rng = rng_for(seed, 1 + shot as u64);
            let mut sv = StateVector::zero_state(n).expect("n checked");
            let mut key = 0u64;
            for op in &ops {
                match op {
                    Op::Gate(g, targets) => sv.apply_gate(*g, targets),
                    Op::Noise(event) => {
                        if let Some(pauli) = event.sample(n, &mut rng) {
                            sv.apply_pauli(&pauli);
                        }
                    }
                    Op::Measure { tag, element } => {
                        if sv.measure_z(*element, &mut rng) {
                            key |= 1 << tag;
                        }
                    }
                    Op::Reset(e) => sv.reset_z(*e, &mut rng),
                }
            }
            *acc.entry(key).or_default() += 1;
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    Ok(counts.into_iter().map(|(k, c)| (k, c as f64 / shots as f64)).collect())
}

/// Exact joint outcome distribution by density-matrix branch enumeration.
/// Noise channels are applied as exact CPTP maps; every measurement branches
/// the state. Exponential in the number of measurements; intended for small
/// oracle programs.
pub fn exact_distribution(program: &CircuitProgram) -> Result<BTreeMap<u64, f64>, EngineError> {
    let n = program.n_elements();
    if n > MAX_DENSE_ELEMENTS {
        return Err(EngineError::TooManyForDense(n));
    }
    let ops = lower(program);
    let mut out = BTreeMap::new();
    let rho = DensityMatrix::from_pure(&StateVector::zero_state(n).expect("n checked"));
    walk(&ops, rho, 0u64, 1.0, &mut out);
    Ok(out)
}

fn walk(ops: &[Op], mut rho: DensityMatrix, key: u64, weight: f64, out: &mut BTreeMap<u64, f64>) {
    const PRUNE: f64 = 1e-12;
    for (i, op) in ops.iter().enumerate() {
        match op {
            Op::Gate(g, targets) => rho.apply_gate(*g, targets),
            Op::Noise(event) => rho.apply_channel(event),
            Op::Measure { tag, element } => {
                let [(p0, rho0), (p1, rho1)] = rho.measure_branches(*element);
                if weight * p0 > PRUNE {
                    walk(&ops[i + 1..], rho0, key, weight * p0, out);
                }
                if weight * p1 > PRUNE {
                    walk(&ops[i + 1..], rho1, key | (1 << tag), weight * p1, out);
                }
                return;
            }
            Op::Reset(e) => {
                // Reset channel: project, flip the excited branch back.
                let [(p0, mut rho0), (p1, mut rho1)] = rho.measure_branches(*e);
                if p1 > PRUNE {
                    rho1.apply_pauli(
                        &PauliString::single(rho1.len(), *e, PauliKind::X).expect("in range"),
                    );
                    rho1.scale(p1);
                    rho0.scale(p0);
                    rho0.add_scaled(&rho1, 1.0);
                    rho = rho0;
                } else {
                    rho = rho0;
                }
            }
        }
    }
    *out.entry(key).or_insert(0.0) += weight;
}

/// Total variation distance between two outcome distributions.
pub fn total_variation_distance(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> f64 {
    let keys: std::collections::BTreeSet<u64> = a.keys().chain(b.keys()).copied().collect();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(&k).copied().unwrap_or(0.0) - b.get(&k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{
        build_experiment, compile_noise, ExperimentKind, NoiseOptions, ProductState, StabOrder,
    };
    use crate::device::DeviceModel;

    fn device() -> DeviceModel {
        DeviceModel::preset("configA").unwrap()
    }

    fn noiseless_lifetime(state: &str, n: usize) -> CircuitProgram {
        let kind = ExperimentKind::Lifetime {
            psi_in: ProductState::parse(state).unwrap(),
            cycles: n,
        };
        build_experiment(&kind, &device(), StabOrder::XThenZ).unwrap()
    }

    #[test]
    fn noiseless_codeword_cycle_yields_all_zero_z_ancillas() {
        // |0000>: d_Z deterministic 0 every cycle; d_X random once then frozen.
        let prog = noiseless_lifetime("0000", 3);
        let batch = run_shots(&prog, 4096, 7).unwrap();
        let az = batch.ancilla_tags(StabKind::Z).to_vec();
        for s in 0..batch.shots {
            for &t in &az {
                assert!(!batch.bit(t, s), "Z ancilla fired in noiseless run");
            }
            let rec = batch.record(s);
            // Unreset ancilla with a frozen parity p alternates d = p, 0, p...
            let d1 = rec.ancilla_x[0];
            for (n, &d) in rec.ancilla_x.iter().enumerate() {
                let expect = if n % 2 == 0 { d1 } else { false };
                assert_eq!(d, expect, "shot {s}");
            }
        }
        let tag = batch.ancilla_tags(StabKind::X)[0];
        let ones: u32 = (0..batch.shots).map(|s| u32::from(batch.bit(tag, s))).sum();
        let frac = f64::from(ones) / batch.shots as f64;
        assert!((frac - 0.5).abs() < 3.0 * 0.5 / (batch.shots as f64).sqrt());
    }

    #[test]
    fn accepted_final_strings_are_codeword_branches() {
        let prog = noiseless_lifetime("0000", 1);
        let batch = run_shots(&prog, 2000, 3).unwrap();
        for s in 0..batch.shots {
            let rec = batch.record(s);
            // Z-stabilizer parity stays even for |0000> regardless of branch.
            let parity = rec.data.iter().filter(|&&b| b).count() % 2;
            assert_eq!(parity, 0);
            if rec.ancilla_x.iter().all(|&b| !b) && rec.ancilla_z.iter().all(|&b| !b) {
                // Accepted: data collapsed onto the |00>_L codeword branches.
                assert!(rec.data == [false; 4] || rec.data == [true; 4], "{:?}", rec.data);
            }
        }
    }

    #[test]
    fn frame_and_tableau_engines_agree_on_joint_distribution() {
        let dev = device();
        let kind = ExperimentKind::Lifetime {
            psi_in: ProductState::parse("0011").unwrap(),
            cycles: 2,
        };
        let prog = build_experiment(&kind, &dev, StabOrder::XThenZ).unwrap();
        let compiled = compile_noise(&prog, &dev, &NoiseOptions::default()).unwrap();
        let shots = 60_000;
        let frame = run_shots(&compiled, shots, 11).unwrap();
        let tableau = run_shots_tableau(&compiled, shots, 12).unwrap();
        let tvd = total_variation_distance(
            &frame.empirical_distribution(),
            &tableau.empirical_distribution(),
        );
        // 8 measurement bits -> 256 cells; the statistical floor dominates.
        assert!(tvd < 0.035, "tvd = {tvd}");
    }

    #[test]
    fn determinism_same_seed_same_bytes() {
        let dev = device();
        let prog = build_experiment(
            &ExperimentKind::Lifetime { psi_in: ProductState::parse("0000").unwrap(), cycles: 2 },
            &dev,
            StabOrder::XThenZ,
        )
        .unwrap();
        let compiled = compile_noise(&prog, &dev, &NoiseOptions::default()).unwrap();
        let a = run_shots(&compiled, 10_001, 99).unwrap();
        let b = run_shots(&compiled, 10_001, 99).unwrap();
        assert_eq!(a, b);
        let c = run_shots(&compiled, 10_001, 100).unwrap();
        assert_ne!(a, c);
        // Thread-count independence.
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| run_shots(&compiled, 10_001, 99).unwrap());
        assert_eq!(a, single);
    }

    #[test]
    fn container_round_trip() {
        let prog = noiseless_lifetime("0011", 2);
        let batch = run_shots(&prog, 777, 5).unwrap();
        let mut buf = Vec::new();
        batch.write_to(&mut buf).unwrap();
        let back = ShotBatch::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(batch, back);
        assert!(ShotBatch::read_from(&mut &buf[1..]).is_err());
    }

    #[test]
    fn shot_independence_no_autocorrelation() {
        let dev = device();
        let prog = build_experiment(
            &ExperimentKind::Lifetime { psi_in: ProductState::parse("0000").unwrap(), cycles: 1 },
            &dev,
            StabOrder::XThenZ,
        )
        .unwrap();
        let compiled = compile_noise(&prog, &dev, &NoiseOptions::default()).unwrap();
        let batch = run_shots(&compiled, 40_000, 21).unwrap();
        let tag = batch.ancilla_tags(StabKind::X)[0];
        let bits: Vec<f64> =
            (0..batch.shots).map(|s| f64::from(u8::from(batch.bit(tag, s)))).collect();
        let m = bits.iter().sum::<f64>() / bits.len() as f64;
        let var = bits.iter().map(|b| (b - m) * (b - m)).sum::<f64>() / bits.len() as f64;
        let cov = bits.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>()
            / (bits.len() - 1) as f64;
        let corr = cov / var;
        assert!(corr.abs() < 3.0 / (bits.len() as f64).sqrt(), "corr = {corr}");
    }

    #[test]
    fn bell_prep_program_is_deterministically_accepted() {
        let dev = device();
        let prog =
            build_experiment(&ExperimentKind::BellLifetime { cycles: 2 }, &dev, StabOrder::XThenZ)
                .unwrap();
        let batch = run_shots(&prog, 3000, 17).unwrap();
        for s in 0..batch.shots {
            let rec = batch.record(s);
            assert!(rec.ancilla_x.iter().all(|&b| !b), "X syndrome fired");
            assert!(rec.ancilla_z.iter().all(|&b| !b), "Z syndrome fired");
            // Only the four even-weight Bell expansion strings appear.
            let key: usize =
                rec.data.iter().enumerate().map(|(i, &b)| usize::from(b) << i).sum();
            assert!([0b0000, 0b0110, 0b1001, 0b1111].contains(&key), "data {key:04b}");
        }
    }
}
