//! Timed circuit construction for every experiment, and noise compilation.
//!
//! Programs run over seven elements indexed by `Role::index()`:
//! D1..D4, A_X, A_Z, Res. A stabilizer half maps the data parity onto the
//! resonator with four CZ gates, sandwiched between MOVE transfers from the
//! ancilla; the X half additionally rotates the data qubits into the X basis
//! for the duration of its CZs. MOVE is modeled as an iSWAP: the resonator
//! is in its ground state before every transfer, and the leftover iSWAP
//! phases are absorbed by closing each ancilla sandwich with a second √Y
//! (a double MOVE acts as an extra Z on the ancilla).
//!
//! Scheduling is a list scheduler over per-element availability, so the
//! timeline has no overlapping instructions on any element by construction;
//! with the default durations one cycle occupies 2.05 us including the
//! trailing scheduled idle.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::code::Basis;
use crate::device::{idling_channel, ChannelParams, DeviceError, DeviceModel, Role, T2Choice};
use crate::gate::{Gate, GateError};
use crate::noise::NoiseEvent;

pub const N_ELEMENTS: usize = 7;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("program is already noise-compiled")]
    AlreadyCompiled,
    #[error("invalid experiment: {0}")]
    BadExperiment(String),
    #[error("unsupported product state {0:?} (use four symbols from one basis: 0/1 or +/-)")]
    BadProductState(String),
    #[error("schedule overlap on element {element} at {t} ns")]
    Overlap { element: String, t: u64 },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Gate(#[from] GateError),
}

/// Which stabilizer a half-cycle measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabKind {
    X,
    Z,
}

/// Order of the two halves within a cycle. The second half overlaps the
/// first ancilla's readout window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum StabOrder {
    #[default]
    XThenZ,
    ZThenX,
}

/// Initial single-qubit state of one data qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QubitInit {
    Zero,
    One,
    Plus,
    Minus,
}

impl QubitInit {
    fn symbol(self) -> char {
        match self {
            QubitInit::Zero => '0',
            QubitInit::One => '1',
            QubitInit::Plus => '+',
            QubitInit::Minus => '-',
        }
    }

    fn bit(self) -> bool {
        matches!(self, QubitInit::One | QubitInit::Minus)
    }

    fn prep_gate(self) -> Option<Gate> {
        match self {
            QubitInit::Zero => None,
            QubitInit::One => Some(Gate::X),
            QubitInit::Plus => Some(Gate::SqrtY),
            QubitInit::Minus => Some(Gate::SqrtYDag),
        }
    }
}

/// A separable 4-qubit input state with all factors in one basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductState(pub [QubitInit; 4]);

impl ProductState {
    pub fn parse(text: &str) -> Result<Self, CircuitError> {
        let symbols: Vec<QubitInit> = text
            .chars()
            .map(|c| match c {
                '0' => Ok(QubitInit::Zero),
                '1' => Ok(QubitInit::One),
                '+' => Ok(QubitInit::Plus),
                '-' => Ok(QubitInit::Minus),
                _ => Err(CircuitError::BadProductState(text.to_string())),
            })
            .collect::<Result<_, _>>()?;
        if symbols.len() != 4 {
            return Err(CircuitError::BadProductState(text.to_string()));
        }
        let state = ProductState([symbols[0], symbols[1], symbols[2], symbols[3]]);
        state.basis()?;
        Ok(state)
    }

    /// Encoding basis; errors when the factors mix bases.
    pub fn basis(&self) -> Result<Basis, CircuitError> {
        let z = self.0.iter().all(|q| matches!(q, QubitInit::Zero | QubitInit::One));
        let x = self.0.iter().all(|q| matches!(q, QubitInit::Plus | QubitInit::Minus));
        match (z, x) {
            (true, _) => Ok(Basis::Z),
            (_, true) => Ok(Basis::X),
            _ => Err(CircuitError::BadProductState(self.label())),
        }
    }

    pub fn label(&self) -> String {
        self.0.iter().map(|q| q.symbol()).collect()
    }

    /// Measured-bit pattern of the state in its own basis.
    pub fn bits(&self) -> [bool; 4] {
        [self.0[0].bit(), self.0[1].bit(), self.0[2].bit(), self.0[3].bit()]
    }

    /// The 16 separable states used for stabilizer characterization and
    /// tomography.
    pub fn standard_sixteen() -> Vec<ProductState> {
        [
            "0000", "1111", "0011", "1100", "0101", "1010", "0110", "1001", "----", "++++",
            "+-+-", "-+-+", "--++", "++--", "+--+", "-++-",
        ]
        .iter()
        .map(|s| ProductState::parse(s).expect("static"))
        .collect()
    }

    /// The eight lifetime-experiment input states.
    pub fn lifetime_eight() -> Vec<ProductState> {
        ["0000", "0011", "0101", "1001", "++++", "+-+-", "++--", "-++-"]
            .iter()
            .map(|s| ProductState::parse(s).expect("static"))
            .collect()
    }
}

/// Per-data-qubit measurement basis of a tomography setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TomoBasis {
    Z,
    X,
    Y,
}

impl TomoBasis {
    pub const ALL: [TomoBasis; 3] = [TomoBasis::Z, TomoBasis::X, TomoBasis::Y];

    pub fn symbol(self) -> char {
        match self {
            TomoBasis::Z => 'Z',
            TomoBasis::X => 'X',
            TomoBasis::Y => 'Y',
        }
    }

    /// Pre-readout rotation implementing the basis change, if any.
    pub fn rotation(self) -> Option<Gate> {
        match self {
            TomoBasis::Z => None,
            TomoBasis::X => Some(Gate::SqrtYDag),
            TomoBasis::Y => Some(Gate::SqrtX),
        }
    }
}

/// One randomized-measurement setting: a basis per data qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TomographySetting(pub [TomoBasis; 4]);

impl TomographySetting {
    pub fn label(&self) -> String {
        self.0.iter().map(|b| b.symbol()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasLabel {
    /// X-stabilizer ancilla readout of cycle n (1-based).
    AncillaX { cycle: usize },
    /// Z-stabilizer ancilla readout of cycle n (1-based).
    AncillaZ { cycle: usize },
    /// Final data-qubit readout, data index 0..3 for D1..D4.
    Data { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasTag {
    pub label: MeasLabel,
    pub element: usize,
}

impl MeasTag {
    pub fn name(&self) -> String {
        match self.label {
            MeasLabel::AncillaX { cycle } => format!("ax[{cycle}]"),
            MeasLabel::AncillaZ { cycle } => format!("az[{cycle}]"),
            MeasLabel::Data { index } => format!("d{}", index + 1),
        }
    }
}

/// Classification of a gate instruction for noise insertion and audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateClass {
    Sqg,
    Cz,
    Move,
}

/// Error-model category, the ablation axis of the error budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    Sqg,
    Move,
    Cz,
    Readout,
    Idling,
    Thermal,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 6] = [
        ErrorKind::Sqg,
        ErrorKind::Move,
        ErrorKind::Cz,
        ErrorKind::Readout,
        ErrorKind::Idling,
        ErrorKind::Thermal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Sqg => "sqg",
            ErrorKind::Move => "move",
            ErrorKind::Cz => "cz",
            ErrorKind::Readout => "readout",
            ErrorKind::Idling => "idling",
            ErrorKind::Thermal => "thermal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstructionKind {
    PrepareZero,
    Gate { gate: Gate, class: GateClass },
    Measure { tag_index: usize },
    Noise { event: NoiseEvent, kind: ErrorKind },
    Barrier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub kind: InstructionKind,
    pub targets: Vec<usize>,
    pub start_ns: u64,
    pub duration_ns: u64,
}

impl Instruction {
    pub fn end_ns(&self) -> u64 {
        self.start_ns + self.duration_ns
    }

    /// Sort tier at equal start times: preparations, then noise, then
    /// gates/measurements. Stable sorting preserves emission order inside a
    /// tier, which keeps gate-attached noise next to its gate.
    fn tier(&self) -> u8 {
        match self.kind {
            InstructionKind::PrepareZero => 0,
            InstructionKind::Noise { .. } => 1,
            _ => 2,
        }
    }

    /// Whether the instruction occupies its element timelines (noise events
    /// and barriers do not).
    fn occupies(&self) -> bool {
        matches!(
            self.kind,
            InstructionKind::PrepareZero
                | InstructionKind::Gate { .. }
                | InstructionKind::Measure { .. }
        )
    }
}

/// Experiment families. `cycles` is the number N of full detection cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// One half-cycle measuring a single stabilizer (cycles must be 1).
    SingleStabilizer { stabilizer: StabKind, psi_in: ProductState, cycles: usize },
    /// Probabilistic encoding, N cycles, readout in the preparation basis.
    Lifetime { psi_in: ProductState, cycles: usize },
    /// Probabilistic encoding, N cycles, tomography rotation, Z readout.
    Tomography { psi_in: ProductState, cycles: usize, setting: TomographySetting },
    /// Deterministic Bell encoding, N cycles, Z readout.
    BellLifetime { cycles: usize },
    /// Deterministic Bell encoding, N cycles, tomography rotation, Z readout.
    BellTomography { cycles: usize, setting: TomographySetting },
}

impl ExperimentKind {
    pub fn cycles(&self) -> usize {
        match *self {
            ExperimentKind::SingleStabilizer { cycles, .. }
            | ExperimentKind::Lifetime { cycles, .. }
            | ExperimentKind::Tomography { cycles, .. }
            | ExperimentKind::BellLifetime { cycles }
            | ExperimentKind::BellTomography { cycles, .. } => cycles,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::SingleStabilizer { .. } => "single_stabilizer",
            ExperimentKind::Lifetime { .. } => "lifetime",
            ExperimentKind::Tomography { .. } => "tomography",
            ExperimentKind::BellLifetime { .. } => "bell_lifetime",
            ExperimentKind::BellTomography { .. } => "bell_tomography",
        }
    }

    pub fn state_label(&self) -> String {
        match self {
            ExperimentKind::SingleStabilizer { psi_in, .. }
            | ExperimentKind::Lifetime { psi_in, .. }
            | ExperimentKind::Tomography { psi_in, .. } => psi_in.label(),
            ExperimentKind::BellLifetime { .. } | ExperimentKind::BellTomography { .. } => {
                "bell".to_string()
            }
        }
    }

    pub fn is_bell(&self) -> bool {
        matches!(
            self,
            ExperimentKind::BellLifetime { .. } | ExperimentKind::BellTomography { .. }
        )
    }

    /// Readout basis used for logical evaluation of the final data bits.
    pub fn readout_basis(&self) -> Basis {
        match self {
            ExperimentKind::SingleStabilizer { psi_in, .. }
            | ExperimentKind::Lifetime { psi_in, .. } => psi_in.basis().expect("validated"),
            _ => Basis::Z,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProgramMeta {
    pub experiment: String,
    pub state: String,
    pub cycles: usize,
    pub stab_order: StabOrder,
    pub device_name: String,
    pub device_digest: String,
    pub tomo_setting: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CircuitProgram {
    pub element_names: Vec<String>,
    pub instructions: Vec<Instruction>,
    pub schema: Vec<MeasTag>,
    pub duration_ns: u64,
    pub basis: Basis,
    pub compiled: bool,
    pub meta: ProgramMeta,
}

impl CircuitProgram {
    pub fn n_elements(&self) -> usize {
        self.element_names.len()
    }

    /// Content digest over elements, instructions, and schema.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for name in &self.element_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for ins in &self.instructions {
            match &ins.kind {
                InstructionKind::PrepareZero => h.update([1u8]),
                InstructionKind::Gate { gate, class } => {
                    h.update([2u8, *gate as u8, *class as u8]);
                }
                InstructionKind::Measure { tag_index } => {
                    h.update([3u8]);
                    h.update((*tag_index as u64).to_le_bytes());
                }
                InstructionKind::Noise { event, kind } => {
                    h.update([4u8, *kind as u8]);
                    match *event {
                        NoiseEvent::Depolarize1 { p, target } => {
                            h.update([0u8, target as u8]);
                            h.update(p.to_le_bytes());
                        }
                        NoiseEvent::Depolarize2 { p, targets } => {
                            h.update([1u8, targets[0] as u8, targets[1] as u8]);
                            h.update(p.to_le_bytes());
                        }
                        NoiseEvent::PauliChannel1 { px, py, pz, target } => {
                            h.update([2u8, target as u8]);
                            h.update(px.to_le_bytes());
                            h.update(py.to_le_bytes());
                            h.update(pz.to_le_bytes());
                        }
                        NoiseEvent::BitFlip { p, target } => {
                            h.update([3u8, target as u8]);
                            h.update(p.to_le_bytes());
                        }
                    }
                }
                InstructionKind::Barrier => h.update([5u8]),
            }
            for &t in &ins.targets {
                h.update([t as u8]);
            }
            h.update(ins.start_ns.to_le_bytes());
            h.update(ins.duration_ns.to_le_bytes());
        }
        for tag in &self.schema {
            h.update(tag.name().as_bytes());
            h.update([0u8]);
        }
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        crate::device::hex_string(&self.digest())
    }

    /// Indices into the schema for the per-cycle ancilla tags, by stabilizer,
    /// ordered by cycle.
    pub fn ancilla_tag_indices(&self, stab: StabKind) -> Vec<usize> {
        let mut out: Vec<(usize, usize)> = self
            .schema
            .iter()
            .enumerate()
            .filter_map(|(i, tag)| match (stab, tag.label) {
                (StabKind::X, MeasLabel::AncillaX { cycle }) => Some((cycle, i)),
                (StabKind::Z, MeasLabel::AncillaZ { cycle }) => Some((cycle, i)),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.into_iter().map(|(_, i)| i).collect()
    }

    /// Schema indices of the four data tags, ordered D1..D4.
    pub fn data_tag_indices(&self) -> [usize; 4] {
        let mut out = [usize::MAX; 4];
        for (i, tag) in self.schema.iter().enumerate() {
            if let MeasLabel::Data { index } = tag.label {
                out[index] = i;
            }
        }
        out
    }

    /// Busy intervals per element, sorted by start.
    fn busy_intervals(&self) -> Vec<Vec<(u64, u64)>> {
        let mut per: Vec<Vec<(u64, u64)>> = vec![Vec::new(); self.n_elements()];
        for ins in &self.instructions {
            if ins.occupies() && ins.duration_ns > 0 {
                for &t in &ins.targets {
                    per[t].push((ins.start_ns, ins.end_ns()));
                }
            }
        }
        for v in &mut per {
            v.sort_unstable();
        }
        per
    }

    /// Structural audit: no element-level overlap, and busy + idle time
    /// covering the whole program on every element.
    pub fn audit(&self) -> Result<AuditReport, CircuitError> {
        let busy = self.busy_intervals();
        let mut report = AuditReport::default();
        for (e, intervals) in busy.iter().enumerate() {
            let mut cursor = 0u64;
            let mut busy_total = 0u64;
            for &(s, t) in intervals {
                if s < cursor {
                    return Err(CircuitError::Overlap {
                        element: self.element_names[e].clone(),
                        t: s,
                    });
                }
                report.idle_ns[e] += s - cursor;
                busy_total += t - s;
                cursor = t;
            }
            report.idle_ns[e] += self.duration_ns.saturating_sub(cursor);
            report.busy_ns[e] = busy_total;
        }
        for ins in &self.instructions {
            match ins.kind {
                InstructionKind::Gate { class, .. } => match class {
                    GateClass::Sqg => report.sqg_gates += 1,
                    GateClass::Cz => report.cz_gates += 1,
                    GateClass::Move => report.move_gates += 1,
                },
                InstructionKind::Measure { .. } => report.measurements += 1,
                InstructionKind::PrepareZero => report.preparations += 1,
                InstructionKind::Noise { .. } => report.noise_events += 1,
                InstructionKind::Barrier => {}
            }
        }
        Ok(report)
    }
}

#[derive(Debug, Default, Clone)]
pub struct AuditReport {
    pub busy_ns: [u64; N_ELEMENTS],
    pub idle_ns: [u64; N_ELEMENTS],
    pub sqg_gates: usize,
    pub cz_gates: usize,
    pub move_gates: usize,
    pub measurements: usize,
    pub preparations: usize,
    pub noise_events: usize,
}

/// Options controlling noise compilation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseOptions {
    pub t2: T2Choice,
    /// Insert idle-gap errors on the resonator. Off by default: outside its
    /// busy windows the resonator holds no stored state, and the symmetric
    /// Pauli approximation would inject spurious excitations over the long
    /// readout windows.
    pub resonator_idling: bool,
    /// Error kinds compiled with probability zero (error-budget ablations).
    pub disabled: Vec<ErrorKind>,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        Self { t2: T2Choice::default(), resonator_idling: false, disabled: Vec::new() }
    }
}

impl NoiseOptions {
    pub fn without(kind: ErrorKind) -> Self {
        Self { disabled: vec![kind], ..Self::default() }
    }

    fn scale(&self, kind: ErrorKind) -> f64 {
        if self.disabled.contains(&kind) {
            0.0
        } else {
            1.0
        }
    }
}

struct Builder<'d> {
    device: &'d DeviceModel,
    instructions: Vec<Instruction>,
    schema: Vec<MeasTag>,
    free: [u64; N_ELEMENTS],
}

impl<'d> Builder<'d> {
    fn new(device: &'d DeviceModel) -> Self {
        Self { device, instructions: Vec::new(), schema: Vec::new(), free: [0; N_ELEMENTS] }
    }

    fn prepare_all(&mut self) {
        for e in 0..N_ELEMENTS {
            self.instructions.push(Instruction {
                kind: InstructionKind::PrepareZero,
                targets: vec![e],
                start_ns: 0,
                duration_ns: 0,
            });
        }
    }

    /// Schedule an instruction at the earliest time all targets are free,
    /// not before `not_before`. Returns the start time.
    fn schedule(
        &mut self,
        kind: InstructionKind,
        targets: Vec<usize>,
        not_before: u64,
        duration: u64,
    ) -> u64 {
        let start = targets
            .iter()
            .map(|&t| self.free[t])
            .max()
            .unwrap_or(0)
            .max(not_before);
        for &t in &targets {
            self.free[t] = start + duration;
        }
        self.instructions.push(Instruction {
            kind,
            targets,
            start_ns: start,
            duration_ns: duration,
        });
        start
    }

    fn sqg(&mut self, gate: Gate, role: Role, not_before: u64) -> u64 {
        let d = self.device.durations.sqg;
        self.schedule(
            InstructionKind::Gate { gate, class: GateClass::Sqg },
            vec![role.index()],
            not_before,
            d,
        ) + d
    }

    fn mov(&mut self, qubit: Role, not_before: u64) -> u64 {
        let d = self.device.durations.mov;
        self.schedule(
            InstructionKind::Gate { gate: Gate::ISwap, class: GateClass::Move },
            vec![qubit.index(), Role::Resonator.index()],
            not_before,
            d,
        ) + d
    }

    fn cz(&mut self, data: Role, not_before: u64) -> u64 {
        let d = self.device.durations.cz;
        self.schedule(
            InstructionKind::Gate { gate: Gate::Cz, class: GateClass::Cz },
            vec![Role::Resonator.index(), data.index()],
            not_before,
            d,
        ) + d
    }

    fn measure(&mut self, role: Role, label: MeasLabel, not_before: u64) -> u64 {
        let d = self.device.durations.readout;
        let tag_index = self.schema.len();
        self.schema.push(MeasTag { label, element: role.index() });
        self.schedule(InstructionKind::Measure { tag_index }, vec![role.index()], not_before, d)
            + d
    }

    fn barrier(&mut self, t: u64) {
        self.instructions.push(Instruction {
            kind: InstructionKind::Barrier,
            targets: Vec::new(),
            start_ns: t,
            duration_ns: 0,
        });
    }

    /// One stabilizer half: ancilla √Y, MOVE to the resonator, four CZs,
    /// MOVE back, closing √Y, readout. The X half wraps the CZ block in a
    /// data basis-change layer.
    fn half(&mut self, stab: StabKind, cycle: usize, start: u64) {
        let ancilla = match stab {
            StabKind::X => Role::AncillaX,
            StabKind::Z => Role::AncillaZ,
        };
        let sqg = self.device.durations.sqg;
        // Ancilla rotation timed to finish as the resonator frees up.
        let res_free = self.free[Role::Resonator.index()].max(start);
        let rot_start = res_free.saturating_sub(sqg).max(start);
        if stab == StabKind::X {
            for d in Role::DATA {
                self.sqg(Gate::SqrtY, d, rot_start);
            }
        }
        self.sqg(Gate::SqrtY, ancilla, rot_start);
        self.mov(ancilla, start);
        for d in Role::DATA {
            self.cz(d, 0);
        }
        let back = self.mov(ancilla, 0);
        if stab == StabKind::X {
            for d in Role::DATA {
                self.sqg(Gate::SqrtYDag, d, back);
            }
        }
        let closed = self.sqg(Gate::SqrtY, ancilla, back);
        let label = match stab {
            StabKind::X => MeasLabel::AncillaX { cycle },
            StabKind::Z => MeasLabel::AncillaZ { cycle },
        };
        self.measure(ancilla, label, closed);
    }

    /// One full detection cycle; pads every element to the cycle length.
    fn cycle(&mut self, cycle: usize, start: u64, order: StabOrder) -> u64 {
        self.barrier(start);
        let (first, second) = match order {
            StabOrder::XThenZ => (StabKind::X, StabKind::Z),
            StabOrder::ZThenX => (StabKind::Z, StabKind::X),
        };
        self.half(first, cycle, start);
        self.half(second, cycle, start);
        let needed = self.free.iter().copied().max().unwrap_or(start) - start;
        let len = needed.max(self.device.t_cycle_ns);
        let end = start + len;
        for f in &mut self.free {
            *f = end;
        }
        end
    }

    fn product_prep(&mut self, psi_in: &ProductState) -> u64 {
        let mut end = 0;
        for (i, q) in psi_in.0.iter().enumerate() {
            if let Some(g) = q.prep_gate() {
                end = end.max(self.sqg(g, Role::from_index(i), 0));
            }
        }
        for f in &mut self.free {
            *f = (*f).max(end);
        }
        end
    }

    /// Logical Bell preparation: physical Bell pairs on D1-D4 and D2-D3 via
    /// an effective CZ routed through the resonator. The rotation pattern
    /// (√Y on both, close with √Y† on the partner) absorbs the iSWAP phases
    /// so each pair lands on (|00> + |11>)/√2 exactly.
    fn bell_prep(&mut self) -> u64 {
        for d in Role::DATA {
            self.sqg(Gate::SqrtY, d, 0);
        }
        for (a, b) in [(Role::D1, Role::D4), (Role::D2, Role::D3)] {
            self.mov(a, 0);
            self.cz(b, 0);
            let back = self.mov(a, 0);
            self.sqg(Gate::SqrtYDag, b, back);
        }
        let end = self.free.iter().copied().max().unwrap_or(0);
        for f in &mut self.free {
            *f = end;
        }
        end
    }

    /// Final data readout, optionally preceded by a rotation layer.
    fn data_readout(&mut self, rotations: [Option<Gate>; 4], reserve_layer: bool) {
        let start = self.free.iter().copied().max().unwrap_or(0);
        let mut meas_start = start;
        if reserve_layer || rotations.iter().any(|r| r.is_some()) {
            for (i, rot) in rotations.iter().enumerate() {
                if let Some(g) = rot {
                    self.sqg(*g, Role::from_index(i), start);
                }
            }
            meas_start = start + self.device.durations.sqg;
        }
        for (i, role) in Role::DATA.iter().enumerate() {
            self.measure(*role, MeasLabel::Data { index: i }, meas_start);
        }
    }

    fn finish(self, kind: &ExperimentKind, order: StabOrder) -> CircuitProgram {
        let mut instructions = self.instructions;
        instructions.sort_by_key(|ins| (ins.start_ns, ins.tier()));
        let duration = instructions.iter().map(Instruction::end_ns).max().unwrap_or(0);
        let element_names = Role::ALL
            .iter()
            .map(|r| format!("{}:{}", r.name(), self.device.element(*r).name))
            .collect();
        let setting = match kind {
            ExperimentKind::Tomography { setting, .. }
            | ExperimentKind::BellTomography { setting, .. } => Some(setting.label()),
            _ => None,
        };
        CircuitProgram {
            element_names,
            instructions,
            schema: self.schema,
            duration_ns: duration,
            basis: kind.readout_basis(),
            compiled: false,
            meta: ProgramMeta {
                experiment: kind.name().to_string(),
                state: kind.state_label(),
                cycles: kind.cycles(),
                stab_order: order,
                device_name: self.device.name.clone(),
                device_digest: self.device.digest_hex(),
                tomo_setting: setting,
            },
        }
    }
}

/// Build the timed, noiseless program for an experiment.
pub fn build_experiment(
    kind: &ExperimentKind,
    device: &DeviceModel,
    order: StabOrder,
) -> Result<CircuitProgram, CircuitError> {
    if let ExperimentKind::SingleStabilizer { cycles, .. } = kind {
        if *cycles != 1 {
            return Err(CircuitError::BadExperiment(format!(
                "single_stabilizer runs exactly one half-cycle (requested N = {cycles})"
            )));
        }
    }
    let mut b = Builder::new(device);
    b.prepare_all();
    match kind {
        ExperimentKind::SingleStabilizer { stabilizer, psi_in, .. } => {
            psi_in.basis()?;
            b.product_prep(psi_in);
            let start = b.free.iter().copied().max().unwrap_or(0);
            b.half(*stabilizer, 1, start);
            let rotations = readout_rotations(psi_in)?;
            b.data_readout(rotations, false);
        }
        ExperimentKind::Lifetime { psi_in, cycles } => {
            psi_in.basis()?;
            let mut t = b.product_prep(psi_in);
            for n in 1..=*cycles {
                t = b.cycle(n, t, order);
            }
            let rotations = readout_rotations(psi_in)?;
            b.data_readout(rotations, false);
        }
        ExperimentKind::Tomography { psi_in, cycles, setting } => {
            psi_in.basis()?;
            let mut t = b.product_prep(psi_in);
            for n in 1..=*cycles {
                t = b.cycle(n, t, order);
            }
            b.data_readout(setting.0.map(|basis| basis.rotation()), true);
        }
        ExperimentKind::BellLifetime { cycles } => {
            let mut t = b.bell_prep();
            for n in 1..=*cycles {
                t = b.cycle(n, t, order);
            }
            b.data_readout([None; 4], false);
        }
        ExperimentKind::BellTomography { cycles, setting } => {
            let mut t = b.bell_prep();
            for n in 1..=*cycles {
                t = b.cycle(n, t, order);
            }
            b.data_readout(setting.0.map(|basis| basis.rotation()), true);
        }
    }
    Ok(b.finish(kind, order))
}

/// Pre-readout rotations mapping the preparation basis onto Z.
fn readout_rotations(psi_in: &ProductState) -> Result<[Option<Gate>; 4], CircuitError> {
    Ok(match psi_in.basis()? {
        Basis::Z => [None; 4],
        Basis::X => [Some(Gate::SqrtYDag); 4],
    })
}

/// Insert the full error model into a timed program: a depolarizing event
/// after every gate, readout depolarization before every measurement, a
/// thermal bit flip after every preparation, and an idling Pauli channel for
/// every gap in every element's timeline.
pub fn compile_noise(
    program: &CircuitProgram,
    device: &DeviceModel,
    opts: &NoiseOptions,
) -> Result<CircuitProgram, CircuitError> {
    if program.compiled {
        return Err(CircuitError::AlreadyCompiled);
    }
    let cp: ChannelParams = device.channel_params();
    let mut out: Vec<Instruction> = Vec::with_capacity(program.instructions.len() * 2);
    let noise_at = |t: u64, event: NoiseEvent, kind: ErrorKind| Instruction {
        kind: InstructionKind::Noise { event, kind },
        targets: event.targets(),
        start_ns: t,
        duration_ns: 0,
    };

    for ins in &program.instructions {
        match &ins.kind {
            InstructionKind::PrepareZero => {
                let e = ins.targets[0];
                out.push(ins.clone());
                let p = cp.p_thermal[e] * opts.scale(ErrorKind::Thermal);
                out.push(noise_at(
                    ins.end_ns(),
                    NoiseEvent::BitFlip { p, target: e },
                    ErrorKind::Thermal,
                ));
            }
            InstructionKind::Gate { class, .. } => {
                out.push(ins.clone());
                let (event, kind) = match class {
                    GateClass::Sqg => {
                        let e = ins.targets[0];
                        let p = cp.p_sqg[e] * opts.scale(ErrorKind::Sqg);
                        (NoiseEvent::Depolarize1 { p, target: e }, ErrorKind::Sqg)
                    }
                    GateClass::Cz => {
                        let qubit = non_resonator_target(&ins.targets);
                        let p = cp.p_cz[qubit] * opts.scale(ErrorKind::Cz);
                        (
                            NoiseEvent::Depolarize2 {
                                p,
                                targets: [ins.targets[0], ins.targets[1]],
                            },
                            ErrorKind::Cz,
                        )
                    }
                    GateClass::Move => {
                        let qubit = non_resonator_target(&ins.targets);
                        let p = cp.p_move[qubit] * opts.scale(ErrorKind::Move);
                        (
                            NoiseEvent::Depolarize2 {
                                p,
                                targets: [ins.targets[0], ins.targets[1]],
                            },
                            ErrorKind::Move,
                        )
                    }
                };
                out.push(noise_at(ins.end_ns(), event, kind));
            }
            InstructionKind::Measure { .. } => {
                let e = ins.targets[0];
                let p = cp.p_readout[e] * opts.scale(ErrorKind::Readout);
                out.push(noise_at(
                    ins.start_ns,
                    NoiseEvent::Depolarize1 { p, target: e },
                    ErrorKind::Readout,
                ));
                out.push(ins.clone());
            }
            InstructionKind::Noise { .. } => unreachable!("program not compiled"),
            InstructionKind::Barrier => out.push(ins.clone()),
        }
    }

    // Idle gaps, including leading and trailing ones.
    let busy = program.busy_intervals();
    let idling_scale = opts.scale(ErrorKind::Idling);
    for e in 0..program.n_elements() {
        let el = device.element_by_index(e);
        let include =
            idling_scale > 0.0 && (e != Role::Resonator.index() || opts.resonator_idling);
        let t2 = el.t2_us(opts.t2);
        let mut cursor = 0u64;
        let mut gaps: Vec<(u64, u64)> = Vec::new();
        for &(s, t) in &busy[e] {
            if s > cursor {
                gaps.push((cursor, s));
            }
            cursor = cursor.max(t);
        }
        if program.duration_ns > cursor {
            gaps.push((cursor, program.duration_ns));
        }
        for (s, t) in gaps {
            let (px, py, pz) = if include {
                idling_channel((t - s) as f64, el.t1_us, t2)?
            } else {
                (0.0, 0.0, 0.0)
            };
            out.push(noise_at(
                t,
                NoiseEvent::PauliChannel1 { px, py, pz, target: e },
                ErrorKind::Idling,
            ));
        }
    }

    out.sort_by_key(|ins| (ins.start_ns, ins.tier()));
    let mut compiled = program.clone();
    compiled.instructions = out;
    compiled.compiled = true;
    Ok(compiled)
}

fn non_resonator_target(targets: &[usize]) -> usize {
    *targets
        .iter()
        .find(|&&t| t != Role::Resonator.index())
        .expect("two-element gate touches one qubit")
}
