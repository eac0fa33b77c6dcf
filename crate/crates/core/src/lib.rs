//! Monte Carlo simulation and analysis of a [[4,2,2]] quantum error-detection
//! experiment on a star-topology device: six qubits coupled to one central
//! computational resonator.
//!
//! The crate is organised in layers:
//!
//! - [`pauli`], [`gate`], [`tableau`], [`dense`]: the simulation substrate.
//!   Binary-symplectic Pauli algebra, stabilizer tableau evolution with
//!   measurement, and a small dense state-vector / density-matrix oracle used
//!   to cross-validate everything else.
//! - [`noise`]: Pauli noise channels and their sampling.
//! - [`code`]: the [[4,2,2]] code itself — stabilizers, logical operators,
//!   codewords, logical-subspace membership.
//! - [`device`], [`circuit`]: device calibration records, noise-channel
//!   derivation, and timed circuit construction for every experiment.
//! - [`engine`]: high-throughput bit-packed Monte Carlo execution.
//! - [`analysis`]: post-selection, syndrome statistics, decay fits, error
//!   budget.
//! - [`shadows`]: randomized-measurement (classical shadow) estimation of
//!   physical and logical density matrices.
//! - [`cli`]: the reproduction front-end used by the `star422` binary.

pub mod analysis;
pub mod circuit;
pub mod cli;
pub mod code;
pub mod dense;
pub mod device;
pub mod engine;
pub mod gate;
pub mod noise;
pub mod pauli;
pub mod shadows;
pub mod tableau;

pub use circuit::{CircuitProgram, ExperimentKind, Instruction, ProductState};
pub use code::CodeDefinition;
pub use dense::{DensityMatrix, StateVector};
pub use device::DeviceModel;
pub use gate::Gate;
pub use noise::NoiseEvent;
pub use pauli::PauliString;
pub use tableau::Tableau;
