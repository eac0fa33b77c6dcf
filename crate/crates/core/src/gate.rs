//! Named Clifford gates shared by the tableau, dense, and frame simulators.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GateError {
    #[error("unknown gate name {0:?}")]
    UnknownName(String),
    #[error("gate {gate} expects {expected} targets, got {got}")]
    ArityMismatch { gate: Gate, expected: usize, got: usize },
    #[error("duplicate target {0}")]
    DuplicateTarget(usize),
    #[error("target {index} out of range for {n} elements")]
    TargetOutOfRange { index: usize, n: usize },
}

/// Clifford gate set used by the experiments: √Y-type basis changes, the
/// Paulis, CZ, and the MOVE (iSWAP) qubit-resonator transfer; plus a few
/// standard extras so the simulators can express arbitrary test circuits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    X,
    Y,
    Z,
    Hadamard,
    S,
    SDag,
    SqrtX,
    SqrtXDag,
    SqrtY,
    SqrtYDag,
    Cz,
    Cx,
    Swap,
    ISwap,
}

impl Gate {
    pub fn arity(self) -> usize {
        match self {
            Gate::Cz | Gate::Cx | Gate::Swap | Gate::ISwap => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::X => "x",
            Gate::Y => "y",
            Gate::Z => "z",
            Gate::Hadamard => "h",
            Gate::S => "s",
            Gate::SDag => "sdg",
            Gate::SqrtX => "sx",
            Gate::SqrtXDag => "sxdg",
            Gate::SqrtY => "sy",
            Gate::SqrtYDag => "sydg",
            Gate::Cz => "cz",
            Gate::Cx => "cx",
            Gate::Swap => "swap",
            Gate::ISwap => "iswap",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, GateError> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "x" => Gate::X,
            "y" => Gate::Y,
            "z" => Gate::Z,
            "h" | "hadamard" => Gate::Hadamard,
            "s" => Gate::S,
            "sdg" | "sdag" => Gate::SDag,
            "sx" | "sqrtx" => Gate::SqrtX,
            "sxdg" | "sqrtxdag" => Gate::SqrtXDag,
            "sy" | "sqrty" => Gate::SqrtY,
            "sydg" | "sqrtydag" => Gate::SqrtYDag,
            "cz" => Gate::Cz,
            "cx" | "cnot" => Gate::Cx,
            "swap" => Gate::Swap,
            "iswap" | "move" => Gate::ISwap,
            other => return Err(GateError::UnknownName(other.to_string())),
        })
    }

    pub fn inverse(self) -> Self {
        match self {
            Gate::S => Gate::SDag,
            Gate::SDag => Gate::S,
            Gate::SqrtX => Gate::SqrtXDag,
            Gate::SqrtXDag => Gate::SqrtX,
            Gate::SqrtY => Gate::SqrtYDag,
            Gate::SqrtYDag => Gate::SqrtY,
            // iSWAP⁻¹ differs from iSWAP by local S† corrections; callers that
            // need exact inversion should use `inverse_sequence`.
            other => other,
        }
    }

    /// Gate sequence applying the exact inverse (iSWAP needs local phase
    /// corrections; everything else is covered by `inverse`).
    pub fn inverse_sequence(self, targets: &[usize]) -> Vec<(Gate, Vec<usize>)> {
        match self {
            Gate::ISwap => vec![
                (Gate::Swap, targets.to_vec()),
                (Gate::Cz, targets.to_vec()),
                (Gate::SDag, vec![targets[0]]),
                (Gate::SDag, vec![targets[1]]),
            ],
            other => vec![(other.inverse(), targets.to_vec())],
        }
    }

    /// Validate a target list against this gate and an element count.
    pub fn check_targets(self, targets: &[usize], n: usize) -> Result<(), GateError> {
        if targets.len() != self.arity() {
            return Err(GateError::ArityMismatch {
                gate: self,
                expected: self.arity(),
                got: targets.len(),
            });
        }
        for (i, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(GateError::TargetOutOfRange { index: t, n });
            }
            if targets[..i].contains(&t) {
                return Err(GateError::DuplicateTarget(t));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for g in [
            Gate::X,
            Gate::Y,
            Gate::Z,
            Gate::Hadamard,
            Gate::S,
            Gate::SDag,
            Gate::SqrtX,
            Gate::SqrtXDag,
            Gate::SqrtY,
            Gate::SqrtYDag,
            Gate::Cz,
            Gate::Cx,
            Gate::Swap,
            Gate::ISwap,
        ] {
            assert_eq!(Gate::from_name(g.name()).unwrap(), g);
        }
        assert_eq!(Gate::from_name("move").unwrap(), Gate::ISwap);
        assert!(Gate::from_name("t").is_err());
    }

    #[test]
    fn target_validation() {
        assert!(Gate::Cz.check_targets(&[0, 1], 2).is_ok());
        assert_eq!(
            Gate::Cz.check_targets(&[0], 2),
            Err(GateError::ArityMismatch { gate: Gate::Cz, expected: 2, got: 1 })
        );
        assert_eq!(Gate::Cz.check_targets(&[1, 1], 3), Err(GateError::DuplicateTarget(1)));
        assert_eq!(
            Gate::X.check_targets(&[4], 3),
            Err(GateError::TargetOutOfRange { index: 4, n: 3 })
        );
    }
}
