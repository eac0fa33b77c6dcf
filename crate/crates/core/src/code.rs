//! The [[4,2,2]] error-detecting code: stabilizers, logical operators,
//! codewords, and logical-observable evaluation from measured bitstrings.
//!
//! Data qubits D1..D4 are elements 0..3 of a 4-element space, with D1 the
//! low bit of a basis-state index.
//!
//! Label convention: logical qubit i is defined by its operator pair
//! (X_Li, Z_Li). Ket labels |ab>_L follow the codeword list, under which the
//! first label digit `a` tracks logical qubit 2 and the second digit `b`
//! tracks logical qubit 1:  a = (1 - Z_L2)/2, b = (1 - Z_L1)/2 on Z-basis
//! codewords (and the analogous X relation on X-basis codewords). All
//! analysis quantities are computed from the operators; labels are only a
//! display convention, and the CLI can print both digit orders.

use num_complex::Complex64;
use thiserror::Error;

use crate::dense::StateVector;
use crate::pauli::PauliString;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodeError {
    #[error("unknown codeword label {label:?} for basis {basis:?}")]
    UnknownLabel { label: String, basis: CodewordBasis },
}

/// Readout/encoding basis for logical evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn name(self) -> &'static str {
        match self {
            Basis::Z => "Z",
            Basis::X => "X",
        }
    }
}

/// Basis families of the codeword list (the mixed family exists for
/// completeness; no experiment uses it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodewordBasis {
    Z,
    X,
    Mixed,
}

/// Static definition of the code on four data qubits.
#[derive(Debug, Clone)]
pub struct CodeDefinition {
    pub stabilizer_x: PauliString,
    pub stabilizer_z: PauliString,
    pub logical_x: [PauliString; 2],
    pub logical_z: [PauliString; 2],
}

impl Default for CodeDefinition {
    fn default() -> Self {
        Self::new()
    }
}

impl CodeDefinition {
    pub fn new() -> Self {
        Self {
            stabilizer_x: PauliString::parse("XXXX").unwrap(),
            stabilizer_z: PauliString::parse("ZZZZ").unwrap(),
            // X_L1 = X_D3 X_D4, X_L2 = X_D2 X_D4
            logical_x: [
                PauliString::parse("IIXX").unwrap(),
                PauliString::parse("IXIX").unwrap(),
            ],
            // Z_L1 = Z_D1 Z_D3, Z_L2 = Z_D1 Z_D2
            logical_z: [
                PauliString::parse("ZIZI").unwrap(),
                PauliString::parse("ZZII").unwrap(),
            ],
        }
    }

    /// Logical eigenvalue pair (qubit 1, qubit 2) from four measured data
    /// bits. Z basis evaluates (Z_L1, Z_L2) on computational bits; X basis
    /// evaluates (X_L1, X_L2) on X-basis bits.
    pub fn evaluate_logicals(&self, bits: [bool; 4], basis: Basis) -> (i8, i8) {
        let sign = |parity: bool| if parity { -1 } else { 1 };
        match basis {
            Basis::Z => (sign(bits[0] ^ bits[2]), sign(bits[0] ^ bits[1])),
            Basis::X => (sign(bits[2] ^ bits[3]), sign(bits[1] ^ bits[3])),
        }
    }

    /// Whether the measured data bits lie in the logical subspace of the
    /// readout basis: the measured stabilizer is +1, i.e. even total parity.
    pub fn in_logical_subspace(&self, bits: [bool; 4]) -> bool {
        !(bits[0] ^ bits[1] ^ bits[2] ^ bits[3])
    }

    /// Ket label |ab>_L for a logical eigenvalue pair; the first digit
    /// tracks logical qubit 2 (see module docs).
    pub fn ket_label(&self, eig: (i8, i8), basis: Basis) -> String {
        let digit = |e: i8| match basis {
            Basis::Z => {
                if e > 0 {
                    '0'
                } else {
                    '1'
                }
            }
            Basis::X => {
                if e > 0 {
                    '+'
                } else {
                    '-'
                }
            }
        };
        format!("{}{}", digit(eig.1), digit(eig.0))
    }

    /// Logical eigenvalue pair (qubit 1, qubit 2) for a ket label.
    pub fn eigenvalues_for_label(&self, label: &str, basis: Basis) -> Result<(i8, i8), CodeError> {
        let chars: Vec<char> = label.chars().collect();
        let parse = |c: char| match (basis, c) {
            (Basis::Z, '0') | (Basis::X, '+') => Some(1i8),
            (Basis::Z, '1') | (Basis::X, '-') => Some(-1i8),
            _ => None,
        };
        if chars.len() == 2 {
            if let (Some(a), Some(b)) = (parse(chars[0]), parse(chars[1])) {
                // First digit = qubit 2, second digit = qubit 1.
                return Ok((b, a));
            }
        }
        Err(CodeError::UnknownLabel {
            label: label.to_string(),
            basis: match basis {
                Basis::Z => CodewordBasis::Z,
                Basis::X => CodewordBasis::X,
            },
        })
    }

    /// The physical 4-qubit codeword state for a logical basis label.
    pub fn codeword(&self, label: &str, basis: CodewordBasis) -> Result<StateVector, CodeError> {
        let unknown = || CodeError::UnknownLabel { label: label.to_string(), basis };
        match basis {
            CodewordBasis::Z => {
                let branches: [usize; 2] = match label {
                    "00" => [ket_index("0000"), ket_index("1111")],
                    "01" => [ket_index("0011"), ket_index("1100")],
                    "10" => [ket_index("0101"), ket_index("1010")],
                    "11" => [ket_index("1001"), ket_index("0110")],
                    _ => return Err(unknown()),
                };
                Ok(superpose_kets(&branches))
            }
            CodewordBasis::X => {
                let branches: [&str; 2] = match label {
                    "++" => ["++++", "----"],
                    "+-" => ["+-+-", "-+-+"],
                    "-+" => ["++--", "--++"],
                    "--" => ["-++-", "+--+"],
                    _ => return Err(unknown()),
                };
                let mut amps = vec![Complex64::new(0.0, 0.0); 16];
                for b in branches {
                    add_pm_ket(&mut amps, b, 1.0);
                }
                Ok(normalized(amps))
            }
            CodewordBasis::Mixed => {
                // |0+>_L and |+0>_L: four branches each, mixing Z and X
                // single-qubit factors.
                let branches: [&str; 4] = match label {
                    "0+" => ["++00", "++11", "--00", "--11"],
                    "+0" => ["+0+0", "+1+1", "-0-0", "-1-1"],
                    _ => return Err(unknown()),
                };
                let mut amps = vec![Complex64::new(0.0, 0.0); 16];
                for b in branches {
                    add_pm_ket(&mut amps, b, 1.0);
                }
                Ok(normalized(amps))
            }
        }
    }

    /// The four Z-basis codewords as orthonormal 16-dimensional vectors.
    pub fn logical_basis_projectors(&self) -> [Vec<Complex64>; 4] {
        ["00", "01", "10", "11"].map(|label| {
            self.codeword(label, CodewordBasis::Z)
                .expect("static label")
                .amplitudes()
                .to_vec()
        })
    }
}

/// Index of a computational ket written |d1 d2 d3 d4> (D1 = low bit).
pub fn ket_index(ket: &str) -> usize {
    let mut idx = 0usize;
    for (j, c) in ket.chars().enumerate() {
        if c == '1' {
            idx |= 1 << j;
        }
    }
    idx
}

fn superpose_kets(indices: &[usize]) -> StateVector {
    let mut amps = vec![Complex64::new(0.0, 0.0); 16];
    let w = 1.0 / (indices.len() as f64).sqrt();
    for &i in indices {
        amps[i] = Complex64::new(w, 0.0);
    }
    StateVector::from_amplitudes(amps).expect("16-dim")
}

/// Add the product ket described by a string over {0,1,+,-} into `amps`.
fn add_pm_ket(amps: &mut [Complex64], ket: &str, weight: f64) {
    let factors: Vec<[f64; 2]> = ket
        .chars()
        .map(|c| match c {
            '0' => [1.0, 0.0],
            '1' => [0.0, 1.0],
            '+' => [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
            '-' => [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2],
            _ => panic!("bad ket char {c}"),
        })
        .collect();
    for (i, amp) in amps.iter_mut().enumerate() {
        let mut v = weight;
        for (j, f) in factors.iter().enumerate() {
            v *= f[(i >> j) & 1];
        }
        *amp += Complex64::new(v, 0.0);
    }
}

fn normalized(amps: Vec<Complex64>) -> StateVector {
    let mut sv = StateVector::from_amplitudes(amps).expect("16-dim");
    sv.normalize();
    sv
}
