//! Binary-symplectic representation of signed Pauli operators.
//!
//! An n-element Pauli operator is stored as two bit vectors (X part, Z part)
//! plus a sign in {+1, -1}. Bit j of the X (Z) vector set means the operator
//! acts with X (Z) on element j; both bits set means Y. Phases are tracked
//! mod 4 internally so that products pick up the correct symplectic sign.

use std::fmt;

use thiserror::Error;

pub const WORD_BITS: usize = 64;

#[inline]
pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PauliError {
    #[error("element index {index} out of range for {n} elements")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("operand sizes differ: {lhs} vs {rhs}")]
    SizeMismatch { lhs: usize, rhs: usize },
    #[error("product has imaginary phase i^{phase}; not representable with a real sign")]
    ImaginaryProduct { phase: u8 },
    #[error("cannot parse Pauli string from {0:?}")]
    Parse(String),
}

/// Single-element Pauli kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliKind {
    I,
    X,
    Y,
    Z,
}

impl PauliKind {
    pub fn bits(self) -> (bool, bool) {
        match self {
            PauliKind::I => (false, false),
            PauliKind::X => (true, false),
            PauliKind::Y => (true, true),
            PauliKind::Z => (false, true),
        }
    }

    pub fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => PauliKind::I,
            (true, false) => PauliKind::X,
            (true, true) => PauliKind::Y,
            (false, true) => PauliKind::Z,
        }
    }
}

/// A signed n-element Pauli operator.
#[derive(Clone, PartialEq, Eq)]
pub struct PauliString {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    neg: bool,
}

impl PauliString {
    /// The identity on `n` elements.
    pub fn identity(n: usize) -> Self {
        let w = words_for(n);
        Self { n, x: vec![0; w], z: vec![0; w], neg: false }
    }

    /// A single-element operator embedded in `n` elements.
    pub fn single(n: usize, index: usize, kind: PauliKind) -> Result<Self, PauliError> {
        if index >= n {
            return Err(PauliError::IndexOutOfRange { index, n });
        }
        let mut p = Self::identity(n);
        let (x, z) = kind.bits();
        p.set_x(index, x);
        p.set_z(index, z);
        Ok(p)
    }

    /// Parse from text like `"XZIY"` or `"-XXXX"`.
    pub fn parse(text: &str) -> Result<Self, PauliError> {
        let mut chars = text.chars().peekable();
        let mut neg = false;
        match chars.peek() {
            Some('+') => {
                chars.next();
            }
            Some('-') => {
                neg = true;
                chars.next();
            }
            _ => {}
        }
        let kinds: Result<Vec<PauliKind>, PauliError> = chars
            .map(|c| match c {
                'I' | 'i' | '_' | '.' => Ok(PauliKind::I),
                'X' | 'x' => Ok(PauliKind::X),
                'Y' | 'y' => Ok(PauliKind::Y),
                'Z' | 'z' => Ok(PauliKind::Z),
                _ => Err(PauliError::Parse(text.to_string())),
            })
            .collect();
        let kinds = kinds?;
        let mut p = Self::identity(kinds.len());
        for (j, k) in kinds.iter().enumerate() {
            let (x, z) = k.bits();
            p.set_x(j, x);
            p.set_z(j, z);
        }
        p.neg = neg;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_identity(&self) -> bool {
        !self.neg && self.x.iter().all(|&w| w == 0) && self.z.iter().all(|&w| w == 0)
    }

    pub fn sign(&self) -> i8 {
        if self.neg {
            -1
        } else {
            1
        }
    }

    pub fn set_sign(&mut self, sign: i8) {
        self.neg = sign < 0;
    }

    pub fn flip_sign(&mut self) {
        self.neg = !self.neg;
    }

    #[inline]
    pub fn x_bit(&self, j: usize) -> bool {
        (self.x[j / WORD_BITS] >> (j % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn z_bit(&self, j: usize) -> bool {
        (self.z[j / WORD_BITS] >> (j % WORD_BITS)) & 1 == 1
    }

    pub fn set_x(&mut self, j: usize, v: bool) {
        let mask = 1u64 << (j % WORD_BITS);
        if v {
            self.x[j / WORD_BITS] |= mask;
        } else {
            self.x[j / WORD_BITS] &= !mask;
        }
    }

    pub fn set_z(&mut self, j: usize, v: bool) {
        let mask = 1u64 << (j % WORD_BITS);
        if v {
            self.z[j / WORD_BITS] |= mask;
        } else {
            self.z[j / WORD_BITS] &= !mask;
        }
    }

    pub fn kind(&self, j: usize) -> PauliKind {
        PauliKind::from_bits(self.x_bit(j), self.z_bit(j))
    }

    pub fn set_kind(&mut self, j: usize, kind: PauliKind) {
        let (x, z) = kind.bits();
        self.set_x(j, x);
        self.set_z(j, z);
    }

    /// Number of non-identity tensor factors.
    pub fn weight(&self) -> usize {
        self.x
            .iter()
            .zip(&self.z)
            .map(|(&xw, &zw)| (xw | zw).count_ones() as usize)
            .sum()
    }

    /// X-part and Z-part words (low word first). Only meaningful for n <= 64.
    pub fn masks(&self) -> (u64, u64) {
        debug_assert!(self.n <= WORD_BITS);
        (self.x[0], self.z[0])
    }

    pub fn x_words(&self) -> &[u64] {
        &self.x
    }

    pub fn z_words(&self) -> &[u64] {
        &self.z
    }

    /// Symplectic product: true when the operators anticommute.
    pub fn anticommutes_with(&self, other: &Self) -> bool {
        let mut acc = 0u64;
        for w in 0..self.x.len() {
            acc ^= (self.x[w] & other.z[w]) ^ (self.z[w] & other.x[w]);
        }
        acc.count_ones() % 2 == 1
    }

    pub fn commutes_with(&self, other: &Self) -> bool {
        !self.anticommutes_with(other)
    }

    /// Phase exponent k (mod 4) such that `self * other = i^k * P` where P is
    /// the unsigned bitwise product. Includes the operands' own signs.
    pub fn product_phase_exponent(&self, other: &Self) -> u8 {
        let mut k: u32 = 0;
        if self.neg {
            k += 2;
        }
        if other.neg {
            k += 2;
        }
        for j in 0..self.n {
            k = (k + phase_contribution(self.x_bit(j), self.z_bit(j), other.x_bit(j), other.z_bit(j))) % 4;
        }
        (k % 4) as u8
    }

    /// Product of two equally sized Pauli strings.
    ///
    /// Errors when the result carries an imaginary phase (the operands
    /// anticommute), which has no representation with a real sign.
    pub fn try_mul(&self, other: &Self) -> Result<Self, PauliError> {
        if self.n != other.n {
            return Err(PauliError::SizeMismatch { lhs: self.n, rhs: other.n });
        }
        let phase = self.product_phase_exponent(other);
        if phase % 2 != 0 {
            return Err(PauliError::ImaginaryProduct { phase });
        }
        let mut out = Self::identity(self.n);
        for w in 0..self.x.len() {
            out.x[w] = self.x[w] ^ other.x[w];
            out.z[w] = self.z[w] ^ other.z[w];
        }
        out.neg = phase == 2;
        Ok(out)
    }

    /// Product, panicking on an imaginary phase. Products of commuting
    /// operators are always safe.
    pub fn mul(&self, other: &Self) -> Self {
        self.try_mul(other).expect("Pauli product phase")
    }
}

/// Exponent of i contributed by one tensor factor of the product
/// (x1,z1)·(x2,z2), in {0, 1, 3} mod 4.
///
/// Derived from X·Y = iZ, Y·Z = iX, Z·X = iY and their reversals.
#[inline]
pub(crate) fn phase_contribution(x1: bool, z1: bool, x2: bool, z2: bool) -> u32 {
    match ((x1, z1), (x2, z2)) {
        ((true, false), (true, true)) => 1,  // X·Y
        ((true, true), (true, false)) => 3,  // Y·X
        ((true, true), (false, true)) => 1,  // Y·Z
        ((false, true), (true, true)) => 3,  // Z·Y
        ((false, true), (true, false)) => 1, // Z·X
        ((true, false), (false, true)) => 3, // X·Z
        _ => 0,
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", if self.neg { '-' } else { '+' })?;
        for j in 0..self.n {
            let c = match self.kind(j) {
                PauliKind::I => 'I',
                PauliKind::X => 'X',
                PauliKind::Y => 'Y',
                PauliKind::Z => 'Z',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
