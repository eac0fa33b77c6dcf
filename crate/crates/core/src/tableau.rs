//! Stabilizer tableau simulation with measurement.
//!
//! Standard destabilizer/stabilizer tableau: rows 0..n are destabilizers,
//! rows n..2n stabilizers, row 2n is scratch space for deterministic
//! measurements. Storage is bit-packed with a column-major element layout, so
//! a gate on one or two elements touches one or two machine words per
//! 64 rows regardless of n.

use rand::{Rng, SeedableRng};

use crate::gate::{Gate, GateError};
use crate::pauli::{phase_contribution, words_for, PauliString, WORD_BITS};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tableau {
    n: usize,
    rows: usize,
    words: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    r: Vec<u64>,
}

/// Outcome of a Z measurement. For outcomes that were random, `collapsed`
/// holds the pre-collapse stabilizer that anticommuted with the measured
/// operator; it maps one measurement branch onto the other, which is what
/// the frame engine needs to reproduce collapse statistics.
#[derive(Clone, Debug)]
pub struct MeasureOutcome {
    pub bit: bool,
    pub collapsed: Option<PauliString>,
}

impl MeasureOutcome {
    pub fn was_random(&self) -> bool {
        self.collapsed.is_some()
    }
}

impl Tableau {
    /// New tableau stabilizing |0...0>.
    pub fn new(n: usize) -> Self {
        let rows = 2 * n + 1;
        let words = words_for(rows);
        let mut t = Self {
            n,
            rows,
            words,
            x: vec![0; n * words],
            z: vec![0; n * words],
            r: vec![0; words],
        };
        for j in 0..n {
            t.set_x_bit(j, j, true); // destabilizer j = X_j
            t.set_z_bit(j, n + j, true); // stabilizer j = Z_j
        }
        t
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn col(&self, j: usize) -> usize {
        j * self.words
    }

    #[inline]
    fn x_bit(&self, j: usize, row: usize) -> bool {
        (self.x[self.col(j) + row / WORD_BITS] >> (row % WORD_BITS)) & 1 == 1
    }

    #[inline]
    fn z_bit(&self, j: usize, row: usize) -> bool {
        (self.z[self.col(j) + row / WORD_BITS] >> (row % WORD_BITS)) & 1 == 1
    }

    #[inline]
    fn r_bit(&self, row: usize) -> bool {
        (self.r[row / WORD_BITS] >> (row % WORD_BITS)) & 1 == 1
    }

    fn set_x_bit(&mut self, j: usize, row: usize, v: bool) {
        let idx = self.col(j) + row / WORD_BITS;
        let mask = 1u64 << (row % WORD_BITS);
        if v {
            self.x[idx] |= mask;
        } else {
            self.x[idx] &= !mask;
        }
    }

    fn set_z_bit(&mut self, j: usize, row: usize, v: bool) {
        let idx = self.col(j) + row / WORD_BITS;
        let mask = 1u64 << (row % WORD_BITS);
        if v {
            self.z[idx] |= mask;
        } else {
            self.z[idx] &= !mask;
        }
    }

    fn set_r_bit(&mut self, row: usize, v: bool) {
        let mask = 1u64 << (row % WORD_BITS);
        if v {
            self.r[row / WORD_BITS] |= mask;
        } else {
            self.r[row / WORD_BITS] &= !mask;
        }
    }

    /// Extract row `i` as a signed Pauli string.
    pub fn row_pauli(&self, row: usize) -> PauliString {
        let mut p = PauliString::identity(self.n);
        for j in 0..self.n {
            p.set_x(j, self.x_bit(j, row));
            p.set_z(j, self.z_bit(j, row));
        }
        if self.r_bit(row) {
            p.flip_sign();
        }
        p
    }

    pub fn stabilizer(&self, i: usize) -> PauliString {
        self.row_pauli(self.n + i)
    }

    pub fn destabilizer(&self, i: usize) -> PauliString {
        self.row_pauli(i)
    }

    // Column-wise gate kernels. Each operates on every row at once.

    fn sq_gate(&mut self, g: Gate, q: usize) {
        let c = self.col(q);
        for w in 0..self.words {
            let xw = self.x[c + w];
            let zw = self.z[c + w];
            match g {
                Gate::X => self.r[w] ^= zw,
                Gate::Y => self.r[w] ^= xw ^ zw,
                Gate::Z => self.r[w] ^= xw,
                Gate::Hadamard => {
                    self.r[w] ^= xw & zw;
                    self.x[c + w] = zw;
                    self.z[c + w] = xw;
                }
                Gate::S => {
                    self.r[w] ^= xw & zw;
                    self.z[c + w] = zw ^ xw;
                }
                Gate::SDag => {
                    self.r[w] ^= xw & !zw;
                    self.z[c + w] = zw ^ xw;
                }
                Gate::SqrtY => {
                    // X -> -Z, Z -> X, Y -> Y
                    self.r[w] ^= xw & !zw;
                    self.x[c + w] = zw;
                    self.z[c + w] = xw;
                }
                Gate::SqrtYDag => {
                    // X -> Z, Z -> -X, Y -> Y
                    self.r[w] ^= !xw & zw;
                    self.x[c + w] = zw;
                    self.z[c + w] = xw;
                }
                Gate::SqrtX => {
                    // X -> X, Y -> Z, Z -> -Y
                    self.r[w] ^= !xw & zw;
                    self.x[c + w] = xw ^ zw;
                }
                Gate::SqrtXDag => {
                    // X -> X, Y -> -Z, Z -> Y
                    self.r[w] ^= xw & zw;
                    self.x[c + w] = xw ^ zw;
                }
                _ => unreachable!("two-qubit gate in single-qubit kernel"),
            }
        }
    }

    fn cx(&mut self, ctrl: usize, tgt: usize) {
        let (cc, ct) = (self.col(ctrl), self.col(tgt));
        for w in 0..self.words {
            let xc = self.x[cc + w];
            let zc = self.z[cc + w];
            let xt = self.x[ct + w];
            let zt = self.z[ct + w];
            self.r[w] ^= xc & zt & !(xt ^ zc);
            self.x[ct + w] = xt ^ xc;
            self.z[cc + w] = zc ^ zt;
        }
    }

    fn cz(&mut self, a: usize, b: usize) {
        let (ca, cb) = (self.col(a), self.col(b));
        for w in 0..self.words {
            let xa = self.x[ca + w];
            let za = self.z[ca + w];
            let xb = self.x[cb + w];
            let zb = self.z[cb + w];
            self.r[w] ^= xa & xb & (za ^ zb);
            self.z[ca + w] = za ^ xb;
            self.z[cb + w] = zb ^ xa;
        }
    }

    fn swap(&mut self, a: usize, b: usize) {
        let (ca, cb) = (self.col(a), self.col(b));
        for w in 0..self.words {
            self.x.swap(ca + w, cb + w);
            self.z.swap(ca + w, cb + w);
        }
    }

    /// Conjugate every row by the given gate.
    pub fn apply(&mut self, gate: Gate, targets: &[usize]) -> Result<(), GateError> {
        gate.check_targets(targets, self.n)?;
        match gate {
            Gate::Cx => self.cx(targets[0], targets[1]),
            Gate::Cz => self.cz(targets[0], targets[1]),
            Gate::Swap => self.swap(targets[0], targets[1]),
            Gate::ISwap => {
                // iSWAP = SWAP · CZ · (S ⊗ S)
                let (a, b) = (targets[0], targets[1]);
                self.sq_gate(Gate::S, a);
                self.sq_gate(Gate::S, b);
                self.cz(a, b);
                self.swap(a, b);
            }
            g => self.sq_gate(g, targets[0]),
        }
        Ok(())
    }

    /// Multiply a Pauli into the state: rows anticommuting with it flip sign.
    pub fn apply_pauli(&mut self, p: &PauliString) {
        debug_assert_eq!(p.len(), self.n);
        let mut acc = vec![0u64; self.words];
        for j in 0..self.n {
            let c = self.col(j);
            if p.x_bit(j) {
                for w in 0..self.words {
                    acc[w] ^= self.z[c + w];
                }
            }
            if p.z_bit(j) {
                for w in 0..self.words {
                    acc[w] ^= self.x[c + w];
                }
            }
        }
        for w in 0..self.words {
            self.r[w] ^= acc[w];
        }
    }

    /// Row h := (row i) · (row h), with exact phase accumulation.
    ///
    /// For destabilizer rows the product can carry a factor of i; their signs
    /// are never observable, so the imaginary part is dropped there. For
    /// stabilizer and scratch rows the sum is provably even.
    fn rowsum(&mut self, h: usize, i: usize) {
        let mut k: u32 = 0;
        if self.r_bit(h) {
            k += 2;
        }
        if self.r_bit(i) {
            k += 2;
        }
        for j in 0..self.n {
            k += phase_contribution(
                self.x_bit(j, i),
                self.z_bit(j, i),
                self.x_bit(j, h),
                self.z_bit(j, h),
            );
        }
        debug_assert!(h < self.n || k % 2 == 0, "rowsum produced an imaginary phase");
        self.set_r_bit(h, k % 4 == 2);
        for j in 0..self.n {
            if self.x_bit(j, i) {
                let cur = self.x_bit(j, h);
                self.set_x_bit(j, h, !cur);
            }
            if self.z_bit(j, i) {
                let cur = self.z_bit(j, h);
                self.set_z_bit(j, h, !cur);
            }
        }
    }

    fn copy_row(&mut self, dst: usize, src: usize) {
        for j in 0..self.n {
            let xs = self.x_bit(j, src);
            let zs = self.z_bit(j, src);
            self.set_x_bit(j, dst, xs);
            self.set_z_bit(j, dst, zs);
        }
        let rs = self.r_bit(src);
        self.set_r_bit(dst, rs);
    }

    fn zero_row(&mut self, row: usize) {
        for j in 0..self.n {
            self.set_x_bit(j, row, false);
            self.set_z_bit(j, row, false);
        }
        self.set_r_bit(row, false);
    }

    /// Measure Z on element `q`, updating the state.
    pub fn measure_z(&mut self, q: usize, rng: &mut impl Rng) -> MeasureOutcome {
        assert!(q < self.n, "measurement target out of range");
        let n = self.n;
        // A stabilizer with an X component on q makes the outcome random.
        let p = (n..2 * n).find(|&i| self.x_bit(q, i));
        match p {
            Some(p) => {
                let collapsed = self.row_pauli(p);
                for i in 0..2 * n {
                    if i != p && self.x_bit(q, i) {
                        self.rowsum(i, p);
                    }
                }
                self.copy_row(p - n, p);
                self.zero_row(p);
                self.set_z_bit(q, p, true);
                let bit: bool = rng.random();
                self.set_r_bit(p, bit);
                MeasureOutcome { bit, collapsed: Some(collapsed) }
            }
            None => {
                let scratch = 2 * n;
                self.zero_row(scratch);
                for i in 0..n {
                    if self.x_bit(q, i) {
                        self.rowsum(scratch, i + n);
                    }
                }
                let bit = self.r_bit(scratch);
                self.zero_row(scratch);
                MeasureOutcome { bit, collapsed: None }
            }
        }
    }

    /// Deterministic Z value of element `q`, if there is one, without
    /// touching the state.
    pub fn peek_z(&self, q: usize) -> Option<bool> {
        if (self.n..2 * self.n).any(|i| self.x_bit(q, i)) {
            return None;
        }
        // The deterministic branch never draws randomness.
        let mut probe = self.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Some(probe.measure_z(q, &mut rng).bit)
    }

    /// Reset element `q` to |0>: measure and correct.
    pub fn reset_z(&mut self, q: usize, rng: &mut impl Rng) {
        if self.measure_z(q, rng).bit {
            self.apply(Gate::X, &[q]).expect("in-range");
        }
    }

    /// Whether the signed Pauli is in the stabilizer group with its sign.
    pub fn is_stabilized_by(&self, p: &PauliString) -> bool {
        // Reduce p against the stabilizer rows using destabilizer pairing.
        let mut acc = PauliString::identity(self.n);
        for i in 0..self.n {
            if self.destabilizer(i).anticommutes_with(p) {
                let s = self.stabilizer(i);
                match acc.try_mul(&s) {
                    Ok(next) => acc = next,
                    Err(_) => return false,
                }
            }
        }
        acc == *p
    }

    /// Structural invariants: stabilizers mutually commute, destabilizer i
    /// anticommutes exactly with stabilizer i.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.n;
        let stabs: Vec<_> = (0..n).map(|i| self.stabilizer(i)).collect();
        let destabs: Vec<_> = (0..n).map(|i| self.destabilizer(i)).collect();
        for i in 0..n {
            for j in 0..n {
                if stabs[i].anticommutes_with(&stabs[j]) {
                    return Err(format!("stabilizers {i} and {j} anticommute"));
                }
                if destabs[i].anticommutes_with(&destabs[j]) {
                    return Err(format!("destabilizers {i} and {j} anticommute"));
                }
                let want = i == j;
                if destabs[i].anticommutes_with(&stabs[j]) != want {
                    return Err(format!("destabilizer {i} vs stabilizer {j}: pairing broken"));
                }
            }
        }
        Ok(())
    }
}
