//! Small dense reference oracle: state vectors and density matrices for up
//! to 8 elements, used to cross-validate the stabilizer machinery and as the
//! sampling oracle in shadow-estimator tests.
//!
//! Index convention: element j is bit j of the basis-state index, so a ket
//! written |d1 d2 d3 d4> has d1 at bit 0.

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::gate::Gate;
use crate::noise::NoiseEvent;
use crate::pauli::PauliString;

pub const MAX_DENSE_ELEMENTS: usize = 8;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("dense simulation supports at most {MAX_DENSE_ELEMENTS} elements, got {0}")]
    TooManyElements(usize),
    #[error("state dimension {0} is not a power of two")]
    BadDimension(usize),
}

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// 2x2 unitary for a single-element gate, or None for two-element gates.
pub fn gate_matrix_1q(gate: Gate) -> Option<[[Complex64; 2]; 2]> {
    let f = std::f64::consts::FRAC_1_SQRT_2;
    Some(match gate {
        Gate::X => [[C0, C1], [C1, C0]],
        Gate::Y => [[C0, c(0.0, -1.0)], [c(0.0, 1.0), C0]],
        Gate::Z => [[C1, C0], [C0, c(-1.0, 0.0)]],
        Gate::Hadamard => [[c(f, 0.0), c(f, 0.0)], [c(f, 0.0), c(-f, 0.0)]],
        Gate::S => [[C1, C0], [C0, c(0.0, 1.0)]],
        Gate::SDag => [[C1, C0], [C0, c(0.0, -1.0)]],
        Gate::SqrtX => [[c(f, 0.0), c(0.0, -f)], [c(0.0, -f), c(f, 0.0)]],
        Gate::SqrtXDag => [[c(f, 0.0), c(0.0, f)], [c(0.0, f), c(f, 0.0)]],
        Gate::SqrtY => [[c(f, 0.0), c(-f, 0.0)], [c(f, 0.0), c(f, 0.0)]],
        Gate::SqrtYDag => [[c(f, 0.0), c(f, 0.0)], [c(-f, 0.0), c(f, 0.0)]],
        _ => return None,
    })
}

/// 4x4 unitary in the basis |v0 v1> (first target is the left ket symbol).
pub fn gate_matrix_2q(gate: Gate) -> Option<[[Complex64; 4]; 4]> {
    let i = c(0.0, 1.0);
    let m1 = c(-1.0, 0.0);
    Some(match gate {
        Gate::Cz => [
            [C1, C0, C0, C0],
            [C0, C1, C0, C0],
            [C0, C0, C1, C0],
            [C0, C0, C0, m1],
        ],
        Gate::Cx => [
            [C1, C0, C0, C0],
            [C0, C1, C0, C0],
            [C0, C0, C0, C1],
            [C0, C0, C1, C0],
        ],
        Gate::Swap => [
            [C1, C0, C0, C0],
            [C0, C0, C1, C0],
            [C0, C1, C0, C0],
            [C0, C0, C0, C1],
        ],
        Gate::ISwap => [
            [C1, C0, C0, C0],
            [C0, C0, i, C0],
            [C0, i, C0, C0],
            [C0, C0, C0, C1],
        ],
        _ => return None,
    })
}

#[derive(Clone, Debug)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zero_state(n: usize) -> Result<Self, DenseError> {
        if n > MAX_DENSE_ELEMENTS {
            return Err(DenseError::TooManyElements(n));
        }
        let mut amps = vec![C0; 1 << n];
        amps[0] = C1;
        Ok(Self { n, amps })
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self, DenseError> {
        let dim = amps.len();
        if !dim.is_power_of_two() {
            return Err(DenseError::BadDimension(dim));
        }
        let n = dim.trailing_zeros() as usize;
        if n > MAX_DENSE_ELEMENTS {
            return Err(DenseError::TooManyElements(n));
        }
        Ok(Self { n, amps })
    }

    /// Basis state |b_0 b_1 ...> from a bit pattern (element j = bit j).
    pub fn basis_state(n: usize, bits: usize) -> Result<Self, DenseError> {
        let mut s = Self::zero_state(n)?;
        s.amps[0] = C0;
        s.amps[bits] = C1;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for a in &mut self.amps {
                *a /= n;
            }
        }
    }

    pub fn apply_gate(&mut self, gate: Gate, targets: &[usize]) {
        gate.check_targets(targets, self.n).expect("valid targets");
        if let Some(m) = gate_matrix_1q(gate) {
            let q = targets[0];
            let bit = 1usize << q;
            for i in 0..self.amps.len() {
                if i & bit == 0 {
                    let a0 = self.amps[i];
                    let a1 = self.amps[i | bit];
                    self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                    self.amps[i | bit] = m[1][0] * a0 + m[1][1] * a1;
                }
            }
        } else {
            let m = gate_matrix_2q(gate).expect("gate arity");
            let b0 = 1usize << targets[0];
            let b1 = 1usize << targets[1];
            for i in 0..self.amps.len() {
                if i & b0 == 0 && i & b1 == 0 {
                    // Label v0*2 + v1 where v0 is the first target's bit.
                    let idx = [i, i | b1, i | b0, i | b0 | b1];
                    let a: Vec<Complex64> = idx.iter().map(|&k| self.amps[k]).collect();
                    for (row, &k) in idx.iter().enumerate() {
                        self.amps[k] =
                            m[row][0] * a[0] + m[row][1] * a[1] + m[row][2] * a[2] + m[row][3] * a[3];
                    }
                }
            }
        }
    }

    pub fn apply_pauli(&mut self, p: &PauliString) {
        assert_eq!(p.len(), self.n);
        let (xm, zm) = p.masks();
        let xm = xm as usize;
        let zm = zm as usize;
        let y_count = (xm & zm).count_ones();
        let base = match y_count % 4 {
            0 => C1,
            1 => c(0.0, 1.0),
            2 => c(-1.0, 0.0),
            _ => c(0.0, -1.0),
        } * c(f64::from(p.sign()), 0.0);
        let mut out = vec![C0; self.amps.len()];
        for (i, &a) in self.amps.iter().enumerate() {
            let neg = ((i & zm).count_ones() % 2) == 1;
            let phase = if neg { -base } else { base };
            out[i ^ xm] = phase * a;
        }
        self.amps = out;
    }

    pub fn probability_bit(&self, q: usize, value: bool) -> f64 {
        let bit = 1usize << q;
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| ((i & bit) != 0) == value)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    pub fn measure_z(&mut self, q: usize, rng: &mut impl Rng) -> bool {
        let p1 = self.probability_bit(q, true);
        let outcome = rng.random::<f64>() < p1;
        self.project_bit(q, outcome);
        outcome
    }

    pub fn project_bit(&mut self, q: usize, value: bool) {
        let bit = 1usize << q;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if ((i & bit) != 0) != value {
                *a = C0;
            }
        }
        self.normalize();
    }

    pub fn reset_z(&mut self, q: usize, rng: &mut impl Rng) {
        if self.measure_z(q, rng) {
            self.apply_gate(Gate::X, &[q]);
        }
    }

    pub fn overlap(&self, other: &Self) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// <psi| P |psi>, real for Hermitian P.
    pub fn expectation_pauli(&self, p: &PauliString) -> f64 {
        let mut moved = self.clone();
        moved.apply_pauli(p);
        self.overlap(&moved).re
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    dim: usize,
    entries: Vec<Complex64>, // row-major dim x dim
}

impl DensityMatrix {
    pub fn zeros(n: usize) -> Self {
        let dim = 1 << n;
        Self { n, dim, entries: vec![C0; dim * dim] }
    }

    pub fn from_pure(state: &StateVector) -> Self {
        let dim = state.dim();
        let mut m = Self::zeros(state.len());
        for r in 0..dim {
            for col in 0..dim {
                m.entries[r * dim + col] = state.amps[r] * state.amps[col].conj();
            }
        }
        m
    }

    pub fn maximally_mixed(n: usize) -> Self {
        let mut m = Self::zeros(n);
        let w = 1.0 / m.dim as f64;
        for r in 0..m.dim {
            m.entries[r * m.dim + r] = c(w, 0.0);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, col: usize) -> Complex64 {
        self.entries[r * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, r: usize, col: usize, v: Complex64) {
        self.entries[r * self.dim + col] = v;
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|r| self.get(r, r)).sum()
    }

    pub fn scale(&mut self, f: f64) {
        for e in &mut self.entries {
            *e *= f;
        }
    }

    pub fn add_scaled(&mut self, other: &Self, f: f64) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            *a += b * f;
        }
    }

    /// Tr(self * other).
    pub fn mul_trace(&self, other: &Self) -> Complex64 {
        assert_eq!(self.dim, other.dim);
        let mut acc = C0;
        for r in 0..self.dim {
            for k in 0..self.dim {
                acc += self.get(r, k) * other.get(k, r);
            }
        }
        acc
    }

    pub fn purity(&self) -> f64 {
        self.mul_trace(self).re
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        for r in 0..self.dim {
            for col in 0..=r {
                let d = self.get(r, col) - self.get(col, r).conj();
                if d.norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// <psi| rho |psi>.
    pub fn fidelity_pure(&self, psi: &[Complex64]) -> f64 {
        assert_eq!(psi.len(), self.dim);
        let mut acc = C0;
        for r in 0..self.dim {
            for col in 0..self.dim {
                acc += psi[r].conj() * self.get(r, col) * psi[col];
            }
        }
        acc.re
    }

    /// <bra| rho |ket> for arbitrary vectors.
    pub fn sandwich(&self, bra: &[Complex64], ket: &[Complex64]) -> Complex64 {
        let mut acc = C0;
        for r in 0..self.dim {
            for col in 0..self.dim {
                acc += bra[r].conj() * self.get(r, col) * ket[col];
            }
        }
        acc
    }

    pub fn apply_gate(&mut self, gate: Gate, targets: &[usize]) {
        // rho -> U rho U^dag: act on the ket index of every column, then the
        // conjugate on the bra index of every row.
        let dim = self.dim;
        let mut cols: Vec<StateVector> = Vec::with_capacity(dim);
        for col in 0..dim {
            let amps: Vec<Complex64> = (0..dim).map(|r| self.get(r, col)).collect();
            let mut sv = StateVector { n: self.n, amps };
            sv.apply_gate(gate, targets);
            cols.push(sv);
        }
        for (col, sv) in cols.iter().enumerate() {
            for r in 0..dim {
                self.set(r, col, sv.amps[r]);
            }
        }
        for r in 0..dim {
            let amps: Vec<Complex64> = (0..dim).map(|col| self.get(r, col).conj()).collect();
            let mut sv = StateVector { n: self.n, amps };
            sv.apply_gate(gate, targets);
            for col in 0..dim {
                self.set(r, col, sv.amps[col].conj());
            }
        }
    }

    pub fn apply_pauli(&mut self, p: &PauliString) {
        let dim = self.dim;
        let mut cols: Vec<StateVector> = Vec::with_capacity(dim);
        for col in 0..dim {
            let amps: Vec<Complex64> = (0..dim).map(|r| self.get(r, col)).collect();
            let mut sv = StateVector { n: self.n, amps };
            sv.apply_pauli(p);
            cols.push(sv);
        }
        for (col, sv) in cols.iter().enumerate() {
            for r in 0..dim {
                self.set(r, col, sv.amps[r]);
            }
        }
        for r in 0..dim {
            let amps: Vec<Complex64> = (0..dim).map(|col| self.get(r, col).conj()).collect();
            let mut sv = StateVector { n: self.n, amps };
            sv.apply_pauli(p);
            for col in 0..dim {
                self.set(r, col, sv.amps[col].conj());
            }
        }
    }

    /// Exact CPTP application of a Pauli noise channel.
    pub fn apply_channel(&mut self, event: &NoiseEvent) {
        let mixture = event.mixture(self.n);
        let mut out = Self::zeros(self.n);
        for (prob, pauli) in &mixture {
            if *prob == 0.0 {
                continue;
            }
            let mut branch = self.clone();
            if !pauli.is_identity() {
                branch.apply_pauli(pauli);
            }
            out.add_scaled(&branch, *prob);
        }
        *self = out;
    }

    /// Projective Z measurement branches on element q: (probability,
    /// normalized post-measurement state) for outcomes 0 and 1.
    pub fn measure_branches(&self, q: usize) -> [(f64, DensityMatrix); 2] {
        let bit = 1usize << q;
        let mut out: Vec<(f64, DensityMatrix)> = Vec::with_capacity(2);
        for outcome in [false, true] {
            let mut m = Self::zeros(self.n);
            for r in 0..self.dim {
                for col in 0..self.dim {
                    if (((r & bit) != 0) == outcome) && (((col & bit) != 0) == outcome) {
                        m.set(r, col, self.get(r, col));
                    }
                }
            }
            let p = m.trace().re;
            if p > 0.0 {
                m.scale(1.0 / p);
            }
            out.push((p, m));
        }
        [out.remove(0), out.remove(0)]
    }

    /// Partial trace keeping the listed elements (in their given order).
    pub fn partial_trace(&self, keep: &[usize]) -> DensityMatrix {
        let k = keep.len();
        let mut out = Self::zeros(k);
        let traced: Vec<usize> = (0..self.n).filter(|j| !keep.contains(j)).collect();
        let kd = 1usize << k;
        let td = 1usize << traced.len();
        for r in 0..kd {
            for col in 0..kd {
                let mut acc = C0;
                for t in 0..td {
                    let mut big_r = 0usize;
                    let mut big_c = 0usize;
                    for (pos, &el) in keep.iter().enumerate() {
                        if (r >> pos) & 1 == 1 {
                            big_r |= 1 << el;
                        }
                        if (col >> pos) & 1 == 1 {
                            big_c |= 1 << el;
                        }
                    }
                    for (pos, &el) in traced.iter().enumerate() {
                        if (t >> pos) & 1 == 1 {
                            big_r |= 1 << el;
                            big_c |= 1 << el;
                        }
                    }
                    acc += self.get(big_r, big_c);
                }
                out.set(r, col, acc);
            }
        }
        out
    }

    /// Largest singular value (= max |eigenvalue| for Hermitian input).
    pub fn spectral_norm(&self) -> f64 {
        let d = self.dim;
        let m = 2 * d;
        let mut a = vec![0.0f64; m * m];
        for r in 0..d {
            for col in 0..d {
                let v = self.get(r, col);
                a[r * m + col] = v.re;
                a[(r + d) * m + col + d] = v.re;
                a[(r + d) * m + col] = v.im;
                a[r * m + col + d] = -v.im;
            }
        }
        let (eigvals, _) = jacobi_symmetric(&mut a, m);
        eigvals.into_iter().map(f64::abs).fold(0.0, f64::max)
    }

    /// Clip negative eigenvalues to zero (display cleanup). Returns the
    /// clipped matrix; trace is not renormalized.
    pub fn psd_clipped(&self) -> DensityMatrix {
        // Embed the Hermitian matrix as a real symmetric one, diagonalize
        // with cyclic Jacobi, clip, and map back.
        let d = self.dim;
        let m = 2 * d;
        let mut a = vec![0.0f64; m * m];
        for r in 0..d {
            for col in 0..d {
                let v = self.get(r, col);
                a[r * m + col] = v.re;
                a[(r + d) * m + col + d] = v.re;
                a[(r + d) * m + col] = v.im;
                a[r * m + col + d] = -v.im;
            }
        }
        let (eigvals, eigvecs) = jacobi_symmetric(&mut a, m);
        let mut out = DensityMatrix::zeros(self.n);
        for (k, &lam) in eigvals.iter().enumerate() {
            if lam <= 0.0 {
                continue;
            }
            // Complex vector from the real embedding: v = top + i*bottom.
            let v: Vec<Complex64> =
                (0..d).map(|r| c(eigvecs[r * m + k], eigvecs[(r + d) * m + k])).collect();
            // Each complex eigenvector appears twice in the embedding; halve.
            for r in 0..d {
                for col in 0..d {
                    let cur = out.get(r, col);
                    out.set(r, col, cur + v[r] * v[col].conj() * (lam * 0.5));
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi diagonalization of a real symmetric matrix (row-major).
/// Returns (eigenvalues, column eigenvectors).
fn jacobi_symmetric(a: &mut [f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; m * m];
    for i in 0..m {
        v[i * m + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for r in 0..m {
            for col in (r + 1)..m {
                off += a[r * m + col] * a[r * m + col];
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..m {
            for q in (p + 1)..m {
                let apq = a[p * m + q];
                if apq.abs() < 1e-14 {
                    continue;
                }
                let app = a[p * m + p];
                let aqq = a[q * m + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cth = 1.0 / (t * t + 1.0).sqrt();
                let s = t * cth;
                for k in 0..m {
                    let akp = a[k * m + p];
                    let akq = a[k * m + q];
                    a[k * m + p] = cth * akp - s * akq;
                    a[k * m + q] = s * akp + cth * akq;
                }
                for k in 0..m {
                    let apk = a[p * m + k];
                    let aqk = a[q * m + k];
                    a[p * m + k] = cth * apk - s * aqk;
                    a[q * m + k] = s * apk + cth * aqk;
                }
                for k in 0..m {
                    let vkp = v[k * m + p];
                    let vkq = v[k * m + q];
                    v[k * m + p] = cth * vkp - s * vkq;
                    v[k * m + q] = s * vkp + cth * vkq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..m).map(|i| a[i * m + i]).collect();
    (eig, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tableau::Tableau;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn single_qubit_gates_are_unitary() {
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
        ] {
            let m = gate_matrix_1q(g).unwrap();
            for r in 0..2 {
                for col in 0..2 {
                    let mut acc = C0;
                    for k in 0..2 {
                        acc += m[k][r].conj() * m[k][col];
                    }
                    let want = if r == col { 1.0 } else { 0.0 };
                    assert!((acc - c(want, 0.0)).norm() < 1e-12, "{g} not unitary");
                }
            }
        }
    }

    #[test]
    fn sqrt_y_prepares_plus() {
        let mut s = StateVector::zero_state(1).unwrap();
        s.apply_gate(Gate::SqrtY, &[0]);
        let x = PauliString::parse("X").unwrap();
        assert_close(s.expectation_pauli(&x), 1.0, 1e-12);
        let mut m = StateVector::zero_state(1).unwrap();
        m.apply_gate(Gate::SqrtYDag, &[0]);
        assert_close(m.expectation_pauli(&x), -1.0, 1e-12);
    }

    #[test]
    fn iswap_matches_excitation_transfer_with_phase() {
        // (a|0> + b|1>) ⊗ |0> -> |0> ⊗ (a|0> + i b|1>)
        let mut s = StateVector::from_amplitudes(vec![c(0.6, 0.0), c(0.8, 0.0), C0, C0]).unwrap();
        s.apply_gate(Gate::ISwap, &[0, 1]);
        assert!((s.amplitudes()[0] - c(0.6, 0.0)).norm() < 1e-12);
        assert!((s.amplitudes()[2] - c(0.0, 0.8)).norm() < 1e-12);
    }

    #[test]
    fn pauli_expectations_match_tableau_on_random_clifford_circuits() {
        use proptest::prelude::*;
        let gates = [
            Gate::Hadamard,
            Gate::S,
            Gate::SqrtX,
            Gate::SqrtY,
            Gate::SqrtYDag,
            Gate::X,
            Gate::Cz,
            Gate::Cx,
            Gate::ISwap,
            Gate::Swap,
        ];
        proptest!(ProptestConfig::with_cases(64), |(seq in proptest::collection::vec((0usize..10, 0usize..4, 0usize..3), 1..25))| {
            let n = 4;
            let mut t = Tableau::new(n);
            let mut s = StateVector::zero_state(n).unwrap();
            for (gi, a, boff) in seq {
                let g = gates[gi];
                let targets = if g.arity() == 1 { vec![a] } else { vec![a, (a + 1 + boff) % n] };
                t.apply(g, &targets).unwrap();
                s.apply_gate(g, &targets);
            }
            // Every tableau stabilizer must have dense expectation +1.
            for i in 0..n {
                let stab = t.stabilizer(i);
                prop_assert!((s.expectation_pauli(&stab) - 1.0).abs() < 1e-9);
            }
        });
    }

    #[test]
    fn measurement_statistics_match_projection() {
        let mut s = StateVector::zero_state(2).unwrap();
        s.apply_gate(Gate::Hadamard, &[0]);
        s.apply_gate(Gate::Cx, &[0, 1]);
        assert_close(s.probability_bit(0, true), 0.5, 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0u32; 2];
        for _ in 0..2000 {
            let mut sv = s.clone();
            let a = sv.measure_z(0, &mut rng);
            let b = sv.measure_z(1, &mut rng);
            assert_eq!(a, b);
            counts[usize::from(a)] += 1;
        }
        assert!(counts[0] > 800 && counts[1] > 800);
    }

    #[test]
    fn density_matrix_channel_average() {
        // <Z> after depolarize1(p) on |0> is 1 - 4p/3.
        let p = 0.3;
        let mut rho = DensityMatrix::from_pure(&StateVector::zero_state(1).unwrap());
        rho.apply_channel(&NoiseEvent::Depolarize1 { p, target: 0 });
        let z = rho.get(0, 0).re - rho.get(1, 1).re;
        assert_close(z, 1.0 - 4.0 * p / 3.0, 1e-12);
        assert_close(rho.trace().re, 1.0, 1e-12);
        assert!(rho.is_hermitian(1e-12));
    }

    #[test]
    fn partial_trace_of_bell_is_maximally_mixed() {
        let mut s = StateVector::zero_state(2).unwrap();
        s.apply_gate(Gate::Hadamard, &[0]);
        s.apply_gate(Gate::Cx, &[0, 1]);
        let rho = DensityMatrix::from_pure(&s);
        let red = rho.partial_trace(&[0]);
        assert_close(red.purity(), 0.5, 1e-12);
        assert_close(red.get(0, 0).re, 0.5, 1e-12);
    }

    #[test]
    fn psd_clip_recovers_valid_state() {
        // A slightly negative matrix gets projected back to PSD.
        let mut rho = DensityMatrix::maximally_mixed(1);
        rho.set(0, 0, c(0.7, 0.0));
        rho.set(1, 1, c(0.3, 0.0));
        rho.set(0, 1, c(0.5, 0.1));
        rho.set(1, 0, c(0.5, -0.1));
        let clipped = rho.psd_clipped();
        assert!(clipped.is_hermitian(1e-9));
        // Eigenvalues of the clipped matrix are nonnegative: purity <= trace^2.
        let tr = clipped.trace().re;
        assert!(clipped.purity() <= tr * tr + 1e-9);
        // Already-PSD input passes through unchanged.
        let mut s = StateVector::zero_state(1).unwrap();
        s.apply_gate(Gate::SqrtY, &[0]);
        let pure = DensityMatrix::from_pure(&s);
        let same = pure.psd_clipped();
        for r in 0..2 {
            for col in 0..2 {
                assert!((pure.get(r, col) - same.get(r, col)).norm() < 1e-8);
            }
        }
    }
}
