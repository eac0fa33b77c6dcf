//! Pauli noise channels and their Monte Carlo sampling.
//!
//! Four channel kinds cover the whole error model: one- and two-element
//! depolarizing channels for gates, an asymmetric single-element Pauli
//! channel for idling, and a bit flip for thermal state-preparation errors.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pauli::{PauliKind, PauliString};

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("pauli_channel_1 probabilities sum to {0} > 1")]
    ChannelSumTooLarge(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseEvent {
    /// With probability p apply one of {X, Y, Z} uniformly.
    Depolarize1 { p: f64, target: usize },
    /// With probability p apply one of the 15 non-identity two-element
    /// Paulis uniformly.
    Depolarize2 { p: f64, targets: [usize; 2] },
    /// Apply X, Y, Z with the given probabilities (mutually exclusive).
    PauliChannel1 { px: f64, py: f64, pz: f64, target: usize },
    /// Apply X with probability p.
    BitFlip { p: f64, target: usize },
}

impl NoiseEvent {
    pub fn validate(&self) -> Result<(), NoiseError> {
        let check = |p: f64| {
            if !(0.0..=1.0).contains(&p) {
                Err(NoiseError::BadProbability(p))
            } else {
                Ok(())
            }
        };
        match *self {
            NoiseEvent::Depolarize1 { p, .. } | NoiseEvent::Depolarize2 { p, .. } | NoiseEvent::BitFlip { p, .. } => {
                check(p)
            }
            NoiseEvent::PauliChannel1 { px, py, pz, .. } => {
                check(px)?;
                check(py)?;
                check(pz)?;
                let sum = px + py + pz;
                if sum > 1.0 + 1e-12 {
                    return Err(NoiseError::ChannelSumTooLarge(sum));
                }
                Ok(())
            }
        }
    }

    /// Total probability that the event applies any non-identity Pauli.
    pub fn fire_probability(&self) -> f64 {
        match *self {
            NoiseEvent::Depolarize1 { p, .. }
            | NoiseEvent::Depolarize2 { p, .. }
            | NoiseEvent::BitFlip { p, .. } => p,
            NoiseEvent::PauliChannel1 { px, py, pz, .. } => px + py + pz,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.fire_probability() == 0.0
    }

    pub fn targets(&self) -> Vec<usize> {
        match *self {
            NoiseEvent::Depolarize1 { target, .. }
            | NoiseEvent::PauliChannel1 { target, .. }
            | NoiseEvent::BitFlip { target, .. } => vec![target],
            NoiseEvent::Depolarize2 { targets, .. } => targets.to_vec(),
        }
    }

    /// Rescale all probabilities (used by the error-budget ablations).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        match &mut out {
            NoiseEvent::Depolarize1 { p, .. }
            | NoiseEvent::Depolarize2 { p, .. }
            | NoiseEvent::BitFlip { p, .. } => *p *= factor,
            NoiseEvent::PauliChannel1 { px, py, pz, .. } => {
                *px *= factor;
                *py *= factor;
                *pz *= factor;
            }
        }
        out
    }

    /// Draw one realization: the Pauli to apply, if any. Frequencies follow
    /// the channel definition exactly.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Option<PauliString> {
        match *self {
            NoiseEvent::Depolarize1 { p, target } => {
                if p > 0.0 && rng.random::<f64>() < p {
                    let kind = [PauliKind::X, PauliKind::Y, PauliKind::Z][rng.random_range(0..3)];
                    Some(PauliString::single(n, target, kind).expect("target in range"))
                } else {
                    None
                }
            }
            NoiseEvent::Depolarize2 { p, targets } => {
                if p > 0.0 && rng.random::<f64>() < p {
                    let k: u8 = rng.random_range(1..16);
                    let mut out = PauliString::identity(n);
                    out.set_x(targets[0], k & 1 != 0);
                    out.set_z(targets[0], k & 2 != 0);
                    out.set_x(targets[1], k & 4 != 0);
                    out.set_z(targets[1], k & 8 != 0);
                    Some(out)
                } else {
                    None
                }
            }
            NoiseEvent::PauliChannel1 { px, py, pz, target } => {
                let total = px + py + pz;
                if total <= 0.0 {
                    return None;
                }
                let u: f64 = rng.random();
                if u >= total {
                    return None;
                }
                let kind = if u < px {
                    PauliKind::X
                } else if u < px + py {
                    PauliKind::Y
                } else {
                    PauliKind::Z
                };
                Some(PauliString::single(n, target, kind).expect("target in range"))
            }
            NoiseEvent::BitFlip { p, target } => {
                if p > 0.0 && rng.random::<f64>() < p {
                    Some(PauliString::single(n, target, PauliKind::X).expect("target in range"))
                } else {
                    None
                }
            }
        }
    }

    /// Full probability mixture (identity included) over n-element Paulis,
    /// for exact density-matrix evolution.
    pub fn mixture(&self, n: usize) -> Vec<(f64, PauliString)> {
        let mut out = Vec::new();
        match *self {
            NoiseEvent::Depolarize1 { p, target } => {
                out.push((1.0 - p, PauliString::identity(n)));
                for kind in [PauliKind::X, PauliKind::Y, PauliKind::Z] {
                    out.push((p / 3.0, PauliString::single(n, target, kind).unwrap()));
                }
            }
            NoiseEvent::Depolarize2 { p, targets } => {
                out.push((1.0 - p, PauliString::identity(n)));
                for k in 1u8..16 {
                    let mut pauli = PauliString::identity(n);
                    pauli.set_x(targets[0], k & 1 != 0);
                    pauli.set_z(targets[0], k & 2 != 0);
                    pauli.set_x(targets[1], k & 4 != 0);
                    pauli.set_z(targets[1], k & 8 != 0);
                    out.push((p / 15.0, pauli));
                }
            }
            NoiseEvent::PauliChannel1 { px, py, pz, target } => {
                out.push((1.0 - px - py - pz, PauliString::identity(n)));
                out.push((px, PauliString::single(n, target, PauliKind::X).unwrap()));
                out.push((py, PauliString::single(n, target, PauliKind::Y).unwrap()));
                out.push((pz, PauliString::single(n, target, PauliKind::Z).unwrap()));
            }
            NoiseEvent::BitFlip { p, target } => {
                out.push((1.0 - p, PauliString::identity(n)));
                out.push((p, PauliString::single(n, target, PauliKind::X).unwrap()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn zero_probability_never_fires() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ev = NoiseEvent::Depolarize1 { p: 0.0, target: 0 };
        for _ in 0..10_000 {
            assert!(ev.sample(1, &mut rng).is_none());
        }
    }

    #[test]
    fn depolarize1_average_z_matches_closed_form() {
        // <Z> on |0> after depolarize1(p) = 1 - 4p/3: X and Y flip, Z does not.
        let p = 0.0014;
        let ev = NoiseEvent::Depolarize1 { p, target: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shots = 1_000_000u32;
        let mut sum = 0i64;
        for _ in 0..shots {
            let flip = match ev.sample(1, &mut rng) {
                Some(pauli) => pauli.x_bit(0),
                None => false,
            };
            sum += if flip { -1 } else { 1 };
        }
        let mean = sum as f64 / f64::from(shots);
        let expect = 1.0 - 4.0 * p / 3.0;
        let sigma = (1.0 - expect * expect).sqrt() / f64::from(shots).sqrt();
        assert!((mean - expect).abs() < 3.0 * sigma, "mean {mean} expect {expect}");
    }

    #[test]
    fn depolarize2_is_uniform_over_the_15_paulis() {
        let p = 0.015;
        let ev = NoiseEvent::Depolarize2 { p, targets: [0, 1] };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = 1_000_000u32;
        let mut counts: HashMap<String, u32> = HashMap::new();
        for _ in 0..samples {
            if let Some(pauli) = ev.sample(2, &mut rng) {
                *counts.entry(pauli.to_string()).or_default() += 1;
            }
        }
        assert_eq!(counts.len(), 15);
        let expect = f64::from(samples) * p / 15.0;
        let sigma = (f64::from(samples) * (p / 15.0) * (1.0 - p / 15.0)).sqrt();
        for (pauli, count) in counts {
            assert!(
                (f64::from(count) - expect).abs() < 3.0 * sigma,
                "{pauli}: {count} vs {expect}"
            );
        }
    }

    #[test]
    fn pauli_channel_respects_component_probabilities() {
        let (px, py, pz) = (0.01, 0.002, 0.03);
        let ev = NoiseEvent::PauliChannel1 { px, py, pz, target: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = 500_000u32;
        let mut nx = 0u32;
        let mut ny = 0u32;
        let mut nz = 0u32;
        for _ in 0..samples {
            if let Some(p) = ev.sample(1, &mut rng) {
                match (p.x_bit(0), p.z_bit(0)) {
                    (true, false) => nx += 1,
                    (true, true) => ny += 1,
                    (false, true) => nz += 1,
                    _ => unreachable!(),
                }
            }
        }
        for (count, p) in [(nx, px), (ny, py), (nz, pz)] {
            let expect = f64::from(samples) * p;
            let sigma = (f64::from(samples) * p * (1.0 - p)).sqrt();
            assert!((f64::from(count) - expect).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn mixture_probabilities_sum_to_one() {
        for ev in [
            NoiseEvent::Depolarize1 { p: 0.1, target: 0 },
            NoiseEvent::Depolarize2 { p: 0.2, targets: [0, 1] },
            NoiseEvent::PauliChannel1 { px: 0.1, py: 0.05, pz: 0.2, target: 1 },
            NoiseEvent::BitFlip { p: 0.3, target: 0 },
        ] {
            let total: f64 = ev.mixture(2).iter().map(|(p, _)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
            ev.validate().unwrap();
        }
        assert!(NoiseEvent::PauliChannel1 { px: 0.6, py: 0.3, pz: 0.2, target: 0 }
            .validate()
            .is_err());
        assert!(NoiseEvent::BitFlip { p: -0.1, target: 0 }.validate().is_err());
    }
}
