//! Device calibration model and noise-channel derivation.
//!
//! Seven elements: four data qubits, two ancilla qubits, and the central
//! computational resonator. Programs index elements by role; the device
//! model maps each role to a physical element's calibration record and
//! derives per-gate noise probabilities from it:
//!
//! - single-qubit gate: depolarize1 with p = 2(1 - F_sqg_simultaneous)
//! - MOVE (per single transfer): depolarize2 with p = (4/3)(1 - sqrt(F_move))
//!   where F_move is the double-MOVE fidelity
//! - CZ: depolarize2 with p = (4/3)(1 - F_cz)
//! - readout: depolarize1 with p = 1 - F_readout, before the measurement
//! - idling over a gap of length T: pauli_channel_1 with
//!   px = py = (1 - exp(-T/T1))/4 and pz = (1 - exp(-T/T2))/2 - px
//! - thermal preparation error: bitflip with p = exp(-h f / kB T)

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const PLANCK_H: f64 = 6.626_070_15e-34;
const BOLTZMANN_KB: f64 = 1.380_649e-23;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("unknown device preset {0:?} (expected configA or configB)")]
    UnknownPreset(String),
    #[error("failed to read device file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse device file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("role {0} assigned more than once")]
    DuplicateRole(Role),
    #[error("role {0} missing from device description")]
    MissingRole(Role),
    #[error("element {element}: {problem}")]
    BadElement { element: String, problem: String },
    #[error("idling channel: negative idle time {0}")]
    NegativeIdle(f64),
    #[error("idling channel: pz = {pz} < 0 (T2 > 2*T1 regime); T1 = {t1_us} us, T2 = {t2_us} us")]
    NegativePz { pz: f64, t1_us: f64, t2_us: f64 },
}

/// Circuit role of an element. `index()` fixes the element order used by
/// every program: D1..D4, A_X, A_Z, resonator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    D1,
    D2,
    D3,
    D4,
    AncillaX,
    AncillaZ,
    Resonator,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::D1,
        Role::D2,
        Role::D3,
        Role::D4,
        Role::AncillaX,
        Role::AncillaZ,
        Role::Resonator,
    ];

    pub const DATA: [Role; 4] = [Role::D1, Role::D2, Role::D3, Role::D4];

    pub fn index(self) -> usize {
        match self {
            Role::D1 => 0,
            Role::D2 => 1,
            Role::D3 => 2,
            Role::D4 => 3,
            Role::AncillaX => 4,
            Role::AncillaZ => 5,
            Role::Resonator => 6,
        }
    }

    pub fn from_index(i: usize) -> Role {
        Role::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::D1 => "D1",
            Role::D2 => "D2",
            Role::D3 => "D3",
            Role::D4 => "D4",
            Role::AncillaX => "AX",
            Role::AncillaZ => "AZ",
            Role::Resonator => "RES",
        }
    }

    pub fn from_name(name: &str) -> Result<Role, DeviceError> {
        Ok(match name.to_ascii_uppercase().as_str() {
            "D1" => Role::D1,
            "D2" => Role::D2,
            "D3" => Role::D3,
            "D4" => Role::D4,
            "AX" => Role::AncillaX,
            "AZ" => Role::AncillaZ,
            "RES" | "RESONATOR" => Role::Resonator,
            other => return Err(DeviceError::UnknownRole(other.to_string())),
        })
    }

    pub fn is_qubit(self) -> bool {
        self != Role::Resonator
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// T2 flavor used for idling errors: the plain dephasing time or the echo
/// value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum T2Choice {
    Star,
    /// Default: reproduces the paper's fitted per-cycle acceptance best.
    #[default]
    Echo,
}

/// Calibration record of one element.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElementParams {
    #[serde(skip)]
    pub name: String,
    pub role: String,
    pub frequency_ghz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_mk: Option<f64>,
    pub t1_us: f64,
    pub t2_star_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_echo_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_readout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_sqg_individual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_sqg_simultaneous: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_move_double: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_cz: Option<f64>,
}

impl ElementParams {
    pub fn t2_us(&self, choice: T2Choice) -> f64 {
        match choice {
            T2Choice::Star => self.t2_star_us,
            // Echo value missing (the resonator) falls back to T2*.
            T2Choice::Echo => self.t2_echo_us.unwrap_or(self.t2_star_us),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GateDurations {
    pub sqg: u64,
    pub cz: u64,
    #[serde(rename = "move")]
    pub mov: u64,
    pub readout: u64,
}

impl Default for GateDurations {
    fn default() -> Self {
        Self { sqg: 32, cz: 60, mov: 100, readout: 1100 }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct DeviceFile {
    name: String,
    t_cycle_us: f64,
    #[serde(default)]
    durations_ns: Option<GateDurations>,
    elements: BTreeMap<String, ElementParams>,
}

/// Full device model: one calibration record per role plus timing.
#[derive(Debug, Clone)]
pub struct DeviceModel {
    pub name: String,
    pub t_cycle_ns: u64,
    pub durations: GateDurations,
    params: [ElementParams; 7],
}

impl DeviceModel {
    pub fn preset(name: &str) -> Result<Self, DeviceError> {
        match name {
            "configA" | "configa" | "a" | "A" => {
                Self::from_toml_str(include_str!("../presets/config_a.toml"))
            }
            "configB" | "configb" | "b" | "B" => {
                Self::from_toml_str(include_str!("../presets/config_b.toml"))
            }
            other => Err(DeviceError::UnknownPreset(other.to_string())),
        }
    }

    pub fn load(path: &Path) -> Result<Self, DeviceError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DeviceError> {
        let file: DeviceFile = toml::from_str(text)?;
        let mut slots: [Option<ElementParams>; 7] = Default::default();
        for (name, mut el) in file.elements {
            let role = Role::from_name(&el.role)?;
            el.name = name;
            if slots[role.index()].is_some() {
                return Err(DeviceError::DuplicateRole(role));
            }
            slots[role.index()] = Some(el);
        }
        for role in Role::ALL {
            if slots[role.index()].is_none() {
                return Err(DeviceError::MissingRole(role));
            }
        }
        let params = slots.map(|s| s.expect("checked above"));
        let model = Self {
            name: file.name,
            t_cycle_ns: (file.t_cycle_us * 1000.0).round() as u64,
            durations: file.durations_ns.unwrap_or_default(),
            params,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        for role in Role::ALL {
            let el = self.element(role);
            let bad = |problem: &str| DeviceError::BadElement {
                element: el.name.clone(),
                problem: problem.to_string(),
            };
            if el.t1_us <= 0.0 || el.t2_star_us <= 0.0 {
                return Err(bad("coherence times must be positive"));
            }
            if el.frequency_ghz <= 0.0 {
                return Err(bad("frequency must be positive"));
            }
            let fid_ok = |f: Option<f64>| f.is_none_or(|v| v > 0.0 && v <= 1.0);
            if !fid_ok(el.f_readout)
                || !fid_ok(el.f_sqg_individual)
                || !fid_ok(el.f_sqg_simultaneous)
                || !fid_ok(el.f_move_double)
                || !fid_ok(el.f_cz)
            {
                return Err(bad("fidelities must lie in (0, 1]"));
            }
            if role.is_qubit()
                && (el.f_readout.is_none()
                    || el.f_sqg_simultaneous.is_none()
                    || el.f_move_double.is_none()
                    || el.f_cz.is_none()
                    || el.temperature_mk.is_none())
            {
                return Err(bad("qubit is missing gate/readout fidelities or temperature"));
            }
        }
        Ok(())
    }

    pub fn element(&self, role: Role) -> &ElementParams {
        &self.params[role.index()]
    }

    pub fn element_by_index(&self, index: usize) -> &ElementParams {
        &self.params[index]
    }

    /// Mean qubit temperature; the resonator has no listed temperature and
    /// uses this for its thermal preparation error.
    pub fn mean_qubit_temperature_mk(&self) -> f64 {
        let temps: Vec<f64> = Role::ALL
            .iter()
            .filter(|r| r.is_qubit())
            .filter_map(|r| self.element(*r).temperature_mk)
            .collect();
        temps.iter().sum::<f64>() / temps.len() as f64
    }

    /// Per-role derived noise probabilities.
    pub fn channel_params(&self) -> ChannelParams {
        let mut out = ChannelParams::default();
        for role in Role::ALL {
            let el = self.element(role);
            let i = role.index();
            out.p_sqg[i] = el.f_sqg_simultaneous.map_or(0.0, |f| 2.0 * (1.0 - f));
            out.p_move[i] = el.f_move_double.map_or(0.0, |f| (4.0 / 3.0) * (1.0 - f.sqrt()));
            out.p_cz[i] = el.f_cz.map_or(0.0, |f| (4.0 / 3.0) * (1.0 - f));
            out.p_readout[i] = el.f_readout.map_or(0.0, |f| 1.0 - f);
            let temp = el
                .temperature_mk
                .unwrap_or_else(|| self.mean_qubit_temperature_mk());
            out.p_thermal[i] = thermal_flip_probability(el.frequency_ghz, temp);
        }
        out
    }

    /// Stable digest over the loaded parameters.
    pub fn digest_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update(self.t_cycle_ns.to_le_bytes());
        for d in [self.durations.sqg, self.durations.cz, self.durations.mov, self.durations.readout]
        {
            h.update(d.to_le_bytes());
        }
        for role in Role::ALL {
            let el = self.element(role);
            h.update(el.name.as_bytes());
            for v in [
                el.frequency_ghz,
                el.temperature_mk.unwrap_or(-1.0),
                el.t1_us,
                el.t2_star_us,
                el.t2_echo_us.unwrap_or(-1.0),
                el.f_readout.unwrap_or(-1.0),
                el.f_sqg_simultaneous.unwrap_or(-1.0),
                el.f_move_double.unwrap_or(-1.0),
                el.f_cz.unwrap_or(-1.0),
            ] {
                h.update(v.to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Derived per-role noise probabilities, indexed by `Role::index()`.
#[derive(Debug, Clone, Default)]
pub struct ChannelParams {
    pub p_sqg: [f64; 7],
    pub p_move: [f64; 7],
    pub p_cz: [f64; 7],
    pub p_readout: [f64; 7],
    pub p_thermal: [f64; 7],
}

/// Thermal excitation probability from the Boltzmann factor exp(-hf/kB T).
pub fn thermal_flip_probability(frequency_ghz: f64, temperature_mk: f64) -> f64 {
    if temperature_mk <= 0.0 {
        return 0.0;
    }
    let hf = PLANCK_H * frequency_ghz * 1e9;
    let kbt = BOLTZMANN_KB * temperature_mk * 1e-3;
    (-hf / kbt).exp()
}

/// Pauli-channel probabilities (px, py, pz) for an idle gap.
///
/// px = py = (1 - exp(-T/T1))/4, pz = (1 - exp(-T/T2))/2 - px. Values of pz
/// in (-1e-12, 0) are clamped to zero; anything more negative signals a
/// parameter error (the T2 > 2*T1 regime).
pub fn idling_channel(t_idl_ns: f64, t1_us: f64, t2_us: f64) -> Result<(f64, f64, f64), DeviceError> {
    if t_idl_ns < 0.0 {
        return Err(DeviceError::NegativeIdle(t_idl_ns));
    }
    if t_idl_ns == 0.0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let t_us = t_idl_ns * 1e-3;
    let pxy = (1.0 - (-t_us / t1_us).exp()) / 4.0;
    let pz = (1.0 - (-t_us / t2_us).exp()) / 2.0 - pxy;
    if pz < -1e-12 {
        return Err(DeviceError::NegativePz { pz, t1_us, t2_us });
    }
    Ok((pxy, pxy, pz.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load_and_validate() {
        let a = DeviceModel::preset("configA").unwrap();
        let b = DeviceModel::preset("configB").unwrap();
        assert_eq!(a.t_cycle_ns, 2050);
        assert_eq!(b.t_cycle_ns, 2050);
        // Role maps differ between campaigns.
        assert_eq!(a.element(Role::D1).name, "QB3");
        assert_eq!(b.element(Role::D1).name, "QB6");
        assert_eq!(a.element(Role::AncillaZ).name, "QB1");
        assert_eq!(b.element(Role::AncillaZ).name, "QB4");
        assert!((a.element(Role::D1).t1_us - 64.5).abs() < 1e-12);
        assert!((b.element(Role::Resonator).t2_star_us - 11.9).abs() < 1e-12);
        assert!(DeviceModel::preset("configC").is_err());
    }

    #[test]
    fn sqg_error_probability_matches_hand_computation() {
        let a = DeviceModel::preset("configA").unwrap();
        let cp = a.channel_params();
        // QB1 is A_Z in config A; F_sqg_sim = 99.93% -> p = 0.0014.
        assert!((cp.p_sqg[Role::AncillaZ.index()] - 0.0014).abs() < 1e-9);
    }

    #[test]
    fn move_error_probability_matches_hand_computation() {
        let a = DeviceModel::preset("configA").unwrap();
        let cp = a.channel_params();
        // QB1: (4/3)(1 - sqrt(0.9911)).
        let expect = (4.0 / 3.0) * (1.0 - 0.9911f64.sqrt());
        assert!((cp.p_move[Role::AncillaZ.index()] - expect).abs() < 1e-12);
        assert!((expect - 0.005946).abs() < 2e-6);
    }

    #[test]
    fn thermal_flip_matches_boltzmann_factor() {
        // QB1: f = 4.67 GHz, T = 46.3 mK.
        let p = thermal_flip_probability(4.67, 46.3);
        assert!((p - 0.0079).abs() < 2e-4, "p = {p}");
        // The resonator uses the mean qubit temperature.
        let a = DeviceModel::preset("configA").unwrap();
        let cp = a.channel_params();
        let mean_t = a.mean_qubit_temperature_mk();
        let expect = thermal_flip_probability(4.22, mean_t);
        assert!((cp.p_thermal[Role::Resonator.index()] - expect).abs() < 1e-15);
    }

    #[test]
    fn idling_channel_closed_forms() {
        assert_eq!(idling_channel(0.0, 10.0, 10.0).unwrap(), (0.0, 0.0, 0.0));
        // T_idl = T1 = T2: px = py = pz = (1 - 1/e)/4.
        let t1 = 17.0;
        let (px, py, pz) = idling_channel(t1 * 1000.0, t1, t1).unwrap();
        let expect = (1.0 - (-1.0f64).exp()) / 4.0;
        assert!((px - expect).abs() < 1e-12);
        assert!((py - expect).abs() < 1e-12);
        assert!((pz - expect).abs() < 1e-12);
        assert!((expect - 0.15803).abs() < 1e-5);
        // Config A D1 carrier (QB3) idling 100 ns: T1 = 64.5, T2* = 34.7.
        let (gx, _, gz) = idling_channel(100.0, 64.5, 34.7).unwrap();
        assert!((gx - 3.876e-4).abs() < 5e-7, "gx = {gx}");
        assert!((gz - 1.052e-3).abs() < 5e-6, "gz = {gz}");
        // Far beyond the relaxation-limited regime pz goes negative.
        assert!(idling_channel(1000.0, 10.0, 1000.0).is_err());
        assert!(idling_channel(-1.0, 10.0, 10.0).is_err());
    }

    #[test]
    fn relaxation_limited_pz_vanishes_to_first_order() {
        // T2 = 2*T1: pz = (1 - exp(-T/(2 T1)))^2 / 4 = O((T/T1)^2).
        let (px, _, pz) = idling_channel(1.0, 100.0, 200.0).unwrap();
        assert!(pz < 1e-9, "pz = {pz}");
        assert!(pz < px * 1e-4);
        // Quadratic scaling: doubling T multiplies pz by ~4.
        let (_, _, pz2) = idling_channel(2.0, 100.0, 200.0).unwrap();
        assert!((pz2 / pz - 4.0).abs() < 0.01);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let a = DeviceModel::preset("configA").unwrap();
        // Reassigning the resonator role leaves RES missing and duplicates D1.
        let text =
            include_str!("../presets/config_a.toml").replace("role = \"RES\"", "role = \"D1\"");
        assert!(DeviceModel::from_toml_str(&text).is_err());
        // Duplicate ancilla role rejected.
        let text =
            include_str!("../presets/config_a.toml").replace("role = \"AZ\"", "role = \"AX\"");
        assert!(DeviceModel::from_toml_str(&text).is_err());
        // Digest is stable and differs between presets.
        let b = DeviceModel::preset("configB").unwrap();
        assert_eq!(a.digest_hex(), DeviceModel::preset("configA").unwrap().digest_hex());
        assert_ne!(a.digest_hex(), b.digest_hex());
    }
}
