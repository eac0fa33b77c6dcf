//! Reproduction front-end: experiment subcommands over a device preset or
//! config file, with seeded deterministic runs and CSV/JSON outputs.
//!
//! Every subcommand writes a manifest (config digest, seed, versions) next
//! to its result tables, so a results directory is self-describing. Output
//! is deterministic under a fixed seed: no timestamps, stable orderings.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{
    acceptance_curve, acceptance_fit, bell_probs, detection_fractions, error_budget, fit_decay,
    logical_decay_fit, run_cycle_series, AcceptanceFit, AnalysisError, BudgetRow, EncodingKind,
    FitResult, PostselectRule, SigmaVariant,
};
use crate::circuit::{
    CircuitError, ExperimentKind, NoiseOptions, ProductState, StabKind, StabOrder,
};
use crate::code::{Basis, CodeDefinition};
use crate::dense::DensityMatrix;
use crate::device::{DeviceError, DeviceModel, T2Choice};
use crate::engine::{derive_seed, run_shots, EngineError};
use crate::shadows::{
    collect_dataset, sample_settings, FidelityTarget, PurityScope, SettingMode, ShadowError,
    ShadowEstimator, TomographySource,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error("output I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    BadArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum T2Arg {
    Star,
    #[default]
    Echo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum StabOrderArg {
    #[default]
    Xz,
    Zx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum SigmaArg {
    /// Detector = parity change between consecutive stabilizer values.
    #[default]
    Composed,
    /// Detector = the stabilizer value itself being -1.
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum ShotsPolicyArg {
    /// The same shot count for every cycle depth.
    #[default]
    Fixed,
    /// Shots proportional to the cycle count (shots * N).
    PerCycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum BellModeArg {
    #[default]
    Both,
    Lifetime,
    Tomography,
}

#[derive(Debug, Parser)]
#[command(
    name = "star422",
    about = "Monte Carlo simulation and analysis of a [[4,2,2]] error-detection experiment on a star-topology device",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Device preset (configA | configB) or path to a device TOML file.
    #[arg(long, default_value = "configA", global = true)]
    pub device: String,
    /// Master seed; every derived run is a pure function of it.
    #[arg(long, default_value_t = 1, global = true)]
    pub seed: u64,
    /// Shots per run (the base count under --shots-policy per-cycle).
    #[arg(long, default_value_t = 100_000, global = true)]
    pub shots: usize,
    /// Maximum number of detection cycles N (where applicable).
    #[arg(long, global = true)]
    pub cycles: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    pub out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0, global = true)]
    pub threads: usize,
    /// Which dephasing time the idling channel uses.
    #[arg(long, value_enum, default_value_t, global = true)]
    pub t2: T2Arg,
    /// Order of the stabilizer halves within a cycle.
    #[arg(long, value_enum, default_value_t, global = true)]
    pub stab_order: StabOrderArg,
    /// Detector definition used by `detectors`.
    #[arg(long, value_enum, default_value_t, global = true)]
    pub sigma: SigmaArg,
    /// Apply idle-gap noise to the resonator as well.
    #[arg(long, default_value_t = false, global = true)]
    pub res_idle: bool,
    /// Shot-count policy across cycle depths.
    #[arg(long, value_enum, default_value_t, global = true)]
    pub shots_policy: ShotsPolicyArg,
    /// Also dump raw shot batches as CSV (large).
    #[arg(long, default_value_t = false, global = true)]
    pub dump_shots: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-stabilizer expectation values over 16 input states.
    StabilizerTomo,
    /// Repeated-detection acceptance and logical decays over N = 1..cycles.
    Lifetime {
        /// Comma-separated input states (default: the eight standard ones).
        #[arg(long, value_delimiter = ',')]
        states: Vec<String>,
    },
    /// Shadow tomography of the 16 encoded states.
    Tomography {
        /// Setting mode: "exhaustive" or "uniform:<N>".
        #[arg(long, default_value = "exhaustive")]
        settings: String,
        /// Measurements per setting.
        #[arg(long, default_value_t = 2000)]
        meas_per_setting: usize,
        /// Comma-separated input states (default: all 16).
        #[arg(long, value_delimiter = ',')]
        states: Vec<String>,
        /// Clip negative eigenvalues in the exported density matrices.
        #[arg(long, default_value_t = false)]
        cleanup: bool,
    },
    /// Logical Bell state: acceptance, state probabilities, tomography.
    Bell {
        #[arg(long, value_enum, default_value_t)]
        mode: BellModeArg,
        #[arg(long, default_value = "exhaustive")]
        settings: String,
        #[arg(long, default_value_t = 1000)]
        meas_per_setting: usize,
    },
    /// Error budget by suppressing one error kind at a time.
    Budget,
    /// Average syndrome detection fractions without post-selection.
    Detectors {
        /// Comma-separated states; "bell" selects the Bell encoding.
        #[arg(long, value_delimiter = ',')]
        states: Vec<String>,
    },
}

/// Resolved run configuration shared by the subcommands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub device: DeviceModel,
    pub seed: u64,
    pub shots: usize,
    pub cycles: Option<usize>,
    pub out_dir: PathBuf,
    pub order: StabOrder,
    pub noise: NoiseOptions,
    pub sigma: SigmaVariant,
    pub per_cycle_shots: bool,
    pub dump_shots: bool,
}

impl RunConfig {
    pub fn from_args(args: &CommonArgs) -> Result<Self, CliError> {
        let device = if args.device.contains('.') || args.device.contains('/') {
            DeviceModel::load(Path::new(&args.device))?
        } else {
            DeviceModel::preset(&args.device)?
        };
        if args.shots == 0 {
            return Err(CliError::BadArgument("--shots must be positive".into()));
        }
        Ok(Self {
            device,
            seed: args.seed,
            shots: args.shots,
            cycles: args.cycles,
            out_dir: args.out.clone(),
            order: match args.stab_order {
                StabOrderArg::Xz => StabOrder::XThenZ,
                StabOrderArg::Zx => StabOrder::ZThenX,
            },
            noise: NoiseOptions {
                t2: match args.t2 {
                    T2Arg::Star => T2Choice::Star,
                    T2Arg::Echo => T2Choice::Echo,
                },
                resonator_idling: args.res_idle,
                disabled: Vec::new(),
            },
            sigma: match args.sigma {
                SigmaArg::Composed => SigmaVariant::Composed,
                SigmaArg::Value => SigmaVariant::StabilizerValue,
            },
            per_cycle_shots: args.shots_policy == ShotsPolicyArg::PerCycle,
            dump_shots: args.dump_shots,
        })
    }

    pub fn cycles_or(&self, default: usize) -> usize {
        self.cycles.unwrap_or(default)
    }

    pub fn shots_for(&self, n: usize) -> usize {
        if self.per_cycle_shots {
            self.shots * n.max(1)
        } else {
            self.shots
        }
    }

    pub fn t_cycle_us(&self) -> f64 {
        self.device.t_cycle_ns as f64 * 1e-3
    }

    fn out(&self, command: &str) -> Result<PathBuf, CliError> {
        let dir = self.out_dir.join(command);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn write_manifest(&self, dir: &Path, command: &str) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            crate_version: &'a str,
            device_name: &'a str,
            device_digest: String,
            seed: u64,
            shots: usize,
            cycles: Option<usize>,
            stab_order: &'a StabOrder,
            noise: &'a NoiseOptions,
            sigma: &'a SigmaVariant,
            per_cycle_shots: bool,
        }
        let manifest = Manifest {
            command,
            crate_version: env!("CARGO_PKG_VERSION"),
            device_name: &self.device.name,
            device_digest: self.device.digest_hex(),
            seed: self.seed,
            shots: self.shots,
            cycles: self.cycles,
            stab_order: &self.order,
            noise: &self.noise,
            sigma: &self.sigma,
            per_cycle_shots: self.per_cycle_shots,
        };
        let mut f = fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, &manifest).map_err(std::io::Error::other)?;
        writeln!(f)?;
        Ok(())
    }
}

fn all_z_states() -> Vec<ProductState> {
    (0..16)
        .map(|i| {
            let text: String =
                (0..4).map(|j| if (i >> j) & 1 == 1 { '1' } else { '0' }).collect();
            ProductState::parse(&text).expect("static")
        })
        .collect()
}

fn all_x_states() -> Vec<ProductState> {
    (0..16)
        .map(|i| {
            let text: String =
                (0..4).map(|j| if (i >> j) & 1 == 1 { '-' } else { '+' }).collect();
            ProductState::parse(&text).expect("static")
        })
        .collect()
}

fn parse_states(texts: &[String], default: Vec<ProductState>) -> Result<Vec<ProductState>, CliError> {
    if texts.is_empty() {
        return Ok(default);
    }
    texts.iter().map(|t| ProductState::parse(t).map_err(CliError::from)).collect()
}

fn parse_setting_mode(text: &str) -> Result<SettingMode, CliError> {
    if text == "exhaustive" || text == "exhaustive81" {
        return Ok(SettingMode::Exhaustive81);
    }
    if let Some(n) = text.strip_prefix("uniform:") {
        let n: usize = n
            .parse()
            .map_err(|_| CliError::BadArgument(format!("bad setting count in {text:?}")))?;
        return Ok(SettingMode::Uniform(n));
    }
    Err(CliError::BadArgument(format!(
        "unknown settings mode {text:?} (use exhaustive or uniform:<N>)"
    )))
}

/// Logical target vector (codeword basis |00>,|01>,|10>,|11>) of an encoded
/// product state.
pub fn logical_target_vector(code: &CodeDefinition, psi_in: &ProductState) -> Vec<Complex64> {
    let basis = psi_in.basis().expect("validated");
    let (e1, e2) = code.evaluate_logicals(psi_in.bits(), basis);
    let mut v = vec![Complex64::new(0.0, 0.0); 4];
    match basis {
        Basis::Z => {
            let a = usize::from(e2 < 0);
            let b = usize::from(e1 < 0);
            v[2 * a + b] = Complex64::new(1.0, 0.0);
        }
        Basis::X => {
            // |s1 s2>_L in the logical X basis: amplitudes s2^a s1^b / 2.
            let s1 = f64::from(e1);
            let s2 = f64::from(e2);
            for a in 0..2 {
                for b in 0..2 {
                    let amp = 0.5 * s2.powi(a as i32) * s1.powi(b as i32);
                    v[2 * a + b] = Complex64::new(amp, 0.0);
                }
            }
        }
    }
    v
}

/// The logical Bell target (|00>_L + |11>_L)/sqrt(2).
pub fn bell_target_vector() -> Vec<Complex64> {
    let w = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        Complex64::new(w, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(w, 0.0),
    ]
}

// ---------------------------------------------------------------------------
// stabilizer-tomo

#[derive(Debug, Clone, Serialize)]
pub struct StabTomoRow {
    pub stabilizer: char,
    pub psi_in: String,
    pub s_ideal: f64,
    pub s_mean: f64,
    pub s_err: f64,
    pub shots: usize,
}

#[derive(Debug)]
pub struct StabTomoSummary {
    pub rows: Vec<StabTomoRow>,
    pub fidelity_x: f64,
    pub fidelity_z: f64,
}

pub fn cmd_stabilizer_tomo(cfg: &RunConfig) -> Result<StabTomoSummary, CliError> {
    let mut rows = Vec::new();
    let mut fidelities = Vec::new();
    for (stab, states) in [(StabKind::Z, all_z_states()), (StabKind::X, all_x_states())] {
        let mut pairs = Vec::new();
        for (i, psi_in) in states.iter().enumerate() {
            let kind = ExperimentKind::SingleStabilizer { stabilizer: stab, psi_in: *psi_in, cycles: 1 };
            let program = crate::circuit::build_experiment(&kind, &cfg.device, cfg.order)?;
            let compiled = crate::circuit::compile_noise(&program, &cfg.device, &cfg.noise)?;
            let salt = match stab {
                StabKind::X => "stab-x",
                StabKind::Z => "stab-z",
            };
            let batch = run_shots(&compiled, cfg.shots, derive_seed(cfg.seed, salt, i as u64))?;
            // Mean stabilizer value from the single ancilla bit.
            let tag = batch.ancilla_tags(stab)[0];
            let ones: usize = batch.column(tag).iter().map(|w| w.count_ones() as usize).sum();
            let p1 = ones as f64 / batch.shots as f64;
            let s_mean = 1.0 - 2.0 * p1;
            let s_err = 2.0 * (p1 * (1.0 - p1) / batch.shots as f64).sqrt();
            let weight = psi_in.bits().iter().filter(|&&b| b).count();
            let s_ideal = if weight % 2 == 0 { 1.0 } else { -1.0 };
            pairs.push((s_mean, s_ideal));
            rows.push(StabTomoRow {
                stabilizer: match stab {
                    StabKind::X => 'X',
                    StabKind::Z => 'Z',
                },
                psi_in: psi_in.label(),
                s_ideal,
                s_mean,
                s_err,
                shots: batch.shots,
            });
        }
        fidelities.push(crate::analysis::stabilizer_fidelity(&pairs));
    }
    let summary =
        StabTomoSummary { rows, fidelity_z: fidelities[0], fidelity_x: fidelities[1] };

    let dir = cfg.out("stabilizer-tomo")?;
    cfg.write_manifest(&dir, "stabilizer-tomo")?;
    let mut w = csv::Writer::from_path(dir.join("values.csv"))?;
    w.write_record(["stabilizer", "psi_in", "s_ideal", "s_mean", "s_err", "shots"])?;
    for r in &summary.rows {
        w.write_record([
            r.stabilizer.to_string(),
            r.psi_in.clone(),
            format!("{}", r.s_ideal),
            format!("{:.6}", r.s_mean),
            format!("{:.6}", r.s_err),
            r.shots.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("fidelity.csv"))?;
    w.write_record(["stabilizer", "fidelity"])?;
    w.write_record(["Z", &format!("{:.6}", summary.fidelity_z)])?;
    w.write_record(["X", &format!("{:.6}", summary.fidelity_x)])?;
    w.flush()?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// lifetime

#[derive(Debug, Clone, Serialize)]
pub struct LifetimeFitRow {
    pub psi_in: String,
    pub target: String,
    pub target_swapped_digits: String,
    pub basis: char,
    pub p_s: f64,
    pub p_s_err: f64,
    pub p_l: f64,
    pub p_l_err: f64,
    pub log_eta_r_squared: f64,
    pub tau1_us: f64,
    pub tau1_err_us: f64,
    pub tau2_us: f64,
    pub tau2_err_us: f64,
    pub eps1_pct: f64,
    pub eps1_err_pct: f64,
    pub eps2_pct: f64,
    pub eps2_err_pct: f64,
}

#[derive(Debug)]
pub struct LifetimeSummary {
    pub fits: Vec<LifetimeFitRow>,
}

pub fn cmd_lifetime(cfg: &RunConfig, states: &[String]) -> Result<LifetimeSummary, CliError> {
    let states = parse_states(states, ProductState::lifetime_eight())?;
    let cycles = cfg.cycles_or(20);
    let ns: Vec<usize> = (1..=cycles).collect();
    let code = CodeDefinition::new();
    let dir = cfg.out("lifetime")?;
    cfg.write_manifest(&dir, "lifetime")?;

    let mut eta_w = csv::Writer::from_path(dir.join("eta.csv"))?;
    eta_w.write_record(["psi_in", "n", "eta", "eta_err", "accepted", "shots"])?;
    let mut exp_w = csv::Writer::from_path(dir.join("expectations.csv"))?;
    exp_w.write_record(["psi_in", "basis", "logical_qubit", "n", "mean", "err", "accepted"])?;
    let mut fits = Vec::new();
    let batches_dir = dir.join("batches");
    fs::create_dir_all(&batches_dir)?;

    for (si, psi_in) in states.iter().enumerate() {
        let series = run_cycle_series(
            &cfg.device,
            |n| ExperimentKind::Lifetime { psi_in: *psi_in, cycles: n },
            &ns,
            |n| cfg.shots_for(n),
            derive_seed(cfg.seed, "lifetime-state", si as u64),
            cfg.order,
            &cfg.noise,
            PostselectRule::CleanAndFinalSubspace,
        )?;
        for p in &series {
            eta_w.write_record([
                psi_in.label(),
                p.cycles.to_string(),
                format!("{:.6}", p.acceptance.fraction()),
                format!("{:.6}", p.acceptance.std_err()),
                p.acceptance.accepted.to_string(),
                p.batch.shots.to_string(),
            ])?;
        }
        for q in 0..2 {
            for p in &series {
                if let Ok(e) = crate::analysis::logical_expectation(&p.batch, &p.acceptance, q) {
                    exp_w.write_record([
                        psi_in.label(),
                        p.batch.basis.name().to_string(),
                        (q + 1).to_string(),
                        p.cycles.to_string(),
                        format!("{:.6}", e.mean),
                        format!("{:.6}", e.err),
                        e.accepted.to_string(),
                    ])?;
                }
            }
        }
        let acc_fit = acceptance_fit(&acceptance_curve(&series), EncodingKind::Probabilistic)?;
        let fit1 = logical_decay_fit(&series, 0, cfg.t_cycle_us())?;
        let fit2 = logical_decay_fit(&series, 1, cfg.t_cycle_us())?;
        let basis = psi_in.basis()?;
        let eig = code.evaluate_logicals(psi_in.bits(), basis);
        let target = code.ket_label(eig, basis);
        let swapped: String = target.chars().rev().collect();
        fits.push(LifetimeFitRow {
            psi_in: psi_in.label(),
            target,
            target_swapped_digits: swapped,
            basis: basis.name().chars().next().expect("basis char"),
            p_s: acc_fit.p_s,
            p_s_err: acc_fit.p_s_err,
            p_l: acc_fit.p_l,
            p_l_err: acc_fit.p_l_err,
            log_eta_r_squared: acc_fit.r_squared,
            tau1_us: fit1.tau_us,
            tau1_err_us: fit1.tau_err_us,
            tau2_us: fit2.tau_us,
            tau2_err_us: fit2.tau_err_us,
            eps1_pct: fit1.epsilon * 100.0,
            eps1_err_pct: fit1.epsilon_err * 100.0,
            eps2_pct: fit2.epsilon * 100.0,
            eps2_err_pct: fit2.epsilon_err * 100.0,
        });
        // Binary container of the deepest run, plus optional CSV dump.
        let last = series.last().expect("non-empty series");
        let mut f = fs::File::create(batches_dir.join(format!("{}_n{}.bin", psi_in.label(), last.cycles)))?;
        last.batch.write_to(&mut f)?;
        if cfg.dump_shots {
            let mut f =
                fs::File::create(batches_dir.join(format!("{}_n{}.csv", psi_in.label(), last.cycles)))?;
            last.batch.write_csv(&mut f)?;
        }
    }
    eta_w.flush()?;
    exp_w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("fits.csv"))?;
    w.write_record([
        "psi_in",
        "target",
        "target_swapped_digits",
        "basis",
        "p_s",
        "p_s_err",
        "p_l",
        "p_l_err",
        "log_eta_r_squared",
        "tau1_us",
        "tau1_err_us",
        "tau2_us",
        "tau2_err_us",
        "eps1_pct",
        "eps1_err_pct",
        "eps2_pct",
        "eps2_err_pct",
    ])?;
    for r in &fits {
        w.write_record([
            r.psi_in.clone(),
            r.target.clone(),
            r.target_swapped_digits.clone(),
            r.basis.to_string(),
            format!("{:.6}", r.p_s),
            format!("{:.6}", r.p_s_err),
            format!("{:.6}", r.p_l),
            format!("{:.6}", r.p_l_err),
            format!("{:.6}", r.log_eta_r_squared),
            format!("{:.3}", r.tau1_us),
            format!("{:.3}", r.tau1_err_us),
            format!("{:.3}", r.tau2_us),
            format!("{:.3}", r.tau2_err_us),
            format!("{:.4}", r.eps1_pct),
            format!("{:.4}", r.eps1_err_pct),
            format!("{:.4}", r.eps2_pct),
            format!("{:.4}", r.eps2_err_pct),
        ])?;
    }
    w.flush()?;
    Ok(LifetimeSummary { fits })
}

// ---------------------------------------------------------------------------
// tomography

#[derive(Debug, Clone, Serialize)]
pub struct TomographyRow {
    pub psi_in: String,
    pub psi_target: String,
    pub f_l: f64,
    pub f_l_err: f64,
    pub p2_l: f64,
    pub p2_l_err: f64,
    pub p2_phy: f64,
    pub p2_phy_err: f64,
    pub p_l: f64,
    pub p_l_err: f64,
    pub p_s: f64,
}

#[derive(Debug)]
pub struct TomographySummary {
    pub rows: Vec<TomographyRow>,
}

fn density_json(m: &DensityMatrix) -> serde_json::Value {
    let dim = m.dim();
    let re: Vec<Vec<f64>> =
        (0..dim).map(|r| (0..dim).map(|c| m.get(r, c).re).collect()).collect();
    let im: Vec<Vec<f64>> =
        (0..dim).map(|r| (0..dim).map(|c| m.get(r, c).im).collect()).collect();
    serde_json::json!({ "dim": dim, "re": re, "im": im })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_tomography(
    cfg: &RunConfig,
    settings_mode: &str,
    meas_per_setting: usize,
    states: &[String],
    cleanup: bool,
) -> Result<TomographySummary, CliError> {
    let states = parse_states(states, ProductState::standard_sixteen())?;
    let mode = parse_setting_mode(settings_mode)?;
    let cycles = cfg.cycles_or(1);
    let code = CodeDefinition::new();
    let dir = cfg.out("tomography")?;
    cfg.write_manifest(&dir, "tomography")?;
    let density_dir = dir.join("density");
    fs::create_dir_all(&density_dir)?;

    let mut rows = Vec::new();
    for (si, psi_in) in states.iter().enumerate() {
        let state_seed = derive_seed(cfg.seed, "tomo-state", si as u64);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(state_seed);
        let settings = sample_settings(mode, &mut rng)?;
        let enumerated = mode == SettingMode::Exhaustive81;
        let dataset = collect_dataset(
            &cfg.device,
            TomographySource::Product(*psi_in),
            cycles,
            &settings,
            enumerated,
            meas_per_setting,
            state_seed,
            cfg.order,
            &cfg.noise,
        )?;
        let est = ShadowEstimator::new(&dataset, &code)?;
        let target = logical_target_vector(&code, psi_in);
        let (f_l, f_l_err) = est.fidelity(
            &FidelityTarget::Logical(target),
            crate::shadows::DEFAULT_BOOTSTRAP_RESAMPLES,
            derive_seed(state_seed, "boot-f", 0),
        )?;
        let (p2_l, p2_l_err) = est.purity(
            &PurityScope::Logical,
            crate::shadows::DEFAULT_BOOTSTRAP_RESAMPLES,
            derive_seed(state_seed, "boot-p2l", 0),
        )?;
        let (p2_phy, p2_phy_err) = est.purity(
            &PurityScope::Physical,
            crate::shadows::DEFAULT_BOOTSTRAP_RESAMPLES,
            derive_seed(state_seed, "boot-p2p", 0),
        )?;
        let density = est.estimate_density(
            crate::shadows::DEFAULT_BOOTSTRAP_RESAMPLES,
            derive_seed(state_seed, "boot-pl", 0),
        )?;
        // Stabilizer acceptance: post-selection kept P_S/2 of the raw shots
        // for probabilistic encoding.
        let kept: usize = (0..dataset.n_settings()).map(|r| dataset.kept(r)).sum();
        let raw = dataset.n_settings() * dataset.raw_shots_per_setting;
        let p_s = 2.0 * kept as f64 / raw as f64;
        let basis = psi_in.basis()?;
        let psi_target = code.ket_label(code.evaluate_logicals(psi_in.bits(), basis), basis);
        let (physical, logical) = if cleanup {
            (density.physical.psd_clipped(), density.logical.psd_clipped())
        } else {
            (density.physical.clone(), density.logical.clone())
        };
        let json = serde_json::json!({
            "psi_in": psi_in.label(),
            "psi_target": psi_target,
            "p_l": density.p_l,
            "settings_used": density.settings_used,
            "settings_dropped": density.settings_dropped,
            "physical": density_json(&physical),
            "logical": density_json(&logical),
        });
        let mut f = fs::File::create(density_dir.join(format!("{}.json", psi_in.label())))?;
        serde_json::to_writer_pretty(&mut f, &json).map_err(std::io::Error::other)?;
        writeln!(f)?;
        rows.push(TomographyRow {
            psi_in: psi_in.label(),
            psi_target,
            f_l,
            f_l_err,
            p2_l,
            p2_l_err,
            p2_phy,
            p2_phy_err,
            p_l: density.p_l,
            p_l_err: density.p_l_err,
            p_s,
        });
    }

    let mut w = csv::Writer::from_path(dir.join("table1.csv"))?;
    w.write_record([
        "psi_in",
        "psi_target",
        "f_l",
        "f_l_err",
        "p2_l",
        "p2_l_err",
        "p2_phy",
        "p2_phy_err",
        "p_l",
        "p_l_err",
        "p_s",
    ])?;
    for r in &rows {
        w.write_record([
            r.psi_in.clone(),
            r.psi_target.clone(),
            format!("{:.4}", r.f_l),
            format!("{:.4}", r.f_l_err),
            format!("{:.4}", r.p2_l),
            format!("{:.4}", r.p2_l_err),
            format!("{:.4}", r.p2_phy),
            format!("{:.4}", r.p2_phy_err),
            format!("{:.4}", r.p_l),
            format!("{:.4}", r.p_l_err),
            format!("{:.4}", r.p_s),
        ])?;
    }
    w.flush()?;
    Ok(TomographySummary { rows })
}

// ---------------------------------------------------------------------------
// bell

#[derive(Debug)]
pub struct BellSummary {
    pub acceptance: Option<AcceptanceFit>,
    pub prob_decay: Option<FitResult>,
    pub fidelity_decay: Option<FitResult>,
    pub fidelity_n0: Option<(f64, f64)>,
    pub purity_l_n0: Option<(f64, f64)>,
    pub purity_phy_n0: Option<(f64, f64)>,
}

pub fn cmd_bell(
    cfg: &RunConfig,
    mode: BellModeArg,
    settings_mode: &str,
    meas_per_setting: usize,
) -> Result<BellSummary, CliError> {
    let dir = cfg.out("bell")?;
    cfg.write_manifest(&dir, "bell")?;
    let mut summary = BellSummary {
        acceptance: None,
        prob_decay: None,
        fidelity_decay: None,
        fidelity_n0: None,
        purity_l_n0: None,
        purity_phy_n0: None,
    };
    let code = CodeDefinition::new();

    if mode != BellModeArg::Tomography {
        let cycles = cfg.cycles_or(20);
        let ns: Vec<usize> = (1..=cycles).collect();
        let series = run_cycle_series(
            &cfg.device,
            |n| ExperimentKind::BellLifetime { cycles: n },
            &ns,
            |n| cfg.shots_for(n),
            derive_seed(cfg.seed, "bell-lifetime", 0),
            cfg.order,
            &cfg.noise,
            PostselectRule::CleanAndFinalSubspace,
        )?;
        let mut eta_w = csv::Writer::from_path(dir.join("eta.csv"))?;
        eta_w.write_record(["n", "eta", "eta_err", "accepted", "shots"])?;
        let mut probs_w = csv::Writer::from_path(dir.join("probs.csv"))?;
        probs_w.write_record([
            "n", "p00", "p00_err", "p01", "p01_err", "p10", "p10_err", "p11", "p11_err",
            "p00_plus_p11",
        ])?;
        let mut prob_series = Vec::new();
        for p in &series {
            eta_w.write_record([
                p.cycles.to_string(),
                format!("{:.6}", p.acceptance.fraction()),
                format!("{:.6}", p.acceptance.std_err()),
                p.acceptance.accepted.to_string(),
                p.batch.shots.to_string(),
            ])?;
            if let Ok(bp) = bell_probs(&p.batch, &p.acceptance) {
                probs_w.write_record([
                    p.cycles.to_string(),
                    format!("{:.6}", bp.p[0]),
                    format!("{:.6}", bp.err[0]),
                    format!("{:.6}", bp.p[1]),
                    format!("{:.6}", bp.err[1]),
                    format!("{:.6}", bp.p[2]),
                    format!("{:.6}", bp.err[2]),
                    format!("{:.6}", bp.p[3]),
                    format!("{:.6}", bp.err[3]),
                    format!("{:.6}", bp.p00_plus_p11),
                ])?;
                prob_series.push((p.cycles, bp.p00_plus_p11, p.acceptance.fraction()));
            }
        }
        eta_w.flush()?;
        probs_w.flush()?;
        summary.acceptance =
            Some(acceptance_fit(&acceptance_curve(&series), EncodingKind::Deterministic)?);
        summary.prob_decay = Some(fit_decay(&prob_series, cfg.t_cycle_us())?);
    }

    if mode != BellModeArg::Lifetime {
        let max_n = cfg.cycles_or(15);
        let mode_parsed = parse_setting_mode(settings_mode)?;
        let enumerated = mode_parsed == SettingMode::Exhaustive81;
        let mut tomo_w = csv::Writer::from_path(dir.join("tomo.csv"))?;
        tomo_w.write_record([
            "n", "f_l", "f_l_err", "p2_l", "p2_l_err", "p2_phy", "p2_phy_err", "p_l",
        ])?;
        let mut f_series = Vec::new();
        let cycle_points: Vec<usize> = std::iter::once(0)
            .chain((1..=max_n).filter(|n| n % 2 == 1 || *n == max_n))
            .collect();
        for &n in &cycle_points {
            let run_seed = derive_seed(cfg.seed, "bell-tomo", n as u64);
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(run_seed);
            let settings = sample_settings(mode_parsed, &mut rng)?;
            let dataset = collect_dataset(
                &cfg.device,
                TomographySource::Bell,
                n,
                &settings,
                enumerated,
                meas_per_setting.max(1) * n.max(1),
                run_seed,
                cfg.order,
                &cfg.noise,
            )?;
            let est = ShadowEstimator::new(&dataset, &code)?;
            let (f_l, f_l_err) = est.fidelity(
                &FidelityTarget::Logical(bell_target_vector()),
                crate::shadows::DEFAULT_BOOTSTRAP_RESAMPLES,
                derive_seed(run_seed, "boot-f", 0),
            )?;
            let (p2_l, p2_l_err) = est.purity(
                &PurityScope::Logical,
                crate::shadows::DEFAULT_BOOTSTRAP_RESAMPLES,
                derive_seed(run_seed, "boot-p2l", 0),
            )?;
            let (p2_phy, p2_phy_err) = est.purity(
                &PurityScope::Physical,
                crate::shadows::DEFAULT_BOOTSTRAP_RESAMPLES,
                derive_seed(run_seed, "boot-p2p", 0),
            )?;
            let p_l = est.p_l();
            tomo_w.write_record([
                n.to_string(),
                format!("{:.4}", f_l),
                format!("{:.4}", f_l_err),
                format!("{:.4}", p2_l),
                format!("{:.4}", p2_l_err),
                format!("{:.4}", p2_phy),
                format!("{:.4}", p2_phy_err),
                format!("{:.4}", p_l),
            ])?;
            if n == 0 {
                summary.fidelity_n0 = Some((f_l, f_l_err));
                summary.purity_l_n0 = Some((p2_l, p2_l_err));
                summary.purity_phy_n0 = Some((p2_phy, p2_phy_err));
            } else {
                f_series.push((n, f_l, 1.0));
            }
        }
        tomo_w.flush()?;
        if f_series.len() >= 3 {
            summary.fidelity_decay = Some(fit_decay(&f_series, cfg.t_cycle_us())?);
        }
    }

    let mut fits_w = csv::Writer::from_path(dir.join("fits.csv"))?;
    fits_w.write_record(["quantity", "value", "err"])?;
    if let Some(fit) = &summary.acceptance {
        fits_w.write_record(["p_s", &format!("{:.6}", fit.p_s), &format!("{:.6}", fit.p_s_err)])?;
        fits_w.write_record(["p_l", &format!("{:.6}", fit.p_l), &format!("{:.6}", fit.p_l_err)])?;
    }
    if let Some(fit) = &summary.prob_decay {
        fits_w.write_record([
            "eps_bell_pct",
            &format!("{:.4}", fit.epsilon * 100.0),
            &format!("{:.4}", fit.epsilon_err * 100.0),
        ])?;
        fits_w.write_record([
            "tau_bell_us",
            &format!("{:.3}", fit.tau_us),
            &format!("{:.3}", fit.tau_err_us),
        ])?;
    }
    if let Some(fit) = &summary.fidelity_decay {
        fits_w.write_record([
            "eps_fidelity_pct",
            &format!("{:.4}", fit.epsilon * 100.0),
            &format!("{:.4}", fit.epsilon_err * 100.0),
        ])?;
        fits_w.write_record([
            "fidelity_r_squared",
            &format!("{:.4}", fit.r_squared),
            "0",
        ])?;
    }
    fits_w.flush()?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// budget

#[derive(Debug)]
pub struct BudgetSummary {
    pub rows: Vec<BudgetRow>,
}

pub fn cmd_budget(cfg: &RunConfig) -> Result<BudgetSummary, CliError> {
    let cycles = cfg.cycles_or(20);
    let rows = error_budget(
        &cfg.device,
        ProductState::parse("0000").expect("static"),
        cycles,
        cfg.shots,
        derive_seed(cfg.seed, "budget", 0),
        cfg.order,
        &cfg.noise,
        PostselectRule::CleanAndFinalSubspace,
    )?;
    let dir = cfg.out("budget")?;
    cfg.write_manifest(&dir, "budget")?;
    let mut w = csv::Writer::from_path(dir.join("budget.csv"))?;
    w.write_record([
        "ablated",
        "p_s",
        "rejection_rate",
        "eps1_pct",
        "eps2_pct",
        "eps_mean_pct",
        "contribution_rejection",
        "contribution_eps_pct",
    ])?;
    for r in &rows {
        w.write_record([
            r.ablated.map_or("none".to_string(), |k| k.name().to_string()),
            format!("{:.6}", r.p_s),
            format!("{:.6}", r.rejection_rate),
            format!("{:.4}", r.eps1 * 100.0),
            format!("{:.4}", r.eps2 * 100.0),
            format!("{:.4}", r.eps_mean * 100.0),
            format!("{:.6}", r.contribution_rejection),
            format!("{:.4}", r.contribution_eps * 100.0),
        ])?;
    }
    w.flush()?;
    Ok(BudgetSummary { rows })
}

// ---------------------------------------------------------------------------
// detectors

#[derive(Debug)]
pub struct DetectorsSummary {
    /// (state label, stabilizer, N, sigma means for n = 1..N)
    pub grids: Vec<(String, char, usize, Vec<f64>)>,
}

pub fn cmd_detectors(cfg: &RunConfig, states: &[String]) -> Result<DetectorsSummary, CliError> {
    let mut sources: Vec<(String, Option<ProductState>)> = Vec::new();
    if states.is_empty() {
        sources.push(("0000".to_string(), Some(ProductState::parse("0000")?)));
        sources.push(("++++".to_string(), Some(ProductState::parse("++++")?)));
        sources.push(("bell".to_string(), None));
    } else {
        for s in states {
            if s == "bell" {
                sources.push(("bell".to_string(), None));
            } else {
                sources.push((s.clone(), Some(ProductState::parse(s)?)));
            }
        }
    }
    let cycles = cfg.cycles_or(20);
    let ns: Vec<usize> = (1..=cycles).collect();
    let dir = cfg.out("detectors")?;
    cfg.write_manifest(&dir, "detectors")?;
    let mut w = csv::Writer::from_path(dir.join("sigma.csv"))?;
    w.write_record(["state", "stabilizer", "n_total", "n", "sigma_mean"])?;
    let mut grids = Vec::new();
    for (li, (label, psi)) in sources.iter().enumerate() {
        let series = run_cycle_series(
            &cfg.device,
            |n| match psi {
                Some(p) => ExperimentKind::Lifetime { psi_in: *p, cycles: n },
                None => ExperimentKind::BellLifetime { cycles: n },
            },
            &ns,
            |n| cfg.shots_for(n),
            derive_seed(cfg.seed, "detectors", li as u64),
            cfg.order,
            &cfg.noise,
            PostselectRule::AllSyndromesClean,
        )?;
        for p in &series {
            let (sx, sz) = detection_fractions(&p.batch, cfg.sigma);
            for (stab, sigma) in [('X', &sx), ('Z', &sz)] {
                for (i, v) in sigma.iter().enumerate() {
                    w.write_record([
                        label.clone(),
                        stab.to_string(),
                        p.cycles.to_string(),
                        (i + 1).to_string(),
                        format!("{:.6}", v),
                    ])?;
                }
                grids.push((label.clone(), stab, p.cycles, sigma.clone()));
            }
        }
    }
    w.flush()?;
    Ok(DetectorsSummary { grids })
}

/// Entry point used by the binary.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.common.threads > 0 {
        // Ignore failure when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.common.threads)
            .build_global();
    }
    let cfg = RunConfig::from_args(&cli.common)?;
    match &cli.command {
        Command::StabilizerTomo => {
            let s = cmd_stabilizer_tomo(&cfg)?;
            println!(
                "stabilizer fidelity: S_Z {:.4}, S_X {:.4}",
                s.fidelity_z, s.fidelity_x
            );
        }
        Command::Lifetime { states } => {
            let s = cmd_lifetime(&cfg, states)?;
            for f in &s.fits {
                println!(
                    "{} -> |{}>_L ({}): P_S {:.3}, P_L {:.3}, eps ({:.3}%, {:.3}%), tau ({:.0} us, {:.0} us)",
                    f.psi_in, f.target, f.basis, f.p_s, f.p_l, f.eps1_pct, f.eps2_pct, f.tau1_us, f.tau2_us
                );
            }
        }
        Command::Tomography { settings, meas_per_setting, states, cleanup } => {
            let s = cmd_tomography(&cfg, settings, *meas_per_setting, states, *cleanup)?;
            for r in &s.rows {
                println!(
                    "{} -> |{}>_L: F_L {:.4} p2L {:.3} p2phy {:.3} P_L {:.3} P_S {:.3}",
                    r.psi_in, r.psi_target, r.f_l, r.p2_l, r.p2_phy, r.p_l, r.p_s
                );
            }
        }
        Command::Bell { mode, settings, meas_per_setting } => {
            let s = cmd_bell(&cfg, *mode, settings, *meas_per_setting)?;
            if let Some(fit) = &s.acceptance {
                println!("bell acceptance: P_S {:.3}, P_L {:.3}", fit.p_s, fit.p_l);
            }
            if let Some(fit) = &s.prob_decay {
                println!("bell eps {:.3}% tau {:.0} us", fit.epsilon * 100.0, fit.tau_us);
            }
            if let Some((f, e)) = s.fidelity_n0 {
                println!("bell F_L(N=0) = {f:.4} +- {e:.4}");
            }
        }
        Command::Budget => {
            let s = cmd_budget(&cfg)?;
            for r in &s.rows {
                println!(
                    "{:8} rejection {:.4} eps {:.4}% (contrib {:.4} / {:.4}%)",
                    r.ablated.map_or("none", |k| k.name()),
                    r.rejection_rate,
                    r.eps_mean * 100.0,
                    r.contribution_rejection,
                    r.contribution_eps * 100.0,
                );
            }
        }
        Command::Detectors { states } => {
            let s = cmd_detectors(&cfg, states)?;
            println!("wrote {} detector rows", s.grids.len());
        }
    }
    Ok(())
}
