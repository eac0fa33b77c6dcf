//! Randomized Pauli-measurement (classical shadow) estimation of physical
//! and logical density matrices, fidelity, purity, and the logical
//! acceptance probability P_L.
//!
//! A setting assigns each data qubit a basis in {Z, X, Y}. For basis b and
//! measured bit d the single-qubit inversion factor is
//! (I + 3 (-1)^d sigma_b)/2, which has unit trace; the single-setting shadow
//! is the Born-probability-weighted tensor product of factors, and the
//! physical estimate is the plain mean over settings. Logical shadows are
//! the 4x4 codeword-basis block divided by P_L, where P_L is the mean block
//! trace over settings (the logical-subspace population). Purity uses the
//! U-statistic over distinct setting pairs; error bars come from a bootstrap
//! over settings.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{
    build_experiment, compile_noise, CircuitError, ExperimentKind, NoiseOptions, StabOrder,
    TomoBasis, TomographySetting,
};
use crate::code::CodeDefinition;
use crate::dense::DensityMatrix;
use crate::device::DeviceModel;
use crate::engine::{derive_seed, run_shots, EngineError};

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum ShadowError {
    #[error("purity and bootstrap need at least 2 settings, got {0}")]
    TooFewSettings(usize),
    #[error("setting {0} has no post-selected bitstrings")]
    EmptySetting(usize),
    #[error("no setting kept any post-selected bitstrings")]
    AllSettingsEmpty,
    #[error("estimated acceptance probability P_L = {0} is not positive")]
    NonpositiveAcceptance(f64),
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// How measurement settings are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingMode {
    /// Draw N_U settings with i.i.d. uniform bases.
    Uniform(usize),
    /// Enumerate all 3^4 = 81 basis combinations once.
    Exhaustive81,
}

/// Draw or enumerate tomography settings.
pub fn sample_settings(
    mode: SettingMode,
    rng: &mut impl Rng,
) -> Result<Vec<TomographySetting>, ShadowError> {
    match mode {
        SettingMode::Uniform(n) => {
            if n < 2 {
                return Err(ShadowError::TooFewSettings(n));
            }
            Ok((0..n)
                .map(|_| {
                    TomographySetting([0; 4].map(|_| TomoBasis::ALL[rng.random_range(0..3)]))
                })
                .collect())
        }
        SettingMode::Exhaustive81 => Ok((0..81)
            .map(|idx| {
                TomographySetting([0, 1, 2, 3].map(|j| TomoBasis::ALL[(idx / 3usize.pow(j)) % 3]))
            })
            .collect()),
    }
}

/// Randomized-measurement dataset: post-selected outcome counts per setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowDataset {
    pub settings: Vec<TomographySetting>,
    /// Post-selected counts per setting, indexed by the 4-bit data pattern
    /// (D1 = bit 0).
    pub counts: Vec<[usize; 16]>,
    /// Raw shots per setting before post-selection (N_M).
    pub raw_shots_per_setting: usize,
    /// Whether the settings enumerate the full basis set instead of being
    /// sampled i.i.d. Quadratic estimators depend on the design: the pair
    /// statistic over distinct settings is unbiased only for i.i.d.
    /// sampling, where repeated-setting pairs occur naturally; an enumerated
    /// design needs the same-setting split-sample term instead.
    #[serde(default)]
    pub enumerated: bool,
}

impl ShadowDataset {
    pub fn n_settings(&self) -> usize {
        self.settings.len()
    }

    /// Post-selected count N'_M of one setting.
    pub fn kept(&self, setting: usize) -> usize {
        self.counts[setting].iter().sum()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ShadowError> {
        #[derive(Serialize)]
        struct File<'a> {
            n_u: usize,
            n_m: usize,
            enumerated: bool,
            settings: Vec<Record<'a>>,
        }
        #[derive(Serialize)]
        struct Record<'a> {
            bases: String,
            #[serde(flatten)]
            _p: std::marker::PhantomData<&'a ()>,
            counts: BTreeMap<String, usize>,
        }
        let file = File {
            n_u: self.n_settings(),
            n_m: self.raw_shots_per_setting,
            enumerated: self.enumerated,
            settings: self
                .settings
                .iter()
                .zip(&self.counts)
                .map(|(s, c)| Record {
                    bases: s.label(),
                    _p: std::marker::PhantomData,
                    counts: c
                        .iter()
                        .enumerate()
                        .filter(|(_, &n)| n > 0)
                        .map(|(pattern, &n)| (format!("{pattern:04b}"), n))
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(&mut *w, &file)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ShadowError> {
        #[derive(Deserialize)]
        struct File {
            n_m: usize,
            #[serde(default)]
            enumerated: bool,
            settings: Vec<Record>,
        }
        #[derive(Deserialize)]
        struct Record {
            bases: String,
            counts: BTreeMap<String, usize>,
        }
        let file: File = serde_json::from_reader(r)?;
        let mut settings = Vec::with_capacity(file.settings.len());
        let mut counts = Vec::with_capacity(file.settings.len());
        for rec in file.settings {
            let bases: Vec<TomoBasis> = rec
                .bases
                .chars()
                .map(|c| match c {
                    'Z' => TomoBasis::Z,
                    'X' => TomoBasis::X,
                    _ => TomoBasis::Y,
                })
                .collect();
            settings.push(TomographySetting([bases[0], bases[1], bases[2], bases[3]]));
            let mut arr = [0usize; 16];
            for (pattern, n) in rec.counts {
                let idx = usize::from_str_radix(&pattern, 2).unwrap_or(0);
                arr[idx] = n;
            }
            counts.push(arr);
        }
        Ok(Self { settings, counts, raw_shots_per_setting: file.n_m, enumerated: file.enumerated })
    }
}

/// Single-qubit inversion factor (I + 3 (-1)^d sigma_b)/2.
fn factor(basis: TomoBasis, bit: bool) -> [[Complex64; 2]; 2] {
    let s = if bit { -1.5 } else { 1.5 };
    let half = Complex64::new(0.5, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    match basis {
        TomoBasis::Z => [
            [Complex64::new(0.5 + s, 0.0), zero],
            [zero, Complex64::new(0.5 - s, 0.0)],
        ],
        TomoBasis::X => [
            [half, Complex64::new(s, 0.0)],
            [Complex64::new(s, 0.0), half],
        ],
        TomoBasis::Y => [
            [half, Complex64::new(0.0, -s)],
            [Complex64::new(0.0, s), half],
        ],
    }
}

/// Single-setting shadow: the estimated-Born-probability-weighted tensor
/// product of per-qubit factors. Trace is exactly 1.
pub fn shadow_from_setting(
    setting: &TomographySetting,
    counts: &[usize; 16],
) -> Result<DensityMatrix, ShadowError> {
    let kept: usize = counts.iter().sum();
    if kept == 0 {
        return Err(ShadowError::EmptySetting(0));
    }
    let mut rho = DensityMatrix::zeros(4);
    for (pattern, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let weight = count as f64 / kept as f64;
        let factors: [[[Complex64; 2]; 2]; 4] =
            [0, 1, 2, 3].map(|j| factor(setting.0[j], (pattern >> j) & 1 == 1));
        for r in 0..16 {
            for c in 0..16 {
                let mut v = Complex64::new(weight, 0.0);
                for (j, f) in factors.iter().enumerate() {
                    v *= f[(r >> j) & 1][(c >> j) & 1];
                }
                let cur = rho.get(r, c);
                rho.set(r, c, cur + v);
            }
        }
    }
    Ok(rho)
}

/// Scope of a purity estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PurityScope {
    Physical,
    Logical,
    /// Reduced state of a subset of data qubits (indices 0..3).
    PhysicalSubset(Vec<usize>),
}

/// Target of a fidelity estimate.
#[derive(Debug, Clone)]
pub enum FidelityTarget {
    /// 16-dimensional pure state of the four data qubits.
    Physical(Vec<Complex64>),
    /// 4-dimensional pure logical state in the codeword basis |00>,|01>,|10>,|11>.
    Logical(Vec<Complex64>),
}

/// Density, fidelity, purity and P_L estimators over one dataset.
pub struct ShadowEstimator {
    shadows: Vec<DensityMatrix>,
    blocks: Vec<DensityMatrix>,
    block_traces: Vec<f64>,
    kept: Vec<usize>,
    enumerated: bool,
    dropped: usize,
    /// Per-setting per-observed-pattern shadows and blocks, built for
    /// enumerated designs where the bootstrap resamples within settings.
    cache: Option<Vec<SettingCache>>,
}

/// Per-pattern decomposition of one setting's shadow.
struct SettingCache {
    patterns: Vec<usize>,
    weights: Vec<f64>,
    sigmas: Vec<DensityMatrix>,
    blocks: Vec<DensityMatrix>,
}

#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub physical: DensityMatrix,
    pub logical: DensityMatrix,
    pub p_l: f64,
    pub p_l_err: f64,
    pub settings_used: usize,
    pub settings_dropped: usize,
}

impl ShadowEstimator {
    pub fn new(dataset: &ShadowDataset, code: &CodeDefinition) -> Result<Self, ShadowError> {
        let projectors = code.logical_basis_projectors();
        let mut shadows = Vec::with_capacity(dataset.n_settings());
        let mut blocks = Vec::with_capacity(dataset.n_settings());
        let mut block_traces = Vec::with_capacity(dataset.n_settings());
        let mut settings = Vec::with_capacity(dataset.n_settings());
        let mut kept_counts = Vec::with_capacity(dataset.n_settings());
        let mut kept = Vec::with_capacity(dataset.n_settings());
        let mut dropped = 0usize;
        for (setting, counts) in dataset.settings.iter().zip(&dataset.counts) {
            // Settings that kept nothing after post-selection are dropped
            // from both the mean and the U-statistic.
            let n_kept = counts.iter().sum::<usize>();
            if n_kept == 0 {
                dropped += 1;
                continue;
            }
            let rho = shadow_from_setting(setting, counts)?;
            let mut block = DensityMatrix::zeros(2);
            for (i, bra) in projectors.iter().enumerate() {
                for (j, ket) in projectors.iter().enumerate() {
                    block.set(i, j, rho.sandwich(bra, ket));
                }
            }
            block_traces.push(block.trace().re);
            blocks.push(block);
            shadows.push(rho);
            settings.push(*setting);
            kept_counts.push(*counts);
            kept.push(n_kept);
        }
        if shadows.is_empty() {
            return Err(ShadowError::AllSettingsEmpty);
        }
        let cache = if dataset.enumerated {
            Some(
                settings
                    .iter()
                    .zip(&kept_counts)
                    .map(|(setting, counts)| {
                        let kept: usize = counts.iter().sum();
                        let mut patterns = Vec::new();
                        let mut weights = Vec::new();
                        let mut sigmas = Vec::new();
                        let mut blocks_per = Vec::new();
                        for (pattern, &count) in counts.iter().enumerate() {
                            if count == 0 {
                                continue;
                            }
                            let mut single = [0usize; 16];
                            single[pattern] = 1;
                            let sigma =
                                shadow_from_setting(setting, &single).expect("one sample");
                            let mut block = DensityMatrix::zeros(2);
                            for (i, bra) in projectors.iter().enumerate() {
                                for (j, ket) in projectors.iter().enumerate() {
                                    block.set(i, j, sigma.sandwich(bra, ket));
                                }
                            }
                            patterns.push(pattern);
                            weights.push(count as f64 / kept as f64);
                            sigmas.push(sigma);
                            blocks_per.push(block);
                        }
                        SettingCache { patterns, weights, sigmas, blocks: blocks_per }
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            shadows,
            blocks,
            block_traces,
            kept,
            enumerated: dataset.enumerated,
            dropped,
            cache,
        })
    }

    pub fn n_used(&self) -> usize {
        self.shadows.len()
    }

    /// Logical acceptance probability: mean block trace over settings.
    pub fn p_l(&self) -> f64 {
        self.p_l_view(&ResampleView::Original)
    }

    fn p_l_view(&self, view: &ResampleView) -> f64 {
        match view {
            ResampleView::Original => {
                self.block_traces.iter().sum::<f64>() / self.block_traces.len() as f64
            }
            ResampleView::Settings(idx) => {
                idx.iter().map(|&i| self.block_traces[i]).sum::<f64>() / idx.len() as f64
            }
            ResampleView::Within(w) => {
                let cache = self.cache.as_ref().expect("enumerated cache");
                let mut acc = 0.0;
                for (r, sc) in cache.iter().enumerate() {
                    for (i, block) in sc.blocks.iter().enumerate() {
                        acc += w[r][i] * block.trace().re;
                    }
                }
                acc / cache.len() as f64
            }
        }
    }

    /// Physical and logical density estimates with a bootstrap error on P_L.
    pub fn estimate_density(
        &self,
        resamples: usize,
        seed: u64,
    ) -> Result<DensityEstimate, ShadowError> {
        let m = self.n_used();
        let mut physical = DensityMatrix::zeros(4);
        for rho in &self.shadows {
            physical.add_scaled(rho, 1.0 / m as f64);
        }
        let p_l = self.p_l();
        if p_l <= 0.0 {
            return Err(ShadowError::NonpositiveAcceptance(p_l));
        }
        let mut logical = DensityMatrix::zeros(2);
        for block in &self.blocks {
            logical.add_scaled(block, 1.0 / (m as f64 * p_l));
        }
        let p_l_err = self.bootstrap(resamples, seed, |view| self.p_l_view(view));
        Ok(DensityEstimate {
            physical,
            logical,
            p_l,
            p_l_err,
            settings_used: m,
            settings_dropped: self.dropped,
        })
    }

    /// Shadow fidelity estimator: mean over settings of <psi|rho_r|psi>,
    /// divided by P_L for logical targets. Returns (value, bootstrap error).
    pub fn fidelity(
        &self,
        target: &FidelityTarget,
        resamples: usize,
        seed: u64,
    ) -> Result<(f64, f64), ShadowError> {
        if let FidelityTarget::Logical(_) = target {
            let p_l = self.p_l();
            if p_l <= 0.0 {
                return Err(ShadowError::NonpositiveAcceptance(p_l));
            }
        }
        let value = self.fidelity_view(target, &ResampleView::Original);
        let err =
            self.bootstrap(resamples, seed, |view| self.fidelity_view(target, view));
        Ok((value, err))
    }

    fn fidelity_view(&self, target: &FidelityTarget, view: &ResampleView) -> f64 {
        let per_setting = |mats: &[DensityMatrix], psi: &[Complex64]| -> f64 {
            match view {
                ResampleView::Original => {
                    mats.iter().map(|x| x.fidelity_pure(psi)).sum::<f64>() / mats.len() as f64
                }
                ResampleView::Settings(idx) => {
                    idx.iter().map(|&i| mats[i].fidelity_pure(psi)).sum::<f64>()
                        / idx.len() as f64
                }
                ResampleView::Within(_) => unreachable!("handled by caller"),
            }
        };
        match (target, view) {
            (FidelityTarget::Physical(psi), ResampleView::Within(w)) => {
                let cache = self.cache.as_ref().expect("enumerated cache");
                let mut acc = 0.0;
                for (r, sc) in cache.iter().enumerate() {
                    for (i, sigma) in sc.sigmas.iter().enumerate() {
                        acc += w[r][i] * sigma.fidelity_pure(psi);
                    }
                }
                acc / cache.len() as f64
            }
            (FidelityTarget::Physical(psi), _) => per_setting(&self.shadows, psi),
            (FidelityTarget::Logical(psi), ResampleView::Within(w)) => {
                let cache = self.cache.as_ref().expect("enumerated cache");
                let mut acc = 0.0;
                for (r, sc) in cache.iter().enumerate() {
                    for (i, block) in sc.blocks.iter().enumerate() {
                        acc += w[r][i] * block.fidelity_pure(psi);
                    }
                }
                let den = self.p_l_view(view);
                if den > 0.0 {
                    acc / cache.len() as f64 / den
                } else {
                    0.0
                }
            }
            (FidelityTarget::Logical(psi), _) => {
                let den = self.p_l_view(view);
                if den > 0.0 {
                    per_setting(&self.blocks, psi) / den
                } else {
                    0.0
                }
            }
        }
    }

    /// Unbiased purity estimate. Returns (value, bootstrap error).
    ///
    /// Sampled designs use the U-statistic over distinct setting pairs
    /// (same-setting products never enter; repeated draws of one setting
    /// count as distinct). Enumerated designs additionally need the
    /// same-setting split-sample term: the enumerated mean over settings is
    /// the exact uniform average, so Tr(rho^2) decomposes into cross-setting
    /// shadow products plus per-setting sample-pair products estimating
    /// Tr(m_r^2) of each setting's conditional mean.
    pub fn purity(
        &self,
        scope: &PurityScope,
        resamples: usize,
        seed: u64,
    ) -> Result<(f64, f64), ShadowError> {
        let m = self.n_used();
        if m < 2 {
            return Err(ShadowError::TooFewSettings(m));
        }
        if *scope == PurityScope::Logical {
            let p_l = self.p_l();
            if p_l <= 0.0 {
                return Err(ShadowError::NonpositiveAcceptance(p_l));
            }
        }
        let ctx = self.purity_context(scope);
        let value = self.purity_view(&ctx, scope, &ResampleView::Original);
        let err =
            self.bootstrap(resamples, seed, |view| self.purity_view(&ctx, scope, view));
        Ok((value, err))
    }

    /// Precomputed per-setting matrices and Grams for one purity scope.
    fn purity_context(&self, scope: &PurityScope) -> PurityContext {
        let mats: Vec<DensityMatrix> = match scope {
            PurityScope::Physical => self.shadows.clone(),
            PurityScope::Logical => self.blocks.clone(),
            PurityScope::PhysicalSubset(keep) => {
                self.shadows.iter().map(|r| r.partial_trace(keep)).collect()
            }
        };
        let self_traces: Vec<f64> = mats.iter().map(|x| x.mul_trace(x).re).collect();
        // Per-pattern matrices and Gram matrices for the within term.
        let per_pattern = self.cache.as_ref().map(|cache| {
            cache
                .iter()
                .map(|sc| {
                    let pats: Vec<DensityMatrix> = match scope {
                        PurityScope::Physical => sc.sigmas.clone(),
                        PurityScope::Logical => sc.blocks.clone(),
                        PurityScope::PhysicalSubset(keep) => {
                            sc.sigmas.iter().map(|x| x.partial_trace(keep)).collect()
                        }
                    };
                    let k = pats.len();
                    let mut gram = vec![0.0f64; k * k];
                    for i in 0..k {
                        for j in 0..k {
                            gram[i * k + j] = match scope {
                                // Tensor-factor identity: Tr(sigma_d sigma_d') =
                                // 5^(q - D) * (-4)^D with D the Hamming distance
                                // over the relevant bits.
                                PurityScope::Physical => {
                                    pattern_gram(sc.patterns[i], sc.patterns[j], &[0, 1, 2, 3])
                                }
                                PurityScope::PhysicalSubset(keep) => {
                                    pattern_gram(sc.patterns[i], sc.patterns[j], keep)
                                }
                                PurityScope::Logical => pats[i].mul_trace(&pats[j]).re,
                            };
                        }
                    }
                    (pats, gram)
                })
                .collect::<Vec<_>>()
        });
        PurityContext { mats, self_traces, per_pattern }
    }

    fn purity_view(&self, ctx: &PurityContext, scope: &PurityScope, view: &ResampleView) -> f64 {
        let scale = match scope {
            PurityScope::Logical => {
                let p_l = self.p_l_view(view);
                if p_l <= 0.0 {
                    return 0.0;
                }
                1.0 / (p_l * p_l)
            }
            _ => 1.0,
        };
        match view {
            ResampleView::Settings(idx) => {
                // Sampled design: distinct-position pair statistic.
                let dim_n = ctx.mats[0].len();
                let mut sum = DensityMatrix::zeros(dim_n);
                let mut diag = 0.0;
                for &i in idx.iter() {
                    sum.add_scaled(&ctx.mats[i], 1.0);
                    diag += ctx.self_traces[i];
                }
                let mf = idx.len() as f64;
                scale * (sum.mul_trace(&sum).re - diag) / (mf * (mf - 1.0))
            }
            ResampleView::Original if !self.enumerated => {
                let dim_n = ctx.mats[0].len();
                let mut sum = DensityMatrix::zeros(dim_n);
                let mut diag = 0.0;
                for (mat, &t) in ctx.mats.iter().zip(&ctx.self_traces) {
                    sum.add_scaled(mat, 1.0);
                    diag += t;
                }
                let mf = ctx.mats.len() as f64;
                scale * (sum.mul_trace(&sum).re - diag) / (mf * (mf - 1.0))
            }
            ResampleView::Original => {
                // Enumerated point estimate: cross pairs + within terms with
                // the original weights.
                let per = ctx.per_pattern.as_ref().expect("enumerated cache");
                let cache = self.cache.as_ref().expect("enumerated cache");
                let weights: Vec<&[f64]> = cache.iter().map(|sc| sc.weights.as_slice()).collect();
                scale * self.enumerated_purity(ctx, per, &weights)
            }
            ResampleView::Within(w) => {
                let per = ctx.per_pattern.as_ref().expect("enumerated cache");
                let weights: Vec<&[f64]> = w.iter().map(|v| v.as_slice()).collect();
                scale * self.enumerated_purity(ctx, per, &weights)
            }
        }
    }

    /// (1/M^2) [ sum_{r != r'} Tr(M_r M_r') + sum_r within_r ] with
    /// M_r = sum_i w_{r,i} P_{r,i} and within_r the same-setting sample-pair
    /// statistic.
    fn enumerated_purity(
        &self,
        ctx: &PurityContext,
        per: &[(Vec<DensityMatrix>, Vec<f64>)],
        weights: &[&[f64]],
    ) -> f64 {
        let dim_n = ctx.mats[0].len();
        let m = per.len();
        let mut sum = DensityMatrix::zeros(dim_n);
        let mut cross_diag = 0.0;
        let mut within_total = 0.0;
        let mut within_count = 0usize;
        for (r, (pats, gram)) in per.iter().enumerate() {
            let w = weights[r];
            let k = pats.len();
            let mut mat = DensityMatrix::zeros(dim_n);
            for (i, p) in pats.iter().enumerate() {
                if w[i] != 0.0 {
                    mat.add_scaled(p, w[i]);
                }
            }
            // t_r = w' G w; per-sample square sum = N' * sum_i w_i G_ii.
            let mut quad = 0.0;
            let mut diag_w = 0.0;
            for i in 0..k {
                diag_w += w[i] * gram[i * k + i];
                for j in 0..k {
                    quad += w[i] * w[j] * gram[i * k + j];
                }
            }
            let kept = self.kept[r] as f64;
            if kept >= 2.0 {
                within_total += (kept * kept * quad - kept * diag_w) / (kept * (kept - 1.0));
                within_count += 1;
            }
            cross_diag += quad;
            sum.add_scaled(&mat, 1.0);
        }
        let mf = m as f64;
        let within_mean =
            if within_count > 0 { within_total / within_count as f64 } else { 0.0 };
        (sum.mul_trace(&sum).re - cross_diag + within_mean * mf) / (mf * mf)
    }

    /// Bootstrap standard error under the design-appropriate resampling:
    /// over settings for sampled designs, within settings (multinomial over
    /// each setting's post-selected patterns) for enumerated designs.
    fn bootstrap(&self, resamples: usize, seed: u64, stat: impl Fn(&ResampleView) -> f64) -> f64 {
        let m = self.n_used();
        if resamples == 0 || m < 2 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(resamples);
        match &self.cache {
            None => {
                let mut idx = vec![0usize; m];
                for _ in 0..resamples {
                    for slot in idx.iter_mut() {
                        *slot = rng.random_range(0..m);
                    }
                    values.push(stat(&ResampleView::Settings(&idx)));
                }
            }
            Some(cache) => {
                let mut weights: Vec<Vec<f64>> =
                    cache.iter().map(|sc| vec![0.0; sc.patterns.len()]).collect();
                for _ in 0..resamples {
                    for (r, sc) in cache.iter().enumerate() {
                        multinomial_weights(
                            &mut rng,
                            self.kept[r],
                            &sc.weights,
                            &mut weights[r],
                        );
                    }
                    values.push(stat(&ResampleView::Within(&weights)));
                }
            }
        }
        let mean = values.iter().sum::<f64>() / resamples as f64;
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (resamples - 1) as f64)
            .sqrt()
    }
}

/// View of one bootstrap resample.
enum ResampleView<'a> {
    Original,
    /// Resampled setting indices (sampled designs).
    Settings(&'a [usize]),
    /// Per-setting resampled pattern weights (enumerated designs).
    Within(&'a [Vec<f64>]),
}

struct PurityContext {
    mats: Vec<DensityMatrix>,
    self_traces: Vec<f64>,
    per_pattern: Option<Vec<(Vec<DensityMatrix>, Vec<f64>)>>,
}

/// Tr of a product of two per-sample tensor shadows restricted to `bits`:
/// each matching bit contributes a factor 5, each differing bit -4.
fn pattern_gram(a: usize, b: usize, bits: &[usize]) -> f64 {
    let mut out = 1.0;
    for &j in bits {
        out *= if (a >> j) & 1 == (b >> j) & 1 { 5.0 } else { -4.0 };
    }
    out
}

/// Draw multinomial(n, probs) and write the normalized weights.
fn multinomial_weights(
    rng: &mut ChaCha8Rng,
    n: usize,
    probs: &[f64],
    out: &mut [f64],
) {
    use rand_distr::Distribution;
    let mut remaining = n;
    let mut rest: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() || rest <= p || remaining == 0 {
            out[i] = remaining as f64 / n as f64;
            remaining = 0;
            rest -= p;
            continue;
        }
        let q = (p / rest).clamp(0.0, 1.0);
        let draw = rand_distr::Binomial::new(remaining as u64, q)
            .map(|d| d.sample(rng) as usize)
            .unwrap_or(0)
            .min(remaining);
        out[i] = draw as f64 / n as f64;
        remaining -= draw;
        rest -= p;
    }
}

// Convenience wrappers matching the operation-level API.

pub fn estimate_density(
    dataset: &ShadowDataset,
    code: &CodeDefinition,
    seed: u64,
) -> Result<DensityEstimate, ShadowError> {
    ShadowEstimator::new(dataset, code)?.estimate_density(DEFAULT_BOOTSTRAP_RESAMPLES, seed)
}

pub fn fidelity_estimate(
    dataset: &ShadowDataset,
    code: &CodeDefinition,
    target: &FidelityTarget,
    seed: u64,
) -> Result<(f64, f64), ShadowError> {
    ShadowEstimator::new(dataset, code)?.fidelity(target, DEFAULT_BOOTSTRAP_RESAMPLES, seed)
}

pub fn purity_estimate(
    dataset: &ShadowDataset,
    code: &CodeDefinition,
    scope: &PurityScope,
    seed: u64,
) -> Result<(f64, f64), ShadowError> {
    ShadowEstimator::new(dataset, code)?.purity(scope, DEFAULT_BOOTSTRAP_RESAMPLES, seed)
}

/// Experiment source for a dataset: product-state or Bell preparation.
#[derive(Debug, Clone, Copy)]
pub enum TomographySource {
    Product(crate::circuit::ProductState),
    Bell,
}

/// Collect a randomized-measurement dataset by running the tomography
/// experiment once per setting, post-selecting on clean stabilizer records.
#[allow(clippy::too_many_arguments)]
pub fn collect_dataset(
    device: &DeviceModel,
    source: TomographySource,
    cycles: usize,
    settings: &[TomographySetting],
    enumerated: bool,
    meas_per_setting: usize,
    seed: u64,
    order: StabOrder,
    opts: &NoiseOptions,
) -> Result<ShadowDataset, ShadowError> {
    use rayon::prelude::*;
    let counts: Result<Vec<[usize; 16]>, ShadowError> = settings
        .par_iter()
        .enumerate()
        .map(|(r, setting)| {
            let kind = match source {
                TomographySource::Product(psi_in) => {
                    ExperimentKind::Tomography { psi_in, cycles, setting: *setting }
                }
                TomographySource::Bell => {
                    ExperimentKind::BellTomography { cycles, setting: *setting }
                }
            };
            let program = build_experiment(&kind, device, order)?;
            let compiled = compile_noise(&program, device, opts)?;
            let batch = run_shots(
                &compiled,
                meas_per_setting,
                derive_seed(seed, "shadow-setting", r as u64),
            )?;
            let accept =
                crate::analysis::postselect(&batch, crate::analysis::PostselectRule::AllSyndromesClean);
            let data = batch.data_tags();
            let mut arr = [0usize; 16];
            for s in 0..batch.shots {
                if accept.is_accepted(s) {
                    let mut pattern = 0usize;
                    for (j, &tag) in data.iter().enumerate() {
                        if batch.bit(tag, s) {
                            pattern |= 1 << j;
                        }
                    }
                    arr[pattern] += 1;
                }
            }
            Ok(arr)
        })
        .collect();
    Ok(ShadowDataset {
        settings: settings.to_vec(),
        counts: counts?,
        raw_shots_per_setting: meas_per_setting,
        enumerated,
    })
}

/// Sampling oracle: draw a dataset directly from a known 4-qubit density
/// matrix using the canonical basis projectors (I + (-1)^d sigma)/2. Used to
/// validate estimator unbiasedness independently of the circuit machinery.
pub fn sample_dataset_from_state(
    rho: &DensityMatrix,
    settings: &[TomographySetting],
    enumerated: bool,
    meas_per_setting: usize,
    rng: &mut impl Rng,
) -> ShadowDataset {
    assert_eq!(rho.len(), 4);
    let mut counts = Vec::with_capacity(settings.len());
    for setting in settings {
        // Outcome distribution p(d) = Tr(rho * prod_j P_{b_j, d_j}).
        let mut probs = [0.0f64; 16];
        for (pattern, prob) in probs.iter_mut().enumerate() {
            let projectors: [[[Complex64; 2]; 2]; 4] =
                [0, 1, 2, 3].map(|j| born_projector(setting.0[j], (pattern >> j) & 1 == 1));
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..16 {
                for c in 0..16 {
                    let mut v = rho.get(r, c);
                    // <c| P |r> entries multiply on the bra side.
                    for (j, p) in projectors.iter().enumerate() {
                        v *= p[(c >> j) & 1][(r >> j) & 1];
                    }
                    acc += v;
                }
            }
            *prob = acc.re.max(0.0);
        }
        let total: f64 = probs.iter().sum();
        let mut arr = [0usize; 16];
        for _ in 0..meas_per_setting {
            let mut u: f64 = rng.random::<f64>() * total;
            let mut chosen = 15;
            for (pattern, &p) in probs.iter().enumerate() {
                if u < p {
                    chosen = pattern;
                    break;
                }
                u -= p;
            }
            arr[chosen] += 1;
        }
        counts.push(arr);
    }
    ShadowDataset {
        settings: settings.to_vec(),
        counts,
        raw_shots_per_setting: meas_per_setting,
        enumerated,
    }
}

fn born_projector(basis: TomoBasis, bit: bool) -> [[Complex64; 2]; 2] {
    let s = if bit { -0.5 } else { 0.5 };
    let half = Complex64::new(0.5, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    match basis {
        TomoBasis::Z => [
            [Complex64::new(0.5 + s, 0.0), zero],
            [zero, Complex64::new(0.5 - s, 0.0)],
        ],
        TomoBasis::X => [
            [half, Complex64::new(s, 0.0)],
            [Complex64::new(s, 0.0), half],
        ],
        TomoBasis::Y => [
            [half, Complex64::new(0.0, -s)],
            [Complex64::new(0.0, s), half],
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::CodewordBasis;
    use crate::dense::StateVector;

    fn exhaustive() -> Vec<TomographySetting> {
        sample_settings(SettingMode::Exhaustive81, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn setting_generation() {
        let all = exhaustive();
        assert_eq!(all.len(), 81);
        let distinct: std::collections::HashSet<String> =
            all.iter().map(|s| s.label()).collect();
        assert_eq!(distinct.len(), 81);
        // Uniform sampling: determinism and per-qubit frequencies.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = sample_settings(SettingMode::Uniform(3000), &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = sample_settings(SettingMode::Uniform(3000), &mut rng).unwrap();
        assert_eq!(a, b);
        for qubit in 0..4 {
            for basis in TomoBasis::ALL {
                let count = a.iter().filter(|s| s.0[qubit] == basis).count();
                let expect = 1000.0;
                let sigma = (3000.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
                assert!((count as f64 - expect).abs() < 4.0 * sigma, "basis frequency {count}");
            }
        }
        assert!(sample_settings(SettingMode::Uniform(1), &mut rng).is_err());
    }

    #[test]
    fn factor_entries_match_closed_forms() {
        // Z basis, d = 0: 3|0><0| - I = diag(2, -1).
        let f = factor(TomoBasis::Z, false);
        assert_eq!(f[0][0], Complex64::new(2.0, 0.0));
        assert_eq!(f[1][1], Complex64::new(-1.0, 0.0));
        // X basis, d = 0: 3|+><+| - I has <0|.|0> = 0.5.
        let f = factor(TomoBasis::X, false);
        assert_eq!(f[0][0], Complex64::new(0.5, 0.0));
        assert_eq!(f[0][1], Complex64::new(1.5, 0.0));
        // All-identity setting, all-zeros bitstring: |0000> entry is 2^4.
        let setting = TomographySetting([TomoBasis::Z; 4]);
        let mut counts = [0usize; 16];
        counts[0] = 7;
        let rho = shadow_from_setting(&setting, &counts).unwrap();
        assert_eq!(rho.get(0, 0), Complex64::new(16.0, 0.0));
    }

    #[test]
    fn shadows_have_unit_trace_and_estimates_are_hermitian() {
        let code = CodeDefinition::new();
        let target = code.codeword("00", CodewordBasis::Z).unwrap();
        let rho = DensityMatrix::from_pure(&target);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = sample_dataset_from_state(&rho, &exhaustive(), true, 50, &mut rng);
        for (s, c) in ds.settings.iter().zip(&ds.counts) {
            let shadow = shadow_from_setting(s, c).unwrap();
            assert!((shadow.trace().re - 1.0).abs() < 1e-12);
            assert!(shadow.trace().im.abs() < 1e-14);
            assert!(shadow.is_hermitian(1e-12));
        }
        let est = estimate_density(&ds, &code, 9).unwrap();
        assert!(est.physical.is_hermitian(1e-12));
        // Logical trace is exactly 1 after dividing by P_L.
        assert!((est.logical.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbiased_on_noiseless_codeword() {
        let code = CodeDefinition::new();
        let target = code.codeword("00", CodewordBasis::Z).unwrap();
        let rho = DensityMatrix::from_pure(&target);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = sample_dataset_from_state(&rho, &exhaustive(), true, 200, &mut rng);
        let est = ShadowEstimator::new(&ds, &code).unwrap();
        // Logical fidelity to |00>_L: the codeword is index 0 of the basis.
        let mut psi_l = vec![Complex64::new(0.0, 0.0); 4];
        psi_l[0] = Complex64::new(1.0, 0.0);
        let (f, f_err) = est.fidelity(&FidelityTarget::Logical(psi_l), 400, 3).unwrap();
        assert!((f - 1.0).abs() < 3.0 * f_err + 0.02, "F = {f} +- {f_err}");
        let (p2, _) = est.purity(&PurityScope::Logical, 400, 4).unwrap();
        assert!((p2 - 1.0).abs() < 0.05, "p2 = {p2}");
        // P_L for a state inside the logical subspace.
        let density = est.estimate_density(400, 5).unwrap();
        assert!((density.p_l - 1.0).abs() < 3.0 * density.p_l_err + 0.02);
        // Physical fidelity against the 16-dim codeword.
        let (f_phy, f_phy_err) = est
            .fidelity(&FidelityTarget::Physical(target.amplitudes().to_vec()), 400, 6)
            .unwrap();
        assert!((f_phy - 1.0).abs() < 3.0 * f_phy_err + 0.02);
    }

    #[test]
    fn orthogonal_target_gives_zero_fidelity() {
        let code = CodeDefinition::new();
        let prepared = code.codeword("00", CodewordBasis::Z).unwrap();
        let rho = DensityMatrix::from_pure(&prepared);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = sample_dataset_from_state(&rho, &exhaustive(), true, 200, &mut rng);
        let est = ShadowEstimator::new(&ds, &code).unwrap();
        let mut psi_l = vec![Complex64::new(0.0, 0.0); 4];
        psi_l[3] = Complex64::new(1.0, 0.0); // |11>_L
        let (f, f_err) = est.fidelity(&FidelityTarget::Logical(psi_l), 400, 8).unwrap();
        assert!(f.abs() < 3.0 * f_err + 0.02, "F = {f} +- {f_err}");
    }

    #[test]
    fn marginal_purity_of_maximally_mixed_qubit() {
        // (|00> + |11>)/sqrt(2) on (D1, D2) ⊗ |00>: D1 marginal is mixed.
        let mut amps = vec![Complex64::new(0.0, 0.0); 16];
        amps[0b0000] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amps[0b0011] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let sv = StateVector::from_amplitudes(amps).unwrap();
        let rho = DensityMatrix::from_pure(&sv);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let settings = {
            let mut r2 = ChaCha8Rng::seed_from_u64(12);
            sample_settings(SettingMode::Uniform(400), &mut r2).unwrap()
        };
        let ds = sample_dataset_from_state(&rho, &settings, false, 100, &mut rng);
        let code = CodeDefinition::new();
        let est = ShadowEstimator::new(&ds, &code).unwrap();
        let (p_marg, err) =
            est.purity(&PurityScope::PhysicalSubset(vec![0]), 400, 13).unwrap();
        assert!((p_marg - 0.5).abs() < 3.0 * err + 0.05, "p = {p_marg} +- {err}");
        // Full-state purity of the pure input stays near 1.
        let (p_full, err_full) = est.purity(&PurityScope::Physical, 400, 14).unwrap();
        assert!((p_full - 1.0).abs() < 3.0 * err_full + 0.1, "p = {p_full}");
    }

    #[test]
    fn purity_is_permutation_invariant() {
        let code = CodeDefinition::new();
        let target = code.codeword("01", CodewordBasis::Z).unwrap();
        let rho = DensityMatrix::from_pure(&target);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut ds = sample_dataset_from_state(&rho, &exhaustive(), true, 60, &mut rng);
        let est = ShadowEstimator::new(&ds, &code).unwrap();
        let (p1, _) = est.purity(&PurityScope::Physical, 0, 0).unwrap();
        ds.settings.reverse();
        ds.counts.reverse();
        let est = ShadowEstimator::new(&ds, &code).unwrap();
        let (p2, _) = est.purity(&PurityScope::Physical, 0, 0).unwrap();
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn error_shrinks_with_more_settings() {
        // O(1/sqrt(N_U)) scaling, checked by quadrupling the settings.
        let code = CodeDefinition::new();
        let target = code.codeword("00", CodewordBasis::Z).unwrap();
        let rho = DensityMatrix::from_pure(&target);
        let psi = FidelityTarget::Physical(target.amplitudes().to_vec());
        let spread = |n_u: usize, seed: u64| -> f64 {
            let mut devs = Vec::new();
            for k in 0..8 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + k);
                let settings =
                    sample_settings(SettingMode::Uniform(n_u), &mut rng).unwrap();
                let ds = sample_dataset_from_state(&rho, &settings, false, 20, &mut rng);
                let est = ShadowEstimator::new(&ds, &code).unwrap();
                let (f, _) = est.fidelity(&psi, 0, 0).unwrap();
                devs.push(f - 1.0);
            }
            (devs.iter().map(|d| d * d).sum::<f64>() / devs.len() as f64).sqrt()
        };
        let coarse = spread(60, 100);
        let fine = spread(240, 300);
        // Expect roughly a factor 2; allow a generous statistical band.
        assert!(fine < coarse * 0.85, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn empty_settings_are_dropped_with_count() {
        let code = CodeDefinition::new();
        let target = code.codeword("00", CodewordBasis::Z).unwrap();
        let rho = DensityMatrix::from_pure(&target);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut ds = sample_dataset_from_state(&rho, &exhaustive(), true, 40, &mut rng);
        ds.counts[3] = [0; 16];
        ds.counts[7] = [0; 16];
        let est = ShadowEstimator::new(&ds, &code).unwrap();
        assert_eq!(est.n_used(), 79);
        let density = est.estimate_density(100, 1).unwrap();
        assert_eq!(density.settings_dropped, 2);
    }

    #[test]
    fn dataset_file_round_trip() {
        let code = CodeDefinition::new();
        let target = code.codeword("10", CodewordBasis::Z).unwrap();
        let rho = DensityMatrix::from_pure(&target);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let settings = sample_settings(SettingMode::Uniform(10), &mut rng).unwrap();
        let ds = sample_dataset_from_state(&rho, &settings, false, 25, &mut rng);
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let back = ShadowDataset::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(ds, back);
    }
}
