//! Everything downstream of raw shots: syndromes and detectors,
//! post-selection, acceptance fits, logical expectation decays, stabilizer
//! fidelity, Bell-state probabilities, and the error-budget driver.
//!
//! Syndrome conventions: the ancillas are never reset, so the stabilizer
//! value at cycle n is s_n = +1 iff d_n xor d_{n-1} = 0 with d_0 = 0, and
//! the detector sigma_n = (1 - s_n * s_{n-1})/2 with s_0 = +1 flags a parity
//! change between consecutive cycles. In bit form both are XOR chains, so
//! post-selection scans reduce to word operations on the packed columns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{
    build_experiment, compile_noise, CircuitError, ErrorKind, ExperimentKind, NoiseOptions,
    ProductState, StabOrder,
};
use crate::code::{Basis, CodeDefinition};
use crate::device::DeviceModel;
use crate::engine::{run_shots, EngineError, RunRecord, ShotBatch};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} points, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },
    #[error("no accepted shots at N = {0}")]
    EmptyAcceptance(usize),
    #[error("all values were non-positive; nothing to fit")]
    NothingToFit,
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Detector definition. `Composed` is the double-differenced form (parity
/// change between consecutive stabilizer values); `StabilizerValue` flags
/// every -1 stabilizer value instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SigmaVariant {
    #[default]
    Composed,
    StabilizerValue,
}

/// Per-shot stabilizer values and detectors, one entry per cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyndromeTrace {
    pub s_x: Vec<i8>,
    pub s_z: Vec<i8>,
    pub sigma_x: Vec<u8>,
    pub sigma_z: Vec<u8>,
}

fn trace_from_bits(d: &[bool], variant: SigmaVariant) -> (Vec<i8>, Vec<u8>) {
    let mut s = Vec::with_capacity(d.len());
    let mut sigma = Vec::with_capacity(d.len());
    let mut prev_d = false;
    let mut prev_s = 1i8;
    for &dn in d {
        let sn = if dn ^ prev_d { -1 } else { 1 };
        let det = match variant {
            SigmaVariant::Composed => u8::from(sn * prev_s < 0),
            SigmaVariant::StabilizerValue => u8::from(sn < 0),
        };
        s.push(sn);
        sigma.push(det);
        prev_d = dn;
        prev_s = sn;
    }
    (s, sigma)
}

/// Stabilizer values and detectors of one run record.
pub fn syndromes(record: &RunRecord, variant: SigmaVariant) -> SyndromeTrace {
    let (s_x, sigma_x) = trace_from_bits(&record.ancilla_x, variant);
    let (s_z, sigma_z) = trace_from_bits(&record.ancilla_z, variant);
    SyndromeTrace { s_x, s_z, sigma_x, sigma_z }
}

/// Post-selection rule: all stabilizer values +1, optionally also requiring
/// the final data bits to lie in the logical subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PostselectRule {
    AllSyndromesClean,
    CleanAndFinalSubspace,
}

/// Accepted-shot mask plus the acceptance fraction with binomial error.
#[derive(Debug, Clone)]
pub struct Acceptance {
    pub mask: Vec<u64>,
    pub accepted: usize,
    pub total: usize,
}

impl Acceptance {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.accepted as f64 / self.total as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let eta = self.fraction();
        (eta * (1.0 - eta) / self.total as f64).sqrt()
    }

    pub fn is_accepted(&self, shot: usize) -> bool {
        (self.mask[shot / 64] >> (shot % 64)) & 1 == 1
    }
}

/// Scan a batch for accepted shots. All stabilizer values +1 is equivalent
/// to every ancilla bit being 0 (d_0 = 0 and values accumulate by XOR), so
/// the scan is a word-wise OR over ancilla columns.
pub fn postselect(batch: &ShotBatch, rule: PostselectRule) -> Acceptance {
    let words = batch.words_per_tag();
    let mut rejected = vec![0u64; words];
    for stab in [crate::circuit::StabKind::X, crate::circuit::StabKind::Z] {
        for &tag in batch.ancilla_tags(stab) {
            for (w, &col) in batch.column(tag).iter().enumerate() {
                rejected[w] |= col;
            }
        }
    }
    if rule == PostselectRule::CleanAndFinalSubspace {
        let data = batch.data_tags();
        let mut parity = vec![0u64; words];
        for t in data {
            for (w, &col) in batch.column(t).iter().enumerate() {
                parity[w] ^= col;
            }
        }
        for w in 0..words {
            rejected[w] |= parity[w];
        }
    }
    let valid_last = if batch.shots % 64 == 0 { !0u64 } else { (!0u64) >> (64 - batch.shots % 64) };
    let mut mask = vec![0u64; words];
    let mut accepted = 0usize;
    for w in 0..words {
        let valid = if w + 1 == words { valid_last } else { !0u64 };
        mask[w] = !rejected[w] & valid;
        accepted += mask[w].count_ones() as usize;
    }
    Acceptance { mask, accepted, total: batch.shots }
}

/// One acceptance-curve point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptancePoint {
    pub cycles: usize,
    pub eta: f64,
    pub err: f64,
    pub accepted: usize,
    pub shots: usize,
}

/// Geometric acceptance model: eta_N = P_S^N * P_L / 2 for probabilistic
/// encoding; the factor 1/2 is dropped for the deterministic Bell encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncodingKind {
    Probabilistic,
    Deterministic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptanceFit {
    pub p_s: f64,
    pub p_l: f64,
    pub p_s_err: f64,
    pub p_l_err: f64,
    pub r_squared: f64,
}

/// Weighted least squares of y against x. Returns (intercept, slope,
/// intercept_err, slope_err, weighted R^2).
fn weighted_linear(points: &[(f64, f64, f64)]) -> (f64, f64, f64, f64, f64) {
    let s: f64 = points.iter().map(|p| p.2).sum();
    let sx: f64 = points.iter().map(|p| p.2 * p.0).sum();
    let sy: f64 = points.iter().map(|p| p.2 * p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.2 * p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.2 * p.0 * p.1).sum();
    let delta = s * sxx - sx * sx;
    let slope = (s * sxy - sx * sy) / delta;
    let intercept = (sxx * sy - sx * sxy) / delta;
    let n = points.len() as f64;
    let ssr: f64 = points
        .iter()
        .map(|&(x, y, w)| {
            let r = y - intercept - slope * x;
            w * r * r
        })
        .sum();
    let y_mean = sy / s;
    let sst: f64 = points.iter().map(|&(_, y, w)| w * (y - y_mean) * (y - y_mean)).sum();
    let variance = if n > 2.0 { ssr / (n - 2.0) } else { 0.0 };
    let slope_err = (variance * s / delta).max(0.0).sqrt();
    let intercept_err = (variance * sxx / delta).max(0.0).sqrt();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    (intercept, slope, intercept_err, slope_err, r_squared)
}

/// Fit the geometric acceptance model to an eta_N series by a weighted
/// log-linear fit (weights proportional to eta_N); non-positive eta points
/// are excluded.
pub fn acceptance_fit(
    points: &[AcceptancePoint],
    encoding: EncodingKind,
) -> Result<AcceptanceFit, AnalysisError> {
    let usable: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|p| p.eta > 0.0)
        .map(|p| (p.cycles as f64, p.eta.ln(), p.eta))
        .collect();
    if usable.len() < 2 {
        return Err(AnalysisError::NotEnoughPoints { needed: 2, got: usable.len() });
    }
    let (intercept, slope, intercept_err, slope_err, r_squared) = weighted_linear(&usable);
    let p_s = slope.exp();
    let offset = match encoding {
        EncodingKind::Probabilistic => 2.0,
        EncodingKind::Deterministic => 1.0,
    };
    let p_l = offset * intercept.exp();
    Ok(AcceptanceFit {
        p_s,
        p_l,
        p_s_err: p_s * slope_err,
        p_l_err: p_l * intercept_err,
        r_squared,
    })
}

/// Result of the exponential decay fit a * exp(-N b) with derived lifetime
/// and error-per-cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub a_err: f64,
    pub b_err: f64,
    /// Lifetime tau = t_cycle / b in microseconds (infinite when b <= 0).
    pub tau_us: f64,
    pub tau_err_us: f64,
    /// Logical error per cycle eps = (1 - exp(-b))/2.
    pub epsilon: f64,
    pub epsilon_err: f64,
    pub r_squared: f64,
    pub dropped_points: usize,
    /// Set when b <= 0: no decay resolved.
    pub degenerate: bool,
}

/// Weighted least squares on ln(value): points are (N, value, weight),
/// non-positive values are dropped (counted in `dropped_points`).
pub fn fit_decay(
    points: &[(usize, f64, f64)],
    t_cycle_us: f64,
) -> Result<FitResult, AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::NotEnoughPoints { needed: 3, got: points.len() });
    }
    let usable: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|p| p.1 > 0.0 && p.2 > 0.0)
        .map(|p| (p.0 as f64, p.1.ln(), p.2))
        .collect();
    let dropped = points.len() - usable.len();
    if usable.len() < 3 {
        return Err(AnalysisError::NotEnoughPoints { needed: 3, got: usable.len() });
    }
    let (intercept, slope, intercept_err, slope_err, r_squared) = weighted_linear(&usable);
    let a = intercept.exp();
    let b = -slope;
    let degenerate = b <= 0.0;
    let tau_us = if b > 0.0 { t_cycle_us / b } else { f64::INFINITY };
    let tau_err_us = if b > 0.0 { t_cycle_us / (b * b) * slope_err } else { f64::INFINITY };
    Ok(FitResult {
        a,
        b,
        a_err: a * intercept_err,
        b_err: slope_err,
        tau_us,
        tau_err_us,
        epsilon: (1.0 - (-b).exp()) / 2.0,
        epsilon_err: (-b).exp() / 2.0 * slope_err,
        r_squared,
        dropped_points: dropped,
        degenerate,
    })
}

/// Mean and binomial error of a logical operator over accepted shots.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExpectationPoint {
    pub mean: f64,
    pub err: f64,
    pub accepted: usize,
}

/// XOR of two packed data columns restricted to the acceptance mask gives
/// the count of -1 eigenvalues of a weight-2 logical operator.
fn parity_mean(batch: &ShotBatch, accept: &Acceptance, tag_a: usize, tag_b: usize) -> ExpectationPoint {
    let ca = batch.column(tag_a);
    let cb = batch.column(tag_b);
    let mut minus = 0usize;
    for (w, mask) in accept.mask.iter().enumerate() {
        minus += ((ca[w] ^ cb[w]) & mask).count_ones() as usize;
    }
    let n = accept.accepted;
    let mean = if n == 0 { 0.0 } else { 1.0 - 2.0 * minus as f64 / n as f64 };
    let err = if n == 0 { 0.0 } else { ((1.0 - mean * mean).max(0.0) / n as f64).sqrt() };
    ExpectationPoint { mean, err, accepted: n }
}

/// <Z_Li> or <X_Li> (depending on the batch's readout basis) over accepted
/// shots, for logical qubit index 0 or 1.
pub fn logical_expectation(
    batch: &ShotBatch,
    accept: &Acceptance,
    qubit: usize,
) -> Result<ExpectationPoint, AnalysisError> {
    if accept.accepted == 0 {
        return Err(AnalysisError::EmptyAcceptance(batch.cycles));
    }
    let d = batch.data_tags();
    // Operator supports: Z_L1 = Z_D1 Z_D3, Z_L2 = Z_D1 Z_D2 on Z-basis bits;
    // X_L1 = X_D3 X_D4, X_L2 = X_D2 X_D4 on X-basis bits.
    let (a, b) = match (batch.basis, qubit) {
        (Basis::Z, 0) => (d[0], d[2]),
        (Basis::Z, 1) => (d[0], d[1]),
        (Basis::X, 0) => (d[2], d[3]),
        (Basis::X, 1) => (d[1], d[3]),
        _ => panic!("logical qubit index must be 0 or 1"),
    };
    Ok(parity_mean(batch, accept, a, b))
}

/// Stabilizer fidelity 1 - <|s_exp - s_ideal|>/2 over input states.
pub fn stabilizer_fidelity(pairs: &[(f64, f64)]) -> f64 {
    let mean_abs: f64 =
        pairs.iter().map(|(exp, ideal)| (exp - ideal).abs()).sum::<f64>() / pairs.len() as f64;
    1.0 - mean_abs / 2.0
}

/// Probabilities of the four logical Z-eigenvalue pairs over accepted shots,
/// labeled with the codeword ket convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BellProbs {
    /// Keyed by ket label: p[b2*2 + b1] where bi = (1 - eig_i)/2.
    pub p: [f64; 4],
    pub err: [f64; 4],
    pub labels: [String; 4],
    pub p00_plus_p11: f64,
    pub accepted: usize,
}

pub fn bell_probs(batch: &ShotBatch, accept: &Acceptance) -> Result<BellProbs, AnalysisError> {
    if accept.accepted == 0 {
        return Err(AnalysisError::EmptyAcceptance(batch.cycles));
    }
    let d = batch.data_tags();
    let (c1a, c1b) = (batch.column(d[0]), batch.column(d[2]));
    let (c2a, c2b) = (batch.column(d[0]), batch.column(d[1]));
    let mut counts = [0usize; 4];
    for (w, mask) in accept.mask.iter().enumerate() {
        let b1 = c1a[w] ^ c1b[w];
        let b2 = c2a[w] ^ c2b[w];
        counts[0] += (!b1 & !b2 & mask).count_ones() as usize;
        counts[1] += (b1 & !b2 & mask).count_ones() as usize;
        counts[2] += (!b1 & b2 & mask).count_ones() as usize;
        counts[3] += (b1 & b2 & mask).count_ones() as usize;
    }
    let n = accept.accepted as f64;
    let p = counts.map(|c| c as f64 / n);
    let err = p.map(|pi| (pi * (1.0 - pi) / n).sqrt());
    let code = CodeDefinition::new();
    let labels = [0usize, 1, 2, 3].map(|i| {
        let e1 = if i & 1 == 1 { -1 } else { 1 };
        let e2 = if i & 2 == 2 { -1 } else { 1 };
        code.ket_label((e1, e2), Basis::Z)
    });
    Ok(BellProbs { p, err, labels, p00_plus_p11: p[0] + p[3], accepted: accept.accepted })
}

/// Mean detector value per cycle over all shots (no post-selection), per
/// stabilizer: (sigma_x_bar, sigma_z_bar), length = cycles.
pub fn detection_fractions(batch: &ShotBatch, variant: SigmaVariant) -> (Vec<f64>, Vec<f64>) {
    let words = batch.words_per_tag();
    let valid_last = if batch.shots % 64 == 0 { !0u64 } else { (!0u64) >> (64 - batch.shots % 64) };
    let mut out = Vec::new();
    for stab in [crate::circuit::StabKind::X, crate::circuit::StabKind::Z] {
        let tags = batch.ancilla_tags(stab);
        let mut means = Vec::with_capacity(tags.len());
        let mut prev_d = vec![0u64; words];
        let mut prev_s = vec![0u64; words]; // bit = 1 means s = -1
        for &tag in tags {
            let col = batch.column(tag);
            let mut ones = 0usize;
            let mut s_now = vec![0u64; words];
            for w in 0..words {
                let valid = if w + 1 == words { valid_last } else { !0u64 };
                let s_bit = col[w] ^ prev_d[w];
                let sigma = match variant {
                    SigmaVariant::Composed => s_bit ^ prev_s[w],
                    SigmaVariant::StabilizerValue => s_bit,
                };
                ones += (sigma & valid).count_ones() as usize;
                s_now[w] = s_bit;
            }
            means.push(ones as f64 / batch.shots as f64);
            prev_d.copy_from_slice(col);
            prev_s = s_now;
        }
        out.push(means);
    }
    let z = out.pop().expect("two stabilizers");
    let x = out.pop().expect("two stabilizers");
    (x, z)
}

/// One lifetime-series point: the batch and its acceptance scan.
#[derive(Debug)]
pub struct LifetimePoint {
    pub cycles: usize,
    pub batch: ShotBatch,
    pub acceptance: Acceptance,
}

/// Run an experiment family over a range of cycle counts. The per-N seed is
/// derived from the master seed, so the series is reproducible as a whole.
pub fn run_cycle_series(
    device: &DeviceModel,
    make_kind: impl Fn(usize) -> ExperimentKind + Sync,
    cycle_counts: &[usize],
    shots_for: impl Fn(usize) -> usize + Sync,
    seed: u64,
    order: StabOrder,
    opts: &NoiseOptions,
    rule: PostselectRule,
) -> Result<Vec<LifetimePoint>, AnalysisError> {
    cycle_counts
        .par_iter()
        .map(|&n| {
            let kind = make_kind(n);
            let program = build_experiment(&kind, device, order)?;
            let compiled = compile_noise(&program, device, opts)?;
            let batch = run_shots(
                &compiled,
                shots_for(n),
                crate::engine::derive_seed(seed, "series", n as u64),
            )?;
            let acceptance = postselect(&batch, rule);
            Ok(LifetimePoint { cycles: n, batch, acceptance })
        })
        .collect()
}

/// Extract the acceptance curve from a lifetime series.
pub fn acceptance_curve(points: &[LifetimePoint]) -> Vec<AcceptancePoint> {
    points
        .iter()
        .map(|p| AcceptancePoint {
            cycles: p.cycles,
            eta: p.acceptance.fraction(),
            err: p.acceptance.std_err(),
            accepted: p.acceptance.accepted,
            shots: p.batch.shots,
        })
        .collect()
}

/// Decay fit of one logical qubit's expectation over a lifetime series,
/// weighted by the acceptance fractions. Signs are normalized by the first
/// point so codewords with -1 eigenvalue fit the same positive decay.
pub fn logical_decay_fit(
    points: &[LifetimePoint],
    qubit: usize,
    t_cycle_us: f64,
) -> Result<FitResult, AnalysisError> {
    let mut series = Vec::with_capacity(points.len());
    let mut sign = 0.0f64;
    for p in points {
        match logical_expectation(&p.batch, &p.acceptance, qubit) {
            Ok(e) => {
                if sign == 0.0 && e.mean != 0.0 {
                    sign = e.mean.signum();
                }
                series.push((p.cycles, sign * e.mean, p.acceptance.fraction()));
            }
            // Empty-N points are flagged by dropping them from the fit.
            Err(AnalysisError::EmptyAcceptance(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    fit_decay(&series, t_cycle_us)
}

/// One row of the error budget: the model with one error kind suppressed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetRow {
    /// None = full model.
    pub ablated: Option<ErrorKind>,
    pub p_s: f64,
    pub rejection_rate: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps_mean: f64,
    /// full-model minus ablated-model rejection rate.
    pub contribution_rejection: f64,
    /// full-model minus ablated-model mean error per cycle.
    pub contribution_eps: f64,
}

/// Error budget by ablation: rerun the lifetime pipeline with each error
/// kind suppressed and report the contribution of each kind to the
/// rejection rate and to the logical error per cycle.
#[allow(clippy::too_many_arguments)]
pub fn error_budget(
    device: &DeviceModel,
    psi_in: ProductState,
    max_cycles: usize,
    shots: usize,
    seed: u64,
    order: StabOrder,
    base: &NoiseOptions,
    rule: PostselectRule,
) -> Result<Vec<BudgetRow>, AnalysisError> {
    let ns: Vec<usize> = (1..=max_cycles).collect();
    let encoding = EncodingKind::Probabilistic;
    let mut rows = Vec::new();
    let mut full: Option<(f64, f64)> = None;
    for ablated in std::iter::once(None).chain(ErrorKind::ALL.into_iter().map(Some)) {
        let mut opts = base.clone();
        if let Some(kind) = ablated {
            opts.disabled.push(kind);
        }
        let series = run_cycle_series(
            device,
            |n| ExperimentKind::Lifetime { psi_in, cycles: n },
            &ns,
            |_| shots,
            seed,
            order,
            &opts,
            rule,
        )?;
        let fit = acceptance_fit(&acceptance_curve(&series), encoding)?;
        let t_cycle_us = device.t_cycle_ns as f64 * 1e-3;
        let eps1 = logical_decay_fit(&series, 0, t_cycle_us)?.epsilon;
        let eps2 = logical_decay_fit(&series, 1, t_cycle_us)?.epsilon;
        let rejection = 1.0 - fit.p_s;
        let eps_mean = 0.5 * (eps1 + eps2);
        if ablated.is_none() {
            full = Some((rejection, eps_mean));
        }
        let (full_rej, full_eps) = full.expect("full model is computed first");
        rows.push(BudgetRow {
            ablated,
            p_s: fit.p_s,
            rejection_rate: rejection,
            eps1,
            eps2,
            eps_mean,
            contribution_rejection: if ablated.is_some() { full_rej - rejection } else { 0.0 },
            contribution_eps: if ablated.is_some() { full_eps - eps_mean } else { 0.0 },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::StabKind;

    fn record(x: &[u8], z: &[u8]) -> RunRecord {
        RunRecord {
            shot: 0,
            ancilla_x: x.iter().map(|&b| b == 1).collect(),
            ancilla_z: z.iter().map(|&b| b == 1).collect(),
            data: [false; 4],
            basis: Basis::Z,
        }
    }

    #[test]
    fn syndrome_chain_examples() {
        let r = record(&[0, 0, 0, 0], &[0, 0, 1, 1, 0]);
        let t = syndromes(&r, SigmaVariant::Composed);
        assert_eq!(t.s_x, vec![1, 1, 1, 1]);
        assert_eq!(t.sigma_x, vec![0, 0, 0, 0]);
        assert_eq!(t.s_z, vec![1, 1, -1, 1, -1]);
        assert_eq!(t.sigma_z, vec![0, 0, 1, 1, 1]);
        // First-cycle flip.
        let r = record(&[1, 0], &[0, 0]);
        let t = syndromes(&r, SigmaVariant::Composed);
        assert_eq!(t.s_x[0], -1);
        assert_eq!(t.sigma_x[0], 1);
    }

    #[test]
    fn postselection_matches_per_record_traces() {
        use crate::circuit::{build_experiment, compile_noise, NoiseOptions, StabOrder};
        let dev = DeviceModel::preset("configA").unwrap();
        let kind = ExperimentKind::Lifetime {
            psi_in: ProductState::parse("0000").unwrap(),
            cycles: 3,
        };
        let prog = build_experiment(&kind, &dev, StabOrder::XThenZ).unwrap();
        let compiled = compile_noise(&prog, &dev, &NoiseOptions::default()).unwrap();
        let batch = run_shots(&compiled, 5000, 31).unwrap();
        let accept = postselect(&batch, PostselectRule::AllSyndromesClean);
        for s in 0..batch.shots {
            let tr = syndromes(&batch.record(s), SigmaVariant::Composed);
            let clean =
                tr.s_x.iter().all(|&v| v == 1) && tr.s_z.iter().all(|&v| v == 1);
            assert_eq!(accept.is_accepted(s), clean, "shot {s}");
        }
        // Subspace rule only removes further shots.
        let stricter = postselect(&batch, PostselectRule::CleanAndFinalSubspace);
        assert!(stricter.accepted <= accept.accepted);
        for s in 0..batch.shots {
            if stricter.is_accepted(s) {
                let rec = batch.record(s);
                assert_eq!(rec.data.iter().filter(|&&b| b).count() % 2, 0);
            }
        }
    }

    #[test]
    fn acceptance_fit_round_trips_exact_geometric_series() {
        let points: Vec<AcceptancePoint> = (1..=20)
            .map(|n| AcceptancePoint {
                cycles: n,
                eta: 0.67f64.powi(n as i32) * 0.87 / 2.0,
                err: 0.0,
                accepted: 0,
                shots: 0,
            })
            .collect();
        let fit = acceptance_fit(&points, EncodingKind::Probabilistic).unwrap();
        assert!((fit.p_s - 0.67).abs() < 1e-9, "{}", fit.p_s);
        assert!((fit.p_l - 0.87).abs() < 1e-9, "{}", fit.p_l);
        assert!(fit.r_squared > 1.0 - 1e-12);
        // Constant eta (noiseless Bell): P_S = P_L = 1.
        let flat: Vec<AcceptancePoint> = (1..=10)
            .map(|n| AcceptancePoint { cycles: n, eta: 1.0, err: 0.0, accepted: 0, shots: 0 })
            .collect();
        let fit = acceptance_fit(&flat, EncodingKind::Deterministic).unwrap();
        assert!((fit.p_s - 1.0).abs() < 1e-12);
        assert!((fit.p_l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decay_fit_round_trips_exact_exponential() {
        let points: Vec<(usize, f64, f64)> =
            (1..=20).map(|n| (n, 0.8 * (-0.05 * n as f64).exp(), 1.0)).collect();
        let fit = fit_decay(&points, 2.05).unwrap();
        assert!((fit.a - 0.8).abs() < 1e-9);
        assert!((fit.b - 0.05).abs() < 1e-9);
        assert!((fit.epsilon - 0.024385).abs() < 1e-6);
        assert!((fit.tau_us - 2.05 / 0.05).abs() < 1e-6);
        assert!(!fit.degenerate);
        // Weighted with constant weights equals unweighted.
        let weighted: Vec<(usize, f64, f64)> =
            points.iter().map(|&(n, v, _)| (n, v, 0.37)).collect();
        let fit2 = fit_decay(&weighted, 2.05).unwrap();
        assert!((fit.b - fit2.b).abs() < 1e-12);
    }

    #[test]
    fn decay_fit_edge_cases() {
        // b -> 0: epsilon -> 0, tau unbounded.
        let flat: Vec<(usize, f64, f64)> = (1..=10).map(|n| (n, 0.5, 1.0)).collect();
        let fit = fit_decay(&flat, 2.05).unwrap();
        assert!(fit.epsilon.abs() < 1e-12);
        assert!(fit.tau_us.is_infinite());
        assert!(fit.degenerate);
        // Non-positive values dropped.
        let mut pts: Vec<(usize, f64, f64)> =
            (1..=10).map(|n| (n, 0.9f64.powi(n as i32), 1.0)).collect();
        pts.push((11, -0.2, 1.0));
        let fit = fit_decay(&pts, 2.05).unwrap();
        assert_eq!(fit.dropped_points, 1);
        assert!(!fit.degenerate);
        assert!(fit_decay(&pts[..2], 2.05).is_err());
    }

    #[test]
    fn stabilizer_fidelity_extremes() {
        let perfect: Vec<(f64, f64)> = (0..16)
            .map(|i| if i % 2 == 0 { (1.0, 1.0) } else { (-1.0, -1.0) })
            .collect();
        assert!((stabilizer_fidelity(&perfect) - 1.0).abs() < 1e-12);
        let uninformative: Vec<(f64, f64)> =
            (0..16).map(|i| (0.0, if i % 2 == 0 { 1.0 } else { -1.0 })).collect();
        assert!((stabilizer_fidelity(&uninformative) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noiseless_expectations_and_bell_histogram() {
        use crate::circuit::{build_experiment, StabOrder};
        let dev = DeviceModel::preset("configA").unwrap();
        // |0000>: accepted shots give <Z_L1> = <Z_L2> = 1.
        let prog = build_experiment(
            &ExperimentKind::Lifetime { psi_in: ProductState::parse("0000").unwrap(), cycles: 2 },
            &dev,
            StabOrder::XThenZ,
        )
        .unwrap();
        let batch = run_shots(&prog, 4000, 5).unwrap();
        let accept = postselect(&batch, PostselectRule::CleanAndFinalSubspace);
        assert!((accept.fraction() - 0.5).abs() < 0.05);
        for q in 0..2 {
            let e = logical_expectation(&batch, &accept, q).unwrap();
            assert_eq!(e.mean, 1.0);
        }
        // Bell: P(00) = P(11) = 0.5, sum exactly 1 over accepted shots.
        let bell = build_experiment(&ExperimentKind::BellLifetime { cycles: 1 }, &dev, StabOrder::XThenZ)
            .unwrap();
        let batch = run_shots(&bell, 4000, 6).unwrap();
        let accept = postselect(&batch, PostselectRule::CleanAndFinalSubspace);
        assert_eq!(accept.accepted, batch.shots);
        let probs = bell_probs(&batch, &accept).unwrap();
        assert!((probs.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((probs.p00_plus_p11 - 1.0).abs() < 1e-12);
        assert!((probs.p[0] - 0.5).abs() < 3.0 * probs.err[0] + 0.01);
        assert_eq!(probs.labels, ["00", "01", "10", "11"]);
        // <X_L1 X_L2>-type correlation: both logical bits agree every shot.
        let e1 = logical_expectation(&batch, &accept, 0).unwrap();
        let e2 = logical_expectation(&batch, &accept, 1).unwrap();
        assert!(e1.mean.abs() < 0.1);
        assert!(e2.mean.abs() < 0.1);
    }

    #[test]
    fn detector_fractions_noiseless_patterns() {
        use crate::circuit::{build_experiment, StabOrder};
        let dev = DeviceModel::preset("configA").unwrap();
        let prog = build_experiment(
            &ExperimentKind::Lifetime { psi_in: ProductState::parse("0000").unwrap(), cycles: 4 },
            &dev,
            StabOrder::XThenZ,
        )
        .unwrap();
        let batch = run_shots(&prog, 20_000, 9).unwrap();
        let (sx, sz) = detection_fractions(&batch, SigmaVariant::Composed);
        assert!((sx[0] - 0.5).abs() < 0.02, "sigma_x(1) = {}", sx[0]);
        for n in 1..4 {
            assert!(sx[n].abs() < 1e-12, "sigma_x({}) = {}", n + 1, sx[n]);
        }
        for v in &sz {
            assert!(v.abs() < 1e-12);
        }
    }
}
