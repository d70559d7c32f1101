//! Numerical experiments: entropy rates, asymptotic invariance against the
//! coupling bound, survival of the stopping time τ, and stabilization of
//! lamp configurations in a window. The two composite reports bundle these
//! for the one-sided Liouville example and for the semi-diagonal measure.
//!
//! Every Monte Carlo quantity is a deterministic function of its seed:
//! path `i` reads its own generator stream, and per-path results are
//! collected in path order before any reduction.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::constructions::{
    alpha_moment, lambda_power, mu_alpha, mu_bar, mu_tilde, truncated_mu_entropy, AlphaMoment,
    AlphaSpec, ConstructionError, CouplingSpec, DefaultCoupling,
};
use crate::groups::{Configuration, GroupElement};
use crate::measures::{
    entropy, for_each_power, push_pi, push_pi_prime, push_pibar, translate, tv, MeasureError,
    SparseMeasure, TotalVariation,
};
use crate::walks::{
    sample_tau_ranges, stream_rng, Projection, SemiDiagModel, WalkError, WalkModel, WindowSampler,
};

/// Two-sided 95% normal quantile.
pub const WILSON_Z95: f64 = 1.959963984540054;
/// Slack allowed in the subadditivity check `H(μ^{*(s+t)}) ≤ H(μ^{*s}) + H(μ^{*t})`.
pub const SUBADDITIVITY_TOL: f64 = 1e-9;
/// Widest window the stabilization experiment tracks.
pub const MAX_WINDOW: usize = 128;

pub const DISCLAIMER: &str = "Finite-sample numerical evidence consistent with the stated \
property. Triviality or non-triviality of a boundary cannot be certified by a finite computation.";

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Construction(#[from] ConstructionError),
    #[error(transparent)]
    Walk(#[from] WalkError),
}

impl DiagnosticsError {
    pub fn is_budget(&self) -> bool {
        match self {
            DiagnosticsError::Measure(MeasureError::BudgetExceeded { .. }) => true,
            DiagnosticsError::Construction(e) => e.is_budget(),
            DiagnosticsError::Walk(e) => e.is_budget(),
            _ => false,
        }
    }
}

/// A binomial proportion with its Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn wilson(successes: u64, trials: u64) -> Proportion {
    if trials == 0 {
        return Proportion {
            successes,
            trials,
            estimate: f64::NAN,
            ci_low: 0.0,
            ci_high: 1.0,
        };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z95 * WILSON_Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Proportion {
        successes,
        trials,
        estimate: p,
        // the bounds are exactly 0 and 1 at the extremes; avoid rounding residue
        ci_low: if successes == 0 {
            0.0
        } else {
            (center - half).max(0.0)
        },
        ci_high: if successes == trials {
            1.0
        } else {
            (center + half).min(1.0)
        },
    }
}

fn par_paths<T, F>(paths: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..paths).into_par_iter().map(f).collect()
}

fn csv_err(e: std::io::Error) -> MeasureError {
    MeasureError::Io(e)
}

// ---------------------------------------------------------------------------
// entropy rate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub t: u32,
    pub entropy: f64,
    pub rate: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRateReport {
    pub rows: Vec<EntropyRow>,
    pub subadditive: bool,
    /// Set when the support budget stopped the computation early.
    pub budget_note: Option<String>,
}

impl EntropyRateReport {
    fn from_rows(rows: Vec<EntropyRow>, budget_note: Option<String>) -> Self {
        let h = |t: u32| rows.iter().find(|r| r.t == t).map(|r| r.entropy);
        let subadditive = rows.iter().all(|a| {
            rows.iter().all(|b| match h(a.t + b.t) {
                Some(hs) => hs <= a.entropy + b.entropy + SUBADDITIVITY_TOL,
                None => true,
            })
        });
        Self {
            rows,
            subadditive,
            budget_note,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), MeasureError> {
        w.write_all(b"t,entropy,rate,support\n").map_err(csv_err)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{}",
                r.t, r.entropy, r.rate, r.support
            )
            .map_err(csv_err)?;
        }
        Ok(())
    }
}

fn entropy_row(t: u32, h: f64, support: usize) -> EntropyRow {
    EntropyRow {
        t,
        entropy: h,
        rate: h / f64::from(t),
        support,
    }
}

/// `H(μ^{*t})` for `t = 1..=t_max` by repeated exact convolution. Stops
/// early, keeping the rows computed so far, if the budget is hit.
pub fn entropy_rate<E: GroupElement>(
    mu: &SparseMeasure<E>,
    t_max: u32,
    budget: usize,
) -> Result<EntropyRateReport, DiagnosticsError> {
    if !mu.is_exact() {
        return Err(MeasureError::Truncated {
            defect: mu.defect(),
        }
        .into());
    }
    let mut rows = Vec::new();
    let outcome = for_each_power(mu, t_max, budget, |t, p| {
        rows.push(entropy_row(t, entropy(p)?, p.len()));
        Ok(())
    });
    let note = match outcome {
        Ok(()) => None,
        Err(MeasureError::BudgetExceeded { limit }) if !rows.is_empty() => Some(format!(
            "stopped after t = {}: support would exceed {limit} atoms",
            rows.len()
        )),
        Err(e) => return Err(e.into()),
    };
    Ok(EntropyRateReport::from_rows(rows, note))
}

/// `H(μ_α^{*t})` through the structured λ_t engine; the walker position is
/// deterministic, so `H(μ_α^{*t}) = H(λ_t)`. Needs a finitely supported α.
pub fn entropy_rate_alpha(
    alpha: &AlphaSpec,
    t_max: u32,
    budget: usize,
) -> Result<EntropyRateReport, DiagnosticsError> {
    if !alpha.is_finite_support() {
        return Err(DiagnosticsError::InvalidParameter(format!(
            "alpha {alpha} has infinite support, so H(mu) is infinite; use a finite alpha"
        )));
    }
    if t_max == 0 {
        return Err(DiagnosticsError::InvalidParameter(
            "t_max must be at least 1".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut note = None;
    for t in 1..=t_max {
        match lambda_power(alpha, None, t, budget) {
            Ok(lt) => rows.push(entropy_row(t, entropy(&lt)?, lt.len())),
            Err(e) if e.is_budget() && !rows.is_empty() => {
                note = Some(format!("stopped after t = {}: {e}", t - 1));
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(EntropyRateReport::from_rows(rows, note))
}

// ---------------------------------------------------------------------------
// stopping-time survival

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauRow {
    pub t0: u64,
    pub survival: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauSurvivalReport {
    pub alpha: String,
    pub phi_range: u64,
    pub paths: u64,
    pub seed: u64,
    pub horizon: u64,
    pub rows: Vec<TauRow>,
    /// Paths on which τ exceeded the horizon.
    pub not_found: u64,
}

impl TauSurvivalReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), MeasureError> {
        w.write_all(b"t0,survival,ci_low,ci_high,count,paths\n")
            .map_err(csv_err)?;
        for r in &self.rows {
            let s = &r.survival;
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{},{}",
                r.t0, s.estimate, s.ci_low, s.ci_high, s.successes, s.trials
            )
            .map_err(csv_err)?;
        }
        Ok(())
    }
}

/// Monte Carlo estimates of `P{τ > t₀}` for `|φ| = phi_range`, from ranges
/// alone.
pub fn tau_survival(
    alpha: &AlphaSpec,
    phi_range: u64,
    t0_list: &[u64],
    paths: u64,
    seed: u64,
) -> Result<TauSurvivalReport, DiagnosticsError> {
    if paths == 0 {
        return Err(DiagnosticsError::InvalidParameter(
            "paths must be positive".into(),
        ));
    }
    let horizon = t0_list.iter().copied().max().unwrap_or(0);
    let taus = par_paths(paths, |i| {
        let mut rng = stream_rng(seed, i);
        sample_tau_ranges(alpha, phi_range, horizon, &mut rng)
    });
    let rows = t0_list
        .iter()
        .map(|&t0| TauRow {
            t0,
            survival: wilson(
                taus.iter().filter(|x| x.is_none_or(|t| t > t0)).count() as u64,
                paths,
            ),
        })
        .collect();
    Ok(TauSurvivalReport {
        alpha: alpha.to_string(),
        phi_range,
        paths,
        seed,
        horizon,
        rows,
        not_found: taus.iter().filter(|x| x.is_none()).count() as u64,
    })
}

// ---------------------------------------------------------------------------
// asymptotic invariance

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceRow {
    pub t: u32,
    /// `‖φλ_t − λ_t‖` on the truncated model, with a bar covering the defect.
    pub tv: TotalVariation,
    pub defect: f64,
    pub survival: Proportion,
    /// `2 P̂{τ > t}` and its interval.
    pub bound: f64,
    pub bound_low: f64,
    pub bound_high: f64,
    /// Slack used by the violation check: defect bar plus three interval
    /// widths of the bound.
    pub margin: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub alpha: String,
    pub truncate: Option<u32>,
    pub phi: String,
    pub paths: u64,
    pub seed: u64,
    pub rows: Vec<InvarianceRow>,
    pub non_increasing: bool,
    pub violations: Vec<u32>,
    pub disclaimer: &'static str,
}

impl InvarianceReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), MeasureError> {
        w.write_all(b"t,tv,tv_uncertainty,defect,bound,bound_low,bound_high,margin,violated\n")
            .map_err(csv_err)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.t,
                r.tv.value,
                r.tv.uncertainty,
                r.defect,
                r.bound,
                r.bound_low,
                r.bound_high,
                r.margin,
                r.violated
            )
            .map_err(csv_err)?;
        }
        Ok(())
    }
}

/// Compares the exact `‖φλ_t − λ_t‖` of the truncated model with a Monte
/// Carlo estimate of the coupling bound `2 P{τ > t}` for the untruncated
/// walk.
pub fn invariance_test(
    alpha: &AlphaSpec,
    truncate: Option<u32>,
    phi: &Configuration,
    t_max: u32,
    paths: u64,
    seed: u64,
    budget: usize,
) -> Result<InvarianceReport, DiagnosticsError> {
    if t_max == 0 {
        return Err(DiagnosticsError::InvalidParameter(
            "t_max must be at least 1".into(),
        ));
    }
    let exact = (1..=t_max)
        .into_par_iter()
        .map(|t| -> Result<(TotalVariation, f64), DiagnosticsError> {
            let lt = lambda_power(alpha, truncate, t, budget)?;
            let moved = translate(phi, &lt)?;
            Ok((tv(&moved, &lt), lt.defect()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let t0: Vec<u64> = (1..=u64::from(t_max)).collect();
    let survival = tau_survival(alpha, phi.range(), &t0, paths, seed)?;
    let rows: Vec<InvarianceRow> = exact
        .into_iter()
        .zip(survival.rows)
        .zip(1..)
        .map(|(((dist, defect), tau), t)| {
            let s = tau.survival;
            let bound_width = 2.0 * (s.ci_high - s.ci_low);
            let margin = dist.uncertainty + 3.0 * bound_width / 2.0;
            InvarianceRow {
                t,
                tv: dist,
                defect,
                survival: s,
                bound: 2.0 * s.estimate,
                bound_low: 2.0 * s.ci_low,
                bound_high: 2.0 * s.ci_high,
                margin,
                violated: dist.value > 2.0 * s.estimate + margin,
            }
        })
        .collect();
    let non_increasing = rows
        .windows(2)
        .all(|w| w[1].tv.value <= w[0].tv.value + 1e-12);
    let violations = rows.iter().filter(|r| r.violated).map(|r| r.t).collect();
    Ok(InvarianceReport {
        alpha: alpha.to_string(),
        truncate,
        phi: phi.to_string(),
        paths,
        seed,
        rows,
        non_increasing,
        violations,
        disclaimer: DISCLAIMER,
    })
}

// ---------------------------------------------------------------------------
// stabilization

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub median: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

impl Quantiles {
    fn of(mut values: Vec<u64>) -> Self {
        values.sort_unstable();
        let at = |q: f64| -> u64 {
            if values.is_empty() {
                return 0;
            }
            let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
            values[rank - 1]
        };
        Self {
            median: at(0.5),
            p90: at(0.9),
            p99: at(0.99),
            max: values.last().copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionStats {
    pub position: i64,
    pub flips_after_cutoff: u64,
    /// Time of the last change, 0 if the lamp never changed.
    pub last_change: Quantiles,
    pub lit_fraction: f64,
    pub entropy: f64,
}

/// Plug-in entropy of the empirical window law with its usual companions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalEntropy {
    pub samples: u64,
    pub distinct: u64,
    pub plug_in: f64,
    /// `(distinct − 1) / (2 · samples)`, the first-order bias of the
    /// plug-in estimator.
    pub miller_madow_bias: f64,
    pub miller_madow: f64,
    pub standard_error: f64,
}

impl EmpiricalEntropy {
    /// From the multiset of outcome counts.
    pub fn from_counts(counts: &[u64]) -> Self {
        let m: u64 = counts.iter().sum();
        let mf = m as f64;
        let (mut h, mut h2) = (0.0, 0.0);
        for &c in counts.iter().filter(|c| **c > 0) {
            let p = c as f64 / mf;
            let l = p.ln();
            h -= p * l;
            h2 += p * l * l;
        }
        let distinct = counts.iter().filter(|c| **c > 0).count() as u64;
        let bias = if m > 0 {
            (distinct.saturating_sub(1)) as f64 / (2.0 * mf)
        } else {
            0.0
        };
        let h = h.max(0.0);
        Self {
            samples: m,
            distinct,
            plug_in: h,
            miller_madow_bias: bias,
            miller_madow: h + bias,
            standard_error: if m > 0 {
                ((h2 - h * h).max(0.0) / mf).sqrt()
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizationReport {
    pub model: &'static str,
    pub alpha: String,
    pub coupling: Option<String>,
    pub window_lo: i64,
    pub window_hi: i64,
    pub horizon: u64,
    pub cutoff: u64,
    pub paths: u64,
    pub seed: u64,
    /// Whether the model is known to stabilize on every window.
    pub guaranteed: bool,
    pub warning: Option<String>,
    pub flips_after_cutoff: u64,
    pub positions: Vec<PositionStats>,
    pub limit_entropy: EmpiricalEntropy,
    /// Empirical law of the window configuration at the horizon, as
    /// `(bit pattern relative to window_lo, count)` sorted by pattern.
    #[serde(skip)]
    pub limit_law: Vec<(u128, u64)>,
    pub disclaimer: &'static str,
}

impl StabilizationReport {
    pub fn write_positions_csv<W: Write>(&self, mut w: W) -> Result<(), MeasureError> {
        w.write_all(
            b"position,flips_after_cutoff,last_change_median,last_change_p90,last_change_p99,last_change_max,lit_fraction,entropy\n",
        )
        .map_err(csv_err)?;
        for p in &self.positions {
            let q = &p.last_change;
            writeln!(
                w,
                "{},{},{},{},{},{},{:.16e},{:.16e}",
                p.position,
                p.flips_after_cutoff,
                q.median,
                q.p90,
                q.p99,
                q.max,
                p.lit_fraction,
                p.entropy
            )
            .map_err(csv_err)?;
        }
        Ok(())
    }

    pub fn write_limit_csv<W: Write>(&self, mut w: W) -> Result<(), MeasureError> {
        w.write_all(b"configuration,count\n").map_err(csv_err)?;
        for (bits, count) in &self.limit_law {
            let config = window_config(*bits, self.window_lo);
            writeln!(w, "\"{config}\",{count}").map_err(csv_err)?;
        }
        Ok(())
    }
}

/// The configuration whose lamp `window_lo + k` is bit `k` of `bits`.
pub fn window_config(bits: u128, window_lo: i64) -> Configuration {
    Configuration::from_positions(
        (0..128)
            .filter(|k| bits >> k & 1 == 1)
            .map(|k| window_lo + k),
    )
}

struct WindowOutcome {
    bits: u128,
    last_change: Vec<u64>,
    late_flips: Vec<u64>,
}

fn stabilization_guarantee(model: &WalkModel) -> Result<(), String> {
    match model {
        WalkModel::Base(alpha) if alpha.is_finite_support() => Ok(()),
        WalkModel::Base(alpha) => Err(format!(
            "base walk with infinitely supported alpha {alpha}: window lamps need not stabilize"
        )),
        WalkModel::Reflected(_) => Ok(()),
        WalkModel::Projected(m, Projection::PiBar) => match m.coupling.non_diagonal_indices() {
            Some(_) => Ok(()),
            None => Err(format!(
                "coupling {} changes the difference configuration at infinitely many indices",
                m.coupling
            )),
        },
        WalkModel::Projected(m, _) if m.alpha.is_finite_support() => Ok(()),
        other => Err(format!(
            "no stabilization guarantee for the {} walk with alpha {}",
            other.name(),
            other.alpha()
        )),
    }
}

/// Runs `paths` windowed walks and records how the lamps in
/// `[window.0..window.1]` settle.
pub fn stabilization(
    model: &WalkModel,
    window: (i64, i64),
    horizon: u64,
    paths: u64,
    cutoff: u64,
    seed: u64,
) -> Result<StabilizationReport, DiagnosticsError> {
    let (lo, hi) = window;
    if hi < lo || (hi - lo) as usize >= MAX_WINDOW {
        return Err(DiagnosticsError::InvalidParameter(format!(
            "window [{lo}..{hi}] must be non-empty and at most {MAX_WINDOW} lamps wide"
        )));
    }
    if paths == 0 {
        return Err(DiagnosticsError::InvalidParameter(
            "paths must be positive".into(),
        ));
    }
    let sampler = WindowSampler::new(model)?;
    let width = (hi - lo + 1) as usize;
    let dir = sampler.direction();
    let outcomes = par_paths(paths, |i| {
        let mut rng = stream_rng(seed, i);
        let mut out = WindowOutcome {
            bits: 0,
            last_change: vec![0; width],
            late_flips: vec![0; width],
        };
        let mut buf = Vec::new();
        for t in 1..=horizon {
            let p = dir * (t as i64 - 1);
            sampler.sample_restricted(lo - p, hi - p, &mut rng, &mut buf);
            for rel in &buf {
                let k = (rel + p - lo) as usize;
                out.bits ^= 1u128 << k;
                out.last_change[k] = t;
                if t > cutoff {
                    out.late_flips[k] += 1;
                }
            }
        }
        out
    });

    let positions = (0..width)
        .map(|k| {
            let lit = outcomes.iter().filter(|o| o.bits >> k & 1 == 1).count() as f64;
            let q = lit / paths as f64;
            let entropy = [q, 1.0 - q]
                .iter()
                .filter(|x| **x > 0.0)
                .map(|x| -x * x.ln())
                .sum();
            PositionStats {
                position: lo + k as i64,
                flips_after_cutoff: outcomes.iter().map(|o| o.late_flips[k]).sum(),
                last_change: Quantiles::of(outcomes.iter().map(|o| o.last_change[k]).collect()),
                lit_fraction: q,
                entropy,
            }
        })
        .collect::<Vec<_>>();

    let mut finals: Vec<u128> = outcomes.iter().map(|o| o.bits).collect();
    finals.sort_unstable();
    let mut law: Vec<(u128, u64)> = Vec::new();
    for b in finals {
        match law.last_mut() {
            Some((last, c)) if *last == b => *c += 1,
            _ => law.push((b, 1)),
        }
    }
    let counts: Vec<u64> = law.iter().map(|(_, c)| *c).collect();
    let guarantee = stabilization_guarantee(model);
    let coupling = match model {
        WalkModel::SemiDiag(m) | WalkModel::Projected(m, _) => Some(m.coupling.to_string()),
        _ => None,
    };
    Ok(StabilizationReport {
        model: model.name(),
        alpha: model.alpha().to_string(),
        coupling,
        window_lo: lo,
        window_hi: hi,
        horizon,
        cutoff,
        paths,
        seed,
        guaranteed: guarantee.is_ok(),
        warning: guarantee.err(),
        flips_after_cutoff: positions.iter().map(|p| p.flips_after_cutoff).sum(),
        positions,
        limit_entropy: EmpiricalEntropy::from_counts(&counts),
        limit_law: law,
        disclaimer: DISCLAIMER,
    })
}

// ---------------------------------------------------------------------------
// composite reports

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportParams {
    pub seed: u64,
    /// Truncation level for exact sub-computations.
    pub truncate: u32,
    pub tau_range: u64,
    pub tau_t0: Vec<u64>,
    pub tau_paths: u64,
    pub window: (i64, i64),
    pub cutoff: u64,
    pub horizon: u64,
    pub paths: u64,
    /// Truncation levels for the entropy-divergence table.
    pub entropy_levels: Vec<u32>,
}

impl ReportParams {
    pub fn one_sided_defaults(seed: u64) -> Self {
        Self {
            seed,
            truncate: 12,
            tau_range: 1,
            tau_t0: vec![10, 100, 1_000, 10_000],
            tau_paths: 100_000,
            window: (0, 20),
            cutoff: 40,
            horizon: 200,
            paths: 10_000,
            entropy_levels: vec![10, 100, 1_000, 10_000, 100_000, 1_000_000],
        }
    }

    pub fn semidiag_defaults(seed: u64) -> Self {
        Self {
            window: (-9, 0),
            cutoff: 20,
            ..Self::one_sided_defaults(seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyLevel {
    pub truncate: u32,
    /// Entropy carried by the retained part of μ_α.
    pub partial_entropy: f64,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneSidedReport {
    pub alpha: String,
    pub first_moment: AlphaMoment,
    pub params: ReportParams,
    /// Survival of τ for μ_α; decay is consistent with μ_α being Liouville.
    pub liouville_evidence: TauSurvivalReport,
    /// Window stabilization for the reflected walk.
    pub reflected_stabilization: StabilizationReport,
    pub entropy_divergence: Vec<EntropyLevel>,
    pub entropy_increasing: bool,
    pub disclaimer: &'static str,
}

fn require_infinite_moment(alpha: &AlphaSpec) -> Result<AlphaMoment, DiagnosticsError> {
    if alpha.is_finite_support() {
        return Err(DiagnosticsError::Hypothesis(format!(
            "alpha {alpha} has finite support, so mu_alpha is non-Liouville \
             (window lamps stabilize); an infinite first moment is required"
        )));
    }
    match alpha_moment(alpha, None) {
        AlphaMoment::Finite(m) => Err(DiagnosticsError::Hypothesis(format!(
            "alpha {alpha} has finite first moment |alpha| = {m}; an infinite first moment is required"
        ))),
        m => Ok(m),
    }
}

/// Evidence that μ_α is Liouville while its reflection is not.
pub fn theorem2_report(
    alpha: &AlphaSpec,
    params: &ReportParams,
) -> Result<OneSidedReport, DiagnosticsError> {
    require_infinite_moment(alpha)?;
    let first_moment = alpha_moment(alpha, Some(u64::from(params.truncate)));
    let liouville_evidence = tau_survival(
        alpha,
        params.tau_range,
        &params.tau_t0,
        params.tau_paths,
        params.seed,
    )?;
    let reflected_stabilization = stabilization(
        &WalkModel::Reflected(alpha.clone()),
        params.window,
        params.horizon,
        params.paths,
        params.cutoff,
        params.seed,
    )?;
    let entropy_divergence: Vec<EntropyLevel> = params
        .entropy_levels
        .iter()
        .map(|&n| EntropyLevel {
            truncate: n,
            partial_entropy: truncated_mu_entropy(alpha, n),
            defect: alpha.tail(u64::from(n)),
        })
        .collect();
    let entropy_increasing = entropy_divergence
        .windows(2)
        .all(|w| w[1].partial_entropy > w[0].partial_entropy);
    Ok(OneSidedReport {
        alpha: alpha.to_string(),
        first_moment,
        params: params.clone(),
        liouville_evidence,
        reflected_stabilization,
        entropy_divergence,
        entropy_increasing,
        disclaimer: DISCLAIMER,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalCheck {
    pub truncate: u32,
    pub defect: f64,
    pub pi: TotalVariation,
    pub pi_prime: TotalVariation,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifferenceImageCheck {
    /// ‖π̄(μ̃) − μ̄‖ between the pushed-forward and closed-form images.
    pub tv: TotalVariation,
    pub atoms: Vec<(String, f64)>,
    pub defect: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiDiagReport {
    pub alpha: String,
    pub coupling: String,
    pub non_diagonal_indices: Vec<u32>,
    pub params: ReportParams,
    pub marginals: MarginalCheck,
    pub difference_image: DifferenceImageCheck,
    /// Window stabilization for the π̄ image, the non-Liouville witness.
    pub difference_stabilization: StabilizationReport,
    /// Survival of τ for the coordinate walks, which are both μ_α-walks.
    pub marginal_evidence: TauSurvivalReport,
    pub disclaimer: &'static str,
}

/// Tolerance on exact marginal and image identities beyond the defect bars.
pub const EXACT_TV_TOL: f64 = 1e-12;

/// Checks that the coupling only departs from the diagonal at a non-empty
/// finite set of indices in the support of α.
fn require_finite_deviation(
    alpha: &AlphaSpec,
    coupling: &CouplingSpec,
) -> Result<Vec<u32>, DiagnosticsError> {
    let clause = "the set of indices where the coupling is not concentrated on the diagonal \
                  must be non-empty and finite";
    let indices = coupling.non_diagonal_indices().ok_or_else(|| {
        let detail = match coupling.default_kind() {
            DefaultCoupling::Product => "product couplings beyond the overrides make it infinite",
            DefaultCoupling::Diagonal => "it is infinite",
        };
        DiagnosticsError::Hypothesis(format!("{clause}; {detail} for coupling '{coupling}'"))
    })?;
    let in_support: Vec<u32> = indices
        .into_iter()
        .filter(|n| alpha.weight(u64::from(*n)) > 0.0)
        .collect();
    if in_support.is_empty() {
        return Err(DiagnosticsError::Hypothesis(format!(
            "{clause}; it is empty for coupling '{coupling}'"
        )));
    }
    Ok(in_support)
}

/// Evidence that μ̃ is non-Liouville while both coordinate images are
/// Liouville.
pub fn theorem3_report(
    alpha: &AlphaSpec,
    coupling: &CouplingSpec,
    params: &ReportParams,
    budget: usize,
) -> Result<SemiDiagReport, DiagnosticsError> {
    require_infinite_moment(alpha)?;
    let non_diagonal_indices = require_finite_deviation(alpha, coupling)?;
    let n = Some(params.truncate);
    let tilde = mu_tilde(alpha, coupling, n)?;
    if tilde.len() > budget {
        return Err(MeasureError::BudgetExceeded { limit: budget }.into());
    }
    let base = mu_alpha(alpha, n)?;
    let pi = tv(&push_pi(&tilde), &base);
    let pi_prime = tv(&push_pi_prime(&tilde), &base);
    let ok = |d: &TotalVariation| d.value <= EXACT_TV_TOL + d.uncertainty;
    let marginals = MarginalCheck {
        truncate: params.truncate,
        defect: tilde.defect(),
        pi,
        pi_prime,
        passed: ok(&pi) && ok(&pi_prime),
    };
    let closed = mu_bar(alpha, coupling, n)?;
    let pushed = push_pibar(&tilde);
    let image_tv = tv(&pushed, &closed);
    let difference_image = DifferenceImageCheck {
        tv: image_tv,
        atoms: closed.iter().map(|(g, m)| (g.to_string(), m)).collect(),
        defect: closed.defect(),
        passed: ok(&image_tv),
    };
    let model = WalkModel::Projected(
        SemiDiagModel {
            alpha: alpha.clone(),
            coupling: coupling.clone(),
        },
        Projection::PiBar,
    );
    let difference_stabilization = stabilization(
        &model,
        params.window,
        params.horizon,
        params.paths,
        params.cutoff,
        params.seed,
    )?;
    let marginal_evidence = tau_survival(
        alpha,
        params.tau_range,
        &params.tau_t0,
        params.tau_paths,
        params.seed,
    )?;
    Ok(SemiDiagReport {
        alpha: alpha.to_string(),
        coupling: coupling.to_string(),
        non_diagonal_indices,
        params: params.clone(),
        marginals,
        difference_image,
        difference_stabilization,
        marginal_evidence,
        disclaimer: DISCLAIMER,
    })
}

/// Serializes any report as two-space-indented JSON with a trailing newline.
pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}
