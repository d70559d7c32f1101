//! Monte Carlo sample paths of the walks driven by μ_α, its reflection and
//! the semi-diagonal measure μ̃, plus the stopping time τ and the
//! single-increment swap used to couple a path with its φ-translate.
//!
//! Randomness comes from ChaCha streams: path `i` of a batch seeded with
//! `seed` reads stream `i` of the generator keyed by `seed`, so results do
//! not depend on how paths are scheduled across threads.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constructions::{AlphaSampler, AlphaSpec, CouplingKind, CouplingSpec};
use crate::groups::{Configuration, GroupElement, GroupError, LampElement, SemiDiagElement};
use crate::measures::SparseMeasure;

/// Largest index `n` whose κ_n draw will be materialized in full.
pub const MAX_MATERIALIZED_INDEX: u64 = 1 << 22;
/// Cap on the total number of lit positions stored across a path's states.
pub const MAX_PATH_STORAGE: usize = 50_000_000;

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("increment index n = {n} exceeds the materialization cap {cap}")]
    IncrementTooLarge { n: u64, cap: u64 },
    #[error("path storage exceeds {0} lit positions")]
    PathTooLarge(usize),
    #[error("stopping time not reached within horizon {horizon}")]
    TauNotFound { horizon: u64 },
    #[error("operation requires {expected}")]
    WrongModel { expected: &'static str },
    #[error(transparent)]
    Group(#[from] GroupError),
}

impl WalkError {
    /// Whether a size cap, rather than bad input, stopped the walk.
    pub fn is_budget(&self) -> bool {
        matches!(
            self,
            WalkError::IncrementTooLarge { .. } | WalkError::PathTooLarge(_)
        )
    }
}

/// Generator for path `stream` of a batch keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform element of `K_n`: fair bits on `[0..n−1]`, bit `n` forced.
pub fn sample_kn<R: RngCore + ?Sized>(n: u64, rng: &mut R) -> Result<Configuration, WalkError> {
    if n > MAX_MATERIALIZED_INDEX {
        return Err(WalkError::IncrementTooLarge {
            n,
            cap: MAX_MATERIALIZED_INDEX,
        });
    }
    let mut lit = Vec::with_capacity(n as usize / 2 + 1);
    push_fair_bits(0, n as i64 - 1, rng, &mut lit);
    lit.push(n as i64);
    Ok(Configuration::from_sorted_unchecked(lit))
}

/// Appends each position of `[lo..hi]` independently with probability ½.
fn push_fair_bits<R: RngCore + ?Sized>(lo: i64, hi: i64, rng: &mut R, out: &mut Vec<i64>) {
    let mut z = lo;
    while z <= hi {
        let mut word = rng.next_u64();
        let take = ((hi - z + 1) as u64).min(64);
        for k in 0..take {
            if word & 1 == 1 {
                out.push(z + k as i64);
            }
            word >>= 1;
        }
        z += take as i64;
    }
}

/// The lit positions of a uniform `K_n` element that fall in `[lo..hi]`,
/// drawing only the bits inside the window.
pub fn sample_kn_window<R: RngCore + ?Sized>(
    n: u64,
    lo: i64,
    hi: i64,
    rng: &mut R,
    out: &mut Vec<i64>,
) {
    let n = i64::try_from(n).unwrap_or(i64::MAX);
    push_fair_bits(lo.max(0), hi.min(n - 1), rng, out);
    if lo <= n && n <= hi {
        out.push(n);
    }
}

/// Semi-diagonal model: step distribution μ̃ for the given α and couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiDiagModel {
    pub alpha: AlphaSpec,
    pub coupling: CouplingSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Projection {
    Pi,
    PiPrime,
    PiBar,
}

impl Projection {
    pub fn apply(&self, g: &SemiDiagElement) -> LampElement {
        match self {
            Projection::Pi => crate::groups::hom_pi(g),
            Projection::PiPrime => crate::groups::hom_pi_prime(g),
            Projection::PiBar => crate::groups::hom_pibar(g),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WalkModel {
    /// (𝓛, μ_α).
    Base(AlphaSpec),
    /// (𝓛, μ̌_α).
    Reflected(AlphaSpec),
    /// (𝓛̃₀, μ̃).
    SemiDiag(SemiDiagModel),
    /// Image of a semi-diagonal walk in 𝓛.
    Projected(SemiDiagModel, Projection),
}

impl WalkModel {
    pub fn alpha(&self) -> &AlphaSpec {
        match self {
            WalkModel::Base(a) | WalkModel::Reflected(a) => a,
            WalkModel::SemiDiag(m) | WalkModel::Projected(m, _) => &m.alpha,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WalkModel::Base(_) => "base",
            WalkModel::Reflected(_) => "reflected",
            WalkModel::SemiDiag(_) => "semidiag",
            WalkModel::Projected(_, Projection::Pi) => "pi",
            WalkModel::Projected(_, Projection::PiPrime) => "piprime",
            WalkModel::Projected(_, Projection::PiBar) => "pibar",
        }
    }
}

/// A group element of whichever walk produced it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WalkElement {
    Lamp(LampElement),
    SemiDiag(SemiDiagElement),
}

impl WalkElement {
    pub fn pos(&self) -> i64 {
        match self {
            WalkElement::Lamp(g) => g.pos,
            WalkElement::SemiDiag(g) => g.pos,
        }
    }

    pub fn as_lamp(&self) -> Option<&LampElement> {
        match self {
            WalkElement::Lamp(g) => Some(g),
            WalkElement::SemiDiag(_) => None,
        }
    }

    fn try_mul(&self, other: &Self) -> Result<Self, WalkError> {
        match (self, other) {
            (WalkElement::Lamp(a), WalkElement::Lamp(b)) => Ok(WalkElement::Lamp(a.try_mul(b)?)),
            (WalkElement::SemiDiag(a), WalkElement::SemiDiag(b)) => {
                Ok(WalkElement::SemiDiag(a.try_mul(b)?))
            }
            _ => Err(WalkError::WrongModel {
                expected: "increments of a single group",
            }),
        }
    }

    fn lit_count(&self) -> usize {
        match self {
            WalkElement::Lamp(g) => g.lamps.len(),
            WalkElement::SemiDiag(g) => g.lamps_a.len() + g.lamps_b.len(),
        }
    }
}

impl fmt::Display for WalkElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WalkElement::Lamp(g) => g.fmt(f),
            WalkElement::SemiDiag(g) => g.fmt(f),
        }
    }
}

/// One step: the sampled index `n_t` and the increment `h_t` in the group.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub index: u64,
    pub step: WalkElement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub seed: u64,
    pub horizon: u64,
    /// `increments[t − 1]` is `h_t`.
    pub increments: Vec<Increment>,
    /// `states[t]` is `g_t`, with `states[0]` the identity.
    pub states: Vec<WalkElement>,
}

/// Draws from a fixed prescribed-image measure by inverse CDF.
#[derive(Debug, Clone)]
struct DiscreteSampler {
    atoms: Vec<Configuration>,
    cdf: Vec<f64>,
}

impl DiscreteSampler {
    fn new(rho: &SparseMeasure<Configuration>) -> Self {
        let mut acc = 0.0;
        let mut atoms = Vec::with_capacity(rho.len());
        let mut cdf = Vec::with_capacity(rho.len());
        for (c, m) in rho.iter() {
            acc += m;
            atoms.push(c.clone());
            cdf.push(acc);
        }
        Self { atoms, cdf }
    }

    fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> &Configuration {
        let u = rng.gen::<f64>() * self.cdf.last().copied().unwrap_or(1.0);
        let i = self
            .cdf
            .partition_point(|c| *c <= u)
            .min(self.atoms.len() - 1);
        &self.atoms[i]
    }
}

/// Precomputed sampler for a model's increments.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    model: WalkModel,
    alpha: AlphaSampler,
    images: Vec<(u32, DiscreteSampler)>,
}

impl IncrementSampler {
    pub fn new(model: &WalkModel) -> Self {
        let images = match model {
            WalkModel::SemiDiag(m) | WalkModel::Projected(m, _) => m
                .coupling
                .overrides()
                .iter()
                .filter_map(|(n, k)| match k {
                    CouplingKind::PrescribedImage(rho) => Some((*n, DiscreteSampler::new(rho))),
                    _ => None,
                })
                .collect(),
            _ => Vec::new(),
        };
        Self {
            model: model.clone(),
            alpha: AlphaSampler::new(model.alpha()),
            images,
        }
    }

    pub fn model(&self) -> &WalkModel {
        &self.model
    }

    pub fn sample_index<R: RngCore + ?Sized>(&self, rng: &mut R) -> u64 {
        self.alpha.sample(rng)
    }

    fn image_sampler(&self, n: u64) -> &DiscreteSampler {
        &self
            .images
            .iter()
            .find(|(m, _)| u64::from(*m) == n)
            .expect("prescribed image registered")
            .1
    }

    /// A pair drawn from κ̃_n.
    fn sample_pair<R: RngCore + ?Sized>(
        &self,
        coupling: &CouplingSpec,
        n: u64,
        rng: &mut R,
    ) -> Result<(Configuration, Configuration), WalkError> {
        let kind = match u32::try_from(n) {
            Ok(k) => coupling.kind_at(k),
            Err(_) => coupling.kind_at(u32::MAX),
        };
        Ok(match kind {
            CouplingKind::Product => (sample_kn(n, rng)?, sample_kn(n, rng)?),
            CouplingKind::Diagonal => {
                let a = sample_kn(n, rng)?;
                (a.clone(), a)
            }
            CouplingKind::Transposition => {
                let e1 = Configuration::unit(1);
                let e01 = Configuration::from_positions([0, 1]);
                if rng.gen::<bool>() {
                    (e1, e01)
                } else {
                    (e01, e1)
                }
            }
            CouplingKind::PrescribedImage(_) => {
                // (φ₀ + ε_n, φ₀ + φ̄ + ε_n) with φ₀ uniform on Φ₀^{n−1}
                let left = sample_kn(n, rng)?;
                let bar = self.image_sampler(n).sample(rng);
                let right = left.add(bar);
                (left, right)
            }
        })
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<Increment, WalkError> {
        let index = self.alpha.sample(rng);
        let step = match &self.model {
            WalkModel::Base(_) => WalkElement::Lamp(LampElement::new(-1, sample_kn(index, rng)?)),
            WalkModel::Reflected(_) => {
                let phi = sample_kn(index, rng)?;
                WalkElement::Lamp(LampElement::new(-1, phi).try_inv()?)
            }
            WalkModel::SemiDiag(m) => {
                let (a, b) = self.sample_pair(&m.coupling, index, rng)?;
                WalkElement::SemiDiag(SemiDiagElement::new(-1, a, b))
            }
            WalkModel::Projected(m, hom) => {
                let (a, b) = self.sample_pair(&m.coupling, index, rng)?;
                WalkElement::Lamp(hom.apply(&SemiDiagElement::new(-1, a, b)))
            }
        };
        Ok(Increment { index, step })
    }
}

/// One increment drawn from the model's step distribution.
pub fn sample_increment<R: RngCore + ?Sized>(
    model: &WalkModel,
    rng: &mut R,
) -> Result<Increment, WalkError> {
    IncrementSampler::new(model).sample(rng)
}

fn identity_of(model: &WalkModel) -> WalkElement {
    match model {
        WalkModel::SemiDiag(_) => WalkElement::SemiDiag(SemiDiagElement::identity()),
        _ => WalkElement::Lamp(LampElement::identity()),
    }
}

/// `g_t = g_{t−1} h_t` from the increments.
fn states_from(
    identity: WalkElement,
    increments: &[Increment],
) -> Result<Vec<WalkElement>, WalkError> {
    let mut states = Vec::with_capacity(increments.len() + 1);
    states.push(identity);
    let mut stored = 0usize;
    for inc in increments {
        let next = states.last().expect("non-empty").try_mul(&inc.step)?;
        stored += next.lit_count();
        if stored > MAX_PATH_STORAGE {
            return Err(WalkError::PathTooLarge(MAX_PATH_STORAGE));
        }
        states.push(next);
    }
    Ok(states)
}

/// Sample path of length `horizon`, a deterministic function of the
/// arguments.
pub fn run_path(model: &WalkModel, horizon: u64, seed: u64) -> Result<PathSample, WalkError> {
    run_path_stream(&IncrementSampler::new(model), horizon, seed, 0)
}

pub fn run_path_stream(
    sampler: &IncrementSampler,
    horizon: u64,
    seed: u64,
    stream: u64,
) -> Result<PathSample, WalkError> {
    let mut rng = stream_rng(seed, stream);
    let increments = (0..horizon)
        .map(|_| sampler.sample(&mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let states = states_from(identity_of(sampler.model()), &increments)?;
    Ok(PathSample {
        seed,
        horizon,
        increments,
        states,
    })
}

/// `τ = min{t > R : range_t − t > R}` over a 1-indexed range sequence.
pub fn stopping_tau(range_seq: &[u64], phi_range: u64) -> Option<u64> {
    range_seq
        .iter()
        .enumerate()
        .map(|(i, r)| (i as u64 + 1, *r))
        .find(|&(t, r)| t > phi_range && r > t && r - t > phi_range)
        .map(|(t, _)| t)
}

fn base_increment(inc: &Increment) -> Result<&LampElement, WalkError> {
    match &inc.step {
        WalkElement::Lamp(h) if h.pos == -1 => Ok(h),
        _ => Err(WalkError::WrongModel {
            expected: "a base-walk path",
        }),
    }
}

/// Replaces `φ_τ` by `φ_τ + T^{τ−1}φ`, leaving every other increment alone,
/// and recomputes the states from scratch. For φ = θ the map is the
/// identity and τ is taken to be 1.
pub fn swap_transform(
    path: &PathSample,
    phi: &Configuration,
) -> Result<(PathSample, u64), WalkError> {
    let lamps = path
        .increments
        .iter()
        .map(base_increment)
        .collect::<Result<Vec<_>, _>>()?;
    let tau = if phi.is_empty() {
        1
    } else {
        let ranges: Vec<u64> = lamps.iter().map(|h| h.lamps.range()).collect();
        stopping_tau(&ranges, phi.range()).ok_or(WalkError::TauNotFound {
            horizon: path.horizon,
        })?
    };
    let mut increments = path.increments.clone();
    if let Some(inc) = increments.get_mut(tau as usize - 1) {
        let h = base_increment(inc)?;
        let shifted = phi.try_shift(tau as i64 - 1)?;
        inc.step = WalkElement::Lamp(LampElement::new(-1, h.lamps.add(&shifted)));
    }
    let states = states_from(WalkElement::Lamp(LampElement::identity()), &increments)?;
    Ok((
        PathSample {
            seed: path.seed,
            horizon: path.horizon,
            increments,
            states,
        },
        tau,
    ))
}

/// Draws τ for `|φ| = phi_range` from the ranges alone, or `None` if
/// `τ > horizon`.
///
/// Since `range_t = n_t` for increments from `K_{n_t}`, the event at time
/// `t` has probability `p_t = P{n > t + R}`, non-increasing in `t`. Trials
/// are skipped geometrically under the current bound and accepted by
/// thinning, which gives the exact law of τ without visiting every `t`.
pub fn sample_tau_ranges<R: RngCore + ?Sized>(
    alpha: &AlphaSpec,
    phi_range: u64,
    horizon: u64,
    rng: &mut R,
) -> Option<u64> {
    let mut t = phi_range + 1;
    let mut bound = alpha.tail(t + phi_range);
    while t <= horizon {
        if bound <= 0.0 {
            return None;
        }
        if bound < 1.0 {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let skip = (u.ln() / (-bound).ln_1p()).floor();
            if skip >= (horizon - t + 1) as f64 {
                return None;
            }
            t += skip as u64;
        }
        let p = alpha.tail(t + phi_range);
        if rng.gen::<f64>() * bound < p {
            return Some(t);
        }
        bound = p;
        t += 1;
    }
    None
}

/// Same law as [`sample_tau_ranges`], drawing every `n_t` in turn.
pub fn sample_tau_stepwise<R: RngCore + ?Sized>(
    sampler: &AlphaSampler,
    phi_range: u64,
    horizon: u64,
    rng: &mut R,
) -> Option<u64> {
    (1..=horizon).find(|&t| {
        let n = sampler.sample(rng);
        t > phi_range && n > t && n - t > phi_range
    })
}

/// Per-step view used by window diagnostics: which positions of the
/// increment's lamp configuration fall inside a window, relative to the
/// walker.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    inner: IncrementSampler,
    direction: i64,
}

impl WindowSampler {
    /// Supports lamplighter-valued models only.
    pub fn new(model: &WalkModel) -> Result<Self, WalkError> {
        let direction = match model {
            WalkModel::Base(_) | WalkModel::Projected(..) => -1,
            WalkModel::Reflected(_) => 1,
            WalkModel::SemiDiag(_) => {
                return Err(WalkError::WrongModel {
                    expected: "a walk on the lamplighter group",
                })
            }
        };
        Ok(Self {
            inner: IncrementSampler::new(model),
            direction,
        })
    }

    /// Walker displacement per step (−1 or +1).
    pub fn direction(&self) -> i64 {
        self.direction
    }

    /// Lit positions, relative to the walker, of the next increment's lamp
    /// part restricted to `[lo..hi]`.
    pub fn sample_restricted<R: RngCore + ?Sized>(
        &self,
        lo: i64,
        hi: i64,
        rng: &mut R,
        out: &mut Vec<i64>,
    ) {
        out.clear();
        let n = self.inner.sample_index(rng);
        match self.inner.model() {
            WalkModel::Base(_) | WalkModel::Projected(_, Projection::Pi | Projection::PiPrime) => {
                sample_kn_window(n, lo, hi, rng, out)
            }
            // (n, φ)⁻¹ with n = −1 is (1, Tφ)
            WalkModel::Reflected(_) => {
                sample_kn_window(n, lo - 1, hi - 1, rng, out);
                out.iter_mut().for_each(|z| *z += 1);
            }
            WalkModel::Projected(m, Projection::PiBar) => {
                let kind = m.coupling.kind_at(u32::try_from(n).unwrap_or(u32::MAX));
                match kind {
                    // ω of independent draws: fair bits on [0..n−1]
                    CouplingKind::Product => {
                        let top = i64::try_from(n).unwrap_or(i64::MAX) - 1;
                        push_fair_bits(lo.max(0), hi.min(top), rng, out)
                    }
                    CouplingKind::Diagonal => {}
                    CouplingKind::Transposition => {
                        if lo <= 0 && 0 <= hi {
                            out.push(0)
                        }
                    }
                    CouplingKind::PrescribedImage(_) => {
                        let bar = self.inner.image_sampler(n).sample(rng);
                        out.extend(bar.positions().iter().filter(|z| lo <= **z && **z <= hi));
                    }
                }
            }
            WalkModel::SemiDiag(_) => unreachable!("rejected in new"),
        }
    }
}

/// Writes `t,pos,lamps` rows for a lamplighter path (both lamp columns for a
/// semi-diagonal one).
pub fn write_path_csv<W: std::io::Write>(path: &PathSample, mut w: W) -> std::io::Result<()> {
    let semi = matches!(path.states.first(), Some(WalkElement::SemiDiag(_)));
    if semi {
        w.write_all(b"t,pos,lamps,lamps_b\n")?;
    } else {
        w.write_all(b"t,pos,lamps\n")?;
    }
    for (t, g) in path.states.iter().enumerate() {
        match g {
            WalkElement::Lamp(g) => writeln!(w, "{t},{},\"{}\"", g.pos, g.lamps)?,
            WalkElement::SemiDiag(g) => {
                writeln!(w, "{t},{},\"{}\",\"{}\"", g.pos, g.lamps_a, g.lamps_b)?
            }
        }
    }
    w.flush()
}
