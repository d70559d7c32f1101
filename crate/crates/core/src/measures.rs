//! Finitely supported probability measures over canonical group elements.
//!
//! A [`SparseMeasure`] stores its atoms sorted by element, so every
//! traversal (and therefore every floating-point summation) happens in
//! canonical order. Mass deliberately dropped by truncation is carried in
//! `defect` and propagated through every operation.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::groups::{
    embed_pair, hom_pi, hom_pi_prime, hom_pibar, omega, Configuration, GroupElement, GroupError,
    LampElement, PairElement, SemiDiagElement,
};

/// Allowed deviation of `total mass + defect` from 1.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Atoms lighter than this after arithmetic are moved into the defect.
pub const UNDERFLOW_MASS: f64 = 1e-300;
/// Default cap on the number of atoms a convolution may produce.
pub const DEFAULT_BUDGET: usize = 4_000_000;

/// Reads the support budget from `WALK_BUDGET`, falling back to
/// [`DEFAULT_BUDGET`].
pub fn budget_from_env() -> usize {
    std::env::var("WALK_BUDGET")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&b: &usize| b > 0)
        .unwrap_or(DEFAULT_BUDGET)
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("mass {mass} of atom {element} is not a positive finite number")]
    BadMass { element: String, mass: f64 },
    #[error("total mass {total} plus defect {defect} is not 1 within tolerance")]
    NotNormalized { total: f64, defect: f64 },
    #[error("truncated measure (defect {defect}) has no well-defined entropy")]
    Truncated { defect: f64 },
    #[error("support budget exceeded: more than {limit} atoms")]
    BudgetExceeded { limit: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("homomorphism {hom} does not apply to a measure over {kind}")]
    InvalidHom { hom: Hom, kind: &'static str },
    #[error("measures are over different element types ({0} vs {1})")]
    TypeMismatch(&'static str, &'static str),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Compensated summation.
pub(crate) fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Clone, PartialEq)]
pub struct SparseMeasure<E> {
    entries: Vec<(E, f64)>,
    defect: f64,
}

impl<E: fmt::Display> fmt::Debug for SparseMeasure<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SparseMeasure{")?;
        for (i, (e, m)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{e}: {m}")?;
        }
        write!(f, "; defect={}}}", self.defect)
    }
}

impl<E: GroupElement> SparseMeasure<E> {
    /// Builds a measure, merging repeated elements. Fails unless every mass
    /// is positive and `Σ mass + defect = 1` within [`NORMALIZATION_TOL`].
    pub fn from_entries<I>(entries: I, defect: f64) -> Result<Self, MeasureError>
    where
        I: IntoIterator<Item = (E, f64)>,
    {
        if !(defect.is_finite() && defect >= 0.0) {
            return Err(MeasureError::InvalidParameter(format!("defect {defect}")));
        }
        let mut raw: Vec<(E, f64)> = entries.into_iter().collect();
        for (e, m) in &raw {
            if !(m.is_finite() && *m > 0.0) {
                return Err(MeasureError::BadMass {
                    element: e.to_string(),
                    mass: *m,
                });
            }
        }
        raw.sort_by(|a, b| a.0.cmp(&b.0));
        let mut entries: Vec<(E, f64)> = Vec::with_capacity(raw.len());
        for (e, m) in raw {
            match entries.last_mut() {
                Some((last, acc)) if *last == e => *acc += m,
                _ => entries.push((e, m)),
            }
        }
        let out = Self { entries, defect };
        out.check_normalized()?;
        Ok(out)
    }

    /// Caller guarantees the masses are positive and normalized.
    pub(crate) fn from_sorted_unchecked(entries: Vec<(E, f64)>, defect: f64) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries, defect }
    }

    /// Sorts accumulated masses; atoms below [`UNDERFLOW_MASS`] join the
    /// defect.
    pub(crate) fn from_accumulator(acc: HashMap<E, f64>, defect: f64) -> Self {
        let mut dropped = 0.0;
        let mut entries: Vec<(E, f64)> = Vec::with_capacity(acc.len());
        for (e, m) in acc {
            if m >= UNDERFLOW_MASS {
                entries.push((e, m));
            } else if m > 0.0 {
                dropped += m;
            }
        }
        entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        Self {
            entries,
            defect: defect + dropped,
        }
    }

    fn check_normalized(&self) -> Result<(), MeasureError> {
        let total = self.total_mass();
        if (total + self.defect - 1.0).abs() > NORMALIZATION_TOL {
            return Err(MeasureError::NotNormalized {
                total,
                defect: self.defect,
            });
        }
        Ok(())
    }

    pub fn dirac(g: E) -> Self {
        Self {
            entries: vec![(g, 1.0)],
            defect: 0.0,
        }
    }

    pub fn entries(&self) -> &[(E, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (&E, f64)> {
        self.entries.iter().map(|(e, m)| (e, *m))
    }

    pub fn defect(&self) -> f64 {
        self.defect
    }

    pub fn is_exact(&self) -> bool {
        self.defect == 0.0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        stable_sum(self.entries.iter().map(|(_, m)| *m))
    }

    pub fn mass(&self, g: &E) -> f64 {
        self.entries
            .binary_search_by(|(e, _)| e.cmp(g))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn support(&self) -> impl Iterator<Item = &E> {
        self.entries.iter().map(|(e, _)| e)
    }

    /// Image under an arbitrary map. Kept crate-private: public pushforwards
    /// go through the closed [`Hom`] set.
    pub(crate) fn map<F, T>(&self, f: F) -> SparseMeasure<T>
    where
        F: Fn(&E) -> T,
        T: GroupElement,
    {
        let mut acc: HashMap<T, f64> = HashMap::with_capacity(self.entries.len());
        for (e, m) in &self.entries {
            *acc.entry(f(e)).or_insert(0.0) += m;
        }
        SparseMeasure::from_accumulator(acc, self.defect)
    }

    pub(crate) fn try_map<F, T>(&self, f: F) -> Result<SparseMeasure<T>, MeasureError>
    where
        F: Fn(&E) -> Result<T, GroupError>,
        T: GroupElement,
    {
        let mut acc: HashMap<T, f64> = HashMap::with_capacity(self.entries.len());
        for (e, m) in &self.entries {
            *acc.entry(f(e)?).or_insert(0.0) += m;
        }
        Ok(SparseMeasure::from_accumulator(acc, self.defect))
    }

    /// `Σ c_i μ_i` for non-negative weights; masses and defects mix linearly.
    pub(crate) fn mixture<'a, I>(parts: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a SparseMeasure<E>)>,
        E: 'a,
    {
        let mut acc: HashMap<E, f64> = HashMap::new();
        let mut defect = 0.0;
        for (w, mu) in parts {
            defect += w * mu.defect;
            for (e, m) in &mu.entries {
                *acc.entry(e.clone()).or_insert(0.0) += w * m;
            }
        }
        Self::from_accumulator(acc, defect)
    }
}

pub fn dirac<E: GroupElement>(g: E) -> SparseMeasure<E> {
    SparseMeasure::dirac(g)
}

/// `(μ ∗ ν)(g) = Σ_h μ(h) ν(h⁻¹ g)` under the default support budget.
pub fn convolve<E: GroupElement>(
    mu: &SparseMeasure<E>,
    nu: &SparseMeasure<E>,
) -> Result<SparseMeasure<E>, MeasureError> {
    convolve_with_budget(mu, nu, DEFAULT_BUDGET)
}

pub fn convolve_with_budget<E: GroupElement>(
    mu: &SparseMeasure<E>,
    nu: &SparseMeasure<E>,
    budget: usize,
) -> Result<SparseMeasure<E>, MeasureError> {
    let mut acc: HashMap<E, f64> =
        HashMap::with_capacity((mu.len().saturating_mul(nu.len())).min(budget));
    for (h, a) in &mu.entries {
        for (k, b) in &nu.entries {
            let g = h.try_mul(k)?;
            match acc.get_mut(&g) {
                Some(m) => *m += a * b,
                None => {
                    if acc.len() >= budget {
                        return Err(MeasureError::BudgetExceeded { limit: budget });
                    }
                    acc.insert(g, a * b);
                }
            }
        }
    }
    // mass actually lost: 1 - (1 - dμ)(1 - dν)
    let defect = mu.defect + nu.defect - mu.defect * nu.defect;
    Ok(SparseMeasure::from_accumulator(acc, defect))
}

/// μ^{*t} for `t ≥ 1`.
pub fn convolve_power<E: GroupElement>(
    mu: &SparseMeasure<E>,
    t: u32,
    budget: usize,
) -> Result<SparseMeasure<E>, MeasureError> {
    let mut last = None;
    for_each_power(mu, t, budget, |_, p| {
        last = Some(p.clone());
        Ok(())
    })?;
    Ok(last.expect("t >= 1"))
}

/// Calls `visit(k, μ^{*k})` for `k = 1..=t` in order.
pub fn for_each_power<E, F>(
    mu: &SparseMeasure<E>,
    t: u32,
    budget: usize,
    mut visit: F,
) -> Result<(), MeasureError>
where
    E: GroupElement,
    F: FnMut(u32, &SparseMeasure<E>) -> Result<(), MeasureError>,
{
    if t == 0 {
        return Err(MeasureError::InvalidParameter(
            "convolution power must be at least 1".into(),
        ));
    }
    if mu.len() > budget {
        return Err(MeasureError::BudgetExceeded { limit: budget });
    }
    let mut power = mu.clone();
    visit(1, &power)?;
    for k in 2..=t {
        power = convolve_with_budget(&power, mu, budget)?;
        visit(k, &power)?;
    }
    Ok(())
}

/// μ̌(g) = μ(g⁻¹).
pub fn reflect<E: GroupElement>(mu: &SparseMeasure<E>) -> Result<SparseMeasure<E>, MeasureError> {
    mu.try_map(|g| g.try_inv())
}

/// Shannon entropy in nats. Refuses truncated measures.
pub fn entropy<E: GroupElement>(mu: &SparseMeasure<E>) -> Result<f64, MeasureError> {
    if !mu.is_exact() {
        return Err(MeasureError::Truncated { defect: mu.defect });
    }
    Ok(partial_entropy(mu))
}

/// `−Σ m log m` over the retained atoms only, ignoring the defect. Only a
/// lower-bound style diagnostic for truncated measures.
pub fn partial_entropy<E: GroupElement>(mu: &SparseMeasure<E>) -> f64 {
    let s = stable_sum(mu.entries.iter().map(|(_, m)| -m * m.ln()));
    // -0.0 for a Dirac mass
    s.max(0.0)
}

/// Total variation as the ℓ¹ distance, with an error bar covering mass
/// dropped by truncation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TotalVariation {
    pub value: f64,
    pub uncertainty: f64,
}

pub fn tv<E: GroupElement>(mu: &SparseMeasure<E>, nu: &SparseMeasure<E>) -> TotalVariation {
    let (a, b) = (&mu.entries, &nu.entries);
    let mut terms = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let ord = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.0.cmp(&y.0),
            (Some(_), None) => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Greater,
        };
        match ord {
            std::cmp::Ordering::Less => {
                terms.push(a[i].1);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                terms.push(b[j].1);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                terms.push((a[i].1 - b[j].1).abs());
                i += 1;
                j += 1;
            }
        }
    }
    TotalVariation {
        value: stable_sum(terms),
        uncertainty: mu.defect + nu.defect,
    }
}

/// Left translation `gμ`, the image of μ under `h ↦ gh`.
pub fn translate<E: GroupElement>(
    g: &E,
    mu: &SparseMeasure<E>,
) -> Result<SparseMeasure<E>, MeasureError> {
    mu.try_map(|h| g.try_mul(h))
}

/// Cesàro mean `(μ + μ^{*2} + ⋯ + μ^{*t}) / t`.
pub fn cesaro<E: GroupElement>(
    mu: &SparseMeasure<E>,
    t: u32,
    budget: usize,
) -> Result<SparseMeasure<E>, MeasureError> {
    let mut acc: HashMap<E, f64> = HashMap::new();
    let mut defect = 0.0;
    let w = 1.0 / f64::from(t.max(1));
    for_each_power(mu, t, budget, |_, p| {
        defect += w * p.defect;
        for (e, m) in &p.entries {
            match acc.get_mut(e) {
                Some(x) => *x += w * m,
                None => {
                    if acc.len() >= budget {
                        return Err(MeasureError::BudgetExceeded { limit: budget });
                    }
                    acc.insert(e.clone(), w * m);
                }
            }
        }
        Ok(())
    })?;
    Ok(SparseMeasure::from_accumulator(acc, defect))
}

/// `a·δ_e + (1 − a)·μ`.
pub fn lazy<E: GroupElement>(
    mu: &SparseMeasure<E>,
    a: f64,
) -> Result<SparseMeasure<E>, MeasureError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(MeasureError::InvalidParameter(format!(
            "laziness {a} must lie strictly between 0 and 1"
        )));
    }
    let e = SparseMeasure::dirac(E::identity());
    Ok(SparseMeasure::mixture([(a, &e), (1.0 - a, mu)]))
}

/// `(μ ⊗ ν)(a, b) = μ(a) ν(b)`.
pub fn product_measure<A: GroupElement, B: GroupElement>(
    mu: &SparseMeasure<A>,
    nu: &SparseMeasure<B>,
) -> SparseMeasure<PairElement<A, B>> {
    let mut entries = Vec::with_capacity(mu.len() * nu.len());
    for (a, x) in &mu.entries {
        for (b, y) in &nu.entries {
            entries.push((PairElement::new(a.clone(), b.clone()), x * y));
        }
    }
    // lexicographic loops already produce canonical order
    let defect = mu.defect + nu.defect - mu.defect * nu.defect;
    SparseMeasure::from_sorted_unchecked(entries, defect)
}

pub fn marginals<A: GroupElement, B: GroupElement>(
    joint: &SparseMeasure<PairElement<A, B>>,
) -> (SparseMeasure<A>, SparseMeasure<B>) {
    (
        joint.map(|p| p.left.clone()),
        joint.map(|p| p.right.clone()),
    )
}

/// The closed set of homomorphisms a measure can be pushed through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hom {
    Pi,
    PiPrime,
    PiBar,
    Embed,
    Inversion,
    Omega,
}

impl fmt::Display for Hom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hom::Pi => "pi",
            Hom::PiPrime => "pi_prime",
            Hom::PiBar => "pibar",
            Hom::Embed => "embed",
            Hom::Inversion => "inversion",
            Hom::Omega => "omega",
        })
    }
}

pub type ConfigPair = PairElement<Configuration, Configuration>;
pub type LampPair = PairElement<LampElement, LampElement>;

/// A measure over any of the element types the library knows about.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyMeasure {
    Config(SparseMeasure<Configuration>),
    Lamp(SparseMeasure<LampElement>),
    SemiDiag(SparseMeasure<SemiDiagElement>),
    ConfigPair(SparseMeasure<ConfigPair>),
    LampPair(SparseMeasure<LampPair>),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyMeasure::Config($m) => $body,
            AnyMeasure::Lamp($m) => $body,
            AnyMeasure::SemiDiag($m) => $body,
            AnyMeasure::ConfigPair($m) => $body,
            AnyMeasure::LampPair($m) => $body,
        }
    };
}

macro_rules! dispatch_wrap {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyMeasure::Config($m) => AnyMeasure::Config($body),
            AnyMeasure::Lamp($m) => AnyMeasure::Lamp($body),
            AnyMeasure::SemiDiag($m) => AnyMeasure::SemiDiag($body),
            AnyMeasure::ConfigPair($m) => AnyMeasure::ConfigPair($body),
            AnyMeasure::LampPair($m) => AnyMeasure::LampPair($body),
        }
    };
}

impl AnyMeasure {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyMeasure::Config(_) => "configurations",
            AnyMeasure::Lamp(_) => "lamplighter elements",
            AnyMeasure::SemiDiag(_) => "semi-diagonal elements",
            AnyMeasure::ConfigPair(_) => "configuration pairs",
            AnyMeasure::LampPair(_) => "lamplighter pairs",
        }
    }

    pub fn len(&self) -> usize {
        dispatch!(self, m => m.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn defect(&self) -> f64 {
        dispatch!(self, m => m.defect())
    }

    pub fn entropy(&self) -> Result<f64, MeasureError> {
        dispatch!(self, m => entropy(m))
    }

    pub fn convolve_power(&self, t: u32, budget: usize) -> Result<AnyMeasure, MeasureError> {
        Ok(dispatch_wrap!(self, m => convolve_power(m, t, budget)?))
    }

    pub fn reflect(&self) -> Result<AnyMeasure, MeasureError> {
        Ok(dispatch_wrap!(self, m => reflect(m)?))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MeasureError> {
        dispatch!(self, m => write_csv(m, w))
    }

    /// Reads a measure dump, inferring the element type from the first atom.
    pub fn read_csv<R: BufRead>(r: R) -> Result<AnyMeasure, MeasureError> {
        let rows = read_rows(r)?;
        let first = rows
            .rows
            .first()
            .map(|(_, e, _)| e.trim().to_string())
            .unwrap_or_default();
        let kind = if first.starts_with('{') {
            0
        } else if first.starts_with('(') {
            if first.matches('|').count() == 2 {
                2
            } else {
                1
            }
        } else if first.starts_with("[{") {
            3
        } else if first.starts_with("[(") {
            4
        } else {
            return Err(MeasureError::Parse {
                line: rows.rows.first().map(|r| r.0).unwrap_or(1),
                reason: format!("cannot infer element type from {first:?}"),
            });
        };
        Ok(match kind {
            0 => AnyMeasure::Config(rows.build()?),
            1 => AnyMeasure::Lamp(rows.build()?),
            2 => AnyMeasure::SemiDiag(rows.build()?),
            3 => AnyMeasure::ConfigPair(rows.build()?),
            _ => AnyMeasure::LampPair(rows.build()?),
        })
    }
}

/// Image of a measure under one of the enumerated homomorphisms.
pub fn pushforward(hom: Hom, mu: &AnyMeasure) -> Result<AnyMeasure, MeasureError> {
    let invalid = || MeasureError::InvalidHom {
        hom,
        kind: mu.kind(),
    };
    Ok(match (hom, mu) {
        (Hom::Inversion, m) => m.reflect()?,
        (Hom::Pi, AnyMeasure::SemiDiag(m)) => AnyMeasure::Lamp(m.map(hom_pi)),
        (Hom::PiPrime, AnyMeasure::SemiDiag(m)) => AnyMeasure::Lamp(m.map(hom_pi_prime)),
        (Hom::PiBar, AnyMeasure::SemiDiag(m)) => AnyMeasure::Lamp(m.map(hom_pibar)),
        (Hom::Embed, AnyMeasure::SemiDiag(m)) => AnyMeasure::LampPair(m.map(embed_pair)),
        (Hom::Omega, AnyMeasure::ConfigPair(m)) => AnyMeasure::Config(m.map(omega)),
        _ => return Err(invalid()),
    })
}

pub fn push_pi(mu: &SparseMeasure<SemiDiagElement>) -> SparseMeasure<LampElement> {
    mu.map(hom_pi)
}

pub fn push_pi_prime(mu: &SparseMeasure<SemiDiagElement>) -> SparseMeasure<LampElement> {
    mu.map(hom_pi_prime)
}

pub fn push_pibar(mu: &SparseMeasure<SemiDiagElement>) -> SparseMeasure<LampElement> {
    mu.map(hom_pibar)
}

pub fn push_embed(mu: &SparseMeasure<SemiDiagElement>) -> SparseMeasure<LampPair> {
    mu.map(embed_pair)
}

pub fn push_omega(mu: &SparseMeasure<ConfigPair>) -> SparseMeasure<Configuration> {
    mu.map(omega)
}

/// Writes `element,mass` rows (masses to 17 significant digits) and a
/// trailing `# defect=` comment.
pub fn write_csv<E: GroupElement, W: Write>(
    mu: &SparseMeasure<E>,
    mut w: W,
) -> Result<(), MeasureError> {
    w.write_all(b"element,mass\n")?;
    for (e, m) in &mu.entries {
        writeln!(w, "\"{e}\",{m:.16e}")?;
    }
    writeln!(w, "# defect={:.16e}", mu.defect)?;
    w.flush()?;
    Ok(())
}

struct CsvRows {
    rows: Vec<(usize, String, f64)>,
    defect: f64,
}

impl CsvRows {
    fn build<E: GroupElement>(self) -> Result<SparseMeasure<E>, MeasureError> {
        let mut entries = Vec::with_capacity(self.rows.len());
        for (line, text, m) in self.rows {
            let e: E = text
                .parse()
                .map_err(|err: GroupError| MeasureError::Parse {
                    line,
                    reason: err.to_string(),
                })?;
            entries.push((e, m));
        }
        SparseMeasure::from_entries(entries, self.defect)
    }
}

fn read_rows<R: BufRead>(r: R) -> Result<CsvRows, MeasureError> {
    let mut rows = Vec::new();
    let mut defect = 0.0;
    let mut seen_header = false;
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("defect=") {
                defect = v.trim().parse().map_err(|_| MeasureError::Parse {
                    line: lineno,
                    reason: format!("bad defect {v:?}"),
                })?;
            }
            continue;
        }
        if !seen_header {
            seen_header = true;
            if trimmed == "element,mass" {
                continue;
            }
        }
        let (elem, mass) = if let Some(rest) = trimmed.strip_prefix('"') {
            let end = rest.find('"').ok_or_else(|| MeasureError::Parse {
                line: lineno,
                reason: "unterminated quote".into(),
            })?;
            let tail = rest[end + 1..].trim_start();
            let mass = tail.strip_prefix(',').ok_or_else(|| MeasureError::Parse {
                line: lineno,
                reason: "missing mass column".into(),
            })?;
            (rest[..end].to_string(), mass)
        } else {
            let i = trimmed.rfind(',').ok_or_else(|| MeasureError::Parse {
                line: lineno,
                reason: "missing mass column".into(),
            })?;
            (trimmed[..i].to_string(), &trimmed[i + 1..])
        };
        let m: f64 = mass.trim().parse().map_err(|_| MeasureError::Parse {
            line: lineno,
            reason: format!("bad mass {mass:?}"),
        })?;
        rows.push((lineno, elem, m));
    }
    Ok(CsvRows { rows, defect })
}

pub fn read_csv<E: GroupElement, R: BufRead>(r: R) -> Result<SparseMeasure<E>, MeasureError> {
    read_rows(r)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{random, GroupElement};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(s: &str) -> Configuration {
        s.parse().unwrap()
    }

    fn l(s: &str) -> LampElement {
        s.parse().unwrap()
    }

    fn random_lamp_measure(rng: &mut ChaCha8Rng, atoms: usize) -> SparseMeasure<LampElement> {
        let raw: Vec<(LampElement, f64)> = (0..atoms)
            .map(|_| (random::lamp(rng, 2), rng.gen_range(0.1..1.0)))
            .collect();
        let total: f64 = raw.iter().map(|x| x.1).sum();
        SparseMeasure::from_entries(raw.into_iter().map(|(e, m)| (e, m / total)), 0.0).unwrap()
    }

    fn assert_close<E: GroupElement>(a: &SparseMeasure<E>, b: &SparseMeasure<E>, tol: f64) {
        assert_eq!(a.len(), b.len(), "supports differ: {a:?} vs {b:?}");
        for ((x, p), (y, q)) in a.entries().iter().zip(b.entries()) {
            assert_eq!(x, y);
            assert!((p - q).abs() <= tol, "{x}: {p} vs {q}");
        }
        assert!((a.defect() - b.defect()).abs() <= tol);
    }

    #[test]
    fn from_entries_validates() {
        assert!(SparseMeasure::from_entries([(c("{0}"), 0.5)], 0.0).is_err());
        assert!(SparseMeasure::from_entries([(c("{0}"), 0.5)], 0.5).is_ok());
        assert!(SparseMeasure::from_entries([(c("{0}"), 1.5), (c("{1}"), -0.5)], 0.0).is_err());
        let merged =
            SparseMeasure::from_entries([(c("{0}"), 0.25), (c("{1}"), 0.5), (c("{0}"), 0.25)], 0.0)
                .unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.mass(&c("{0}")), 0.5);
    }

    #[test]
    fn dirac_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = random_lamp_measure(&mut rng, 5);
        let e = dirac(LampElement::identity());
        assert_close(&convolve(&e, &mu).unwrap(), &mu, 0.0);
        assert_close(&convolve(&mu, &e).unwrap(), &mu, 0.0);
        assert_eq!(entropy(&dirac(l("(3|{1})"))).unwrap(), 0.0);
        let d = tv(&dirac(l("(0|{1})")), &dirac(l("(0|{2})")));
        assert_eq!(d.value, 2.0);
    }

    #[test]
    fn tv_examples() {
        let kappa1 =
            SparseMeasure::from_entries([(c("{1}"), 0.5), (c("{0,1}"), 0.5)], 0.0).unwrap();
        assert_eq!(tv(&kappa1, &dirac(c("{1}"))).value, 1.0);
        assert_eq!(tv(&kappa1, &kappa1).value, 0.0);
    }

    #[test]
    fn entropy_refuses_truncated() {
        let mu = SparseMeasure::from_entries([(c("{1}"), 0.75)], 0.25).unwrap();
        assert!(matches!(entropy(&mu), Err(MeasureError::Truncated { .. })));
        assert!((partial_entropy(&mu) + 0.75 * 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_entropy() {
        let n = 7;
        let mu = SparseMeasure::from_entries(
            (0..1i64 << n).map(|i| (LampElement::new(i, Configuration::empty()), 1.0 / 128.0)),
            0.0,
        )
        .unwrap();
        assert!((entropy(&mu).unwrap() - n as f64 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn translate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = random_lamp_measure(&mut rng, 6);
        let nu = random_lamp_measure(&mut rng, 6);
        assert_close(&translate(&LampElement::identity(), &mu).unwrap(), &mu, 0.0);
        let g = l("(2|{-1,4})");
        let d0 = tv(&mu, &nu).value;
        let d1 = tv(&translate(&g, &mu).unwrap(), &translate(&g, &nu).unwrap()).value;
        assert!((d0 - d1).abs() < 1e-15);
        // (0, φ) · (−t, ψ) = (−t, φ + ψ)
        let lam = SparseMeasure::from_entries([(l("(-2|{-1,1})"), 0.5), (l("(-2|{0})"), 0.5)], 0.0)
            .unwrap();
        let moved = translate(&l("(0|{0,3})"), &lam).unwrap();
        assert_eq!(moved.mass(&l("(-2|{-1,0,1,3})")), 0.5);
        assert_eq!(moved.mass(&l("(-2|{3})")), 0.5);
    }

    #[test]
    fn cesaro_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = random_lamp_measure(&mut rng, 3);
        assert_close(&cesaro(&mu, 1, DEFAULT_BUDGET).unwrap(), &mu, 0.0);
        let s = cesaro(&mu, 5, DEFAULT_BUDGET).unwrap();
        assert!((s.total_mass() - 1.0).abs() < 1e-9);
        let e = dirac(LampElement::identity());
        assert_close(&cesaro(&e, 6, DEFAULT_BUDGET).unwrap(), &e, 1e-15);
    }

    #[test]
    fn lazy_examples() {
        let e = dirac(LampElement::identity());
        assert_close(&lazy(&e, 0.5).unwrap(), &e, 0.0);
        let mu = SparseMeasure::from_entries([(l("(-1|{1})"), 0.5), (l("(-1|{0,1})"), 0.5)], 0.0)
            .unwrap();
        let lz = lazy(&mu, 0.5).unwrap();
        assert_eq!(lz.mass(&LampElement::identity()), 0.5);
        assert!((lz.total_mass() - 1.0).abs() < 1e-9);
        assert!(lazy(&mu, 0.0).is_err());
        assert!(lazy(&mu, 1.0).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let mu = SparseMeasure::from_entries([(l("(-1|{1})"), 0.5), (l("(-1|{0,1})"), 0.5)], 0.0)
            .unwrap();
        assert!(convolve_power(&mu, 10, 1 << 10).is_ok());
        assert!(matches!(
            convolve_power(&mu, 11, 1 << 10),
            Err(MeasureError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn defect_propagates_through_convolution() {
        let mu = SparseMeasure::from_entries([(c("{1}"), 0.9)], 0.1).unwrap();
        let nu = SparseMeasure::from_entries([(c("{2}"), 0.8)], 0.2).unwrap();
        let p = convolve(&mu, &nu).unwrap();
        let lost = 1.0 - p.total_mass();
        assert!((p.defect() - lost).abs() < 1e-12);
        assert!(p.defect() <= mu.defect() + nu.defect() + mu.defect() * nu.defect() + 1e-9);
    }

    #[test]
    fn pushforward_rejects_wrong_type() {
        let mu = AnyMeasure::Lamp(dirac(LampElement::identity()));
        assert!(matches!(
            pushforward(Hom::Pi, &mu),
            Err(MeasureError::InvalidHom { .. })
        ));
        assert!(pushforward(Hom::Inversion, &mu).is_ok());
        let d = AnyMeasure::SemiDiag(dirac("(4|{0,2}|{0,2})".parse().unwrap()));
        assert_eq!(
            pushforward(Hom::PiBar, &d).unwrap(),
            AnyMeasure::Lamp(dirac(l("(4|{})")))
        );
    }

    #[test]
    fn csv_round_trip_preserves_measure() {
        let mu = SparseMeasure::from_entries(
            [
                (l("(-1|{0,1})"), 0.3),
                (l("(2|{})"), 0.2),
                (l("(-5|{-3,7})"), 0.1),
            ],
            0.4,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&mu, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("element,mass\n\"(-5|{-3,7})\","));
        assert!(text.ends_with("# defect=4.0000000000000002e-1\n"));
        let back = AnyMeasure::read_csv(&buf[..]).unwrap();
        assert_eq!(back, AnyMeasure::Lamp(mu));
    }

    #[test]
    fn csv_reports_bad_rows() {
        let bad = "element,mass\n\"{0}\",0.5\n\"{1,0}\",0.5\n";
        match read_csv::<Configuration, _>(bad.as_bytes()) {
            Err(MeasureError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn measure() -> impl Strategy<Value = SparseMeasure<LampElement>> {
            proptest::collection::vec(
                (
                    (-2i64..=2),
                    proptest::collection::vec(-3i64..=3, 0..4),
                    1u32..10,
                ),
                1..5,
            )
            .prop_map(|atoms| {
                let total: u32 = atoms.iter().map(|a| a.2).sum();
                SparseMeasure::from_entries(
                    atoms.into_iter().map(|(n, lit, w)| {
                        (
                            LampElement::new(n, Configuration::from_positions(lit)),
                            f64::from(w) / f64::from(total),
                        )
                    }),
                    0.0,
                )
                .unwrap()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn convolution_is_associative(a in measure(), b in measure(), d in measure()) {
                let left = convolve(&convolve(&a, &b).unwrap(), &d).unwrap();
                let right = convolve(&a, &convolve(&b, &d).unwrap()).unwrap();
                prop_assert!(tv(&left, &right).value < 1e-12);
            }

            #[test]
            fn reflection_is_an_anti_homomorphism(a in measure(), b in measure()) {
                let lhs = reflect(&convolve(&a, &b).unwrap()).unwrap();
                let rhs = convolve(&reflect(&b).unwrap(), &reflect(&a).unwrap()).unwrap();
                prop_assert!(tv(&lhs, &rhs).value < 1e-12);
                prop_assert!(tv(&reflect(&lhs).unwrap(), &convolve(&a, &b).unwrap()).value < 1e-12);
                prop_assert!((entropy(&lhs).unwrap() - entropy(&reflect(&lhs).unwrap()).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn tv_is_a_metric(a in measure(), b in measure(), d in measure()) {
                let ab = tv(&a, &b).value;
                prop_assert!((ab - tv(&b, &a).value).abs() < 1e-15);
                prop_assert!(ab <= 2.0 + 1e-12);
                prop_assert!(ab <= tv(&a, &d).value + tv(&d, &b).value + 1e-12);
            }

            #[test]
            fn entropy_is_subadditive(a in measure(), s in 1u32..4, t in 1u32..4) {
                let hs = entropy(&convolve_power(&a, s, DEFAULT_BUDGET).unwrap()).unwrap();
                let ht = entropy(&convolve_power(&a, t, DEFAULT_BUDGET).unwrap()).unwrap();
                let hst = entropy(&convolve_power(&a, s + t, DEFAULT_BUDGET).unwrap()).unwrap();
                prop_assert!(hst <= hs + ht + 1e-9);
            }

            #[test]
            fn products_factor(a in measure(), b in measure(), d in measure(), f in measure()) {
                let lhs = convolve(&product_measure(&a, &b), &product_measure(&d, &f)).unwrap();
                let rhs = product_measure(&convolve(&a, &d).unwrap(), &convolve(&b, &f).unwrap());
                prop_assert!(tv(&lhs, &rhs).value < 1e-12);
                let (m1, m2) = marginals(&product_measure(&a, &b));
                prop_assert!(tv(&m1, &a).value < 1e-12 && tv(&m2, &b).value < 1e-12);
                let joint = entropy(&product_measure(&a, &b)).unwrap();
                prop_assert!((joint - entropy(&a).unwrap() - entropy(&b).unwrap()).abs() < 1e-9);
            }
        }
    }
}
