//! The specific measures built on top of the lamp groups: the sets `K_n`,
//! their uniform measures κ_n, the mixtures λ_α and μ_α, couplings of
//! `κ_n` with itself, and the semi-diagonal step distribution μ̃.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::RngCore;
use thiserror::Error;

use crate::groups::{Configuration, LampElement, PairElement, SemiDiagElement};
use crate::measures::{read_csv, ConfigPair, MeasureError, SparseMeasure, DEFAULT_BUDGET};

/// Largest `n` for which `K_n` may be enumerated.
pub const MAX_ENUMERATED_INDEX: u32 = 25;
/// `1 / ζ(2)`.
pub const ZETA2_C: f64 = 6.0 / (std::f64::consts::PI * std::f64::consts::PI);
/// Tolerance on the total weight of a finite α.
pub const FINITE_WEIGHT_TOL: f64 = 1e-12;
/// Largest dense window (in bits) the structured λ_t engine will allocate.
pub const MAX_DENSE_BITS: u32 = 24;

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error("index n = {n} outside the enumeration range 1..={max}")]
    IndexOutOfRange { n: u32, max: u32 },
    #[error("alpha {0} has infinite support; a truncation level is required")]
    MissingTruncation(String),
    #[error("invalid alpha: {0}")]
    InvalidAlpha(String),
    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

impl ConstructionError {
    pub fn is_budget(&self) -> bool {
        matches!(
            self,
            ConstructionError::Measure(MeasureError::BudgetExceeded { .. })
        )
    }
}

/// The weight sequence α on the positive integers.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSpec {
    /// `weights[i]` is α_{i+1}.
    Finite(Vec<f64>),
    /// α_n = 2⁻ⁿ.
    Geometric,
    /// α_n = C / n² with C = 6/π².
    Zeta2,
}

impl AlphaSpec {
    pub fn finite(weights: Vec<f64>) -> Result<Self, ConstructionError> {
        if weights.is_empty() {
            return Err(ConstructionError::InvalidAlpha("no weights".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ConstructionError::InvalidAlpha(
                "weights must be non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > FINITE_WEIGHT_TOL {
            return Err(ConstructionError::InvalidAlpha(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(AlphaSpec::Finite(weights))
    }

    /// δ_n.
    pub fn dirac(n: u32) -> Self {
        assert!(n >= 1);
        let mut w = vec![0.0; n as usize];
        w[n as usize - 1] = 1.0;
        AlphaSpec::Finite(w)
    }

    pub fn weight(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match self {
            AlphaSpec::Finite(w) => w.get(n as usize - 1).copied().unwrap_or(0.0),
            AlphaSpec::Geometric => {
                if n > 1074 {
                    0.0
                } else {
                    (-(n as f64)).exp2()
                }
            }
            AlphaSpec::Zeta2 => ZETA2_C / (n as f64 * n as f64),
        }
    }

    /// Largest index with positive weight, `None` for infinite support.
    pub fn support_max(&self) -> Option<u64> {
        match self {
            AlphaSpec::Finite(w) => w.iter().rposition(|x| *x > 0.0).map(|i| i as u64 + 1),
            _ => None,
        }
    }

    pub fn is_finite_support(&self) -> bool {
        self.support_max().is_some()
    }

    /// `P{n > m}`.
    pub fn tail(&self, m: u64) -> f64 {
        match self {
            AlphaSpec::Finite(w) => {
                let from = (m as usize).min(w.len());
                w[from..].iter().sum()
            }
            AlphaSpec::Geometric => {
                if m > 1074 {
                    0.0
                } else {
                    (-(m as f64)).exp2()
                }
            }
            AlphaSpec::Zeta2 => zeta2_tail(m),
        }
    }

    /// Indices retained by a truncation, with the dropped tail mass.
    pub fn truncated_weights(
        &self,
        truncate_at: Option<u32>,
    ) -> Result<(Vec<(u32, f64)>, f64), ConstructionError> {
        let upper = match (self.support_max(), truncate_at) {
            (Some(m), None) => m as u32,
            (Some(m), Some(n)) => (m as u32).min(n),
            (None, Some(n)) => n,
            (None, None) => return Err(ConstructionError::MissingTruncation(self.to_string())),
        };
        let weights: Vec<(u32, f64)> = (1..=upper)
            .map(|n| (n, self.weight(u64::from(n))))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        let defect = match self {
            AlphaSpec::Finite(_) => self.tail(u64::from(upper)).max(0.0),
            _ => self.tail(u64::from(upper)),
        };
        // finite weights are normalized only to 1e-12; keep the defect exact zero
        let defect = if defect < FINITE_WEIGHT_TOL && self.is_finite_support() {
            0.0
        } else {
            defect
        };
        Ok((weights, defect))
    }

    /// `H(α)` for finitely supported α.
    pub fn entropy(&self) -> Option<f64> {
        match self {
            AlphaSpec::Finite(w) => Some(w.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).sum()),
            _ => None,
        }
    }
}

impl fmt::Display for AlphaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaSpec::Finite(w) => {
                f.write_str("finite:")?;
                for (i, x) in w.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
            AlphaSpec::Geometric => f.write_str("geometric"),
            AlphaSpec::Zeta2 => f.write_str("zeta2"),
        }
    }
}

impl FromStr for AlphaSpec {
    type Err = ConstructionError;

    fn from_str(s: &str) -> Result<Self, ConstructionError> {
        let s = s.trim();
        match s {
            "geometric" => Ok(AlphaSpec::Geometric),
            "zeta2" => Ok(AlphaSpec::Zeta2),
            _ => {
                let body = s.strip_prefix("finite:").ok_or_else(|| {
                    ConstructionError::InvalidAlpha(format!(
                        "{s:?}: expected finite:w1,w2,..., geometric or zeta2"
                    ))
                })?;
                let weights = body
                    .split(',')
                    .map(|x| {
                        x.trim().parse::<f64>().map_err(|_| {
                            ConstructionError::InvalidAlpha(format!("bad weight {x:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                AlphaSpec::finite(weights)
            }
        }
    }
}

const ZETA2_TABLE_LEN: usize = 4096;

/// `C·ψ′(x)` by its asymptotic series; accurate to double precision for
/// `x > 4096`.
fn zeta2_tail_asymptotic(m: f64) -> f64 {
    let x = m + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv + 0.5 * inv2 + inv2 * inv / 6.0 - inv2 * inv2 * inv / 30.0
        + inv2 * inv2 * inv2 * inv / 42.0
        - inv2 * inv2 * inv2 * inv2 * inv / 30.0;
    ZETA2_C * series
}

fn zeta2_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![0.0; ZETA2_TABLE_LEN + 1];
        t[ZETA2_TABLE_LEN] = zeta2_tail_asymptotic(ZETA2_TABLE_LEN as f64);
        for m in (1..=ZETA2_TABLE_LEN).rev() {
            let mf = m as f64;
            t[m - 1] = t[m] + ZETA2_C / (mf * mf);
        }
        t
    })
}

/// `P{n > m}` for α_n = C/n².
pub fn zeta2_tail(m: u64) -> f64 {
    if (m as usize) <= ZETA2_TABLE_LEN {
        zeta2_table()[m as usize]
    } else {
        zeta2_tail_asymptotic(m as f64)
    }
}

/// Exact inverse-CDF sampler for α.
#[derive(Debug, Clone)]
pub struct AlphaSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Finite(Vec<f64>),
    Geometric,
    Zeta2,
}

fn unit_open_closed<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl AlphaSampler {
    pub fn new(alpha: &AlphaSpec) -> Self {
        let kind = match alpha {
            AlphaSpec::Finite(w) => {
                let mut acc = 0.0;
                let cdf = w
                    .iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect();
                SamplerKind::Finite(cdf)
            }
            AlphaSpec::Geometric => SamplerKind::Geometric,
            AlphaSpec::Zeta2 => SamplerKind::Zeta2,
        };
        Self { kind }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.kind {
            SamplerKind::Finite(cdf) => {
                let total = *cdf.last().expect("non-empty");
                let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * total;
                let i = cdf.partition_point(|c| *c <= u);
                // skip zero-weight indices left behind by rounding
                let i = i.min(cdf.len() - 1);
                let mut j = i;
                while j > 0 && cdf[j] == cdf[j - 1] {
                    j -= 1;
                }
                if j == 0 && cdf[0] == 0.0 {
                    j = cdf.iter().position(|c| *c > 0.0).unwrap_or(0);
                }
                j as u64 + 1
            }
            SamplerKind::Geometric => {
                let mut n = 0u64;
                loop {
                    let r = rng.next_u64();
                    if r != 0 {
                        return n + u64::from(r.trailing_zeros()) + 1;
                    }
                    n += 64;
                }
            }
            SamplerKind::Zeta2 => {
                let v = unit_open_closed(rng);
                zeta2_inverse_tail(v)
            }
        }
    }
}

/// Smallest `n ≥ 1` with `P{N > n} ≤ v`.
fn zeta2_inverse_tail(v: f64) -> u64 {
    let table = zeta2_table();
    if v >= table[ZETA2_TABLE_LEN] {
        // table is decreasing; first index in 1..=LEN with t[n] <= v
        let idx = table[1..].partition_point(|s| *s > v);
        return idx as u64 + 1;
    }
    let mut lo = ZETA2_TABLE_LEN as u64; // tail(lo) > v
    let mut hi = ((ZETA2_C / v) as u64).max(lo + 1);
    while zeta2_tail(hi) > v {
        lo = hi;
        hi = hi.saturating_mul(2);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if zeta2_tail(mid) > v {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// One draw from α.
pub fn sample_alpha<R: RngCore + ?Sized>(alpha: &AlphaSpec, rng: &mut R) -> u64 {
    AlphaSampler::new(alpha).sample(rng)
}

/// First moment `|α| = Σ n α_n`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum AlphaMoment {
    Finite(f64),
    /// The series diverges; `partial` is `Σ_{n ≤ upto} n α_n` when a level
    /// was supplied.
    Divergent {
        partial: Option<(u64, f64)>,
    },
}

impl AlphaMoment {
    pub fn is_finite(&self) -> bool {
        matches!(self, AlphaMoment::Finite(_))
    }
}

pub fn alpha_moment(alpha: &AlphaSpec, truncate_at: Option<u64>) -> AlphaMoment {
    match alpha {
        AlphaSpec::Finite(w) => AlphaMoment::Finite(
            w.iter()
                .enumerate()
                .map(|(i, x)| (i as f64 + 1.0) * x)
                .sum(),
        ),
        AlphaSpec::Geometric => AlphaMoment::Finite(2.0),
        AlphaSpec::Zeta2 => AlphaMoment::Divergent {
            partial: truncate_at.map(|n| {
                let s: f64 = (1..=n).rev().map(|k| ZETA2_C / k as f64).sum();
                (n, s)
            }),
        },
    }
}

fn check_index(n: u32) -> Result<(), ConstructionError> {
    if n == 0 || n > MAX_ENUMERATED_INDEX {
        return Err(ConstructionError::IndexOutOfRange {
            n,
            max: MAX_ENUMERATED_INDEX,
        });
    }
    Ok(())
}

fn config_from_mask(mask: u64, offset: i64) -> Configuration {
    let mut lit = Vec::with_capacity(mask.count_ones() as usize);
    let mut m = mask;
    while m != 0 {
        let b = m.trailing_zeros();
        lit.push(offset + i64::from(b));
        m &= m - 1;
    }
    Configuration::from_sorted_unchecked(lit)
}

/// `Φ_0^m`: all configurations supported in `[0..m]` (`2^{m+1}` of them).
pub fn phi0(m: u32) -> Result<Vec<Configuration>, ConstructionError> {
    if m >= MAX_ENUMERATED_INDEX {
        return Err(ConstructionError::IndexOutOfRange {
            n: m,
            max: MAX_ENUMERATED_INDEX - 1,
        });
    }
    let mut out: Vec<Configuration> = (0..1u64 << (m + 1))
        .map(|x| config_from_mask(x, 0))
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// `K_n = ε_n + Φ_0^{n−1}`.
pub fn k_set(n: u32) -> Result<Vec<Configuration>, ConstructionError> {
    check_index(n)?;
    let top = 1u64 << n;
    let mut out: Vec<Configuration> = (0..top).map(|x| config_from_mask(x | top, 0)).collect();
    out.sort_unstable();
    Ok(out)
}

/// `|K_n| = 2ⁿ` by counting.
pub fn k_set_len(n: u32) -> u64 {
    1u64 << n
}

/// `|Φ_0^n| = 2^{n+1}` by counting.
pub fn phi0_len(n: u32) -> u64 {
    1u64 << (n + 1)
}

/// κ_n = Unif(K_n).
pub fn kappa(n: u32) -> Result<SparseMeasure<Configuration>, ConstructionError> {
    let set = k_set(n)?;
    let m = (-(f64::from(n))).exp2();
    Ok(SparseMeasure::from_sorted_unchecked(
        set.into_iter().map(|c| (c, m)).collect(),
        0.0,
    ))
}

fn check_atoms(count: u64, budget: usize) -> Result<(), ConstructionError> {
    if count > budget as u64 {
        return Err(MeasureError::BudgetExceeded { limit: budget }.into());
    }
    Ok(())
}

/// λ_α = Σ α_n κ_n, truncated at `truncate_at` if given.
pub fn lambda_alpha(
    alpha: &AlphaSpec,
    truncate_at: Option<u32>,
) -> Result<SparseMeasure<Configuration>, ConstructionError> {
    let (weights, defect) = alpha.truncated_weights(truncate_at)?;
    let atoms: u64 = weights.iter().map(|(n, _)| k_set_len(*n)).sum();
    check_atoms(atoms, DEFAULT_BUDGET)?;
    let mut entries = Vec::with_capacity(atoms as usize);
    for (n, w) in weights {
        let m = w * (-(f64::from(n))).exp2();
        entries.extend(k_set(n)?.into_iter().map(|c| (c, m)));
    }
    // the K_n are disjoint, so a sort suffices
    entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let mu = SparseMeasure::from_sorted_unchecked(entries, defect);
    Ok(mu)
}

/// μ_α = δ₋₁ ⊗ λ_α.
pub fn mu_alpha(
    alpha: &AlphaSpec,
    truncate_at: Option<u32>,
) -> Result<SparseMeasure<LampElement>, ConstructionError> {
    let lambda = lambda_alpha(alpha, truncate_at)?;
    let entries = lambda
        .entries()
        .iter()
        .map(|(c, m)| (LampElement::new(-1, c.clone()), *m))
        .collect();
    Ok(SparseMeasure::from_sorted_unchecked(
        entries,
        lambda.defect(),
    ))
}

/// One coupling recipe for `κ̃_n`.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingKind {
    /// κ_n ⊗ κ_n.
    Product,
    /// Uniform on the diagonal of `K_n × K_n`.
    Diagonal,
    /// Uniform on the antidiagonal of `K_1 × K_1`.
    Transposition,
    /// Coupling whose ω-image is the given measure on `Φ_0^{n−1}`.
    PrescribedImage(SparseMeasure<Configuration>),
}

impl CouplingKind {
    /// Whether ω maps the coupling to δ_θ.
    pub fn is_diagonal(&self) -> bool {
        match self {
            CouplingKind::Diagonal => true,
            CouplingKind::PrescribedImage(rho) => rho.len() == 1 && rho.entries()[0].0.is_empty(),
            CouplingKind::Product | CouplingKind::Transposition => false,
        }
    }
}

/// Coupling used for indices without an explicit override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum DefaultCoupling {
    Product,
    Diagonal,
}

/// Per-index choice of `κ̃_n`: finitely many overrides over a default.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    default: DefaultCoupling,
    overrides: BTreeMap<u32, CouplingKind>,
}

impl Default for CouplingSpec {
    fn default() -> Self {
        Self::product()
    }
}

impl CouplingSpec {
    pub fn product() -> Self {
        Self {
            default: DefaultCoupling::Product,
            overrides: BTreeMap::new(),
        }
    }

    pub fn diagonal() -> Self {
        Self {
            default: DefaultCoupling::Diagonal,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with(mut self, n: u32, kind: CouplingKind) -> Result<Self, ConstructionError> {
        validate_kind(n, &kind)?;
        self.overrides.insert(n, kind);
        Ok(self)
    }

    pub fn default_kind(&self) -> DefaultCoupling {
        self.default
    }

    pub fn overrides(&self) -> &BTreeMap<u32, CouplingKind> {
        &self.overrides
    }

    pub fn kind_at(&self, n: u32) -> &CouplingKind {
        static PRODUCT: CouplingKind = CouplingKind::Product;
        static DIAGONAL: CouplingKind = CouplingKind::Diagonal;
        self.overrides.get(&n).unwrap_or(match self.default {
            DefaultCoupling::Product => &PRODUCT,
            DefaultCoupling::Diagonal => &DIAGONAL,
        })
    }

    /// Indices `n` with `κ̃_n ≠ κ_n ⊗ κ_n`; `None` when that set is infinite.
    pub fn non_product_indices(&self) -> Option<Vec<u32>> {
        match self.default {
            DefaultCoupling::Diagonal => None,
            DefaultCoupling::Product => Some(
                self.overrides
                    .iter()
                    .filter(|(_, k)| **k != CouplingKind::Product)
                    .map(|(n, _)| *n)
                    .collect(),
            ),
        }
    }

    /// Indices `n` whose ω-image is not δ_θ; `None` when that set is
    /// infinite.
    pub fn non_diagonal_indices(&self) -> Option<Vec<u32>> {
        match self.default {
            DefaultCoupling::Product => None,
            DefaultCoupling::Diagonal => Some(
                self.overrides
                    .iter()
                    .filter(|(_, k)| !k.is_diagonal())
                    .map(|(n, _)| *n)
                    .collect(),
            ),
        }
    }

    /// Parses `product`, `diagonal`, `transposition@1`, `image@n:<file>`
    /// tokens joined by `+`. Measure files are fetched through `load`.
    pub fn parse_with<F>(text: &str, mut load: F) -> Result<Self, ConstructionError>
    where
        F: FnMut(&str) -> Result<SparseMeasure<Configuration>, ConstructionError>,
    {
        let mut default = None;
        let mut overrides = BTreeMap::new();
        for token in text.split('+').map(str::trim) {
            let (kind, n) = match token {
                "product" | "diagonal" => {
                    if default.is_some() {
                        return Err(ConstructionError::InvalidCoupling(
                            "more than one default coupling".into(),
                        ));
                    }
                    default = Some(if token == "product" {
                        DefaultCoupling::Product
                    } else {
                        DefaultCoupling::Diagonal
                    });
                    continue;
                }
                _ if token.starts_with("transposition@") => {
                    let n: u32 = token["transposition@".len()..].parse().map_err(|_| {
                        ConstructionError::InvalidCoupling(format!("bad index in {token:?}"))
                    })?;
                    (CouplingKind::Transposition, n)
                }
                _ if token.starts_with("image@") => {
                    let rest = &token["image@".len()..];
                    let (n, path) = rest.split_once(':').ok_or_else(|| {
                        ConstructionError::InvalidCoupling(format!(
                            "{token:?}: expected image@n:<measure-file>"
                        ))
                    })?;
                    let n: u32 = n.parse().map_err(|_| {
                        ConstructionError::InvalidCoupling(format!("bad index in {token:?}"))
                    })?;
                    (CouplingKind::PrescribedImage(load(path)?), n)
                }
                _ => {
                    return Err(ConstructionError::InvalidCoupling(format!(
                        "unknown coupling token {token:?}"
                    )))
                }
            };
            validate_kind(n, &kind)?;
            if overrides.insert(n, kind).is_some() {
                return Err(ConstructionError::InvalidCoupling(format!(
                    "index {n} specified twice"
                )));
            }
        }
        Ok(Self {
            default: default.unwrap_or(DefaultCoupling::Product),
            overrides,
        })
    }
}

impl FromStr for CouplingSpec {
    type Err = ConstructionError;

    fn from_str(s: &str) -> Result<Self, ConstructionError> {
        CouplingSpec::parse_with(s, |path| {
            let file = std::fs::File::open(path).map_err(MeasureError::from)?;
            Ok(read_csv(std::io::BufReader::new(file))?)
        })
    }
}

impl fmt::Display for CouplingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, k) in &self.overrides {
            match k {
                CouplingKind::Product => write!(f, "product@{n}+")?,
                CouplingKind::Diagonal => write!(f, "diagonal@{n}+")?,
                CouplingKind::Transposition => write!(f, "transposition@{n}+")?,
                CouplingKind::PrescribedImage(_) => write!(f, "image@{n}:<measure>+")?,
            }
        }
        f.write_str(match self.default {
            DefaultCoupling::Product => "product",
            DefaultCoupling::Diagonal => "diagonal",
        })
    }
}

fn validate_kind(n: u32, kind: &CouplingKind) -> Result<(), ConstructionError> {
    if n == 0 {
        return Err(ConstructionError::InvalidCoupling(
            "indices start at 1".into(),
        ));
    }
    match kind {
        CouplingKind::Transposition if n != 1 => Err(ConstructionError::InvalidCoupling(format!(
            "transposition is only defined for n = 1, got n = {n}"
        ))),
        CouplingKind::PrescribedImage(rho) => {
            if !rho.is_exact() {
                return Err(ConstructionError::InvalidCoupling(
                    "prescribed image must be defect-free".into(),
                ));
            }
            let limit = i64::from(n) - 1;
            if let Some(bad) = rho
                .support()
                .find(|c| c.bounds().is_some_and(|(lo, hi)| lo < 0 || hi > limit))
            {
                return Err(ConstructionError::InvalidCoupling(format!(
                    "prescribed image atom {bad} is not supported in [0..{limit}]"
                )));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// κ̃_n on `K_n × K_n` for the given recipe.
pub fn coupling_measure(
    n: u32,
    spec: &CouplingSpec,
) -> Result<SparseMeasure<ConfigPair>, ConstructionError> {
    coupling_of_kind(n, spec.kind_at(n))
}

fn coupling_of_kind(
    n: u32,
    kind: &CouplingKind,
) -> Result<SparseMeasure<ConfigPair>, ConstructionError> {
    check_index(n)?;
    validate_kind(n, kind)?;
    let scale = (-(f64::from(n))).exp2();
    let out = match kind {
        CouplingKind::Product => {
            check_atoms(k_set_len(n).saturating_mul(k_set_len(n)), DEFAULT_BUDGET)?;
            let set = k_set(n)?;
            let m = scale * scale;
            let mut entries = Vec::with_capacity(set.len() * set.len());
            for a in &set {
                for b in &set {
                    entries.push((PairElement::new(a.clone(), b.clone()), m));
                }
            }
            SparseMeasure::from_sorted_unchecked(entries, 0.0)
        }
        CouplingKind::Diagonal => SparseMeasure::from_sorted_unchecked(
            k_set(n)?
                .into_iter()
                .map(|c| (PairElement::new(c.clone(), c), scale))
                .collect(),
            0.0,
        ),
        CouplingKind::Transposition => {
            let e1 = Configuration::unit(1);
            let e01 = Configuration::from_positions([0, 1]);
            SparseMeasure::from_entries(
                [
                    (PairElement::new(e1.clone(), e01.clone()), 0.5),
                    (PairElement::new(e01, e1), 0.5),
                ],
                0.0,
            )?
        }
        CouplingKind::PrescribedImage(rho) => {
            check_atoms(
                k_set_len(n).saturating_mul(rho.len() as u64),
                DEFAULT_BUDGET,
            )?;
            let base = if n == 1 {
                vec![Configuration::empty(), Configuration::unit(0)]
            } else {
                phi0(n - 1)?
            };
            let top = Configuration::unit(i64::from(n));
            let mut acc: HashMap<ConfigPair, f64> = HashMap::new();
            for phi0 in &base {
                let left = phi0.add(&top);
                for (bar, r) in rho.iter() {
                    let right = left.add(bar);
                    *acc.entry(PairElement::new(left.clone(), right))
                        .or_insert(0.0) += scale * r;
                }
            }
            SparseMeasure::from_accumulator(acc, 0.0)
        }
    };
    Ok(out)
}

/// Closed form of ω(κ̃_n).
pub fn omega_image(
    n: u32,
    spec: &CouplingSpec,
) -> Result<SparseMeasure<Configuration>, ConstructionError> {
    check_index(n)?;
    Ok(match spec.kind_at(n) {
        CouplingKind::Product => {
            let set = if n == 1 {
                vec![Configuration::empty(), Configuration::unit(0)]
            } else {
                phi0(n - 1)?
            };
            let m = (-(f64::from(n))).exp2();
            SparseMeasure::from_sorted_unchecked(set.into_iter().map(|c| (c, m)).collect(), 0.0)
        }
        CouplingKind::Diagonal => SparseMeasure::dirac(Configuration::empty()),
        CouplingKind::Transposition => SparseMeasure::dirac(Configuration::unit(0)),
        CouplingKind::PrescribedImage(rho) => rho.clone(),
    })
}

/// μ̃ = δ₋₁ ⊗ Σ α_n κ̃_n on the semi-diagonal group.
pub fn mu_tilde(
    alpha: &AlphaSpec,
    spec: &CouplingSpec,
    truncate_at: Option<u32>,
) -> Result<SparseMeasure<SemiDiagElement>, ConstructionError> {
    let (weights, defect) = alpha.truncated_weights(truncate_at)?;
    let mut atoms = 0u64;
    for (n, _) in &weights {
        check_index(*n)?;
        atoms = atoms.saturating_add(match spec.kind_at(*n) {
            CouplingKind::Product => k_set_len(*n).saturating_mul(k_set_len(*n)),
            CouplingKind::PrescribedImage(rho) => k_set_len(*n) * rho.len() as u64,
            _ => k_set_len(*n),
        });
    }
    check_atoms(atoms, DEFAULT_BUDGET)?;
    let mut entries = Vec::with_capacity(atoms as usize);
    for (n, w) in weights {
        for (pair, m) in coupling_measure(n, spec)?.iter() {
            entries.push((
                SemiDiagElement::new(-1, pair.left.clone(), pair.right.clone()),
                w * m,
            ));
        }
    }
    // couplings at different n live on disjoint K_n × K_n
    entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    Ok(SparseMeasure::from_sorted_unchecked(entries, defect))
}

/// μ̄ = δ₋₁ ⊗ Σ α_n ω(κ̃_n), assembled from the closed-form ω-images.
pub fn mu_bar(
    alpha: &AlphaSpec,
    spec: &CouplingSpec,
    truncate_at: Option<u32>,
) -> Result<SparseMeasure<LampElement>, ConstructionError> {
    let (weights, defect) = alpha.truncated_weights(truncate_at)?;
    let images = weights
        .iter()
        .map(|(n, w)| Ok((*w, omega_image(*n, spec)?)))
        .collect::<Result<Vec<_>, ConstructionError>>()?;
    let bar = SparseMeasure::mixture(images.iter().map(|(w, m)| (*w, m)));
    let entries = bar
        .entries()
        .iter()
        .map(|(c, m)| (LampElement::new(-1, c.clone()), *m))
        .collect();
    Ok(SparseMeasure::from_sorted_unchecked(
        entries,
        bar.defect() + defect,
    ))
}

/// λ_t = λ ∗ T⁻¹λ ∗ ⋯ ∗ T^{−t+1}λ, the lamp marginal of μ_α^{*t}.
///
/// Works on a dense array indexed by bit patterns over `[−(t−1)..N]`.
/// Convolution with `T^{−s}κ_n` is an average over the bit block
/// `[−s..n−1−s]` followed by toggling bit `n−s`, and the averages for
/// successive `n` are nested, so each step costs `O(N · 2^W)`.
pub fn lambda_power(
    alpha: &AlphaSpec,
    truncate_at: Option<u32>,
    t: u32,
    budget: usize,
) -> Result<SparseMeasure<Configuration>, ConstructionError> {
    if t == 0 {
        return Err(MeasureError::InvalidParameter("t must be at least 1".into()).into());
    }
    let (weights, step_defect) = alpha.truncated_weights(truncate_at)?;
    let top = weights.last().map(|(n, _)| *n).unwrap_or(0);
    let lo = -(i64::from(t) - 1);
    let width = top + t;
    if width > MAX_DENSE_BITS {
        return Err(MeasureError::BudgetExceeded {
            limit: budget.min(1 << MAX_DENSE_BITS),
        }
        .into());
    }
    let size = 1usize << width;
    let bit = |pos: i64| -> usize { 1usize << (pos - lo) as u32 };
    let mut f = vec![0.0f64; size];
    f[0] = 1.0;
    let mut avg = vec![0.0f64; size];
    let mut next = vec![0.0f64; size];
    for s in 0..i64::from(t) {
        next.iter_mut().for_each(|x| *x = 0.0);
        avg.copy_from_slice(&f);
        let mut wi = 0;
        for n in 1..=top {
            // fold one more bit into the running average
            let b = bit(-s + i64::from(n) - 1);
            for y in 0..size {
                if y & b == 0 {
                    let m = 0.5 * (avg[y] + avg[y | b]);
                    avg[y] = m;
                    avg[y | b] = m;
                }
            }
            if wi < weights.len() && weights[wi].0 == n {
                let w = weights[wi].1;
                wi += 1;
                let forced = bit(i64::from(n) - s);
                for y in 0..size {
                    let a = avg[y ^ forced];
                    if a != 0.0 {
                        next[y] += w * a;
                    }
                }
            }
        }
        std::mem::swap(&mut f, &mut next);
    }
    let support = f.iter().filter(|x| **x > 0.0).count();
    if support > budget {
        return Err(MeasureError::BudgetExceeded { limit: budget }.into());
    }
    let mut entries: Vec<(Configuration, f64)> = f
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(y, m)| (config_from_mask(y as u64, lo), *m))
        .collect();
    entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let defect = if step_defect == 0.0 {
        0.0
    } else {
        1.0 - (1.0 - step_defect).powi(t as i32)
    };
    Ok(SparseMeasure::from_sorted_unchecked(entries, defect))
}

/// `Σ_{n ≤ N} α_n (n log 2 − log α_n)`: the entropy contributed by the
/// retained part of μ_α truncated at N.
pub fn truncated_mu_entropy(alpha: &AlphaSpec, truncate_at: u32) -> f64 {
    (1..=truncate_at)
        .map(|n| {
            let w = alpha.weight(u64::from(n));
            if w > 0.0 {
                w * (f64::from(n) * std::f64::consts::LN_2 - w.ln())
            } else {
                0.0
            }
        })
        .sum()
}

/// Checks that a measure's total mass and defect add to one.
#[cfg(test)]
pub(crate) fn is_normalized<E: crate::groups::GroupElement>(mu: &SparseMeasure<E>) -> bool {
    (mu.total_mass() + mu.defect() - 1.0).abs() <= crate::measures::NORMALIZATION_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{
        convolve_power, entropy, marginals, push_omega, push_pi, push_pi_prime, tv,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(s: &str) -> Configuration {
        s.parse().unwrap()
    }

    #[test]
    fn zeta2_constant_matches_accelerated_sum() {
        // partial sum plus Euler–Maclaurin tail of Σ 1/n²
        let n = 1000u64;
        let partial: f64 = (1..=n).rev().map(|k| 1.0 / (k as f64 * k as f64)).sum();
        let x = n as f64;
        let tail =
            1.0 / x - 1.0 / (2.0 * x * x) + 1.0 / (6.0 * x.powi(3)) - 1.0 / (30.0 * x.powi(5));
        let c = 1.0 / (partial + tail);
        assert!((c - ZETA2_C).abs() < 1e-15, "{c} vs {ZETA2_C}");
        assert!((ZETA2_C - 0.607_927_101_854_026_6).abs() < 1e-16);
    }

    #[test]
    fn zeta2_tail_is_consistent() {
        assert!((zeta2_tail(0) - 1.0).abs() < 1e-14);
        assert!((zeta2_tail(1) - (1.0 - ZETA2_C)).abs() < 1e-14);
        for m in [10u64, 4095, 4096, 4097, 100_000] {
            let d = zeta2_tail(m - 1) - zeta2_tail(m);
            let w = ZETA2_C / (m as f64 * m as f64);
            assert!((d - w).abs() < 1e-12 * w.max(1e-300) + 1e-18, "m={m}");
        }
    }

    #[test]
    fn zeta2_inverse_tail_brackets() {
        for v in [
            1.0,
            0.9,
            0.5,
            0.3921,
            1e-3,
            1.3e-4,
            1e-7,
            1e-12,
            2f64.powi(-53),
        ] {
            let n = zeta2_inverse_tail(v);
            assert!(zeta2_tail(n) <= v);
            assert!(n == 1 || zeta2_tail(n - 1) > v, "v={v} n={n}");
        }
    }

    #[test]
    fn alpha_parsing() {
        assert_eq!(
            "geometric".parse::<AlphaSpec>().unwrap(),
            AlphaSpec::Geometric
        );
        assert_eq!("zeta2".parse::<AlphaSpec>().unwrap(), AlphaSpec::Zeta2);
        assert_eq!(
            "finite:0.5,0.5".parse::<AlphaSpec>().unwrap(),
            AlphaSpec::Finite(vec![0.5, 0.5])
        );
        assert!("finite:0.5,0.4".parse::<AlphaSpec>().is_err());
        assert!("finite:1.5,-0.5".parse::<AlphaSpec>().is_err());
        assert!("poisson".parse::<AlphaSpec>().is_err());
    }

    #[test]
    fn k_set_examples() {
        assert_eq!(k_set(1).unwrap(), vec![c("{0,1}"), c("{1}")]);
        assert_eq!(k_set(5).unwrap().len(), 32);
        let a = k_set(3).unwrap();
        let b = k_set(4).unwrap();
        assert!(a.iter().all(|x| !b.contains(x)));
        assert!(k_set(0).is_err());
        assert!(k_set(26).is_err());
    }

    #[test]
    fn k_set_is_shifted_subgroup() {
        for n in 1..=8 {
            let top = Configuration::unit(i64::from(n));
            let mut shifted: Vec<Configuration> =
                phi0(n - 1).unwrap().iter().map(|p| p.add(&top)).collect();
            shifted.sort();
            assert_eq!(shifted, k_set(n).unwrap());
            assert!(k_set(n).unwrap().iter().all(|x| x.range() == u64::from(n)));
        }
    }

    #[test]
    fn kappa_examples() {
        let k1 = kappa(1).unwrap();
        assert_eq!(k1.iter().map(|x| x.1).collect::<Vec<_>>(), vec![0.5, 0.5]);
        let k3 = kappa(3).unwrap();
        assert_eq!(k3.len(), 8);
        assert!(k3.iter().all(|x| x.1 == 0.125));
        for n in 1..=10 {
            let h = entropy(&kappa(n).unwrap()).unwrap();
            assert!((h - f64::from(n) * std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(
            lambda_alpha(&AlphaSpec::dirac(1), None).unwrap(),
            kappa(1).unwrap()
        );
        let l = lambda_alpha(&AlphaSpec::Finite(vec![0.5, 0.5]), None).unwrap();
        assert_eq!(l.len(), 6);
        for k in k_set(1).unwrap() {
            assert_eq!(l.mass(&k), 0.25);
        }
        for k in k_set(2).unwrap() {
            assert_eq!(l.mass(&k), 0.125);
        }
        for n in [1u32, 5, 12] {
            let g = lambda_alpha(&AlphaSpec::Geometric, Some(n)).unwrap();
            assert!((g.defect() - (-(f64::from(n))).exp2()).abs() < 1e-15);
            assert!(is_normalized(&g));
        }
        assert!(matches!(
            lambda_alpha(&AlphaSpec::Zeta2, None),
            Err(ConstructionError::MissingTruncation(_))
        ));
    }

    #[test]
    fn mu_alpha_entropy_identity() {
        let alpha = AlphaSpec::Finite(vec![0.5, 0.5]);
        let mu = mu_alpha(&alpha, None).unwrap();
        assert!(mu.support().all(|g| g.pos == -1));
        let h = entropy(&mu).unwrap();
        assert!((h - 2.5 * std::f64::consts::LN_2).abs() < 1e-12);
        let expected = alpha.entropy().unwrap() + 1.5 * std::f64::consts::LN_2;
        assert!((h - expected).abs() < 1e-12);
    }

    #[test]
    fn alpha_moment_examples() {
        assert_eq!(
            alpha_moment(&AlphaSpec::dirac(1), None),
            AlphaMoment::Finite(1.0)
        );
        assert_eq!(
            alpha_moment(&AlphaSpec::Geometric, None),
            AlphaMoment::Finite(2.0)
        );
        // Σ n 2⁻ⁿ by direct summation
        let direct: f64 = (1..200).map(|n| n as f64 * (-(n as f64)).exp2()).sum();
        assert!((direct - 2.0).abs() < 1e-14);
        let mut last = 0.0;
        for n in [10u64, 100, 1000, 10_000, 100_000] {
            match alpha_moment(&AlphaSpec::Zeta2, Some(n)) {
                AlphaMoment::Divergent {
                    partial: Some((_, s)),
                } => {
                    assert!(s > last);
                    // C·(log n + γ) with error O(1/n)
                    let approx = ZETA2_C * ((n as f64).ln() + 0.577_215_664_901_532_9);
                    assert!((s - approx).abs() < ZETA2_C / n as f64);
                    last = s;
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn sampling_dirac_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = AlphaSampler::new(&AlphaSpec::dirac(3));
        assert!((0..1000).all(|_| s.sample(&mut rng) == 3));
        let s = AlphaSampler::new(&AlphaSpec::Finite(vec![0.0, 0.0, 0.5, 0.0, 0.5]));
        assert!((0..1000).all(|_| matches!(s.sample(&mut rng), 3 | 5)));
    }

    #[test]
    fn geometric_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = AlphaSampler::new(&AlphaSpec::Geometric);
        let draws = 1_000_000u64;
        let mut counts = [0u64; 12];
        for _ in 0..draws {
            let n = s.sample(&mut rng) as usize;
            if n < counts.len() {
                counts[n] += 1;
            }
        }
        for (n, &k) in counts.iter().enumerate().skip(1) {
            let p = (-(n as f64)).exp2();
            let mean = p * draws as f64;
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (k as f64 - mean).abs() <= 4.0 * sd,
                "n={n} k={k} mean={mean}"
            );
        }
    }

    #[test]
    fn zeta2_sampling_has_heavy_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = AlphaSampler::new(&AlphaSpec::Zeta2);
        let draws = 1_000_000;
        let mut sum = 0f64;
        let mut ones = 0u64;
        for _ in 0..draws {
            let n = s.sample(&mut rng);
            sum += n as f64;
            ones += u64::from(n == 1);
        }
        // the moment truncated at 10⁶ is C·H_{10⁶} ≈ 8.75
        match alpha_moment(&AlphaSpec::Zeta2, Some(1_000_000)) {
            AlphaMoment::Divergent {
                partial: Some((_, s)),
            } => assert!(s > 5.0),
            _ => unreachable!(),
        }
        assert!(sum / draws as f64 > 5.0);
        let p1 = ZETA2_C;
        let sd = (draws as f64 * p1 * (1.0 - p1)).sqrt();
        assert!((ones as f64 - p1 * draws as f64).abs() < 4.0 * sd);
    }

    #[test]
    fn transposition_coupling() {
        let spec = CouplingSpec::product()
            .with(1, CouplingKind::Transposition)
            .unwrap();
        let k = coupling_measure(1, &spec).unwrap();
        assert_eq!(k.len(), 2);
        assert_eq!(k.mass(&PairElement::new(c("{1}"), c("{0,1}"))), 0.5);
        assert_eq!(k.mass(&PairElement::new(c("{0,1}"), c("{1}"))), 0.5);
        assert_eq!(push_omega(&k), SparseMeasure::dirac(Configuration::unit(0)));
        assert!(CouplingSpec::product()
            .with(2, CouplingKind::Transposition)
            .is_err());
    }

    #[test]
    fn couplings_have_uniform_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=4 {
            let rho = random_image(&mut rng, n);
            let specs = [
                CouplingSpec::product(),
                CouplingSpec::diagonal(),
                CouplingSpec::product()
                    .with(n, CouplingKind::PrescribedImage(rho.clone()))
                    .unwrap(),
            ];
            for spec in &specs {
                let k = coupling_measure(n, spec).unwrap();
                let (a, b) = marginals(&k);
                assert!(tv(&a, &kappa(n).unwrap()).value < 1e-12);
                assert!(tv(&b, &kappa(n).unwrap()).value < 1e-12);
                let image = push_omega(&k);
                assert!(tv(&image, &omega_image(n, spec).unwrap()).value < 1e-12);
                assert!(image.support().all(|c| c
                    .bounds()
                    .is_none_or(|(lo, hi)| lo >= 0 && hi < i64::from(n))));
            }
        }
    }

    #[test]
    fn product_coupling_image_is_uniform_not_trivial() {
        for n in 1..=4 {
            let k = coupling_measure(n, &CouplingSpec::product()).unwrap();
            let image = push_omega(&k);
            assert_eq!(image.len() as u64, k_set_len(n));
            assert!(image
                .iter()
                .all(|(_, m)| (m - (-(f64::from(n))).exp2()).abs() < 1e-15));
            assert_ne!(image, SparseMeasure::dirac(Configuration::empty()));
        }
    }

    #[test]
    fn prescribed_image_validation() {
        let rho = SparseMeasure::dirac(c("{3}"));
        assert!(CouplingSpec::product()
            .with(3, CouplingKind::PrescribedImage(rho.clone()))
            .is_err());
        assert!(CouplingSpec::product()
            .with(4, CouplingKind::PrescribedImage(rho))
            .is_ok());
        let trunc = SparseMeasure::from_entries([(c("{0}"), 0.5)], 0.5).unwrap();
        assert!(CouplingSpec::product()
            .with(2, CouplingKind::PrescribedImage(trunc))
            .is_err());
    }

    #[test]
    fn coupling_spec_parsing() {
        let s: CouplingSpec = "transposition@1+diagonal".parse().unwrap();
        assert_eq!(s.default_kind(), DefaultCoupling::Diagonal);
        assert_eq!(s.kind_at(1), &CouplingKind::Transposition);
        assert_eq!(s.kind_at(7), &CouplingKind::Diagonal);
        assert_eq!(s.non_diagonal_indices(), Some(vec![1]));
        let p: CouplingSpec = "product".parse().unwrap();
        assert_eq!(p.non_product_indices(), Some(vec![]));
        assert_eq!(p.non_diagonal_indices(), None);
        assert!("transposition@2".parse::<CouplingSpec>().is_err());
        assert!("product+diagonal".parse::<CouplingSpec>().is_err());
        assert!("swap@1".parse::<CouplingSpec>().is_err());
        let img = CouplingSpec::parse_with("image@3:rho.csv", |path| {
            assert_eq!(path, "rho.csv");
            Ok(SparseMeasure::dirac(c("{0,2}")))
        })
        .unwrap();
        assert_eq!(img.non_product_indices(), Some(vec![3]));
    }

    #[test]
    fn mu_tilde_marginals() {
        let alpha = AlphaSpec::Finite(vec![0.25, 0.25, 0.5]);
        let mt = mu_tilde(&alpha, &CouplingSpec::product(), None).unwrap();
        let mu = mu_alpha(&alpha, None).unwrap();
        assert!(tv(&push_pi(&mt), &mu).value < 1e-12);
        assert!(tv(&push_pi_prime(&mt), &mu).value < 1e-12);

        let spec = CouplingSpec::product()
            .with(1, CouplingKind::Transposition)
            .unwrap();
        let mt = mu_tilde(&AlphaSpec::dirac(1), &spec, None).unwrap();
        assert_eq!(
            crate::measures::push_pibar(&mt),
            SparseMeasure::dirac(LampElement::new(-1, Configuration::unit(0)))
        );
    }

    #[test]
    fn theorem3_configuration_image() {
        let spec = CouplingSpec::diagonal()
            .with(1, CouplingKind::Transposition)
            .unwrap();
        let mt = mu_tilde(&AlphaSpec::Zeta2, &spec, Some(12)).unwrap();
        let bar = crate::measures::push_pibar(&mt);
        let a1 = ZETA2_C;
        let d = zeta2_tail(12);
        assert_eq!(bar.len(), 2);
        assert!((bar.mass(&LampElement::new(-1, Configuration::unit(0))) - a1).abs() < 1e-12);
        assert!(
            (bar.mass(&LampElement::new(-1, Configuration::empty())) - (1.0 - a1 - d)).abs()
                < 1e-12
        );
        assert!((bar.defect() - d).abs() < 1e-15);
        let closed = mu_bar(&AlphaSpec::Zeta2, &spec, Some(12)).unwrap();
        assert!(tv(&bar, &closed).value < 1e-12);
    }

    #[test]
    fn product_default_is_over_budget_at_twelve() {
        let err = mu_tilde(&AlphaSpec::Zeta2, &CouplingSpec::product(), Some(12)).unwrap_err();
        assert!(err.is_budget());
    }

    #[test]
    fn lambda_power_matches_generic_convolution() {
        let cases = [
            (AlphaSpec::dirac(1), None, 6),
            (AlphaSpec::Finite(vec![0.2, 0.3, 0.5]), None, 4),
            (AlphaSpec::Zeta2, Some(4), 3),
            (AlphaSpec::Geometric, Some(3), 4),
        ];
        for (alpha, n, t) in cases {
            let mu = mu_alpha(&alpha, n).unwrap();
            let generic = convolve_power(&mu, t, DEFAULT_BUDGET).unwrap();
            assert!(generic.support().all(|g| g.pos == -(t as i64)));
            let lamps = generic.map(|g| g.lamps.clone());
            let fast = lambda_power(&alpha, n, t, DEFAULT_BUDGET).unwrap();
            assert!(tv(&lamps, &fast).value < 1e-12, "{alpha} t={t}");
            assert_eq!(lamps.len(), fast.len());
            assert!((lamps.defect() - fast.defect()).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_power_rejects_oversized_windows() {
        assert!(lambda_power(&AlphaSpec::Zeta2, Some(20), 8, DEFAULT_BUDGET)
            .unwrap_err()
            .is_budget());
        assert!(lambda_power(&AlphaSpec::dirac(1), None, 12, 1000)
            .unwrap_err()
            .is_budget());
    }

    #[test]
    fn truncated_entropy_matches_partial_entropy() {
        for n in [3u32, 6, 9] {
            let mu = mu_alpha(&AlphaSpec::Zeta2, Some(n)).unwrap();
            let direct = crate::measures::partial_entropy(&mu);
            assert!((direct - truncated_mu_entropy(&AlphaSpec::Zeta2, n)).abs() < 1e-12);
        }
    }

    pub(crate) fn random_image(rng: &mut ChaCha8Rng, n: u32) -> SparseMeasure<Configuration> {
        use rand::Rng;
        let base = if n == 1 {
            vec![Configuration::empty(), Configuration::unit(0)]
        } else {
            phi0(n - 1).unwrap()
        };
        let atoms: Vec<(Configuration, f64)> = base
            .into_iter()
            .filter_map(|c| rng.gen_bool(0.6).then(|| (c, rng.gen_range(0.05..1.0))))
            .collect();
        let atoms = if atoms.is_empty() {
            vec![(Configuration::unit(0), 1.0)]
        } else {
            atoms
        };
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        SparseMeasure::from_entries(atoms.into_iter().map(|(c, m)| (c, m / total)), 0.0).unwrap()
    }
}
