//! Element types for the lamp group Φ, the lamplighter group `ℤ ⋉ Φ`, the
//! semi-diagonal group `ℤ ⋉ (Φ × Φ)` and direct products, together with the
//! homomorphisms between them.
//!
//! Every type here is an immutable value in canonical form, so equality,
//! ordering and hashing are structural.

use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("integer overflow in group coordinate")]
    Overflow,
    #[error("cannot parse {kind} from {text:?}: {reason}")]
    Parse {
        kind: &'static str,
        text: String,
        reason: String,
    },
}

fn parse_err(kind: &'static str, text: &str, reason: impl Into<String>) -> GroupError {
    GroupError::Parse {
        kind,
        text: text.to_string(),
        reason: reason.into(),
    }
}

/// Common interface of the concrete groups used by the measure layer.
pub trait GroupElement:
    Clone + Eq + Ord + Hash + fmt::Debug + fmt::Display + FromStr<Err = GroupError> + Send + Sync
{
    fn identity() -> Self;
    fn try_mul(&self, other: &Self) -> Result<Self, GroupError>;
    fn try_inv(&self) -> Result<Self, GroupError>;

    fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

/// A finitely supported function `ℤ → ℤ₂`, stored as its strictly increasing
/// list of lit positions. The empty list is the identity θ.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Configuration {
    lit: Vec<i64>,
}

impl Configuration {
    pub fn empty() -> Self {
        Self { lit: Vec::new() }
    }

    /// The single lamp ε_n.
    pub fn unit(n: i64) -> Self {
        Self { lit: vec![n] }
    }

    /// Builds a configuration from arbitrary positions; repeated positions
    /// cancel in pairs.
    pub fn from_positions<I: IntoIterator<Item = i64>>(positions: I) -> Self {
        let mut lit: Vec<i64> = positions.into_iter().collect();
        lit.sort_unstable();
        let mut out: Vec<i64> = Vec::with_capacity(lit.len());
        for p in lit {
            if out.last() == Some(&p) {
                out.pop();
            } else {
                out.push(p);
            }
        }
        Self { lit: out }
    }

    /// Caller guarantees `lit` is strictly increasing.
    pub(crate) fn from_sorted_unchecked(lit: Vec<i64>) -> Self {
        debug_assert!(lit.windows(2).all(|w| w[0] < w[1]));
        Self { lit }
    }

    pub fn positions(&self) -> &[i64] {
        &self.lit
    }

    pub fn is_empty(&self) -> bool {
        self.lit.is_empty()
    }

    pub fn len(&self) -> usize {
        self.lit.len()
    }

    pub fn contains(&self, z: i64) -> bool {
        self.lit.binary_search(&z).is_ok()
    }

    /// `max |n|` over the support, and 0 for θ.
    pub fn range(&self) -> u64 {
        match (self.lit.first(), self.lit.last()) {
            (Some(a), Some(b)) => a.unsigned_abs().max(b.unsigned_abs()),
            _ => 0,
        }
    }

    /// Smallest and largest lit positions.
    pub fn bounds(&self) -> Option<(i64, i64)> {
        Some((*self.lit.first()?, *self.lit.last()?))
    }

    /// Tⁿφ, i.e. `z ↦ φ(z − n)`.
    pub fn try_shift(&self, n: i64) -> Result<Self, GroupError> {
        let lit = self
            .lit
            .iter()
            .map(|&z| z.checked_add(n).ok_or(GroupError::Overflow))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { lit })
    }

    pub fn shift(&self, n: i64) -> Self {
        self.try_shift(n).expect("configuration shift overflow")
    }

    /// Pointwise sum mod 2 (symmetric difference of supports).
    pub fn add(&self, other: &Self) -> Self {
        let (a, b) = (&self.lit, &other.lit);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Self { lit: out }
    }

    /// Restriction to the integer window `[lo..hi]`.
    pub fn restrict(&self, lo: i64, hi: i64) -> Self {
        let start = self.lit.partition_point(|&z| z < lo);
        let end = self.lit.partition_point(|&z| z <= hi);
        Self {
            lit: self.lit[start..end.max(start)].to_vec(),
        }
    }
}

/// Tⁿφ.
pub fn shift(phi: &Configuration, n: i64) -> Configuration {
    phi.shift(n)
}

/// φ + ψ in Φ.
pub fn add_configs(phi: &Configuration, psi: &Configuration) -> Configuration {
    phi.add(psi)
}

impl GroupElement for Configuration {
    fn identity() -> Self {
        Self::empty()
    }

    fn try_mul(&self, other: &Self) -> Result<Self, GroupError> {
        Ok(self.add(other))
    }

    fn try_inv(&self) -> Result<Self, GroupError> {
        Ok(self.clone())
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, z) in self.lit.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{z}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Configuration {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, GroupError> {
        const KIND: &str = "configuration";
        let inner = s
            .trim()
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(|| parse_err(KIND, s, "expected braces"))?;
        if inner.trim().is_empty() {
            return Ok(Self::empty());
        }
        let mut lit = Vec::new();
        for part in inner.split(',') {
            let z: i64 = part
                .trim()
                .parse()
                .map_err(|_| parse_err(KIND, s, format!("bad position {part:?}")))?;
            if let Some(&last) = lit.last() {
                if z <= last {
                    return Err(parse_err(KIND, s, "positions must be strictly increasing"));
                }
            }
            lit.push(z);
        }
        Ok(Self { lit })
    }
}

/// Element `(n, φ)` of the lamplighter group.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LampElement {
    pub pos: i64,
    pub lamps: Configuration,
}

impl LampElement {
    pub fn new(pos: i64, lamps: Configuration) -> Self {
        Self { pos, lamps }
    }
}

impl GroupElement for LampElement {
    fn identity() -> Self {
        Self::default()
    }

    /// `(n₁, φ₁)(n₂, φ₂) = (n₁ + n₂, φ₁ + T^{n₁} φ₂)`.
    fn try_mul(&self, other: &Self) -> Result<Self, GroupError> {
        let pos = self
            .pos
            .checked_add(other.pos)
            .ok_or(GroupError::Overflow)?;
        let lamps = self.lamps.add(&other.lamps.try_shift(self.pos)?);
        Ok(Self { pos, lamps })
    }

    /// `(n, φ)⁻¹ = (−n, T^{−n} φ)`.
    fn try_inv(&self) -> Result<Self, GroupError> {
        let neg = self.pos.checked_neg().ok_or(GroupError::Overflow)?;
        Ok(Self {
            pos: neg,
            lamps: self.lamps.try_shift(neg)?,
        })
    }
}

pub fn lamp_mul(a: &LampElement, b: &LampElement) -> LampElement {
    a.try_mul(b).expect("lamplighter product overflow")
}

pub fn lamp_inv(a: &LampElement) -> LampElement {
    a.try_inv().expect("lamplighter inverse overflow")
}

impl fmt::Display for LampElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}|{})", self.pos, self.lamps)
    }
}

impl fmt::Debug for LampElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Splits `"(a|b|c)"` into its `|`-separated fields.
fn split_tuple<'a>(kind: &'static str, s: &'a str) -> Result<Vec<&'a str>, GroupError> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| parse_err(kind, s, "expected parentheses"))?;
    Ok(inner.split('|').collect())
}

impl FromStr for LampElement {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, GroupError> {
        const KIND: &str = "lamplighter element";
        let parts = split_tuple(KIND, s)?;
        if parts.len() != 2 {
            return Err(parse_err(KIND, s, "expected (n|{...})"));
        }
        let pos = parts[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(KIND, s, "bad position"))?;
        Ok(Self {
            pos,
            lamps: parts[1].parse()?,
        })
    }
}

/// Element `(n, φ, φ′)` of `ℤ ⋉ (Φ × Φ)` with ℤ acting diagonally.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SemiDiagElement {
    pub pos: i64,
    pub lamps_a: Configuration,
    pub lamps_b: Configuration,
}

impl SemiDiagElement {
    pub fn new(pos: i64, lamps_a: Configuration, lamps_b: Configuration) -> Self {
        Self {
            pos,
            lamps_a,
            lamps_b,
        }
    }
}

impl GroupElement for SemiDiagElement {
    fn identity() -> Self {
        Self::default()
    }

    fn try_mul(&self, other: &Self) -> Result<Self, GroupError> {
        let pos = self
            .pos
            .checked_add(other.pos)
            .ok_or(GroupError::Overflow)?;
        Ok(Self {
            pos,
            lamps_a: self.lamps_a.add(&other.lamps_a.try_shift(self.pos)?),
            lamps_b: self.lamps_b.add(&other.lamps_b.try_shift(self.pos)?),
        })
    }

    fn try_inv(&self) -> Result<Self, GroupError> {
        let neg = self.pos.checked_neg().ok_or(GroupError::Overflow)?;
        Ok(Self {
            pos: neg,
            lamps_a: self.lamps_a.try_shift(neg)?,
            lamps_b: self.lamps_b.try_shift(neg)?,
        })
    }
}

pub fn semidiag_mul(a: &SemiDiagElement, b: &SemiDiagElement) -> SemiDiagElement {
    a.try_mul(b).expect("semi-diagonal product overflow")
}

pub fn semidiag_inv(a: &SemiDiagElement) -> SemiDiagElement {
    a.try_inv().expect("semi-diagonal inverse overflow")
}

impl fmt::Display for SemiDiagElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}|{}|{})", self.pos, self.lamps_a, self.lamps_b)
    }
}

impl fmt::Debug for SemiDiagElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for SemiDiagElement {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, GroupError> {
        const KIND: &str = "semi-diagonal element";
        let parts = split_tuple(KIND, s)?;
        if parts.len() != 3 {
            return Err(parse_err(KIND, s, "expected (n|{...}|{...})"));
        }
        let pos = parts[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(KIND, s, "bad position"))?;
        Ok(Self {
            pos,
            lamps_a: parts[1].parse()?,
            lamps_b: parts[2].parse()?,
        })
    }
}

/// Element of a direct product `G × G′`. Printed as `[left;right]`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PairElement<A, B> {
    pub left: A,
    pub right: B,
}

impl<A, B> PairElement<A, B> {
    pub fn new(left: A, right: B) -> Self {
        Self { left, right }
    }
}

impl<A: GroupElement, B: GroupElement> GroupElement for PairElement<A, B> {
    fn identity() -> Self {
        Self::new(A::identity(), B::identity())
    }

    fn try_mul(&self, other: &Self) -> Result<Self, GroupError> {
        Ok(Self::new(
            self.left.try_mul(&other.left)?,
            self.right.try_mul(&other.right)?,
        ))
    }

    fn try_inv(&self) -> Result<Self, GroupError> {
        Ok(Self::new(self.left.try_inv()?, self.right.try_inv()?))
    }
}

impl<A: fmt::Display, B: fmt::Display> fmt::Display for PairElement<A, B> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{};{}]", self.left, self.right)
    }
}

impl<A: fmt::Display, B: fmt::Display> fmt::Debug for PairElement<A, B> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl<A, B> FromStr for PairElement<A, B>
where
    A: FromStr<Err = GroupError>,
    B: FromStr<Err = GroupError>,
{
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, GroupError> {
        const KIND: &str = "pair element";
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| parse_err(KIND, s, "expected brackets"))?;
        // element syntax never contains ';' except at nested pair boundaries,
        // so split at the top-level separator.
        let mut depth = 0i32;
        let mut split = None;
        for (i, c) in inner.char_indices() {
            match c {
                '[' => depth += 1,
                ']' => depth -= 1,
                ';' if depth == 0 => {
                    split = Some(i);
                    break;
                }
                _ => {}
            }
        }
        let i = split.ok_or_else(|| parse_err(KIND, s, "missing ';'"))?;
        Ok(Self::new(inner[..i].parse()?, inner[i + 1..].parse()?))
    }
}

/// π(n, φ, φ′) = (n, φ).
pub fn hom_pi(a: &SemiDiagElement) -> LampElement {
    LampElement::new(a.pos, a.lamps_a.clone())
}

/// π′(n, φ, φ′) = (n, φ′).
pub fn hom_pi_prime(a: &SemiDiagElement) -> LampElement {
    LampElement::new(a.pos, a.lamps_b.clone())
}

/// π̄(n, φ, φ′) = (n, φ + φ′).
pub fn hom_pibar(a: &SemiDiagElement) -> LampElement {
    LampElement::new(a.pos, a.lamps_a.add(&a.lamps_b))
}

/// Embedding of the semi-diagonal group into `𝓛 × 𝓛`.
pub fn embed_pair(a: &SemiDiagElement) -> PairElement<LampElement, LampElement> {
    PairElement::new(hom_pi(a), hom_pi_prime(a))
}

/// ω(φ, φ′) = φ + φ′.
pub fn omega(pair: &PairElement<Configuration, Configuration>) -> Configuration {
    pair.left.add(&pair.right)
}

/// Random elements for property checks.
pub mod random {
    use super::*;

    /// Configuration with support in `[-radius..radius]`, each lamp lit with
    /// probability ½.
    pub fn config<R: Rng + ?Sized>(rng: &mut R, radius: i64) -> Configuration {
        let lit = (-radius..=radius).filter(|_| rng.gen::<bool>()).collect();
        Configuration::from_sorted_unchecked(lit)
    }

    pub fn lamp<R: Rng + ?Sized>(rng: &mut R, radius: i64) -> LampElement {
        LampElement::new(rng.gen_range(-radius..=radius), config(rng, radius))
    }

    pub fn semidiag<R: Rng + ?Sized>(rng: &mut R, radius: i64) -> SemiDiagElement {
        SemiDiagElement::new(
            rng.gen_range(-radius..=radius),
            config(rng, radius),
            config(rng, radius),
        )
    }
}
