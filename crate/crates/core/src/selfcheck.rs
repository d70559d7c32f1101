//! Randomized self-test of the algebra and of the basic measure operations.
//!
//! The lamplighter law is taken through [`LampLaw`] so that a deliberately
//! broken law can be substituted and shown to be caught.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::constructions::{k_set, kappa, lambda_alpha, AlphaSpec};
use crate::groups::{
    embed_pair, hom_pi, hom_pi_prime, hom_pibar, random, Configuration, GroupElement, LampElement,
    SemiDiagElement,
};
use crate::measures::{convolve, entropy, reflect, tv};

/// Multiplication and inversion on the lamplighter group.
pub trait LampLaw: Sync {
    fn mul(&self, a: &LampElement, b: &LampElement) -> LampElement;
    fn inv(&self, a: &LampElement) -> LampElement;
}

/// `(n₁, φ₁)(n₂, φ₂) = (n₁ + n₂, φ₁ + T^{n₁}φ₂)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardLaw;

impl LampLaw for StandardLaw {
    fn mul(&self, a: &LampElement, b: &LampElement) -> LampElement {
        crate::groups::lamp_mul(a, b)
    }

    fn inv(&self, a: &LampElement) -> LampElement {
        crate::groups::lamp_inv(a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: u64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn first_failure(&self) -> Option<&'static str> {
        self.checks.iter().find(|c| !c.passed).map(|c| c.name)
    }

    pub fn passed(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn total_cases(&self) -> u64 {
        self.checks.iter().map(|c| c.cases).sum()
    }
}

/// Runs every check with `samples` random instances each. Checks keep
/// running after a failure so the report is complete; associativity is
/// always the first entry.
pub fn run_selfcheck<L: LampLaw>(law: &L, samples: u64, seed: u64) -> SelfCheckReport {
    let mut checker = Checker {
        rng: ChaCha8Rng::seed_from_u64(seed),
        checks: Vec::new(),
    };
    let mut check =
        |name, cases, ok: &mut dyn FnMut(&mut ChaCha8Rng) -> bool| checker.run(name, cases, ok);
    let radius = 12;

    check("associativity", samples, &mut |r| {
        let (a, b, c) = (
            random::lamp(r, radius),
            random::lamp(r, radius),
            random::lamp(r, radius),
        );
        law.mul(&law.mul(&a, &b), &c) == law.mul(&a, &law.mul(&b, &c))
    });
    check("identity", samples, &mut |r| {
        let a = random::lamp(r, radius);
        let e = LampElement::identity();
        law.mul(&a, &e) == a && law.mul(&e, &a) == a
    });
    check("inverse", samples, &mut |r| {
        let a = random::lamp(r, radius);
        law.mul(&a, &law.inv(&a)).is_identity() && law.mul(&law.inv(&a), &a).is_identity()
    });
    check("semidiagonal group axioms", samples, &mut |r| {
        let (a, b, c) = (
            random::semidiag(r, radius),
            random::semidiag(r, radius),
            random::semidiag(r, radius),
        );
        let assoc = a.try_mul(&b).and_then(|ab| ab.try_mul(&c))
            == b.try_mul(&c).and_then(|bc| a.try_mul(&bc));
        let inv = a
            .try_inv()
            .and_then(|i| a.try_mul(&i))
            .map(|x| x.is_identity());
        assoc && inv == Ok(true)
    });
    check("shift automorphism", samples, &mut |r| {
        let (phi, psi) = (random::config(r, radius), random::config(r, radius));
        let n = rand::Rng::gen_range(r, -20..=20);
        let m = rand::Rng::gen_range(r, -20..=20);
        phi.add(&psi).shift(n) == phi.shift(n).add(&psi.shift(n))
            && phi.shift(n).shift(m) == phi.shift(n + m)
    });
    check("homomorphisms", samples, &mut |r| {
        let (a, b) = (random::semidiag(r, radius), random::semidiag(r, radius));
        let ab: SemiDiagElement = a.try_mul(&b).expect("small elements");
        let lamp = |x: &LampElement, y: &LampElement| law.mul(x, y);
        hom_pi(&ab) == lamp(&hom_pi(&a), &hom_pi(&b))
            && hom_pi_prime(&ab) == lamp(&hom_pi_prime(&a), &hom_pi_prime(&b))
            && hom_pibar(&ab) == lamp(&hom_pibar(&a), &hom_pibar(&b))
            && embed_pair(&ab) == embed_pair(&a).try_mul(&embed_pair(&b)).expect("small")
    });
    let small = (samples / 100).max(1);
    let mut n = 0u32;
    check("kappa normalization", 8, &mut |_| {
        n += 1;
        let mass = kappa(n).expect("small n").total_mass();
        k_set(n).expect("small n").len() == 1 << n && (mass - 1.0).abs() < 1e-12
    });
    check("convolution associativity", small, &mut |r| {
        let m = |r: &mut ChaCha8Rng| {
            let w: Vec<f64> = (0..3).map(|_| rand::Rng::gen_range(r, 0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            crate::constructions::mu_alpha(
                &AlphaSpec::Finite(w.iter().map(|x| x / s).collect()),
                None,
            )
            .expect("small alpha")
        };
        let (a, b, c) = (m(r), m(r), m(r));
        let left = convolve(&convolve(&a, &b).expect("small"), &c).expect("small");
        let right = convolve(&a, &convolve(&b, &c).expect("small")).expect("small");
        tv(&left, &right).value < 1e-12
    });
    check("reflection entropy", small, &mut |r| {
        let w: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(r, 0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        let lambda = lambda_alpha(&AlphaSpec::Finite(w.iter().map(|x| x / s).collect()), None)
            .expect("small alpha");
        let h = entropy(&lambda).expect("exact");
        let hr = entropy(&reflect(&lambda).expect("finite")).expect("exact");
        (h - hr).abs() < 1e-9 && lambda.support().all(|c: &Configuration| c.range() <= 4)
    });

    SelfCheckReport {
        seed,
        checks: checker.checks,
    }
}

struct Checker {
    rng: ChaCha8Rng,
    checks: Vec<CheckResult>,
}

impl Checker {
    fn run(&mut self, name: &'static str, cases: u64, ok: &mut dyn FnMut(&mut ChaCha8Rng) -> bool) {
        let rng = &mut self.rng;
        let passed = (0..cases).all(|_| ok(rng));
        self.checks.push(CheckResult {
            name,
            cases,
            passed,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct SwappedShift;

    impl LampLaw for SwappedShift {
        fn mul(&self, a: &LampElement, b: &LampElement) -> LampElement {
            LampElement::new(a.pos + b.pos, a.lamps.add(&b.lamps.shift(b.pos)))
        }
        fn inv(&self, a: &LampElement) -> LampElement {
            crate::groups::lamp_inv(a)
        }
    }

    #[test]
    fn standard_law_passes() {
        let report = run_selfcheck(&StandardLaw, 2000, 1);
        assert!(report.passed(), "{:?}", report.first_failure());
        assert_eq!(report.checks[0].name, "associativity");
        assert!(report.total_cases() > 10_000);
    }

    #[test]
    fn broken_law_fails_associativity() {
        let report = run_selfcheck(&SwappedShift, 2000, 1);
        assert_eq!(report.first_failure(), Some("associativity"));
    }
}
