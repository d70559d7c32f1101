//! The increment swap is measure preserving: conditioned on τ ≤ T, the
//! window law of ψ_T after the swap (which is ψ_T + φ) matches the window
//! law of ψ_T on independent paths.

use lamplighter::walks::{run_path_stream, swap_transform, IncrementSampler, WalkError};
use lamplighter::{AlphaSpec, Configuration, WalkModel};
use rayon::prelude::*;

const PATHS: u64 = 100_000;
const HORIZON: u64 = 5;
const WINDOW: (i64, i64) = (-3, 3);

fn window_bits(c: &Configuration) -> usize {
    c.positions()
        .iter()
        .filter(|z| (WINDOW.0..=WINDOW.1).contains(*z))
        .map(|z| 1usize << (z - WINDOW.0))
        .sum()
}

/// Window patterns at the horizon for paths on which τ ≤ T; with `swap`,
/// the pattern of the swapped path.
fn histogram(model: &WalkModel, phi: &Configuration, seed: u64, swap: bool) -> (Vec<u64>, u64) {
    let sampler = IncrementSampler::new(model);
    let cells = 1usize << (WINDOW.1 - WINDOW.0 + 1);
    let outcomes: Vec<Option<usize>> = (0..PATHS)
        .into_par_iter()
        .map(|i| {
            let path = run_path_stream(&sampler, HORIZON, seed, i).unwrap();
            match swap_transform(&path, phi) {
                Ok((swapped, _)) => {
                    let used = if swap { &swapped } else { &path };
                    let last = used.states.last().unwrap().as_lamp().unwrap();
                    Some(window_bits(&last.lamps))
                }
                Err(WalkError::TauNotFound { .. }) => None,
                Err(e) => panic!("{e}"),
            }
        })
        .collect();
    let mut counts = vec![0u64; cells];
    let mut kept = 0;
    for k in outcomes.into_iter().flatten() {
        counts[k] += 1;
        kept += 1;
    }
    (counts, kept)
}

#[test]
fn swap_preserves_the_window_law() {
    // atoms at 1 and 2, plus a high atom at 30 that makes τ small
    let mut weights = vec![0.0; 30];
    weights[0] = 0.4;
    weights[1] = 0.3;
    weights[29] = 0.3;
    let model = WalkModel::Base(AlphaSpec::finite(weights).unwrap());
    for phi in ["{0}", "{-1,1}"] {
        let phi: Configuration = phi.parse().unwrap();
        let (swapped, n1) = histogram(&model, &phi, 0x5A, true);
        let (plain, n2) = histogram(&model, &phi, 0xA5, false);
        assert!(n1 > PATHS / 2 && n2 > PATHS / 2);
        for (k, (a, b)) in swapped.iter().zip(&plain).enumerate() {
            let p1 = *a as f64 / n1 as f64;
            let p2 = *b as f64 / n2 as f64;
            let pooled = (*a + *b) as f64 / (n1 + n2) as f64;
            let sd = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
            assert!(
                (p1 - p2).abs() <= 4.0 * sd + 1e-12,
                "phi {phi}, cell {k}: {p1} vs {p2}"
            );
        }
    }
}

#[test]
fn swapped_paths_are_translates() {
    let model = WalkModel::Base(AlphaSpec::Zeta2);
    let sampler = IncrementSampler::new(&model);
    let phi: Configuration = "{-2,0,1}".parse().unwrap();
    let mut found = 0;
    for i in 0..300 {
        let path = run_path_stream(&sampler, 200, 77, i).unwrap();
        let Ok((swapped, tau)) = swap_transform(&path, &phi) else {
            continue;
        };
        found += 1;
        for t in tau as usize..=200 {
            let a = &path.states[t].as_lamp().unwrap().lamps;
            let b = &swapped.states[t].as_lamp().unwrap().lamps;
            assert_eq!(*b, a.add(&phi));
        }
        let i = tau as usize - 1;
        assert_eq!(
            path.increments[i].step.as_lamp().unwrap().lamps.range(),
            swapped.increments[i].step.as_lamp().unwrap().lamps.range()
        );
    }
    assert!(found > 100);
}
