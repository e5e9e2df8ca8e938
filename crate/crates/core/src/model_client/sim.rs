//! Seeded simulated model. Serves as the ground-truth oracle for metric
//! recovery tests: its flip probability under injection is exactly the
//! configured susceptibility.

use rand::Rng;

use crate::dataset::Item;
use crate::seed;

use super::{ClientError, SimParams};

/// Produce a raw response for the item, deterministic per
/// `(item id, seed, ordinal)`.
///
/// Rolls, in order: with probability `noise` a uniformly random option;
/// otherwise, when a target is injected, with probability `susceptibility`
/// the injected target; otherwise with probability `base_accuracy` the
/// correct answer, else a uniformly random wrong option.
pub fn simulate(
    item: &Item,
    injected_target: Option<&str>,
    params: &SimParams,
    base_seed: u64,
    ordinal: u64,
) -> Result<String, ClientError> {
    params.validate()?;
    let mut rng = seed::stream(base_seed, &["simulate", &item.id], ordinal);
    if rng.random_bool(params.noise) {
        let pick = rng.random_range(0..item.options.len());
        return Ok(item.options[pick].token.clone());
    }
    if let Some(target) = injected_target {
        if rng.random_bool(params.susceptibility) {
            return Ok(target.to_string());
        }
    }
    if rng.random_bool(params.base_accuracy) {
        return Ok(item.answer_key.clone());
    }
    let wrong: Vec<&str> = item
        .options
        .iter()
        .map(|c| c.token.as_str())
        .filter(|t| *t != item.answer_key)
        .collect();
    let pick = rng.random_range(0..wrong.len());
    Ok(wrong[pick].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::mc_item;

    #[test]
    fn full_susceptibility_always_adopts_target() {
        let item = mc_item("q1", 4, 0);
        let params = SimParams { base_accuracy: 1.0, susceptibility: 1.0, noise: 0.0 };
        for ord in 0..50 {
            assert_eq!(simulate(&item, Some("B"), &params, 3, ord).unwrap(), "B");
        }
    }

    #[test]
    fn zero_susceptibility_perfect_accuracy_answers_key() {
        let item = mc_item("q1", 4, 2);
        let params = SimParams { base_accuracy: 1.0, susceptibility: 0.0, noise: 0.0 };
        for ord in 0..50 {
            assert_eq!(simulate(&item, Some("B"), &params, 3, ord).unwrap(), "C");
        }
    }

    #[test]
    fn susceptibility_recovered_by_monte_carlo() {
        let item = mc_item("q1", 4, 0);
        let params = SimParams { base_accuracy: 1.0, susceptibility: 0.7, noise: 0.0 };
        let trials = 10_000;
        let mut adopted = 0;
        for s in 0..trials {
            if simulate(&item, Some("C"), &params, s, 0).unwrap() == "C" {
                adopted += 1;
            }
        }
        let frac = adopted as f64 / trials as f64;
        assert!((frac - 0.7).abs() < 0.02, "adoption fraction {frac}");
    }

    #[test]
    fn bit_identical_across_calls() {
        let item = mc_item("q1", 5, 1);
        let params = SimParams { base_accuracy: 0.5, susceptibility: 0.3, noise: 0.2 };
        for ord in 0..20 {
            let a = simulate(&item, Some("D"), &params, 11, ord).unwrap();
            let b = simulate(&item, Some("D"), &params, 11, ord).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let item = mc_item("q1", 4, 0);
        let params = SimParams { base_accuracy: 1.5, susceptibility: 0.0, noise: 0.0 };
        assert!(simulate(&item, None, &params, 0, 0).is_err());
    }

    #[test]
    fn base_accuracy_recovered_across_items() {
        let params = SimParams { base_accuracy: 0.9, susceptibility: 0.0, noise: 0.0 };
        let n = 10_000;
        let mut correct = 0;
        for i in 0..n {
            let item = mc_item(&format!("acc-{i}"), 4, i % 4);
            if simulate(&item, None, &params, 42, 0).unwrap() == item.answer_key {
                correct += 1;
            }
        }
        let frac = correct as f64 / n as f64;
        assert!((frac - 0.9).abs() < 0.02, "baseline accuracy {frac}");
    }
}
