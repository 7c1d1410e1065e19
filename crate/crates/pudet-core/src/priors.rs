//! Class-prior determination: grid-search selection by validation
//! recall, and the per-batch dynamic update of the multi-class priors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ClassPriors;
use crate::parallel::par_map;

/// Priors below this floor are raised to keep the loss well-defined
/// under degenerate detector states.
pub const PRIOR_FLOOR: f64 = 1e-4;
/// Proportional cap applied to the dynamic priors when their sum would
/// otherwise reach 1.
pub const PRIOR_SUM_CAP: f64 = 0.999;

/// Inclusive arithmetic candidate grid for the prior search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl PriorGrid {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.start && self.start <= self.stop && self.stop < 1.0) {
            return Err(Error::Config(format!(
                "prior grid needs 0 < start <= stop < 1, got [{}, {}]",
                self.start, self.stop
            )));
        }
        if self.step <= 0.0 {
            return Err(Error::Config(format!(
                "prior grid step {} must be positive",
                self.step
            )));
        }
        Ok(())
    }
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// Candidate priors: start, start+step, ..., stop (inclusive), rounded
/// to 12 decimals to kill float drift.
pub fn candidates(grid: &PriorGrid) -> Result<Vec<f64>> {
    grid.validate()?;
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let v = round12(grid.start + k as f64 * grid.step);
        if v > grid.stop + 1e-12 {
            break;
        }
        out.push(v);
        k += 1;
    }
    Ok(out)
}

/// Trains one model per candidate prior and picks the one with the best
/// validation recall (ties go to the smaller prior). Candidates train
/// independently, in parallel under the `parallel` feature.
///
/// Returns the selected prior and the full (prior, recall) table.
pub fn select_prior<Model, TrainFn, RecallFn>(
    train_fn: TrainFn,
    eval_recall_fn: RecallFn,
    grid: &PriorGrid,
) -> Result<(f64, Vec<(f64, f64)>)>
where
    Model: Send,
    TrainFn: Fn(f64) -> Result<Model> + Send + Sync,
    RecallFn: Fn(&Model) -> Result<f64> + Send + Sync,
{
    let pis = candidates(grid)?;
    if pis.is_empty() {
        return Err(Error::Usage("prior grid produced no candidates".into()));
    }
    let table: Vec<(f64, f64)> = par_map(pis, |pi| -> Result<(f64, f64)> {
        let model = train_fn(pi)?;
        Ok((pi, eval_recall_fn(&model)?))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut best = table[0];
    for &(pi, recall) in &table[1..] {
        if recall > best.1 {
            best = (pi, recall);
        }
    }
    Ok((best.0, table))
}

/// Symmetric starting point for the dynamic multi-class priors: every
/// class gets π₁ until the first batch update, capped so the sum stays
/// below 1.
pub fn initial_multiclass_priors(pi1: f64, num_positive: usize) -> Result<ClassPriors> {
    if !(0.0 < pi1 && pi1 < 1.0) {
        return Err(Error::Config(format!("class prior {pi1} outside (0, 1)")));
    }
    floor_and_cap(pi1, vec![pi1; num_positive])
}

/// Per-batch dynamic update: π_m = π₁·N_m/N₁ for m ≠ 1, with π₁ fixed.
/// `counts[m-1]` is the detected-instance count of class m. A batch
/// with N₁ = 0 keeps the previous priors (the update is undefined);
/// zero counts elsewhere floor at [`PRIOR_FLOOR`].
pub fn update_multiclass_priors(
    pi1: f64,
    counts: &[u64],
    previous: &ClassPriors,
) -> Result<ClassPriors> {
    if !(0.0 < pi1 && pi1 < 1.0) {
        return Err(Error::Config(format!("class prior {pi1} outside (0, 1)")));
    }
    if counts.len() != previous.num_positive_classes() {
        return Err(Error::Usage(format!(
            "{} counts supplied for {} positive classes",
            counts.len(),
            previous.num_positive_classes()
        )));
    }
    let n1 = counts[0];
    if n1 == 0 {
        return Ok(previous.clone());
    }
    let mut values = Vec::with_capacity(counts.len());
    values.push(pi1);
    for &nm in &counts[1..] {
        // the ratio and the 12-decimal rounding make the update exactly
        // scale-invariant in the counts
        values.push(round12(pi1 * (nm as f64 / n1 as f64)));
    }
    floor_and_cap(pi1, values)
}

/// Applies the floor, then proportionally rescales the non-leading
/// priors if the total would reach the cap; π₁ (values[0]) is never
/// rescaled.
fn floor_and_cap(pi1: f64, mut values: Vec<f64>) -> Result<ClassPriors> {
    for v in values.iter_mut() {
        *v = v.max(PRIOR_FLOOR).min(1.0 - PRIOR_FLOOR);
    }
    values[0] = pi1;
    let others: f64 = values[1..].iter().sum();
    if pi1 + others >= PRIOR_SUM_CAP {
        let budget = PRIOR_SUM_CAP - pi1;
        if budget > 0.0 && others > 0.0 {
            let scale = budget / others;
            for v in values[1..].iter_mut() {
                *v = (*v * scale).max(PRIOR_FLOOR);
            }
        } else {
            for v in values[1..].iter_mut() {
                *v = PRIOR_FLOOR;
            }
        }
    }
    ClassPriors::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn candidates_paper_grids() {
        let grid = PriorGrid {
            start: 0.025,
            stop: 0.050,
            step: 0.005,
        };
        assert_eq!(
            candidates(&grid).unwrap(),
            vec![0.025, 0.030, 0.035, 0.040, 0.045, 0.050]
        );

        let singleton = PriorGrid {
            start: 0.3,
            stop: 0.3,
            step: 0.05,
        };
        assert_eq!(candidates(&singleton).unwrap(), vec![0.3]);

        let wide = PriorGrid {
            start: 0.1,
            stop: 0.4,
            step: 0.05,
        };
        assert_eq!(candidates(&wide).unwrap().len(), 7);
    }

    #[test]
    fn select_prior_argmax_and_ties() {
        let grid = PriorGrid {
            start: 0.1,
            stop: 0.3,
            step: 0.1,
        };
        let recalls = [0.5, 0.7, 0.6];
        let (best, table) = select_prior(
            |pi| Ok(pi),
            |&pi| Ok(recalls[((pi - 0.1) / 0.1).round() as usize]),
            &grid,
        )
        .unwrap();
        assert_eq!(best, 0.2);
        assert_eq!(table.len(), 3);

        let (tied, _) = select_prior(|pi| Ok(pi), |_| Ok(0.5), &grid).unwrap();
        assert_eq!(tied, 0.1, "ties go to the smallest prior");
    }

    #[test]
    fn select_prior_is_deterministic() {
        let grid = PriorGrid {
            start: 0.05,
            stop: 0.25,
            step: 0.05,
        };
        let run = || {
            select_prior(
                |pi| Ok(pi),
                |&pi| Ok((pi * 37.0).sin().abs()),
                &grid,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn update_paper_example() {
        let prev = initial_multiclass_priors(0.3, 3).unwrap();
        let updated = update_multiclass_priors(0.3, &[10, 5, 2], &prev).unwrap();
        assert_eq!(updated.values(), &[0.3, 0.15, 0.06]);

        let scaled = update_multiclass_priors(0.3, &[70, 35, 14], &prev).unwrap();
        assert_eq!(updated.values(), scaled.values(), "scale invariance");
    }

    #[test]
    fn update_floors_zero_counts() {
        let prev = initial_multiclass_priors(0.3, 2).unwrap();
        let updated = update_multiclass_priors(0.3, &[10, 0], &prev).unwrap();
        assert_eq!(updated.values(), &[0.3, PRIOR_FLOOR]);
    }

    #[test]
    fn update_with_zero_leading_count_keeps_previous() {
        let prev = update_multiclass_priors(
            0.3,
            &[10, 5],
            &initial_multiclass_priors(0.3, 2).unwrap(),
        )
        .unwrap();
        let updated = update_multiclass_priors(0.3, &[0, 50], &prev).unwrap();
        assert_eq!(updated, prev);
    }

    #[test]
    fn update_caps_runaway_counts() {
        let prev = initial_multiclass_priors(0.3, 2).unwrap();
        // N₂ ≫ N₁ would push π₂ past 1 without the cap
        let updated = update_multiclass_priors(0.3, &[1, 400], &prev).unwrap();
        let sum: f64 = updated.values().iter().sum();
        assert!(sum < 1.0);
        assert_eq!(updated.values()[0], 0.3, "π₁ never rescaled");
    }

    proptest! {
        #[test]
        fn candidates_strictly_increasing_in_unit_interval(
            start in 0.01..0.5f64, span in 0.0..0.4f64, step in 0.005..0.1f64,
        ) {
            let grid = PriorGrid { start, stop: start + span, step };
            let cs = candidates(&grid).unwrap();
            prop_assert!(!cs.is_empty());
            for w in cs.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            prop_assert!(cs.iter().all(|&c| 0.0 < c && c < 1.0));
        }

        #[test]
        fn update_always_satisfies_prior_invariants(
            pi1 in 0.01..0.95f64,
            counts in proptest::collection::vec(0u64..10_000, 1..6),
        ) {
            let prev = initial_multiclass_priors(pi1, counts.len()).unwrap();
            let updated = update_multiclass_priors(pi1, &counts, &prev).unwrap();
            let vs = updated.values();
            prop_assert!(vs.iter().all(|&v| 0.0 < v && v < 1.0));
            prop_assert!(vs.iter().sum::<f64>() < 1.0);
        }

        #[test]
        fn update_scale_invariant(
            pi1 in 0.05..0.6f64,
            counts in proptest::collection::vec(1u64..500, 2..5),
            factor in 2u64..9,
        ) {
            let prev = initial_multiclass_priors(pi1, counts.len()).unwrap();
            let base = update_multiclass_priors(pi1, &counts, &prev).unwrap();
            let scaled_counts: Vec<u64> = counts.iter().map(|&c| c * factor).collect();
            let scaled = update_multiclass_priors(pi1, &scaled_counts, &prev).unwrap();
            prop_assert_eq!(base.values(), scaled.values());
        }
    }
}
