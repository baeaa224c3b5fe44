//! Dice score and its small/large split over a test set.

use rayon::prelude::*;

use crate::difficulty::{difficulty_factor, DifficultyConfig};
use crate::error::Result;
use crate::mask::Mask;
use crate::model::{forward, ArchDescriptor, ParamVector};
use crate::scalar::{pairwise_mean, Scalar};
use crate::synth::Sample;

/// `2|P∩G| / (|P| + |G|)`, and `1` when both masks are empty.
pub fn dice_score<T: Scalar>(pred: &Mask, gt: &Mask) -> Result<T> {
    pred.check_shape(gt)?;
    let mut inter = 0usize;
    let mut p = 0usize;
    let mut g = 0usize;
    for (&a, &b) in pred.bits().iter().zip(gt.bits()) {
        p += usize::from(a);
        g += usize::from(b);
        inter += usize::from(a && b);
    }
    if p + g == 0 {
        return Ok(T::one());
    }
    Ok(T::from_usize_lossy(2 * inter) / T::from_usize_lossy(p + g))
}

/// Ground-truth size class used to split the Dice score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeClass {
    Small,
    Large,
    Empty,
}

pub fn size_class<T: Scalar>(gt: &Mask, difficulty: &DifficultyConfig<T>) -> SizeClass {
    if gt.is_empty() {
        SizeClass::Empty
    } else if difficulty_factor(gt, difficulty).is_small {
        SizeClass::Small
    } else {
        SizeClass::Large
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport<T> {
    /// Mean Dice over every sample.
    pub dice: T,
    /// Mean over samples whose ground truth classifies small; `None` if there are none.
    pub dice_s: Option<T>,
    /// Mean over non-empty samples that do not classify small.
    pub dice_l: Option<T>,
    pub n_total: usize,
    pub n_small: usize,
    pub n_large: usize,
    pub n_empty: usize,
}

/// Aggregates per-sample `(dice, class)` pairs in the given order.
pub fn summarize<T: Scalar>(per_sample: &[(T, SizeClass)]) -> EvalReport<T> {
    let all: Vec<T> = per_sample.iter().map(|&(d, _)| d).collect();
    let of = |class: SizeClass| -> Vec<T> {
        per_sample
            .iter()
            .filter(|&&(_, c)| c == class)
            .map(|&(d, _)| d)
            .collect()
    };
    let small = of(SizeClass::Small);
    let large = of(SizeClass::Large);
    EvalReport {
        dice: pairwise_mean(&all).unwrap_or(T::zero()),
        dice_s: pairwise_mean(&small),
        dice_l: pairwise_mean(&large),
        n_total: per_sample.len(),
        n_small: small.len(),
        n_large: large.len(),
        n_empty: per_sample.len() - small.len() - large.len(),
    }
}

/// Predicts every test sample, binarises at `threshold`, and reports Dice
/// overall and split by the ground-truth size class.
pub fn evaluate<T: Scalar>(
    arch: &ArchDescriptor,
    params: &ParamVector<T>,
    test_set: &[Sample<T>],
    difficulty: &DifficultyConfig<T>,
    threshold: T,
) -> Result<EvalReport<T>> {
    let per_sample = test_set
        .par_iter()
        .map(|s| {
            let pred = forward(arch, params, &s.image).threshold(threshold);
            Ok((dice_score(&pred, &s.mask)?, size_class(&s.mask, difficulty)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&per_sample))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_examples() {
        let a = Mask::from_ascii(&["##..", "...."]).unwrap();
        let b = Mask::from_ascii(&["....", "..##"]).unwrap();
        let c = Mask::from_ascii(&[".#..", "..#."]).unwrap();
        assert_eq!(dice_score::<f64>(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_score::<f64>(&a, &b).unwrap(), 0.0);
        assert_eq!(dice_score::<f64>(&a, &c).unwrap(), 0.5);
        assert_eq!(dice_score::<f64>(&Mask::zeros(2, 2), &Mask::zeros(2, 2)).unwrap(), 1.0);
        assert!(dice_score::<f64>(&a, &Mask::zeros(4, 2)).is_err());
    }

    #[test]
    fn summary_partitions_by_class() {
        let r = summarize(&[(1.0f64, SizeClass::Small), (0.0, SizeClass::Large)]);
        assert_eq!(r.dice, 0.5);
        assert_eq!(r.dice_s, Some(1.0));
        assert_eq!(r.dice_l, Some(0.0));
        assert_eq!((r.n_total, r.n_small, r.n_large, r.n_empty), (2, 1, 1, 0));

        let r = summarize(&[(1.0f64, SizeClass::Empty), (0.0, SizeClass::Empty)]);
        assert_eq!(r.dice, 0.5);
        assert_eq!((r.dice_s, r.dice_l), (None, None));
        assert_eq!(r.n_empty, 2);
    }
}
