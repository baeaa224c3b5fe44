//! Small-lesion classification and gradient-scaling factors.
//!
//! A mask's *inverse relative area* `a = H·W / |foreground|` is mapped to a
//! difficulty `δ = tanh((log_l a)²)` when `a >= τ` and to `0` otherwise. A
//! training batch of `N` masks scales its cumulative-gradient contribution by
//! `η = 1 + (2/N)·Σδ`, which lies in `[1, 3)`.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::morphology::{dilate, erode, label_components, Connectivity, StructuringElement};
use crate::scalar::Scalar;

/// How the inverse area of a mask is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regime {
    /// Erode to separate touching lesions, then use the smallest lesion.
    #[default]
    BlobSplit,
    /// Use the whole foreground.
    WholeMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyConfig<T> {
    /// Base `l` of the logarithm, `> 1`.
    pub log_base: T,
    /// Threshold `τ` on the inverse area, `>= 1`.
    pub threshold: T,
    pub regime: Regime,
    pub erosion_iterations: usize,
    pub structuring_element: StructuringElement,
    pub connectivity: Connectivity,
}

impl<T: Scalar> DifficultyConfig<T> {
    pub fn new(log_base: T, threshold: T, regime: Regime) -> Result<Self> {
        let cfg = Self {
            log_base,
            threshold,
            regime,
            erosion_iterations: 1,
            structuring_element: StructuringElement::Square3,
            connectivity: Connectivity::Eight,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Colonoscopy-polyp setting: blob separation, `l = 100`, `τ = 150`.
    pub fn polyp() -> Self {
        Self::new(T::lit(100.0), T::lit(150.0), Regime::BlobSplit).expect("valid preset")
    }

    /// Liver-tumour setting: whole-mask area, `l = 1000`, `τ = 1000`.
    pub fn liver_tumor() -> Self {
        Self::new(T::lit(1000.0), T::lit(1000.0), Regime::WholeMask).expect("valid preset")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.log_base.is_finite() && self.log_base > T::one()) {
            return Err(Error::Validation(format!(
                "log_base must be finite and > 1, got {}",
                self.log_base
            )));
        }
        if !(self.threshold.is_finite() && self.threshold >= T::one()) {
            return Err(Error::Validation(format!(
                "threshold must be finite and >= 1, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Inverse area under this config's regime.
    pub fn inverse_area(&self, mask: &Mask) -> Result<T> {
        match self.regime {
            Regime::WholeMask => inverse_relative_area(mask),
            Regime::BlobSplit => smallest_lesion_inverse_area(mask, self),
        }
    }

    /// `tanh((log_l a)²)` without the threshold gate.
    pub fn raw_difficulty(&self, inverse_area: T) -> T {
        raw_difficulty(inverse_area, self.log_base)
    }

    /// Gated difficulty for a known inverse area.
    pub fn gated_difficulty(&self, inverse_area: T) -> T {
        if inverse_area >= self.threshold {
            self.raw_difficulty(inverse_area)
        } else {
            T::zero()
        }
    }
}

/// `tanh((log_base a)²)`; the logarithm is squared, not its argument.
pub fn raw_difficulty<T: Scalar>(inverse_area: T, log_base: T) -> T {
    debug_assert!(inverse_area >= T::one(), "inverse area below 1: {inverse_area}");
    let log = inverse_area.ln() / log_base.ln();
    (log * log).tanh()
}

/// `H·W / |foreground|`.
pub fn inverse_relative_area<T: Scalar>(mask: &Mask) -> Result<T> {
    let fg = mask.count();
    if fg == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(T::from_usize_lossy(mask.len()) / T::from_usize_lossy(fg))
}

/// Inverse area of the smallest lesion after erosion-based separation.
///
/// The mask is eroded, its components labelled, and the smallest one grown
/// back by the same number of dilations and clipped to the original mask to
/// estimate its pre-erosion area. If erosion removes everything, the smallest
/// component of the original mask is used instead.
pub fn smallest_lesion_inverse_area<T: Scalar>(mask: &Mask, cfg: &DifficultyConfig<T>) -> Result<T> {
    let area = smallest_lesion_area(mask, cfg)?;
    Ok(T::from_usize_lossy(mask.len()) / T::from_usize_lossy(area))
}

/// Estimated pixel area of the smallest lesion (see [`smallest_lesion_inverse_area`]).
pub fn smallest_lesion_area<T: Scalar>(mask: &Mask, cfg: &DifficultyConfig<T>) -> Result<usize> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let eroded = erode(mask, cfg.structuring_element, cfg.erosion_iterations);
    let labeling = label_components(&eroded, cfg.connectivity);
    match labeling.smallest() {
        Some((label, _)) => {
            let seed = labeling.component_mask(label);
            let grown = dilate(&seed, cfg.structuring_element, cfg.erosion_iterations);
            let restored = grown.intersect(mask)?;
            Ok(restored.count())
        }
        None => {
            let original = label_components(mask, cfg.connectivity);
            let (_, area) = original.smallest().expect("non-empty mask has a component");
            Ok(area)
        }
    }
}

/// Outcome of classifying one mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyResult<T> {
    /// `None` for an empty mask.
    pub inverse_area: Option<T>,
    pub is_small: bool,
    pub delta: T,
}

/// Difficulty factor `δ` of one ground-truth mask. Empty masks give `δ = 0`.
pub fn difficulty_factor<T: Scalar>(mask: &Mask, cfg: &DifficultyConfig<T>) -> DifficultyResult<T> {
    match cfg.inverse_area(mask) {
        Ok(a) => {
            let is_small = a >= cfg.threshold;
            DifficultyResult {
                inverse_area: Some(a),
                is_small,
                delta: if is_small { cfg.raw_difficulty(a) } else { T::zero() },
            }
        }
        Err(_) => DifficultyResult {
            inverse_area: None,
            is_small: false,
            delta: T::zero(),
        },
    }
}

/// `η = 1 + (2/N)·Σδ` for a batch of `N` difficulty factors.
pub fn batch_scaling_factor<T: Scalar>(deltas: &[T], batch_size: usize) -> Result<T> {
    if batch_size == 0 {
        return Err(Error::BadBatch("batch size must be at least 1".into()));
    }
    if deltas.len() != batch_size {
        return Err(Error::BadBatch(format!(
            "{} difficulty factors for a batch of {batch_size}",
            deltas.len()
        )));
    }
    if let Some(bad) = deltas.iter().find(|d| !(**d >= T::zero() && **d < T::one())) {
        return Err(Error::BadBatch(format!("difficulty factor {bad} outside [0, 1)")));
    }
    let sum: T = deltas.iter().copied().sum();
    Ok(T::one() + T::lit(2.0) * sum / T::from_usize_lossy(batch_size))
}

/// `η` for a batch of ground-truth masks.
pub fn batch_scaling_for_masks<'a, T: Scalar>(
    masks: impl IntoIterator<Item = &'a Mask>,
    cfg: &DifficultyConfig<T>,
) -> Result<T> {
    let deltas: Vec<T> = masks.into_iter().map(|m| difficulty_factor(m, cfg).delta).collect();
    batch_scaling_factor(&deltas, deltas.len())
}

/// Sampling points for [`difficulty_curve`].
#[derive(Debug, Clone, PartialEq)]
pub enum CurveGrid {
    /// `start · ratio^k` for `k = 0..count`.
    Geometric { start: f64, ratio: f64, count: usize },
    Points(Vec<f64>),
}

impl CurveGrid {
    pub const MIN: f64 = 1.0;
    pub const MAX: f64 = 1e7;

    pub fn points(&self) -> Result<Vec<f64>> {
        let pts: Vec<f64> = match self {
            CurveGrid::Geometric {
                start,
                ratio,
                count,
            } => {
                if ratio.is_nan() || *ratio <= 1.0 {
                    return Err(Error::Validation(format!("grid ratio must be > 1, got {ratio}")));
                }
                (0..*count).map(|k| start * ratio.powi(k as i32)).collect()
            }
            CurveGrid::Points(p) => p.clone(),
        };
        if let Some(bad) = pts.iter().find(|p| !(**p >= Self::MIN && **p <= Self::MAX)) {
            return Err(Error::Validation(format!(
                "grid point {bad} outside [{}, {}]",
                Self::MIN,
                Self::MAX
            )));
        }
        Ok(pts)
    }
}

/// One row of the difficulty curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint<T> {
    pub inverse_area: T,
    /// `tanh((log_l a)²)` with no gate.
    pub raw: T,
    /// Raw value gated by `a >= τ`.
    pub delta: T,
}

/// Evaluates the difficulty transform over a grid of inverse areas.
pub fn difficulty_curve<T: Scalar>(log_base: T, threshold: T, grid: &CurveGrid) -> Result<Vec<CurvePoint<T>>> {
    let cfg = DifficultyConfig::new(log_base, threshold, Regime::WholeMask)?;
    Ok(grid
        .points()?
        .into_iter()
        .map(|a| {
            let a = T::lit(a);
            CurvePoint {
                inverse_area: a,
                raw: cfg.raw_difficulty(a),
                delta: cfg.gated_difficulty(a),
            }
        })
        .collect())
}

/// CSV rendering of a curve: header plus one `inverse_area,raw,delta` row per point.
pub fn curve_to_csv<T: Scalar>(points: &[CurvePoint<T>]) -> String {
    let mut out = String::from("inverse_area,raw,delta\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.15},{:.15}\n",
            p.inverse_area.to_f64_lossy(),
            p.raw.to_f64_lossy(),
            p.delta.to_f64_lossy()
        ));
    }
    out
}
