//! Binary erosion/dilation and connected-component labelling.
//!
//! Pixels outside the frame count as background for both erosion and
//! dilation, so erosion strips lesions that touch the border.

use std::collections::VecDeque;

use crate::mask::Mask;

/// Flat structuring element centred on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StructuringElement {
    /// 3×3 square (8-neighbourhood plus centre).
    #[default]
    Square3,
    /// 3×3 cross (4-neighbourhood plus centre).
    Cross3,
}

impl StructuringElement {
    pub fn offsets(self) -> &'static [(isize, isize)] {
        const SQUARE: [(isize, isize); 9] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 0),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        const CROSS: [(isize, isize); 5] = [(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)];
        match self {
            StructuringElement::Square3 => &SQUARE,
            StructuringElement::Cross3 => &CROSS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    fn neighbours(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[inline]
fn offset(r: usize, c: usize, (dr, dc): (isize, isize), h: usize, w: usize) -> Option<(usize, usize)> {
    let rr = r.checked_add_signed(dr)?;
    let cc = c.checked_add_signed(dc)?;
    (rr < h && cc < w).then_some((rr, cc))
}

fn erode_once(mask: &Mask, element: StructuringElement) -> Mask {
    let (h, w) = mask.shape();
    Mask::from_fn(h, w, |r, c| {
        element
            .offsets()
            .iter()
            .all(|&d| offset(r, c, d, h, w).is_some_and(|(rr, cc)| mask.get(rr, cc)))
    })
}

fn dilate_once(mask: &Mask, element: StructuringElement) -> Mask {
    let (h, w) = mask.shape();
    Mask::from_fn(h, w, |r, c| {
        element
            .offsets()
            .iter()
            .any(|&d| offset(r, c, d, h, w).is_some_and(|(rr, cc)| mask.get(rr, cc)))
    })
}

/// Binary erosion applied `iterations` times. Zero iterations is the identity.
pub fn erode(mask: &Mask, element: StructuringElement, iterations: usize) -> Mask {
    let mut out = mask.clone();
    for _ in 0..iterations {
        if out.is_empty() {
            break;
        }
        out = erode_once(&out, element);
    }
    out
}

/// Binary dilation applied `iterations` times.
pub fn dilate(mask: &Mask, element: StructuringElement, iterations: usize) -> Mask {
    let mut out = mask.clone();
    for _ in 0..iterations {
        out = dilate_once(&out, element);
    }
    out
}

/// Result of [`label_components`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    height: usize,
    width: usize,
    /// 0 is background; components are numbered 1..=n in raster order of
    /// their first pixel.
    labels: Vec<u32>,
    /// `areas[i]` is the pixel count of label `i + 1`.
    areas: Vec<usize>,
}

impl ComponentLabeling {
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_at(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn component_count(&self) -> usize {
        self.areas.len()
    }

    /// `(label, area)` pairs in label order.
    pub fn component_areas(&self) -> impl Iterator<Item = (u32, usize)> + '_ {
        self.areas.iter().enumerate().map(|(i, &a)| (i as u32 + 1, a))
    }

    /// Label with the fewest pixels; ties go to the lowest label.
    pub fn smallest(&self) -> Option<(u32, usize)> {
        self.component_areas().min_by_key(|&(label, area)| (area, label))
    }

    /// Mask of a single component.
    pub fn component_mask(&self, label: u32) -> Mask {
        Mask::from_fn(self.height, self.width, |r, c| self.label_at(r, c) == label)
    }
}

/// Labels the foreground of `mask` by flood fill.
pub fn label_components(mask: &Mask, connectivity: Connectivity) -> ComponentLabeling {
    let (h, w) = mask.shape();
    let mut labels = vec![0u32; h * w];
    let mut areas = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        let mut area = 0;
        labels[start] = label;
        queue.push_back((start / w, start % w));
        while let Some((r, c)) = queue.pop_front() {
            area += 1;
            for &d in connectivity.neighbours() {
                if let Some((rr, cc)) = offset(r, c, d, h, w) {
                    let idx = rr * w + cc;
                    if mask.bits()[idx] && labels[idx] == 0 {
                        labels[idx] = label;
                        queue.push_back((rr, cc));
                    }
                }
            }
        }
        areas.push(area);
    }
    ComponentLabeling {
        height: h,
        width: w,
        labels,
        areas,
    }
}
