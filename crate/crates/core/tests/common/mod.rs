#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use fedgs_core::Mask;

pub type Px = (i64, i64);

/// Paints disks `(row, col, radius)` with pixel-centre membership.
pub fn paint_disks(mask: &mut Mask, disks: &[(f64, f64, f64)]) {
    let (h, w) = mask.shape();
    for &(cr, cc, r) in disks {
        for row in 0..h {
            for col in 0..w {
                let dr = row as f64 - cr;
                let dc = col as f64 - cc;
                if dr * dr + dc * dc <= r * r {
                    mask.set(row, col, true);
                }
            }
        }
    }
}

pub fn disks(h: usize, w: usize, disks: &[(f64, f64, f64)]) -> Mask {
    let mut m = Mask::zeros(h, w);
    paint_disks(&mut m, disks);
    m
}

// Set-based morphology, written independently of the library.

pub fn to_set(mask: &Mask) -> HashSet<Px> {
    let (h, w) = mask.shape();
    let mut s = HashSet::new();
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                s.insert((r as i64, c as i64));
            }
        }
    }
    s
}

const SQUARE: [Px; 9] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)];

pub fn set_erode(s: &HashSet<Px>) -> HashSet<Px> {
    s.iter()
        .copied()
        .filter(|&(r, c)| SQUARE.iter().all(|&(dr, dc)| s.contains(&(r + dr, c + dc))))
        .collect()
}

pub fn set_dilate(s: &HashSet<Px>, h: usize, w: usize) -> HashSet<Px> {
    let mut out = HashSet::new();
    for &(r, c) in s {
        for &(dr, dc) in &SQUARE {
            let p = (r + dr, c + dc);
            if p.0 >= 0 && p.1 >= 0 && p.0 < h as i64 && p.1 < w as i64 {
                out.insert(p);
            }
        }
    }
    out
}

/// Eight-connected components, each as a sorted pixel set.
pub fn set_components(s: &HashSet<Px>) -> Vec<BTreeSet<Px>> {
    let mut seen = HashSet::new();
    let mut order: Vec<Px> = s.iter().copied().collect();
    order.sort_unstable();
    let mut out = Vec::new();
    for start in order {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![start];
        while let Some((r, c)) = stack.pop() {
            comp.insert((r, c));
            for &(dr, dc) in &SQUARE {
                let p = (r + dr, c + dc);
                if s.contains(&p) && seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Smallest-lesion area: erode once, take the smallest component (first in
/// raster order on ties), dilate once, intersect with the mask. Falls back
/// to the smallest original component when erosion removes everything.
pub fn oracle_smallest_area(mask: &Mask) -> usize {
    let (h, w) = mask.shape();
    let s = to_set(mask);
    let eroded = set_erode(&s);
    if eroded.is_empty() {
        return set_components(&s).iter().map(|c| c.len()).min().expect("non-empty mask");
    }
    let comps = set_components(&eroded);
    let smallest = comps.iter().min_by_key(|c| c.len()).expect("non-empty");
    let seed: HashSet<Px> = smallest.iter().copied().collect();
    set_dilate(&seed, h, w).intersection(&s).count()
}

use fedgs_core::model::forward_cached;
use fedgs_core::{dice_loss, forward, ArchDescriptor, Image, ParamVector};

pub fn loss_at(arch: &ArchDescriptor, params: &ParamVector, image: &Image, mask: &Mask) -> f64 {
    dice_loss(&forward(arch, params, image), mask).unwrap()
}

/// Central difference of the loss along coordinate `idx`.
pub fn central_difference(
    arch: &ArchDescriptor,
    params: &ParamVector,
    image: &Image,
    mask: &Mask,
    idx: usize,
    h: f64,
) -> f64 {
    let mut plus = params.clone();
    plus.as_mut_slice()[idx] += h;
    let mut minus = params.clone();
    minus.as_mut_slice()[idx] -= h;
    (loss_at(arch, &plus, image, mask) - loss_at(arch, &minus, image, mask)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// True when no logit is saturated and no hidden pre-activation sits within
/// `margin` of the ReLU kink.
pub fn well_conditioned(arch: &ArchDescriptor, params: &ParamVector, image: &Image, margin: f64) -> bool {
    let cache = forward_cached(arch, params, image);
    cache.logits.data().iter().all(|z| z.abs() < 8.0) && cache.hidden_pre.iter().all(|z| z.abs() > margin)
}

/// Largest change a `±h` perturbation of one parameter can make to a hidden
/// pre-activation, doubled.
pub fn kink_margin(image: &Image, h: f64) -> f64 {
    let max_in = image.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    2.0 * h * max_in
}
