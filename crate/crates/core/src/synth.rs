//! Synthetic lesion datasets with per-client lesion-size mixes.
//!
//! Each sample is Gaussian background noise plus a constant intensity on the
//! interiors of one or more rasterised disks. A sample is "small" with
//! probability `small_fraction`, in which case all its disks draw their radius
//! from the small range; otherwise from the large range.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{Grid, Mask};
use crate::rng::{substream, Domain};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataSpec {
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range of disks per image.
    pub lesions_per_image: (usize, usize),
    pub small_fraction: f64,
    /// Inclusive radius range in pixels for small lesions.
    pub small_radius: (f64, f64),
    /// Inclusive radius range in pixels for large lesions.
    pub large_radius: (f64, f64),
    pub noise_std: f64,
    pub lesion_intensity: f64,
    /// Identity of the client's random stream; must be unique in a federation.
    pub seed_offset: u64,
}

impl Default for ClientDataSpec {
    fn default() -> Self {
        Self {
            n_samples: 60,
            height: 32,
            width: 32,
            lesions_per_image: (1, 2),
            small_fraction: 0.05,
            small_radius: (1.5, 2.5),
            large_radius: (5.0, 8.0),
            noise_std: 0.3,
            lesion_intensity: 1.0,
            seed_offset: 0,
        }
    }
}

/// Pixel count of a disk of radius `r` centred on a pixel: `#{(i, j) : i² + j² <= r²}`.
pub fn disk_area(radius: f64) -> usize {
    let reach = radius.floor() as i64;
    let r2 = radius * radius;
    let mut n = 0;
    for i in -reach..=reach {
        for j in -reach..=reach {
            if ((i * i + j * j) as f64) <= r2 {
                n += 1;
            }
        }
    }
    n
}

impl ClientDataSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::Validation(msg));
        if self.n_samples == 0 {
            return invalid("n_samples must be at least 1".into());
        }
        if self.height == 0 || self.width == 0 {
            return invalid("image size must be positive".into());
        }
        let (lo, hi) = self.lesions_per_image;
        if lo > hi {
            return invalid(format!("lesions_per_image range {lo}..{hi} is empty"));
        }
        if !(0.0..=1.0).contains(&self.small_fraction) {
            return invalid(format!("small_fraction {} outside [0, 1]", self.small_fraction));
        }
        for (name, (a, b)) in [("small_radius", self.small_radius), ("large_radius", self.large_radius)] {
            if !(a.is_finite() && b.is_finite() && a > 0.0 && a <= b) {
                return invalid(format!("{name} range {a}..{b} is invalid"));
            }
        }
        if self.small_radius.1 >= self.large_radius.0 {
            return invalid(format!(
                "small radii (up to {}) must be below large radii (from {})",
                self.small_radius.1, self.large_radius.0
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return invalid(format!("noise_std {} must be finite and >= 0", self.noise_std));
        }
        if !self.lesion_intensity.is_finite() {
            return invalid("lesion_intensity must be finite".into());
        }
        let side = self.height.min(self.width);
        let needed = 2 * self.large_radius.1.floor() as usize + 1;
        if needed > side {
            return Err(Error::InfeasibleSpec(format!(
                "a disk of radius {} needs {needed} px but the image is {}x{}",
                self.large_radius.1, self.height, self.width
            )));
        }
        Ok(())
    }

    /// Whole-mask inverse-area threshold separating small from large samples,
    /// or `None` when the radius ranges overlap in area.
    ///
    /// Small samples have at most `max_lesions · disk_area(r_hi)` foreground
    /// pixels; large samples at least `disk_area(R_lo)`. The returned value is
    /// the geometric mean of the two resulting inverse-area bounds.
    pub fn separating_threshold(&self) -> Option<f64> {
        let total = (self.height * self.width) as f64;
        let small_max = (self.lesions_per_image.1.max(1) * disk_area(self.small_radius.1)) as f64;
        let large_min = disk_area(self.large_radius.0) as f64;
        let small_inv_min = total / small_max;
        let large_inv_max = total / large_min;
        (small_inv_min > large_inv_max).then(|| (small_inv_min * large_inv_max).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub client: u64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub image: Grid<T>,
    pub mask: Mask,
    pub provenance: Provenance,
    /// Whether the generator drew this sample's lesions from the small range.
    pub small_by_construction: bool,
}

fn generate_sample<T: Scalar>(spec: &ClientDataSpec, experiment_seed: u64, index: usize) -> Sample<T> {
    let mut rng = substream(experiment_seed, Domain::Data, &[spec.seed_offset, index as u64]);
    let (h, w) = (spec.height, spec.width);
    let small = rng.random::<f64>() < spec.small_fraction;
    let (lo, hi) = spec.lesions_per_image;
    let n_lesions = rng.random_range(lo..=hi);
    let (r_lo, r_hi) = if small { spec.small_radius } else { spec.large_radius };

    let mut mask = Mask::zeros(h, w);
    for _ in 0..n_lesions {
        let radius = if r_hi > r_lo { rng.random_range(r_lo..=r_hi) } else { r_lo };
        let reach = radius.floor() as usize;
        let cr = rng.random_range(reach..=h - 1 - reach);
        let cc = rng.random_range(reach..=w - 1 - reach);
        let r2 = radius * radius;
        for r in cr - reach..=cr + reach {
            for c in cc - reach..=cc + reach {
                let dr = r as f64 - cr as f64;
                let dc = c as f64 - cc as f64;
                if dr * dr + dc * dc <= r2 {
                    mask.set(r, c, true);
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
    let image = Grid::from_fn(h, w, |r, c| {
        let base = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let lesion = if mask.get(r, c) { spec.lesion_intensity } else { 0.0 };
        T::lit(base + lesion)
    });

    Sample {
        image,
        mask,
        provenance: Provenance {
            client: spec.seed_offset,
            index,
        },
        small_by_construction: small && n_lesions > 0,
    }
}

/// Deterministic dataset for one client.
pub fn generate_client_dataset<T: Scalar>(spec: &ClientDataSpec, experiment_seed: u64) -> Result<Vec<Sample<T>>> {
    spec.validate()?;
    Ok((0..spec.n_samples)
        .map(|i| generate_sample(spec, experiment_seed, i))
        .collect())
}

/// Fraction of foreground pixels darker than `lesion_intensity − 5·noise_std`.
///
/// Gaussian noise makes this about 3e-7 per pixel; values above 1e-3 indicate a
/// generator fault.
pub fn foreground_violation_rate<T: Scalar>(samples: &[Sample<T>], spec: &ClientDataSpec) -> f64 {
    let floor = spec.lesion_intensity - 5.0 * spec.noise_std;
    let mut total = 0usize;
    let mut bad = 0usize;
    for s in samples {
        for (&v, &m) in s.image.data().iter().zip(s.mask.bits()) {
            if m {
                total += 1;
                if v.to_f64_lossy() < floor {
                    bad += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset<T> {
    pub client_id: u64,
    pub samples: Vec<Sample<T>>,
}

impl<T> ClientDataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Training clients plus one held-out test centre.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation<T> {
    pub clients: Vec<ClientDataset<T>>,
    pub test: ClientDataset<T>,
}

/// Builds a federation; the last spec becomes the held-out test centre.
///
/// Each client's data depends only on its own spec (including `seed_offset`)
/// and the experiment seed, not on its position in `specs`.
pub fn build_federation<T: Scalar>(specs: &[ClientDataSpec], experiment_seed: u64) -> Result<Federation<T>> {
    if specs.len() < 2 {
        return Err(Error::Validation(format!(
            "a federation needs at least one training client and a test centre, got {} spec(s)",
            specs.len()
        )));
    }
    let mut offsets: Vec<u64> = specs.iter().map(|s| s.seed_offset).collect();
    offsets.sort_unstable();
    if let Some(w) = offsets.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("duplicate seed_offset {}", w[0])));
    }
    let mut datasets = specs
        .par_iter()
        .map(|spec| {
            generate_client_dataset(spec, experiment_seed).map(|samples| ClientDataset {
                client_id: spec.seed_offset,
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let test = datasets.pop().expect("at least two specs");
    Ok(Federation {
        clients: datasets,
        test,
    })
}

/// Writes `img_####.pgm` / `msk_####.pgm` pairs and `manifest.txt` into `dir`.
///
/// Images are mapped linearly from `[−3σ, intensity + 3σ]` of their client's
/// spec onto `0..=255`. Sample ids are sequential over training clients in
/// order, then the test centre.
pub fn dump_federation<T: Scalar>(federation: &Federation<T>, specs: &[ClientDataSpec], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("# fedgs-sim dataset v1\n# sample_id client role index is_small\n");
    let roles = federation
        .clients
        .iter()
        .map(|c| (c, "train"))
        .chain(std::iter::once((&federation.test, "test")));
    let mut id = 0usize;
    for (dataset, role) in roles {
        let spec = specs
            .iter()
            .find(|s| s.seed_offset == dataset.client_id)
            .ok_or_else(|| Error::Validation(format!("no spec for client {}", dataset.client_id)))?;
        let lo = T::lit(-3.0 * spec.noise_std);
        let hi = T::lit(spec.lesion_intensity + 3.0 * spec.noise_std);
        for s in &dataset.samples {
            s.image.write_pgm(dir.join(format!("img_{id:04}.pgm")), lo, hi)?;
            s.mask.write_pgm(dir.join(format!("msk_{id:04}.pgm")))?;
            let _ = writeln!(
                manifest,
                "{id:04} {} {role} {} {}",
                s.provenance.client,
                s.provenance.index,
                u8::from(s.small_by_construction)
            );
            id += 1;
        }
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

/// Default heterogeneous federation: three large-lesion-dominated clients, one
/// client rich in small lesions, and a test centre in between.
pub fn default_federation_specs() -> Vec<ClientDataSpec> {
    let base = ClientDataSpec::default();
    let client = |seed_offset: u64, small_fraction: f64, n_samples: usize| ClientDataSpec {
        seed_offset,
        small_fraction,
        n_samples,
        ..base.clone()
    };
    vec![
        client(0, 0.05, 60),
        client(1, 0.05, 60),
        client(2, 0.05, 60),
        client(3, 0.4, 60),
        client(4, 0.3, 120),
    ]
}
