use std::collections::HashSet;

use fedgs_core::synth::{default_federation_specs, disk_area, dump_federation, foreground_violation_rate};
use fedgs_core::{
    build_federation, difficulty_factor, generate_client_dataset, ClientDataSpec, DifficultyConfig, Error, Federation,
    Grid, Mask, Regime, Sample,
};
use proptest::prelude::*;

fn whole_mask_cfg(spec: &ClientDataSpec) -> DifficultyConfig {
    let tau = spec.separating_threshold().expect("separable radii");
    DifficultyConfig::new(100.0, tau, Regime::WholeMask).unwrap()
}

#[test]
fn regeneration_is_exact() {
    let spec = ClientDataSpec::default();
    let a = generate_client_dataset::<f64>(&spec, 17).unwrap();
    let b = generate_client_dataset::<f64>(&spec, 17).unwrap();
    assert_eq!(a, b);
    let c = generate_client_dataset::<f64>(&spec, 18).unwrap();
    assert_ne!(a, c);
}

#[test]
fn no_small_samples_without_small_fraction() {
    let spec = ClientDataSpec {
        small_fraction: 0.0,
        n_samples: 300,
        ..ClientDataSpec::default()
    };
    let cfg = whole_mask_cfg(&spec);
    let data = generate_client_dataset::<f64>(&spec, 4).unwrap();
    assert!(data.iter().all(|s| !difficulty_factor(&s.mask, &cfg).is_small));
    assert!(data.iter().all(|s| !s.small_by_construction));
}

#[test]
fn whole_mask_classifier_recovers_construction() {
    let spec = ClientDataSpec {
        small_fraction: 0.5,
        n_samples: 300,
        ..ClientDataSpec::default()
    };
    let cfg = whole_mask_cfg(&spec);
    for s in generate_client_dataset::<f64>(&spec, 6).unwrap() {
        assert_eq!(difficulty_factor(&s.mask, &cfg).is_small, s.small_by_construction);
    }
}

// With n = 1000 the binomial standard deviation is at most 0.5/sqrt(1000) ≈ 0.0158,
// so a 7-point window is at least 4.4 standard deviations wide.
#[test]
fn empirical_small_fraction() {
    for (i, &frac) in [0.05, 0.3, 0.4, 0.5].iter().enumerate() {
        let spec = ClientDataSpec {
            small_fraction: frac,
            n_samples: 1000,
            height: 24,
            width: 24,
            seed_offset: i as u64,
            ..ClientDataSpec::default()
        };
        let data = generate_client_dataset::<f64>(&spec, 123).unwrap();
        let got = data.iter().filter(|s| s.small_by_construction).count() as f64 / 1000.0;
        assert!((got - frac).abs() <= 0.07, "fraction {frac}: observed {got}");
    }
}

#[test]
fn mask_is_union_of_disks() {
    let spec = ClientDataSpec {
        noise_std: 0.0,
        lesion_intensity: 2.0,
        n_samples: 40,
        ..ClientDataSpec::default()
    };
    for s in generate_client_dataset::<f64>(&spec, 0).unwrap() {
        assert_eq!(s.image.threshold(1.0), s.mask);
        assert!(s.image.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(!s.mask.is_empty());
        let area = s.mask.count();
        let (lo, hi) = if s.small_by_construction { spec.small_radius } else { spec.large_radius };
        assert!(area >= disk_area(lo) && area <= 2 * disk_area(hi));
    }
}

#[test]
fn noise_rarely_hides_lesions() {
    let spec = ClientDataSpec::default();
    let data = generate_client_dataset::<f64>(&spec, 1).unwrap();
    assert!(foreground_violation_rate(&data, &spec) < 1e-3);
}

#[test]
fn infeasible_and_invalid_specs() {
    let spec = ClientDataSpec {
        height: 8,
        width: 8,
        small_radius: (2.0, 3.0),
        large_radius: (10.0, 12.0),
        ..ClientDataSpec::default()
    };
    assert!(matches!(generate_client_dataset::<f64>(&spec, 0), Err(Error::InfeasibleSpec(_))));
    let overlap = ClientDataSpec {
        small_radius: (2.0, 6.0),
        ..ClientDataSpec::default()
    };
    assert!(matches!(overlap.validate(), Err(Error::Validation(_))));
    let empty = ClientDataSpec {
        n_samples: 0,
        ..ClientDataSpec::default()
    };
    assert!(empty.validate().is_err());
}

#[test]
fn federation_shape_and_provenance() {
    let specs = default_federation_specs();
    assert_eq!(specs.len(), 5);
    let fed: Federation = build_federation(&specs, 3).unwrap();
    assert_eq!(fed.clients.len(), 4);
    assert_eq!(fed.test.samples.len(), 120);
    let train: HashSet<u64> = fed
        .clients
        .iter()
        .flat_map(|c| c.samples.iter().map(|s| s.provenance.client))
        .collect();
    assert!(fed.test.samples.iter().all(|s| !train.contains(&s.provenance.client)));
    for c in &fed.clients {
        assert!(c.samples.iter().all(|s| s.provenance.client == c.client_id));
    }

    assert!(build_federation::<f64>(&specs[..1], 0).is_err());
    let mut dup = specs.clone();
    dup[1].seed_offset = 0;
    assert!(build_federation::<f64>(&dup, 0).is_err());
}

#[test]
fn permuting_clients_keeps_their_data() {
    let specs = default_federation_specs();
    let fed: Federation = build_federation(&specs, 9).unwrap();
    let mut permuted = specs.clone();
    permuted[..4].reverse();
    let fed2: Federation = build_federation(&permuted, 9).unwrap();
    for c in &fed.clients {
        let twin = fed2.clients.iter().find(|d| d.client_id == c.client_id).unwrap();
        assert_eq!(c, twin);
    }
    assert_eq!(fed.test, fed2.test);
}

#[test]
fn dump_writes_pairs_and_manifest() {
    let specs: Vec<ClientDataSpec> = default_federation_specs()
        .into_iter()
        .map(|s| ClientDataSpec { n_samples: 3, ..s })
        .collect();
    let fed: Federation = build_federation(&specs, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    dump_federation(&fed, &specs, dir.path()).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    let lines: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines.len(), 15);
    assert!(lines[12].contains(" test "));
    let all: Vec<&Sample> = fed.clients.iter().flat_map(|c| &c.samples).chain(&fed.test.samples).collect();
    for (id, s) in all.iter().enumerate() {
        let m = Mask::read_pgm(dir.path().join(format!("msk_{id:04}.pgm"))).unwrap();
        assert_eq!(&m, &s.mask);
        assert!(dir.path().join(format!("img_{id:04}.pgm")).exists());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_pgm_round_trip(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let m = Mask::from_fn(h, w, |r, c| (seed >> ((r * w + c) % 64)) & 1 == 1);
        prop_assert_eq!(Mask::from_pgm_bytes(&m.to_pgm_bytes()).unwrap(), m);
    }

    #[test]
    fn grid_threshold_matches_mask(h in 1usize..8, w in 1usize..8, t in -1.0f64..1.0) {
        let g = Grid::from_fn(h, w, |r, c| ((r * 31 + c * 17) % 13) as f64 / 6.0 - 1.0);
        let m = g.threshold(t);
        for r in 0..h {
            for c in 0..w {
                prop_assert_eq!(m.get(r, c), g.get(r, c) >= t);
            }
        }
    }
}
