use chladni_core::physics::{nodal_line_count, ModeOrder, NodalMask, NodalSettings};
use chladni_core::synth::*;
use chladni_core::ModeRegistry;
use proptest::prelude::*;

fn mask(n: u32, m: u32, res: usize) -> NodalMask {
    NodalSettings::default().mask(ModeOrder::new(n, m).unwrap(), res).unwrap()
}

fn gray(size: usize, v: u8) -> SandImage {
    SandImage::filled(size, [v, v, v])
}

fn bright_fraction_inside_dilated_mask(mask: &NodalMask, img: &SandImage) -> f64 {
    let (res, size) = (mask.resolution(), img.width());
    let inside = |r: usize, c: usize| mask.get(r * res / size, c * res / size);
    let luma = luma(img);
    let (mut bright, mut ok) = (0usize, 0usize);
    for r in 0..size {
        for c in 0..size {
            if luma[r * size + c] <= 128.0 {
                continue;
            }
            bright += 1;
            let near = (r.saturating_sub(1)..=(r + 1).min(size - 1))
                .any(|rr| (c.saturating_sub(1)..=(c + 1).min(size - 1)).any(|cc| inside(rr, cc)));
            ok += usize::from(near);
        }
    }
    ok as f64 / bright as f64
}

#[test]
fn render_is_deterministic_and_sized() {
    let m = mask(1, 2, 64);
    let a = render_pattern(&m, 224, 4000, 11).unwrap();
    let b = render_pattern(&m, 224, 4000, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.width(), a.height(), a.pixels().len()), (224, 224, 224 * 224 * 3));
    assert_ne!(a, render_pattern(&m, 224, 4000, 12).unwrap());
}

#[test]
fn bright_pixels_sit_on_the_mask() {
    for (n, m, res, size) in [(1, 2, 64, 64), (3, 5, 64, 224), (2, 6, 128, 128), (4, 5, 32, 96)] {
        let mk = mask(n, m, res);
        let img = render_pattern(&mk, size, size * size / 4, 3).unwrap();
        let frac = bright_fraction_inside_dilated_mask(&mk, &img);
        assert!(frac >= 0.95, "({n}, {m}) at {res}->{size}: {frac}");
    }
}

#[test]
fn render_palette_and_errors() {
    let m = mask(1, 2, 64);
    let img = render_pattern(&m, 64, 500, 1).unwrap();
    for px in img.pixels().chunks_exact(3) {
        assert!(px == [20, 20, 30] || px == [230, 225, 210]);
    }
    let empty = NodalMask::from_cells(32, vec![false; 1024], 0.15, 0.0).unwrap();
    assert!(matches!(render_pattern(&empty, 64, 500, 1), Err(SynthError::EmptyMask)));
    assert!(render_pattern(&m, 16, 500, 1).is_err());
    assert!(render_pattern(&m, 64, 50, 1).is_err());
}

#[test]
fn png_round_trip() {
    let img = render_pattern(&mask(2, 3, 64), 64, 800, 9).unwrap();
    let back = SandImage::from_png_bytes(&img.to_png_bytes().unwrap()).unwrap();
    assert_eq!(back, img);
}

#[test]
fn color_examples() {
    let img = render_pattern(&mask(1, 2, 64), 64, 600, 2).unwrap();
    assert_eq!(apply_color_gains(&img, [1.0; 3]), img);
    assert_eq!(apply_color_gains(&gray(8, 250), [1.1; 3]).pixel(0, 0), [255; 3]);
    let out = apply_color_gains(&gray(8, 128), [1.1, 0.9, 1.0]);
    assert!(out.pixels().chunks_exact(3).all(|p| p == [141, 115, 128]));
    assert_eq!(augment_color(&img, 5), augment_color(&img, 5));
    assert_eq!(augment_color_in(&img, 0.0, 5).unwrap(), img);
    assert!(augment_color_in(&img, 0.6, 5).is_err());
}

#[test]
fn color_gains_stay_in_range() {
    let img = gray(8, 200);
    for seed in 0..200 {
        let p = augment_color(&img, seed).pixel(3, 3);
        for v in p {
            assert!((180..=220).contains(&v), "seed {seed}: {p:?}");
        }
    }
}

#[test]
fn sand_examples() {
    let m = mask(3, 5, 64);
    assert_eq!(augment_sand(&m, 0.0, 1).unwrap(), m);
    assert_eq!(augment_sand(&m, 0.5, 8).unwrap(), augment_sand(&m, 0.5, 8).unwrap());
    assert_ne!(augment_sand(&m, 0.5, 8).unwrap(), m);
    assert!(augment_sand(&m, 1.5, 8).is_err());

    let before = m.true_count() as f64;
    for seed in 0..100 {
        let after = augment_sand(&m, 0.5, seed).unwrap().true_count() as f64;
        let ratio = after / before;
        assert!((0.95..=1.10).contains(&ratio), "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn filter_examples() {
    let img = render_pattern(&mask(1, 2, 64), 64, 600, 4).unwrap();
    assert_eq!(augment_filter(&img, KernelId::Identity), img);
    assert_eq!(augment_filter(&gray(16, 77), KernelId::Blur), gray(16, 77));

    let mut spot = gray(3, 0);
    spot.set_pixel(1, 1, [100, 100, 100]);
    assert_eq!(augment_filter(&spot, KernelId::EdgeEnhance).pixel(1, 1), [255; 3]);
    // Replicate padding: the corner's upper and left neighbours are itself.
    let mut big = gray(4, 50);
    big.set_pixel(0, 0, [10, 10, 10]);
    // 5·10 − (10 + 50 + 10 + 50) = −70 → 0
    assert_eq!(augment_filter(&big, KernelId::EdgeEnhance).pixel(0, 0), [0; 3]);
    assert!("unknown".parse::<KernelId>().is_err());
}

#[test]
fn ssim_examples() {
    let img = render_pattern(&mask(1, 2, 64), 64, 900, 6).unwrap();
    assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    let s = ssim(&gray(32, 0), &gray(32, 255)).unwrap();
    assert!(s.abs() < 1e-4, "{s}");

    let checker = SandImage::new(
        16,
        16,
        (0..256).flat_map(|i| [if (i / 16 + i % 16) % 2 == 1 { 255u8 } else { 0 }; 3]).collect(),
    )
    .unwrap();
    let inverse = SandImage::new(16, 16, checker.pixels().iter().map(|v| 255 - v).collect()).unwrap();
    let golden = -0.9964064683569576;
    assert!((ssim(&checker, &inverse).unwrap() - golden).abs() < 1e-12);
    assert!(matches!(ssim(&gray(16, 0), &gray(32, 0)), Err(SynthError::DimensionMismatch(16, 32))));
}

#[test]
fn small_dataset_split_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let reg = ModeRegistry::shipped().truncated(2);
    let config = DatasetConfig::new(10, 1, 32, 0.8, 3);
    let manifest = build_dataset(&reg, &config, dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), 20);
    assert_eq!((manifest.count(Split::Train), manifest.count(Split::Test)), (16, 4));
    for e in &manifest.entries {
        let argmax = e.one_hot.iter().position(|&v| v == 1).unwrap();
        assert_eq!(argmax, e.mode_id);
        assert_eq!(e.one_hot.iter().map(|&v| u32::from(v)).sum::<u32>(), 1);
        assert!(!e.augmented);
        let order = reg.get(e.mode_id).unwrap().order;
        assert_eq!((e.n, e.m), (order.n(), order.m()));
        assert!(dir.path().join(&e.image_path).is_file());
        assert!(e.image_path.starts_with(&format!("{}/mode_{}/img_", e.split.dir_name(), e.mode_id)));
    }
    let reloaded = DatasetManifest::load(dir.path().join(DatasetManifest::FILE_NAME)).unwrap();
    assert_eq!(reloaded, manifest);

    let line = std::fs::read_to_string(dir.path().join(DatasetManifest::FILE_NAME)).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    let mut keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["augmented", "image_path", "m", "mode_id", "n", "one_hot", "seed", "split"]);
}

#[test]
fn full_size_arithmetic_and_stratification() {
    let dir = tempfile::tempdir().unwrap();
    let reg = ModeRegistry::shipped();
    let config = DatasetConfig::new(100, 3, 32, 0.8, 1);
    let manifest = build_dataset(&reg, &config, dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), 4500);
    assert_eq!((manifest.count(Split::Train), manifest.count(Split::Test)), (3600, 900));
    let per_class = manifest.per_class_counts();
    assert_eq!(per_class.len(), 15);
    assert!(per_class.values().all(|&c| c == (240, 60)));
    assert_eq!(manifest.entries.iter().filter(|e| e.augmented).count(), 3000);
}

#[test]
fn dataset_build_is_reproducible() {
    let reg = ModeRegistry::shipped().truncated(3);
    let config = DatasetConfig::new(4, 3, 32, 0.75, 99);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = build_dataset(&reg, &config, a.path()).unwrap();
    let mb = build_dataset(&reg, &config, b.path()).unwrap();
    assert_eq!(ma, mb);
    for e in &ma.entries {
        let bytes_a = std::fs::read(a.path().join(&e.image_path)).unwrap();
        let bytes_b = std::fs::read(b.path().join(&e.image_path)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{}", e.image_path);
    }
    let per_class = ma.per_class_counts();
    for (train, test) in per_class.values() {
        let expected = 12.0 * 0.75;
        assert!((*train as f64 - expected).abs() <= 1.0 && train + test == 12);
    }
}

#[test]
fn dataset_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let one = ModeRegistry::shipped().truncated(1);
    assert!(build_dataset(&one, &DatasetConfig::new(2, 1, 32, 0.8, 0), dir.path()).is_err());
    let reg = ModeRegistry::shipped().truncated(2);
    assert!(build_dataset(&reg, &DatasetConfig::new(2, 0, 32, 0.8, 0), dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sand_never_adds_more_than_two_lines(
        (n, m) in (1u32..7, 1u32..7).prop_filter("n != m", |(n, m)| n != m),
        intensity in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let mk = mask(n, m, 48);
        let out = augment_sand(&mk, intensity, seed).unwrap();
        prop_assert!(nodal_line_count(&out) <= nodal_line_count(&mk) + 2);
        for r in 0..48 {
            for c in 0..48 {
                if out.in_exclusion(r, c) {
                    prop_assert!(!out.get(r, c));
                }
            }
        }
    }

    #[test]
    fn ssim_is_symmetric(seed_a in any::<u64>(), seed_b in any::<u64>()) {
        let mk = mask(2, 5, 32);
        let a = augment_color(&render_pattern(&mk, 32, 200, seed_a).unwrap(), seed_b);
        let b = render_pattern(&mk, 32, 200, seed_b).unwrap();
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn identity_filter_is_identity(seed in any::<u64>()) {
        let img = render_pattern(&mask(1, 3, 32), 32, 150, seed).unwrap();
        prop_assert_eq!(augment_filter(&img, KernelId::Identity), img);
    }
}
