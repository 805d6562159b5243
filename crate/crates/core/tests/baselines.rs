use posterforge::baselines::*;
use posterforge::color::{AbGamut, QColor, AB_BINS, LIGHT_BINS};
use posterforge::design::{BBox, ElementCategory};
use posterforge::eval::LabeledPoster;
use posterforge::raster::Image;
use posterforge::render::RenderAssets;
use posterforge::sap::SapConfig;
use posterforge::synth::{generate_sample, SynthConfig};
use proptest::prelude::*;

fn half_and_half() -> Image {
    Image::from_fn(40, 40, |x, _| if x < 20 { [0.0; 3] } else { [1.0; 3] })
}

#[test]
fn white_patch_picks_black() {
    let img = half_and_half();
    let q = mmcq_predict(&img, BBox::new(0.6, 0.2, 0.9, 0.8), &MmcqConfig::default()).unwrap();
    assert_eq!(q, AbGamut::standard().quantize_rgb([0.0; 3]));
    let q = mmcq_predict(&img, BBox::new(0.1, 0.2, 0.4, 0.8), &MmcqConfig::default()).unwrap();
    assert_eq!(q, AbGamut::standard().quantize_rgb([1.0; 3]));
    let wcag = MmcqConfig { contrast: Contrast::Wcag, ..MmcqConfig::default() };
    let q = mmcq_predict(&img, BBox::new(0.6, 0.2, 0.9, 0.8), &wcag).unwrap();
    assert_eq!(q, AbGamut::standard().quantize_rgb([0.0; 3]));
}

#[test]
fn constant_image_returns_its_color() {
    let c = [0.2, 0.6, 0.4];
    let img = Image::filled(16, 16, &c);
    let q = mmcq_predict(&img, BBox::new(0.0, 0.0, 0.5, 0.5), &MmcqConfig::default()).unwrap();
    let snapped = c.map(|v| (v * 255.0f64).round() / 255.0);
    assert_eq!(q, AbGamut::standard().quantize_rgb(snapped));
    assert_eq!(median_cut(&[[51, 153, 102]; 10], 8).len(), 1);
}

#[test]
fn mmcq_rejects_degenerate_boxes_and_is_deterministic() {
    let img = half_and_half();
    assert!(mmcq_predict(&img, BBox::new(0.5, 0.2, 0.5, 0.8), &MmcqConfig::default()).is_err());
    assert!(mmcq_predict(&img, BBox::new(0.5, 0.2, 1.2, 0.8), &MmcqConfig::default()).is_err());
    let noisy = Image::from_fn(32, 32, |x, y| [((x * 7 + y * 3) % 32) as f64 / 31.0, (y % 5) as f64 / 4.0, 0.5]);
    let b = BBox::new(0.1, 0.1, 0.6, 0.4);
    let a = mmcq_predict(&noisy, b, &MmcqConfig::default()).unwrap();
    assert_eq!(a, mmcq_predict(&noisy, b, &MmcqConfig::default()).unwrap());
    assert!(a.is_valid());
}

proptest! {
    #[test]
    fn median_cut_partitions_pixels(px in prop::collection::vec(any::<[u8; 3]>(), 1..200), k in 1usize..10) {
        let pal = median_cut(&px, k);
        prop_assert!(!pal.is_empty() && pal.len() <= k);
        prop_assert_eq!(pal.iter().map(|p| p.population).sum::<usize>(), px.len());
        prop_assert!(pal.windows(2).all(|w| w[0].population >= w[1].population));
        prop_assert!(pal.iter().all(|p| p.rgb.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn mmcq_output_is_always_valid(seed in any::<u64>(), x in 0.0f64..0.8, y in 0.0f64..0.8) {
        let img = Image::from_fn(12, 12, |i, j| {
            let h = seed.wrapping_mul(6364136223846793005).wrapping_add((i * 12 + j) as u64);
            [(h >> 8 & 255) as f64 / 255.0, (h >> 16 & 255) as f64 / 255.0, (h >> 24 & 255) as f64 / 255.0]
        });
        let q = mmcq_predict(&img, BBox::new(x, y, x + 0.2, y + 0.2), &MmcqConfig::default()).unwrap();
        prop_assert!(q.is_valid());
    }

    #[test]
    fn l1_is_symmetric_and_non_negative(a in prop::collection::vec(0.0f64..1.0, 8), b in prop::collection::vec(0.0f64..1.0, 8)) {
        let d = l1_distance(&a, &b);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, l1_distance(&b, &a));
        prop_assert_eq!(l1_distance(&a, &a), 0.0);
    }
}

fn one_hot(bin: usize) -> Vec<f64> {
    let mut h = vec![0.0; HIST_BINS];
    h[bin] = 1.0;
    h
}

fn q(ab: usize, light: usize) -> QColor {
    QColor::new(ab, light).unwrap()
}

#[test]
fn retrieval_picks_the_nearest_side() {
    // Black sits in bin 0, white in bin 511; L1 between them is 2.
    let lib = ColorLibrary::new(vec![
        LibraryEntry { histogram: one_hot(0), color: q(10, 9) },
        LibraryEntry { histogram: one_hot(511), color: q(20, 0) },
    ])
    .unwrap();
    let img = half_and_half();
    assert_eq!(lib.predict(&img, BBox::new(0.0, 0.0, 0.5, 1.0)).unwrap(), q(10, 9));
    assert_eq!(lib.predict(&img, BBox::new(0.5, 0.0, 1.0, 1.0)).unwrap(), q(20, 0));
    // Straddling both halves equally: distance 1 to each, first entry wins.
    assert_eq!(lib.predict(&img, BBox::new(0.25, 0.0, 0.75, 1.0)).unwrap(), q(10, 9));
    let h = region_histogram(&img, BBox::new(0.25, 0.0, 0.75, 1.0)).unwrap();
    assert_eq!((h[0], h[511]), (0.5, 0.5));
    assert_eq!(l1_distance(&h, &one_hot(0)), 1.0);
}

fn posters(n: u64, size: usize) -> Vec<LabeledPoster> {
    let cfg = SynthConfig { size, ..SynthConfig::default() };
    let assets = RenderAssets::bundled();
    (0..n).map(|s| LabeledPoster::from(&generate_sample(&cfg, 300 + s, &assets).unwrap())).collect()
}

#[test]
fn library_from_posters_recalls_its_own_regions() {
    let ps = posters(6, 64);
    let lib = ColorLibrary::build(&ps).unwrap();
    assert_eq!(lib.entries().len(), ps.iter().map(|p| p.scored().len()).sum::<usize>());
    for e in lib.entries() {
        assert!((e.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    for p in &ps {
        for i in p.scored() {
            let e = &p.elements[i];
            let hit = lib.nearest(&region_histogram(&p.image, e.bbox).unwrap());
            assert_eq!(l1_distance(&hit.histogram, &region_histogram(&p.image, e.bbox).unwrap()), 0.0);
        }
    }
    let mut bytes = Vec::new();
    lib.write(&mut bytes).unwrap();
    assert_eq!(bytes.len(), 4 + lib.entries().len() * (HIST_BINS * 4 + 3));
    let back = ColorLibrary::read(bytes.as_slice()).unwrap();
    assert_eq!(back.entries().len(), lib.entries().len());
    for (a, b) in back.entries().iter().zip(lib.entries()) {
        assert_eq!(a.color, b.color);
        assert!(l1_distance(&a.histogram, &b.histogram) < 1e-6);
    }
    assert!(ColorLibrary::read(&bytes[..bytes.len() - 1]).is_err());
    assert!(ColorLibrary::new(Vec::new()).is_err());
    assert!(ColorLibrary::build(&[]).is_err());
    assert!(ColorLibrary::new(vec![LibraryEntry { histogram: vec![0.5; HIST_BINS], color: q(0, 0) }]).is_err());
}

fn tiny_cfg(steps: usize) -> SapConfig {
    SapConfig { d: 32, steps, ..SapConfig::default() }
}

#[test]
fn classifier_collapses_on_one_class() {
    let mut ps = posters(6, 64);
    for p in &mut ps {
        for e in &mut p.elements {
            if let Some(s) = e.style.as_mut() {
                s.dominant = q(77, 3);
            }
        }
    }
    let (cls, _) = ClassifierBaseline::train(&ps, &tiny_cfg(60)).unwrap();
    for p in posters(3, 64).iter().chain(&ps) {
        for i in p.scored() {
            assert_eq!(cls.classify(&p.image, p.elements[i].bbox, ElementCategory::Tagline).unwrap(), q(77, 3));
        }
    }
    assert!(cls.classify(&ps[0].image, BBox::new(0.5, 0.5, 0.5, 0.6), ElementCategory::Tagline).is_err());
    assert!(ClassifierBaseline::train(&[], &tiny_cfg(5)).is_err());
}

#[test]
fn classifier_loss_decreases_and_ignores_siblings() {
    let ps = posters(24, 64);
    let (cls, losses) = ClassifierBaseline::train(&ps, &tiny_cfg(200)).unwrap();
    let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.8 * head, "{head} -> {tail}");
    // Only the image and the queried element enter the prediction.
    let p = &ps[0];
    let e = &p.elements[p.scored()[0]];
    let a = cls.classify(&p.image, e.bbox, e.category).unwrap();
    let mut other = p.clone();
    other.elements.retain(|x| x.bbox == e.bbox);
    assert_eq!(a, cls.classify(&other.image, e.bbox, e.category).unwrap());
}

#[test]
fn random_is_reproducible_and_valid() {
    let mut a = RandomBaseline::new(3);
    let mut b = RandomBaseline::new(3);
    for _ in 0..100 {
        assert_eq!(a.style(ElementCategory::Tagline), b.style(ElementCategory::Tagline));
    }
    let mut r = RandomBaseline::new(4);
    for _ in 0..200 {
        let s = r.style(ElementCategory::Underlay).unwrap();
        assert!(s.dominant.is_valid() && s.stroke.is_none() && s.font.is_none());
        let t = r.style(ElementCategory::Tagline).unwrap();
        assert!(t.font.is_some());
        assert!(r.style(ElementCategory::Logo).is_none());
    }
}

#[test]
fn random_ab_bins_are_uniform() {
    let mut r = RandomBaseline::new(11);
    let n = 100_000;
    let mut counts = vec![0usize; AB_BINS];
    for _ in 0..n {
        counts[r.color().ab as usize] += 1;
    }
    let e = n as f64 / AB_BINS as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // Chi-square with k-1 degrees of freedom: mean k-1, variance 2(k-1).
    let dof = (AB_BINS - 1) as f64;
    assert!((chi2 - dof).abs() <= 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2}");
}

#[test]
fn random_light_error_matches_closed_form() {
    // Two independent uniform levels on 0..n: E|X-Y| = (n^2-1)/(3n) levels.
    let n = LIGHT_BINS as f64;
    let expected = 10.0 * (n * n - 1.0) / (3.0 * n);
    assert!((expected - 33.0).abs() < 1e-12);
    let mut pred = RandomBaseline::new(1);
    let mut truth = RandomBaseline::new(2);
    let draws = 100_000;
    let errs: Vec<f64> =
        (0..draws).map(|_| 10.0 * (pred.color().light as f64 - truth.color().light as f64).abs()).collect();
    let mean = errs.iter().sum::<f64>() / draws as f64;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / draws as f64;
    assert!((mean - expected).abs() <= 3.0 * (var / draws as f64).sqrt(), "{mean}");
}
