use std::collections::HashSet;

use posterforge::design::{parse_annotation, ElementCategory};
use posterforge::raster::load_image_file;
use posterforge::render::{compose_poster, GlyphProvider, RenderAssets};
use posterforge::synth::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[test]
fn single_character_table_repeats() {
    let cfg = SynthConfig { chars: CharTable { entries: vec![('Q', 1.0)] }, ..SynthConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let t = sample_tagline(&cfg, &mut rng).unwrap();
        assert!(t.chars().all(|c| c == 'Q'));
        assert!((4..=12).contains(&t.len()));
    }
}

#[test]
fn character_frequencies_match_table() {
    let cfg = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = std::collections::HashMap::new();
    let mut lengths = HashSet::new();
    let mut total = 0usize;
    while total < 100_000 {
        let t = sample_tagline(&cfg, &mut rng).unwrap();
        lengths.insert(t.len());
        for c in t.chars() {
            *counts.entry(c).or_insert(0usize) += 1;
            total += 1;
        }
    }
    assert_eq!(lengths.len(), 9);
    for &(c, p) in &cfg.chars.entries {
        let n = *counts.get(&c).unwrap_or(&0) as f64;
        let mean = total as f64 * p;
        let sigma = (total as f64 * p * (1.0 - p)).sqrt();
        assert!((n - mean).abs() <= 3.0 * sigma, "{c}: {n} vs {mean:.1} (sigma {sigma:.1})");
    }
}

#[test]
fn taglines_are_reproducible() {
    let cfg = SynthConfig::default();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5).map(|_| sample_tagline(&cfg, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(draw(9), draw(9));
    assert_ne!(draw(9), draw(10));
}

#[test]
fn samples_are_deterministic_and_valid() {
    let cfg = SynthConfig::default();
    let assets = RenderAssets::bundled();
    let a = generate_sample(&cfg, 11, &assets).unwrap();
    assert_eq!(a, generate_sample(&cfg, 11, &assets).unwrap());
    assert_ne!(a.clean, generate_sample(&cfg, 12, &assets).unwrap().clean);
    a.spec.validate().unwrap();
    assert_eq!((a.poster.width(), a.poster.height()), (cfg.size, cfg.size));
    let tags = a.spec.elements.iter().filter(|e| e.category == ElementCategory::Tagline).count();
    assert!((1..=cfg.max_taglines).contains(&tags));
    for e in &a.spec.elements {
        assert_eq!(e.style, planted_style(&a.clean, e.category, e.bbox).unwrap());
    }
}

#[test]
fn dark_regions_get_light_taglines() {
    let cfg = SynthConfig::default();
    let assets = RenderAssets::bundled();
    let mut seen = 0;
    for seed in 0..40 {
        let s = generate_sample(&cfg, seed, &assets).unwrap();
        for e in s.spec.elements.iter().filter(|e| e.category == ElementCategory::Tagline) {
            let st = region_stats(&s.clean, e.bbox.to_pixels(cfg.size, cfg.size)).unwrap();
            if st.mean.l < 40.0 {
                seen += 1;
                assert!(e.style.unwrap().dominant.light >= 5);
            }
        }
    }
    assert!(seen > 0);
}

fn sha(bytes: &[u8]) -> Vec<u8> {
    Sha256::digest(bytes).to_vec()
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let assets = RenderAssets::bundled();
    let rows = generate_dataset(&cfg, 3, 40, dir.path(), &assets).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), [40, 41, 42]);
    for r in &rows {
        for p in [&r.clean_path, &r.poster_path, &r.annotation_path] {
            assert!(dir.path().join(p).is_file(), "{p}");
        }
        let doc = std::fs::read_to_string(dir.path().join(&r.annotation_path)).unwrap();
        let parsed = parse_annotation(&doc).unwrap();
        assert!(parsed.warnings.is_empty());
        parsed.spec.validate().unwrap();
    }
    let hashes: HashSet<Vec<u8>> =
        rows.iter().map(|r| sha(&std::fs::read(dir.path().join(&r.clean_path)).unwrap())).collect();
    assert_eq!(hashes.len(), 3);

    let records = load_dataset(dir.path()).unwrap();
    assert_eq!(records.len(), 3);
    for rec in &records {
        // Ground truth is recomputable from the stored clean image alone.
        for e in &rec.spec.elements {
            assert_eq!(e.style, planted_style(&rec.clean, e.category, e.bbox).unwrap());
        }
        // The poster re-renders byte-identically from its annotation.
        let poster = load_image_file(dir.path().join(&rec.row.poster_path)).unwrap();
        let again = compose_poster(&rec.clean, &rec.spec, &assets).unwrap().image;
        assert_eq!(again.to_bytes8(), poster.to_bytes8());
    }
    let samples = load_sap_samples(&records, 64).unwrap();
    assert_eq!(samples.len(), 3);
    assert!(samples.iter().all(|s| s.image.width() == 64 && s.pair_count() > 0));
    assert!(generate_dataset(&cfg, 0, 0, dir.path(), &assets).is_err());
}

#[test]
fn two_distinct_styles_are_recognized() {
    let glyphs = GlyphProvider::bundled();
    // Bold against outline: solid strokes versus hollow ones.
    let crops = generate_font_crops(&SynthConfig::default(), 500, &[1, 3], 21, &glyphs).unwrap();
    let (_, report) = train_font_recognizer(&crops, &FontTrainConfig::default()).unwrap();
    assert_eq!(report.n_test, 100);
    assert!(report.test_accuracy > 0.95, "accuracy {}", report.test_accuracy);
}

#[test]
fn shuffled_labels_stay_at_chance() {
    use rand::seq::SliceRandom;
    let glyphs = GlyphProvider::bundled();
    let styles = [0, 1, 2, 3];
    let mut crops = generate_font_crops(&SynthConfig::default(), 800, &styles, 22, &glyphs).unwrap();
    let mut labels: Vec<usize> = crops.iter().map(|c| c.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    for (c, l) in crops.iter_mut().zip(labels) {
        c.label = l;
    }
    let cfg = FontTrainConfig { steps: 200, ..FontTrainConfig::default() };
    // Held-out labels are independent of the images, so accuracy is binomial at 1/4.
    let (_, report) = train_font_recognizer(&crops, &cfg).unwrap();
    let sigma = (0.25f64 * 0.75 / report.n_test as f64).sqrt();
    assert!((report.test_accuracy - 0.25).abs() <= 3.0 * sigma, "accuracy {}", report.test_accuracy);
}

#[test]
fn recognizer_is_deterministic_and_rejects_one_class() {
    let glyphs = GlyphProvider::bundled();
    let crops = generate_font_crops(&SynthConfig::default(), 40, &[0, 2], 24, &glyphs).unwrap();
    let cfg = FontTrainConfig { steps: 10, ..FontTrainConfig::default() };
    let (_, a) = train_font_recognizer(&crops, &cfg).unwrap();
    let (_, b) = train_font_recognizer(&crops, &cfg).unwrap();
    assert_eq!(a, b);
    let one: Vec<FontCrop> = crops.iter().filter(|c| c.label == 0).cloned().collect();
    assert!(train_font_recognizer(&one, &cfg).is_err());
    assert!(generate_font_crops(&SynthConfig::default(), 4, &[0], 1, &glyphs).is_err());
}
