use posterforge::color::{AbGamut, QColor};
use posterforge::design::{BBox, ElementCategory, FontId, GraphicElement, PosterSpec, StyleAttributes, Tagline};
use posterforge::raster::Image;
use posterforge::render::{
    compose_poster, rasterize_underlay, render_text, retrieve_underlay, underlay_distance, GlyphProvider, Layer,
    RenderAssets, ShapeKind, TextOptions, UnderlayDb, UnderlayShape, CELL,
};
use proptest::prelude::*;

fn shape(id: u32, w: f64, h: f64) -> UnderlayShape {
    UnderlayShape { id, kind: ShapeKind::Rectangle, native_w: w, native_h: h }
}

fn q(ab: usize, light: usize) -> QColor {
    QColor::new(ab, light).unwrap()
}

#[test]
fn retrieval_picks_nearest_ratio() {
    let db = [shape(0, 100.0, 100.0), shape(1, 200.0, 100.0)];
    assert_eq!(retrieve_underlay(190.0, 100.0, &db).unwrap().id, 1);
    assert_eq!(retrieve_underlay(100.0, 100.0, &db).unwrap().id, 0);
    let rev = [db[1], db[0]];
    assert_eq!(retrieve_underlay(190.0, 100.0, &rev).unwrap().id, 1);
    assert!(retrieve_underlay(10.0, 10.0, &[]).is_err());
}

#[test]
fn retrieval_of_native_geometry_is_identity() {
    let db = UnderlayDb::bundled();
    assert_eq!(db.shapes.len(), 36);
    for s in &db.shapes {
        assert_eq!(retrieve_underlay(s.native_w, s.native_h, &db.shapes).unwrap().id, s.id);
    }
}

#[test]
fn retrieval_ties_go_to_lowest_id() {
    let db = [shape(7, 100.0, 50.0), shape(3, 100.0, 50.0)];
    assert_eq!(retrieve_underlay(100.0, 50.0, &db).unwrap().id, 3);
}

proptest! {
    #[test]
    fn ratio_term_is_scale_invariant(w in 1.0f64..500.0, h in 1.0f64..500.0, sw in 1.0f64..500.0, sh in 1.0f64..500.0, k in 0.1f64..10.0) {
        let s = shape(0, sw, sh);
        let ar = |w: f64, h: f64, s: &UnderlayShape| ((w / h) / s.aspect()).ln().abs();
        let scaled = shape(0, sw * k, sh * k);
        prop_assert!((ar(w, h, &s) - ar(w * k, h * k, &scaled)).abs() < 1e-12);
        // Full distance is also unchanged when both sides scale together.
        prop_assert!((underlay_distance(w, h, &s) - underlay_distance(w * k, h * k, &scaled)).abs() < 1e-9);
    }

    #[test]
    fn compositing_is_associative(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for _ in 0..3 {
            let mut l = Layer::new(6, 5);
            for y in 0..5 {
                for x in 0..6 {
                    if rng.gen_bool(0.7) {
                        l.set(x, y, [rng.gen(), rng.gen(), rng.gen()], rng.gen());
                    }
                }
            }
            layers.push(l);
        }
        let bg = Image::from_fn(6, 5, |x, y| [x as f64 / 6.0, y as f64 / 5.0, 0.5]);
        let mut one_by_one = bg.clone();
        for l in &layers {
            l.composite_onto(&mut one_by_one);
        }
        let merged = layers[2].over(&layers[1].over(&layers[0]));
        let mut premerged = bg.clone();
        merged.composite_onto(&mut premerged);
        for (a, b) in one_by_one.data().iter().zip(premerged.data()) {
            prop_assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }
}

#[test]
fn solid_rectangle_fill() {
    let g = AbGamut::standard();
    let color = q(100, 6);
    let layer = rasterize_underlay(&shape(0, 1.0, 1.0), (4, 3, 14, 9), 20, 12, color, None).unwrap();
    let want = g.dequantize_rgb(color);
    for y in 0..12 {
        for x in 0..20 {
            let p = layer.get(x, y);
            if (4..14).contains(&x) && (3..9).contains(&y) {
                assert_eq!(p[3], 1.0);
                for c in 0..3 {
                    assert!((p[c] - want[c]).abs() <= 1.0 / 255.0);
                }
            } else {
                assert_eq!(p[3], 0.0);
            }
        }
    }
}

#[test]
fn gradient_fill_rows() {
    let g = AbGamut::standard();
    let (top, bottom) = (q(10, 2), q(200, 8));
    let layer = rasterize_underlay(&shape(0, 1.0, 1.0), (0, 0, 8, 11), 8, 11, top, Some(bottom)).unwrap();
    let (t, b) = (g.dequantize_rgb(top), g.dequantize_rgb(bottom));
    for c in 0..3 {
        assert!((layer.get(3, 0)[c] - t[c]).abs() <= 1.0 / 255.0);
        assert!((layer.get(3, 10)[c] - b[c]).abs() <= 1.0 / 255.0);
        assert!((layer.get(3, 5)[c] - (t[c] + b[c]) / 2.0).abs() <= 2.0 / 255.0);
    }
}

#[test]
fn shapes_leave_corners_transparent() {
    let db = UnderlayDb::bundled();
    for s in db.shapes.iter().filter(|s| s.kind != ShapeKind::Rectangle) {
        let layer = rasterize_underlay(s, (0, 0, 60, 20), 60, 20, q(0, 5), None).unwrap();
        assert!(layer.alpha(0, 0) < 1.0, "{:?}", s.kind);
        assert_eq!(layer.alpha(30, 10), 1.0, "{:?}", s.kind);
    }
}

fn tagline_style(fill: QColor, stroke: Option<QColor>) -> StyleAttributes {
    StyleAttributes { dominant: fill, gradient: None, stroke, font: Some(FontId::new(1).unwrap()) }
}

fn white() -> QColor {
    AbGamut::standard().quantize_rgb([1.0, 1.0, 1.0])
}

#[test]
fn tiny_box_gives_transparent_layer_and_warning() {
    let glyphs = GlyphProvider::bundled();
    let t = Tagline::new("HELLO").unwrap();
    let (layer, warn) =
        render_text(&t, (0, 0, 5, 10), 20, 20, &tagline_style(white(), None), &glyphs, &TextOptions::default())
            .unwrap();
    assert!(layer.is_transparent());
    assert!(!warn.is_empty());
}

#[test]
fn single_glyph_equals_scaled_bitmap() {
    let glyphs = GlyphProvider::bundled();
    let style = tagline_style(white(), None);
    let bitmap = glyphs.set_for(style.font.unwrap()).get('A').unwrap().clone();
    let rgb = AbGamut::standard().dequantize_rgb(white());
    let scale = 3;
    let side = CELL * scale;
    let (x0, y0) = (5, 2);
    let t = Tagline::new("A").unwrap();
    let (layer, warn) =
        render_text(&t, (x0, y0, x0 + side, y0 + side), 40, 40, &style, &glyphs, &TextOptions::default()).unwrap();
    assert!(warn.is_empty());
    for y in 0..40 {
        for x in 0..40 {
            let inside = (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y);
            let bit = inside && bitmap.get((y - y0) / scale, (x - x0) / scale);
            let p = layer.get(x, y);
            assert_eq!(p[3], if bit { 1.0 } else { 0.0 }, "({x},{y})");
            if bit {
                for c in 0..3 {
                    assert!((p[c] - rgb[c]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn stroke_ring_takes_stroke_color() {
    let glyphs = GlyphProvider::bundled();
    let g = AbGamut::standard();
    let stroke = g.quantize_rgb([0.0, 0.0, 0.0]);
    let style = tagline_style(white(), Some(stroke));
    let bitmap = glyphs.set_for(style.font.unwrap()).get('I').unwrap().clone();
    let t = Tagline::new("I").unwrap();
    let scale = 2;
    let side = CELL * scale;
    let (layer, _) = render_text(&t, (0, 0, side, side), side, side, &style, &glyphs, &TextOptions::default()).unwrap();
    let s_rgb = g.dequantize_rgb(stroke);
    let on = |x: usize, y: usize| bitmap.get(y / scale, x / scale);
    let mut ring = 0;
    for y in 0..side {
        for x in 0..side {
            let near = (y.saturating_sub(1)..(y + 2).min(side))
                .any(|yy| (x.saturating_sub(1)..(x + 2).min(side)).any(|xx| on(xx, yy)));
            if !on(x, y) && near {
                ring += 1;
                let p = layer.get(x, y);
                assert_eq!(p[3], 1.0);
                for c in 0..3 {
                    assert!((p[c] - s_rgb[c]).abs() < 1e-12);
                }
            }
        }
    }
    assert!(ring > 0);
}

#[test]
fn unmapped_characters_use_fallback() {
    let glyphs = GlyphProvider::bundled();
    let t = Tagline::new("A\u{00e9}").unwrap();
    let (layer, warn) =
        render_text(&t, (0, 0, 40, 10), 40, 10, &tagline_style(white(), None), &glyphs, &TextOptions::default())
            .unwrap();
    assert!(!layer.is_transparent());
    assert_eq!(warn.len(), 1);
    assert!(warn[0].contains("U+00E9"));
}

fn bg() -> Image {
    Image::from_fn(40, 30, |x, y| [x as f64 / 40.0, y as f64 / 30.0, 0.4])
}

#[test]
fn background_only_spec_returns_background() {
    let spec = PosterSpec {
        width: 40,
        height: 30,
        image: "bg.png".into(),
        elements: vec![GraphicElement::new(ElementCategory::BackgroundImage, BBox::new(0.0, 0.0, 1.0, 1.0))],
    };
    let out = compose_poster(&bg(), &spec, &RenderAssets::bundled()).unwrap();
    assert_eq!(out.image, bg());
}

#[test]
fn opaque_underlay_replaces_background() {
    let mut u = GraphicElement::new(ElementCategory::Underlay, BBox::new(0.25, 0.2, 0.75, 0.6));
    u.style = Some(StyleAttributes::solid(q(50, 3)));
    let spec = PosterSpec { width: 40, height: 30, image: "bg.png".into(), elements: vec![u] };
    let assets = RenderAssets::bundled();
    let out = compose_poster(&bg(), &spec, &assets).unwrap().image;
    let want = AbGamut::standard().dequantize_rgb(q(50, 3));
    // Interior of the retrieved shape, well away from rounded corners.
    for y in 9..15 {
        for x in 16..24 {
            for c in 0..3 {
                assert!((out.get(x, y, c) - want[c]).abs() < 1e-9);
            }
        }
    }
    let wrong = compose_poster(&Image::filled(10, 10, &[0.0, 0.0, 0.0]), &spec, &assets);
    assert!(wrong.is_err());
}

#[test]
fn composition_is_deterministic() {
    let mut tag = GraphicElement::new(ElementCategory::Tagline, BBox::new(0.1, 0.7, 0.9, 0.85));
    tag.text = Some(Tagline::new("NEW!").unwrap());
    tag.style = Some(tagline_style(q(3, 9), Some(q(100, 1))));
    let mut u = GraphicElement::new(ElementCategory::Underlay, BBox::new(0.05, 0.65, 0.95, 0.9));
    u.style = Some(StyleAttributes { gradient: Some(q(40, 4)), ..StyleAttributes::solid(q(20, 2)) });
    let logo = GraphicElement::new(ElementCategory::Logo, BBox::new(0.02, 0.02, 0.2, 0.12));
    let spec = PosterSpec { width: 40, height: 30, image: "bg.png".into(), elements: vec![tag, u, logo] };
    let assets = RenderAssets::bundled();
    let a = compose_poster(&bg(), &spec, &assets).unwrap().image.to_bytes8();
    let b = compose_poster(&bg(), &spec, &assets).unwrap().image.to_bytes8();
    assert_eq!(a, b);
    assert_ne!(a, bg().to_bytes8());
}
