use posterforge::color::{QColor, AB_BINS};
use posterforge::design::{BBox, ElementCategory, FontId, GraphicElement, StyleAttributes, Tagline};
use posterforge::raster::Image;
use posterforge::sap::{
    box_weights, sap_loss, targets_for, train, Encoded, Head, Mode, SapConfig, SapModel, SapSample, Targets, HEAD_COUNT,
};
use posterforge_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> SapConfig {
    SapConfig { d: 8, heads: 2, enc_blocks: 1, dec_blocks: 1, conv_channels: [4, 4, 8], ..SapConfig::default() }
}

fn noise_image(seed: u64, n: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n * n * 3).map(|_| rng.gen()).collect();
    Image::new(n, n, 3, v).unwrap()
}

fn random_style(rng: &mut ChaCha8Rng, cat: ElementCategory) -> StyleAttributes {
    let q = |rng: &mut ChaCha8Rng| QColor::new(rng.gen_range(0..AB_BINS), rng.gen_range(0..10)).unwrap();
    let mut s = StyleAttributes::solid(q(rng));
    if rng.gen_bool(0.5) {
        s.gradient = Some(q(rng));
    }
    if cat == ElementCategory::Tagline {
        if rng.gen_bool(0.5) {
            s.stroke = Some(q(rng));
        }
        s.font = Some(FontId::new(rng.gen_range(1..=62)).unwrap());
    }
    s
}

fn random_elements(seed: u64, n: usize) -> Vec<GraphicElement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let cat = [ElementCategory::Logo, ElementCategory::Underlay, ElementCategory::Tagline][i % 3];
            let x1 = rng.gen_range(0.0..0.6);
            let y1 = rng.gen_range(0.0..0.8);
            let mut e = GraphicElement::new(
                cat,
                BBox::new(x1, y1, x1 + rng.gen_range(0.1..0.4), y1 + rng.gen_range(0.05..0.2)),
            );
            if cat == ElementCategory::Tagline {
                e.text = Some(Tagline::new("SALE").unwrap());
            }
            if cat.has_style() {
                e.style = Some(random_style(&mut rng, cat));
            }
            e
        })
        .collect()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encode_shape_and_determinism() {
    let model = SapModel::new(SapConfig::default()).unwrap();
    let img = noise_image(1, 64);
    let fv = model.encode(&img).unwrap();
    assert_eq!(fv.f_v.shape(), &[16, 64]);
    // Second conv stage: 16x16 cells of 16 channels.
    assert_eq!(fv.local.shape(), &[256, 16]);
    assert_eq!(fv, model.encode(&img).unwrap());
    let other = SapModel::new(SapConfig { seed: 99, ..SapConfig::default() }).unwrap();
    assert!(max_diff(&fv.f_v, &other.encode(&img).unwrap().f_v) > 1e-6);
    assert!(model.encode(&noise_image(1, 32)).is_err());
}

#[test]
fn head_shapes_for_all_lengths() {
    let model = SapModel::new(SapConfig::default()).unwrap();
    let img = noise_image(2, 64);
    let fv = model.encode(&img).unwrap();
    let expected = [AB_BINS, 10, 2, AB_BINS, 10, 2, AB_BINS, 10, 62];
    for n in 1..=16 {
        let els = random_elements(n as u64, n);
        for mode in [Mode::Nar, Mode::Ar] {
            let f = model.forward_features(&fv, &els, mode, None).unwrap();
            assert_eq!(f.logits.len(), HEAD_COUNT);
            for (t, &c) in f.logits.iter().zip(&expected) {
                assert_eq!(t.shape(), &[n, c]);
            }
            assert_eq!(f.cross_attention.shape(), &[n, 16]);
        }
    }
}

#[test]
fn nar_is_permutation_equivariant() {
    let model = SapModel::new(tiny()).unwrap();
    let fv = model.encode(&noise_image(3, 64)).unwrap();
    let els = random_elements(4, 6);
    let perm = [3, 0, 5, 1, 4, 2];
    let shuffled: Vec<GraphicElement> = perm.iter().map(|&i| els[i].clone()).collect();
    let a = model.forward_features(&fv, &els, Mode::Nar, None).unwrap();
    let b = model.forward_features(&fv, &shuffled, Mode::Nar, None).unwrap();
    for j in 0..HEAD_COUNT {
        for (row, &src) in perm.iter().enumerate() {
            for (x, y) in b.logits[j].row(row).iter().zip(a.logits[j].row(src)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn image_features_reach_the_logits() {
    let model = SapModel::new(tiny()).unwrap();
    let fv = model.encode(&noise_image(5, 64)).unwrap();
    let els = random_elements(6, 3);
    let a = model.forward_features(&fv, &els, Mode::Nar, None).unwrap();
    // Cross-attention memory zeroed, pooled conv features kept.
    let zeros = Encoded { f_v: Tensor::zeros(fv.f_v.shape()), ..fv.clone() };
    let b = model.forward_features(&zeros, &els, Mode::Nar, None).unwrap();
    assert!(max_diff(&a.logits[0], &b.logits[0]) > 1e-6);
}

#[test]
fn ar_first_element_ignores_suffix_attributes() {
    let model = SapModel::new(tiny()).unwrap();
    let fv = model.encode(&noise_image(7, 64)).unwrap();
    let els = random_elements(8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let styles_a: Vec<Option<StyleAttributes>> = els.iter().map(|e| e.style).collect();
    let styles_b: Vec<Option<StyleAttributes>> =
        els.iter().map(|e| e.category.has_style().then(|| random_style(&mut rng, e.category))).collect();
    let a = model.forward_features(&fv, &els, Mode::Ar, Some(&styles_a)).unwrap();
    let b = model.forward_features(&fv, &els, Mode::Ar, Some(&styles_b)).unwrap();
    for j in 0..HEAD_COUNT {
        for (x, y) in a.logits[j].row(0).iter().zip(b.logits[j].row(0)) {
            assert!((x - y).abs() <= 1e-6);
        }
    }
    // Later rows do depend on the prefix.
    let later = (0..HEAD_COUNT).map(|j| max_diff(&a.logits[j], &b.logits[j])).fold(0.0, f64::max);
    assert!(later > 1e-9);

    let one = model.forward_features(&fv, &els[..1], Mode::Ar, None).unwrap();
    assert_eq!(one.decoder_passes, 1);
}

#[test]
fn teacher_forced_pass_is_deterministic() {
    let model = SapModel::new(tiny()).unwrap();
    let img = noise_image(10, 64);
    let els = random_elements(11, 4);
    let styles: Vec<Option<StyleAttributes>> = els.iter().map(|e| e.style).collect();
    let a = model.forward(&img, &els, Mode::Ar, Some(&styles)).unwrap();
    let b = model.forward(&img, &els, Mode::Ar, Some(&styles)).unwrap();
    assert_eq!(a.decoder_passes, 1);
    assert_eq!(a.logits, b.logits);
}

#[test]
fn decoder_pass_accounting() {
    let model = SapModel::new(SapConfig::default()).unwrap();
    let fv = model.encode(&noise_image(12, 64)).unwrap();
    let nar_ops = model.forward_features(&fv, &random_elements(0, 1), Mode::Nar, None).unwrap().decoder_ops;
    for n in [1, 2, 5, 16] {
        let els = random_elements(n as u64, n);
        let nar = model.forward_features(&fv, &els, Mode::Nar, None).unwrap();
        assert_eq!(nar.decoder_passes, 1);
        assert_eq!(nar.decoder_ops, nar_ops);
        let styles: Vec<Option<StyleAttributes>> = els.iter().map(|e| e.style).collect();
        let per_pass = model.forward_features(&fv, &els, Mode::Ar, Some(&styles)).unwrap().decoder_ops;
        let ar = model.forward_features(&fv, &els, Mode::Ar, None).unwrap();
        assert_eq!(ar.decoder_passes, n);
        assert_eq!(ar.decoder_ops, n * per_pass);
    }
}

fn leaf_logits(g: &mut Graph, rows: usize, seed: u64) -> Vec<posterforge_tensor::Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Head::ALL
        .iter()
        .map(|h| {
            let data = (0..rows * h.classes()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            g.leaf(Tensor::new(vec![rows, h.classes()], data).unwrap(), false)
        })
        .collect()
}

#[test]
fn loss_reduces_to_single_focal_term() {
    let mut g = Graph::new();
    let heads = leaf_logits(&mut g, 1, 1);
    let mut t: Targets = [None; HEAD_COUNT];
    t[Head::DominantLight.index()] = Some(3);
    let loss = sap_loss(&mut g, &heads, &[t], &[1.0; HEAD_COUNT], 2.0).unwrap();
    let single = g.focal_loss(heads[Head::DominantLight.index()], 3, 2.0).unwrap();
    assert!((g.value(loss).data()[0] - g.value(single).data()[0]).abs() < 1e-12);

    let mut lambda = [1.0; HEAD_COUNT];
    lambda[Head::DominantLight.index()] = 2.0;
    let doubled = sap_loss(&mut g, &heads, &[t], &lambda, 2.0).unwrap();
    assert!((g.value(doubled).data()[0] - 2.0 * g.value(loss).data()[0]).abs() < 1e-12);

    assert!(sap_loss(&mut g, &heads, &[[None; HEAD_COUNT]], &[1.0; HEAD_COUNT], 2.0).is_err());
}

#[test]
fn loss_hand_summed_two_elements_two_heads() {
    // Heads used: has_gradient (2 classes) and dominant_light (10 classes).
    let mut g = Graph::new();
    let heads = leaf_logits(&mut g, 2, 2);
    let gamma = 1.5;
    let mut t0: Targets = [None; HEAD_COUNT];
    let mut t1: Targets = [None; HEAD_COUNT];
    t0[Head::HasGradient.index()] = Some(1);
    t0[Head::DominantLight.index()] = Some(7);
    t1[Head::DominantLight.index()] = Some(0);
    let mut lambda = [1.0; HEAD_COUNT];
    lambda[Head::HasGradient.index()] = 0.5;
    let loss = sap_loss(&mut g, &heads, &[t0, t1], &lambda, gamma).unwrap();

    let focal = |row: &[f64], t: usize| {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let p = (row[t] - m).exp() / z;
        -(1.0 - p).powf(gamma) * p.ln()
    };
    let hg = g.value(heads[Head::HasGradient.index()]).clone();
    let dl = g.value(heads[Head::DominantLight.index()]).clone();
    let by_hand = (0.5 * focal(hg.row(0), 1) + focal(dl.row(0), 7) + focal(dl.row(1), 0)) / 3.0;
    assert!((g.value(loss).data()[0] - by_hand).abs() < 1e-9);
}

#[test]
fn masked_heads_do_not_affect_loss() {
    let els = random_elements(13, 6);
    let targets: Vec<Targets> = els.iter().map(|e| targets_for(e.category, e.style.as_ref())).collect();
    let eval = |seed_shift: f64| {
        let mut g = Graph::new();
        let heads = leaf_logits(&mut g, 6, 14);
        let mut perturbed = Vec::new();
        for (j, &h) in heads.iter().enumerate() {
            let mut v = g.value(h).clone();
            let c = v.shape()[1];
            for (i, t) in targets.iter().enumerate() {
                if t[j].is_none() {
                    for x in &mut v.data_mut()[i * c..(i + 1) * c] {
                        *x += seed_shift * ((i * 31 + j * 7) % 5) as f64;
                    }
                }
            }
            perturbed.push(g.leaf(v, false));
        }
        let l = sap_loss(&mut g, &perturbed, &targets, &[1.0; HEAD_COUNT], 2.0).unwrap();
        g.value(l).data()[0]
    };
    assert!((eval(0.0) - eval(3.7)).abs() <= 1e-9);
    // Underlays never supervise stroke or font; logos nothing.
    for (e, t) in els.iter().zip(&targets) {
        match e.category {
            ElementCategory::Underlay => {
                assert!(t[Head::HasStroke.index()].is_none() && t[Head::Font.index()].is_none())
            }
            ElementCategory::Logo => assert!(t.iter().all(Option::is_none)),
            _ => {}
        }
    }
}

fn tiny_loss(model: &SapModel, sample: &SapSample) -> (f64, Graph, posterforge_tensor::Var) {
    let mut g = Graph::new();
    let img = model.image_tensor(&sample.image).unwrap();
    let (fv, local) = model.encode_graph(&mut g, &img).unwrap();
    let tok = model.tokens_graph(&mut g, local, &sample.elements, None).unwrap();
    let (heads, _) = model.decode_graph(&mut g, fv, tok, false).unwrap();
    let loss = sap_loss(&mut g, &heads, &sample.targets, &model.config().lambda, model.config().gamma).unwrap();
    (g.value(loss).data()[0], g, loss)
}

#[test]
fn full_gradient_path_matches_finite_differences() {
    let mut model = SapModel::new(tiny()).unwrap();
    let sample = SapSample::new(&noise_image(15, 64), &random_elements(16, 4), 64).unwrap();
    let (_, mut g, loss) = tiny_loss(&model, &sample);
    g.backward(loss).unwrap();
    let grads: Vec<(posterforge_tensor::ParamId, Vec<f64>)> =
        g.param_grads().into_iter().map(|(id, v)| (id, v.to_vec())).collect();
    let (conv, head) = model.probe_params();
    for id in [conv, head] {
        let analytic = &grads.iter().find(|(p, _)| *p == id).unwrap().1;
        // Largest-magnitude entry keeps the check away from round-off noise.
        let k = (0..analytic.len()).max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs())).unwrap();
        let h = 1e-5;
        let orig = model.store().value(id).data()[k];
        model.store_mut().value_mut(id).data_mut()[k] = orig + h;
        let up = tiny_loss(&model, &sample).0;
        model.store_mut().value_mut(id).data_mut()[k] = orig - h;
        let down = tiny_loss(&model, &sample).0;
        model.store_mut().value_mut(id).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-8);
        assert!(rel <= 1e-3, "param {id:?}[{k}]: analytic {} numeric {numeric}", analytic[k]);
    }
}

#[test]
fn checkpoint_round_trip() {
    let model = SapModel::new(tiny()).unwrap();
    let mut bytes = Vec::new();
    model.save(&mut bytes).unwrap();
    let loaded = SapModel::load(tiny(), bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    loaded.save(&mut again).unwrap();
    assert_eq!(bytes, again);
    assert!(SapModel::load(SapConfig::default(), bytes.as_slice()).is_err());
}

#[test]
fn predictions_respect_applicability_and_are_deterministic() {
    let model = SapModel::new(tiny()).unwrap();
    let img = noise_image(17, 100);
    let els = random_elements(18, 6);
    for mode in [Mode::Nar, Mode::Ar] {
        let p = model.predict(&img, &els, mode).unwrap();
        assert_eq!(p, model.predict(&img, &els, mode).unwrap());
        for (e, s) in els.iter().zip(&p) {
            match e.category {
                ElementCategory::Logo => assert!(s.is_none()),
                ElementCategory::Underlay => {
                    let s = s.unwrap();
                    assert!(s.stroke.is_none() && s.font.is_none());
                }
                _ => assert!(s.unwrap().font.is_some()),
            }
        }
    }
}

#[test]
fn attention_export_matches_recorded_rows() {
    let model = SapModel::new(tiny()).unwrap();
    let img = noise_image(19, 64);
    let els = random_elements(20, 5);
    let exp = model.export_attention(&img, &els, Mode::Nar).unwrap();
    assert_eq!(exp.maps.len(), 5);
    let order = posterforge::sap::canonical_order(&els);
    let toks: Vec<GraphicElement> = order.iter().map(|&i| els[i].clone()).collect();
    let fwd = model.forward(&img, &toks, Mode::Nar, None).unwrap();
    assert_eq!(exp.rows, fwd.cross_attention);
    for (i, m) in exp.maps.iter().enumerate() {
        let row = exp.rows.row(i);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let max = m.data().iter().cloned().fold(f64::MIN, f64::max);
        let min = m.data().iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!((min, max), (0.0, 1.0));
        assert_eq!((m.width(), m.height()), (4, 4));
    }
    let big = posterforge::sap::upsample_map(&exp.maps[0], 64).unwrap();
    assert_eq!(big.width(), 64);
}

#[test]
fn zero_lambda_leaves_parameters_unchanged() {
    let cfg = SapConfig { lambda: [0.0; HEAD_COUNT], steps: 3, batch: 2, ..tiny() };
    let samples: Vec<SapSample> =
        (0..4).map(|i| SapSample::new(&noise_image(i, 64), &random_elements(i, 3), 64).unwrap()).collect();
    let (model, log) = train(&samples, &cfg, Mode::Nar).unwrap();
    assert!(log.rows.iter().all(|r| r.loss == 0.0));
    let fresh = SapModel::new(cfg).unwrap();
    assert_eq!(model.store(), fresh.store());
}

#[test]
fn training_is_seed_deterministic() {
    let cfg = SapConfig { steps: 4, batch: 2, ..tiny() };
    let samples: Vec<SapSample> =
        (0..4).map(|i| SapSample::new(&noise_image(i + 50, 64), &random_elements(i + 50, 3), 64).unwrap()).collect();
    let (a, _) = train(&samples, &cfg, Mode::Ar).unwrap();
    let (b, _) = train(&samples, &cfg, Mode::Ar).unwrap();
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    a.save(&mut ba).unwrap();
    b.save(&mut bb).unwrap();
    assert_eq!(ba, bb);
    assert!(train(&[], &cfg, Mode::Nar).is_err());
}

#[test]
fn box_weights_are_area_shares() {
    let e = |x1, y1, x2, y2| GraphicElement::new(ElementCategory::Tagline, BBox::new(x1, y1, x2, y2));
    // Covers the right half of cell (0,0) and the left half of cell (0,1).
    let w = box_weights(&[e(0.25, 0.0, 0.75, 0.5), e(0.1, 0.55, 0.93, 0.71)], 2).unwrap();
    assert_eq!(w.shape(), &[2, 4]);
    for (got, want) in w.row(0).iter().zip([0.5, 0.5, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((w.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(&w.row(1)[..2], &[0.0, 0.0]);
}
