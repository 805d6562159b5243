//! Color metrics over dequantized bin centers, plus the ablation and
//! baseline report tables. Reports score tagline elements only.

use std::fmt::Write as _;

use crate::baselines::{mmcq_predict, ClassifierBaseline, ColorLibrary, MmcqConfig, RandomBaseline};
use crate::color::{light_representative, AbGamut, QColor};
use crate::design::{ElementCategory, GraphicElement, StyleAttributes};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::sap::{train, Head, Mode, SapConfig, SapModel, SapSample, HEAD_COUNT};
use crate::synth::{SynthRecord, SynthSample};

/// A background image and its annotated elements.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoster {
    pub image: Image,
    pub elements: Vec<GraphicElement>,
}

impl From<&SynthRecord> for LabeledPoster {
    fn from(r: &SynthRecord) -> Self {
        Self { image: r.clean.clone(), elements: r.spec.elements.clone() }
    }
}

impl From<&SynthSample> for LabeledPoster {
    fn from(s: &SynthSample) -> Self {
        Self { image: s.clean.clone(), elements: s.spec.elements.clone() }
    }
}

impl LabeledPoster {
    /// Indices of styled taglines.
    pub fn scored(&self) -> Vec<usize> {
        (0..self.elements.len())
            .filter(|&i| self.elements[i].category == ElementCategory::Tagline && self.elements[i].style.is_some())
            .collect()
    }

    pub fn truth(&self) -> Vec<StyleAttributes> {
        self.scored().iter().map(|&i| self.elements[i].style.expect("scored")).collect()
    }
}

pub const COLUMNS: [&str; 8] = ["D-ab", "D-light", "G-acc", "G-ab", "G-light", "S-acc", "S-ab", "S-light"];

/// One method's metrics. `None` marks a cell with no applicable element or
/// a task the method does not predict.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub d_ab: Option<f64>,
    pub d_light: Option<f64>,
    pub g_acc: Option<f64>,
    pub g_ab: Option<f64>,
    pub g_light: Option<f64>,
    pub s_acc: Option<f64>,
    pub s_ab: Option<f64>,
    pub s_light: Option<f64>,
}

impl MetricsRow {
    pub fn cells(&self) -> [Option<f64>; 8] {
        [self.d_ab, self.d_light, self.g_acc, self.g_ab, self.g_light, self.s_acc, self.s_ab, self.s_light]
    }

    pub fn without_gradient(mut self) -> Self {
        (self.g_acc, self.g_ab, self.g_light) = (None, None, None);
        self
    }

    pub fn without_stroke(mut self) -> Self {
        (self.s_acc, self.s_ab, self.s_light) = (None, None, None);
        self
    }
}

fn ab_sq(gamut: &AbGamut, p: QColor, t: QColor) -> f64 {
    let (a, b) = gamut.center(p.ab as usize);
    let (c, d) = gamut.center(t.ab as usize);
    (a - c).powi(2) + (b - d).powi(2)
}

fn light_abs(p: QColor, t: QColor) -> f64 {
    (light_representative(p.light as usize) - light_representative(t.light as usize)).abs()
}

#[derive(Default)]
struct Sums {
    acc: usize,
    both: usize,
    ab: f64,
    light: f64,
}

impl Sums {
    fn add(&mut self, gamut: &AbGamut, p: Option<QColor>, t: Option<QColor>) {
        self.acc += (p.is_some() == t.is_some()) as usize;
        if let (Some(p), Some(t)) = (p, t) {
            self.both += 1;
            self.ab += ab_sq(gamut, p, t);
            self.light += light_abs(p, t);
        }
    }

    fn cells(&self, n: usize) -> (Option<f64>, Option<f64>, Option<f64>) {
        let m = |v: f64| (self.both > 0).then(|| v / self.both as f64);
        ((n > 0).then(|| self.acc as f64 / n as f64), m(self.ab), m(self.light))
    }
}

/// D-ab is the mean squared distance between ab bin centers (both
/// coordinates summed), D-light the mean absolute difference of lightness
/// representatives. Gradient and stroke errors use only elements where
/// prediction and truth both carry the color; disagreements count toward
/// presence accuracy alone.
pub fn style_metrics(preds: &[StyleAttributes], gts: &[StyleAttributes]) -> Result<MetricsRow> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth elements",
            preds.len(),
            gts.len()
        )));
    }
    let gamut = AbGamut::standard();
    let n = preds.len();
    let (mut d_ab, mut d_light) = (0.0, 0.0);
    let (mut g, mut s) = (Sums::default(), Sums::default());
    for (p, t) in preds.iter().zip(gts) {
        d_ab += ab_sq(gamut, p.dominant, t.dominant);
        d_light += light_abs(p.dominant, t.dominant);
        g.add(gamut, p.gradient, t.gradient);
        s.add(gamut, p.stroke, t.stroke);
    }
    let mean = |v: f64| (n > 0).then(|| v / n as f64);
    let (g_acc, g_ab, g_light) = g.cells(n);
    let (s_acc, s_ab, s_light) = s.cells(n);
    Ok(MetricsRow { d_ab: mean(d_ab), d_light: mean(d_light), g_acc, g_ab, g_light, s_acc, s_ab, s_light })
}

/// Exact-bin accuracy of the dominant color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominantAccuracy {
    pub ab: f64,
    pub light: f64,
}

pub fn dominant_accuracy(preds: &[StyleAttributes], gts: &[StyleAttributes]) -> Result<DominantAccuracy> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::InvalidArgument("prediction and truth lists must align and be non-empty".into()));
    }
    let n = preds.len() as f64;
    let hits = |f: fn(&QColor) -> usize| {
        preds.iter().zip(gts).filter(|(p, t)| f(&p.dominant) == f(&t.dominant)).count() as f64 / n
    };
    Ok(DominantAccuracy { ab: hits(|q| q.ab as usize), light: hits(|q| q.light as usize) })
}

/// Named rows with a fixed column subset.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<&'static str>,
    pub rows: Vec<(String, MetricsRow)>,
}

impl MetricsTable {
    pub fn row(&self, name: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.0 == name).map(|r| &r.1)
    }

    fn cell(row: &MetricsRow, col: &str) -> Option<f64> {
        let i = COLUMNS.iter().position(|c| *c == col).expect("known column");
        row.cells()[i]
    }

    /// Four decimals; "-" for empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, row) in &self.rows {
            out.push_str(name);
            for c in &self.columns {
                match Self::cell(row, c) {
                    Some(v) => write!(out, ",{v:.4}").expect("string write"),
                    None => out.push_str(",-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Predictions for the scored taglines of every poster, concatenated, with
/// the matching ground truth.
fn collect(
    posters: &[LabeledPoster],
    mut f: impl FnMut(&LabeledPoster, &[usize]) -> Result<Vec<StyleAttributes>>,
) -> Result<(Vec<StyleAttributes>, Vec<StyleAttributes>)> {
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    for p in posters {
        let idx = p.scored();
        if idx.is_empty() {
            continue;
        }
        let out = f(p, &idx)?;
        if out.len() != idx.len() {
            return Err(Error::InvalidArgument("predictor returned a misaligned list".into()));
        }
        preds.extend(out);
        gts.extend(p.truth());
    }
    Ok((preds, gts))
}

pub fn sap_predictions(
    model: &SapModel,
    mode: Mode,
    posters: &[LabeledPoster],
) -> Result<(Vec<StyleAttributes>, Vec<StyleAttributes>)> {
    collect(posters, |p, idx| {
        let all = model.predict(&p.image, &p.elements, mode)?;
        Ok(idx.iter().map(|&i| all[i].expect("taglines are styled")).collect())
    })
}

pub fn random_predictions(
    seed: u64,
    posters: &[LabeledPoster],
) -> Result<(Vec<StyleAttributes>, Vec<StyleAttributes>)> {
    let mut rng = RandomBaseline::new(seed);
    collect(posters, |_, idx| {
        Ok(idx.iter().map(|_| rng.style(ElementCategory::Tagline).expect("taglines are styled")).collect())
    })
}

fn solid_predictions(
    posters: &[LabeledPoster],
    mut f: impl FnMut(&LabeledPoster, &GraphicElement) -> Result<QColor>,
) -> Result<(Vec<StyleAttributes>, Vec<StyleAttributes>)> {
    collect(posters, |p, idx| idx.iter().map(|&i| f(p, &p.elements[i]).map(StyleAttributes::solid)).collect())
}

fn dominant_only(row: MetricsRow) -> MetricsRow {
    row.without_gradient().without_stroke()
}

/// An ablation variant: which heads train and how it decodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub heads: Vec<Head>,
    pub mode: Mode,
}

impl Variant {
    pub fn lambda(&self) -> [f64; HEAD_COUNT] {
        let mut l = [0.0; HEAD_COUNT];
        for h in &self.heads {
            l[h.index()] = 1.0;
        }
        l
    }

    fn trains(&self, h: Head) -> bool {
        self.heads.contains(&h)
    }

    fn mask(&self, row: MetricsRow) -> MetricsRow {
        let row = if self.trains(Head::HasGradient) { row } else { row.without_gradient() };
        if self.trains(Head::HasStroke) {
            row
        } else {
            row.without_stroke()
        }
    }
}

pub const RANDOM: &str = "Random";

/// The five trained rows in table order; "Random" follows them.
pub fn ablation_variants() -> Vec<Variant> {
    use Head::*;
    let d = vec![DominantAb, DominantLight];
    let with = |extra: &[Head]| d.iter().chain(extra).copied().collect::<Vec<_>>();
    vec![
        Variant { name: "D-color", heads: d.clone(), mode: Mode::Nar },
        Variant { name: "D-color + S-color", heads: with(&[HasStroke, StrokeAb, StrokeLight]), mode: Mode::Nar },
        Variant { name: "D-color + G-color", heads: with(&[HasGradient, GradientAb, GradientLight]), mode: Mode::Nar },
        Variant { name: "ours w/AR", heads: Head::ALL.to_vec(), mode: Mode::Ar },
        Variant { name: "ours", heads: Head::ALL.to_vec(), mode: Mode::Nar },
    ]
}

pub fn sap_samples(posters: &[LabeledPoster], input_size: usize) -> Result<Vec<SapSample>> {
    posters.iter().map(|p| SapSample::new(&p.image, &p.elements, input_size)).collect()
}

/// A trained variant kept alongside the report.
#[derive(Debug, Clone)]
pub struct TrainedVariant {
    pub variant: Variant,
    pub model: SapModel,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub table: MetricsTable,
    pub models: Vec<TrainedVariant>,
}

/// Trains every variant from `cfg` (lambda replaced by the variant's head
/// mask) and scores it with the random guesser on `test`.
pub fn ablation_report(train_set: &[LabeledPoster], test: &[LabeledPoster], cfg: &SapConfig) -> Result<AblationReport> {
    let samples = sap_samples(train_set, cfg.input_size)?;
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for v in ablation_variants() {
        let c = SapConfig { lambda: v.lambda(), ..cfg.clone() };
        let (model, log) = train(&samples, &c, v.mode)?;
        let (p, t) = sap_predictions(&model, v.mode, test)?;
        rows.push((v.name.to_string(), v.mask(style_metrics(&p, &t)?)));
        log::info!("ablation: trained {}", v.name);
        models.push(TrainedVariant { final_loss: log.last_loss().unwrap_or(f64::NAN), variant: v, model });
    }
    let (p, t) = random_predictions(cfg.seed, test)?;
    rows.push((RANDOM.to_string(), style_metrics(&p, &t)?));
    Ok(AblationReport { table: MetricsTable { columns: COLUMNS.to_vec(), rows }, models })
}

pub const BASELINE_ROWS: [&str; 4] = ["MMCQ", "Retrieval", "Classifier", "SAP"];

/// Dominant-color comparison. The retrieval library and classifier are
/// built from `train_set`; `sap` is an already trained model.
pub fn baseline_report(
    train_set: &[LabeledPoster],
    test: &[LabeledPoster],
    cfg: &SapConfig,
    sap: (&SapModel, Mode),
) -> Result<MetricsTable> {
    let mm = MmcqConfig::default();
    let (p, t) = solid_predictions(test, |p, e| mmcq_predict(&p.image, e.bbox, &mm))?;
    let mmcq = style_metrics(&p, &t)?;

    let lib = ColorLibrary::build(train_set)?;
    let (p, t) = solid_predictions(test, |p, e| lib.predict(&p.image, e.bbox))?;
    let retrieval = style_metrics(&p, &t)?;

    let (cls, _) = ClassifierBaseline::train(train_set, cfg)?;
    let (p, t) = solid_predictions(test, |p, e| cls.classify(&p.image, e.bbox, e.category))?;
    let classifier = style_metrics(&p, &t)?;

    let (p, t) = sap_predictions(sap.0, sap.1, test)?;
    let ours = style_metrics(&p, &t)?;

    let rows = BASELINE_ROWS
        .iter()
        .zip([mmcq, retrieval, classifier, ours])
        .map(|(n, r)| (n.to_string(), dominant_only(r)))
        .collect();
    Ok(MetricsTable { columns: COLUMNS[..2].to_vec(), rows })
}
