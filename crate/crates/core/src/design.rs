//! Poster design space: element categories, layouts, taglines, style
//! attributes and the JSON annotation document.
//!
//! Attribute applicability per category:
//!
//! | category | dominant | gradient | stroke | font |
//! |----------|----------|----------|--------|------|
//! | underlay | required | optional | -      | -    |
//! | tagline  | required | optional | optional | required |
//! | logo, background image | - | - | - | - |

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::color::{QColor, AB_BINS, LIGHT_BINS};
use crate::error::{Error, Result};
use crate::retarget::SaliencyMap;

pub const MAX_FONT_ID: u8 = 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementCategory {
    BackgroundImage,
    Logo,
    Underlay,
    Tagline,
}

impl ElementCategory {
    pub const ALL: [ElementCategory; 4] =
        [ElementCategory::BackgroundImage, ElementCategory::Logo, ElementCategory::Underlay, ElementCategory::Tagline];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementCategory::BackgroundImage => "background_image",
            ElementCategory::Logo => "logo",
            ElementCategory::Underlay => "underlay",
            ElementCategory::Tagline => "tagline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Render order; lower draws first.
    pub fn z_rank(self) -> u8 {
        self as u8
    }

    pub fn has_style(self) -> bool {
        matches!(self, ElementCategory::Underlay | ElementCategory::Tagline)
    }
}

/// Bounding box in poster-relative coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    /// Pixel extent on a `w x h` canvas: `(x0, y0, x1, y1)`, half-open, at
    /// least one pixel each way.
    pub fn to_pixels(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let px = |v: f64, n: usize| ((v * n as f64).round() as usize).min(n);
        let (x0, y0) = (px(self.x1, w).min(w - 1), px(self.y1, h).min(h - 1));
        let (x1, y1) = (px(self.x2, w).max(x0 + 1), px(self.y2, h).max(y0 + 1));
        (x0, y0, x1, y1)
    }

    pub fn intersects(&self, o: &BBox) -> bool {
        self.x1 < o.x2 && o.x1 < self.x2 && self.y1 < o.y2 && o.y1 < self.y2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Tagline(String);

impl Tagline {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::Validation("tagline must have at least one character".into()));
        }
        if text.chars().any(char::is_control) {
            return Err(Error::Validation("tagline contains control characters".into()));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.0.chars()
    }

    pub fn len(&self) -> usize {
        self.0.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<String> for Tagline {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Tagline::new(s)
    }
}

impl From<Tagline> for String {
    fn from(t: Tagline) -> String {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct FontId(u8);

impl FontId {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=MAX_FONT_ID).contains(&id) {
            Ok(Self(id))
        } else {
            Err(Error::Validation(format!("font id {id} outside 1..={MAX_FONT_ID}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based class index for the font head.
    pub fn class(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_class(c: usize) -> Self {
        Self((c as u8).min(MAX_FONT_ID - 1) + 1)
    }
}

impl TryFrom<u8> for FontId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        FontId::new(v)
    }
}

impl From<FontId> for u8 {
    fn from(f: FontId) -> u8 {
        f.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleAttributes {
    pub dominant: QColor,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gradient: Option<QColor>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stroke: Option<QColor>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub font: Option<FontId>,
}

impl StyleAttributes {
    pub fn solid(dominant: QColor) -> Self {
        Self { dominant, gradient: None, stroke: None, font: None }
    }
}

/// Checks one (category, style) pair against the applicability table.
pub fn check_applicability(category: ElementCategory, style: &StyleAttributes) -> Result<()> {
    let fail = |what: &str| {
        Err(Error::Validation(format!("applicability: {what} is not allowed on {} elements", category.as_str())))
    };
    for q in [Some(style.dominant), style.gradient, style.stroke].into_iter().flatten() {
        if !q.is_valid() {
            return Err(Error::Validation(format!("color {q:?} out of range")));
        }
    }
    match category {
        ElementCategory::Underlay => {
            if style.stroke.is_some() {
                return fail("stroke");
            }
            if style.font.is_some() {
                return fail("font");
            }
        }
        ElementCategory::Tagline => {
            if style.font.is_none() {
                return Err(Error::Validation("applicability: tagline requires a font".into()));
            }
        }
        ElementCategory::Logo | ElementCategory::BackgroundImage => return fail("style"),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphicElement {
    pub category: ElementCategory,
    pub bbox: BBox,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<Tagline>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub style: Option<StyleAttributes>,
}

impl GraphicElement {
    pub fn new(category: ElementCategory, bbox: BBox) -> Self {
        Self { category, bbox, text: None, style: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bbox.is_valid() {
            return Err(Error::Validation(format!("invalid bbox {:?}", self.bbox)));
        }
        let is_tagline = self.category == ElementCategory::Tagline;
        if is_tagline != self.text.is_some() {
            return Err(Error::Validation(format!(
                "text must be present exactly on tagline elements ({})",
                self.category.as_str()
            )));
        }
        if let Some(style) = &self.style {
            check_applicability(self.category, style)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosterSpec {
    pub width: usize,
    pub height: usize,
    pub image: String,
    pub elements: Vec<GraphicElement>,
}

impl PosterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("poster size must be positive".into()));
        }
        if self.elements.is_empty() {
            return Err(Error::Validation("poster needs at least one element".into()));
        }
        let backgrounds = self.elements.iter().filter(|e| e.category == ElementCategory::BackgroundImage).count();
        if backgrounds > 1 {
            return Err(Error::Validation("at most one background_image element".into()));
        }
        for (i, e) in self.elements.iter().enumerate() {
            e.validate().map_err(|err| Error::Validation(format!("elements[{i}]: {err}")))?;
        }
        Ok(())
    }

    /// Elements that carry style attributes (underlays and taglines).
    pub fn styled(&self) -> impl Iterator<Item = &GraphicElement> {
        self.elements.iter().filter(|e| e.category.has_style())
    }
}

/// Parsed document plus the paths of ignored unknown fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub spec: PosterSpec,
    pub warnings: Vec<String>,
}

fn schema(path: &str, msg: impl Into<String>) -> Error {
    Error::Schema { path: path.to_string(), msg: msg.into() }
}

fn obj<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn warn_unknown(map: &Map<String, Value>, known: &[&str], path: &str, warnings: &mut Vec<String>) {
    for k in map.keys() {
        if !known.contains(&k.as_str()) {
            warnings.push(format!("{path}.{k}: unknown field ignored"));
        }
    }
}

fn req<'a>(map: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    map.get(key).ok_or_else(|| schema(&format!("{path}.{key}"), "missing required field"))
}

fn uint(v: &Value, path: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| schema(path, "expected a non-negative integer"))
}

fn parse_qcolor(v: &Value, path: &str, warnings: &mut Vec<String>) -> Result<QColor> {
    let m = obj(v, path)?;
    warn_unknown(m, &["ab", "light"], path, warnings);
    let ab = uint(req(m, "ab", path)?, &format!("{path}.ab"))?;
    let light = uint(req(m, "light", path)?, &format!("{path}.light"))?;
    if ab as usize >= AB_BINS {
        return Err(schema(&format!("{path}.ab"), format!("must be < {AB_BINS}")));
    }
    if light as usize >= LIGHT_BINS {
        return Err(schema(&format!("{path}.light"), format!("must be < {LIGHT_BINS}")));
    }
    Ok(QColor { ab: ab as u16, light: light as u8 })
}

fn parse_style(v: &Value, path: &str, warnings: &mut Vec<String>) -> Result<StyleAttributes> {
    let m = obj(v, path)?;
    warn_unknown(m, &["dominant", "gradient", "stroke", "font"], path, warnings);
    let dominant = parse_qcolor(req(m, "dominant", path)?, &format!("{path}.dominant"), warnings)?;
    let mut opt = |key: &str| -> Result<Option<QColor>> {
        match m.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => parse_qcolor(v, &format!("{path}.{key}"), warnings).map(Some),
        }
    };
    let gradient = opt("gradient")?;
    let stroke = opt("stroke")?;
    let font = match m.get("font") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let p = format!("{path}.font");
            let id = uint(v, &p)?;
            Some(
                u8::try_from(id)
                    .ok()
                    .and_then(|id| FontId::new(id).ok())
                    .ok_or_else(|| schema(&p, format!("must be in 1..={MAX_FONT_ID}")))?,
            )
        }
    };
    Ok(StyleAttributes { dominant, gradient, stroke, font })
}

fn parse_element(v: &Value, path: &str, warnings: &mut Vec<String>) -> Result<GraphicElement> {
    let m = obj(v, path)?;
    warn_unknown(m, &["category", "bbox", "text", "style"], path, warnings);
    let cat_path = format!("{path}.category");
    let category = req(m, "category", path)?
        .as_str()
        .and_then(ElementCategory::parse)
        .ok_or_else(|| schema(&cat_path, "expected one of background_image, logo, underlay, tagline"))?;
    let bbox_path = format!("{path}.bbox");
    let coords = req(m, "bbox", path)?
        .as_array()
        .filter(|a| a.len() == 4)
        .ok_or_else(|| schema(&bbox_path, "expected [x1, y1, x2, y2]"))?;
    let mut b = [0.0; 4];
    for (i, c) in coords.iter().enumerate() {
        b[i] = c.as_f64().ok_or_else(|| schema(&format!("{bbox_path}[{i}]"), "expected a number"))?;
    }
    let text = match m.get("text") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let p = format!("{path}.text");
            let s = v.as_str().ok_or_else(|| schema(&p, "expected a string"))?;
            Some(Tagline::new(s).map_err(|e| schema(&p, e.to_string()))?)
        }
    };
    let style = match m.get("style") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_style(v, &format!("{path}.style"), warnings)?),
    };
    Ok(GraphicElement { category, bbox: BBox::from(b), text, style })
}

/// Parses and validates an annotation document.
pub fn parse_annotation(doc: &str) -> Result<Parsed> {
    let root: Value = serde_json::from_str(doc).map_err(|e| schema("$", e.to_string()))?;
    let mut warnings = Vec::new();
    let m = obj(&root, "$")?;
    warn_unknown(m, &["width", "height", "image", "elements"], "$", &mut warnings);
    let width = uint(req(m, "width", "$")?, "$.width")? as usize;
    let height = uint(req(m, "height", "$")?, "$.height")? as usize;
    let image = req(m, "image", "$")?.as_str().ok_or_else(|| schema("$.image", "expected a string"))?.to_string();
    let elements = req(m, "elements", "$")?
        .as_array()
        .ok_or_else(|| schema("$.elements", "expected an array"))?
        .iter()
        .enumerate()
        .map(|(i, e)| parse_element(e, &format!("$.elements[{i}]"), &mut warnings))
        .collect::<Result<Vec<_>>>()?;
    let spec = PosterSpec { width, height, image, elements };
    spec.validate()?;
    Ok(Parsed { spec, warnings })
}

/// Canonical pretty-printed JSON; optional fields that are absent are omitted.
pub fn serialize_annotation(spec: &PosterSpec) -> String {
    let mut s = serde_json::to_string_pretty(spec).expect("spec types always serialize");
    s.push('\n');
    s
}

const MARGIN: f64 = 0.03;
const GAP: f64 = 0.04;
const LOGO_H: f64 = 0.06;
const LOGO_GAP: f64 = 0.02;
const MAX_LINE_H: f64 = 0.09;
const HEAD_W: f64 = 0.7;
const SUB_W: f64 = 0.56;
const UNDERLAY_PAD: (f64, f64) = (0.03, 0.012);
const PLACEHOLDER: &str = "TAGLINE";

/// Rule-based layout: a centered tagline stack in whichever of the top and
/// bottom thirds is less salient (bottom on ties), a logo above the stack,
/// and an underlay behind the first (widest) tagline.
pub fn heuristic_layout(sal: &SaliencyMap, n_taglines: usize, want_logo: bool) -> Result<Vec<GraphicElement>> {
    if n_taglines == 0 {
        return Err(crate::error::invalid("heuristic_layout needs at least one tagline"));
    }
    let img = sal.image();
    let (w, h) = (img.width(), img.height());
    let third = h / 3;
    let band_mean = |y0: usize, y1: usize| {
        let mut s = 0.0;
        for y in y0..y1 {
            for x in 0..w {
                s += img.get(x, y, 0);
            }
        }
        s / ((y1 - y0).max(1) * w) as f64
    };
    let top_mean = band_mean(0, third.max(1));
    let bottom_mean = band_mean(h - third.max(1), h);
    let use_top = top_mean < bottom_mean;

    let avail = 1.0 / 3.0 - 2.0 * MARGIN - if want_logo { LOGO_H + LOGO_GAP } else { 0.0 };
    let line_h = ((avail - GAP * (n_taglines - 1) as f64) / n_taglines as f64).min(MAX_LINE_H);
    if line_h <= 0.005 {
        return Err(crate::error::invalid(format!("{n_taglines} taglines do not fit in a third")));
    }
    let group_h =
        n_taglines as f64 * line_h + GAP * (n_taglines - 1) as f64 + if want_logo { LOGO_H + LOGO_GAP } else { 0.0 };

    let build = |top: f64| -> Vec<GraphicElement> {
        let mut out = Vec::new();
        let mut y = top;
        if want_logo {
            out.push(GraphicElement::new(ElementCategory::Logo, BBox::new(0.5 - LOGO_H, y, 0.5 + LOGO_H, y + LOGO_H)));
            y += LOGO_H + LOGO_GAP;
        }
        let mut lines = Vec::new();
        for i in 0..n_taglines {
            let wdt = if i == 0 { HEAD_W } else { SUB_W };
            let mut e = GraphicElement::new(
                ElementCategory::Tagline,
                BBox::new(0.5 - wdt / 2.0, y, 0.5 + wdt / 2.0, y + line_h),
            );
            e.text = Some(Tagline(PLACEHOLDER.into()));
            lines.push(e);
            y += line_h + GAP;
        }
        let head = lines[0].bbox;
        out.push(GraphicElement::new(
            ElementCategory::Underlay,
            BBox::new(
                (head.x1 - UNDERLAY_PAD.0).max(0.0),
                (head.y1 - UNDERLAY_PAD.1).max(0.0),
                (head.x2 + UNDERLAY_PAD.0).min(1.0),
                (head.y2 + UNDERLAY_PAD.1).min(1.0),
            ),
        ));
        out.extend(lines);
        out
    };

    // Candidate group positions inside the chosen third, default anchor first.
    let (lo, hi) =
        if use_top { (MARGIN, 1.0 / 3.0 - MARGIN - group_h) } else { (2.0 / 3.0 + MARGIN, 1.0 - MARGIN - group_h) };
    let default = if use_top { lo } else { hi };
    let mut positions = vec![default];
    let steps = ((hi - lo) / 0.01).floor().max(0.0) as usize;
    for s in 0..=steps {
        let p = if use_top { lo + s as f64 * 0.01 } else { hi - s as f64 * 0.01 };
        positions.push(p.clamp(lo.min(hi), hi.max(lo)));
    }

    let hot = sal.quantile_mask(0.9);
    let overlap = |els: &[GraphicElement]| -> usize {
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                if !hot[y * w + x] {
                    continue;
                }
                let (px, py) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
                if els.iter().any(|e| px >= e.bbox.x1 && px < e.bbox.x2 && py >= e.bbox.y1 && py < e.bbox.y2) {
                    count += 1;
                }
            }
        }
        count
    };
    let mut best = build(default);
    let mut best_overlap = overlap(&best);
    for &p in &positions[1..] {
        if best_overlap == 0 {
            break;
        }
        let cand = build(p);
        let o = overlap(&cand);
        if o < best_overlap {
            best = cand;
            best_overlap = o;
        }
    }
    Ok(best)
}

/// Replaces tagline texts in order; extra texts are ignored, missing ones
/// keep their current text.
pub fn attach_taglines(elements: &mut [GraphicElement], texts: &[Tagline]) {
    let lines = elements.iter_mut().filter(|e| e.category == ElementCategory::Tagline);
    for (e, t) in lines.zip(texts) {
        e.text = Some(t.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Image;

    fn q(ab: u16, light: u8) -> QColor {
        QColor { ab, light }
    }

    #[test]
    fn minimal_doc() {
        let doc = r#"{"width": 300, "height": 400, "image": "bg.png",
            "elements": [{"category": "tagline", "bbox": [0.1, 0.7, 0.9, 0.8], "text": "Hello",
                          "style": {"dominant": {"ab": 3, "light": 8}, "font": 5}}]}"#;
        let p = parse_annotation(doc).unwrap();
        assert_eq!(p.spec.elements.len(), 1);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn stroke_on_underlay_rejected() {
        let doc = r#"{"width": 10, "height": 10, "image": "x",
            "elements": [{"category": "underlay", "bbox": [0.1, 0.1, 0.5, 0.5],
                          "style": {"dominant": {"ab": 1, "light": 1}, "stroke": {"ab": 2, "light": 2}}}]}"#;
        let err = parse_annotation(doc).unwrap_err().to_string();
        assert!(err.contains("applicability") && err.contains("stroke"), "{err}");
    }

    #[test]
    fn schema_errors_name_the_path() {
        let doc = r#"{"width": 10, "height": 10, "image": "x",
            "elements": [{"category": "logo", "bbox": [0.1, 0.1, 0.5]}]}"#;
        match parse_annotation(doc) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "$.elements[0].bbox"),
            other => panic!("{other:?}"),
        }
        let doc = r#"{"width": 10, "height": 10, "image": "x",
            "elements": [{"category": "tagline", "bbox": [0.1, 0.1, 0.5, 0.5], "text": "a",
                          "style": {"dominant": {"ab": 1}, "font": 1}}]}"#;
        match parse_annotation(doc) {
            Err(Error::Schema { path, .. }) => {
                assert_eq!(path, "$.elements[0].style.dominant.light")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_warn() {
        let doc = r#"{"width": 10, "height": 10, "image": "x", "author": "me",
            "elements": [{"category": "logo", "bbox": [0.1, 0.1, 0.5, 0.5], "opacity": 1}]}"#;
        let p = parse_annotation(doc).unwrap();
        assert_eq!(p.warnings.len(), 2);
        assert!(p.warnings[0].contains("$.author"));
    }

    #[test]
    fn text_only_on_taglines() {
        let mut e = GraphicElement::new(ElementCategory::Logo, BBox::new(0.0, 0.0, 0.1, 0.1));
        e.text = Some(Tagline::new("x").unwrap());
        assert!(e.validate().is_err());
        let t = GraphicElement::new(ElementCategory::Tagline, BBox::new(0.0, 0.0, 0.1, 0.1));
        assert!(t.validate().is_err());
    }

    #[test]
    fn serializer_omits_empty_optionals_and_is_deterministic() {
        let mut tag = GraphicElement::new(ElementCategory::Tagline, BBox::new(0.1, 0.2, 0.3, 0.4));
        tag.text = Some(Tagline::new("Sale").unwrap());
        tag.style = Some(StyleAttributes {
            dominant: q(4, 2),
            gradient: None,
            stroke: None,
            font: Some(FontId::new(3).unwrap()),
        });
        let spec = PosterSpec {
            width: 10,
            height: 20,
            image: "bg".into(),
            elements: vec![GraphicElement::new(ElementCategory::Logo, BBox::new(0.0, 0.0, 0.5, 0.5)), tag],
        };
        let a = serialize_annotation(&spec);
        assert_eq!(a, serialize_annotation(&spec));
        assert!(!a.contains("gradient") && !a.contains("stroke") && !a.contains("null"));
        assert_eq!(parse_annotation(&a).unwrap().spec, spec);
        let w = a.find("\"width\"").unwrap();
        let e = a.find("\"elements\"").unwrap();
        assert!(w < e);
    }

    #[test]
    fn applicability_table() {
        let full = StyleAttributes {
            dominant: q(0, 0),
            gradient: Some(q(1, 1)),
            stroke: Some(q(2, 2)),
            font: Some(FontId::new(1).unwrap()),
        };
        assert!(check_applicability(ElementCategory::Tagline, &full).is_ok());
        assert!(check_applicability(ElementCategory::Underlay, &full).is_err());
        assert!(check_applicability(ElementCategory::Logo, &StyleAttributes::solid(q(0, 0))).is_err());
        let under = StyleAttributes { gradient: Some(q(1, 1)), ..StyleAttributes::solid(q(0, 0)) };
        assert!(check_applicability(ElementCategory::Underlay, &under).is_ok());
        assert!(check_applicability(ElementCategory::Tagline, &under).is_err());
    }

    fn sal_from(img: Image) -> SaliencyMap {
        SaliencyMap::new(img).unwrap()
    }

    #[test]
    fn uniform_saliency_goes_bottom() {
        let sal = sal_from(Image::filled(60, 90, &[0.5]));
        let els = heuristic_layout(&sal, 2, true).unwrap();
        assert!(els.iter().all(|e| e.bbox.y1 >= 2.0 / 3.0));
        let zero = sal_from(Image::filled(60, 90, &[0.0]));
        let els = heuristic_layout(&zero, 1, false).unwrap();
        assert!(els.iter().all(|e| e.bbox.y1 >= 2.0 / 3.0));
    }

    #[test]
    fn bottom_heavy_saliency_goes_top() {
        let sal = sal_from(Image::from_fn(60, 90, |_, y| [if y >= 45 { 1.0 } else { 0.1 }]));
        // Band means: top third 0.1, bottom third 1.0.
        let els = heuristic_layout(&sal, 2, true).unwrap();
        assert!(els.iter().all(|e| e.bbox.y2 <= 1.0 / 3.0));
    }

    #[test]
    fn three_taglines_equal_heights_with_gaps() {
        let sal = sal_from(Image::filled(50, 50, &[0.0]));
        let els = heuristic_layout(&sal, 3, false).unwrap();
        let lines: Vec<_> = els.iter().filter(|e| e.category == ElementCategory::Tagline).collect();
        assert_eq!(lines.len(), 3);
        for pair in lines.windows(2) {
            assert!((pair[0].bbox.height() - pair[1].bbox.height()).abs() < 1e-12);
            assert!((pair[1].bbox.y1 - pair[0].bbox.y2 - 0.04).abs() < 1e-12);
        }
        assert_eq!(els.iter().filter(|e| e.category == ElementCategory::Underlay).count(), 1);
    }

    #[test]
    fn layout_validates() {
        let sal = sal_from(Image::from_fn(40, 60, |x, y| [((x * y) % 7) as f64 / 7.0]));
        for n in 1..=3 {
            for logo in [false, true] {
                let els = heuristic_layout(&sal, n, logo).unwrap();
                let spec = PosterSpec { width: 40, height: 60, image: "x".into(), elements: els };
                spec.validate().unwrap();
            }
        }
    }
}
