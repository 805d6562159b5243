use posterforge_tensor::{Graph, Var};

use crate::color::{QColor, AB_BINS, LIGHT_BINS};
use crate::design::{ElementCategory, FontId, StyleAttributes, MAX_FONT_ID};
use crate::error::{Error, Result};

pub const HEAD_COUNT: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    DominantAb,
    DominantLight,
    HasGradient,
    GradientAb,
    GradientLight,
    HasStroke,
    StrokeAb,
    StrokeLight,
    Font,
}

impl Head {
    pub const ALL: [Head; HEAD_COUNT] = [
        Head::DominantAb,
        Head::DominantLight,
        Head::HasGradient,
        Head::GradientAb,
        Head::GradientLight,
        Head::HasStroke,
        Head::StrokeAb,
        Head::StrokeLight,
        Head::Font,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn classes(self) -> usize {
        match self {
            Head::DominantAb | Head::GradientAb | Head::StrokeAb => AB_BINS,
            Head::DominantLight | Head::GradientLight | Head::StrokeLight => LIGHT_BINS,
            Head::HasGradient | Head::HasStroke => 2,
            Head::Font => MAX_FONT_ID as usize,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::DominantAb => "dominant_ab",
            Head::DominantLight => "dominant_light",
            Head::HasGradient => "has_gradient",
            Head::GradientAb => "gradient_ab",
            Head::GradientLight => "gradient_light",
            Head::HasStroke => "has_stroke",
            Head::StrokeAb => "stroke_ab",
            Head::StrokeLight => "stroke_light",
            Head::Font => "font",
        }
    }
}

/// Class target per head; `None` where the pair is not supervised.
pub type Targets = [Option<usize>; HEAD_COUNT];

/// Supervision targets for one element. Logos, backgrounds and unstyled
/// elements are never supervised; color sub-heads only when present.
pub fn targets_for(category: ElementCategory, style: Option<&StyleAttributes>) -> Targets {
    let mut t: Targets = [None; HEAD_COUNT];
    let Some(s) = style else { return t };
    let (tagline, underlay) = (category == ElementCategory::Tagline, category == ElementCategory::Underlay);
    if !tagline && !underlay {
        return t;
    }
    t[Head::DominantAb.index()] = Some(s.dominant.ab as usize);
    t[Head::DominantLight.index()] = Some(s.dominant.light as usize);
    t[Head::HasGradient.index()] = Some(s.gradient.is_some() as usize);
    if let Some(q) = s.gradient {
        t[Head::GradientAb.index()] = Some(q.ab as usize);
        t[Head::GradientLight.index()] = Some(q.light as usize);
    }
    if tagline {
        t[Head::HasStroke.index()] = Some(s.stroke.is_some() as usize);
        if let Some(q) = s.stroke {
            t[Head::StrokeAb.index()] = Some(q.ab as usize);
            t[Head::StrokeLight.index()] = Some(q.light as usize);
        }
        t[Head::Font.index()] = s.font.map(FontId::class);
    }
    t
}

/// Builds the output style from per-head argmax classes, keeping only the
/// attributes the category allows.
pub fn style_from_classes(category: ElementCategory, c: &[usize; HEAD_COUNT]) -> Option<StyleAttributes> {
    if !category.has_style() {
        return None;
    }
    let q = |ab: Head, light: Head| QColor::new(c[ab.index()], c[light.index()]).expect("head sizes match bins");
    let mut s = StyleAttributes::solid(q(Head::DominantAb, Head::DominantLight));
    if c[Head::HasGradient.index()] == 1 {
        s.gradient = Some(q(Head::GradientAb, Head::GradientLight));
    }
    if category == ElementCategory::Tagline {
        if c[Head::HasStroke.index()] == 1 {
            s.stroke = Some(q(Head::StrokeAb, Head::StrokeLight));
        }
        s.font = Some(FontId::from_class(c[Head::Font.index()]));
    }
    Some(s)
}

/// Per-head weighted focal sums for one sample plus the number of
/// applicable (element, head) pairs.
pub struct LossTerms {
    pub per_head: Vec<Option<Var>>,
    pub head_counts: [usize; HEAD_COUNT],
    pub count: usize,
}

pub fn loss_terms(
    g: &mut Graph,
    heads: &[Var],
    targets: &[Targets],
    lambda: &[f64; HEAD_COUNT],
    gamma: f64,
) -> Result<LossTerms> {
    if heads.len() != HEAD_COUNT {
        return Err(Error::InvalidArgument(format!("expected {HEAD_COUNT} heads, got {}", heads.len())));
    }
    let mut per_head = Vec::with_capacity(HEAD_COUNT);
    let mut head_counts = [0; HEAD_COUNT];
    for (j, &h) in heads.iter().enumerate() {
        let col: Vec<Option<usize>> = targets.iter().map(|t| t[j]).collect();
        head_counts[j] = col.iter().flatten().count();
        if head_counts[j] == 0 {
            per_head.push(None);
            continue;
        }
        let w = vec![lambda[j]; col.len()];
        per_head.push(Some(g.focal_loss_rows(h, &col, &w, gamma)?));
    }
    let count = head_counts.iter().sum();
    Ok(LossTerms { per_head, head_counts, count })
}

/// Mean of lambda-weighted focal losses over the applicable pairs.
pub fn sap_loss(
    g: &mut Graph,
    heads: &[Var],
    targets: &[Targets],
    lambda: &[f64; HEAD_COUNT],
    gamma: f64,
) -> Result<Var> {
    let terms = loss_terms(g, heads, targets, lambda, gamma)?;
    if terms.count == 0 {
        return Err(Error::Empty("applicable (element, head) pairs"));
    }
    let mut acc: Option<Var> = None;
    for v in terms.per_head.into_iter().flatten() {
        acc = Some(match acc {
            None => v,
            Some(a) => g.add(a, v)?,
        });
    }
    let total = acc.expect("count > 0");
    Ok(g.scale(total, 1.0 / terms.count as f64))
}
