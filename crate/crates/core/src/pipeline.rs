//! The four-stage poster pipeline driven by one JSON config: retarget the
//! product image, lay out elements, predict their styles, render.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{
    attach_taglines, heuristic_layout, parse_annotation, serialize_annotation, BBox, ElementCategory, GraphicElement,
    PosterSpec, Tagline,
};
use crate::error::{invalid, Error, Result};
use crate::raster::{load_image_file, save_image_file, Image};
use crate::render::{compose_poster, retrieve_underlay, RenderAssets, TextOptions};
use crate::retarget::{clean_fill, ft_saliency, retarget, RetargetOptions};
use crate::sap::{Mode, SapConfig, SapModel};
use crate::synth::{sample_tagline, SynthConfig};

/// Environment variable naming an asset directory that replaces the
/// bundled glyphs, font map and underlay shapes.
pub const ASSETS_ENV: &str = "POSTERFORGE_ASSETS";

pub fn load_assets() -> Result<RenderAssets> {
    match std::env::var_os(ASSETS_ENV) {
        Some(dir) if !dir.is_empty() => RenderAssets::load_dir(Path::new(&dir)),
        _ => Ok(RenderAssets::bundled()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum LayoutSource {
    /// Rule-based layout on the retargeted image.
    Heuristic {
        #[serde(default)]
        logo: bool,
    },
    /// Elements of an annotation document; bboxes are size-independent.
    File { path: PathBuf },
}

impl Default for LayoutSource {
    fn default() -> Self {
        LayoutSource::Heuristic { logo: false }
    }
}

/// Side file written next to a checkpoint so it can be rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config: SapConfig,
    pub mode: Mode,
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save_model(model: &SapModel, mode: Mode, checkpoint: &Path) -> Result<()> {
    model.save(fs::File::create(checkpoint)?)?;
    let meta = ModelMeta { config: model.config().clone(), mode };
    fs::write(meta_path(checkpoint), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_model(checkpoint: &Path) -> Result<(SapModel, Mode)> {
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(meta_path(checkpoint))?)?;
    let model = SapModel::load(meta.config, std::io::BufReader::new(fs::File::open(checkpoint)?))?;
    Ok((model, meta.mode))
}

fn default_name() -> String {
    "poster".into()
}

fn default_tagline_count() -> usize {
    2
}

/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    /// Output sizes as `[width, height]`; each reuses the cleaned input.
    pub sizes: Vec<[usize; 2]>,
    #[serde(default)]
    pub layout: LayoutSource,
    /// One tagline per non-empty line. Without it, heuristic layouts get
    /// `tagline_count` synthesized lines and file layouts keep their text.
    #[serde(default)]
    pub taglines: Option<PathBuf>,
    #[serde(default = "default_tagline_count")]
    pub tagline_count: usize,
    /// Checkpoint whose `.json` side file holds its config and mode. When
    /// absent, every styled element of the layout must carry a style.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub retarget: RetargetOptions,
    #[serde(default)]
    pub render: TextOptions,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_name")]
    pub name: String,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.output_dir);
        self.mask.as_mut().map(fix);
        self.taglines.as_mut().map(fix);
        self.checkpoint.as_mut().map(fix);
        if let LayoutSource::File { path } = &mut self.layout {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(invalid("at least one output size is required"));
        }
        if let Some(s) = self.sizes.iter().find(|s| s[0] < 8 || s[1] < 8) {
            return Err(invalid(format!("size {}x{} is below 8x8", s[0], s[1])));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name must be a plain file stem"));
        }
        let mut files = vec![&self.input];
        files.extend(&self.mask);
        files.extend(&self.taglines);
        files.extend(&self.checkpoint);
        if let LayoutSource::File { path } = &self.layout {
            files.push(path);
        }
        for f in files {
            if !f.is_file() {
                return Err(invalid(format!("{} does not exist", f.display())));
            }
        }
        Ok(())
    }
}

/// One finished size.
#[derive(Debug, Clone, PartialEq)]
pub struct PosterOutput {
    pub width: usize,
    pub height: usize,
    pub poster: PathBuf,
    pub background: PathBuf,
    pub annotation: PathBuf,
    /// Underlay shape chosen per underlay element, in document order.
    pub underlays: Vec<u32>,
    pub warnings: Vec<String>,
}

/// A failure and the stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

/// Stage outcome callback: name, success, elapsed milliseconds.
pub type StageLog<'a> = &'a mut dyn FnMut(&str, bool, u128);

fn stage<T>(
    name: &str,
    log: &mut dyn FnMut(&str, bool, u128),
    f: impl FnOnce() -> Result<T>,
) -> std::result::Result<T, StageError> {
    let t = Instant::now();
    let r = f();
    log(name, r.is_ok(), t.elapsed().as_millis());
    r.map_err(|error| StageError { stage: name.to_string(), error })
}

fn read_taglines(path: &Path) -> Result<Vec<Tagline>> {
    let lines: Vec<Tagline> = fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(Tagline::new)
        .collect::<Result<_>>()?;
    if lines.is_empty() {
        return Err(Error::Empty("tagline file"));
    }
    Ok(lines)
}

/// Runs every size in order and writes poster, background and annotation
/// for each under `output_dir`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    assets: &RenderAssets,
    log: StageLog<'_>,
) -> std::result::Result<Vec<PosterOutput>, StageError> {
    let (cleaned, texts, file_layout, model) = stage("load", log, || {
        cfg.validate()?;
        let img = load_image_file(&cfg.input)?.to_rgb();
        let cleaned = match &cfg.mask {
            Some(m) => clean_fill(&img, &load_image_file(m)?)?,
            None => img,
        };
        let texts = match &cfg.taglines {
            Some(p) => Some(read_taglines(p)?),
            None => None,
        };
        let file_layout = match &cfg.layout {
            LayoutSource::File { path } => {
                let parsed = parse_annotation(&fs::read_to_string(path)?)?;
                for w in &parsed.warnings {
                    log::warn!("{}: {w}", path.display());
                }
                Some(parsed.spec.elements)
            }
            LayoutSource::Heuristic { .. } => None,
        };
        let model = match &cfg.checkpoint {
            Some(p) => Some(load_model(p)?),
            None => None,
        };
        fs::create_dir_all(&cfg.output_dir)?;
        Ok((cleaned, texts, file_layout, model))
    })?;
    let synthesized = stage("taglines", log, || {
        if texts.is_some() || file_layout.is_some() {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sc = SynthConfig::default();
        (0..cfg.tagline_count.max(1)).map(|_| sample_tagline(&sc, &mut rng)).collect()
    })?;
    let texts = texts.unwrap_or(synthesized);

    let mut outputs = Vec::new();
    for &[w, h] in &cfg.sizes {
        let tag = |s: &str| format!("{s}:{w}x{h}");
        // The mask was applied once up front. Snapped so the saved background re-renders identically.
        let bg = stage(&tag("retarget"), log, || Ok(retarget(&cleaned, None, w, h, &cfg.retarget)?.snapped8()))?;
        let mut elements = stage(&tag("layout"), log, || {
            let mut els = match (&file_layout, &cfg.layout) {
                (Some(e), _) => e.clone(),
                (None, LayoutSource::Heuristic { logo }) => {
                    let mut els =
                        vec![GraphicElement::new(ElementCategory::BackgroundImage, BBox::new(0.0, 0.0, 1.0, 1.0))];
                    els.extend(heuristic_layout(&ft_saliency(&bg)?, texts.len(), *logo)?);
                    els
                }
                (None, LayoutSource::File { .. }) => {
                    unreachable!("file layouts are loaded up front")
                }
            };
            attach_taglines(&mut els, &texts);
            Ok(els)
        })?;
        stage(&tag("predict"), log, || {
            if let Some((model, mode)) = &model {
                let styles = model.predict(&bg, &elements, *mode)?;
                for (e, s) in elements.iter_mut().zip(styles) {
                    if s.is_some() {
                        e.style = s;
                    }
                }
            }
            match elements.iter().position(|e| e.category.has_style() && e.style.is_none()) {
                Some(i) => Err(invalid(format!("element {i} has no style and no checkpoint was given"))),
                None => Ok(()),
            }
        })?;
        let underlays = stage(&tag("underlay"), log, || {
            elements
                .iter()
                .filter(|e| e.category == ElementCategory::Underlay)
                .map(|e| {
                    let (x0, y0, x1, y1) = e.bbox.to_pixels(w, h);
                    Ok(retrieve_underlay((x1 - x0) as f64, (y1 - y0) as f64, &assets.underlays.shapes)?.id)
                })
                .collect::<Result<Vec<u32>>>()
        })?;
        let out = stage(&tag("render"), log, || {
            let stem = format!("{}_{w}x{h}", cfg.name);
            let bg_name = format!("{stem}_bg.png");
            let spec = PosterSpec { width: w, height: h, image: bg_name.clone(), elements };
            let a = RenderAssets { text: cfg.render, ..assets.clone() };
            let rendered = compose_poster(&bg, &spec, &a)?;
            let o = PosterOutput {
                width: w,
                height: h,
                poster: cfg.output_dir.join(format!("{stem}.png")),
                background: cfg.output_dir.join(bg_name),
                annotation: cfg.output_dir.join(format!("{stem}.json")),
                underlays,
                warnings: rendered.warnings,
            };
            save_image_file(&bg, &o.background)?;
            save_image_file(&rendered.image, &o.poster)?;
            fs::write(&o.annotation, serialize_annotation(&spec))?;
            Ok(o)
        })?;
        outputs.push(out);
    }
    Ok(outputs)
}

/// Renders an annotation file against the background it names (resolved
/// next to the annotation).
pub fn render_annotation(path: &Path, assets: &RenderAssets) -> Result<(Image, Vec<String>)> {
    let parsed = parse_annotation(&fs::read_to_string(path)?)?;
    let bg_path = path.parent().unwrap_or(Path::new(".")).join(&parsed.spec.image);
    let bg = load_image_file(bg_path)?;
    let r = compose_poster(&bg, &parsed.spec, assets)?;
    let mut warnings = parsed.warnings;
    warnings.extend(r.warnings);
    Ok((r.image, warnings))
}
