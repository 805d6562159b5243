use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{generate_sample, SynthConfig};
use crate::design::{parse_annotation, serialize_annotation, PosterSpec};
use crate::error::{invalid, Result};
use crate::raster::{load_image_file, save_image_file, Image};
use crate::render::RenderAssets;
use crate::sap::SapSample;

pub const MANIFEST: &str = "manifest.csv";

/// One manifest line; paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub clean_path: String,
    pub poster_path: String,
    pub annotation_path: String,
    pub seed: u64,
}

/// Writes `n` samples under `dir`; sample `i` uses seed `seed + i`.
pub fn generate_dataset(
    cfg: &SynthConfig,
    n: usize,
    seed: u64,
    dir: &Path,
    assets: &RenderAssets,
) -> Result<Vec<ManifestRow>> {
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    cfg.validate()?;
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("annotations"))?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let s = seed.wrapping_add(i as u64);
        let id = format!("s{i:05}");
        let row = ManifestRow {
            clean_path: format!("images/{id}_clean.png"),
            poster_path: format!("images/{id}_poster.png"),
            annotation_path: format!("annotations/{id}.json"),
            sample_id: id,
            seed: s,
        };
        let mut sample = generate_sample(cfg, s, assets)?;
        sample.spec.image = row.clean_path.clone();
        save_image_file(&sample.clean, dir.join(&row.clean_path))?;
        save_image_file(&sample.poster, dir.join(&row.poster_path))?;
        fs::write(dir.join(&row.annotation_path), serialize_annotation(&sample.spec))?;
        rows.push(row);
    }
    let mut w = csv::Writer::from_path(dir.join(MANIFEST))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    log::info!("synth: wrote {n} samples to {}", dir.display());
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub row: ManifestRow,
    pub clean: Image,
    pub spec: PosterSpec,
}

/// Reads the manifest, clean images and annotations under `dir`.
pub fn load_dataset(dir: &Path) -> Result<Vec<SynthRecord>> {
    let mut rdr = csv::Reader::from_path(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow = row?;
        let clean = load_image_file(dir.join(&row.clean_path))?;
        let parsed = parse_annotation(&fs::read_to_string(dir.join(&row.annotation_path))?)?;
        for w in &parsed.warnings {
            log::warn!("{}: {w}", row.annotation_path);
        }
        out.push(SynthRecord { row, clean, spec: parsed.spec });
    }
    Ok(out)
}

pub fn load_sap_samples(records: &[SynthRecord], input_size: usize) -> Result<Vec<SapSample>> {
    records.iter().map(|r| SapSample::new(&r.clean, &r.spec.elements, input_size)).collect()
}
