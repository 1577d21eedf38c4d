//! Case corpora: generation, PNG/JSON persistence and the manifest CSV.
//!
//! On disk a corpus is `manifest.csv` (columns `case_id, diagnosis, role,
//! slides`, slide sidecars joined by `;`) next to a `slides/` directory that
//! holds `<slide>.png`, `<slide>_mask.png` and `<slide>.json` per slide.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::color::ColorStats;
use super::{generate_slide, Diagnosis, Difficulty, SlideError, SyntheticSlide, TextureParams};
use crate::rng::{derive_path, stream_id};

/// What a case is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusRole {
    /// Training case with pixel annotations.
    Annotated,
    /// Training case known only by its diagnosis.
    Complementary,
    /// Annotated case held out for model selection.
    Validation,
    /// Held-out case for case-level evaluation.
    Test,
}

impl CorpusRole {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusRole::Annotated => "annotated",
            CorpusRole::Complementary => "complementary",
            CorpusRole::Validation => "validation",
            CorpusRole::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<CorpusRole> {
        match s {
            "annotated" => Some(CorpusRole::Annotated),
            "complementary" => Some(CorpusRole::Complementary),
            "validation" => Some(CorpusRole::Validation),
            "test" => Some(CorpusRole::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub cases: usize,
    pub annotated_cases: usize,
    pub validation_cases: usize,
    pub test_cases: usize,
    pub slides_per_case: usize,
    pub slide_size: usize,
    pub patch_size: usize,
    /// Grid stride in patch lengths.
    pub stride: usize,
    /// Overrides `texture.texture_distance` when set.
    pub difficulty: Option<Difficulty>,
    pub texture: TextureParams,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            cases: 40,
            annotated_cases: 4,
            validation_cases: 4,
            test_cases: 20,
            slides_per_case: 1,
            slide_size: 1024,
            patch_size: 64,
            stride: 2,
            difficulty: None,
            texture: TextureParams::default(),
        }
    }
}

impl CorpusConfig {
    pub fn texture_params(&self) -> TextureParams {
        match self.difficulty {
            Some(d) => TextureParams { texture_distance: d.texture_distance(), ..self.texture.clone() },
            None => self.texture.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), SlideError> {
        self.texture_params().validate()?;
        if self.annotated_cases + self.validation_cases + self.test_cases > self.cases {
            return Err(SlideError::InvalidConfig(
                "annotated_cases + validation_cases + test_cases exceeds cases".into(),
            ));
        }
        if self.slides_per_case == 0 || self.stride == 0 {
            return Err(SlideError::InvalidConfig("slides_per_case and stride must be >= 1".into()));
        }
        if self.patch_size == 0 || self.patch_size > self.slide_size {
            return Err(SlideError::PatchLargerThanSlide {
                patch: self.patch_size,
                height: self.slide_size,
                width: self.slide_size,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub case_id: String,
    pub diagnosis: Diagnosis,
    pub role: CorpusRole,
    pub slides: Vec<SyntheticSlide>,
}

impl SyntheticCase {
    pub fn color_stats(&self) -> ColorStats {
        ColorStats::of_images(self.slides.iter().map(|s| &s.image[..]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub cases: Vec<SyntheticCase>,
}

impl Corpus {
    pub fn with_role(&self, role: CorpusRole) -> impl Iterator<Item = &SyntheticCase> {
        self.cases.iter().filter(move |c| c.role == role)
    }
}

/// Roles are assigned in blocks (annotated, complementary, validation,
/// test) and diagnoses alternate within each block, so every role is
/// balanced.
pub fn build_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus, SlideError> {
    cfg.validate()?;
    let params = cfg.texture_params();
    let n_compl = cfg.cases - cfg.annotated_cases - cfg.validation_cases - cfg.test_cases;
    let roles = std::iter::repeat(CorpusRole::Annotated)
        .take(cfg.annotated_cases)
        .chain(std::iter::repeat(CorpusRole::Complementary).take(n_compl))
        .chain(std::iter::repeat(CorpusRole::Validation).take(cfg.validation_cases))
        .chain(std::iter::repeat(CorpusRole::Test).take(cfg.test_cases));
    let mut within = [0usize; 4];
    let cases = roles
        .enumerate()
        .map(|(i, role)| {
            let pos = &mut within[role as usize];
            let diagnosis = if *pos % 2 == 0 { Diagnosis::ClassA } else { Diagnosis::ClassB };
            *pos += 1;
            let case_id = format!("case-{i:03}");
            let slides = (0..cfg.slides_per_case)
                .map(|s| {
                    let slide_seed = derive_path(seed, &[stream_id("slide"), i as u64, s as u64]);
                    let mut slide = generate_slide(slide_seed, &case_id, diagnosis, cfg.slide_size, &params);
                    slide.case_id = case_id.clone();
                    slide
                })
                .collect();
            SyntheticCase { case_id, diagnosis, role, slides }
        })
        .collect();
    Ok(Corpus { cases })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SlideSidecar {
    case_id: String,
    diagnosis: Diagnosis,
    height: usize,
    width: usize,
    image: String,
    mask: String,
    color_stats: ColorStats,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    case_id: String,
    diagnosis: String,
    role: String,
    slides: String,
}

fn slide_name(case_id: &str, index: usize) -> String {
    format!("{case_id}-s{index}")
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<(), SlideError> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| SlideError::Io(e.to_string()))?;
    writer.write_image_data(data).map_err(|e| SlideError::Io(e.to_string()))?;
    writer.finish().map_err(|e| SlideError::Io(e.to_string()))
}

fn read_png(path: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>), SlideError> {
    let fmt = |reason: String| SlideError::Format { path: path.display().to_string(), reason };
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder.read_info().map_err(|e| fmt(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(fmt("expected 8-bit samples".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, buf))
}

/// Writes an RGB image in `[0, 1]` as an 8-bit PNG.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<(), SlideError> {
    let bytes: Vec<u8> = rgb.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write_png(path, width, height, png::ColorType::Rgb, &bytes)
}

/// Writes an RGBA byte image.
pub fn write_rgba_png(path: &Path, width: usize, height: usize, rgba: &[u8]) -> Result<(), SlideError> {
    write_png(path, width, height, png::ColorType::Rgba, rgba)
}

pub fn save_slide(dir: &Path, name: &str, slide: &SyntheticSlide) -> Result<PathBuf, SlideError> {
    std::fs::create_dir_all(dir)?;
    let image = format!("{name}.png");
    let mask = format!("{name}_mask.png");
    write_rgb_png(&dir.join(&image), slide.width, slide.height, &slide.image)?;
    write_png(&dir.join(&mask), slide.width, slide.height, png::ColorType::Grayscale, &slide.gt_mask)?;
    let sidecar = SlideSidecar {
        case_id: slide.case_id.clone(),
        diagnosis: slide.diagnosis,
        height: slide.height,
        width: slide.width,
        image,
        mask,
        color_stats: ColorStats::of_images([&slide.image[..]]),
    };
    let path = dir.join(format!("{name}.json"));
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&path, json + "\n")?;
    Ok(path)
}

pub fn load_slide(sidecar_path: &Path) -> Result<SyntheticSlide, SlideError> {
    let fmt = |reason: String| SlideError::Format { path: sidecar_path.display().to_string(), reason };
    let text = std::fs::read_to_string(sidecar_path)?;
    let meta: SlideSidecar = serde_json::from_str(&text).map_err(|e| fmt(e.to_string()))?;
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let (w, h, color, rgb) = read_png(&dir.join(&meta.image))?;
    let (mw, mh, mcolor, mask) = read_png(&dir.join(&meta.mask))?;
    if color != png::ColorType::Rgb || mcolor != png::ColorType::Grayscale {
        return Err(fmt("expected an RGB image and a grayscale mask".into()));
    }
    if (w, h) != (meta.width, meta.height) || (mw, mh) != (w, h) {
        return Err(fmt("image size does not match sidecar".into()));
    }
    Ok(SyntheticSlide {
        case_id: meta.case_id,
        diagnosis: meta.diagnosis,
        height: h,
        width: w,
        image: rgb.iter().map(|&b| b as f32 / 255.0).collect(),
        gt_mask: mask,
    })
}

/// Writes every slide and the manifest; returns the manifest path.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf, SlideError> {
    let slide_dir = dir.join("slides");
    std::fs::create_dir_all(&slide_dir)?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| SlideError::Io(e.to_string()))?;
    for case in &corpus.cases {
        let mut names = Vec::new();
        for (i, slide) in case.slides.iter().enumerate() {
            let name = slide_name(&case.case_id, i);
            save_slide(&slide_dir, &name, slide)?;
            names.push(format!("slides/{name}.json"));
        }
        w.serialize(ManifestRow {
            case_id: case.case_id.clone(),
            diagnosis: case.diagnosis.as_str().into(),
            role: case.role.as_str().into(),
            slides: names.join(";"),
        })
        .map_err(|e| SlideError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(manifest)
}

/// A slide that could not be loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingSlide {
    pub case_id: String,
    pub path: PathBuf,
    pub reason: String,
}

/// Reads a corpus manifest. Unreadable slides are reported rather than
/// failing the whole load; cases left with no slides are dropped.
pub fn load_corpus(manifest: &Path) -> Result<(Corpus, Vec<MissingSlide>), SlideError> {
    let fmt = |reason: String| SlideError::Format { path: manifest.display().to_string(), reason };
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| fmt(e.to_string()))?;
    let mut cases = Vec::new();
    let mut missing = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| fmt(e.to_string()))?;
        let diagnosis = Diagnosis::parse(&row.diagnosis).ok_or_else(|| fmt(format!("unknown diagnosis {}", row.diagnosis)))?;
        let role = CorpusRole::parse(&row.role).ok_or_else(|| fmt(format!("unknown role {}", row.role)))?;
        let mut slides = Vec::new();
        for rel in row.slides.split(';').filter(|s| !s.is_empty()) {
            let path = base.join(rel);
            match load_slide(&path) {
                Ok(s) => slides.push(s),
                Err(e) => missing.push(MissingSlide { case_id: row.case_id.clone(), path, reason: e.to_string() }),
            }
        }
        if !slides.is_empty() {
            cases.push(SyntheticCase { case_id: row.case_id, diagnosis, role, slides });
        }
    }
    Ok((Corpus { cases }, missing))
}
