//! Procedural training data: a 50 x 4 x 8 x 19 style grid rendered to
//! facial-hair images with masks, auto-annotated with guide strokes, and
//! written as PNG + stroke JSON + a JSON-lines manifest. Also ingests
//! user-supplied segmented photos.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.jsonl
//! images/<id>.png   masks/<id>.png   strokes/<id>.json
//! ```

mod render;

pub use render::{fiber_layout, render_background, render_sample, render_sample_in, Fiber, PALETTES, PALETTE_NAMES};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flowfield::FieldParams;
use crate::imagecore::{encode_mask_png, encode_png, load_mask_png, load_png, MaskImage, RasterImage};
use crate::strokes::{extract_guide_strokes, StrokeParams, StrokeSet};

pub const STYLES: u32 = 50;
pub const LENGTHS: u32 = 4;
pub const PALETTE_COUNT: u32 = 8;
pub const YAWS: u32 = 19;
pub const GRID_SIZE: usize = (STYLES * LENGTHS * PALETTE_COUNT * YAWS) as usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub style_id: u32,
    pub length_level: u32,
    pub palette_id: u32,
    /// -90..=90 in steps of 10.
    pub yaw_deg: i32,
    /// Fibers per pixel of template area.
    pub density: f32,
    pub curliness: f32,
    pub rng_seed: u64,
}

impl StyleParams {
    /// Grid point with the style's default density and curliness.
    pub fn from_grid(style_id: u32, length_level: u32, palette_id: u32, yaw_deg: i32, rng_seed: u64) -> Result<Self> {
        let (density, curliness) = render::style_defaults(style_id);
        let p = Self {
            style_id,
            length_level,
            palette_id,
            yaw_deg,
            density,
            curliness,
            rng_seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Decodes a flat grid index in `0..GRID_SIZE`.
    pub fn from_index(index: usize, rng_seed: u64) -> Result<Self> {
        if index >= GRID_SIZE {
            return Err(Error::InvalidArgument(format!("grid index {index} out of range")));
        }
        let i = index as u32;
        let yaw = i % YAWS;
        let palette = (i / YAWS) % PALETTE_COUNT;
        let length = (i / (YAWS * PALETTE_COUNT)) % LENGTHS;
        let style = i / (YAWS * PALETTE_COUNT * LENGTHS);
        Self::from_grid(style, length, palette, -90 + 10 * yaw as i32, rng_seed)
    }

    pub fn grid_index(&self) -> usize {
        let yaw = ((self.yaw_deg + 90) / 10) as u32;
        (((self.style_id * LENGTHS + self.length_level) * PALETTE_COUNT + self.palette_id) * YAWS + yaw) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.style_id >= STYLES {
            return bad(format!("style_id {} out of range", self.style_id));
        }
        if self.length_level >= LENGTHS {
            return bad(format!("length_level {} out of range", self.length_level));
        }
        if self.palette_id >= PALETTE_COUNT {
            return bad(format!("palette_id {} out of range", self.palette_id));
        }
        if !(-90..=90).contains(&self.yaw_deg) || self.yaw_deg % 10 != 0 {
            return bad(format!("yaw {} is not on the 10-degree grid", self.yaw_deg));
        }
        if !self.density.is_finite() || !self.curliness.is_finite() || self.density < 0.0 || self.curliness < 0.0 {
            return bad("density and curliness must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// The clean procedural renderer.
    #[default]
    Synthetic,
    /// The renderer with altered lighting, noise and fiber statistics, used as
    /// a stand-in for photographs when none are available.
    Shifted,
    /// Ingested photographs.
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 90/5/5 by position in the plan.
    pub fn for_index(i: usize) -> Self {
        match i % 20 {
            0 => Split::Test,
            1 => Split::Val,
            _ => Split::Train,
        }
    }
}

/// Stroke and field settings used to annotate samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationConfig {
    #[serde(default)]
    pub strokes: StrokeParams,
    #[serde(default)]
    pub field: FieldParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub id: String,
    pub image: RasterImage,
    pub mask: MaskImage,
    pub strokes: StrokeSet,
    pub params: Option<StyleParams>,
    pub split: Split,
    pub domain: Domain,
}

impl DatasetSample {
    pub fn validate(&self) -> Result<()> {
        if self.mask.is_empty() {
            return Err(Error::EmptyMask("dataset sample"));
        }
        crate::imagecore::check_extent(self.image.extent(), self.mask.extent(), "dataset sample")?;
        self.strokes.validate()?;
        for s in &self.strokes.strokes {
            if !s.points.iter().all(|p| self.mask.contains_point(p[0], p[1])) {
                return Err(Error::InvalidArgument(format!("{}: stroke leaves the mask", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksums {
    pub image: String,
    pub mask: String,
    pub strokes: String,
}

/// One manifest line. Paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub domain: Domain,
    pub split: Split,
    pub size: [usize; 2],
    pub params: Option<StyleParams>,
    pub annotation_seed: u64,
    pub annotation: AnnotationConfig,
    pub image: String,
    pub mask: String,
    pub strokes: String,
    pub sha256: Checksums,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("manifest rows always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_jsonl(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }
}

/// Shuffled walk over the style grid. The first `GRID_SIZE` entries visit
/// every grid point exactly once; longer plans start a new permutation.
pub fn plan_dataset(count: usize, rng_seed: u64) -> Vec<StyleParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(count);
    let mut order: Vec<usize> = (0..GRID_SIZE).collect();
    while out.len() < count {
        order.shuffle(&mut rng);
        for &g in order.iter().take(count - out.len()) {
            let i = out.len() as u64;
            let seed = rng_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i);
            out.push(StyleParams::from_index(g, seed).expect("index in range"));
        }
    }
    out
}

/// Renders and annotates one planned sample.
pub fn make_sample(
    index: usize,
    params: &StyleParams,
    size: usize,
    domain: Domain,
    annotation: &AnnotationConfig,
) -> Result<DatasetSample> {
    let (image, mask) = render_sample_in(params, size, domain)?;
    let strokes = extract_guide_strokes(&image, &mask, &annotation.strokes, &annotation.field, params.rng_seed)?;
    Ok(DatasetSample {
        id: sample_id(domain, index),
        image,
        mask,
        strokes,
        params: Some(*params),
        split: Split::for_index(index),
        domain,
    })
}

fn sample_id(domain: Domain, index: usize) -> String {
    let prefix = match domain {
        Domain::Synthetic => "syn",
        Domain::Shifted => "shf",
        Domain::Real => "real",
    };
    format!("{prefix}{index:06}")
}

/// In-memory dataset, no files written.
pub fn generate_samples(
    count: usize,
    size: usize,
    rng_seed: u64,
    domain: Domain,
    annotation: &AnnotationConfig,
) -> Result<Vec<DatasetSample>> {
    plan_dataset(count, rng_seed)
        .iter()
        .enumerate()
        .map(|(i, p)| make_sample(i, p, size, domain, annotation))
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_layout(out_dir: &Path) -> Result<()> {
    for sub in ["images", "masks", "strokes"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    Ok(())
}

fn write_sample(out_dir: &Path, s: &DatasetSample, annotation_seed: u64, annotation: &AnnotationConfig) -> Result<ManifestRow> {
    let image = format!("images/{}.png", s.id);
    let mask = format!("masks/{}.png", s.id);
    let strokes = format!("strokes/{}.json", s.id);
    let image_bytes = encode_png(&s.image)?;
    let mask_bytes = encode_mask_png(&s.mask)?;
    let stroke_bytes = s.strokes.to_json().into_bytes();
    write_file(&out_dir.join(&image), &image_bytes)?;
    write_file(&out_dir.join(&mask), &mask_bytes)?;
    write_file(&out_dir.join(&strokes), &stroke_bytes)?;
    Ok(ManifestRow {
        id: s.id.clone(),
        domain: s.domain,
        split: s.split,
        size: [s.image.width(), s.image.height()],
        params: s.params,
        annotation_seed,
        annotation: *annotation,
        image,
        mask,
        strokes,
        sha256: Checksums {
            image: sha256_hex(&image_bytes),
            mask: sha256_hex(&mask_bytes),
            strokes: sha256_hex(&stroke_bytes),
        },
    })
}

/// Renders `count` planned samples into `out_dir` and writes
/// `manifest.jsonl`.
pub fn generate_dataset(
    count: usize,
    size: usize,
    rng_seed: u64,
    out_dir: impl AsRef<Path>,
    domain: Domain,
    annotation: &AnnotationConfig,
) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::InvalidArgument("dataset count must be >= 1".into()));
    }
    if domain == Domain::Real {
        return Err(Error::InvalidArgument("real samples are ingested, not generated".into()));
    }
    let out_dir = out_dir.as_ref();
    create_layout(out_dir)?;
    let mut manifest = Manifest::default();
    for (i, p) in plan_dataset(count, rng_seed).iter().enumerate() {
        let s = make_sample(i, p, size, domain, annotation)?;
        manifest.rows.push(write_sample(out_dir, &s, p.rng_seed, annotation)?);
    }
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Reads a sample back from disk, verifying checksums.
pub fn load_sample(root: impl AsRef<Path>, row: &ManifestRow) -> Result<DatasetSample> {
    let root = root.as_ref();
    let read = |rel: &str, want: &str| -> Result<Vec<u8>> {
        let path = root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != want {
            return Err(Error::Format {
                path,
                reason: "checksum mismatch".into(),
            });
        }
        Ok(bytes)
    };
    let image = crate::imagecore::decode_png(&read(&row.image, &row.sha256.image)?)?.to_rgb();
    let mask = crate::imagecore::decode_mask_png(&read(&row.mask, &row.sha256.mask)?)?;
    let text = String::from_utf8(read(&row.strokes, &row.sha256.strokes)?).map_err(|_| Error::Format {
        path: root.join(&row.strokes),
        reason: "stroke file is not UTF-8".into(),
    })?;
    let strokes = StrokeSet::from_json(&text)?;
    Ok(DatasetSample {
        id: row.id.clone(),
        image,
        mask,
        strokes,
        params: row.params,
        split: row.split,
        domain: row.domain,
    })
}

/// Loads a dataset from its `manifest.jsonl` or the directory holding it.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<DatasetSample>> {
    let joined;
    let mut manifest_path = manifest_path.as_ref();
    if manifest_path.is_dir() {
        joined = manifest_path.join("manifest.jsonl");
        manifest_path = &joined;
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    Manifest::load(manifest_path)?.rows.iter().map(|r| load_sample(root, r)).collect()
}

/// Re-renders a generated row and returns the file bytes it should have
/// produced, in manifest order (image, mask, strokes).
pub fn regenerate_row(row: &ManifestRow) -> Result<[Vec<u8>; 3]> {
    let params = row
        .params
        .ok_or_else(|| Error::InvalidArgument(format!("{}: ingested rows cannot be regenerated", row.id)))?;
    let (image, mask) = render_sample_in(&params, row.size[0], row.domain)?;
    let strokes = extract_guide_strokes(&image, &mask, &row.annotation.strokes, &row.annotation.field, row.annotation_seed)?;
    Ok([encode_png(&image)?, encode_mask_png(&mask)?, strokes.to_json().into_bytes()])
}

/// Outcome of ingesting a directory of photographs.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub manifest: Manifest,
    pub errors: Vec<(PathBuf, String)>,
}

/// Ingests `<name>.png` + `<name>.mask.png` pairs from `dir`, annotates
/// them, and writes a self-contained dataset into `out_dir`. Bad pairs are
/// reported and skipped.
pub fn ingest_real(dir: impl AsRef<Path>, out_dir: impl AsRef<Path>, annotation: &AnnotationConfig, rng_seed: u64) -> Result<IngestReport> {
    let dir = dir.as_ref();
    let out_dir = out_dir.as_ref();
    let mut images: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".png") && !name.ends_with(".mask.png")
        })
        .collect();
    images.sort();
    create_layout(out_dir)?;
    let mut report = IngestReport::default();
    for (i, path) in images.iter().enumerate() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        let mask_path = dir.join(format!("{stem}.mask.png"));
        let result = (|| -> Result<ManifestRow> {
            if !mask_path.exists() {
                return Err(Error::InvalidArgument(format!("missing mask {}", mask_path.display())));
            }
            let image = load_png(path)?.to_rgb();
            let mask = load_mask_png(&mask_path)?;
            crate::imagecore::check_extent(image.extent(), mask.extent(), "ingest_real")?;
            if mask.is_empty() {
                return Err(Error::EmptyMask("ingest_real"));
            }
            let seed = rng_seed.wrapping_add(i as u64);
            let strokes = extract_guide_strokes(&image, &mask, &annotation.strokes, &annotation.field, seed)?;
            let s = DatasetSample {
                id: format!("real{i:06}"),
                image,
                mask,
                strokes,
                params: None,
                split: Split::for_index(i),
                domain: Domain::Real,
            };
            write_sample(out_dir, &s, seed, annotation)
        })();
        match result {
            Ok(row) => report.manifest.rows.push(row),
            Err(e) => report.errors.push((path.clone(), e.to_string())),
        }
    }
    report.manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{save_mask_png, save_png};

    #[test]
    fn grid_has_full_cardinality() {
        assert_eq!(GRID_SIZE, 30_400);
        let plan = plan_dataset(GRID_SIZE, 3);
        let mut seen = vec![false; GRID_SIZE];
        for p in &plan {
            assert!(!std::mem::replace(&mut seen[p.grid_index()], true));
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn index_round_trip() {
        for i in [0, 1, 18, 19, 151, 30_399] {
            assert_eq!(StyleParams::from_index(i, 0).unwrap().grid_index(), i);
        }
        assert!(StyleParams::from_index(GRID_SIZE, 0).is_err());
        assert!(StyleParams::from_grid(0, 0, 0, 15, 0).is_err());
    }

    #[test]
    fn splits_are_90_5_5() {
        let counts = (0..1000).fold([0; 3], |mut acc, i| {
            acc[Split::for_index(i) as usize] += 1;
            acc
        });
        assert_eq!(counts, [900, 50, 50]);
    }

    #[test]
    fn manifests_are_reproducible_and_regenerate() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = AnnotationConfig::default();
        let m = generate_dataset(4, 40, 9, a.path(), Domain::Synthetic, &cfg).unwrap();
        generate_dataset(4, 40, 9, b.path(), Domain::Synthetic, &cfg).unwrap();
        let ma = fs::read(a.path().join("manifest.jsonl")).unwrap();
        assert_eq!(ma, fs::read(b.path().join("manifest.jsonl")).unwrap());
        for row in &m.rows {
            let s = load_sample(a.path(), row).unwrap();
            s.validate().unwrap();
            let [img, mask, strokes] = regenerate_row(row).unwrap();
            assert_eq!(sha256_hex(&img), row.sha256.image);
            assert_eq!(sha256_hex(&mask), row.sha256.mask);
            assert_eq!(sha256_hex(&strokes), row.sha256.strokes);
        }
        assert_eq!(Manifest::load(a.path().join("manifest.jsonl")).unwrap(), m);
    }

    #[test]
    fn tampered_files_fail_checksum() {
        let d = tempfile::tempdir().unwrap();
        let m = generate_dataset(1, 32, 1, d.path(), Domain::Shifted, &AnnotationConfig::default()).unwrap();
        fs::write(d.path().join(&m.rows[0].strokes), b"{}").unwrap();
        assert!(matches!(load_sample(d.path(), &m.rows[0]), Err(Error::Format { .. })));
    }

    #[test]
    fn ingest_reports_bad_pairs() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = AnnotationConfig::default();
        let empty = ingest_real(src.path(), out.path(), &cfg, 0).unwrap();
        assert!(empty.manifest.rows.is_empty() && empty.errors.is_empty());

        let p = StyleParams::from_grid(2, 2, 2, 0, 4).unwrap();
        let (img, mask) = render_sample_in(&p, 48, Domain::Shifted).unwrap();
        save_png(&img, src.path().join("a.png")).unwrap();
        save_mask_png(&mask, src.path().join("a.mask.png")).unwrap();
        save_png(&img, src.path().join("b.png")).unwrap();
        save_mask_png(&MaskImage::full(20, 20), src.path().join("b.mask.png")).unwrap();
        save_png(&img, src.path().join("c.png")).unwrap();
        let r = ingest_real(src.path(), out.path(), &cfg, 0).unwrap();
        assert_eq!(r.manifest.rows.len(), 1);
        assert_eq!(r.errors.len(), 2);
        assert_eq!(r.manifest.rows[0].domain, Domain::Real);
        load_sample(out.path(), &r.manifest.rows[0]).unwrap().validate().unwrap();
    }
}
