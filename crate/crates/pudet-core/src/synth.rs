//! Synthetic multi-class "cell" images with complete ground truth,
//! annotation-degradation strategies, patch tiling, and dataset I/O.
//!
//! Images are greyscale rasters with elliptical blobs whose intensity
//! and size bands differ per class, so a small model can separate them.
//! Generation is a pure function of (config, count): per-image RNG
//! streams are derived from the config seed, which also makes image
//! generation safe to parallelize.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::par_map;

/// Ground-truth bounding box in corner form. Coordinates may go
/// negative after patch rebasing (see [`tile`]); generated images only
/// contain in-bounds boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
    /// Positive class, 1-based; 0 is reserved for background.
    pub class_id: usize,
    /// Synthetic annotator-confidence score in [0, 1].
    pub agreement: f64,
}

impl GroundTruthBox {
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }
}

/// Greyscale raster plus its box annotations. `complete` distinguishes
/// gold-standard images from degraded training images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub width: u32,
    pub height: u32,
    /// Row-major intensities.
    pub pixels: Vec<u8>,
    pub boxes: Vec<GroundTruthBox>,
    pub complete: bool,
}

impl AnnotatedImage {
    pub fn pixel(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }
}

/// Appearance and abundance of one positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassAppearance {
    /// Inclusive semi-axis range in pixels.
    pub radius: (f64, f64),
    /// Inclusive intensity range.
    pub intensity: (u8, u8),
    /// Vertical squash factor in [0, 0.9): semi-minor = radius * (1 - e).
    #[serde(default)]
    pub eccentricity: f64,
    /// Inclusive instances-per-image range.
    pub count: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// One entry per positive class; class ids are 1-based in this order.
    pub classes: Vec<ClassAppearance>,
    /// Uniform additive background noise amplitude (0 disables).
    #[serde(default)]
    pub background_noise: u8,
    /// Inclusive count range of unlabeled distractor blobs.
    #[serde(default)]
    pub distractors: (usize, usize),
    #[serde(default = "default_distractor_radius")]
    pub distractor_radius: (f64, f64),
    #[serde(default = "default_distractor_intensity")]
    pub distractor_intensity: (u8, u8),
}

fn default_distractor_radius() -> (f64, f64) {
    (2.0, 3.0)
}

fn default_distractor_intensity() -> (u8, u8) {
    (60, 90)
}

impl GeneratorConfig {
    /// Total class count M, background included.
    pub fn num_classes(&self) -> usize {
        self.classes.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("at least one positive class required".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.radius.0 < 1.0 || c.radius.1 < c.radius.0 {
                return Err(Error::Config(format!(
                    "class {} radius range {:?} invalid (need 1 <= lo <= hi)",
                    i + 1,
                    c.radius
                )));
            }
            if c.intensity.1 < c.intensity.0 || c.intensity.0 == 0 {
                return Err(Error::Config(format!(
                    "class {} intensity range {:?} invalid",
                    i + 1,
                    c.intensity
                )));
            }
            if !(0.0..0.9).contains(&c.eccentricity) {
                return Err(Error::Config(format!(
                    "class {} eccentricity {} outside [0, 0.9)",
                    i + 1,
                    c.eccentricity
                )));
            }
            if c.count.1 < c.count.0 {
                return Err(Error::Config(format!(
                    "class {} count range {:?} empty",
                    i + 1,
                    c.count
                )));
            }
        }
        Ok(())
    }
}

/// SplitMix64-style mixer; derives independent per-item seeds.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

struct Blob {
    cx: i32,
    cy: i32,
    ax: f64,
    ay: f64,
    intensity: u8,
}

impl Blob {
    fn bounds(&self) -> (i32, i32, i32, i32) {
        (
            (self.cx as f64 - self.ax).floor() as i32,
            (self.cy as f64 - self.ay).floor() as i32,
            (self.cx as f64 + self.ax).ceil() as i32,
            (self.cy as f64 + self.ay).ceil() as i32,
        )
    }

    fn covers(&self, px: i32, py: i32) -> bool {
        let dx = (px - self.cx) as f64 / self.ax;
        let dy = (py - self.cy) as f64 / self.ay;
        dx * dx + dy * dy <= 1.0
    }
}

const PLACEMENT_RETRIES: usize = 200;

fn place_blob(
    rng: &mut ChaCha8Rng,
    width: u32,
    height: u32,
    radius: (f64, f64),
    eccentricity: f64,
    intensity: (u8, u8),
    occupied: &[(i32, i32, i32, i32)],
    what: &str,
) -> Result<Blob> {
    for _ in 0..PLACEMENT_RETRIES {
        let ax = rng.gen_range(radius.0..=radius.1);
        let ay = ax * (1.0 - eccentricity);
        let margin_x = ax.ceil() as i32 + 1;
        let margin_y = ay.ceil() as i32 + 1;
        if 2 * margin_x >= width as i32 || 2 * margin_y >= height as i32 {
            break;
        }
        let cx = rng.gen_range(margin_x..width as i32 - margin_x);
        let cy = rng.gen_range(margin_y..height as i32 - margin_y);
        let level = rng.gen_range(intensity.0..=intensity.1);
        let blob = Blob {
            cx,
            cy,
            ax,
            ay,
            intensity: level,
        };
        let (bx0, by0, bx1, by1) = blob.bounds();
        // keep a 2 px corridor between blobs so instances stay distinct
        let clear = occupied.iter().all(|&(ox0, oy0, ox1, oy1)| {
            bx1 + 2 < ox0 || ox1 + 2 < bx0 || by1 + 2 < oy0 || oy1 + 2 < by0
        });
        if clear {
            return Ok(blob);
        }
    }
    Err(Error::Generation(format!(
        "could not place {what} after {PLACEMENT_RETRIES} attempts; image {width}x{height} is too crowded for the configured counts/radii"
    )))
}

fn generate_one(config: &GeneratorConfig, image_index: u64) -> Result<AnnotatedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x01, image_index));
    let (w, h) = (config.width, config.height);
    let mut pixels = vec![0u8; (w * h) as usize];
    let mut boxes = Vec::new();
    let mut occupied: Vec<(i32, i32, i32, i32)> = Vec::new();

    for (class_index, class) in config.classes.iter().enumerate() {
        let count = rng.gen_range(class.count.0..=class.count.1);
        for _ in 0..count {
            let blob = place_blob(
                &mut rng,
                w,
                h,
                class.radius,
                class.eccentricity,
                class.intensity,
                &occupied,
                &format!("class {} instance", class_index + 1),
            )?;
            occupied.push(blob.bounds());
            let agreement: f64 = rng.gen_range(0.0..=1.0);
            let tight = rasterize(&mut pixels, w, h, &blob)
                .ok_or_else(|| Error::Generation("blob rasterized to zero pixels".into()))?;
            let (x0, y0, x1, y1) = tight;
            boxes.push(GroundTruthBox {
                x: x0,
                y: y0,
                w: (x1 - x0 + 1) as u32,
                h: (y1 - y0 + 1) as u32,
                class_id: class_index + 1,
                agreement,
            });
        }
    }

    let distractor_count = rng.gen_range(config.distractors.0..=config.distractors.1);
    for _ in 0..distractor_count {
        let blob = place_blob(
            &mut rng,
            w,
            h,
            config.distractor_radius,
            0.0,
            config.distractor_intensity,
            &occupied,
            "distractor",
        )?;
        occupied.push(blob.bounds());
        rasterize(&mut pixels, w, h, &blob);
    }

    if config.background_noise > 0 {
        for p in pixels.iter_mut() {
            let n = rng.gen_range(0..=config.background_noise);
            *p = p.saturating_add(n);
        }
    }

    Ok(AnnotatedImage {
        width: w,
        height: h,
        pixels,
        boxes,
        complete: true,
    })
}

/// Paints the blob and returns the tight bounding box of lit pixels.
fn rasterize(pixels: &mut [u8], w: u32, h: u32, blob: &Blob) -> Option<(i32, i32, i32, i32)> {
    let (bx0, by0, bx1, by1) = blob.bounds();
    let mut tight: Option<(i32, i32, i32, i32)> = None;
    for py in by0.max(0)..=by1.min(h as i32 - 1) {
        for px in bx0.max(0)..=bx1.min(w as i32 - 1) {
            if blob.covers(px, py) {
                let idx = (py as u32 * w + px as u32) as usize;
                pixels[idx] = pixels[idx].max(blob.intensity);
                tight = Some(match tight {
                    None => (px, py, px, py),
                    Some((x0, y0, x1, y1)) => (x0.min(px), y0.min(py), x1.max(px), y1.max(py)),
                });
            }
        }
    }
    tight
}

/// Generates `count` fully annotated images. Deterministic in
/// (config, count); images are independent so the map parallelizes.
pub fn generate(config: &GeneratorConfig, count: usize) -> Result<Vec<AnnotatedImage>> {
    if count == 0 {
        return Err(Error::Usage("generate requires count > 0".into()));
    }
    config.validate()?;
    par_map((0..count as u64).collect(), |i| generate_one(config, i))
        .into_iter()
        .collect()
}

fn class_ids(img: &AnnotatedImage) -> Vec<usize> {
    let mut c: Vec<usize> = img.boxes.iter().map(|b| b.class_id).collect();
    c.sort_unstable();
    c.dedup();
    c
}

fn retain_boxes(img: &AnnotatedImage, keep: &[bool]) -> AnnotatedImage {
    AnnotatedImage {
        boxes: img
            .boxes
            .iter()
            .enumerate()
            .filter(|(i, _)| keep[*i])
            .map(|(_, b)| b.clone())
            .collect(),
        complete: false,
        ..img.clone()
    }
}

/// Keeps at most `keep_n` uniformly chosen boxes per class; classes at
/// or below the budget are untouched. Result is marked incomplete.
pub fn degrade_random(img: &AnnotatedImage, keep_n: usize, seed: u64) -> Result<AnnotatedImage> {
    if keep_n < 1 {
        return Err(Error::Usage("degrade_random requires keep_n >= 1".into()));
    }
    if !img.complete {
        return Err(Error::Usage(
            "degrade_random expects a complete-annotation image".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; img.boxes.len()];
    for class in class_ids(img) {
        let mut indices: Vec<usize> = img
            .boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.class_id == class)
            .map(|(i, _)| i)
            .collect();
        if indices.len() > keep_n {
            // partial Fisher-Yates: first keep_n entries form a uniform subset
            for i in 0..keep_n {
                let j = rng.gen_range(i..indices.len());
                indices.swap(i, j);
            }
            indices.truncate(keep_n);
        }
        for i in indices {
            keep[i] = true;
        }
    }
    Ok(retain_boxes(img, &keep))
}

/// Keeps the `keep_n` highest-agreement boxes per class (ties broken by
/// lower box index). Deterministic; result is marked incomplete.
pub fn degrade_by_agreement(img: &AnnotatedImage, keep_n: usize) -> Result<AnnotatedImage> {
    if keep_n < 1 {
        return Err(Error::Usage(
            "degrade_by_agreement requires keep_n >= 1".into(),
        ));
    }
    if !img.complete {
        return Err(Error::Usage(
            "degrade_by_agreement expects a complete-annotation image".into(),
        ));
    }
    let mut keep = vec![false; img.boxes.len()];
    for class in class_ids(img) {
        let mut indices: Vec<usize> = img
            .boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.class_id == class)
            .map(|(i, _)| i)
            .collect();
        indices.sort_by(|&a, &b| {
            img.boxes[b]
                .agreement
                .partial_cmp(&img.boxes[a].agreement)
                .expect("agreement is finite")
                .then(a.cmp(&b))
        });
        for &i in indices.iter().take(keep_n) {
            keep[i] = true;
        }
    }
    Ok(retain_boxes(img, &keep))
}

/// Cuts the image into `patch`-sized windows with the given overlap.
/// Stride is `patch - overlap`; tail windows are anchored to the far
/// edge so coverage is exact. A box joins every patch whose half-open
/// window contains its center, with coordinates rebased to the patch
/// origin (they may extend past the patch bounds).
pub fn tile(
    img: &AnnotatedImage,
    patch: u32,
    overlap: u32,
) -> Result<Vec<(AnnotatedImage, (u32, u32))>> {
    if overlap >= patch || patch > img.width.min(img.height) {
        return Err(Error::Usage(format!(
            "tile requires 0 <= overlap < patch <= min(width, height); got patch {patch}, overlap {overlap} on {}x{}",
            img.width, img.height
        )));
    }
    let offsets = |extent: u32| -> Vec<u32> {
        let stride = patch - overlap;
        let mut out = Vec::new();
        let mut pos = 0u32;
        loop {
            if pos + patch >= extent {
                out.push(extent - patch);
                break;
            }
            out.push(pos);
            pos += stride;
        }
        out
    };
    let mut patches = Vec::new();
    for &oy in &offsets(img.height) {
        for &ox in &offsets(img.width) {
            let mut pixels = Vec::with_capacity((patch * patch) as usize);
            for y in oy..oy + patch {
                let start = (y * img.width + ox) as usize;
                pixels.extend_from_slice(&img.pixels[start..start + patch as usize]);
            }
            let boxes = img
                .boxes
                .iter()
                .filter(|b| {
                    let (cx, cy) = b.center();
                    cx >= ox as f64
                        && cx < (ox + patch) as f64
                        && cy >= oy as f64
                        && cy < (oy + patch) as f64
                })
                .map(|b| GroundTruthBox {
                    x: b.x - ox as i32,
                    y: b.y - oy as i32,
                    ..b.clone()
                })
                .collect();
            patches.push((
                AnnotatedImage {
                    width: patch,
                    height: patch,
                    pixels,
                    boxes,
                    complete: img.complete,
                },
                (ox, oy),
            ));
        }
    }
    Ok(patches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub complete: bool,
}

/// Dataset directory manifest: generator echo, class count, image list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub num_classes: usize,
    pub config: GeneratorConfig,
    pub images: Vec<ManifestEntry>,
}

const MANIFEST_VERSION: u32 = 1;

/// Writes `manifest.json` plus one P5 `.pgm` and one box `.csv` per
/// image. The round trip through [`load_dataset`] is bit-exact.
pub fn save_dataset(images: &[AnnotatedImage], config: &GeneratorConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let name = format!("img_{i:04}");
        write_pgm(&dir.join(format!("{name}.pgm")), img)?;
        write_boxes_csv(&dir.join(format!("{name}.csv")), &img.boxes)?;
        entries.push(ManifestEntry {
            name,
            complete: img.complete,
        });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        num_classes: config.num_classes(),
        config: config.clone(),
        images: entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<AnnotatedImage>, DatasetManifest)> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    let mut images = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        let (width, height, pixels) = read_pgm(&dir.join(format!("{}.pgm", entry.name)))?;
        let boxes = read_boxes_csv(&dir.join(format!("{}.csv", entry.name)))?;
        images.push(AnnotatedImage {
            width,
            height,
            pixels,
            boxes,
            complete: entry.complete,
        });
    }
    Ok((images, manifest))
}

fn write_pgm(path: &Path, img: &AnnotatedImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    fs::write(path, bytes)?;
    Ok(())
}

fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let data = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let parse = |what: &str| Error::Parse(format!("{}: invalid PGM {what}", path.display()));
    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> Option<(usize, usize)> {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then_some((start, pos))
    };
    let (s, e) = token(&data).ok_or_else(|| parse("magic"))?;
    if &data[s..e] != b"P5" {
        return Err(parse("magic (expected P5)"));
    }
    let mut read_num = |what: &str| -> Result<u32> {
        let (s, e) = token(&data).ok_or_else(|| parse(what))?;
        std::str::from_utf8(&data[s..e])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse(what))
    };
    let width = read_num("width")?;
    let height = read_num("height")?;
    let maxval = read_num("maxval")?;
    if maxval != 255 {
        return Err(parse("maxval (expected 255)"));
    }
    let body = pos + 1; // single whitespace after maxval
    let expected = (width as usize) * (height as usize);
    if data.len() < body + expected {
        return Err(parse("pixel payload (truncated)"));
    }
    Ok((width, height, data[body..body + expected].to_vec()))
}

const BOX_CSV_HEADER: &str = "x,y,w,h,class_id,agreement";

fn write_boxes_csv(path: &Path, boxes: &[GroundTruthBox]) -> Result<()> {
    let mut out = String::new();
    out.push_str(BOX_CSV_HEADER);
    out.push('\n');
    for b in boxes {
        // `{}` prints the shortest representation that parses back to
        // the same f64, keeping the round trip exact
        writeln!(
            out,
            "{},{},{},{},{},{}",
            b.x, b.y, b.w, b.h, b.class_id, b.agreement
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_boxes_csv(path: &Path) -> Result<Vec<GroundTruthBox>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == BOX_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse(format!(
                "{}:1: expected header `{BOX_CSV_HEADER}`",
                path.display()
            )))
        }
    }
    let mut boxes = Vec::new();
    for (line_index, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!(
                "{}:{}: expected 6 fields, found {}",
                path.display(),
                line_index + 1,
                fields.len()
            )));
        }
        let bad = |what: &str| {
            Error::Parse(format!(
                "{}:{}: invalid {what}",
                path.display(),
                line_index + 1
            ))
        };
        boxes.push(GroundTruthBox {
            x: fields[0].parse().map_err(|_| bad("x"))?,
            y: fields[1].parse().map_err(|_| bad("y"))?,
            w: fields[2].parse().map_err(|_| bad("w"))?,
            h: fields[3].parse().map_err(|_| bad("h"))?,
            class_id: fields[4].parse().map_err(|_| bad("class_id"))?,
            agreement: fields[5].parse().map_err(|_| bad("agreement"))?,
        });
    }
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            seed: 7,
            width: 64,
            height: 64,
            classes: vec![
                ClassAppearance {
                    radius: (4.0, 5.0),
                    intensity: (180, 230),
                    eccentricity: 0.0,
                    count: (3, 5),
                },
                ClassAppearance {
                    radius: (2.0, 3.0),
                    intensity: (120, 150),
                    eccentricity: 0.2,
                    count: (2, 3),
                },
            ],
            background_noise: 10,
            distractors: (1, 2),
            distractor_radius: (2.0, 3.0),
            distractor_intensity: (60, 90),
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let cfg = small_config();
        let a = generate(&cfg, 3).unwrap();
        let b = generate(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|img| img.complete));
    }

    #[test]
    fn generate_honors_fixed_counts() {
        let mut cfg = small_config();
        cfg.classes[0].count = (5, 5);
        for img in generate(&cfg, 4).unwrap() {
            let n = img.boxes.iter().filter(|b| b.class_id == 1).count();
            assert_eq!(n, 5);
        }
    }

    #[test]
    fn clean_config_pixels_stay_inside_boxes() {
        let mut cfg = small_config();
        cfg.background_noise = 0;
        cfg.distractors = (0, 0);
        for img in generate(&cfg, 3).unwrap() {
            for y in 0..img.height {
                for x in 0..img.width {
                    if img.pixel(x, y) > 0 {
                        let inside = img.boxes.iter().any(|b| {
                            (x as i32) >= b.x
                                && (x as i32) < b.x + b.w as i32
                                && (y as i32) >= b.y
                                && (y as i32) < b.y + b.h as i32
                        });
                        assert!(inside, "lit pixel ({x},{y}) outside all boxes");
                    }
                }
            }
        }
    }

    #[test]
    fn overcrowded_config_reports_generation_error() {
        let mut cfg = small_config();
        cfg.width = 24;
        cfg.height = 24;
        cfg.classes[0].count = (40, 40);
        let err = generate(&cfg, 1).unwrap_err();
        assert!(matches!(err, Error::Generation(_)), "{err}");
        assert!(err.to_string().contains("24x24"));
    }

    #[test]
    fn degrade_random_keeps_exactly_n_per_class() {
        let mut cfg = small_config();
        cfg.classes[0].count = (7, 7);
        cfg.classes[1].count = (2, 2);
        let img = &generate(&cfg, 1).unwrap()[0];
        let degraded = degrade_random(img, 5, 99).unwrap();
        assert!(!degraded.complete);
        let count = |c: usize| degraded.boxes.iter().filter(|b| b.class_id == c).count();
        assert_eq!(count(1), 5);
        assert_eq!(count(2), 2, "class below budget is untouched");
        for b in &degraded.boxes {
            assert!(img.boxes.contains(b), "retained boxes must be unaltered");
        }
    }

    #[test]
    fn degrade_random_single_box_only_flips_completeness() {
        let mut cfg = small_config();
        cfg.classes.truncate(1);
        cfg.classes[0].count = (1, 1);
        let img = &generate(&cfg, 1).unwrap()[0];
        let degraded = degrade_random(img, 1, 3).unwrap();
        assert_eq!(degraded.boxes, img.boxes);
        assert!(!degraded.complete);
    }

    #[test]
    fn degrade_random_rejects_zero_budget() {
        let img = &generate(&small_config(), 1).unwrap()[0];
        assert!(matches!(degrade_random(img, 0, 1), Err(Error::Usage(_))));
    }

    fn image_with_agreements(agreements: &[f64]) -> AnnotatedImage {
        AnnotatedImage {
            width: 100,
            height: 100,
            pixels: vec![0; 100 * 100],
            boxes: agreements
                .iter()
                .enumerate()
                .map(|(i, &a)| GroundTruthBox {
                    x: 10 * i as i32,
                    y: 0,
                    w: 5,
                    h: 5,
                    class_id: 1,
                    agreement: a,
                })
                .collect(),
            complete: true,
        }
    }

    #[test]
    fn degrade_by_agreement_keeps_highest() {
        let img = image_with_agreements(&[0.2, 0.9, 0.5]);
        let degraded = degrade_by_agreement(&img, 1).unwrap();
        assert_eq!(degraded.boxes.len(), 1);
        assert_eq!(degraded.boxes[0].agreement, 0.9);
    }

    #[test]
    fn degrade_by_agreement_tie_breaks_on_index() {
        let img = image_with_agreements(&[0.5, 0.5, 0.5]);
        let degraded = degrade_by_agreement(&img, 1).unwrap();
        assert_eq!(degraded.boxes[0].x, 0, "first box by index wins ties");
    }

    #[test]
    fn degrade_by_agreement_with_large_budget_keeps_all() {
        let img = image_with_agreements(&[0.2, 0.9]);
        let degraded = degrade_by_agreement(&img, 10).unwrap();
        assert_eq!(degraded.boxes, img.boxes);
        assert!(!degraded.complete);
    }

    #[test]
    fn tile_identity() {
        let img = AnnotatedImage {
            width: 500,
            height: 500,
            pixels: vec![0; 500 * 500],
            boxes: vec![],
            complete: true,
        };
        let patches = tile(&img, 500, 0).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].1, (0, 0));
    }

    #[test]
    fn tile_stride_arithmetic() {
        let mut img = AnnotatedImage {
            width: 900,
            height: 500,
            pixels: vec![0; 900 * 500],
            boxes: vec![],
            complete: true,
        };
        img.boxes.push(GroundTruthBox {
            x: 445,
            y: 5,
            w: 10,
            h: 10,
            class_id: 1,
            agreement: 1.0,
        });
        let patches = tile(&img, 500, 100).unwrap();
        let offsets: Vec<(u32, u32)> = patches.iter().map(|p| p.1).collect();
        assert_eq!(offsets, vec![(0, 0), (400, 0)]);
        // box centered at (450, 10) lands in both windows
        assert_eq!(patches[0].0.boxes.len(), 1);
        assert_eq!(patches[1].0.boxes.len(), 1);
        assert_eq!(patches[1].0.boxes[0].x, 45);
    }

    #[test]
    fn tile_then_merge_reconstructs_boxes() {
        let cfg = GeneratorConfig {
            width: 150,
            height: 110,
            ..small_config()
        };
        let img = &generate(&cfg, 1).unwrap()[0];
        let mut merged: Vec<GroundTruthBox> = Vec::new();
        for (patch, (ox, oy)) in tile(img, 64, 16).unwrap() {
            for b in patch.boxes {
                let restored = GroundTruthBox {
                    x: b.x + ox as i32,
                    y: b.y + oy as i32,
                    ..b
                };
                if !merged.contains(&restored) {
                    merged.push(restored);
                }
            }
        }
        assert_eq!(merged.len(), img.boxes.len());
        for b in &img.boxes {
            assert!(merged.contains(b));
        }
    }

    #[test]
    fn dataset_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let images = generate(&cfg, 10).unwrap();
        save_dataset(&images, &cfg, dir.path()).unwrap();
        let (loaded, manifest) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, images);
        assert_eq!(manifest.num_classes, 3);
        assert_eq!(manifest.config, cfg);

        let empty = tempfile::tempdir().unwrap();
        save_dataset(&[], &cfg, empty.path()).unwrap();
        let (loaded, _) = load_dataset(empty.path()).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn hand_written_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig {
            seed: 0,
            width: 2,
            height: 2,
            classes: vec![ClassAppearance {
                radius: (1.0, 1.0),
                intensity: (10, 10),
                eccentricity: 0.0,
                count: (0, 0),
            }],
            background_noise: 0,
            distractors: (0, 0),
            distractor_radius: (2.0, 3.0),
            distractor_intensity: (60, 90),
        };
        let manifest = DatasetManifest {
            format_version: 1,
            num_classes: 2,
            config: cfg,
            images: vec![ManifestEntry {
                name: "img_0000".into(),
                complete: true,
            }],
        };
        fs::write(
            dir.path().join("manifest.json"),
            serde_json::to_string(&manifest).unwrap(),
        )
        .unwrap();
        fs::write(
            dir.path().join("img_0000.pgm"),
            b"P5\n2 2\n255\n\x01\x02\x03\x04",
        )
        .unwrap();
        fs::write(
            dir.path().join("img_0000.csv"),
            "x,y,w,h,class_id,agreement\n0,1,1,1,1,0.25\n",
        )
        .unwrap();
        let (images, _) = load_dataset(dir.path()).unwrap();
        assert_eq!(images.len(), 1);
        assert_eq!(images[0].pixels, vec![1, 2, 3, 4]);
        assert_eq!(
            images[0].boxes,
            vec![GroundTruthBox {
                x: 0,
                y: 1,
                w: 1,
                h: 1,
                class_id: 1,
                agreement: 0.25
            }]
        );
    }

    #[test]
    fn malformed_csv_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img_0000.csv");
        fs::write(&path, "x,y,w,h,class_id,agreement\n0,1,1,1\n").unwrap();
        let err = read_boxes_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
