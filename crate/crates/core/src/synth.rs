//! Synthetic music-score pages with staff-removal ground truth.
//!
//! Each page holds a few five-line staves plus noteheads, stems, beams and
//! barlines. The ground-truth output is the input minus the pixels that
//! belong only to staff lines; symbol pixels lying on a staff line are kept.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::image::BinaryImage;
use crate::pbm;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    /// Per-pixel probability of flipping a pixel (speck added or ink lost).
    pub pepper: f64,
    /// Per-column probability of starting a short gap in a staff line.
    pub line_breaks: f64,
}

impl Degradation {
    pub const NONE: Degradation = Degradation {
        pepper: 0.0,
        line_breaks: 0.0,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub staves: usize,
    pub lines_per_staff: usize,
    /// Inclusive range of staff-line thickness in pixels.
    pub line_thickness: (usize, usize),
    /// Inclusive range of the distance between adjacent staff lines.
    pub line_spacing: (usize, usize),
    /// Inclusive range of symbol count per staff.
    pub symbols_per_staff: (usize, usize),
    pub degradation: Degradation,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 256,
            staves: 3,
            lines_per_staff: 5,
            line_thickness: (1, 2),
            line_spacing: (8, 12),
            symbols_per_staff: (6, 12),
            degradation: Degradation {
                pepper: 0.002,
                line_breaks: 0.01,
            },
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let ranges = [
            ("line_thickness", self.line_thickness),
            ("line_spacing", self.line_spacing),
            ("symbols_per_staff", self.symbols_per_staff),
        ];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return bad(format!("{name}: empty range {lo}..={hi}"));
            }
        }
        if self.line_thickness.0 == 0 || self.line_spacing.0 == 0 {
            return bad("line thickness and spacing must be positive".into());
        }
        if self.line_thickness.1 >= self.line_spacing.0 {
            return bad("staff lines would touch: thickness must be below spacing".into());
        }
        if self.lines_per_staff == 0 {
            return bad("lines_per_staff must be positive".into());
        }
        for (name, p) in [
            ("pepper", self.degradation.pepper),
            ("line_breaks", self.degradation.line_breaks),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if self.width == 0 || self.height == 0 {
            return bad("canvas dimensions must be positive".into());
        }
        if self.staves > 0 {
            let spacing = self.line_spacing.1;
            let slot = self.height / self.staves;
            let need = self.staff_height_max() + 2 * spacing + 2;
            if slot < need {
                return bad(format!(
                    "{} staves need {need} rows each but only {slot} are available",
                    self.staves
                ));
            }
            if self.width < 6 * spacing {
                return bad(format!("canvas width {} too small for the staff spacing", self.width));
            }
        }
        Ok(())
    }

    fn staff_height_max(&self) -> usize {
        (self.lines_per_staff - 1) * self.line_spacing.1 + self.line_thickness.1
    }
}

/// One synthetic page.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePage {
    pub input: BinaryImage,
    pub output: BinaryImage,
    /// Staff-line pixels present in the input.
    pub staff_mask: BinaryImage,
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Canvas {
            w,
            h,
            px: vec![0; w * h],
        }
    }

    fn set(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = 1;
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.set(x, y);
            }
        }
    }

    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, tilt: f64) {
        let (s, c) = tilt.sin_cos();
        let r = rx.max(ry).ceil() as i64 + 1;
        for y in (cy as i64 - r)..=(cy as i64 + r) {
            for x in (cx as i64 - r)..=(cx as i64 + r) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                if (u / rx).powi(2) + (v / ry).powi(2) <= 1.0 {
                    self.set(x, y);
                }
            }
        }
    }

    /// Thick straight segment from `(x0,y0)` to `(x1,y1)`, vertical extent
    /// `thickness` below the centre line.
    fn beam(&mut self, x0: i64, y0: f64, x1: i64, y1: f64, thickness: i64) {
        for x in x0.min(x1)..=x0.max(x1) {
            let t = if x1 == x0 { 0.0 } else { (x - x0) as f64 / (x1 - x0) as f64 };
            let y = (y0 + t * (y1 - y0)).round() as i64;
            for k in 0..thickness {
                self.set(x, y + k);
            }
        }
    }

    fn into_image(self) -> BinaryImage {
        BinaryImage::from_pixels(self.w, self.h, self.px).expect("binary canvas")
    }
}

struct StaffGeom {
    top: f64,
    spacing: f64,
    skew: f64,
    lines: usize,
}

impl StaffGeom {
    /// Row of staff position `pos` (0 = top line, 1 = first space, ...) at
    /// column `x`.
    fn y_at(&self, pos: f64, x: f64) -> f64 {
        self.top + pos * self.spacing / 2.0 + self.skew * x
    }

    fn bottom_pos(&self) -> f64 {
        2.0 * (self.lines - 1) as f64
    }
}

fn range(r: &mut Rng, (lo, hi): (usize, usize)) -> usize {
    r.random_range(lo..=hi)
}

/// Draws one page. Deterministic in `cfg` (including its seed).
pub fn generate(cfg: &SynthConfig) -> Result<ScorePage> {
    cfg.validate()?;
    let mut r = rng::derive(cfg.seed, &[rng::TAG_SYNTH]);
    let (w, h) = (cfg.width, cfg.height);
    let mut staff = Canvas::new(w, h);
    let mut symbols = Canvas::new(w, h);

    for s in 0..cfg.staves {
        let slot = h / cfg.staves;
        let spacing = range(&mut r, cfg.line_spacing);
        let thickness = range(&mut r, cfg.line_thickness);
        let staff_h = (cfg.lines_per_staff - 1) * spacing + thickness;
        let top = (s * slot + (slot - staff_h) / 2) as f64;
        // At most one pixel of drift across the page.
        let skew = r.random_range(-1.0..=1.0) / w as f64;
        let g = StaffGeom {
            top,
            spacing: spacing as f64,
            skew,
            lines: cfg.lines_per_staff,
        };

        for line in 0..cfg.lines_per_staff {
            let mut gap = 0usize;
            for x in 0..w {
                if gap == 0 && r.random::<f64>() < cfg.degradation.line_breaks {
                    gap = r.random_range(1..=4);
                }
                if gap > 0 {
                    gap -= 1;
                    continue;
                }
                let y = g.y_at(2.0 * line as f64, x as f64).round() as i64;
                for k in 0..thickness as i64 {
                    staff.set(x as i64, y + k);
                }
            }
        }

        let n_sym = range(&mut r, cfg.symbols_per_staff);
        let margin = 2 * spacing;
        for _ in 0..n_sym {
            let x = r.random_range(margin..w - margin) as f64;
            draw_symbol(&mut symbols, &mut r, &g, x, thickness, w);
        }
    }

    let mut staff = staff.into_image();
    let symbols = symbols.into_image();
    let mut input_px: Vec<u8> = staff
        .pixels()
        .iter()
        .zip(symbols.pixels())
        .map(|(&a, &b)| a | b)
        .collect();
    let mut symbol_px = symbols.pixels().to_vec();
    if cfg.degradation.pepper > 0.0 {
        for (i, v) in input_px.iter_mut().enumerate() {
            if r.random::<f64>() < cfg.degradation.pepper {
                *v ^= 1;
                // Specks belong to no staff line and are kept.
                symbol_px[i] = *v;
            }
        }
    }
    let staff_px: Vec<u8> = staff
        .pixels()
        .iter()
        .zip(&input_px)
        .map(|(&s, &i)| s & i)
        .collect();
    let output_px: Vec<u8> = input_px
        .iter()
        .zip(&staff_px)
        .zip(&symbol_px)
        .map(|((&i, &s), &y)| i & (1 - s | y))
        .collect();
    staff = BinaryImage::from_pixels(w, h, staff_px)?;
    Ok(ScorePage {
        input: BinaryImage::from_pixels(w, h, input_px)?,
        output: BinaryImage::from_pixels(w, h, output_px)?,
        staff_mask: staff,
    })
}

fn draw_symbol(c: &mut Canvas, r: &mut Rng, g: &StaffGeom, x: f64, line_t: usize, page_w: usize) {
    let sp = g.spacing;
    let stem_w = r.random_range(1..=2) as i64;
    match r.random_range(0..10) {
        // Single note: head on a line or space, stem up or down.
        0..=4 => {
            let pos = r.random_range(-2..=(g.bottom_pos() as i64 + 2)) as f64;
            let cy = g.y_at(pos, x) + line_t as f64 / 2.0;
            let (rx, ry) = (sp * 0.62, sp * 0.42);
            c.ellipse(x, cy, rx, ry, -0.35);
            if r.random_bool(0.8) {
                let len = (3.3 * sp) as i64;
                if pos > g.bottom_pos() / 2.0 {
                    let sx = (x + rx - 1.0) as i64;
                    c.rect(sx - stem_w + 1, cy as i64 - len, sx, cy as i64);
                } else {
                    let sx = (x - rx + 1.0) as i64;
                    c.rect(sx, cy as i64, sx + stem_w - 1, cy as i64 + len);
                }
            }
        }
        // Beamed group of two to four stemmed notes.
        5..=7 => {
            let n = r.random_range(2..=4);
            let step = sp * r.random_range(1.6..2.4);
            let (rx, ry) = (sp * 0.62, sp * 0.42);
            let beam_t = ((sp * 0.45).round() as i64).max(2);
            let beams = r.random_range(1..=2);
            let stem_top = g.y_at(-3.0, x);
            let slope = r.random_range(-0.15..0.15);
            let mut xs = Vec::new();
            for k in 0..n {
                let hx = x + k as f64 * step;
                if hx + rx + 2.0 >= page_w as f64 {
                    break;
                }
                let pos = r.random_range(1..=(g.bottom_pos() as i64 + 1)) as f64;
                let cy = g.y_at(pos, hx) + line_t as f64 / 2.0;
                c.ellipse(hx, cy, rx, ry, -0.35);
                let sx = (hx + rx - 1.0) as i64;
                let top = stem_top + slope * (sx as f64 - x);
                c.rect(sx - stem_w + 1, top as i64, sx, cy as i64);
                xs.push((sx, top));
            }
            if let (Some(&(x0, y0)), Some(&(x1, y1))) = (xs.first(), xs.last()) {
                if xs.len() >= 2 {
                    for b in 0..beams {
                        let off = b as f64 * (beam_t as f64 + 2.0);
                        c.beam(x0 - stem_w + 1, y0 + off, x1, y1 + off, beam_t);
                    }
                }
            }
        }
        // Barline across the whole staff.
        8 => {
            let top = g.y_at(0.0, x) as i64;
            let bottom = (g.y_at(g.bottom_pos(), x) + line_t as f64) as i64 - 1;
            let bw = r.random_range(1..=3) as i64;
            c.rect(x as i64, top, x as i64 + bw - 1, bottom);
        }
        // Whole note: open ring.
        _ => {
            let pos = r.random_range(0..=(g.bottom_pos() as i64)) as f64;
            let cy = g.y_at(pos, x) + line_t as f64 / 2.0;
            let (rx, ry) = (sp * 0.75, sp * 0.48);
            let mut ring = Canvas::new(c.w, c.h);
            ring.ellipse(x, cy, rx, ry, 0.0);
            let mut hole = Canvas::new(c.w, c.h);
            hole.ellipse(x, cy, rx * 0.45, ry * 0.7, 0.6);
            for (i, (&a, &b)) in ring.px.iter().zip(&hole.px).enumerate() {
                if a == 1 && b == 0 {
                    c.px[i] = 1;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    /// Paths relative to the corpus directory.
    pub input: PathBuf,
    pub output: PathBuf,
    pub staff: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub generator: String,
    pub seed: u64,
    pub config: SynthConfig,
    pub images: Vec<CorpusEntry>,
}

pub const MANIFEST_FILE: &str = "corpus.json";

/// Pages plus their split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub pages: Vec<ScorePage>,
}

/// Train gets `ceil(0.6 n)`, validation `ceil(0.2 n)`, test the rest, in
/// index order.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (6 * n).div_ceil(10);
    let val = (2 * n).div_ceil(10).min(n - train);
    (train, val, n - train - val)
}

pub fn generate_corpus(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Corpus> {
    if n < 3 {
        return Err(Error::invalid(format!("a corpus needs at least 3 images, got {n}")));
    }
    cfg.validate()?;
    let (train, val, _) = split_counts(n);
    let mut pages = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let page_cfg = SynthConfig {
            seed: rng::mix(seed ^ rng::mix(i as u64)),
            ..cfg.clone()
        };
        pages.push(generate(&page_cfg)?);
        let id = format!("img{i:04}");
        images.push(CorpusEntry {
            input: format!("{id}_input.pbm").into(),
            output: format!("{id}_output.pbm").into(),
            staff: format!("{id}_staff.pbm").into(),
            split: if i < train {
                Split::Train
            } else if i < train + val {
                Split::Validation
            } else {
                Split::Test
            },
            id,
        });
    }
    Ok(Corpus {
        manifest: CorpusManifest {
            generator: rng::GENERATOR.to_string(),
            seed,
            config: cfg.clone(),
            images,
        },
        pages,
    })
}

impl Corpus {
    pub fn split_spec(&self) -> SplitSpec {
        let ids = |s: Split| {
            self.manifest
                .images
                .iter()
                .filter(|e| e.split == s)
                .map(|e| e.id.clone())
                .collect()
        };
        SplitSpec {
            train: ids(Split::Train),
            validation: ids(Split::Validation),
            test: ids(Split::Test),
        }
    }

    /// `(input, output)` pairs of one split, in corpus order.
    pub fn pairs(&self, split: Split) -> Vec<(BinaryImage, BinaryImage)> {
        self.manifest
            .images
            .iter()
            .zip(&self.pages)
            .filter(|(e, _)| e.split == split)
            .map(|(_, p)| (p.input.clone(), p.output.clone()))
            .collect()
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.manifest
            .images
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.id.clone())
            .collect()
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (e, p) in self.manifest.images.iter().zip(&self.pages) {
            pbm::write_image(&p.input, dir.join(&e.input))?;
            pbm::write_image(&p.output, dir.join(&e.output))?;
            pbm::write_image(&p.staff_mask, dir.join(&e.staff))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let mut pages = Vec::with_capacity(manifest.images.len());
        for e in &manifest.images {
            let input = pbm::read_image(dir.join(&e.input))?;
            let output = pbm::read_image(dir.join(&e.output))?;
            let staff_mask = pbm::read_image(dir.join(&e.staff))?;
            if input.dims() != output.dims() || input.dims() != staff_mask.dims() {
                return Err(Error::data(format!("{}: image sizes differ", e.id)));
            }
            pages.push(ScorePage {
                input,
                output,
                staff_mask,
            });
        }
        let corpus = Corpus { manifest, pages };
        corpus.split_spec().validate()?;
        Ok(corpus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 96,
            height: 96,
            staves: 1,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn pure_staff_is_removed_entirely() {
        let cfg = SynthConfig {
            symbols_per_staff: (0, 0),
            degradation: Degradation::NONE,
            ..small()
        };
        let page = generate(&cfg).unwrap();
        assert!(page.input.count_foreground() > 0);
        assert_eq!(page.output.count_foreground(), 0);
        assert_eq!(page.staff_mask, page.input);
    }

    #[test]
    fn no_staves_means_nothing_to_remove() {
        let page = generate(&SynthConfig {
            staves: 0,
            ..small()
        })
        .unwrap();
        assert_eq!(page.output, page.input);
    }

    #[test]
    fn construction_invariants_over_seeds() {
        for seed in 0..25 {
            let page = generate(&SynthConfig { seed, ..small() }).unwrap();
            assert!(page.output.is_subset_of(&page.input));
            assert!(page.staff_mask.is_subset_of(&page.input));
            for ((&i, &o), &s) in page
                .input
                .pixels()
                .iter()
                .zip(page.output.pixels())
                .zip(page.staff_mask.pixels())
            {
                if i == 1 && o == 0 {
                    assert_eq!(s, 1, "removed pixel outside the staff mask");
                }
            }
        }
    }

    #[test]
    fn geometry_overflow_rejected() {
        let cfg = SynthConfig {
            height: 60,
            staves: 2,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::InvalidArgument(_))));
        let cfg = SynthConfig {
            degradation: Degradation {
                pepper: 1.5,
                line_breaks: 0.0,
            },
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn split_rounding() {
        assert_eq!(split_counts(5), (3, 1, 1));
        assert_eq!(split_counts(50), (30, 10, 10));
        assert_eq!(split_counts(10), (6, 2, 2));
        assert!(generate_corpus(&small(), 2, 0).is_err());
        let c = generate_corpus(&small(), 5, 1).unwrap();
        let s = c.split_spec();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (3, 1, 1));
    }

    #[test]
    fn deterministic_pages() {
        let a = generate(&SynthConfig { seed: 4, ..small() }).unwrap();
        let b = generate(&SynthConfig { seed: 4, ..small() }).unwrap();
        let c = generate(&SynthConfig { seed: 5, ..small() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_write_load() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(&small(), 4, 9).unwrap();
        c.write(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back, c);
        assert!(matches!(
            Corpus::load(dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }
}
