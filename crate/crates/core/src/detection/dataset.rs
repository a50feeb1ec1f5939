//! Synthetic marker dataset generator.
//!
//! Produces PNG images of the 3 cm blue sphere over varied surgical-field
//! backgrounds together with a plain-text ground-truth index. The default
//! split sizes are 132 train / 50 test / 30 validation images.
//!
//! Directory layout:
//!
//! ```text
//! <dir>/manifest.txt
//! <dir>/images/train_0000.png
//! <dir>/images/test_0000.png
//! <dir>/images/validation_0000.png
//! <dir>/images/negative_0000.png   (only when negatives were requested)
//! ```
//!
//! Index format: two `#` header lines, then one line per image:
//! `path cx cy radius split`, with `-` for the three marker fields of
//! marker-absent images.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::synth::{render, Background, MarkerDisc, MarkerStyle, RenderRequest};
use crate::frame::Frame;

pub const MANIFEST_FILE: &str = "manifest.txt";
const HEADER: &str = "# sls-dataset v1";
/// Physical marker diameter.
pub const MARKER_DIAMETER_CM: f64 = 3.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("invalid dataset request: {0}")]
    BadCounts(String),
    #[error("dataset missing: {0}")]
    Missing(String),
    #[error("malformed manifest line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Validation,
    /// Marker-absent frames used to measure false positives.
    Negative,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::Train,
        Split::Test,
        Split::Validation,
        Split::Negative,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
            Split::Negative => "negative",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|split| split.as_str() == s)
            .ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetRequest {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
    pub negatives: usize,
    pub width: u32,
    pub height: u32,
}

impl Default for DatasetRequest {
    fn default() -> Self {
        Self {
            train: 132,
            test: 50,
            validation: 30,
            negatives: 0,
            width: 640,
            height: 480,
        }
    }
}

impl DatasetRequest {
    fn validate(&self) -> Result<(), DatasetError> {
        if self.train == 0 || self.test == 0 || self.validation == 0 {
            return Err(DatasetError::BadCounts(format!(
                "split counts must be positive, got {}/{}/{}",
                self.train, self.test, self.validation
            )));
        }
        if self.width < 64 || self.height < 64 {
            return Err(DatasetError::BadCounts(
                "images must be at least 64x64".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Path relative to the dataset directory.
    pub path: String,
    pub split: Split,
    pub marker: Option<MarkerDisc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// `train + test + validation`; marker-absent negatives are counted separately.
    pub total: usize,
    pub train: usize,
    pub test: usize,
    pub validation: usize,
    pub negatives: usize,
    pub entries: Vec<GroundTruth>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &GroundTruth> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Test => self.test,
            Split::Validation => self.validation,
            Split::Negative => self.negatives,
        }
    }

    pub fn to_index(&self) -> String {
        let mut out = format!(
            "{HEADER}\n# seed={} width={} height={} train={} test={} validation={} negatives={}\n",
            self.seed,
            self.width,
            self.height,
            self.train,
            self.test,
            self.validation,
            self.negatives
        );
        for e in &self.entries {
            match e.marker {
                Some(m) => out.push_str(&format!(
                    "{} {:.6} {:.6} {:.6} {}\n",
                    e.path, m.cx, m.cy, m.radius, e.split
                )),
                None => out.push_str(&format!("{} - - - {}\n", e.path, e.split)),
            }
        }
        out
    }

    pub fn parse_index(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate();
        let malformed = |line: usize, reason: &str| DatasetError::Malformed {
            line: line + 1,
            reason: reason.into(),
        };
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            _ => return Err(malformed(0, "missing dataset header")),
        }
        let (n, meta) = lines
            .next()
            .ok_or_else(|| malformed(1, "missing metadata line"))?;
        let meta = meta
            .strip_prefix('#')
            .ok_or_else(|| malformed(n, "metadata must start with #"))?;
        let get = |key: &str| -> Result<u64, DatasetError> {
            meta.split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
                .ok_or_else(|| malformed(n, &format!("missing {key}")))?
                .parse()
                .map_err(|_| malformed(n, &format!("bad {key}")))
        };
        let seed = get("seed")?;
        let width = get("width")? as u32;
        let height = get("height")? as u32;
        let train = get("train")? as usize;
        let test = get("test")? as usize;
        let validation = get("validation")? as usize;
        let negatives = get("negatives")? as usize;

        let mut entries = Vec::new();
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [path, cx, cy, r, split] = fields[..] else {
                return Err(malformed(n, "expected 5 fields"));
            };
            let split: Split = split.parse().map_err(|e: String| malformed(n, &e))?;
            let marker = if cx == "-" {
                None
            } else {
                let num = |s: &str| s.parse::<f64>().map_err(|_| malformed(n, "bad number"));
                Some(MarkerDisc {
                    cx: num(cx)?,
                    cy: num(cy)?,
                    radius: num(r)?,
                })
            };
            entries.push(GroundTruth {
                path: path.to_owned(),
                split,
                marker,
            });
        }
        Ok(Self {
            seed,
            width,
            height,
            total: train + test + validation,
            train,
            test,
            validation,
            negatives,
            entries,
        })
    }
}

/// Plain backgrounds: tissue, skin, drape green, steel, gauze.
const PLAIN_PALETTE: [[u8; 3]; 5] = [
    [170, 60, 55],
    [200, 150, 120],
    [60, 120, 90],
    [140, 140, 145],
    [225, 220, 210],
];
/// Color pairs for textured backgrounds.
const TEXTURE_PAIRS: [([u8; 3], [u8; 3]); 4] = [
    ([170, 60, 55], [210, 120, 110]),
    ([200, 150, 120], [150, 90, 70]),
    ([60, 120, 90], [40, 90, 60]),
    ([140, 140, 145], [210, 205, 200]),
];

/// Parameters of one synthetic image, drawn from the dataset RNG.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleParams {
    pub marker: Option<MarkerDisc>,
    pub background: Background,
    pub illumination_gain: f32,
    pub noise_sigma: f32,
    pub noise_seed: u64,
}

/// Draws scene parameters for one image. The marker radius follows from
/// projecting the 3 cm sphere onto a crop that spans 40-80 cm of the field.
pub fn sample_params(
    rng: &mut impl Rng,
    width: u32,
    height: u32,
    with_marker: bool,
) -> SampleParams {
    let field_cm: f64 = rng.random_range(40.0..80.0);
    let radius = MARKER_DIAMETER_CM / 2.0 * f64::from(width) / field_cm;
    let margin = radius + 4.0;
    let cx = rng.random_range(margin..f64::from(width) - margin);
    let cy = rng.random_range(margin..f64::from(height) - margin);
    let background = if rng.random_bool(0.5) {
        Background::plain(PLAIN_PALETTE[rng.random_range(0..PLAIN_PALETTE.len())])
    } else {
        let (a, b) = TEXTURE_PAIRS[rng.random_range(0..TEXTURE_PAIRS.len())];
        Background::Textured {
            seed: rng.random(),
            a,
            b,
            cell: rng.random_range(12.0..64.0),
        }
    };
    SampleParams {
        // Quantized to what the manifest stores, so reloaded ground truth is exact.
        marker: with_marker.then_some(MarkerDisc {
            cx: micro(cx),
            cy: micro(cy),
            radius: micro(radius),
        }),
        background,
        illumination_gain: rng.random_range(0.7..1.3),
        noise_sigma: rng.random_range(1.0..4.0),
        noise_seed: rng.random(),
    }
}

fn micro(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

pub fn render_sample(params: &SampleParams, width: u32, height: u32) -> Frame {
    render(&RenderRequest {
        width,
        height,
        origin: (0.0, 0.0),
        marker: params.marker,
        background: &params.background,
        style: &MarkerStyle::default(),
        illumination_gain: params.illumination_gain,
        noise_sigma: params.noise_sigma,
        noise_seed: params.noise_seed,
        timestamp_ms: 0,
    })
}

pub fn write_png(frame: &Frame, path: &Path) -> Result<(), DatasetError> {
    let img = image::RgbImage::from_raw(frame.width(), frame.height(), frame.pixels().to_vec())
        .expect("frame buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DatasetError::Image {
            path: path.to_owned(),
            message: e.to_string(),
        })
}

pub fn read_png(path: &Path) -> Result<Frame, DatasetError> {
    let img = image::open(path)
        .map_err(|e| DatasetError::Image {
            path: path.to_owned(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Frame::new(w, h, img.into_raw(), 0).map_err(|e| DatasetError::Image {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Generates the dataset into `dir` (created if needed). Output is a pure
/// function of `seed` and `request`; images are written in index order.
pub fn generate_dataset(
    dir: &Path,
    seed: u64,
    request: &DatasetRequest,
) -> Result<DatasetManifest, DatasetError> {
    request.validate()?;
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = [
        (Split::Train, request.train),
        (Split::Test, request.test),
        (Split::Validation, request.validation),
        (Split::Negative, request.negatives),
    ];
    let mut entries = Vec::new();
    for (split, count) in plan {
        for i in 0..count {
            let params = sample_params(
                &mut rng,
                request.width,
                request.height,
                split != Split::Negative,
            );
            let frame = render_sample(&params, request.width, request.height);
            let rel = format!("images/{split}_{i:04}.png");
            write_png(&frame, &dir.join(&rel))?;
            entries.push(GroundTruth {
                path: rel,
                split,
                marker: params.marker,
            });
        }
    }
    let manifest = DatasetManifest {
        seed,
        width: request.width,
        height: request.height,
        total: request.train + request.test + request.validation,
        train: request.train,
        test: request.test,
        validation: request.validation,
        negatives: request.negatives,
        entries,
    };
    let index = dir.join(MANIFEST_FILE);
    fs::write(&index, manifest.to_index()).map_err(io_err(&index))?;
    log::info!(
        "wrote {} images to {}",
        manifest.entries.len(),
        dir.display()
    );
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let index = dir.join(MANIFEST_FILE);
    if !index.is_file() {
        return Err(DatasetError::Missing(format!(
            "{} not found",
            index.display()
        )));
    }
    let text = fs::read_to_string(&index).map_err(io_err(&index))?;
    DatasetManifest::parse_index(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetRequest {
        DatasetRequest {
            train: 1,
            test: 1,
            validation: 1,
            negatives: 1,
            width: 96,
            height: 80,
        }
    }

    #[test]
    fn minimal_request_writes_three_annotated_images() {
        let dir = tempfile::tempdir().unwrap();
        let req = DatasetRequest {
            negatives: 0,
            ..small()
        };
        let m = generate_dataset(dir.path(), 1, &req).unwrap();
        assert_eq!(m.total, 3);
        assert_eq!(m.entries.len(), 3);
        for e in &m.entries {
            let marker = e.marker.expect("ground truth center recorded");
            assert!(marker.cx > 0.0 && marker.cy > 0.0);
            assert!(dir.path().join(&e.path).is_file());
        }
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_dataset(a.path(), 42, &small()).unwrap();
        let mb = generate_dataset(b.path(), 42, &small()).unwrap();
        assert_eq!(ma, mb);
        for e in &ma.entries {
            assert_eq!(
                fs::read(a.path().join(&e.path)).unwrap(),
                fs::read(b.path().join(&e.path)).unwrap()
            );
        }
        assert_eq!(
            fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(b.path().join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn index_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(dir.path(), 5, &small()).unwrap();
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded.entries.len(), m.entries.len());
        assert_eq!(loaded.negatives, 1);
        assert!(loaded.split(Split::Negative).all(|e| e.marker.is_none()));
        for (a, b) in loaded.entries.iter().zip(&m.entries) {
            let (ma, mb) = (
                a.marker.unwrap_or(MarkerDisc {
                    cx: 0.0,
                    cy: 0.0,
                    radius: 0.0,
                }),
                b.marker.unwrap_or(MarkerDisc {
                    cx: 0.0,
                    cy: 0.0,
                    radius: 0.0,
                }),
            );
            assert!((ma.cx - mb.cx).abs() < 1e-6 && (ma.radius - mb.radius).abs() < 1e-6);
        }
        let frame = read_png(&dir.path().join(&m.entries[0].path)).unwrap();
        assert_eq!((frame.width(), frame.height()), (96, 80));
    }

    #[test]
    fn zero_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let req = DatasetRequest {
            train: 0,
            ..DatasetRequest::default()
        };
        assert!(matches!(
            generate_dataset(dir.path(), 1, &req),
            Err(DatasetError::BadCounts(_))
        ));
    }

    #[test]
    fn default_request_matches_table_split() {
        let r = DatasetRequest::default();
        assert_eq!((r.train, r.test, r.validation), (132, 50, 30));
        assert_eq!(r.train + r.test + r.validation, 212);
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_manifest(dir.path()),
            Err(DatasetError::Missing(_))
        ));
    }
}
