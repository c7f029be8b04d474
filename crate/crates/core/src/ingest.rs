//! Frame loading, normalization, clip sampling and dataset manifests.
//!
//! Videos live on disk as directories of numbered frames
//! (`<root>/<video_id>/000000.png`, ...). Test sets carry one label file per
//! video at `<root>/<video_id>.labels.txt` holding one `0`/`1` per frame.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::resize_bilinear;

pub const CHANNELS: usize = 3;

/// A normalized frame, `C×H×W` with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Array3<f32>,
    pub source_id: String,
    pub index: usize,
}

impl Frame {
    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }
}

/// `T` consecutive input frames and the frame that follows them.
#[derive(Debug, Clone)]
pub struct Clip {
    pub inputs: Vec<Frame>,
    pub target: Frame,
}

/// Decode an image file and bilinearly resize it to `size×size`, RGB, `[0, 255]`.
pub fn load_and_resize(path: &Path, size: usize) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = Array3::from_shape_fn((CHANNELS, h, w), |(c, y, x)| {
        rgb.get_pixel(x as u32, y as u32)[c] as f32
    });
    Ok(resize_bilinear(raw.view(), size, size))
}

/// Map raw `[0, 255]` values to `[-1, 1]` via `2·raw/255 − 1`.
pub fn normalize_frame(raw: &Array3<f32>, source_id: &str, index: usize) -> Result<Frame> {
    if let Some(bad) = raw.iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::Range(format!(
            "raw pixel {bad} of {source_id}#{index} outside [0, 255]"
        )));
    }
    Ok(Frame {
        pixels: raw.mapv(|v| 2.0 * v / 255.0 - 1.0),
        source_id: source_id.to_string(),
        index,
    })
}

/// Inverse of [`normalize_frame`].
pub fn denormalize(pixels: &Array3<f32>) -> Array3<f32> {
    pixels.mapv(|v| (v + 1.0) * 255.0 / 2.0)
}

/// Write normalized `C×H×W` pixels as an 8-bit RGB PNG.
pub fn save_png(pixels: &Array3<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = pixels.dim();
    if c != CHANNELS {
        return Err(Error::Shape(format!("expected {CHANNELS} channels, got {c}")));
    }
    let raw = denormalize(pixels);
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|ch| {
            raw[[ch, y as usize, x as usize]].round().clamp(0.0, 255.0) as u8
        }))
    });
    img.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    VadTrain,
    VadTest,
    Ti,
}

impl DatasetKind {
    pub fn has_labels(self) -> bool {
        matches!(self, DatasetKind::VadTest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub frame_directory: PathBuf,
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

impl VideoEntry {
    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.frame_directory.join(frame_file_name(index))
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub videos: Vec<VideoEntry>,
}

impl DatasetManifest {
    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(|v| v.frame_count).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        for v in &self.videos {
            match (&v.labels, self.kind.has_labels()) {
                (Some(labels), true) => {
                    if labels.len() != v.frame_count {
                        return Err(Error::Manifest(format!(
                            "video {} has {} labels for {} frames",
                            v.video_id,
                            labels.len(),
                            v.frame_count
                        )));
                    }
                    if labels.iter().any(|&l| l > 1) {
                        return Err(Error::Manifest(format!("video {} has non-binary labels", v.video_id)));
                    }
                }
                (None, true) => {
                    return Err(Error::Manifest(format!("test video {} has no labels", v.video_id)));
                }
                (Some(_), false) => {
                    return Err(Error::Manifest(format!(
                        "video {} carries labels in a {:?} manifest",
                        v.video_id, self.kind
                    )));
                }
                (None, false) => {}
            }
        }
        Ok(())
    }
}

pub fn label_file(root: &Path, video_id: &str) -> PathBuf {
    root.join(format!("{video_id}.labels.txt"))
}

pub fn parse_labels(text: &str) -> Result<Vec<u8>> {
    text.split_whitespace()
        .map(|tok| match tok {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Manifest(format!("invalid label token `{other}`"))),
        })
        .collect()
}

fn numbered_frames(dir: &Path) -> Result<Vec<usize>> {
    let mut indices = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let path = entry.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        if is_png && !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()) {
            indices.push(stem.parse::<usize>().expect("digits"));
        }
    }
    indices.sort_unstable();
    Ok(indices)
}

/// Scan `root` for per-video frame directories.
pub fn build_manifest(root: &Path, kind: DatasetKind) -> Result<DatasetManifest> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(format!("listing {}", root.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut videos = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let video_id = dir
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Manifest(format!("non-UTF-8 directory {}", dir.display())))?
            .to_string();
        let indices = numbered_frames(&dir)?;
        if indices.is_empty() {
            log::warn!("skipping empty video directory {}", dir.display());
            continue;
        }
        if indices.iter().enumerate().any(|(i, &idx)| i != idx) {
            return Err(Error::Manifest(format!(
                "frames of {video_id} are not numbered contiguously from 0"
            )));
        }
        let frame_count = indices.len();
        let labels = if kind.has_labels() {
            let path = label_file(root, &video_id);
            let text = fs::read_to_string(&path).map_err(|_| {
                Error::Manifest(format!("missing label file {} for video {video_id}", path.display()))
            })?;
            Some(parse_labels(&text)?)
        } else {
            None
        };
        videos.push(VideoEntry {
            video_id,
            frame_directory: dir,
            frame_count,
            labels,
        });
    }
    let manifest = DatasetManifest { kind, videos };
    manifest.validate()?;
    Ok(manifest)
}

/// Frame indices `(inputs, target)` of the window starting at `start`.
pub fn clip_indices(frame_count: usize, start: usize, window: usize) -> Result<(Vec<usize>, usize)> {
    if start + window >= frame_count {
        return Err(Error::OutOfRange(format!(
            "window start {start} + {window} inputs needs {} frames, video has {frame_count}",
            start + window + 1
        )));
    }
    Ok(((start..start + window).collect(), start + window))
}

/// Number of complete `window + 1` clips in a video.
pub fn clip_count(frame_count: usize, window: usize) -> usize {
    frame_count.saturating_sub(window)
}

/// Loads and caches normalized frames.
///
/// The cache is bounded; once `capacity` frames are held it is cleared
/// before the next insertion.
pub struct FrameStore {
    size: usize,
    capacity: usize,
    cache: Mutex<HashMap<PathBuf, Arc<Array3<f32>>>>,
}

impl FrameStore {
    pub fn new(size: usize, capacity: usize) -> Self {
        Self {
            size,
            capacity,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self, entry: &VideoEntry, index: usize) -> Result<Arc<Array3<f32>>> {
        if index >= entry.frame_count {
            return Err(Error::OutOfRange(format!(
                "frame {index} of {} (has {})",
                entry.video_id, entry.frame_count
            )));
        }
        let path = entry.frame_path(index);
        if let Some(hit) = self.cache.lock().expect("frame cache poisoned").get(&path) {
            return Ok(hit.clone());
        }
        let raw = load_and_resize(&path, self.size)?;
        let frame = Arc::new(normalize_frame(&raw, &entry.video_id, index)?.pixels);
        let mut cache = self.cache.lock().expect("frame cache poisoned");
        if cache.len() >= self.capacity {
            cache.clear();
        }
        cache.insert(path, frame.clone());
        Ok(frame)
    }

    pub fn frame(&self, entry: &VideoEntry, index: usize) -> Result<Frame> {
        Ok(Frame {
            pixels: (*self.pixels(entry, index)?).clone(),
            source_id: entry.video_id.clone(),
            index,
        })
    }
}

pub fn sample_clip(entry: &VideoEntry, start: usize, window: usize, store: &FrameStore) -> Result<Clip> {
    let (inputs, target) = clip_indices(entry.frame_count, start, window)?;
    Ok(Clip {
        inputs: inputs
            .into_iter()
            .map(|i| store.frame(entry, i))
            .collect::<Result<_>>()?,
        target: store.frame(entry, target)?,
    })
}
