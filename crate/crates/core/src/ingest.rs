//! Dataset enumeration, decoding and normalization.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, ImageReader};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::stats::{MomentAccumulator, PacketStatistics};
use crate::wavelet::{check_level, wpt_forward_batch, FilterBank, ImageTensor, PacketTensor};

/// Decoder stack used for every image; recorded in fingerprints.
pub const CODEC_ID: &str = "image-0.25.10+png-0.18.1+zune-jpeg-0.5.15";

pub const DEFAULT_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorPolicy {
    /// Grayscale stays single-channel and color stays RGB; a dataset must
    /// not mix the two.
    #[default]
    Native,
    /// Grayscale inputs are replicated into three identical channels.
    ReplicateToRgb,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizePolicy {
    /// Images must already have the dataset dimensions.
    #[default]
    Strict,
    Nearest { height: u32, width: u32 },
    Bilinear { height: u32, width: u32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodePolicy {
    pub color: ColorPolicy,
    pub resize: ResizePolicy,
}

impl DecodePolicy {
    /// Descriptor stored in fingerprints.
    pub fn id(&self) -> String {
        let color = match self.color {
            ColorPolicy::Native => "native",
            ColorPolicy::ReplicateToRgb => "rgb",
        };
        let resize = match self.resize {
            ResizePolicy::Strict => "none".to_owned(),
            ResizePolicy::Nearest { height, width } => format!("nearest-{height}x{width}"),
            ResizePolicy::Bilinear { height, width } => format!("bilinear-{height}x{width}"),
        };
        format!("{CODEC_ID};color={color};resize={resize}")
    }
}

/// Transform depth used when none is given: 4 for 256x256, 3 for 128x128
/// and 2 for 64x64.
pub fn default_level(height: usize, width: usize) -> Option<u32> {
    match (height, width) {
        (256, 256) => Some(4),
        (128, 128) => Some(3),
        (64, 64) => Some(2),
        _ => None,
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let decode_err = |message: String| Error::Decode {
        path: path.to_owned(),
        message,
    };
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| decode_err(e.to_string()))
}

/// Decodes `path` to 8 bits per channel, applies `policy` and divides by 255.
pub fn load_image(path: impl AsRef<Path>, policy: &DecodePolicy) -> Result<ImageTensor> {
    let path = path.as_ref();
    let img = open(path)?;
    let gray = !img.color().has_color();
    let img = match policy.resize {
        ResizePolicy::Strict => img,
        ResizePolicy::Nearest { height, width } => img.resize_exact(width, height, FilterType::Nearest),
        ResizePolicy::Bilinear { height, width } => img.resize_exact(width, height, FilterType::Triangle),
    };
    let (width, height) = (img.width() as usize, img.height() as usize);
    if gray && policy.color == ColorPolicy::Native {
        ImageTensor::from_u8(img.to_luma8().as_raw(), height, width, 1)
    } else {
        ImageTensor::from_u8(img.to_rgb8().as_raw(), height, width, 3)
    }
}

/// Sorted list of the images under a root directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Paths relative to `root`, `/`-separated, sorted byte-wise.
    pub files: Vec<String>,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub policy: DecodePolicy,
}

fn relative_key(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Option<Vec<&str>> = rel.components().map(|c| c.as_os_str().to_str()).collect();
    parts.map(|p| p.join("/"))
}

/// Recursively lists files with one of `extensions` (case-insensitive) and
/// infers dimensions from the first one in sorted order.
pub fn scan(root: impl AsRef<Path>, extensions: &[&str], policy: DecodePolicy) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_owned();
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let matches = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| extensions.iter().any(|x| x.eq_ignore_ascii_case(e)));
        if !matches {
            continue;
        }
        let key = relative_key(root, entry.path()).ok_or_else(|| Error::Decode {
            path: entry.path().to_owned(),
            message: "path is not valid UTF-8".into(),
        })?;
        files.push(key);
    }
    files.sort_unstable_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
    let first = files.first().ok_or_else(|| Error::EmptyDataset(root.to_owned()))?;
    let probe = load_image(root.join(first), &policy)?;
    let (height, width, channels) = probe.dims();
    Ok(DatasetManifest {
        root: root.to_owned(),
        count: files.len(),
        files,
        height,
        width,
        channels,
        policy,
    })
}

impl DatasetManifest {
    pub fn path(&self, index: usize) -> PathBuf {
        self.root.join(&self.files[index])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Loads image `index`, enforcing the manifest dimensions.
    pub fn load(&self, index: usize) -> Result<ImageTensor> {
        let path = self.path(index);
        let img = load_image(&path, &self.policy)?;
        let (h, w, c) = img.dims();
        if (h, w) != (self.height, self.width) {
            return Err(Error::DimensionPolicy {
                path,
                message: format!(
                    "image is {h}x{w} but the dataset is {}x{} and resizing is disabled",
                    self.height, self.width
                ),
            });
        }
        if c != self.channels {
            return Err(Error::DimensionPolicy {
                path,
                message: format!(
                    "image has {c} channel(s) but the dataset has {}; mixed color modes need replicate-to-RGB",
                    self.channels
                ),
            });
        }
        Ok(img)
    }

    /// Fingerprint of this dataset transformed at `level` with `bank`.
    pub fn fingerprint(&self, level: u32, bank: &FilterBank) -> Fingerprint {
        Fingerprint::new(level, bank.id(), self.height, self.width, self.channels).with_decode(self.policy.id())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Batched packet transforms of a dataset in manifest order.
pub struct PacketStream<'a, F> {
    manifest: &'a DatasetManifest,
    level: u32,
    bank: &'a FilterBank,
    batch_size: usize,
    next: usize,
    map: F,
}

impl<F> Iterator for PacketStream<'_, F>
where
    F: Fn(usize, ImageTensor) -> Result<ImageTensor> + Sync,
{
    type Item = Result<PacketTensor>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.manifest.count {
            return None;
        }
        let start = self.next;
        let end = (start + self.batch_size).min(self.manifest.count);
        self.next = end;
        let images = (start..end)
            .into_par_iter()
            .map(|i| self.manifest.load(i).and_then(|img| (self.map)(i, img)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<Vec<_>>>();
        Some(images.and_then(|imgs| wpt_forward_batch(&imgs, self.level, self.bank)))
    }
}

fn validate_stream(manifest: &DatasetManifest, level: u32, batch_size: usize) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    check_level(level, manifest.height, manifest.width)
}

/// Streams packet tensors of at most `batch_size` images in manifest order.
pub fn stream_packets<'a>(
    manifest: &'a DatasetManifest,
    level: u32,
    bank: &'a FilterBank,
    batch_size: usize,
) -> Result<PacketStream<'a, impl Fn(usize, ImageTensor) -> Result<ImageTensor> + Sync>> {
    stream_packets_with(manifest, level, bank, batch_size, |_, img| Ok(img))
}

/// Like [`stream_packets`] but passes every decoded image (with its
/// manifest index) through `map` before the transform.
pub fn stream_packets_with<'a, F>(
    manifest: &'a DatasetManifest,
    level: u32,
    bank: &'a FilterBank,
    batch_size: usize,
    map: F,
) -> Result<PacketStream<'a, F>>
where
    F: Fn(usize, ImageTensor) -> Result<ImageTensor> + Sync,
{
    validate_stream(manifest, level, batch_size)?;
    Ok(PacketStream {
        manifest,
        level,
        bank,
        batch_size,
        next: 0,
        map,
    })
}

/// Per-packet statistics of a whole dataset.
pub fn dataset_statistics(
    manifest: &DatasetManifest,
    level: u32,
    bank: &FilterBank,
    batch_size: usize,
) -> Result<PacketStatistics> {
    dataset_statistics_with(manifest, level, bank, batch_size, |_, img| Ok(img))
}

pub fn dataset_statistics_with<F>(
    manifest: &DatasetManifest,
    level: u32,
    bank: &FilterBank,
    batch_size: usize,
    map: F,
) -> Result<PacketStatistics>
where
    F: Fn(usize, ImageTensor) -> Result<ImageTensor> + Sync,
{
    let mut acc = MomentAccumulator::new(manifest.fingerprint(level, bank));
    for batch in stream_packets_with(manifest, level, bank, batch_size, map)? {
        acc.accumulate(&batch?)?;
    }
    acc.finalize()
}
