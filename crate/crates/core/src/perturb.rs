//! Controlled image corruptions and FWD sweeps over corruption strength.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frechet::{FwdReport, PreparedReference};
use crate::ingest::{dataset_statistics_with, DatasetManifest};
use crate::wavelet::{FilterBank, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Intensity is the Gaussian standard deviation in pixels.
    GaussianBlur,
    /// Intensity is the noise amplitude in normalized units.
    UniformNoise,
    /// Intensity is the JPEG quality in `[1, 100]`.
    Jpeg,
}

impl PerturbationKind {
    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::GaussianBlur => "gaussian_blur",
            PerturbationKind::UniformNoise => "uniform_noise",
            PerturbationKind::Jpeg => "jpeg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, grid: Vec<f64>, seed: u64) -> Result<Self> {
        let spec = Self { kind, grid, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks that the grid is non-empty, in range and strictly monotone:
    /// increasing for blur and noise, decreasing quality for JPEG.
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Parameter("intensity grid is empty".into()));
        }
        for &v in &self.grid {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!("intensity {v} must be finite and nonnegative")));
            }
            if self.kind == PerturbationKind::Jpeg {
                jpeg_quality(v)?;
            }
        }
        let monotone = self.grid.windows(2).all(|w| match self.kind {
            PerturbationKind::Jpeg => w[1] < w[0],
            _ => w[1] > w[0],
        });
        if !monotone {
            let direction = if self.kind == PerturbationKind::Jpeg {
                "decreasing"
            } else {
                "increasing"
            };
            return Err(Error::Parameter(format!(
                "{} grid must be strictly {direction}",
                self.kind.name()
            )));
        }
        Ok(())
    }
}

fn jpeg_quality(value: f64) -> Result<u8> {
    if value.fract() != 0.0 || !(1.0..=100.0).contains(&value) {
        return Err(Error::Parameter(format!(
            "JPEG quality must be an integer in [1, 100], got {value}"
        )));
    }
    Ok(value as u8)
}

/// Normalized Gaussian taps for offsets `-radius..=radius`, radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Maps an out-of-range index onto `0..len` by mirroring about the edges,
/// repeating the edge sample (`d c b a | a b c d | d c b a`).
fn reflect(index: i64, len: usize) -> usize {
    let len = len as i64;
    let period = 2 * len;
    let m = index.rem_euclid(period);
    (if m < len { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur with reflect boundary, clamped to `[0, 1]`.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Parameter(format!("blur sigma must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (h, w, c) = img.dims();
    let src = img.data();

    let mut rows = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &weight) in kernel.iter().enumerate() {
                    let xx = reflect(x as i64 + k as i64 - radius, w);
                    acc += weight * src[(y * w + xx) * c + ch];
                }
                rows[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &weight) in kernel.iter().enumerate() {
                    let yy = reflect(y as i64 + k as i64 - radius, h);
                    acc += weight * rows[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc.clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(out, h, w, c)
}

/// Adds i.i.d. `Uniform(-amplitude, amplitude)` noise and clamps to `[0, 1]`.
pub fn uniform_noise<R: rand::Rng + ?Sized>(img: &ImageTensor, amplitude: f64, rng: &mut R) -> Result<ImageTensor> {
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(Error::Parameter(format!("noise amplitude must be nonnegative, got {amplitude}")));
    }
    if amplitude == 0.0 {
        return Ok(img.clone());
    }
    let dist = Uniform::new_inclusive(-amplitude, amplitude).map_err(|e| Error::Parameter(e.to_string()))?;
    let (h, w, c) = img.dims();
    let data = img
        .data()
        .iter()
        .map(|&v| (v + dist.sample(rng)).clamp(0.0, 1.0))
        .collect();
    ImageTensor::new(data, h, w, c)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes to JPEG at `quality`, decodes, and renormalizes.
pub fn jpeg_recompress(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Parameter(format!("JPEG quality must be in [1, 100], got {quality}")));
    }
    let (h, w, c) = img.dims();
    let pixels: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let color = if c == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    let mut encoded = Vec::new();
    JpegEncoder::new_with_quality(&mut encoded, quality)
        .encode(&pixels, w as u32, h as u32, color)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let decoded = image::load(Cursor::new(encoded), ImageFormat::Jpeg).map_err(|e| Error::Codec(e.to_string()))?;
    let raw = if c == 1 {
        decoded.to_luma8().into_raw()
    } else {
        decoded.to_rgb8().into_raw()
    };
    ImageTensor::from_u8(&raw, h, w, c)
}

/// Random stream for image `index` of a sweep seeded with `seed`.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Applies one perturbation of `kind` at `intensity` to image `index`.
pub fn apply(kind: PerturbationKind, img: &ImageTensor, intensity: f64, seed: u64, index: usize) -> Result<ImageTensor> {
    match kind {
        PerturbationKind::GaussianBlur => gaussian_blur(img, intensity),
        PerturbationKind::UniformNoise => uniform_noise(img, intensity, &mut image_rng(seed, index)),
        PerturbationKind::Jpeg => jpeg_recompress(img, jpeg_quality(intensity)?),
    }
}

/// Perturbs a batch in parallel; the output does not depend on scheduling.
pub fn apply_batch(kind: PerturbationKind, imgs: &[ImageTensor], intensity: f64, seed: u64, first_index: usize) -> Result<Vec<ImageTensor>> {
    imgs.par_iter()
        .enumerate()
        .map(|(i, img)| apply(kind, img, intensity, seed, first_index + i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub intensity: f64,
    pub report: FwdReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub spec: PerturbationSpec,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    /// `intensity,fwd` rows in grid order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("intensity,fwd\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.intensity, p.report.fwd));
        }
        out
    }

    pub fn fwd_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.report.fwd).collect()
    }
}

/// Perturbs every image of `manifest` at each grid intensity and compares
/// the resulting statistics against `reference`.
pub fn sweep(
    reference: &PreparedReference,
    manifest: &DatasetManifest,
    spec: &PerturbationSpec,
    level: u32,
    bank: &FilterBank,
    batch_size: usize,
) -> Result<SweepCurve> {
    spec.validate()?;
    reference
        .stats()
        .fingerprint()
        .ensure_compatible(&manifest.fingerprint(level, bank))?;
    let points = spec
        .grid
        .iter()
        .map(|&intensity| {
            let stats = dataset_statistics_with(manifest, level, bank, batch_size, |i, img| {
                apply(spec.kind, &img, intensity, spec.seed, i)
            })?;
            Ok(SweepPoint {
                intensity,
                report: reference.compare(&stats)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepCurve {
        spec: spec.clone(),
        points,
    })
}
