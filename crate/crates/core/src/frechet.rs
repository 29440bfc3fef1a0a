//! Fréchet distance between per-packet Gaussians and its aggregation.
//!
//! With `A = Σr^{1/2}` and `B = Σg^{1/2}` (symmetric square roots from
//! eigendecompositions), `Tr[(Σr Σg)^{1/2}]` is computed as the sum of the
//! singular values of `BA`.
//!
//! Eigenvalues of either covariance in `[-1e-6 ρ, 0)` (ρ the spectral
//! radius) are clipped to zero and counted. Anything more negative is
//! reported as a numerical error.

use faer::{Mat, MatRef, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::stats::PacketStatistics;
use crate::wavelet::{packet_layout, Filter};

/// Relative threshold below which negative eigenvalues are treated as
/// evidence of a non-PSD matrix rather than roundoff.
pub const CLIP_TOLERANCE: f64 = 1e-6;
/// Symmetry tolerance for input covariances, relative to their magnitude.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;
/// Per-packet distances within this (scaled) margin below zero are clamped.
pub const NEGATIVE_FLOOR: f64 = 1e-8;
/// Diagonal offset applied when the offset option is enabled.
pub const DEFAULT_DIAGONAL_OFFSET: f64 = 1e-6;

pub const REPORT_FORMAT: &str = "fwd-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrechetOptions {
    /// Adds `offset * I` to both covariances before comparing them.
    pub diagonal_offset: Option<f64>,
}

/// Eigenvalue clipping observed while taking a square root.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipStats {
    pub count: usize,
    pub max_magnitude: f64,
}

impl ClipStats {
    fn combine(self, other: ClipStats) -> ClipStats {
        ClipStats {
            count: self.count + other.count,
            max_magnitude: self.max_magnitude.max(other.max_magnitude),
        }
    }
}

/// Symmetric PSD square root of a covariance together with its trace.
#[derive(Debug, Clone)]
pub struct SqrtFactor {
    root: Mat<f64>,
    trace: f64,
    clip: ClipStats,
}

impl SqrtFactor {
    pub fn dim(&self) -> usize {
        self.root.nrows()
    }

    /// Trace of the original covariance.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn clip(&self) -> ClipStats {
        self.clip
    }

    pub fn root(&self) -> MatRef<'_, f64> {
        self.root.as_ref()
    }
}

fn check_square(m: &[f64], dim: usize, what: &'static str) -> Result<()> {
    if m.len() != dim * dim {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {} entries, expected {dim}x{dim}",
            m.len()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..dim {
        for j in i + 1..dim {
            if (m[i * dim + j] - m[j * dim + i]).abs() > SYMMETRY_TOLERANCE * scale {
                return Err(Error::numerical(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Square root of a symmetric PSD matrix given row-major.
pub fn psd_sqrt(matrix: &[f64], dim: usize, offset: Option<f64>) -> Result<SqrtFactor> {
    check_square(matrix, dim, "covariance")?;
    let offset = offset.unwrap_or(0.0);
    let m = Mat::from_fn(dim, dim, |i, j| {
        let v = matrix[i * dim + j];
        if i == j {
            v + offset
        } else {
            v
        }
    });
    let trace = (0..dim).map(|i| m[(i, i)]).sum();
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::numerical(format!("eigendecomposition failed: {e:?}")))?;
    let values: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    let (roots, clip) = clipped_roots(&values, dim)?;
    let u = evd.U();
    let scaled = Mat::from_fn(dim, dim, |i, k| u[(i, k)] * roots[k]);
    let root = &scaled * u.transpose();
    Ok(SqrtFactor { root, trace, clip })
}

/// Eigenvalue square roots. Positive eigenvalues at roundoff level
/// (`dim * eps * radius`) are treated as zero.
fn clipped_roots(values: &[f64], dim: usize) -> Result<(Vec<f64>, ClipStats)> {
    let radius = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let noise = dim as f64 * f64::EPSILON * radius;
    let mut clip = ClipStats::default();
    let roots = values
        .iter()
        .map(|&v| {
            if v > noise {
                Ok(v.sqrt())
            } else if v >= 0.0 {
                Ok(0.0)
            } else if v >= -CLIP_TOLERANCE * radius {
                clip.count += 1;
                clip.max_magnitude = clip.max_magnitude.max(-v);
                Ok(0.0)
            } else {
                Err(Error::numerical(format!(
                    "matrix is not positive semidefinite: eigenvalue {v:e} against spectral radius {radius:e}"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((roots, clip))
}

/// `Tr[(Σr Σg)^{1/2}]` from the two square-root factors.
fn trace_sqrt_from_factors(r: &SqrtFactor, g: &SqrtFactor) -> Result<f64> {
    let product = g.root() * r.root();
    let singular = product
        .singular_values()
        .map_err(|e| Error::numerical(format!("singular value decomposition failed: {e:?}")))?;
    Ok(singular.iter().sum())
}

/// `Tr[(Σr Σg)^{1/2}]` for two symmetric PSD matrices given row-major.
pub fn trace_sqrt_product(sigma_r: &[f64], sigma_g: &[f64], dim: usize) -> Result<f64> {
    let r = psd_sqrt(sigma_r, dim, None)?;
    let g = psd_sqrt(sigma_g, dim, None)?;
    trace_sqrt_from_factors(&r, &g)
}

/// Per-packet distance with its clipping diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketDistance {
    pub distance: f64,
    pub clip_reference: ClipStats,
    pub clip_candidate: ClipStats,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distance_from_parts(mu_r: &[f64], r: &SqrtFactor, mu_g: &[f64], g: &SqrtFactor) -> Result<PacketDistance> {
    if mu_r.iter().chain(mu_g).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mean vector"));
    }
    let cross = trace_sqrt_from_factors(r, g)?;
    let raw = squared_distance(mu_r, mu_g) + r.trace() + g.trace() - 2.0 * cross;
    let floor = NEGATIVE_FLOOR * (1.0 + r.trace() + g.trace());
    let distance = if raw >= 0.0 {
        raw
    } else if raw >= -floor {
        0.0
    } else {
        return Err(Error::numerical(format!("negative Fréchet distance {raw:e}")));
    };
    Ok(PacketDistance {
        distance,
        clip_reference: r.clip(),
        clip_candidate: g.clip(),
    })
}

/// `‖μr − μg‖² + Tr[Σr + Σg − 2 (Σr Σg)^{1/2}]` for one packet.
pub fn frechet_distance_packet(
    (mu_r, sigma_r): (&[f64], &[f64]),
    (mu_g, sigma_g): (&[f64], &[f64]),
) -> Result<f64> {
    frechet_distance_packet_with(
        (mu_r, sigma_r),
        (mu_g, sigma_g),
        &FrechetOptions::default(),
    )
    .map(|d| d.distance)
}

pub fn frechet_distance_packet_with(
    (mu_r, sigma_r): (&[f64], &[f64]),
    (mu_g, sigma_g): (&[f64], &[f64]),
    options: &FrechetOptions,
) -> Result<PacketDistance> {
    let dim = mu_r.len();
    if mu_g.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "mean vectors of length {dim} and {}",
            mu_g.len()
        )));
    }
    let r = psd_sqrt(sigma_r, dim, options.diagonal_offset)?;
    let g = psd_sqrt(sigma_g, dim, options.diagonal_offset)?;
    distance_from_parts(mu_r, &r, mu_g, &g)
}

/// Kahan-compensated sum in slice order.
pub(crate) fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PacketDiagnostics {
    pub clipped_reference: usize,
    pub clipped_candidate: usize,
    pub max_clipped_magnitude: f64,
}

/// Result of comparing two statistics objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwdReport {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub fwd: f64,
    pub per_packet: Vec<f64>,
    pub layout: Vec<String>,
    pub fingerprint: Fingerprint,
    pub candidate_fingerprint: Fingerprint,
    pub reference_count: u64,
    pub candidate_count: u64,
    pub options: FrechetOptions,
    pub diagnostics: Vec<PacketDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl FwdReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Parses a report and checks that it is internally consistent.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("invalid report JSON: {e}")))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(REPORT_FORMAT) {
            return Err(Error::Format("not an FWD report".into()));
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("report has no version".into()))?;
        if version != u64::from(REPORT_VERSION) {
            return Err(Error::FormatVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: REPORT_VERSION,
            });
        }
        let report: FwdReport =
            serde_json::from_value(value).map_err(|e| Error::Format(format!("invalid report: {e}")))?;
        report.validate()?;
        Ok(report)
    }

    fn validate(&self) -> Result<()> {
        let layout = packet_layout(self.fingerprint.level)
            .map_err(|_| Error::Format(format!("invalid level {}", self.fingerprint.level)))?;
        if self.layout != layout {
            return Err(Error::Format("packet layout does not match the level".into()));
        }
        if self.per_packet.len() != layout.len() || self.diagnostics.len() != layout.len() {
            return Err(Error::Format("per-packet arrays do not match the layout".into()));
        }
        if self.per_packet.iter().any(|v| !v.is_finite() || *v < 0.0) || !self.fwd.is_finite() {
            return Err(Error::Format("per-packet distances must be finite and nonnegative".into()));
        }
        let mean = compensated_sum(&self.per_packet) / self.per_packet.len() as f64;
        if (mean - self.fwd).abs() > 1e-12 * mean.abs().max(1.0) {
            return Err(Error::Format(format!(
                "fwd {} is not the mean of the per-packet distances ({mean})",
                self.fwd
            )));
        }
        Ok(())
    }

    /// Packet indices sorted by descending distance; ties keep layout order.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.per_packet.len()).collect();
        order.sort_by(|&a, &b| self.per_packet[b].total_cmp(&self.per_packet[a]));
        order
    }
}

/// Reference statistics with their covariance square roots precomputed, for
/// comparing many candidates against one reference.
#[derive(Debug, Clone)]
pub struct PreparedReference {
    stats: PacketStatistics,
    factors: Vec<SqrtFactor>,
    options: FrechetOptions,
}

impl PreparedReference {
    pub fn new(stats: PacketStatistics, options: FrechetOptions) -> Result<Self> {
        let dim = stats.dim();
        let factors = (0..stats.packets())
            .into_par_iter()
            .map(|p| psd_sqrt(stats.sigma(p), dim, options.diagonal_offset).map_err(|e| e.in_packet(p)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stats,
            factors,
            options,
        })
    }

    pub fn stats(&self) -> &PacketStatistics {
        &self.stats
    }

    pub fn options(&self) -> &FrechetOptions {
        &self.options
    }

    /// Compares `candidate` against the reference.
    pub fn compare(&self, candidate: &PacketStatistics) -> Result<FwdReport> {
        let reference = &self.stats;
        reference.fingerprint().ensure_compatible(candidate.fingerprint())?;
        let dim = reference.dim();
        let distances = (0..reference.packets())
            .into_par_iter()
            .map(|p| {
                let g = psd_sqrt(candidate.sigma(p), dim, self.options.diagonal_offset)?;
                distance_from_parts(reference.mu(p), &self.factors[p], candidate.mu(p), &g)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .enumerate()
            .map(|(p, d)| d.map_err(|e| e.in_packet(p)))
            .collect::<Result<Vec<_>>>()?;

        let per_packet: Vec<f64> = distances.iter().map(|d| d.distance).collect();
        let diagnostics = distances
            .iter()
            .map(|d| PacketDiagnostics {
                clipped_reference: d.clip_reference.count,
                clipped_candidate: d.clip_candidate.count,
                max_clipped_magnitude: d.clip_reference.combine(d.clip_candidate).max_magnitude,
            })
            .collect();
        Ok(FwdReport {
            format: REPORT_FORMAT.to_owned(),
            version: REPORT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            fwd: compensated_sum(&per_packet) / per_packet.len() as f64,
            per_packet,
            layout: packet_layout(reference.fingerprint().level)?,
            fingerprint: reference.fingerprint().clone(),
            candidate_fingerprint: candidate.fingerprint().clone(),
            reference_count: reference.count(),
            candidate_count: candidate.count(),
            options: self.options,
            diagnostics,
            timestamp: None,
        })
    }
}

/// Fréchet wavelet distance between two statistics objects.
pub fn fwd(stats_r: &PacketStatistics, stats_g: &PacketStatistics) -> Result<FwdReport> {
    fwd_with(stats_r, stats_g, &FrechetOptions::default())
}

pub fn fwd_with(stats_r: &PacketStatistics, stats_g: &PacketStatistics, options: &FrechetOptions) -> Result<FwdReport> {
    stats_r.fingerprint().ensure_compatible(stats_g.fingerprint())?;
    PreparedReference::new(stats_r.clone(), *options)?.compare(stats_g)
}

/// Mosaic cell `(row, column)` of a packet code: each character picks a
/// quadrant (`a` top-left, `h` top-right, `v` bottom-left, `d`
/// bottom-right) inside the cell chosen by the preceding characters.
pub fn mosaic_position(code: &str) -> Option<(usize, usize)> {
    code.chars().try_fold((0usize, 0usize), |(row, col), c| {
        let (dr, dc) = match Filter::from_code(c)? {
            Filter::A => (0, 0),
            Filter::H => (0, 1),
            Filter::V => (1, 0),
            Filter::D => (1, 1),
        };
        Some((2 * row + dr, 2 * col + dc))
    })
}

/// Arranges per-packet scalars on the `2^level x 2^level` mosaic grid.
pub fn mosaic_grid(layout: &[String], values: &[f64]) -> Vec<Vec<f64>> {
    let side = (layout.len() as f64).sqrt().round() as usize;
    let mut grid = vec![vec![0.0; side]; side];
    for (code, &v) in layout.iter().zip(values) {
        if let Some((r, c)) = mosaic_position(code) {
            grid[r][c] = v;
        }
    }
    grid
}

/// Mean absolute difference of packet means, per packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketDiffMap {
    pub level: u32,
    pub layout: Vec<String>,
    pub values: Vec<f64>,
    pub grid: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frechet: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frechet_grid: Option<Vec<Vec<f64>>>,
}

impl PacketDiffMap {
    /// Adds the per-packet Fréchet distances of `report`.
    pub fn with_frechet(mut self, report: &FwdReport) -> Result<Self> {
        if report.layout != self.layout {
            return Err(Error::Layout("report layout differs from the map layout".into()));
        }
        self.frechet_grid = Some(mosaic_grid(&self.layout, &report.per_packet));
        self.frechet = Some(report.per_packet.clone());
        Ok(self)
    }

    /// `code,mean_abs_diff[,frechet_distance]` rows in layout order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("code,mean_abs_diff");
        if self.frechet.is_some() {
            out.push_str(",frechet_distance");
        }
        out.push('\n');
        for (p, code) in self.layout.iter().enumerate() {
            out.push_str(&format!("{code},{}", self.values[p]));
            if let Some(fd) = &self.frechet {
                out.push_str(&format!(",{}", fd[p]));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diff map serializes")
    }
}

pub fn mean_abs_packet_diff(stats_r: &PacketStatistics, stats_g: &PacketStatistics) -> Result<PacketDiffMap> {
    stats_r.fingerprint().ensure_compatible(stats_g.fingerprint())?;
    let level = stats_r.fingerprint().level;
    let layout = packet_layout(level)?;
    let values: Vec<f64> = (0..stats_r.packets())
        .map(|p| {
            let diffs: Vec<f64> = stats_r
                .mu(p)
                .iter()
                .zip(stats_g.mu(p))
                .map(|(a, b)| (a - b).abs())
                .collect();
            compensated_sum(&diffs) / diffs.len() as f64
        })
        .collect();
    Ok(PacketDiffMap {
        level,
        grid: mosaic_grid(&layout, &values),
        layout,
        values,
        frechet: None,
        frechet_grid: None,
    })
}
