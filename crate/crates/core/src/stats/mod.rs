//! Per-packet first and second moments over a stream of packet tensors.
//!
//! Moments are accumulated around a per-packet shift (the mean of the first
//! batch seen) so that the final `Q - N m m^T` subtraction does not cancel
//! catastrophically when coefficient means are large compared to their
//! spread. Second moments are kept as the lower triangle of a column-major
//! `D x D` block per packet and mirrored on finalization.
//!
//! Packets are updated in parallel, but each packet's arithmetic follows the
//! batch order, so results do not depend on the number of worker threads.

mod cache;

pub use cache::{load_stats, read_stats, save_stats, write_stats, STATS_FORMAT_VERSION, STATS_MAGIC};

use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, MatMut, MatRef, Par};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::wavelet::PacketTensor;

/// Streaming sums for the per-packet mean and covariance.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    fingerprint: Fingerprint,
    packets: usize,
    dim: usize,
    count: u64,
    shift: Option<Vec<f64>>,
    sum: Vec<f64>,
    sum_outer: Vec<f64>,
}

impl MomentAccumulator {
    /// Empty accumulator for data matching `fingerprint`.
    ///
    /// Allocates `packets * dim^2` doubles up front; at level 4 on
    /// 256x256x3 images that is about 1.2 GB.
    pub fn new(fingerprint: Fingerprint) -> Self {
        let packets = fingerprint.packets();
        let dim = fingerprint.dim();
        Self {
            fingerprint,
            packets,
            dim,
            count: 0,
            shift: None,
            sum: vec![0.0; packets * dim],
            sum_outer: vec![0.0; packets * dim * dim],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn packets(&self) -> usize {
        self.packets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_batch(&self, batch: &PacketTensor) -> Result<()> {
        let found = batch.fingerprint();
        if found.is_compatible(&self.fingerprint) {
            Ok(())
        } else {
            Err(Error::FingerprintMismatch {
                expected: Box::new(self.fingerprint.clone()),
                found: Box::new(found),
            })
        }
    }

    /// Adds every image of `batch` to the running sums.
    pub fn accumulate(&mut self, batch: &PacketTensor) -> Result<()> {
        self.check_batch(batch)?;
        let n = batch.count();
        if n == 0 {
            return Ok(());
        }
        let (packets, dim) = (self.packets, self.dim);
        let shift = self.shift.get_or_insert_with(|| batch_mean(batch));
        let coeffs = batch.coeffs();
        let image_stride = packets * dim;

        self.sum_outer
            .par_chunks_mut(dim * dim)
            .zip(self.sum.par_chunks_mut(dim))
            .zip(shift.par_chunks(dim))
            .enumerate()
            .for_each(|(p, ((outer, sum), shift))| {
                // Column k of `centered` is image k's packet minus the shift.
                let mut centered = vec![0.0; dim * n];
                for (k, column) in centered.chunks_exact_mut(dim).enumerate() {
                    let x = &coeffs[k * image_stride + p * dim..k * image_stride + (p + 1) * dim];
                    for ((c, &xi), &si) in column.iter_mut().zip(x).zip(shift) {
                        *c = xi - si;
                    }
                }
                for column in centered.chunks_exact(dim) {
                    for (s, &c) in sum.iter_mut().zip(column) {
                        *s += c;
                    }
                }
                let z = MatRef::from_column_major_slice(&centered, dim, n);
                let dst = MatMut::from_column_major_slice_mut(outer, dim, dim);
                triangular::matmul(
                    dst,
                    BlockStructure::TriangularLower,
                    Accum::Add,
                    z,
                    BlockStructure::Rectangular,
                    z.transpose(),
                    BlockStructure::Rectangular,
                    1.0,
                    Par::Seq,
                );
            });
        self.count += n as u64;
        Ok(())
    }

    /// Folds `other` into `self`, as if its images had been accumulated
    /// after those already seen.
    pub fn merge(&mut self, other: MomentAccumulator) -> Result<()> {
        self.fingerprint.ensure_compatible(&other.fingerprint)?;
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            let fingerprint = self.fingerprint.clone();
            *self = other;
            self.fingerprint = fingerprint;
            return Ok(());
        }
        let other_shift = other.shift.expect("a non-empty accumulator has a shift");
        let shift = self.shift.as_ref().expect("a non-empty accumulator has a shift");
        let dim = self.dim;
        let other_count = other.count as f64;
        // Rebase the other sums onto our shift: with delta = b - a,
        // sum(x - a) = s_b + n_b delta and
        // sum (x-a)(x-a)^T = Q_b + s_b delta^T + delta s_b^T + n_b delta delta^T.
        self.sum_outer
            .par_chunks_mut(dim * dim)
            .zip(self.sum.par_chunks_mut(dim))
            .zip(other.sum_outer.par_chunks(dim * dim))
            .zip(other.sum.par_chunks(dim))
            .zip(shift.par_chunks(dim).zip(other_shift.par_chunks(dim)))
            .for_each(|((((outer, sum), other_outer), other_sum), (a, b))| {
                let delta: Vec<f64> = b.iter().zip(a).map(|(b, a)| b - a).collect();
                for j in 0..dim {
                    for i in j..dim {
                        let idx = j * dim + i;
                        outer[idx] += other_outer[idx]
                            + other_sum[i] * delta[j]
                            + delta[i] * other_sum[j]
                            + other_count * delta[i] * delta[j];
                    }
                }
                for i in 0..dim {
                    sum[i] += other_sum[i] + other_count * delta[i];
                }
            });
        self.count += other.count;
        Ok(())
    }

    /// Converts the sums into means and unbiased covariances, reusing the
    /// second-moment buffer for the covariance matrices.
    pub fn finalize(self) -> Result<PacketStatistics> {
        if self.count < 2 {
            return Err(Error::InsufficientSamples { found: self.count });
        }
        let Self {
            fingerprint,
            packets,
            dim,
            count,
            shift,
            mut sum,
            mut sum_outer,
        } = self;
        let shift = shift.expect("a non-empty accumulator has a shift");
        let n = count as f64;
        sum_outer
            .par_chunks_mut(dim * dim)
            .zip(sum.par_chunks_mut(dim))
            .zip(shift.par_chunks(dim))
            .for_each(|((outer, sum), shift)| {
                for s in sum.iter_mut() {
                    *s /= n;
                }
                let m = &*sum;
                for j in 0..dim {
                    for i in j..dim {
                        let v = (outer[j * dim + i] - n * m[i] * m[j]) / (n - 1.0);
                        outer[j * dim + i] = v;
                        outer[i * dim + j] = v;
                    }
                }
                for (s, &b) in sum.iter_mut().zip(shift) {
                    *s += b;
                }
            });
        Ok(PacketStatistics {
            fingerprint,
            count,
            packets,
            dim,
            mu: sum,
            sigma: sum_outer,
        })
    }
}

fn batch_mean(batch: &PacketTensor) -> Vec<f64> {
    let n = batch.count();
    let mut mean = vec![0.0; batch.packets() * batch.dim()];
    for k in 0..n {
        for (m, &x) in mean.iter_mut().zip(batch.image(k)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// Gaussian summary of every packet: mean vectors and covariance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketStatistics {
    fingerprint: Fingerprint,
    count: u64,
    packets: usize,
    dim: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl PacketStatistics {
    /// Assembles statistics from raw arrays; `mu` is `P x D`, `sigma` is
    /// `P x D x D` with each block symmetric.
    pub fn from_parts(fingerprint: Fingerprint, count: u64, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let packets = fingerprint.packets();
        let dim = fingerprint.dim();
        if count < 2 {
            return Err(Error::InsufficientSamples { found: count });
        }
        if mu.len() != packets * dim || sigma.len() != packets * dim * dim {
            return Err(Error::ShapeMismatch {
                expected: format!("mu {} / sigma {}", packets * dim, packets * dim * dim),
                found: format!("mu {} / sigma {}", mu.len(), sigma.len()),
            });
        }
        Ok(Self {
            fingerprint,
            count,
            packets,
            dim,
            mu,
            sigma,
        })
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn packets(&self) -> usize {
        self.packets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self, packet: usize) -> &[f64] {
        &self.mu[packet * self.dim..(packet + 1) * self.dim]
    }

    /// Covariance of `packet` as a row-major `D x D` matrix.
    pub fn sigma(&self, packet: usize) -> &[f64] {
        let block = self.dim * self.dim;
        &self.sigma[packet * block..(packet + 1) * block]
    }

    pub fn mu_all(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma_all(&self) -> &[f64] {
        &self.sigma
    }

    pub fn mu_mut(&mut self, packet: usize) -> &mut [f64] {
        &mut self.mu[packet * self.dim..(packet + 1) * self.dim]
    }

    pub fn sigma_mut(&mut self, packet: usize) -> &mut [f64] {
        let block = self.dim * self.dim;
        &mut self.sigma[packet * block..(packet + 1) * block]
    }

    pub fn set_decode(&mut self, decode: impl Into<String>) {
        self.fingerprint.decode = decode.into();
    }
}

/// Accumulates a sequence of batches and finalizes.
pub fn statistics_from_batches<I>(fingerprint: Fingerprint, batches: I) -> Result<PacketStatistics>
where
    I: IntoIterator<Item = Result<PacketTensor>>,
{
    let mut acc = MomentAccumulator::new(fingerprint);
    for batch in batches {
        acc.accumulate(&batch?)?;
    }
    acc.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{build_haar, wpt_forward_batch, ImageTensor};

    fn batch(values: &[Vec<f64>], side: usize) -> PacketTensor {
        let imgs: Vec<_> = values
            .iter()
            .map(|v| ImageTensor::new(v.clone(), side, side, 1).unwrap())
            .collect();
        wpt_forward_batch(&imgs, 1, &build_haar()).unwrap()
    }

    #[test]
    fn single_image_mean_is_exact() {
        let b = batch(&[vec![0.1, 0.2, 0.3, 0.4]], 2);
        let mut acc = MomentAccumulator::new(b.fingerprint());
        acc.accumulate(&b).unwrap();
        assert_eq!(acc.count(), 1);
        assert!(matches!(
            acc.clone().finalize(),
            Err(Error::InsufficientSamples { found: 1 })
        ));
        // Doubling the same image gives zero covariance and the image as mean.
        acc.accumulate(&b).unwrap();
        let stats = acc.finalize().unwrap();
        for p in 0..4 {
            assert_eq!(stats.mu(p), b.packet(0, p));
            assert!(stats.sigma(p).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn two_sample_closed_form() {
        let u = vec![0.9, 0.1, 0.4, 0.7, 0.2, 0.3, 0.8, 0.5, 0.6, 0.0, 1.0, 0.35, 0.45, 0.55, 0.65, 0.75];
        let v: Vec<f64> = u.iter().rev().cloned().collect();
        let b = batch(&[u, v], 4);
        let mut acc = MomentAccumulator::new(b.fingerprint());
        acc.accumulate(&b).unwrap();
        let stats = acc.finalize().unwrap();
        let d = stats.dim();
        for p in 0..stats.packets() {
            let (x, y) = (b.packet(0, p), b.packet(1, p));
            for i in 0..d {
                assert!((stats.mu(p)[i] - (x[i] + y[i]) / 2.0).abs() < 1e-14);
                for j in 0..d {
                    let expect = (x[i] - y[i]) * (x[j] - y[j]) / 2.0;
                    assert!((stats.sigma(p)[i * d + j] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_level() {
        let b = batch(&[vec![0.0; 16]], 4);
        let mut fp = b.fingerprint();
        fp.level = 2;
        let mut acc = MomentAccumulator::new(fp);
        assert!(matches!(acc.accumulate(&b), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn merge_into_empty_takes_other() {
        let b = batch(&[vec![0.1; 4], vec![0.3; 4], vec![0.2, 0.4, 0.6, 0.8]], 2);
        let mut full = MomentAccumulator::new(b.fingerprint());
        full.accumulate(&b).unwrap();
        let mut empty = MomentAccumulator::new(b.fingerprint());
        empty.merge(full.clone()).unwrap();
        let (x, y) = (empty.finalize().unwrap(), full.finalize().unwrap());
        assert_eq!(x, y);
    }

    #[test]
    fn from_parts_validates() {
        let fp = Fingerprint::new(1, "haar", 2, 2, 1);
        assert!(PacketStatistics::from_parts(fp.clone(), 1, vec![0.0; 4], vec![0.0; 4]).is_err());
        assert!(PacketStatistics::from_parts(fp.clone(), 2, vec![0.0; 3], vec![0.0; 4]).is_err());
        assert!(PacketStatistics::from_parts(fp, 2, vec![0.0; 4], vec![0.0; 4]).is_ok());
    }
}
