//! Fréchet wavelet distance (FWD) for comparing image sets.
//!
//! Images are decomposed with a Haar wavelet packet transform, each packet
//! is summarized by the mean and covariance of its coefficients over a
//! dataset, and two datasets are compared by averaging the Fréchet
//! distances between corresponding packet Gaussians.
//!
//! ```no_run
//! use fwd_core::{ingest, frechet, FilterBank};
//!
//! # fn main() -> fwd_core::Result<()> {
//! let bank = FilterBank::haar();
//! let policy = ingest::DecodePolicy::default();
//! let real = ingest::scan("data/real", ingest::DEFAULT_EXTENSIONS, policy)?;
//! let fake = ingest::scan("data/fake", ingest::DEFAULT_EXTENSIONS, policy)?;
//! let level = ingest::default_level(real.height, real.width).unwrap_or(2);
//! let stats_r = ingest::dataset_statistics(&real, level, &bank, 64)?;
//! let stats_g = ingest::dataset_statistics(&fake, level, &bank, 64)?;
//! println!("FWD = {}", frechet::fwd(&stats_r, &stats_g)?.fwd);
//! # Ok(())
//! # }
//! ```

pub mod error;
pub mod fingerprint;
pub mod frechet;
pub mod ingest;
pub mod perturb;
pub mod stats;
pub mod wavelet;

pub use error::{Error, Result};
pub use fingerprint::Fingerprint;
pub use frechet::{fwd, FwdReport, PacketDiffMap, PreparedReference};
pub use stats::{MomentAccumulator, PacketStatistics};
pub use wavelet::{build_haar, FilterBank, ImageTensor, PacketTensor};
