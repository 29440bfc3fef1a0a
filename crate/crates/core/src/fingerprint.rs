//! Configuration fingerprint shared by packet tensors, statistics and reports.
//!
//! Two statistics objects are comparable only when their level, wavelet,
//! image dimensions, layout version and normalization agree. The decode
//! descriptor (codec version, color and resize policy) is recorded for
//! auditing but does not gate comparisons.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version of the packet ordering and flattening convention.
pub const LAYOUT_VERSION: u32 = 1;

/// Pixels decoded as 8-bit values and divided by 255.
pub const NORMALIZATION_ID: &str = "u8-div255";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub level: u32,
    pub wavelet: String,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub layout_version: u32,
    pub normalization: String,
    pub decode: String,
}

impl Fingerprint {
    pub fn new(level: u32, wavelet: &str, height: usize, width: usize, channels: usize) -> Self {
        Self {
            level,
            wavelet: wavelet.to_owned(),
            height: height as u32,
            width: width as u32,
            channels: channels as u32,
            layout_version: LAYOUT_VERSION,
            normalization: NORMALIZATION_ID.to_owned(),
            decode: String::new(),
        }
    }

    pub fn with_decode(mut self, decode: impl Into<String>) -> Self {
        self.decode = decode.into();
        self
    }

    /// Number of packets, `4^level`.
    pub fn packets(&self) -> usize {
        1usize << (2 * self.level)
    }

    /// Flattened coefficient count per packet.
    pub fn dim(&self) -> usize {
        let side = 1usize << self.level;
        (self.height as usize / side) * (self.width as usize / side) * self.channels as usize
    }

    pub fn is_compatible(&self, other: &Fingerprint) -> bool {
        self.level == other.level
            && self.wavelet == other.wavelet
            && self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
            && self.layout_version == other.layout_version
            && self.normalization == other.normalization
    }

    pub fn ensure_compatible(&self, other: &Fingerprint) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::FingerprintMismatch {
                expected: Box::new(self.clone()),
                found: Box::new(other.clone()),
            })
        }
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "level={} wavelet={} dims={}x{}x{} layout=v{} norm={}",
            self.level,
            self.wavelet,
            self.height,
            self.width,
            self.channels,
            self.layout_version,
            self.normalization
        )?;
        if !self.decode.is_empty() {
            write!(f, " decode={}", self.decode)?;
        }
        Ok(())
    }
}
