//! Binary statistics cache.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic            8 bytes  "FWDSTATS"
//! version          u32
//! level            u32
//! wavelet id       u32 length + UTF-8 bytes
//! height           u32
//! width            u32
//! channels         u32
//! layout version   u32
//! normalization id u32 length + UTF-8 bytes
//! decode id        u32 length + UTF-8 bytes
//! count            u64
//! mu               P*D f64, packet order
//! sigma            P*D*D f64, packet order, row-major blocks
//! checksum         u64 XXH64 (seed 0) of every preceding byte
//! ```

use std::fs::File;
use std::hash::Hasher;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use twox_hash::XxHash64;

use super::PacketStatistics;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

pub const STATS_MAGIC: &[u8; 8] = b"FWDSTATS";
pub const STATS_FORMAT_VERSION: u32 = 1;

const MAX_STRING_LEN: u32 = 4096;
const CHUNK_VALUES: usize = 8192;

struct HashingWriter<W> {
    inner: W,
    hasher: XxHash64,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.write(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct HashingReader<R> {
    inner: R,
    hasher: XxHash64,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.write(&buf[..n]);
        Ok(n)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(CHUNK_VALUES * 8);
    for chunk in values.chunks(CHUNK_VALUES) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Serializes `stats` into `writer`.
pub fn write_stats<W: Write>(stats: &PacketStatistics, writer: W) -> io::Result<()> {
    let mut w = HashingWriter {
        inner: writer,
        hasher: XxHash64::with_seed(0),
    };
    let fp = stats.fingerprint();
    w.write_all(STATS_MAGIC)?;
    w.write_all(&STATS_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&fp.level.to_le_bytes())?;
    write_str(&mut w, &fp.wavelet)?;
    w.write_all(&fp.height.to_le_bytes())?;
    w.write_all(&fp.width.to_le_bytes())?;
    w.write_all(&fp.channels.to_le_bytes())?;
    w.write_all(&fp.layout_version.to_le_bytes())?;
    write_str(&mut w, &fp.normalization)?;
    write_str(&mut w, &fp.decode)?;
    w.write_all(&stats.count().to_le_bytes())?;
    write_f64s(&mut w, stats.mu_all())?;
    write_f64s(&mut w, stats.sigma_all())?;
    let checksum = w.hasher.finish();
    w.inner.write_all(&checksum.to_le_bytes())?;
    w.inner.flush()
}

pub fn save_stats(stats: &PacketStatistics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_stats(stats, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Checksum("file is truncated".into())
    } else {
        Error::Format(e.to_string())
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    read_array::<4, _>(r).map(u32::from_le_bytes)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    read_array::<8, _>(r).map(u64::from_le_bytes)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)?;
    if len > MAX_STRING_LEN {
        return Err(Error::Checksum(format!("implausible string length {len}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Checksum("string field is not UTF-8".into()))
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    let mut buf = vec![0u8; CHUNK_VALUES * 8];
    let mut remaining = len;
    while remaining > 0 {
        let take = remaining.min(CHUNK_VALUES);
        let bytes = &mut buf[..take * 8];
        r.read_exact(bytes).map_err(truncated)?;
        out.extend(
            bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))),
        );
        remaining -= take;
    }
    Ok(out)
}

/// Parses and verifies a statistics cache from `reader`.
pub fn read_stats<R: Read>(reader: R) -> Result<PacketStatistics> {
    let mut r = HashingReader {
        inner: reader,
        hasher: XxHash64::with_seed(0),
    };
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != STATS_MAGIC {
        return Err(Error::Format("not a statistics cache (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != STATS_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: version,
            expected: STATS_FORMAT_VERSION,
        });
    }
    let level = read_u32(&mut r)?;
    let wavelet = read_str(&mut r)?;
    let height = read_u32(&mut r)?;
    let width = read_u32(&mut r)?;
    let channels = read_u32(&mut r)?;
    let layout_version = read_u32(&mut r)?;
    let normalization = read_str(&mut r)?;
    let decode = read_str(&mut r)?;
    let count = read_u64(&mut r)?;

    let side = 1u64.checked_shl(level).filter(|_| (1..=15).contains(&level));
    let geometry_ok = side.is_some_and(|s| {
        s <= u64::from(height.min(width)) && u64::from(height) % s == 0 && u64::from(width) % s == 0
    }) && (channels == 1 || channels == 3);
    if !geometry_ok {
        return Err(Error::Checksum(format!(
            "implausible geometry: level {level}, {height}x{width}x{channels}"
        )));
    }
    let fingerprint = Fingerprint {
        level,
        wavelet,
        height,
        width,
        channels,
        layout_version,
        normalization,
        decode,
    };
    let packets = fingerprint.packets();
    let dim = fingerprint.dim();
    let mu = read_f64s(&mut r, packets * dim)?;
    let sigma = read_f64s(&mut r, packets * dim * dim)?;

    let computed = r.hasher.finish();
    let stored = read_u64(&mut r.inner)?;
    if computed != stored {
        return Err(Error::Checksum(format!(
            "payload checksum {computed:016x} does not match stored {stored:016x}"
        )));
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Checksum("trailing bytes after checksum".into()));
    }
    PacketStatistics::from_parts(fingerprint, count, mu, sigma)
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<PacketStatistics> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_stats(BufReader::with_capacity(1 << 20, file))
}
