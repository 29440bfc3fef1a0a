//! Haar filter banks and the 2D wavelet packet transform.
//!
//! Every node of the packet tree is filtered by all four 2D filters with
//! stride two, so a level-`l` transform yields `4^l` packets of
//! `(H / 2^l) x (W / 2^l) x C` coefficients each. Packets are ordered by
//! their filter code in `a < h < v < d` order with the leftmost character
//! naming the first level applied, and each packet is flattened row-major
//! over `(row, column, channel)`.
//!
//! The analysis step correlates each non-overlapping 2x2 block with the
//! filter quadruple: for a block `x` the coefficient of filter `k` is
//! `sum_ij quad[k][i][j] * x[i][j]`, where `i` indexes rows. Synthesis is
//! the transpose of that map.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

/// One of the four 2D filters of a quadruple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Filter {
    /// Approximation: low-pass along rows and columns.
    A,
    /// Horizontal: low-pass over rows, high-pass over columns.
    H,
    /// Vertical: high-pass over rows, low-pass over columns.
    V,
    /// Diagonal: high-pass along both axes.
    D,
}

impl Filter {
    pub const ALL: [Filter; 4] = [Filter::A, Filter::H, Filter::V, Filter::D];

    pub fn code(self) -> char {
        match self {
            Filter::A => 'a',
            Filter::H => 'h',
            Filter::V => 'v',
            Filter::D => 'd',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'a' => Some(Filter::A),
            'h' => Some(Filter::H),
            'v' => Some(Filter::V),
            'd' => Some(Filter::D),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

pub type Quad = [[f64; 2]; 2];

/// Analysis and synthesis filters of a two-tap orthonormal wavelet.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    id: String,
    pub dec_lo: [f64; 2],
    pub dec_hi: [f64; 2],
    pub rec_lo: [f64; 2],
    pub rec_hi: [f64; 2],
    quad: [Quad; 4],
    synth: [Quad; 4],
}

const ORTHONORMAL_TOL: f64 = 1e-12;

fn outer(rows: [f64; 2], cols: [f64; 2]) -> Quad {
    [
        [rows[0] * cols[0], rows[0] * cols[1]],
        [rows[1] * cols[0], rows[1] * cols[1]],
    ]
}

fn quadruple(lo: [f64; 2], hi: [f64; 2]) -> [Quad; 4] {
    [outer(lo, lo), outer(lo, hi), outer(hi, lo), outer(hi, hi)]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl FilterBank {
    /// Builds a bank from analysis filters. Under the correlation convention
    /// used here the synthesis filters of an orthonormal pair are the
    /// analysis filters themselves.
    pub fn new(id: impl Into<String>, dec_lo: [f64; 2], dec_hi: [f64; 2]) -> Result<Self> {
        let checks = [
            (dot(dec_lo, dec_lo) - 1.0).abs(),
            (dot(dec_hi, dec_hi) - 1.0).abs(),
            dot(dec_lo, dec_hi).abs(),
        ];
        if checks.iter().any(|c| c.is_nan() || *c > ORTHONORMAL_TOL) {
            return Err(Error::Parameter(format!(
                "filter pair {dec_lo:?} / {dec_hi:?} is not orthonormal"
            )));
        }
        let (rec_lo, rec_hi) = (dec_lo, dec_hi);
        Ok(Self {
            id: id.into(),
            dec_lo,
            dec_hi,
            rec_lo,
            rec_hi,
            quad: quadruple(dec_lo, dec_hi),
            synth: quadruple(rec_lo, rec_hi),
        })
    }

    /// Orthonormal Haar bank with `dec_hi = [1/sqrt2, -1/sqrt2]`.
    pub fn haar() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self::new("haar", [s, s], [s, -s]).expect("haar filters are orthonormal")
    }

    /// Same bank with the high-pass filters negated.
    pub fn with_negated_high_pass(&self) -> Self {
        let hi = [-self.dec_hi[0], -self.dec_hi[1]];
        Self::new(format!("{}-neghi", self.id), self.dec_lo, hi)
            .expect("negation preserves orthonormality")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Analysis filter for `filter`, indexed `[row][column]`.
    pub fn quad(&self, filter: Filter) -> &Quad {
        &self.quad[filter.index()]
    }

    pub fn synthesis_quad(&self, filter: Filter) -> &Quad {
        &self.synth[filter.index()]
    }
}

/// Returns the Haar bank.
pub fn build_haar() -> FilterBank {
    FilterBank::haar()
}

/// One image as `H x W x C` values, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f64>,
    height: usize,
    width: usize,
    channels: usize,
}

impl ImageTensor {
    pub fn new(data: Vec<f64>, height: usize, width: usize, channels: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Parameter(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::EmptyInput("image with zero extent"));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}x{channels} values"),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            data,
            height,
            width,
            channels,
        })
    }

    /// Normalizes 8-bit samples into `[0, 1]`.
    pub fn from_u8(pixels: &[u8], height: usize, width: usize, channels: usize) -> Result<Self> {
        let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Self::new(data, height, width, channels)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(vec![0.0; height * width * channels], height, width, channels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Wavelet packet coefficients of a batch: `count x packets x dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketTensor {
    coeffs: Vec<f64>,
    count: usize,
    level: u32,
    wavelet: String,
    height: usize,
    width: usize,
    channels: usize,
    layout: Vec<String>,
}

impl PacketTensor {
    /// Wraps raw coefficients produced by a level-`level` transform of
    /// `height x width x channels` images.
    pub fn from_parts(
        coeffs: Vec<f64>,
        level: u32,
        wavelet: &str,
        (height, width, channels): (usize, usize, usize),
    ) -> Result<Self> {
        check_level(level, height, width)?;
        let image_len = height * width * channels;
        if image_len == 0 || !coeffs.len().is_multiple_of(image_len) {
            return Err(Error::Layout(format!(
                "{} coefficients do not tile images of {height}x{width}x{channels}",
                coeffs.len()
            )));
        }
        Ok(Self {
            count: coeffs.len() / image_len,
            coeffs,
            level,
            wavelet: wavelet.to_owned(),
            height,
            width,
            channels,
            layout: packet_layout(level)?,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn wavelet(&self) -> &str {
        &self.wavelet
    }

    pub fn packets(&self) -> usize {
        self.layout.len()
    }

    /// Flattened length of one packet.
    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels / self.packets()
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn layout(&self) -> &[String] {
        &self.layout
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// All packets of image `n`, packet-major.
    pub fn image(&self, n: usize) -> &[f64] {
        let stride = self.packets() * self.dim();
        &self.coeffs[n * stride..(n + 1) * stride]
    }

    pub fn packet(&self, n: usize, p: usize) -> &[f64] {
        let d = self.dim();
        let start = (n * self.packets() + p) * d;
        &self.coeffs[start..start + d]
    }

    /// Fingerprint without a decode descriptor.
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::new(
            self.level,
            &self.wavelet,
            self.height,
            self.width,
            self.channels,
        )
    }
}

pub(crate) fn check_level(level: u32, height: usize, width: usize) -> Result<()> {
    if level < 1 {
        return Err(Error::Level {
            level,
            reason: "level must be at least 1".into(),
        });
    }
    if level >= usize::BITS || (1usize << level) > height.min(width) {
        return Err(Error::Level {
            level,
            reason: format!("2^{level} exceeds the smaller image side of {height}x{width}"),
        });
    }
    let side = 1usize << level;
    if !height.is_multiple_of(side) || !width.is_multiple_of(side) {
        return Err(Error::Dimension {
            height,
            width,
            level,
        });
    }
    Ok(())
}

/// Filter codes of a level-`level` packet tree in transform order.
pub fn packet_layout(level: u32) -> Result<Vec<String>> {
    if level < 1 {
        return Err(Error::Level {
            level,
            reason: "level must be at least 1".into(),
        });
    }
    if level > 15 {
        return Err(Error::Level {
            level,
            reason: "packet trees deeper than 15 levels are not supported".into(),
        });
    }
    let mut codes = vec![String::new()];
    for _ in 0..level {
        codes = codes
            .iter()
            .flat_map(|prefix| {
                Filter::ALL.iter().map(move |f| {
                    let mut code = prefix.clone();
                    code.push(f.code());
                    code
                })
            })
            .collect();
    }
    Ok(codes)
}

/// Filters one node of `height x width x channels` values into four
/// quarter-size children written back to back into `dst`.
fn analyze_node(src: &[f64], dst: &mut [f64], height: usize, width: usize, channels: usize, bank: &FilterBank) {
    let (half_h, half_w) = (height / 2, width / 2);
    let quarter = half_h * half_w * channels;
    let row = width * channels;
    let q = &bank.quad;
    let (a, rest) = dst.split_at_mut(quarter);
    let (h, rest) = rest.split_at_mut(quarter);
    let (v, d) = rest.split_at_mut(quarter);
    for i in 0..half_h {
        let top = &src[2 * i * row..(2 * i + 1) * row];
        let bottom = &src[(2 * i + 1) * row..(2 * i + 2) * row];
        for j in 0..half_w {
            for c in 0..channels {
                let x00 = top[2 * j * channels + c];
                let x01 = top[(2 * j + 1) * channels + c];
                let x10 = bottom[2 * j * channels + c];
                let x11 = bottom[(2 * j + 1) * channels + c];
                let out = (i * half_w + j) * channels + c;
                a[out] = q[0][0][0] * x00 + q[0][0][1] * x01 + q[0][1][0] * x10 + q[0][1][1] * x11;
                h[out] = q[1][0][0] * x00 + q[1][0][1] * x01 + q[1][1][0] * x10 + q[1][1][1] * x11;
                v[out] = q[2][0][0] * x00 + q[2][0][1] * x01 + q[2][1][0] * x10 + q[2][1][1] * x11;
                d[out] = q[3][0][0] * x00 + q[3][0][1] * x01 + q[3][1][0] * x10 + q[3][1][1] * x11;
            }
        }
    }
}

/// Inverse of [`analyze_node`].
fn synthesize_node(src: &[f64], dst: &mut [f64], height: usize, width: usize, channels: usize, bank: &FilterBank) {
    let half_w = width / 2;
    let quarter = height / 2 * half_w * channels;
    let row = width * channels;
    let s = &bank.synth;
    let (a, rest) = src.split_at(quarter);
    let (h, rest) = rest.split_at(quarter);
    let (v, d) = rest.split_at(quarter);
    for (i, pair) in dst.chunks_exact_mut(2 * row).enumerate() {
        let (top, bottom) = pair.split_at_mut(row);
        for j in 0..half_w {
            for c in 0..channels {
                let k = (i * half_w + j) * channels + c;
                let (ca, ch, cv, cd) = (a[k], h[k], v[k], d[k]);
                let texel = |r: usize, col: usize| {
                    s[0][r][col] * ca + s[1][r][col] * ch + s[2][r][col] * cv + s[3][r][col] * cd
                };
                top[2 * j * channels + c] = texel(0, 0);
                top[(2 * j + 1) * channels + c] = texel(0, 1);
                bottom[2 * j * channels + c] = texel(1, 0);
                bottom[(2 * j + 1) * channels + c] = texel(1, 1);
            }
        }
    }
}

/// Transforms one image into `out` (length `H*W*C`), packet-major.
fn forward_into(img: &ImageTensor, level: u32, bank: &FilterBank, out: &mut [f64]) {
    let (mut h, mut w, c) = img.dims();
    let total = out.len();
    let mut scratch = vec![0.0; total];
    // Each node's children occupy the same span as the node itself, so the
    // tree can be expanded level by level between two buffers.
    let (mut src, mut dst): (&mut [f64], &mut [f64]) = if level % 2 == 1 {
        scratch.copy_from_slice(img.data());
        (&mut scratch[..], out)
    } else {
        out.copy_from_slice(img.data());
        (out, &mut scratch[..])
    };
    for _ in 0..level {
        let node = h * w * c;
        for (s, d) in src.chunks_exact(node).zip(dst.chunks_exact_mut(node)) {
            analyze_node(s, d, h, w, c, bank);
        }
        h /= 2;
        w /= 2;
        std::mem::swap(&mut src, &mut dst);
    }
}

fn inverse_into(coeffs: &[f64], level: u32, dims: (usize, usize, usize), bank: &FilterBank, out: &mut [f64]) {
    let (height, width, c) = dims;
    let mut scratch = vec![0.0; out.len()];
    let (mut src, mut dst): (&mut [f64], &mut [f64]) = if level % 2 == 1 {
        scratch.copy_from_slice(coeffs);
        (&mut scratch[..], out)
    } else {
        out.copy_from_slice(coeffs);
        (out, &mut scratch[..])
    };
    for step in (0..level).rev() {
        let (h, w) = (height >> step, width >> step);
        let node = h * w * c;
        for (s, d) in src.chunks_exact(node).zip(dst.chunks_exact_mut(node)) {
            synthesize_node(s, d, h, w, c, bank);
        }
        std::mem::swap(&mut src, &mut dst);
    }
}

/// Level-`level` packet transform of a single image.
pub fn wpt_forward(img: &ImageTensor, level: u32, bank: &FilterBank) -> Result<PacketTensor> {
    wpt_forward_batch(std::slice::from_ref(img), level, bank)
}

/// Transforms a batch of equally sized images; row `n` of the result is the
/// transform of `imgs[n]` regardless of how the work is scheduled.
pub fn wpt_forward_batch(imgs: &[ImageTensor], level: u32, bank: &FilterBank) -> Result<PacketTensor> {
    let first = imgs.first().ok_or(Error::EmptyInput("image batch"))?;
    let dims = first.dims();
    if let Some(other) = imgs.iter().find(|img| img.dims() != dims) {
        let (h, w, c) = other.dims();
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}x{}", dims.0, dims.1, dims.2),
            found: format!("{h}x{w}x{c}"),
        });
    }
    check_level(level, dims.0, dims.1)?;
    let image_len = dims.0 * dims.1 * dims.2;
    let mut coeffs = vec![0.0; image_len * imgs.len()];
    coeffs
        .par_chunks_mut(image_len)
        .zip(imgs.par_iter())
        .for_each(|(out, img)| forward_into(img, level, bank, out));
    PacketTensor::from_parts(coeffs, level, bank.id(), dims)
}

/// Reconstructs the images of a packet tensor.
pub fn wpt_inverse(packets: &PacketTensor, bank: &FilterBank) -> Result<Vec<ImageTensor>> {
    let (h, w, c) = packets.image_dims();
    let expected = packet_layout(packets.level())?;
    if packets.layout() != expected.as_slice() {
        return Err(Error::Layout(format!(
            "{} packets do not match a level-{} tree",
            packets.packets(),
            packets.level()
        )));
    }
    let image_len = h * w * c;
    let mut data = vec![0.0; image_len * packets.count()];
    data.par_chunks_mut(image_len)
        .zip(packets.coeffs().par_chunks(image_len))
        .for_each(|(out, src)| inverse_into(src, packets.level(), (h, w, c), bank, out));
    data.chunks(image_len)
        .map(|chunk| ImageTensor::new(chunk.to_vec(), h, w, c))
        .collect()
}
