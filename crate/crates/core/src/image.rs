//! Floating-point raster in the [0, 255] intensity domain, plus file I/O.
//!
//! Pixels are stored row-major with interleaved channels. Values are not
//! clamped: noisy observations routinely leave [0, 255] and clamping would
//! bias every downstream noise statistic. Clamping happens only on 8-bit
//! PNG export.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Magic bytes opening a raw float image file.
pub const RAWF32_MAGIC: &[u8; 4] = b"MSHF";

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

/// On-disk encodings understood by [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png8,
    RawF32,
}

impl ImageFormat {
    /// Picks a format from a file extension (`.png` or `.mshf`/`.raw`/`.f32`).
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(ImageFormat::Png8),
            "mshf" | "raw" | "f32" | "rawf32" => Some(ImageFormat::RawF32),
            _ => None,
        }
    }
}

impl Image {
    /// Builds an image, validating `data.len() == height * width * channels`.
    ///
    /// Only the non-zero size and channel count are checked here; the
    /// network's minimum spatial size is enforced where the network is used.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros_like(other: &Image) -> Image {
        Image {
            height: other.height,
            width: other.width,
            channels: other.channels,
            data: vec![0.0; other.data.len()],
        }
    }

    /// Builds an image from a per-pixel function `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Image::new(height, width, channels, data)
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

    /// `(height, width, channels)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Image) -> Result<Image> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Image, f: impl Fn(f32, f32) -> f32) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Extracts the `height x width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for r in row..row + height {
            let start = self.index(r, col, 0);
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Image::new(height, width, c, data)
    }

    /// Pads with mirror reflection (edge pixel not repeated) on the bottom and
    /// right so that both spatial dimensions become multiples of `multiple`.
    pub fn reflect_pad_to_multiple(&self, multiple: usize) -> Result<Image> {
        let target_h = self.height.div_ceil(multiple) * multiple;
        let target_w = self.width.div_ceil(multiple) * multiple;
        if target_h == self.height && target_w == self.width {
            return Ok(self.clone());
        }
        let pad_h = target_h - self.height;
        let pad_w = target_w - self.width;
        if (pad_h > 0 && pad_h >= self.height) || (pad_w > 0 && pad_w >= self.width) {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} too small to reflect-pad to {target_h}x{target_w}",
                self.height, self.width
            )));
        }
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
        Image::from_fn(target_h, target_w, self.channels, |r, c, ch| {
            self.get(reflect(r, self.height), reflect(c, self.width), ch)
        })
    }

    /// Channel-planar (`C x H x W`) copy of the pixel data.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * plane + p] = v;
            }
        }
        out
    }

    /// Inverse of [`Image::to_planar`].
    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f32]) -> Result<Image> {
        let plane = height * width;
        if planar.len() != plane * channels {
            return Err(Error::ShapeMismatch(format!(
                "planar buffer of {} values for {height}x{width}x{channels}",
                planar.len()
            )));
        }
        let mut data = vec![0.0; planar.len()];
        for ch in 0..channels {
            for p in 0..plane {
                data[p * channels + ch] = planar[ch * plane + p];
            }
        }
        Image::new(height, width, channels, data)
    }
}

/// Box-filter downscale: each output pixel is the mean of a
/// `factor x factor` block, per channel.
pub fn downscale(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downscale factor must be positive".into()));
    }
    if !img.height.is_multiple_of(factor) || !img.width.is_multiple_of(factor) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is not divisible by {factor}",
            img.height, img.width
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let norm = 1.0 / (factor * factor) as f64;
    Image::from_fn(img.height / factor, img.width / factor, img.channels, |r, c, ch| {
        let mut acc = 0.0f64;
        for dr in 0..factor {
            for dc in 0..factor {
                acc += img.get(r * factor + dr, c * factor + dc, ch) as f64;
            }
        }
        (acc * norm) as f32
    })
}

/// Reads an 8-bit PNG or a raw float image, chosen by the file's magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(RAWF32_MAGIC) {
        decode_rawf32(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else if bytes.len() < 4 && (RAWF32_MAGIC.starts_with(&bytes) || bytes.is_empty()) {
        Err(Error::CorruptHeader(format!(
            "{}: file too short ({} bytes)",
            path.display(),
            bytes.len()
        )))
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: neither PNG nor MSHF raw float",
            path.display()
        )))
    }
}

/// Writes `img` in the requested format. PNG export clamps to [0, 255] and
/// rounds half away from zero; raw float export is lossless.
pub fn save_image(img: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ImageFormat::RawF32 => encode_rawf32(img),
        ImageFormat::Png8 => encode_png(img)?,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn encode_rawf32(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.len() * 4);
    out.extend_from_slice(RAWF32_MAGIC);
    for dim in [img.height, img.width, img.channels] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_rawf32(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 16 || &bytes[..4] != RAWF32_MAGIC {
        return Err(Error::CorruptHeader("raw float header shorter than 16 bytes".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::EmptyImage);
    }
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::CorruptHeader(format!("dimensions {h}x{w}x{c} overflow")))?;
    let body = &bytes[16..];
    if body.len() != n * 4 {
        return Err(Error::CorruptHeader(format!(
            "header promises {n} floats, body holds {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Image::new(h, w, c, data)
}

/// Clamp to [0, 255] and round half away from zero.
pub fn quantize_u8(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.clamp(0.0, 255.0).round() as u8
}

fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(if img.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
        let bytes: Vec<u8> = img.data.iter().map(|&v| quantize_u8(v)).collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut dec = png::Decoder::new(BufReader::new(std::io::Cursor::new(bytes)));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| Error::CorruptHeader(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::CorruptHeader("png output size overflows".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::CorruptHeader(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "only 8-bit PNG is supported, got {:?}",
            info.bit_depth
        )));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    if h == 0 || w == 0 {
        return Err(Error::EmptyImage);
    }
    let (src_c, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => {
            return Err(Error::UnsupportedFormat(format!("png color type {other:?}")));
        }
    };
    let buf = &buf[..info.buffer_size()];
    let mut data = Vec::with_capacity(h * w * keep);
    for row in buf.chunks_exact(info.line_size) {
        for px in row[..w * src_c].chunks_exact(src_c) {
            data.extend(px[..keep].iter().map(|&b| b as f32));
        }
    }
    Image::new(h, w, keep, data)
}
