//! Raster file I/O.
//!
//! * **PFM** — 32-bit float maps (`Pf` grayscale / `PF` color). The sign of
//!   the scale field selects the payload byte order (negative = little
//!   endian) and scanlines are stored bottom-to-top, so files interchange
//!   with the usual stereo tooling. Valid samples round-trip bit-exactly.
//! * **PGM/PPM** — binary `P5`/`P6` with 8-bit or big-endian 16-bit samples,
//!   normalized by 255 / 65535 on load.
//! * **PNG** — 8/16-bit gray or RGB, via the `png` codec.
//!
//! Malformed files produce [`Error::Format`] carrying the byte offset at
//! which parsing stopped.

use std::fs;
use std::path::Path;

use crate::raster::{DisparityMap, ImageF, Raster};
use crate::{Error, Result};

/// Byte-cursor over a loaded file; tracks the offset for error reports.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor { bytes, pos: 0, path }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, self.pos, reason)
    }

    /// Skips whitespace and `#` comment lines (PNM-style).
    fn skip_space(&mut self, comments: bool) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if comments && b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    /// Reads one whitespace-delimited token.
    fn token(&mut self, comments: bool) -> Result<&'a str> {
        self.skip_space(comments);
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(self.path, start, "unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(self.path, start, "header token is not ASCII"))
    }

    fn parse_usize(&mut self, what: &str, comments: bool) -> Result<usize> {
        let at = {
            self.skip_space(comments);
            self.pos
        };
        let tok = self.token(comments)?;
        tok.parse::<usize>()
            .map_err(|_| Error::format(self.path, at, format!("cannot parse {what} from {tok:?}")))
    }

    /// Consumes exactly one whitespace byte separating header and payload.
    fn single_space(&mut self) -> Result<()> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err("expected a single whitespace before the payload"))
        }
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::format(
                self.path,
                self.bytes.len(),
                format!(
                    "truncated payload: need {len} bytes, file holds {}",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_pfm(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut cur = Cursor::new(bytes, path);
    let magic = cur.token(false)?;
    let channels = match magic {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(Error::format(path, 0, format!("not a PFM file (magic {other:?})")));
        }
    };
    let width = cur.parse_usize("width", false)?;
    let height = cur.parse_usize("height", false)?;
    if width == 0 || height == 0 {
        return Err(cur.err(format!("degenerate extent {width}x{height}")));
    }
    let scale_at = {
        cur.skip_space(false);
        cur.pos
    };
    let scale: f64 = cur
        .token(false)?
        .parse()
        .map_err(|_| Error::format(path, scale_at, "cannot parse scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, scale_at, "scale must be finite and non-zero"));
    }
    cur.single_space()?;
    let little_endian = scale < 0.0;
    let n = width * height * channels;
    let payload = cur.payload(n * 4)?;
    let mut data = vec![0.0f64; n];
    // Scanlines are stored bottom-to-top; flip into top-down row order.
    for row in 0..height {
        let src_row = height - 1 - row;
        for i in 0..width * channels {
            let o = (src_row * width * channels + i) * 4;
            let raw: [u8; 4] = payload[o..o + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            data[row * width * channels + i] = v as f64;
        }
    }
    Ok((height, width, channels, data))
}

/// Reads a grayscale PFM as a disparity map. Non-finite or negative samples
/// are flagged invalid (the usual encoding of unknown pixels).
pub fn read_pfm(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (h, w, channels, data) = parse_pfm(&bytes, path)?;
    if channels != 1 {
        return Err(Error::format(path, 0, "color PFM cannot carry a disparity map"));
    }
    DisparityMap::from_data(h, w, data)
}

fn pfm_bytes(height: usize, width: usize, rows: impl Fn(usize, usize) -> f32) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + height * width * 4);
    out.extend_from_slice(format!("Pf\n{width} {height}\n-1.0\n").as_bytes());
    for row in (0..height).rev() {
        for x in 0..width {
            out.extend_from_slice(&rows(row, x).to_le_bytes());
        }
    }
    out
}

/// Writes a disparity map as little-endian grayscale PFM. Invalid pixels are
/// stored as `+inf` so the mask survives a round trip.
pub fn write_pfm(path: impl AsRef<Path>, map: &DisparityMap) -> Result<()> {
    let path = path.as_ref();
    let bytes = pfm_bytes(map.height(), map.width(), |y, x| {
        if map.is_valid(y, x) {
            map.at(y, x) as f32
        } else {
            f32::INFINITY
        }
    });
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a bare raster as PFM without any mask handling; used for pyramid
/// band dumps, whose samples are legitimately negative.
pub fn write_pfm_raster(path: impl AsRef<Path>, r: &Raster) -> Result<()> {
    let path = path.as_ref();
    let bytes = pfm_bytes(r.height(), r.width(), |y, x| r.at(y, x) as f32);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_pnm(bytes: &[u8], path: &Path) -> Result<ImageF> {
    let mut cur = Cursor::new(bytes, path);
    let magic = cur.token(true)?;
    let channels = match magic {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::format(path, 0, format!("not a binary PGM/PPM (magic {other:?})")));
        }
    };
    let width = cur.parse_usize("width", true)?;
    let height = cur.parse_usize("height", true)?;
    let maxval_at = {
        cur.skip_space(true);
        cur.pos
    };
    let maxval = cur.parse_usize("maxval", true)?;
    if width == 0 || height == 0 {
        return Err(cur.err(format!("degenerate extent {width}x{height}")));
    }
    cur.single_space()?;
    let n = width * height * channels;
    let data: Vec<f64> = if maxval > 0 && maxval < 256 {
        cur.payload(n)?.iter().map(|&b| b as f64 / 255.0).collect()
    } else if maxval < 65536 {
        let payload = cur.payload(n * 2)?;
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect()
    } else {
        return Err(Error::format(
            path,
            maxval_at,
            format!("unsupported bit depth (maxval {maxval})"),
        ));
    };
    ImageF::new(height, width, channels, data)
}

fn load_png(path: &Path) -> Result<ImageF> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, 0, other.to_string()),
    })?;
    use image::DynamicImage::*;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match img {
        ImageLuma8(buf) => (1, buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        ImageLuma16(buf) => (1, buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        ImageRgb8(buf) => (3, buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        ImageRgb16(buf) => (3, buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        // Alpha variants: drop the alpha plane.
        other => {
            let buf = other.into_rgb8();
            (3, buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect())
        }
    };
    ImageF::new(h, w, channels, data)
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Loads an intensity image, dispatching on the file extension
/// (`.png`, `.pgm`, `.ppm`, `.pfm`). Integer formats land in `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageF> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "png" => load_png(path),
        "pgm" | "ppm" => {
            let bytes = read_file(path)?;
            parse_pnm(&bytes, path)
        }
        "pfm" => {
            let bytes = read_file(path)?;
            let (h, w, c, data) = parse_pfm(&bytes, path)?;
            ImageF::new(h, w, c, data)
        }
        other => Err(Error::InvalidParameter(format!(
            "unsupported image extension {other:?} for {}",
            path.display()
        ))),
    }
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an intensity image as 8-bit PNG, PGM (1 channel) or PPM
/// (3 channels). Samples are clamped to `[0, 1]` and quantized.
pub fn write_image(path: impl AsRef<Path>, img: &ImageF) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.extent();
    let bytes8: Vec<u8> = img.data().iter().map(|&v| quantize8(v)).collect();
    match (extension(path).as_str(), img.channels()) {
        ("png", 1) => {
            let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes8).unwrap();
            buf.save(path)
                .map_err(|e| Error::format(path, 0, e.to_string()))
        }
        ("png", 3) => {
            let buf = image::RgbImage::from_raw(w as u32, h as u32, bytes8).unwrap();
            buf.save(path)
                .map_err(|e| Error::format(path, 0, e.to_string()))
        }
        ("pgm", 1) | ("ppm", 3) => {
            let magic = if img.channels() == 1 { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&bytes8);
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        (ext, c) => Err(Error::InvalidParameter(format!(
            "cannot write a {c}-channel image as {ext:?} ({})",
            path.display()
        ))),
    }
}
