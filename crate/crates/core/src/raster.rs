//! RGBA raster buffer, a handful of fill/stroke primitives and PNG I/O.
//!
//! All primitives sample pixel centers, so output is a pure function of the
//! input coordinates.

use std::fs::File;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_segment_distance, Vec2};

pub type Rgba = [u8; 4];

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encode error: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode error: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGBA, 4 bytes per pixel.
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, fill: Rgba) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 4);
        for _ in 0..n {
            pixels.extend_from_slice(&fill);
        }
        RasterImage { width, height, pixels }
    }

    pub fn get(&self, col: u32, row: u32) -> Rgba {
        let i = (row as usize * self.width as usize + col as usize) * 4;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }

    pub fn set(&mut self, col: u32, row: u32, c: Rgba) {
        let i = (row as usize * self.width as usize + col as usize) * 4;
        self.pixels[i..i + 4].copy_from_slice(&c);
    }
}

/// A drawing surface with an optional mask of pixels later layers must not touch.
pub struct Canvas {
    pub image: RasterImage,
    protected: Vec<bool>,
    protecting: bool,
    recording: bool,
}

impl Canvas {
    pub fn new(width: u32, height: u32, background: Rgba) -> Self {
        Canvas {
            image: RasterImage::new(width, height, background),
            protected: vec![false; width as usize * height as usize],
            protecting: false,
            recording: false,
        }
    }

    /// While recording, every painted pixel becomes protected.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    /// While protecting, protected pixels are skipped.
    pub fn set_protecting(&mut self, on: bool) {
        self.protecting = on;
    }

    pub fn put(&mut self, col: i64, row: i64, c: Rgba) {
        if col < 0 || row < 0 || col >= self.image.width as i64 || row >= self.image.height as i64 {
            return;
        }
        let idx = row as usize * self.image.width as usize + col as usize;
        if self.protecting && self.protected[idx] {
            return;
        }
        if self.recording {
            self.protected[idx] = true;
        }
        self.image.set(col as u32, row as u32, c);
    }

    fn clamp_range(&self, lo: f64, hi: f64, limit: u32) -> (i64, i64) {
        let a = (lo.floor() as i64).max(0);
        let b = (hi.ceil() as i64).min(limit as i64 - 1);
        (a, b)
    }

    /// Even-odd fill of a polygon given in pixel coordinates.
    pub fn fill_polygon(&mut self, poly: &[Vec2], c: Rgba) {
        if poly.len() < 3 {
            return;
        }
        let (min_x, max_x) = poly.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
        let (min_y, max_y) = poly.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
        let (c0, c1) = self.clamp_range(min_x - 1.0, max_x, self.image.width);
        let (r0, r1) = self.clamp_range(min_y - 1.0, max_y, self.image.height);
        for row in r0..=r1 {
            let py = row as f64 + 0.5;
            for col in c0..=c1 {
                let px = col as f64 + 0.5;
                if point_in_polygon(Vec2::new(px, py), poly) {
                    self.put(col, row, c);
                }
            }
        }
    }

    /// Strokes a polyline in pixel coordinates with the given width in pixels.
    pub fn stroke_polyline(&mut self, pts: &[Vec2], width: f64, c: Rgba) {
        let half = (width / 2.0).max(0.71);
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (c0, c1) = self.clamp_range(a.x.min(b.x) - half - 1.0, a.x.max(b.x) + half, self.image.width);
            let (r0, r1) = self.clamp_range(a.y.min(b.y) - half - 1.0, a.y.max(b.y) + half, self.image.height);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let p = Vec2::new(col as f64 + 0.5, row as f64 + 0.5);
                    if point_segment_distance(p, a, b).0 <= half {
                        self.put(col, row, c);
                    }
                }
            }
        }
    }

    /// Draws `text` with the built-in 3x5 font; `(col, row)` is the top-left corner.
    pub fn draw_text(&mut self, text: &str, col: i64, row: i64, scale: i64, c: Rgba) {
        let mut x = col;
        for ch in text.chars() {
            if let Some(rows) = glyph(ch) {
                for (gy, bits) in rows.iter().enumerate() {
                    for gx in 0..3 {
                        if bits & (0b100 >> gx) != 0 {
                            for dy in 0..scale {
                                for dx in 0..scale {
                                    self.put(x + gx * scale + dx, row + gy as i64 * scale + dy, c);
                                }
                            }
                        }
                    }
                }
            }
            x += 4 * scale;
        }
    }
}

pub fn text_width(text: &str, scale: i64) -> i64 {
    let n = text.chars().count() as i64;
    if n == 0 {
        0
    } else {
        n * 4 * scale - scale
    }
}

pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'N' => [0b101, 0b111, 0b111, 0b111, 0b101],
        'E' => [0b111, 0b100, 0b111, 0b100, 0b111],
        _ => return None,
    })
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>, ImageIoError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&img.pixels)?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<RasterImage, ImageIoError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
        return Err(ImageIoError::Unsupported(format!("{:?}/{:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok(RasterImage { width: info.width, height: info.height, pixels: buf })
}

pub fn write_png(img: &RasterImage, path: &Path) -> Result<(), ImageIoError> {
    let bytes = encode_png(img)?;
    let mut f = BufWriter::new(File::create(path)?);
    std::io::Write::write_all(&mut f, &bytes)?;
    std::io::Write::flush(&mut f)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<RasterImage, ImageIoError> {
    decode_png(&std::fs::read(path)?)
}
