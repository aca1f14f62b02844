use std::io::Cursor;
use std::path::Path;

use ::image::{ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io_err, SynthError};
use crate::physics::NodalMask;

/// Square 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SandImage {
    size: usize,
    pixels: Vec<u8>,
}

impl SandImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, SynthError> {
        if width == 0 || width != height {
            return Err(SynthError::InvalidArgument(format!("images must be square and non-empty, got {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(SynthError::InvalidArgument(format!(
                "{width}x{height} RGB needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self { size: width, pixels })
    }

    pub fn filled(size: usize, rgb: [u8; 3]) -> Self {
        assert!(size > 0);
        Self { size, pixels: rgb.iter().copied().cycle().take(size * size * 3).collect() }
    }

    pub fn width(&self) -> usize {
        self.size
    }

    pub fn height(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.size + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.size + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, SynthError> {
        let img = RgbImage::from_raw(self.size as u32, self.size as u32, self.pixels.clone())
            .expect("pixel buffer length checked on construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, SynthError> {
        let img = ::image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png_bytes()?).map_err(io_err(path))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        Self::from_png_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}

/// Palette used when drawing grains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    pub background: [u8; 3],
    pub grain: [u8; 3],
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self { background: [20, 20, 30], grain: [230, 225, 210] }
    }
}

/// Scatters `particle_count` grains over the true cells of `mask`.
///
/// Each grain picks a true cell uniformly, lands at a uniform point inside it
/// and is drawn as a 1×1 or 2×2 dot whose top-left pixel holds that point.
pub fn render_pattern(
    mask: &NodalMask,
    image_size: usize,
    particle_count: usize,
    seed: u64,
) -> Result<SandImage, SynthError> {
    render_pattern_styled(mask, image_size, particle_count, seed, RenderStyle::default())
}

pub fn render_pattern_styled(
    mask: &NodalMask,
    image_size: usize,
    particle_count: usize,
    seed: u64,
    style: RenderStyle,
) -> Result<SandImage, SynthError> {
    if image_size < 32 {
        return Err(SynthError::InvalidArgument(format!("image_size must be ≥ 32, got {image_size}")));
    }
    if particle_count < 100 {
        return Err(SynthError::InvalidArgument(format!("particle_count must be ≥ 100, got {particle_count}")));
    }
    let res = mask.resolution();
    let cells: Vec<usize> = (0..res * res).filter(|&i| mask.cells()[i]).collect();
    if cells.is_empty() {
        return Err(SynthError::EmptyMask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = SandImage::filled(image_size, style.background);
    let scale = image_size as f64 / res as f64;
    for _ in 0..particle_count {
        let cell = cells[rng.gen_range(0..cells.len())];
        let (row, col) = (cell / res, cell % res);
        let y = (row as f64 + rng.gen::<f64>()) * scale;
        let x = (col as f64 + rng.gen::<f64>()) * scale;
        let dot = if rng.gen_bool(0.5) { 1 } else { 2 };
        let (py, px) = ((y as usize).min(image_size - 1), (x as usize).min(image_size - 1));
        for r in py..(py + dot).min(image_size) {
            for c in px..(px + dot).min(image_size) {
                img.set_pixel(r, c, style.grain);
            }
        }
    }
    Ok(img)
}

