use std::path::Path;

use ::image::imageops::{self, FilterType};
use ::image::RgbImage;
use chladni_neural::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelError, Result};
use crate::synth::{DatasetManifest, SandImage, Split};

/// `[1, 3, S, S]` input with channel values scaled to `[0, 1]`. Images of a
/// different size are resampled bilinearly first.
pub fn image_to_input(img: &SandImage, size: usize) -> Tensor<f32> {
    let mut data = vec![0.0; 3 * size * size];
    write_planes(img, size, &mut data);
    Tensor::new([1, 3, size, size], data).expect("buffer sized for one image")
}

fn write_planes(img: &SandImage, size: usize, out: &mut [f32]) {
    let resized;
    let pixels = if img.width() == size {
        img.pixels()
    } else {
        let src = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
            .expect("square RGB buffer");
        resized = imageops::resize(&src, size as u32, size as u32, FilterType::Triangle).into_raw();
        &resized[..]
    };
    let plane = size * size;
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            out[ch * plane + i] = f32::from(px[ch]) / 255.0;
        }
    }
}

/// Labelled images held in memory as model-ready planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    image_size: usize,
    classes: usize,
    inputs: Vec<f32>,
    labels: Vec<usize>,
}

impl Samples {
    pub fn new(image_size: usize, classes: usize, inputs: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() * 3 * image_size * image_size {
            return Err(ModelError::Config(format!(
                "{} input values do not hold {} images of {image_size}x{image_size}x3",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(ModelError::Label { label, classes });
        }
        Ok(Self { image_size, classes, inputs, labels })
    }

    pub fn from_images(images: &[SandImage], labels: &[usize], image_size: usize, classes: usize) -> Result<Self> {
        let per = 3 * image_size * image_size;
        let mut inputs = vec![0.0; images.len() * per];
        for (img, out) in images.iter().zip(inputs.chunks_exact_mut(per)) {
            write_planes(img, image_size, out);
        }
        Self::new(image_size, classes, inputs, labels.to_vec())
    }

    /// Loads every entry of `split` from a dataset directory.
    pub fn from_manifest(
        dir: impl AsRef<Path>,
        manifest: &DatasetManifest,
        split: Split,
        image_size: usize,
        classes: usize,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for e in manifest.entries.iter().filter(|e| e.split == split) {
            images.push(SandImage::load_png(dir.join(&e.image_path))?);
            labels.push(e.mode_id);
        }
        Self::from_images(&images, &labels, image_size, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn per_image(&self) -> usize {
        3 * self.image_size * self.image_size
    }

    /// Input planes of sample `i`.
    pub fn input(&self, i: usize) -> &[f32] {
        let per = self.per_image();
        &self.inputs[i * per..(i + 1) * per]
    }

    /// `[B, 3, S, S]` batch of the given samples, with their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let per = self.per_image();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.input(i));
        }
        let s = self.image_size;
        let tensor = Tensor::new([indices.len(), 3, s, s], data).expect("batch buffer sized from indices");
        (tensor, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(indices.len() * self.per_image());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self { image_size: self.image_size, classes: self.classes, inputs, labels }
    }

    /// Splits off `fraction` of every class (rounded, at least one sample when
    /// the class has two or more) as a held-out set: `(rest, held_out)`.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> (Self, Self) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut keep, mut held) = (Vec::new(), Vec::new());
        for class in 0..self.classes {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            members.shuffle(&mut rng);
            let mut take = (members.len() as f64 * fraction).round() as usize;
            if take == 0 && fraction > 0.0 && members.len() >= 2 {
                take = 1;
            }
            held.extend_from_slice(&members[..take]);
            keep.extend_from_slice(&members[take..]);
        }
        keep.sort_unstable();
        held.sort_unstable();
        (self.subset(&keep), self.subset(&held))
    }

    /// Copy with samples in a seeded random order.
    pub fn permuted(&self, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.subset(&order)
    }
}
