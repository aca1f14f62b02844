use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_color_in, augment_filter, augment_sand, AugmentFamily, KernelId, DEFAULT_COLOR_OFFSET};
use super::image::{render_pattern_styled, RenderStyle, SandImage};
use super::{io_err, SynthError};
use crate::physics::{ModeOrder, NodalMask, NodalSettings};
use crate::registry::ModeRegistry;

const SPLIT_SALT: u64 = 0x5851_f42d_4c95_7f2d;

/// Everything `build_dataset` needs. Only the first five keys are required in
/// the JSON form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub base_per_mode: usize,
    pub augment_factor: usize,
    pub image_size: usize,
    pub split_ratio: f64,
    pub seed: u64,
    /// Grains per image; defaults to a quarter of the pixel count.
    #[serde(default)]
    pub particle_count: Option<usize>,
    #[serde(default)]
    pub nodal: NodalSettings,
    #[serde(default = "default_sand_intensity")]
    pub sand_noise_intensity: f64,
    #[serde(default = "default_color_offset")]
    pub color_offset_range: f64,
    #[serde(default)]
    pub style: RenderStyle,
}

fn default_sand_intensity() -> f64 {
    0.5
}

fn default_color_offset() -> f64 {
    DEFAULT_COLOR_OFFSET
}

impl DatasetConfig {
    pub fn new(base_per_mode: usize, augment_factor: usize, image_size: usize, split_ratio: f64, seed: u64) -> Self {
        Self {
            base_per_mode,
            augment_factor,
            image_size,
            split_ratio,
            seed,
            particle_count: None,
            nodal: NodalSettings::default(),
            sand_noise_intensity: default_sand_intensity(),
            color_offset_range: default_color_offset(),
            style: RenderStyle::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn particles(&self) -> usize {
        self.particle_count.unwrap_or((self.image_size * self.image_size / 4).max(100))
    }

    pub fn images_per_mode(&self) -> usize {
        self.base_per_mode * self.augment_factor
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidArgument(m));
        if self.base_per_mode == 0 {
            return bad("base_per_mode must be ≥ 1".into());
        }
        if self.augment_factor == 0 {
            return bad("augment_factor must be ≥ 1".into());
        }
        if self.image_size < 32 {
            return bad(format!("image_size must be ≥ 32, got {}", self.image_size));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio));
        }
        if !(0.0..=1.0).contains(&self.sand_noise_intensity) {
            return bad(format!("sand_noise_intensity must lie in [0, 1], got {}", self.sand_noise_intensity));
        }
        if !(0.0..=0.5).contains(&self.color_offset_range) {
            return bad(format!("color_offset_range must lie in [0, 0.5], got {}", self.color_offset_range));
        }
        if self.particles() < 100 {
            return bad(format!("particle_count must be ≥ 100, got {}", self.particles()));
        }
        self.nodal.decay.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub mode_id: usize,
    pub n: u32,
    pub m: u32,
    pub one_hot: Vec<u8>,
    pub split: Split,
    pub augmented: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.jsonl";

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// `(train, test)` counts per mode id.
    pub fn per_class_counts(&self) -> HashMap<usize, (usize, usize)> {
        let mut counts = HashMap::new();
        for e in &self.entries {
            let slot: &mut (usize, usize) = counts.entry(e.mode_id).or_default();
            match e.split {
                Split::Train => slot.0 += 1,
                Split::Test => slot.1 += 1,
            }
        }
        counts
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut out = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|source| SynthError::Manifest { line: i + 1, source })?);
        }
        Ok(Self { entries })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent sub-seed for entry `index` of a build seeded with `seed`.
pub fn entry_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(1)))
}

/// `(train, test)` sizes for a class of `total` samples.
pub fn split_counts(total: usize, ratio: f64) -> (usize, usize) {
    let train = ((total as f64 * ratio).round() as usize).min(total);
    (train, total - train)
}

/// Renders one base pattern of `order`, at the mask resolution equal to the
/// image size.
pub fn render_mode(
    order: ModeOrder,
    image_size: usize,
    seed: u64,
    settings: &NodalSettings,
) -> Result<SandImage, SynthError> {
    let config = DatasetConfig { nodal: *settings, ..DatasetConfig::new(1, 1, image_size, 0.5, seed) };
    let mask = settings.mask(order, image_size)?;
    render_pattern_styled(&mask, image_size, config.particles(), seed, config.style)
}

fn augmented_image(
    base_mask: &NodalMask,
    base_seed: u64,
    seed: u64,
    config: &DatasetConfig,
) -> Result<SandImage, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = AugmentFamily::ALL[rng.gen_range(0..AugmentFamily::ALL.len())];
    let op_seed: u64 = rng.gen();
    let render = |mask: &NodalMask| render_pattern_styled(mask, config.image_size, config.particles(), base_seed, config.style);
    Ok(match family {
        AugmentFamily::Color => augment_color_in(&render(base_mask)?, config.color_offset_range, op_seed)?,
        AugmentFamily::Sand => render(&augment_sand(base_mask, config.sand_noise_intensity, op_seed)?)?,
        AugmentFamily::Filter => {
            let kernel = KernelId::AUGMENTING[rng.gen_range(0..KernelId::AUGMENTING.len())];
            augment_filter(&render(base_mask)?, kernel)
        }
    })
}

/// Renders every base and augmented image, splits each class at
/// `split_ratio` and writes `train/`, `test/` and `manifest.jsonl` under
/// `out_dir`.
///
/// Mode `i`'s sample `k` is base when `k < base_per_mode`; otherwise it
/// augments base `(k − base_per_mode) mod base_per_mode` with one family
/// chosen uniformly. Every sample draws from its own sub-seed, so the output
/// does not depend on generation order.
pub fn build_dataset(
    registry: &ModeRegistry,
    config: &DatasetConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, SynthError> {
    config.validate()?;
    if registry.len() < 2 {
        return Err(SynthError::InvalidArgument(format!("need at least 2 modes, registry has {}", registry.len())));
    }
    let out_dir = out_dir.as_ref();
    let per_mode = config.images_per_mode();
    let (n_train, _) = split_counts(per_mode, config.split_ratio);
    let classes = registry.len();
    let mut entries = Vec::with_capacity(classes * per_mode);

    for entry in registry.entries() {
        let id = entry.mode_id;
        let mask = config.nodal.mask(entry.order, config.image_size)?;

        let mut order: Vec<usize> = (0..per_mode).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(entry_seed(config.seed ^ SPLIT_SALT, id as u64)));
        let mut split_of = vec![Split::Test; per_mode];
        for &k in &order[..n_train] {
            split_of[k] = Split::Train;
        }
        for split in [Split::Train, Split::Test] {
            let dir = out_dir.join(split.dir_name()).join(format!("mode_{id}"));
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }

        for k in 0..per_mode {
            let global = (id * per_mode + k) as u64;
            let seed = entry_seed(config.seed, global);
            let augmented = k >= config.base_per_mode;
            let img = if augmented {
                let base_k = (k - config.base_per_mode) % config.base_per_mode;
                let base_seed = entry_seed(config.seed, (id * per_mode + base_k) as u64);
                augmented_image(&mask, base_seed, seed, config)?
            } else {
                render_pattern_styled(&mask, config.image_size, config.particles(), seed, config.style)?
            };
            let split = split_of[k];
            let rel = format!("{}/mode_{id}/img_{k}.png", split.dir_name());
            img.save_png(out_dir.join(&rel))?;
            let mut one_hot = vec![0u8; classes];
            one_hot[id] = 1;
            entries.push(ManifestEntry {
                image_path: rel,
                mode_id: id,
                n: entry.order.n(),
                m: entry.order.m(),
                one_hot,
                split,
                augmented,
                seed,
            });
        }
    }

    let manifest = DatasetManifest { entries };
    manifest.write_jsonl(out_dir.join(DatasetManifest::FILE_NAME))?;
    let config_path = out_dir.join("dataset_config.json");
    fs::write(&config_path, serde_json::to_string_pretty(config)?).map_err(io_err(&config_path))?;
    Ok(manifest)
}
