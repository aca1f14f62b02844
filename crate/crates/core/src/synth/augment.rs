use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SandImage, SynthError};
use crate::physics::NodalMask;

/// Default half-width of the per-channel gain interval.
pub const DEFAULT_COLOR_OFFSET: f64 = 0.10;

/// Expected spurious grains per existing true cell at intensity 1.
const SPURIOUS_RATE: f64 = 0.05;

/// Largest Poisson mean sampled in one inverse-transform pass; larger means
/// are split so `e^{-λ}` never underflows.
const POISSON_CHUNK: f64 = 256.0;

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// One of the three augmentation strategies applied to a base image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentFamily {
    Color,
    Sand,
    Filter,
}

impl AugmentFamily {
    pub const ALL: [Self; 3] = [Self::Color, Self::Sand, Self::Filter];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelId {
    EdgeEnhance,
    Blur,
    Emboss,
    Identity,
}

impl KernelId {
    /// Kernels used by the filter augmentation (identity changes nothing).
    pub const AUGMENTING: [Self; 3] = [Self::EdgeEnhance, Self::Blur, Self::Emboss];

    pub fn weights(self) -> [[f64; 3]; 3] {
        match self {
            Self::Identity => [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]],
            Self::Blur => [[1.0 / 9.0; 3]; 3],
            Self::EdgeEnhance => [[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]],
            Self::Emboss => [[-2.0, -1.0, 0.0], [-1.0, 1.0, 1.0], [0.0, 1.0, 2.0]],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::EdgeEnhance => "edge_enhance",
            Self::Blur => "blur",
            Self::Emboss => "emboss",
            Self::Identity => "identity",
        }
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelId {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::EdgeEnhance, Self::Blur, Self::Emboss, Self::Identity]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SynthError::UnknownKernel(s.to_string()))
    }
}

fn round_half_up_clamped(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Multiplies every channel by its own gain, rounding half up and clamping.
pub fn apply_color_gains(img: &SandImage, gains: [f64; 3]) -> SandImage {
    let mut out = img.clone();
    for px in out.pixels_mut().chunks_exact_mut(3) {
        for (v, g) in px.iter_mut().zip(gains) {
            *v = round_half_up_clamped(f64::from(*v) * g);
        }
    }
    out
}

/// Colour jitter with gains uniform in `[0.9, 1.1]`.
pub fn augment_color(img: &SandImage, seed: u64) -> SandImage {
    augment_color_in(img, DEFAULT_COLOR_OFFSET, seed).expect("default offset is valid")
}

/// Colour jitter with gains uniform in `[1 − offset, 1 + offset]`.
pub fn augment_color_in(img: &SandImage, offset: f64, seed: u64) -> Result<SandImage, SynthError> {
    if !(0.0..=0.5).contains(&offset) {
        return Err(SynthError::InvalidArgument(format!("color offset must lie in [0, 0.5], got {offset}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gains = [(); 3].map(|_| 1.0 + offset * (2.0 * rng.gen::<f64>() - 1.0));
    Ok(apply_color_gains(img, gains))
}

/// Poisson draw by inverse transform of the CDF.
pub fn sample_poisson(mean: f64, rng: &mut impl Rng) -> u64 {
    assert!(mean >= 0.0 && mean.is_finite(), "poisson mean must be finite and ≥ 0");
    let mut remaining = mean;
    let mut total = 0;
    while remaining > 0.0 {
        let lambda = remaining.min(POISSON_CHUNK);
        remaining -= lambda;
        let u: f64 = rng.gen();
        let mut k = 0u64;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
            if p == 0.0 {
                break;
            }
        }
        total += k;
    }
    total
}

fn neighbour(res: usize, row: usize, col: usize, (dr, dc): (isize, isize)) -> Option<(usize, usize)> {
    let (r, c) = (row as isize + dr, col as isize + dc);
    (r >= 0 && c >= 0 && r < res as isize && c < res as isize).then_some((r as usize, c as usize))
}

/// Whether the true cells of the ring around `(row, col)`, with `target` set,
/// form a single 8-connected group. When they do, vacating the center cannot
/// split its component.
fn ring_stays_connected(cells: &[bool], res: usize, row: usize, col: usize, target: (usize, usize)) -> bool {
    let ring: Vec<(isize, isize)> = NEIGHBOURS
        .iter()
        .copied()
        .filter(|&d| {
            neighbour(res, row, col, d).is_some_and(|(r, c)| (r, c) == target || cells[r * res + c])
        })
        .collect();
    let mut reached = vec![false; ring.len()];
    let mut stack = vec![0];
    reached[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..ring.len() {
            let adjacent = (ring[i].0 - ring[j].0).abs() <= 1 && (ring[i].1 - ring[j].1).abs() <= 1;
            if !reached[j] && adjacent {
                reached[j] = true;
                stack.push(j);
            }
        }
    }
    reached.into_iter().all(|r| r)
}

/// Sand randomisation: local diffusion of grains plus Poisson-distributed
/// spurious grains next to existing ones.
///
/// Every true cell moves to a random 8-neighbour with probability
/// `intensity / 2`. A move is kept only if the target is empty, outside the
/// clamped disk and leaves the cell's neighbourhood connected. Spurious grains
/// always touch an existing grain, so the component count never increases.
pub fn augment_sand(mask: &NodalMask, intensity: f64, seed: u64) -> Result<NodalMask, SynthError> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(SynthError::InvalidArgument(format!("sand intensity must lie in [0, 1], got {intensity}")));
    }
    let res = mask.resolution();
    let mut out = mask.clone();
    if intensity == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let original: Vec<usize> = (0..res * res).filter(|&i| mask.cells()[i]).collect();

    for &idx in &original {
        let moves = rng.gen_bool(intensity / 2.0);
        let dir = NEIGHBOURS[rng.gen_range(0..8)];
        if !moves {
            continue;
        }
        let (row, col) = (idx / res, idx % res);
        let Some((tr, tc)) = neighbour(res, row, col, dir) else { continue };
        let cells = out.cells();
        if cells[tr * res + tc] || out.in_exclusion(tr, tc) || !ring_stays_connected(cells, res, row, col, (tr, tc)) {
            continue;
        }
        let cells = out.cells_mut();
        cells[idx] = false;
        cells[tr * res + tc] = true;
    }

    let spurious = sample_poisson(intensity * original.len() as f64 * SPURIOUS_RATE, &mut rng);
    let mut occupied: Vec<usize> = (0..res * res).filter(|&i| out.cells()[i]).collect();
    let mut added = 0;
    let mut attempts = 0;
    while added < spurious && attempts < spurious * 20 + 100 && !occupied.is_empty() {
        attempts += 1;
        let anchor = occupied[rng.gen_range(0..occupied.len())];
        let dir = NEIGHBOURS[rng.gen_range(0..8)];
        let Some((r, c)) = neighbour(res, anchor / res, anchor % res, dir) else { continue };
        if out.cells()[r * res + c] || out.in_exclusion(r, c) {
            continue;
        }
        out.cells_mut()[r * res + c] = true;
        occupied.push(r * res + c);
        added += 1;
    }
    Ok(out)
}

/// Per-channel 3×3 cross-correlation with replicate padding, rounded half up
/// and clamped to `[0, 255]`.
pub fn augment_filter(img: &SandImage, kernel: KernelId) -> SandImage {
    if kernel == KernelId::Identity {
        return img.clone();
    }
    let w = kernel.weights();
    let n = img.width();
    let src = img.pixels();
    let mut out = img.clone();
    let clampi = |v: isize| v.clamp(0, n as isize - 1) as usize;
    for row in 0..n {
        for col in 0..n {
            for ch in 0..3 {
                let mut acc = 0.0;
                for (kr, wrow) in w.iter().enumerate() {
                    for (kc, &wv) in wrow.iter().enumerate() {
                        let r = clampi(row as isize + kr as isize - 1);
                        let c = clampi(col as isize + kc as isize - 1);
                        acc += wv * f64::from(src[(r * n + c) * 3 + ch]);
                    }
                }
                out.pixels_mut()[(row * n + col) * 3 + ch] = round_half_up_clamped(acc);
            }
        }
    }
    out
}
