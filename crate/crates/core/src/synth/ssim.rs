use super::{SandImage, SynthError};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;
/// `(0.01 · 255)²`
pub const SSIM_C1: f64 = 6.5025;
/// `(0.03 · 255)²`
pub const SSIM_C2: f64 = 58.5225;

/// BT.601 luma of every pixel.
pub fn luma(img: &SandImage) -> Vec<f64> {
    img.pixels()
        .chunks_exact(3)
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .collect()
}

/// Mean SSIM over 8×8 luma windows placed every 4 pixels.
pub fn ssim(a: &SandImage, b: &SandImage) -> Result<f64, SynthError> {
    if a.width() != b.width() {
        return Err(SynthError::DimensionMismatch(a.width(), b.width()));
    }
    let n = a.width();
    if n < SSIM_WINDOW {
        return Err(SynthError::InvalidArgument(format!("images must be at least {SSIM_WINDOW} pixels wide, got {n}")));
    }
    let (la, lb) = (luma(a), luma(b));
    let count = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for top in (0..=n - SSIM_WINDOW).step_by(SSIM_STRIDE) {
        for left in (0..=n - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in top..top + SSIM_WINDOW {
                for c in left..left + SSIM_WINDOW {
                    let (x, y) = (la[r * n + c], lb[r * n + c]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / count, sb / count);
            let var_a = saa / count - ma * ma;
            let var_b = sbb / count - mb * mb;
            let cov = sab / count - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}
