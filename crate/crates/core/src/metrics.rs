//! Image quality metrics, supervision weights and close-up camera synthesis.

use std::ops::RangeInclusive;

use thiserror::Error;

use crate::geometry::{Camera, Intrinsics, Pose};
use crate::raster::{Image, Mask, Raster};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
pub const DEFAULT_LAMBDA: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall(usize, usize),
    #[error("invalid factor {factor} for {mode}: expected {range}")]
    InvalidFactor {
        mode: &'static str,
        factor: f64,
        range: String,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn same_shape(a: (usize, usize), b: (usize, usize)) -> Result<(), MetricsError> {
    if a == b {
        Ok(())
    } else {
        Err(MetricsError::ShapeMismatch(a, b))
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    same_shape(a.dims(), b.dims())?;
    let n = (a.len() * 3) as f64;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] as f64 - q[k] as f64).powi(2)))
        .sum();
    Ok(if n > 0.0 { sum / n } else { 0.0 })
}

/// `10·log10(1 / MSE)` for unit-range images, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter without padding; output is `(w - 10) × (h - 10)`.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    same_shape(a.dims(), b.dims())?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall(w, h));
    }
    let k = gaussian_kernel();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.as_slice().iter().map(|p| p[c] as f64).collect();
        let y: Vec<f64> = b.as_slice().iter().map(|p| p[c] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&xx, w, h, &k);
        let syy = filter_valid(&yy, w, h, &k);
        let sxy = filter_valid(&xy, w, h, &k);
        let n = mx.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// Per-view weights for confidence-weighted supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceWeights {
    pub w_image: f64,
    pub w_pixel: Raster<f64>,
    pub lambda: f64,
}

/// `exp(−d_min / b)`: `d_min` is the distance from the target camera center to the
/// nearest reference center, `b` the largest baseline between references (or `d_min`
/// with a single reference). Returns `None` without references.
pub fn image_confidence(target: &Pose, refs: &[Pose]) -> Option<f64> {
    let tc = target.center();
    let centers: Vec<_> = refs.iter().map(Pose::center).collect();
    let d_min = centers
        .iter()
        .map(|c| (c - tc).norm())
        .reduce(f64::min)?;
    if d_min == 0.0 {
        return Some(1.0);
    }
    let baseline = if centers.len() == 1 {
        d_min
    } else {
        let mut b: f64 = 0.0;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                b = b.max((centers[i] - centers[j]).norm());
            }
        }
        b.max(1e-9)
    };
    Some((-d_min / baseline).exp())
}

/// `W_image · ((1 − λ) · mean_valid(W_pixel · |render − target|) + λ · (1 − SSIM))`.
///
/// The L1 term averages over valid pixels and channels; the SSIM term is unweighted.
pub fn weighted_loss(
    render: &Image,
    target: &Image,
    weights: &ConfidenceWeights,
    valid: &Mask,
) -> Result<f64, MetricsError> {
    same_shape(render.dims(), target.dims())?;
    same_shape(render.dims(), weights.w_pixel.dims())?;
    same_shape(render.dims(), valid.dims())?;
    let lambda = weights.lambda;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MetricsError::InvalidParameter(format!("lambda = {lambda}")));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..render.len() {
        if !valid.as_slice()[i] {
            continue;
        }
        let (r, t) = (render.as_slice()[i], target.as_slice()[i]);
        let l1: f64 = (0..3).map(|k| (r[k] as f64 - t[k] as f64).abs()).sum::<f64>() / 3.0;
        sum += weights.w_pixel.as_slice()[i] * l1;
        n += 1;
    }
    let l1 = if n > 0 { sum / n as f64 } else { 0.0 };
    let dssim = if lambda > 0.0 {
        1.0 - ssim(render, target)?
    } else {
        0.0
    };
    Ok(weights.w_image * ((1.0 - lambda) * l1 + lambda * dssim))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CloseupMode {
    /// Multiply the focal lengths by the factor.
    Zoom,
    /// Move the camera center along the optical axis by `factor × depth_max`.
    Dolly,
}

/// Accepted factor ranges for close-up synthesis.
#[derive(Clone, Debug, PartialEq)]
pub struct CloseupLimits {
    pub zoom: RangeInclusive<f64>,
    pub dolly: RangeInclusive<f64>,
}

impl Default for CloseupLimits {
    fn default() -> Self {
        Self {
            zoom: 4.0..=5.0,
            dolly: 0.5..=0.6,
        }
    }
}

pub fn closeup_camera(
    reference: &Camera,
    mode: CloseupMode,
    factor: f64,
    depth_max: f64,
    limits: &CloseupLimits,
) -> Result<Camera, MetricsError> {
    let check = |name: &'static str, range: &RangeInclusive<f64>| {
        if factor.is_finite() && range.contains(&factor) {
            Ok(())
        } else {
            Err(MetricsError::InvalidFactor {
                mode: name,
                factor,
                range: format!("[{}, {}]", range.start(), range.end()),
            })
        }
    };
    match mode {
        CloseupMode::Zoom => {
            check("zoom", &limits.zoom)?;
            let k = reference.intrinsics;
            let intrinsics = Intrinsics::new(k.fx * factor, k.fy * factor, k.cx, k.cy, k.width, k.height)
                .map_err(|e| MetricsError::InvalidParameter(e.to_string()))?;
            Ok(Camera {
                intrinsics,
                pose: reference.pose,
            })
        }
        CloseupMode::Dolly => {
            check("dolly", &limits.dolly)?;
            if !(depth_max.is_finite() && depth_max > 0.0) {
                return Err(MetricsError::InvalidParameter(format!(
                    "depth_max must be positive, got {depth_max}"
                )));
            }
            let step = reference.pose.optical_axis() * (factor * depth_max);
            Ok(Camera {
                intrinsics: reference.intrinsics,
                pose: reference.pose.translated_center(&step),
            })
        }
    }
}
