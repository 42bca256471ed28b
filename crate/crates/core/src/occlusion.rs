//! Occlusion-aware suppression of background splats leaking through sparse foreground.
//!
//! The warped depth is min-filtered with a window whose size grows as the warp gets
//! sparser; a pixel whose depth exceeds the filtered depth by more than `tau_d` is
//! suppressed. Only pixels that came from reliable source depth are eligible.

use rayon::prelude::*;

use crate::raster::{is_valid_depth, DepthMap, Mask, Raster};
use crate::warp::WarpResult;

pub const DEFAULT_TAU_D: f64 = 0.2;
pub const MAX_KERNEL: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMask {
    /// `true` = keep, `false` = suppressed.
    pub keep: Mask,
}

impl OcclusionMask {
    pub fn suppressed_count(&self) -> usize {
        self.keep.len() - self.keep.count()
    }
}

/// Odd min-filter size for a warp with the given valid fraction.
///
/// `k` is the smallest odd integer `≥ ceil(1 / sqrt(max(density, 1/81)))`, clamped to
/// `[1, 9]`.
pub fn kernel_from_density(density: f64) -> usize {
    let d = density.clamp(0.0, 1.0).max(1.0 / 81.0);
    // tolerance keeps exact reciprocals such as 1/sqrt(1/9) from rounding up
    let spacing = ((1.0 / d.sqrt()) - 1e-9).ceil().max(1.0) as usize;
    let k = if spacing.is_multiple_of(2) { spacing + 1 } else { spacing };
    k.clamp(1, MAX_KERNEL)
}

/// Minimum over valid depths in the `k × k` window centered on each pixel.
///
/// Windows are truncated at the borders. Pixels whose window holds no valid depth are
/// invalid (0) in the output.
pub fn dilate_depth(depth: &DepthMap, k: usize) -> DepthMap {
    assert!(k % 2 == 1, "kernel size must be odd, got {k}");
    if k == 1 {
        return depth.clone();
    }
    let (w, h) = depth.dims();
    let r = k / 2;
    let inf = f32::INFINITY;
    let src: Vec<f32> = depth
        .as_slice()
        .iter()
        .map(|&d| if is_valid_depth(d) { d } else { inf })
        .collect();

    // separable: horizontal then vertical window minimum
    let horiz: Vec<f32> = src
        .par_chunks(w)
        .flat_map_iter(|row| {
            (0..w).map(move |x| {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                row[lo..=hi].iter().copied().fold(inf, f32::min)
            })
        })
        .collect();
    let out: Vec<f32> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            let horiz = &horiz;
            (0..w).map(move |x| {
                let m = (lo..=hi).map(|yy| horiz[yy * w + x]).fold(inf, f32::min);
                if m.is_finite() {
                    m
                } else {
                    0.0
                }
            })
        })
        .collect();
    Raster::from_vec(w, h, out).unwrap()
}

/// Keeps a pixel unless both depths are valid and `warp − dilate > tau_d`.
pub fn occlusion_mask(warp_depth: &DepthMap, dilated: &DepthMap, tau_d: f64) -> OcclusionMask {
    assert_eq!(warp_depth.dims(), dilated.dims(), "depth grids differ");
    let keep = warp_depth
        .as_slice()
        .iter()
        .zip(dilated.as_slice())
        .map(|(&a, &b)| !(is_valid_depth(a) && is_valid_depth(b) && (a as f64 - b as f64) > tau_d))
        .collect();
    OcclusionMask {
        keep: Raster::from_vec(warp_depth.width(), warp_depth.height(), keep).unwrap(),
    }
}

/// Valid fraction of the full-resolution level of a warp.
///
/// Pixels filled from the low-resolution level do not count; pixels already suppressed
/// do, so repeated suppression sees the same density.
pub fn high_res_density(warp: &WarpResult) -> f64 {
    let n = warp.valid.len();
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n)
        .filter(|&i| {
            (warp.valid.as_slice()[i] || warp.suppressed.as_slice()[i]) && !warp.filled.as_slice()[i]
        })
        .count();
    hits as f64 / n as f64
}

/// Density → kernel → dilation → mask; suppressed pixels become invalid.
///
/// Pixels whose source depth was unreliable are always kept.
pub fn suppress(warp: &WarpResult, tau_d: f64) -> (WarpResult, OcclusionMask) {
    let k = kernel_from_density(high_res_density(warp));
    let dilated = dilate_depth(&warp.depth, k);
    let raw = occlusion_mask(&warp.depth, &dilated, tau_d);
    let keep: Vec<bool> = (0..warp.valid.len())
        .map(|i| raw.keep.as_slice()[i] || !warp.reliable_origin.as_slice()[i])
        .collect();
    let keep = Raster::from_vec(warp.width(), warp.height(), keep).unwrap();
    let mut out = warp.clone();
    for (i, &k) in keep.as_slice().iter().enumerate() {
        if !k {
            out.clear_pixel(i);
            out.suppressed.as_mut_slice()[i] = true;
        }
    }
    (out, OcclusionMask { keep })
}
