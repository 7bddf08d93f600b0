use rayon::prelude::*;

use super::ProjectedDetection;
use crate::error::{Error, Result};

/// Raster geometry. Pixel `(col, row)` samples the mosaic point
/// `origin + (col, row) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterSpec {
    pub width: usize,
    pub height: usize,
    pub origin: (f64, f64),
    /// Mosaic units per raster pixel.
    pub scale: f64,
    /// Kernel sigma as a fraction of the projected box extent.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRaster {
    pub width: usize,
    pub height: usize,
    /// Row-major, non-negative and finite.
    pub values: Vec<f64>,
    pub origin: (f64, f64),
    pub scale: f64,
}

impl HeatmapRaster {
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Kernels are cut off beyond this many sigmas.
const CUTOFF_SIGMAS: f64 = 4.0;

struct Kernel {
    cx: f64,
    cy: f64,
    sx: f64,
    sy: f64,
    amp: f64,
    cols: (usize, usize),
}

/// Sum of unnormalized anisotropic Gaussians, one per detection, with peak
/// equal to the detection confidence and sigmas `alpha * (w, h)` of the
/// projected box.
///
/// Rows are filled in parallel; every pixel adds its kernels in detection
/// order, so the output does not depend on the thread count.
pub fn render_kde(detections: &[ProjectedDetection], spec: &RasterSpec) -> Result<HeatmapRaster> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::Invalid(format!(
            "raster must be non-empty, got {}x{}",
            spec.width, spec.height
        )));
    }
    if !(spec.scale > 0.0 && spec.alpha > 0.0) {
        return Err(Error::Invalid("raster scale and alpha must be positive".into()));
    }
    let (ox, oy) = spec.origin;
    let span = |c: f64, r: f64, o: f64, n: usize| -> Option<(usize, usize)> {
        let lo = ((c - r - o) / spec.scale).ceil().max(0.0);
        let hi = ((c + r - o) / spec.scale).floor().min(n as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    };

    let mut rows: Vec<Vec<Kernel>> = (0..spec.height).map(|_| Vec::new()).collect();
    for d in detections {
        let (sx, sy) = (spec.alpha * d.width(), spec.alpha * d.height());
        if !(sx > 0.0 && sy > 0.0) {
            return Err(Error::Invalid(format!(
                "detection {} has a degenerate projected extent",
                d.detection_id
            )));
        }
        let (cx, cy) = d.centroid;
        let Some(cols) = span(cx, CUTOFF_SIGMAS * sx, ox, spec.width) else {
            continue;
        };
        let Some((r0, r1)) = span(cy, CUTOFF_SIGMAS * sy, oy, spec.height) else {
            continue;
        };
        for row in rows.iter_mut().take(r1 + 1).skip(r0) {
            row.push(Kernel {
                cx,
                cy,
                sx,
                sy,
                amp: d.confidence(),
                cols,
            });
        }
    }

    let mut values = vec![0.0; spec.width * spec.height];
    values
        .par_chunks_mut(spec.width)
        .zip(rows.par_iter())
        .enumerate()
        .for_each(|(r, (out, kernels))| {
            let py = oy + r as f64 * spec.scale;
            for k in kernels {
                let ey = (py - k.cy).powi(2) / (2.0 * k.sy * k.sy);
                for (c, v) in out.iter_mut().enumerate().take(k.cols.1 + 1).skip(k.cols.0) {
                    let px = ox + c as f64 * spec.scale;
                    let ex = (px - k.cx).powi(2) / (2.0 * k.sx * k.sx);
                    *v += k.amp * (-(ex + ey)).exp();
                }
            }
        });

    Ok(HeatmapRaster {
        width: spec.width,
        height: spec.height,
        values,
        origin: spec.origin,
        scale: spec.scale,
    })
}
