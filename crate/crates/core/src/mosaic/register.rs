//! Two-pass registration: a rough translation per frame, then an optional
//! homography refinement on top of it.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix3};

use super::FrameTransform;
use crate::camera::NadirView;
use crate::error::{Error, Result};
use crate::ingest::FrameMeta;

#[derive(Debug, Clone, PartialEq)]
pub struct RoughTranslation {
    pub frame_id: u64,
    pub translation: (f64, f64),
    /// Set when the frame could not be registered; the translation is then
    /// carried over from the previous frame.
    pub flag: Option<String>,
}

/// Result of a registration pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub transforms: Vec<FrameTransform>,
    pub unregistered: Vec<(u64, String)>,
}

// --------------------------------------------------------------- pose mode

fn rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

struct PoseMap {
    /// mosaic position of the frame centre
    centre: (f64, f64),
    /// frame offset -> mosaic offset
    linear: [[f64; 2]; 2],
    frame_centre: (f64, f64),
}

fn pose_map(base: &NadirView, view: &NadirView) -> PoseMap {
    let frame_centre = (view.width_px / 2.0, view.height_px / 2.0);
    let centre = base.world_to_pixel(view.pose.x_m, view.pose.y_m);
    let r = rotation(base.pose.yaw_rad).transpose() * rotation(view.pose.yaw_rad);
    let k = view.gsd_m / base.gsd_m;
    let mut linear = [[r[(0, 0)] * k, r[(0, 1)] * k], [r[(1, 0)] * k, r[(1, 1)] * k]];
    // snap round-off so aligned frames get an exact identity refinement
    for (i, row) in linear.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let ident = if i == j { 1.0 } else { 0.0 };
            if (*v - ident).abs() < 1e-14 {
                *v = ident;
            }
        }
    }
    PoseMap {
        centre,
        linear,
        frame_centre,
    }
}

fn views(frames: &[FrameMeta]) -> Result<Vec<NadirView>> {
    frames.iter().map(NadirView::of).collect()
}

/// Rough pass from camera poses: the translation that puts each frame's
/// centre at its mosaic position.
pub fn rough_pass_poses(frames: &[FrameMeta]) -> Result<Vec<RoughTranslation>> {
    let views = views(frames)?;
    let Some(base) = views.first() else {
        return Ok(Vec::new());
    };
    Ok(frames
        .iter()
        .zip(&views)
        .map(|(f, v)| {
            let m = pose_map(base, v);
            RoughTranslation {
                frame_id: f.frame_id,
                translation: (m.centre.0 - m.frame_centre.0, m.centre.1 - m.frame_centre.1),
                flag: None,
            }
        })
        .collect())
}

/// Full transforms from camera poses. The rotation and scale between a frame
/// and the first frame go into the homography, about the frame's translated
/// centre; frames sharing heading and GSD keep an identity homography.
pub fn pose_transforms(frames: &[FrameMeta]) -> Result<Vec<FrameTransform>> {
    let views = views(frames)?;
    let Some(base) = views.first() else {
        return Ok(Vec::new());
    };
    Ok(frames
        .iter()
        .zip(&views)
        .map(|(f, v)| {
            let m = pose_map(base, v);
            let translation = (m.centre.0 - m.frame_centre.0, m.centre.1 - m.frame_centre.1);
            let l = m.linear;
            let homography = if l == [[1.0, 0.0], [0.0, 1.0]] {
                Matrix3::identity()
            } else {
                // q -> centre + L (q - centre)
                let (cx, cy) = m.centre;
                Matrix3::new(
                    l[0][0],
                    l[0][1],
                    cx - l[0][0] * cx - l[0][1] * cy,
                    l[1][0],
                    l[1][1],
                    cy - l[1][0] * cx - l[1][1] * cy,
                    0.0,
                    0.0,
                    1.0,
                )
            };
            FrameTransform {
                frame_id: f.frame_id,
                translation,
                homography,
            }
        })
        .collect())
}

// -------------------------------------------------------------- image mode

/// Grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Invalid(format!(
                "image of {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccConfig {
    /// Search window half-size in pixels.
    pub max_shift: i64,
    /// Peaks below this correlation leave the frame unregistered.
    pub min_ncc: f64,
    /// Minimum overlap as a fraction of the frame area.
    pub min_overlap: f64,
}

impl Default for NccConfig {
    fn default() -> Self {
        Self {
            max_shift: 32,
            min_ncc: 0.5,
            min_overlap: 0.25,
        }
    }
}

fn ncc_at(a: &GrayImage, b: &GrayImage, dx: i64, dy: i64, min_px: usize) -> Option<f64> {
    // b(p) vs a(p + d) over the overlap
    let x0 = 0.max(-dx) as usize;
    let y0 = 0.max(-dy) as usize;
    let x1 = (b.width as i64).min(a.width as i64 - dx);
    let y1 = (b.height as i64).min(a.height as i64 - dy);
    if x1 <= x0 as i64 || y1 <= y0 as i64 {
        return None;
    }
    let (x1, y1) = (x1 as usize, y1 as usize);
    let n = (x1 - x0) * (y1 - y0);
    if n < min_px {
        return None;
    }
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in y0..y1 {
        let ay = (y as i64 + dy) as usize;
        for x in x0..x1 {
            let va = a.at((x as i64 + dx) as usize, ay);
            let vb = b.at(x, y);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
        }
    }
    let n = n as f64;
    let cov = sab - sa * sb / n;
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Shift `d` maximizing the normalized cross-correlation of `b(p)` with
/// `a(p + d)`, refined to subpixel by a parabola through the peak and its
/// neighbours. Returns the shift and the peak correlation.
pub fn estimate_shift(a: &GrayImage, b: &GrayImage, cfg: &NccConfig) -> Option<((f64, f64), f64)> {
    let s = cfg.max_shift;
    let side = (2 * s + 1) as usize;
    let min_px = (cfg.min_overlap * (b.width * b.height) as f64).ceil() as usize;
    let mut grid = vec![f64::NEG_INFINITY; side * side];
    let mut best: Option<(i64, i64, f64)> = None;
    for dy in -s..=s {
        for dx in -s..=s {
            if let Some(c) = ncc_at(a, b, dx, dy, min_px.max(1)) {
                grid[((dy + s) as usize) * side + (dx + s) as usize] = c;
                if best.is_none_or(|(_, _, bc)| c > bc) {
                    best = Some((dx, dy, c));
                }
            }
        }
    }
    let (bx, by, peak) = best?;
    let at = |dx: i64, dy: i64| -> Option<f64> {
        if dx.abs() > s || dy.abs() > s {
            return None;
        }
        let v = grid[((dy + s) as usize) * side + (dx + s) as usize];
        v.is_finite().then_some(v)
    };
    let refine = |m: Option<f64>, p: Option<f64>| -> f64 {
        match (m, p) {
            (Some(m), Some(p)) => {
                let den = m - 2.0 * peak + p;
                if den < 0.0 {
                    (0.5 * (m - p) / den).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    };
    let fx = refine(at(bx - 1, by), at(bx + 1, by));
    let fy = refine(at(bx, by - 1), at(bx, by + 1));
    Some(((bx as f64 + fx, by as f64 + fy), peak))
}

/// Rough pass from imagery: chain the shifts between consecutive frames.
/// The first frame sits at the origin.
pub fn rough_pass_images(
    frame_ids: &[u64],
    images: &[GrayImage],
    cfg: &NccConfig,
) -> Result<Vec<RoughTranslation>> {
    if frame_ids.len() != images.len() {
        return Err(Error::Invalid("one image per frame id required".into()));
    }
    let mut out: Vec<RoughTranslation> = Vec::with_capacity(images.len());
    let mut t = (0.0, 0.0);
    for (i, (&id, img)) in frame_ids.iter().zip(images).enumerate() {
        let mut flag = None;
        if i > 0 {
            match estimate_shift(&images[i - 1], img, cfg) {
                Some(((dx, dy), c)) if c >= cfg.min_ncc => {
                    t = (t.0 + dx, t.1 + dy);
                }
                Some((_, c)) => {
                    flag = Some(format!("correlation peak {c:.3} below floor {}", cfg.min_ncc))
                }
                None => flag = Some("no overlap with previous frame".into()),
            }
        }
        out.push(RoughTranslation {
            frame_id: id,
            translation: t,
            flag,
        });
    }
    Ok(out)
}

// ------------------------------------------------------------- refinement

/// A frame pixel and where it belongs in the mosaic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src: (f64, f64),
    pub dst: (f64, f64),
}

fn normalizer(pts: &[(f64, f64)]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_d = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    let s = if mean_d > 0.0 {
        std::f64::consts::SQRT_2 / mean_d
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn collinear(pts: &[(f64, f64)]) -> bool {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.0 - cx, p.1 - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let tr = sxx + syy;
    if tr <= 0.0 {
        return true;
    }
    let det = sxx * syy - sxy * sxy;
    let small = tr / 2.0 - ((tr / 2.0).powi(2) - det).max(0.0).sqrt();
    small / tr < 1e-12
}

/// Least-squares homography `src -> dst` by the normalized direct linear
/// transform. Needs at least four correspondences, not all collinear.
pub fn estimate_homography(pairs: &[Correspondence]) -> Result<Matrix3<f64>> {
    if pairs.len() < 4 {
        return Err(Error::Degenerate(format!(
            "{} correspondences, at least 4 needed",
            pairs.len()
        )));
    }
    let src: Vec<_> = pairs.iter().map(|c| c.src).collect();
    let dst: Vec<_> = pairs.iter().map(|c| c.dst).collect();
    if collinear(&src) || collinear(&dst) {
        return Err(Error::Degenerate("collinear points".into()));
    }
    let ts = normalizer(&src);
    let td = normalizer(&dst);
    let norm = |t: &Matrix3<f64>, p: (f64, f64)| (t[(0, 0)] * p.0 + t[(0, 2)], t[(1, 1)] * p.1 + t[(1, 2)]);

    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let (x, y) = norm(&ts, *s);
        let (u, v) = norm(&td, *d);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let second = svd.singular_values[order[1]];
    let largest = svd.singular_values[order[order.len() - 1]];
    if second <= 1e-10 * largest {
        return Err(Error::Degenerate("correspondences do not fix a unique homography".into()));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular normalization".into()))?;
    let hm = td_inv * hn * ts;
    let h33 = hm[(2, 2)];
    if h33.abs() < 1e-12 {
        return Err(Error::Degenerate("homography with vanishing h33".into()));
    }
    let hm = hm / h33;
    if hm.determinant().abs() <= 1e-12 {
        return Err(Error::Degenerate("singular homography".into()));
    }
    Ok(hm)
}

/// Second pass: for frames with correspondences, fit a homography from the
/// rough-translated frame pixels to their mosaic positions. Frames without
/// correspondences keep an identity homography; frames whose
/// correspondences are degenerate keep it too and are flagged.
pub fn refine_pass(
    rough: &[RoughTranslation],
    correspondences: &HashMap<u64, Vec<Correspondence>>,
) -> Registration {
    let mut transforms = Vec::with_capacity(rough.len());
    let mut unregistered = Vec::new();
    for r in rough {
        let mut ft = FrameTransform::translation(r.frame_id, r.translation);
        if let Some(flag) = &r.flag {
            unregistered.push((r.frame_id, flag.clone()));
        }
        if let Some(pairs) = correspondences.get(&r.frame_id) {
            let (tx, ty) = r.translation;
            let shifted: Vec<Correspondence> = pairs
                .iter()
                .map(|c| Correspondence {
                    src: (c.src.0 + tx, c.src.1 + ty),
                    dst: c.dst,
                })
                .collect();
            match estimate_homography(&shifted) {
                Ok(h) => ft.homography = h,
                Err(e) => unregistered.push((r.frame_id, e.to_string())),
            }
        }
        transforms.push(ft);
    }
    Registration {
        transforms,
        unregistered,
    }
}
