//! Raster and transform-table files.
//!
//! Heatmaps are binary 16-bit PGM (`P5`, maxval 65535, big-endian samples).
//! The factor that turned heatmap values into samples lives in a sidecar
//! `<file>.txt`, so values can be recovered as `sample / scale_factor`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Correspondence, FrameTransform, GrayImage, HeatmapRaster};
use crate::error::{Error, Result};
use crate::ingest::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeatmapMode {
    /// Fixed factor: sample = value * factor, clamped to 65535.
    Grayscale { factor: f64 },
    /// The raster maximum maps to 65535.
    Normalized,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Write the raster and its sidecar; returns the scale factor used.
pub fn write_heatmap(raster: &HeatmapRaster, path: &Path, mode: HeatmapMode) -> Result<f64> {
    let factor = match mode {
        HeatmapMode::Grayscale { factor } => {
            if !(factor.is_finite() && factor > 0.0) {
                return Err(Error::Invalid(format!("bad heatmap factor {factor}")));
            }
            factor
        }
        HeatmapMode::Normalized => {
            let max = raster.max();
            if max > 0.0 {
                65535.0 / max
            } else {
                1.0
            }
        }
    };
    let mut bytes = format!("P5\n{} {}\n65535\n", raster.width, raster.height).into_bytes();
    bytes.reserve(raster.values.len() * 2);
    for v in &raster.values {
        let s = (v * factor).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&s.to_be_bytes());
    }
    write_atomic(path, &bytes)?;
    let mode_name = match mode {
        HeatmapMode::Grayscale { .. } => "grayscale",
        HeatmapMode::Normalized => "normalized",
    };
    let side = format!(
        "scale_factor {factor}\nmode {mode_name}\nwidth {}\nheight {}\norigin_x {}\norigin_y {}\nmosaic_units_per_pixel {}\n",
        raster.width, raster.height, raster.origin.0, raster.origin.1, raster.scale
    );
    write_atomic(&sidecar(path), side.as_bytes())?;
    Ok(factor)
}

/// Read a binary PGM (8- or 16-bit). Samples are returned unscaled.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::parse(path, 0, m.to_string());
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    let wide = maxval > 255;
    let need = w * h * if wide { 2 } else { 1 };
    let payload = bytes.get(i..i + need).ok_or_else(|| bad("truncated PGM payload"))?;
    let data = if wide {
        payload
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    } else {
        payload.iter().map(|&b| f64::from(b)).collect()
    };
    GrayImage::new(w, h, data)
}

/// Read a heatmap written by [`write_heatmap`], undoing the scale factor.
pub fn read_heatmap(path: &Path) -> Result<HeatmapRaster> {
    let img = read_pgm(path)?;
    let side_path = sidecar(path);
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let mut kv = HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once(' ') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<f64> {
        kv.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(&side_path, 0, format!("missing `{k}`")))
    };
    let factor = get("scale_factor")?;
    Ok(HeatmapRaster {
        width: img.width,
        height: img.height,
        values: img.data.iter().map(|s| s / factor).collect(),
        origin: (get("origin_x")?, get("origin_y")?),
        scale: get("mosaic_units_per_pixel")?,
    })
}

pub fn transforms_to_string(transforms: &[FrameTransform]) -> String {
    let mut out = String::from("frame_id,tx,ty,h11,h12,h13,h21,h22,h23,h31,h32,h33\n");
    for t in transforms {
        let h = &t.homography;
        out.push_str(&format!("{},{},{}", t.frame_id, t.translation.0, t.translation.1));
        for r in 0..3 {
            for c in 0..3 {
                out.push_str(&format!(",{}", h[(r, c)]));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_transforms(transforms: &[FrameTransform], path: &Path) -> Result<()> {
    write_atomic(path, transforms_to_string(transforms).as_bytes())
}

#[derive(Deserialize)]
struct CorrespondenceRow {
    frame_id: u64,
    src_x: f64,
    src_y: f64,
    dst_x: f64,
    dst_y: f64,
}

/// CSV `frame_id,src_x,src_y,dst_x,dst_y`: frame pixel -> mosaic pixel.
pub fn load_correspondences(path: &Path) -> Result<HashMap<u64, Vec<Correspondence>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out: HashMap<u64, Vec<Correspondence>> = HashMap::new();
    for rec in rdr.deserialize::<CorrespondenceRow>() {
        let r = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        out.entry(r.frame_id).or_default().push(Correspondence {
            src: (r.src_x, r.src_y),
            dst: (r.dst_x, r.dst_y),
        });
    }
    Ok(out)
}
