//! Inspection images: the potential in gray, log-scaled `|Az|` in red,
//! curves in green, sources blue and sinks yellow.

use std::path::Path;

use anyhow::{bail, Context, Result};
use chargepath::endpoints::{CurveRecord, MassRecord};
use chargepath::fields::{average, EdgeField, GridMode, NodeField, Stencil};
use chargepath::rototrans::marginalize;
use image::{Rgb, RgbImage};

const FIELD: [f64; 3] = [255.0, 40.0, 40.0];
const CURVE: Rgb<u8> = Rgb([0, 220, 0]);
const SOURCE: Rgb<u8> = Rgb([40, 90, 255]);
const SINK: Rgb<u8> = Rgb([255, 220, 0]);

/// Collapse a volume onto its first two axes by `fold`.
fn flatten(values: impl Fn([usize; 3]) -> f64, dims: [usize; 3], init: f64, fold: fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = vec![init; dims[0] * dims[1]];
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let o = &mut out[i * dims[1] + j];
                *o = fold(*o, values([i, j, k]));
            }
        }
    }
    out
}

/// Per-pixel `|Az|` of a planar, volume or lifted flow; volumes are shown by
/// their maximum along the last axis.
pub fn magnitude(z: &EdgeField) -> Result<Vec<f64>> {
    let z = if z.shape().mode() == GridMode::Lifted { marginalize(z)? } else { z.clone() };
    let shape = z.shape();
    let p = average(&z, Stencil::Averaged);
    let mags: Vec<f64> = p.nodes().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    Ok(flatten(|c| mags[shape.index(c)], shape.dims(), 0.0, f64::max))
}

pub struct Overlay<'a> {
    pub field: Option<&'a EdgeField>,
    pub curves: &'a [CurveRecord],
    pub masses: &'a [MassRecord],
}

pub fn render(g: &NodeField, overlay: &Overlay, path: &Path) -> Result<()> {
    let shape = g.shape();
    let dims = shape.dims();
    if shape.mode() == GridMode::Lifted {
        bail!("render expects a planar or volume potential");
    }
    let (h, w) = (dims[0], dims[1]);
    // volumes: darkest value along the last axis
    let gray = flatten(|c| g.get(c), dims, f64::INFINITY, f64::min);
    let heat = match overlay.field {
        Some(z) => {
            let zd = z.shape().dims();
            if zd[0] != h || zd[1] != w {
                bail!("field is {}x{}, potential is {h}x{w}", zd[0], zd[1]);
            }
            let m = magnitude(z)?;
            let top = m.iter().cloned().fold(0.0, f64::max);
            if top > 0.0 {
                m.iter().map(|v| (v / top * 100.0).ln_1p() / 101f64.ln()).collect()
            } else {
                vec![0.0; m.len()]
            }
        }
        None => vec![0.0; h * w],
    };

    let mut img = RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let v = gray[i * w + j].clamp(0.0, 1.0) * 255.0;
            let t = heat[i * w + j];
            let px = FIELD.map(|c| ((1.0 - t) * v + t * c).round() as u8);
            img.put_pixel(j as u32, i as u32, Rgb(px));
        }
    }
    for c in overlay.curves {
        for n in &c.nodes {
            if n.len() >= 2 && n[0] < h && n[1] < w {
                img.put_pixel(n[1] as u32, n[0] as u32, CURVE);
            }
        }
    }
    for m in overlay.masses {
        let color = if m.sign < 0 { SOURCE } else { SINK };
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (i, j) = (m.i as i64 + di, m.j as i64 + dj);
                if (0..h as i64).contains(&i) && (0..w as i64).contains(&j) {
                    img.put_pixel(j as u32, i as u32, color);
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// The potential as an 8-bit grayscale image (PGM or PNG by extension).
pub fn save_gray(g: &NodeField, path: &Path) -> Result<()> {
    let d = g.shape().dims();
    let img = image::GrayImage::from_fn(d[1] as u32, d[0] as u32, |x, y| {
        image::Luma([(g.get([y as usize, x as usize, 0]).clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
