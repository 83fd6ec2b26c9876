//! Loading a potential `g` from an image or a raw volume.
//!
//! Images (PGM or PNG, 8 or 16 bit) map pixel `(x, y)` to node `(i, j) = (y, x)`.
//! Volumes are raw little-endian `f32` with x varying fastest, described by a
//! sidecar `<file>.json` holding `{"nx": .., "ny": .., "nz": ..}`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chargepath::fields::{GridShape, NodeField};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn is_image(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    matches!(ext.as_deref(), Some("png" | "pgm" | "pnm" | "ppm"))
}

fn read_image(path: &Path) -> Result<NodeField> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?.into_luma16();
    let (w, h) = img.dimensions();
    let shape = GridShape::plane(h as usize, w as usize)?;
    Ok(NodeField::from_fn(shape, |[i, j, _]| img.get_pixel(j as u32, i as u32)[0] as f64))
}

fn read_volume(path: &Path) -> Result<NodeField> {
    let head = sidecar(path);
    let h: VolumeHeader = serde_json::from_slice(
        &std::fs::read(&head).with_context(|| format!("reading volume header {}", head.display()))?,
    )
    .with_context(|| format!("parsing {}", head.display()))?;
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let n = h.nx * h.ny * h.nz;
    if bytes.len() != 4 * n {
        bail!("{} holds {} bytes, header asks for {}x{}x{} f32", path.display(), bytes.len(), h.nx, h.ny, h.nz);
    }
    let raw: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let shape = GridShape::volume(h.nx, h.ny, h.nz)?;
    Ok(NodeField::from_fn(shape, |[i, j, k]| raw[(k * h.ny + j) * h.nx + i] as f64))
}

/// Write `g` as a raw volume plus sidecar (inverse of the volume reader).
pub fn write_volume(path: &Path, g: &NodeField) -> Result<()> {
    let d = g.shape().dims();
    let (nx, ny, nz) = (d[0], d[1], d[2]);
    let mut bytes = vec![0u8; 4 * nx * ny * nz];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let o = 4 * ((k * ny + j) * nx + i);
                bytes[o..o + 4].copy_from_slice(&(g.get([i, j, k]) as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, bytes)?;
    std::fs::write(sidecar(path), serde_json::to_string(&VolumeHeader { nx, ny, nz })?)?;
    Ok(())
}

/// Rescale to `[0, 1]`: darkest value to 0, brightest to 1.
pub fn normalize(g: &mut NodeField) -> Result<()> {
    let (lo, hi) = g.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        bail!("constant image (every value is {lo}); the potential needs some contrast");
    }
    g.values_mut().iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    Ok(())
}

/// Mirror index for a half-sample symmetric boundary: -1 -> 0, n -> n-1.
fn reflect(mut i: isize, n: isize) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur with reflective boundary along every axis.
pub fn gaussian_blur(g: &NodeField, sigma: f64) -> NodeField {
    if sigma <= 0.0 {
        return g.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let shape = g.shape();
    let mut cur = g.clone();
    for axis in 0..shape.ndim() {
        let n = shape.dim(axis) as isize;
        let prev = cur.clone();
        cur = NodeField::from_fn(shape, |c| {
            let mut acc = 0.0;
            for (w, t) in kernel.iter().zip(-r..=r) {
                let mut s = c;
                s[axis] = reflect(c[axis] as isize + t, n);
                acc += w * prev.get(s);
            }
            acc
        });
    }
    cur
}

/// Read, normalize and optionally blur a potential.
pub fn ingest_potential(path: &Path, blur: Option<f64>) -> Result<NodeField> {
    let mut g = if is_image(path) { read_image(path)? } else { read_volume(path)? };
    normalize(&mut g).with_context(|| format!("in {}", path.display()))?;
    Ok(match blur {
        Some(s) => gaussian_blur(&g, s),
        None => g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-3, 5), 2);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(7, 5), 2);
        assert_eq!(reflect(-2, 1), 0);
    }

    #[test]
    fn blur_keeps_constants_and_mass() {
        let s = GridShape::plane(9, 6).unwrap();
        let c = gaussian_blur(&NodeField::constant(s, 0.3), 2.0);
        assert!(c.values().iter().all(|v| (v - 0.3).abs() < 1e-14));
        // reflective boundary conserves the total
        let mut d = NodeField::zeros(s);
        d.set([0, 0, 0], 1.0);
        let b = gaussian_blur(&d, 1.5);
        assert!((b.sum() - 1.0).abs() < 1e-12);
        assert!(b.get([0, 0, 0]) > b.get([1, 1, 0]));
    }

    #[test]
    fn normalization() {
        let s = GridShape::plane(2, 2).unwrap();
        let mut g = NodeField::from_vec(s, vec![10.0, 20.0, 30.0, 50.0]).unwrap();
        normalize(&mut g).unwrap();
        assert_eq!(g.values(), &[0.0, 0.25, 0.5, 1.0]);
        assert!(normalize(&mut NodeField::zeros(s)).is_err());
    }
}
