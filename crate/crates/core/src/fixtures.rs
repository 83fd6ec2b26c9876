//! Synthetic potentials with known structure: dark strokes painted on a
//! bright background, optionally with noise. Used by tests, the `synth`
//! command and the reproduction script.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::fields::{GridShape, NodeField};

/// A dark polyline with a Gaussian cross-section of standard deviation
/// `width` (in pixels) and peak darkness `depth` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Stroke {
    pub points: Vec<[f64; 3]>,
    pub width: f64,
    pub depth: f64,
}

impl Stroke {
    pub fn segment(a: [f64; 2], b: [f64; 2], width: f64) -> Self {
        Self { points: vec![[a[0], a[1], 0.0], [b[0], b[1], 0.0]], width, depth: 1.0 }
    }

    fn distance2(&self, p: [f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
            let l2 = ab.iter().map(|x| x * x).sum::<f64>();
            let t = if l2 == 0.0 {
                0.0
            } else {
                (ab.iter().zip(&ap).map(|(x, y)| x * y).sum::<f64>() / l2).clamp(0.0, 1.0)
            };
            let d2: f64 = (0..3).map(|k| (ap[k] - t * ab[k]).powi(2)).sum();
            best = best.min(d2);
        }
        if self.points.len() == 1 {
            best = (0..3).map(|k| (p[k] - self.points[0][k]).powi(2)).sum();
        }
        best
    }
}

/// `g = 1 - max_s depth_s exp(-d_s^2 / 2 w_s^2)` plus Gaussian noise of
/// standard deviation `noise`, clamped to `[0, 1]`.
pub fn paint(shape: GridShape, strokes: &[Stroke], noise: f64, seed: u64) -> NodeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NodeField::from_fn(shape, |c| {
        let p = [c[0] as f64, c[1] as f64, c[2] as f64];
        let dark =
            strokes.iter().map(|s| s.depth * (-s.distance2(p) / (2.0 * s.width * s.width)).exp()).fold(0.0, f64::max);
        let n = if noise > 0.0 { noise * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        (1.0 - dark + n).clamp(0.0, 1.0)
    })
}

/// Binary potential: 0 on the listed pixels, 1 elsewhere.
pub fn binary(shape: GridShape, dark: impl IntoIterator<Item = [usize; 2]>) -> NodeField {
    let mut g = NodeField::constant(shape, 1.0);
    for p in dark {
        g.set([p[0], p[1], 0], 0.0);
    }
    g
}

/// A fixture potential with the ground-truth curve endpoints.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub g: NodeField,
    pub endpoints: Vec<[usize; 2]>,
}

/// One-pixel-wide dark horizontal segment from `(i0, j)` to `(i1, j)`.
pub fn dark_segment(n: usize, m: usize, j: usize, i0: usize, i1: usize) -> Fixture {
    let shape = GridShape::plane(n, m).expect("valid size");
    Fixture { g: binary(shape, (i0..=i1).map(|i| [i, j])), endpoints: vec![[i0, j], [i1, j]] }
}

/// Rasterized quarter circle of radius `r` centred at `c`, from angle 0
/// (along axis 0) to 90 degrees, with 8-connected pixels.
pub fn dark_quarter_circle(n: usize, m: usize, c: [usize; 2], r: f64) -> Fixture {
    let shape = GridShape::plane(n, m).expect("valid size");
    let steps = (4.0 * r).ceil() as usize * 4;
    let mut px: Vec<[usize; 2]> = Vec::new();
    for s in 0..=steps {
        let t = std::f64::consts::FRAC_PI_2 * s as f64 / steps as f64;
        let p = [(c[0] as f64 + r * t.cos()).round() as usize, (c[1] as f64 + r * t.sin()).round() as usize];
        if px.last() != Some(&p) {
            px.push(p);
        }
    }
    let endpoints = vec![px[0], *px.last().expect("nonempty")];
    Fixture { g: binary(shape, px), endpoints }
}

/// Two straight dark bands crossing at the centre of an `n x m` image, each
/// tilted by `tilt` radians off axis 0, with `g >= floor` everywhere.
/// Endpoints come as `[start_a, end_a, start_b, end_b]`.
pub fn crossing_curves(n: usize, m: usize, tilt: f64, half_len: f64, width: f64, floor: f64) -> Fixture {
    let shape = GridShape::plane(n, m).expect("valid size");
    let c = [(n as f64 - 1.0) / 2.0, (m as f64 - 1.0) / 2.0];
    let (dx, dy) = (half_len * tilt.cos(), half_len * tilt.sin());
    let a = ([c[0] - dx, c[1] - dy], [c[0] + dx, c[1] + dy]);
    let b = ([c[0] - dx, c[1] + dy], [c[0] + dx, c[1] - dy]);
    let mut g = paint(shape, &[Stroke::segment(a.0, a.1, width), Stroke::segment(b.0, b.1, width)], 0.0, 0);
    g.values_mut().iter_mut().for_each(|v| *v = floor + (1.0 - floor) * *v);
    let px = |p: [f64; 2]| [p[0].round() as usize, p[1].round() as usize];
    Fixture { g, endpoints: vec![px(a.0), px(a.1), px(b.0), px(b.1)] }
}

fn comma_tail(scale: f64) -> Vec<[f64; 3]> {
    let head = [70.0 * scale, 150.0 * scale];
    (0..=60)
        .map(|s| {
            let t = s as f64 / 60.0;
            let ang = 0.2 + 2.2 * t;
            let rad = 60.0 * scale * (1.0 + 0.4 * t);
            [
                head[0] + rad * ang.sin() * 1.1,
                head[1] - 40.0 * scale + rad * (ang.cos() - 1.0) * 0.6 + 40.0 * scale * (1.0 - t),
                0.0,
            ]
        })
        .collect()
}

fn comma_strokes(scale: f64) -> Vec<Stroke> {
    // a round head at the top and a tail sweeping down and to the left
    let head = [70.0 * scale, 150.0 * scale];
    let tail = comma_tail(scale);
    let mut strokes = vec![Stroke { points: vec![[head[0], head[1], 0.0]], width: 12.0 * scale, depth: 1.0 }];
    for (k, w) in tail.windows(2).enumerate() {
        let t = k as f64 / 60.0;
        strokes.push(Stroke { points: w.to_vec(), width: (5.0 - 4.0 * t).max(1.0) * scale.max(0.35), depth: 1.0 });
    }
    strokes
}

/// Noisy comma shape on a `size x size` image (200 for the full version,
/// 32 for the reduced one).
pub fn comma(size: usize, noise: f64, seed: u64) -> NodeField {
    let shape = GridShape::plane(size, size).expect("valid size");
    paint(shape, &comma_strokes(size as f64 / 200.0), noise, seed)
}

/// [`comma`] together with the head centre and the tail tip.
pub fn comma_fixture(size: usize, noise: f64, seed: u64) -> Fixture {
    let scale = size as f64 / 200.0;
    let tip = *comma_tail(scale).last().expect("nonempty");
    let clamp = |v: f64| (v.round().max(0.0) as usize).min(size - 1);
    Fixture {
        g: comma(size, noise, seed),
        endpoints: vec![[clamp(70.0 * scale), clamp(150.0 * scale)], [clamp(tip[0]), clamp(tip[1])]],
    }
}

/// `count` short bent dark strands scattered over an image, similar to a
/// chromosome spread. Returns the potential and the strand end points.
pub fn chromosomes(size: usize, count: usize, seed: u64) -> Fixture {
    let shape = GridShape::plane(size, size).expect("valid size");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strokes: Vec<Stroke> = Vec::new();
    let mut centres: Vec<[f64; 2]> = Vec::new();
    let mut endpoints = Vec::new();
    let margin = 12.0;
    let mut attempts = 0;
    while strokes.len() < count && attempts < 100 * count {
        attempts += 1;
        let len = rng.gen_range(14.0..30.0);
        let c = [rng.gen_range(margin..size as f64 - margin), rng.gen_range(margin..size as f64 - margin)];
        if centres.iter().any(|o| (o[0] - c[0]).hypot(o[1] - c[1]) < len + 4.0) {
            continue;
        }
        let dir: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let bend: f64 = rng.gen_range(-0.5..0.5);
        let pts: Vec<[f64; 3]> = (0..=8)
            .map(|s| {
                let t = s as f64 / 8.0 - 0.5;
                let a = dir + bend * t;
                [c[0] + len * t * a.cos(), c[1] + len * t * a.sin(), 0.0]
            })
            .collect();
        let px = |p: [f64; 3]| [p[0].round() as usize, p[1].round() as usize];
        endpoints.push(px(pts[0]));
        endpoints.push(px(pts[8]));
        centres.push(c);
        strokes.push(Stroke { points: pts, width: rng.gen_range(1.5..2.5), depth: rng.gen_range(0.8..1.0) });
    }
    Fixture { g: paint(shape, &strokes, 0.05, seed ^ 0x9e37), endpoints }
}

/// A volume with a straight tube and a helix, dark on bright.
pub fn tubes_volume(nx: usize, ny: usize, nz: usize) -> Fixture {
    let shape = GridShape::volume(nx, ny, nz).expect("valid size");
    let (fx, fy, fz) = (nx as f64, ny as f64, nz as f64);
    let line = Stroke {
        points: vec![[0.15 * fx, 0.2 * fy, 0.5 * fz], [0.85 * fx, 0.8 * fy, 0.5 * fz]],
        width: 1.5,
        depth: 1.0,
    };
    let helix: Vec<[f64; 3]> = (0..=80)
        .map(|s| {
            let t = s as f64 / 80.0;
            let a = 3.0 * std::f64::consts::PI * t;
            [0.5 * fx + 0.25 * fx * a.cos(), 0.5 * fy + 0.25 * fy * a.sin(), 0.15 * fz + 0.7 * fz * t]
        })
        .collect();
    let px = |p: [f64; 3]| [p[0].round() as usize, p[1].round() as usize];
    let endpoints = vec![px(line.points[0]), px(line.points[1]), px(helix[0]), px(helix[80])];
    let g = paint(shape, &[line, Stroke { points: helix, width: 1.5, depth: 1.0 }], 0.0, 0);
    Fixture { g, endpoints }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_fixture() {
        let f = dark_segment(20, 10, 4, 3, 15);
        assert_eq!(f.g.get([3, 4, 0]), 0.0);
        assert_eq!(f.g.get([16, 4, 0]), 1.0);
        assert_eq!(f.g.values().iter().filter(|v| **v == 0.0).count(), 13);
    }

    #[test]
    fn quarter_circle_is_connected() {
        let f = dark_quarter_circle(30, 30, [4, 4], 20.0);
        assert_eq!(f.endpoints, vec![[24, 4], [4, 24]]);
        let dark: Vec<[usize; 2]> =
            (0..30).flat_map(|i| (0..30).map(move |j| [i, j])).filter(|p| f.g.get([p[0], p[1], 0]) == 0.0).collect();
        for p in &dark {
            let nbrs = dark.iter().filter(|q| *q != p && q[0].abs_diff(p[0]) <= 1 && q[1].abs_diff(p[1]) <= 1).count();
            assert!(nbrs >= 1);
        }
    }

    #[test]
    fn painted_values_are_potentials() {
        let g = comma(32, 0.05, 1);
        assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(g.values().iter().any(|v| *v < 0.2));
        let c = chromosomes(128, 10, 2);
        assert_eq!(c.endpoints.len(), 20);
        let x = crossing_curves(40, 25, 22.5f64.to_radians(), 16.0, 1.2, 0.1);
        assert!(x.g.get([19, 12, 0]) < 0.2);
        assert_eq!(x.endpoints.len(), 4);
        let v = tubes_volume(20, 20, 10);
        assert_eq!(v.g.shape().ndim(), 3);
    }
}
