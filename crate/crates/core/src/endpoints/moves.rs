//! Initialization, per-mass move rules and merging.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Curve, DiracMass, DiracSet, Stage};
use crate::error::{Error, Result};
use crate::fields::{average, EdgeField, GridMode, NodeField, Stencil};
use crate::rototrans::AngleTable;

/// Window means below this count as "no flow here".
const ORIENTATION_TOL: f64 = 1e-9;

/// The 8 neighbours in counter-clockwise order, starting along `+axis 0`.
const RING: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn ring_index(d: (f64, f64)) -> usize {
    let a = d.1.atan2(d.0);
    ((a / std::f64::consts::FRAC_PI_4).round() as isize).rem_euclid(8) as usize
}

fn offset(pos: [usize; 2], m: usize, dims: [usize; 2]) -> Option<[usize; 2]> {
    let (di, dj) = RING[m % 8];
    let i = pos[0].checked_add_signed(di)?;
    let j = pos[1].checked_add_signed(dj)?;
    (i < dims[0] && j < dims[1]).then_some([i, j])
}

fn planar_dims(g: &NodeField) -> [usize; 2] {
    [g.shape().dim(0), g.shape().dim(1)]
}

fn g_at(g: &NodeField, p: [usize; 2]) -> f64 {
    g.get([p[0], p[1], 0])
}

/// Random `(-1, +1)` pairs in the sublevel set `{g <= gmax}`. The sink is
/// drawn at Chebyshev distance 2 or 3 from the source when the sublevel set
/// allows it, else at distance 1, else on the darkest neighbour. On lifted
/// problems both masses get the orientation of the source-to-sink step.
pub fn init_pairs(
    g: &NodeField,
    n_pairs: usize,
    gmax: f64,
    seed: u64,
    angles: Option<&AngleTable>,
) -> Result<DiracSet> {
    if g.shape().mode() != GridMode::Plane {
        return Err(Error::Config("endpoint search needs a planar potential".into()));
    }
    if n_pairs == 0 {
        return Err(Error::Config("need at least one pair".into()));
    }
    let dims = planar_dims(g);
    let low: Vec<[usize; 2]> =
        (0..dims[0]).flat_map(|i| (0..dims[1]).map(move |j| [i, j])).filter(|&p| g_at(g, p) <= gmax).collect();
    if low.is_empty() {
        return Err(Error::EmptySublevelSet { gmax });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masses = Vec::with_capacity(2 * n_pairs);
    for _ in 0..n_pairs {
        let src = low[rng.gen_range(0..low.len())];
        let ring = |r: std::ops::RangeInclusive<usize>| -> Vec<[usize; 2]> {
            let mut out = Vec::new();
            let r_max = *r.end();
            for i in src[0].saturating_sub(r_max)..=(src[0] + r_max).min(dims[0] - 1) {
                for j in src[1].saturating_sub(r_max)..=(src[1] + r_max).min(dims[1] - 1) {
                    let d = i.abs_diff(src[0]).max(j.abs_diff(src[1]));
                    if r.contains(&d) && g_at(g, [i, j]) <= gmax {
                        out.push([i, j]);
                    }
                }
            }
            out
        };
        let far = ring(2..=3);
        let near = if far.is_empty() { ring(1..=1) } else { far };
        let dst = match near.choose(&mut rng) {
            Some(&p) => p,
            None => (0..8)
                .filter_map(|m| offset(src, m, dims))
                .min_by(|a, b| g_at(g, *a).total_cmp(&g_at(g, *b)))
                .expect("grids have at least 2x2 nodes"),
        };
        let mut a = DiracMass::new(src, -1);
        let mut b = DiracMass::new(dst, 1);
        if let Some(t) = angles {
            let k = t.nearest(dst[0] as f64 - src[0] as f64, dst[1] as f64 - src[1] as f64);
            a = a.with_angle(k);
            b = b.with_angle(k);
        }
        masses.push(a);
        masses.push(b);
    }
    Ok(DiracSet::new(masses))
}

/// Unit mean of the node-averaged planar field over the 3x3 window at `x`.
pub fn estimate_orientation(z: &EdgeField, x: [usize; 2]) -> Option<(f64, f64)> {
    let shape = z.shape();
    let az = average(z, Stencil::Averaged);
    let (mut s0, mut s1) = (0.0, 0.0);
    let mut count = 0usize;
    for i in x[0].saturating_sub(1)..=(x[0] + 1).min(shape.dim(0) - 1) {
        for j in x[1].saturating_sub(1)..=(x[1] + 1).min(shape.dim(1) - 1) {
            let v = az.node(shape.index([i, j, 0]));
            s0 += v[0];
            s1 += v[1];
            count += 1;
        }
    }
    let norm = s0.hypot(s1);
    (norm / count as f64 > ORIENTATION_TOL).then(|| (s0 / norm, s1 / norm))
}

/// Direction that shortens the curve ending at a mass of sign `sign` when
/// the local flow runs along `flow`: back against the flow at a sink,
/// along it at a source.
pub fn shortening_direction(flow: (f64, f64), sign: i8) -> (f64, f64) {
    let s = -(sign as f64);
    (s * flow.0, s * flow.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveCase {
    /// (a) off the dark set: step along the shortening direction.
    Shorten,
    /// (b) onto the opposite or a 45-degree-from-opposite pixel.
    Lengthen,
    /// (c) onto one of the two orthogonal pixels.
    Orthogonal,
    /// (d) onto one of the two 45-degree-from-shortening pixels.
    Shift,
    /// Every rule is exhausted.
    Converged,
    /// No flow near the mass; it stays where it is.
    NoOrientation,
}

impl MoveCase {
    pub fn moved(self) -> bool {
        matches!(self, MoveCase::Shorten | MoveCase::Lengthen | MoveCase::Orthogonal | MoveCase::Shift)
    }
}

/// Applies the first matching move rule to `mass` given the planar flow `z`.
pub fn move_mass(mass: &mut DiracMass, z: &EdgeField, g: &NodeField, gmax: f64) -> MoveCase {
    let dims = planar_dims(g);
    let Some(flow) = estimate_orientation(z, mass.pos) else {
        return MoveCase::NoOrientation;
    };
    let short = ring_index(shortening_direction(flow, mass.sign));

    if g_at(g, mass.pos) > gmax {
        assert_eq!(mass.stage, Stage::Shortening, "lengthening only visits the dark set");
        return match offset(mass.pos, short, dims) {
            Some(p) => {
                mass.pos = p;
                MoveCase::Shorten
            }
            None => MoveCase::Converged,
        };
    }

    let long = short + 4;
    let rules = [
        (MoveCase::Lengthen, [long, long + 1, long + 7]),
        (MoveCase::Orthogonal, [short + 2, short + 6, usize::MAX]),
        (MoveCase::Shift, [short + 1, short + 7, usize::MAX]),
    ];
    for (case, cands) in rules {
        let best = cands
            .iter()
            .filter(|&&m| m != usize::MAX)
            .filter_map(|&m| offset(mass.pos, m, dims))
            .filter(|p| g_at(g, *p) <= gmax && !mass.visited.contains(p))
            .min_by(|a, b| g_at(g, *a).total_cmp(&g_at(g, *b)));
        if let Some(p) = best {
            mass.visited.insert(mass.pos);
            mass.visited.insert(p);
            mass.pos = p;
            mass.stage = Stage::Lengthening;
            return case;
        }
    }
    MoveCase::Converged
}

/// Removes `(+1, -1)` pairs lying in each other's 3x3 neighbourhood. Masses
/// are scanned in row-major order and each takes the row-major first
/// available partner. Returns the number of removed pairs.
pub fn merge_close_opposites(set: &mut DiracSet) -> usize {
    let mut order: Vec<usize> = (0..set.masses.len()).collect();
    order.sort_by_key(|&i| (set.masses[i].pos, i));
    let mut cells: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
    for &i in &order {
        cells.entry(set.masses[i].pos).or_default().push(i);
    }
    let mut removed = vec![false; set.masses.len()];
    let mut pairs = 0;
    for &i in &order {
        if removed[i] {
            continue;
        }
        let m = &set.masses[i];
        let mut partner: Option<usize> = None;
        'scan: for di in -1..=1isize {
            for dj in -1..=1isize {
                let (Some(a), Some(b)) = (m.pos[0].checked_add_signed(di), m.pos[1].checked_add_signed(dj)) else {
                    continue;
                };
                if let Some(list) = cells.get(&[a, b]) {
                    if let Some(&j) = list.iter().find(|&&j| !removed[j] && set.masses[j].sign == -m.sign) {
                        partner = Some(j);
                        break 'scan;
                    }
                }
            }
        }
        if let Some(j) = partner {
            removed[i] = true;
            removed[j] = true;
            pairs += 1;
        }
    }
    let mut idx = 0;
    set.masses.retain(|_| {
        idx += 1;
        !removed[idx - 1]
    });
    pairs
}

/// New orientation index for a mass on a lifted field: when the net flux
/// on the two orientation edges at the mass exceeds `threshold`, the mass
/// turns one step towards it (a source turns with the flow it emits, a sink
/// against the flow it receives).
pub fn update_theta(mass: &DiracMass, z: &EdgeField, threshold: f64) -> usize {
    let shape = z.shape();
    let k = mass.angle.expect("lifted masses carry an orientation");
    let kk = shape.dim(2);
    let up = z.get(2, [mass.pos[0], mass.pos[1], k]);
    let down = z.get(2, [mass.pos[0], mass.pos[1], (k + kk - 1) % kk]);
    let t = up + down;
    if t.abs() <= threshold {
        return k;
    }
    let step = if (t > 0.0) == (mass.sign < 0) { 1 } else { kk - 1 };
    (k + step) % kk
}

fn node_set(c: &Curve) -> HashSet<[usize; 2]> {
    c.nodes.iter().map(|n| [n[0], n[1]]).collect()
}

fn shared_fraction(short: &Curve, long: &HashSet<[usize; 2]>) -> f64 {
    let hit = short
        .nodes
        .iter()
        .filter(|n| {
            (-1..=1isize).any(|di| {
                (-1..=1isize).any(|dj| match (n[0].checked_add_signed(di), n[1].checked_add_signed(dj)) {
                    (Some(a), Some(b)) => long.contains(&[a, b]),
                    _ => false,
                })
            })
        })
        .count();
    hit as f64 / short.nodes.len() as f64
}

fn chord(c: &Curve) -> (f64, f64) {
    let (s, e) = (c.start(), c.end());
    let d = (e[0] as f64 - s[0] as f64, e[1] as f64 - s[1] as f64);
    let n = d.0.hypot(d.1);
    if n == 0.0 {
        (0.0, 0.0)
    } else {
        (d.0 / n, d.1 / n)
    }
}

fn take_mass(set: &mut DiracSet, pos: [usize; 2], sign: i8) -> bool {
    match set.masses.iter().position(|m| m.pos == pos && m.sign == sign) {
        Some(i) => {
            set.masses.remove(i);
            true
        }
        None => false,
    }
}

/// Collapses overlapping, similarly oriented curves into one: of the two
/// sources and two sinks only the pair furthest apart survives. `curves` are
/// planar paths from a source position to a sink position.
pub fn postprocess_merge(curves: &[Curve], masses: &DiracSet, overlap_frac: f64, angle_tol: f64) -> DiracSet {
    let mut set = masses.clone();
    let mut live: Vec<Curve> = curves.iter().filter(|c| c.nodes.len() >= 2).cloned().collect();
    let has =
        |set: &DiracSet, p: [usize; 3], sign: i8| set.masses.iter().any(|m| m.pos == [p[0], p[1]] && m.sign == sign);
    loop {
        live.retain(|c| has(&set, c.start(), -1) && has(&set, c.end(), 1));
        let mut merged = None;
        'pairs: for a in 0..live.len() {
            for b in a + 1..live.len() {
                let (ca, cb) = (&live[a], &live[b]);
                let (short, long) = if ca.nodes.len() <= cb.nodes.len() { (ca, cb) } else { (cb, ca) };
                if shared_fraction(short, &node_set(long)) < overlap_frac {
                    continue;
                }
                let (da, db) = (chord(ca), chord(cb));
                if (da.0 * db.0 + da.1 * db.1).abs() < angle_tol.cos() {
                    continue;
                }
                merged = Some((a, b));
                break 'pairs;
            }
        }
        let Some((a, b)) = merged else { break };
        let (ca, cb) = (live[a].clone(), live[b].clone());
        let dist = |s: [usize; 3], t: [usize; 3]| (s[0] as f64 - t[0] as f64).hypot(s[1] as f64 - t[1] as f64);
        let mut best = (ca.start(), ca.end());
        for s in [ca.start(), cb.start()] {
            for t in [ca.end(), cb.end()] {
                if dist(s, t) > dist(best.0, best.1) {
                    best = (s, t);
                }
            }
        }
        let drop_src = if best.0 == ca.start() { cb.start() } else { ca.start() };
        let drop_snk = if best.1 == ca.end() { cb.end() } else { ca.end() };
        take_mass(&mut set, [drop_src[0], drop_src[1]], -1);
        take_mass(&mut set, [drop_snk[0], drop_snk[1]], 1);
        let mut nodes = ca.nodes.clone();
        nodes.extend(cb.nodes.iter().copied());
        nodes[0] = best.0;
        let last = nodes.len() - 1;
        nodes[last] = best.1;
        live.remove(b);
        live[a] = Curve { nodes, flux: ca.flux.max(cb.flux) };
    }
    set
}
