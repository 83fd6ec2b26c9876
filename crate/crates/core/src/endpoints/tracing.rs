//! Greedy flow decomposition of a feasible field into source-to-sink paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{EdgeField, GridShape, NodeField};

/// Paths and residual edges carrying less than this are ignored.
pub const FLUX_TOL: f64 = 1e-6;

/// A node polyline from a source (`mu < 0`) to a sink (`mu > 0`) and the flux
/// it carries. Planar curves have a zero third coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub nodes: Vec<[usize; 3]>,
    pub flux: f64,
}

impl Curve {
    pub fn start(&self) -> [usize; 3] {
        self.nodes[0]
    }

    pub fn end(&self) -> [usize; 3] {
        *self.nodes.last().expect("curves are never empty")
    }

    /// Euclidean length of the polyline in the first two coordinates.
    pub fn planar_length(&self) -> f64 {
        self.nodes.windows(2).map(|w| (w[1][0] as f64 - w[0][0] as f64).hypot(w[1][1] as f64 - w[0][1] as f64)).sum()
    }

    /// Drop the orientation coordinate of a lifted curve, collapsing repeats.
    pub fn to_planar(&self) -> Curve {
        let mut nodes: Vec<[usize; 3]> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let p = [n[0], n[1], 0];
            if nodes.last() != Some(&p) {
                nodes.push(p);
            }
        }
        Curve { nodes, flux: self.flux }
    }
}

/// One outgoing move: edge (axis, flat edge index), its sign, and the target.
#[derive(Clone, Copy)]
struct Hop {
    axis: usize,
    edge: usize,
    forward: bool,
    to: usize,
}

fn outgoing(shape: GridShape, r: &EdgeField, n: usize, mut visit: impl FnMut(Hop, f64)) {
    let c = shape.coords(n);
    for axis in 0..shape.ndim() {
        let len = shape.dim(axis);
        if let Some(edge) = r.edge_index(axis, c) {
            let v = r.component(axis)[edge];
            if v > FLUX_TOL {
                let mut t = c;
                t[axis] = (c[axis] + 1) % len;
                visit(Hop { axis, edge, forward: true, to: shape.index(t) }, v);
            }
        }
        let prev = if c[axis] > 0 {
            Some(c[axis] - 1)
        } else if shape.is_periodic(axis) {
            Some(len - 1)
        } else {
            None
        };
        if let Some(pv) = prev {
            let mut t = c;
            t[axis] = pv;
            let edge = r.edge_index(axis, t).expect("predecessor edge exists");
            let v = r.component(axis)[edge];
            if v < -FLUX_TOL {
                visit(Hop { axis, edge, forward: false, to: shape.index(t) }, -v);
            }
        }
    }
}

fn flux_of(r: &EdgeField, a: Hop) -> f64 {
    let v = r.component(a.axis)[a.edge];
    if a.forward {
        v
    } else {
        -v
    }
}

fn push_back(r: &mut EdgeField, arcs: &[Hop], amount: f64) {
    for a in arcs {
        let e = &mut r.component_mut(a.axis)[a.edge];
        if a.forward {
            *e -= amount;
        } else {
            *e += amount;
        }
    }
}

/// Decomposes `z` into paths from the negative to the positive entries of
/// `mu`, always following the outgoing edge of largest remaining flux.
/// Flow cycles met on the way are cancelled. Returns the paths and the
/// residual field.
pub fn trace_curves_with_residual(z: &EdgeField, mu: &NodeField) -> Result<(Vec<Curve>, EdgeField)> {
    let shape = z.shape();
    if mu.shape() != shape {
        return Err(Error::ShapeMismatch(format!("field on {shape}, masses on {}", mu.shape())));
    }
    let mut r = z.clone();
    let mut supply: Vec<f64> = mu.values().iter().map(|m| (-m).max(0.0)).collect();
    let mut demand: Vec<f64> = mu.values().iter().map(|m| m.max(0.0)).collect();
    // a path never repeats a node and every cancelled cycle empties at least
    // one edge, so more cancellations than edges means the bookkeeping is broken
    let limit = (0..shape.ndim()).map(|a| shape.edge_count(a)).sum::<usize>();
    let mut cancelled = 0usize;
    let mut curves = Vec::new();

    for src in 0..shape.node_count() {
        while supply[src] > FLUX_TOL {
            let mut path = vec![src];
            let mut arcs: Vec<Hop> = Vec::new();
            let mut pos_in_path = std::collections::HashMap::from([(src, 0usize)]);
            let reached = loop {
                let cur = *path.last().expect("nonempty");
                if cur != src && demand[cur] > FLUX_TOL {
                    break true;
                }
                let mut best: Option<(Hop, f64)> = None;
                outgoing(shape, &r, cur, |a, f| {
                    if best.is_none_or(|(_, bf)| f > bf) {
                        best = Some((a, f));
                    }
                });
                let Some((arc, _)) = best else { break false };
                if let Some(&at) = pos_in_path.get(&arc.to) {
                    // cancel the cycle closed by this arc
                    cancelled += 1;
                    if cancelled > limit {
                        return Err(Error::TraceCycle { limit });
                    }
                    let mut cycle = arcs[at..].to_vec();
                    cycle.push(arc);
                    let b = cycle.iter().map(|&a| flux_of(&r, a)).fold(f64::INFINITY, f64::min);
                    push_back(&mut r, &cycle, b);
                    for n in path.drain(at + 1..) {
                        pos_in_path.remove(&n);
                    }
                    arcs.truncate(at);
                    continue;
                }
                pos_in_path.insert(arc.to, path.len());
                path.push(arc.to);
                arcs.push(arc);
            };
            if !reached {
                break;
            }
            let end = *path.last().expect("nonempty");
            let b = arcs.iter().map(|&a| flux_of(&r, a)).fold(supply[src].min(demand[end]), f64::min);
            push_back(&mut r, &arcs, b);
            supply[src] -= b;
            demand[end] -= b;
            curves.push(Curve { nodes: path.iter().map(|&n| shape.coords(n)).collect(), flux: b });
        }
    }
    Ok((curves, r))
}

/// [`trace_curves_with_residual`] without the residual.
pub fn trace_curves(z: &EdgeField, mu: &NodeField) -> Result<Vec<Curve>> {
    Ok(trace_curves_with_residual(z, mu)?.0)
}

/// Merge paths sharing both endpoints: the heaviest path represents the
/// group and the fluxes add up. Groups below `min_flux` are dropped. Output
/// is sorted by decreasing flux.
pub fn group_curves(curves: &[Curve], min_flux: f64) -> Vec<Curve> {
    let mut groups: Vec<(Curve, f64)> = Vec::new();
    for c in curves {
        match groups.iter_mut().find(|(g, _)| g.start() == c.start() && g.end() == c.end()) {
            Some((g, total)) => {
                *total += c.flux;
                if c.flux > g.flux {
                    *g = c.clone();
                }
            }
            None => groups.push((c.clone(), c.flux)),
        }
    }
    let mut out: Vec<Curve> = groups
        .into_iter()
        .filter(|(_, t)| *t >= min_flux)
        .map(|(mut g, t)| {
            g.flux = t;
            g
        })
        .collect();
    out.sort_by(|a, b| b.flux.total_cmp(&a.flux));
    out
}
