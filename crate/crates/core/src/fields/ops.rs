use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DualField, EdgeField, GridShape, NodeField};
use crate::error::{Error, Result};

/// How the edge field is brought back onto the nodes before taking norms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stencil {
    /// Mean of the two incident edges per axis; missing edges count as zero.
    Averaged,
    /// The edge leaving the node in the positive direction.
    Forward,
}

/// Forward differences `(Du)_{t+1/2} = u_{t+1} - u_t` on every axis.
pub fn gradient(u: &NodeField) -> EdgeField {
    let mut z = EdgeField::zeros(u.shape());
    gradient_into(u, &mut z);
    z
}

pub fn gradient_into(u: &NodeField, z: &mut EdgeField) {
    let shape = u.shape();
    let u = u.values();
    for axis in 0..shape.ndim() {
        let (outer, n, inner) = shape.lines(axis);
        let ne = shape.edge_len(axis);
        let comp = z.component_mut(axis);
        for o in 0..outer {
            for t in 0..ne {
                let lo = (o * n + t) * inner;
                let hi = (o * n + (t + 1) % n) * inner;
                let e = (o * ne + t) * inner;
                for r in 0..inner {
                    comp[e + r] = u[hi + r] - u[lo + r];
                }
            }
        }
    }
}

/// `D*`, the adjoint of [`gradient`]: a (negative) divergence with zero flux
/// through the boundary. A unit flow along one edge yields `-1` at its tail
/// and `+1` at its head.
pub fn divergence_adjoint(z: &EdgeField) -> NodeField {
    let mut out = NodeField::zeros(z.shape());
    divergence_adjoint_into(z, &mut out);
    out
}

pub fn divergence_adjoint_into(z: &EdgeField, out: &mut NodeField) {
    let shape = z.shape();
    let out = out.values_mut();
    out.fill(0.0);
    for axis in 0..shape.ndim() {
        let (outer, n, inner) = shape.lines(axis);
        let ne = shape.edge_len(axis);
        let comp = z.component(axis);
        for o in 0..outer {
            for t in 0..ne {
                let lo = (o * n + t) * inner;
                let hi = (o * n + (t + 1) % n) * inner;
                let e = (o * ne + t) * inner;
                for r in 0..inner {
                    let v = comp[e + r];
                    out[hi + r] += v;
                    out[lo + r] -= v;
                }
            }
        }
    }
}

/// The operator `A` bringing edge values onto nodes.
pub fn average(z: &EdgeField, stencil: Stencil) -> DualField {
    let mut p = DualField::zeros(z.shape());
    average_into(z, stencil, &mut p);
    p
}

pub fn average_into(z: &EdgeField, stencil: Stencil, p: &mut DualField) {
    let shape = z.shape();
    let d = shape.ndim();
    let p = p.values_mut();
    for axis in 0..d {
        let (outer, n, inner) = shape.lines(axis);
        let ne = shape.edge_len(axis);
        let periodic = shape.is_periodic(axis);
        let comp = z.component(axis);
        for o in 0..outer {
            for t in 0..n {
                let node = (o * n + t) * inner;
                let next = (t < ne).then(|| (o * ne + t) * inner);
                let prev = match stencil {
                    Stencil::Forward => None,
                    Stencil::Averaged if t > 0 => Some((o * ne + t - 1) * inner),
                    Stencil::Averaged if periodic => Some((o * ne + n - 1) * inner),
                    Stencil::Averaged => None,
                };
                let w = match stencil {
                    Stencil::Forward => 1.0,
                    Stencil::Averaged => 0.5,
                };
                for r in 0..inner {
                    let mut v = 0.0;
                    if let Some(e) = next {
                        v += comp[e + r];
                    }
                    if let Some(e) = prev {
                        v += comp[e + r];
                    }
                    p[(node + r) * d + axis] = w * v;
                }
            }
        }
    }
}

/// `A*`, the exact adjoint of [`average`].
pub fn average_adjoint(p: &DualField, stencil: Stencil) -> EdgeField {
    let mut z = EdgeField::zeros(p.shape());
    average_adjoint_into(p, stencil, &mut z);
    z
}

pub fn average_adjoint_into(p: &DualField, stencil: Stencil, z: &mut EdgeField) {
    let shape = p.shape();
    let d = shape.ndim();
    let p = p.values();
    for axis in 0..d {
        let (outer, n, inner) = shape.lines(axis);
        let ne = shape.edge_len(axis);
        let comp = z.component_mut(axis);
        for o in 0..outer {
            for t in 0..ne {
                let lo = (o * n + t) * inner;
                let hi = (o * n + (t + 1) % n) * inner;
                let e = (o * ne + t) * inner;
                match stencil {
                    Stencil::Forward => {
                        for r in 0..inner {
                            comp[e + r] = p[(lo + r) * d + axis];
                        }
                    }
                    Stencil::Averaged => {
                        for r in 0..inner {
                            comp[e + r] = 0.5 * (p[(lo + r) * d + axis] + p[(hi + r) * d + axis]);
                        }
                    }
                }
            }
        }
    }
}

/// Result of the power iteration on `A*A`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorNorm {
    /// Converged estimate of the largest singular value of `A`.
    pub estimate: f64,
    /// `estimate` with a 1% safety margin; use this for step sizes.
    pub bound: f64,
    pub iterations: usize,
}

const NORM_REL_TOL: f64 = 1e-6;
const NORM_MARGIN: f64 = 1.01;
const NORM_MAX_ITER: usize = 20_000;

/// Estimate `||A||` by power iteration on `A*A` from a fixed pseudo-random start.
pub fn operator_norm(shape: GridShape, stencil: Stencil) -> Result<OperatorNorm> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut z = EdgeField::zeros(shape);
    z.values_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let mut p = DualField::zeros(shape);
    let mut w = EdgeField::zeros(shape);

    let mut lambda = 0.0f64;
    let mut change = f64::INFINITY;
    for it in 1..=NORM_MAX_ITER {
        let nz = z.norm2();
        z.scale(1.0 / nz);
        average_into(&z, stencil, &mut p);
        average_adjoint_into(&p, stencil, &mut w);
        let next = w.dot(&z);
        change = (next - lambda).abs() / next.max(f64::MIN_POSITIVE);
        lambda = next;
        std::mem::swap(&mut z, &mut w);
        if it > 1 && change <= NORM_REL_TOL {
            let estimate = lambda.sqrt();
            return Ok(OperatorNorm { estimate, bound: estimate * NORM_MARGIN, iterations: it });
        }
    }
    Err(Error::NormNotConverged { iterations: NORM_MAX_ITER, last_change: change })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn random_edges(shape: GridShape, rng: &mut ChaCha8Rng) -> EdgeField {
        let mut z = EdgeField::zeros(shape);
        z.values_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        z
    }

    fn random_nodes(shape: GridShape, rng: &mut ChaCha8Rng) -> NodeField {
        let v = (0..shape.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        NodeField::from_vec(shape, v).unwrap()
    }

    fn random_dual(shape: GridShape, rng: &mut ChaCha8Rng) -> DualField {
        let v = (0..shape.node_count() * shape.ndim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DualField::from_vec(shape, v).unwrap()
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let s = GridShape::plane(4, 4).unwrap();
        let z = gradient(&NodeField::constant(s, 5.0));
        assert!(z.values().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_of_row_ramp() {
        let s = GridShape::plane(3, 3).unwrap();
        let z = gradient(&NodeField::from_fn(s, |c| c[0] as f64));
        assert!(z.component(0).iter().all(|v| *v == 1.0));
        assert!(z.component(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn periodic_gradient_wraps() {
        let s = GridShape::lifted(2, 2, 4).unwrap();
        let z = gradient(&NodeField::from_fn(s, |c| c[2] as f64));
        // three unit steps up, then the wrap edge from 3 back to 0
        assert_eq!(z.get(2, [0, 0, 0]), 1.0);
        assert_eq!(z.get(2, [1, 1, 3]), -3.0);
    }

    #[test]
    fn single_edge_divergence() {
        let s = GridShape::plane(3, 3).unwrap();
        let mut z = EdgeField::zeros(s);
        z.set(0, [1, 1, 0], 1.0);
        let d = divergence_adjoint(&z);
        assert_eq!(d.get([1, 1, 0]), -1.0);
        assert_eq!(d.get([2, 1, 0]), 1.0);
        assert_eq!(d.norm_l1(), 2.0);
        assert_eq!(d.sum(), 0.0);
        assert_eq!(divergence_adjoint(&EdgeField::zeros(s)).norm_inf(), 0.0);
    }

    #[test]
    fn adjoint_pairs_on_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shapes = [
            GridShape::plane(8, 8).unwrap(),
            GridShape::plane(33, 17).unwrap(),
            GridShape::volume(8, 8, 6).unwrap(),
            GridShape::lifted(16, 16, 8).unwrap(),
        ];
        for s in shapes {
            let u = random_nodes(s, &mut rng);
            let z = random_edges(s, &mut rng);
            let p = random_dual(s, &mut rng);
            let lhs = gradient(&u).dot(&z);
            let rhs = u.dot(&divergence_adjoint(&z));
            assert!((lhs - rhs).abs() <= 1e-12 * (u.norm2() * z.norm2() + 1.0), "{s}");
            for st in [Stencil::Averaged, Stencil::Forward] {
                let lhs = average(&z, st).dot(&p);
                let rhs = z.dot(&average_adjoint(&p, st));
                assert!((lhs - rhs).abs() <= 1e-12 * (z.norm2() * p.norm2() + 1.0), "{s} {st:?}");
            }
            assert!(divergence_adjoint(&z).sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn row_flow_averaging_halves_row_ends() {
        let s = GridShape::plane(5, 5).unwrap();
        let mut z = EdgeField::zeros(s);
        for i in 0..4 {
            z.set(0, [i, 2, 0], 1.0);
        }
        let p = average(&z, Stencil::Averaged);
        for i in 0..5 {
            let n = s.index([i, 2, 0]);
            let want = if i == 0 || i == 4 { 0.5 } else { 1.0 };
            assert_eq!(p.node(n)[0], want);
            assert_eq!(p.node(n)[1], 0.0);
        }
        assert_eq!(average(&EdgeField::zeros(s), Stencil::Averaged).norm2(), 0.0);
    }

    #[test]
    fn delta_dual_spreads_to_incident_edges() {
        let s = GridShape::plane(5, 5).unwrap();
        let mut p = DualField::zeros(s);
        p.node_mut(s.index([2, 2, 0])).copy_from_slice(&[1.0, 1.0]);
        let z = average_adjoint(&p, Stencil::Averaged);
        assert_eq!(z.get(0, [1, 2, 0]), 0.5);
        assert_eq!(z.get(0, [2, 2, 0]), 0.5);
        assert_eq!(z.get(1, [2, 1, 0]), 0.5);
        assert_eq!(z.get(1, [2, 2, 0]), 0.5);
        assert_eq!(z.norm_l1(), 2.0);
        assert_eq!(average_adjoint(&DualField::zeros(s), Stencil::Averaged).norm2(), 0.0);
    }

    fn dense_norm(shape: GridShape, st: Stencil) -> f64 {
        let cols: usize = (0..shape.ndim()).map(|a| shape.edge_count(a)).sum();
        let rows = shape.node_count() * shape.ndim();
        let mut m = DMatrix::<f64>::zeros(rows, cols);
        let mut col = 0;
        for a in 0..shape.ndim() {
            for e in 0..shape.edge_count(a) {
                let mut z = EdgeField::zeros(shape);
                z.component_mut(a)[e] = 1.0;
                let p = average(&z, st);
                for (r, v) in p.values().iter().enumerate() {
                    m[(r, col)] = *v;
                }
                col += 1;
            }
        }
        m.singular_values().max()
    }

    #[test]
    fn operator_norm_matches_dense_svd() {
        let s = GridShape::plane(6, 6).unwrap();
        let avg = operator_norm(s, Stencil::Averaged).unwrap();
        let exact = dense_norm(s, Stencil::Averaged);
        assert!(avg.estimate > 0.0 && avg.bound <= 1.01);
        assert!((avg.estimate - exact).abs() <= 1e-3 * exact, "{} vs {exact}", avg.estimate);
        assert!(avg.bound >= exact);

        let fwd = operator_norm(s, Stencil::Forward).unwrap();
        let exact = dense_norm(s, Stencil::Forward);
        assert!(fwd.bound <= 2f64.sqrt() * 1.01);
        assert!(fwd.bound >= exact);
        // the forward stencil only selects edges
        assert!((fwd.estimate - 1.0).abs() <= 1e-6);
    }
}
