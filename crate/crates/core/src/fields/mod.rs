//! Grid geometry, staggered fields and the discrete operators acting on them.
//!
//! Scalars live on nodes. A vector field lives on the staggered edges: the
//! edge between node `t` and node `t + 1` along some axis is stored at index
//! `t` of that axis' component array, so the component along axis `a` has one
//! entry fewer along `a` than the node grid. On the periodic orientation axis
//! of a lifted grid the last edge wraps from `K - 1` back to `0` and the
//! component keeps its full length.

mod dump;
mod ops;
mod shape;

pub use dump::{read_binary, read_text, voxel_dump, write_binary, write_text, BinaryHeader, FieldData};
pub use ops::{
    average, average_adjoint, average_adjoint_into, average_into, divergence_adjoint, divergence_adjoint_into,
    gradient, gradient_into, operator_norm, OperatorNorm, Stencil,
};
pub use shape::{GridMode, GridShape};

use crate::error::{Error, Result};

/// One real value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeField {
    shape: GridShape,
    values: Vec<f64>,
}

impl NodeField {
    pub fn zeros(shape: GridShape) -> Self {
        Self { shape, values: vec![0.0; shape.node_count()] }
    }

    pub fn constant(shape: GridShape, value: f64) -> Self {
        Self { shape, values: vec![value; shape.node_count()] }
    }

    pub fn from_vec(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {} grid with {} nodes",
                values.len(),
                shape,
                shape.node_count()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut([usize; 3]) -> f64) -> Self {
        let values = (0..shape.node_count()).map(|n| f(shape.coords(n))).collect();
        Self { shape, values }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, coords: [usize; 3]) -> f64 {
        self.values[self.shape.index(coords)]
    }

    pub fn set(&mut self, coords: [usize; 3], v: f64) {
        let i = self.shape.index(coords);
        self.values[i] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn dot(&self, other: &NodeField) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Real values on the staggered edges, one array per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    shape: GridShape,
    comps: Vec<Vec<f64>>,
}

impl EdgeField {
    pub fn zeros(shape: GridShape) -> Self {
        let comps = (0..shape.ndim()).map(|a| vec![0.0; shape.edge_count(a)]).collect();
        Self { shape, comps }
    }

    pub fn from_components(shape: GridShape, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != shape.ndim() {
            return Err(Error::ShapeMismatch(format!("{} components for a {}-axis grid", comps.len(), shape.ndim())));
        }
        for (a, c) in comps.iter().enumerate() {
            if c.len() != shape.edge_count(a) {
                return Err(Error::ShapeMismatch(format!(
                    "axis {a} component has {} entries, expected {}",
                    c.len(),
                    shape.edge_count(a)
                )));
            }
        }
        Ok(Self { shape, comps })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comps[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.comps
    }

    /// Flat index of the edge leaving node `coords` in the positive `axis`
    /// direction, if that edge exists.
    pub fn edge_index(&self, axis: usize, coords: [usize; 3]) -> Option<usize> {
        if coords[axis] >= self.shape.edge_len(axis) {
            return None;
        }
        let d = self.shape.edge_dims(axis);
        Some((coords[0] * d[1] + coords[1]) * d[2] + coords[2])
    }

    /// Value on the edge leaving `coords` along `+axis`; zero outside the domain.
    pub fn get(&self, axis: usize, coords: [usize; 3]) -> f64 {
        self.edge_index(axis, coords).map_or(0.0, |e| self.comps[axis][e])
    }

    pub fn set(&mut self, axis: usize, coords: [usize; 3], v: f64) {
        let e = self.edge_index(axis, coords).unwrap_or_else(|| panic!("no edge along axis {axis} at {coords:?}"));
        self.comps[axis][e] = v;
    }

    pub fn add(&mut self, axis: usize, coords: [usize; 3], v: f64) {
        let e = self.edge_index(axis, coords).unwrap_or_else(|| panic!("no edge along axis {axis} at {coords:?}"));
        self.comps[axis][e] += v;
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.comps.iter().flatten()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.comps.iter_mut().flatten()
    }

    pub fn dot(&self, other: &EdgeField) -> f64 {
        self.comps.iter().zip(&other.comps).map(|(a, b)| dot(a, b)).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.values().map(|v| v.abs()).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &EdgeField) {
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// A small dense vector per node: one entry per grid axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DualField {
    shape: GridShape,
    values: Vec<f64>,
}

impl DualField {
    pub fn zeros(shape: GridShape) -> Self {
        Self { shape, values: vec![0.0; shape.node_count() * shape.ndim()] }
    }

    pub fn from_vec(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.node_count() * shape.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a dual field on {} ({} per node)",
                values.len(),
                shape,
                shape.ndim()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Vector dimension at each node.
    pub fn dim(&self) -> usize {
        self.shape.ndim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, n: usize) -> &[f64] {
        let d = self.dim();
        &self.values[n * d..(n + 1) * d]
    }

    pub fn node_mut(&mut self, n: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.values[n * d..(n + 1) * d]
    }

    pub fn nodes(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim())
    }

    pub fn dot(&self, other: &DualField) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
