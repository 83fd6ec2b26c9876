use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which kind of grid a [`GridShape`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    /// Plain 2D image grid.
    Plane,
    /// 3D volume, Neumann on every axis.
    Volume,
    /// Image plane times a periodic orientation axis.
    Lifted,
}

/// Node grid of an image, a volume, or a lifted image.
///
/// Axis 0 indexes rows, axis 1 columns, and axis 2 (when present) depth or
/// orientation. Node storage is row-major with axis 2 innermost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    n_rows: usize,
    n_cols: usize,
    n_depth: Option<usize>,
    n_angles: Option<usize>,
}

impl GridShape {
    pub fn new(n_rows: usize, n_cols: usize, n_depth: Option<usize>, n_angles: Option<usize>) -> Result<Self> {
        if n_depth.is_some() && n_angles.is_some() {
            return Err(Error::InvalidShape("a grid cannot be both a volume and a lifted grid".into()));
        }
        let third = n_depth.or(n_angles);
        for (name, n) in [("rows", Some(n_rows)), ("cols", Some(n_cols)), ("third axis", third)] {
            if let Some(n) = n {
                if n < 2 {
                    return Err(Error::InvalidShape(format!("{name} must be at least 2, got {n}")));
                }
            }
        }
        Ok(Self { n_rows, n_cols, n_depth, n_angles })
    }

    pub fn plane(n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::new(n_rows, n_cols, None, None)
    }

    pub fn volume(n_rows: usize, n_cols: usize, n_depth: usize) -> Result<Self> {
        Self::new(n_rows, n_cols, Some(n_depth), None)
    }

    pub fn lifted(n_rows: usize, n_cols: usize, n_angles: usize) -> Result<Self> {
        Self::new(n_rows, n_cols, None, Some(n_angles))
    }

    pub fn mode(&self) -> GridMode {
        match (self.n_depth, self.n_angles) {
            (Some(_), _) => GridMode::Volume,
            (_, Some(_)) => GridMode::Lifted,
            _ => GridMode::Plane,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_depth(&self) -> Option<usize> {
        self.n_depth
    }

    pub fn n_angles(&self) -> Option<usize> {
        self.n_angles
    }

    /// Number of axes, 2 or 3.
    pub fn ndim(&self) -> usize {
        if self.n_depth.is_some() || self.n_angles.is_some() {
            3
        } else {
            2
        }
    }

    /// Node counts per axis; a plane reports a trailing 1.
    pub fn dims(&self) -> [usize; 3] {
        [self.n_rows, self.n_cols, self.n_depth.or(self.n_angles).unwrap_or(1)]
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.dims()[axis]
    }

    pub fn node_count(&self) -> usize {
        self.dims().iter().product()
    }

    /// Only the orientation axis of a lifted grid wraps around.
    pub fn is_periodic(&self, axis: usize) -> bool {
        axis == 2 && self.n_angles.is_some()
    }

    /// Number of staggered edges along `axis` on one grid line.
    pub fn edge_len(&self, axis: usize) -> usize {
        let n = self.dim(axis);
        if self.is_periodic(axis) {
            n
        } else {
            n - 1
        }
    }

    /// Array dims of the staggered component along `axis`.
    pub fn edge_dims(&self, axis: usize) -> [usize; 3] {
        let mut d = self.dims();
        d[axis] = self.edge_len(axis);
        d
    }

    pub fn edge_count(&self, axis: usize) -> usize {
        self.edge_dims(axis).iter().product()
    }

    /// Split the node array around `axis` as `(outer, len, inner)`.
    pub fn lines(&self, axis: usize) -> (usize, usize, usize) {
        let d = self.dims();
        let outer: usize = d[..axis].iter().product();
        let inner: usize = d[axis + 1..].iter().product();
        (outer, d[axis], inner)
    }

    pub fn index(&self, coords: [usize; 3]) -> usize {
        let d = self.dims();
        (coords[0] * d[1] + coords[1]) * d[2] + coords[2]
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let d = self.dims();
        let k = index % d[2];
        let rest = index / d[2];
        [rest / d[1], rest % d[1], k]
    }

    pub fn contains(&self, coords: [usize; 3]) -> bool {
        let d = self.dims();
        coords.iter().zip(d.iter()).all(|(c, n)| c < n)
    }

    /// The image-plane shape underneath a volume or lifted grid.
    pub fn planar(&self) -> GridShape {
        GridShape { n_rows: self.n_rows, n_cols: self.n_cols, n_depth: None, n_angles: None }
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.mode() {
            GridMode::Plane => write!(f, "{}x{}", self.n_rows, self.n_cols),
            GridMode::Volume => write!(f, "{}x{}x{}", self.n_rows, self.n_cols, self.dim(2)),
            GridMode::Lifted => write!(f, "{}x{}x{}-lifted", self.n_rows, self.n_cols, self.dim(2)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(GridShape::plane(1, 5).is_err());
        assert!(GridShape::volume(4, 4, 1).is_err());
        assert!(GridShape::new(4, 4, Some(3), Some(8)).is_err());
    }

    #[test]
    fn staggered_sizes() {
        let s = GridShape::lifted(5, 4, 6).unwrap();
        assert_eq!(s.edge_dims(0), [4, 4, 6]);
        assert_eq!(s.edge_dims(1), [5, 3, 6]);
        assert_eq!(s.edge_dims(2), [5, 4, 6]);
        let v = GridShape::volume(5, 4, 6).unwrap();
        assert_eq!(v.edge_dims(2), [5, 4, 5]);
        let p = GridShape::plane(3, 7).unwrap();
        assert_eq!(p.ndim(), 2);
        assert_eq!(p.edge_count(0), 14);
        assert_eq!(p.edge_count(1), 18);
    }

    #[test]
    fn index_round_trip() {
        let s = GridShape::volume(3, 4, 5).unwrap();
        for n in 0..s.node_count() {
            assert_eq!(s.index(s.coords(n)), n);
        }
    }
}
