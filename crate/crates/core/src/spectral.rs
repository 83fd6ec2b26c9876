//! Spectral inversion of the grid Laplacian `D*D` and the Euclidean
//! projection onto `{z : D*z = mu}`.
//!
//! With the staggered `D`, the node Laplacian on a Neumann axis of length `n`
//! is diagonalized by the DCT-II basis `cos(pi k (t + 1/2) / n)` with
//! eigenvalue `2 - 2 cos(pi k / n)`; on the periodic orientation axis the
//! Fourier basis has eigenvalue `2 - 2 cos(2 pi k / n)`. The transform is
//! separable, so the eigenvalue of a multi-frequency is the sum over axes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustdct::{DctPlanner, TransformType2And3};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::fields::{divergence_adjoint_into, gradient_into, EdgeField, GridShape, NodeField};

/// Relative tolerance on the total mass of a Poisson right-hand side.
pub const COMPATIBILITY_TOL: f64 = 1e-9;

/// Eigen-decomposition of `D*D` for one grid shape.
pub struct LaplacianSpectrum {
    shape: GridShape,
    eigenvalues: Vec<f64>,
    dcts: Vec<Option<Arc<dyn TransformType2And3<f64>>>>,
    fft: Option<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
    scale: f64,
}

impl std::fmt::Debug for LaplacianSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LaplacianSpectrum").field("shape", &self.shape).finish_non_exhaustive()
    }
}

fn axis_eigenvalue(n: usize, k: usize, periodic: bool) -> f64 {
    let s = if periodic {
        (std::f64::consts::PI * k as f64 / n as f64).sin()
    } else {
        (std::f64::consts::PI * k as f64 / (2 * n) as f64).sin()
    };
    4.0 * s * s
}

impl LaplacianSpectrum {
    pub fn new(shape: GridShape) -> Self {
        let nd = shape.ndim();
        let dims = shape.dims();
        let mut planner = DctPlanner::new();
        let mut dcts = Vec::with_capacity(nd);
        let mut scale = 1.0;
        let mut fft = None;
        for a in 0..nd {
            if shape.is_periodic(a) {
                let mut fp = FftPlanner::new();
                fft = Some((fp.plan_fft_forward(dims[a]), fp.plan_fft_inverse(dims[a])));
                dcts.push(None);
                scale /= dims[a] as f64;
            } else {
                dcts.push(Some(planner.plan_dct2(dims[a])));
                scale *= 2.0 / dims[a] as f64;
            }
        }
        let eigenvalues = (0..shape.node_count())
            .map(|n| {
                let c = shape.coords(n);
                (0..nd).map(|a| axis_eigenvalue(dims[a], c[a], shape.is_periodic(a))).sum()
            })
            .collect();
        Self { shape, eigenvalues, dcts, fft, scale }
    }

    /// Shared spectrum for `shape`, built on first use.
    pub fn cached(shape: GridShape) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<GridShape, Arc<LaplacianSpectrum>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(shape).or_insert_with(|| Arc::new(Self::new(shape))).clone()
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Eigenvalues of `D*D`, indexed like the nodes by frequency.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn dct_axis(&self, data: &mut [f64], axis: usize, inverse: bool) {
        let Some(dct) = &self.dcts[axis] else { return };
        let (outer, n, inner) = self.shape.lines(axis);
        let mut line = vec![0.0; n];
        for o in 0..outer {
            for r in 0..inner {
                for t in 0..n {
                    line[t] = data[(o * n + t) * inner + r];
                }
                if inverse {
                    dct.process_dct3(&mut line);
                } else {
                    dct.process_dct2(&mut line);
                }
                for t in 0..n {
                    data[(o * n + t) * inner + r] = line[t];
                }
            }
        }
    }

    /// Apply `f(eigenvalue, coefficient)` in the eigenbasis: forward
    /// transform, per-frequency map, inverse transform, normalization.
    fn apply_diagonal(&self, input: &[f64], out: &mut [f64], f: impl Fn(f64) -> f64) {
        out.copy_from_slice(input);
        let nd = self.shape.ndim();
        for a in 0..nd {
            self.dct_axis(out, a, false);
        }
        match &self.fft {
            Some((fwd, inv)) => {
                let mut buf: Vec<Complex<f64>> = out.iter().map(|&v| Complex::new(v, 0.0)).collect();
                fwd.process(&mut buf);
                for (c, &lam) in buf.iter_mut().zip(&self.eigenvalues) {
                    *c *= f(lam);
                }
                inv.process(&mut buf);
                for (o, c) in out.iter_mut().zip(&buf) {
                    *o = c.re;
                }
            }
            None => {
                for (c, &lam) in out.iter_mut().zip(&self.eigenvalues) {
                    *c *= f(lam);
                }
            }
        }
        for a in (0..nd).rev() {
            self.dct_axis(out, a, true);
        }
        for v in out.iter_mut() {
            *v *= self.scale;
        }
    }

    /// Pseudo-inverse of `D*D` without the compatibility check: the mean of
    /// `rhs` is discarded and the result has zero mean.
    pub(crate) fn pseudo_inverse_into(&self, rhs: &[f64], out: &mut [f64]) {
        // the zero eigenvalue is exactly 0.0 and only at the constant mode
        self.apply_diagonal(rhs, out, |lam| if lam > 0.0 { 1.0 / lam } else { 0.0 });
    }

    /// Zero-mean `u` with `D*D u = rhs`. `rhs` must sum to zero.
    pub fn solve_poisson(&self, rhs: &NodeField) -> Result<NodeField> {
        check_shape(self.shape, rhs.shape())?;
        check_compatible(rhs)?;
        let mut out = NodeField::zeros(self.shape);
        self.pseudo_inverse_into(rhs.values(), out.values_mut());
        Ok(out)
    }
}

fn check_shape(expected: GridShape, got: GridShape) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch(format!("expected a {expected} field, got {got}")));
    }
    Ok(())
}

fn check_compatible(mu: &NodeField) -> Result<()> {
    let mass = mu.sum();
    if mass.abs() > COMPATIBILITY_TOL * mu.norm_l1() {
        return Err(Error::IncompatibleRhs { residual_mass: mass });
    }
    Ok(())
}

/// Zero-mean `u` with `D*D u = rhs` on the grid of `rhs`.
pub fn solve_poisson(rhs: &NodeField) -> Result<NodeField> {
    LaplacianSpectrum::cached(rhs.shape()).solve_poisson(rhs)
}

/// Euclidean projection onto `{z : D*z = mu}`, with reusable scratch space.
pub struct DivergenceProjector {
    spectrum: Arc<LaplacianSpectrum>,
    residual: NodeField,
    potential: NodeField,
    correction: EdgeField,
}

impl DivergenceProjector {
    pub fn new(shape: GridShape) -> Self {
        Self {
            spectrum: LaplacianSpectrum::cached(shape),
            residual: NodeField::zeros(shape),
            potential: NodeField::zeros(shape),
            correction: EdgeField::zeros(shape),
        }
    }

    pub fn shape(&self) -> GridShape {
        self.spectrum.shape()
    }

    /// `z <- z + D (D*D)^+ (mu - D*z)`.
    pub fn project_in_place(&mut self, z: &mut EdgeField, mu: &NodeField) -> Result<()> {
        let shape = self.shape();
        check_shape(shape, z.shape())?;
        check_shape(shape, mu.shape())?;
        check_compatible(mu)?;
        divergence_adjoint_into(z, &mut self.residual);
        for (r, m) in self.residual.values_mut().iter_mut().zip(mu.values()) {
            *r = m - *r;
        }
        self.spectrum.pseudo_inverse_into(self.residual.values(), self.potential.values_mut());
        gradient_into(&self.potential, &mut self.correction);
        z.axpy(1.0, &self.correction);
        Ok(())
    }

    /// Orthogonal projection of `w` onto `range(D)`: `D (D*D)^+ D* w`.
    pub fn range_component(&mut self, w: &EdgeField) -> Result<EdgeField> {
        check_shape(self.shape(), w.shape())?;
        divergence_adjoint_into(w, &mut self.residual);
        self.spectrum.pseudo_inverse_into(self.residual.values(), self.potential.values_mut());
        let mut out = EdgeField::zeros(self.shape());
        gradient_into(&self.potential, &mut out);
        Ok(out)
    }
}

/// Returns `z + D (D*D)^+ (mu - D*z)`, the nearest field with `D*z = mu`.
pub fn project_divergence(z: &EdgeField, mu: &NodeField) -> Result<EdgeField> {
    let mut out = z.clone();
    DivergenceProjector::new(z.shape()).project_in_place(&mut out, mu)?;
    Ok(out)
}
