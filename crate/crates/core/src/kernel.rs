//! Finite-rank positive contraction kernels in spectral form.
//!
//! A kernel is stored as eigenvalues `λ_k ∈ (0, 1]` and orthonormal
//! eigenfunctions. On a discrete space an eigenfunction is a vector of site
//! values; on an interval it is a coefficient vector in the orthonormal
//! Legendre basis of the interval, so every inner product the crate needs is
//! a polynomial integral that Gauss-Legendre evaluates exactly.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{domain, validation, Error, Result};
use crate::ground::{legendre_values, Cell, FunctionRep, GroundSpace, Quadrature, DEFAULT_QUADRATURE_ORDER};
use crate::linalg::{self, jacobi_eigen};

/// Default maximum Legendre degree for continuous eigenfunctions.
pub const DEFAULT_DEGREE: usize = 32;
/// Roundoff band around `[0, 1]` that is clamped instead of rejected.
pub const EIGEN_CLAMP: f64 = 1e-12;
/// Eigenvalues at or below this are treated as zero when a kernel is built
/// from a matrix.
pub const RANK_TOL: f64 = 1e-12;
const ORTHO_TOL: f64 = 1e-12;

/// Clamps an eigenvalue that is within [`EIGEN_CLAMP`] of `[0, 1]`.
pub fn clamp_eigenvalue(x: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else if (-EIGEN_CLAMP..0.0).contains(&x) {
        Ok(0.0)
    } else if x > 1.0 && x <= 1.0 + EIGEN_CLAMP {
        Ok(1.0)
    } else {
        Err(Error::Validation(format!(
            "eigenvalue {x:.6e} outside [0, 1] beyond roundoff"
        )))
    }
}

/// A location in a ground space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point {
    Site(usize),
    Real(f64),
}

impl From<usize> for Point {
    fn from(s: usize) -> Self {
        Point::Site(s)
    }
}

impl From<f64> for Point {
    fn from(x: f64) -> Self {
        Point::Real(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralKernel {
    space: GroundSpace,
    eigenvalues: Vec<f64>,
    /// Row `k` holds eigenfunction `k`: site values or Legendre coefficients.
    coeffs: Array2<f64>,
}

impl SpectralKernel {
    /// Builds a kernel from eigenvalues and eigenfunctions.
    ///
    /// Eigenfunctions are re-orthonormalized by two-pass Gram-Schmidt when
    /// their Gram matrix deviates from the identity by more than `1e-12`.
    pub fn new(space: GroundSpace, eigenvalues: Vec<f64>, eigenfunctions: Vec<FunctionRep>) -> Result<Self> {
        space.validate()?;
        let mut rows = Vec::with_capacity(eigenfunctions.len());
        for f in eigenfunctions {
            match (&space, f) {
                (GroundSpace::Discrete { .. }, FunctionRep::Vector { values }) => rows.push(values),
                (GroundSpace::Interval { lo, hi }, FunctionRep::Legendre { lo: a, hi: b, coeffs })
                    if *lo == a && *hi == b =>
                {
                    rows.push(coeffs)
                }
                _ => return validation("eigenfunction representation does not match the ground space"),
            }
        }
        SpectralKernel::from_coefficients(space, eigenvalues, rows)
    }

    /// Like [`SpectralKernel::new`] with eigenfunctions given as raw rows of
    /// site values or Legendre coefficients (shorter rows are zero padded).
    pub fn from_coefficients(space: GroundSpace, eigenvalues: Vec<f64>, mut rows: Vec<Vec<f64>>) -> Result<Self> {
        space.validate()?;
        if eigenvalues.len() != rows.len() {
            return validation(format!(
                "{} eigenvalues but {} eigenfunctions",
                eigenvalues.len(),
                rows.len()
            ));
        }
        if eigenvalues.is_empty() {
            return validation("kernel needs rank at least 1");
        }
        if let Some(bad) = eigenvalues.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
            return validation(format!("eigenvalue {bad} outside (0, 1]"));
        }
        let dim = match space {
            GroundSpace::Discrete { size } => {
                if rows.iter().any(|r| r.len() != size) {
                    return validation(format!("discrete eigenfunctions must have {size} entries"));
                }
                size
            }
            GroundSpace::Interval { .. } => rows.iter().map(Vec::len).max().unwrap_or(0).max(1),
        };
        if eigenvalues.len() > dim {
            return validation("rank exceeds the dimension of the function space");
        }
        for r in rows.iter_mut() {
            r.resize(dim, 0.0);
            if r.iter().any(|x| !x.is_finite()) {
                return validation("eigenfunction has non-finite entries");
            }
        }
        let mut deviation: f64 = 0.0;
        for i in 0..rows.len() {
            for j in 0..=i {
                let want = if i == j { 1.0 } else { 0.0 };
                deviation = deviation.max((linalg::dot(&rows[i], &rows[j]) - want).abs());
            }
        }
        if deviation > ORTHO_TOL {
            linalg::orthonormalize(&mut rows)?;
        }
        let r = rows.len();
        let coeffs = Array2::from_shape_vec((r, dim), rows.into_iter().flatten().collect())
            .map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(SpectralKernel {
            space,
            eigenvalues,
            coeffs,
        })
    }

    /// Spectral form of a symmetric kernel matrix on `n` sites.
    ///
    /// Eigenvalues within [`EIGEN_CLAMP`] of `[0, 1]` are clamped; those at
    /// or below [`RANK_TOL`] are dropped. A matrix of rank zero is rejected.
    pub fn from_matrix(k: &Array2<f64>) -> Result<Self> {
        let n = k.nrows();
        if n != k.ncols() {
            return validation("kernel matrix must be square");
        }
        for i in 0..n {
            for j in 0..i {
                if (k[[i, j]] - k[[j, i]]).abs() > 1e-12 * (1.0 + k[[i, j]].abs()) {
                    return validation(format!("kernel matrix not symmetric at ({i},{j})"));
                }
            }
        }
        let eig = jacobi_eigen(k)?;
        let mut values = Vec::new();
        let mut rows = Vec::new();
        for (idx, &l) in eig.values.iter().enumerate() {
            let l = clamp_eigenvalue(l)?;
            if l > RANK_TOL {
                values.push(l);
                rows.push(eig.vectors.column(idx).to_vec());
            }
        }
        if values.is_empty() {
            return validation("kernel matrix has rank zero");
        }
        SpectralKernel::from_coefficients(GroundSpace::discrete(n)?, values, rows)
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Coefficient matrix, one eigenfunction per row.
    pub fn coefficients(&self) -> &Array2<f64> {
        &self.coeffs
    }

    /// Legendre degree of continuous eigenfunctions (`None` when discrete).
    pub fn degree(&self) -> Option<usize> {
        match self.space {
            GroundSpace::Interval { .. } => Some(self.coeffs.ncols() - 1),
            GroundSpace::Discrete { .. } => None,
        }
    }

    pub fn is_projection(&self) -> bool {
        self.eigenvalues.iter().all(|&l| l == 1.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(0.0, f64::max)
    }

    pub fn eigenfunction(&self, k: usize) -> FunctionRep {
        let row = self.coeffs.row(k).to_vec();
        match self.space {
            GroundSpace::Discrete { .. } => FunctionRep::Vector { values: row },
            GroundSpace::Interval { lo, hi } => FunctionRep::Legendre { lo, hi, coeffs: row },
        }
    }

    /// Quadrature order that integrates products of two eigenfunctions (and
    /// of an eigenfunction with a cell polynomial of degree up to `degree+1`)
    /// exactly.
    pub fn quadrature_order(&self) -> usize {
        match self.degree() {
            Some(d) => (d + 2).max(DEFAULT_QUADRATURE_ORDER),
            None => 0,
        }
    }

    /// `φ_k(x)` for all `k`.
    pub fn values_at(&self, x: Point) -> Result<Vec<f64>> {
        match (self.space, x) {
            (GroundSpace::Discrete { size }, Point::Site(s)) => {
                if s >= size {
                    return domain(format!("site {s} outside {size} sites"));
                }
                Ok(self.coeffs.column(s).to_vec())
            }
            (GroundSpace::Interval { lo, hi }, Point::Real(t)) => {
                if !(lo <= t && t <= hi) {
                    return domain(format!("point {t} outside [{lo}, {hi}]"));
                }
                let mut buf = Vec::new();
                legendre_values(lo, hi, t, self.coeffs.ncols() - 1, &mut buf);
                Ok(self.coeffs.rows().into_iter().map(|r| linalg::dot(r.as_slice().unwrap(), &buf)).collect())
            }
            _ => domain("point kind does not match ground space"),
        }
    }

    /// Matrix of eigenfunction values at quadrature nodes, `nodes × rank`.
    pub(crate) fn values_at_nodes(&self, nodes: &[f64]) -> Array2<f64> {
        let GroundSpace::Interval { lo, hi } = self.space else {
            panic!("values_at_nodes on a discrete kernel");
        };
        let r = self.rank();
        let d = self.coeffs.ncols() - 1;
        let mut out = Array2::zeros((nodes.len(), r));
        let mut buf = Vec::new();
        for (q, &x) in nodes.iter().enumerate() {
            legendre_values(lo, hi, x, d, &mut buf);
            for k in 0..r {
                out[[q, k]] = linalg::dot(self.coeffs.row(k).as_slice().unwrap(), &buf);
            }
        }
        out
    }

    /// `K(x, y) = Σ_k λ_k φ_k(x) φ_k(y)`.
    pub fn eval(&self, x: impl Into<Point>, y: impl Into<Point>) -> Result<f64> {
        let fx = self.values_at(x.into())?;
        let fy = self.values_at(y.into())?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(fx.iter().zip(&fy))
            .map(|(l, (a, b))| l * a * b)
            .sum())
    }

    /// Dense kernel matrix of a discrete kernel.
    pub fn matrix(&self) -> Result<Array2<f64>> {
        if !self.space.is_discrete() {
            return domain("kernel matrix requested for a continuous kernel");
        }
        Ok(linalg::scaled_outer(&self.coeffs.t().to_owned(), &self.eigenvalues))
    }

    /// Unscaled cell Gram matrix `M[k,l] = (φ_k, φ_l)_{L²(cell)}`.
    pub fn cell_gram(&self, cell: &Cell) -> Result<Array2<f64>> {
        cell.check_in(&self.space)?;
        if cell.measure() <= 0.0 {
            return domain("cell has zero measure");
        }
        let r = self.rank();
        let mut m = Array2::zeros((r, r));
        match cell {
            Cell::Sites(sites) => {
                for k in 0..r {
                    for l in 0..=k {
                        let s: f64 = sites.iter().map(|&s| self.coeffs[[k, s]] * self.coeffs[[l, s]]).sum();
                        m[[k, l]] = s;
                        m[[l, k]] = s;
                    }
                }
            }
            Cell::Pieces(_) => {
                let quad = Quadrature::for_cell(cell, self.quadrature_order())?;
                let vals = self.values_at_nodes(&quad.nodes);
                for k in 0..r {
                    for l in 0..=k {
                        let s: f64 = quad
                            .weights
                            .iter()
                            .enumerate()
                            .map(|(q, w)| w * vals[[q, k]] * vals[[q, l]])
                            .sum();
                        m[[k, l]] = s;
                        m[[l, k]] = s;
                    }
                }
            }
        }
        Ok(m)
    }

    /// Compression of the kernel to `cell`, in the eigenfunction frame.
    pub fn compress(&self, cell: &Cell) -> Result<CompressedKernel> {
        let m = self.cell_gram(cell)?;
        let r = self.rank();
        let sq: Vec<f64> = self.eigenvalues.iter().map(|l| l.sqrt()).collect();
        let gram = Array2::from_shape_fn((r, r), |(k, l)| sq[k] * m[[k, l]] * sq[l]);
        Ok(CompressedKernel {
            parent: self.clone(),
            cell: cell.clone(),
            gram,
        })
    }

    /// `det[K(x_i, x_j)]`, clamped at zero.
    pub fn intensity_determinant(&self, points: &[Point]) -> Result<Intensity> {
        for i in 0..points.len() {
            for j in 0..i {
                if points[i] == points[j] {
                    return domain("intensity determinant needs pairwise distinct points");
                }
            }
        }
        let vals = points
            .iter()
            .map(|&p| self.values_at(p))
            .collect::<Result<Vec<_>>>()?;
        let k = points.len();
        let m = Array2::from_shape_fn((k, k), |(i, j)| {
            self.eigenvalues
                .iter()
                .enumerate()
                .map(|(q, l)| l * vals[i][q] * vals[j][q])
                .sum()
        });
        let raw = linalg::det(&m);
        Ok(Intensity {
            value: raw.max(0.0),
            raw,
        })
    }

    pub fn to_json(&self) -> KernelJson {
        KernelJson {
            space: self.space,
            eigenvalues: self.eigenvalues.clone(),
            eigenfunctions: self.coeffs.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn from_json(json: &KernelJson) -> Result<Self> {
        SpectralKernel::from_coefficients(json.space, json.eigenvalues.clone(), json.eigenfunctions.clone())
    }
}

/// Serialized kernel: space descriptor, eigenvalues and one coefficient row
/// per eigenfunction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelJson {
    pub space: GroundSpace,
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intensity {
    /// `max(raw, 0)`.
    pub value: f64,
    pub raw: f64,
}

/// `K_A` expressed in the eigenfunction frame:
/// `G[k,l] = √λ_k √λ_l (φ_k, φ_l)_{L²(A)}`.
#[derive(Debug, Clone)]
pub struct CompressedKernel {
    pub parent: SpectralKernel,
    pub cell: Cell,
    pub gram: Array2<f64>,
}

impl CompressedKernel {
    pub fn trace(&self) -> f64 {
        self.gram.diag().sum()
    }

    /// Eigenpairs of the compressed kernel, sorted descending and clamped to
    /// `[0, 1]`.
    pub fn spectrum(&self) -> Result<Vec<(f64, Array1<f64>)>> {
        let eig = jacobi_eigen(&self.gram)?;
        eig.values
            .iter()
            .enumerate()
            .map(|(k, &v)| Ok((clamp_eigenvalue(v)?, eig.vector(k))))
            .collect()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.spectrum()?.into_iter().map(|(v, _)| v).collect())
    }
}

/// Kernel presets used by the CLI and the test matrix.
pub mod presets {
    use super::*;

    /// Diagonal kernel on `p.len()` sites; zero entries contribute no
    /// eigenfunction.
    pub fn diag(p: &[f64]) -> Result<SpectralKernel> {
        let n = p.len();
        let space = GroundSpace::discrete(n)?;
        let mut values = Vec::new();
        let mut rows = Vec::new();
        for (i, &x) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) {
                return validation(format!("diagonal entry {x} outside [0, 1]"));
            }
            if x > 0.0 {
                values.push(x);
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                rows.push(e);
            }
        }
        SpectralKernel::from_coefficients(space, values, rows)
    }

    /// The rank-one projection onto constants on `[0, 1)`.
    pub fn constant_rank1() -> SpectralKernel {
        SpectralKernel::from_coefficients(GroundSpace::unit_interval(), vec![1.0], vec![vec![1.0]])
            .expect("constant kernel is valid")
    }

    /// Real Fourier function `j` on `[0, 1)`: `1`, `√2 cos 2πx`, `√2 sin 2πx`,
    /// `√2 cos 4πx`, ...
    pub fn fourier_function(j: usize, x: f64) -> f64 {
        if j == 0 {
            return 1.0;
        }
        let freq = j.div_ceil(2) as f64;
        let arg = 2.0 * PI * freq * x;
        if j % 2 == 1 {
            2f64.sqrt() * arg.cos()
        } else {
            2f64.sqrt() * arg.sin()
        }
    }

    /// Legendre coefficients (degree `degree`) of the first `count` Fourier
    /// functions on `[0, 1)`.
    pub fn fourier_coefficients(count: usize, degree: usize) -> Vec<Vec<f64>> {
        let cell = Cell::interval(0.0, 1.0).expect("unit cell");
        let quad = Quadrature::for_cell_panels(&cell, 64, 4).expect("quadrature");
        let mut buf = Vec::new();
        let mut rows = vec![vec![0.0; degree + 1]; count];
        for (&x, &w) in quad.nodes.iter().zip(&quad.weights) {
            legendre_values(0.0, 1.0, x, degree, &mut buf);
            for (j, row) in rows.iter_mut().enumerate() {
                let f = fourier_function(j, x);
                for (c, p) in row.iter_mut().zip(&buf) {
                    *c += w * f * p;
                }
            }
        }
        rows
    }

    /// Projection onto the span of the first `rank` Fourier functions, a
    /// finite-rank surrogate of the sine kernel.
    pub fn fourier_projection(rank: usize, degree: usize) -> Result<SpectralKernel> {
        fourier_spectral(&vec![1.0; rank], degree)
    }

    /// Fourier eigenfunctions with arbitrary eigenvalues.
    pub fn fourier_spectral(eigenvalues: &[f64], degree: usize) -> Result<SpectralKernel> {
        if eigenvalues.is_empty() {
            return validation("rank must be at least 1");
        }
        if 2 * eigenvalues.len() > degree {
            return validation("Legendre degree too small for the requested Fourier rank");
        }
        let rows = fourier_coefficients(eigenvalues.len(), degree);
        SpectralKernel::from_coefficients(GroundSpace::unit_interval(), eigenvalues.to_vec(), rows)
    }

    /// Legendre polynomials `p_0..p_{r-1}` on `[0, 1)` as eigenfunctions.
    pub fn legendre_spectral(eigenvalues: &[f64]) -> Result<SpectralKernel> {
        let r = eigenvalues.len();
        let rows = (0..r)
            .map(|k| {
                let mut e = vec![0.0; r];
                e[k] = 1.0;
                e
            })
            .collect();
        SpectralKernel::from_coefficients(GroundSpace::unit_interval(), eigenvalues.to_vec(), rows)
    }

    /// Matrix of the discrete sine kernel `sin(πb(i-j)) / (π(i-j))` on `n`
    /// consecutive sites, `b ∈ (0, 1)`.
    pub fn discretized_sine_matrix(n: usize, bandwidth: f64) -> Result<Array2<f64>> {
        if !(bandwidth > 0.0 && bandwidth < 1.0) {
            return validation(format!("bandwidth {bandwidth} outside (0, 1)"));
        }
        if n == 0 {
            return validation("discretized sine kernel needs at least one site");
        }
        Ok(Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                bandwidth
            } else {
                let d = i as f64 - j as f64;
                (PI * bandwidth * d).sin() / (PI * d)
            }
        }))
    }

    pub fn discretized_sine(n: usize, bandwidth: f64) -> Result<SpectralKernel> {
        SpectralKernel::from_matrix(&discretized_sine_matrix(n, bandwidth)?)
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;
    use crate::ground::Piece;
    use ndarray::array;

    #[test]
    fn diag_kernel_matrix_and_values() {
        let k = SpectralKernel::new(
            GroundSpace::discrete(3).unwrap(),
            vec![0.3, 0.7],
            vec![
                FunctionRep::Vector { values: vec![1.0, 0.0, 0.0] },
                FunctionRep::Vector { values: vec![0.0, 1.0, 0.0] },
            ],
        )
        .unwrap();
        let m = k.matrix().unwrap();
        assert_eq!(m, array![[0.3, 0.0, 0.0], [0.0, 0.7, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(k.eval(0usize, 0usize).unwrap(), 0.3);
        assert_eq!(k.eval(0usize, 1usize).unwrap(), 0.0);
        assert!(k.eval(0usize, 3usize).is_err());
        let two = k.intensity_determinant(&[Point::Site(0), Point::Site(1)]).unwrap();
        assert!((two.value - 0.21).abs() < 1e-15);
    }

    #[test]
    fn constant_kernel() {
        let k = constant_rank1();
        for (x, y) in [(0.0, 0.3), (0.99, 0.5), (1.0, 0.0)] {
            assert!((k.eval(x, y).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!(k.eval(1.5, 0.0).is_err());
        let one = k.intensity_determinant(&[Point::Real(0.2)]).unwrap();
        assert!((one.value - 1.0).abs() < 1e-15);
        let two = k.intensity_determinant(&[Point::Real(0.2), Point::Real(0.7)]).unwrap();
        assert!(two.value.abs() < 1e-15);
        assert!(k.intensity_determinant(&[Point::Real(0.2), Point::Real(0.2)]).is_err());
    }

    #[test]
    fn validation_errors() {
        let s = GroundSpace::discrete(2).unwrap();
        let e = SpectralKernel::from_coefficients(s, vec![1.2], vec![vec![1.0, 0.0]]);
        assert!(matches!(e, Err(Error::Validation(_))));
        let e = SpectralKernel::from_coefficients(s, vec![0.0], vec![vec![1.0, 0.0]]);
        assert!(matches!(e, Err(Error::Validation(_))));
        let e = SpectralKernel::from_coefficients(s, vec![0.5, 0.5], vec![vec![1.0, 1.0], vec![2.0, 2.0]]);
        assert!(matches!(e, Err(Error::Validation(_))));
        let e = SpectralKernel::from_coefficients(s, vec![0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(e.is_err());
    }

    #[test]
    fn reorthonormalizes_non_orthonormal_input() {
        let s = GroundSpace::discrete(2).unwrap();
        let k = SpectralKernel::from_coefficients(s, vec![0.5, 0.5], vec![vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let c = k.coefficients();
        assert!((c[[0, 0]] - 1.0).abs() < 1e-15 && (c[[1, 1]] - 1.0).abs() < 1e-15);
        assert!(c[[1, 0]].abs() < 1e-15);
    }

    #[test]
    fn compression_examples() {
        let k = constant_rank1();
        let half = Cell::interval(0.0, 0.5).unwrap();
        let c = k.compress(&half).unwrap();
        assert!((c.gram[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((c.eigenvalues().unwrap()[0] - 0.5).abs() < 1e-15);

        let f = fourier_spectral(&[0.9, 0.6, 0.3], DEFAULT_DEGREE).unwrap();
        let full = f.compress(&f.space().whole()).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                let want = if k == l { f.eigenvalues()[k] } else { 0.0 };
                assert!((full.gram[[k, l]] - want).abs() < 1e-13);
            }
        }

        let d = diag(&[0.3, 0.7, 0.0]).unwrap();
        let c0 = d.compress(&Cell::Sites(vec![0])).unwrap();
        let ev = c0.eigenvalues().unwrap();
        assert!((ev[0] - 0.3).abs() < 1e-15 && ev[1].abs() < 1e-15);
        assert!(d.compress(&Cell::Sites(vec![])).is_err());
    }

    #[test]
    fn spectrum_examples() {
        let c = CompressedKernel {
            parent: constant_rank1(),
            cell: Cell::interval(0.0, 1.0).unwrap(),
            gram: array![[0.5, 0.5], [0.5, 0.5]],
        };
        let ev = c.eigenvalues().unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-15 && ev[1].abs() < 1e-15);
    }

    #[test]
    fn fourier_trace_equals_rank() {
        let k = fourier_projection(5, DEFAULT_DEGREE).unwrap();
        let q = Quadrature::for_cell_panels(&Cell::interval(0.0, 1.0).unwrap(), 48, 4).unwrap();
        let trace = q.integrate(|x| k.eval(x, x).unwrap());
        assert!((trace - 5.0).abs() < 1e-10, "trace {trace}");
        // the projection really reproduces the Fourier functions
        let phi = k.values_at(Point::Real(0.3)).unwrap();
        assert!((phi[1] - fourier_function(1, 0.3)).abs() < 1e-12);
    }

    #[test]
    fn trace_splits_over_complement() {
        let k = fourier_spectral(&[0.9, 0.5, 0.2, 0.1], DEFAULT_DEGREE).unwrap();
        let a = Cell::pieces(vec![Piece { a: 0.1, b: 0.35 }, Piece { a: 0.6, b: 0.7 }]).unwrap();
        let ac = Cell::pieces(vec![
            Piece { a: 0.0, b: 0.1 },
            Piece { a: 0.35, b: 0.6 },
            Piece { a: 0.7, b: 1.0 },
        ])
        .unwrap();
        let t = k.compress(&a).unwrap().trace() + k.compress(&ac).unwrap().trace();
        assert!((t - 1.7).abs() < 1e-10);
    }

    #[test]
    fn json_round_trip() {
        let k = fourier_spectral(&[0.8, 0.4], 16).unwrap();
        let text = serde_json::to_string(&k.to_json()).unwrap();
        let back = SpectralKernel::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn from_matrix_drops_null_space() {
        let k = SpectralKernel::from_matrix(&array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        assert_eq!(k.rank(), 1);
        assert!((k.eigenvalues()[0] - 1.0).abs() < 1e-15);
        assert!(SpectralKernel::from_matrix(&array![[1.5, 0.0], [0.0, 0.2]]).is_err());
        assert!(SpectralKernel::from_matrix(&array![[0.5, 0.1], [0.0, 0.2]]).is_err());
    }
}
