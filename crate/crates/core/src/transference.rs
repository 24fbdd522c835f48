//! Transfer of a kernel onto a block-indexed discrete set.
//!
//! For every cell `A_i` of a partition an orthonormal basis `w_{i,j}` of
//! functions supported on `A_i` is fixed (singletons on discrete cells,
//! Legendre polynomials of each piece on interval cells). The transfer map
//! `T` sends `w_{i,j}` to the coordinate vector of `(i, j)`, so in the
//! eigenfunction frame `T[(i,j), k] = (φ_k, w_{i,j})` and the discrete
//! kernel is `Q = T diag(λ) Tᵀ`. Because `T 1_{A_i} = 1_{B_i} T`, block
//! counts under `Q` have the same joint law as cell counts under `K`.
//!
//! Cell bases are truncated to finitely many functions. The eigenfunction
//! energy that the truncation misses is reported as the leakage `ε`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::ground::{inner_product, Cell, FunctionRep, GroundSpace, Partition, Piece, Quadrature};
use crate::kernel::SpectralKernel;
use crate::linalg::{self, jacobi_eigen};

/// Orthonormal basis of functions supported on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBasis {
    pub cell_index: usize,
    pub functions: Vec<FunctionRep>,
    /// Energy `Σ_k λ_k ‖1_A φ_k − proj(1_A φ_k)‖²` left after truncation.
    pub residual: f64,
}

impl CellBasis {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

fn local_order(k: &SpectralKernel, max_degree: usize) -> usize {
    let d = k.degree().unwrap_or(0);
    k.quadrature_order().max((d + max_degree) / 2 + 1)
}

/// `(φ_k, w)` for every eigenfunction and every local Legendre function of
/// degree `0..=max_degree` on `piece`. Returned as `[degree][k]`.
fn piece_projections(k: &SpectralKernel, piece: Piece, max_degree: usize) -> Result<Vec<Vec<f64>>> {
    let cell = Cell::Pieces(vec![piece]);
    let quad = Quadrature::for_cell(&cell, local_order(k, max_degree))?;
    let vals = k.values_at_nodes(&quad.nodes);
    let mut out = vec![vec![0.0; k.rank()]; max_degree + 1];
    let mut buf = Vec::new();
    for (q, (&x, &w)) in quad.nodes.iter().zip(&quad.weights).enumerate() {
        crate::ground::legendre_values(piece.a, piece.b, x, max_degree, &mut buf);
        for (d, row) in out.iter_mut().enumerate() {
            for (kk, v) in row.iter_mut().enumerate() {
                *v += w * vals[[q, kk]] * buf[d];
            }
        }
    }
    Ok(out)
}

/// Builds truncated orthonormal bases for every cell of `partition`.
///
/// Each cell keeps the shortest prefix of its candidate basis whose residual
/// energy is at most `tol / |partition|`. Interval candidates are ordered by
/// degree, then piece; the largest degree tried equals the kernel's Legendre
/// degree (which captures polynomial eigenfunctions exactly) unless
/// `max_degree` overrides it.
pub fn build_cell_bases(k: &SpectralKernel, partition: &Partition, tol: f64) -> Result<Vec<CellBasis>> {
    build_cell_bases_with(k, partition, tol, None)
}

pub fn build_cell_bases_with(
    k: &SpectralKernel,
    partition: &Partition,
    tol: f64,
    max_degree: Option<usize>,
) -> Result<Vec<CellBasis>> {
    if !(tol > 0.0) {
        return validation("leakage tolerance must be positive");
    }
    if partition.space() != k.space() {
        return validation("partition and kernel live on different ground spaces");
    }
    let per_cell = tol / partition.len() as f64;
    let lambda = k.eigenvalues();
    let mut out = Vec::with_capacity(partition.len());
    for (i, cell) in partition.cells().iter().enumerate() {
        match cell {
            Cell::Sites(sites) => {
                let n = match *k.space() {
                    GroundSpace::Discrete { size } => size,
                    _ => unreachable!("space checked above"),
                };
                let functions = sites
                    .iter()
                    .map(|&s| {
                        let mut v = vec![0.0; n];
                        v[s] = 1.0;
                        FunctionRep::Vector { values: v }
                    })
                    .collect();
                out.push(CellBasis {
                    cell_index: i,
                    functions,
                    residual: 0.0,
                });
            }
            Cell::Pieces(pieces) => {
                let max_deg = max_degree.unwrap_or_else(|| k.degree().unwrap_or(0));
                let norms = k.cell_gram(cell)?.diag().to_vec();
                let total: f64 = lambda.iter().zip(&norms).map(|(l, n)| l * n).sum();
                let projections = pieces
                    .iter()
                    .map(|&p| piece_projections(k, p, max_deg))
                    .collect::<Result<Vec<_>>>()?;
                let mut captured = 0.0;
                let mut functions = Vec::new();
                let mut residual = total;
                'outer: for d in 0..=max_deg {
                    for (pi, p) in pieces.iter().enumerate() {
                        let c = &projections[pi][d];
                        captured += lambda.iter().zip(c).map(|(l, x)| l * x * x).sum::<f64>();
                        functions.push(FunctionRep::LocalLegendre { a: p.a, b: p.b, degree: d });
                        residual = (total - captured).max(0.0);
                        if residual <= per_cell {
                            break 'outer;
                        }
                    }
                }
                if residual > per_cell {
                    return Err(Error::Leakage {
                        achieved: residual,
                        tol: per_cell,
                        hint: format!("cell {i} needs Legendre degree above {max_deg}"),
                    });
                }
                out.push(CellBasis {
                    cell_index: i,
                    functions,
                    residual,
                });
            }
        }
    }
    Ok(out)
}

/// The transfer map in the eigenfunction frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMap {
    /// Rows indexed by `(i, j)` in lexicographic order, columns by `k`.
    pub matrix: Array2<f64>,
    /// `(start, len)` of block `B_i` in the row order.
    pub blocks: Vec<(usize, usize)>,
    /// `Σ_k λ_k (1 − Σ_{(i,j)} T[(i,j),k]²)`.
    pub leakage: f64,
}

impl TransferMap {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// The `(i, j)` label of every row.
    pub fn index_map(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, &(_, len))| (0..len).map(move |j| (i, j)))
            .collect()
    }

    pub fn column_norms_sq(&self) -> Vec<f64> {
        self.matrix
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|x| x * x).sum())
            .collect()
    }
}

/// Computes `T[(i,j),k] = (φ_k, w_{i,j})` by quadrature on the support of
/// each basis function.
pub fn build_transfer(k: &SpectralKernel, bases: &[CellBasis]) -> Result<TransferMap> {
    let r = k.rank();
    let rows: usize = bases.iter().map(CellBasis::len).sum();
    let mut matrix = Array2::zeros((rows, r));
    let mut blocks = Vec::with_capacity(bases.len());
    let eigenfunctions: Vec<FunctionRep> = (0..r).map(|kk| k.eigenfunction(kk)).collect();
    let mut row = 0;
    for basis in bases {
        blocks.push((row, basis.len()));
        for w in &basis.functions {
            match (k.space(), w) {
                (GroundSpace::Discrete { size }, FunctionRep::Vector { values }) => {
                    if values.len() != *size {
                        return Err(Error::Domain(format!(
                            "basis vector has {} entries, kernel has {size} sites",
                            values.len()
                        )));
                    }
                    let support: Vec<usize> = (0..*size).filter(|&s| values[s] != 0.0).collect();
                    let cell = Cell::Sites(support);
                    for (kk, phi) in eigenfunctions.iter().enumerate() {
                        matrix[[row, kk]] = inner_product(phi, w, &cell, None)?;
                    }
                }
                (GroundSpace::Interval { .. }, &FunctionRep::LocalLegendre { a, b, degree }) => {
                    let cell = Cell::Pieces(vec![Piece { a, b }]);
                    let quad = Quadrature::for_cell(&cell, local_order(k, degree))?;
                    for (kk, phi) in eigenfunctions.iter().enumerate() {
                        matrix[[row, kk]] = inner_product(phi, w, &cell, Some(&quad))?;
                    }
                }
                _ => return Err(Error::Domain("basis function does not match the kernel's space".into())),
            }
            row += 1;
        }
    }
    let lambda = k.eigenvalues();
    let leakage = matrix
        .columns()
        .into_iter()
        .zip(lambda)
        .map(|(c, l)| l * (1.0 - c.iter().map(|x| x * x).sum::<f64>()))
        .sum::<f64>()
        .max(0.0);
    Ok(TransferMap {
        matrix,
        blocks,
        leakage,
    })
}

/// The discrete kernel `Q` on `F = ⋃ B_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferredKernel {
    pub q: Array2<f64>,
    pub blocks: Vec<(usize, usize)>,
    pub leakage: f64,
    pub tol: f64,
}

impl TransferredKernel {
    pub fn size(&self) -> usize {
        self.q.nrows()
    }

    /// The blocks `B_i` as site cells of `F`.
    pub fn block_cells(&self) -> Vec<Cell> {
        self.blocks
            .iter()
            .map(|&(start, len)| Cell::Sites((start..start + len).collect()))
            .collect()
    }

    /// Block index of every site of `F`.
    pub fn block_of_site(&self) -> Vec<usize> {
        let mut out = vec![0; self.size()];
        for (i, &(start, len)) in self.blocks.iter().enumerate() {
            out[start..start + len].iter_mut().for_each(|b| *b = i);
        }
        out
    }

    /// `Q` as a spectral kernel on `|F|` sites.
    pub fn to_kernel(&self) -> Result<SpectralKernel> {
        SpectralKernel::from_matrix(&self.q)
    }

    pub fn to_json(&self) -> TransferredKernelJson {
        TransferredKernelJson {
            q: self.q.rows().into_iter().map(|r| r.to_vec()).collect(),
            blocks: self.blocks.iter().map(|&(s, l)| [s, l]).collect(),
            leakage: self.leakage,
            tol: self.tol,
        }
    }

    pub fn from_json(json: &TransferredKernelJson) -> Result<Self> {
        let n = json.q.len();
        if json.q.iter().any(|r| r.len() != n) {
            return validation("Q must be square");
        }
        let q = Array2::from_shape_vec((n, n), json.q.iter().flatten().copied().collect())
            .map_err(|e| Error::Validation(e.to_string()))?;
        let blocks: Vec<(usize, usize)> = json.blocks.iter().map(|b| (b[0], b[1])).collect();
        let mut next = 0;
        for &(s, l) in &blocks {
            if s != next {
                return validation("blocks must be contiguous and in order");
            }
            next = s + l;
        }
        if next != n {
            return validation("blocks do not cover Q");
        }
        Ok(TransferredKernel {
            q,
            blocks,
            leakage: json.leakage,
            tol: json.tol,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferredKernelJson {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub blocks: Vec<[usize; 2]>,
    pub leakage: f64,
    pub tol: f64,
}

/// Forms `Q = T diag(λ) Tᵀ`. Refuses when the leakage exceeds `tol`.
pub fn transfer(k: &SpectralKernel, t: &TransferMap, tol: f64) -> Result<TransferredKernel> {
    if t.matrix.ncols() != k.rank() {
        return Err(Error::Domain(format!(
            "transfer map has {} columns, kernel rank is {}",
            t.matrix.ncols(),
            k.rank()
        )));
    }
    if t.leakage > tol {
        return Err(Error::Leakage {
            achieved: t.leakage,
            tol,
            hint: "refine the cell bases or the partition".into(),
        });
    }
    Ok(TransferredKernel {
        q: linalg::scaled_outer(&t.matrix, k.eigenvalues()),
        blocks: t.blocks.clone(),
        leakage: t.leakage,
        tol,
    })
}

/// Cell bases, transfer map and `Q` in one step.
pub fn transfer_partition(k: &SpectralKernel, partition: &Partition, tol: f64) -> Result<TransferredKernel> {
    let bases = build_cell_bases(k, partition, tol)?;
    let t = build_transfer(k, &bases)?;
    transfer(k, &t, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// `max_k |λ_k(Q) − λ_k(K)|` after sorting both descending and padding
    /// with zeros.
    pub discrepancy: f64,
    pub bound: f64,
    pub pass: bool,
    pub kernel_eigenvalues: Vec<f64>,
    pub transferred_eigenvalues: Vec<f64>,
}

/// Compares the spectra of `K` and `Q`.
pub fn spectrum_check(k: &SpectralKernel, q: &TransferredKernel) -> Result<SpectrumReport> {
    let mut kv = k.eigenvalues().to_vec();
    kv.sort_by(|a, b| b.total_cmp(a));
    let qv = jacobi_eigen(&q.q)?.values;
    let len = kv.len().max(qv.len());
    let discrepancy = (0..len)
        .map(|i| (kv.get(i).copied().unwrap_or(0.0) - qv.get(i).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max);
    let bound = q.leakage + 1e-8;
    Ok(SpectrumReport {
        discrepancy,
        bound,
        pass: discrepancy <= bound,
        kernel_eigenvalues: kv,
        transferred_eigenvalues: qv.into_iter().take(len.min(64)).collect(),
    })
}
