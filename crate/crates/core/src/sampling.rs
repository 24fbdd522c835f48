//! Exact sampling from discrete kernels.
//!
//! The sampler is the spectral two-phase method: every eigenvector is kept
//! independently with probability equal to its eigenvalue, then the
//! projection process spanned by the kept vectors is sampled one site at a
//! time, eliminating the chosen site and re-orthonormalizing after each draw.
//! Continuous kernels are sampled by transferring them onto a fine uniform
//! grid first.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::countlaw::CountLaw;
use crate::error::{domain, validation, Error, Result};
use crate::ground::{Cell, GroundSpace, Partition};
use crate::kernel::SpectralKernel;
use crate::linalg::{self, jacobi_eigen};
use crate::transference::{build_transfer, transfer, CellBasis, TransferredKernel};
use crate::ground::FunctionRep;

/// Spectrum slack accepted by the sampler.
pub const SAMPLER_SPECTRUM_TOL: f64 = 1e-10;
const REORTHO_TOL: f64 = 1e-8;
/// Replicates drawn per RNG stream by the batch helpers.
pub const CHUNK: usize = 4096;

/// A seeded, splittable random stream. The same `(seed, stream)` always
/// yields the same sequence on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Child stream `i`, distinct for distinct `i` as long as the parent
    /// stream id fits in 32 bits.
    pub fn child(&self, i: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream: (self.stream << 32) ^ (i + 1),
        }
    }
}

/// A simple point configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointConfiguration {
    Sites(Vec<usize>),
    Points(Vec<f64>),
}

impl PointConfiguration {
    pub fn len(&self) -> usize {
        match self {
            PointConfiguration::Sites(s) => s.len(),
            PointConfiguration::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `ξ(cell)`.
    pub fn count(&self, cell: &Cell) -> usize {
        match self {
            PointConfiguration::Sites(s) => s.iter().filter(|&&i| cell.contains_site(i)).count(),
            PointConfiguration::Points(p) => p.iter().filter(|&&x| cell.contains_point(x)).count(),
        }
    }

    /// No location appears twice.
    pub fn is_simple(&self) -> bool {
        match self {
            PointConfiguration::Sites(s) => s.windows(2).all(|w| w[0] < w[1]),
            PointConfiguration::Points(p) => p.windows(2).all(|w| w[0] < w[1]),
        }
    }

    /// Comma separated locations, as written to sample CSV files.
    pub fn to_csv_line(&self) -> String {
        match self {
            PointConfiguration::Sites(s) => s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
            PointConfiguration::Points(p) => p.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(","),
        }
    }
}

/// Precomputed eigen-decomposition of a discrete kernel matrix.
#[derive(Debug, Clone)]
pub struct DppSampler {
    n: usize,
    eigenvalues: Vec<f64>,
    /// Eigenvectors with nonzero eigenvalue, one per entry.
    eigenvectors: Vec<Vec<f64>>,
}

impl DppSampler {
    /// Validates that `q` is symmetric with spectrum in `[0, 1]` up to
    /// [`SAMPLER_SPECTRUM_TOL`].
    pub fn new(q: &Array2<f64>) -> Result<Self> {
        let n = q.nrows();
        if n != q.ncols() {
            return validation("kernel matrix must be square");
        }
        for i in 0..n {
            for j in 0..i {
                if (q[[i, j]] - q[[j, i]]).abs() > 1e-12 * (1.0 + q[[i, j]].abs()) {
                    return validation(format!("kernel matrix not symmetric at ({i},{j})"));
                }
            }
        }
        let eig = jacobi_eigen(q)?;
        let mut eigenvalues = Vec::new();
        let mut eigenvectors = Vec::new();
        for (k, &l) in eig.values.iter().enumerate() {
            if !(-SAMPLER_SPECTRUM_TOL..=1.0 + SAMPLER_SPECTRUM_TOL).contains(&l) {
                return validation(format!("eigenvalue {l:.6e} outside [0, 1]"));
            }
            let l = l.clamp(0.0, 1.0);
            if l > 0.0 {
                eigenvalues.push(l);
                eigenvectors.push(eig.vectors.column(k).to_vec());
            }
        }
        Ok(DppSampler {
            n,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn from_kernel(k: &SpectralKernel) -> Result<Self> {
        DppSampler::new(&k.matrix()?)
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    /// Number of eigenvalues above 1e-12.
    pub fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > 1e-12).count()
    }

    /// One exact draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PointConfiguration {
        let mut basis: Vec<Vec<f64>> = self
            .eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .filter(|(l, _)| rng.random::<f64>() < **l)
            .map(|(_, v)| v.clone())
            .collect();
        let mut sites = Vec::with_capacity(basis.len());
        let mut weights = vec![0.0; self.n];
        while !basis.is_empty() {
            for (i, w) in weights.iter_mut().enumerate() {
                *w = basis.iter().map(|v| v[i] * v[i]).sum();
            }
            let total: f64 = weights.iter().sum();
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut site = self.n - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc && *w > 0.0 {
                    site = i;
                    break;
                }
            }
            if weights[site] <= 0.0 {
                site = weights
                    .iter()
                    .enumerate()
                    .rev()
                    .find(|(_, w)| **w > 0.0)
                    .map(|(i, _)| i)
                    .expect("a projection of positive rank has positive weight somewhere");
            }
            sites.push(site);

            let pivot = (0..basis.len())
                .max_by(|&a, &b| basis[a][site].abs().total_cmp(&basis[b][site].abs()))
                .expect("basis is not empty");
            let pv = basis.swap_remove(pivot);
            for v in basis.iter_mut() {
                let f = v[site] / pv[site];
                for (x, y) in v.iter_mut().zip(&pv) {
                    *x -= f * y;
                }
                v[site] = 0.0;
            }
            reorthonormalize(&mut basis);
        }
        sites.sort_unstable();
        PointConfiguration::Sites(sites)
    }

    pub fn sample_stream(&self, stream: RngStream) -> PointConfiguration {
        self.sample(&mut stream.rng())
    }

    /// `n` draws. Replicates are grouped in chunks of [`CHUNK`], chunk `c`
    /// drawing from `stream.child(c)`, so the output does not depend on the
    /// thread count.
    pub fn sample_many(&self, stream: RngStream, n: usize) -> Vec<PointConfiguration> {
        let chunks = n.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = stream.child(c as u64).rng();
                let len = CHUNK.min(n - c * CHUNK);
                (0..len).map(move |_| self.sample(&mut rng)).collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Modified Gram-Schmidt; a vector whose residual norm falls below
/// `REORTHO_TOL` of its input norm gets a second full pass.
fn reorthonormalize(basis: &mut [Vec<f64>]) {
    for i in 0..basis.len() {
        let before = linalg::dot(&basis[i], &basis[i]).sqrt();
        let (head, tail) = basis.split_at_mut(i);
        let v = &mut tail[0];
        for u in head.iter() {
            let c = linalg::dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
        let mut norm = linalg::dot(v, v).sqrt();
        if norm < REORTHO_TOL * before {
            for u in head.iter() {
                let c = linalg::dot(v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
            norm = linalg::dot(v, v).sqrt();
        }
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// One draw from the DPP with kernel matrix `q`.
pub fn sample(q: &Array2<f64>, stream: RngStream) -> Result<PointConfiguration> {
    Ok(DppSampler::new(q)?.sample_stream(stream))
}

fn check_blocks(n: usize, blocks: &[Cell]) -> Result<Vec<Option<usize>>> {
    let mut owner = vec![None; n];
    for (b, cell) in blocks.iter().enumerate() {
        let Cell::Sites(sites) = cell else {
            return domain("blocks must be site cells");
        };
        for &s in sites {
            if s >= n {
                return domain(format!("block site {s} outside {n} sites"));
            }
            if owner[s].is_some() {
                return domain(format!("site {s} belongs to two blocks"));
            }
            owner[s] = Some(b);
        }
    }
    Ok(owner)
}

/// Count vectors of each configuration over `blocks`.
pub fn block_counts(configs: &[PointConfiguration], blocks: &[Cell], n: usize) -> Result<Vec<Vec<usize>>> {
    let owner = check_blocks(n, blocks)?;
    configs
        .iter()
        .map(|c| {
            let PointConfiguration::Sites(sites) = c else {
                return domain("block counts need site configurations");
            };
            let mut counts = vec![0; blocks.len()];
            for &s in sites {
                if let Some(b) = owner[s] {
                    counts[b] += 1;
                }
            }
            Ok(counts)
        })
        .collect()
}

/// Empirical joint law of block counts over `n_samples` draws.
pub fn sample_counts(q: &Array2<f64>, blocks: &[Cell], stream: RngStream, n_samples: usize) -> Result<CountLaw> {
    let sampler = DppSampler::new(q)?;
    check_blocks(sampler.sites(), blocks)?;
    let configs = sampler.sample_many(stream, n_samples);
    let counts = block_counts(&configs, blocks, sampler.sites())?;
    let r = sampler.rank();
    let dims = blocks.iter().map(|b| b.site_list().len().min(r) + 1).collect();
    let labels = blocks.iter().map(Cell::to_string).collect();
    CountLaw::from_samples(labels, dims, r, &counts)
}

/// A continuous kernel transferred onto a uniform grid with one normalized
/// indicator per cell.
#[derive(Debug, Clone)]
pub struct GridKernel {
    pub transferred: TransferredKernel,
    pub partition: Partition,
}

impl GridKernel {
    pub fn midpoints(&self) -> Vec<f64> {
        self.partition
            .cells()
            .iter()
            .map(|c| {
                let p = c.piece_list()[0];
                0.5 * (p.a + p.b)
            })
            .collect()
    }

    /// Maps a configuration of grid sites to cell midpoints.
    pub fn to_points(&self, config: &PointConfiguration) -> PointConfiguration {
        let mids = self.midpoints();
        match config {
            PointConfiguration::Sites(s) => PointConfiguration::Points(s.iter().map(|&i| mids[i]).collect()),
            other => other.clone(),
        }
    }
}

/// Transfers a continuous kernel onto `grid_cells` equal cells keeping one
/// basis function (the normalized indicator) per cell. Fails when the
/// resulting leakage exceeds `tol`.
pub fn discretize_for_sampling(k: &SpectralKernel, grid_cells: usize, tol: f64) -> Result<GridKernel> {
    if !matches!(k.space(), GroundSpace::Interval { .. }) {
        return domain("discretize_for_sampling needs a continuous kernel");
    }
    let partition = Partition::uniform(*k.space(), grid_cells)?;
    let bases: Vec<CellBasis> = partition
        .cells()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = c.piece_list()[0];
            CellBasis {
                cell_index: i,
                functions: vec![FunctionRep::LocalLegendre { a: p.a, b: p.b, degree: 0 }],
                residual: f64::NAN,
            }
        })
        .collect();
    let t = build_transfer(k, &bases)?;
    let transferred = transfer(k, &t, tol).map_err(|e| match e {
        Error::Leakage { achieved, tol, .. } => Error::Leakage {
            achieved,
            tol,
            hint: format!("grid of {grid_cells} cells is too coarse; use a finer grid"),
        },
        other => other,
    })?;
    Ok(GridKernel {
        transferred,
        partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::presets::*;
    use ndarray::array;

    #[test]
    fn deterministic_projection() {
        let q = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let s = DppSampler::new(&q).unwrap();
        for c in s.sample_many(RngStream::new(1, 0), 100) {
            assert_eq!(c, PointConfiguration::Sites(vec![0, 1]));
        }
    }

    #[test]
    fn bernoulli_marginal() {
        let s = DppSampler::new(&array![[0.3]]).unwrap();
        let n = 100_000;
        let hits = s.sample_many(RngStream::new(7, 0), n).iter().filter(|c| c.len() == 1).count();
        let f = hits as f64 / n as f64;
        assert!((f - 0.3).abs() < 0.006, "frequency {f}");
    }

    #[test]
    fn rank_one_projection_splits_evenly() {
        let s = DppSampler::new(&array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let n = 100_000;
        let draws = s.sample_many(RngStream::new(11, 3), n);
        assert!(draws.iter().all(|c| c.len() == 1));
        let left = draws.iter().filter(|c| **c == PointConfiguration::Sites(vec![0])).count();
        let f = left as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.007, "split {f}");
    }

    #[test]
    fn rejects_bad_spectrum() {
        assert!(matches!(DppSampler::new(&array![[1.2]]), Err(Error::Validation(_))));
        assert!(DppSampler::new(&array![[0.5, 0.2], [0.1, 0.5]]).is_err());
    }

    #[test]
    fn reproducible_streams() {
        let q = discretized_sine_matrix(8, 0.4).unwrap();
        let s = DppSampler::new(&q).unwrap();
        let a = s.sample_many(RngStream::new(5, 2), 5000);
        let b = s.sample_many(RngStream::new(5, 2), 5000);
        let c = s.sample_many(RngStream::new(5, 3), 5000);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_counts_examples() {
        let blocks = [Cell::Sites(vec![0]), Cell::Sites(vec![1])];
        let law = sample_counts(&array![[1.0, 0.0], [0.0, 0.0]], &blocks, RngStream::new(1, 0), 1000).unwrap();
        assert_eq!(law.prob(&[1, 0]), 1.0);

        let law = sample_counts(&array![[0.5, 0.0], [0.0, 0.5]], &blocks, RngStream::new(2, 0), 100_000).unwrap();
        for c in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            assert!((law.prob(&c) - 0.25).abs() < 0.01);
        }
        let law = sample_counts(&array![[0.5, 0.5], [0.5, 0.5]], &blocks, RngStream::new(3, 0), 100_000).unwrap();
        assert!((law.prob(&[1, 0]) - 0.5).abs() < 0.01);
        assert_eq!(law.prob(&[1, 1]) + law.prob(&[0, 0]), 0.0);

        let overlapping = [Cell::Sites(vec![0, 1]), Cell::Sites(vec![1])];
        assert!(matches!(
            sample_counts(&array![[0.5, 0.0], [0.0, 0.5]], &overlapping, RngStream::new(1, 0), 10),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn discretize_constant_kernel() {
        let k = constant_rank1();
        let g = discretize_for_sampling(&k, 2, 1e-12).unwrap();
        for x in g.transferred.q.iter() {
            assert!((x - 0.5).abs() < 1e-15);
        }
        let g = discretize_for_sampling(&k, 7, 1e-12).unwrap();
        for x in g.transferred.q.iter() {
            assert!((x - 1.0 / 7.0).abs() < 1e-15);
        }
        let pts = g.to_points(&PointConfiguration::Sites(vec![0, 6]));
        assert_eq!(pts, PointConfiguration::Points(vec![0.5 / 7.0, 6.5 / 7.0]));
    }

    #[test]
    fn discretize_fourier_leakage_matches_closed_form() {
        // Oracle: indicator averages of √2 cos/sin(2πx) over cells of width h
        // keep sinc²(πh) of the energy, so ε = 2 (1 − sinc²(πh)).
        let k = fourier_projection(3, crate::kernel::DEFAULT_DEGREE).unwrap();
        for cells in [64usize, 128] {
            let h = 1.0 / cells as f64;
            let sinc = (std::f64::consts::PI * h).sin() / (std::f64::consts::PI * h);
            let want = 2.0 * (1.0 - sinc * sinc);
            let g = discretize_for_sampling(&k, cells, 1e-2).unwrap();
            assert!((g.transferred.leakage - want).abs() < 1e-12, "{cells}: {}", g.transferred.leakage);
        }
        let err = discretize_for_sampling(&k, 64, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Leakage { .. }));
        assert!(discretize_for_sampling(&k, 128, 1e-3).is_ok());
        assert!(discretize_for_sampling(&diag(&[0.5]).unwrap(), 4, 1.0).is_err());
    }
}
