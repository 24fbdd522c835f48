//! Joint laws of cell counts.
//!
//! For a rank-`r` kernel with cell Gram forms `G_i` (in the eigenfunction
//! frame) the probability generating function of the count vector is
//!
//! ```text
//! E[∏ z_i^{ξ(A_i)}] = det(I_r + Σ_i (z_i − 1) G_i)
//! ```
//!
//! Counts never exceed `r`, so evaluating it on the grid of `(r+1)`-st roots
//! of unity and applying an inverse multidimensional DFT recovers the pmf
//! without aliasing.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ground::{Cell, Partition};
use crate::kernel::{CompressedKernel, SpectralKernel};
use crate::linalg::det_complex;
use crate::transference::TransferredKernel;

/// Largest rank accepted by the exact path.
pub const MAX_EXACT_RANK: usize = 64;
/// Largest DFT grid `(r+1)^m` accepted by the exact path.
pub const MAX_GRID: usize = 2_000_000;
const NEGATIVE_DUST: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    Empirical { n_samples: u64 },
}

/// Joint pmf of a count vector, stored densely in row-major order over the
/// box `dims[0] × … × dims[m-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountLaw {
    pub labels: Vec<String>,
    pub dims: Vec<usize>,
    pub pmf: Vec<f64>,
    pub rank: usize,
    pub provenance: Provenance,
    /// Largest imaginary part left by the inverse DFT (exact laws).
    pub imag_residue: f64,
}

impl CountLaw {
    pub fn arity(&self) -> usize {
        self.dims.len()
    }

    pub fn n_samples(&self) -> Option<u64> {
        match self.provenance {
            Provenance::Empirical { n_samples } => Some(n_samples),
            Provenance::Exact => None,
        }
    }

    fn index(&self, counts: &[usize]) -> Option<usize> {
        let mut idx = 0;
        for (c, d) in counts.iter().zip(&self.dims) {
            if c >= d {
                return None;
            }
            idx = idx * d + c;
        }
        Some(idx)
    }

    fn unravel(dims: &[usize], mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; dims.len()];
        for (o, d) in out.iter_mut().zip(dims).rev() {
            *o = idx % d;
            idx /= d;
        }
        out
    }

    /// Probability of a count vector; zero outside the stored box.
    pub fn prob(&self, counts: &[usize]) -> f64 {
        if counts.len() != self.arity() {
            return 0.0;
        }
        self.index(counts).map_or(0.0, |i| self.pmf[i])
    }

    /// Atoms with nonzero probability, in row-major order.
    pub fn atoms(&self) -> Vec<(Vec<usize>, f64)> {
        self.pmf
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0.0)
            .map(|(i, &p)| (CountLaw::unravel(&self.dims, i), p))
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.pmf.iter().sum()
    }

    /// Pushforward under `counts ↦ (Σ_{i ∈ group} counts_i)_{groups}`.
    pub fn merge(&self, groups: &[Vec<usize>]) -> Result<CountLaw> {
        let mut seen = vec![false; self.arity()];
        for g in groups {
            for &i in g {
                if i >= self.arity() || seen[i] {
                    return domain("merge groups must be disjoint coordinate indices");
                }
                seen[i] = true;
            }
        }
        let dims: Vec<usize> = groups
            .iter()
            .map(|g| g.iter().map(|&i| self.dims[i] - 1).sum::<usize>().min(self.rank) + 1)
            .collect();
        let size: usize = dims.iter().product();
        let mut pmf = vec![0.0; size];
        'atoms: for (idx, &p) in self.pmf.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let c = CountLaw::unravel(&self.dims, idx);
            let mut out = 0;
            for (g, d) in groups.iter().zip(&dims) {
                let s: usize = g.iter().map(|&i| c[i]).sum();
                if s >= *d {
                    if p.abs() <= 1e-12 {
                        continue 'atoms;
                    }
                    return Err(Error::Numerical("count above rank in merge".into()));
                }
                out = out * d + s;
            }
            pmf[out] += p;
        }
        let labels = groups
            .iter()
            .map(|g| g.iter().map(|&i| self.labels[i].as_str()).collect::<Vec<_>>().join("+"))
            .collect();
        Ok(CountLaw {
            labels,
            dims,
            pmf,
            rank: self.rank,
            provenance: self.provenance,
            imag_residue: self.imag_residue,
        })
    }

    pub fn marginal(&self, i: usize) -> Result<CountLaw> {
        self.merge(&[vec![i]])
    }

    /// Law of the total count over all coordinates.
    pub fn total(&self) -> Result<CountLaw> {
        self.merge(&[(0..self.arity()).collect()])
    }

    /// Empirical law from a list of count vectors.
    pub fn from_samples(labels: Vec<String>, dims: Vec<usize>, rank: usize, samples: &[Vec<usize>]) -> Result<CountLaw> {
        let size: usize = dims.iter().product();
        if size > MAX_GRID {
            return Err(Error::TooLarge(format!("count table of {size} cells")));
        }
        let mut counts = vec![0u64; size];
        let mut law = CountLaw {
            labels,
            dims,
            pmf: Vec::new(),
            rank,
            provenance: Provenance::Empirical {
                n_samples: samples.len() as u64,
            },
            imag_residue: 0.0,
        };
        for s in samples {
            let i = law
                .index(s)
                .ok_or_else(|| Error::Domain(format!("count vector {s:?} outside table")))?;
            counts[i] += 1;
        }
        let n = samples.len().max(1) as f64;
        law.pmf = counts.iter().map(|&c| c as f64 / n).collect();
        Ok(law)
    }

    /// `{"labels", "dims", "rank", "provenance", "atoms": [{"counts", "p"}]}`.
    pub fn to_json(&self) -> CountLawJson {
        CountLawJson {
            labels: self.labels.clone(),
            dims: self.dims.clone(),
            rank: self.rank,
            provenance: self.provenance,
            imag_residue: self.imag_residue,
            atoms: self
                .atoms()
                .into_iter()
                .map(|(counts, p)| AtomJson { counts, p })
                .collect(),
        }
    }

    /// One row per atom: the count vector followed by its probability.
    pub fn to_csv(&self) -> String {
        let mut out = self.labels.join(",");
        out.push_str(",probability\n");
        for (c, p) in self.atoms() {
            for x in &c {
                out.push_str(&x.to_string());
                out.push(',');
            }
            out.push_str(&format!("{p:e}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomJson {
    pub counts: Vec<usize>,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountLawJson {
    pub labels: Vec<String>,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub provenance: Provenance,
    pub imag_residue: f64,
    pub atoms: Vec<AtomJson>,
}

fn clean_pmf(pmf: &mut [f64]) -> Result<()> {
    for p in pmf.iter_mut() {
        if *p < 0.0 {
            if *p < -NEGATIVE_DUST {
                return Err(Error::Numerical(format!("pmf entry {p:e} is negative beyond roundoff")));
            }
            *p = 0.0;
        }
    }
    let s: f64 = pmf.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Numerical(format!("pmf sums to {s}")));
    }
    Ok(())
}

/// Law of the count in one cell: the sum of independent Bernoulli variables
/// with the compressed kernel's eigenvalues as success probabilities.
pub fn single_cell_law(c: &CompressedKernel) -> Result<CountLaw> {
    let r = c.parent.rank();
    let mut pmf = vec![0.0; r + 1];
    pmf[0] = 1.0;
    for (j, lambda) in c.eigenvalues()?.into_iter().enumerate() {
        for n in (0..=j + 1).rev() {
            let stay = pmf[n] * (1.0 - lambda);
            let step = if n > 0 { pmf[n - 1] * lambda } else { 0.0 };
            pmf[n] = stay + step;
        }
    }
    clean_pmf(&mut pmf)?;
    Ok(CountLaw {
        labels: vec![c.cell.to_string()],
        dims: vec![r + 1],
        pmf,
        rank: r,
        provenance: Provenance::Exact,
        imag_residue: 0.0,
    })
}

fn check_disjoint(cells: &[Cell]) -> Result<()> {
    for i in 0..cells.len() {
        for j in (i + 1)..cells.len() {
            if !cells[i].is_disjoint(&cells[j]) {
                return domain(format!("cells {i} and {j} overlap"));
            }
        }
    }
    Ok(())
}

/// Exact joint law of `(ξ(A_1), …, ξ(A_m))` by pgf inversion.
pub fn joint_law(k: &SpectralKernel, cells: &[Cell]) -> Result<CountLaw> {
    if cells.is_empty() {
        return domain("joint law needs at least one cell");
    }
    check_disjoint(cells)?;
    let r = k.rank();
    let m = cells.len();
    if r > MAX_EXACT_RANK {
        return Err(Error::TooLarge(format!(
            "rank {r} above {MAX_EXACT_RANK}; use Monte Carlo"
        )));
    }
    let side = r + 1;
    let grid = (0..m).try_fold(1usize, |acc, _| acc.checked_mul(side).filter(|&g| g <= MAX_GRID));
    let Some(grid) = grid else {
        return Err(Error::TooLarge(format!(
            "DFT grid ({side})^{m} exceeds {MAX_GRID}; use Monte Carlo"
        )));
    };
    let grams: Vec<Array2<f64>> = cells
        .iter()
        .map(|c| k.compress(c).map(|ck| ck.gram))
        .collect::<Result<_>>()?;
    let roots: Vec<Complex64> = (0..side)
        .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / side as f64))
        .collect();

    let dims = vec![side; m];
    let mut values: Vec<Complex64> = (0..grid)
        .into_par_iter()
        .map(|idx| {
            let js = CountLaw::unravel(&dims, idx);
            let mut mat = vec![Complex64::new(0.0, 0.0); r * r];
            for a in 0..r {
                mat[a * r + a] = Complex64::new(1.0, 0.0);
            }
            for (g, &j) in grams.iter().zip(&js) {
                let w = roots[j] - 1.0;
                if j == 0 {
                    continue;
                }
                for a in 0..r {
                    for b in 0..r {
                        mat[a * r + b] += w * g[[a, b]];
                    }
                }
            }
            det_complex(mat, r)
        })
        .collect();

    // inverse DFT along each axis: p(k) = (1/side) Σ_j f(j) ω^{-jk}
    let mut buf = vec![Complex64::new(0.0, 0.0); side];
    for axis in 0..m {
        let stride: usize = dims[axis + 1..].iter().product();
        let outer = grid / (stride * side);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * stride * side + s;
                for (kk, b) in buf.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for j in 0..side {
                        acc += values[base + j * stride] * roots[(j * kk) % side].conj();
                    }
                    *b = acc / side as f64;
                }
                for (kk, b) in buf.iter().enumerate() {
                    values[base + kk * stride] = *b;
                }
            }
        }
    }
    let imag_residue = values.iter().fold(0.0f64, |a, v| a.max(v.im.abs()));
    if imag_residue > 1e-9 {
        return Err(Error::Numerical(format!(
            "inverse DFT left imaginary residue {imag_residue:e}"
        )));
    }
    let mut pmf: Vec<f64> = values.iter().map(|v| v.re).collect();
    clean_pmf(&mut pmf)?;
    Ok(CountLaw {
        labels: cells.iter().map(Cell::to_string).collect(),
        dims,
        pmf,
        rank: r,
        provenance: Provenance::Exact,
        imag_residue,
    })
}

/// Joint law of block counts for a discrete kernel matrix.
pub fn joint_law_matrix(q: &Array2<f64>, blocks: &[Cell]) -> Result<CountLaw> {
    joint_law(&SpectralKernel::from_matrix(q)?, blocks)
}

/// Total variation distance `½ Σ |a − b|` on the union of both supports.
pub fn tv_distance(a: &CountLaw, b: &CountLaw) -> Result<f64> {
    if a.arity() != b.arity() {
        return domain(format!("arity mismatch: {} vs {}", a.arity(), b.arity()));
    }
    let dims: Vec<usize> = a.dims.iter().zip(&b.dims).map(|(x, y)| *x.max(y)).collect();
    let size: usize = dims.iter().product();
    let mut s = 0.0;
    for idx in 0..size {
        let c = CountLaw::unravel(&dims, idx);
        s += (a.prob(&c) - b.prob(&c)).abs();
    }
    Ok((0.5 * s).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tv: f64,
    pub leakage: f64,
    /// `rank · leakage + 1e-8`.
    pub bound: f64,
    pub pass: bool,
    pub cells: usize,
    pub rank: usize,
    pub imag_residue_kernel: f64,
    pub imag_residue_transferred: f64,
}

/// Compares the joint cell-count law under `K` with the joint block-count
/// law under `Q`.
pub fn verify_transference(k: &SpectralKernel, partition: &Partition, q: &TransferredKernel) -> Result<VerifyReport> {
    if q.blocks.len() != partition.len() {
        return domain("transferred kernel has a different number of blocks than the partition");
    }
    let law_k = joint_law(k, partition.cells())?;
    let law_q = joint_law(&q.to_kernel()?, &q.block_cells())?;
    let tv = tv_distance(&law_k, &law_q)?;
    let bound = k.rank() as f64 * q.leakage + 1e-8;
    Ok(VerifyReport {
        tv,
        leakage: q.leakage,
        bound,
        pass: tv <= bound,
        cells: partition.len(),
        rank: k.rank(),
        imag_residue_kernel: law_k.imag_residue,
        imag_residue_transferred: law_q.imag_residue,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub bins: usize,
    pub n_samples: u64,
    /// Samples that landed on atoms of exact probability below `1e-12`.
    pub impossible_hits: u64,
}

impl ChiSquareReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Pearson χ² of an empirical law against an exact one. Atoms with expected
/// count below 5 are pooled into one bin, kept only if the pool reaches 5.
pub fn empirical_vs_exact(exact: &CountLaw, empirical: &CountLaw) -> Result<ChiSquareReport> {
    let Some(n) = empirical.n_samples() else {
        return domain("second law must be empirical");
    };
    if exact.arity() != empirical.arity() {
        return domain("arity mismatch");
    }
    let nf = n as f64;
    let dims: Vec<usize> = exact.dims.iter().zip(&empirical.dims).map(|(x, y)| *x.max(y)).collect();
    let size: usize = dims.iter().product();
    let mut stat = 0.0;
    let mut bins = 0;
    let (mut pool_e, mut pool_o) = (0.0, 0.0);
    let mut impossible = 0u64;
    for idx in 0..size {
        let c = CountLaw::unravel(&dims, idx);
        let p = exact.prob(&c);
        let o = (empirical.prob(&c) * nf).round();
        if p < 1e-12 {
            impossible += o as u64;
            continue;
        }
        let e = p * nf;
        if e >= 5.0 {
            stat += (o - e) * (o - e) / e;
            bins += 1;
        } else {
            pool_e += e;
            pool_o += o;
        }
    }
    if pool_e >= 5.0 {
        stat += (pool_o - pool_e) * (pool_o - pool_e) / pool_e;
        bins += 1;
    }
    if bins == 0 {
        return domain("every expected count is below 5");
    }
    let df = bins - 1;
    let p_value = if impossible > 0 {
        0.0
    } else if df == 0 {
        1.0
    } else {
        statrs::function::gamma::gamma_ur(df as f64 / 2.0, stat / 2.0)
    };
    Ok(ChiSquareReport {
        statistic: stat,
        df,
        p_value,
        bins,
        n_samples: n,
        impossible_hits: impossible,
    })
}

/// Largest `|p̂ − p| / √(p(1−p)/n)` over all atoms. Atoms with `p ∈ {0, 1}`
/// must match exactly and score infinity otherwise.
pub fn max_atom_z_score(exact: &CountLaw, empirical: &CountLaw) -> Result<f64> {
    let Some(n) = empirical.n_samples() else {
        return domain("second law must be empirical");
    };
    if exact.arity() != empirical.arity() {
        return domain("arity mismatch");
    }
    let dims: Vec<usize> = exact.dims.iter().zip(&empirical.dims).map(|(x, y)| *x.max(y)).collect();
    let size: usize = dims.iter().product();
    let mut worst: f64 = 0.0;
    for idx in 0..size {
        let c = CountLaw::unravel(&dims, idx);
        let p = exact.prob(&c);
        let q = empirical.prob(&c);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let z = if se > 0.0 {
            (q - p).abs() / se
        } else if (q - p).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    Ok(worst)
}

/// Sparse view of a law, keyed by count vector.
pub fn as_map(law: &CountLaw) -> BTreeMap<Vec<usize>, f64> {
    law.atoms().into_iter().collect()
}
