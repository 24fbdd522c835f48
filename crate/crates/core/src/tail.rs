//! Conditioning and martingale diagnostics on discrete kernels.
//!
//! Tail σ-fields are infinite objects; everything here probes finite
//! surrogates of them and reports estimates with standard errors:
//!
//! * [`tail_mixing_sweep`]: how far the law of `ξ(A₀)` moves when the exact
//!   configuration beyond distance `R` is revealed, as `R` grows;
//! * [`downward_martingale_probe`]: `E|P(A | H_n) − P(A)|` where `H_n` is
//!   generated by counts on far cells `C_k, k ≥ n`;
//! * [`levy_convergence`]: `E|P(A | G(P_m)) − 1_A|` along a refining ladder of
//!   partitions.
//!
//! Exact answers come from exhaustive L-ensemble enumeration, which is also
//! the brute-force oracle for [`crate::countlaw::joint_law`].

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::countlaw::{CountLaw, Provenance};
use crate::error::{domain, validation, Error, Result};
use crate::ground::{Cell, GroundSpace, Partition};
use crate::kernel::{clamp_eigenvalue, SpectralKernel};
use crate::linalg::{det, invert, jacobi_eigen};
use crate::sampling::{DppSampler, PointConfiguration, RngStream};
use crate::transference::transfer_partition;

/// Largest site count accepted by exhaustive enumeration.
pub const MAX_ENUMERATION_SITES: usize = 16;
/// Spectral gap below 1 required by the L-ensemble.
pub const L_ENSEMBLE_GAP: f64 = 1e-8;
/// Shrink factor `δ` applied to kernels too close to a projection for the
/// exact path.
pub const SHRINK_DELTA: f64 = 1e-6;
/// Strata with fewer samples are pooled.
pub const MIN_STRATUM: usize = 10;

/// Probability of every subset `Y` of `n ≤ 16` sites,
/// `P(Y) = det(L_Y) / det(I + L)` with `L = K (I − K)⁻¹`.
#[derive(Debug, Clone)]
pub struct LEnsembleTable {
    n: usize,
    probs: Vec<f64>,
}

impl LEnsembleTable {
    pub fn sites(&self) -> usize {
        self.n
    }

    /// Probability of the subset encoded by bit mask `mask`.
    pub fn prob(&self, mask: u32) -> f64 {
        self.probs[mask as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.probs.iter().enumerate().map(|(m, &p)| (m as u32, p))
    }

    pub fn marginal(&self, site: usize) -> f64 {
        self.iter().filter(|(m, _)| m >> site & 1 == 1).map(|(_, p)| p).sum()
    }

    /// Joint law of block counts, aggregated over the table.
    pub fn count_law(&self, blocks: &[Cell]) -> Result<CountLaw> {
        let masks = block_masks(self.n, blocks)?;
        let dims: Vec<usize> = blocks.iter().map(|b| b.site_list().len() + 1).collect();
        let size: usize = dims.iter().product();
        let mut pmf = vec![0.0; size];
        for (m, p) in self.iter() {
            let mut idx = 0;
            for (bm, d) in masks.iter().zip(&dims) {
                idx = idx * d + (m & bm).count_ones() as usize;
            }
            pmf[idx] += p;
        }
        Ok(CountLaw {
            labels: blocks.iter().map(Cell::to_string).collect(),
            dims,
            pmf,
            rank: self.n,
            provenance: Provenance::Exact,
            imag_residue: 0.0,
        })
    }
}

fn block_masks(n: usize, blocks: &[Cell]) -> Result<Vec<u32>> {
    let mut used = 0u32;
    blocks
        .iter()
        .map(|b| {
            let Cell::Sites(sites) = b else {
                return domain("blocks must be site cells");
            };
            let mut m = 0u32;
            for &s in sites {
                if s >= n {
                    return domain(format!("site {s} outside {n} sites"));
                }
                m |= 1 << s;
            }
            if used & m != 0 {
                return domain("blocks overlap");
            }
            used |= m;
            Ok(m)
        })
        .collect()
}

fn submatrix(a: &Array2<f64>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| a[[rows[i], cols[j]]])
}

/// Enumerates all `2ⁿ` subset probabilities of the DPP with kernel `k`.
pub fn l_ensemble_enumerate(k: &Array2<f64>) -> Result<LEnsembleTable> {
    let n = k.nrows();
    if n != k.ncols() {
        return validation("kernel matrix must be square");
    }
    if n > MAX_ENUMERATION_SITES {
        return Err(Error::TooLarge(format!(
            "enumeration limited to {MAX_ENUMERATION_SITES} sites, got {n}"
        )));
    }
    let top = jacobi_eigen(k)?.values.first().copied().unwrap_or(0.0);
    if top >= 1.0 - L_ENSEMBLE_GAP {
        return validation(format!(
            "largest eigenvalue {top} is within {L_ENSEMBLE_GAP:e} of 1; I − K is not safely invertible"
        ));
    }
    let id = Array2::<f64>::eye(n);
    let l = k.dot(&invert(&(&id - k))?);
    let l = (&l + &l.t()) * 0.5;
    let norm = det(&(&id + &l));
    let mut probs = vec![0.0; 1 << n];
    let mut idx = Vec::with_capacity(n);
    for (mask, p) in probs.iter_mut().enumerate() {
        idx.clear();
        idx.extend((0..n).filter(|s| mask >> s & 1 == 1));
        *p = det(&submatrix(&l, &idx, &idx)) / norm;
    }
    for p in probs.iter_mut() {
        if *p < 0.0 {
            if *p < -1e-12 {
                return Err(Error::Numerical(format!("subset probability {p:e} is negative")));
            }
            *p = 0.0;
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Numerical(format!("subset probabilities sum to {total}")));
    }
    let table = LEnsembleTable { n, probs };
    for s in 0..n {
        let m = table.marginal(s);
        if (m - k[[s, s]]).abs() > 1e-9 {
            return Err(Error::Numerical(format!(
                "marginal of site {s} is {m}, kernel diagonal is {}",
                k[[s, s]]
            )));
        }
    }
    Ok(table)
}

/// Law of a sum of independent Bernoulli variables.
pub fn poisson_binomial(p: &[f64]) -> Vec<f64> {
    let mut pmf = vec![0.0; p.len() + 1];
    pmf[0] = 1.0;
    for (j, &q) in p.iter().enumerate() {
        for n in (0..=j + 1).rev() {
            let step = if n > 0 { pmf[n - 1] * q } else { 0.0 };
            pmf[n] = pmf[n] * (1.0 - q) + step;
        }
    }
    pmf
}

/// Law of the count on `near` for the DPP with kernel `k`: Bernoulli sum over
/// the eigenvalues of the near block.
pub fn near_count_law(k: &Array2<f64>, near: &[usize]) -> Result<Vec<f64>> {
    if near.is_empty() {
        return Ok(vec![1.0]);
    }
    let block = submatrix(k, near, near);
    let ev = jacobi_eigen(&block)?
        .values
        .into_iter()
        .map(clamp_eigenvalue)
        .collect::<Result<Vec<_>>>()?;
    Ok(poisson_binomial(&ev))
}

/// Kernel of the DPP on the remaining sites conditioned on `occupied ⊆ X`
/// and `empty ∩ X = ∅`. Returns the kernel and the remaining site labels.
///
/// Empty sites are removed with `K_UU + K_UT (I − K_TT)⁻¹ K_TU`, then occupied
/// sites by the Schur complement `K'_RR − K'_RS (K'_SS)⁻¹ K'_SR`.
pub fn conditional_kernel(k: &Array2<f64>, occupied: &[usize], empty: &[usize]) -> Result<(Array2<f64>, Vec<usize>)> {
    let n = k.nrows();
    let mut role = vec![0u8; n];
    for (list, tag) in [(occupied, 1u8), (empty, 2u8)] {
        for &s in list {
            if s >= n || role[s] != 0 {
                return domain(format!("site {s} out of range or listed twice"));
            }
            role[s] = tag;
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&s| role[s] != 2).collect();
    let mut kk = submatrix(k, &keep, &keep);
    if !empty.is_empty() {
        let t: Vec<usize> = empty.to_vec();
        let itt = &Array2::<f64>::eye(t.len()) - &submatrix(k, &t, &t);
        let inv = invert(&itt).map_err(|_| Error::Domain("conditioning event has probability zero".into()))?;
        let kut = submatrix(k, &keep, &t);
        kk = kk + kut.dot(&inv).dot(&kut.t());
    }
    // positions of occupied and remaining sites within `keep`
    let s_pos: Vec<usize> = (0..keep.len()).filter(|&i| role[keep[i]] == 1).collect();
    let r_pos: Vec<usize> = (0..keep.len()).filter(|&i| role[keep[i]] == 0).collect();
    let rest: Vec<usize> = r_pos.iter().map(|&i| keep[i]).collect();
    let mut out = submatrix(&kk, &r_pos, &r_pos);
    if !s_pos.is_empty() {
        let kss = submatrix(&kk, &s_pos, &s_pos);
        let inv = invert(&kss).map_err(|_| Error::Domain("conditioning event has probability zero".into()))?;
        let krs = submatrix(&kk, &r_pos, &s_pos);
        out = out - krs.dot(&inv).dot(&krs.t());
    }
    let sym = (&out + &out.t()) * 0.5;
    Ok((sym, rest))
}

/// How a conditional law is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionMethod {
    /// Renormalize the enumerated subset table (`n ≤ 16`).
    Exact,
    /// Keep the draws that match the conditioning pattern.
    Rejection { draws: usize, stream: RngStream },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLaw {
    pub law: CountLaw,
    /// Exact probability of the conditioning event (exact path).
    pub event_probability: Option<f64>,
    pub acceptance_rate: Option<f64>,
    pub n_accepted: Option<u64>,
}

/// Law of `ξ(near)` given the exact occupancy of the far sites. `far` lists
/// `(site, occupied)` pairs.
pub fn conditional_law(
    k: &Array2<f64>,
    far: &[(usize, bool)],
    near: &Cell,
    method: ConditionMethod,
) -> Result<ConditionalLaw> {
    let n = k.nrows();
    let Cell::Sites(near_sites) = near else {
        return domain("near window must be a site cell");
    };
    let mut far_mask = 0u64;
    let mut far_pattern = 0u64;
    for &(s, occ) in far {
        if s >= n {
            return domain(format!("far site {s} outside {n} sites"));
        }
        if far_mask >> s & 1 == 1 {
            return domain(format!("far site {s} listed twice"));
        }
        if near.contains_site(s) {
            return domain(format!("site {s} is both near and far"));
        }
        far_mask |= 1 << s;
        far_pattern |= u64::from(occ) << s;
    }
    let dims = vec![near_sites.len() + 1];
    let label = vec![near.to_string()];
    match method {
        ConditionMethod::Exact => {
            let table = l_ensemble_enumerate(k)?;
            let near_mask = near_sites.iter().fold(0u32, |m, &s| m | 1 << s);
            let mut pmf = vec![0.0; near_sites.len() + 1];
            for (m, p) in table.iter() {
                if u64::from(m) & far_mask == far_pattern {
                    pmf[(m & near_mask).count_ones() as usize] += p;
                }
            }
            let z: f64 = pmf.iter().sum();
            if z < 1e-12 {
                return domain(format!("conditioning event has probability {z:e}"));
            }
            pmf.iter_mut().for_each(|p| *p /= z);
            Ok(ConditionalLaw {
                law: CountLaw {
                    labels: label,
                    dims,
                    pmf,
                    rank: near_sites.len(),
                    provenance: Provenance::Exact,
                    imag_residue: 0.0,
                },
                event_probability: Some(z),
                acceptance_rate: None,
                n_accepted: None,
            })
        }
        ConditionMethod::Rejection { draws, stream } => {
            let sampler = DppSampler::new(k)?;
            let configs = sampler.sample_many(stream, draws);
            let accepted: Vec<Vec<usize>> = configs
                .iter()
                .filter_map(|c| {
                    let PointConfiguration::Sites(s) = c else { return None };
                    let m = s.iter().fold(0u64, |m, &x| m | 1 << x);
                    (m & far_mask == far_pattern).then(|| vec![s.iter().filter(|x| near.contains_site(**x)).count()])
                })
                .collect();
            if accepted.is_empty() {
                return domain("no draw matched the conditioning pattern");
            }
            let law = CountLaw::from_samples(label, dims, near_sites.len(), &accepted)?;
            Ok(ConditionalLaw {
                law,
                event_probability: None,
                acceptance_rate: Some(accepted.len() as f64 / draws as f64),
                n_accepted: Some(accepted.len() as u64),
            })
        }
    }
}

/// Events on a configuration used by the tail probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TailEvent {
    /// `ξ(A₀) ≥ k`.
    NearAtLeast { k: usize },
    /// `ξ(A₀)` is even (or odd).
    NearParity { even: bool },
    /// Total number of points equals `k`.
    TotalEquals { k: usize },
}

impl TailEvent {
    fn holds(&self, near_count: usize, total: usize) -> bool {
        match *self {
            TailEvent::NearAtLeast { k } => near_count >= k,
            TailEvent::NearParity { even } => (near_count % 2 == 0) == even,
            TailEvent::TotalEquals { k } => total == k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TailMethod {
    Exact,
    MonteCarlo { n_samples: usize, seed: u64 },
}

/// Configuration shared by the tail sweep and the downward probe on a
/// discrete kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailPlan {
    /// Sites of the near window `A₀`.
    pub near: Vec<usize>,
    /// Far regions are the sites at distance at least `R` from `A₀`.
    pub radii: Vec<usize>,
    /// Sites per far cell `C_k` for the downward probe.
    #[serde(default = "one")]
    pub far_cell_size: usize,
    pub event: TailEvent,
    pub method: TailMethod,
}

fn one() -> usize {
    1
}

impl TailPlan {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.near.is_empty() {
            return validation("near window is empty");
        }
        if let Some(&s) = self.near.iter().find(|&&s| s >= n) {
            return validation(format!("near site {s} outside {n} sites"));
        }
        if self.radii.is_empty() || self.radii[0] == 0 {
            return validation("radii must be positive");
        }
        if self.radii.windows(2).any(|w| w[0] >= w[1]) {
            return validation("radii must be strictly increasing");
        }
        if self.far_cell_size == 0 {
            return validation("far cell size must be positive");
        }
        if let TailMethod::MonteCarlo { n_samples, .. } = self.method {
            if n_samples == 0 {
                return validation("Monte Carlo needs n_samples > 0");
            }
        }
        Ok(())
    }

    fn distance(&self, s: usize) -> usize {
        self.near.iter().map(|&a| a.abs_diff(s)).min().unwrap_or(usize::MAX)
    }

    /// Sites at distance at least `radius` from the near window.
    pub fn far_sites(&self, n: usize, radius: usize) -> Vec<usize> {
        (0..n).filter(|&s| self.distance(s) >= radius).collect()
    }

    /// Far cells `C_1, C_2, …`: non-near sites ordered by distance to `A₀`
    /// and grouped `far_cell_size` at a time.
    pub fn far_cells(&self, n: usize) -> Vec<Vec<usize>> {
        let mut sites: Vec<usize> = (0..n).filter(|s| !self.near.contains(s)).collect();
        sites.sort_by_key(|&s| (self.distance(s), s));
        sites.chunks(self.far_cell_size).map(<[usize]>::to_vec).collect()
    }
}

/// One row of a tidy experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub parameter: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub n_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub rows: Vec<EstimateRow>,
    /// `δ` when the kernel was replaced by `(1 − δ) K` for the exact path.
    pub shrink: Option<f64>,
    /// Largest step-to-step increase of the estimate.
    pub max_increase: f64,
    /// Steps that increase by more than 3 pooled standard errors.
    pub increases_beyond_3se: usize,
}

impl TailReport {
    fn new(rows: Vec<EstimateRow>, shrink: Option<f64>) -> Self {
        let mut max_increase = f64::NEG_INFINITY;
        let mut bad = 0;
        for w in rows.windows(2) {
            let d = w[1].estimate - w[0].estimate;
            max_increase = max_increase.max(d);
            let pooled = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            if d > 3.0 * pooled + 1e-12 {
                bad += 1;
            }
        }
        TailReport {
            rows,
            shrink,
            max_increase: if max_increase.is_finite() { max_increase } else { 0.0 },
            increases_beyond_3se: bad,
        }
    }

    pub fn weakly_decreasing(&self) -> bool {
        self.increases_beyond_3se == 0
    }
}

/// Kernel used by the exact path: `k` itself, or `(1 − δ) k` when its top
/// eigenvalue is too close to 1.
fn exact_kernel(k: &Array2<f64>) -> Result<(Array2<f64>, Option<f64>)> {
    let top = jacobi_eigen(k)?.values.first().copied().unwrap_or(0.0);
    if top >= 1.0 - L_ENSEMBLE_GAP {
        Ok((k * (1.0 - SHRINK_DELTA), Some(SHRINK_DELTA)))
    } else {
        Ok((k.clone(), None))
    }
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    0.5 * (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

fn mask_of(sites: &[usize]) -> u32 {
    sites.iter().fold(0, |m, &s| m | 1 << s)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// For each radius `R`, `E[TV(law(ξ(A₀) | X ∩ far(R)), law(ξ(A₀)))]`.
///
/// The exact path enumerates all subsets. The Monte Carlo path draws far
/// configurations from the sampler and evaluates each conditional law
/// exactly through [`conditional_kernel`].
pub fn tail_mixing_sweep(k: &Array2<f64>, plan: &TailPlan) -> Result<TailReport> {
    let n = k.nrows();
    plan.validate(n)?;
    let near_mask = mask_of(&plan.near);
    match plan.method {
        TailMethod::Exact => {
            let (kk, shrink) = exact_kernel(k)?;
            let table = l_ensemble_enumerate(&kk)?;
            let mut unconditional = vec![0.0; plan.near.len() + 1];
            for (m, p) in table.iter() {
                unconditional[(m & near_mask).count_ones() as usize] += p;
            }
            let mut rows = Vec::new();
            for &r in &plan.radii {
                let far = mask_of(&plan.far_sites(n, r));
                let mut by_pattern: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
                for (m, p) in table.iter() {
                    let e = by_pattern
                        .entry(m & far)
                        .or_insert_with(|| vec![0.0; plan.near.len() + 1]);
                    e[(m & near_mask).count_ones() as usize] += p;
                }
                let mut expected = 0.0;
                let mut support = 0;
                for joint in by_pattern.values() {
                    let z: f64 = joint.iter().sum();
                    if z <= 0.0 {
                        continue;
                    }
                    support += 1;
                    let cond: Vec<f64> = joint.iter().map(|p| p / z).collect();
                    expected += z * tv(&cond, &unconditional);
                }
                rows.push(EstimateRow {
                    parameter: r,
                    estimate: expected,
                    std_error: 0.0,
                    n_effective: support,
                });
            }
            Ok(TailReport::new(rows, shrink))
        }
        TailMethod::MonteCarlo { n_samples, seed } => {
            let sampler = DppSampler::new(k)?;
            let configs = sampler.sample_many(RngStream::new(seed, 0), n_samples);
            let unconditional = near_count_law(k, &plan.near)?;
            let mut rows = Vec::new();
            for &r in &plan.radii {
                let far = plan.far_sites(n, r);
                let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
                let mut values = Vec::with_capacity(configs.len());
                for c in &configs {
                    let PointConfiguration::Sites(s) = c else { unreachable!() };
                    let occupied: Vec<usize> = s.iter().copied().filter(|x| far.binary_search(x).is_ok()).collect();
                    let v = match cache.get(&occupied) {
                        Some(v) => *v,
                        None => {
                            let empty: Vec<usize> = far.iter().copied().filter(|x| !occupied.contains(x)).collect();
                            let (ck, rest) = conditional_kernel(k, &occupied, &empty)?;
                            let near_pos: Vec<usize> = plan
                                .near
                                .iter()
                                .map(|a| rest.iter().position(|x| x == a).expect("near sites are never far"))
                                .collect();
                            let v = tv(&near_count_law(&ck, &near_pos)?, &unconditional);
                            cache.insert(occupied, v);
                            v
                        }
                    };
                    values.push(v);
                }
                let (mean, se) = mean_and_se(&values);
                rows.push(EstimateRow {
                    parameter: r,
                    estimate: mean,
                    std_error: se,
                    n_effective: values.len(),
                });
            }
            Ok(TailReport::new(rows, None))
        }
    }
}

/// Per-stratum hit frequencies with starved strata merged into one pool.
struct Strata<'a> {
    counts: BTreeMap<&'a [usize], (usize, usize)>,
    starved: Vec<&'a [usize]>,
    pooled: (usize, usize),
    overall: f64,
}

impl<'a> Strata<'a> {
    /// Strata over the samples selected by `take`.
    fn new(keys: &'a [Vec<usize>], hits: &[bool], pool: bool, take: impl Fn(usize) -> bool) -> Result<Self> {
        let mut counts: BTreeMap<&[usize], (usize, usize)> = BTreeMap::new();
        let (mut n, mut h) = (0usize, 0usize);
        for (i, (k, &hit)) in keys.iter().zip(hits).enumerate() {
            if take(i) {
                let e = counts.entry(k.as_slice()).or_default();
                e.0 += 1;
                e.1 += usize::from(hit);
                n += 1;
                h += usize::from(hit);
            }
        }
        let starved: Vec<&[usize]> = if pool {
            counts.iter().filter(|(_, v)| v.0 < MIN_STRATUM).map(|(k, _)| *k).collect()
        } else {
            Vec::new()
        };
        if counts.len() > 1 && starved.len() == counts.len() {
            return domain("every stratum has fewer than 10 samples");
        }
        let pooled = starved.iter().fold((0, 0), |acc, k| {
            let v = counts[k];
            (acc.0 + v.0, acc.1 + v.1)
        });
        Ok(Strata {
            counts,
            starved,
            pooled,
            overall: h as f64 / n.max(1) as f64,
        })
    }

    /// Frequency of the stratum holding `key`, falling back to the pool for
    /// starved or unseen strata. `None` when neither exists.
    fn freq(&self, key: &[usize]) -> Option<f64> {
        let v = match self.counts.get(key) {
            Some(v) if self.starved.binary_search(&key).is_err() => *v,
            _ => self.pooled,
        };
        (v.0 > 0).then(|| v.1 as f64 / v.0 as f64)
    }

    fn kept(&self) -> usize {
        self.counts.len() - self.starved.len() + usize::from(!self.starved.is_empty())
    }
}

/// Stratified plug-in estimate of `E|P(A | key) − 1_A|`. Returns
/// `(estimate, std_error, strata, pooled)`.
fn stratified_error(keys: &[Vec<usize>], hits: &[bool], pool: bool) -> Result<(f64, f64, usize, usize)> {
    let strata = Strata::new(keys, hits, pool, |_| true)?;
    let values: Vec<f64> = keys
        .iter()
        .zip(hits)
        .map(|(k, &h)| (strata.freq(k).expect("own stratum") - f64::from(u8::from(h))).abs())
        .collect();
    let (mean, se) = mean_and_se(&values);
    Ok((mean, se, strata.kept(), strata.starved.len()))
}

/// Cross-fitted estimate of `E|P(A | key) − P(A)|`.
///
/// Uses `|p_s − p| = E[(1_A − p) sgn(p_s − p) | s]` with the sign and the
/// centring taken from the other half of the samples, so the estimate has
/// mean exactly zero when `A` is independent of the key. The plug-in
/// `|p̂_s − p̂|` would instead be biased upward by the noise in `p̂_s`.
/// Returns `(estimate, std_error, strata)`.
fn cross_fitted_gap(keys: &[Vec<usize>], hits: &[bool]) -> Result<(f64, f64, usize)> {
    let even = Strata::new(keys, hits, true, |i| i % 2 == 0)?;
    let odd = Strata::new(keys, hits, true, |i| i % 2 == 1)?;
    let values: Vec<f64> = keys
        .iter()
        .zip(hits)
        .enumerate()
        .map(|(i, (k, &h))| {
            let other = if i % 2 == 0 { &odd } else { &even };
            let sign = other.freq(k).map_or(0.0, |p| {
                let d = p - other.overall;
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
            (f64::from(u8::from(h)) - other.overall) * sign
        })
        .collect();
    let (mean, se) = mean_and_se(&values);
    let all = Strata::new(keys, hits, true, |_| true)?;
    Ok((mean, se, all.kept()))
}

/// `E|P(A | H_n) − P(A)|` for `n = 1, …, K + 1`, where `H_n` is generated by
/// the counts on far cells `C_k, k ≥ n` (so `n = K + 1` conditions on
/// nothing). The plan's radii are not used.
pub fn downward_martingale_probe(k: &Array2<f64>, plan: &TailPlan) -> Result<TailReport> {
    let n = k.nrows();
    plan.validate(n)?;
    let cells = plan.far_cells(n);
    let near_mask = mask_of(&plan.near);
    let cell_masks: Vec<u32> = cells.iter().map(|c| mask_of(c)).collect();
    let levels = cells.len() + 1;
    match plan.method {
        TailMethod::Exact => {
            let (kk, shrink) = exact_kernel(k)?;
            let table = l_ensemble_enumerate(&kk)?;
            let holds = |m: u32| plan.event.holds((m & near_mask).count_ones() as usize, m.count_ones() as usize);
            let p_event: f64 = table.iter().filter(|(m, _)| holds(*m)).map(|(_, p)| p).sum();
            let mut rows = Vec::new();
            for level in 1..=levels {
                let mut strata: BTreeMap<Vec<u32>, (f64, f64)> = BTreeMap::new();
                for (m, p) in table.iter() {
                    let key: Vec<u32> = cell_masks[level - 1..].iter().map(|c| (m & c).count_ones()).collect();
                    let e = strata.entry(key).or_default();
                    e.0 += p;
                    if holds(m) {
                        e.1 += p;
                    }
                }
                let gap: f64 = strata.values().map(|(pk, pa)| (pa - p_event * pk).abs()).sum();
                rows.push(EstimateRow {
                    parameter: level,
                    estimate: gap,
                    std_error: 0.0,
                    n_effective: strata.len(),
                });
            }
            Ok(TailReport::new(rows, shrink))
        }
        TailMethod::MonteCarlo { n_samples, seed } => {
            let sampler = DppSampler::new(k)?;
            let configs = sampler.sample_many(RngStream::new(seed, 0), n_samples);
            let masks: Vec<u32> = configs
                .iter()
                .map(|c| match c {
                    PointConfiguration::Sites(s) => mask_of(s),
                    PointConfiguration::Points(_) => unreachable!(),
                })
                .collect();
            let hits: Vec<bool> = masks
                .iter()
                .map(|&m| plan.event.holds((m & near_mask).count_ones() as usize, m.count_ones() as usize))
                .collect();
            let mut rows = Vec::new();
            for level in 1..=levels {
                let keys: Vec<Vec<usize>> = masks
                    .iter()
                    .map(|&m| cell_masks[level - 1..].iter().map(|c| (m & c).count_ones() as usize).collect())
                    .collect();
                let (est, se, strata) = cross_fitted_gap(&keys, &hits)?;
                rows.push(EstimateRow {
                    parameter: level,
                    estimate: est,
                    std_error: se,
                    n_effective: strata,
                });
            }
            Ok(TailReport::new(rows, None))
        }
    }
}

/// Predicate on the count vector of the finest ladder level: the summed
/// count over `cells` compared against `kind`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyEvent {
    pub cells: Vec<usize>,
    pub kind: CountPredicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CountPredicate {
    AtLeast { k: usize },
    Equals { k: usize },
    Parity { even: bool },
}

impl CountPredicate {
    pub fn holds(&self, c: usize) -> bool {
        match *self {
            CountPredicate::AtLeast { k } => c >= k,
            CountPredicate::Equals { k } => c == k,
            CountPredicate::Parity { even } => (c % 2 == 0) == even,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevyPlan {
    /// Coarsest level `P_1`.
    pub base: Partition,
    pub factor: usize,
    /// Number of ladder levels `M`.
    pub levels: usize,
    pub event: LevyEvent,
    pub n_samples: usize,
    pub seed: u64,
    /// Leakage tolerance used to transfer continuous kernels onto `P_M`.
    pub tol: f64,
}

impl LevyPlan {
    /// `P_1 ⊂ P_2 ⊂ … ⊂ P_M`.
    pub fn ladder(&self) -> Result<Vec<Partition>> {
        if self.levels == 0 {
            return validation("ladder needs at least one level");
        }
        let mut out = vec![self.base.clone()];
        for _ in 1..self.levels {
            let next = out.last().expect("nonempty").refine(self.factor)?;
            out.push(next);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyRow {
    pub level: usize,
    pub error: f64,
    pub std_error: f64,
    pub strata: usize,
    pub pooled_strata: usize,
}

/// Samples of the finest-level count vector, drawn exactly. Discrete kernels
/// are sampled directly; continuous kernels through their transfer onto the
/// finest partition, whose block counts have the same joint law as the cell
/// counts.
pub fn sample_cell_counts(
    k: &SpectralKernel,
    finest: &Partition,
    n_samples: usize,
    stream: RngStream,
    tol: f64,
) -> Result<Vec<Vec<usize>>> {
    match k.space() {
        GroundSpace::Discrete { .. } => {
            let sampler = DppSampler::from_kernel(k)?;
            let owner: Vec<Option<usize>> = (0..sampler.sites()).map(|s| finest.cell_of_site(s)).collect();
            Ok(sampler
                .sample_many(stream, n_samples)
                .into_iter()
                .map(|c| {
                    let mut counts = vec![0; finest.len()];
                    if let PointConfiguration::Sites(s) = c {
                        for x in s {
                            if let Some(b) = owner[x] {
                                counts[b] += 1;
                            }
                        }
                    }
                    counts
                })
                .collect())
        }
        GroundSpace::Interval { .. } => {
            let q = transfer_partition(k, finest, tol)?;
            let owner = q.block_of_site();
            let sampler = DppSampler::new(&q.q)?;
            Ok(sampler
                .sample_many(stream, n_samples)
                .into_iter()
                .map(|c| {
                    let mut counts = vec![0; finest.len()];
                    if let PointConfiguration::Sites(s) = c {
                        for x in s {
                            counts[owner[x]] += 1;
                        }
                    }
                    counts
                })
                .collect())
        }
    }
}

/// For each ladder level `m`, estimates `E|P(A | G(P_m)) − 1_A|` by
/// stratifying the samples on their level-`m` count vector. Starved strata
/// are pooled below the finest level; at the finest level the event is a
/// function of the stratum and the error is exactly zero.
pub fn levy_convergence(k: &SpectralKernel, plan: &LevyPlan) -> Result<Vec<LevyRow>> {
    let ladder = plan.ladder()?;
    let finest = ladder.last().expect("nonempty ladder");
    if plan.n_samples == 0 {
        return validation("n_samples must be positive");
    }
    if plan.event.cells.iter().any(|&c| c >= finest.len()) {
        return validation("event refers to a cell outside the finest level");
    }
    let samples = sample_cell_counts(k, finest, plan.n_samples, RngStream::new(plan.seed, 0), plan.tol)?;
    let hits: Vec<bool> = samples
        .iter()
        .map(|c| plan.event.kind.holds(plan.event.cells.iter().map(|&i| c[i]).sum()))
        .collect();
    let mut rows = Vec::with_capacity(ladder.len());
    for (m, level) in ladder.iter().enumerate() {
        let parent: Vec<usize> = if m + 1 == ladder.len() {
            (0..finest.len()).collect()
        } else {
            finest.parents_in(level)?
        };
        let keys: Vec<Vec<usize>> = samples
            .iter()
            .map(|c| {
                let mut key = vec![0; level.len()];
                for (i, &x) in c.iter().enumerate() {
                    key[parent[i]] += x;
                }
                key
            })
            .collect();
        let finest_level = m + 1 == ladder.len();
        let (error, se, strata, pooled) = stratified_error(&keys, &hits, !finest_level)?;
        rows.push(LevyRow {
            level: m + 1,
            error,
            std_error: se,
            strata,
            pooled_strata: pooled,
        });
    }
    Ok(rows)
}
