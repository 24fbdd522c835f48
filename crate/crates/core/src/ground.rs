//! Ground spaces, cells, partitions and quadrature.
//!
//! Two ground spaces are supported: a finite set of sites with counting
//! measure and a bounded interval with Lebesgue measure. Interval cells are
//! finite unions of half-open pieces `[a, b)`, so cells of a partition are
//! literally disjoint rather than disjoint up to null sets.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, validation, Error, Result};

/// Default Gauss-Legendre order per piece.
pub const DEFAULT_QUADRATURE_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GroundSpace {
    Discrete { size: usize },
    Interval { lo: f64, hi: f64 },
}

impl GroundSpace {
    pub fn discrete(size: usize) -> Result<Self> {
        let s = GroundSpace::Discrete { size };
        s.validate()?;
        Ok(s)
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let s = GroundSpace::Interval { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn unit_interval() -> Self {
        GroundSpace::Interval { lo: 0.0, hi: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GroundSpace::Discrete { size } if size == 0 => {
                validation("discrete ground space needs at least one site")
            }
            GroundSpace::Interval { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                validation(format!("interval ground space needs lo < hi, got [{lo}, {hi})"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, GroundSpace::Discrete { .. })
    }

    /// The whole space as a single cell.
    pub fn whole(&self) -> Cell {
        match *self {
            GroundSpace::Discrete { size } => Cell::Sites((0..size).collect()),
            GroundSpace::Interval { lo, hi } => Cell::Pieces(vec![Piece { a: lo, b: hi }]),
        }
    }

    pub fn total_measure(&self) -> f64 {
        match *self {
            GroundSpace::Discrete { size } => size as f64,
            GroundSpace::Interval { lo, hi } => hi - lo,
        }
    }
}

/// Half-open subinterval `[a, b)`. Serialized as `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Piece {
    pub a: f64,
    pub b: f64,
}

impl From<[f64; 2]> for Piece {
    fn from(v: [f64; 2]) -> Self {
        Piece { a: v[0], b: v[1] }
    }
}

impl From<Piece> for [f64; 2] {
    fn from(p: Piece) -> Self {
        [p.a, p.b]
    }
}

impl Piece {
    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a <= x && x < self.b
    }
}

/// A measurable window: a sorted set of sites or a sorted union of disjoint
/// half-open pieces.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Sites(Vec<usize>),
    Pieces(Vec<Piece>),
}

impl Cell {
    /// Builds a site cell, sorting the indices. Duplicates are rejected.
    pub fn sites(mut sites: Vec<usize>) -> Result<Self> {
        sites.sort_unstable();
        if sites.windows(2).any(|w| w[0] == w[1]) {
            return validation("site cell contains duplicate indices");
        }
        Ok(Cell::Sites(sites))
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Cell::pieces(vec![Piece { a, b }])
    }

    /// Builds an interval cell from pieces, sorting them. Overlapping or
    /// empty pieces are rejected.
    pub fn pieces(mut pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return validation("interval cell needs at least one piece");
        }
        for p in &pieces {
            if !(p.a.is_finite() && p.b.is_finite() && p.a < p.b) {
                return validation(format!("invalid piece [{}, {})", p.a, p.b));
            }
        }
        pieces.sort_by(|x, y| x.a.total_cmp(&y.a));
        if pieces.windows(2).any(|w| w[1].a < w[0].b) {
            return validation("interval cell pieces overlap");
        }
        Ok(Cell::Pieces(pieces))
    }

    /// Checks that the cell lives in `space`.
    pub fn check_in(&self, space: &GroundSpace) -> Result<()> {
        match (self, space) {
            (Cell::Sites(s), GroundSpace::Discrete { size }) => {
                if let Some(&bad) = s.iter().find(|&&i| i >= *size) {
                    return domain(format!("site {bad} out of range for {size} sites"));
                }
                Ok(())
            }
            (Cell::Pieces(ps), GroundSpace::Interval { lo, hi }) => {
                for p in ps {
                    if p.a < *lo || p.b > *hi {
                        return domain(format!(
                            "piece [{}, {}) not inside [{lo}, {hi})",
                            p.a, p.b
                        ));
                    }
                }
                Ok(())
            }
            _ => domain("cell kind does not match ground space kind"),
        }
    }

    pub fn measure(&self) -> f64 {
        match self {
            Cell::Sites(s) => s.len() as f64,
            Cell::Pieces(ps) => ps.iter().map(Piece::len).sum(),
        }
    }

    pub fn contains_site(&self, site: usize) -> bool {
        match self {
            Cell::Sites(s) => s.binary_search(&site).is_ok(),
            Cell::Pieces(_) => false,
        }
    }

    pub fn contains_point(&self, x: f64) -> bool {
        match self {
            Cell::Sites(_) => false,
            Cell::Pieces(ps) => ps.iter().any(|p| p.contains(x)),
        }
    }

    pub fn is_disjoint(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Sites(a), Cell::Sites(b)) => {
                let (mut i, mut j) = (0, 0);
                while i < a.len() && j < b.len() {
                    match a[i].cmp(&b[j]) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => return false,
                    }
                }
                true
            }
            (Cell::Pieces(a), Cell::Pieces(b)) => a
                .iter()
                .all(|p| b.iter().all(|q| p.b <= q.a || q.b <= p.a)),
            _ => true,
        }
    }

    pub fn site_list(&self) -> &[usize] {
        match self {
            Cell::Sites(s) => s,
            Cell::Pieces(_) => &[],
        }
    }

    pub fn piece_list(&self) -> &[Piece] {
        match self {
            Cell::Sites(_) => &[],
            Cell::Pieces(p) => p,
        }
    }

    /// Union of a collection of disjoint cells of the same kind, with
    /// abutting pieces merged.
    pub fn union<'a>(cells: impl IntoIterator<Item = &'a Cell>) -> Result<Cell> {
        let mut sites = Vec::new();
        let mut pieces = Vec::new();
        for c in cells {
            match c {
                Cell::Sites(s) => sites.extend_from_slice(s),
                Cell::Pieces(p) => pieces.extend_from_slice(p),
            }
        }
        match (sites.is_empty(), pieces.is_empty()) {
            (false, true) => Cell::sites(sites),
            (true, false) => {
                let Cell::Pieces(sorted) = Cell::pieces(pieces)? else {
                    unreachable!()
                };
                let mut merged: Vec<Piece> = Vec::with_capacity(sorted.len());
                for p in sorted {
                    match merged.last_mut() {
                        Some(last) if last.b == p.a => last.b = p.b,
                        _ => merged.push(p),
                    }
                }
                Ok(Cell::Pieces(merged))
            }
            (true, true) => validation("union of no cells"),
            (false, false) => validation("cannot mix site and interval cells"),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Sites(s) => {
                let parts: Vec<String> = s.iter().map(|i| i.to_string()).collect();
                write!(f, "{{{}}}", parts.join(","))
            }
            Cell::Pieces(ps) => {
                let parts: Vec<String> = ps.iter().map(|p| format!("[{},{})", p.a, p.b)).collect();
                write!(f, "{}", parts.join("∪"))
            }
        }
    }
}

/// Measure of `cell`: cardinality for discrete spaces, total length for
/// intervals.
pub fn measure(space: &GroundSpace, cell: &Cell) -> Result<f64> {
    cell.check_in(space)?;
    Ok(cell.measure())
}

/// An ordered list of pairwise disjoint cells. The window of the partition
/// is the union of its cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    space: GroundSpace,
    cells: Vec<Cell>,
    label: String,
}

impl Partition {
    pub fn new(space: GroundSpace, cells: Vec<Cell>, label: impl Into<String>) -> Result<Self> {
        space.validate()?;
        if cells.is_empty() {
            return validation("partition needs at least one cell");
        }
        for (i, c) in cells.iter().enumerate() {
            c.check_in(&space)?;
            if c.measure() <= 0.0 {
                return validation(format!("cell {i} has zero measure"));
            }
        }
        for i in 0..cells.len() {
            for j in (i + 1)..cells.len() {
                if !cells[i].is_disjoint(&cells[j]) {
                    return domain(format!("cells {i} and {j} overlap"));
                }
            }
        }
        Ok(Partition {
            space,
            cells,
            label: label.into(),
        })
    }

    /// `m` contiguous cells of (nearly) equal measure covering the space.
    pub fn uniform(space: GroundSpace, m: usize) -> Result<Self> {
        if m == 0 {
            return validation("uniform partition needs m >= 1");
        }
        let cells = match space {
            GroundSpace::Interval { lo, hi } => {
                let h = (hi - lo) / m as f64;
                (0..m)
                    .map(|i| {
                        let a = lo + h * i as f64;
                        let b = if i + 1 == m { hi } else { lo + h * (i + 1) as f64 };
                        Cell::Pieces(vec![Piece { a, b }])
                    })
                    .collect()
            }
            GroundSpace::Discrete { size } => {
                if m > size {
                    return validation(format!("cannot split {size} sites into {m} cells"));
                }
                split_sites(&(0..size).collect::<Vec<_>>(), m)
                    .into_iter()
                    .map(Cell::Sites)
                    .collect()
            }
        };
        Partition::new(space, cells, format!("uniform-{m}"))
    }

    /// One cell per site.
    pub fn singletons(size: usize) -> Result<Self> {
        let space = GroundSpace::discrete(size)?;
        Partition::new(
            space,
            (0..size).map(|i| Cell::Sites(vec![i])).collect(),
            "singletons",
        )
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn window(&self) -> Cell {
        Cell::union(&self.cells).expect("partition cells are disjoint and homogeneous")
    }

    /// Largest cell measure. Point separation only holds in the limit of
    /// refinement, so this is the recorded resolution of the partition.
    pub fn resolution(&self) -> f64 {
        self.cells.iter().map(Cell::measure).fold(0.0, f64::max)
    }

    pub fn cell_of_site(&self, site: usize) -> Option<usize> {
        self.cells.iter().position(|c| c.contains_site(site))
    }

    pub fn cell_of_point(&self, x: f64) -> Option<usize> {
        self.cells.iter().position(|c| c.contains_point(x))
    }

    /// Refines every cell into `factor` children. Interval pieces are cut
    /// into `factor` equal lengths (child `j` collects the `j`-th cut of every
    /// piece); site cells are cut into contiguous runs, and into singletons
    /// once they are no larger than `factor`.
    pub fn refine(&self, factor: usize) -> Result<Partition> {
        if factor < 2 {
            return validation("refinement factor must be at least 2");
        }
        let mut out = Vec::new();
        for cell in &self.cells {
            match cell {
                Cell::Sites(s) => {
                    if s.len() <= factor {
                        out.extend(s.iter().map(|&i| Cell::Sites(vec![i])));
                    } else {
                        out.extend(split_sites(s, factor).into_iter().map(Cell::Sites));
                    }
                }
                Cell::Pieces(ps) => {
                    for j in 0..factor {
                        let child = ps
                            .iter()
                            .map(|p| {
                                let h = p.len() / factor as f64;
                                let a = p.a + h * j as f64;
                                let b = if j + 1 == factor { p.b } else { p.a + h * (j + 1) as f64 };
                                Piece { a, b }
                            })
                            .collect();
                        out.push(Cell::Pieces(child));
                    }
                }
            }
        }
        Partition::new(self.space, out, format!("{}/{}", self.label, factor))
    }

    /// `coarse` is refined by `self` when each cell of `self` lies inside
    /// exactly one coarse cell. Returns the parent index of each cell.
    pub fn parents_in(&self, coarse: &Partition) -> Result<Vec<usize>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let parents: Vec<usize> = coarse
                    .cells
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| contains_cell(p, c))
                    .map(|(k, _)| k)
                    .collect();
                match parents.as_slice() {
                    [k] => Ok(*k),
                    _ => domain(format!("cell {i} is not inside exactly one coarse cell")),
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> PartitionJson {
        match self.space {
            GroundSpace::Interval { lo, hi } => PartitionJson::Interval {
                cells: self.cells.iter().map(|c| c.piece_list().to_vec()).collect(),
                lo: Some(lo),
                hi: Some(hi),
                label: Some(self.label.clone()),
            },
            GroundSpace::Discrete { size } => PartitionJson::Discrete {
                cells: self.cells.iter().map(|c| c.site_list().to_vec()).collect(),
                size: Some(size),
                label: Some(self.label.clone()),
            },
        }
    }

    pub fn from_json(json: &PartitionJson) -> Result<Self> {
        match json {
            PartitionJson::Interval { cells, lo, hi, label } => {
                let cells = cells
                    .iter()
                    .map(|ps| Cell::pieces(ps.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let all = cells.iter().flat_map(|c| c.piece_list());
                let (min_a, max_b) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| {
                    (l.min(p.a), h.max(p.b))
                });
                let space = GroundSpace::interval(lo.unwrap_or(min_a), hi.unwrap_or(max_b))?;
                Partition::new(space, cells, label.clone().unwrap_or_default())
            }
            PartitionJson::Discrete { cells, size, label } => {
                let cells = cells
                    .iter()
                    .map(|s| Cell::sites(s.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let max = cells.iter().flat_map(|c| c.site_list()).max().copied();
                let size = match (size, max) {
                    (Some(s), _) => *s,
                    (None, Some(m)) => m + 1,
                    (None, None) => 0,
                };
                Partition::new(GroundSpace::discrete(size)?, cells, label.clone().unwrap_or_default())
            }
        }
    }
}

fn contains_cell(outer: &Cell, inner: &Cell) -> bool {
    match (outer, inner) {
        (Cell::Sites(o), Cell::Sites(i)) => i.iter().all(|s| o.binary_search(s).is_ok()),
        (Cell::Pieces(o), Cell::Pieces(i)) => i
            .iter()
            .all(|p| o.iter().any(|q| q.a <= p.a && p.b <= q.b)),
        _ => false,
    }
}

/// Splits a sorted run into `parts` contiguous chunks whose sizes differ by
/// at most one.
fn split_sites(sites: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let n = sites.len();
    let (q, r) = (n / parts, n % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for j in 0..parts {
        let len = q + usize::from(j < r);
        out.push(sites[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Serialized partition, e.g.
/// `{"kind":"interval","cells":[[[0.0,0.5]],[[0.5,1.0]]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PartitionJson {
    Interval {
        cells: Vec<Vec<Piece>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lo: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Discrete {
        cells: Vec<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        size: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the three-term recurrence.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(order, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Values of the orthonormal Legendre polynomials of degree `0..=max_degree`
/// on `[a, b)` at `x`, written into `out`.
pub fn legendre_values(a: f64, b: f64, x: f64, max_degree: usize, out: &mut Vec<f64>) {
    out.clear();
    let t = 2.0 * (x - a) / (b - a) - 1.0;
    let scale = 1.0 / (b - a);
    let mut p0 = 1.0;
    let mut p1 = t;
    for n in 0..=max_degree {
        let pn = match n {
            0 => 1.0,
            1 => t,
            _ => {
                let k = n as f64;
                let p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
                p2
            }
        };
        out.push(pn * ((2 * n + 1) as f64 * scale).sqrt());
    }
}

/// Composite Gauss-Legendre rule over the pieces of an interval cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
    pieces: Vec<Piece>,
}

impl Quadrature {
    pub fn for_cell(cell: &Cell, order: usize) -> Result<Self> {
        Quadrature::for_cell_panels(cell, order, 1)
    }

    /// Like [`Quadrature::for_cell`] but each piece is further cut into
    /// `panels` equal panels.
    pub fn for_cell_panels(cell: &Cell, order: usize, panels: usize) -> Result<Self> {
        let Cell::Pieces(pieces) = cell else {
            return domain("quadrature is only defined for interval cells");
        };
        if order == 0 || panels == 0 {
            return validation("quadrature order and panel count must be positive");
        }
        let (x, w) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(pieces.len() * panels * order);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for p in pieces {
            let h = p.len() / panels as f64;
            for k in 0..panels {
                let a = p.a + h * k as f64;
                let half = 0.5 * h;
                for (xi, wi) in x.iter().zip(&w) {
                    nodes.push(a + half * (xi + 1.0));
                    weights.push(half * wi);
                }
            }
        }
        Ok(Quadrature {
            nodes,
            weights,
            order,
            pieces: pieces.clone(),
        })
    }

    pub fn covers(&self, cell: &Cell) -> bool {
        match cell {
            Cell::Pieces(p) => *p == self.pieces,
            Cell::Sites(_) => false,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// A real function on a ground space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FunctionRep {
    /// Values at the sites of a discrete space.
    Vector { values: Vec<f64> },
    /// `Σ_n coeffs[n] p_n(x)` in the orthonormal Legendre basis of `[lo, hi)`.
    Legendre { lo: f64, hi: f64, coeffs: Vec<f64> },
    /// The orthonormal Legendre polynomial of `degree` on `[a, b)`, zero
    /// outside it.
    LocalLegendre { a: f64, b: f64, degree: usize },
}

impl FunctionRep {
    pub fn is_discrete(&self) -> bool {
        matches!(self, FunctionRep::Vector { .. })
    }

    pub fn at_site(&self, site: usize) -> Result<f64> {
        match self {
            FunctionRep::Vector { values } => values
                .get(site)
                .copied()
                .ok_or_else(|| Error::Domain(format!("site {site} out of range"))),
            _ => domain("continuous function evaluated at a site"),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let mut buf = Vec::new();
        match self {
            FunctionRep::Vector { .. } => domain("discrete function evaluated at a real point"),
            FunctionRep::Legendre { lo, hi, coeffs } => {
                if !(*lo <= x && x <= *hi) {
                    return domain(format!("point {x} outside [{lo}, {hi}]"));
                }
                if coeffs.is_empty() {
                    return Ok(0.0);
                }
                legendre_values(*lo, *hi, x, coeffs.len() - 1, &mut buf);
                Ok(coeffs.iter().zip(&buf).map(|(c, p)| c * p).sum())
            }
            FunctionRep::LocalLegendre { a, b, degree } => {
                if !(*a <= x && x < *b) {
                    return Ok(0.0);
                }
                legendre_values(*a, *b, x, *degree, &mut buf);
                Ok(buf[*degree])
            }
        }
    }
}

/// `(f, g)` in `L²(cell)`. Discrete cells are summed exactly; interval cells
/// use `quad`, which must have been built for the same cell.
pub fn inner_product(
    f: &FunctionRep,
    g: &FunctionRep,
    cell: &Cell,
    quad: Option<&Quadrature>,
) -> Result<f64> {
    match cell {
        Cell::Sites(sites) => sites
            .iter()
            .map(|&s| Ok(f.at_site(s)? * g.at_site(s)?))
            .sum(),
        Cell::Pieces(_) => {
            let quad = match quad {
                Some(q) if q.covers(cell) => q,
                Some(_) => return domain("quadrature does not cover the cell"),
                None => return domain("interval inner products need a quadrature"),
            };
            let mut s = 0.0;
            for (&x, &w) in quad.nodes.iter().zip(&quad.weights) {
                s += w * f.eval(x)? * g.eval(x)?;
            }
            Ok(s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: f64, b: f64) -> Cell {
        Cell::interval(a, b).unwrap()
    }

    #[test]
    fn measures() {
        let unit = GroundSpace::unit_interval();
        assert_eq!(measure(&unit, &iv(0.0, 0.5)).unwrap(), 0.5);
        let d = GroundSpace::discrete(10).unwrap();
        assert_eq!(measure(&d, &Cell::sites(vec![2, 5, 7]).unwrap()).unwrap(), 3.0);
        let two = Cell::pieces(vec![Piece { a: 0.75, b: 1.0 }, Piece { a: 0.0, b: 0.25 }]).unwrap();
        assert_eq!(measure(&unit, &two).unwrap(), 0.5);
        assert!(matches!(
            measure(&d, &Cell::sites(vec![10]).unwrap()),
            Err(Error::Domain(_))
        ));
        assert!(measure(&unit, &iv(0.5, 1.5)).is_err());
    }

    #[test]
    fn invalid_inputs() {
        assert!(GroundSpace::discrete(0).is_err());
        assert!(GroundSpace::interval(1.0, 1.0).is_err());
        assert!(Cell::sites(vec![1, 1]).is_err());
        assert!(Cell::pieces(vec![Piece { a: 0.0, b: 0.6 }, Piece { a: 0.5, b: 1.0 }]).is_err());
        let unit = GroundSpace::unit_interval();
        assert!(Partition::new(unit, vec![iv(0.0, 0.6), iv(0.5, 1.0)], "x").is_err());
    }

    #[test]
    fn refine_examples() {
        let unit = GroundSpace::unit_interval();
        let p = Partition::new(unit, vec![iv(0.0, 1.0)], "base").unwrap();
        let r = p.refine(2).unwrap();
        assert_eq!(r.cells(), &[iv(0.0, 0.5), iv(0.5, 1.0)]);
        let r2 = r.refine(2).unwrap();
        assert_eq!(r2.len(), 4);
        for c in r2.cells() {
            assert!((c.measure() - 0.25).abs() < 1e-15);
        }
        assert_eq!(r2.parents_in(&r).unwrap(), vec![0, 0, 1, 1]);

        let d = Partition::new(
            GroundSpace::discrete(3).unwrap(),
            vec![Cell::sites(vec![0, 1, 2]).unwrap()],
            "d",
        )
        .unwrap();
        let s = d.refine(4).unwrap();
        assert_eq!(
            s.cells(),
            &[Cell::Sites(vec![0]), Cell::Sites(vec![1]), Cell::Sites(vec![2])]
        );
        assert!(p.refine(1).is_err());
    }

    #[test]
    fn refine_multi_piece_cell() {
        let unit = GroundSpace::unit_interval();
        let c = Cell::pieces(vec![Piece { a: 0.0, b: 0.25 }, Piece { a: 0.75, b: 1.0 }]).unwrap();
        let p = Partition::new(unit, vec![c, iv(0.25, 0.75)], "m").unwrap();
        let r = p.refine(2).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r.parents_in(&p).unwrap(), vec![0, 0, 1, 1]);
        let total: f64 = r.cells().iter().map(Cell::measure).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_merges_pieces() {
        let p = Partition::uniform(GroundSpace::unit_interval(), 4).unwrap();
        assert_eq!(p.window(), iv(0.0, 1.0));
        assert!((p.resolution() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn partition_json_format() {
        let p = Partition::uniform(GroundSpace::unit_interval(), 2).unwrap();
        let parsed: PartitionJson =
            serde_json::from_str(r#"{"kind":"interval","cells":[[[0.0,0.5]],[[0.5,1.0]]]}"#).unwrap();
        let q = Partition::from_json(&parsed).unwrap();
        assert_eq!(p.cells(), q.cells());
        assert_eq!(p.space(), q.space());
        let text = serde_json::to_string(&p.to_json()).unwrap();
        let back = Partition::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, p);
        let bad = serde_json::from_str::<PartitionJson>(r#"{"kind":"interval","cells":[],"bogus":1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn gauss_legendre_weights_and_exactness() {
        for order in [1, 2, 5, 16, 33, 64] {
            let (x, w) = gauss_legendre(order);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13, "order {order}");
            assert!(x.windows(2).all(|p| p[0] < p[1]));
        }
        let cell = Cell::pieces(vec![Piece { a: 0.0, b: 0.3 }, Piece { a: 0.5, b: 0.9 }]).unwrap();
        let q = Quadrature::for_cell(&cell, 8).unwrap();
        assert!((q.total_weight() - 0.7).abs() <= 1e-12 * 0.7);
        for deg in 0..16 {
            let exact = |a: f64, b: f64| (b.powi(deg + 1) - a.powi(deg + 1)) / (deg + 1) as f64;
            let want = exact(0.0, 0.3) + exact(0.5, 0.9);
            let got = q.integrate(|x| x.powi(deg));
            assert!((got - want).abs() < 1e-14, "degree {deg}: {got} vs {want}");
        }
    }

    #[test]
    fn inner_products() {
        let half = iv(0.0, 0.5);
        let q = Quadrature::for_cell(&half, DEFAULT_QUADRATURE_ORDER).unwrap();
        let one = FunctionRep::Legendre { lo: 0.0, hi: 1.0, coeffs: vec![1.0] };
        assert!((inner_product(&one, &one, &half, Some(&q)).unwrap() - 0.5).abs() < 1e-15);

        let unit = iv(0.0, 1.0);
        let qu = Quadrature::for_cell(&unit, DEFAULT_QUADRATURE_ORDER).unwrap();
        // x = 0.5 p0 + p1 / (2 sqrt 3)
        let x = FunctionRep::Legendre { lo: 0.0, hi: 1.0, coeffs: vec![0.5, 0.5 / 3f64.sqrt()] };
        assert!((inner_product(&x, &one, &unit, Some(&qu)).unwrap() - 0.5).abs() < 1e-15);

        let p1 = FunctionRep::LocalLegendre { a: 0.0, b: 1.0, degree: 1 };
        let p2 = FunctionRep::LocalLegendre { a: 0.0, b: 1.0, degree: 2 };
        assert!(inner_product(&p1, &p2, &unit, Some(&qu)).unwrap().abs() < 1e-15);
        assert!(matches!(
            inner_product(&p1, &p2, &half, Some(&qu)),
            Err(Error::Domain(_))
        ));

        let v = FunctionRep::Vector { values: vec![1.0, 2.0, 3.0] };
        let c = Cell::sites(vec![0, 2]).unwrap();
        assert_eq!(inner_product(&v, &v, &c, None).unwrap(), 10.0);
    }

    #[test]
    fn legendre_orthonormality_up_to_degree_20() {
        let cell = iv(0.2, 0.7);
        let q = Quadrature::for_cell(&cell, 21).unwrap();
        let mut gram = vec![vec![0.0; 21]; 21];
        let mut buf = Vec::new();
        for (&x, &w) in q.nodes.iter().zip(&q.weights) {
            legendre_values(0.2, 0.7, x, 20, &mut buf);
            for i in 0..=20 {
                for j in 0..=20 {
                    gram[i][j] += w * buf[i] * buf[j];
                }
            }
        }
        for i in 0..=20 {
            for j in 0..=20 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i][j] - want).abs() < 1e-10, "({i},{j}) = {}", gram[i][j]);
            }
        }
    }
}
