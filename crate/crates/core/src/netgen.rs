//! Random topologies, the degree-based mobility law, and population allocation.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, Stream};

/// Binary, symmetric, zero-diagonal adjacency between regions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "TopologyJson", try_from = "TopologyJson")]
pub struct NeighborMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl NeighborMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut l = Self::empty(n);
        for (i, j) in pairs(n) {
            l.set(i, j, true);
        }
        l
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut l = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(invalid(format!("edge ({i},{j}) out of range for n={n}")));
            }
            if i == j {
                return Err(invalid(format!("self-loop at node {i}")));
            }
            l.set(i, j, true);
        }
        Ok(l)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    /// Sets both `l_ij` and `l_ji`. Diagonal writes are ignored.
    pub fn set(&mut self, i: usize, j: usize, present: bool) {
        if i == j {
            return;
        }
        self.bits[i * self.n + j] = present;
        self.bits[j * self.n + i] = present;
    }

    pub fn toggle(&mut self, i: usize, j: usize) {
        let cur = self.get(i, j);
        self.set(i, j, !cur);
    }

    /// Unordered links `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        pairs(self.n).filter(|&(i, j)| self.get(i, j)).collect()
    }

    pub fn link_count(&self) -> usize {
        pairs(self.n).filter(|&(i, j)| self.get(i, j)).count()
    }

    pub fn pair_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    /// Upper-triangle bit string, used as a canonical ordering/dedup key.
    pub fn canonical_key(&self) -> String {
        pairs(self.n)
            .map(|(i, j)| if self.get(i, j) { '1' } else { '0' })
            .collect()
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::empty(self.n);
        for (i, j) in self.edges() {
            out.set(perm[i], perm[j], true);
        }
        out
    }

    pub fn complement(&self) -> Self {
        let mut out = Self::empty(self.n);
        for (i, j) in pairs(self.n) {
            out.set(i, j, !self.get(i, j));
        }
        out
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# nodes {}\n", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }

    /// Parses the `i j` per-line edge list. The node count comes from a
    /// `# nodes N` header when present, else from the largest index seen.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut n: Option<usize> = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if it.next() == Some("nodes") {
                    let v = it
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Parse {
                            line: lineno + 1,
                            message: "bad `# nodes` header".into(),
                        })?;
                    n = Some(v);
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: lineno + 1,
                        message: format!("expected `i j`, got `{line}`"),
                    })
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: "trailing tokens".into(),
                });
            }
            edges.push((i, j));
        }
        let n = n.unwrap_or_else(|| edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0));
        Self::from_edges(n, &edges)
    }

    pub fn to_json(&self, gamma: Option<f64>) -> TopologyJson {
        TopologyJson {
            n: self.n,
            links: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            gamma,
        }
    }
}

/// JSON form of a topology, optionally carrying the total outflow `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyJson {
    pub n: usize,
    pub links: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl TopologyJson {
    pub fn topology(&self) -> Result<NeighborMatrix> {
        let edges: Vec<_> = self.links.iter().map(|e| (e[0], e[1])).collect();
        NeighborMatrix::from_edges(self.n, &edges)
    }

    pub fn mobility(&self) -> Result<MobilityMatrix> {
        let gamma = self
            .gamma
            .ok_or_else(|| invalid("topology JSON carries no gamma"))?;
        mobility_from_topology(&self.topology()?, gamma)
    }
}

impl From<NeighborMatrix> for TopologyJson {
    fn from(l: NeighborMatrix) -> Self {
        l.to_json(None)
    }
}

impl TryFrom<TopologyJson> for NeighborMatrix {
    type Error = Error;

    fn try_from(js: TopologyJson) -> Result<Self> {
        js.topology()
    }
}

/// Unordered node pairs `(i, j)`, `i < j`, row-major.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Per-unit-time movement probabilities `γ_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityMatrix {
    rates: DMatrix<f64>,
}

impl MobilityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            rates: DMatrix::zeros(n, n),
        }
    }

    /// Wraps an explicit rate matrix after checking the row-probability invariants.
    pub fn from_rates(rates: DMatrix<f64>) -> Result<Self> {
        if !rates.is_square() {
            return Err(invalid("mobility matrix must be square"));
        }
        let n = rates.nrows();
        for i in 0..n {
            if rates[(i, i)] != 0.0 {
                return Err(invalid(format!("gamma[{i}][{i}] must be zero")));
            }
            let mut row = 0.0;
            for j in 0..n {
                let g = rates[(i, j)];
                if !(g >= 0.0) {
                    return Err(invalid(format!("gamma[{i}][{j}] = {g} is negative or NaN")));
                }
                row += g;
            }
            if row > 1.0 + 1e-12 {
                return Err(invalid(format!("row {i} outflow {row} exceeds 1")));
            }
        }
        Ok(Self { rates })
    }

    pub fn n(&self) -> usize {
        self.rates.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rates[(i, j)]
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn outflow(&self, i: usize) -> f64 {
        self.rates.row(i).sum()
    }

    pub fn max_outflow(&self) -> f64 {
        (0..self.n()).map(|i| self.outflow(i)).fold(0.0, f64::max)
    }
}

/// Node populations `P_i(0)` and their total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationAllocation {
    pub counts: Vec<f64>,
    pub total: f64,
}

/// Erdős–Rényi draw: each unordered pair is linked with probability
/// `avg_degree / (n - 1)`, one Bernoulli per pair in row-major `i < j` order.
pub fn generate_er_topology(n: usize, avg_degree: f64, seed: u64) -> Result<NeighborMatrix> {
    if n < 2 {
        return Err(invalid("topology needs at least two nodes"));
    }
    let max = (n - 1) as f64;
    if !(0.0..=max).contains(&avg_degree) {
        return Err(invalid(format!(
            "average degree {avg_degree} outside [0, {max}]"
        )));
    }
    let p = avg_degree / max;
    let mut rng = rng::stream(seed, Stream::Topology);
    let mut l = NeighborMatrix::empty(n);
    for (i, j) in pairs(n) {
        let u: f64 = rng.random();
        if u < p {
            l.set(i, j, true);
        }
    }
    Ok(l)
}

pub fn degrees(l: &NeighborMatrix) -> Vec<usize> {
    (0..l.n())
        .map(|i| (0..l.n()).filter(|&j| l.get(i, j)).count())
        .collect()
}

/// Weighted outflow `Σ_j l_ij (k_i k_j)^exponent` for each node.
fn link_weights(l: &NeighborMatrix, exponent: f64) -> DMatrix<f64> {
    let k = degrees(l);
    let n = l.n();
    DMatrix::from_fn(n, n, |i, j| {
        if l.get(i, j) {
            ((k[i] * k[j]) as f64).powf(exponent)
        } else {
            0.0
        }
    })
}

/// `γ_ij = γ · l_ij √(k_i k_j) / Σ_j l_ij √(k_i k_j)`. Isolated nodes get an
/// all-zero row.
pub fn mobility_from_topology(l: &NeighborMatrix, gamma_total: f64) -> Result<MobilityMatrix> {
    if !(0.0..=1.0).contains(&gamma_total) {
        return Err(invalid(format!("gamma {gamma_total} outside [0, 1]")));
    }
    let mut w = link_weights(l, 0.5);
    for i in 0..l.n() {
        let row: f64 = w.row(i).sum();
        if row > 0.0 {
            let scale = gamma_total / row;
            w.row_mut(i).iter_mut().for_each(|x| *x *= scale);
        }
    }
    Ok(MobilityMatrix { rates: w })
}

/// Populations proportional to the node's weighted outflow, square-root law.
pub fn initial_populations(l: &NeighborMatrix, total: f64) -> Result<PopulationAllocation> {
    initial_populations_with_exponent(l, total, 0.5)
}

/// `P_i(0) ∝ Σ_j l_ij (k_i k_j)^exponent`, normalised to `total`.
pub fn initial_populations_with_exponent(
    l: &NeighborMatrix,
    total: f64,
    exponent: f64,
) -> Result<PopulationAllocation> {
    if !(total > 0.0) {
        return Err(invalid("total population must be positive"));
    }
    if l.link_count() == 0 {
        return Err(invalid(
            "population allocation undefined for a topology without links",
        ));
    }
    let w = link_weights(l, exponent);
    let per_node: Vec<f64> = (0..l.n()).map(|i| w.row(i).sum()).collect();
    let sum: f64 = per_node.iter().sum();
    Ok(PopulationAllocation {
        counts: per_node.iter().map(|x| x / sum * total).collect(),
        total,
    })
}
