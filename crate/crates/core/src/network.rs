//! The interference graph: an undirected, unweighted network without self-links.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Undirected network stored as sorted neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    neighbors: Vec<Vec<usize>>,
}

impl Network {
    /// Network with `n` agents and no links.
    pub fn empty(n: usize) -> Self {
        Network {
            neighbors: vec![Vec::new(); n],
        }
    }

    /// Build from undirected edges. Duplicates and reversed duplicates are merged.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) references a node >= n = {n}"
                )));
            }
            if i == j {
                return Err(Error::Validation(format!("self-loop at node {i}")));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Network { neighbors })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / self.n() as f64
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// `G_ij`.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn isolated(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.degree(i) == 0).collect()
    }

    /// Relabel agents: agent `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return Err(Error::Validation("permutation length differs from n".into()));
        }
        Network::from_edges(self.n(), self.edges().map(|(i, j)| (perm[i], perm[j])))
    }

    /// Check symmetry, zero diagonal, and sortedness of every neighbor list.
    pub fn validate(&self) -> Result<()> {
        for (i, list) in self.neighbors.iter().enumerate() {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(format!("neighbor list of {i} not strictly sorted")));
            }
            for &j in list {
                if j == i {
                    return Err(Error::Validation(format!("self-loop at node {i}")));
                }
                if j >= self.n() || !self.has_edge(j, i) {
                    return Err(Error::Validation(format!("asymmetric link ({i}, {j})")));
                }
            }
        }
        Ok(())
    }
}

/// Planar agent positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    points: Vec<[f64; 2]>,
}

impl Coordinates {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Validation(format!("non-finite coordinate for agent {i}")));
        }
        Ok(Coordinates { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn select(&self, keep: &[usize]) -> Coordinates {
        Coordinates {
            points: keep.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

/// Link every pair of distinct agents at Euclidean distance `<= radius`.
///
/// Points are bucketed into square cells of side `radius`, so only the 3x3
/// block of cells around each point is scanned.
pub fn build_radius_graph(coords: &Coordinates, radius: f64) -> Result<Network> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Validation(format!("radius must be positive and finite, got {radius}")));
    }
    let pts = coords.points();
    let n = pts.len();
    if n == 0 {
        return Ok(Network::empty(0));
    }
    let (min_x, min_y) = pts
        .iter()
        .fold((f64::INFINITY, f64::INFINITY), |(a, b), p| (a.min(p[0]), b.min(p[1])));
    let cell_of = |p: &[f64; 2]| -> (i64, i64) {
        (
            ((p[0] - min_x) / radius).floor() as i64,
            ((p[1] - min_y) / radius).floor() as i64,
        )
    };
    let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        cells.entry(cell_of(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    let mut edges = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy) = cell_of(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = cells.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &j in bucket {
                    if j <= i {
                        continue;
                    }
                    let q = pts[j];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                    if d2 <= r2 {
                        edges.push((i, j));
                    }
                }
            }
        }
    }
    Network::from_edges(n, edges)
}

/// Result of dropping degree-zero agents.
#[derive(Debug, Clone)]
pub struct IsolatedRemoval {
    pub network: Network,
    /// Original index of each retained agent, in new-index order.
    pub kept: Vec<usize>,
    /// Original indices of the dropped agents.
    pub dropped: Vec<usize>,
}

impl IsolatedRemoval {
    /// Keep the entries of a per-agent array that belong to retained agents.
    pub fn filter<T: Clone>(&self, values: &[T]) -> Vec<T> {
        self.kept.iter().map(|&i| values[i].clone()).collect()
    }
}

/// Remove all degree-zero agents and reindex the rest densely, preserving order.
pub fn remove_isolated(net: &Network) -> IsolatedRemoval {
    let mut new_index = vec![usize::MAX; net.n()];
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..net.n() {
        if net.degree(i) > 0 {
            new_index[i] = kept.len();
            kept.push(i);
        } else {
            dropped.push(i);
        }
    }
    let neighbors = kept
        .iter()
        .map(|&i| net.neighbors(i).iter().map(|&j| new_index[j]).collect())
        .collect();
    IsolatedRemoval {
        network: Network { neighbors },
        kept,
        dropped,
    }
}

/// Read a two-column CSV edge list over `n` agents.
///
/// Lines starting with `#` are comments; a `# one-based` line switches the
/// indices that follow to 1-based numbering.
pub fn load_edge_list(path: &Path, n: usize) -> Result<Network> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_edge_list(&text, n).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        },
        other => other,
    })
}

pub fn parse_edge_list(text: &str, n: usize) -> Result<Network> {
    let mut one_based = false;
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if comment.trim().eq_ignore_ascii_case("one-based") {
                one_based = true;
            }
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: Default::default(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(format!("expected 2 columns, found {}", fields.len())));
        }
        let mut idx = [0usize; 2];
        for (k, f) in fields.iter().enumerate() {
            let v: usize = f
                .parse()
                .map_err(|_| parse_err(format!("invalid node index {f:?}")))?;
            idx[k] = if one_based {
                v.checked_sub(1)
                    .ok_or_else(|| parse_err("index 0 in a one-based edge list".into()))?
            } else {
                v
            };
        }
        edges.push((idx[0], idx[1]));
    }
    Network::from_edges(n, edges)
}

/// Render as a 0-based edge list, one `i,j` row per undirected edge.
pub fn format_edge_list(net: &Network) -> String {
    let mut out = String::new();
    for (i, j) in net.edges() {
        out.push_str(&format!("{i},{j}\n"));
    }
    out
}
