//! Graph isomorphism and canonical hashing of blocks.
//!
//! Two routes that share only the node-label function:
//! - [`is_isomorphic`]: joint color refinement of both graphs, then a backtracking matcher.
//! - [`canonical_hash`]: individualization-refinement search for the lexicographically
//!   smallest relabeling, pruned with discovered automorphisms, hashed with SHA-256.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::dsl::{Block, NodeIndex, OpInstance, Operation};

/// Largest block either routine accepts.
pub const MAX_NODES: usize = 128;

/// Version tag mixed into every digest; bump when labels or encoding change.
pub const HASH_SCHEMA: &str = "blockhash-v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("block has {0} nodes, more than the supported {MAX_NODES}")]
    SizeLimitExceeded(usize),
}

/// Node label: operation name plus every argument with defaults filled in and
/// expressions normalized, so positional and named spellings agree.
pub fn node_label(op: &OpInstance) -> String {
    match &op.op {
        Operation::Unknown { name, raw_args } => match raw_args {
            Some(raw) => format!("?{name}({raw})"),
            None => format!("?{name}"),
        },
        Operation::Known(kind) => {
            let args: Vec<String> = op
                .full_args()
                .into_iter()
                .map(|(name, value)| match name {
                    Some(name) => format!("{name}={}", value.normalize()),
                    None => value.normalize().to_string(),
                })
                .collect();
            format!("{}({})", kind.name(), args.join(","))
        }
    }
}

/// Dense adjacency over positions 0..n (ascending node index).
struct Graph {
    index: Vec<NodeIndex>,
    labels: Vec<String>,
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
}

impl Graph {
    fn of(block: &Block) -> Result<Graph, GraphError> {
        if block.len() > MAX_NODES {
            return Err(GraphError::SizeLimitExceeded(block.len()));
        }
        let index: Vec<NodeIndex> = block.nodes().map(|(i, _)| i).collect();
        let pos: BTreeMap<NodeIndex, usize> = index.iter().enumerate().map(|(p, i)| (*i, p)).collect();
        let labels = block.nodes().map(|(_, op)| node_label(op)).collect();
        let mut out = vec![Vec::new(); index.len()];
        let mut inc = vec![Vec::new(); index.len()];
        for (s, d) in block.edges() {
            out[pos[&s]].push(pos[&d]);
            inc[pos[&d]].push(pos[&s]);
        }
        Ok(Graph { index, labels, out, inc })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// Disjoint union; the second graph's positions are shifted by `self.len()`.
    fn union(&self, other: &Graph) -> Graph {
        let n = self.len();
        let shift = |adj: &Vec<Vec<usize>>| adj.iter().map(|v| v.iter().map(|x| x + n).collect()).collect::<Vec<Vec<usize>>>();
        Graph {
            index: self.index.iter().chain(&other.index).copied().collect(),
            labels: self.labels.iter().chain(&other.labels).cloned().collect(),
            out: self.out.iter().cloned().chain(shift(&other.out)).collect(),
            inc: self.inc.iter().cloned().chain(shift(&other.inc)).collect(),
        }
    }
}

fn rank<T: Ord + Clone>(keys: &[T]) -> Vec<usize> {
    let mut sorted = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter().map(|k| sorted.binary_search(k).expect("present")).collect()
}

fn cell_count(colors: &[usize]) -> usize {
    colors.iter().collect::<HashSet<_>>().len()
}

/// Iterated 1-dimensional refinement by (color, in-neighbor colors, out-neighbor colors).
/// The new colors are ranks of sorted signatures, so they depend only on the colored graph,
/// and the old color order is preserved.
fn refine(g: &Graph, colors: &mut Vec<usize>) {
    let mut cells = cell_count(colors);
    loop {
        let signatures: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..g.len())
            .map(|v| {
                let mut ins: Vec<usize> = g.inc[v].iter().map(|&u| colors[u]).collect();
                let mut outs: Vec<usize> = g.out[v].iter().map(|&u| colors[u]).collect();
                ins.sort_unstable();
                outs.sort_unstable();
                (colors[v], ins, outs)
            })
            .collect();
        let next = rank(&signatures);
        let next_cells = cell_count(&next);
        *colors = next;
        if next_cells == cells {
            return;
        }
        cells = next_cells;
    }
}

fn initial_colors(g: &Graph) -> Vec<usize> {
    rank(&g.labels)
}

/// Decides whether an index bijection preserving labels and edges exists.
pub fn is_isomorphic(a: &Block, b: &Block) -> Result<bool, GraphError> {
    let ga = Graph::of(a)?;
    let gb = Graph::of(b)?;
    if ga.len() != gb.len() || ga.edge_count() != gb.edge_count() {
        return Ok(false);
    }
    let n = ga.len();
    let joint = ga.union(&gb);
    let mut colors = initial_colors(&joint);
    refine(&joint, &mut colors);
    let (ca, cb) = colors.split_at(n);
    let mut ha = ca.to_vec();
    let mut hb = cb.to_vec();
    ha.sort_unstable();
    hb.sort_unstable();
    if ha != hb {
        return Ok(false);
    }

    let out_b: Vec<HashSet<usize>> = gb.out.iter().map(|v| v.iter().copied().collect()).collect();
    let matcher = Matcher {
        ga: &ga,
        gb: &gb,
        out_b,
        ca,
        cb,
        order: match_order(&ga, ca),
    };
    let mut map_ab = vec![usize::MAX; n];
    let mut map_ba = vec![usize::MAX; n];
    Ok(matcher.extend(0, &mut map_ab, &mut map_ba))
}

/// Matching order: smallest color cells first, then prefer nodes adjacent to those already
/// placed so edge constraints prune early.
fn match_order(g: &Graph, colors: &[usize]) -> Vec<usize> {
    let n = g.len();
    let mut size = BTreeMap::new();
    for &c in colors {
        *size.entry(c).or_insert(0usize) += 1;
    }
    let mut placed = vec![false; n];
    let mut links = vec![0usize; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let next = (0..n)
            .filter(|&v| !placed[v])
            .min_by_key(|&v| (std::cmp::Reverse(links[v]), size[&colors[v]], colors[v], v))
            .expect("unplaced node remains");
        placed[next] = true;
        order.push(next);
        for &u in g.out[next].iter().chain(&g.inc[next]) {
            links[u] += 1;
        }
    }
    order
}

struct Matcher<'a> {
    ga: &'a Graph,
    gb: &'a Graph,
    out_b: Vec<HashSet<usize>>,
    ca: &'a [usize],
    cb: &'a [usize],
    order: Vec<usize>,
}

impl Matcher<'_> {
    fn extend(&self, depth: usize, map_ab: &mut [usize], map_ba: &mut [usize]) -> bool {
        let Some(&u) = self.order.get(depth) else {
            return true;
        };
        for v in 0..self.gb.len() {
            if map_ba[v] != usize::MAX || self.cb[v] != self.ca[u] || !self.consistent(u, v, map_ab, map_ba) {
                continue;
            }
            map_ab[u] = v;
            map_ba[v] = u;
            if self.extend(depth + 1, map_ab, map_ba) {
                return true;
            }
            map_ab[u] = usize::MAX;
            map_ba[v] = usize::MAX;
        }
        false
    }

    /// Edges between `u` and already-mapped nodes must correspond one-to-one in both graphs.
    fn consistent(&self, u: usize, v: usize, map_ab: &[usize], map_ba: &[usize]) -> bool {
        let self_loop_a = self.ga.out[u].contains(&u);
        if self_loop_a != self.out_b[v].contains(&v) {
            return false;
        }
        let mut mapped_out_a = 0;
        for &x in &self.ga.out[u] {
            if x != u && map_ab[x] != usize::MAX {
                if !self.out_b[v].contains(&map_ab[x]) {
                    return false;
                }
                mapped_out_a += 1;
            }
        }
        let mut mapped_in_a = 0;
        for &x in &self.ga.inc[u] {
            if x != u && map_ab[x] != usize::MAX {
                if !self.out_b[map_ab[x]].contains(&v) {
                    return false;
                }
                mapped_in_a += 1;
            }
        }
        let mapped_out_b = self.gb.out[v].iter().filter(|&&y| y != v && map_ba[y] != usize::MAX).count();
        let mapped_in_b = self.gb.inc[v].iter().filter(|&&y| y != v && map_ba[y] != usize::MAX).count();
        mapped_out_a == mapped_out_b && mapped_in_a == mapped_in_b
    }
}

/// SHA-256 digest of a block's canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockDigest(pub [u8; 32]);

impl BlockDigest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for BlockDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for BlockDigest {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| format!("invalid digest '{s}': {e}"))?;
        let array: [u8; 32] = bytes.try_into().map_err(|_| format!("digest '{s}' is not 32 bytes"))?;
        Ok(BlockDigest(array))
    }
}

impl Serialize for BlockDigest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for BlockDigest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalForm {
    pub digest: BlockDigest,
    /// Original node index to canonical position.
    pub relabeling: BTreeMap<NodeIndex, usize>,
}

type Certificate = Vec<(usize, usize)>;

struct Search<'a> {
    g: &'a Graph,
    best: Option<(Certificate, Vec<usize>)>,
    automorphisms: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn certificate(&self, colors: &[usize]) -> Certificate {
        let mut edges: Certificate = (0..self.g.len())
            .flat_map(|v| self.g.out[v].iter().map(move |&u| (v, u)))
            .map(|(v, u)| (colors[v], colors[u]))
            .collect();
        edges.sort_unstable();
        edges
    }

    fn leaf(&mut self, colors: Vec<usize>) {
        let cert = self.certificate(&colors);
        match &self.best {
            None => self.best = Some((cert, colors)),
            Some((best, best_colors)) => {
                if cert == *best {
                    // Same canonical graph: the two labelings differ by an automorphism.
                    let mut at_color = vec![0; colors.len()];
                    for (v, &c) in colors.iter().enumerate() {
                        at_color[c] = v;
                    }
                    let perm: Vec<usize> = best_colors.iter().map(|&c| at_color[c]).collect();
                    if perm.iter().enumerate().any(|(i, &p)| i != p) {
                        self.automorphisms.push(perm);
                    }
                } else if cert < *best {
                    self.best = Some((cert, colors));
                }
            }
        }
    }

    fn explore(&mut self, mut colors: Vec<usize>, prefix: &mut Vec<usize>) {
        refine(self.g, &mut colors);
        let n = self.g.len();
        let mut sizes = vec![0usize; n];
        for &c in &colors {
            sizes[c] += 1;
        }
        let target = (0..n).filter(|&c| sizes[c] > 1).min_by_key(|&c| (sizes[c], c));
        let Some(target) = target else {
            self.leaf(colors);
            return;
        };
        let cell: Vec<usize> = (0..n).filter(|&v| colors[v] == target).collect();
        let mut explored: Vec<usize> = Vec::new();
        for &v in &cell {
            if !explored.is_empty() {
                let orbits = self.orbits(prefix);
                if explored.iter().any(|&w| orbits.find(w) == orbits.find(v)) {
                    continue;
                }
            }
            explored.push(v);
            let keys: Vec<(usize, bool)> = (0..n).map(|u| (colors[u], u != v)).collect();
            let child = rank(&keys);
            prefix.push(v);
            self.explore(child, prefix);
            prefix.pop();
        }
    }

    /// Orbits of the group generated by the automorphisms found so far that fix `prefix`.
    fn orbits(&self, prefix: &[usize]) -> UnionFind {
        let mut uf = UnionFind::new(self.g.len());
        for perm in &self.automorphisms {
            if prefix.iter().all(|&p| perm[p] == p) {
                for (i, &p) in perm.iter().enumerate() {
                    uf.union(i, p);
                }
            }
        }
        uf
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Canonical relabeling and digest. Isomorphic blocks get equal digests; the block name is
/// not part of the digest.
pub fn canonical_hash(block: &Block) -> Result<CanonicalForm, GraphError> {
    let g = Graph::of(block)?;
    let mut search = Search { g: &g, best: None, automorphisms: Vec::new() };
    search.explore(initial_colors(&g), &mut Vec::new());
    let (cert, colors) = search.best.expect("search reaches at least one leaf");

    let mut labels_in_order = vec![""; g.len()];
    for (v, &c) in colors.iter().enumerate() {
        labels_in_order[c] = &g.labels[v];
    }
    let mut hasher = Sha256::new();
    hasher.update(HASH_SCHEMA.as_bytes());
    hasher.update(format!("\nnodes {}\n", g.len()).as_bytes());
    for label in labels_in_order {
        hasher.update(label.as_bytes());
        hasher.update(b"\n");
    }
    hasher.update(format!("edges {}\n", cert.len()).as_bytes());
    for (s, d) in &cert {
        hasher.update(format!("{s} {d}\n").as_bytes());
    }
    let digest = BlockDigest(hasher.finalize().into());
    let relabeling = g.index.iter().zip(&colors).map(|(i, c)| (*i, *c)).collect();
    Ok(CanonicalForm { digest, relabeling })
}

/// Digest only.
pub fn block_digest(block: &Block) -> Result<BlockDigest, GraphError> {
    canonical_hash(block).map(|c| c.digest)
}
