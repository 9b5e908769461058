//! Interaction graphs and one-layer graph-convolutional propagation.
//!
//! Three graphs drive collaborative propagation: per-domain item graphs with
//! an edge between items co-interacted by the same user, and a user–item
//! bipartite graph over both domains. Edges derive only from
//! training-visible interactions, so test and validation items never leak
//! through graph structure.

mod gcn;

pub use gcn::{gcn_propagate, GcnLayer};

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use crate::corpus::{Domain, IndexMaps, SeqEvent, UserSequenceBundle};
use crate::linalg::Csr;
use crate::scalar::Scalar;

/// What the node indices of a graph refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeSet {
    /// Domain-local item indices.
    Items(Domain),
    /// Users `0..num_users`, then items at `num_users + unified`.
    UsersAndItems { num_users: usize },
}

impl fmt::Display for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeSet::Items(d) => write!(f, "items:{}", d.label()),
            NodeSet::UsersAndItems { num_users } => write!(f, "users+items:{num_users}"),
        }
    }
}

/// Sparse undirected graph with binary weights and no self-edges.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    pub nodes: NodeSet,
    pub num_nodes: usize,
    /// Canonical edge list: `a < b`, sorted, deduplicated.
    edges: Vec<(u32, u32)>,
}

impl InteractionGraph {
    pub fn new(nodes: NodeSet, num_nodes: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let canonical: BTreeSet<(u32, u32)> = edges
            .into_iter()
            .filter(|&(a, b)| a != b)
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        for &(a, b) in &canonical {
            assert!((b as usize) < num_nodes && (a as usize) < num_nodes, "edge out of range");
        }
        Self { nodes, num_nodes, edges: canonical.into_iter().collect() }
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.binary_search(&key).is_ok()
    }

    /// Symmetric normalization with self-loops:
    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` are the degrees of `A + I`.
    /// Isolated nodes reduce to a single self-loop entry of 1.
    pub fn normalized_adjacency<T: Scalar>(&self) -> Csr<T> {
        let n = self.num_nodes;
        let mut degree = vec![1.0f64; n]; // self-loop
        for &(a, b) in &self.edges {
            degree[a as usize] += 1.0;
            degree[b as usize] += 1.0;
        }
        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut triplets = Vec::with_capacity(2 * self.edges.len() + n);
        for i in 0..n {
            triplets.push((i as u32, i as u32, T::of(inv_sqrt[i] * inv_sqrt[i])));
        }
        for &(a, b) in &self.edges {
            let w = T::of(inv_sqrt[a as usize] * inv_sqrt[b as usize]);
            triplets.push((a, b, w));
            triplets.push((b, a, w));
        }
        Csr::from_triplets(n, n, triplets)
    }

    /// Edge-list text dump (`node_a<TAB>node_b` plus a header naming the node
    /// set); round-trips exactly through [`InteractionGraph::parse_dump`].
    pub fn dump(&self) -> String {
        let mut out = format!("# nodeset {} num_nodes {}\n", self.nodes, self.num_nodes);
        for &(a, b) in &self.edges {
            out.push_str(&format!("{a}\t{b}\n"));
        }
        out
    }

    pub fn write_dump(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.dump())
    }

    pub fn parse_dump(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty dump")?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("#") || fields.next() != Some("nodeset") {
            return Err("missing nodeset header".into());
        }
        let descriptor = fields.next().ok_or("missing descriptor")?;
        let nodes = match descriptor {
            "items:source" => NodeSet::Items(Domain::Source),
            "items:target" => NodeSet::Items(Domain::Target),
            other => match other.strip_prefix("users+items:") {
                Some(n) => NodeSet::UsersAndItems {
                    num_users: n.parse().map_err(|_| "bad user count")?,
                },
                None => return Err(format!("unknown node set {other:?}")),
            },
        };
        if fields.next() != Some("num_nodes") {
            return Err("missing num_nodes".into());
        }
        let num_nodes: usize =
            fields.next().ok_or("missing node count")?.parse().map_err(|_| "bad node count")?;
        let mut edges = Vec::new();
        for line in lines {
            let (a, b) = line.split_once('\t').ok_or_else(|| format!("bad edge line {line:?}"))?;
            edges.push((
                a.parse().map_err(|_| "bad node id")?,
                b.parse().map_err(|_| "bad node id")?,
            ));
        }
        Ok(Self::new(nodes, num_nodes, edges))
    }
}

/// The part of a user's per-domain sequence visible to training: the full
/// source history, or the target history with the validation and test events
/// removed; either way truncated to the most recent `max_seq_len` events.
pub fn training_visible<'a>(
    bundle: &'a UserSequenceBundle,
    domain: Domain,
    max_seq_len: usize,
) -> &'a [SeqEvent] {
    let seq: &[SeqEvent] = match domain {
        Domain::Source => &bundle.source,
        Domain::Target => {
            let n = bundle.target.len();
            &bundle.target[..n.saturating_sub(2)]
        }
    };
    let start = seq.len().saturating_sub(max_seq_len);
    &seq[start..]
}

/// Item graph for one domain: an edge joins two items whenever some user's
/// training-visible sequence (truncated window) contains both.
pub fn build_item_graph(
    bundles: &[UserSequenceBundle],
    maps: &IndexMaps,
    domain: Domain,
    max_seq_len: usize,
) -> InteractionGraph {
    let num_nodes = match domain {
        Domain::Source => maps.num_source_items(),
        Domain::Target => maps.num_target_items(),
    };
    let mut edges = Vec::new();
    for b in bundles {
        let visible = training_visible(b, domain, max_seq_len);
        for (i, e1) in visible.iter().enumerate() {
            let (d1, l1) = maps.domain_of(e1.item);
            debug_assert_eq!(d1, domain);
            for e2 in &visible[i + 1..] {
                let (_, l2) = maps.domain_of(e2.item);
                if l1 != l2 {
                    edges.push((l1 as u32, l2 as u32));
                }
            }
        }
    }
    InteractionGraph::new(NodeSet::Items(domain), num_nodes, edges)
}

/// Simplified per-user chain graph: edges only between consecutive items of
/// each user's own sequence.
pub fn build_chain_graph(
    bundles: &[UserSequenceBundle],
    maps: &IndexMaps,
    domain: Domain,
    max_seq_len: usize,
) -> InteractionGraph {
    let num_nodes = match domain {
        Domain::Source => maps.num_source_items(),
        Domain::Target => maps.num_target_items(),
    };
    let mut edges = Vec::new();
    for b in bundles {
        let visible = training_visible(b, domain, max_seq_len);
        for pair in visible.windows(2) {
            let (_, l1) = maps.domain_of(pair[0].item);
            let (_, l2) = maps.domain_of(pair[1].item);
            if l1 != l2 {
                edges.push((l1 as u32, l2 as u32));
            }
        }
    }
    InteractionGraph::new(NodeSet::Items(domain), num_nodes, edges)
}

/// User–item bipartite graph over both domains: one edge per training-visible
/// interaction. Users occupy nodes `0..num_users`, items follow at
/// `num_users + unified`.
pub fn build_bipartite_graph(bundles: &[UserSequenceBundle], maps: &IndexMaps) -> InteractionGraph {
    let num_users = maps.num_users();
    let num_nodes = num_users + maps.num_items();
    let mut edges = Vec::new();
    for b in bundles {
        for domain in [Domain::Source, Domain::Target] {
            for e in training_visible(b, domain, usize::MAX) {
                edges.push((b.user as u32, (num_users + e.item) as u32));
            }
        }
    }
    InteractionGraph::new(NodeSet::UsersAndItems { num_users }, num_nodes, edges)
}
