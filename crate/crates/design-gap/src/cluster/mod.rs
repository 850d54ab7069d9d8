//! The cluster-merging picture: weighted multigraphs of site clusters, the
//! four rewriting rules, Euler reduction to brickwork loops, and the layer
//! decompositions used to bound incomplete architectures.
//!
//! Nodes carry the number of sites in a cluster; edges are two-site gates
//! joining distinct clusters. Gates internal to a cluster are ignored, so the
//! graph never holds self-loops, and a cluster cannot host more external
//! gates than it has sites.

mod decompose;

pub use decompose::{
    heavy_path_contraction, loglog_decompose, tree_decompose, DecompEvent, LayerDecomposition,
};

use crate::architecture::Architecture;
use crate::dsu::DisjointSets;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("node index {0} out of range")]
    NodeOutOfRange(usize),
    #[error("node weights must be positive")]
    ZeroWeight,
    #[error("self-loop on node {0} (internal gates are ignored)")]
    SelfLoop(usize),
    #[error("node {node}: degree {degree} exceeds weight {weight}")]
    DegreeExceedsWeight { node: usize, degree: usize, weight: usize },
    #[error("merge requires two distinct nodes")]
    MergeSameNode,
    #[error("split weights must be positive and sum to the node weight")]
    BadSplitWeights,
    #[error("edge index {0} is not incident to the split node")]
    BadSplitEdge(usize),
    #[error("split disconnects the graph")]
    SplitDisconnects,
    #[error("layer index {0} out of range")]
    LayerOutOfRange(usize),
    #[error("gate {0:?} spans more than two clusters")]
    GateSpansManyClusters(Vec<usize>),
    #[error("euler reduction needs even weight and degree; node {node} has weight {weight}, degree {degree}")]
    OddNode { node: usize, weight: usize, degree: usize },
    #[error("graph is not connected")]
    NotConnected,
    #[error("edge ({0}, {1}) not present")]
    MissingEdge(usize, usize),
    #[error("layer component is not a string")]
    NotAString,
    #[error("layer gates exceed node {node} weight {weight}")]
    LayerTooDense { node: usize, weight: usize },
    #[error("decomposition replay mismatch: {0}")]
    ReplayMismatch(String),
}

/// Weighted multigraph of site clusters.
///
/// Edges are stored as normalized `(low, high)` pairs in sorted order so that
/// rewrite traces are reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterGraph {
    weights: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl ClusterGraph {
    pub fn new(weights: Vec<usize>, edges: Vec<(usize, usize)>) -> Result<Self, ClusterError> {
        let g = Self::new_relaxed(weights, edges)?;
        for v in 0..g.num_nodes() {
            let d = g.degree(v);
            if d > g.weights[v] {
                return Err(ClusterError::DegreeExceedsWeight {
                    node: v,
                    degree: d,
                    weight: g.weights[v],
                });
            }
        }
        Ok(g)
    }

    /// Construction without the degree bound; used by layer decompositions,
    /// where a node may carry edges scheduled for several different layers.
    pub(crate) fn new_relaxed(
        weights: Vec<usize>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, ClusterError> {
        if weights.iter().any(|&w| w == 0) {
            return Err(ClusterError::ZeroWeight);
        }
        let n = weights.len();
        let mut norm = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(ClusterError::NodeOutOfRange(a.max(b)));
            }
            if a == b {
                return Err(ClusterError::SelfLoop(a));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        Ok(Self { weights, edges: norm })
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[usize] {
        &self.weights
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn total_weight(&self) -> usize {
        self.weights.iter().sum()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == node || b == node).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes()).map(|v| self.degree(v)).max().unwrap_or(0)
    }

    /// Connected components over all edges, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut dsu = DisjointSets::new(self.num_nodes());
        for &(a, b) in &self.edges {
            dsu.union(a, b);
        }
        dsu.groups()
    }

    pub fn is_connected(&self) -> bool {
        self.num_nodes() > 0 && self.components().len() == 1
    }

    /// Indices into `edges` incident to `node`, ascending.
    pub fn incident_edges(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a == node || b == node)
            .map(|(i, _)| i)
            .collect()
    }

    /// Removes one copy of each listed edge.
    pub fn without_edges(&self, remove: &[(usize, usize)]) -> Result<Self, ClusterError> {
        let mut edges = self.edges.clone();
        for &(a, b) in remove {
            let key = (a.min(b), a.max(b));
            match edges.iter().position(|&e| e == key) {
                Some(i) => {
                    edges.remove(i);
                }
                None => return Err(ClusterError::MissingEdge(a, b)),
            }
        }
        Self::new_relaxed(self.weights.clone(), edges)
    }

    /// Contracts the listed edges simultaneously: nodes joined by them merge,
    /// weights add, and edges internal to a merged component are dropped.
    ///
    /// New nodes are ordered by their smallest old member index; the returned
    /// map sends old node indices to new ones. Each listed edge must be
    /// present (with multiplicity).
    pub fn contract(&self, layer: &[(usize, usize)]) -> Result<(Self, Vec<usize>), ClusterError> {
        // consume multiplicities to validate the layer
        let mut pool = self.edges.clone();
        for &(a, b) in layer {
            let key = (a.min(b), a.max(b));
            match pool.iter().position(|&e| e == key) {
                Some(i) => {
                    pool.swap_remove(i);
                }
                None => return Err(ClusterError::MissingEdge(a, b)),
            }
        }
        let mut dsu = DisjointSets::new(self.num_nodes());
        for &(a, b) in layer {
            dsu.union(a, b);
        }
        let groups = dsu.groups();
        let mut map = vec![0usize; self.num_nodes()];
        for (new_idx, group) in groups.iter().enumerate() {
            for &v in group {
                map[v] = new_idx;
            }
        }
        let weights = groups
            .iter()
            .map(|g| g.iter().map(|&v| self.weights[v]).sum())
            .collect();
        let edges = pool
            .into_iter()
            .filter_map(|(a, b)| {
                let (na, nb) = (map[a], map[b]);
                (na != nb).then_some((na, nb))
            })
            .collect();
        let contracted = Self::new_relaxed(weights, edges)?;
        Ok((contracted, map))
    }
}

/// The four rewriting rules on cluster-merging graphs.
///
/// Splits keep the first part at the split node's index and append the second
/// part; `second_edges` lists edge indices (into the sorted edge list) that
/// move to the second part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rewrite {
    Merge { a: usize, b: usize },
    SplitConnected { node: usize, first_weight: usize, second_edges: Vec<usize> },
    SplitWithLink { node: usize, first_weight: usize, second_edges: Vec<usize> },
    AddEdge { a: usize, b: usize },
}

/// One applied rewrite together with the graph it produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rewrite: Rewrite,
    pub graph: ClusterGraph,
}

impl ClusterGraph {
    pub fn rewrite(&self, rw: &Rewrite) -> Result<Self, ClusterError> {
        match rw {
            Rewrite::Merge { a, b } => self.merge(*a, *b),
            Rewrite::SplitConnected { node, first_weight, second_edges } => {
                let out = self.split(*node, *first_weight, second_edges, false)?;
                if out.components().len() != self.components().len() {
                    return Err(ClusterError::SplitDisconnects);
                }
                Ok(out)
            }
            Rewrite::SplitWithLink { node, first_weight, second_edges } => {
                self.split(*node, *first_weight, second_edges, true)
            }
            Rewrite::AddEdge { a, b } => self.add_edge(*a, *b),
        }
    }

    /// Merges two distinct nodes; edges between them become internal and are
    /// dropped. The merged node lands at `min(a, b)` and later indices shift
    /// down by one.
    pub fn merge(&self, a: usize, b: usize) -> Result<Self, ClusterError> {
        let n = self.num_nodes();
        if a >= n || b >= n {
            return Err(ClusterError::NodeOutOfRange(a.max(b)));
        }
        if a == b {
            return Err(ClusterError::MergeSameNode);
        }
        let (keep, gone) = (a.min(b), a.max(b));
        let remap = |v: usize| {
            if v == gone {
                keep
            } else if v > gone {
                v - 1
            } else {
                v
            }
        };
        let mut weights = self.weights.clone();
        weights[keep] += weights[gone];
        weights.remove(gone);
        let edges = self
            .edges
            .iter()
            .filter_map(|&(x, y)| {
                let (nx, ny) = (remap(x), remap(y));
                (nx != ny).then_some((nx, ny))
            })
            .collect();
        Self::new(weights, edges)
    }

    fn split(
        &self,
        node: usize,
        first_weight: usize,
        second_edges: &[usize],
        with_link: bool,
    ) -> Result<Self, ClusterError> {
        let n = self.num_nodes();
        if node >= n {
            return Err(ClusterError::NodeOutOfRange(node));
        }
        let w = self.weights[node];
        if first_weight == 0 || first_weight >= w {
            return Err(ClusterError::BadSplitWeights);
        }
        let incident = self.incident_edges(node);
        for &e in second_edges {
            if !incident.contains(&e) {
                return Err(ClusterError::BadSplitEdge(e));
            }
        }
        let new_idx = n;
        let mut weights = self.weights.clone();
        weights[node] = first_weight;
        weights.push(w - first_weight);
        let mut edges = self.edges.clone();
        for &e in second_edges {
            let (a, b) = edges[e];
            edges[e] = if a == node { (new_idx, b) } else { (a, new_idx) };
        }
        if with_link {
            edges.push((node, new_idx));
        }
        Self::new(weights, edges)
    }

    pub fn add_edge(&self, a: usize, b: usize) -> Result<Self, ClusterError> {
        let n = self.num_nodes();
        if a >= n || b >= n {
            return Err(ClusterError::NodeOutOfRange(a.max(b)));
        }
        if a == b {
            return Err(ClusterError::SelfLoop(a));
        }
        let mut edges = self.edges.clone();
        edges.push((a, b));
        Self::new(self.weights.clone(), edges)
    }
}

/// Builds the cluster-merging graph for one layer of an architecture.
///
/// Nodes are the connected components of the union graph of the first
/// `prior_layers` layers; each gate of layer `layer` joining two distinct
/// components becomes an edge. Gates internal to one component are omitted.
/// Pass `prior_layers = 0` for the first layer, where every site is its own
/// weight-1 cluster.
pub fn cluster_graph_at(
    arch: &Architecture,
    prior_layers: usize,
    layer: usize,
) -> Result<ClusterGraph, ClusterError> {
    if layer >= arch.num_layers() || prior_layers > layer {
        return Err(ClusterError::LayerOutOfRange(layer));
    }
    let mut dsu = DisjointSets::new(arch.num_sites);
    for l in 0..prior_layers {
        for gate in &arch.layers[l].gates {
            for pair in gate.windows(2) {
                dsu.union(pair[0], pair[1]);
            }
        }
    }
    let groups = dsu.groups();
    let mut node_of_site = vec![0usize; arch.num_sites];
    for (idx, group) in groups.iter().enumerate() {
        for &s in group {
            node_of_site[s] = idx;
        }
    }
    let weights: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut edges = Vec::new();
    for gate in &arch.layers[layer].gates {
        let mut nodes: Vec<usize> = gate.iter().map(|&s| node_of_site[s]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        match nodes.len() {
            1 => {}
            2 => edges.push((nodes[0], nodes[1])),
            _ => return Err(ClusterError::GateSpansManyClusters(gate.clone())),
        }
    }
    ClusterGraph::new(weights, edges)
}

/// Shape certificate for a layer's edge set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeCert {
    /// Every component is a simple path.
    Strings,
    /// Paths whose internal nodes all have even weight.
    BrickworkCompatibleStrings,
    /// Every component is a cycle of degree-2 nodes with even weights.
    Loops,
    None,
}

/// Classifies the subgraph induced by `layer`'s edges. Nodes without layer
/// edges are ignored.
pub fn validate_shape(g: &ClusterGraph, layer: &[(usize, usize)]) -> ShapeCert {
    let comps = layer_components(g, layer);
    if comps.is_empty() {
        return ShapeCert::BrickworkCompatibleStrings;
    }
    let mut all_strings = true;
    let mut all_compat = true;
    let mut all_loops = true;
    for comp in &comps {
        match comp {
            LayerComponent::Str { nodes } => {
                all_loops = false;
                if nodes.len() > 2 {
                    for &v in &nodes[1..nodes.len() - 1] {
                        if g.weights()[v] % 2 != 0 {
                            all_compat = false;
                        }
                    }
                }
            }
            LayerComponent::Cycle { nodes } => {
                all_strings = false;
                all_compat = false;
                if nodes.iter().any(|&v| g.weights()[v] % 2 != 0) {
                    all_loops = false;
                }
            }
            LayerComponent::Other => return ShapeCert::None,
        }
    }
    if all_strings {
        if all_compat {
            ShapeCert::BrickworkCompatibleStrings
        } else {
            ShapeCert::Strings
        }
    } else if all_loops {
        ShapeCert::Loops
    } else {
        ShapeCert::None
    }
}

enum LayerComponent {
    /// Path in order from one endpoint to the other.
    Str { nodes: Vec<usize> },
    Cycle { nodes: Vec<usize> },
    Other,
}

fn layer_components(g: &ClusterGraph, layer: &[(usize, usize)]) -> Vec<LayerComponent> {
    let n = g.num_nodes();
    let mut dsu = DisjointSets::new(n);
    let mut touched = vec![false; n];
    for &(a, b) in layer {
        dsu.union(a, b);
        touched[a] = true;
        touched[b] = true;
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in layer {
        adj[a].push(b);
        adj[b].push(a);
    }
    let groups = dsu.groups();
    let mut comp_of = vec![usize::MAX; n];
    for (ci, group) in groups.iter().enumerate() {
        for &v in group {
            comp_of[v] = ci;
        }
    }
    let mut edge_counts = vec![0usize; groups.len()];
    for &(a, _) in layer {
        edge_counts[comp_of[a]] += 1;
    }
    let mut out = Vec::new();
    for (ci, group) in groups.into_iter().enumerate() {
        if group.len() == 1 && !touched[group[0]] {
            continue;
        }
        let edge_count = edge_counts[ci];
        let degrees: Vec<usize> = group.iter().map(|&v| adj[v].len()).collect();
        let max_deg = degrees.iter().copied().max().unwrap_or(0);
        if max_deg <= 2 && edge_count + 1 == group.len() {
            // path: walk from the lowest-index endpoint
            let start = *group
                .iter()
                .find(|&&v| adj[v].len() == 1)
                .expect("path has an endpoint");
            let mut nodes = vec![start];
            let mut prev = usize::MAX;
            let mut cur = start;
            while nodes.len() < group.len() {
                let next = *adj[cur].iter().find(|&&u| u != prev).expect("path continues");
                prev = cur;
                cur = next;
                nodes.push(cur);
            }
            out.push(LayerComponent::Str { nodes });
        } else if degrees.iter().all(|&d| d == 2) && edge_count == group.len() {
            out.push(LayerComponent::Cycle { nodes: group });
        } else {
            out.push(LayerComponent::Other);
        }
    }
    out
}

/// Output of [`split_odd_strings`]: the kept first layer, the contracted
/// graph after it, and the removed edges re-expressed on that graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OddSplit {
    pub first: Vec<(usize, usize)>,
    pub contracted: ClusterGraph,
    pub second: Vec<(usize, usize)>,
}

/// Splits a layer of isolated strings into two brickwork-compatible layers.
///
/// Odd-weight nodes are paired along each string and one edge is removed per
/// pairing so that every substring carries odd nodes only at its endpoints;
/// the removed edges form the second layer after the first is contracted.
/// Contracting the first and then the second layer equals contracting the
/// original layer.
pub fn split_odd_strings(
    g: &ClusterGraph,
    layer: &[(usize, usize)],
) -> Result<OddSplit, ClusterError> {
    let removed = odd_split_removals(g, layer)?;
    let first: Vec<(usize, usize)> = {
        let mut pool = removed.clone();
        layer
            .iter()
            .copied()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .filter(|e| {
                if let Some(i) = pool.iter().position(|r| r == e) {
                    pool.swap_remove(i);
                    false
                } else {
                    true
                }
            })
            .collect()
    };
    let (contracted, map) = g.contract(&first)?;
    let second: Vec<(usize, usize)> = removed
        .iter()
        .map(|&(a, b)| {
            let (na, nb) = (map[a], map[b]);
            (na.min(nb), na.max(nb))
        })
        .collect();
    Ok(OddSplit { first, contracted, second })
}

/// Edges to postpone to the second layer so that both layers become
/// brickwork-compatible. Errors unless every component is a string.
fn odd_split_removals(
    g: &ClusterGraph,
    layer: &[(usize, usize)],
) -> Result<Vec<(usize, usize)>, ClusterError> {
    let mut removed: Vec<(usize, usize)> = Vec::new();
    for comp in layer_components(g, layer) {
        let nodes = match comp {
            LayerComponent::Str { nodes } => nodes,
            _ => return Err(ClusterError::NotAString),
        };
        let odd_positions: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|&(_, &v)| g.weights()[v] % 2 != 0)
            .map(|(i, _)| i)
            .collect();
        // Endpoints may stay odd; a string with no odd internal node is
        // already brickwork-compatible and keeps all its edges.
        if odd_positions
            .iter()
            .all(|&p| p == 0 || p + 1 == nodes.len())
        {
            continue;
        }
        let mut mark = |i: usize, j: usize| {
            let e = (nodes[i].min(nodes[j]), nodes[i].max(nodes[j]));
            if !removed.contains(&e) {
                removed.push(e);
            }
        };
        for (rank, &pos) in odd_positions.iter().enumerate() {
            if rank % 2 == 0 {
                // left-hand edge, if any
                if pos > 0 {
                    mark(pos - 1, pos);
                }
            } else {
                // right-hand edge, if any
                if pos + 1 < nodes.len() {
                    mark(pos, pos + 1);
                }
            }
        }
    }
    Ok(removed)
}

/// Result of reducing a graph to 1D brickwork loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EulerReduction {
    /// Sites per resulting loop, one entry per connected component, ordered
    /// by the component's smallest original node.
    pub loop_sizes: Vec<usize>,
    pub trace: Vec<TraceStep>,
    pub final_graph: ClusterGraph,
}

/// Unravels each component along an Eulerian circuit and then splits every
/// node down to weight 2, yielding one brickwork loop per component.
///
/// Requires even weight and even degree on every node. Isolated nodes pass
/// through unchanged and are reported as a loop of their own weight. Surplus
/// sites of a split node stay on the lowest-index piece.
pub fn euler_reduce(g: &ClusterGraph) -> Result<EulerReduction, ClusterError> {
    for v in 0..g.num_nodes() {
        let (w, d) = (g.weights()[v], g.degree(v));
        if w % 2 != 0 || d % 2 != 0 {
            return Err(ClusterError::OddNode { node: v, weight: w, degree: d });
        }
    }
    let components = g.components();
    let loop_sizes: Vec<usize> = components
        .iter()
        .map(|comp| comp.iter().map(|&v| g.weights()[v]).sum())
        .collect();

    // Working edge list with stable semantic ids; endpoints updated as nodes
    // split so that rewrite arguments can be resolved against the sorted
    // edge list of the current graph.
    let mut work: Vec<(usize, usize)> = g.edges().to_vec();
    let mut current = g.clone();
    let mut trace: Vec<TraceStep> = Vec::new();

    // Applies a split, renaming exactly the moved semantic ids so that the
    // bookkeeping follows the circuit even through parallel edges (the graph
    // indices only need to value-match, since parallel edges are
    // interchangeable).
    let mut apply = |current: &mut ClusterGraph,
                     work: &mut Vec<(usize, usize)>,
                     rewrite: Rewrite,
                     moved_ids: &[usize],
                     trace: &mut Vec<TraceStep>|
     -> Result<(), ClusterError> {
        let next = current.rewrite(&rewrite)?;
        if let Rewrite::SplitConnected { node, .. } | Rewrite::SplitWithLink { node, .. } =
            &rewrite
        {
            let new_idx = current.num_nodes();
            for &id in moved_ids {
                let (a, b) = work[id];
                work[id] = if a == *node { (new_idx, b) } else { (a, new_idx) };
            }
            if matches!(rewrite, Rewrite::SplitWithLink { .. }) {
                work.push((*node, new_idx));
            }
        }
        trace.push(TraceStep { rewrite, graph: next.clone() });
        *current = next;
        Ok(())
    };

    // resolve a semantic edge id to an index in the current sorted edge list,
    // skipping indices already claimed
    let resolve = |current: &ClusterGraph, work: &[(usize, usize)], ids: &[usize]| -> Vec<usize> {
        let mut used = vec![false; current.edges().len()];
        ids.iter()
            .map(|&id| {
                let (a, b) = work[id];
                let key = (a.min(b), a.max(b));
                let idx = current
                    .edges()
                    .iter()
                    .enumerate()
                    .position(|(i, &e)| e == key && !used[i])
                    .expect("semantic edge present");
                used[idx] = true;
                idx
            })
            .collect()
    };

    for comp in &components {
        let comp_edges: Vec<usize> = (0..work.len())
            .filter(|&i| comp.contains(&work[i].0))
            .collect();
        if comp_edges.is_empty() {
            continue;
        }
        // Hierholzer with lowest-edge-index tie-breaking
        let circuit = eulerian_circuit(&work, &comp_edges, comp[0]);

        // visits[v] = list of (incoming edge id, outgoing edge id) per pass
        let m = circuit.len();
        let mut visits: Vec<(usize, usize, usize)> = Vec::new(); // (node, e_in, e_out)
        for i in 0..m {
            let (node, e_out) = circuit[i];
            let e_in = circuit[(i + m - 1) % m].1;
            visits.push((node, e_in, e_out));
        }

        // Unravel: each node keeps its first visit; later visits split off as
        // fresh weight-2 nodes carrying their circuit edge pair.
        let mut comp_sorted = comp.clone();
        comp_sorted.sort_unstable();
        for &v in &comp_sorted {
            let mine: Vec<usize> = (0..visits.len()).filter(|&i| visits[i].0 == v).collect();
            for &vi in mine.iter().skip(1) {
                let (_, e_in, e_out) = visits[vi];
                // splits append, so the still-unsplit cluster sits at v
                let node_now = v;
                let w_now = current.weights()[node_now];
                let second = resolve(&current, &work, &[e_in, e_out]);
                apply(
                    &mut current,
                    &mut work,
                    Rewrite::SplitConnected {
                        node: node_now,
                        first_weight: w_now - 2,
                        second_edges: second,
                    },
                    &[e_in, e_out],
                    &mut trace,
                )?;
                let new_idx = current.num_nodes() - 1;
                visits[vi].0 = new_idx;
            }
        }

        // Weight splitting: walk the loop and peel weight-2 nodes, inserting
        // a new link each time, until everything has weight 2.
        for vi in 0..visits.len() {
            loop {
                let node_now = visits[vi].0;
                let w_now = current.weights()[node_now];
                if w_now <= 2 {
                    break;
                }
                let e_out = visits[vi].2;
                let second = resolve(&current, &work, &[e_out]);
                apply(
                    &mut current,
                    &mut work,
                    Rewrite::SplitWithLink {
                        node: node_now,
                        first_weight: w_now - 2,
                        second_edges: second,
                    },
                    &[e_out],
                    &mut trace,
                )?;
                // the peeled node takes over the outgoing edge; the new link
                // becomes this node's outgoing side
                visits[vi].2 = work.len() - 1;
            }
        }
    }

    Ok(EulerReduction { loop_sizes, trace, final_graph: current })
}

/// Eulerian circuit as a list of `(node, outgoing edge id)` steps starting
/// from `start`, using the lowest available edge id at each node.
fn eulerian_circuit(
    work: &[(usize, usize)],
    comp_edges: &[usize],
    start: usize,
) -> Vec<(usize, usize)> {
    let mut unused: Vec<usize> = comp_edges.to_vec();
    unused.sort_unstable();
    let mut used = vec![false; work.len()];
    let other = |e: usize, v: usize| {
        let (a, b) = work[e];
        if a == v {
            b
        } else {
            a
        }
    };
    let next_edge = |v: usize, used: &[bool]| -> Option<usize> {
        unused
            .iter()
            .copied()
            .find(|&e| !used[e] && (work[e].0 == v || work[e].1 == v))
    };
    let mut stack: Vec<(usize, Option<usize>)> = vec![(start, None)];
    let mut popped: Vec<(usize, Option<usize>)> = Vec::new();
    while let Some(&(v, _)) = stack.last() {
        if let Some(e) = next_edge(v, &used) {
            used[e] = true;
            stack.push((other(e, v), Some(e)));
        } else {
            popped.push(stack.pop().expect("nonempty"));
        }
    }
    popped.reverse();
    // popped = (start, None), (v1, e0), (v2, e1), ..., (start, e_{m-1})
    let mut circuit = Vec::with_capacity(popped.len() - 1);
    for i in 0..popped.len() - 1 {
        let node = popped[i].0;
        let e_out = popped[i + 1].1.expect("edge into successor");
        circuit.push((node, e_out));
    }
    circuit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::{brickwork_1d, Architecture, Boundary, Layer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cg(weights: &[usize], edges: &[(usize, usize)]) -> ClusterGraph {
        ClusterGraph::new(weights.to_vec(), edges.to_vec()).unwrap()
    }

    #[test]
    fn brickwork8_second_layer_is_a_cycle() {
        let arch = brickwork_1d(8, 2.0, Boundary::Periodic).unwrap();
        let g = cluster_graph_at(&arch, 1, 1).unwrap();
        assert_eq!(g.weights(), &[2, 2, 2, 2]);
        assert_eq!(g.edges().len(), 4);
        assert!(g.is_connected());
        assert!((0..4).all(|v| g.degree(v) == 2));
    }

    #[test]
    fn internal_gates_are_dropped() {
        // second layer repeats the first, so every gate is internal
        let a = Layer::new(vec![vec![0, 1], vec![2, 3]]);
        let arch = Architecture::new(4, 2.0, vec![a.clone(), a]).unwrap();
        let g = cluster_graph_at(&arch, 1, 1).unwrap();
        assert_eq!(g.weights(), &[2, 2]);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn first_layer_over_singletons() {
        let arch = brickwork_1d(6, 2.0, Boundary::Periodic).unwrap();
        let g = cluster_graph_at(&arch, 0, 0).unwrap();
        assert_eq!(g.weights(), &[1; 6]);
        assert_eq!(g.edges(), &[(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn merge_drops_internal_edges() {
        let g = cg(&[2, 2], &[(0, 1), (0, 1)]);
        let merged = g.merge(0, 1).unwrap();
        assert_eq!(merged.weights(), &[4]);
        assert!(merged.edges().is_empty());
    }

    #[test]
    fn split_with_link_reverses_merge_shape() {
        // weight-4 node with two external edges splits into 2+2 joined by a
        // link, edges distributed one per side
        let g = cg(&[4, 2, 2], &[(0, 1), (0, 2)]);
        let out = g
            .rewrite(&Rewrite::SplitWithLink { node: 0, first_weight: 2, second_edges: vec![1] })
            .unwrap();
        assert_eq!(out.weights(), &[2, 2, 2, 2]);
        assert_eq!(out.degree(0), 2);
        assert_eq!(out.degree(3), 2);
        assert!(out.edges().contains(&(0, 3)));
    }

    #[test]
    fn add_edge_respects_capacity() {
        let g = cg(&[2, 2], &[(0, 1), (0, 1)]);
        assert!(matches!(
            g.add_edge(0, 1),
            Err(ClusterError::DegreeExceedsWeight { node: 0, .. })
        ));
        let roomy = cg(&[3, 3], &[(0, 1), (0, 1)]);
        assert_eq!(roomy.add_edge(0, 1).unwrap().edges().len(), 3);
    }

    #[test]
    fn split_connected_must_stay_connected() {
        let g = cg(&[4, 2], &[(0, 1)]);
        let err = g.rewrite(&Rewrite::SplitConnected {
            node: 0,
            first_weight: 2,
            second_edges: vec![],
        });
        assert!(matches!(err, Err(ClusterError::SplitDisconnects)));
    }

    #[test]
    fn euler_cycle_of_four_pairs_is_one_loop() {
        let g = cg(&[2, 2, 2, 2], &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let red = euler_reduce(&g).unwrap();
        assert_eq!(red.loop_sizes, vec![8]);
        assert!(red.trace.is_empty());
        assert_eq!(red.final_graph, g);
    }

    #[test]
    fn euler_two_fat_nodes_unravel_to_a_loop() {
        let g = cg(&[4, 4], &[(0, 1); 4]);
        let red = euler_reduce(&g).unwrap();
        assert_eq!(red.loop_sizes, vec![8]);
        let f = &red.final_graph;
        assert_eq!(f.total_weight(), 8);
        assert!(f.weights().iter().all(|&w| w == 2));
        assert!((0..f.num_nodes()).all(|v| f.degree(v) == 2));
        assert!(f.is_connected());
        assert_eq!(validate_shape(f, f.edges()), ShapeCert::Loops);
    }

    #[test]
    fn euler_handles_components_separately() {
        let g = cg(
            &[2; 8],
            &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4)],
        );
        let red = euler_reduce(&g).unwrap();
        assert_eq!(red.loop_sizes, vec![8, 8]);
    }

    #[test]
    fn euler_rejects_odd_nodes() {
        let g = cg(&[3, 3], &[(0, 1), (0, 1)]);
        assert!(matches!(euler_reduce(&g), Err(ClusterError::OddNode { node: 0, .. })));
    }

    #[test]
    fn euler_on_random_even_graphs_conserves_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..40 {
            let g = random_even_graph(&mut rng, 8);
            let red = euler_reduce(&g).unwrap();
            assert_eq!(
                red.loop_sizes.iter().sum::<usize>(),
                g.total_weight(),
                "graph {g:?}"
            );
            for step in &red.trace {
                assert_eq!(step.graph.total_weight(), g.total_weight());
            }
            let f = &red.final_graph;
            for v in 0..f.num_nodes() {
                // isolated nodes pass through; everything else is a loop pair
                if f.degree(v) > 0 {
                    assert_eq!(f.degree(v), 2);
                    assert_eq!(f.weights()[v], 2);
                }
            }
        }
    }

    /// Random connected multigraph with even weights and degrees, total
    /// weight at most `max_weight`. Built from a closed walk.
    pub(crate) fn random_even_graph(rng: &mut ChaCha8Rng, max_weight: usize) -> ClusterGraph {
        loop {
            let n = rng.random_range(1..=3usize);
            if n == 1 {
                let w = 2 * rng.random_range(1..=max_weight / 2);
                return ClusterGraph::new(vec![w], vec![]).unwrap();
            }
            // closed walk visiting all nodes
            let mut walk: Vec<usize> = (0..n).collect();
            let extra = rng.random_range(0..=1usize);
            for _ in 0..extra {
                walk.push(rng.random_range(0..n));
            }
            let mut edges = Vec::new();
            for i in 0..walk.len() {
                let a = walk[i];
                let b = walk[(i + 1) % walk.len()];
                if a == b {
                    continue;
                }
                edges.push((a, b));
            }
            let mut weights = vec![0usize; n];
            for &(a, b) in &edges {
                weights[a] += 1;
                weights[b] += 1;
            }
            // round odd degrees up and sprinkle spare capacity
            for w in weights.iter_mut() {
                if *w % 2 == 1 {
                    *w += 1;
                }
                if *w == 0 {
                    *w = 2;
                }
            }
            let budget = max_weight as isize - weights.iter().sum::<usize>() as isize;
            if budget >= 2 && rng.random_bool(0.5) {
                let v = rng.random_range(0..n);
                weights[v] += 2;
            }
            if weights.iter().sum::<usize>() > max_weight {
                continue;
            }
            if let Ok(g) = ClusterGraph::new(weights, edges) {
                let even = (0..g.num_nodes()).all(|v| g.degree(v) % 2 == 0);
                if even && g.is_connected() {
                    return g;
                }
            }
        }
    }

    #[test]
    fn shape_certificates() {
        let loop4 = cg(&[2, 2, 2, 2], &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert_eq!(validate_shape(&loop4, loop4.edges()), ShapeCert::Loops);

        let path = cg(&[2, 4, 2], &[(0, 1), (1, 2)]);
        assert_eq!(validate_shape(&path, path.edges()), ShapeCert::BrickworkCompatibleStrings);

        let odd_path = cg(&[2, 3, 2], &[(0, 1), (1, 2)]);
        assert_eq!(validate_shape(&odd_path, odd_path.edges()), ShapeCert::Strings);

        let branch = cg(&[2, 4, 2, 2], &[(0, 1), (1, 2), (1, 3)]);
        assert_eq!(validate_shape(&branch, branch.edges()), ShapeCert::None);

        assert_eq!(validate_shape(&path, &[]), ShapeCert::BrickworkCompatibleStrings);
    }

    #[test]
    fn odd_split_leaves_even_strings_alone() {
        let g = cg(&[2, 4, 2], &[(0, 1), (1, 2)]);
        let split = split_odd_strings(&g, g.edges()).unwrap();
        assert_eq!(split.first.len(), 2);
        assert!(split.second.is_empty());
    }

    #[test]
    fn odd_split_pairs_two_internal_odds() {
        let g = cg(&[2, 3, 3, 2], &[(0, 1), (1, 2), (2, 3)]);
        let split = split_odd_strings(&g, g.edges()).unwrap();
        assert_eq!(
            validate_shape(&g, &split.first),
            ShapeCert::BrickworkCompatibleStrings
        );
        assert_eq!(
            validate_shape(&split.contracted, &split.second),
            ShapeCert::BrickworkCompatibleStrings
        );
        // composing both layers equals contracting the whole string
        let (once, _) = g.contract(g.edges()).unwrap();
        let (recomposed, _) = split.contracted.contract(&split.second).unwrap();
        assert_eq!(once, recomposed);
    }

    #[test]
    fn odd_split_endpoint_exemption() {
        let g = cg(&[3, 2, 2], &[(0, 1), (1, 2)]);
        let split = split_odd_strings(&g, g.edges()).unwrap();
        assert_eq!(split.first.len(), 2);
        assert!(split.second.is_empty());
        assert_eq!(validate_shape(&g, &split.first), ShapeCert::BrickworkCompatibleStrings);
    }

    #[test]
    fn odd_split_rejects_non_strings() {
        let branch = cg(&[2, 4, 2, 2], &[(0, 1), (1, 2), (1, 3)]);
        assert!(matches!(
            split_odd_strings(&branch, branch.edges()),
            Err(ClusterError::NotAString)
        ));
    }

    #[test]
    fn rewrites_conserve_weight_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..60 {
            let g = random_even_graph(&mut rng, 8);
            let total = g.total_weight();
            if g.num_nodes() >= 2 {
                let merged = g.merge(0, 1).unwrap();
                assert_eq!(merged.total_weight(), total);
            }
            if let Some(v) = (0..g.num_nodes()).find(|&v| g.degree(v) + 2 <= g.weights()[v]) {
                let out = g
                    .rewrite(&Rewrite::SplitWithLink {
                        node: v,
                        first_weight: g.weights()[v] - 1,
                        second_edges: vec![],
                    })
                    .unwrap();
                assert_eq!(out.total_weight(), total);
            }
        }
    }
}
