//! Layer decompositions of connected cluster-merging graphs.
//!
//! Both algorithms reduce a graph to a single node through layers whose
//! components are brickwork-compatible strings:
//!
//! - [`tree_decompose`]: recursive halving along heavy paths, at most
//!   `2 * min(ceil(d/2), 6) * ceil(log2 N)` layers for max tree degree `d`.
//! - [`loglog_decompose`]: one layer of maximally-weighted path contractions
//!   followed by alternate-depth star rounds, at most
//!   `8 * ceil(log2 floor(log2(N+1))) + 2` layers.
//!
//! Node splits inside a decomposition distribute sites for a later layer's
//! gates, so the ambient degree bound is checked per layer (each layer's
//! gates against the node weights at that moment) rather than against the
//! union of all pending edges.

use super::{split_odd_strings, validate_shape, ClusterError, ClusterGraph, ShapeCert};
use serde::{Deserialize, Serialize};

/// One step of a layer decomposition, replayable against the current graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompEvent {
    /// Edges discarded up front (spanning-tree extraction).
    DropEdges { edges: Vec<(usize, usize)> },
    /// Node split distributing sites ahead of upcoming layers. The first
    /// part keeps the node index, the second is appended; `second_edges`
    /// index into the current sorted edge list. `with_link` adds a new edge
    /// between the parts.
    Split { node: usize, first_weight: usize, second_edges: Vec<usize>, with_link: bool },
    /// A layer of simultaneously applied edges, contracted as one step.
    Layer { edges: Vec<(usize, usize)>, certificate: ShapeCert },
}

/// A verified plan reducing `initial` to `final_graph` through string layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDecomposition {
    pub initial: ClusterGraph,
    pub events: Vec<DecompEvent>,
    pub layer_count: usize,
    pub final_graph: ClusterGraph,
}

impl LayerDecomposition {
    /// Replays the event list, re-checking weight conservation, per-layer
    /// site feasibility, shape certificates, and the final graph.
    pub fn verify(&self) -> Result<(), ClusterError> {
        let mut g = self.initial.clone();
        let total = g.total_weight();
        let mut layers = 0usize;
        for ev in &self.events {
            g = apply_event(&g, ev)?;
            if let DecompEvent::Layer { .. } = ev {
                layers += 1;
            }
            if g.total_weight() != total {
                return Err(ClusterError::ReplayMismatch("weight not conserved".into()));
            }
        }
        if layers != self.layer_count {
            return Err(ClusterError::ReplayMismatch(format!(
                "layer count {} vs recorded {}",
                layers, self.layer_count
            )));
        }
        if g != self.final_graph {
            return Err(ClusterError::ReplayMismatch("final graph differs".into()));
        }
        Ok(())
    }

    /// Graph states before each layer, for export and inspection.
    pub fn stages(&self) -> Result<Vec<(ClusterGraph, Vec<(usize, usize)>)>, ClusterError> {
        let mut g = self.initial.clone();
        let mut stages = Vec::new();
        for ev in &self.events {
            if let DecompEvent::Layer { edges, .. } = ev {
                stages.push((g.clone(), edges.clone()));
            }
            g = apply_event(&g, ev)?;
        }
        Ok(stages)
    }
}

fn apply_event(g: &ClusterGraph, ev: &DecompEvent) -> Result<ClusterGraph, ClusterError> {
    match ev {
        DecompEvent::DropEdges { edges } => g.without_edges(edges),
        DecompEvent::Split { node, first_weight, second_edges, with_link } => {
            split_relaxed(g, *node, *first_weight, second_edges, *with_link)
        }
        DecompEvent::Layer { edges, certificate } => {
            let cert = validate_shape(g, edges);
            if cert != *certificate {
                return Err(ClusterError::ReplayMismatch(format!(
                    "certificate {cert:?} vs recorded {certificate:?}"
                )));
            }
            if cert != ShapeCert::BrickworkCompatibleStrings {
                return Err(ClusterError::ReplayMismatch(
                    "layer is not brickwork-compatible".into(),
                ));
            }
            // per-layer site feasibility
            let mut deg = vec![0usize; g.num_nodes()];
            for &(a, b) in edges {
                deg[a] += 1;
                deg[b] += 1;
            }
            for v in 0..g.num_nodes() {
                if deg[v] > g.weights()[v] {
                    return Err(ClusterError::LayerTooDense { node: v, weight: g.weights()[v] });
                }
            }
            Ok(g.contract(edges)?.0)
        }
    }
}

/// Split without the ambient degree bound (per-layer feasibility is checked
/// when layers are applied).
fn split_relaxed(
    g: &ClusterGraph,
    node: usize,
    first_weight: usize,
    second_edges: &[usize],
    with_link: bool,
) -> Result<ClusterGraph, ClusterError> {
    let n = g.num_nodes();
    if node >= n {
        return Err(ClusterError::NodeOutOfRange(node));
    }
    let w = g.weights()[node];
    if first_weight == 0 || first_weight >= w {
        return Err(ClusterError::BadSplitWeights);
    }
    let incident = g.incident_edges(node);
    for &e in second_edges {
        if !incident.contains(&e) {
            return Err(ClusterError::BadSplitEdge(e));
        }
    }
    let mut weights = g.weights().to_vec();
    weights[node] = first_weight;
    weights.push(w - first_weight);
    let mut edges = g.edges().to_vec();
    for &e in second_edges {
        let (a, b) = edges[e];
        edges[e] = if a == node { (n, b) } else { (a, n) };
    }
    if with_link {
        edges.push((node, n));
    }
    ClusterGraph::new_relaxed(weights, edges)
}

// ---------------------------------------------------------------------------
// Execution workspace: tokens name logical clusters across contractions.

struct Workspace {
    graph: ClusterGraph,
    /// token of each current node
    node_tokens: Vec<usize>,
    /// union-find over all tokens ever issued
    token_parent: Vec<usize>,
    events: Vec<DecompEvent>,
    layer_count: usize,
}

impl Workspace {
    fn new(g: &ClusterGraph) -> Self {
        let n = g.num_nodes();
        Self {
            graph: g.clone(),
            node_tokens: (0..n).collect(),
            token_parent: (0..n).collect(),
            events: Vec::new(),
            layer_count: 0,
        }
    }

    fn find(&mut self, tok: usize) -> usize {
        let mut root = tok;
        while self.token_parent[root] != root {
            root = self.token_parent[root];
        }
        let mut cur = tok;
        while self.token_parent[cur] != root {
            let next = self.token_parent[cur];
            self.token_parent[cur] = root;
            cur = next;
        }
        root
    }

    fn fresh_token(&mut self) -> usize {
        let t = self.token_parent.len();
        self.token_parent.push(t);
        t
    }

    fn node_of(&mut self, tok: usize) -> usize {
        let rep = self.find(tok);
        self.node_tokens
            .iter()
            .position(|&t| t == rep)
            .expect("token names a live cluster")
    }

    fn weight_of(&mut self, tok: usize) -> usize {
        let idx = self.node_of(tok);
        self.graph.weights()[idx]
    }

    fn drop_edges(&mut self, edges: Vec<(usize, usize)>) -> Result<(), ClusterError> {
        self.graph = self.graph.without_edges(&edges)?;
        self.events.push(DecompEvent::DropEdges { edges });
        Ok(())
    }

    /// Splits the cluster holding `tok`; the new part gets a fresh token.
    /// `move_to_second` lists edges (as endpoint-token pairs) handed to the
    /// new part, resolved by multiplicity against the current edge list.
    fn split(
        &mut self,
        tok: usize,
        second_weight: usize,
        move_to_second: &[(usize, usize)],
        with_link: bool,
    ) -> Result<usize, ClusterError> {
        let node = self.node_of(tok);
        let w = self.graph.weights()[node];
        let wanted: Vec<(usize, usize)> = move_to_second
            .iter()
            .map(|&(ta, tb)| {
                let (a, b) = (self.node_of(ta), self.node_of(tb));
                (a.min(b), a.max(b))
            })
            .collect();
        let mut used = vec![false; self.graph.edges().len()];
        let mut second_edges = Vec::with_capacity(wanted.len());
        for key in wanted {
            let idx = self
                .graph
                .edges()
                .iter()
                .enumerate()
                .position(|(i, &e)| e == key && !used[i])
                .ok_or(ClusterError::MissingEdge(key.0, key.1))?;
            used[idx] = true;
            second_edges.push(idx);
        }
        let ev = DecompEvent::Split {
            node,
            first_weight: w - second_weight,
            second_edges: second_edges.clone(),
            with_link,
        };
        self.graph = apply_event(&self.graph, &ev)?;
        self.events.push(ev);
        let t = self.fresh_token();
        self.node_tokens.push(t);
        Ok(t)
    }

    /// Applies one layer given as endpoint-token pairs, splitting odd-node
    /// strings into two brickwork-compatible layers as needed.
    fn apply_layer(&mut self, token_edges: &[(usize, usize)]) -> Result<(), ClusterError> {
        if token_edges.is_empty() {
            return Ok(());
        }
        let pairs: Vec<(usize, usize)> = token_edges
            .iter()
            .map(|&(ta, tb)| {
                let (a, b) = (self.node_of(ta), self.node_of(tb));
                (a.min(b), a.max(b))
            })
            .collect();
        let split = split_odd_strings(&self.graph, &pairs)?;
        self.commit_layer(split.first)?;
        if !split.second.is_empty() {
            self.commit_layer(split.second)?;
        }
        Ok(())
    }

    fn commit_layer(&mut self, edges: Vec<(usize, usize)>) -> Result<(), ClusterError> {
        if edges.is_empty() {
            return Ok(());
        }
        let cert = validate_shape(&self.graph, &edges);
        debug_assert_eq!(cert, ShapeCert::BrickworkCompatibleStrings);
        let ev = DecompEvent::Layer { edges: edges.clone(), certificate: cert };
        let next = apply_event(&self.graph, &ev)?;
        self.events.push(ev);
        self.layer_count += 1;
        // merge tokens per contracted component
        let (_, map) = self.graph.contract(&edges)?;
        let new_count = next.num_nodes();
        let mut new_tokens = vec![usize::MAX; new_count];
        for old in 0..self.graph.num_nodes() {
            let tok = self.node_tokens[old];
            let tgt = map[old];
            if new_tokens[tgt] == usize::MAX {
                new_tokens[tgt] = tok;
            } else {
                // union; keep the existing representative
                let (ra, rb) = (self.find(new_tokens[tgt]), self.find(tok));
                if ra != rb {
                    self.token_parent[rb] = ra;
                }
            }
        }
        self.node_tokens = new_tokens
            .into_iter()
            .map(|t| {
                let mut root = t;
                while self.token_parent[root] != root {
                    root = self.token_parent[root];
                }
                root
            })
            .collect();
        self.graph = next;
        Ok(())
    }

    fn finish(self, initial: ClusterGraph) -> LayerDecomposition {
        LayerDecomposition {
            initial,
            events: self.events,
            layer_count: self.layer_count,
            final_graph: self.graph,
        }
    }
}

// ---------------------------------------------------------------------------
// Star contraction: absorb `children` clusters into `center`.

/// Layers a single star task needs: `min(ceil(g/2), 4)`.
fn star_slot_count(g: usize) -> usize {
    ((g + 1) / 2).min(4)
}

enum TaskState {
    /// Two children absorbed per slot; no splits.
    SimpleStar { center: usize, children: Vec<usize> },
    /// Center split into a chain of sub-nodes, two slots per half.
    SplitStar { center: usize, halves: [Vec<usize>; 2], subs: Vec<usize> },
    /// One slot contracting a token chain.
    Path { nodes: Vec<usize> },
}

impl TaskState {
    fn new_star(center: usize, children: Vec<usize>) -> Self {
        if children.len() <= 8 {
            TaskState::SimpleStar { center, children }
        } else {
            let h = children.len() / 2;
            let halves = [children[..h].to_vec(), children[h..].to_vec()];
            TaskState::SplitStar { center, halves, subs: Vec::new() }
        }
    }

    fn slots(&self) -> usize {
        match self {
            TaskState::SimpleStar { children, .. } => star_slot_count(children.len()),
            TaskState::SplitStar { .. } => 4,
            TaskState::Path { .. } => 1,
        }
    }

    /// Splits to perform before collecting edges for `slot`.
    fn prepare(&mut self, ws: &mut Workspace, slot: usize) -> Result<(), ClusterError> {
        if let TaskState::SplitStar { center, halves, subs } = self {
            if slot == 0 || slot == 2 {
                let half = &halves[slot / 2];
                *subs = split_center_chain(ws, *center, half)?;
            }
        }
        Ok(())
    }

    /// Edge list (token pairs) this task contributes to `slot`.
    fn edges(&self, slot: usize) -> Vec<(usize, usize)> {
        match self {
            TaskState::SimpleStar { center, children } => children
                .chunks(2)
                .nth(slot)
                .map(|pair| pair.iter().map(|&c| (*center, c)).collect())
                .unwrap_or_default(),
            TaskState::SplitStar { halves, subs, .. } => match slot {
                0 | 2 => {
                    let half = &halves[slot / 2];
                    let mut out = Vec::new();
                    for (j, pair) in half.chunks(2).enumerate() {
                        for &c in pair {
                            out.push((subs[j], c));
                        }
                    }
                    out
                }
                1 | 3 => subs.windows(2).map(|w| (w[0], w[1])).collect(),
                _ => Vec::new(),
            },
            TaskState::Path { nodes } => {
                if slot == 0 {
                    nodes.windows(2).map(|w| (w[0], w[1])).collect()
                } else {
                    Vec::new()
                }
            }
        }
    }
}

/// Splits the center cluster into a chain of sub-nodes, sub-node `j` taking
/// the edges toward children `2j` and `2j+1` of `half`. Surplus sites stay on
/// the lowest-index piece (the one keeping the center's token). Returns the
/// sub-node tokens in chain order; the center's token is first.
fn split_center_chain(
    ws: &mut Workspace,
    center: usize,
    half: &[usize],
) -> Result<Vec<usize>, ClusterError> {
    let assignments: Vec<Vec<usize>> = half.chunks(2).map(|c| c.to_vec()).collect();
    let s = assignments.len();
    let mut subs = vec![center];
    if s == 1 {
        return Ok(subs);
    }
    // chain degree per sub-node: ends 1, middles 2
    let chain_deg = |j: usize| if j == 0 || j + 1 == s { 1 } else { 2 };
    // peel from the far end toward the center token
    let mut prev_link_partner: Option<usize> = None;
    let mut peeled: Vec<usize> = Vec::new();
    for j in (1..s).rev() {
        let weight_j = assignments[j].len() + chain_deg(j);
        let mut move_edges: Vec<(usize, usize)> =
            assignments[j].iter().map(|&c| (center, c)).collect();
        if let Some(partner) = prev_link_partner {
            // hand the previously created link over so the chain stays a path
            move_edges.push((center, partner));
        }
        let tok = ws.split(center, weight_j, &move_edges, true)?;
        prev_link_partner = Some(tok);
        peeled.push(tok);
    }
    peeled.reverse();
    subs.extend(peeled);
    Ok(subs)
}

// ---------------------------------------------------------------------------
// Schedules

type Phase = Vec<TaskSpec>;

#[derive(Debug, Clone)]
enum TaskSpec {
    Star { center: usize, children: Vec<usize> },
    Path { nodes: Vec<usize> },
}

fn execute_phase(ws: &mut Workspace, phase: Phase) -> Result<(), ClusterError> {
    let mut tasks: Vec<TaskState> = phase
        .into_iter()
        .map(|spec| match spec {
            TaskSpec::Star { center, children } => TaskState::new_star(center, children),
            TaskSpec::Path { nodes } => TaskState::Path { nodes },
        })
        .collect();
    let max_slots = tasks.iter().map(TaskState::slots).max().unwrap_or(0);
    for slot in 0..max_slots {
        let mut edges = Vec::new();
        for task in tasks.iter_mut() {
            task.prepare(ws, slot)?;
            edges.extend(task.edges(slot));
        }
        ws.apply_layer(&edges)?;
    }
    Ok(())
}

struct SpanningTree {
    adj: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

/// Breadth-first spanning tree from node 0 with ascending neighbor order.
fn spanning_tree(g: &ClusterGraph) -> Result<SpanningTree, ClusterError> {
    if !g.is_connected() {
        return Err(ClusterError::NotConnected);
    }
    let n = g.num_nodes();
    let mut neighbor_sets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in g.edges() {
        if !neighbor_sets[a].contains(&b) {
            neighbor_sets[a].push(b);
        }
        if !neighbor_sets[b].contains(&a) {
            neighbor_sets[b].push(a);
        }
    }
    for set in neighbor_sets.iter_mut() {
        set.sort_unstable();
    }
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    visited[0] = true;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    while let Some(v) = queue.pop_front() {
        for &u in &neighbor_sets[v] {
            if !visited[u] {
                visited[u] = true;
                adj[v].push(u);
                adj[u].push(v);
                edges.push((v.min(u), v.max(u)));
                queue.push_back(u);
            }
        }
    }
    Ok(SpanningTree { adj, edges })
}

fn subtree_sizes(adj: &[Vec<usize>], root: usize, parent_of: &mut [usize]) -> Vec<usize> {
    let n = adj.len();
    let mut sizes = vec![1usize; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![root];
    parent_of[root] = usize::MAX;
    let mut seen = vec![false; n];
    seen[root] = true;
    while let Some(v) = stack.pop() {
        order.push(v);
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                parent_of[u] = v;
                stack.push(u);
            }
        }
    }
    for &v in order.iter().rev() {
        if parent_of[v] != usize::MAX {
            sizes[parent_of[v]] += sizes[v];
        }
    }
    sizes
}

/// Heavy path from `root` within its subtree: at each step, the child with
/// the largest subtree, ties to the lowest index.
fn heavy_path(adj: &[Vec<usize>], sizes: &[usize], parent_of: &[usize], root: usize) -> Vec<usize> {
    let mut path = vec![root];
    let mut cur = root;
    loop {
        let next = adj[cur]
            .iter()
            .copied()
            .filter(|&u| parent_of[u] == cur)
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)));
        match next {
            Some(u) => {
                path.push(u);
                cur = u;
            }
            None => return path,
        }
    }
}

/// Recursive halving schedule for the subtree rooted at `root`.
fn schedule_tree(
    adj: &[Vec<usize>],
    sizes: &[usize],
    parent_of: &[usize],
    root: usize,
) -> Vec<Phase> {
    let path = heavy_path(adj, sizes, parent_of, root);
    if path.len() < 2 {
        return Vec::new();
    }
    let mut phases: Vec<Phase> = Vec::new();
    let mut star_phase: Phase = Vec::new();
    for &p in &path {
        let off_path: Vec<usize> = adj[p]
            .iter()
            .copied()
            .filter(|&u| parent_of[u] == p && !path.contains(&u))
            .collect();
        for &c in &off_path {
            let sub = schedule_tree(adj, sizes, parent_of, c);
            for (i, ph) in sub.into_iter().enumerate() {
                if phases.len() <= i {
                    phases.push(Vec::new());
                }
                phases[i].extend(ph);
            }
        }
        if !off_path.is_empty() {
            star_phase.push(TaskSpec::Star { center: p, children: off_path });
        }
    }
    if !star_phase.is_empty() {
        phases.push(star_phase);
    }
    phases.push(vec![TaskSpec::Path { nodes: path }]);
    phases
}

/// Reduces a connected graph to one node via spanning-tree extraction and
/// recursive heavy-path halving. Layer count is at most
/// `2 * min(ceil(d/2), 6) * ceil(log2 N)` with `d` the maximum spanning-tree
/// degree and `N` the node count.
pub fn tree_decompose(g: &ClusterGraph) -> Result<LayerDecomposition, ClusterError> {
    let tree = spanning_tree(g)?;
    let mut ws = Workspace::new(g);
    let dropped = multiset_difference(g.edges(), &tree.edges);
    if !dropped.is_empty() {
        ws.drop_edges(dropped)?;
    }
    let n = g.num_nodes();
    if n > 1 {
        // a leaf root keeps every star's fan-out at most d - 2
        let root = (0..n).find(|&v| tree.adj[v].len() == 1).expect("tree has a leaf");
        let mut parent_of = vec![usize::MAX; n];
        let sizes = subtree_sizes(&tree.adj, root, &mut parent_of);
        let phases = schedule_tree(&tree.adj, &sizes, &parent_of, root);
        for phase in phases {
            execute_phase(&mut ws, phase)?;
        }
        debug_assert_eq!(ws.graph.num_nodes(), 1);
    }
    Ok(ws.finish(g.clone()))
}

/// One layer contracting every maximally-weighted path, then alternate-depth
/// star rounds. Layer count is at most `8 * ceil(log2 floor(log2(N+1))) + 2`.
pub fn loglog_decompose(g: &ClusterGraph) -> Result<LayerDecomposition, ClusterError> {
    let tree = spanning_tree(g)?;
    let mut ws = Workspace::new(g);
    let dropped = multiset_difference(g.edges(), &tree.edges);
    if !dropped.is_empty() {
        ws.drop_edges(dropped)?;
    }
    let n = g.num_nodes();
    if n > 1 {
        // deterministic root: the heaviest node, ties to the lowest index
        let root = (0..n)
            .max_by(|&a, &b| g.weights()[a].cmp(&g.weights()[b]).then(b.cmp(&a)))
            .expect("nonempty");
        let mut parent_of = vec![usize::MAX; n];
        let sizes = subtree_sizes(&tree.adj, root, &mut parent_of);
        let (path_edges, _) = heavy_path_cover(&tree.adj, &sizes, &parent_of, root);
        ws.apply_layer(&path_edges)?;

        // star rounds on the contracted tree until a single node remains
        let root_tok = root;
        while ws.graph.num_nodes() > 1 {
            let root_idx = ws.node_of(root_tok);
            let phase = star_round(&ws.graph, root_idx, &ws.node_tokens);
            debug_assert!(!phase.is_empty());
            execute_phase(&mut ws, phase)?;
        }
    }
    Ok(ws.finish(g.clone()))
}

/// All maximally-weighted paths of the rooted tree: the heavy path from the
/// root, then recursively from every off-path neighbor. Returns the union of
/// path edges (token pairs) and the list of paths.
fn heavy_path_cover(
    adj: &[Vec<usize>],
    sizes: &[usize],
    parent_of: &[usize],
    root: usize,
) -> (Vec<(usize, usize)>, Vec<Vec<usize>>) {
    let mut edges = Vec::new();
    let mut paths = Vec::new();
    let mut stack = vec![root];
    while let Some(r) = stack.pop() {
        let path = heavy_path(adj, sizes, parent_of, r);
        for w in path.windows(2) {
            edges.push((w[0], w[1]));
        }
        for &p in &path {
            for &u in &adj[p] {
                if parent_of[u] == p && !path.contains(&u) {
                    stack.push(u);
                }
            }
        }
        paths.push(path);
    }
    (edges, paths)
}

/// Star tasks absorbing the children of every even-depth node of the current
/// contracted tree.
fn star_round(g: &ClusterGraph, root_idx: usize, node_tokens: &[usize]) -> Phase {
    let n = g.num_nodes();
    let mut neighbor: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in g.edges() {
        neighbor[a].push(b);
        neighbor[b].push(a);
    }
    let mut depth = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::from([root_idx]);
    depth[root_idx] = 0;
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    while let Some(v) = queue.pop_front() {
        let mut next: Vec<usize> = neighbor[v]
            .iter()
            .copied()
            .filter(|&u| depth[u] == usize::MAX)
            .collect();
        next.sort_unstable();
        next.dedup();
        for u in next {
            depth[u] = depth[v] + 1;
            children[v].push(u);
            queue.push_back(u);
        }
    }
    let mut phase = Vec::new();
    for v in 0..n {
        if depth[v] % 2 == 0 && !children[v].is_empty() {
            phase.push(TaskSpec::Star {
                center: node_tokens[v],
                children: children[v].iter().map(|&u| node_tokens[u]).collect(),
            });
        }
    }
    phase
}

/// The first loglog layer in isolation: contracts all maximally-weighted
/// paths and returns the resulting tree, for inspecting the height bound.
pub fn heavy_path_contraction(
    g: &ClusterGraph,
    root: usize,
) -> Result<(Vec<(usize, usize)>, ClusterGraph), ClusterError> {
    let tree = spanning_tree(g)?;
    let mut parent_of = vec![usize::MAX; g.num_nodes()];
    let sizes = subtree_sizes(&tree.adj, root, &mut parent_of);
    let (edges, _) = heavy_path_cover(&tree.adj, &sizes, &parent_of, root);
    let pairs: Vec<(usize, usize)> = edges
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    let (contracted, _) = g.contract(&pairs)?;
    Ok((pairs, contracted))
}

fn multiset_difference(
    all: &[(usize, usize)],
    keep: &[(usize, usize)],
) -> Vec<(usize, usize)> {
    let mut pool = keep.to_vec();
    all.iter()
        .copied()
        .filter(|e| {
            if let Some(i) = pool.iter().position(|k| k == e) {
                pool.swap_remove(i);
                false
            } else {
                true
            }
        })
        .collect()
}

/// Ceiling of log2, with `ceil_log2(1) = 0`.
pub fn ceil_log2(n: usize) -> usize {
    assert!(n > 0);
    if n == 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// Floor of log2.
pub fn floor_log2(n: usize) -> usize {
    assert!(n > 0);
    usize::BITS as usize - 1 - n.leading_zeros() as usize
}

/// Layer ceiling for [`tree_decompose`].
pub fn tree_layer_bound(num_nodes: usize, max_degree: usize) -> usize {
    if num_nodes <= 1 {
        return 0;
    }
    2 * (max_degree.div_ceil(2)).min(6) * ceil_log2(num_nodes)
}

/// Layer ceiling for [`loglog_decompose`].
pub fn loglog_layer_bound(num_nodes: usize) -> usize {
    let inner = floor_log2(num_nodes + 1).max(1);
    8 * ceil_log2(inner) + 2
}
