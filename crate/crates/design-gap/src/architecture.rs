//! Layered gate layouts: the data model, JSON parsing, generators, and the
//! connected-block combinatorics that every depth bound consumes.
//!
//! An architecture fixes where gates sit; the gate contents are always fresh
//! Haar-random unitaries, so only the layout is stored. Gates are site lists
//! of length >= 2 so that downstream spectral code can realize multi-site
//! averaged gates; completeness checks enforce the two-site case.

use crate::dsu::DisjointSets;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("architecture JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("need at least 2 sites, got {0}")]
    TooFewSites(usize),
    #[error("local dimension must exceed 1, got {0}")]
    InvalidLocalDim(f64),
    #[error("layer {layer}, gate {gate}: site {site} out of range 0..{num_sites}")]
    SiteOutOfRange { layer: usize, gate: usize, site: usize, num_sites: usize },
    #[error("layer {layer}, gate {gate}: gate must list at least 2 sites")]
    GateTooSmall { layer: usize, gate: usize },
    #[error("layer {layer}, gate {gate}: duplicate site {site} within one gate")]
    DuplicateSite { layer: usize, gate: usize, site: usize },
    #[error("layer {layer}: site {site} is touched by more than one gate")]
    OverlappingGates { layer: usize, site: usize },
    #[error("periodic depth {depth} does not tile the {layers} layers")]
    BadPeriodicDepth { depth: usize, layers: usize },
    #[error("layer index {0} out of range")]
    LayerOutOfRange(usize),
    #[error("{0}")]
    InvalidGeneratorInput(String),
    #[error("interaction graph has no edges")]
    EmptyEdgeSet,
    #[error("block [{start}, {end}] is not connected over all sites")]
    BlockNotConnected { start: usize, end: usize },
    #[error("block boundaries must be disjoint and ascending")]
    BadBoundaries,
}

/// One gate: the sites it acts on.
pub type Gate = Vec<usize>;

/// A layer of gates on pairwise-disjoint site sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Layer {
    pub gates: Vec<Gate>,
}

impl Layer {
    pub fn new(gates: Vec<Gate>) -> Self {
        Self { gates }
    }

    /// True iff every site in `0..num_sites` is covered by exactly one gate
    /// and every gate is two-site.
    pub fn is_complete(&self, num_sites: usize) -> bool {
        let mut covered = vec![false; num_sites];
        for gate in &self.gates {
            if gate.len() != 2 {
                return false;
            }
            for &s in gate {
                if s >= num_sites || covered[s] {
                    return false;
                }
                covered[s] = true;
            }
        }
        covered.into_iter().all(|c| c)
    }
}

/// A fixed arrangement of Haar-random gates over `num_sites` sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    #[serde(rename = "N")]
    pub num_sites: usize,
    pub q: f64,
    pub periodic_depth: Option<usize>,
    pub layers: Vec<Layer>,
}

impl Architecture {
    pub fn new(num_sites: usize, q: f64, layers: Vec<Layer>) -> Result<Self, ArchError> {
        let arch = Self { num_sites, q, periodic_depth: None, layers };
        arch.validate()?;
        Ok(arch)
    }

    pub fn parse(text: &str) -> Result<Self, ArchError> {
        let arch: Architecture = serde_json::from_str(text)?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.num_sites < 2 {
            return Err(ArchError::TooFewSites(self.num_sites));
        }
        if !(self.q > 1.0) {
            return Err(ArchError::InvalidLocalDim(self.q));
        }
        for (li, layer) in self.layers.iter().enumerate() {
            let mut covered = vec![false; self.num_sites];
            for (gi, gate) in layer.gates.iter().enumerate() {
                if gate.len() < 2 {
                    return Err(ArchError::GateTooSmall { layer: li, gate: gi });
                }
                let mut in_gate = vec![false; self.num_sites];
                for &site in gate {
                    if site >= self.num_sites {
                        return Err(ArchError::SiteOutOfRange {
                            layer: li,
                            gate: gi,
                            site,
                            num_sites: self.num_sites,
                        });
                    }
                    if in_gate[site] {
                        return Err(ArchError::DuplicateSite { layer: li, gate: gi, site });
                    }
                    in_gate[site] = true;
                    if covered[site] {
                        return Err(ArchError::OverlappingGates { layer: li, site });
                    }
                    covered[site] = true;
                }
            }
        }
        if let Some(depth) = self.periodic_depth {
            if depth == 0 || self.layers.len() % depth != 0 {
                return Err(ArchError::BadPeriodicDepth { depth, layers: self.layers.len() });
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Repeats the layer list `times` times, keeping `periodic_depth`.
    pub fn repeat(&self, times: usize) -> Self {
        let mut layers = Vec::with_capacity(self.layers.len() * times);
        for _ in 0..times {
            layers.extend(self.layers.iter().cloned());
        }
        Self {
            num_sites: self.num_sites,
            q: self.q,
            periodic_depth: self.periodic_depth,
            layers,
        }
    }

    /// True iff the gates in layers `start..=end` form one connected
    /// component spanning all sites.
    pub fn is_connected_block(&self, start: usize, end: usize) -> bool {
        if start > end || end >= self.layers.len() {
            return false;
        }
        let mut dsu = DisjointSets::new(self.num_sites);
        for layer in &self.layers[start..=end] {
            for gate in &layer.gates {
                for pair in gate.windows(2) {
                    dsu.union(pair[0], pair[1]);
                }
            }
        }
        dsu.components() == 1
    }

    /// True iff every layer in `0..len` (or the stated period) is complete.
    pub fn all_layers_complete(&self) -> bool {
        self.layers.iter().all(|l| l.is_complete(self.num_sites))
    }

    /// Greedy earliest-close decomposition into connected blocks.
    ///
    /// Scans left to right, closing a block at the first layer where the
    /// accumulated union graph connects all sites. Layers after the last
    /// complete block land in the trailing interstitial range. When
    /// `count_merging_only` is set, a block's counted size only includes
    /// layers that merged at least two distinct clusters at the time they
    /// were applied.
    pub fn greedy_blocks(&self, count_merging_only: bool) -> BlockDecomposition {
        let mut blocks = Vec::new();
        let mut start = 0;
        let mut dsu = DisjointSets::new(self.num_sites);
        let mut merging_layers = 0usize;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut merged_any = false;
            for gate in &layer.gates {
                for pair in gate.windows(2) {
                    if dsu.union(pair[0], pair[1]) {
                        merged_any = true;
                    }
                }
            }
            if merged_any {
                merging_layers += 1;
            }
            if dsu.components() == 1 {
                let counted = if count_merging_only { merging_layers } else { li - start + 1 };
                blocks.push(Block { start, end: li, counted_size: counted });
                start = li + 1;
                dsu = DisjointSets::new(self.num_sites);
                merging_layers = 0;
            }
        }
        let interstitial = if start < self.layers.len() {
            vec![(start, self.layers.len() - 1)]
        } else {
            Vec::new()
        };
        BlockDecomposition::assemble(blocks, interstitial)
    }

    /// Decomposition with caller-supplied block boundaries (inclusive layer
    /// ranges). Each block must be connected; gaps become interstitials.
    pub fn blocks_from_boundaries(
        &self,
        boundaries: &[(usize, usize)],
        count_merging_only: bool,
    ) -> Result<BlockDecomposition, ArchError> {
        let mut blocks = Vec::new();
        let mut interstitial = Vec::new();
        let mut cursor = 0usize;
        for &(start, end) in boundaries {
            if start < cursor || end < start {
                return Err(ArchError::BadBoundaries);
            }
            if end >= self.layers.len() {
                return Err(ArchError::LayerOutOfRange(end));
            }
            if !self.is_connected_block(start, end) {
                return Err(ArchError::BlockNotConnected { start, end });
            }
            if start > cursor {
                interstitial.push((cursor, start - 1));
            }
            let counted = if count_merging_only {
                let mut dsu = DisjointSets::new(self.num_sites);
                let mut merging = 0;
                for layer in &self.layers[start..=end] {
                    let mut merged_any = false;
                    for gate in &layer.gates {
                        for pair in gate.windows(2) {
                            if dsu.union(pair[0], pair[1]) {
                                merged_any = true;
                            }
                        }
                    }
                    if merged_any {
                        merging += 1;
                    }
                }
                merging
            } else {
                end - start + 1
            };
            blocks.push(Block { start, end, counted_size: counted });
            cursor = end + 1;
        }
        if cursor < self.layers.len() {
            interstitial.push((cursor, self.layers.len() - 1));
        }
        Ok(BlockDecomposition::assemble(blocks, interstitial))
    }
}

/// A connected block of contiguous layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub end: usize,
    /// Block size for the depth bounds; equals the layer count unless
    /// merging-only counting was requested.
    pub counted_size: usize,
}

/// Partition of the layer list into connected blocks and interstitials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub blocks: Vec<Block>,
    /// Inclusive layer ranges not belonging to any block.
    pub interstitial: Vec<(usize, usize)>,
    pub k: usize,
    /// Mean counted block size; absent when no block ever closed.
    pub mean_block_size: Option<f64>,
}

impl BlockDecomposition {
    fn assemble(blocks: Vec<Block>, interstitial: Vec<(usize, usize)>) -> Self {
        let k = blocks.len();
        let mean_block_size = if k == 0 {
            None
        } else {
            Some(blocks.iter().map(|b| b.counted_size as f64).sum::<f64>() / k as f64)
        };
        Self { blocks, interstitial, k, mean_block_size }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.counted_size).collect()
    }
}

/// Spatial boundary condition for brickwork generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Periodic,
    Open,
}

/// The two-layer 1D brickwork: layer A pairs `(2j, 2j+1)`, layer B pairs
/// `(2j+1, 2j+2)` with an optional wrap-around gate.
pub fn brickwork_1d(num_sites: usize, q: f64, boundary: Boundary) -> Result<Architecture, ArchError> {
    if num_sites < 2 {
        return Err(ArchError::TooFewSites(num_sites));
    }
    if boundary == Boundary::Periodic && num_sites % 2 != 0 {
        return Err(ArchError::InvalidGeneratorInput(format!(
            "periodic brickwork needs an even site count, got {num_sites}"
        )));
    }
    let mut layer_a = Vec::new();
    let mut j = 0;
    while 2 * j + 1 < num_sites {
        layer_a.push(vec![2 * j, 2 * j + 1]);
        j += 1;
    }
    let mut layer_b = Vec::new();
    let mut j = 1;
    while 2 * j < num_sites {
        layer_b.push(vec![2 * j - 1, 2 * j]);
        j += 1;
    }
    if boundary == Boundary::Periodic {
        layer_b.push(vec![num_sites - 1, 0]);
    }
    let mut arch = Architecture::new(num_sites, q, vec![Layer::new(layer_a), Layer::new(layer_b)])?;
    arch.periodic_depth = Some(2);
    Ok(arch)
}

/// D-dimensional periodic brickwork on an `L^D` torus: for each axis, one
/// layer pairing even coordinates forward and later one pairing odd
/// coordinates forward, everything mod `L`.
pub fn brickwork_ddim(side: usize, dims: usize, q: f64) -> Result<Architecture, ArchError> {
    if side < 2 || side % 2 != 0 {
        return Err(ArchError::InvalidGeneratorInput(format!(
            "side length must be even and at least 2, got {side}"
        )));
    }
    if dims == 0 {
        return Err(ArchError::InvalidGeneratorInput("need at least one dimension".into()));
    }
    let num_sites = side.checked_pow(dims as u32).ok_or_else(|| {
        ArchError::InvalidGeneratorInput("lattice too large".into())
    })?;
    let to_index = |coords: &[usize]| -> usize {
        coords.iter().fold(0, |acc, &c| acc * side + c)
    };
    let mut layers = Vec::with_capacity(2 * dims);
    for parity in [0usize, 1] {
        for axis in 0..dims {
            let mut gates = Vec::new();
            let mut coords = vec![0usize; dims];
            loop {
                if coords[axis] % 2 == parity {
                    let mut partner = coords.clone();
                    partner[axis] = (partner[axis] + 1) % side;
                    gates.push(vec![to_index(&coords), to_index(&partner)]);
                }
                // odometer increment
                let mut d = dims;
                loop {
                    if d == 0 {
                        break;
                    }
                    d -= 1;
                    coords[d] += 1;
                    if coords[d] < side {
                        break;
                    }
                    coords[d] = 0;
                }
                if coords.iter().all(|&c| c == 0) {
                    break;
                }
            }
            layers.push(Layer::new(gates));
        }
    }
    let mut arch = Architecture::new(num_sites, q, layers)?;
    arch.periodic_depth = Some(2 * dims);
    Ok(arch)
}

/// Random architecture of complete layers (uniform perfect matchings),
/// resampled until the whole layer range is connected.
pub fn random_connected<R: Rng>(
    num_sites: usize,
    q: f64,
    num_layers: usize,
    rng: &mut R,
) -> Result<Architecture, ArchError> {
    if num_sites < 2 || num_sites % 2 != 0 {
        return Err(ArchError::InvalidGeneratorInput(format!(
            "complete layers need an even site count of at least 2, got {num_sites}"
        )));
    }
    if num_layers == 0 {
        return Err(ArchError::InvalidGeneratorInput("need at least one layer".into()));
    }
    for _ in 0..10_000 {
        let layers: Vec<Layer> = (0..num_layers)
            .map(|_| {
                let mut sites: Vec<usize> = (0..num_sites).collect();
                // Fisher-Yates, then pair consecutive entries.
                for i in (1..sites.len()).rev() {
                    let j = rng.random_range(0..=i);
                    sites.swap(i, j);
                }
                Layer::new(sites.chunks(2).map(|c| vec![c[0], c[1]]).collect())
            })
            .collect();
        let arch = Architecture::new(num_sites, q, layers)?;
        if arch.is_connected_block(0, num_layers - 1) {
            return Ok(arch);
        }
    }
    Err(ArchError::InvalidGeneratorInput(
        "failed to sample a connected architecture".into(),
    ))
}

/// A plain interaction graph over sites; the edge set from which
/// nondeterministic ensembles draw gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionGraph {
    pub num_sites: usize,
    pub edges: Vec<(usize, usize)>,
}

impl InteractionGraph {
    pub fn from_edges(num_sites: usize, edges: Vec<(usize, usize)>) -> Result<Self, ArchError> {
        for &(a, b) in &edges {
            if a >= num_sites || b >= num_sites || a == b {
                return Err(ArchError::InvalidGeneratorInput(format!(
                    "bad edge ({a}, {b}) on {num_sites} sites"
                )));
            }
        }
        Ok(Self { num_sites, edges })
    }

    pub fn path(num_sites: usize) -> Self {
        Self {
            num_sites,
            edges: (0..num_sites.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        }
    }

    pub fn cycle(num_sites: usize) -> Self {
        let mut g = Self::path(num_sites);
        if num_sites > 2 {
            g.edges.push((num_sites - 1, 0));
        }
        g
    }

    pub fn complete(num_sites: usize) -> Self {
        let mut edges = Vec::new();
        for a in 0..num_sites {
            for b in (a + 1)..num_sites {
                edges.push((a, b));
            }
        }
        Self { num_sites, edges }
    }

    pub fn is_connected(&self) -> bool {
        if self.num_sites == 0 {
            return false;
        }
        let mut dsu = DisjointSets::new(self.num_sites);
        for &(a, b) in &self.edges {
            dsu.union(a, b);
        }
        dsu.components() == 1
    }
}

/// Draws `n_gates` single-gate layers with edges i.i.d. uniform over the
/// graph's edge set.
pub fn sample_gate_sequence<R: Rng>(
    graph: &InteractionGraph,
    q: f64,
    n_gates: usize,
    rng: &mut R,
) -> Result<Architecture, ArchError> {
    if graph.edges.is_empty() {
        return Err(ArchError::EmptyEdgeSet);
    }
    if n_gates == 0 {
        return Err(ArchError::InvalidGeneratorInput("need at least one gate".into()));
    }
    let layers = (0..n_gates)
        .map(|_| {
            let (a, b) = graph.edges[rng.random_range(0..graph.edges.len())];
            Layer::new(vec![vec![a, b]])
        })
        .collect();
    Architecture::new(graph.num_sites, q, layers)
}
