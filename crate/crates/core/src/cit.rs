//! Coded interleaving tree: a Merkle-like commitment in which every layer is
//! erasure coded and child hashes are interleaved across parent symbols.
//!
//! Layers are numbered `1..=depth` from the root (layer 1, `t` symbols) down
//! to the base (layer `depth`, `c`-byte symbols). Every symbol above the base
//! is a 32-byte value. The parent of child `x` at layer `j` is
//! `x mod (m_j / q)`; each parent systematic symbol is the hash of the
//! concatenated hashes of its `q` children in ascending child order.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{cached_gated_code, xor_into, CodeGate, CodeSpec, CodecError, Rate, Symbol};

/// Digest size in bytes.
pub const HASH_SIZE: usize = 32;

pub type Digest = [u8; HASH_SIZE];

pub fn hash_bytes(data: &[u8]) -> Digest {
    Sha256::digest(data).into()
}

/// Hash of the concatenation of `children`, in the given order.
pub fn aggregate<'a>(children: impl IntoIterator<Item = &'a Digest>) -> Digest {
    let mut hasher = Sha256::new();
    for child in children {
        hasher.update(child);
    }
    hasher.finalize().into()
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CitError {
    #[error("invalid tree parameters: {0}")]
    Parameter(String),
    #[error("index {index} out of range for layer of {len} symbols")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

fn default_gate_trials() -> u32 {
    100
}

fn default_max_regenerations() -> u32 {
    16
}

/// Tree parameters. The digest size is fixed at [`HASH_SIZE`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Base symbol size in bytes.
    pub c: usize,
    /// Number of root symbols.
    pub t: usize,
    pub r: Rate,
    /// Aggregation batch size.
    pub q: usize,
    /// Maximum parity equation degree.
    pub d: usize,
    /// Undecodable ratio every layer code must reach.
    pub alpha: f64,
    #[serde(default)]
    pub code_seed: u64,
    /// Monte-Carlo trials for the undecodable-ratio gate; zero disables it.
    #[serde(default = "default_gate_trials")]
    pub gate_trials: u32,
    #[serde(default = "default_max_regenerations")]
    pub max_regenerations: u32,
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), CitError> {
        let inv = self.r.inverse();
        if self.c == 0 {
            return Err(CitError::Parameter("symbol size c must be positive".into()));
        }
        if self.t == 0 {
            return Err(CitError::Parameter("root size t must be positive".into()));
        }
        if self.q < 2 {
            return Err(CitError::Parameter(format!("batch size q={} < 2", self.q)));
        }
        if inv < 2 {
            return Err(CitError::Parameter(format!(
                "coding ratio {} must be below one",
                self.r
            )));
        }
        if self.q % inv != 0 || self.q / inv < 2 {
            return Err(CitError::Parameter(format!(
                "q*r = {}/{} must be an integer of at least 2",
                self.q, inv
            )));
        }
        if self.d < 2 {
            return Err(CitError::Parameter(format!("equation degree d={} < 2", self.d)));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(CitError::Parameter(format!("alpha={} outside [0, 1)", self.alpha)));
        }
        Ok(())
    }

    /// Layer sizes for a block of `block_len` bytes.
    pub fn geometry(&self, block_len: u64) -> Result<Geometry, CitError> {
        self.validate()?;
        let s = usize::try_from(block_len.div_ceil(self.c as u64))
            .map_err(|_| CitError::Parameter("block too large".into()))?
            .max(1);
        Geometry::from_base(s * self.r.inverse(), self.t, self.q, self.r)
    }

    pub fn gate(&self) -> CodeGate {
        CodeGate {
            alpha_target: self.alpha,
            trials: self.gate_trials,
            max_attempts: self.max_regenerations.saturating_add(1),
        }
    }

    /// The (gated) code used at `layer` of `geometry`.
    pub fn layer_code(&self, geometry: &Geometry, layer: usize) -> Result<CodeSpec, CitError> {
        let k = geometry.size(layer) / self.r.inverse();
        let seed = layer_seed(self.code_seed, layer);
        Ok(cached_gated_code(k, self.r, self.d, seed, &self.gate())?)
    }

    pub fn layer_codes(&self, geometry: &Geometry) -> Result<Vec<CodeSpec>, CitError> {
        (1..=geometry.depth())
            .map(|j| self.layer_code(geometry, j))
            .collect()
    }
}

fn layer_seed(code_seed: u64, layer: usize) -> u64 {
    code_seed ^ (layer as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Layer sizes, root first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    sizes: Vec<usize>,
    q: usize,
    r: Rate,
}

impl Geometry {
    /// Walks `m_{j-1} = m_j / (q r)` from the base size down to `t`.
    pub fn from_base(base_size: usize, t: usize, q: usize, r: Rate) -> Result<Self, CitError> {
        let shrink = q / r.inverse();
        let mut sizes = vec![base_size];
        let mut m = base_size;
        while m > t {
            if m % q != 0 {
                return Err(CitError::Parameter(format!(
                    "layer of {m} symbols cannot be split into batches of {q}"
                )));
            }
            m /= shrink;
            sizes.push(m);
        }
        if m != t {
            return Err(CitError::Parameter(format!(
                "layer sizes from {base_size} by factor {shrink} never reach root size {t}"
            )));
        }
        if sizes.len() < 2 {
            return Err(CitError::Parameter(format!(
                "base layer of {base_size} symbols is no larger than the root"
            )));
        }
        sizes.reverse();
        Ok(Self { sizes, q, r })
    }

    /// Number of layers (the base layer index).
    pub fn depth(&self) -> usize {
        self.sizes.len()
    }

    /// Size of `layer` (1-based, root is 1).
    pub fn size(&self, layer: usize) -> usize {
        self.sizes[layer - 1]
    }

    /// Sizes root first.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Sizes base first, without the root layer.
    pub fn sampled_sizes(&self) -> Vec<usize> {
        self.sizes[1..].iter().rev().copied().collect()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn rate(&self) -> Rate {
        self.r
    }

    pub fn systematic(&self, layer: usize) -> usize {
        self.size(layer) / self.r.inverse()
    }

    /// Distance between children of the same parent at `layer >= 2`.
    pub fn stride(&self, layer: usize) -> usize {
        self.size(layer) / self.q
    }

    pub fn parent(&self, layer: usize, x: usize) -> usize {
        x % self.stride(layer)
    }

    /// Position of `x` among its parent's children.
    pub fn slot(&self, layer: usize, x: usize) -> usize {
        x / self.stride(layer)
    }

    /// Children of `parent` (a layer `layer - 1` index) in slot order.
    pub fn children(&self, layer: usize, parent: usize) -> impl Iterator<Item = usize> {
        let stride = self.stride(layer);
        (0..self.q).map(move |s| parent + s * stride)
    }

    pub fn symbol_len(&self, layer: usize, c: usize) -> usize {
        if layer == self.depth() {
            c
        } else {
            HASH_SIZE
        }
    }
}

/// `(p, e)` sampled at a layer of `m` symbols for base index `i`.
pub fn sampled_pair(i: usize, m: usize, r: Rate) -> (usize, usize) {
    let s = m / r.inverse();
    (i % s, s + i % (m - s))
}

/// Sampled index pairs for every layer in `layer_sizes` after the first.
///
/// `layer_sizes` lists the base layer first and excludes the root, e.g.
/// `[32, 16, 8]` for a base of 32 symbols.
pub fn pom_indices(i: usize, layer_sizes: &[usize], r: Rate) -> Vec<(usize, usize)> {
    layer_sizes
        .iter()
        .skip(1)
        .map(|&m| sampled_pair(i, m, r))
        .collect()
}

/// Per-layer index sets reached by the given base indices: the base set
/// itself, then the union of sampled pairs at each following layer.
pub fn project_base_to_layer(
    base_indices: &BTreeSet<usize>,
    layer_sizes: &[usize],
    r: Rate,
) -> Vec<BTreeSet<usize>> {
    let mut out = vec![base_indices.clone()];
    for &m in layer_sizes.iter().skip(1) {
        let mut w = BTreeSet::new();
        for &i in base_indices {
            let (p, e) = sampled_pair(i, m, r);
            w.insert(p);
            w.insert(e);
        }
        out.push(w);
    }
    out
}

/// The root symbols of a tree together with the data needed to re-derive
/// its geometry and codes.
#[derive(Clone, Debug, PartialEq)]
pub struct Commitment {
    pub root: Vec<Digest>,
    pub params: TreeParams,
    pub block_len: u64,
}

impl Commitment {
    pub fn geometry(&self) -> Result<Geometry, CitError> {
        let g = self.params.geometry(self.block_len)?;
        if g.size(1) != self.root.len() {
            return Err(CitError::Parameter(format!(
                "commitment has {} root symbols, expected {}",
                self.root.len(),
                g.size(1)
            )));
        }
        Ok(g)
    }

    /// Checks a Merkle path from a symbol hash at `layer`/`index` to the root.
    pub fn verify_path(
        &self,
        geometry: &Geometry,
        layer: usize,
        index: usize,
        leaf: Digest,
        path: &MerklePath,
    ) -> bool {
        if layer == 0 || layer > geometry.depth() || index >= geometry.size(layer) {
            return false;
        }
        if path.hops.len() != layer - 1 {
            return false;
        }
        if layer == 1 {
            return hash_bytes(&self.root[index]) == leaf;
        }
        let mut h = leaf;
        let mut x = index;
        for (hop, l) in path.hops.iter().zip((2..=layer).rev()) {
            let Some(v) = climb_hop(geometry, l, x, h, hop) else {
                return false;
            };
            x = geometry.parent(l, x);
            if l == 2 {
                return v == self.root[x];
            }
            h = hash_bytes(&v);
        }
        unreachable!("loop returns at layer 2")
    }
}

/// Parent value from a child hash at `slot(layer, x)` plus its siblings.
fn climb_hop(
    geometry: &Geometry,
    layer: usize,
    x: usize,
    child: Digest,
    siblings: &[Digest],
) -> Option<Digest> {
    if siblings.len() != geometry.q() - 1 {
        return None;
    }
    let slot = geometry.slot(layer, x);
    let mut group: Vec<&Digest> = siblings.iter().collect();
    group.insert(slot, &child);
    Some(aggregate(group))
}

/// Sibling hashes from a symbol up to the root, one hop per layer.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MerklePath {
    /// `hops[0]` holds the `q - 1` siblings at the symbol's own layer.
    pub hops: Vec<Vec<Digest>>,
}

impl MerklePath {
    /// Builds a path from `layer`/`index` using `hash_at(layer, index)`.
    pub fn build(
        geometry: &Geometry,
        layer: usize,
        index: usize,
        mut hash_at: impl FnMut(usize, usize) -> Option<Digest>,
    ) -> Option<Self> {
        let mut hops = Vec::with_capacity(layer.saturating_sub(1));
        let mut x = index;
        for l in (2..=layer).rev() {
            let parent = geometry.parent(l, x);
            let hop = geometry
                .children(l, parent)
                .filter(|&y| y != x)
                .map(|y| hash_at(l, y))
                .collect::<Option<Vec<_>>>()?;
            hops.push(hop);
            x = parent;
        }
        Some(Self { hops })
    }
}

/// The `(p, e)` symbols sampled at one intermediate layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledPair {
    pub p: usize,
    pub p_symbol: Symbol,
    pub e: usize,
    pub e_symbol: Symbol,
}

/// Binds a base symbol to a commitment.
///
/// `siblings[h]` holds the `q - 1` hashes needed to climb from layer
/// `depth - h` to its parent; `pairs[h]` is the sampled pair at layer
/// `depth - 1 - h`. Because `p` and `e` share a parent, the same hop that
/// authenticates `p` also carries the hash of `e`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProofOfMembership {
    pub base_index: usize,
    pub base_symbol: Symbol,
    pub pairs: Vec<SampledPair>,
    pub siblings: Vec<Vec<Digest>>,
    pub block_len: u64,
}

impl ProofOfMembership {
    /// Every `(layer, index, value)` this proof authenticates, base first.
    pub fn symbols(&self, geometry: &Geometry) -> Vec<(usize, usize, &Symbol)> {
        let depth = geometry.depth();
        let mut out = vec![(depth, self.base_index, &self.base_symbol)];
        for (h, pair) in self.pairs.iter().enumerate() {
            let layer = depth - 1 - h;
            out.push((layer, pair.p, &pair.p_symbol));
            out.push((layer, pair.e, &pair.e_symbol));
        }
        out
    }

    /// Child hashes of each group this proof climbs through:
    /// `(layer, parent index, [hash per slot])`.
    pub fn covered_groups(&self, geometry: &Geometry) -> Vec<(usize, usize, Vec<Digest>)> {
        let depth = geometry.depth();
        let mut x = self.base_index;
        let mut h = hash_bytes(&self.base_symbol);
        let mut out = Vec::with_capacity(self.siblings.len());
        for (hop, layer) in self.siblings.iter().zip((2..=depth).rev()) {
            let slot = geometry.slot(layer, x);
            let mut group = hop.clone();
            group.insert(slot, h);
            let parent = geometry.parent(layer, x);
            out.push((layer, parent, group));
            if let Some(pair) = self.pairs.get(depth - layer) {
                h = hash_bytes(&pair.p_symbol);
            }
            x = parent;
        }
        out
    }
}

/// A corruption injected while building a tree, for adversarial tests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tamper {
    pub layer: usize,
    pub index: usize,
    /// XORed into the leading bytes of the symbol.
    pub mask: Vec<u8>,
}

#[derive(Clone, Debug)]
struct Layer {
    symbols: Vec<Symbol>,
    hashes: Vec<Digest>,
    code: CodeSpec,
}

#[derive(Clone, Debug)]
pub struct CodedTree {
    geometry: Geometry,
    layers: Vec<Layer>,
    commitment: Commitment,
}

pub fn build_tree(block: &[u8], params: &TreeParams) -> Result<CodedTree, CitError> {
    build_tree_with_tamper(block, params, None)
}

/// Builds a tree, optionally corrupting one coded symbol right after its
/// layer is encoded. Everything above is then hashed from the corrupted
/// layer, so the result is an internally consistent commitment to data that
/// violates the code.
pub fn build_tree_with_tamper(
    block: &[u8],
    params: &TreeParams,
    tamper: Option<&Tamper>,
) -> Result<CodedTree, CitError> {
    let block_len = block.len() as u64;
    let geometry = params.geometry(block_len)?;
    let depth = geometry.depth();
    if let Some(t) = tamper {
        if t.layer == 0 || t.layer > depth || t.index >= geometry.size(t.layer) {
            return Err(CitError::IndexOutOfRange {
                index: t.index,
                len: t.layer.checked_sub(1).map_or(0, |l| {
                    geometry.sizes().get(l).copied().unwrap_or(0)
                }),
            });
        }
    }

    let base_k = geometry.systematic(depth);
    let inputs: Vec<Symbol> = (0..base_k)
        .map(|s| {
            let mut sym = vec![0u8; params.c];
            let start = (s * params.c).min(block.len());
            let end = ((s + 1) * params.c).min(block.len());
            sym[..end - start].copy_from_slice(&block[start..end]);
            sym
        })
        .collect();

    let mut layers = Vec::with_capacity(depth);
    let mut inputs = inputs;
    for layer in (1..=depth).rev() {
        let code = params.layer_code(&geometry, layer)?;
        let mut symbols = code.encode(&inputs)?;
        if let Some(t) = tamper.filter(|t| t.layer == layer) {
            let sym = &mut symbols[t.index];
            let n = t.mask.len().min(sym.len());
            xor_into(&mut sym[..n], &t.mask[..n]);
        }
        let hashes: Vec<Digest> = symbols.par_iter().map(|s| hash_bytes(s)).collect();
        if layer > 1 {
            let stride = geometry.stride(layer);
            inputs = (0..stride)
                .into_par_iter()
                .map(|k| aggregate(geometry.children(layer, k).map(|x| &hashes[x])).to_vec())
                .collect();
        }
        layers.push(Layer {
            symbols,
            hashes,
            code,
        });
    }
    layers.reverse();

    let root = layers[0]
        .symbols
        .iter()
        .map(|s| s.as_slice().try_into().expect("root symbols are digests"))
        .collect();
    let commitment = Commitment {
        root,
        params: params.clone(),
        block_len,
    };
    Ok(CodedTree {
        geometry,
        layers,
        commitment,
    })
}

impl CodedTree {
    pub fn commitment(&self) -> &Commitment {
        &self.commitment
    }

    pub fn params(&self) -> &TreeParams {
        &self.commitment.params
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn layer_sizes(&self) -> &[usize] {
        self.geometry.sizes()
    }

    pub fn depth(&self) -> usize {
        self.geometry.depth()
    }

    pub fn symbols(&self, layer: usize) -> &[Symbol] {
        &self.layers[layer - 1].symbols
    }

    pub fn hashes(&self, layer: usize) -> &[Digest] {
        &self.layers[layer - 1].hashes
    }

    pub fn code(&self, layer: usize) -> &CodeSpec {
        &self.layers[layer - 1].code
    }

    /// Number of base-layer symbols (the chunk count `M`).
    pub fn base_size(&self) -> usize {
        self.geometry.size(self.depth())
    }

    pub fn merkle_path(&self, layer: usize, index: usize) -> Result<MerklePath, CitError> {
        let len = self.geometry.size(layer);
        if index >= len {
            return Err(CitError::IndexOutOfRange { index, len });
        }
        Ok(
            MerklePath::build(&self.geometry, layer, index, |l, y| Some(self.hashes(l)[y]))
                .expect("full tree has every hash"),
        )
    }

    pub fn sample_pom(&self, i: usize) -> Result<ProofOfMembership, CitError> {
        let depth = self.depth();
        let base = self.base_size();
        if i >= base {
            return Err(CitError::IndexOutOfRange { index: i, len: base });
        }
        let pairs = (2..depth)
            .rev()
            .map(|layer| {
                let (p, e) = sampled_pair(i, self.geometry.size(layer), self.geometry.rate());
                SampledPair {
                    p,
                    p_symbol: self.symbols(layer)[p].clone(),
                    e,
                    e_symbol: self.symbols(layer)[e].clone(),
                }
            })
            .collect();
        Ok(ProofOfMembership {
            base_index: i,
            base_symbol: self.symbols(depth)[i].clone(),
            pairs,
            siblings: self.merkle_path(depth, i)?.hops,
            block_len: self.commitment.block_len,
        })
    }
}

/// Checks a proof of membership against a commitment.
pub fn verify_symbol(commitment: &Commitment, params: &TreeParams, pom: &ProofOfMembership) -> bool {
    if *params != commitment.params || pom.block_len != commitment.block_len {
        return false;
    }
    let Ok(geometry) = commitment.geometry() else {
        return false;
    };
    let depth = geometry.depth();
    let i = pom.base_index;
    if i >= geometry.size(depth)
        || pom.base_symbol.len() != params.c
        || pom.pairs.len() != depth - 2
        || pom.siblings.len() != depth - 1
    {
        return false;
    }

    let mut h = hash_bytes(&pom.base_symbol);
    let mut x = i;
    for (hop, layer) in pom.siblings.iter().zip((2..=depth).rev()) {
        let Some(v) = climb_hop(&geometry, layer, x, h, hop) else {
            return false;
        };
        x = geometry.parent(layer, x);
        let above = layer - 1;
        if above == 1 {
            return v == commitment.root[x];
        }
        let pair = &pom.pairs[depth - layer];
        let (p, e) = sampled_pair(i, geometry.size(above), geometry.rate());
        if pair.p != p || pair.e != e || x != p {
            return false;
        }
        if pair.p_symbol.as_slice() != v.as_slice() || pair.e_symbol.len() != HASH_SIZE {
            return false;
        }
        // `e` shares the parent of `p`; its hash sits in the next hop.
        let Some(next_hop) = pom.siblings.get(depth - above) else {
            return false;
        };
        let (sp, se) = (geometry.slot(above, p), geometry.slot(above, e));
        let pos = if se < sp { se } else { se - 1 };
        if next_hop.get(pos) != Some(&hash_bytes(&pair.e_symbol)) {
            return false;
        }
        h = hash_bytes(&v);
    }
    false
}
