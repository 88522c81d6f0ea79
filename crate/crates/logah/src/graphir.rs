//! Computational-graph IR: one node per learnable tensor plus structural ops,
//! edges along the forward dataflow. Graphs are immutable after construction.

use crate::archspace::{ArchSpec, GptSpec, ViTSpec};
use crate::{LogahError, Result};
use serde::{Deserialize, Serialize};

/// Closed, versioned operation vocabulary. Every learnable tensor maps to
/// exactly one tagged node; the rest are structural.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpType {
    TokenEmbedding,
    PositionalEmbedding,
    PatchProjection,
    QkvProjection,
    AttentionOutputProjection,
    MlpFc1,
    MlpFc2,
    LayerNormScale,
    LayerNormShift,
    Bias,
    ClassificationHead,
    LmHead,
    ResidualAdd,
    Softmax,
    Activation,
    Input,
    Output,
}

/// All vocabulary entries in one-hot index order.
pub const OP_VOCAB: [OpType; 17] = [
    OpType::TokenEmbedding,
    OpType::PositionalEmbedding,
    OpType::PatchProjection,
    OpType::QkvProjection,
    OpType::AttentionOutputProjection,
    OpType::MlpFc1,
    OpType::MlpFc2,
    OpType::LayerNormScale,
    OpType::LayerNormShift,
    OpType::Bias,
    OpType::ClassificationHead,
    OpType::LmHead,
    OpType::ResidualAdd,
    OpType::Softmax,
    OpType::Activation,
    OpType::Input,
    OpType::Output,
];

impl OpType {
    /// Position in the one-hot input vector.
    pub fn index(self) -> usize {
        OP_VOCAB.iter().position(|&o| o == self).expect("op in vocab")
    }

    /// True when the node carries a learnable tensor.
    pub fn is_learnable(self) -> bool {
        !matches!(
            self,
            OpType::ResidualAdd | OpType::Softmax | OpType::Activation | OpType::Input | OpType::Output
        )
    }
}

/// Target-tensor dimensionality the decoder realizes for an op.
/// `None` for structural nodes.
pub fn realize_ndim(op: OpType, shape: &[usize; 4]) -> Option<u8> {
    if !op.is_learnable() {
        return None;
    }
    Some(match op {
        OpType::Bias | OpType::LayerNormScale | OpType::LayerNormShift => 1,
        // class-token style vectors ride the positional tag with degenerate dims
        OpType::PositionalEmbedding if shape[1] == 1 && shape[2] == 1 && shape[3] == 1 => 1,
        OpType::TokenEmbedding
        | OpType::PositionalEmbedding
        | OpType::ClassificationHead
        | OpType::LmHead => 2,
        _ => 4,
    })
}

/// One graph node. `shape` is `(C_out, C_in, h, w)` for learnable tensors
/// (2-D weights fold `h = w = 1`, vectors `(C_out,1,1,1)`), all zeros for
/// structural ops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub op: OpType,
    pub shape: [usize; 4],
    pub name: String,
}

impl GraphNode {
    pub fn numel(&self) -> u64 {
        self.shape.iter().map(|&d| d as u64).product()
    }

    /// Folded matrix dims `(C_out*h, C_in*w)` the decoder slices for.
    pub fn folded_dims(&self) -> (usize, usize) {
        (self.shape[0] * self.shape[2], self.shape[1] * self.shape[3])
    }
}

/// Sentinel for unreachable node pairs in the distance matrix.
pub const UNREACHABLE: u32 = u32::MAX;

/// DAG of a target network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompGraph {
    pub id: usize,
    pub arch_ref: ArchSpec,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(usize, usize)>,
    /// Non-learnable buffers left at framework defaults.
    pub non_predicted: Vec<String>,
}

struct GraphBuilder {
    nodes: Vec<GraphNode>,
    edges: Vec<(usize, usize)>,
}

impl GraphBuilder {
    fn new() -> Self {
        Self { nodes: Vec::new(), edges: Vec::new() }
    }

    fn node(&mut self, op: OpType, shape: [usize; 4], name: &str) -> usize {
        let id = self.nodes.len();
        self.nodes.push(GraphNode { id, op, shape, name: name.to_string() });
        id
    }

    fn structural(&mut self, op: OpType, name: &str) -> usize {
        self.node(op, [0; 4], name)
    }

    fn edge(&mut self, src: usize, dst: usize) {
        self.edges.push((src, dst));
    }

    /// Append one pre-LN transformer block; returns its output node.
    fn block(&mut self, prev: usize, i: usize, d: usize, mlp: usize) -> usize {
        let p = format!("blocks.{i}");
        let ln1_s = self.node(OpType::LayerNormScale, [d, 1, 1, 1], &format!("{p}.ln1.weight"));
        let ln1_b = self.node(OpType::LayerNormShift, [d, 1, 1, 1], &format!("{p}.ln1.bias"));
        let qkv_w = self.node(OpType::QkvProjection, [3 * d, d, 1, 1], &format!("{p}.attn.qkv.weight"));
        let qkv_b = self.node(OpType::Bias, [3 * d, 1, 1, 1], &format!("{p}.attn.qkv.bias"));
        let smax = self.structural(OpType::Softmax, &format!("{p}.attn.softmax"));
        let proj_w = self.node(
            OpType::AttentionOutputProjection,
            [d, d, 1, 1],
            &format!("{p}.attn.proj.weight"),
        );
        let proj_b = self.node(OpType::Bias, [d, 1, 1, 1], &format!("{p}.attn.proj.bias"));
        let res1 = self.structural(OpType::ResidualAdd, &format!("{p}.residual1"));
        let ln2_s = self.node(OpType::LayerNormScale, [d, 1, 1, 1], &format!("{p}.ln2.weight"));
        let ln2_b = self.node(OpType::LayerNormShift, [d, 1, 1, 1], &format!("{p}.ln2.bias"));
        let fc1_w = self.node(OpType::MlpFc1, [mlp, d, 1, 1], &format!("{p}.mlp.fc1.weight"));
        let fc1_b = self.node(OpType::Bias, [mlp, 1, 1, 1], &format!("{p}.mlp.fc1.bias"));
        let act = self.structural(OpType::Activation, &format!("{p}.mlp.act"));
        let fc2_w = self.node(OpType::MlpFc2, [d, mlp, 1, 1], &format!("{p}.mlp.fc2.weight"));
        let fc2_b = self.node(OpType::Bias, [d, 1, 1, 1], &format!("{p}.mlp.fc2.bias"));
        let res2 = self.structural(OpType::ResidualAdd, &format!("{p}.residual2"));

        for (s, t) in [
            (prev, ln1_s),
            (ln1_s, ln1_b),
            (ln1_b, qkv_w),
            (qkv_w, qkv_b),
            (qkv_b, smax),
            (smax, proj_w),
            (proj_w, proj_b),
            (proj_b, res1),
            (prev, res1),
            (res1, ln2_s),
            (ln2_s, ln2_b),
            (ln2_b, fc1_w),
            (fc1_w, fc1_b),
            (fc1_b, act),
            (act, fc2_w),
            (fc2_w, fc2_b),
            (fc2_b, res2),
            (res1, res2),
        ] {
            self.edge(s, t);
        }
        res2
    }
}

/// Lower a spec to its computational graph.
pub fn build_graph(spec: &ArchSpec) -> Result<CompGraph> {
    match spec {
        ArchSpec::Vit(s) => build_vit_graph(s),
        ArchSpec::Gpt(s) => build_gpt_graph(s),
    }
}

fn build_vit_graph(spec: &ViTSpec) -> Result<CompGraph> {
    spec.validate()?;
    let d = spec.hidden_dim;
    let p = spec.patch_size;
    let tokens = spec.num_tokens();
    let mut b = GraphBuilder::new();

    let input = b.structural(OpType::Input, "input");
    let patch_w = b.node(OpType::PatchProjection, [d, 3, p, p], "patch_embed.weight");
    let patch_b = b.node(OpType::Bias, [d, 1, 1, 1], "patch_embed.bias");
    let cls = b.node(OpType::PositionalEmbedding, [d, 1, 1, 1], "cls_token");
    let pos = b.node(OpType::PositionalEmbedding, [tokens, d, 1, 1], "pos_embed");
    b.edge(input, patch_w);
    b.edge(patch_w, patch_b);
    b.edge(patch_b, pos);
    b.edge(cls, pos);

    let mut prev = pos;
    for i in 0..spec.num_layers {
        prev = b.block(prev, i, d, spec.mlp_dim);
    }

    let lnf_s = b.node(OpType::LayerNormScale, [d, 1, 1, 1], "ln_f.weight");
    let lnf_b = b.node(OpType::LayerNormShift, [d, 1, 1, 1], "ln_f.bias");
    let head_w = b.node(OpType::ClassificationHead, [spec.num_classes, d, 1, 1], "head.weight");
    let head_b = b.node(OpType::Bias, [spec.num_classes, 1, 1, 1], "head.bias");
    let output = b.structural(OpType::Output, "output");
    b.edge(prev, lnf_s);
    b.edge(lnf_s, lnf_b);
    b.edge(lnf_b, head_w);
    b.edge(head_w, head_b);
    b.edge(head_b, output);

    Ok(CompGraph {
        id: 0,
        arch_ref: ArchSpec::Vit(spec.clone()),
        nodes: b.nodes,
        edges: b.edges,
        non_predicted: Vec::new(),
    })
}

fn build_gpt_graph(spec: &GptSpec) -> Result<CompGraph> {
    spec.validate()?;
    let d = spec.embed_dim;
    let mut b = GraphBuilder::new();

    let input = b.structural(OpType::Input, "input");
    let wte = b.node(OpType::TokenEmbedding, [spec.vocab_size, d, 1, 1], "wte.weight");
    let wpe = b.node(OpType::PositionalEmbedding, [spec.context_length, d, 1, 1], "wpe.weight");
    b.edge(input, wte);
    b.edge(input, wpe);

    let entry = b.structural(OpType::ResidualAdd, "embed_sum");
    b.edge(wte, entry);
    b.edge(wpe, entry);

    let mut prev = entry;
    for i in 0..spec.num_layers {
        prev = b.block(prev, i, d, 4 * d);
    }

    let lnf_s = b.node(OpType::LayerNormScale, [d, 1, 1, 1], "ln_f.weight");
    let lnf_b = b.node(OpType::LayerNormShift, [d, 1, 1, 1], "ln_f.bias");
    let output = b.structural(OpType::Output, "output");
    b.edge(prev, lnf_s);
    b.edge(lnf_s, lnf_b);
    if spec.tie_word_embeddings {
        b.edge(lnf_b, output);
    } else {
        let lm = b.node(OpType::LmHead, [spec.vocab_size, d, 1, 1], "lm_head.weight");
        b.edge(lnf_b, lm);
        b.edge(lm, output);
    }

    // causal mask is a buffer, not a learnable tensor
    let non_predicted = vec!["attn.causal_mask".to_string()];

    Ok(CompGraph {
        id: 0,
        arch_ref: ArchSpec::Gpt(spec.clone()),
        nodes: b.nodes,
        edges: b.edges,
        non_predicted,
    })
}

impl CompGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Sum of learnable scalars over all nodes (structural nodes contribute 0).
    pub fn total_params(&self) -> u64 {
        self.nodes.iter().map(|n| n.numel()).sum()
    }

    /// Kahn topological order; errors if a cycle sneaks in.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut adj = vec![Vec::new(); n];
        for &(s, t) in &self.edges {
            indeg[t] += 1;
            adj[s].push(t);
        }
        let mut queue: std::collections::VecDeque<usize> =
            (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &adj[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        if order.len() != n {
            return Err(LogahError::InvalidSpec("graph contains a cycle".into()));
        }
        Ok(order)
    }

    /// In-degree plus out-degree per node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.nodes.len()];
        for &(s, t) in &self.edges {
            deg[s] += 1;
            deg[t] += 1;
        }
        deg
    }

    /// Min hop counts on the undirected closure of the DAG, so the attention
    /// bias is symmetric. `UNREACHABLE` marks disconnected pairs.
    pub fn shortest_path_distances(&self) -> Vec<Vec<u32>> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for &(s, t) in &self.edges {
            adj[s].push(t);
            adj[t].push(s);
        }
        let mut dist = vec![vec![UNREACHABLE; n]; n];
        for start in 0..n {
            let d = &mut dist[start];
            d[start] = 0;
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if d[v] == UNREACHABLE {
                        d[v] = d[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        dist
    }

    /// One JSON line per graph.
    pub fn serialize(&self) -> Result<Vec<u8>> {
        let mut buf = serde_json::to_vec(self)?;
        buf.push(b'\n');
        Ok(buf)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<CompGraph> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| LogahError::Parse(format!("invalid utf-8: {e}")))?;
        let line = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| LogahError::Parse("empty graph record".into()))?;
        serde_json::from_str(line).map_err(|e| LogahError::Parse(format!("graph record: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{sample_tiny_vit_spec, GptSpec, ViTSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_vit() -> ViTSpec {
        ViTSpec {
            num_layers: 1,
            num_heads: 2,
            hidden_dim: 16,
            mlp_dim: 64,
            patch_size: 2,
            image_size: 8,
            num_classes: 10,
        }
    }

    #[test]
    fn vit_node_count_matches_enumeration() {
        // independent enumeration of a 1-block ViT: 10 fixed nodes, 16 per block
        let g = build_graph(&ArchSpec::Vit(tiny_vit())).unwrap();
        assert_eq!(g.num_nodes(), 10 + 16);
        let learnable = g.nodes.iter().filter(|n| n.op.is_learnable()).count();
        // patch w+b, cls, pos, 12 per block, final ln s+b, head w+b
        assert_eq!(learnable, 4 + 12 + 4);
    }

    #[test]
    fn gpt_block_homogeneity() {
        let mut s3 = GptSpec::gpt2_s();
        s3.num_layers = 3;
        let mut s6 = s3.clone();
        s6.num_layers = 6;
        let g3 = build_graph(&ArchSpec::Gpt(s3)).unwrap();
        let g6 = build_graph(&ArchSpec::Gpt(s6)).unwrap();
        assert_eq!(g6.num_nodes() - g3.num_nodes(), 3 * 16);
    }

    #[test]
    fn coverage_matches_spec_count() {
        for spec in [
            ArchSpec::Vit(tiny_vit()),
            ArchSpec::Vit(ViTSpec::vit_s()),
            ArchSpec::Gpt(GptSpec::gpt2_s()),
            ArchSpec::Gpt(GptSpec {
                tie_word_embeddings: false,
                ..GptSpec::gpt2_s()
            }),
        ] {
            let g = build_graph(&spec).unwrap();
            assert_eq!(g.total_params(), spec.param_count().unwrap());
        }
    }

    #[test]
    fn graphs_are_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let spec = ArchSpec::Vit(sample_tiny_vit_spec(&mut rng, 10));
            let g = build_graph(&spec).unwrap();
            assert!(g.topo_order().is_ok());
        }
    }

    #[test]
    fn distances_match_bfs_oracle() {
        let g = build_graph(&ArchSpec::Vit(tiny_vit())).unwrap();
        let dist = g.shortest_path_distances();
        let n = g.num_nodes();
        for i in 0..n {
            assert_eq!(dist[i][i], 0);
        }
        // per-node BFS oracle, written independently with an adjacency set
        let mut adj = vec![std::collections::BTreeSet::new(); n];
        for &(s, t) in &g.edges {
            adj[s].insert(t);
            adj[t].insert(s);
        }
        for start in 0..n {
            let mut oracle = vec![u32::MAX; n];
            oracle[start] = 0;
            let mut frontier = vec![start];
            let mut hops = 0;
            while !frontier.is_empty() {
                hops += 1;
                let mut next = Vec::new();
                for &u in &frontier {
                    for &v in &adj[u] {
                        if oracle[v] == u32::MAX {
                            oracle[v] = hops;
                            next.push(v);
                        }
                    }
                }
                frontier = next;
            }
            assert_eq!(dist[start], oracle, "row {start}");
        }
        // symmetry of the undirected closure
        for i in 0..n {
            for j in 0..n {
                assert_eq!(dist[i][j], dist[j][i]);
            }
        }
    }

    #[test]
    fn chain_distance() {
        // a -> b -> c gives d(a, c) = 2
        let g = build_graph(&ArchSpec::Vit(tiny_vit())).unwrap();
        let dist = g.shortest_path_distances();
        // input -> patch_embed.weight -> patch_embed.bias is a chain prefix
        assert_eq!(dist[0][1], 1);
        assert_eq!(dist[0][2], 2);
    }

    #[test]
    fn serde_roundtrip_and_truncation() {
        let g = build_graph(&ArchSpec::Gpt(GptSpec::gpt2_s())).unwrap();
        let bytes = g.serialize().unwrap();
        let back = CompGraph::deserialize(&bytes).unwrap();
        assert_eq!(g, back);
        assert!(CompGraph::deserialize(&bytes[..bytes.len() / 2]).is_err());
    }

    #[test]
    fn folded_dims_fold_spatial_axes() {
        let g = build_graph(&ArchSpec::Vit(tiny_vit())).unwrap();
        let patch = g.nodes.iter().find(|n| n.name == "patch_embed.weight").unwrap();
        assert_eq!(patch.shape, [16, 3, 2, 2]);
        assert_eq!(patch.folded_dims(), (32, 6));
        let qkv = g.nodes.iter().find(|n| n.name == "blocks.0.attn.qkv.weight").unwrap();
        assert_eq!(qkv.folded_dims(), (48, 16));
    }
}
