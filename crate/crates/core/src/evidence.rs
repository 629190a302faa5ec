//! Multi-level evidential relational reasoning.
//!
//! Macro level: a fully connected evidence graph over all topic and post
//! latent rows, followed by retrieval attention between the aggregated
//! graph embedding and the stacked representation. Micro level: separate
//! topic and post internal graphs, with coherence weights relating the
//! topic graph embedding to each final post node. The two level features
//! are concatenated.

use crate::error::{Error, Result};
use crate::numerics::{broadcast_rows, linear, Tape, Tensor, Var};
use crate::semantic::LatentBundle;
use crate::trace::{record, TraceOpt};

/// One pairwise-scoring MLP: 2·d_c -> hidden -> scalar.
#[derive(Debug, Clone, Copy)]
pub struct PairMlpVars {
    /// [2·d_c, hidden]
    pub w1: Var,
    /// [1, hidden]
    pub b1: Var,
    /// [hidden, 1]
    pub w2: Var,
    /// [1, 1]
    pub b2: Var,
}

/// Per-layer pairwise MLPs for one evidence graph (length = layer count L).
#[derive(Debug, Clone)]
pub struct GraphVars {
    pub layers: Vec<PairMlpVars>,
}

/// Tape handles for the whole module: the macro graph, the two micro
/// graphs, and the coherence MLP. Parameter sets are independent.
#[derive(Debug, Clone)]
pub struct EvidenceVars {
    pub macro_graph: GraphVars,
    pub topic_graph: GraphVars,
    pub post_graph: GraphVars,
    pub coherence: PairMlpVars,
}

/// Large negative constant on the diagonal; after the row softmax the
/// self-edge weight underflows to exactly zero.
fn diagonal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = -1e30;
    }
    Tensor::new(vec![n, n], data).expect("mask shape is consistent")
}

/// Run L inference layers over a fully connected graph (self-edges
/// excluded): per layer, score every ordered pair with that layer's MLP,
/// softmax-normalize each row over the other nodes, and replace each node
/// by its adjacency-weighted neighbor sum. Returns the final node matrix.
pub fn graph_forward(
    tape: &mut Tape,
    nodes0: Var,
    graph: &GraphVars,
    trace: &mut TraceOpt<'_>,
    trace_prefix: &str,
) -> Result<Var> {
    let n = tape.value(nodes0).rows();
    if n < 2 {
        return Err(Error::BadShape {
            op: "graph_forward",
            shape: tape.value(nodes0).shape().to_vec(),
            expected: "at least 2 nodes".into(),
        });
    }
    let mask = tape.constant(diagonal_mask(n));
    let mut nodes = nodes0;
    for (z, layer) in graph.layers.iter().enumerate() {
        let scores = tape.pairwise_scores(nodes, layer.w1, layer.b1, layer.w2, layer.b2)?;
        let masked = tape.add(scores, mask)?;
        let adj = tape.softmax_rows(masked);
        if !trace_prefix.is_empty() {
            record(trace, &format!("{trace_prefix}.adj.layer{z}"), tape.value(adj));
        }
        nodes = tape.matmul(adj, nodes)?;
        if !trace_prefix.is_empty() {
            record(trace, &format!("{trace_prefix}.nodes.layer{z}"), tape.value(nodes));
        }
    }
    Ok(nodes)
}

/// Row-stack of all four latent matrices: 2(l_d + l_i) nodes of width d_c.
fn stacked_nodes(tape: &mut Tape, b: &LatentBundle) -> Result<Var> {
    let topic = tape.concat(b.h_tw, b.h_tv, 0)?;
    let post = tape.concat(b.h_pw, b.h_pv, 0)?;
    tape.concat(topic, post, 0)
}

/// Macro level: evidence graph over the joint node set, sum-pooled to the
/// graph embedding, then retrieval attention back over the stacked
/// representation. Returns a 1 × d_c feature.
pub fn significant_info_reasoning(
    tape: &mut Tape,
    b: &LatentBundle,
    macro_graph: &GraphVars,
    trace: &mut TraceOpt<'_>,
) -> Result<Var> {
    let stacked = stacked_nodes(tape, b)?;
    let final_nodes = graph_forward(tape, stacked, macro_graph, trace, "evidence.macro")?;
    let graph_embedding = tape.sum_rows(final_nodes)?; // 1 × d_c

    // retrieval attention: beta_j = h_j · graph_embedding, alpha = softmax(beta)
    let ge_col = tape.transpose(graph_embedding)?;
    let beta = tape.matmul(stacked, ge_col)?; // n × 1
    let beta_row = tape.transpose(beta)?;
    let alpha = tape.softmax_rows(beta_row); // 1 × n
    record(trace, "evidence.retrieval.alpha", tape.value(alpha));
    tape.matmul(alpha, stacked)
}

/// Micro level: separate topic and post internal graphs; the mean-pooled
/// topic embedding is scored against each final post node by the coherence
/// MLP, and the softmax weights aggregate the post nodes. Returns 1 × d_c.
pub fn internal_logic_reasoning(
    tape: &mut Tape,
    b: &LatentBundle,
    topic_graph: &GraphVars,
    post_graph: &GraphVars,
    coherence: &PairMlpVars,
    trace: &mut TraceOpt<'_>,
) -> Result<Var> {
    let topic_nodes0 = tape.concat(b.h_tw, b.h_tv, 0)?;
    let post_nodes0 = tape.concat(b.h_pw, b.h_pv, 0)?;
    let topic_final = graph_forward(tape, topic_nodes0, topic_graph, trace, "evidence.topic")?;
    let post_final = graph_forward(tape, post_nodes0, post_graph, trace, "evidence.post")?;

    let t = tape.mean_rows(topic_final)?; // 1 × d_c
    let n_post = tape.value(post_final).rows();
    let t_rep = broadcast_rows(tape, t, n_post)?;
    let joined = tape.concat(t_rep, post_final, 1)?; // n × 2d_c
    let hidden_pre = linear(tape, joined, coherence.w1, coherence.b1)?;
    let hidden = tape.tanh(hidden_pre);
    let logits = linear(tape, hidden, coherence.w2, coherence.b2)?; // n × 1
    let logits_row = tape.transpose(logits)?;
    let weights = tape.softmax_rows(logits_row); // 1 × n
    record(trace, "evidence.coherence.weights", tape.value(weights));
    tape.matmul(weights, post_final)
}

/// Both levels concatenated: 1 × 2·d_c.
pub fn multi_level_reasoning(
    tape: &mut Tape,
    b: &LatentBundle,
    vars: &EvidenceVars,
    trace: &mut TraceOpt<'_>,
) -> Result<Var> {
    let sig = significant_info_reasoning(tape, b, &vars.macro_graph, trace)?;
    let tpl = internal_logic_reasoning(
        tape,
        b,
        &vars.topic_graph,
        &vars.post_graph,
        &vars.coherence,
        trace,
    )?;
    tape.concat(sig, tpl, 1)
}
