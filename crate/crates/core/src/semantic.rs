//! Local-global semantic correlation reasoning.
//!
//! Both modalities of topic and post are projected into a shared latent
//! space, five scaled dot-product relation matrices are computed (four
//! local pairings plus the stacked global pairing), each relation is gated
//! against its topic-side partner, and the gated relations are fused into
//! a single (l_d + l_i) × d_c correlation feature.

use crate::error::Result;
use crate::numerics::{linear, Tape, Var};
use crate::trace::{record, TraceOpt};

/// The four latent matrices for one topic-post pair: topic text/image and
/// post text/image, all with feature width d_c.
#[derive(Debug, Clone, Copy)]
pub struct LatentBundle {
    pub h_tw: Var,
    pub h_tv: Var,
    pub h_pw: Var,
    pub h_pv: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    /// [2·d_c, d_c]
    pub weight: Var,
    /// [1, d_c]
    pub bias: Var,
}

/// Gates for the four local relation pairs.
#[derive(Debug, Clone, Copy)]
pub struct LocalGateVars {
    pub ww: GateVars,
    pub wv: GateVars,
    pub vw: GateVars,
    pub vv: GateVars,
}

/// Tape handles for the semantic parameters: two latent projections and
/// one gate per relation pair. Gate groups are absent when the matching
/// scale is ablated away (the parameters then do not exist at all).
#[derive(Debug, Clone, Copy)]
pub struct SemanticVars {
    /// A1 [d_d, d_c], b1 [1, d_c]
    pub text_proj: (Var, Var),
    /// A2 [d_i, d_c], b2 [1, d_c]
    pub image_proj: (Var, Var),
    pub local_gates: Option<LocalGateVars>,
    pub global_gate: Option<GateVars>,
}

impl SemanticVars {
    fn local(&self) -> Result<&LocalGateVars> {
        self.local_gates
            .as_ref()
            .ok_or_else(|| crate::error::Error::invalid("local gates not available"))
    }

    fn global(&self) -> Result<&GateVars> {
        self.global_gate
            .as_ref()
            .ok_or_else(|| crate::error::Error::invalid("global gate not available"))
    }
}

/// Project all four representations into the shared latent space:
/// H = tanh(X·A + b), so every component lies in (-1, 1).
pub fn project_latent(
    tape: &mut Tape,
    w_t: Var,
    v_t: Var,
    w_p: Var,
    v_p: Var,
    vars: &SemanticVars,
) -> Result<LatentBundle> {
    let proj = |x: Var, (a, b): (Var, Var), tape: &mut Tape| -> Result<Var> {
        let lin = linear(tape, x, a, b)?;
        Ok(tape.tanh(lin))
    };
    Ok(LatentBundle {
        h_tw: proj(w_t, vars.text_proj, tape)?,
        h_tv: proj(v_t, vars.image_proj, tape)?,
        h_pw: proj(w_p, vars.text_proj, tape)?,
        h_pv: proj(v_p, vars.image_proj, tape)?,
    })
}

/// Scaled dot-product attention of `query` rows over `key_value` rows:
/// softmax(q·kᵀ/√d_c)·k. Each output row is a convex combination of
/// key_value rows.
pub fn cross_attend(tape: &mut Tape, query: Var, key_value: Var) -> Result<Var> {
    cross_attend_traced(tape, query, key_value, &mut None, "")
}

fn cross_attend_traced(
    tape: &mut Tape,
    query: Var,
    key_value: Var,
    trace: &mut TraceOpt<'_>,
    name: &str,
) -> Result<Var> {
    let d_c = tape.value(query).cols();
    let kt = tape.transpose(key_value)?;
    let scores = tape.matmul(query, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_c as f64).sqrt());
    let attn = tape.softmax_rows(scaled);
    if !name.is_empty() {
        record(trace, name, tape.value(attn));
    }
    tape.matmul(attn, key_value)
}

/// The five relation matrices.
#[derive(Debug, Clone, Copy)]
pub struct Relations {
    /// post text ← topic text, l_d × d_c
    pub ww: Var,
    /// post text ← topic image, l_d × d_c
    pub wv: Var,
    /// post image ← topic text, l_i × d_c
    pub vw: Var,
    /// post image ← topic image, l_i × d_c
    pub vv: Var,
    /// stacked post ← stacked topic, (l_d + l_i) × d_c
    pub ss: Var,
}

pub fn compute_relations(tape: &mut Tape, b: &LatentBundle) -> Result<Relations> {
    compute_relations_traced(tape, b, &mut None)
}

fn compute_relations_traced(
    tape: &mut Tape,
    b: &LatentBundle,
    trace: &mut TraceOpt<'_>,
) -> Result<Relations> {
    let ww = cross_attend_traced(tape, b.h_pw, b.h_tw, trace, "semantic.attn.ww")?;
    let wv = cross_attend_traced(tape, b.h_pw, b.h_tv, trace, "semantic.attn.wv")?;
    let vw = cross_attend_traced(tape, b.h_pv, b.h_tw, trace, "semantic.attn.vw")?;
    let vv = cross_attend_traced(tape, b.h_pv, b.h_tv, trace, "semantic.attn.vv")?;
    let (q, kv) = stacked_pair(tape, b)?;
    let ss = cross_attend_traced(tape, q, kv, trace, "semantic.attn.ss")?;
    Ok(Relations { ww, wv, vw, vv, ss })
}

/// Row-stack of (post text, post image) and (topic text, topic image).
fn stacked_pair(tape: &mut Tape, b: &LatentBundle) -> Result<(Var, Var)> {
    let q = tape.concat(b.h_pw, b.h_pv, 0)?;
    let kv = tape.concat(b.h_tw, b.h_tv, 0)?;
    Ok((q, kv))
}

/// g = sigmoid([relation ⊕ partner]·W + b), strictly inside (0, 1).
fn gate(
    tape: &mut Tape,
    relation: Var,
    partner: Var,
    gv: &GateVars,
    trace: &mut TraceOpt<'_>,
    name: &str,
) -> Result<Var> {
    let joined = tape.concat(relation, partner, 1)?;
    let pre = linear(tape, joined, gv.weight, gv.bias)?;
    let g = tape.sigmoid(pre);
    if !name.is_empty() {
        record(trace, name, tape.value(g));
    }
    Ok(g)
}

fn fuse_local(
    tape: &mut Tape,
    rels: &Relations,
    b: &LatentBundle,
    gates: &LocalGateVars,
    trace: &mut TraceOpt<'_>,
) -> Result<Var> {
    let g_ww = gate(tape, rels.ww, b.h_tw, &gates.ww, trace, "semantic.gate.ww")?;
    let g_wv = gate(tape, rels.wv, b.h_tw, &gates.wv, trace, "semantic.gate.wv")?;
    let g_vw = gate(tape, rels.vw, b.h_tv, &gates.vw, trace, "semantic.gate.vw")?;
    let g_vv = gate(tape, rels.vv, b.h_tv, &gates.vv, trace, "semantic.gate.vv")?;
    let text = {
        let a = tape.mul(rels.ww, g_ww)?;
        let c = tape.mul(rels.wv, g_wv)?;
        tape.add(a, c)?
    };
    let image = {
        let a = tape.mul(rels.vw, g_vw)?;
        let c = tape.mul(rels.vv, g_vv)?;
        tape.add(a, c)?
    };
    tape.concat(text, image, 0)
}

fn fuse_global(
    tape: &mut Tape,
    rels: &Relations,
    b: &LatentBundle,
    gate_ss: &GateVars,
    trace: &mut TraceOpt<'_>,
) -> Result<Var> {
    let kv = tape.concat(b.h_tw, b.h_tv, 0)?;
    let g_ss = gate(tape, rels.ss, kv, gate_ss, trace, "semantic.gate.ss")?;
    let gated = tape.mul(rels.ss, g_ss)?;
    tape.add(rels.ss, gated)
}

/// Fuse the gated relations into M̂, shape (l_d + l_i) × d_c. The local
/// relations are gated elementwise and row-stacked (text rows above image
/// rows); the global relation contributes both an ungated and a gated term
/// over all rows.
pub fn gated_fuse(
    tape: &mut Tape,
    rels: &Relations,
    b: &LatentBundle,
    vars: &SemanticVars,
) -> Result<Var> {
    let local = fuse_local(tape, rels, b, vars.local()?, &mut None)?;
    let global = fuse_global(tape, rels, b, vars.global()?, &mut None)?;
    tape.add(local, global)
}

/// Mean over rows: (l_d + l_i) × d_c -> 1 × d_c.
pub fn pool_semantic(tape: &mut Tape, m_hat: Var) -> Result<Var> {
    tape.mean_rows(m_hat)
}

/// Full semantic path with ablation switches: computes only the enabled
/// relations, fuses, and pools to a 1 × d_c feature. At least one of
/// `local_on` / `global_on` must hold.
pub fn semantic_feature(
    tape: &mut Tape,
    b: &LatentBundle,
    vars: &SemanticVars,
    local_on: bool,
    global_on: bool,
    trace: &mut TraceOpt<'_>,
) -> Result<Var> {
    debug_assert!(local_on || global_on);
    let mut m_hat: Option<Var> = None;
    if local_on {
        let ww = cross_attend_traced(tape, b.h_pw, b.h_tw, trace, "semantic.attn.ww")?;
        let wv = cross_attend_traced(tape, b.h_pw, b.h_tv, trace, "semantic.attn.wv")?;
        let vw = cross_attend_traced(tape, b.h_pv, b.h_tw, trace, "semantic.attn.vw")?;
        let vv = cross_attend_traced(tape, b.h_pv, b.h_tv, trace, "semantic.attn.vv")?;
        let rels = Relations { ww, wv, vw, vv, ss: ww };
        m_hat = Some(fuse_local(tape, &rels, b, vars.local()?, trace)?);
    }
    if global_on {
        let (q, kv) = stacked_pair(tape, b)?;
        let ss = cross_attend_traced(tape, q, kv, trace, "semantic.attn.ss")?;
        let rels = Relations { ww: ss, wv: ss, vw: ss, vv: ss, ss };
        let global = fuse_global(tape, &rels, b, vars.global()?, trace)?;
        m_hat = Some(match m_hat {
            Some(local) => tape.add(local, global)?,
            None => global,
        });
    }
    pool_semantic(tape, m_hat.expect("at least one scale enabled"))
}
