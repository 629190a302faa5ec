//! Forward orchestration: encode a topic-post pair, run the enabled
//! reasoning branches, and project the concatenated features to a scalar
//! quality score.

use super::{AblationMask, ParamSet};
use crate::config::ModelDims;
use crate::data::{PostRecord, TopicPostRecord};
use crate::encoders::{
    encode_image_multiscale, encode_text, ImageBackend, ImageInput, TextEncoderVars,
    TinyConvVars, TokenSequence,
};
use crate::error::{Error, Result};
use crate::evidence::{
    internal_logic_reasoning, significant_info_reasoning, GraphVars, PairMlpVars,
};
use crate::numerics::{linear, Tape, Tensor, Var};
use crate::semantic::{semantic_feature, GateVars, LatentBundle, LocalGateVars, SemanticVars};
use crate::trace::{ForwardTrace, TraceOpt};

/// One encodable item: a fixed-length token sequence plus an image input.
#[derive(Debug, Clone)]
pub struct ItemInput {
    pub tokens: TokenSequence,
    pub image: ImageInput,
}

pub fn item_from_topic(r: &TopicPostRecord, l_d: usize) -> ItemInput {
    ItemInput {
        tokens: TokenSequence::from_ids(&r.tokens, l_d),
        image: ImageInput::Features(r.image.clone()),
    }
}

pub fn item_from_post(p: &PostRecord, l_d: usize) -> ItemInput {
    ItemInput {
        tokens: TokenSequence::from_ids(&p.tokens, l_d),
        image: ImageInput::Features(p.image.clone()),
    }
}

/// A parameter set bound to a configuration and ablation mask. Scoring is
/// deterministic in (params, inputs); posts are scored one at a time and
/// never see each other.
pub struct Model<'a> {
    pub dims: &'a ModelDims,
    pub backend: &'a ImageBackend,
    pub mask: AblationMask,
    pub params: &'a ParamSet,
}

/// Tape handles for every bound parameter, in registry order.
pub(crate) struct SessionVars {
    by_index: Vec<Var>,
    paths: Vec<String>,
}

/// Build one pair's hinge loss on a tape from explicit parameter leaves
/// (registry order), for finite-difference checks of the training loss.
/// Assumes the pair is active; the caller keeps margins away from the
/// hinge kink.
pub fn pair_loss_for_check(
    tape: &mut Tape,
    vars: &[Var],
    model: &Model<'_>,
    topic: &ItemInput,
    pos: &ItemInput,
    neg: &ItemInput,
    gamma: f64,
) -> Result<Var> {
    let sv = SessionVars {
        by_index: vars.to_vec(),
        paths: model.params.paths().map(String::from).collect(),
    };
    let topic_latent = model.encode_latent(tape, &sv, topic)?;
    let s_pos = model.score_from_latents(tape, &sv, topic_latent, pos, &mut None)?;
    let s_neg = model.score_from_latents(tape, &sv, topic_latent, neg, &mut None)?;
    let neg_pos = tape.scale(s_pos, -1.0);
    let diff = tape.add(neg_pos, s_neg)?;
    let g = tape.constant(Tensor::scalar(gamma));
    tape.add(diff, g)
}

/// Check the analytic gradient of the score against central finite
/// differences, parameter tensor by parameter tensor. Returns
/// (path, max relative error) in registry order.
pub fn grad_check_score(
    dims: &ModelDims,
    backend: &ImageBackend,
    mask: AblationMask,
    params: &ParamSet,
    topic: &ItemInput,
    post: &ItemInput,
    step: f64,
) -> Result<Vec<(String, f64)>> {
    let model = Model::new(dims, backend, mask, params)?;
    let paths: Vec<String> = params.paths().map(String::from).collect();
    let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let errs = crate::numerics::grad_check_many(
        |tape, vars| {
            let sv = SessionVars { by_index: vars.to_vec(), paths: paths.clone() };
            let topic_latent = model.encode_latent(tape, &sv, topic)?;
            model.score_from_latents(tape, &sv, topic_latent, post, &mut None)
        },
        &tensors,
        step,
    )?;
    Ok(paths.into_iter().zip(errs).collect())
}

impl SessionVars {
    pub(crate) fn get(&self, path: &str) -> Result<Var> {
        self.paths
            .iter()
            .position(|p| p == path)
            .map(|i| self.by_index[i])
            .ok_or_else(|| Error::invalid(format!("parameter {path} not bound")))
    }

    pub(crate) fn vars(&self) -> &[Var] {
        &self.by_index
    }
}

impl<'a> Model<'a> {
    pub fn new(
        dims: &'a ModelDims,
        backend: &'a ImageBackend,
        mask: AblationMask,
        params: &'a ParamSet,
    ) -> Result<Self> {
        mask.validate()?;
        Ok(Model { dims, backend, mask, params })
    }

    /// Register every parameter tensor as a tracked leaf.
    pub(crate) fn bind(&self, tape: &mut Tape) -> SessionVars {
        let mut by_index = Vec::with_capacity(self.params.len());
        let mut paths = Vec::with_capacity(self.params.len());
        for (p, t) in self.params.iter() {
            by_index.push(tape.leaf(t.clone(), true));
            paths.push(p.to_string());
        }
        SessionVars { by_index, paths }
    }

    fn text_vars(&self, sv: &SessionVars) -> Result<TextEncoderVars> {
        Ok(TextEncoderVars {
            embedding: sv.get("text.embedding")?,
            kernels: self
                .dims
                .kernel_sizes
                .iter()
                .map(|&c| Ok((c, sv.get(&format!("text.conv{c}"))?)))
                .collect::<Result<_>>()?,
        })
    }

    fn tiny_conv_vars(&self, sv: &SessionVars) -> Result<Option<TinyConvVars>> {
        match self.backend {
            ImageBackend::Passthrough => Ok(None),
            ImageBackend::TinyConv(_) => Ok(Some(TinyConvVars {
                stages: (0..3)
                    .map(|i| {
                        Ok((
                            sv.get(&format!("image.stage{i}.kernel"))?,
                            sv.get(&format!("image.stage{i}.bias"))?,
                        ))
                    })
                    .collect::<Result<_>>()?,
                projs: (0..3)
                    .map(|i| sv.get(&format!("image.proj{i}")))
                    .collect::<Result<_>>()?,
            })),
        }
    }

    /// Resolve projections always (both branches consume the latent
    /// bundle) and gate groups only for the enabled scales.
    fn semantic_vars(&self, sv: &SessionVars) -> Result<SemanticVars> {
        let gate = |name: &str| -> Result<GateVars> {
            Ok(GateVars {
                weight: sv.get(&format!("semantic.gate.{name}.weight"))?,
                bias: sv.get(&format!("semantic.gate.{name}.bias"))?,
            })
        };
        let local_on = self.mask.use_semantic && self.mask.use_local;
        let global_on = self.mask.use_semantic && self.mask.use_global;
        Ok(SemanticVars {
            text_proj: (
                sv.get("semantic.text_proj.weight")?,
                sv.get("semantic.text_proj.bias")?,
            ),
            image_proj: (
                sv.get("semantic.image_proj.weight")?,
                sv.get("semantic.image_proj.bias")?,
            ),
            local_gates: if local_on {
                Some(LocalGateVars {
                    ww: gate("ww")?,
                    wv: gate("wv")?,
                    vw: gate("vw")?,
                    vv: gate("vv")?,
                })
            } else {
                None
            },
            global_gate: if global_on { Some(gate("ss")?) } else { None },
        })
    }

    fn pair_mlp(&self, sv: &SessionVars, prefix: &str) -> Result<PairMlpVars> {
        Ok(PairMlpVars {
            w1: sv.get(&format!("{prefix}.w1"))?,
            b1: sv.get(&format!("{prefix}.b1"))?,
            w2: sv.get(&format!("{prefix}.w2"))?,
            b2: sv.get(&format!("{prefix}.b2"))?,
        })
    }

    fn graph_vars(&self, sv: &SessionVars, name: &str) -> Result<GraphVars> {
        Ok(GraphVars {
            layers: (0..self.dims.graph_layers)
                .map(|z| self.pair_mlp(sv, &format!("evidence.{name}.layer{z}")))
                .collect::<Result<_>>()?,
        })
    }

    /// Encode one item and project it into the latent space; the topic
    /// side of a pair is computed once and shared across its posts.
    pub(crate) fn encode_latent(
        &self,
        tape: &mut Tape,
        sv: &SessionVars,
        item: &ItemInput,
    ) -> Result<(Var, Var)> {
        let text_vars = self.text_vars(sv)?;
        let tiny = self.tiny_conv_vars(sv)?;
        let w = encode_text(tape, &item.tokens, &text_vars, self.dims)?;
        let v = encode_image_multiscale(tape, &item.image, self.backend, tiny.as_ref(), self.dims)?;

        let sem = self.semantic_vars(sv)?;
        let hw_pre = linear(tape, w, sem.text_proj.0, sem.text_proj.1)?;
        let hv_pre = linear(tape, v, sem.image_proj.0, sem.image_proj.1)?;
        Ok((tape.tanh(hw_pre), tape.tanh(hv_pre)))
    }

    /// Score one post against already-encoded topic latents.
    pub(crate) fn score_from_latents(
        &self,
        tape: &mut Tape,
        sv: &SessionVars,
        topic_latent: (Var, Var),
        post: &ItemInput,
        trace: &mut TraceOpt<'_>,
    ) -> Result<Var> {
        let (h_pw, h_pv) = self.encode_latent(tape, sv, post)?;
        let bundle = LatentBundle {
            h_tw: topic_latent.0,
            h_tv: topic_latent.1,
            h_pw,
            h_pv,
        };

        let mut feats: Vec<Var> = Vec::with_capacity(3);
        if self.mask.use_semantic {
            let sem = self.semantic_vars(sv)?;
            feats.push(semantic_feature(
                tape,
                &bundle,
                &sem,
                self.mask.use_local,
                self.mask.use_global,
                trace,
            )?);
        }
        if self.mask.use_evidence {
            if self.mask.use_sig {
                let macro_graph = self.graph_vars(sv, "macro")?;
                feats.push(significant_info_reasoning(tape, &bundle, &macro_graph, trace)?);
            }
            if self.mask.use_tpl {
                let topic_graph = self.graph_vars(sv, "topic")?;
                let post_graph = self.graph_vars(sv, "post")?;
                let coherence = self.pair_mlp(sv, "evidence.coherence")?;
                feats.push(internal_logic_reasoning(
                    tape,
                    &bundle,
                    &topic_graph,
                    &post_graph,
                    &coherence,
                    trace,
                )?);
            }
        }
        let mut feat = feats[0];
        for &f in &feats[1..] {
            feat = tape.concat(feat, f, 1)?;
        }

        let head_w = self.masked_head(tape, sv)?;
        let head_b = sv.get("head.bias")?;
        let projected = tape.matmul(feat, head_w)?;
        tape.add(projected, head_b)
    }

    /// The head rows for the enabled feature blocks. A full-width head is
    /// sliced by a constant row selector (so disabled rows get no
    /// gradient); a pre-reduced head passes through.
    fn masked_head(&self, tape: &mut Tape, sv: &SessionVars) -> Result<Var> {
        let head = sv.get("head.weight")?;
        let width = self.mask.feature_width(self.dims.d_c);
        let full = 3 * self.dims.d_c;
        let rows = tape.value(head).rows();
        if rows == width {
            return Ok(head);
        }
        if rows != full {
            return Err(Error::ShapeMismatch {
                op: "masked_head",
                lhs: vec![rows, 1],
                rhs: vec![width, 1],
            });
        }
        let mut selector = Tensor::zeros(vec![width, full]);
        let mut out_row = 0;
        for (b, &enabled) in self.mask.head_blocks().iter().enumerate() {
            if enabled {
                for r in 0..self.dims.d_c {
                    selector.data_mut()[out_row * full + b * self.dims.d_c + r] = 1.0;
                    out_row += 1;
                }
            }
        }
        let sel = tape.constant(selector);
        tape.matmul(sel, head)
    }

    /// Score a single topic-post pair.
    pub fn score(&self, topic: &ItemInput, post: &ItemInput) -> Result<f64> {
        Ok(self.score_posts(topic, std::slice::from_ref(post))?[0])
    }

    /// Score with a diagnostic trace of every internal distribution.
    pub fn score_traced(&self, topic: &ItemInput, post: &ItemInput) -> Result<(f64, ForwardTrace)> {
        let mut tape = Tape::new();
        let sv = self.bind(&mut tape);
        let topic_latent = self.encode_latent(&mut tape, &sv, topic)?;
        let mut trace = ForwardTrace::new();
        let s = self.score_from_latents(
            &mut tape,
            &sv,
            topic_latent,
            post,
            &mut Some(&mut trace),
        )?;
        Ok((tape.value(s).item()?, trace))
    }

    /// Score every post of one topic, sharing the topic encoding.
    pub fn score_posts(&self, topic: &ItemInput, posts: &[ItemInput]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let sv = self.bind(&mut tape);
        let topic_latent = self.encode_latent(&mut tape, &sv, topic)?;
        posts
            .iter()
            .map(|p| {
                let s = self.score_from_latents(&mut tape, &sv, topic_latent, p, &mut None)?;
                tape.value(s).item()
            })
            .collect()
    }

    /// Score every post of a dataset record.
    pub fn score_record(&self, record: &TopicPostRecord) -> Result<Vec<f64>> {
        let topic = item_from_topic(record, self.dims.l_d);
        let posts: Vec<ItemInput> =
            record.posts.iter().map(|p| item_from_post(p, self.dims.l_d)).collect();
        self.score_posts(&topic, &posts)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::numerics::Tensor;
    use crate::ranking::apply_ablation;

    pub(crate) fn micro_dims() -> ModelDims {
        ModelDims {
            vocab_size: 12,
            l_d: 2,
            l_i: 2,
            d_emb: 4,
            d_d: 6,
            d_i: 3,
            d_c: 8,
            kernel_sizes: vec![1, 3],
            graph_layers: 2,
        }
    }

    fn micro_items(dims: &ModelDims, seed: u64) -> (ItemInput, ItemInput) {
        use rand::Rng;
        let mut rng = crate::rng::substream(seed, "model-test/items");
        let mut feats = || {
            let data: Vec<f64> =
                (0..dims.l_i * dims.d_i).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(vec![dims.l_i, dims.d_i], data).unwrap()
        };
        let topic = ItemInput {
            tokens: TokenSequence::from_ids(&[2, 3], dims.l_d),
            image: ImageInput::Features(feats()),
        };
        let post = ItemInput {
            tokens: TokenSequence::from_ids(&[3, 4], dims.l_d),
            image: ImageInput::Features(feats()),
        };
        (topic, post)
    }

    #[test]
    fn zero_params_score_is_the_head_bias() {
        let dims = micro_dims();
        let backend = ImageBackend::Passthrough;
        let init = ParamSet::init(&dims, &backend, 1).unwrap();
        let mut params = ParamSet::zeros_like(&init);
        params.get_mut("head.bias").unwrap().data_mut()[0] = 0.75;

        let model = Model::new(&dims, &backend, AblationMask::full(), &params).unwrap();
        let (topic, post) = micro_items(&dims, 1);
        let s = model.score(&topic, &post).unwrap();
        assert!((s - 0.75).abs() < 1e-12);
    }

    #[test]
    fn scoring_is_deterministic() {
        let dims = micro_dims();
        let backend = ImageBackend::Passthrough;
        let params = ParamSet::init(&dims, &backend, 2).unwrap();
        let model = Model::new(&dims, &backend, AblationMask::full(), &params).unwrap();
        let (topic, post) = micro_items(&dims, 2);
        let a = model.score(&topic, &post).unwrap();
        let b = model.score(&topic, &post).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn score_ignores_other_posts_in_the_topic() {
        let dims = micro_dims();
        let backend = ImageBackend::Passthrough;
        let params = ParamSet::init(&dims, &backend, 3).unwrap();
        let model = Model::new(&dims, &backend, AblationMask::full(), &params).unwrap();
        let (topic, post) = micro_items(&dims, 3);
        let (_, other) = micro_items(&dims, 4);

        let alone = model.score(&topic, &post).unwrap();
        let batch = model.score_posts(&topic, &[other, post.clone()]).unwrap();
        assert_eq!(alone.to_bits(), batch[1].to_bits());
    }

    #[test]
    fn every_mask_variant_scores_without_dimension_errors() {
        let dims = micro_dims();
        let backend = ImageBackend::Passthrough;
        let params = ParamSet::init(&dims, &backend, 4).unwrap();
        let (topic, post) = micro_items(&dims, 5);
        for name in AblationMask::VARIANT_NAMES {
            let mask = AblationMask::variant(name).unwrap();
            let model = Model::new(&dims, &backend, mask, &params).unwrap();
            model.score(&topic, &post).unwrap();
        }
    }

    #[test]
    fn reduced_params_score_matches_full_params_under_same_mask() {
        let dims = micro_dims();
        let backend = ImageBackend::Passthrough;
        let params = ParamSet::init(&dims, &backend, 5).unwrap();
        let (topic, post) = micro_items(&dims, 6);
        for name in AblationMask::VARIANT_NAMES {
            let mask = AblationMask::variant(name).unwrap();
            let reduced = apply_ablation(&params, mask, dims.d_c).unwrap();
            let full_model = Model::new(&dims, &backend, mask, &params).unwrap();
            let reduced_model = Model::new(&dims, &backend, mask, &reduced).unwrap();
            let a = full_model.score(&topic, &post).unwrap();
            let b = reduced_model.score(&topic, &post).unwrap();
            assert!((a - b).abs() < 1e-12, "{name}: {a} vs {b}");
        }
    }

    #[test]
    fn apply_ablation_width_arithmetic() {
        let dims = micro_dims();
        let backend = ImageBackend::Passthrough;
        let params = ParamSet::init(&dims, &backend, 6).unwrap();

        let full = apply_ablation(&params, AblationMask::full(), dims.d_c).unwrap();
        assert_eq!(full, params);

        let wo_ev = apply_ablation(&params, AblationMask::variant("wo-evidence").unwrap(), dims.d_c)
            .unwrap();
        assert_eq!(wo_ev.get("head.weight").unwrap().shape(), &[dims.d_c, 1]);
        assert!(!wo_ev.paths().any(|p| p.starts_with("evidence.")));

        let wo_sig =
            apply_ablation(&params, AblationMask::variant("wo-evidence-1").unwrap(), dims.d_c)
                .unwrap();
        assert_eq!(wo_sig.get("head.weight").unwrap().shape(), &[2 * dims.d_c, 1]);
        assert!(!wo_sig.paths().any(|p| p.starts_with("evidence.macro.")));
        assert!(wo_sig.contains("evidence.coherence.w1"));
    }

    #[test]
    fn shuffling_posts_permutes_scores_identically() {
        let cfg = SynthConfig { topics: 1, posts_per_topic: 6, seed: 11, ..SynthConfig::default() };
        let records = generate_synthetic(&cfg).unwrap();
        let dims = ModelDims {
            vocab_size: cfg.vocab_size,
            l_d: cfg.l_d,
            l_i: cfg.l_i,
            d_emb: 8,
            d_d: 9,
            d_i: cfg.d_i,
            d_c: 6,
            kernel_sizes: vec![1, 3],
            graph_layers: 1,
        };
        let backend = ImageBackend::Passthrough;
        let params = ParamSet::init(&dims, &backend, 7).unwrap();
        let model = Model::new(&dims, &backend, AblationMask::full(), &params).unwrap();

        let base = model.score_record(&records[0]).unwrap();
        let mut shuffled = records[0].clone();
        let perm = [4usize, 1, 5, 0, 3, 2];
        shuffled.posts = perm.iter().map(|&i| records[0].posts[i].clone()).collect();
        let permuted = model.score_record(&shuffled).unwrap();
        for (new_i, &old_i) in perm.iter().enumerate() {
            assert_eq!(permuted[new_i].to_bits(), base[old_i].to_bits());
        }
    }
}
