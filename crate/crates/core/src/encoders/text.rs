//! N-gram convolutional text encoder.
//!
//! Tokens are embedded, each kernel size C runs a same-length 1-D
//! convolution over the embeddings, and the per-kernel outputs are
//! concatenated per position into an l_d × d_d representation.

use super::TokenSequence;
use crate::config::ModelDims;
use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};

/// Tape handles for the text-encoder parameters: the embedding table
/// [vocab, d_emb] and one flattened kernel [C·d_emb, out_c] per kernel
/// size C (row blocks ordered by relative offset -(C-1)/2 ..= (C-1)/2).
#[derive(Debug, Clone)]
pub struct TextEncoderVars {
    pub embedding: Var,
    pub kernels: Vec<(usize, Var)>,
}

/// One-hot row per token; embedding lookup is then a plain matmul so
/// gradients reach the table through the standard op set.
fn one_hot(seq: &TokenSequence, vocab_size: usize) -> Tensor {
    let l = seq.len();
    let mut data = vec![0.0; l * vocab_size];
    for (i, &id) in seq.ids().iter().enumerate() {
        data[i * vocab_size + id as usize] = 1.0;
    }
    Tensor::new(vec![l, vocab_size], data).expect("one-hot shape is consistent")
}

/// 0/1 matrix shifting rows by `offset` with zero padding: row i of the
/// product selects input row i + offset when it exists.
fn shift_matrix(l: usize, offset: isize) -> Tensor {
    let mut data = vec![0.0; l * l];
    for i in 0..l as isize {
        let j = i + offset;
        if (0..l as isize).contains(&j) {
            data[(i * l as isize + j) as usize] = 1.0;
        }
    }
    Tensor::new(vec![l, l], data).expect("shift matrix shape is consistent")
}

/// Encode a fixed-length token sequence to [l_d, d_d]. Gradients flow to
/// the embedding table and every kernel.
pub fn encode_text(
    tape: &mut Tape,
    seq: &TokenSequence,
    vars: &TextEncoderVars,
    dims: &ModelDims,
) -> Result<Var> {
    seq.check_vocab(dims.vocab_size)?;
    let hot = tape.constant(one_hot(seq, dims.vocab_size));
    let emb = tape.matmul(hot, vars.embedding)?;

    let mut per_kernel = Vec::with_capacity(vars.kernels.len());
    for &(c, kernel) in &vars.kernels {
        let half = (c as isize - 1) / 2;
        let window = if c == 1 {
            emb
        } else {
            let mut acc = None;
            for offset in -half..=half {
                let shift = tape.constant(shift_matrix(dims.l_d, offset));
                let shifted = tape.matmul(shift, emb)?;
                acc = Some(match acc {
                    None => shifted,
                    Some(prev) => tape.concat(prev, shifted, 1)?,
                });
            }
            acc.expect("kernel sizes are nonempty")
        };
        per_kernel.push(tape.matmul(window, kernel)?);
    }

    let mut out = per_kernel[0];
    for &p in &per_kernel[1..] {
        out = tape.concat(out, p, 1)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sum_all;

    fn micro_dims() -> ModelDims {
        ModelDims {
            vocab_size: 6,
            l_d: 4,
            l_i: 2,
            d_emb: 3,
            d_d: 4,
            d_i: 2,
            d_c: 2,
            kernel_sizes: vec![1, 3],
            graph_layers: 1,
        }
    }

    fn vars_from(tape: &mut Tape, emb: Tensor, kernels: Vec<(usize, Tensor)>) -> TextEncoderVars {
        TextEncoderVars {
            embedding: tape.leaf(emb, true),
            kernels: kernels.into_iter().map(|(c, k)| (c, tape.leaf(k, true))).collect(),
        }
    }

    fn seeded_tensor(shape: Vec<usize>, seed: u64, name: &str) -> Tensor {
        use rand::Rng;
        let mut rng = crate::rng::substream(seed, name);
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn all_pad_zero_embedding_gives_zero_matrix() {
        let dims = micro_dims();
        let mut tape = Tape::new();
        let vars = vars_from(
            &mut tape,
            Tensor::zeros(vec![6, 3]),
            vec![
                (1, seeded_tensor(vec![3, 2], 1, "t/k1")),
                (3, seeded_tensor(vec![9, 2], 1, "t/k3")),
            ],
        );
        let seq = TokenSequence::from_ids(&[], dims.l_d);
        let out = encode_text(&mut tape, &seq, &vars, &dims).unwrap();
        assert_eq!(tape.value(out).shape(), &[4, 4]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_kernel_is_per_token_linear() {
        // with only C=1, output row i depends only on token i
        let mut dims = micro_dims();
        dims.kernel_sizes = vec![1];
        dims.d_d = 2;
        let emb = seeded_tensor(vec![6, 3], 2, "t/emb");
        let k1 = seeded_tensor(vec![3, 2], 2, "t/k1");

        let run = |ids: &[u32]| {
            let mut tape = Tape::new();
            let vars = vars_from(&mut tape, emb.clone(), vec![(1, k1.clone())]);
            let seq = TokenSequence::from_ids(ids, dims.l_d);
            let out = encode_text(&mut tape, &seq, &vars, &dims).unwrap();
            tape.value(out).clone()
        };
        let a = run(&[2, 3, 4, 5]);
        let b = run(&[2, 5, 4, 5]); // only position 1 changed
        assert_eq!(a.row(0), b.row(0));
        assert_ne!(a.row(1), b.row(1));
        assert_eq!(a.row(2), b.row(2));
        assert_eq!(a.row(3), b.row(3));
    }

    #[test]
    fn width_three_kernel_matches_direct_convolution() {
        // output row 1 = sum over offsets of emb[row 0..=2] · kernel block
        let mut dims = micro_dims();
        dims.kernel_sizes = vec![3];
        dims.d_d = 2;
        let emb = seeded_tensor(vec![6, 3], 3, "t/emb");
        let k3 = seeded_tensor(vec![9, 2], 3, "t/k3");
        let ids = [2u32, 3, 4, 5];

        let mut tape = Tape::new();
        let vars = vars_from(&mut tape, emb.clone(), vec![(3, k3.clone())]);
        let seq = TokenSequence::from_ids(&ids, dims.l_d);
        let out = encode_text(&mut tape, &seq, &vars, &dims).unwrap();

        for j in 0..2 {
            let mut expect = 0.0;
            for (block, &tok) in ids[0..3].iter().enumerate() {
                for e in 0..3 {
                    expect += emb.at(tok as usize, e) * k3.at(block * 3 + e, j);
                }
            }
            assert!((tape.value(out).at(1, j) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shape_fixed_regardless_of_true_length() {
        let dims = micro_dims();
        for ids in [vec![], vec![2], vec![2, 3, 4, 5, 2, 3, 4, 5]] {
            let mut tape = Tape::new();
            let vars = vars_from(
                &mut tape,
                seeded_tensor(vec![6, 3], 4, "t/emb"),
                vec![
                    (1, seeded_tensor(vec![3, 2], 4, "t/k1")),
                    (3, seeded_tensor(vec![9, 2], 4, "t/k3")),
                ],
            );
            let seq = TokenSequence::from_ids(&ids, dims.l_d);
            let out = encode_text(&mut tape, &seq, &vars, &dims).unwrap();
            assert_eq!(tape.value(out).shape(), &[dims.l_d, dims.d_d]);
        }
    }

    #[test]
    fn out_of_range_id_rejected() {
        let dims = micro_dims();
        let mut tape = Tape::new();
        let vars = vars_from(
            &mut tape,
            Tensor::zeros(vec![6, 3]),
            vec![(1, Tensor::zeros(vec![3, 4]))],
        );
        let seq = TokenSequence::from_ids(&[9], dims.l_d);
        assert!(encode_text(&mut tape, &seq, &vars, &dims).is_err());
    }

    #[test]
    fn vocab_permutation_leaves_output_unchanged() {
        // permute ids consistently in embedding rows and sequences
        let dims = micro_dims();
        let emb = seeded_tensor(vec![6, 3], 5, "t/emb");
        let kernels = vec![
            (1usize, seeded_tensor(vec![3, 2], 5, "t/k1")),
            (3usize, seeded_tensor(vec![9, 2], 5, "t/k3")),
        ];
        let ids = [2u32, 4, 3, 2];

        let perm: [u32; 6] = [0, 1, 4, 2, 5, 3]; // keeps PAD/UNK fixed
        let mut emb_p = Tensor::zeros(vec![6, 3]);
        for old in 0..6 {
            let new = perm[old] as usize;
            for e in 0..3 {
                emb_p.data_mut()[new * 3 + e] = emb.at(old, e);
            }
        }
        let ids_p: Vec<u32> = ids.iter().map(|&i| perm[i as usize]).collect();

        let run = |emb: Tensor, ids: &[u32]| {
            let mut tape = Tape::new();
            let vars = vars_from(&mut tape, emb, kernels.clone());
            let seq = TokenSequence::from_ids(ids, dims.l_d);
            let out = encode_text(&mut tape, &seq, &vars, &dims).unwrap();
            tape.value(out).clone()
        };
        let base = run(emb, &ids);
        let permuted = run(emb_p, &ids_p);
        assert_eq!(base, permuted);
    }

    #[test]
    fn gradients_reach_embeddings_and_kernels() {
        let dims = micro_dims();
        let emb = seeded_tensor(vec![6, 3], 6, "t/emb");
        let k1 = seeded_tensor(vec![3, 2], 6, "t/k1");
        let k3 = seeded_tensor(vec![9, 2], 6, "t/k3");
        let seq = TokenSequence::from_ids(&[2, 3, 4], dims.l_d);

        let errs = crate::numerics::grad_check_many(
            |tape, vars| {
                let tv = TextEncoderVars {
                    embedding: vars[0],
                    kernels: vec![(1, vars[1]), (3, vars[2])],
                };
                let out = encode_text(tape, &seq, &tv, &dims)?;
                let sq = tape.mul(out, out)?;
                sum_all(tape, sq)
            },
            &[emb, k1, k3],
            crate::numerics::DEFAULT_STEP,
        )
        .unwrap();
        for (k, e) in errs.iter().enumerate() {
            assert!(*e < 1e-6, "group {k} err = {e}");
        }
    }
}
