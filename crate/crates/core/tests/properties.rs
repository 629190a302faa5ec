//! Property tests over the numeric core and the model's distributions.

use mftrr_core::numerics::{sum_all, Tape, Tensor};
use proptest::prelude::*;

fn finite_mat(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |data| Tensor::new(vec![rows, cols], data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_row_shifts(x in finite_mat(4, 5), shift in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let s = tape.softmax_rows(v);
        for i in 0..4 {
            let sum: f64 = tape.value(s).row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }

        // adding a constant to a whole row leaves that row's softmax unchanged
        let shifted = Tensor::new(
            vec![4, 5],
            x.data()
                .iter()
                .enumerate()
                .map(|(k, &v)| if k / 5 == 1 { v + shift } else { v })
                .collect(),
        )
        .unwrap();
        let v2 = tape.constant(shifted);
        let s2 = tape.softmax_rows(v2);
        prop_assert!(tape.value(s).max_abs_diff(tape.value(s2)) < 1e-9);
    }

    #[test]
    fn matmul_is_associative(
        a in finite_mat(3, 4),
        b in finite_mat(4, 2),
        c in finite_mat(2, 5),
    ) {
        let mut tape = Tape::new();
        let (va, vb, vc) = (tape.constant(a), tape.constant(b), tape.constant(c));
        let left = {
            let ab = tape.matmul(va, vb).unwrap();
            tape.matmul(ab, vc).unwrap()
        };
        let right = {
            let bc = tape.matmul(vb, vc).unwrap();
            tape.matmul(va, bc).unwrap()
        };
        prop_assert!(tape.value(left).max_abs_diff(tape.value(right)) < 1e-9);
    }

    #[test]
    fn ops_preserve_finiteness(x in finite_mat(3, 3), y in finite_mat(3, 3), c in -10.0f64..10.0) {
        let mut tape = Tape::new();
        let (vx, vy) = (tape.constant(x), tape.constant(y));
        let results = [
            tape.matmul(vx, vy).unwrap(),
            tape.add(vx, vy).unwrap(),
            tape.mul(vx, vy).unwrap(),
            tape.softmax_rows(vx),
            tape.tanh(vx),
            tape.sigmoid(vy),
            tape.scale(vx, c),
            tape.transpose(vy).unwrap(),
            tape.sum_rows(vx).unwrap(),
            tape.mean_rows(vy).unwrap(),
        ];
        for r in results {
            prop_assert!(tape.value(r).is_finite());
        }
    }

    #[test]
    fn forward_and_backward_are_bitwise_deterministic(x in finite_mat(3, 4)) {
        let run = |x: &Tensor| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let v = tape.leaf(x.clone(), true);
            let s = tape.softmax_rows(v);
            let t = tape.tanh(s);
            let total = sum_all(&mut tape, t).unwrap();
            tape.backward(total).unwrap();
            (
                tape.value(total).data().to_vec(),
                tape.grad(v).unwrap().data().to_vec(),
            )
        };
        let (v1, g1) = run(&x);
        let (v2, g2) = run(&x);
        prop_assert!(v1.iter().zip(&v2).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

// ── distribution normalization across random forward passes ──────────

#[test]
fn every_internal_distribution_row_sums_to_one() {
    use mftrr_core::config::ModelDims;
    use mftrr_core::encoders::{ImageBackend, ImageInput, TokenSequence};
    use mftrr_core::ranking::{AblationMask, ItemInput, Model, ParamSet};
    use rand::Rng;

    let dims = ModelDims {
        vocab_size: 30,
        l_d: 4,
        l_i: 3,
        d_emb: 5,
        d_d: 6,
        d_i: 4,
        d_c: 6,
        kernel_sizes: vec![1, 3],
        graph_layers: 2,
    };
    let backend = ImageBackend::Passthrough;

    for seed in 0..20u64 {
        let params = ParamSet::init(&dims, &backend, seed).unwrap();
        let model = Model::new(&dims, &backend, AblationMask::full(), &params).unwrap();
        let mut rng = mftrr_core::rng::substream(seed, "props/forward");
        let mut item = || {
            let ids: Vec<u32> = (0..dims.l_d).map(|_| rng.gen_range(2..30)).collect();
            let data: Vec<f64> =
                (0..dims.l_i * dims.d_i).map(|_| rng.gen_range(-2.0..2.0)).collect();
            ItemInput {
                tokens: TokenSequence::from_ids(&ids, dims.l_d),
                image: ImageInput::Features(
                    Tensor::new(vec![dims.l_i, dims.d_i], data).unwrap(),
                ),
            }
        };
        let (_, trace) = model.score_traced(&item(), &item()).unwrap();

        let mut attn = 0;
        let mut adj = 0;
        let mut retrieval = 0;
        let mut coherence = 0;
        for (name, t) in trace.entries() {
            let is_distribution = name.starts_with("semantic.attn.")
                || name.contains(".adj.")
                || name == "evidence.retrieval.alpha"
                || name == "evidence.coherence.weights";
            if !is_distribution {
                continue;
            }
            match () {
                _ if name.starts_with("semantic.attn.") => attn += 1,
                _ if name.contains(".adj.") => adj += 1,
                _ if name == "evidence.retrieval.alpha" => retrieval += 1,
                _ => coherence += 1,
            }
            for i in 0..t.rows() {
                let sum: f64 = t.row(i).iter().sum();
                assert!(
                    (sum - 1.0).abs() < 1e-9,
                    "seed {seed}: {name} row {i} sums to {sum}"
                );
            }
        }
        assert_eq!(attn, 5, "five attention maps per pass");
        assert_eq!(adj, 3 * dims.graph_layers, "three graphs, L layers each");
        assert_eq!(retrieval, 1);
        assert_eq!(coherence, 1);
    }
}
