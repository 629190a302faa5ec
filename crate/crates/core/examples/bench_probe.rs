// temporary tuning probe: replicate the learnability acceptance path
use mftrr_core::config::ModelDims;
use mftrr_core::data::{generate_synthetic, split_dataset, SynthConfig};
use mftrr_core::encoders::ImageBackend;
use mftrr_core::metrics::{evaluate_topics, random_ranker_baseline};
use mftrr_core::ranking::{train, AblationMask, Model, TrainConfig};

fn run_seed(tag: &str, seed: u64, noise: [f64; 5], d_i: usize, epochs: usize) {
    let synth = SynthConfig {
        vocab_size: 300,
        l_d: 16,
        l_i: 8,
        d_i,
        topics: 125,
        posts_per_topic: 8,
        key_tokens: 16,
        overlap_per_label: [0.0, 0.25, 0.5, 0.75, 1.0],
        noise_per_label: noise,
        seed,
    };
    let records = generate_synthetic(&synth).unwrap();
    let split = split_dataset(records.len(), seed).unwrap();
    let dims = ModelDims {
        vocab_size: synth.vocab_size,
        l_d: synth.l_d,
        l_i: synth.l_i,
        d_emb: 24,
        d_d: 48,
        d_i,
        d_c: 32,
        kernel_sizes: vec![1, 3, 5],
        graph_layers: 2,
    };
    let backend = ImageBackend::Passthrough;
    let cfg = TrainConfig { epochs, seed, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let (best, log) = train(&records, &split, &dims, &backend, AblationMask::full(), &cfg).unwrap();
    let model = Model::new(&dims, &backend, AblationMask::full(), &best).unwrap();
    let (map, n3, n5) = evaluate_topics(&model, &records, &split.test).unwrap();
    let label_lists: Vec<Vec<u8>> = split
        .test
        .iter()
        .map(|&i| records[i].posts.iter().map(|p| p.label).collect())
        .collect();
    let mut rng = mftrr_core::rng::substream(seed, "acceptance/baseline");
    let base = random_ranker_baseline(&label_lists, 3, 200, &mut rng).unwrap();
    let best_val = log.iter().map(|e| e.val_ndcg3).fold(0.0, f64::max);
    println!(
        "{tag} seed {seed}: test n3={n3:.4} (baseline {base:.4}) n5={n5:.4} map={map:.4} best_val={best_val:.4} {:?}",
        t0.elapsed()
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("A");
    for seed in [1u64, 2, 3] {
        match which {
            "A" => run_seed("A", seed, [1.2, 0.7, 0.4, 0.2, 0.05], 16, 10),
            _ => run_seed("B", seed, [1.0, 0.55, 0.3, 0.15, 0.03], 24, 10),
        }
    }
}
