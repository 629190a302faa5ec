//! Command implementations behind the binary, callable from tests.

use crate::config::RunConfig;
use mftrr_core::config::ModelDims;
use mftrr_core::data::{
    generate_synthetic, load_dataset, save_dataset, split_dataset, DatasetHeader, DatasetSplit,
    TopicPostRecord,
};
use mftrr_core::encoders::{ImageBackend, ImageInput, TinyConvSpec, TokenSequence};
use mftrr_core::metrics::{evaluate_topics, rank_posts, report_line};
use mftrr_core::numerics::Tensor;
use mftrr_core::ranking::{
    grad_check_score, train, AblationMask, EpochStats, ItemInput, Model, ParamSet,
};
use mftrr_core::rng::substream;
use mftrr_core::{Error, Result};
use rand::Rng;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Data-side dimensions come from the dataset header; model-side widths
/// from the run config.
fn dims_for(header: &DatasetHeader, cfg: &RunConfig) -> ModelDims {
    ModelDims {
        vocab_size: header.vocab_size,
        l_d: header.l_d,
        l_i: header.l_i,
        d_i: header.d_i,
        d_emb: cfg.d_emb,
        d_d: cfg.d_d,
        d_c: cfg.d_c,
        kernel_sizes: cfg.kernel_sizes.clone(),
        graph_layers: cfg.graph_layers,
    }
}

fn load(data: &Path) -> Result<(DatasetHeader, Vec<TopicPostRecord>)> {
    load_dataset(data)
}

// ── gen-data ─────────────────────────────────────────────────────────

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<String> {
    let synth = cfg.synth_config();
    let records = generate_synthetic(&synth)?;
    let header = DatasetHeader {
        vocab_size: synth.vocab_size,
        l_d: synth.l_d,
        l_i: synth.l_i,
        d_i: synth.d_i,
        version: 1,
    };
    save_dataset(&records, &header, out)?;

    let split = split_dataset(records.len(), cfg.seed)?;
    let count = |idx: &[usize]| -> (usize, usize) {
        (idx.len(), idx.iter().map(|&i| records[i].posts.len()).sum())
    };
    let (tt, tp) = count(&split.train);
    let (vt, vp) = count(&split.val);
    let (st, sp) = count(&split.test);
    Ok(format!(
        "#T/#P total: {}/{}\n#T/#P train+dev: {}/{} (train {tt}/{tp}, dev {vt}/{vp})\n#T/#P test: {st}/{sp}",
        records.len(),
        records.iter().map(|r| r.posts.len()).sum::<usize>(),
        tt + vt,
        tp + vp,
    ))
}

// ── train ────────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochStats>,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

pub fn epoch_log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".epochs.csv");
    checkpoint.with_file_name(name)
}

fn write_epoch_log(path: &Path, log: &[EpochStats]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,loss,MAP,NDCG@3,NDCG@5")?;
    for e in log {
        writeln!(f, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_map, e.val_ndcg3, e.val_ndcg5)?;
    }
    Ok(())
}

pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    ablate: &str,
) -> Result<TrainOutcome> {
    let mask = AblationMask::variant(ablate)?;
    let (header, records) = load(data)?;
    let dims = dims_for(&header, cfg);
    dims.validate()?;
    let split = split_dataset(records.len(), cfg.seed)?;
    let backend = ImageBackend::Passthrough;

    let (best, log) = train(&records, &split, &dims, &backend, mask, &cfg.train_config())?;
    best.save(checkpoint)?;
    let log_path = epoch_log_path(checkpoint);
    write_epoch_log(&log_path, &log)?;
    Ok(TrainOutcome { log, checkpoint: checkpoint.to_path_buf(), log_path })
}

// ── eval ─────────────────────────────────────────────────────────────

pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    split_name: &str,
    ablate: &str,
) -> Result<String> {
    let mask = AblationMask::variant(ablate)?;
    let (header, records) = load(data)?;
    let dims = dims_for(&header, cfg);
    let split = split_dataset(records.len(), cfg.seed)?;
    let indices = split
        .of(split_name)
        .ok_or_else(|| Error::invalid(format!("unknown split {split_name:?} (train|val|test)")))?;
    let backend = ImageBackend::Passthrough;
    let params = ParamSet::load(checkpoint, &dims, &backend)?;
    let model = Model::new(&dims, &backend, mask, &params)?;
    let (map, n3, n5) = evaluate_topics(&model, &records, indices)?;
    Ok(report_line(map, n3, n5))
}

// ── rank ─────────────────────────────────────────────────────────────

/// The topic file uses the dataset format: header line plus exactly one
/// topic line. Returns (post index, score) in descending score order.
pub fn cmd_rank(cfg: &RunConfig, checkpoint: &Path, topic_file: &Path) -> Result<Vec<(usize, f64)>> {
    let (header, records) = load(topic_file)?;
    if records.len() != 1 {
        return Err(Error::invalid(format!(
            "rank expects exactly one topic, file has {}",
            records.len()
        )));
    }
    let dims = dims_for(&header, cfg);
    let backend = ImageBackend::Passthrough;
    let params = ParamSet::load(checkpoint, &dims, &backend)?;
    let model = Model::new(&dims, &backend, AblationMask::full(), &params)?;
    let ranked = rank_posts(&model, &records[0])?;
    let scores = ranked.scores();
    Ok(ranked.ranked_indices().iter().copied().zip(scores).collect())
}

// ── ablate ───────────────────────────────────────────────────────────

pub struct AblationRow {
    pub variant: &'static str,
    pub map: f64,
    pub ndcg3: f64,
    pub ndcg5: f64,
}

/// Train and evaluate all seven variants under the same seed. The full
/// row ("none") follows exactly the cmd_train + cmd_eval code path.
pub fn cmd_ablate(
    cfg: &RunConfig,
    data: &Path,
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRow>> {
    let (header, records) = load(data)?;
    let dims = dims_for(&header, cfg);
    let split = split_dataset(records.len(), cfg.seed)?;
    let backend = ImageBackend::Passthrough;

    AblationMask::VARIANT_NAMES
        .iter()
        .map(|&variant| {
            progress(variant);
            let mask = AblationMask::variant(variant)?;
            let (best, _) = train(&records, &split, &dims, &backend, mask, &cfg.train_config())?;
            let model = Model::new(&dims, &backend, mask, &best)?;
            let (map, ndcg3, ndcg5) = evaluate_topics(&model, &records, &split.test)?;
            Ok(AblationRow { variant, map, ndcg3, ndcg5 })
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant\tMAP\tNDCG@3\tNDCG@5\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\n", r.variant, report_line(r.map, r.ndcg3, r.ndcg5)));
    }
    out
}

// ── grad-check ───────────────────────────────────────────────────────

pub struct GradCheckGroup {
    pub name: String,
    pub max_err: f64,
    pub worst_path: String,
}

pub struct GradCheckReport {
    pub groups: Vec<GradCheckGroup>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_err < self.tolerance)
    }

    pub fn worst(&self) -> &GradCheckGroup {
        self.groups
            .iter()
            .max_by(|a, b| a.max_err.partial_cmp(&b.max_err).expect("finite errors"))
            .expect("at least one group")
    }
}

fn group_of(path: &str) -> String {
    let parts: Vec<&str> = path.split('.').collect();
    match parts.as_slice() {
        ["text", ..] => "text".into(),
        ["image", ..] => "image".into(),
        ["semantic", "gate", g, ..] => format!("semantic.gate.{g}"),
        ["semantic", p, ..] => format!("semantic.{p}"),
        ["evidence", g, ..] => format!("evidence.{g}"),
        ["head", ..] => "head".into(),
        _ => path.into(),
    }
}

fn collect_groups(per_param: Vec<(String, f64)>, into: &mut Vec<GradCheckGroup>, prefix: &str) {
    for (path, err) in per_param {
        let name = format!("{prefix}{}", group_of(&path));
        match into.iter_mut().find(|g| g.name == name) {
            Some(g) => {
                if err > g.max_err {
                    g.max_err = err;
                    g.worst_path = path;
                }
            }
            None => into.push(GradCheckGroup { name, max_err: err, worst_path: path }),
        }
    }
}

/// Verify every parameter group of a micro model (l_d = 2, l_i = 2,
/// d_c = 8, two graph layers) against central finite differences, plus a
/// tiny-conv variant so the image front end's gradients are covered too.
pub fn cmd_grad_check(cfg: &RunConfig) -> Result<GradCheckReport> {
    const TOLERANCE: f64 = 1e-4;
    let mut rng = substream(cfg.seed, "gradcheck");
    let mut groups = Vec::new();

    // passthrough micro model
    let dims = ModelDims {
        vocab_size: 12,
        l_d: 2,
        l_i: 2,
        d_emb: 4,
        d_d: 6,
        d_i: 3,
        d_c: 8,
        kernel_sizes: vec![1, 3],
        graph_layers: 2,
    };
    let backend = ImageBackend::Passthrough;
    let params = ParamSet::init(&dims, &backend, cfg.seed)?;
    let feats = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| -> Result<Tensor> {
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    };
    let topic = ItemInput {
        tokens: TokenSequence::from_ids(&[2, 5], dims.l_d),
        image: ImageInput::Features(feats(&mut rng, dims.l_i, dims.d_i)?),
    };
    let post = ItemInput {
        tokens: TokenSequence::from_ids(&[5, 9], dims.l_d),
        image: ImageInput::Features(feats(&mut rng, dims.l_i, dims.d_i)?),
    };
    let per_param = grad_check_score(
        &dims,
        &backend,
        AblationMask::full(),
        &params,
        &topic,
        &post,
        1e-5,
    )?;
    collect_groups(per_param, &mut groups, "");

    // tiny-conv micro model: 8x8 raw image, scales 4/2/1 -> 21 rows
    let tc = TinyConvSpec { input_side: 8, strides: [2, 2, 2], channels: [2, 3, 2], kernel: 3 };
    let dims_tc = ModelDims { l_i: tc.output_rows(), ..dims.clone() };
    let backend_tc = ImageBackend::TinyConv(tc);
    let params_tc = ParamSet::init(&dims_tc, &backend_tc, cfg.seed)?;
    let raw = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<Tensor> {
        Tensor::new(vec![8, 8], (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let topic_tc = ItemInput {
        tokens: TokenSequence::from_ids(&[2, 5], dims_tc.l_d),
        image: ImageInput::Raw(raw(&mut rng)?),
    };
    let post_tc = ItemInput {
        tokens: TokenSequence::from_ids(&[5, 9], dims_tc.l_d),
        image: ImageInput::Raw(raw(&mut rng)?),
    };
    let per_param_tc = grad_check_score(
        &dims_tc,
        &backend_tc,
        AblationMask::full(),
        &params_tc,
        &topic_tc,
        &post_tc,
        1e-5,
    )?;
    collect_groups(
        per_param_tc.into_iter().filter(|(p, _)| p.starts_with("image.")).collect(),
        &mut groups,
        "tiny-conv/",
    );

    Ok(GradCheckReport { groups, tolerance: TOLERANCE })
}

pub fn grad_check_table(report: &GradCheckReport) -> String {
    let mut out = String::new();
    for g in &report.groups {
        let status = if g.max_err < report.tolerance { "ok" } else { "FAIL" };
        out.push_str(&format!(
            "{status}\t{}\tmax_rel_err={:.3e}\t(worst: {})\n",
            g.name, g.max_err, g.worst_path
        ));
    }
    let w = report.worst();
    out.push_str(&format!(
        "worst overall: {} at {} ({:.3e}, tolerance {:.0e})\n",
        w.name, w.worst_path, w.max_err, report.tolerance
    ));
    out
}

// ── shared helpers for the baseline example ──────────────────────────

/// Labels of every post in the given split, one list per topic.
pub fn split_label_lists(records: &[TopicPostRecord], split: &DatasetSplit, name: &str) -> Vec<Vec<u8>> {
    split
        .of(name)
        .unwrap_or(&[])
        .iter()
        .map(|&i| records[i].posts.iter().map(|p| p.label).collect())
        .collect()
}
