//! Synthetic multimodal topic-post datasets, serialization, and splits.
//!
//! Each generated topic carries a set of key tokens and a random image
//! feature matrix. A post's label controls how many key tokens it copies
//! (in place, at the topic's positions) and how much gaussian noise
//! separates its image features from the topic's, so quality is
//! recoverable exactly from the topic-post relations the model computes —
//! and from nothing else. Keys differ per topic; no token is predictive
//! of quality on its own.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::substream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const LABEL_LEVELS: usize = 5;
pub const MAX_LABEL: u8 = (LABEL_LEVELS - 1) as u8;

#[derive(Debug, Clone, PartialEq)]
pub struct PostRecord {
    pub tokens: Vec<u32>,
    /// l_i × d_i feature rows.
    pub image: Tensor,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicPostRecord {
    pub id: u64,
    pub tokens: Vec<u32>,
    pub image: Tensor,
    pub posts: Vec<PostRecord>,
}

/// Synthetic-generator configuration. Overlap rates must strictly increase
/// with the label and noise scales strictly decrease, so a higher label
/// always means more topic-token overlap and better-aligned image features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub l_d: usize,
    pub l_i: usize,
    pub d_i: usize,
    pub topics: usize,
    pub posts_per_topic: usize,
    /// Key tokens planted per topic.
    pub key_tokens: usize,
    pub overlap_per_label: [f64; LABEL_LEVELS],
    pub noise_per_label: [f64; LABEL_LEVELS],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 300,
            l_d: 16,
            l_i: 8,
            d_i: 16,
            topics: 125,
            posts_per_topic: 8,
            key_tokens: 16,
            overlap_per_label: [0.0, 0.25, 0.5, 0.75, 1.0],
            noise_per_label: [1.2, 0.7, 0.4, 0.2, 0.05],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < self.key_tokens + 2 {
            return Err(Error::invalid("vocab_size too small for key_tokens plus reserved ids"));
        }
        if self.key_tokens == 0 || self.key_tokens > self.l_d {
            return Err(Error::invalid("key_tokens must be in 1..=l_d"));
        }
        if self.posts_per_topic < 2 {
            return Err(Error::invalid("posts_per_topic must be >= 2"));
        }
        if self.topics == 0 || self.l_d == 0 || self.l_i == 0 || self.d_i == 0 {
            return Err(Error::invalid("topics and dimensions must be positive"));
        }
        for w in self.overlap_per_label.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("overlap_per_label must strictly increase with label"));
            }
        }
        if self.overlap_per_label[0] < 0.0 || self.overlap_per_label[LABEL_LEVELS - 1] > 1.0 {
            return Err(Error::invalid("overlap_per_label must lie in [0, 1]"));
        }
        for w in self.noise_per_label.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::invalid("noise_per_label must strictly decrease with label"));
            }
        }
        if self.noise_per_label[LABEL_LEVELS - 1] < 0.0 {
            return Err(Error::invalid("noise scales must be nonnegative"));
        }
        Ok(())
    }
}

fn random_token(rng: &mut impl Rng, vocab_size: usize) -> u32 {
    rng.gen_range(2..vocab_size as u32)
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// Generate `cfg.topics` topics, each with its own derived seed stream.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<TopicPostRecord>> {
    cfg.validate()?;
    (0..cfg.topics)
        .map(|t| generate_topic(cfg, t as u64))
        .collect()
}

fn generate_topic(cfg: &SynthConfig, topic_id: u64) -> Result<TopicPostRecord> {
    let mut rng = substream(cfg.seed, &format!("synth/topic/{topic_id}"));

    // distinct key tokens
    let mut pool: Vec<u32> = (2..cfg.vocab_size as u32).collect();
    pool.shuffle(&mut rng);
    let keys: Vec<u32> = pool[..cfg.key_tokens].to_vec();

    // topic text holds every key token, padded with random fill, shuffled;
    // key positions are tracked so posts can copy keys in place
    let mut slots: Vec<(u32, bool)> = keys.iter().map(|&k| (k, true)).collect();
    while slots.len() < cfg.l_d {
        slots.push((random_token(&mut rng, cfg.vocab_size), false));
    }
    slots.shuffle(&mut rng);
    let topic_tokens: Vec<u32> = slots.iter().map(|&(t, _)| t).collect();
    let key_positions: Vec<usize> = slots
        .iter()
        .enumerate()
        .filter_map(|(i, &(_, is_key))| is_key.then_some(i))
        .collect();

    let topic_image = Tensor::new(
        vec![cfg.l_i, cfg.d_i],
        gaussian_matrix(&mut rng, cfg.l_i, cfg.d_i, 1.0),
    )?;

    // labels roughly uniform, forced to span at least two values
    let mut labels: Vec<u8> = (0..cfg.posts_per_topic)
        .map(|_| rng.gen_range(0..LABEL_LEVELS as u8))
        .collect();
    if labels.iter().all(|&l| l == labels[0]) {
        let shift = rng.gen_range(1..LABEL_LEVELS as u8);
        let last = labels.last_mut().expect("posts_per_topic >= 2");
        *last = (*last + shift) % LABEL_LEVELS as u8;
    }

    let posts = labels
        .into_iter()
        .map(|label| {
            let overlap = cfg.overlap_per_label[label as usize];
            let copied = (overlap * cfg.key_tokens as f64).round() as usize;
            // copy a random subset of key tokens at their topic positions;
            // every other position is a fresh random token
            let mut chosen = key_positions.clone();
            chosen.shuffle(&mut rng);
            chosen.truncate(copied);
            let tokens: Vec<u32> = (0..cfg.l_d)
                .map(|i| {
                    if chosen.contains(&i) {
                        topic_tokens[i]
                    } else {
                        random_token(&mut rng, cfg.vocab_size)
                    }
                })
                .collect();

            let noise = cfg.noise_per_label[label as usize];
            let mut image_data = topic_image.data().to_vec();
            for (v, z) in image_data
                .iter_mut()
                .zip(gaussian_matrix(&mut rng, cfg.l_i, cfg.d_i, 1.0))
            {
                *v += noise * z;
            }
            Ok(PostRecord {
                tokens,
                image: Tensor::new(vec![cfg.l_i, cfg.d_i], image_data)?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TopicPostRecord { id: topic_id, tokens: topic_tokens, image: topic_image, posts })
}

/// Number of post token positions holding a token that appears in the
/// topic text. The trivial oracle ranker orders posts by this count.
pub fn token_overlap_count(topic_tokens: &[u32], post_tokens: &[u32]) -> usize {
    let topic_set: std::collections::HashSet<u32> = topic_tokens.iter().copied().collect();
    post_tokens.iter().filter(|t| topic_set.contains(t)).count()
}

// ── Serialization: JSON Lines with a sidecar header ──────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub vocab_size: usize,
    #[serde(rename = "l_D")]
    pub l_d: usize,
    #[serde(rename = "l_I")]
    pub l_i: usize,
    #[serde(rename = "d_I")]
    pub d_i: usize,
    pub version: u32,
}

#[derive(Serialize, Deserialize)]
struct TopicJson {
    id: u64,
    topic_tokens: Vec<u32>,
    topic_image: Vec<f64>,
    posts: Vec<PostJson>,
}

#[derive(Serialize, Deserialize)]
struct PostJson {
    tokens: Vec<u32>,
    image: Vec<f64>,
    label: u8,
}

pub fn save_dataset(
    records: &[TopicPostRecord],
    header: &DatasetHeader,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let hjson = serde_json::to_string(header).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(f, "{hjson}")?;
    for r in records {
        let row = TopicJson {
            id: r.id,
            topic_tokens: r.tokens.clone(),
            topic_image: r.image.data().to_vec(),
            posts: r
                .posts
                .iter()
                .map(|p| PostJson {
                    tokens: p.tokens.clone(),
                    image: p.image.data().to_vec(),
                    label: p.label,
                })
                .collect(),
        };
        let line = serde_json::to_string(&row).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<TopicPostRecord>)> {
    let display = path.as_ref().display().to_string();
    let parse_err = |line: usize, msg: String| Error::DatasetParse { path: display.clone(), line, msg };

    let f = std::fs::File::open(&path)?;
    let mut lines = BufReader::new(f).lines().enumerate();

    let header: DatasetHeader = match lines.next() {
        Some((_, Ok(text))) => serde_json::from_str(&text)
            .map_err(|e| parse_err(1, format!("bad header: {e}")))?,
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(parse_err(1, "empty dataset file".into())),
    };
    if header.version != 1 {
        return Err(parse_err(1, format!("unsupported version {}", header.version)));
    }

    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let row: TopicJson =
            serde_json::from_str(&text).map_err(|e| parse_err(lineno, e.to_string()))?;
        records.push(validate_topic(row, &header).map_err(|msg| parse_err(lineno, msg))?);
    }
    Ok((header, records))
}

fn validate_topic(row: TopicJson, header: &DatasetHeader) -> std::result::Result<TopicPostRecord, String> {
    let check_tokens = |tokens: &[u32], what: &str| -> std::result::Result<(), String> {
        if tokens.len() != header.l_d {
            return Err(format!("{what} has {} tokens, expected l_D = {}", tokens.len(), header.l_d));
        }
        if let Some(&id) = tokens.iter().find(|&&id| id as usize >= header.vocab_size) {
            return Err(format!("{what} token id {id} out of range for vocab {}", header.vocab_size));
        }
        Ok(())
    };
    let image_of = |flat: Vec<f64>, what: &str| -> std::result::Result<Tensor, String> {
        if flat.len() != header.l_i * header.d_i {
            return Err(format!(
                "{what} image has {} values, expected l_I × d_I = {}",
                flat.len(),
                header.l_i * header.d_i
            ));
        }
        Tensor::new(vec![header.l_i, header.d_i], flat).map_err(|e| e.to_string())
    };

    check_tokens(&row.topic_tokens, "topic")?;
    let image = image_of(row.topic_image, "topic")?;
    if row.posts.is_empty() {
        return Err("topic has no posts".into());
    }
    let mut posts = Vec::with_capacity(row.posts.len());
    for (k, p) in row.posts.into_iter().enumerate() {
        let what = format!("post {k}");
        check_tokens(&p.tokens, &what)?;
        if p.label > MAX_LABEL {
            return Err(format!("{what} label {} out of range 0..={MAX_LABEL}", p.label));
        }
        posts.push(PostRecord { tokens: p.tokens, image: image_of(p.image, &what)?, label: p.label });
    }
    Ok(TopicPostRecord { id: row.id, tokens: row.topic_tokens, image, posts })
}

// ── Splits ───────────────────────────────────────────────────────────

/// Index lists into the record slice: disjoint, jointly exhaustive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn of(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Seeded shuffle, then 20% of all topics to test and 20% of the remaining
/// pool to validation (64/16/20 overall). Topics never straddle splits.
pub fn split_dataset(n_topics: usize, seed: u64) -> Result<DatasetSplit> {
    if n_topics < 5 {
        return Err(Error::invalid(format!("need at least 5 topics to split, got {n_topics}")));
    }
    let mut order: Vec<usize> = (0..n_topics).collect();
    order.shuffle(&mut substream(seed, "split"));

    let n_test = ((n_topics as f64 * 0.2).round() as usize).max(1);
    let pool = n_topics - n_test;
    let n_val = ((pool as f64 * 0.2).round() as usize).max(1);
    if n_test + n_val >= n_topics {
        return Err(Error::invalid("too few topics for a nonempty train split"));
    }

    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut val: Vec<usize> = order[n_test..n_test + n_val].to_vec();
    let mut train: Vec<usize> = order[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(DatasetSplit { train, val, test })
}
