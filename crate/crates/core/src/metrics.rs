//! Ranking metrics: NDCG@k and MAP over ranked post lists.

use crate::data::{TopicPostRecord, MAX_LABEL};
use crate::error::{Error, Result};
use crate::ranking::Model;
use rand::seq::SliceRandom;
use rand::Rng;

/// Binary relevance cut for MAP over the five graded labels.
pub const MAP_RELEVANCE_THRESHOLD: u8 = 3;

/// Posts of one topic in descending predicted-score order, ground-truth
/// labels attached. Ties keep the original input order (stable sort), so
/// identical scores reproduce the input ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    entries: Vec<(f64, u8)>,
    /// original input index of each ranked entry
    order: Vec<usize>,
}

impl RankedList {
    pub fn from_scored(scored: &[(f64, u8)]) -> Result<Self> {
        if scored.is_empty() {
            return Err(Error::invalid("ranked list must be nonempty"));
        }
        for &(s, label) in scored {
            if !s.is_finite() {
                return Err(Error::invalid("non-finite predicted score"));
            }
            if label > MAX_LABEL {
                return Err(Error::invalid(format!("label {label} out of range 0..={MAX_LABEL}")));
            }
        }
        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored[b].0.partial_cmp(&scored[a].0).expect("finite scores"));
        let entries = order.iter().map(|&i| scored[i]).collect();
        Ok(RankedList { entries, order })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty lists
    }

    /// Labels in predicted-rank order.
    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|&(_, l)| l).collect()
    }

    /// Scores in predicted-rank order.
    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|&(s, _)| s).collect()
    }

    /// Original input index of each ranked position.
    pub fn ranked_indices(&self) -> &[usize] {
        &self.order
    }
}

fn gain(label: u8) -> f64 {
    (1u32 << label) as f64 - 1.0 // 2^label - 1
}

fn dcg(labels: &[u8], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &l)| gain(l) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k with exponential gain. An all-zero-label list scores 1.0: no
/// ranking of it can be wrong.
pub fn ndcg_at_k(list: &RankedList, k: usize) -> f64 {
    assert!(k >= 1, "ndcg_at_k needs k >= 1");
    let labels = list.labels();
    let mut ideal = labels.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        return 1.0;
    }
    dcg(&labels, k) / idcg
}

/// MAP over binarized relevance (label >= `rel_threshold`). Per list,
/// AP = mean over relevant ranks of precision at that rank; lists with no
/// relevant post contribute AP = 0 and are counted.
pub fn mean_average_precision(lists: &[RankedList], rel_threshold: u8) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::invalid("MAP over an empty list collection"));
    }
    if rel_threshold < 1 || rel_threshold > MAX_LABEL {
        return Err(Error::invalid(format!(
            "relevance threshold {rel_threshold} outside 1..={MAX_LABEL}"
        )));
    }
    let mut total = 0.0;
    for list in lists {
        let mut relevant_seen = 0usize;
        let mut precision_sum = 0.0;
        for (rank0, &label) in list.labels().iter().enumerate() {
            if label >= rel_threshold {
                relevant_seen += 1;
                precision_sum += relevant_seen as f64 / (rank0 + 1) as f64;
            }
        }
        if relevant_seen > 0 {
            total += precision_sum / relevant_seen as f64;
        }
    }
    Ok(total / lists.len() as f64)
}

/// Mean NDCG@k a uniformly random ranker achieves on these label lists,
/// estimated over `trials` shuffles of every list.
pub fn random_ranker_baseline(
    label_lists: &[Vec<u8>],
    k: usize,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if label_lists.is_empty() || trials == 0 {
        return Err(Error::invalid("baseline needs lists and at least one trial"));
    }
    let mut total = 0.0;
    for _ in 0..trials {
        let mut per_topic = 0.0;
        for labels in label_lists {
            let mut shuffled = labels.clone();
            shuffled.shuffle(rng);
            let scored: Vec<(f64, u8)> = shuffled
                .iter()
                .enumerate()
                .map(|(i, &l)| (-(i as f64), l))
                .collect();
            per_topic += ndcg_at_k(&RankedList::from_scored(&scored)?, k);
        }
        total += per_topic / label_lists.len() as f64;
    }
    Ok(total / trials as f64)
}

/// One metrics-report line: tab-separated percentages with two decimals.
pub fn report_line(map: f64, ndcg3: f64, ndcg5: f64) -> String {
    format!("{:.2}\t{:.2}\t{:.2}", map * 100.0, ndcg3 * 100.0, ndcg5 * 100.0)
}

/// Score every post of a topic and rank them (stable descending order).
pub fn rank_posts(model: &Model<'_>, topic: &TopicPostRecord) -> Result<RankedList> {
    let scores = model.score_record(topic)?;
    let scored: Vec<(f64, u8)> =
        scores.iter().zip(&topic.posts).map(|(&s, p)| (s, p.label)).collect();
    RankedList::from_scored(&scored)
}

/// MAP, NDCG@3, NDCG@5 over the listed topics.
pub fn evaluate_topics(
    model: &Model<'_>,
    records: &[TopicPostRecord],
    indices: &[usize],
) -> Result<(f64, f64, f64)> {
    if indices.is_empty() {
        return Err(Error::invalid("no topics to evaluate"));
    }
    let lists = indices
        .iter()
        .map(|&i| rank_posts(model, &records[i]))
        .collect::<Result<Vec<_>>>()?;
    let map = mean_average_precision(&lists, MAP_RELEVANCE_THRESHOLD)?;
    let mean_ndcg = |k: usize| -> f64 {
        lists.iter().map(|l| ndcg_at_k(l, k)).sum::<f64>() / lists.len() as f64
    };
    Ok((map, mean_ndcg(3), mean_ndcg(5)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(scored: &[(f64, u8)]) -> RankedList {
        RankedList::from_scored(scored).unwrap()
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let rl = list(&[(3.0, 4), (2.0, 3), (1.0, 1)]);
        assert_eq!(ndcg_at_k(&rl, 3), 1.0);
    }

    #[test]
    fn all_zero_labels_score_one_by_convention() {
        let rl = list(&[(0.3, 0), (0.2, 0)]);
        assert_eq!(ndcg_at_k(&rl, 2), 1.0);
    }

    #[test]
    fn worst_first_two_post_example() {
        // labels [0, 4] ranked worst-first: DCG = 0 + 15/log2(3), IDCG = 15
        let rl = list(&[(1.0, 0), (0.5, 4)]);
        let expect = (15.0 / 3.0f64.log2()) / 15.0;
        assert!((ndcg_at_k(&rl, 2) - expect).abs() < 1e-9);
        assert!((ndcg_at_k(&rl, 2) - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn map_single_list_examples() {
        let top = list(&[(2.0, 4), (1.0, 0)]);
        assert_eq!(mean_average_precision(&[top], 3).unwrap(), 1.0);

        let bottom = list(&[(2.0, 0), (1.0, 4)]);
        assert_eq!(mean_average_precision(&[bottom], 3).unwrap(), 0.5);

        let none = list(&[(2.0, 0), (1.0, 1)]);
        assert_eq!(mean_average_precision(&[none], 3).unwrap(), 0.0);
    }

    #[test]
    fn map_rejects_empty_and_bad_threshold() {
        assert!(mean_average_precision(&[], 3).is_err());
        let rl = list(&[(1.0, 2)]);
        assert!(mean_average_precision(&[rl.clone()], 0).is_err());
        assert!(mean_average_precision(&[rl], 5).is_err());
    }

    #[test]
    fn stable_ties_keep_input_order() {
        let rl = list(&[(0.5, 1), (0.5, 2), (0.5, 3)]);
        assert_eq!(rl.ranked_indices(), &[0, 1, 2]);
        let rl = list(&[(0.1, 0), (0.9, 1), (0.5, 2)]);
        assert_eq!(rl.ranked_indices(), &[1, 2, 0]);
    }

    #[test]
    fn ndcg_invariant_under_strictly_increasing_score_transform() {
        use rand::Rng;
        let mut rng = crate::rng::substream(1, "test/metrics-transform");
        for _ in 0..50 {
            let scored: Vec<(f64, u8)> = (0..6)
                .map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(0..5) as u8))
                .collect();
            let transformed: Vec<(f64, u8)> =
                scored.iter().map(|&(s, l)| ((s * 3.0).exp() + 1.0, l)).collect();
            let a = list(&scored);
            let b = list(&transformed);
            for k in 1..=6 {
                assert!((ndcg_at_k(&a, k) - ndcg_at_k(&b, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixing_an_adjacent_inversion_never_lowers_ndcg() {
        use rand::Rng;
        let mut rng = crate::rng::substream(2, "test/metrics-swap");
        for _ in 0..200 {
            let labels: Vec<u8> = (0..5).map(|_| rng.gen_range(0..5) as u8).collect();
            let scored: Vec<(f64, u8)> =
                labels.iter().enumerate().map(|(i, &l)| (-(i as f64), l)).collect();
            let base = list(&scored);
            // find an adjacent pair out of label order and swap toward order
            for i in 0..labels.len() - 1 {
                if labels[i] < labels[i + 1] {
                    let mut fixed = labels.clone();
                    fixed.swap(i, i + 1);
                    let fixed_scored: Vec<(f64, u8)> =
                        fixed.iter().enumerate().map(|(j, &l)| (-(j as f64), l)).collect();
                    let better = list(&fixed_scored);
                    for k in 1..=5 {
                        assert!(ndcg_at_k(&better, k) + 1e-12 >= ndcg_at_k(&base, k));
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn map_is_one_when_all_relevant_precede_all_irrelevant() {
        let lists = vec![
            list(&[(5.0, 4), (4.0, 3), (1.0, 2), (0.5, 0)]),
            list(&[(5.0, 3), (1.0, 1)]),
        ];
        assert_eq!(mean_average_precision(&lists, 3).unwrap(), 1.0);
    }

    #[test]
    fn report_line_format() {
        assert_eq!(report_line(0.9696, 0.9362, 0.9426), "96.96\t93.62\t94.26");
    }
}
