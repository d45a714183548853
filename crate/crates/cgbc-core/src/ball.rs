//! Granular-ball clustering: recursive farthest-pair splitting of an
//! embedded, labeled batch until every ball is small or purity-qualified.
//!
//! Splitting uses cosine distance; the two most distant samples anchor the
//! partition and every member joins the nearer anchor. A finalized ball is
//! summarized by its mean center, majority-vote label, and purity. The
//! fixed tie-breaks (majority tie -> 0, farthest-pair ties -> smallest id
//! pair, equidistant members -> first anchor, FIFO queue) make the whole
//! construction deterministic.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Coincident-point guard: a group whose farthest pair is at most this far
/// apart is finalized even when impure, so splitting always terminates.
pub const DEGENERATE_DISTANCE: f64 = 1e-12;

/// One embedded, labeled sample. `id` must equal the sample's position in
/// the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub embedding: Vec<f64>,
    pub label: u8,
}

/// A finalized cluster.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GranularBall {
    /// Ascending sample ids.
    pub member_ids: Vec<usize>,
    /// Arithmetic mean of member embeddings.
    pub center: Vec<f64>,
    /// Majority vote over member labels; ties go to 0.
    pub label: u8,
    /// Fraction of members carrying `label`.
    pub purity: f64,
}

/// All balls produced from one batch; members partition `0..sample_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSet {
    pub balls: Vec<GranularBall>,
    pub sample_count: usize,
}

impl BallSet {
    /// Index of the ball containing `sample_id`.
    pub fn ball_of(&self, sample_id: usize) -> Result<usize> {
        self.balls
            .iter()
            .position(|b| b.member_ids.binary_search(&sample_id).is_ok())
            .ok_or(Error::UnknownSampleId { id: sample_id })
    }

    /// The coarse-grained representation of a sample: its ball's center
    /// and label. This is the label-correction step — a minority sample
    /// inside a majority-opposite ball takes the majority label.
    pub fn coarse_representation(&self, sample_id: usize) -> Result<(&[f64], u8)> {
        let b = &self.balls[self.ball_of(sample_id)?];
        Ok((&b.center, b.label))
    }
}

/// Fraction of labels equal to the majority label (ties -> 0).
pub fn purity(labels: &[u8]) -> Result<f64> {
    let y = majority_label(labels)?;
    let hits = labels.iter().filter(|&&l| l == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Modal label; a tie resolves to 0.
pub fn majority_label(labels: &[u8]) -> Result<u8> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let zeros = labels.len() - ones;
    Ok(if ones > zeros { 1 } else { 0 })
}

/// `1 - a.b / (|a||b|)`, clamped into [0, 2]. Errors on zero-norm input.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let na = math::norm(a);
    let nb = math::norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let cos = (math::dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// The two most cosine-distant samples, as ids with `i < j`; exact ties
/// break to the smallest pair lexicographically.
pub fn farthest_pair(samples: &[Sample]) -> Result<(usize, usize)> {
    if samples.len() < 2 {
        return Err(Error::TooFewItems { needed: 2, got: samples.len() });
    }
    let norms: Vec<f64> = samples
        .iter()
        .map(|s| math::norm(&s.embedding))
        .collect();
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::ZeroNorm);
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| samples[i].id);

    let mut best = (samples[order[0]].id, samples[order[1]].id);
    let mut best_d = f64::NEG_INFINITY;
    for (oi, &i) in order.iter().enumerate() {
        for &j in &order[oi + 1..] {
            let d = pair_distance(&samples[i], &samples[j], norms[i], norms[j]);
            if d > best_d {
                best_d = d;
                best = (samples[i].id, samples[j].id);
            }
        }
    }
    Ok(best)
}

/// Same formula as [`cosine_distance`] with norms precomputed; the exact
/// same operation order keeps cached and fresh evaluations bitwise equal.
fn pair_distance(a: &Sample, b: &Sample, na: f64, nb: f64) -> f64 {
    let cos = (math::dot(&a.embedding, &b.embedding) / (na * nb)).clamp(-1.0, 1.0);
    1.0 - cos
}

/// Splits `samples` by proximity to the two anchor samples (given by id).
/// Equidistant members go to the first anchor; anchors keep themselves.
/// Returns ascending id lists.
pub fn divide(samples: &[Sample], anchor_i: usize, anchor_j: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let find = |id: usize| {
        samples
            .iter()
            .find(|s| s.id == id)
            .ok_or(Error::UnknownSampleId { id })
    };
    let ai = find(anchor_i)?;
    let aj = find(anchor_j)?;

    let mut group_i = Vec::new();
    let mut group_j = Vec::new();
    for s in samples {
        if s.id == anchor_i {
            group_i.push(s.id);
        } else if s.id == anchor_j {
            group_j.push(s.id);
        } else {
            let di = cosine_distance(&s.embedding, &ai.embedding)?;
            let dj = cosine_distance(&s.embedding, &aj.embedding)?;
            if di <= dj {
                group_i.push(s.id);
            } else {
                group_j.push(s.id);
            }
        }
    }
    group_i.sort_unstable();
    group_j.sort_unstable();
    Ok((group_i, group_j))
}

/// Adaptive multi-granularity clustering. A FIFO queue starts with the
/// whole batch; a popped group is finalized when it has at most two
/// members, its purity exceeds `pur`, or its farthest pair is within the
/// degenerate guard — otherwise it splits at its farthest pair and both
/// halves re-enter the queue. Balls are output in finalization order.
pub fn cluster(samples: &[Sample], pur: f64) -> Result<BallSet> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(pur > 0.0 && pur <= 1.0) {
        return Err(Error::InvalidPurity { pur });
    }
    let n = samples.len();
    let dim = samples[0].embedding.len();
    for (i, s) in samples.iter().enumerate() {
        if s.id != i {
            return Err(Error::InvalidSampleIds);
        }
        if s.embedding.len() != dim {
            return Err(Error::DimensionMismatch { left: dim, right: s.embedding.len() });
        }
        if s.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEmbedding);
        }
        if s.label > 1 {
            return Err(Error::NonBinaryLabel {
                id: alloc::format!("{i}"),
                value: i64::from(s.label),
            });
        }
    }

    let norms: Vec<f64> = samples.iter().map(|s| math::norm(&s.embedding)).collect();
    if norms.iter().any(|&v| v == 0.0) {
        return Err(Error::ZeroNorm);
    }

    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    queue.push_back((0..n).collect());
    let mut balls = Vec::new();

    while let Some(group) = queue.pop_front() {
        let labels: Vec<u8> = group.iter().map(|&i| samples[i].label).collect();
        let p = purity(&labels)?;
        if group.len() <= 2 || p > pur {
            balls.push(finalize(samples, &group, p)?);
            continue;
        }

        // Farthest pair within the group (ids ascend inside `group`).
        let mut best = (group[0], group[1]);
        let mut best_d = f64::NEG_INFINITY;
        for (gi, &i) in group.iter().enumerate() {
            for &j in &group[gi + 1..] {
                let d = pair_distance(&samples[i], &samples[j], norms[i], norms[j]);
                if d > best_d {
                    best_d = d;
                    best = (i, j);
                }
            }
        }

        if best_d <= DEGENERATE_DISTANCE {
            // All points coincide (up to the guard) with mixed labels;
            // splitting could never separate them.
            balls.push(finalize(samples, &group, p)?);
            continue;
        }

        let (ai, aj) = best;
        let mut group_i = Vec::new();
        let mut group_j = Vec::new();
        for &s in &group {
            if s == ai {
                group_i.push(s);
            } else if s == aj {
                group_j.push(s);
            } else {
                let di = pair_distance(&samples[s], &samples[ai], norms[s], norms[ai]);
                let dj = pair_distance(&samples[s], &samples[aj], norms[s], norms[aj]);
                if di <= dj {
                    group_i.push(s);
                } else {
                    group_j.push(s);
                }
            }
        }
        queue.push_back(group_i);
        queue.push_back(group_j);
    }

    Ok(BallSet { balls, sample_count: n })
}

fn finalize(samples: &[Sample], group: &[usize], purity: f64) -> Result<GranularBall> {
    let labels: Vec<u8> = group.iter().map(|&i| samples[i].label).collect();
    let label = majority_label(&labels)?;
    let dim = samples[group[0]].embedding.len();
    let mut center = alloc::vec![0.0; dim];
    for &i in group {
        for (c, v) in center.iter_mut().zip(&samples[i].embedding) {
            *c += v;
        }
    }
    let inv = 1.0 / group.len() as f64;
    for c in &mut center {
        *c *= inv;
    }
    Ok(GranularBall {
        member_ids: group.to_vec(),
        center,
        label,
        purity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn s(id: usize, e: &[f64], label: u8) -> Sample {
        Sample { id, embedding: e.to_vec(), label }
    }

    #[test]
    fn purity_hand_values() {
        assert_eq!(purity(&[1, 1, 1]).unwrap(), 1.0);
        assert!((purity(&[1, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        // Tie: majority is 0, purity = count(0)/n.
        assert_eq!(majority_label(&[0, 1]).unwrap(), 0);
        assert_eq!(purity(&[0, 1]).unwrap(), 0.5);
        assert!(purity(&[]).is_err());
    }

    #[test]
    fn majority_hand_values() {
        assert_eq!(majority_label(&[0, 0, 1]).unwrap(), 0);
        assert_eq!(majority_label(&[1, 1, 0]).unwrap(), 1);
        assert_eq!(majority_label(&[0, 1]).unwrap(), 0);
        assert!(majority_label(&[]).is_err());
    }

    #[test]
    fn cosine_distance_hand_values() {
        let a = [1.0, 0.0];
        assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-12);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(cosine_distance(&[0.0, 0.0], &a), Err(Error::ZeroNorm)));
    }

    #[test]
    fn farthest_pair_three_points() {
        let samples = vec![
            s(0, &[1.0, 0.0], 0),
            s(1, &[0.0, 1.0], 1),
            s(2, &[0.9, 0.1], 0),
        ];
        assert_eq!(farthest_pair(&samples).unwrap(), (0, 1));
    }

    #[test]
    fn farthest_pair_two_points_and_ties() {
        let two = vec![s(0, &[1.0, 0.0], 0), s(1, &[0.5, 0.5], 1)];
        assert_eq!(farthest_pair(&two).unwrap(), (0, 1));
        // All identical: first two ids by the tie rule.
        let same = vec![s(0, &[1.0, 1.0], 0), s(1, &[1.0, 1.0], 0), s(2, &[1.0, 1.0], 1)];
        assert_eq!(farthest_pair(&same).unwrap(), (0, 1));
        assert!(farthest_pair(&same[..1]).is_err());
    }

    #[test]
    fn divide_assigns_by_proximity_with_anchor_tie() {
        let samples = vec![
            s(0, &[1.0, 0.0], 0),
            s(1, &[0.0, 1.0], 1),
            s(2, &[1.0, 1.0], 0), // equidistant -> anchor_i
        ];
        let (gi, gj) = divide(&samples, 0, 1).unwrap();
        assert_eq!(gi, vec![0, 2]);
        assert_eq!(gj, vec![1]);

        let anchors_only = vec![s(0, &[1.0, 0.0], 0), s(1, &[0.0, 1.0], 1)];
        let (gi, gj) = divide(&anchors_only, 0, 1).unwrap();
        assert_eq!(gi, vec![0]);
        assert_eq!(gj, vec![1]);
    }

    fn four_point_fixture() -> Vec<Sample> {
        vec![
            s(0, &[1.0, 0.0], 0),
            s(1, &[0.9, 0.1], 0),
            s(2, &[0.0, 1.0], 1),
            s(3, &[0.1, 0.9], 1),
        ]
    }

    #[test]
    fn cluster_four_point_fixture_splits_once() {
        let set = cluster(&four_point_fixture(), 0.9).unwrap();
        assert_eq!(set.balls.len(), 2);
        let b0 = &set.balls[0];
        let b1 = &set.balls[1];
        assert_eq!(b0.member_ids, vec![0, 1]);
        assert_eq!(b1.member_ids, vec![2, 3]);
        assert_eq!(b0.label, 0);
        assert_eq!(b1.label, 1);
        assert!((b0.purity - 1.0).abs() < 1e-12);
        assert!((b1.purity - 1.0).abs() < 1e-12);
        assert!((b0.center[0] - 0.95).abs() < 1e-12 && (b0.center[1] - 0.05).abs() < 1e-12);
        assert!((b1.center[0] - 0.05).abs() < 1e-12 && (b1.center[1] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn pure_batch_is_one_ball() {
        let samples = vec![
            s(0, &[1.0, 0.0], 1),
            s(1, &[0.0, 1.0], 1),
            s(2, &[-1.0, 0.5], 1),
        ];
        let set = cluster(&samples, 0.9).unwrap();
        assert_eq!(set.balls.len(), 1);
        assert_eq!(set.balls[0].member_ids, vec![0, 1, 2]);
        assert_eq!(set.balls[0].label, 1);
    }

    #[test]
    fn singleton_is_its_own_ball() {
        let set = cluster(&[s(0, &[0.3, 0.4], 1)], 0.9).unwrap();
        assert_eq!(set.balls.len(), 1);
        assert_eq!(set.balls[0].center, vec![0.3, 0.4]);
        assert_eq!(set.balls[0].purity, 1.0);
    }

    #[test]
    fn coincident_mixed_labels_hit_the_degenerate_guard() {
        let samples = vec![
            s(0, &[1.0, 1.0], 0),
            s(1, &[1.0, 1.0], 1),
            s(2, &[1.0, 1.0], 0),
            s(3, &[1.0, 1.0], 1),
        ];
        let set = cluster(&samples, 0.9).unwrap();
        assert_eq!(set.balls.len(), 1);
        assert_eq!(set.balls[0].label, 0);
    }

    #[test]
    fn coarse_representation_corrects_minority_labels() {
        // Five coincident-direction points, one flipped label.
        let samples = vec![
            s(0, &[1.0, 0.0], 0),
            s(1, &[1.0, 0.01], 0),
            s(2, &[1.0, -0.01], 0),
            s(3, &[0.99, 0.0], 1), // noisy
            s(4, &[1.0, 0.005], 0),
        ];
        let set = cluster(&samples, 0.6).unwrap();
        let (_, label) = set.coarse_representation(3).unwrap();
        assert_eq!(label, 0);
        assert!(set.coarse_representation(99).is_err());
    }

    #[test]
    fn two_distinct_singletons_map_to_themselves() {
        let samples = vec![s(0, &[1.0, 0.0], 0), s(1, &[0.0, 1.0], 1)];
        // A mixed pair is finalized by the size rule.
        let set = cluster(&samples, 0.9).unwrap();
        assert_eq!(set.balls.len(), 1);
        assert_eq!(set.balls[0].label, 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(cluster(&[], 0.9), Err(Error::EmptyInput)));
        let ok = vec![s(0, &[1.0], 0)];
        assert!(matches!(cluster(&ok, 0.0), Err(Error::InvalidPurity { .. })));
        assert!(matches!(cluster(&ok, 1.5), Err(Error::InvalidPurity { .. })));
        let zero = vec![s(0, &[0.0, 0.0], 0)];
        assert!(matches!(cluster(&zero, 0.9), Err(Error::ZeroNorm)));
        let misid = vec![s(5, &[1.0], 0)];
        assert!(matches!(cluster(&misid, 0.9), Err(Error::InvalidSampleIds)));
    }

    proptest::proptest! {
        #[test]
        fn partition_and_stopping_invariants(
            seed in proptest::prelude::any::<u64>(),
            n in 1usize..40,
            pur_idx in 0usize..3,
        ) {
            use rand::Rng;
            let pur = [0.6, 0.8, 0.9][pur_idx];
            let mut rng = crate::rng::seeded_rng(seed);
            let samples: Vec<Sample> = (0..n)
                .map(|i| Sample {
                    id: i,
                    embedding: alloc::vec![
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        1.0,
                    ],
                    label: rng.random_range(0..2u8),
                })
                .collect();
            let set = cluster(&samples, pur).unwrap();

            // Partition: disjoint and exhaustive.
            let mut seen = alloc::collections::BTreeSet::new();
            for b in &set.balls {
                for &m in &b.member_ids {
                    proptest::prop_assert!(seen.insert(m));
                }
            }
            proptest::prop_assert_eq!(seen.len(), n);

            // Stopping condition per ball.
            for b in &set.balls {
                let members: Vec<&Sample> = b.member_ids.iter().map(|&i| &samples[i]).collect();
                let max_d = if members.len() < 2 { 0.0 } else {
                    let mut d = 0.0f64;
                    for i in 0..members.len() {
                        for j in (i + 1)..members.len() {
                            d = d.max(cosine_distance(&members[i].embedding, &members[j].embedding).unwrap());
                        }
                    }
                    d
                };
                proptest::prop_assert!(
                    b.member_ids.len() <= 2 || b.purity > pur || max_d <= DEGENERATE_DISTANCE
                );
                // Center exactness.
                for (k, &c) in b.center.iter().enumerate() {
                    let mean: f64 = members.iter().map(|m| m.embedding[k]).sum::<f64>()
                        / members.len() as f64;
                    proptest::prop_assert!((c - mean).abs() <= 1e-9);
                }
            }
        }
    }
}
