//! Loss functions with analytic gradients.
//!
//! Conventions: gradients are plain `Vec<f64>` matching the argument they
//! differentiate; the contrastive losses implement the stop-gradient
//! contract (target-branch gradients are exactly zero); hinge kinks and
//! coincident centers take subgradient zero.

use alloc::vec::Vec;

use crate::ball::BallSet;
use crate::math;
use crate::{Error, Result};

/// `1 - <p, z> / (|p| |z|)` with gradient for `p` only; `z` is a constant
/// (stop-gradient).
pub fn cosine_loss(p: &[f64], z: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.len() != z.len() {
        return Err(Error::DimensionMismatch { left: p.len(), right: z.len() });
    }
    let np = math::norm(p);
    let nz = math::norm(z);
    if np == 0.0 || nz == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let s = math::dot(p, z) / (np * nz);
    let grad = p
        .iter()
        .zip(z)
        .map(|(&pi, &zi)| (s * pi / np - zi / nz) / np)
        .collect();
    Ok((1.0 - s, grad))
}

/// Output of [`symmetric_contrastive_loss`]. The `z` gradients are present
/// and exactly zero: the stop-gradient contract is part of the interface.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricContrastive {
    pub value: f64,
    pub grad_p: Vec<f64>,
    pub grad_p_tilde: Vec<f64>,
    pub grad_z: Vec<f64>,
    pub grad_z_tilde: Vec<f64>,
}

/// `L = (cos_loss(p, z~) + cos_loss(p~, z)) / 2`: both branches weighted
/// equally, gradients reach the encoder only through the predictions.
pub fn symmetric_contrastive_loss(
    p: &[f64],
    z: &[f64],
    p_tilde: &[f64],
    z_tilde: &[f64],
) -> Result<SymmetricContrastive> {
    let (l1, g1) = cosine_loss(p, z_tilde)?;
    let (l2, g2) = cosine_loss(p_tilde, z)?;
    Ok(SymmetricContrastive {
        value: 0.5 * (l1 + l2),
        grad_p: g1.iter().map(|g| 0.5 * g).collect(),
        grad_p_tilde: g2.iter().map(|g| 0.5 * g).collect(),
        grad_z: alloc::vec![0.0; z.len()],
        grad_z_tilde: alloc::vec![0.0; z_tilde.len()],
    })
}

/// Intra-ball compactness: sum over balls of the mean squared Euclidean
/// distance to the ball center. Centers are the means of the (current)
/// embeddings, and the gradient follows the chain rule through the mean —
/// which collapses to `2 (x_k - c) / N` because deviations sum to zero.
pub fn intra_loss(balls: &BallSet, embeddings: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    validate_membership(balls, embeddings)?;
    let dim = embeddings.first().map(|e| e.len()).unwrap_or(0);
    let mut value = 0.0;
    let mut grads = alloc::vec![alloc::vec![0.0; dim]; embeddings.len()];

    for ball in &balls.balls {
        let n = ball.member_ids.len() as f64;
        let mut center = alloc::vec![0.0; dim];
        for &m in &ball.member_ids {
            for (c, v) in center.iter_mut().zip(&embeddings[m]) {
                *c += v;
            }
        }
        for c in &mut center {
            *c /= n;
        }
        for &m in &ball.member_ids {
            let mut sq = 0.0;
            for k in 0..dim {
                let d = embeddings[m][k] - center[k];
                sq += d * d;
                grads[m][k] += 2.0 * d / n;
            }
            value += sq / n;
        }
    }
    Ok((value, grads))
}

/// Inter-ball looseness over unordered center pairs: same-label pairs pay
/// the squared distance, different-label pairs pay the unsquared hinge
/// `max(0, margin - |ci - cj|)`. Gradients are per ball center; the hinge
/// kink and coincident different-label centers take subgradient zero.
pub fn inter_loss(balls: &BallSet, margin: f64) -> (f64, Vec<Vec<f64>>) {
    let k = balls.balls.len();
    let dim = balls.balls.first().map(|b| b.center.len()).unwrap_or(0);
    let mut value = 0.0;
    let mut grads = alloc::vec![alloc::vec![0.0; dim]; k];

    for i in 0..k {
        for j in (i + 1)..k {
            let (bi, bj) = (&balls.balls[i], &balls.balls[j]);
            let mut sq = 0.0;
            for d in 0..dim {
                let diff = bi.center[d] - bj.center[d];
                sq += diff * diff;
            }
            if bi.label == bj.label {
                value += sq;
                for d in 0..dim {
                    let diff = bi.center[d] - bj.center[d];
                    grads[i][d] += 2.0 * diff;
                    grads[j][d] -= 2.0 * diff;
                }
            } else {
                let dist = math::sqrt(sq);
                if dist < margin && dist > 0.0 {
                    value += margin - dist;
                    for d in 0..dim {
                        let diff = bi.center[d] - bj.center[d];
                        grads[i][d] -= diff / dist;
                        grads[j][d] += diff / dist;
                    }
                } else if dist < margin {
                    // Coincident centers: value is the full margin,
                    // subgradient zero.
                    value += margin - dist;
                }
            }
        }
    }
    (value, grads)
}

/// Symmetric cross-entropy `alpha * CE(target || probs) +
/// beta * RCE(probs || target)` with `ln 0` clamped to `clamp_a`.
/// The returned gradient is with respect to the logits that produced
/// `probs` via softmax.
pub fn sce_loss(
    probs: &[f64],
    target: u8,
    alpha: f64,
    beta: f64,
    clamp_a: f64,
) -> Result<(f64, Vec<f64>)> {
    let t = usize::from(target);
    if t >= probs.len() {
        return Err(Error::InvalidParameter { what: "target class out of range" });
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::InvalidParameter { what: "alpha and beta must be non-negative" });
    }
    if clamp_a >= 0.0 {
        return Err(Error::InvalidParameter { what: "log-zero clamp must be negative" });
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !p.is_finite() || p <= 0.0) || math::abs(sum - 1.0) > 1e-9 {
        return Err(Error::InvalidDistribution);
    }

    let ce = -math::ln(probs[t]);
    // r_k = -ln(onehot_k) with ln 0 := clamp_a
    let r: Vec<f64> = (0..probs.len())
        .map(|k| if k == t { 0.0 } else { -clamp_a })
        .collect();
    let rce: f64 = probs.iter().zip(&r).map(|(p, rk)| p * rk).sum();
    let value = alpha * ce + beta * rce;

    let r_dot_p: f64 = probs.iter().zip(&r).map(|(p, rk)| p * rk).sum();
    let grad = (0..probs.len())
        .map(|k| {
            let onehot = if k == t { 1.0 } else { 0.0 };
            alpha * (probs[k] - onehot) + beta * probs[k] * (r[k] - r_dot_p)
        })
        .collect();
    Ok((value, grad))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&l| math::exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Central-difference gradient check: returns the maximum relative error
/// between the analytic gradient of `f` at `point` and finite differences
/// at step `eps`. Relative error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(f: F, point: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    let mut worst = 0.0f64;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let (fp, _) = f(&x);
        x[i] = orig - eps;
        let (fm, _) = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = math::abs(analytic[i] - numeric)
            / f64::max(1e-8, math::abs(analytic[i]) + math::abs(numeric));
        worst = worst.max(rel);
    }
    worst
}

fn validate_membership(balls: &BallSet, embeddings: &[Vec<f64>]) -> Result<()> {
    if balls.sample_count != embeddings.len() {
        return Err(Error::InconsistentMembership);
    }
    let mut seen = alloc::vec![false; embeddings.len()];
    for ball in &balls.balls {
        for &m in &ball.member_ids {
            if m >= embeddings.len() || seen[m] {
                return Err(Error::InconsistentMembership);
            }
            seen[m] = true;
        }
    }
    if seen.iter().all(|&s| s) {
        Ok(())
    } else {
        Err(Error::InconsistentMembership)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::{cluster, GranularBall, Sample};
    use rand::Rng;

    #[test]
    fn cosine_loss_hand_values() {
        let (l, _) = cosine_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(l.abs() < 1e-12);
        let (l, _) = cosine_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let (l, _) = cosine_loss(&[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
        assert!(cosine_loss(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn cosine_loss_gradient_matches_finite_differences() {
        let mut rng = crate::rng::seeded_rng(5);
        for _ in 0..20 {
            let p: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0) + 0.1).collect();
            let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0) + 0.1).collect();
            let zc = z.clone();
            let err = grad_check(move |x| cosine_loss(x, &zc).unwrap(), &p, 1e-5);
            assert!(err <= 1e-4, "rel err {err}");
        }
    }

    #[test]
    fn symmetric_loss_is_the_average_and_stops_gradients() {
        let p = [0.5, 0.2];
        let z = [0.4, 0.1];
        let pt = [0.3, 0.9];
        let zt = [0.1, 0.8];
        let sym = symmetric_contrastive_loss(&p, &z, &pt, &zt).unwrap();
        let (a, _) = cosine_loss(&p, &zt).unwrap();
        let (b, _) = cosine_loss(&pt, &z).unwrap();
        assert!((sym.value - 0.5 * (a + b)).abs() < 1e-15);
        assert!(sym.grad_z.iter().all(|&g| g == 0.0));
        assert!(sym.grad_z_tilde.iter().all(|&g| g == 0.0));

        // Aligned pairs: zero loss.
        let zero = symmetric_contrastive_loss(&p, &pt, &pt, &p).unwrap();
        assert!(zero.value.abs() < 1e-12);
    }

    fn singleton_balls(embeddings: &[Vec<f64>], labels: &[u8]) -> BallSet {
        BallSet {
            balls: embeddings
                .iter()
                .enumerate()
                .map(|(i, e)| GranularBall {
                    member_ids: alloc::vec![i],
                    center: e.clone(),
                    label: labels[i],
                    purity: 1.0,
                })
                .collect(),
            sample_count: embeddings.len(),
        }
    }

    #[test]
    fn intra_loss_hand_values() {
        // Singletons: zero.
        let e = alloc::vec![alloc::vec![1.0, 2.0], alloc::vec![3.0, 4.0]];
        let balls = singleton_balls(&e, &[0, 1]);
        let (v, _) = intra_loss(&balls, &e).unwrap();
        assert_eq!(v, 0.0);

        // One ball {(0,0),(2,0)}: center (1,0), (1 + 1)/2 = 1.0.
        let e = alloc::vec![alloc::vec![0.0, 0.0], alloc::vec![2.0, 0.0]];
        let balls = BallSet {
            balls: alloc::vec![GranularBall {
                member_ids: alloc::vec![0, 1],
                center: alloc::vec![1.0, 0.0],
                label: 0,
                purity: 1.0,
            }],
            sample_count: 2,
        };
        let (v, _) = intra_loss(&balls, &e).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intra_loss_gradient_matches_finite_differences() {
        let mut rng = crate::rng::seeded_rng(11);
        for _ in 0..20 {
            let n = 6;
            let samples: Vec<Sample> = (0..n)
                .map(|i| Sample {
                    id: i,
                    embedding: alloc::vec![
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        1.0,
                    ],
                    label: (i % 2) as u8,
                })
                .collect();
            let balls = cluster(&samples, 0.8).unwrap();
            let flat: Vec<f64> = samples.iter().flat_map(|s| s.embedding.clone()).collect();
            let err = grad_check(
                |x| {
                    let embeddings: Vec<Vec<f64>> =
                        x.chunks(3).map(|c| c.to_vec()).collect();
                    let (v, g) = intra_loss(&balls, &embeddings).unwrap();
                    (v, g.into_iter().flatten().collect())
                },
                &flat,
                1e-5,
            );
            assert!(err <= 1e-4, "rel err {err}");
        }
    }

    fn two_center_set(c1: Vec<f64>, l1: u8, c2: Vec<f64>, l2: u8) -> BallSet {
        BallSet {
            balls: alloc::vec![
                GranularBall { member_ids: alloc::vec![0], center: c1, label: l1, purity: 1.0 },
                GranularBall { member_ids: alloc::vec![1], center: c2, label: l2, purity: 1.0 },
            ],
            sample_count: 2,
        }
    }

    #[test]
    fn inter_loss_hand_values() {
        // Single ball: empty pair set.
        let one = BallSet {
            balls: alloc::vec![GranularBall {
                member_ids: alloc::vec![0],
                center: alloc::vec![1.0],
                label: 0,
                purity: 1.0,
            }],
            sample_count: 1,
        };
        assert_eq!(inter_loss(&one, 1.0).0, 0.0);

        // Different labels at distance >= margin: inactive hinge.
        let far = two_center_set(alloc::vec![0.0, 0.0], 0, alloc::vec![2.0, 0.0], 1);
        assert_eq!(inter_loss(&far, 1.0).0, 0.0);

        // Different labels at 0.4 with margin 1 -> 0.6.
        let near = two_center_set(alloc::vec![0.0, 0.0], 0, alloc::vec![0.4, 0.0], 1);
        assert!((inter_loss(&near, 1.0).0 - 0.6).abs() < 1e-12);

        // Same label at distance 2 -> squared = 4.
        let same = two_center_set(alloc::vec![0.0, 0.0], 0, alloc::vec![2.0, 0.0], 0);
        assert!((inter_loss(&same, 1.0).0 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn inter_loss_gradient_matches_finite_differences() {
        let mut rng = crate::rng::seeded_rng(13);
        for trial in 0..20 {
            let k = 4;
            let dim = 3;
            let centers: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let labels: Vec<u8> = (0..k).map(|i| (i % 2) as u8).collect();
            // Kinks excluded: resample if any different-label pair sits
            // within 1e-3 of the margin or of zero distance.
            let margin = 1.0;
            let near_kink = (0..k).any(|i| {
                ((i + 1)..k).any(|j| {
                    if labels[i] != labels[j] {
                        let d: f64 = math::sqrt(
                            centers[i]
                                .iter()
                                .zip(&centers[j])
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum(),
                        );
                        math::abs(d - margin) < 1e-3 || d < 1e-3
                    } else {
                        false
                    }
                })
            });
            if near_kink {
                continue;
            }
            let flat: Vec<f64> = centers.iter().flatten().copied().collect();
            let labels2 = labels.clone();
            let err = grad_check(
                |x| {
                    let cs: Vec<Vec<f64>> = x.chunks(dim).map(|c| c.to_vec()).collect();
                    let set = BallSet {
                        balls: cs
                            .iter()
                            .enumerate()
                            .map(|(i, c)| GranularBall {
                                member_ids: alloc::vec![i],
                                center: c.clone(),
                                label: labels2[i],
                                purity: 1.0,
                            })
                            .collect(),
                        sample_count: k,
                    };
                    let (v, g) = inter_loss(&set, margin);
                    (v, g.into_iter().flatten().collect())
                },
                &flat,
                1e-5,
            );
            assert!(err <= 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn sce_hand_value() {
        let (v, _) = sce_loss(&[0.8, 0.2], 0, 1.0, 1.0, -4.0).unwrap();
        let expected = -(0.8f64).ln() + 0.8;
        assert!((v - expected).abs() < 1e-9);
        assert!((v - 1.02314).abs() < 1e-4);
    }

    #[test]
    fn sce_vanishes_on_confident_correct_predictions() {
        let (v, _) = sce_loss(&[1.0 - 1e-12, 1e-12], 0, 1.0, 1.0, -4.0).unwrap();
        assert!(v < 1e-9);
    }

    #[test]
    fn sce_rejects_invalid_inputs() {
        assert!(sce_loss(&[0.5, 0.6], 0, 1.0, 1.0, -4.0).is_err());
        assert!(sce_loss(&[0.5, 0.5], 0, -1.0, 1.0, -4.0).is_err());
        assert!(sce_loss(&[0.5, 0.5], 0, 1.0, 1.0, 0.5).is_err());
        assert!(sce_loss(&[0.5, 0.5], 5, 1.0, 1.0, -4.0).is_err());
    }

    #[test]
    fn sce_gradient_through_softmax_matches_finite_differences() {
        let mut rng = crate::rng::seeded_rng(17);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let target = rng.random_range(0..2u8);
            let err = grad_check(
                move |l| {
                    let p = softmax(l);
                    sce_loss(&p, target, 1.0, 1.0, -4.0).unwrap()
                },
                &logits,
                1e-5,
            );
            assert!(err <= 1e-4, "rel err {err}");
        }
    }

    #[test]
    fn grad_check_is_exact_on_linear_functions_and_catches_corruption() {
        let f = |x: &[f64]| {
            let v = 3.0 * x[0] - 2.0 * x[1];
            (v, alloc::vec![3.0, -2.0])
        };
        assert!(grad_check(f, &[0.3, -0.7], 1e-5) <= 1e-10);

        // Deliberately corrupted gradient (one component doubled).
        let bad = |x: &[f64]| {
            let v = 3.0 * x[0] - 2.0 * x[1];
            (v, alloc::vec![6.0, -2.0])
        };
        assert!(grad_check(bad, &[0.3, -0.7], 1e-5) > 0.1);
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax(&[1.0, 2.0]);
        let b = softmax(&[101.0, 102.0]);
        assert!((a[0] - b[0]).abs() < 1e-12);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn membership_validation_catches_gaps() {
        let e = alloc::vec![alloc::vec![1.0], alloc::vec![2.0]];
        let bad = BallSet {
            balls: alloc::vec![GranularBall {
                member_ids: alloc::vec![0],
                center: alloc::vec![1.0],
                label: 0,
                purity: 1.0,
            }],
            sample_count: 2,
        };
        assert!(matches!(
            intra_loss(&bad, &e),
            Err(Error::InconsistentMembership)
        ));
    }
}
