//! Pretraining (contrastive) and fine-tuning (granular-ball) steps, plus
//! evaluation.

use alloc::vec::Vec;

use crate::ball::{cluster, BallSet, Sample};
use crate::learn::loss::{
    inter_loss, intra_loss, sce_loss, softmax, symmetric_contrastive_loss,
};
use crate::learn::net::{ModelGrads, ModelParams};
use crate::{Error, Result};

/// Symmetric cross-entropy constants. `clamp` stands in for `ln 0` in the
/// reverse term.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceConfig {
    pub alpha: f64,
    pub beta: f64,
    pub clamp: f64,
}

impl Default for SceConfig {
    fn default() -> Self {
        SceConfig { alpha: 1.0, beta: 1.0, clamp: -4.0 }
    }
}

/// Weights for the combined fine-tuning loss.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub intra: f64,
    pub inter: f64,
    pub sce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { intra: 1.0, inter: 1.0, sce: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOptions {
    /// Purity threshold for ball construction.
    pub pur: f64,
    /// Margin of the inter-ball hinge.
    pub margin: f64,
    pub sce: SceConfig,
    pub weights: LossWeights,
    pub lr: f64,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        FinetuneOptions {
            pur: 0.9,
            margin: 1.0,
            sce: SceConfig::default(),
            weights: LossWeights::default(),
            lr: 1e-3,
        }
    }
}

/// Per-step loss report. `total = w_intra*intra + w_inter*inter +
/// w_sce*sce` for fine-tuning steps; pretraining fills `contrastive`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub intra: f64,
    pub inter: f64,
    pub sce: f64,
    pub total: f64,
}

/// Softmax can underflow to an exact zero once a classifier saturates;
/// the SCE contract requires strictly positive probabilities, so the
/// training paths floor them here. The perturbation is far below every
/// tolerance in use.
const PROB_FLOOR: f64 = 1e-300;

fn floored_softmax(logits: &[f64]) -> Vec<f64> {
    softmax(logits).into_iter().map(|p| p.max(PROB_FLOOR)).collect()
}

/// Encoder forward over a batch.
pub fn encode_batch(params: &ModelParams, features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|f| params.encoder.forward(f).0)
        .collect()
}

/// One contrastive pretraining step over a batch of (view, augmented view)
/// feature pairs: shared-weight encoder on both views, predictor on each
/// branch, symmetric cosine loss with stop-gradient, one descent update.
/// Returns the mean loss (in [0, 2]).
pub fn pretrain_step(
    params: &mut ModelParams,
    pairs: &[(Vec<f64>, Vec<f64>)],
    lr: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut grads = ModelGrads::zeros_like(params);
    let inv = 1.0 / pairs.len() as f64;
    let mut total = 0.0;

    for (a, b) in pairs {
        let (z, enc_cache) = params.encoder.forward(a);
        let (z_tilde, enc_cache_t) = params.encoder.forward(b);
        let (p, pred_cache) = params.predictor.forward(&z);
        let (p_tilde, pred_cache_t) = params.predictor.forward(&z_tilde);

        let sym = symmetric_contrastive_loss(&p, &z, &p_tilde, &z_tilde)?;
        total += sym.value;

        // Gradients flow through the predictions only; the targets z and
        // z~ contribute exactly zero (sym.grad_z / sym.grad_z_tilde).
        let gp: Vec<f64> = sym.grad_p.iter().map(|g| g * inv).collect();
        let gz = params.predictor.backward(&pred_cache, &gp, &mut grads.predictor);
        params.encoder.backward(&enc_cache, &gz, &mut grads.encoder);

        let gp_t: Vec<f64> = sym.grad_p_tilde.iter().map(|g| g * inv).collect();
        let gz_t = params
            .predictor
            .backward(&pred_cache_t, &gp_t, &mut grads.predictor);
        params.encoder.backward(&enc_cache_t, &gz_t, &mut grads.encoder);
    }

    params.step(&grads, lr);
    Ok(total * inv)
}

/// One granular-ball fine-tuning step: encode the batch, cluster the
/// embeddings (forward-only; gradients flow through centers as means of
/// member embeddings, never through membership), compute the combined
/// intra + inter + per-sample SCE loss on (ball center, ball label), and
/// apply one descent update. Returns the breakdown and the ball set.
pub fn finetune_step(
    params: &mut ModelParams,
    features: &[Vec<f64>],
    labels: &[u8],
    opts: &FinetuneOptions,
) -> Result<(LossBreakdown, BallSet)> {
    if features.len() < 2 {
        return Err(Error::TooFewItems { needed: 2, got: features.len() });
    }
    if features.len() != labels.len() {
        return Err(Error::InconsistentMembership);
    }
    let n = features.len();
    let embed_dim = params.dims.embed;

    let mut embeddings = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n);
    for f in features {
        let (z, cache) = params.encoder.forward(f);
        embeddings.push(z);
        caches.push(cache);
    }

    let samples: Vec<Sample> = embeddings
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (z, &l))| Sample { id: i, embedding: z.clone(), label: l })
        .collect();
    let balls = cluster(&samples, opts.pur)?;

    let (intra_val, intra_grads) = intra_loss(&balls, &embeddings)?;
    let (inter_val, center_grads) = inter_loss(&balls, opts.margin);

    // Per-sample SCE on the coarse representation: every member of a ball
    // contributes SCE(classifier(center), ball label), so a ball of size
    // N_b weighs N_b in the batch mean.
    let mut grads = ModelGrads::zeros_like(params);
    let mut sce_sum = 0.0;
    let mut sce_center_grads: Vec<Vec<f64>> = alloc::vec![alloc::vec![0.0; embed_dim]; balls.balls.len()];
    for (bi, ball) in balls.balls.iter().enumerate() {
        let logits = params.classifier.forward(&ball.center);
        let probs = floored_softmax(&logits);
        let (v, glogits) = sce_loss(&probs, ball.label, opts.sce.alpha, opts.sce.beta, opts.sce.clamp)?;
        let nb = ball.member_ids.len() as f64;
        sce_sum += v * nb;
        // Scale: (N_b / n) per ball; classifier grads and the center
        // gradient both carry it.
        let scale = nb / n as f64;
        let scaled: Vec<f64> = glogits.iter().map(|g| g * scale).collect();
        let gcenter = params
            .classifier
            .backward(&ball.center, &scaled, &mut grads.classifier);
        sce_center_grads[bi] = gcenter;
    }
    let sce_val = sce_sum / n as f64;

    // Combine embedding gradients: intra directly, inter and SCE through
    // the center-as-mean (each member inherits grad_center / N_b).
    let w = &opts.weights;
    for (bi, ball) in balls.balls.iter().enumerate() {
        let nb = ball.member_ids.len() as f64;
        for &m in &ball.member_ids {
            let gz: Vec<f64> = (0..embed_dim)
                .map(|k| {
                    w.intra * intra_grads[m][k]
                        + (w.inter * center_grads[bi][k]) / nb
                        + (w.sce * sce_center_grads[bi][k]) / nb
                })
                .collect();
            params.encoder.backward(&caches[m], &gz, &mut grads.encoder);
        }
    }

    params.step(&grads, opts.lr);

    let total = w.intra * intra_val + w.inter * inter_val + w.sce * sce_val;
    Ok((
        LossBreakdown {
            contrastive: 0.0,
            intra: intra_val,
            inter: inter_val,
            sce: sce_val,
            total,
        },
        balls,
    ))
}

/// One plain classification step on each sample's own embedding and label:
/// the no-granular-ball fine-tuning arm. With `beta = 0` the loss reduces
/// to ordinary cross-entropy. Returns the mean loss.
pub fn classifier_step(
    params: &mut ModelParams,
    features: &[Vec<f64>],
    labels: &[u8],
    sce: &SceConfig,
    lr: f64,
) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptyInput);
    }
    if features.len() != labels.len() {
        return Err(Error::InconsistentMembership);
    }
    let n = features.len() as f64;
    let mut grads = ModelGrads::zeros_like(params);
    let mut total = 0.0;

    for (f, &label) in features.iter().zip(labels) {
        let (z, enc_cache) = params.encoder.forward(f);
        let logits = params.classifier.forward(&z);
        let probs = floored_softmax(&logits);
        let (v, glogits) = sce_loss(&probs, label, sce.alpha, sce.beta, sce.clamp)?;
        total += v;
        let scaled: Vec<f64> = glogits.iter().map(|g| g / n).collect();
        let gz = params.classifier.backward(&z, &scaled, &mut grads.classifier);
        params.encoder.backward(&enc_cache, &gz, &mut grads.encoder);
    }

    params.step(&grads, lr);
    Ok(total / n)
}

/// Precision/recall/F1 against binary labels, with degenerate-denominator
/// flags. Inference bypasses the granular-ball layer: the classifier runs
/// on raw encoder output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// TP+FP was zero; precision reported as 0.
    pub degenerate_precision: bool,
    /// TP+FN was zero; recall reported as 0.
    pub degenerate_recall: bool,
    pub tp: usize,
    pub fp: usize,
    pub fxn: usize,
    pub tn: usize,
}

pub fn evaluate(params: &ModelParams, features: &[Vec<f64>], labels: &[u8]) -> Result<KindMetrics> {
    if features.is_empty() {
        return Err(Error::EmptyInput);
    }
    if features.len() != labels.len() {
        return Err(Error::InconsistentMembership);
    }
    let (mut tp, mut fp, mut fxn, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (f, &label) in features.iter().zip(labels) {
        let (z, _) = params.encoder.forward(f);
        let logits = params.classifier.forward(&z);
        let pred = u8::from(logits[1] > logits[0]);
        match (pred, label) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fxn += 1,
            (0, 0) => tn += 1,
            _ => {
                return Err(Error::NonBinaryLabel {
                    id: alloc::string::String::new(),
                    value: i64::from(label),
                })
            }
        }
    }
    let degenerate_precision = tp + fp == 0;
    let degenerate_recall = tp + fxn == 0;
    let precision = if degenerate_precision { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if degenerate_recall { 0.0 } else { tp as f64 / (tp + fxn) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(KindMetrics {
        precision,
        recall,
        f1,
        degenerate_precision,
        degenerate_recall,
        tp,
        fp,
        fxn,
        tn,
    })
}
