//! Contrastive objectives over tri-modal batches, with analytic gradients
//! with respect to every embedding.
//!
//! Every contrastive loss reduces to row-wise softmax cross-entropy over a
//! `B x B` logit table whose diagonal holds the matched triples. For the
//! triple-scored objectives the two tables are
//!
//! ```text
//! D2T: logit[i][j] = s(t_j, v_i, a_i) / tau     (captions vary)
//! T2D: logit[i][j] = s(t_i, v_j, a_j) / tau     (data pairs vary)
//! ```
//!
//! where `s` is `-area`, `-volume` or `+mip`. The reported value is the mean
//! of the two directions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, TRAIN_EPS};
use crate::nn::{Mlp, Modality, Tape, TriEmbeddings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Triangle,
    CosineAnchor,
    GramVolume,
    SymileMip,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Triangle,
        Objective::CosineAnchor,
        Objective::GramVolume,
        Objective::SymileMip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Triangle => "triangle",
            Objective::CosineAnchor => "cosine_anchor",
            Objective::GramVolume => "gram_volume",
            Objective::SymileMip => "symile_mip",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub objective: Objective,
    pub tau: f64,
    /// Cosine regularization weight for text-to-data scoring (evaluation only).
    pub alpha_t2d: f64,
    /// Cosine regularization weight for data-to-text scoring (evaluation only).
    pub alpha_d2t: f64,
    /// Weight of the data-text matching loss.
    pub lambda: f64,
    pub anchor: Modality,
    /// When false no matching head is built at all.
    pub dtm_enabled: bool,
    /// Floor on the area Gram determinant during training.
    pub area_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Triangle,
            tau: 0.07,
            alpha_t2d: 1.0,
            alpha_d2t: 0.0,
            lambda: 0.1,
            anchor: Modality::Text,
            dtm_enabled: true,
            area_eps: TRAIN_EPS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::contract(format!("tau must be > 0, got {}", self.tau)));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha_t2d", self.alpha_t2d),
            ("alpha_d2t", self.alpha_d2t),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.objective != Objective::Triangle && (self.alpha_t2d != 0.0 || self.alpha_d2t != 0.0) {
            return Err(Error::contract(format!(
                "cosine regularization is only defined for the triangle objective, not {}",
                self.objective
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grads: TriEmbeddings,
    /// Named sub-losses (directions, pairs, matching term).
    pub parts: Vec<(String, f64)>,
    /// Matching loss fell back to positives only (no negatives available).
    pub positives_only: bool,
}

impl LossOutput {
    pub fn part(&self, name: &str) -> Option<f64> {
        self.parts.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("tau must be > 0, got {tau}")))
    }
}

fn check_batch(batch: &TriEmbeddings) -> Result<usize> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::contract("empty batch"));
    }
    if batch.video.len() != b || batch.audio.len() != b {
        return Err(Error::contract("modalities disagree on batch size"));
    }
    let n = batch.dim();
    if Modality::ALL
        .iter()
        .any(|&m| batch.modality(m).iter().any(|e| e.len() != n))
    {
        return Err(Error::contract("embeddings in a batch must share a dimension"));
    }
    Ok(b)
}

/// Mean over rows of `-log softmax(logits[i])[i]`, computed with the usual
/// max shift. Returns the loss and `dL/dlogits` (row-major, same shape).
pub fn softmax_cross_entropy(logits: &[f64], b: usize) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), b * b, "logit table must be B x B");
    let mut total = 0.0;
    let mut grad = vec![0.0; b * b];
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let row = &logits[i * b..(i + 1) * b];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[i];
        for j in 0..b {
            let p = (row[j] - lse).exp();
            grad[i * b + j] = (p - if i == j { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    (total * inv_b, grad)
}

/// A scoring function of one `(t, v, a)` triple; higher means a better match.
trait TripleScore {
    fn score(&self, t: &[f64], v: &[f64], a: &[f64]) -> f64;
    /// `(d/dt, d/dv, d/da)` of the score.
    fn grad(&self, t: &[f64], v: &[f64], a: &[f64]) -> [Vec<f64>; 3];
}

struct NegArea {
    eps: f64,
}

impl TripleScore for NegArea {
    fn score(&self, t: &[f64], v: &[f64], a: &[f64]) -> f64 {
        -geometry::triangle_area(t, v, a, self.eps)
    }

    fn grad(&self, t: &[f64], v: &[f64], a: &[f64]) -> [Vec<f64>; 3] {
        let g = geometry::triangle_area_grad(t, v, a, self.eps);
        let neg = |x: Vec<f64>| x.into_iter().map(|d| -d).collect();
        [neg(g.d_x), neg(g.d_y), neg(g.d_z)]
    }
}

struct NegVolume;

impl TripleScore for NegVolume {
    fn score(&self, t: &[f64], v: &[f64], a: &[f64]) -> f64 {
        -geometry::gram_volume(&[t, v, a]).expect("shape checked by caller")
    }

    fn grad(&self, t: &[f64], v: &[f64], a: &[f64]) -> [Vec<f64>; 3] {
        let (g, _) = geometry::gram_volume_grad(&[t, v, a]).expect("shape checked by caller");
        let mut it = g.into_iter().map(|x| x.into_iter().map(|d| -d).collect());
        [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
    }
}

struct Mip;

impl TripleScore for Mip {
    fn score(&self, t: &[f64], v: &[f64], a: &[f64]) -> f64 {
        geometry::symile_mip(t, v, a)
    }

    fn grad(&self, t: &[f64], v: &[f64], a: &[f64]) -> [Vec<f64>; 3] {
        geometry::symile_mip_grad(t, v, a)
    }
}

fn triple_contrastive(batch: &TriEmbeddings, tau: f64, kernel: &dyn TripleScore) -> Result<LossOutput> {
    check_tau(tau)?;
    let b = check_batch(batch)?;
    let (t, v, a) = (&batch.text, &batch.video, &batch.audio);

    // D2T row i: data pair i against every caption j. T2D row i: caption i
    // against every data pair j. Entry (i, j) of T2D is the score of triple
    // (t_i, v_j, a_j), i.e. entry (j, i) of D2T, so one score table serves both.
    let mut scores = vec![0.0; b * b]; // scores[c * b + d] = s(t_c, v_d, a_d)
    for c in 0..b {
        for d in 0..b {
            scores[c * b + d] = kernel.score(&t[c], &v[d], &a[d]);
        }
    }
    let paired = paired_contrastive(&scores, b, tau);

    let mut grads = TriEmbeddings::zeros_like(batch);
    for c in 0..b {
        for d in 0..b {
            let w = paired.d_scores[c * b + d];
            if w == 0.0 {
                continue;
            }
            let [gt, gv, ga] = kernel.grad(&t[c], &v[d], &a[d]);
            axpy(&mut grads.text[c], w, &gt);
            axpy(&mut grads.video[d], w, &gv);
            axpy(&mut grads.audio[d], w, &ga);
        }
    }
    Ok(LossOutput {
        value: paired.value,
        grads,
        parts: vec![("d2t".into(), paired.d2t), ("t2d".into(), paired.t2d)],
        positives_only: false,
    })
}

/// Both softmax directions over a table of triple scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedLoss {
    pub value: f64,
    pub d2t: f64,
    pub t2d: f64,
    /// `dL/dscores`, same layout as the input table.
    pub d_scores: Vec<f64>,
}

/// Loss over a `B x B` table where `scores[c * B + d]` is the (higher is
/// better) score of caption `c` with data pair `d`.
pub fn paired_contrastive(scores: &[f64], b: usize, tau: f64) -> PairedLoss {
    assert_eq!(scores.len(), b * b);
    let mut d2t = vec![0.0; b * b];
    let mut t2d = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            d2t[i * b + j] = scores[j * b + i] / tau;
            t2d[i * b + j] = scores[i * b + j] / tau;
        }
    }
    let (l_d2t, g_d2t) = softmax_cross_entropy(&d2t, b);
    let (l_t2d, g_t2d) = softmax_cross_entropy(&t2d, b);
    let d_scores = (0..b * b)
        .map(|k| {
            let (c, d) = (k / b, k % b);
            0.5 * (g_d2t[d * b + c] + g_t2d[c * b + d]) / tau
        })
        .collect();
    PairedLoss {
        value: 0.5 * (l_d2t + l_t2d),
        d2t: l_d2t,
        t2d: l_t2d,
        d_scores,
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Triangle-area contrastive loss: mean of the caption-varying and the
/// data-varying softmax losses over `-area / tau`. `eps` floors the Gram
/// determinant inside each area (0 for the exact definition).
pub fn triangle_contrastive(batch: &TriEmbeddings, tau: f64, eps: f64) -> Result<LossOutput> {
    if !(eps >= 0.0) {
        return Err(Error::contract(format!("area eps must be >= 0, got {eps}")));
    }
    triple_contrastive(batch, tau, &NegArea { eps })
}

/// Same shape as [`triangle_contrastive`] with `-volume(t, v, a) / tau`.
pub fn gram_contrastive(batch: &TriEmbeddings, tau: f64) -> Result<LossOutput> {
    let b = check_batch(batch)?;
    if b > 0 && batch.dim() < 3 {
        return Err(Error::contract("gram volume of 3 vectors needs dimension >= 3"));
    }
    triple_contrastive(batch, tau, &NegVolume)
}

/// Same shape as [`triangle_contrastive`] with `+mip(t, v, a) / tau`.
pub fn symile_contrastive(batch: &TriEmbeddings, tau: f64) -> Result<LossOutput> {
    triple_contrastive(batch, tau, &Mip)
}

/// Pairwise CLIP-style loss against an anchor modality: for each of the two
/// other modalities, the mean of the anchor-to-modality and
/// modality-to-anchor cross-entropies over `cos / tau`; the pair losses are
/// summed.
pub fn pairwise_anchor_loss(batch: &TriEmbeddings, tau: f64, anchor: Modality) -> Result<LossOutput> {
    check_tau(tau)?;
    let b = check_batch(batch)?;
    let anchors = batch.modality(anchor);
    let mut grads = TriEmbeddings::zeros_like(batch);
    let mut value = 0.0;
    let mut parts = Vec::new();
    for other in Modality::ALL.into_iter().filter(|&m| m != anchor) {
        let others = batch.modality(other);
        let mut logits = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                logits[i * b + j] = geometry::cosine(&anchors[i], &others[j])? / tau;
            }
        }
        let transposed: Vec<f64> = (0..b * b).map(|k| logits[(k % b) * b + k / b]).collect();
        let (l_fwd, g_fwd) = softmax_cross_entropy(&logits, b);
        let (l_bwd, g_bwd) = softmax_cross_entropy(&transposed, b);
        value += 0.5 * (l_fwd + l_bwd);
        parts.push((format!("{}_to_{}", name(anchor), name(other)), l_fwd));
        parts.push((format!("{}_to_{}", name(other), name(anchor)), l_bwd));
        for i in 0..b {
            for j in 0..b {
                let w = 0.5 * (g_fwd[i * b + j] + g_bwd[j * b + i]) / tau;
                if w == 0.0 {
                    continue;
                }
                let (ga, go) = geometry::cosine_grad(&anchors[i], &others[j])?;
                axpy(&mut grads.modality_mut(anchor)[i], w, &ga);
                axpy(&mut grads.modality_mut(other)[j], w, &go);
            }
        }
    }
    Ok(LossOutput {
        value,
        grads,
        parts,
        positives_only: false,
    })
}

fn name(m: Modality) -> &'static str {
    match m {
        Modality::Text => "text",
        Modality::Video => "video",
        Modality::Audio => "audio",
    }
}

/// Contrastive loss selected by `objective`.
pub fn contrastive(batch: &TriEmbeddings, config: &LossConfig) -> Result<LossOutput> {
    match config.objective {
        Objective::Triangle => triangle_contrastive(batch, config.tau, config.area_eps),
        Objective::CosineAnchor => pairwise_anchor_loss(batch, config.tau, config.anchor),
        Objective::GramVolume => gram_contrastive(batch, config.tau),
        Objective::SymileMip => symile_contrastive(batch, config.tau),
    }
}

/// Mean binary cross-entropy over logits `z` with labels `y`, in the stable
/// form `softplus(z) - y z`. Returns the loss and `dL/dz`.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), labels.len());
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
        total += softplus - y * z;
        grad.push((sigmoid(z) - y) / n);
    }
    (total / n, grad)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// For each positive row, the batch row whose caption is swapped in to make
/// its negative. Rows sharing a `pair_id` are never used as negatives of each
/// other. Returns `None` for a row with no usable partner.
pub fn sample_negatives(pair_ids: &[u64], rng: &mut impl Rng) -> Vec<Option<usize>> {
    (0..pair_ids.len())
        .map(|i| {
            let candidates: Vec<usize> = (0..pair_ids.len())
                .filter(|&j| pair_ids[j] != pair_ids[i])
                .collect();
            if candidates.is_empty() {
                None
            } else {
                Some(candidates[rng.random_range(0..candidates.len())])
            }
        })
        .collect()
}

/// Matching-head loss: BCE of `sigmoid(matcher([t; v; a]))` with label 1 for
/// every matched triple and 0 for each caption-swapped negative.
///
/// Parameter gradients accumulate into `matcher`; embedding gradients are
/// returned. With no negatives at all the loss runs over positives only and
/// `positives_only` is set.
pub fn dtm_loss(batch: &TriEmbeddings, matcher: &mut Mlp, negatives: &[Option<usize>]) -> Result<LossOutput> {
    let b = check_batch(batch)?;
    if negatives.len() != b {
        return Err(Error::contract("one negative slot per positive required"));
    }
    let n = batch.dim();
    if matcher.input_dim() != 3 * n || matcher.output_dim() != 1 {
        return Err(Error::contract(format!(
            "matcher must map {} inputs to 1 logit",
            3 * n
        )));
    }
    let concat = |c: usize, d: usize| -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * n);
        x.extend_from_slice(&batch.text[c]);
        x.extend_from_slice(&batch.video[d]);
        x.extend_from_slice(&batch.audio[d]);
        x
    };
    // (caption row, data row, label)
    let mut items: Vec<(usize, usize, f64)> = (0..b).map(|i| (i, i, 1.0)).collect();
    items.extend(
        negatives
            .iter()
            .enumerate()
            .filter_map(|(i, neg)| neg.map(|c| (c, i, 0.0))),
    );
    let positives_only = items.len() == b;
    let mut logits = Vec::with_capacity(items.len());
    let mut tapes: Vec<Tape> = Vec::with_capacity(items.len());
    for &(c, d, _) in &items {
        let (out, tape) = matcher.forward(&concat(c, d))?;
        logits.push(out[0]);
        tapes.push(tape);
    }
    let labels: Vec<f64> = items.iter().map(|it| it.2).collect();
    let (value, dz) = bce_with_logits(&logits, &labels);
    let mut grads = TriEmbeddings::zeros_like(batch);
    for ((&(c, d, _), tape), g) in items.iter().zip(&tapes).zip(&dz) {
        let dx = matcher.backward(tape, &[*g])?;
        axpy(&mut grads.text[c], 1.0, &dx[..n]);
        axpy(&mut grads.video[d], 1.0, &dx[n..2 * n]);
        axpy(&mut grads.audio[d], 1.0, &dx[2 * n..]);
    }
    Ok(LossOutput {
        value,
        grads,
        parts: vec![("dtm".into(), value)],
        positives_only,
    })
}

/// Contrastive loss plus `lambda` times the matching loss. With `lambda = 0`
/// (or no matcher) the matching head is not evaluated and the result is the
/// contrastive output unchanged.
pub fn total_loss(
    batch: &TriEmbeddings,
    config: &LossConfig,
    matcher: Option<(&mut Mlp, &[Option<usize>])>,
) -> Result<LossOutput> {
    check_tau(config.tau)?;
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        return Err(Error::contract(format!("lambda must be >= 0, got {}", config.lambda)));
    }
    let mut out = contrastive(batch, config)?;
    let contrastive_value = out.value;
    out.parts.push(("contrastive".into(), contrastive_value));
    if config.lambda == 0.0 {
        return Ok(out);
    }
    if let Some((head, negatives)) = matcher {
        let dtm = dtm_loss(batch, head, negatives)?;
        out.value += config.lambda * dtm.value;
        out.grads.add_scaled(&dtm.grads, config.lambda);
        out.parts.push(("dtm".into(), dtm.value));
        out.positives_only = dtm.positives_only;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn random_batch(b: usize, n: usize, seed: u64) -> TriEmbeddings {
        let mut r = rng::stream(seed, 0);
        let mut unit = || {
            let v: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let s = geometry::norm(&v);
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        TriEmbeddings {
            text: (0..b).map(|_| unit()).collect(),
            video: (0..b).map(|_| unit()).collect(),
            audio: (0..b).map(|_| unit()).collect(),
        }
    }

    #[test]
    fn single_row_batch_has_zero_loss() {
        let batch = random_batch(1, 3, 1);
        for obj in Objective::ALL {
            let cfg = LossConfig {
                objective: obj,
                ..LossConfig::default()
            };
            assert_eq!(contrastive(&batch, &cfg).unwrap().value, 0.0, "{obj}");
        }
    }

    #[test]
    fn two_by_two_softmax_by_hand() {
        // positive areas 0, cross areas 1, tau = 1 => ln(1 + e^-1)
        let (l, _) = softmax_cross_entropy(&[0.0, -1.0, -1.0, 0.0], 2);
        assert_relative_eq!(l, (1.0 + (-1.0f64).exp()).ln(), max_relative = 1e-15);
        assert_relative_eq!(l, 0.313262, epsilon = 1e-6);
    }

    #[test]
    fn row_shift_invariance() {
        let logits = [0.3, -1.2, 2.0, 0.5, 0.1, -0.7, 1.1, 0.0, 0.4];
        let (base, _) = softmax_cross_entropy(&logits, 3);
        let shifted: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(k, l)| l + [100.0, -55.5, 7.0][k / 3])
            .collect();
        let (moved, _) = softmax_cross_entropy(&shifted, 3);
        assert!((base - moved).abs() < 1e-10);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let (l, g) = softmax_cross_entropy(&[1e4, -1e4, 3e4, 0.0], 2);
        assert!(l.is_finite() && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn identical_triples_give_ln_b() {
        let one = random_batch(1, 4, 3);
        let b = 5;
        let batch = TriEmbeddings {
            text: vec![one.text[0].clone(); b],
            video: vec![one.video[0].clone(); b],
            audio: vec![one.audio[0].clone(); b],
        };
        for obj in Objective::ALL {
            let cfg = LossConfig {
                objective: obj,
                ..LossConfig::default()
            };
            let out = contrastive(&batch, &cfg).unwrap();
            for (name, v) in &out.parts {
                assert!((v - (b as f64).ln()).abs() < 1e-12, "{obj} {name} {v}");
            }
        }
    }

    #[test]
    fn bce_examples() {
        let (l, _) = bce_with_logits(&[0.0, 0.0, 0.0], &[1.0, 0.0, 1.0]);
        assert_relative_eq!(l, 2.0f64.ln(), max_relative = 1e-15);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let (l, _) = bce_with_logits(&[logit(0.8), logit(0.3)], &[1.0, 0.0]);
        let expect = -0.5 * (0.8f64.ln() + 0.7f64.ln());
        assert_relative_eq!(l, expect, max_relative = 1e-12);
        assert_relative_eq!(l, 0.289909, epsilon = 1e-6);
        // p_dtm equal to the label drives the loss to zero
        let (l, _) = bce_with_logits(&[800.0, -800.0], &[1.0, 0.0]);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn tau_must_be_positive() {
        let batch = random_batch(3, 3, 1);
        assert!(matches!(triangle_contrastive(&batch, 0.0, 0.0), Err(Error::Contract(_))));
        assert!(matches!(symile_contrastive(&batch, -1.0), Err(Error::Contract(_))));
        assert!(matches!(
            pairwise_anchor_loss(&batch, 0.0, Modality::Text),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn lambda_zero_total_is_bitwise_triangle() {
        let batch = random_batch(6, 3, 2);
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let mut head = Mlp::new(&[9, 4, 1], crate::nn::Activation::Tanh, false, &mut rng::stream(1, 1)).unwrap();
        let negs = vec![Some(1), Some(0), Some(0), Some(0), Some(0), Some(0)];
        let total = total_loss(&batch, &cfg, Some((&mut head, &negs))).unwrap();
        let tri = triangle_contrastive(&batch, cfg.tau, cfg.area_eps).unwrap();
        assert_eq!(total.value.to_bits(), tri.value.to_bits());
        assert_eq!(total.grads, tri.grads);
        assert!(head.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn weighted_sum_with_lambda() {
        let batch = random_batch(4, 3, 8);
        let cfg = LossConfig::default();
        let mk = || Mlp::new(&[9, 4, 1], crate::nn::Activation::Tanh, false, &mut rng::stream(1, 1)).unwrap();
        let negs = vec![Some(1), Some(2), Some(3), Some(0)];
        let total = total_loss(&batch, &cfg, Some((&mut mk(), &negs))).unwrap();
        let tri = triangle_contrastive(&batch, cfg.tau, cfg.area_eps).unwrap().value;
        let dtm = dtm_loss(&batch, &mut mk(), &negs).unwrap().value;
        assert_eq!(total.value, tri + 0.1 * dtm);
        assert_eq!(total.part("dtm"), Some(dtm));
    }

    #[test]
    fn dtm_without_negatives_flags_positive_only() {
        let batch = random_batch(1, 3, 4);
        let mut head = Mlp::new(&[9, 1], crate::nn::Activation::Tanh, false, &mut rng::stream(1, 1)).unwrap();
        let negs = sample_negatives(&[7], &mut rng::stream(0, 0));
        assert_eq!(negs, vec![None]);
        let out = dtm_loss(&batch, &mut head, &negs).unwrap();
        assert!(out.positives_only);
        assert!(out.value.is_finite());
    }

    #[test]
    fn negatives_avoid_own_pair() {
        let ids = [1, 2, 3, 4, 5, 6];
        let negs = sample_negatives(&ids, &mut rng::stream(3, 9));
        for (i, n) in negs.iter().enumerate() {
            assert_ne!(n.unwrap(), i);
        }
        assert_eq!(negs, sample_negatives(&ids, &mut rng::stream(3, 9)));
    }

    #[test]
    fn hand_built_two_row_batch() {
        // collinear positives (area 0), every swapped triple has base 1 and height 2 (area 1)
        let batch = TriEmbeddings {
            text: vec![vec![2.0, 0.0], vec![3.0, 2.0]],
            video: vec![vec![0.0, 0.0], vec![0.0, 2.0]],
            audio: vec![vec![1.0, 0.0], vec![1.0, 2.0]],
        };
        let out = triangle_contrastive(&batch, 1.0, 0.0).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.value - expect).abs() < 1e-12);
        assert!((out.part("d2t").unwrap() - expect).abs() < 1e-12);
        assert!((out.part("t2d").unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn pairwise_identity_scores_by_hand() {
        // orthonormal rows: cos matrix is the identity in every pair
        let e = |k: usize| (0..3).map(|d| if d == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let batch = TriEmbeddings {
            text: vec![e(0), e(1)],
            video: vec![e(0), e(1)],
            audio: vec![e(0), e(1)],
        };
        let out = pairwise_anchor_loss(&batch, 1.0, Modality::Text).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert_eq!(out.parts.len(), 4);
        for (name, v) in &out.parts {
            assert!((v - expect).abs() < 1e-12, "{name}");
        }
        assert!((out.value - 2.0 * expect).abs() < 1e-12);
    }

    #[test]
    fn smaller_positive_area_lowers_the_loss() {
        let b = 4;
        let mut r = rng::stream(21, 0);
        let mut areas: Vec<f64> = (0..b * b).map(|_| r.random_range(0.0..1.3)).collect();
        let loss = |a: &[f64]| paired_contrastive(&a.iter().map(|x| -x).collect::<Vec<_>>(), b, 0.07).value;
        for i in 0..b {
            let before = loss(&areas);
            areas[i * b + i] *= 0.9;
            assert!(loss(&areas) < before);
        }
    }
}
