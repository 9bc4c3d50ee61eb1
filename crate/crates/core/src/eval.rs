//! Retrieval and zero-shot evaluation under any objective's scoring rule.
//!
//! Ranking convention: candidates are sorted by preference (best first) and
//! ties go to the lowest candidate index, so rank is
//! `1 + #{strictly better} + #{equal with a lower index}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{self, Orientation, ScoreMatrix};
use crate::losses::Objective;
use crate::nn::{EncoderStack, Modality, TriEmbeddings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Caption queries, `(video, audio)` candidates.
    T2D,
    /// `(video, audio)` queries, caption candidates.
    D2T,
}

/// How one objective scores a single `(t, v, a)` triple at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scorer {
    pub objective: Objective,
    /// Cosine weight on the `(text, video)` pair; triangle only.
    pub alpha: f64,
    /// Anchor for the pairwise cosine baseline.
    pub anchor: Modality,
}

impl Scorer {
    pub fn new(objective: Objective, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::contract(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if alpha != 0.0 && objective != Objective::Triangle {
            return Err(Error::contract(format!(
                "alpha = {alpha} is undefined for the {objective} objective"
            )));
        }
        Ok(Self {
            objective,
            alpha,
            anchor: Modality::Text,
        })
    }

    pub fn with_anchor(mut self, anchor: Modality) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn orientation(&self) -> Orientation {
        match self.objective {
            Objective::Triangle | Objective::GramVolume => Orientation::LowerIsBetter,
            Objective::CosineAnchor | Objective::SymileMip => Orientation::HigherIsBetter,
        }
    }

    pub fn score(&self, t: &[f64], v: &[f64], a: &[f64]) -> Result<f64> {
        match self.objective {
            Objective::Triangle => geometry::regularized_score(t, v, a, self.alpha),
            Objective::GramVolume => geometry::gram_volume(&[t, v, a]),
            Objective::SymileMip => {
                if t.len() != v.len() || t.len() != a.len() {
                    return Err(Error::contract("mip operands must share a dimension"));
                }
                Ok(geometry::symile_mip(t, v, a))
            }
            Objective::CosineAnchor => {
                let parts = [(Modality::Text, t), (Modality::Video, v), (Modality::Audio, a)];
                let anchor = parts.iter().find(|p| p.0 == self.anchor).unwrap().1;
                parts
                    .iter()
                    .filter(|p| p.0 != self.anchor)
                    .map(|p| geometry::cosine(anchor, p.1))
                    .sum()
            }
        }
    }
}

/// Scores every query against every candidate.
///
/// For [`Direction::T2D`] rows are `texts` and columns are the data pairs
/// `(videos[j], audios[j])`; for [`Direction::D2T`] rows are data pairs and
/// columns are `texts`.
pub fn score_all(
    texts: &[Vec<f64>],
    videos: &[Vec<f64>],
    audios: &[Vec<f64>],
    scorer: &Scorer,
    direction: Direction,
) -> Result<ScoreMatrix> {
    if videos.len() != audios.len() {
        return Err(Error::contract("video and audio candidate lists differ in length"));
    }
    match direction {
        Direction::T2D => ScoreMatrix::from_fn(
            texts.len(),
            videos.len(),
            scorer.orientation(),
            "row i = caption t_i vs data (v_j,a_j)",
            |i, j| scorer.score(&texts[i], &videos[j], &audios[j]),
        ),
        Direction::D2T => ScoreMatrix::from_fn(
            videos.len(),
            texts.len(),
            scorer.orientation(),
            "row i = data (v_i,a_i) vs captions t_j",
            |i, j| scorer.score(&texts[j], &videos[i], &audios[i]),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub recall_at: BTreeMap<usize, f64>,
    /// 1-based rank of the best relevant candidate per query.
    pub ranks: Vec<usize>,
    pub objective: Objective,
    pub alpha: f64,
}

impl RetrievalReport {
    pub fn recall(&self, k: usize) -> f64 {
        self.recall_at.get(&k).copied().unwrap_or(f64::NAN)
    }
}

fn rank_of(row: &[f64], pref: impl Fn(f64) -> f64, target: usize) -> usize {
    let p = pref(row[target]);
    1 + row
        .iter()
        .enumerate()
        .filter(|&(j, &s)| {
            let q = pref(s);
            q > p || (q == p && j < target)
        })
        .count()
}

fn preference(o: Orientation) -> fn(f64) -> f64 {
    match o {
        Orientation::HigherIsBetter => |s| s,
        Orientation::LowerIsBetter => |s| -s,
    }
}

fn report_from_ranks(
    ranks: Vec<usize>,
    ks: &[usize],
    direction: Direction,
    scorer: &Scorer,
) -> RetrievalReport {
    let q = ranks.len() as f64;
    let recall_at = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / q))
        .collect();
    RetrievalReport {
        direction,
        recall_at,
        ranks,
        objective: scorer.objective,
        alpha: scorer.alpha,
    }
}

/// Recall@k when each query row has exactly one correct column `truth[row]`.
pub fn recall_at_k(
    matrix: &ScoreMatrix,
    truth: &[usize],
    ks: &[usize],
    direction: Direction,
    scorer: &Scorer,
) -> Result<RetrievalReport> {
    if truth.len() != matrix.rows() {
        return Err(Error::contract(format!(
            "{} truth entries for {} queries",
            truth.len(),
            matrix.rows()
        )));
    }
    if let Some(bad) = truth.iter().find(|&&c| c >= matrix.cols()) {
        return Err(Error::contract(format!(
            "truth column {bad} out of range ({} candidates)",
            matrix.cols()
        )));
    }
    let pref = preference(matrix.orientation);
    let ranks = truth
        .iter()
        .enumerate()
        .map(|(i, &c)| rank_of(matrix.row(i), pref, c))
        .collect();
    Ok(report_from_ranks(ranks, ks, direction, scorer))
}

/// Recall@k when every candidate sharing the query's label counts as a hit;
/// the rank is that of the best-ranked relevant candidate.
pub fn recall_at_k_by_label(
    matrix: &ScoreMatrix,
    query_labels: &[usize],
    candidate_labels: &[usize],
    ks: &[usize],
    direction: Direction,
    scorer: &Scorer,
) -> Result<RetrievalReport> {
    if query_labels.len() != matrix.rows() || candidate_labels.len() != matrix.cols() {
        return Err(Error::contract("label lists do not match the score matrix"));
    }
    let pref = preference(matrix.orientation);
    let ranks = query_labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            candidate_labels
                .iter()
                .enumerate()
                .filter(|&(_, &l)| l == label)
                .map(|(c, _)| rank_of(matrix.row(i), pref, c))
                .min()
                .ok_or_else(|| Error::contract(format!("no candidate carries label {label}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_ranks(ranks, ks, direction, scorer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    pub retrieval: RetrievalReport,
}

/// Scores each `(video, audio)` pair against every class caption and
/// predicts the best one. Accuracy equals R@1 of the same scores.
pub fn classify_zero_shot(
    videos: &[Vec<f64>],
    audios: &[Vec<f64>],
    class_texts: &[Vec<f64>],
    labels: &[usize],
    scorer: &Scorer,
    ks: &[usize],
) -> Result<ZeroShotReport> {
    if class_texts.len() < 2 {
        return Err(Error::contract("zero-shot classification needs at least 2 classes"));
    }
    let scores = score_all(class_texts, videos, audios, scorer, Direction::D2T)?;
    let retrieval = recall_at_k(&scores, labels, ks, Direction::D2T, scorer)?;
    let pref = preference(scores.orientation);
    let predictions: Vec<usize> = (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            (0..row.len())
                .find(|&c| rank_of(row, pref, c) == 1)
                .unwrap()
        })
        .collect();
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(ZeroShotReport {
        accuracy: hits as f64 / labels.len() as f64,
        predictions,
        retrieval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaStats {
    pub mean: f64,
    /// Counts over bins of width [`AREA_BIN_WIDTH`] starting at 0; the last
    /// bin also absorbs anything larger.
    pub histogram: Vec<usize>,
}

pub const AREA_BIN_WIDTH: f64 = 0.1;
/// Largest triangle inscribed in the unit sphere has area 3*sqrt(3)/4 < 1.3.
pub const AREA_BINS: usize = 13;

/// Mean and histogram of the area of every matched triple.
pub fn positive_area_stats(emb: &TriEmbeddings) -> Result<AreaStats> {
    if emb.is_empty() {
        return Err(Error::contract("area statistics of an empty set"));
    }
    let mut histogram = vec![0; AREA_BINS];
    let mut sum = 0.0;
    for i in 0..emb.len() {
        let a = geometry::triangle_area(&emb.text[i], &emb.video[i], &emb.audio[i], 0.0);
        sum += a;
        let bin = ((a / AREA_BIN_WIDTH) as usize).min(AREA_BINS - 1);
        histogram[bin] += 1;
    }
    Ok(AreaStats {
        mean: sum / emb.len() as f64,
        histogram,
    })
}

pub fn embed_dataset(stack: &EncoderStack, dataset: &Dataset) -> Result<TriEmbeddings> {
    Ok(TriEmbeddings {
        text: stack.embed_all(Modality::Text, &dataset.text)?,
        video: stack.embed_all(Modality::Video, &dataset.video)?,
        audio: stack.embed_all(Modality::Audio, &dataset.audio)?,
    })
}

pub fn track_positive_area(stack: &EncoderStack, dataset: &Dataset) -> Result<AreaStats> {
    positive_area_stats(&embed_dataset(stack, dataset)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10] }
    }
}

/// Both retrieval directions on a labelled dataset plus area statistics.
///
/// D2T ranks the class captions for every `(video, audio)` pair; T2D ranks
/// all data pairs for every caption, any pair of the caption's class being
/// a hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub t2d: RetrievalReport,
    pub d2t: RetrievalReport,
    pub area: AreaStats,
}

impl EvalSummary {
    /// Recall@k averaged over both directions.
    pub fn mean_recall(&self, k: usize) -> f64 {
        0.5 * (self.t2d.recall(k) + self.d2t.recall(k))
    }
}

pub fn evaluate(
    stack: &EncoderStack,
    dataset: &Dataset,
    objective: Objective,
    alpha_t2d: f64,
    alpha_d2t: f64,
    anchor: Modality,
    ks: &[usize],
) -> Result<EvalSummary> {
    if dataset.is_empty() {
        return Err(Error::contract("evaluation on an empty dataset"));
    }
    let emb = embed_dataset(stack, dataset)?;
    let class_text = stack.embed_all(Modality::Text, &dataset.class_text)?;
    let d2t_scorer = Scorer::new(objective, alpha_d2t)?.with_anchor(anchor);
    let d2t = classify_zero_shot(&emb.video, &emb.audio, &class_text, &dataset.labels, &d2t_scorer, ks)?.retrieval;
    let t2d_scorer = Scorer::new(objective, alpha_t2d)?.with_anchor(anchor);
    let scores = score_all(&emb.text, &emb.video, &emb.audio, &t2d_scorer, Direction::T2D)?;
    let t2d = recall_at_k_by_label(&scores, &dataset.labels, &dataset.labels, ks, Direction::T2D, &t2d_scorer)?;
    Ok(EvalSummary {
        t2d,
        d2t,
        area: positive_area_stats(&emb)?,
    })
}
