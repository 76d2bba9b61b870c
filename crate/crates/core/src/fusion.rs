//! Zero-shot cosine classifier and the rules that fuse it with an exemplar
//! model.
//!
//! AIM weights the exemplar model by `w = p(y ∈ Y_e | I)`, the zero-shot
//! probability mass on candidate labels covered by the exemplars. AIM-Prob
//! mixes distributions:
//!
//! ```text
//! p(yᵢ) = w · p_z(yᵢ) p_e(yᵢ) / Σ_{j∈Y_e} p_z(yⱼ) p_e(yⱼ) + (1 − w) · p_z(yᵢ)
//! ```
//!
//! where the first term vanishes for uncovered labels. AIM-Emb blends label
//! embeddings, `v_out = w · v_e + (1 − w) · v_I`, and classifies `v_out` with
//! the zero-shot classifier.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::softmax;
use crate::types::{EmbeddingVector, LabelId, LabelTable, PredictionOutput, ProbabilityDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotConfig {
    pub temperature: f64,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        ZeroShotConfig { temperature: 100.0 }
    }
}

impl ZeroShotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// The labels a query may be assigned in the current task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    label_ids: Vec<LabelId>,
}

impl CandidateSet {
    pub fn new(label_ids: Vec<LabelId>) -> Result<Self> {
        if label_ids.is_empty() {
            return Err(Error::InvalidConfig("candidate set is empty".into()));
        }
        let unique: BTreeSet<_> = label_ids.iter().collect();
        if unique.len() != label_ids.len() {
            return Err(Error::InvalidConfig("candidate set has duplicates".into()));
        }
        Ok(CandidateSet { label_ids })
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.label_ids
    }

    pub fn len(&self) -> usize {
        self.label_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label_ids.is_empty()
    }

    pub fn contains(&self, label: LabelId) -> bool {
        self.label_ids.contains(&label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    ZeroShotOnly,
    ExemplarOnly,
    AvgProb,
    AvgEmb,
    AimProb,
    AimEmb,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::ZeroShotOnly => "zero-shot-only",
            FusionMode::ExemplarOnly => "exemplar-only",
            FusionMode::AvgProb => "avg-prob",
            FusionMode::AvgEmb => "avg-emb",
            FusionMode::AimProb => "aim-prob",
            FusionMode::AimEmb => "aim-emb",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zs" | "zero-shot" | "zero-shot-only" => Ok(FusionMode::ZeroShotOnly),
            "exemplar" | "exemplar-only" | "none" => Ok(FusionMode::ExemplarOnly),
            "avg-prob" => Ok(FusionMode::AvgProb),
            "avg-emb" => Ok(FusionMode::AvgEmb),
            "aim-prob" => Ok(FusionMode::AimProb),
            "aim-emb" => Ok(FusionMode::AimEmb),
            other => Err(Error::InvalidConfig(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Blend weight of the Avg modes.
    pub alpha: f64,
    /// When set, replaces the live covered labels in the coverage weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_override: Option<BTreeSet<LabelId>>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::AimEmb,
            alpha: 0.5,
            coverage_override: None,
        }
    }
}

impl FusionConfig {
    pub fn new(mode: FusionMode) -> Self {
        FusionConfig {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("alpha must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Label set used for the coverage weight.
    pub fn coverage_set<'a>(&'a self, live: &'a BTreeSet<LabelId>) -> &'a BTreeSet<LabelId> {
        self.coverage_override.as_ref().unwrap_or(live)
    }
}

/// Covered set for long-tailed evaluation: the rarest `rare_fraction` of the
/// stored labels (by exemplar count, ties by label id) count as uncovered.
pub fn long_tail_coverage(
    counts: &std::collections::BTreeMap<LabelId, usize>,
    rare_fraction: f64,
) -> BTreeSet<LabelId> {
    let mut by_count: Vec<(usize, LabelId)> = counts.iter().map(|(&l, &c)| (c, l)).collect();
    by_count.sort();
    let rare = ((by_count.len() as f64) * rare_fraction).round() as usize;
    by_count.into_iter().skip(rare).map(|(_, l)| l).collect()
}

/// `τ · cos(q, tᵢ)` for every candidate.
pub fn zeroshot_logits(
    q: &EmbeddingVector,
    cand: &CandidateSet,
    labels: &LabelTable,
    cfg: &ZeroShotConfig,
) -> Result<Vec<f64>> {
    let q_norm = q.norm();
    cand.labels()
        .iter()
        .map(|&id| {
            let t = labels.text_embedding(id)?;
            t.check_dim(q.dim())?;
            Ok(cfg.temperature * q.dot(t) / (q_norm * t.norm()))
        })
        .collect()
}

pub fn zeroshot_proba(
    q: &EmbeddingVector,
    cand: &CandidateSet,
    labels: &LabelTable,
    cfg: &ZeroShotConfig,
) -> Result<ProbabilityDistribution> {
    let probs = softmax(&zeroshot_logits(q, cand, labels, cfg)?)?;
    ProbabilityDistribution::new(cand.labels().to_vec(), probs)
}

/// `p(y ∈ covered | q)` with the softmax taken over all candidates.
pub fn coverage_probability(
    q: &EmbeddingVector,
    cand: &CandidateSet,
    labels: &LabelTable,
    covered: &BTreeSet<LabelId>,
    cfg: &ZeroShotConfig,
) -> Result<f64> {
    let logits = zeroshot_logits(q, cand, labels, cfg)?;
    coverage_from_logits(&logits, cand, covered)
}

/// Covered mass from raw logits. Computed as a ratio of exponential sums so
/// that full and empty coverage give exactly 1 and 0.
pub fn coverage_from_logits(logits: &[f64], cand: &CandidateSet, covered: &BTreeSet<LabelId>) -> Result<f64> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logit"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut inside, mut outside) = (0.0, 0.0);
    for (&l, label) in logits.iter().zip(cand.labels()) {
        let e = (l - max).exp();
        if covered.contains(label) {
            inside += e;
        } else {
            outside += e;
        }
    }
    Ok(inside / (inside + outside))
}

/// Restricts an exemplar distribution to the covered candidates and
/// renormalizes it there. With no mass on any of them the result is uniform.
pub fn restrict_to_covered(
    p_e: &ProbabilityDistribution,
    cand: &CandidateSet,
    covered: &BTreeSet<LabelId>,
) -> Result<ProbabilityDistribution> {
    let support: Vec<LabelId> = cand.labels().iter().copied().filter(|l| covered.contains(l)).collect();
    if support.is_empty() {
        return ProbabilityDistribution::partial(vec![], vec![]);
    }
    let mut probs: Vec<f64> = support.iter().map(|&l| p_e.prob_of(l)).collect();
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        probs.iter_mut().for_each(|p| *p /= total);
    } else {
        let u = 1.0 / probs.len() as f64;
        probs.iter_mut().for_each(|p| *p = u);
    }
    ProbabilityDistribution::new(support, probs)
}

/// Probability-space fusion (`AvgProb` or `AimProb`).
///
/// `p_z` spans the candidates; `p_e` spans the covered candidates (see
/// [`restrict_to_covered`]); `w` is the coverage weight. The output keeps the
/// order of `p_z`'s support.
pub fn fuse_prob(
    p_z: &ProbabilityDistribution,
    p_e: &ProbabilityDistribution,
    w: f64,
    mode: FusionMode,
    alpha: f64,
) -> Result<ProbabilityDistribution> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidConfig(format!("coverage weight {w} outside [0, 1]")));
    }
    let support = p_z.support().to_vec();
    let mut out: Vec<f64> = match mode {
        FusionMode::AvgProb => {
            let mut v: Vec<f64> = p_z
                .iter()
                .map(|(l, pz)| alpha * p_e.prob_of(l) + (1.0 - alpha) * pz)
                .collect();
            if p_e.total() == 0.0 {
                // nothing covered: the blend reduces to the zero-shot term
                v = p_z.probs().to_vec();
            }
            v
        }
        FusionMode::AimProb => {
            if p_e.is_empty() && w > 0.0 {
                return Err(Error::EmptyCoveredSet(w));
            }
            if w == 0.0 {
                return Ok(p_z.clone());
            }
            let covered_term = covered_product(p_z, p_e);
            p_z.iter()
                .map(|(l, pz)| {
                    let first = covered_term.iter().find(|(cl, _)| *cl == l).map_or(0.0, |(_, v)| *v);
                    w * first + (1.0 - w) * pz
                })
                .collect()
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "{other} is not a probability fusion mode"
            )))
        }
    };
    let total: f64 = out.iter().sum();
    if total > 0.0 && total != 1.0 {
        out.iter_mut().for_each(|p| *p /= total);
    }
    ProbabilityDistribution::new(support, out)
}

/// `p_z p_e / Σ_{Y_e} p_z p_e` over the covered labels, falling back to the
/// renormalized `p_z` (then `p_e`) when the products underflow to zero.
fn covered_product(p_z: &ProbabilityDistribution, p_e: &ProbabilityDistribution) -> Vec<(LabelId, f64)> {
    let products: Vec<(LabelId, f64)> = p_e.iter().map(|(l, pe)| (l, p_z.prob_of(l) * pe)).collect();
    let total: f64 = products.iter().map(|(_, v)| v).sum();
    if total > 0.0 {
        return products.into_iter().map(|(l, v)| (l, v / total)).collect();
    }
    let zs: Vec<(LabelId, f64)> = p_e.support().iter().map(|&l| (l, p_z.prob_of(l))).collect();
    let zs_total: f64 = zs.iter().map(|(_, v)| v).sum();
    if zs_total > 0.0 {
        return zs.into_iter().map(|(l, v)| (l, v / zs_total)).collect();
    }
    let pe_total = p_e.total();
    p_e.iter().map(|(l, v)| (l, v / pe_total)).collect()
}

/// Embedding-space fusion: classify `α · v_e + (1 − α) · v_I` zero-shot.
pub fn fuse_embedding(
    v_e: &EmbeddingVector,
    v_i: &EmbeddingVector,
    alpha: f64,
    cand: &CandidateSet,
    labels: &LabelTable,
    zs_cfg: &ZeroShotConfig,
) -> Result<PredictionOutput> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("blend weight {alpha} outside [0, 1]")));
    }
    v_e.check_dim(v_i.dim())?;
    let v_out = if alpha == 0.0 {
        v_i.clone()
    } else if alpha == 1.0 {
        v_e.clone()
    } else {
        let blend: Vec<f64> = v_e
            .as_slice()
            .iter()
            .zip(v_i.as_slice())
            .map(|(&e, &i)| alpha * e as f64 + (1.0 - alpha) * i as f64)
            .collect();
        match EmbeddingVector::normalize_f64(&blend) {
            Ok(v) => v,
            // antipodal inputs cancel exactly; defer to the image embedding
            Err(Error::ZeroVector) => v_i.clone(),
            Err(e) => return Err(e),
        }
    };
    let dist = zeroshot_proba(&v_out, cand, labels, zs_cfg)?;
    Ok(PredictionOutput::from_distribution(dist)?.with_embedding(v_out))
}

/// Everything needed to label one query within one candidate set.
pub struct FusionContext<'a> {
    pub labels: &'a LabelTable,
    pub candidates: &'a CandidateSet,
    /// Live covered labels of the exemplar model.
    pub covered: &'a BTreeSet<LabelId>,
    pub zero_shot: &'a ZeroShotConfig,
    pub fusion: &'a FusionConfig,
}

impl FusionContext<'_> {
    /// Final label for query `q` given the exemplar model's output, if any.
    ///
    /// Without an exemplar output every mode falls back to zero-shot.
    pub fn predict(&self, q: &EmbeddingVector, exemplar: Option<&PredictionOutput>) -> Result<LabelId> {
        let cand = self.candidates;
        let zs_dist = || zeroshot_proba(q, cand, self.labels, self.zero_shot);
        let Some(ex) = exemplar else {
            return zs_dist()?.argmax();
        };
        let exemplar_embedding = || -> Result<EmbeddingVector> {
            match &ex.embedding {
                Some(v) => Ok(v.clone()),
                None => Ok(self.labels.text_embedding(ex.argmax_label)?.clone()),
            }
        };
        let covered_in_cand: BTreeSet<LabelId> = cand
            .labels()
            .iter()
            .copied()
            .filter(|l| self.covered.contains(l))
            .collect();
        let weight = || -> Result<f64> {
            let logits = zeroshot_logits(q, cand, self.labels, self.zero_shot)?;
            coverage_from_logits(&logits, cand, self.fusion.coverage_set(self.covered))
        };
        let restricted = || -> Result<ProbabilityDistribution> {
            let p_e = ex
                .distribution
                .clone()
                .unwrap_or_else(|| ProbabilityDistribution::point(ex.argmax_label));
            restrict_to_covered(&p_e, cand, &covered_in_cand)
        };

        match self.fusion.mode {
            FusionMode::ZeroShotOnly => zs_dist()?.argmax(),
            FusionMode::ExemplarOnly => match &ex.embedding {
                Some(v) => zeroshot_proba(v, cand, self.labels, self.zero_shot)?.argmax(),
                None => {
                    let r = restricted()?;
                    if r.is_empty() {
                        zs_dist()?.argmax()
                    } else {
                        r.argmax()
                    }
                }
            },
            FusionMode::AvgProb => {
                fuse_prob(&zs_dist()?, &restricted()?, 0.0, FusionMode::AvgProb, self.fusion.alpha)?.argmax()
            }
            FusionMode::AimProb => {
                let w = weight()?;
                fuse_prob(&zs_dist()?, &restricted()?, w, FusionMode::AimProb, self.fusion.alpha)?.argmax()
            }
            FusionMode::AvgEmb => Ok(fuse_embedding(
                &exemplar_embedding()?,
                q,
                self.fusion.alpha,
                cand,
                self.labels,
                self.zero_shot,
            )?
            .argmax_label),
            FusionMode::AimEmb => {
                Ok(
                    fuse_embedding(&exemplar_embedding()?, q, weight()?, cand, self.labels, self.zero_shot)?
                        .argmax_label,
                )
            }
        }
    }
}

#[cfg(test)]
mod tests;
