//! Synthetic stand-in for image/text embedding pairs.
//!
//! Each class has a prototype drawn uniformly on the unit sphere. Images are
//! `normalize(p + σ·g)` and the class text embedding is `normalize(p + σ_t·g')`
//! for independent standard gaussians `g`, `g'`, so `σ_t` plays the role of the
//! gap between the two modalities.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::TaskDataset;
use crate::types::{EmbeddingVector, LabelEntry, LabelId, RngSeed, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub dim: usize,
    pub classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    /// Per-coordinate standard deviation of image noise.
    pub intra_class_sigma: f64,
    /// Per-coordinate standard deviation of text noise.
    pub text_offset_sigma: f64,
    /// First global label id; tasks generated for one run use disjoint ranges.
    pub label_offset: u32,
    pub seed: RngSeed,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synth".into(),
            dim: 64,
            classes: 20,
            per_class_train: 100,
            per_class_test: 20,
            intra_class_sigma: 0.1,
            text_offset_sigma: 0.1,
            label_offset: 0,
            seed: RngSeed(0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.classes == 0 {
            return bad("classes must be positive");
        }
        if self.per_class_train == 0 && self.per_class_test == 0 {
            return bad("at least one sample per class is required");
        }
        if !(self.intra_class_sigma >= 0.0 && self.intra_class_sigma.is_finite()) {
            return bad("intra_class_sigma must be finite and >= 0");
        }
        if !(self.text_offset_sigma >= 0.0 && self.text_offset_sigma.is_finite()) {
            return bad("text_offset_sigma must be finite and >= 0");
        }
        if (self.label_offset as u64) + (self.classes as u64) > u32::MAX as u64 {
            return bad("label ids overflow u32");
        }
        Ok(())
    }
}

/// A generated task together with the label entries it introduces.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub labels: Vec<LabelEntry>,
    pub task: TaskDataset,
}

fn gaussian_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn perturbed(rng: &mut impl Rng, proto: &[f64], sigma: f64) -> Result<EmbeddingVector> {
    if sigma == 0.0 {
        return EmbeddingVector::normalize_f64(proto);
    }
    let v: Vec<f64> = proto
        .iter()
        .map(|&p| {
            let g: f64 = StandardNormal.sample(rng);
            p + sigma * g
        })
        .collect();
    EmbeddingVector::normalize_f64(&v)
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthTask> {
    cfg.validate()?;
    let mut rng = cfg.seed.rng();
    let mut labels = Vec::with_capacity(cfg.classes);
    let mut protos = Vec::with_capacity(cfg.classes);
    for c in 0..cfg.classes {
        let proto = EmbeddingVector::normalize_f64(&gaussian_vector(&mut rng, cfg.dim))?;
        let proto: Vec<f64> = proto.as_slice().iter().map(|&x| x as f64).collect();
        let id = LabelId(cfg.label_offset + c as u32);
        labels.push(LabelEntry {
            id,
            text: format!("{} class {c}", cfg.name),
            text_embedding: perturbed(&mut rng, &proto, cfg.text_offset_sigma)?,
        });
        protos.push(proto);
    }

    let draw = |per_class: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(per_class * cfg.classes);
        for _ in 0..per_class {
            for (c, proto) in protos.iter().enumerate() {
                out.push(Sample {
                    embedding: perturbed(rng, proto, cfg.intra_class_sigma)?,
                    label: LabelId(cfg.label_offset + c as u32),
                });
            }
        }
        Ok(out)
    };
    let train = draw(cfg.per_class_train, &mut rng)?;
    let test = draw(cfg.per_class_test, &mut rng)?;

    Ok(SynthTask {
        task: TaskDataset {
            name: cfg.name.clone(),
            label_ids: labels.iter().map(|e| e.id).collect(),
            train,
            test,
        },
        labels,
    })
}
