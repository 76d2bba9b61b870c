//! Wall-time to incorporate one exemplar into a model of a given size.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::synth::{gen_synthetic, SynthConfig};
use crate::knn::{KnnConfig, KnnModel};
use crate::linear::{LinProbe, TrainConfig};
use crate::model::{ExemplarModel, Method};
use crate::treeprobe::{TreeConfig, TreeProbe};
use crate::types::{RngSeed, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub method: Method,
    pub sizes: Vec<usize>,
    pub psi: usize,
    pub repeats: usize,
    pub samples_per_repeat: usize,
    pub dim: usize,
    pub classes: usize,
    /// Fixed optimizer budget per retraining, so cost tracks data size.
    pub max_iterations: usize,
    pub seed: RngSeed,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            method: Method::TreeProbe,
            sizes: vec![5_000, 20_000, 50_000],
            psi: 1_000,
            repeats: 5,
            samples_per_repeat: 5,
            dim: 64,
            classes: 20,
            max_iterations: 30,
            seed: RngSeed(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub method: Method,
    pub psi: usize,
    pub n: usize,
    pub median_us: f64,
    pub mean_us: f64,
    pub trials: usize,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn stream(n: usize, cfg: &LatencyConfig) -> Result<Vec<Sample>> {
    let per_class = n.div_ceil(cfg.classes);
    let mut synth = gen_synthetic(&SynthConfig {
        name: "bench".into(),
        dim: cfg.dim,
        classes: cfg.classes,
        per_class_train: per_class,
        per_class_test: 0,
        intra_class_sigma: 0.1,
        text_offset_sigma: 0.1,
        label_offset: 0,
        seed: cfg.seed.derive(n as u64),
    })?;
    synth.task.train.truncate(n);
    Ok(synth.task.train)
}

fn built_model(n_samples: &[Sample], cfg: &LatencyConfig) -> Result<Box<dyn ExemplarModel>> {
    let train = TrainConfig {
        max_iterations: cfg.max_iterations,
        ..TrainConfig::default()
    };
    let extra = 1 + cfg.repeats * cfg.samples_per_repeat;
    let mut model: Box<dyn ExemplarModel> = match cfg.method {
        Method::Knn => {
            let mut m = KnnModel::new(KnnConfig::default())?;
            m.reserve(n_samples.len() + extra);
            Box::new(m)
        }
        Method::LinProbe => {
            let mut m = LinProbe::new(train)?;
            m.reserve(n_samples.len() + extra);
            Box::new(m)
        }
        Method::TreeProbe => {
            let mut m = TreeProbe::new(TreeConfig {
                node_capacity: cfg.psi,
                train_cfg: train,
                ..TreeConfig::default()
            })?;
            m.reserve(n_samples.len() + extra);
            Box::new(m)
        }
        Method::ZeroShot => {
            return Err(Error::InvalidConfig("zero-shot has nothing to learn".into()));
        }
    };
    // Classifiers are left untrained: incorporation retrains what it touches.
    model.insert(n_samples)?;
    Ok(model)
}

/// Median and mean time of `learn_one` (store plus retraining of whatever
/// the new exemplar touches) at each store size. Each simulation adds a copy
/// of a randomly chosen stored exemplar; one warm-up run is discarded.
pub fn bench_insert_latency(cfg: &LatencyConfig) -> Result<Vec<LatencyRow>> {
    if cfg.sizes.is_empty() {
        return Err(Error::InvalidConfig("at least one size is required".into()));
    }
    if cfg.sizes.contains(&0) || cfg.repeats == 0 || cfg.samples_per_repeat == 0 {
        return Err(Error::InvalidConfig(
            "sizes, repeats and samples must be positive".into(),
        ));
    }
    let mut rows = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let samples = stream(n, cfg)?;
        let mut model = built_model(&samples, cfg)?;
        let mut rng = cfg.seed.derive(0xbe9c ^ n as u64).rng();

        let warm = samples[rng.gen_range(0..samples.len())].clone();
        model.learn_one(&warm)?;

        let mut times = Vec::with_capacity(cfg.repeats * cfg.samples_per_repeat);
        for _ in 0..cfg.repeats {
            for _ in 0..cfg.samples_per_repeat {
                let s = samples[rng.gen_range(0..samples.len())].clone();
                let start = Instant::now();
                model.learn_one(&s)?;
                times.push(start.elapsed().as_secs_f64() * 1e6);
            }
        }
        let mean_us = times.iter().sum::<f64>() / times.len() as f64;
        rows.push(LatencyRow {
            method: cfg.method,
            psi: cfg.psi,
            n,
            median_us: median(&mut times),
            mean_us,
            trials: times.len(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rows_per_size() {
        let cfg = LatencyConfig {
            method: Method::Knn,
            sizes: vec![50, 100],
            dim: 8,
            ..LatencyConfig::default()
        };
        let rows = bench_insert_latency(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.trials == 25 && r.mean_us >= 0.0));
        assert_eq!(rows[1].n, 100);
    }

    #[test]
    fn rejects_missing_sizes_and_zero_shot() {
        let mut cfg = LatencyConfig {
            sizes: vec![],
            ..LatencyConfig::default()
        };
        assert!(bench_insert_latency(&cfg).is_err());
        cfg.sizes = vec![10];
        cfg.method = Method::ZeroShot;
        assert!(bench_insert_latency(&cfg).is_err());
    }
}
