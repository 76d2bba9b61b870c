//! Multinomial logistic regression over embeddings.
//!
//! The objective follows the common liblinear/lbfgs convention
//!
//! ```text
//! L(W, b) = ½‖W‖²_F + C · Σᵢ CE(softmax(W vᵢ + b), yᵢ)
//! ```
//!
//! with the intercept `b` left unregularized. It is minimized from zero with a
//! deterministic L-BFGS and Armijo backtracking, so identical inputs always
//! produce bit-identical classifiers.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExemplarModel, Memory, Method};
use crate::prob::softmax;
use crate::types::{EmbeddingVector, LabelId, LabelTable, PredictionOutput, ProbabilityDistribution, RngSeed, Sample};

const LBFGS_MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regularization_c: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the max-abs gradient entry.
    pub grad_tolerance: f64,
    /// Unused by the deterministic solver; kept so configurations round-trip.
    pub seed: RngSeed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regularization_c: 0.316,
            max_iterations: 5000,
            grad_tolerance: 1e-5,
            seed: RngSeed(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization_c > 0.0 && self.regularization_c.is_finite()) {
            return Err(Error::InvalidConfig("regularization_c must be > 0".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(Error::InvalidConfig("grad_tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// The training data and objective of one logistic-regression fit.
///
/// Parameters are laid out as the `classes × dim` weight matrix in row-major
/// order followed by the `classes` biases.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    class_labels: Vec<LabelId>,
    dim: usize,
    features: Vec<f64>,
    targets: Vec<usize>,
    regularization_c: f64,
}

impl LogisticProblem {
    pub fn from_pairs<'a, I>(pairs: I, regularization_c: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a EmbeddingVector, LabelId)>,
    {
        let pairs: Vec<_> = pairs.into_iter().collect();
        let first = pairs.first().ok_or(Error::EmptyStore)?;
        let dim = first.0.dim();
        let mut class_labels: Vec<LabelId> = pairs.iter().map(|p| p.1).collect();
        class_labels.sort_unstable();
        class_labels.dedup();

        let mut features = Vec::with_capacity(pairs.len() * dim);
        let mut targets = Vec::with_capacity(pairs.len());
        for (v, label) in &pairs {
            v.check_dim(dim)?;
            features.extend(v.as_slice().iter().map(|&x| x as f64));
            targets.push(class_labels.binary_search(label).expect("label collected above"));
        }
        Ok(LogisticProblem {
            class_labels,
            dim,
            features,
            targets,
            regularization_c,
        })
    }

    pub fn from_samples(samples: &[Sample], regularization_c: f64) -> Result<Self> {
        Self::from_pairs(samples.iter().map(|s| (&s.embedding, s.label)), regularization_c)
    }

    pub fn class_labels(&self) -> &[LabelId] {
        &self.class_labels
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_samples(&self) -> usize {
        self.targets.len()
    }

    pub fn num_params(&self) -> usize {
        self.num_classes() * (self.dim + 1)
    }

    /// Objective value; writes the gradient into `grad`.
    pub fn value_and_gradient(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let classes = self.num_classes();
        let dim = self.dim;
        debug_assert_eq!(params.len(), self.num_params());
        let (weights, bias) = params.split_at(classes * dim);
        let (grad_w, grad_b) = grad.split_at_mut(classes * dim);

        // ½‖W‖² term.
        let value = 0.5 * weights.iter().map(|w| w * w).sum::<f64>();
        grad_w.copy_from_slice(weights);
        grad_b.iter_mut().for_each(|g| *g = 0.0);

        let c = self.regularization_c;
        let mut logits = vec![0.0; classes];
        let mut data_loss = 0.0;
        for (x, &y) in self.features.chunks_exact(dim).zip(&self.targets) {
            for (k, logit) in logits.iter_mut().enumerate() {
                let row = &weights[k * dim..(k + 1) * dim];
                *logit = bias[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let target_logit = logits[y] - max;
            let mut denom = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                denom += *l;
            }
            // logits now hold unnormalized probabilities
            data_loss += denom.ln() - target_logit;
            for (k, &e) in logits.iter().enumerate() {
                let residual = c * (e / denom - if k == y { 1.0 } else { 0.0 });
                grad_b[k] += residual;
                let row = &mut grad_w[k * dim..(k + 1) * dim];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += residual * v;
                }
            }
        }
        value + c * data_loss
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let mut grad = vec![0.0; params.len()];
        self.value_and_gradient(params, &mut grad)
    }
}

/// Result of minimizing a [`LogisticProblem`].
#[derive(Debug, Clone)]
pub struct Optimum {
    pub params: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub max_abs_gradient: f64,
    pub converged: bool,
    /// Objective value after every accepted step, starting at θ = 0.
    pub trace: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS from θ = 0 with Armijo backtracking.
pub fn minimize(problem: &LogisticProblem, cfg: &TrainConfig) -> Result<Optimum> {
    cfg.validate()?;
    let n = problem.num_params();
    let mut x = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut f = problem.value_and_gradient(&x, &mut g);
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);

    let mut iterations = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alphas = [0.0; LBFGS_MEMORY];

    while max_abs(&g) >= cfg.grad_tolerance && iterations < cfg.max_iterations {
        // Two-loop recursion: direction = -H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alphas[i] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &d);
            let a = alphas[i];
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }

        let mut step = if history.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = problem.value_and_gradient(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + ARMIJO_C1 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !f_new.is_finite() {
            return Err(Error::NonFinite("logistic objective"));
        }
        if !accepted {
            // No further decrease representable at this precision.
            break;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        trace.push(f);
        iterations += 1;
    }

    let max_abs_gradient = max_abs(&g);
    Ok(Optimum {
        params: x,
        objective: f,
        iterations,
        max_abs_gradient,
        converged: max_abs_gradient < cfg.grad_tolerance,
        trace,
    })
}

/// Softmax classifier over a sorted local label subset.
///
/// A single-class classifier is a constant predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    class_labels: Vec<LabelId>,
    dim: usize,
    /// Row-major `classes × dim`.
    weights: Vec<f32>,
    bias: Vec<f32>,
    trained_on_count: usize,
}

impl LinearClassifier {
    /// All-zero parameters: uniform predictions.
    pub fn zeros(mut class_labels: Vec<LabelId>, dim: usize) -> Self {
        class_labels.sort_unstable();
        class_labels.dedup();
        let c = class_labels.len();
        LinearClassifier {
            class_labels,
            dim,
            weights: vec![0.0; c * dim],
            bias: vec![0.0; c],
            trained_on_count: 0,
        }
    }

    pub fn from_parts(
        class_labels: Vec<LabelId>,
        dim: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        trained_on_count: usize,
    ) -> Result<Self> {
        let c = class_labels.len();
        if c == 0 || weights.len() != c * dim || bias.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "classifier with {c} classes, dim {dim}: {} weights, {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if !class_labels.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig("class labels must be strictly ascending".into()));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier parameter"));
        }
        Ok(LinearClassifier {
            class_labels,
            dim,
            weights,
            bias,
            trained_on_count,
        })
    }

    pub fn class_labels(&self) -> &[LabelId] {
        &self.class_labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn trained_on_count(&self) -> usize {
        self.trained_on_count
    }

    pub fn is_constant(&self) -> bool {
        self.class_labels.len() == 1
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|&w| (w as f64) * (w as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn logits(&self, q: &EmbeddingVector) -> Result<Vec<f64>> {
        q.check_dim(self.dim)?;
        let x = q.as_slice();
        Ok(self
            .weights
            .chunks_exact(self.dim.max(1))
            .zip(&self.bias)
            .map(|(row, &b)| b as f64 + row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum::<f64>())
            .collect())
    }

    pub fn predict_proba(&self, q: &EmbeddingVector) -> Result<ProbabilityDistribution> {
        q.check_dim(self.dim)?;
        if self.is_constant() {
            return Ok(ProbabilityDistribution::point(self.class_labels[0]));
        }
        let probs = softmax(&self.logits(q)?)?;
        ProbabilityDistribution::new(self.class_labels.clone(), probs)
    }
}

/// Fits a classifier on `problem`; a single-class problem yields a constant
/// predictor without running the optimizer.
pub fn train_problem(problem: &LogisticProblem, cfg: &TrainConfig) -> Result<LinearClassifier> {
    cfg.validate()?;
    let classes = problem.num_classes();
    let dim = problem.dim();
    if classes == 1 {
        return Ok(LinearClassifier {
            trained_on_count: problem.num_samples(),
            ..LinearClassifier::zeros(problem.class_labels().to_vec(), dim)
        });
    }
    let opt = minimize(problem, cfg)?;
    let (w, b) = opt.params.split_at(classes * dim);
    LinearClassifier::from_parts(
        problem.class_labels().to_vec(),
        dim,
        w.iter().map(|&v| v as f32).collect(),
        b.iter().map(|&v| v as f32).collect(),
        problem.num_samples(),
    )
}

pub fn train<'a, I>(pairs: I, cfg: &TrainConfig) -> Result<LinearClassifier>
where
    I: IntoIterator<Item = (&'a EmbeddingVector, LabelId)>,
{
    let problem = LogisticProblem::from_pairs(pairs, cfg.regularization_c)?;
    train_problem(&problem, cfg)
}

pub fn train_samples(samples: &[Sample], cfg: &TrainConfig) -> Result<LinearClassifier> {
    train(samples.iter().map(|s| (&s.embedding, s.label)), cfg)
}

/// One global classifier retrained on every accumulated exemplar.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LinProbe {
    memory: Memory,
    cfg: TrainConfig,
    classifier: Option<LinearClassifier>,
}

impl LinProbe {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LinProbe {
            memory: Memory::new(),
            cfg,
            classifier: None,
        })
    }

    pub fn classifier(&self) -> Option<&LinearClassifier> {
        self.classifier.as_ref()
    }

    pub fn reserve(&mut self, additional: usize) {
        self.memory.reserve(additional);
    }

    fn is_stale(&self) -> bool {
        self.classifier
            .as_ref()
            .is_none_or(|c| c.trained_on_count() != self.memory.len())
    }
}

impl ExemplarModel for LinProbe {
    fn method(&self) -> Method {
        Method::LinProbe
    }

    fn memory(&self) -> &Memory {
        &self.memory
    }

    fn insert(&mut self, samples: &[Sample]) -> Result<()> {
        for s in samples {
            self.memory.push(s)?;
        }
        Ok(())
    }

    fn fit(&mut self) -> Result<()> {
        if self.memory.is_empty() || !self.is_stale() {
            return Ok(());
        }
        let pairs = self
            .memory
            .store
            .exemplars()
            .iter()
            .map(|e| (&e.image_embedding, e.label_id));
        self.classifier = Some(train(pairs, &self.cfg)?);
        Ok(())
    }

    fn predict(&self, labels: &LabelTable, q: &EmbeddingVector) -> Result<PredictionOutput> {
        if self.memory.is_empty() {
            return Err(Error::EmptyStore);
        }
        let clf = match &self.classifier {
            Some(c) if !self.is_stale() => c,
            _ => return Err(Error::NotTrained),
        };
        let dist = clf.predict_proba(q)?;
        let out = PredictionOutput::from_distribution(dist)?;
        let embedding = labels.text_embedding(out.argmax_label)?.clone();
        Ok(out.with_embedding(embedding))
    }
}
