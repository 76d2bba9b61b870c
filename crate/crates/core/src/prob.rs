use crate::error::{Error, Result};
use crate::types::{LabelId, ProbabilityDistribution};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logit"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Label with the largest probability; ties go to the smallest label id.
pub fn argmax_label(dist: &ProbabilityDistribution) -> Result<LabelId> {
    let mut best: Option<(LabelId, f64)> = None;
    for (label, p) in dist.iter() {
        best = match best {
            Some((bl, bp)) if bp > p || (bp == p && bl < label) => Some((bl, bp)),
            _ => Some((label, p)),
        };
    }
    best.map(|(l, _)| l).ok_or(Error::EmptyDistribution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(support: &[u32], probs: &[f64]) -> ProbabilityDistribution {
        ProbabilityDistribution::new(support.iter().map(|&l| LabelId(l)).collect(), probs.to_vec()).unwrap()
    }

    #[test]
    fn softmax_symmetric() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_dominated() {
        let p = softmax(&[100.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!((p[1] - 3.720075976020836e-44).abs() < 1e-56);
    }

    #[test]
    fn softmax_one_two_three() {
        // e^x / sum e^x evaluated independently to five places
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let expected = [0.09003, 0.24473, 0.66524];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 5e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(softmax(&[f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(softmax(&[1.0, f64::INFINITY]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_label(&dist(&[2, 5], &[0.4, 0.6])).unwrap(), LabelId(5));
        assert_eq!(argmax_label(&dist(&[2, 5], &[0.5, 0.5])).unwrap(), LabelId(2));
        assert_eq!(argmax_label(&dist(&[5, 2], &[0.5, 0.5])).unwrap(), LabelId(2));
        assert_eq!(argmax_label(&dist(&[7], &[1.0])).unwrap(), LabelId(7));
        let empty = ProbabilityDistribution::partial(vec![], vec![]).unwrap();
        assert!(matches!(argmax_label(&empty), Err(Error::EmptyDistribution)));
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
            let b = softmax(&shifted).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn argmax_deterministic(probs in proptest::collection::vec(0.0f64..1.0, 1..10)) {
            let total: f64 = probs.iter().sum();
            prop_assume!(total > 0.0);
            let support: Vec<LabelId> = (0..probs.len() as u32).rev().map(LabelId).collect();
            let normalized: Vec<f64> = probs.iter().map(|p| p / total).collect();
            let d = ProbabilityDistribution::partial(support, normalized).unwrap();
            prop_assert_eq!(argmax_label(&d).unwrap(), argmax_label(&d.clone()).unwrap());
        }
    }
}
