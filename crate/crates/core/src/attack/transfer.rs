use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;

/// A crafted input together with what is needed to score it on a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialExample {
    pub index: usize,
    pub label: usize,
    pub target_class: Option<usize>,
    pub clean: Vec<f64>,
    pub adv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleTransfer {
    pub index: usize,
    /// Target classifies the clean input correctly.
    pub eligible: bool,
    pub clean_prediction: usize,
    pub adv_prediction: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub eligible: usize,
    pub successes: usize,
    /// `None` when no example is eligible.
    pub asr: Option<f64>,
    pub per_example: Vec<ExampleTransfer>,
}

/// Attack success rate on `target`, over the examples it gets right clean.
///
/// Untargeted success: the adversarial input is misclassified. Targeted
/// success: it is classified as the example's target class.
pub fn evaluate_transfer(
    examples: &[AdversarialExample],
    target: &Model,
) -> Result<TransferOutcome> {
    let mut per_example = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.adv.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg(format!(
                "example {}: adversarial input outside [0,1]",
                ex.index
            )));
        }
        let clean_prediction = target.predict(&ex.clean)?;
        let adv_prediction = target.predict(&ex.adv)?;
        let eligible = clean_prediction == ex.label;
        let hit = match ex.target_class {
            Some(t) => adv_prediction == t,
            None => adv_prediction != ex.label,
        };
        per_example.push(ExampleTransfer {
            index: ex.index,
            eligible,
            clean_prediction,
            adv_prediction,
            success: eligible && hit,
        });
    }
    let eligible = per_example.iter().filter(|e| e.eligible).count();
    let successes = per_example.iter().filter(|e| e.success).count();
    Ok(TransferOutcome {
        eligible,
        successes,
        asr: (eligible > 0).then(|| successes as f64 / eligible as f64),
        per_example,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dense, Layer};

    /// Predicts class 0 when x[0] > x[1], else class 1.
    fn comparator() -> Model {
        Model::from_layers(vec![Layer::Linear(Dense {
            in_dim: 2,
            out_dim: 2,
            weight: vec![1.0, -1.0, -1.0, 1.0],
            bias: vec![0.0, 0.0],
        })])
        .unwrap()
    }

    fn ex(index: usize, label: usize, clean: [f64; 2], adv: [f64; 2]) -> AdversarialExample {
        AdversarialExample {
            index,
            label,
            target_class: None,
            clean: clean.to_vec(),
            adv: adv.to_vec(),
        }
    }

    #[test]
    fn all_fail_and_all_succeed() {
        let m = comparator();
        let stays = vec![
            ex(0, 0, [0.9, 0.1], [0.8, 0.2]),
            ex(1, 1, [0.1, 0.9], [0.2, 0.8]),
        ];
        assert_eq!(evaluate_transfer(&stays, &m).unwrap().asr, Some(0.0));
        let flips = vec![
            ex(0, 0, [0.9, 0.1], [0.2, 0.8]),
            ex(1, 1, [0.1, 0.9], [0.8, 0.2]),
        ];
        assert_eq!(evaluate_transfer(&flips, &m).unwrap().asr, Some(1.0));
    }

    #[test]
    fn misclassified_clean_examples_are_not_counted() {
        let m = comparator();
        let examples = vec![
            ex(0, 1, [0.9, 0.1], [0.9, 0.1]),
            ex(1, 0, [0.9, 0.1], [0.1, 0.9]),
        ];
        let out = evaluate_transfer(&examples, &m).unwrap();
        assert_eq!((out.eligible, out.successes), (1, 1));
        let none = evaluate_transfer(&examples[..1], &m).unwrap();
        assert_eq!(none.asr, None);
    }

    #[test]
    fn targeted_success_needs_the_target() {
        let m = comparator();
        let mut e = ex(0, 0, [0.9, 0.1], [0.1, 0.9]);
        e.target_class = Some(1);
        assert_eq!(evaluate_transfer(&[e], &m).unwrap().successes, 1);
    }
}
