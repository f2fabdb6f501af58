use serde::{Deserialize, Serialize};

use super::{Prediction, PredictionRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Single,
    Multi,
}

/// Accuracy for single-label tasks; example-averaged P/R/F1 for
/// multi-label ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: TaskKind,
    pub instances: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl Metrics {
    /// The headline number: accuracy or F1.
    pub fn primary(&self) -> f64 {
        match self.task {
            TaskKind::Single => self.accuracy.unwrap_or(0.0),
            TaskKind::Multi => self.f1.unwrap_or(0.0),
        }
    }

    pub fn from_predictions(task: TaskKind, records: &[PredictionRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("no predictions to score"));
        }
        let n = records.len();
        match task {
            TaskKind::Single => {
                let mut correct = 0usize;
                for r in records {
                    match &r.prediction {
                        Prediction::Single(p) => correct += usize::from(r.gold.contains(p)),
                        Prediction::Multi(_) => {
                            return Err(Error::invalid("multi-label prediction in a single-label task"))
                        }
                    }
                }
                Ok(Self {
                    task,
                    instances: n,
                    accuracy: Some(correct as f64 / n as f64),
                    precision: None,
                    recall: None,
                    f1: None,
                })
            }
            TaskKind::Multi => {
                let mut preds = Vec::with_capacity(n);
                for r in records {
                    match &r.prediction {
                        Prediction::Multi(p) => preds.push(p.as_slice()),
                        Prediction::Single(_) => {
                            return Err(Error::invalid("single-label prediction in a multi-label task"))
                        }
                    }
                }
                let golds: Vec<&[usize]> = records.iter().map(|r| r.gold.as_slice()).collect();
                let (p, r, f1) = example_averaged_prf(&preds, &golds);
                Ok(Self {
                    task,
                    instances: n,
                    accuracy: None,
                    precision: Some(p),
                    recall: Some(r),
                    f1: Some(f1),
                })
            }
        }
    }
}

/// Example-averaged precision and recall, and F1 = 2PR/(P+R) of the two
/// averages. An empty prediction set contributes precision 0.
pub fn example_averaged_prf(preds: &[&[usize]], golds: &[&[usize]]) -> (f64, f64, f64) {
    assert_eq!(preds.len(), golds.len());
    if preds.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for (pred, gold) in preds.iter().zip(golds) {
        let hits = pred.iter().filter(|o| gold.contains(o)).count() as f64;
        if !pred.is_empty() {
            p_sum += hits / pred.len() as f64;
        }
        if !gold.is_empty() {
            r_sum += hits / gold.len() as f64;
        }
    }
    let n = preds.len() as f64;
    let (p, r) = (p_sum / n, r_sum / n);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}
