use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Confusion counts with derived rates. Rates whose denominator is zero are
/// absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub f1: f64,
}

impl Metrics {
    pub fn recall(&self) -> Option<f64> {
        self.fnr.map(|r| 1.0 - r)
    }

    pub fn flagged_fraction(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.fn_;
        if n == 0 {
            0.0
        } else {
            (self.tp + self.fp) as f64 / n as f64
        }
    }
}

pub fn confusion_metrics(labels: &[bool], flags: &[bool]) -> Result<Metrics> {
    if labels.len() != flags.len() {
        return invalid(format!("{} labels but {} flags", labels.len(), flags.len()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&l, &f) in labels.iter().zip(flags) {
        match (l, f) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let denom = 2 * tp + fp + fn_;
    Ok(Metrics {
        tp,
        fp,
        tn,
        fn_,
        fnr: ratio(fn_, fn_ + tp),
        fpr: ratio(fp, fp + tn),
        f1: if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        },
    })
}
