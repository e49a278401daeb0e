//! Confusion counts and accuracy / precision / recall / F1 with fake (label 1) as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class treated as positive in every report.
pub const POSITIVE_CLASS: &str = "fake (label 1)";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts under the opposite positive-class convention.
    pub fn swapped(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    pub fn merge(&self, other: &Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

pub fn confusion(predictions: &[usize], targets: &[usize]) -> Result<Confusion> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::arg(format!(
            "confusion needs equal nonempty lengths, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &t) in predictions.iter().zip(targets) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => return Err(Error::arg(format!("labels must be 0 or 1, got prediction {p}, target {t}"))),
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced a metric to 0.
    pub degenerate: bool,
}

impl Metrics {
    /// Rounded copy, for tables printed at 2 or 4 decimals.
    pub fn rounded(&self, decimals: u32) -> Metrics {
        let f = 10f64.powi(decimals as i32);
        let r = |v: f64| (v * f).round() / f;
        Metrics {
            accuracy: r(self.accuracy),
            precision: r(self.precision),
            recall: r(self.recall),
            f1: r(self.f1),
            degenerate: self.degenerate,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

/// Zero denominators yield 0 with `degenerate` set. `c` must be nonempty.
pub fn compute_metrics(c: &Confusion) -> Metrics {
    let total = c.total();
    assert!(total > 0, "metrics of an empty confusion");
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio(c.tp + c.tn, total);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    Metrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn enumerated_cases() {
        let c = confusion(&[1, 1, 0, 0], &[1, 0, 0, 1]).unwrap();
        assert_eq!(c, Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let c = confusion(&[0, 1, 1], &[0, 1, 1]).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert!(confusion(&[1], &[1, 0]).is_err());
        assert!(confusion(&[], &[]).is_err());
        assert!(confusion(&[2], &[1]).is_err());
    }

    #[test]
    fn hand_case() {
        let m = compute_metrics(&Confusion { tp: 3, fp: 1, fn_: 1, tn: 5 });
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!((m.recall - 0.75).abs() < 1e-15);
        assert!((m.f1 - 0.75).abs() < 1e-15);
        assert!(!m.degenerate);
    }

    #[test]
    fn degenerate_precision() {
        let m = compute_metrics(&Confusion { tp: 0, fp: 0, fn_: 2, tn: 3 });
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!(m.degenerate);
    }

    #[test]
    fn harmonic_mean_bounds_on_small_grid() {
        for tp in 0..6u64 {
            for fp in 0..6 {
                for fn_ in 0..6 {
                    for tn in 0..3 {
                        let c = Confusion { tp, fp, fn_, tn };
                        if c.total() == 0 {
                            continue;
                        }
                        let m = compute_metrics(&c);
                        for v in m.as_array() {
                            assert!((0.0..=1.0).contains(&v));
                        }
                        assert_eq!(m.f1 == 0.0, tp == 0);
                        if tp > 0 {
                            let (lo, hi) = (m.precision.min(m.recall), m.precision.max(m.recall));
                            assert!(lo - 1e-15 <= m.f1 && m.f1 <= hi + 1e-15);
                        }
                        assert_eq!(compute_metrics(&c.swapped()).accuracy, m.accuracy);
                    }
                }
            }
        }
    }

    #[test]
    fn rounding() {
        let m = compute_metrics(&Confusion { tp: 2, fp: 1, fn_: 0, tn: 0 });
        assert_eq!(m.rounded(2).precision, 0.67);
        assert_eq!(m.rounded(4).precision, 0.6667);
    }

    proptest! {
        #[test]
        fn matches_per_element_tally(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..200)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
            let c = confusion(&p, &t).unwrap();
            let count = |a: usize, b: usize| pairs.iter().filter(|&&(x, y)| x == a && y == b).count() as u64;
            prop_assert_eq!(c, Confusion { tp: count(1, 1), fp: count(1, 0), fn_: count(0, 1), tn: count(0, 0) });
            prop_assert_eq!(c.total(), pairs.len() as u64);
        }
    }
}
