use serde::{Deserialize, Serialize};

/// Per-concept confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, actual: bool, predicted: bool) {
        match (actual, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

/// `num / den`, with 0/0 = 0.
pub fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when `p + r = 0`.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Dataset-level scores: P and R averaged over concepts, F1 of those averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfSummary {
    pub fn from_counts<'a>(counts: impl IntoIterator<Item = &'a ConfusionCounts>) -> Self {
        let (mut p, mut r, mut n) = (0.0, 0.0, 0usize);
        for c in counts {
            p += c.precision();
            r += c.recall();
            n += 1;
        }
        if n == 0 {
            return Self::default();
        }
        let (p, r) = (p / n as f64, r / n as f64);
        Self {
            precision: p,
            recall: r,
            f1: f1(p, r),
        }
    }
}

/// Mean of per-concept F1. Not what the harness reports; kept for comparison.
pub fn mean_of_f1<'a>(counts: impl IntoIterator<Item = &'a ConfusionCounts>) -> f64 {
    let f: Vec<f64> = counts.into_iter().map(ConfusionCounts::f1).collect();
    if f.is_empty() {
        0.0
    } else {
        f.iter().sum::<f64>() / f.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_one_one() {
        let c = ConfusionCounts {
            tp: 3,
            fp: 1,
            fn_: 1,
            tn: 0,
        };
        assert_eq!(c.precision(), 0.75);
        assert_eq!(c.recall(), 0.75);
        assert_eq!(c.f1(), 0.75);
    }

    #[test]
    fn zero_conventions() {
        let c = ConfusionCounts::default();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
        assert_eq!(f1(0.0, 0.0), 0.0);
    }
}
