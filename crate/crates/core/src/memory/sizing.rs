use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens kept per reference view when no smaller size is estimated.
pub const DEFAULT_K_MAX: usize = 50;

/// Percentage of the image area covered by the subject, in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    alpha: f64,
}

impl SizeEstimate {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 100]")));
        }
        Ok(Self { alpha })
    }

    /// Clamp into range; NaN becomes 0.
    pub fn clamped(alpha: f64) -> Self {
        let alpha = if alpha.is_nan() { 0.0 } else { alpha.clamp(0.0, 100.0) };
        Self { alpha }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

static FIRST_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());

/// First number in the model's size reply, clamped to `[0, 100]`.
/// Replies without a number read as 0.
pub fn parse_size_reply(reply: &str) -> SizeEstimate {
    let alpha = FIRST_NUMBER
        .find(reply)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .unwrap_or(0.0);
    SizeEstimate::clamped(alpha)
}

/// Per-view token cap `K`: a fixed count, or a percentage of `N_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub k_max: usize,
    #[serde(default)]
    pub fraction: Option<f64>,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            fraction: None,
        }
    }
}

impl MemoryBudget {
    pub fn fixed(k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::InvalidArgument("k_max must be >= 1".into()));
        }
        Ok(Self { k_max, fraction: None })
    }

    /// `K = max(1, floor(percent * N_r / 100))`.
    pub fn fraction(percent: f64) -> Result<Self> {
        if !(percent > 0.0 && percent <= 100.0) {
            return Err(Error::InvalidArgument(format!("fraction {percent} outside (0, 100]")));
        }
        Ok(Self {
            k_max: DEFAULT_K_MAX,
            fraction: Some(percent),
        })
    }

    pub fn cap(&self, n_r: usize) -> usize {
        match self.fraction {
            Some(p) => ((p * n_r as f64 / 100.0).floor() as usize).max(1),
            None => self.k_max.max(1),
        }
    }
}

/// `K_c = min(K, floor(alpha * N_r / 100))`, falling back to `min(K, N_r)`
/// when that rounds to zero.
pub fn dynamic_k(alpha: SizeEstimate, n_r: usize, budget: &MemoryBudget) -> usize {
    let cap = budget.cap(n_r);
    let sized = (alpha.alpha() * n_r as f64 / 100.0).floor() as usize;
    match cap.min(sized) {
        0 => cap.min(n_r),
        k => k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(v: f64) -> SizeEstimate {
        SizeEstimate::new(v).unwrap()
    }

    #[test]
    fn reference_examples() {
        let b = MemoryBudget::default();
        assert_eq!(dynamic_k(a(100.0), 64, &b), 50);
        assert_eq!(dynamic_k(a(25.0), 64, &b), 16);
        assert_eq!(dynamic_k(a(0.0), 64, &b), 50);
        assert_eq!(dynamic_k(a(0.0), 30, &b), 30);
        assert_eq!(dynamic_k(a(1.0), 64, &b), 50);
    }

    #[test]
    fn fraction_budget() {
        let b = MemoryBudget::fraction(20.0).unwrap();
        assert_eq!(b.cap(64), 12);
        assert_eq!(dynamic_k(a(100.0), 64, &b), 12);
        assert_eq!(dynamic_k(a(10.0), 64, &b), 6);
        assert_eq!(MemoryBudget::fraction(20.0).unwrap().cap(2), 1);
    }

    #[test]
    fn size_reply_parsing() {
        assert_eq!(parse_size_reply("25").alpha(), 25.0);
        assert_eq!(parse_size_reply("About 37.5% of the image").alpha(), 37.5);
        assert_eq!(parse_size_reply("250 percent").alpha(), 100.0);
        assert_eq!(parse_size_reply("-4").alpha(), 0.0);
        assert_eq!(parse_size_reply("I cannot tell").alpha(), 0.0);
        assert!(SizeEstimate::new(101.0).is_err());
    }
}
