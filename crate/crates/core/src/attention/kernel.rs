use crate::error::{Error, Result};
use crate::tensor::TokenMatrix;

/// `softmax(Q K^T / sqrt(d_k))`, one output row per query.
///
/// With `causal_mask`, queries are aligned to the last `Q.rows` keys, so for
/// square inputs query `i` sees keys `0..=i`. Masked entries are exactly zero.
pub fn scaled_dot_attention(
    queries: &TokenMatrix,
    keys: &TokenMatrix,
    d_k: usize,
    causal_mask: bool,
) -> Result<TokenMatrix> {
    if d_k == 0 {
        return Err(Error::InvalidArgument("d_k must be positive".into()));
    }
    if queries.dim() != keys.dim() {
        return Err(Error::Contract(format!(
            "query dim {} != key dim {}",
            queries.dim(),
            keys.dim()
        )));
    }
    let scale = 1.0 / (d_k as f64).sqrt();
    let n = queries.rows();
    let m = keys.rows();
    let mut logits = vec![0.0f64; n * m];
    for (i, q) in queries.iter_rows().enumerate() {
        for (j, k) in keys.iter_rows().enumerate() {
            let dot: f64 = q.iter().zip(k).map(|(&a, &b)| a as f64 * b as f64).sum();
            logits[i * m + j] = dot * scale;
        }
    }
    softmax_rows(&logits, n, m, causal_mask)
}

/// Row-wise softmax over a precomputed logit matrix (`rows x cols`).
pub fn attention_from_logits(logits: &TokenMatrix, causal_mask: bool) -> Result<TokenMatrix> {
    let wide: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
    softmax_rows(&wide, logits.rows(), logits.dim(), causal_mask)
}

fn softmax_rows(logits: &[f64], n: usize, m: usize, causal: bool) -> Result<TokenMatrix> {
    if m == 0 {
        return Err(Error::InvalidArgument("attention needs at least one key".into()));
    }
    let mut out = vec![0.0f32; n * m];
    for i in 0..n {
        let visible = if causal {
            // last query row sees every key
            (i + 1 + m).saturating_sub(n).min(m)
        } else {
            m
        };
        if visible == 0 {
            continue;
        }
        let row = &logits[i * m..i * m + visible];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (o, e) in out[i * m..i * m + visible].iter_mut().zip(&exps) {
            *o = (e / total) as f32;
        }
    }
    TokenMatrix::new(n, m, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f32>]) -> TokenMatrix {
        TokenMatrix::from_rows(rows[0].len(), rows).unwrap()
    }

    #[test]
    fn equal_logits_give_uniform_row() {
        let q = mat(&[vec![0.0, 0.0]]);
        let k = mat(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]]);
        let a = scaled_dot_attention(&q, &k, 2, false).unwrap();
        assert_eq!(a.rows(), 1);
        assert_eq!(a.dim(), 4);
        for &v in a.row(0) {
            assert!((v - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn hand_softmax_of_zero_and_ln3() {
        // softmax(0, ln 3) = (1/4, 3/4)
        let q = mat(&[vec![1.0]]);
        let k = mat(&[vec![0.0], vec![3.0f32.ln()]]);
        let a = scaled_dot_attention(&q, &k, 1, false).unwrap();
        assert!((a.row(0)[0] - 0.25).abs() < 1e-6);
        assert!((a.row(0)[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn causal_first_row_sees_only_itself() {
        let x = mat(&[vec![0.3, -1.0], vec![2.0, 0.5], vec![-0.7, 1.1]]);
        let a = scaled_dot_attention(&x, &x, 2, true).unwrap();
        assert_eq!(a.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(a.row(1)[2], 0.0);
        let s: f32 = a.row(2).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn argument_errors() {
        let q = mat(&[vec![1.0, 2.0]]);
        let k = mat(&[vec![1.0]]);
        assert!(matches!(scaled_dot_attention(&q, &k, 1, false), Err(Error::Contract(_))));
        assert!(matches!(scaled_dot_attention(&q, &q, 0, false), Err(Error::InvalidArgument(_))));
    }
}
