//! Loss heads applied to network outputs: softmax cross-entropy and cosine
//! similarity, with their analytic gradients.

use ndarray::Array2;

/// Row-wise softmax, numerically shifted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one sample and its logit-gradient `p - e_y`.
pub fn softmax_ce_grad(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = -p[y].max(1e-300).ln();
    let mut g = p;
    g[y] -= 1.0;
    (loss, g)
}

/// Mean cross-entropy over a batch of logit rows plus the mean-loss gradient.
pub fn batch_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let batch = logits.nrows();
    assert_eq!(batch, labels.len());
    let mut grad = Array2::<f64>::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let (loss, g) = softmax_ce_grad(row.as_slice().expect("contiguous"), labels[i]);
        total += loss;
        let scale = 1.0 / batch as f64;
        for (slot, v) in grad.row_mut(i).iter_mut().zip(g) {
            *slot = v * scale;
        }
    }
    (total / batch as f64, grad)
}

/// Cosine similarity with the convention that a zero-norm vector yields 0.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    dot / (nu * nv)
}

/// Gradients of cosine similarity w.r.t. both arguments
/// (zero vectors get zero gradients, matching the value convention).
pub fn cosine_similarity_grads(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return (0.0, vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let cos = dot / (nu * nv);
    let gu: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| vi / (nu * nv) - cos * ui / (nu * nu))
        .collect();
    let gv: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| ui / (nu * nv) - cos * vi / (nv * nv))
        .collect();
    (cos, gu, gv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, _) = softmax_ce_grad(&[0.5; 10], 3);
        assert!((loss - 10.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cosine_of_self_is_one() {
        let u = [1.0, -2.0, 0.5];
        assert!((cosine_similarity(&u, &u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn cosine_scale_invariant() {
        let c = cosine_similarity(&[1.0, 1.0], &[2.0, 2.0]);
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_convention() {
        let (c, gu, gv) = cosine_similarity_grads(&[0.0, 0.0], &[1.0, 2.0]);
        assert_eq!(c, 0.0);
        assert!(gu.iter().all(|&g| g == 0.0));
        assert!(gv.iter().all(|&g| g == 0.0));
    }
}
