use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot) / B` with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = match *logits.shape() {
        [b, c] => (b, c),
        ref s => return Err(Error::dim(format!("logits must be [B, C], got {s:?}"))),
    };
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Index(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = vec![0.0; b * c];
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    for (i, (row, g)) in logits.data().chunks(c).zip(grad.chunks_mut(c)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[labels[i]];
        for (j, (gj, &z)) in g.iter_mut().zip(row).enumerate() {
            let p = (z - log_z).exp();
            *gj = (p - if j == labels[i] { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((total * inv_b, Tensor::new(vec![b, c], grad)?))
}

/// `KL(S ‖ M) = Σ S (ln S − ln M)` and its gradient with respect to `S`
/// (`ln S − ln M + 1`). `M` is a constant target.
pub fn attention_loss(saliency: &Tensor, teacher: &Tensor) -> Result<(f64, Tensor)> {
    if saliency.shape() != teacher.shape() {
        return Err(Error::dim(format!(
            "saliency {:?} vs teacher {:?}",
            saliency.shape(),
            teacher.shape()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(saliency.len());
    for (&s, &m) in saliency.data().iter().zip(teacher.data()) {
        if !(s > 0.0) || !(m > 0.0) {
            return Err(Error::Domain(format!(
                "KL needs strictly positive maps (got S={s}, M={m}); missing ε smoothing?"
            )));
        }
        let log_ratio = s.ln() - m.ln();
        loss += s * log_ratio;
        grad.push(log_ratio + 1.0);
    }
    Ok((loss, Tensor::new(saliency.shape().to_vec(), grad)?))
}

/// Ranking score `ValAcc × (1 − L_attn)`. Negative whenever the divergence
/// exceeds 1; only its order matters.
pub fn optim_value(val_acc: f64, val_attn: f64) -> f64 {
    val_acc * (1.0 - val_attn)
}
