use crate::error::{Error, Result};
use crate::tensor::SeededRng;

use super::synth::BiasedExample;

/// Stratified index partition `(train, val)`.
///
/// Each class is shuffled with its own child stream and contributes
/// `round(fraction · n_class)` indices to validation. Both outputs are
/// returned in ascending index order.
pub fn stratified_partition(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} not in (0, 1)")));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let root = SeededRng::new(seed).child("train-val-split");
    let mut is_val = vec![false; labels.len()];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        root.child_u64(class as u64).shuffle(&mut members);
        let take = (fraction * members.len() as f64).round() as usize;
        for &i in &members[..take] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| is_val[i]);
    Ok((train, val))
}

pub fn split_train_val(
    examples: Vec<BiasedExample>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<BiasedExample>, Vec<BiasedExample>)> {
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let (_, val_idx) = stratified_partition(&labels, fraction, seed)?;
    let mut is_val = vec![false; examples.len()];
    val_idx.iter().for_each(|&i| is_val[i] = true);
    let mut train = Vec::with_capacity(examples.len() - val_idx.len());
    let mut val = Vec::with_capacity(val_idx.len());
    for (ex, v) in examples.into_iter().zip(is_val) {
        if v {
            val.push(ex);
        } else {
            train.push(ex);
        }
    }
    Ok((train, val))
}
