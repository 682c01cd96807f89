use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Train,
    Eval,
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng>(probs: &[f32], rng: &mut R) -> usize {
    let total: f64 = probs.iter().map(|&p| p as f64).sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p as f64;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Discrete action from π: sampled when training, argmax for evaluation.
pub fn select_discrete<R: Rng>(probs: &[f32], mode: ActMode, rng: &mut R) -> usize {
    match mode {
        ActMode::Train => sample_categorical(probs, rng),
        ActMode::Eval => argmax(probs),
    }
}

/// Continuous action from the two softmax heads, renormalized in f64.
pub fn continuous_action(m: &[f32], r: &[f32]) -> Result<Action, EnvError> {
    let norm = |v: &[f32]| {
        let s: f64 = v.iter().map(|&x| x.max(0.0) as f64).sum();
        v.iter().map(|&x| x.max(0.0) as f64 / s).collect::<Vec<f64>>()
    };
    let (m, r) = (norm(m), norm(r));
    Action::continuous([m[0], m[1], m[2], m[3]], [r[0], r[1]])
}
