use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

/// One observation frame quantized to bytes; shared between the stacks of
/// consecutive transitions.
pub type Frame = Arc<[u8]>;

pub fn quantize(planes: &[f32]) -> Frame {
    planes.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn dequantize(frame: &[u8], out: &mut Vec<f32>) {
    out.extend(frame.iter().map(|&b| b as f32 / 255.0));
}

/// The `k` most recent frames; at episode start the first frame is repeated.
#[derive(Debug, Clone, Default)]
pub struct FrameStack {
    depth: usize,
    frames: VecDeque<Frame>,
}

impl FrameStack {
    pub fn new(depth: usize) -> Self {
        assert!(depth >= 1);
        FrameStack { depth, frames: VecDeque::with_capacity(depth) }
    }

    pub fn reset(&mut self, first: Frame) {
        self.frames.clear();
        for _ in 0..self.depth {
            self.frames.push_back(first.clone());
        }
    }

    pub fn push(&mut self, frame: Frame) {
        if self.frames.is_empty() {
            return self.reset(frame);
        }
        self.frames.pop_front();
        self.frames.push_back(frame);
    }

    /// Oldest first.
    pub fn frames(&self) -> Vec<Frame> {
        self.frames.iter().cloned().collect()
    }
}

/// Stacked frames concatenated channel-wise, oldest first.
pub fn stack_planes(frames: &[Frame], out: &mut Vec<f32>) {
    for f in frames {
        dequantize(f, out);
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<Frame>,
    pub concept: usize,
    /// `[m1..m4, r1, r2]`.
    pub action: [f32; 6],
    pub reward: f32,
    pub next_state: Vec<Frame>,
    pub done: bool,
}

/// Fixed-capacity FIFO ring with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        ReplayBuffer { capacity, items: Vec::new(), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Insert, evicting the oldest item when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..batch).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&T> {
        self.sample_indices(batch, rng).into_iter().map(|i| &self.items[i]).collect()
    }

    /// Items oldest first.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifo_eviction_and_capacity() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
            assert!(b.len() <= 3);
        }
        assert_eq!(b.iter_fifo().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn sampling_is_uniform_by_chi_square() {
        let mut b = ReplayBuffer::new(20);
        for i in 0..20 {
            b.push(i);
        }
        let mut counts = [0f64; 20];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40_000;
        for i in b.sample_indices(n, &mut rng) {
            counts[i] += 1.0;
        }
        let e = n as f64 / 20.0;
        let chi2: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
        // 19 degrees of freedom, 0.999 quantile
        assert!(chi2 < 43.82, "{chi2}");
    }

    #[test]
    fn frame_stack_pads_with_first_frame() {
        let mut s = FrameStack::new(3);
        let a = quantize(&[0.0, 1.0]);
        let b = quantize(&[0.5, 0.25]);
        s.reset(a.clone());
        s.push(b.clone());
        let f = s.frames();
        assert!(Arc::ptr_eq(&f[0], &a) && Arc::ptr_eq(&f[1], &a) && Arc::ptr_eq(&f[2], &b));
        let mut out = vec![];
        stack_planes(&f, &mut out);
        assert_eq!(out.len(), 6);
        assert!((out[4] - 0.5).abs() <= 0.5 / 255.0 + 1e-6);
    }
}
