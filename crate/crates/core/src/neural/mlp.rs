//! Fully connected network over a slice of a flat parameter vector.
//! Hidden layers use tanh, the output layer is affine.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    sizes: Vec<usize>,
    offset: usize,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`, parameters starting at `offset`.
    pub(crate) fn new(sizes: Vec<usize>, offset: usize) -> Self {
        debug_assert!(sizes.len() >= 2);
        Self { sizes, offset }
    }

    pub(crate) fn len(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub(crate) fn end(&self) -> usize {
        self.offset + self.len()
    }

    /// Uniform in `±1/√fan_in` for weights and biases.
    pub(crate) fn init<R: Rng>(&self, params: &mut [f64], rng: &mut R) {
        let mut at = self.offset;
        for w in self.sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut params[at..at + w[0] * w[1] + w[1]] {
                *p = rng.gen_range(-bound..bound);
            }
            at += w[0] * w[1] + w[1];
        }
    }

    /// Zeroes the last layer.
    pub(crate) fn zero_output(&self, params: &mut [f64]) {
        let l = self.sizes.len();
        let size = self.sizes[l - 2] * self.sizes[l - 1] + self.sizes[l - 1];
        params[self.end() - size..self.end()].fill(0.0);
    }

    /// Forward pass keeping every layer's output; `tape[0]` is the input and
    /// the last entry the network output.
    pub(crate) fn forward(&self, params: &[f64], input: &[f64], tape: &mut Vec<Vec<f64>>) {
        tape.resize(self.sizes.len(), Vec::new());
        tape[0].clear();
        tape[0].extend_from_slice(input);
        let mut at = self.offset;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = params[at..].split_at(fan_in * fan_out);
            let b = &rest[..fan_out];
            let (done, todo) = tape.split_at_mut(l + 1);
            let a = &done[l];
            let z = &mut todo[0];
            z.clear();
            for (row, bias) in w.chunks_exact(fan_in).zip(b) {
                let s: f64 = row.iter().zip(a).map(|(x, y)| x * y).sum();
                z.push(s + bias);
            }
            if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            at += fan_in * fan_out + fan_out;
        }
    }

    /// Back-propagates `grad_out` through a recorded pass, adding parameter
    /// gradients into `grads` (indexed like `params`). Returns the gradient
    /// with respect to the input when `want_input` is set.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        tape: &[Vec<f64>],
        grad_out: &[f64],
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        let mut starts = Vec::with_capacity(layers);
        let mut at = self.offset;
        for w in self.sizes.windows(2) {
            starts.push(at);
            at += w[0] * w[1] + w[1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let a = &tape[l];
            let w = &params[starts[l]..starts[l] + fan_in * fan_out];
            let (gw, rest) = grads[starts[l]..].split_at_mut(fan_in * fan_out);
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (g, x) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(a) {
                        *g += d * x;
                    }
                }
                rest[o] += d;
            }
            if l == 0 && !want_input {
                return None;
            }
            let mut prev = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (p, x) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * x;
                    }
                }
            }
            if l > 0 {
                for (p, x) in prev.iter_mut().zip(a) {
                    *p *= 1.0 - x * x;
                }
            }
            delta = prev;
        }
        Some(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn input_gradient_matches_differences() {
        let net = Mlp::new(vec![3, 5, 4, 2], 2);
        let mut params = vec![0.0; net.end()];
        net.init(&mut params, &mut ChaCha8Rng::seed_from_u64(4));
        let x = [0.3, -0.7, 0.2];
        let weights = [1.5, -0.5];
        let loss = |x: &[f64]| {
            let mut tape = Vec::new();
            net.forward(&params, x, &mut tape);
            tape[3].iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut tape = Vec::new();
        net.forward(&params, &x, &mut tape);
        let mut grads = vec![0.0; params.len()];
        let gx = net.backward(&params, &tape, &weights, &mut grads, true).unwrap();
        for i in 0..3 {
            let (mut hi, mut lo) = (x, x);
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let fd = (loss(&hi) - loss(&lo)) / 2e-6;
            assert!((fd - gx[i]).abs() < 1e-8, "{fd} vs {}", gx[i]);
        }
        assert!(grads[..2].iter().all(|g| *g == 0.0));
        assert_eq!(net.len(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
    }
}
