use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{conv_out, real, relu, softmax, Conv, ConvCache, Dense, Real};

/// Layer sizes. The default is the production network; tests shrink it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetShape {
    /// Input patches are `patch x patch x 3`.
    pub patch: usize,
    pub channels: [usize; 3],
    /// Width of the visual and spatial embeddings.
    pub embed: usize,
    pub classes: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            patch: 32,
            channels: [16, 32, 64],
            embed: 256,
            classes: 2,
        }
    }
}

/// Two-branch classifier: three stride-2 convolutions with global average
/// pooling and a linear map on the patch, a linear map on the normalized
/// centre coordinates, summed, rectified and mapped to class scores.
#[derive(Clone, Debug, PartialEq)]
pub struct PropNet<T> {
    pub shape: NetShape,
    pub convs: [Conv<T>; 3],
    pub visual: Dense<T>,
    pub spatial: Dense<T>,
    pub head: Dense<T>,
}

/// Per-sample activations kept for the backward pass.
pub struct Trace<T> {
    conv_caches: Vec<ConvCache<T>>,
    conv_pre: Vec<Vec<T>>,
    pooled: Vec<T>,
    center: [T; 2],
    hidden: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Real> PropNet<T> {
    pub fn new(shape: NetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = shape.channels;
        let convs = [
            Conv::new(3, c1, &mut rng),
            Conv::new(c1, c2, &mut rng),
            Conv::new(c2, c3, &mut rng),
        ];
        Self {
            shape,
            convs,
            visual: Dense::new(c3, shape.embed, &mut rng),
            spatial: Dense::new(2, shape.embed, &mut rng),
            head: Dense::new(shape.embed, shape.classes, &mut rng),
        }
    }

    /// Same shape, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape,
            convs: [
                self.convs[0].zeros_like(),
                self.convs[1].zeros_like(),
                self.convs[2].zeros_like(),
            ],
            visual: self.visual.zeros_like(),
            spatial: self.spatial.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Parameter tensors in declaration order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = Vec::with_capacity(12);
        for c in &self.convs {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        for d in [&self.visual, &self.spatial, &self.head] {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = Vec::with_capacity(12);
        for c in &mut self.convs {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        for d in [&mut self.visual, &mut self.spatial, &mut self.head] {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Forward pass for one sample. `patch` is channel-major `3 x P x P` in
    /// `[0, 1]`; `center` is in the unit square. Both are shifted to be
    /// zero-centred.
    pub fn forward_traced(&self, patch: &[T], center: [T; 2]) -> Trace<T> {
        let half: T = real(0.5);
        let mut x: Vec<T> = patch.iter().map(|&v| v - half).collect();
        let mut size = self.shape.patch;
        let mut conv_caches = Vec::with_capacity(3);
        let mut conv_pre = Vec::with_capacity(3);
        for conv in &self.convs {
            let (z, cache) = conv.forward(&x, size);
            size = cache.out_size;
            x = z.clone();
            relu(&mut x);
            conv_caches.push(cache);
            conv_pre.push(z);
        }
        let hw = size * size;
        let pooled: Vec<T> = x
            .chunks_exact(hw)
            .map(|c| c.iter().copied().sum::<T>() / real(hw as f64))
            .collect();
        let center = [center[0] - half, center[1] - half];
        let v = self.visual.forward(&pooled);
        let s = self.spatial.forward(&center);
        let mut hidden: Vec<T> = v.iter().zip(&s).map(|(&a, &b)| a + b).collect();
        relu(&mut hidden);
        let logits = self.head.forward(&hidden);
        Trace {
            conv_caches,
            conv_pre,
            pooled,
            center,
            hidden,
            probs: softmax(&logits),
        }
    }

    pub fn forward(&self, patch: &[T], center: [T; 2]) -> Vec<T> {
        self.forward_traced(patch, center).probs
    }

    /// Backpropagates `d loss / d logits` through the network and adds the
    /// parameter gradients into `grad`.
    pub fn backward(&self, trace: &Trace<T>, dlogits: &[T], grad: &mut Self) {
        let dh = self.head.backward(dlogits, &trace.hidden, &mut grad.head);
        let dsum: Vec<T> = dh
            .iter()
            .zip(&trace.hidden)
            .map(|(&d, &h)| if h > T::zero() { d } else { T::zero() })
            .collect();
        self.spatial.backward(&dsum, &trace.center, &mut grad.spatial);
        let dpool = self.visual.backward(&dsum, &trace.pooled, &mut grad.visual);

        let last = &trace.conv_caches[2];
        let hw = last.out_size * last.out_size;
        let inv: T = real(1.0 / hw as f64);
        let mut da: Vec<T> = dpool
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d * inv, hw))
            .collect();
        for l in (0..3).rev() {
            let dz: Vec<T> = da
                .iter()
                .zip(&trace.conv_pre[l])
                .map(|(&d, &z)| if z > T::zero() { d } else { T::zero() })
                .collect();
            match self.convs[l].backward(&dz, &trace.conv_caches[l], &mut grad.convs[l], l > 0) {
                Some(dx) => da = dx,
                None => break,
            }
        }
    }

    /// Output spatial size of the last convolution.
    pub fn feature_size(&self) -> usize {
        conv_out(conv_out(conv_out(self.shape.patch)))
    }
}
