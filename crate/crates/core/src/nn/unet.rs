//! A small U-Net: per level two 3×3 convolutions with ReLU, 2× max-pool on the
//! way down, nearest-neighbour upsampling plus skip concatenation on the way up,
//! and a final 1×1 projection to class logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    concat, maxpool2, maxpool2_backward, relu_backward_inplace, relu_inplace, split_channels,
    upsample2, upsample2_backward, Act, Conv2d, ConvGrad,
};
use super::real::Real;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub base_width: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_in_channels() -> usize {
    1
}
fn default_classes() -> usize {
    3
}
fn default_depth() -> usize {
    2
}
fn default_width() -> usize {
    16
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: default_in_channels(),
            num_classes: default_classes(),
            depth: default_depth(),
            base_width: default_width(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth < 1 {
            return Err(ModelError::InvalidConfig("depth must be >= 1".into()));
        }
        if self.depth > 8 {
            return Err(ModelError::InvalidConfig("depth must be <= 8".into()));
        }
        if self.base_width < 4 {
            return Err(ModelError::InvalidConfig("base_width must be >= 4".into()));
        }
        if self.in_channels < 1 {
            return Err(ModelError::InvalidConfig("in_channels must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidConfig("num_classes must be >= 2".into()));
        }
        Ok(())
    }

    /// Channel width at a level (the bottleneck sits at level `depth`).
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<(), ModelError> {
        let div = 1usize << self.depth;
        if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(ModelError::IndivisibleSpatialSize { h, w, divisor: div });
        }
        Ok(())
    }
}

/// Convolution block indices in declared order.
///
/// `enc0..enc{d-1}`, `mid`, `dec{d-1}..dec0` each own two convolutions;
/// the head is the last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    config: ModelConfig,
    convs: Vec<Conv2d<T>>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache<T> {
    enc_in: Vec<Act<T>>,
    enc_a1: Vec<Act<T>>,
    enc_a2: Vec<Act<T>>,
    pool_arg: Vec<Vec<u8>>,
    mid_in: Act<T>,
    mid_a1: Act<T>,
    mid_a2: Act<T>,
    dec_cat: Vec<Act<T>>,
    dec_a1: Vec<Act<T>>,
    dec_a2: Vec<Act<T>>,
    pub logits: Act<T>,
}

impl<T: Real> UNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.depth;
        let mut convs = Vec::with_capacity(4 * d + 3);
        let mut cin = config.in_channels;
        for l in 0..=d {
            let w = config.width(l);
            convs.push(Conv2d::init(cin, w, 3, &mut rng));
            convs.push(Conv2d::init(w, w, 3, &mut rng));
            cin = w;
        }
        for l in (0..d).rev() {
            let w = config.width(l);
            convs.push(Conv2d::init(config.width(l + 1) + w, w, 3, &mut rng));
            convs.push(Conv2d::init(w, w, 3, &mut rng));
        }
        convs.push(Conv2d::init(config.width(0), config.num_classes, 1, &mut rng));
        Ok(Self { config, convs })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn enc(&self, l: usize) -> usize {
        2 * l
    }
    fn mid(&self) -> usize {
        2 * self.config.depth
    }
    fn dec(&self, l: usize) -> usize {
        2 * self.config.depth + 2 + 2 * (self.config.depth - 1 - l)
    }
    fn head(&self) -> usize {
        self.convs.len() - 1
    }

    /// Parameter tensor names in declared order (weight then bias per convolution).
    pub fn param_names(&self) -> Vec<String> {
        let d = self.config.depth;
        let mut blocks: Vec<String> = (0..d).map(|l| format!("enc{l}")).collect();
        blocks.push("mid".into());
        blocks.extend((0..d).rev().map(|l| format!("dec{l}")));
        let mut names = Vec::new();
        for b in &blocks {
            for c in ["conv1", "conv2"] {
                names.push(format!("{b}.{c}.weight"));
                names.push(format!("{b}.{c}.bias"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    /// Parameter shapes in declared order; weights are `[k, k, cin, cout]`.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.convs
            .iter()
            .flat_map(|c| [vec![c.ksize, c.ksize, c.cin, c.cout], vec![c.cout]])
            .collect()
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.convs.iter().flat_map(|c| [&c.weight[..], &c.bias[..]]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.convs
            .iter_mut()
            .flat_map(|c| [&mut c.weight[..], &mut c.bias[..]])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.weight.len() + c.bias.len()).sum()
    }

    /// Replaces all parameters; tensors must match [`param_shapes`](Self::param_shapes).
    pub fn load_params(&mut self, tensors: Vec<Vec<T>>) -> Result<(), ModelError> {
        let expected = self.param_shapes();
        if tensors.len() != expected.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (t, shape)) in tensors.iter().zip(&expected).enumerate() {
            if t.len() != shape.iter().product::<usize>() {
                return Err(ModelError::Checkpoint(format!("tensor {i} has wrong size")));
            }
        }
        for (dst, src) in self.params_mut().into_iter().zip(tensors) {
            dst.copy_from_slice(&src);
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> Vec<ConvGrad<T>> {
        self.convs.iter().map(Conv2d::zero_grad).collect()
    }

    pub fn forward(&self, x: &Act<T>) -> Result<Act<T>, ModelError> {
        Ok(self.forward_cached(x)?.logits)
    }

    pub fn forward_cached(&self, x: &Act<T>) -> Result<ForwardCache<T>, ModelError> {
        if x.c != self.config.in_channels {
            return Err(ModelError::ChannelMismatch { expected: self.config.in_channels, got: x.c });
        }
        self.config.check_input(x.h, x.w)?;
        let d = self.config.depth;
        let conv_relu = |i: usize, x: &Act<T>| {
            let mut y = self.convs[i].forward(x);
            relu_inplace(&mut y);
            y
        };
        let mut enc_in = Vec::with_capacity(d);
        let mut enc_a1 = Vec::with_capacity(d);
        let mut enc_a2 = Vec::with_capacity(d);
        let mut pool_arg = Vec::with_capacity(d);
        let mut cur = x.clone();
        for l in 0..d {
            let a1 = conv_relu(self.enc(l), &cur);
            let a2 = conv_relu(self.enc(l) + 1, &a1);
            let (pooled, arg) = maxpool2(&a2);
            enc_in.push(std::mem::replace(&mut cur, pooled));
            enc_a1.push(a1);
            enc_a2.push(a2);
            pool_arg.push(arg);
        }
        let mid_a1 = conv_relu(self.mid(), &cur);
        let mid_a2 = conv_relu(self.mid() + 1, &mid_a1);
        let mid_in = cur;
        let mut dec_cat = vec![None; d];
        let mut dec_a1 = vec![None; d];
        let mut dec_a2: Vec<Option<Act<T>>> = vec![None; d];
        for l in (0..d).rev() {
            let prev = if l + 1 == d { &mid_a2 } else { dec_a2[l + 1].as_ref().expect("set") };
            let cat = concat(&upsample2(prev), &enc_a2[l]);
            let a1 = conv_relu(self.dec(l), &cat);
            let a2 = conv_relu(self.dec(l) + 1, &a1);
            dec_cat[l] = Some(cat);
            dec_a1[l] = Some(a1);
            dec_a2[l] = Some(a2);
        }
        let dec_cat: Vec<Act<T>> = dec_cat.into_iter().map(Option::unwrap).collect();
        let dec_a1: Vec<Act<T>> = dec_a1.into_iter().map(Option::unwrap).collect();
        let dec_a2: Vec<Act<T>> = dec_a2.into_iter().map(Option::unwrap).collect();
        let logits = self.convs[self.head()].forward(&dec_a2[0]);
        Ok(ForwardCache {
            enc_in,
            enc_a1,
            enc_a2,
            pool_arg,
            mid_in,
            mid_a1,
            mid_a2,
            dec_cat,
            dec_a1,
            dec_a2,
            logits,
        })
    }

    /// Gradients of a scalar objective given `dlogits`, one entry per convolution.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Act<T>) -> Vec<ConvGrad<T>> {
        let d = self.config.depth;
        let mut grads = self.zero_grads();
        let head = self.head();
        let mut dcur = self.convs[head]
            .backward(&cache.dec_a2[0], dlogits, &mut grads[head], true)
            .expect("input grad requested");

        // Two conv+ReLU layers in reverse; returns the gradient at the block input.
        let block_back = |i: usize,
                          input: &Act<T>,
                          a1: &Act<T>,
                          a2: &Act<T>,
                          mut g: Act<T>,
                          grads: &mut [ConvGrad<T>],
                          need_input: bool| {
            relu_backward_inplace(a2, &mut g);
            let mut g1 = self.convs[i + 1].backward(a1, &g, &mut grads[i + 1], true).expect("grad");
            relu_backward_inplace(a1, &mut g1);
            self.convs[i].backward(input, &g1, &mut grads[i], need_input)
        };

        let mut dskip: Vec<Option<Act<T>>> = vec![None; d];
        for l in 0..d {
            let dcat = block_back(
                self.dec(l),
                &cache.dec_cat[l],
                &cache.dec_a1[l],
                &cache.dec_a2[l],
                dcur,
                &mut grads,
                true,
            )
            .expect("grad");
            let up_c = if l + 1 == d { self.config.width(d) } else { self.config.width(l + 1) };
            let (dup, dsk) = split_channels(&dcat, up_c);
            dskip[l] = Some(dsk);
            dcur = upsample2_backward(&dup);
        }
        let mut dx = block_back(
            self.mid(),
            &cache.mid_in,
            &cache.mid_a1,
            &cache.mid_a2,
            dcur,
            &mut grads,
            true,
        )
        .expect("grad");
        for l in (0..d).rev() {
            let a2 = &cache.enc_a2[l];
            let mut da2 = maxpool2_backward(&dx, &cache.pool_arg[l], a2.h, a2.w);
            for (a, b) in da2.data.iter_mut().zip(&dskip[l].take().expect("set").data) {
                *a += *b;
            }
            let need = l > 0;
            match block_back(self.enc(l), &cache.enc_in[l], &cache.enc_a1[l], a2, da2, &mut grads, need)
            {
                Some(g) => dx = g,
                None => break,
            }
        }
        grads
    }

    /// Flattens per-convolution gradients into declared parameter order.
    pub fn flatten_grads(grads: Vec<ConvGrad<T>>) -> Vec<Vec<T>> {
        grads.into_iter().flat_map(|g| [g.weight, g.bias]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small(seed: u64) -> ModelConfig {
        ModelConfig { in_channels: 2, num_classes: 3, depth: 2, base_width: 4, seed }
    }

    fn input(seed: u64, n: usize, side: usize, c: usize) -> Act<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Act::from_vec(n, side, side, c, (0..n * side * side * c).map(|_| rng.gen_range(0.0..1.0)).collect())
    }

    #[test]
    fn output_shape_and_divisibility() {
        let cfg = ModelConfig { in_channels: 1, num_classes: 3, depth: 2, base_width: 4, seed: 1 };
        let net = UNet::<f32>::new(cfg).unwrap();
        let x = Act::zeros(2, 28, 28, 1);
        let y = net.forward(&x).unwrap();
        assert_eq!((y.n, y.h, y.w, y.c), (2, 28, 28, 3));
        let deep = UNet::<f32>::new(ModelConfig { depth: 3, ..cfg }).unwrap();
        assert_eq!(
            deep.forward(&x).unwrap_err(),
            ModelError::IndivisibleSpatialSize { h: 28, w: 28, divisor: 8 }
        );
    }

    #[test]
    fn same_seed_same_weights() {
        let a = UNet::<f32>::new(small(9)).unwrap();
        let b = UNet::<f32>::new(small(9)).unwrap();
        let c = UNet::<f32>::new(small(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.param_names().len(), a.param_shapes().len());
        assert_eq!(a.param_count(), a.params().iter().map(|p| p.len()).sum::<usize>());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(UNet::<f32>::new(ModelConfig { depth: 0, ..small(0) }).is_err());
        assert!(UNet::<f32>::new(ModelConfig { base_width: 2, ..small(0) }).is_err());
    }

    /// Full-network gradient check on a weighted sum of logits.
    #[test]
    fn backward_matches_finite_differences() {
        for depth in [1, 2] {
            let cfg = ModelConfig { depth, ..small(4) };
            let mut net = UNet::<f64>::new(cfg).unwrap();
            // Nonzero biases so ReLUs are not all at the same operating point.
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for p in net.params_mut() {
                if p.len() <= 16 {
                    p.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
                }
            }
            let x = input(2, 2, 8, 2);
            let cache = net.forward_cached(&x).unwrap();
            let coef: Vec<f64> = (0..cache.logits.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dlogits = Act::from_vec(2, 8, 8, 3, coef.clone());
            let grads = UNet::flatten_grads(net.backward(&cache, &dlogits));
            let objective = |n: &UNet<f64>| -> f64 {
                n.forward(&x).unwrap().data.iter().zip(&coef).map(|(a, b)| a * b).sum()
            };
            let eps = 1e-6;
            for (t, g) in grads.iter().enumerate() {
                for i in (0..g.len()).step_by(1 + g.len() / 7) {
                    let mut plus = net.clone();
                    plus.params_mut()[t][i] += eps;
                    let mut minus = net.clone();
                    minus.params_mut()[t][i] -= eps;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                    let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
                    assert!(err < 1e-5, "depth {depth} tensor {t} index {i}: fd {fd} vs {}", g[i]);
                }
            }
        }
    }
}
