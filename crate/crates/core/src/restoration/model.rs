//! Residual U-Net: residual encoder levels with strided downsampling,
//! transposed-convolution decoder with additive skips, two output
//! convolutions.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::neural::layers::{relu, relu_backward, BatchNorm2d, Conv2d, ConvTranspose2d, Param};
use crate::neural::{ConvGeometry, Tensor};
use crate::rng::stream_rng;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// number of downsampling levels
    pub depth: usize,
    /// channels at the top level; doubled at every level down
    pub base_filters: usize,
    /// residual blocks per encoder level, the last entry is the bottleneck
    pub blocks_per_level: Vec<usize>,
    /// kernel sizes of the two output convolutions
    pub final_kernels: [usize; 2],
    /// zero-pad inputs to a multiple of `2^depth` (and crop the output)
    pub pad_input: bool,
}

impl ModelConfig {
    pub fn desk_default() -> Self {
        Self {
            depth: 3,
            base_filters: 16,
            blocks_per_level: vec![1, 2, 2, 4],
            final_kernels: [3, 1],
            pad_input: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 {
            return Err(Error::Config("base_filters must be positive".into()));
        }
        if self.blocks_per_level.len() != self.depth + 1 {
            return Err(Error::Config(format!(
                "blocks_per_level has {} entries, depth {} needs {}",
                self.blocks_per_level.len(),
                self.depth,
                self.depth + 1
            )));
        }
        if self.blocks_per_level.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "blocks_per_level must be non-decreasing: {:?}",
                self.blocks_per_level
            )));
        }
        if self.final_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!("final kernels must be odd: {:?}", self.final_kernels)));
        }
        Ok(())
    }

    /// Rows/columns added before and after an input of length `len`.
    pub fn padding_for(&self, len: usize) -> Result<(usize, usize)> {
        let unit = 1usize << self.depth;
        let total = len.div_ceil(unit) * unit - len;
        if total > 0 && !self.pad_input {
            return Err(Error::Shape(format!(
                "input length {len} not divisible by {unit} and padding is disabled"
            )));
        }
        Ok((total / 2, total - total / 2))
    }
}

fn he_normal<T: Real>(shape: [usize; 4], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::from_f64_lossy(std * z)
    })
}

fn conv<T: Real>(c_in: usize, c_out: usize, k: usize, stride: usize, bias: bool, rng: &mut impl Rng) -> Conv2d<T> {
    Conv2d::new(
        he_normal([c_out, c_in, k, k], c_in * k * k, rng),
        bias.then(|| vec![T::zero(); c_out]),
        ConvGeometry::new(k, stride, k / 2),
    )
}

/// Two (conv 3x3, batchnorm, ReLU) stages plus the identity shortcut.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    acts: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> ResidualBlock<T> {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: conv(channels, channels, 3, 1, false, rng),
            bn1: BatchNorm2d::new(channels),
            conv2: conv(channels, channels, 3, 1, false, rng),
            bn2: BatchNorm2d::new(channels),
            acts: None,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let c = self.bn1.running_mean.len();
        if x.channels() != c {
            return Err(Error::Shape(format!("residual block for {c} channels got {}", x.channels())));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let h1 = relu(&self.bn1.forward(&self.conv1.forward(x)?)?);
        let h2 = relu(&self.bn2.forward(&self.conv2.forward(&h1)?)?);
        let mut out = h2.clone();
        out.add_assign(x);
        self.acts = Some((h1, h2));
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let h1 = relu(&self.bn1.infer(&self.conv1.infer(x)?)?);
        let mut out = relu(&self.bn2.infer(&self.conv2.infer(&h1)?)?);
        out.add_assign(x);
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (h1, h2) = self
            .acts
            .take()
            .ok_or_else(|| Error::Shape("residual block backward without forward".into()))?;
        let d = relu_backward(&h2, dy);
        let d = self.conv2.backward(&self.bn2.backward(&d)?)?;
        let d = relu_backward(&h1, &d);
        let mut dx = self.conv1.backward(&self.bn1.backward(&d)?)?;
        dx.add_assign(dy);
        Ok(dx)
    }

    fn visit<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        out.extend(self.conv1.params());
        out.extend(self.bn1.params());
        out.extend(self.conv2.params());
        out.extend(self.bn2.params());
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.extend(self.conv1.params_mut());
        out.extend(self.bn1.params_mut());
        out.extend(self.conv2.params_mut());
        out.extend(self.bn2.params_mut());
    }

    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<T>>) {
        for bn in [&mut self.bn1, &mut self.bn2] {
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
    }
}

#[derive(Debug, Clone)]
struct EncoderLevel<T> {
    blocks: Vec<ResidualBlock<T>>,
    down: Conv2d<T>,
}

#[derive(Debug, Clone)]
struct DecoderLevel<T> {
    up: ConvTranspose2d<T>,
    block: ResidualBlock<T>,
}

#[derive(Debug, Clone)]
pub struct ResUNet<T> {
    config: ModelConfig,
    stem: Conv2d<T>,
    encoder: Vec<EncoderLevel<T>>,
    bottleneck: Vec<ResidualBlock<T>>,
    /// deepest level first
    decoder: Vec<DecoderLevel<T>>,
    head1: Conv2d<T>,
    head2: Conv2d<T>,
    cache: Option<ForwardCache<T>>,
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    head_act: Tensor<T>,
    input_hw: (usize, usize),
    pad: ((usize, usize), (usize, usize)),
}

fn pad<T: Real>(x: &Tensor<T>, (top, bottom): (usize, usize), (left, right): (usize, usize)) -> Tensor<T> {
    if top + bottom + left + right == 0 {
        return x.clone();
    }
    let [n, c, h, w] = x.shape();
    Tensor::from_fn([n, c, h + top + bottom, w + left + right], |[i, ch, y, xx]| {
        if y < top || y >= top + h || xx < left || xx >= left + w {
            T::zero()
        } else {
            x.get([i, ch, y - top, xx - left])
        }
    })
}

fn crop<T: Real>(x: &Tensor<T>, top: usize, left: usize, (h, w): (usize, usize)) -> Tensor<T> {
    if x.height() == h && x.width() == w {
        return x.clone();
    }
    let [n, c, _, _] = x.shape();
    Tensor::from_fn([n, c, h, w], |[i, ch, y, xx]| x.get([i, ch, y + top, xx + left]))
}

/// Builds a residual U-Net with He-normal weights drawn from `seed`.
pub fn build_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<ResUNet<T>> {
    config.validate()?;
    let mut rng = stream_rng(seed, 0x756e_6574);
    let c0 = config.base_filters;
    let stem = conv(1, c0, 3, 1, true, &mut rng);
    let mut encoder = Vec::with_capacity(config.depth);
    for level in 0..config.depth {
        let c = c0 << level;
        let blocks = (0..config.blocks_per_level[level])
            .map(|_| ResidualBlock::new(c, &mut rng))
            .collect();
        encoder.push(EncoderLevel {
            blocks,
            down: conv(c, 2 * c, 3, 2, true, &mut rng),
        });
    }
    let deep = c0 << config.depth;
    let bottleneck = (0..config.blocks_per_level[config.depth])
        .map(|_| ResidualBlock::new(deep, &mut rng))
        .collect();
    let decoder = (0..config.depth)
        .rev()
        .map(|level| {
            let c = c0 << level;
            DecoderLevel {
                up: ConvTranspose2d::new(he_normal([2 * c, c, 3, 3], 2 * c * 9, &mut rng), Some(vec![T::zero(); c])),
                block: ResidualBlock::new(c, &mut rng),
            }
        })
        .collect();
    let [k1, k2] = config.final_kernels;
    Ok(ResUNet {
        config: config.clone(),
        stem,
        encoder,
        bottleneck,
        decoder,
        head1: conv(c0, c0, k1, 1, true, &mut rng),
        head2: conv(c0, 1, k2, 1, true, &mut rng),
        cache: None,
    })
}

impl<T: Real> ResUNet<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn padding(&self, x: &Tensor<T>) -> Result<((usize, usize), (usize, usize))> {
        if x.channels() != 1 {
            return Err(Error::Shape(format!("model input needs 1 channel, got {}", x.channels())));
        }
        Ok((self.config.padding_for(x.height())?, self.config.padding_for(x.width())?))
    }

    /// Training-mode forward (batch statistics); caches activations.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (ph, pw) = self.padding(x)?;
        let mut h = self.stem.forward(&pad(x, ph, pw))?;
        let mut skips = Vec::with_capacity(self.config.depth);
        for level in &mut self.encoder {
            for block in &mut level.blocks {
                h = block.forward(&h)?;
            }
            let next = level.down.forward(&h)?;
            skips.push(h);
            h = next;
        }
        for block in &mut self.bottleneck {
            h = block.forward(&h)?;
        }
        for level in &mut self.decoder {
            let mut up = level.up.forward(&h)?;
            up.add_assign(&skips.pop().expect("one skip per level"));
            h = level.block.forward(&up)?;
        }
        let head_act = relu(&self.head1.forward(&h)?);
        let y = self.head2.forward(&head_act)?;
        self.cache = Some(ForwardCache {
            head_act,
            input_hw: (x.height(), x.width()),
            pad: (ph, pw),
        });
        Ok(crop(&y, ph.0, pw.0, (x.height(), x.width())))
    }

    /// Inference-mode forward (running statistics); leaves the model untouched.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (ph, pw) = self.padding(x)?;
        let mut h = self.stem.infer(&pad(x, ph, pw))?;
        let mut skips = Vec::with_capacity(self.config.depth);
        for level in &self.encoder {
            for block in &level.blocks {
                h = block.infer(&h)?;
            }
            let next = level.down.infer(&h)?;
            skips.push(h);
            h = next;
        }
        for block in &self.bottleneck {
            h = block.infer(&h)?;
        }
        for level in &self.decoder {
            let mut up = level.up.infer(&h)?;
            up.add_assign(&skips.pop().expect("one skip per level"));
            h = level.block.infer(&up)?;
        }
        let y = self.head2.infer(&relu(&self.head1.infer(&h)?))?;
        Ok(crop(&y, ph.0, pw.0, (x.height(), x.width())))
    }

    /// Accumulates parameter gradients for the last `forward` and returns
    /// the gradient with respect to its input.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Shape("model backward without a training forward".into()))?;
        let (ph, pw) = cache.pad;
        let (h, w) = cache.input_hw;
        if dy.shape() != [dy.batch(), 1, h, w] {
            return Err(Error::Shape(format!("output gradient {:?} vs output {h}x{w}", dy.shape())));
        }
        let d = pad(dy, ph, pw);
        let d = self.head2.backward(&d)?;
        let mut d = self.head1.backward(&relu_backward(&cache.head_act, &d))?;
        let mut skip_grads = Vec::with_capacity(self.config.depth);
        for level in self.decoder.iter_mut().rev() {
            d = level.block.backward(&d)?;
            skip_grads.push(d.clone());
            d = level.up.backward(&d)?;
        }
        for block in self.bottleneck.iter_mut().rev() {
            d = block.backward(&d)?;
        }
        for level in self.encoder.iter_mut().rev() {
            d = level.down.backward(&d)?;
            d.add_assign(&skip_grads.pop().expect("one skip per level"));
            for block in level.blocks.iter_mut().rev() {
                d = block.backward(&d)?;
            }
        }
        let d = self.stem.backward(&d)?;
        Ok(crop(&d, ph.0, pw.0, (h, w)))
    }

    /// Trainable parameters in the fixed serialization order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = self.stem.params();
        for level in &self.encoder {
            for block in &level.blocks {
                block.visit(&mut out);
            }
            out.extend(level.down.params());
        }
        for block in &self.bottleneck {
            block.visit(&mut out);
        }
        for level in &self.decoder {
            out.extend(level.up.params());
            level.block.visit(&mut out);
        }
        out.extend(self.head1.params());
        out.extend(self.head2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.stem.params_mut();
        for level in &mut self.encoder {
            for block in &mut level.blocks {
                block.visit_mut(&mut out);
            }
            out.extend(level.down.params_mut());
        }
        for block in &mut self.bottleneck {
            block.visit_mut(&mut out);
        }
        for level in &mut self.decoder {
            out.extend(level.up.params_mut());
            level.block.visit_mut(&mut out);
        }
        out.extend(self.head1.params_mut());
        out.extend(self.head2.params_mut());
        out
    }

    /// Batch-norm running statistics, in block order (mean, var per BN).
    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for level in &mut self.encoder {
            for block in &mut level.blocks {
                block.buffers_mut(&mut out);
            }
        }
        for block in &mut self.bottleneck {
            block.buffers_mut(&mut out);
        }
        for level in &mut self.decoder {
            level.block.buffers_mut(&mut out);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Every parameter value followed by every running statistic, flattened
    /// in serialization order.
    pub fn state(&mut self) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = self.params().iter().map(|p| p.value.data().to_vec()).collect();
        out.extend(self.buffers_mut().into_iter().map(|b| b.clone()));
        out
    }

    /// Inverse of `state`.
    pub fn load_state(&mut self, state: &[Vec<T>]) -> Result<()> {
        let n_params = self.params().len();
        let expected = n_params + self.buffers_mut().len();
        if state.len() != expected {
            return Err(Error::Format(format!("model state has {} tensors, expected {expected}", state.len())));
        }
        let mismatch = |k: usize, want: usize, got: usize| {
            Error::Format(format!("model tensor {k} has {got} values, expected {want}"))
        };
        for (k, p) in self.params_mut().into_iter().enumerate() {
            if state[k].len() != p.value.len() {
                return Err(mismatch(k, p.value.len(), state[k].len()));
            }
            p.value.data_mut().copy_from_slice(&state[k]);
        }
        for (k, b) in self.buffers_mut().into_iter().enumerate() {
            let src = &state[n_params + k];
            if src.len() != b.len() {
                return Err(mismatch(n_params + k, b.len(), src.len()));
            }
            b.copy_from_slice(src);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{max_rel_error, numeric_grad, random_tensor};

    fn small(depth: usize) -> ModelConfig {
        ModelConfig {
            depth,
            base_filters: 2,
            blocks_per_level: vec![1; depth + 1],
            final_kernels: [3, 1],
            pad_input: true,
        }
    }

    #[test]
    fn preserves_shape() {
        let cfg = ModelConfig {
            base_filters: 4,
            ..ModelConfig::desk_default()
        };
        let m = build_model::<f32>(&cfg, 1).unwrap();
        let y = m.predict(&Tensor::zeros([1, 1, 64, 64])).unwrap();
        assert_eq!(y.shape(), [1, 1, 64, 64]);
        let y = m.predict(&Tensor::zeros([2, 1, 65, 64])).unwrap();
        assert_eq!(y.shape(), [2, 1, 65, 64]);
    }

    #[test]
    fn padding_is_symmetric() {
        let cfg = ModelConfig::desk_default();
        assert_eq!(cfg.padding_for(65).unwrap(), (3, 4));
        assert_eq!(cfg.padding_for(64).unwrap(), (0, 0));
        let strict = ModelConfig {
            pad_input: false,
            ..cfg
        };
        assert!(strict.padding_for(65).is_err());
        let m = build_model::<f32>(&strict, 0).unwrap();
        assert!(m.predict(&Tensor::zeros([1, 1, 65, 64])).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::desk_default();
        cfg.blocks_per_level = vec![1, 2, 1, 4];
        assert!(cfg.validate().is_err());
        cfg.blocks_per_level = vec![1, 2];
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::desk_default();
        cfg.final_kernels = [2, 1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parameter_count_grows_with_depth() {
        let counts: Vec<usize> = (1..5)
            .map(|d| build_model::<f32>(&small(d), 0).unwrap().num_params())
            .collect();
        assert!(counts.windows(2).all(|w| w[1] > w[0]), "{counts:?}");
    }

    #[test]
    fn seeded_builds_are_identical() {
        let mut a = build_model::<f32>(&small(2), 9).unwrap();
        let mut b = build_model::<f32>(&small(2), 9).unwrap();
        let mut c = build_model::<f32>(&small(2), 10).unwrap();
        assert_eq!(a.state(), b.state());
        assert_ne!(a.state(), c.state());
    }

    #[test]
    fn state_round_trip() {
        let mut a = build_model::<f32>(&small(2), 1).unwrap();
        let mut b = build_model::<f32>(&small(2), 2).unwrap();
        b.load_state(&a.state()).unwrap();
        assert_eq!(a.state(), b.state());
        let mut short = a.state();
        short.pop();
        assert!(b.load_state(&short).is_err());
    }

    #[test]
    fn zeroed_block_is_identity() {
        let mut rng = stream_rng(0, 0);
        let mut block = ResidualBlock::<f64>::new(3, &mut rng);
        for conv in [&mut block.conv1, &mut block.conv2] {
            conv.weight.value.data_mut().fill(0.0);
        }
        block.bn1.gamma.value.data_mut().fill(0.0);
        block.bn2.gamma.value.data_mut().fill(0.0);
        let x = random_tensor::<f64>([2, 3, 6, 6], 1);
        assert_eq!(block.forward(&x).unwrap(), x);
        assert_eq!(block.infer(&x).unwrap(), x);
        assert!(block.forward(&random_tensor([1, 2, 6, 6], 2)).is_err());
    }

    #[test]
    fn block_gradient_matches_finite_differences() {
        let mut rng = stream_rng(1, 0);
        let block = ResidualBlock::<f64>::new(2, &mut rng);
        let x = random_tensor::<f64>([3, 2, 5, 5], 3);
        let r = random_tensor::<f64>(x.shape(), 4);
        let mut b = block.clone();
        b.forward(&x).unwrap();
        let dx = b.backward(&r).unwrap();
        let num = numeric_grad(&x, |t| block.clone().forward(t).unwrap().dot(&r));
        assert!(max_rel_error(dx.data(), num.data()) < 1e-4);
        let w = block.conv1.weight.value.clone();
        let num = numeric_grad(&w, |t| {
            let mut c = block.clone();
            c.conv1.weight.value = t.clone();
            c.forward(&x).unwrap().dot(&r)
        });
        assert!(max_rel_error(b.conv1.weight.grad.data(), num.data()) < 1e-4);
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let model = build_model::<f64>(&small(2), 5).unwrap();
        let x = random_tensor::<f64>([2, 1, 6, 5], 6);
        let r = random_tensor::<f64>(x.shape(), 7);
        let mut m = model.clone();
        m.forward(&x).unwrap();
        let dx = m.backward(&r).unwrap();
        let num = numeric_grad(&x, |t| model.clone().forward(t).unwrap().dot(&r));
        assert!(max_rel_error(dx.data(), num.data()) < 1e-3);
        let analytic: Vec<Vec<f64>> = m.params().iter().map(|p| p.grad.data().to_vec()).collect();
        for k in 0..analytic.len() {
            let p0 = model.params()[k].value.clone();
            let num = numeric_grad(&p0, |t| {
                let mut c = model.clone();
                c.params_mut()[k].value = t.clone();
                c.forward(&x).unwrap().dot(&r)
            });
            let err = max_rel_error(&analytic[k], num.data());
            assert!(err < 1e-3, "parameter tensor {k}: {err}");
        }
    }
}
