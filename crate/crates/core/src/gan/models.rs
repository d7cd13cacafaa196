use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::GanConfig;
use crate::error::Result;
use crate::nn::{Conv2d, Layer, LeakyRelu, Linear, Param, Reshape, Sequential, Tanh, Tensor, Upsample2x};
use crate::seed;

const SLOPE: f32 = 0.2;

/// `(z, class) -> image`. The class enters as a one-hot vector scaled to the
/// same norm as a typical `z`, concatenated with it.
pub struct Generator {
    net: Sequential,
    latent_dim: usize,
    class_count: u32,
    resolution: u32,
}

impl Generator {
    fn new(cfg: &GanConfig, rng: &mut ChaCha8Rng) -> Self {
        let c4 = cfg.channels(4);
        let mut net = Sequential::new()
            .push(Linear::new(cfg.latent_dim + cfg.class_count as usize, c4 * 16, rng))
            .push(Reshape::new(&[c4, 4, 4]))
            .push(LeakyRelu::new(SLOPE))
            .push(Conv2d::new(c4, c4, 3, 1, 1, rng))
            .push(LeakyRelu::new(SLOPE));
        let (mut res, mut c) = (4u32, c4);
        while res < cfg.resolution {
            res *= 2;
            let out = cfg.channels(res);
            net = net
                .push(Upsample2x::new())
                .push(Conv2d::new(c, out, 3, 1, 1, rng))
                .push(LeakyRelu::new(SLOPE));
            c = out;
        }
        let net = net.push(Conv2d::new(c, 3, 1, 1, 0, rng)).push(Tanh::new());
        Self {
            net,
            latent_dim: cfg.latent_dim,
            class_count: cfg.class_count,
            resolution: cfg.resolution,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    fn input(&self, z: &Tensor, labels: &[u32]) -> Tensor {
        assert_eq!(z.batch(), labels.len(), "one label per latent");
        assert_eq!(z.sample_len(), self.latent_dim, "latent width");
        let width = self.latent_dim + self.class_count as usize;
        let scale = (self.latent_dim as f32).sqrt();
        let mut x = Tensor::zeros(&[labels.len(), width]);
        for (i, &y) in labels.iter().enumerate() {
            assert!(y >= 1 && y <= self.class_count, "class id {y} out of range");
            let row = x.sample_mut(i);
            row[..self.latent_dim].copy_from_slice(z.sample(i));
            row[self.latent_dim + y as usize - 1] = scale;
        }
        x
    }

    /// Images `[N, 3, R, R]` in `[-1, 1]` for 1-based class ids.
    pub fn forward(&mut self, z: &Tensor, labels: &[u32]) -> Tensor {
        let x = self.input(z, labels);
        self.net.forward(&x)
    }

    pub fn backward(&mut self, grad: &Tensor) {
        self.net.backward(grad);
    }

    /// Standard normal latents from `rng`.
    pub fn sample_latents(&self, n: usize, rng: &mut impl Rng) -> Tensor {
        Tensor::from_vec(
            &[n, self.latent_dim],
            (0..n * self.latent_dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect(),
        )
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }
}

/// `(image, class) -> logit` with projection conditioning:
/// `logit = w . h + b + <embed[class], h>` over penultimate features `h`.
pub struct Discriminator {
    body: Sequential,
    out: Linear,
    embed: Param,
    features: usize,
    class_count: u32,
    cache: Option<(Tensor, Vec<u32>)>,
}

impl Discriminator {
    fn new(cfg: &GanConfig, rng: &mut ChaCha8Rng) -> Self {
        let top = cfg.channels(cfg.resolution);
        let mut body = Sequential::new()
            .push(Conv2d::new(3, top, 1, 1, 0, rng))
            .push(LeakyRelu::new(SLOPE));
        let (mut res, mut c) = (cfg.resolution, top);
        while res > 4 {
            res /= 2;
            let out = cfg.channels(res);
            body = body.push(Conv2d::new(c, out, 3, 2, 1, rng)).push(LeakyRelu::new(SLOPE));
            c = out;
        }
        let features = c;
        let body = body
            .push(Conv2d::new(c, c, 3, 1, 1, rng))
            .push(LeakyRelu::new(SLOPE))
            .push(Reshape::flatten())
            .push(Linear::new(c * 16, features, rng))
            .push(LeakyRelu::new(SLOPE));
        let embed = (0..cfg.class_count as usize * features)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        Self {
            body,
            out: Linear::new(features, 1, rng),
            embed: Param::new(embed),
            features,
            class_count: cfg.class_count,
            cache: None,
        }
    }

    fn embed_gain(&self) -> f32 {
        1.0 / (self.features as f32).sqrt()
    }

    pub fn forward(&mut self, x: &Tensor, labels: &[u32]) -> Vec<f32> {
        assert_eq!(x.batch(), labels.len(), "one label per image");
        let h = self.body.forward(x);
        let base = self.out.forward(&h);
        let g = self.embed_gain();
        let f = self.features;
        let logits = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                assert!(y >= 1 && y <= self.class_count, "class id {y} out of range");
                let e = &self.embed.value[(y as usize - 1) * f..y as usize * f];
                base.data()[i] + g * e.iter().zip(h.sample(i)).map(|(a, b)| a * b).sum::<f32>()
            })
            .collect();
        self.cache = Some((h, labels.to_vec()));
        logits
    }

    /// Backpropagates `dL/dlogit` and returns `dL/dx`.
    pub fn backward(&mut self, dlogits: &[f32]) -> Tensor {
        let (h, labels) = self.cache.take().expect("backward before forward");
        let f = self.features;
        let g = self.embed_gain();
        let mut dh = self.out.backward(&Tensor::from_vec(&[dlogits.len(), 1], dlogits.to_vec()));
        for (i, (&y, &d)) in labels.iter().zip(dlogits).enumerate() {
            let off = (y as usize - 1) * f;
            let hs = h.sample(i);
            let row = dh.sample_mut(i);
            for j in 0..f {
                row[j] += d * g * self.embed.value[off + j];
                self.embed.grad[off + j] += d * g * hs[j];
            }
        }
        self.cache = Some((h, labels));
        self.body.backward(&dh)
    }
}

impl Layer for Discriminator {
    /// Not meaningful without labels; use [`Discriminator::forward`].
    fn forward(&mut self, _x: &Tensor) -> Tensor {
        unimplemented!("discriminator needs class labels")
    }

    fn backward(&mut self, _grad_out: &Tensor) -> Tensor {
        unimplemented!("discriminator needs class labels")
    }

    fn params(&self) -> Vec<&Param> {
        let mut p = self.body.params();
        p.extend(self.out.params());
        p.push(&self.embed);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.body.params_mut();
        p.extend(self.out.params_mut());
        p.push(&mut self.embed);
        p
    }
}

/// Freshly initialized generator and discriminator; weights depend only on `cfg.seed`.
pub fn build_models(cfg: &GanConfig) -> Result<(Generator, Discriminator)> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, &["gan-init"]));
    let g = Generator::new(cfg, &mut rng);
    let d = Discriminator::new(cfg, &mut rng);
    Ok((g, d))
}
