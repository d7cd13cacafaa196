use std::path::Path;
use std::sync::Mutex;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augment_training_pair, rmse, Anchor, AugmentPolicy, LandmarkSet, POINT_COUNT};
use crate::checkpoint;
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::imageio;
use crate::nn::{
    self, Adam, Conv2d, DepthwiseConv2d, GlobalPool, Layer, LeakyRelu, Linear, PoolKind, Reshape, Residual,
    Sequential, Tensor,
};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkBackbone {
    /// Strided 3x3 convolutions, flattened into the regression head.
    SmallConv,
    /// Inverted-residual blocks (expand, depthwise, project) with global max pooling.
    MobileInvertedResidual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkModelConfig {
    pub input_size: (u32, u32),
    pub head_widths: Vec<usize>,
    pub output_dim: usize,
    pub backbone: LandmarkBackbone,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Regress anchor-normalized coordinates instead of raw input pixels.
    pub normalize: bool,
    pub augment: Option<AugmentPolicy>,
    pub seed: u64,
}

impl Default for LandmarkModelConfig {
    fn default() -> Self {
        Self {
            input_size: (224, 224),
            head_widths: vec![128, 128],
            output_dim: 2 * POINT_COUNT,
            backbone: LandmarkBackbone::SmallConv,
            epochs: 15,
            batch_size: 32,
            lr: 1e-3,
            normalize: true,
            augment: Some(AugmentPolicy::default()),
            seed: 0,
        }
    }
}

impl LandmarkModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output_dim != 2 * POINT_COUNT {
            return Err(Error::InvalidConfig(format!(
                "landmark output_dim must be {} (2 x {POINT_COUNT} points), got {}",
                2 * POINT_COUNT,
                self.output_dim
            )));
        }
        if self.input_size.0 < 8 || self.input_size.1 < 8 {
            return Err(Error::InvalidConfig(format!("landmark input {:?} too small", self.input_size)));
        }
        if self.batch_size == 0 || self.lr <= 0.0 {
            return Err(Error::InvalidConfig("landmark batch size and lr must be positive".into()));
        }
        Ok(())
    }
}

fn head(net: Sequential, mut width: usize, cfg: &LandmarkModelConfig, rng: &mut ChaCha8Rng) -> Sequential {
    let mut net = net;
    for &h in &cfg.head_widths {
        net = net.push(Linear::new(width, h, rng)).push(LeakyRelu::relu());
        width = h;
    }
    net.push(Linear::new(width, cfg.output_dim, rng))
}

fn build_network(cfg: &LandmarkModelConfig, rng: &mut ChaCha8Rng) -> Sequential {
    let (w, h) = (cfg.input_size.0 as usize, cfg.input_size.1 as usize);
    match cfg.backbone {
        LandmarkBackbone::SmallConv => {
            let mut net = Sequential::new();
            let (mut cw, mut ch, mut c) = (w, h, 3usize);
            let mut stage = 0;
            while cw.min(ch) > 4 {
                let out = (16usize << stage).min(64);
                net = net.push(Conv2d::new(c, out, 3, 2, 1, rng)).push(LeakyRelu::relu());
                cw = (cw - 1) / 2 + 1;
                ch = (ch - 1) / 2 + 1;
                c = out;
                stage += 1;
            }
            head(net.push(Reshape::flatten()), c * cw * ch, cfg, rng)
        }
        LandmarkBackbone::MobileInvertedResidual => {
            let mut net = Sequential::new()
                .push(Conv2d::new(3, 16, 3, 2, 1, rng))
                .push(LeakyRelu::relu());
            // (out channels, stride, expansion)
            let blocks = [(16, 1, 1), (24, 2, 4), (24, 1, 4), (32, 2, 4), (32, 1, 4), (64, 2, 4), (64, 1, 4)];
            let mut c = 16;
            for (out, stride, t) in blocks {
                let hidden = c * t;
                let body = Sequential::new()
                    .push(Conv2d::new(c, hidden, 1, 1, 0, rng))
                    .push(LeakyRelu::relu())
                    .push(DepthwiseConv2d::new(hidden, 3, stride, 1, rng))
                    .push(LeakyRelu::relu())
                    .push(Conv2d::new(hidden, out, 1, 1, 0, rng));
                net = if stride == 1 && c == out {
                    net.push(Residual::new(body))
                } else {
                    net.push(body)
                };
                c = out;
            }
            let net = net
                .push(Conv2d::new(c, 128, 1, 1, 0, rng))
                .push(LeakyRelu::relu())
                .push(GlobalPool::new(PoolKind::Max));
            head(net, 128, cfg, rng)
        }
    }
}

/// Trained keypoint regressor. Inference is deterministic and takes `&self`.
pub struct LandmarkModel {
    cfg: LandmarkModelConfig,
    net: Mutex<Sequential>,
}

#[derive(Serialize, Deserialize)]
struct LandmarkCheckpoint {
    config: LandmarkModelConfig,
    #[serde(with = "nn::hexbuf::nested")]
    params: Vec<Vec<f32>>,
}

impl LandmarkModel {
    pub fn new(cfg: LandmarkModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed::derive_seed(cfg.seed, &["landmark-init"]));
        let net = build_network(&cfg, &mut rng);
        Ok(Self {
            cfg,
            net: Mutex::new(net),
        })
    }

    pub fn config(&self) -> &LandmarkModelConfig {
        &self.cfg
    }

    pub fn weight_hash(&self) -> String {
        nn::weight_hash(&*self.net.lock().expect("model lock"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = LandmarkCheckpoint {
            config: self.cfg.clone(),
            params: nn::export_params(&*self.net.lock().expect("model lock")),
        };
        checkpoint::write(path, "landmarks", &ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: LandmarkCheckpoint = checkpoint::read(path, "landmarks")?;
        let model = Self::new(ck.config)?;
        nn::import_params(&mut *model.net.lock().expect("model lock"), &ck.params)?;
        Ok(model)
    }

    fn input_anchor(&self) -> Anchor {
        Anchor::frame(self.cfg.input_size.0 as f64, self.cfg.input_size.1 as f64)
    }

    /// Regression target for landmarks already expressed at input resolution.
    fn encode(&self, l: &LandmarkSet) -> [f32; 2 * POINT_COUNT] {
        let l = if self.cfg.normalize {
            super::normalize_landmarks(l, &self.input_anchor()).expect("input anchor is positive")
        } else {
            *l
        };
        l.to_flat().map(|v| v as f32)
    }

    /// Network output back to pixel coordinates at input resolution.
    fn decode(&self, out: &[f32]) -> LandmarkSet {
        let flat: Vec<f64> = out.iter().map(|&v| v as f64).collect();
        let l = LandmarkSet::from_flat(&flat).expect("output width validated");
        if self.cfg.normalize {
            super::denormalize_landmarks(&l, &self.input_anchor()).expect("input anchor is positive")
        } else {
            l
        }
    }

    fn forward(&self, batch: &Tensor) -> Tensor {
        self.net.lock().expect("model lock").forward(batch)
    }

    /// Predictions at input resolution for images already resized to it.
    fn predict_input_res(&self, images: &[Tensor]) -> Vec<LandmarkSet> {
        images
            .chunks(64)
            .flat_map(|chunk| {
                let out = self.forward(&Tensor::stack(chunk));
                (0..chunk.len()).map(|i| self.decode(out.sample(i))).collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn predict(&self, img: &RgbImage) -> LandmarkSet {
        let (iw, ih) = self.cfg.input_size;
        let resized = imageio::resize(img, iw, ih);
        let pred = self.predict_input_res(&[imageio::to_tensor(&resized)])[0];
        let (sx, sy) = (img.width() as f64 / iw as f64, img.height() as f64 / ih as f64);
        pred.map(|[x, y]| [x * sx, y * sy])
    }
}

/// Pixel-space landmarks for `img` at its own resolution.
pub fn predict_landmarks(model: &LandmarkModel, img: &RgbImage) -> LandmarkSet {
    model.predict(img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation RMSE in pixels at the model's input resolution.
    pub val_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub loss: String,
    pub target: String,
    pub curve: Vec<EpochStats>,
    pub skipped_augmentations: usize,
    pub train_records: usize,
    pub val_records: usize,
    pub weight_hash: String,
}

/// Loads images at input resolution together with their scaled landmarks.
fn load_pairs(m: &DatasetManifest, size: (u32, u32)) -> Result<Vec<(RgbImage, LandmarkSet)>> {
    let missing: Vec<String> = m
        .records
        .iter()
        .filter(|r| r.landmarks.is_none())
        .map(|r| r.ref_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLandmarks(missing));
    }
    m.records
        .iter()
        .map(|r| {
            let img = imageio::load_rgb(&r.image_ref)?;
            let (sx, sy) = (size.0 as f64 / img.width() as f64, size.1 as f64 / img.height() as f64);
            let l = r.landmarks.expect("checked above").map(|[x, y]| [x * sx, y * sy]);
            Ok((imageio::resize(&img, size.0, size.1), l))
        })
        .collect()
}

/// Fits the regressor with mean squared error on the encoded targets.
pub fn train_landmark_model(
    cfg: &LandmarkModelConfig,
    train: &DatasetManifest,
    val: &DatasetManifest,
) -> Result<(LandmarkModel, TrainingReport)> {
    let model = LandmarkModel::new(cfg.clone())?;
    let train_pairs = load_pairs(train, cfg.input_size)?;
    let val_pairs = load_pairs(val, cfg.input_size)?;
    if train_pairs.is_empty() && cfg.epochs > 0 {
        return Err(Error::EmptyInput("landmark training set is empty".into()));
    }
    let val_images: Vec<Tensor> = val_pairs.iter().map(|(i, _)| imageio::to_tensor(i)).collect();
    let val_truth: Vec<LandmarkSet> = val_pairs.iter().map(|(_, l)| *l).collect();
    let base: Vec<(Tensor, [f32; 2 * POINT_COUNT])> = train_pairs
        .iter()
        .map(|(i, l)| (imageio::to_tensor(i), model.encode(l)))
        .collect();

    let mut opt = Adam::new(cfg.lr, 0.9, 0.999);
    let mut curve = Vec::new();
    let mut skipped = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..base.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive_indexed(cfg.seed, "landmark-epoch", epoch as u64)));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut xs = Vec::with_capacity(batch.len());
            let mut ys = Vec::with_capacity(batch.len() * 2 * POINT_COUNT);
            for &i in batch {
                let sample = cfg.augment.as_ref().and_then(|policy| {
                    let s = seed::derive_seed(cfg.seed, &["landmark-aug", &epoch.to_string(), &i.to_string()]);
                    let (img, l) = &train_pairs[i];
                    match augment_training_pair(img, l, policy, s) {
                        Ok((ai, al)) if al.all_inside(cfg.input_size) => Some((imageio::to_tensor(&ai), model.encode(&al))),
                        _ => {
                            skipped += 1;
                            None
                        }
                    }
                });
                let (x, y) = sample.unwrap_or_else(|| base[i].clone());
                xs.push(x);
                ys.extend_from_slice(&y);
            }
            let mut net = model.net.lock().expect("model lock");
            let out = net.forward(&Tensor::stack(&xs));
            let n = out.len() as f32;
            let mut grad = out.clone();
            let mut batch_loss = 0.0f64;
            for (g, t) in grad.data_mut().iter_mut().zip(&ys) {
                let d = *g - t;
                batch_loss += (d * d) as f64;
                *g = 2.0 * d / n;
            }
            loss_sum += batch_loss;
            net.backward(&grad);
            opt.step(&mut net.params_mut());
        }
        let train_loss = loss_sum / (base.len() * 2 * POINT_COUNT) as f64;
        let val_rmse = if val_images.is_empty() {
            None
        } else {
            Some(rmse(&model.predict_input_res(&val_images), &val_truth)?)
        };
        log::info!("landmarks epoch {epoch}: loss {train_loss:.5} val rmse {val_rmse:?}");
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_rmse,
        });
    }
    let report = TrainingReport {
        loss: "mean squared error".into(),
        target: if cfg.normalize {
            "coordinates normalized to the image-frame anchor".into()
        } else {
            "pixel coordinates at input resolution".into()
        },
        curve,
        skipped_augmentations: skipped,
        train_records: train.records.len(),
        val_records: val.records.len(),
        weight_hash: model.weight_hash(),
    };
    Ok((model, report))
}
