use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ada::{ada_update, AdaState};
use super::augment::{augment_adjoint, augment_batch};
use super::models::{build_models, Discriminator, Generator};
use super::GanConfig;
use crate::checkpoint;
use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::imageio;
use crate::metrics::{fid_between, FeatureExtractor, MetricReport};
use crate::nn::{self, Adam, Layer, Tensor};
use crate::seed;

const CHECKPOINT_KIND: &str = "gan";
/// Input-space length of the finite-difference step used for R1.
const R1_DELTA: f32 = 1e-2;

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanCheckpoint {
    pub config: GanConfig,
    pub kimg: u64,
    pub images_seen: u64,
    pub step: u64,
    pub ada: AdaState,
    /// Signs of `D(real)` collected since the last controller update.
    #[serde(with = "nn::hexbuf::flat")]
    pub pending_signs: Vec<f32>,
    pub fid_log: Vec<(u64, f64)>,
    pub extractor: String,
    pub augment: String,
    /// Written when training aborted on a non-finite loss.
    pub diagnostic: bool,
    #[serde(with = "nn::hexbuf::nested")]
    pub generator: Vec<Vec<f32>>,
    #[serde(with = "nn::hexbuf::nested")]
    pub discriminator: Vec<Vec<f32>>,
    pub g_opt: Adam,
    pub d_opt: Adam,
}

impl GanCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, CHECKPOINT_KIND, self)
    }

    /// Generator with this checkpoint's weights.
    pub fn generator(&self) -> Result<Generator> {
        let (mut g, _) = build_models(&self.config)?;
        nn::import_params(g.network_mut(), &self.generator)?;
        Ok(g)
    }

    pub fn discriminator(&self) -> Result<Discriminator> {
        let (_, mut d) = build_models(&self.config)?;
        nn::import_params(&mut d, &self.discriminator)?;
        Ok(d)
    }

    /// SHA-256 over generator then discriminator weights.
    pub fn weight_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for buf in self.generator.iter().chain(&self.discriminator) {
            for v in buf {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<GanCheckpoint> {
    checkpoint::read(path, CHECKPOINT_KIND)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Receives `latest.ckpt`, `fid_log.txt` and `fid_reports.jsonl`.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<GanCheckpoint>,
    /// Also keep `snapshot-<kimg>.ckpt` for every snapshot.
    pub keep_snapshots: bool,
}

/// Class ids for one minibatch, cycling through classes so every class
/// appears `floor(B/C)` or `ceil(B/C)` times.
pub fn balanced_labels(step: u64, batch: usize, class_count: u32) -> Vec<u32> {
    let c = class_count as u64;
    let offset = (step * batch as u64) % c;
    (0..batch as u64).map(|j| ((offset + j) % c) as u32 + 1).collect()
}

fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn grads(net: &dyn Layer) -> Vec<Vec<f32>> {
    net.params().iter().map(|p| p.grad.clone()).collect()
}

fn set_grads(net: &mut dyn Layer, g: Vec<Vec<f32>>) {
    for (p, g) in net.params_mut().into_iter().zip(g) {
        p.grad = g;
    }
}

/// Adds `weight * d/dtheta (1/2) sum_i |grad_x D(x_i)|^2` to the discriminator
/// gradients, using a central difference of `grad_theta D` along `grad_x D`.
/// Returns the mean squared input-gradient norm.
pub(crate) fn r1_accumulate(d: &mut Discriminator, x: &Tensor, labels: &[u32], weight: f32) -> f32 {
    let n = x.batch();
    let saved = grads(d);
    d.forward(x, labels);
    let gx = d.backward(&vec![1.0; n]);
    set_grads(d, saved);

    let mut plus = x.clone();
    let mut minus = x.clone();
    let mut seeds_p = vec![0.0f32; n];
    let mut sq_sum = 0.0f32;
    for i in 0..n {
        let g = gx.sample(i);
        let sq: f32 = g.iter().map(|v| v * v).sum();
        sq_sum += sq;
        let norm = sq.sqrt();
        if norm <= f32::MIN_POSITIVE {
            continue;
        }
        let h = R1_DELTA / norm;
        for ((p, m), gv) in plus.sample_mut(i).iter_mut().zip(minus.sample_mut(i).iter_mut()).zip(g) {
            *p += h * gv;
            *m -= h * gv;
        }
        seeds_p[i] = weight / (2.0 * h);
    }
    let seeds_m: Vec<f32> = seeds_p.iter().map(|v| -v).collect();
    d.forward(&plus, labels);
    d.backward(&seeds_p);
    d.forward(&minus, labels);
    d.backward(&seeds_m);
    sq_sum / n as f32
}

struct Trainer<'a> {
    cfg: GanConfig,
    g: Generator,
    d: Discriminator,
    g_opt: Adam,
    d_opt: Adam,
    ada: AdaState,
    pending: Vec<f32>,
    images_seen: u64,
    step: u64,
    fid_log: Vec<(u64, f64)>,
    images: Vec<Tensor>,
    labels: Vec<u32>,
    by_class: Vec<Vec<usize>>,
    extractor: &'a dyn FeatureExtractor,
}

impl Trainer<'_> {
    fn snapshot(&self, kimg: u64, diagnostic: bool) -> GanCheckpoint {
        GanCheckpoint {
            config: self.cfg.clone(),
            kimg,
            images_seen: self.images_seen,
            step: self.step,
            ada: self.ada,
            pending_signs: self.pending.clone(),
            fid_log: self.fid_log.clone(),
            extractor: self.extractor.descriptor(),
            augment: self.cfg.augment.describe(),
            diagnostic,
            generator: nn::export_params(self.g.network()),
            discriminator: nn::export_params(&self.d),
            g_opt: self.g_opt.clone(),
            d_opt: self.d_opt.clone(),
        }
    }

    /// FID between up to `fid_max_samples` reals and as many generated
    /// images with fixed latents and the same class mix.
    fn evaluate_fid(&mut self) -> Result<MetricReport> {
        let n = self.images.len().min(self.cfg.fid_max_samples);
        let mut rng = seed::rng(seed::derive_seed(self.cfg.seed, &["fid-eval"]));
        let mut generated = Vec::with_capacity(n);
        for chunk in (0..n).collect::<Vec<_>>().chunks(32) {
            let labels: Vec<u32> = chunk.iter().map(|&i| self.labels[i]).collect();
            let z = self.g.sample_latents(chunk.len(), &mut rng);
            generated.extend(self.g.forward(&z, &labels).unstack());
        }
        fid_between(self.extractor, &self.images[..n], &generated)
    }

    fn train_step(&mut self) -> (f32, f32) {
        let cfg = &self.cfg;
        let b = cfg.batch_size;
        let labels = balanced_labels(self.step, b, cfg.class_count);
        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "gan-step", self.step));
        let reals: Vec<Tensor> = labels
            .iter()
            .map(|&y| {
                let pool = &self.by_class[y as usize - 1];
                self.images[pool[rng.gen_range(0..pool.len())]].clone()
            })
            .collect();
        let reals = Tensor::stack(&reals);
        let p = self.ada.p;

        // discriminator
        let z = self.g.sample_latents(b, &mut rng);
        let fake = self.g.forward(&z, &labels);
        let (fake_aug, _) = augment_batch(&fake, p, &cfg.augment, seed::derive_indexed(cfg.seed, "aug-fake-d", self.step));
        let (real_aug, _) = augment_batch(&reals, p, &cfg.augment, seed::derive_indexed(cfg.seed, "aug-real", self.step));
        let d_fake = self.d.forward(&fake_aug, &labels);
        self.d.backward(&d_fake.iter().map(|v| sigmoid(*v) / b as f32).collect::<Vec<_>>());
        let d_real = self.d.forward(&real_aug, &labels);
        self.d.backward(&d_real.iter().map(|v| -sigmoid(-*v) / b as f32).collect::<Vec<_>>());
        let d_loss = d_fake.iter().chain(&d_real).zip((0..2 * b).map(|i| i < b)).map(|(v, is_fake)| {
            if is_fake {
                softplus(*v)
            } else {
                softplus(-*v)
            }
        });
        let d_loss = d_loss.sum::<f32>() / b as f32;
        if cfg.r1_gamma > 0.0 && self.step % cfg.r1_interval == 0 {
            let w = cfg.r1_gamma * cfg.r1_interval as f32 / b as f32;
            r1_accumulate(&mut self.d, &real_aug, &labels, w);
        }
        self.d_opt.step(&mut self.d.params_mut());
        self.pending.extend(&d_real);

        // generator
        let z = self.g.sample_latents(b, &mut rng);
        let fake = self.g.forward(&z, &labels);
        let (fake_aug, plans) = augment_batch(&fake, p, &cfg.augment, seed::derive_indexed(cfg.seed, "aug-fake-g", self.step));
        let d_out = self.d.forward(&fake_aug, &labels);
        let g_loss = d_out.iter().map(|v| softplus(-*v)).sum::<f32>() / b as f32;
        let gx = self.d.backward(&d_out.iter().map(|v| -sigmoid(-*v) / b as f32).collect::<Vec<_>>());
        nn::zero_grads(&mut self.d);
        self.g.backward(&augment_adjoint(&gx, &plans));
        self.g_opt.step(&mut self.g.network_mut().params_mut());

        if self.pending.len() as u64 >= cfg.ada_interval_images {
            self.ada = ada_update(self.ada, &self.pending, cfg);
            self.pending.clear();
        }
        self.images_seen += b as u64;
        self.step += 1;
        (d_loss, g_loss)
    }
}

fn load_training_images(cfg: &GanConfig, data: &DatasetManifest) -> Result<(Vec<Tensor>, Vec<u32>, Vec<Vec<usize>>)> {
    if data.class_count() != cfg.class_count {
        return Err(Error::InvalidConfig(format!(
            "GAN configured for {} classes, manifest has {}",
            cfg.class_count,
            data.class_count()
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut by_class = vec![Vec::new(); cfg.class_count as usize];
    for r in data.records_in(Split::Train) {
        let img = imageio::load_rgb(&r.image_ref)?;
        let img = imageio::resize(&img, cfg.resolution, cfg.resolution);
        by_class[r.class_id as usize - 1].push(images.len());
        images.push(imageio::to_tensor(&img));
        labels.push(r.class_id);
    }
    if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::EmptyClass(data.class_name(c as u32 + 1).to_string()));
    }
    Ok((images, labels, by_class))
}

fn same_run(a: &GanConfig, b: &GanConfig) -> bool {
    let strip = |c: &GanConfig| GanConfig {
        total_kimg: 0,
        ..c.clone()
    };
    strip(a) == strip(b)
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Writes the full log; called after every snapshot so the file always
/// mirrors the checkpoint.
fn write_fid_log(dir: &Path, log: &[(u64, f64)]) -> Result<()> {
    let mut text = String::from("# kimg\tfid\n");
    for (k, v) in log {
        text.push_str(&format!("{k}\t{v}\n"));
    }
    let path = dir.join("fid_log.txt");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Trains until `cfg.total_kimg` thousand real images have been shown to the
/// discriminator, returning a checkpoint per snapshot (kimg 0 first when
/// starting fresh).
///
/// Resuming from a checkpoint with the same configuration (apart from
/// `total_kimg`) reproduces the uninterrupted run exactly.
pub fn train_gan(
    cfg: &GanConfig,
    data: &DatasetManifest,
    extractor: &dyn FeatureExtractor,
    opts: &TrainOptions,
) -> Result<Vec<GanCheckpoint>> {
    let (mut g, mut d) = build_models(cfg)?;
    let (images, labels, by_class) = load_training_images(cfg, data)?;
    let beta = (0.0, 0.99);
    let mut t = Trainer {
        cfg: cfg.clone(),
        g_opt: Adam::new(cfg.g_lr, beta.0, beta.1),
        d_opt: Adam::new(cfg.d_lr, beta.0, beta.1),
        ada: AdaState::default(),
        pending: Vec::new(),
        images_seen: 0,
        step: 0,
        fid_log: Vec::new(),
        g: {
            if let Some(ck) = &opts.resume {
                nn::import_params(g.network_mut(), &ck.generator)?;
            }
            g
        },
        d: {
            if let Some(ck) = &opts.resume {
                nn::import_params(&mut d, &ck.discriminator)?;
            }
            d
        },
        images,
        labels,
        by_class,
        extractor,
    };
    let mut last_kimg = 0;
    if let Some(ck) = &opts.resume {
        if !same_run(&ck.config, cfg) {
            return Err(Error::InvalidConfig("resume checkpoint was trained with a different configuration".into()));
        }
        if ck.diagnostic {
            return Err(Error::Checkpoint("cannot resume from a diagnostic checkpoint".into()));
        }
        t.g_opt = ck.g_opt.clone();
        t.d_opt = ck.d_opt.clone();
        t.ada = ck.ada;
        t.pending = ck.pending_signs.clone();
        t.images_seen = ck.images_seen;
        t.step = ck.step;
        t.fid_log = ck.fid_log.clone();
        last_kimg = ck.kimg;
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut out = Vec::new();
    let emit = |t: &mut Trainer, kimg: u64, out: &mut Vec<GanCheckpoint>| -> Result<()> {
        let report = t.evaluate_fid()?;
        log::info!("gan kimg {kimg}: fid {:.4} p {:.4} r_hat {:.4}", report.value, t.ada.p, t.ada.r_hat);
        t.fid_log.push((kimg, report.value));
        let ck = t.snapshot(kimg, false);
        if let Some(dir) = &opts.out_dir {
            ck.save(&dir.join("latest.ckpt"))?;
            if opts.keep_snapshots {
                ck.save(&dir.join(format!("snapshot-{kimg:06}.ckpt")))?;
            }
            write_fid_log(dir, &t.fid_log)?;
            let mut line = serde_json::to_value(&report).map_err(|e| Error::Checkpoint(e.to_string()))?;
            line["kimg"] = kimg.into();
            line["ada_p"] = t.ada.p.into();
            append_line(&dir.join("fid_reports.jsonl"), &line.to_string())?;
        }
        out.push(ck);
        Ok(())
    };

    if opts.resume.is_none() {
        if let Some(dir) = &opts.out_dir {
            let _ = std::fs::remove_file(dir.join("fid_reports.jsonl"));
        }
        emit(&mut t, 0, &mut out)?;
    }
    let target = cfg.total_kimg * 1000;
    let mut next = (last_kimg + cfg.snapshot_interval_kimg).min(cfg.total_kimg);
    while t.images_seen < target {
        let (dl, gl) = t.train_step();
        if !(dl.is_finite() && gl.is_finite()) {
            let kimg = t.images_seen as f64 / 1000.0;
            let ck = t.snapshot(t.images_seen / 1000, true);
            let path = match &opts.out_dir {
                Some(dir) => dir.join("diagnostic.ckpt"),
                None => std::env::temp_dir().join(format!("petaug-gan-diagnostic-{}.ckpt", cfg.seed)),
            };
            ck.save(&path)?;
            return Err(Error::NonFiniteLoss { kimg, checkpoint: path });
        }
        if t.step % 50 == 0 {
            log::debug!("gan step {}: d {dl:.4} g {gl:.4} p {:.4}", t.step, t.ada.p);
        }
        if t.images_seen >= next * 1000 {
            emit(&mut t, next, &mut out)?;
            next = (next + cfg.snapshot_interval_kimg).min(cfg.total_kimg);
        }
    }
    Ok(out)
}
