use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::seed;

/// Which discriminator augmentations are enabled. Each enabled op fires
/// independently per image with probability `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub mirror: bool,
    /// Rotation by a uniformly chosen multiple of 90 degrees.
    pub rotate90: bool,
    /// Circular integer shift of up to this fraction of the side.
    pub translate: Option<f64>,
    /// Additive brightness (std 0.2) and contrast around the image mean (log2 std 0.5).
    pub color: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mirror: true,
            rotate90: true,
            translate: Some(0.125),
            color: true,
        }
    }
}

impl AugmentConfig {
    pub fn mirror_only() -> Self {
        Self {
            mirror: true,
            rotate90: false,
            translate: None,
            color: false,
        }
    }

    pub fn describe(&self) -> String {
        let mut ops = Vec::new();
        if self.mirror {
            ops.push("mirror".to_string());
        }
        if self.rotate90 {
            ops.push("rotate90".to_string());
        }
        if let Some(t) = self.translate {
            ops.push(format!("translate({t})"));
        }
        if self.color {
            ops.push("brightness(0.2)".to_string());
            ops.push("contrast(0.5)".to_string());
        }
        ops.join(",")
    }
}

/// Per-image transform: a pixel permutation followed by an affine color map.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    /// Output pixel `j` reads input pixel `source[j]`; `None` for identity.
    pub source: Option<Vec<usize>>,
    pub brightness: f32,
    pub contrast: f32,
    pub mirrored: bool,
}

impl AugmentPlan {
    fn identity() -> Self {
        Self {
            source: None,
            brightness: 0.0,
            contrast: 1.0,
            mirrored: false,
        }
    }

    fn is_identity(&self) -> bool {
        self.source.is_none() && self.brightness == 0.0 && self.contrast == 1.0
    }

    fn apply(&self, x: &[f32], h: usize, w: usize, y: &mut [f32]) {
        let hw = h * w;
        match &self.source {
            Some(src) => {
                for (yp, xp) in y.chunks_mut(hw).zip(x.chunks(hw)) {
                    for (o, &s) in yp.iter_mut().zip(src) {
                        *o = xp[s];
                    }
                }
            }
            None => y.copy_from_slice(x),
        }
        if self.brightness != 0.0 || self.contrast != 1.0 {
            let mean = y.iter().sum::<f32>() / y.len() as f32;
            for v in y.iter_mut() {
                *v = self.contrast * (*v - mean) + mean + self.brightness;
            }
        }
    }

    /// Transposed Jacobian of [`apply`](Self::apply).
    fn adjoint(&self, gy: &[f32], h: usize, w: usize, gx: &mut [f32]) {
        let hw = h * w;
        let mut g = gy.to_vec();
        if self.brightness != 0.0 || self.contrast != 1.0 {
            let c = self.contrast;
            let shared = (1.0 - c) * gy.iter().sum::<f32>() / gy.len() as f32;
            for v in g.iter_mut() {
                *v = c * *v + shared;
            }
        }
        match &self.source {
            Some(src) => {
                gx.iter_mut().for_each(|v| *v = 0.0);
                for (xp, gp) in gx.chunks_mut(hw).zip(g.chunks(hw)) {
                    for (&s, &v) in src.iter().zip(gp) {
                        xp[s] += v;
                    }
                }
            }
            None => gx.copy_from_slice(&g),
        }
    }
}

fn compose(src: Option<Vec<usize>>, h: usize, w: usize, f: impl Fn(usize, usize) -> (usize, usize)) -> Vec<usize> {
    let base: Vec<usize> = src.unwrap_or_else(|| (0..h * w).collect());
    let mut out = vec![0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = f(y, x);
            out[y * w + x] = base[sy * w + sx];
        }
    }
    out
}

fn plan_one(rng: &mut impl Rng, p: f64, cfg: &AugmentConfig, h: usize, w: usize) -> AugmentPlan {
    // every random is drawn regardless of p so decisions stay aligned across p values
    let u_mirror: f64 = rng.gen();
    let u_rot: f64 = rng.gen();
    let k_rot: u32 = rng.gen_range(1..4);
    let u_tr: f64 = rng.gen();
    let (fx, fy): (f64, f64) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
    let u_b: f64 = rng.gen();
    let b: f32 = rng.sample::<f32, _>(StandardNormal) * 0.2;
    let u_c: f64 = rng.gen();
    let c: f32 = (rng.sample::<f32, _>(StandardNormal) * 0.5).exp2();

    let mut plan = AugmentPlan::identity();
    if p <= 0.0 {
        return plan;
    }
    let mut src = None;
    if cfg.mirror && u_mirror < p {
        src = Some(compose(src, h, w, |y, x| (y, w - 1 - x)));
        plan.mirrored = true;
    }
    if cfg.rotate90 && h == w && u_rot < p {
        for _ in 0..k_rot {
            // counter-clockwise quarter turn: out(y, x) = in(x, w-1-y)
            src = Some(compose(src, h, w, |y, x| (x, w - 1 - y)));
        }
    }
    if let Some(t) = cfg.translate {
        if u_tr < p {
            let dx = (fx * t * w as f64).round() as i64;
            let dy = (fy * t * h as f64).round() as i64;
            if dx != 0 || dy != 0 {
                let (hh, ww) = (h as i64, w as i64);
                src = Some(compose(src, h, w, |y, x| {
                    ((y as i64 - dy).rem_euclid(hh) as usize, (x as i64 - dx).rem_euclid(ww) as usize)
                }));
            }
        }
    }
    plan.source = src;
    if cfg.color {
        if u_b < p {
            plan.brightness = b;
        }
        if u_c < p {
            plan.contrast = c;
        }
    }
    plan
}

/// Augments an NCHW batch. The same `seed` always yields the same plans, and
/// `p = 0` returns a bit-identical copy.
pub fn augment_batch(images: &Tensor, p: f64, cfg: &AugmentConfig, seed: u64) -> (Tensor, Vec<AugmentPlan>) {
    let s = images.shape();
    let (h, w) = (s[2], s[3]);
    let mut rng = seed::rng(seed::derive_seed(seed, &["ada-augment"]));
    let mut out = images.clone();
    let mut plans = Vec::with_capacity(images.batch());
    for i in 0..images.batch() {
        let plan = plan_one(&mut rng, p, cfg, h, w);
        if !plan.is_identity() {
            plan.apply(images.sample(i), h, w, out.sample_mut(i));
        }
        plans.push(plan);
    }
    (out, plans)
}

/// Pulls a gradient w.r.t. the augmented batch back to the original batch.
pub(crate) fn augment_adjoint(grad: &Tensor, plans: &[AugmentPlan]) -> Tensor {
    let s = grad.shape();
    let (h, w) = (s[2], s[3]);
    let mut out = grad.clone();
    for (i, plan) in plans.iter().enumerate() {
        if !plan.is_identity() {
            plan.adjoint(grad.sample(i), h, w, out.sample_mut(i));
        }
    }
    out
}
