use std::path::Path;

use crate::dataset::{DatasetManifest, Provenance, Record, Split};
use crate::error::{Error, Result};
use crate::imageio;
use crate::nn::Tensor;
use crate::seed;

use super::Generator;

const CHUNK: usize = 32;

/// Writes `per_class` generated PNGs for every class under
/// `out_dir/<class>/syn_<class>_<i>.png`. The latent for sample `i` of class
/// `c` depends only on `(seed, c, i)`.
pub fn generate_per_class(
    g: &mut Generator,
    per_class: usize,
    class_names: &[String],
    out_dir: &Path,
    seed: u64,
) -> Result<DatasetManifest> {
    let res = g.resolution();
    let mut m = DatasetManifest::new(class_names.to_vec(), Some((res, res)), Vec::new())?;
    if per_class == 0 {
        return Ok(m);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dim = g.latent_dim();
    for (ci, name) in class_names.iter().enumerate() {
        let class_id = ci as u32 + 1;
        for start in (0..per_class).step_by(CHUNK) {
            let idx: Vec<usize> = (start..(start + CHUNK).min(per_class)).collect();
            let mut z = Vec::with_capacity(idx.len() * dim);
            for &i in &idx {
                let mut rng = seed::rng(seed::derive_seed(seed, &["generate", &class_id.to_string(), &i.to_string()]));
                z.extend(g.sample_latents(1, &mut rng).into_data());
            }
            let out = g.forward(&Tensor::from_vec(&[idx.len(), dim], z), &vec![class_id; idx.len()]);
            for (k, img) in out.unstack().iter().enumerate() {
                let path = out_dir.join(name).join(format!("syn_{class_id:03}_{:06}.png", idx[k]));
                imageio::save_png(&imageio::from_tensor(img), &path)?;
                m.records.push(Record {
                    provenance: Provenance::Synthetic,
                    ..Record::real(path, class_id, Split::Train)
                });
            }
        }
    }
    m.validate()?;
    Ok(m)
}
