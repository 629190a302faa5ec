//! Trainable parameters, addressable by hierarchical path, with seeded
//! initialization and a binary checkpoint format.

use crate::config::ModelDims;
use crate::encoders::ImageBackend;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::substream;
use rand::Rng;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MFTRR1";

/// Path, shape, and init fan-in of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

fn spec(path: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> ParamSpec {
    ParamSpec { path: path.into(), shape, fan_in }
}

/// The full parameter registry for a configuration, in a fixed order. The
/// score head is always built at full width (pooled M̂ + both evidence
/// levels); ablation masks select rows at forward time, so disabled
/// branches keep their initial values and receive no gradient.
pub fn param_specs(dims: &ModelDims, backend: &ImageBackend) -> Vec<ParamSpec> {
    let d_c = dims.d_c;
    let mut specs = vec![spec("text.embedding", vec![dims.vocab_size, dims.d_emb], dims.d_emb)];
    for (&c, out_c) in dims.kernel_sizes.iter().zip(dims.kernel_out_widths()) {
        specs.push(spec(format!("text.conv{c}"), vec![c * dims.d_emb, out_c], c * dims.d_emb));
    }
    if let ImageBackend::TinyConv(tc) = backend {
        let mut c_in = 1;
        for (i, &c_out) in tc.channels.iter().enumerate() {
            let k2 = tc.kernel * tc.kernel;
            specs.push(spec(format!("image.stage{i}.kernel"), vec![k2 * c_in, c_out], k2 * c_in));
            specs.push(spec(format!("image.stage{i}.bias"), vec![1, c_out], k2 * c_in));
            specs.push(spec(format!("image.proj{i}"), vec![c_out, dims.d_i], c_out));
            c_in = c_out;
        }
    }
    specs.push(spec("semantic.text_proj.weight", vec![dims.d_d, d_c], dims.d_d));
    specs.push(spec("semantic.text_proj.bias", vec![1, d_c], dims.d_d));
    specs.push(spec("semantic.image_proj.weight", vec![dims.d_i, d_c], dims.d_i));
    specs.push(spec("semantic.image_proj.bias", vec![1, d_c], dims.d_i));
    for gate in ["ww", "wv", "vw", "vv", "ss"] {
        specs.push(spec(format!("semantic.gate.{gate}.weight"), vec![2 * d_c, d_c], 2 * d_c));
        specs.push(spec(format!("semantic.gate.{gate}.bias"), vec![1, d_c], 2 * d_c));
    }
    for graph in ["macro", "topic", "post"] {
        for z in 0..dims.graph_layers {
            specs.push(spec(format!("evidence.{graph}.layer{z}.w1"), vec![2 * d_c, d_c], 2 * d_c));
            specs.push(spec(format!("evidence.{graph}.layer{z}.b1"), vec![1, d_c], 2 * d_c));
            specs.push(spec(format!("evidence.{graph}.layer{z}.w2"), vec![d_c, 1], d_c));
            specs.push(spec(format!("evidence.{graph}.layer{z}.b2"), vec![1, 1], d_c));
        }
    }
    specs.push(spec("evidence.coherence.w1", vec![2 * d_c, d_c], 2 * d_c));
    specs.push(spec("evidence.coherence.b1", vec![1, d_c], 2 * d_c));
    specs.push(spec("evidence.coherence.w2", vec![d_c, 1], d_c));
    specs.push(spec("evidence.coherence.b2", vec![1, 1], d_c));
    specs.push(spec("head.weight", vec![3 * d_c, 1], 3 * d_c));
    specs.push(spec("head.bias", vec![1, 1], 3 * d_c));
    specs
}

/// Every trainable tensor, in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (p.clone(), i))
            .collect();
        ParamSet { entries, index }
    }

    /// Seeded init: uniform(±1/√fan_in) per tensor, each path with its own
    /// substream so the registry can grow without perturbing other paths.
    pub fn init(dims: &ModelDims, backend: &ImageBackend, seed: u64) -> Result<Self> {
        dims.validate()?;
        let entries = param_specs(dims, backend)
            .into_iter()
            .map(|s| {
                let mut rng = substream(seed, &format!("init/{}", s.path));
                let bound = 1.0 / (s.fan_in as f64).sqrt();
                let len = s.shape.iter().product();
                let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
                Ok((s.path, Tensor::new(s.shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamSet::from_entries(entries))
    }

    pub fn zeros_like(other: &ParamSet) -> Self {
        ParamSet::from_entries(
            other
                .entries
                .iter()
                .map(|(p, t)| (p.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(p, t)| (p.as_str(), t))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(p, _)| p.as_str())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.index.get(path).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.index.get(path).map(|&i| &mut self.entries[i].1)
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn path_at(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn contains(&self, path: &str) -> bool {
        self.index.contains_key(path)
    }

    /// Keep only entries whose path satisfies the predicate, optionally
    /// replacing individual tensors.
    pub(crate) fn filtered_map(
        &self,
        mut keep: impl FnMut(&str) -> bool,
        mut replace: impl FnMut(&str, &Tensor) -> Tensor,
    ) -> ParamSet {
        ParamSet::from_entries(
            self.entries
                .iter()
                .filter(|(p, _)| keep(p))
                .map(|(p, t)| (p.clone(), replace(p, t)))
                .collect(),
        )
    }

    // ── Checkpoint I/O ───────────────────────────────────────────────
    //
    // Layout: magic "MFTRR1", then per tensor in registry order:
    //   u32 LE path length, UTF-8 path bytes,
    //   u32 LE rank, u32 LE extent per axis,
    //   f64 LE values, row-major.

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CHECKPOINT_MAGIC)?;
        for (p, t) in &self.entries {
            f.write_all(&(p.len() as u32).to_le_bytes())?;
            f.write_all(p.as_bytes())?;
            f.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &e in t.shape() {
                f.write_all(&(e as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Load and validate against the registry for this configuration:
    /// exact same paths, exact same shapes.
    pub fn load(path: impl AsRef<Path>, dims: &ModelDims, backend: &ImageBackend) -> Result<Self> {
        let bytes = std::fs::read(&path)?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
            if *cur + n > bytes.len() {
                return Err(Error::Checkpoint("unexpected end of file".into()));
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        let take_u32 = |cur: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(cur, 4)?.try_into().expect("4 bytes")))
        };

        if take(&mut cur, 6)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let mut loaded: HashMap<String, Tensor> = HashMap::new();
        while cur < bytes.len() {
            let plen = take_u32(&mut cur)? as usize;
            let pbytes = take(&mut cur, plen)?;
            let p = std::str::from_utf8(pbytes)
                .map_err(|_| Error::Checkpoint("non-UTF-8 path".into()))?
                .to_string();
            let rank = take_u32(&mut cur)? as usize;
            if rank == 0 || rank > 2 {
                return Err(Error::Checkpoint(format!("{p}: bad rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(take_u32(&mut cur)? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = take(&mut cur, numel * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("{p}: {e}")))?;
            if loaded.insert(p.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate path {p}")));
            }
        }

        let specs = param_specs(dims, backend);
        if loaded.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, config expects {}",
                loaded.len(),
                specs.len()
            )));
        }
        let entries = specs
            .into_iter()
            .map(|s| {
                let t = loaded.remove(&s.path).ok_or_else(|| {
                    Error::Checkpoint(format!("missing parameter {}", s.path))
                })?;
                if t.shape() != s.shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "{}: shape {:?} does not match config {:?}",
                        s.path,
                        t.shape(),
                        s.shape
                    )));
                }
                Ok((s.path, t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamSet::from_entries(entries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::TinyConvSpec;

    fn micro_dims() -> ModelDims {
        ModelDims {
            vocab_size: 12,
            l_d: 2,
            l_i: 2,
            d_emb: 4,
            d_d: 6,
            d_i: 3,
            d_c: 8,
            kernel_sizes: vec![1, 3],
            graph_layers: 2,
        }
    }

    #[test]
    fn registry_has_expected_groups() {
        let specs = param_specs(&micro_dims(), &ImageBackend::Passthrough);
        let paths: Vec<&str> = specs.iter().map(|s| s.path.as_str()).collect();
        assert!(paths.contains(&"text.embedding"));
        assert!(paths.contains(&"semantic.gate.ss.weight"));
        assert!(paths.contains(&"evidence.macro.layer1.w2"));
        assert!(paths.contains(&"evidence.coherence.b2"));
        assert!(paths.contains(&"head.weight"));
        assert!(!paths.iter().any(|p| p.starts_with("image.")));
        // head spans pooled M̂ plus both evidence levels
        let head = specs.iter().find(|s| s.path == "head.weight").unwrap();
        assert_eq!(head.shape, vec![24, 1]);
    }

    #[test]
    fn tiny_conv_backend_adds_image_params() {
        let backend = ImageBackend::TinyConv(TinyConvSpec::default());
        let specs = param_specs(&micro_dims(), &backend);
        assert!(specs.iter().any(|s| s.path == "image.stage0.kernel"));
        assert!(specs.iter().any(|s| s.path == "image.proj2"));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let dims = micro_dims();
        let a = ParamSet::init(&dims, &ImageBackend::Passthrough, 7).unwrap();
        let b = ParamSet::init(&dims, &ImageBackend::Passthrough, 7).unwrap();
        assert_eq!(a, b);
        let c = ParamSet::init(&dims, &ImageBackend::Passthrough, 8).unwrap();
        assert_ne!(a, c);

        for (path, t) in a.iter() {
            let spec_fan = param_specs(&dims, &ImageBackend::Passthrough)
                .into_iter()
                .find(|s| s.path == path)
                .unwrap()
                .fan_in;
            let bound = 1.0 / (spec_fan as f64).sqrt();
            assert!(t.data().iter().all(|v| v.abs() < bound), "{path} exceeds ±{bound}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dims = micro_dims();
        let params = ParamSet::init(&dims, &ImageBackend::Passthrough, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        params.save(&path).unwrap();
        params.save(dir.path().join("model2.ckpt")).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("model2.ckpt")).unwrap()
        );
        let loaded = ParamSet::load(&path, &dims, &ImageBackend::Passthrough).unwrap();
        assert_eq!(loaded, params);
    }

    #[test]
    fn load_rejects_shape_mismatch_against_config() {
        let dims = micro_dims();
        let params = ParamSet::init(&dims, &ImageBackend::Passthrough, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        params.save(&path).unwrap();

        let mut other = micro_dims();
        other.d_c = 9;
        assert!(ParamSet::load(&path, &other, &ImageBackend::Passthrough).is_err());
    }

    #[test]
    fn load_rejects_corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMFT").unwrap();
        assert!(ParamSet::load(&path, &micro_dims(), &ImageBackend::Passthrough).is_err());
    }
}
