//! Named parameter storage with seeded initialization.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;

/// Whether a tensor is learned by gradient descent or is a running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

/// Ordered map of named tensors. Names follow the torchvision layout so that
/// converted checkpoints load without renaming.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, (Var, ParamKind)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, kind: ParamKind) -> Result<Var, ModelError> {
        let var = Var::from_tensor(&value)?;
        self.entries.insert(name.to_string(), (var.clone(), kind));
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.get(name).map(|(v, _)| v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Learnable tensors whose name starts with `prefix`, in name order.
    pub fn trainable(&self, prefix: &str) -> Vec<Var> {
        self.entries
            .iter()
            .filter(|(k, (_, kind))| *kind == ParamKind::Weight && k.starts_with(prefix))
            .map(|(_, (v, _))| v.clone())
            .collect()
    }

    /// Copies of every tensor matching `prefix`, for restoring later.
    pub fn snapshot(&self, prefix: &str) -> Result<BTreeMap<String, Tensor>, ModelError> {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, (v, _))| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrite stored values with `values`, checking names and shapes.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<(), ModelError> {
        for (name, t) in values {
            let (var, _) = self
                .entries
                .get(name)
                .ok_or_else(|| ModelError::Weights(format!("unknown tensor {name}")))?;
            if var.dims() != t.dims() {
                return Err(ModelError::Weights(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    var.dims(),
                    t.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }

    /// CRC-32 over the little-endian bytes of every tensor under `prefix`,
    /// including names, in name order.
    pub fn checksum(&self, prefix: &str) -> Result<u32, ModelError> {
        let mut h = crc32fast::Hasher::new();
        for (name, (var, _)) in self.entries.iter().filter(|(k, _)| k.starts_with(prefix)) {
            h.update(name.as_bytes());
            for v in var.as_tensor().flatten_all()?.to_vec1::<f32>()? {
                h.update(&v.to_le_bytes());
            }
        }
        Ok(h.finalize())
    }

    pub fn to_safetensors(&self) -> Result<Vec<u8>, ModelError> {
        let map: BTreeMap<String, Tensor> =
            self.entries.iter().map(|(k, (v, _))| (k.clone(), v.as_tensor().clone())).collect();
        let views: Vec<(String, TensorBytes)> =
            map.into_iter().map(|(k, t)| Ok((k, TensorBytes::new(&t)?))).collect::<Result<_, ModelError>>()?;
        safetensors::serialize(views, None).map_err(|e| ModelError::Weights(e.to_string()))
    }

    /// Load every tensor of this store from a safetensors blob. Extra tensors in
    /// the blob are ignored when `allow_extra` is set, otherwise rejected.
    pub fn load_safetensors(&self, bytes: &[u8], prefix: &str, allow_extra: bool) -> Result<usize, ModelError> {
        let st = safetensors::SafeTensors::deserialize(bytes).map_err(|e| ModelError::Weights(e.to_string()))?;
        let mut values = BTreeMap::new();
        for name in self.entries.keys().filter(|k| k.starts_with(prefix)) {
            let view = st.tensor(name).map_err(|_| ModelError::Weights(format!("missing tensor {name}")))?;
            values.insert(name.clone(), tensor_from_view(&view)?);
        }
        if !allow_extra {
            if let Some(extra) = st.names().into_iter().find(|n| !self.entries.contains_key(*n)) {
                return Err(ModelError::Weights(format!("unexpected tensor {extra}")));
            }
        }
        self.restore(&values)?;
        Ok(values.len())
    }
}

fn tensor_from_view(view: &safetensors::tensor::TensorView<'_>) -> Result<Tensor, ModelError> {
    let shape = view.shape().to_vec();
    let data = view.data();
    let values: Vec<f32> = match view.dtype() {
        safetensors::Dtype::F32 => data.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
        // torchvision stores `num_batches_tracked` as i64; it is never loaded, but
        // tolerate other integer buffers by converting.
        safetensors::Dtype::I64 => {
            data.chunks_exact(8).map(|b| i64::from_le_bytes(b.try_into().unwrap()) as f32).collect()
        }
        other => return Err(ModelError::Weights(format!("unsupported dtype {other:?}"))),
    };
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?)
}

struct TensorBytes {
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl TensorBytes {
    fn new(t: &Tensor) -> Result<Self, ModelError> {
        let bytes = t.flatten_all()?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect();
        Ok(TensorBytes { shape: t.dims().to_vec(), bytes })
    }
}

impl safetensors::View for TensorBytes {
    fn dtype(&self) -> safetensors::Dtype {
        safetensors::Dtype::F32
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
    fn data(&self) -> std::borrow::Cow<'_, [u8]> {
        std::borrow::Cow::Borrowed(&self.bytes)
    }
    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

/// Deterministic initializers drawing from one seeded stream.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn tensor(values: Vec<f32>, shape: &[usize]) -> Result<Tensor, ModelError> {
        Ok(Tensor::from_vec(values, shape, &Device::Cpu)?)
    }

    /// He normal with fan-out = out_channels * kernel area.
    pub fn kaiming_fan_out(&mut self, shape: &[usize]) -> Result<Tensor, ModelError> {
        let fan_out = shape[0] * shape[2..].iter().product::<usize>();
        let std = (2.0 / fan_out as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let v = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        Self::tensor(v, shape)
    }

    /// Uniform in ±1/sqrt(fan_in), the usual default for dense layers.
    pub fn uniform_fan_in(&mut self, shape: &[usize], fan_in: usize) -> Result<Tensor, ModelError> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let v = (0..n).map(|_| self.rng.random_range(-bound..bound) as f32).collect();
        Self::tensor(v, shape)
    }

    pub fn constant(&self, shape: &[usize], value: f32) -> Result<Tensor, ModelError> {
        Self::tensor(vec![value; shape.iter().product()], shape)
    }
}
