//! Whole networks: construction from specs, batched passes and
//! persistence.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{infer_shapes, Layer, LayerSpec, Sequential};
use super::tensor::{Scalar, Tensor};
use super::{NnError, Result};

pub const ARCHITECTURE_FILE: &str = "architecture.toml";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-sample input shape.
    pub input: Vec<usize>,
    /// Seed for parameter initialization.
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(infer_shapes(&self.layers, &self.input)?
            .pop()
            .unwrap_or_else(|| self.input.clone()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchitectureFile {
    format_version: u32,
    dtype: String,
    n_params: usize,
    params_sha256: String,
    spec: NetworkSpec,
}

pub struct Network<T> {
    pub spec: NetworkSpec,
    body: Sequential<T>,
}

impl<T: Scalar> Network<T> {
    /// Shapes are checked against the whole layer list before any
    /// parameter is allocated.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        if spec.input.is_empty() || spec.input.contains(&0) {
            return Err(NnError::Shape(format!("network input shape {:?} is empty", spec.input)));
        }
        infer_shapes(&spec.layers, &spec.input)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let body = Sequential::build(&spec.layers, &spec.input, &mut rng)?;
        Ok(Self { spec, body })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape.len() != self.spec.input.len() + 1 || x.shape[1..] != self.spec.input[..] {
            return Err(NnError::Shape(format!(
                "network input {:?}, expected [batch, {:?}]",
                x.shape, self.spec.input
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.body.forward(x)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        self.body.backward(dy)
    }

    /// Forward pass in chunks of `batch` samples.
    pub fn predict(&mut self, x: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let n = x.batch();
        let per: usize = self.spec.input.iter().product();
        let out_shape = self.spec.output_shape()?;
        let per_out: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(n * per_out);
        for start in (0..n).step_by(batch.max(1)) {
            let end = (start + batch.max(1)).min(n);
            let mut shape = vec![end - start];
            shape.extend(&self.spec.input);
            let chunk = Tensor::new(shape, x.data[start * per..end * per].to_vec())?;
            data.extend(self.body.forward(&chunk)?.data);
        }
        let mut shape = vec![n];
        shape.extend(out_shape);
        Tensor::new(shape, data)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.body.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.body.params_mut()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// All parameters concatenated in layer order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params().iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(NnError::Shape(format!(
                "parameter vector has {} values, network needs {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| NnError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let flat = self.flat_params();
        let mut blob = Vec::with_capacity(flat.len() * T::BYTES);
        for v in flat {
            v.write_le(&mut blob);
        }
        let arch = ArchitectureFile {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.into(),
            n_params: self.n_params(),
            params_sha256: hex::encode(Sha256::digest(&blob)),
            spec: self.spec.clone(),
        };
        let text = toml::to_string_pretty(&arch).map_err(|e| NnError::Format {
            file: ARCHITECTURE_FILE.into(),
            reason: e.to_string(),
        })?;
        let params_path = dir.join(PARAMS_FILE);
        fs::write(&params_path, &blob).map_err(io(&params_path))?;
        let arch_path = dir.join(ARCHITECTURE_FILE);
        fs::write(&arch_path, text).map_err(io(&arch_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let arch_path = dir.join(ARCHITECTURE_FILE);
        let text = fs::read_to_string(&arch_path).map_err(|source| NnError::Io {
            path: arch_path.clone(),
            source,
        })?;
        let format = |reason: String| NnError::Format {
            file: ARCHITECTURE_FILE.into(),
            reason,
        };
        let arch: ArchitectureFile = toml::from_str(&text).map_err(|e| format(e.to_string()))?;
        if arch.format_version != FORMAT_VERSION {
            return Err(format(format!("format version {} is not supported", arch.format_version)));
        }
        if arch.dtype != T::DTYPE {
            return Err(format(format!("stored as {}, requested {}", arch.dtype, T::DTYPE)));
        }
        let params_path = dir.join(PARAMS_FILE);
        let blob = fs::read(&params_path).map_err(|source| NnError::Io {
            path: params_path.clone(),
            source,
        })?;
        if hex::encode(Sha256::digest(&blob)) != arch.params_sha256 {
            return Err(NnError::Checksum {
                file: PARAMS_FILE.into(),
            });
        }
        let mut net = Self::new(arch.spec)?;
        if blob.len() != arch.n_params * T::BYTES || arch.n_params != net.n_params() {
            return Err(NnError::Format {
                file: PARAMS_FILE.into(),
                reason: format!("{} bytes for {} parameters", blob.len(), net.n_params()),
            });
        }
        let flat: Vec<T> = blob.chunks_exact(T::BYTES).map(T::read_le).collect();
        net.set_flat_params(&flat)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Init;

    fn tiny() -> NetworkSpec {
        NetworkSpec {
            input: vec![3],
            seed: 5,
            layers: vec![
                LayerSpec::Dense {
                    units: 4,
                    init: Init::GlorotNormal,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    units: 2,
                    init: Init::GlorotUniform,
                },
                LayerSpec::Sigmoid,
            ],
        }
    }

    #[test]
    fn save_load_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = Network::<f32>::new(tiny()).unwrap();
        net.save(dir.path()).unwrap();
        let mut back = Network::<f32>::load(dir.path()).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.1, -0.5, 2.0, 1.0, 1.0, -1.0]).unwrap();
        assert_eq!(net.predict(&x, 1).unwrap(), back.predict(&x, 8).unwrap());
        assert!(matches!(Network::<f64>::load(dir.path()), Err(NnError::Format { .. })));

        let p = dir.path().join(PARAMS_FILE);
        let mut blob = fs::read(&p).unwrap();
        blob[3] ^= 1;
        fs::write(&p, blob).unwrap();
        assert!(matches!(Network::<f32>::load(dir.path()), Err(NnError::Checksum { .. })));
    }

    #[test]
    fn sigmoid_output_in_unit_interval() {
        let mut net = Network::<f64>::new(tiny()).unwrap();
        let x = Tensor::new(vec![3, 3], vec![1e3, -1e3, 0.0, -50.0, 20.0, 7.0, 0.0, 0.0, 0.0]).unwrap();
        let y = net.forward(&x).unwrap();
        assert!(y.data.iter().all(|&v| v >= 0.0 && v <= 1.0));
        let x = Tensor::new(vec![1, 3], vec![0.3, 0.1, -0.2]).unwrap();
        assert!(net.forward(&x).unwrap().data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Network::<f32>::new(tiny()).unwrap();
        let b = Network::<f32>::new(tiny()).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        let mut s = tiny();
        s.seed = 6;
        assert_ne!(a.flat_params(), Network::<f32>::new(s).unwrap().flat_params());
    }
}
