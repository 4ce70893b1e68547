use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::transforms::CodecWeights;
use crate::weights::{
    decode_weight_file, encode_seed_file, encode_tensor_file, fingerprint, Loader, MapSource, ParamSource,
    SeededSource, WeightFile,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSource {
    Seed(u64),
    File(PathBuf),
}

/// Loaded weights plus the flat tensor list they were built from.
#[derive(Clone, Debug)]
pub struct Model {
    pub weights: CodecWeights,
    tensors: Vec<(String, crate::Tensor)>,
    fingerprint: u64,
    seed: Option<u64>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.fingerprint == other.fingerprint && self.tensors == other.tensors
    }
}

impl Model {
    fn build(source: &mut dyn ParamSource, seed: Option<u64>) -> Result<Self> {
        let mut loader = Loader::new(source);
        let weights = CodecWeights::load(&mut loader)?;
        let tensors = loader.finish()?;
        let fingerprint = fingerprint(&tensors);
        Ok(Self {
            weights,
            tensors,
            fingerprint,
            seed,
        })
    }

    pub fn from_seed(seed: u64) -> Result<Self> {
        Self::build(&mut SeededSource::new(seed), Some(seed))
    }

    pub fn from_tensors(tensors: Vec<(String, crate::Tensor)>) -> Result<Self> {
        Self::build(&mut MapSource::new(tensors), None)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        match decode_weight_file(data)? {
            WeightFile::Seeded(seed) => Self::from_seed(seed),
            WeightFile::Tensors(t) => Self::from_tensors(t),
        }
    }

    /// Binds streams to this weight set.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn tensors(&self) -> &[(String, crate::Tensor)] {
        &self.tensors
    }

    /// Full tensor container.
    pub fn to_bytes(&self) -> Vec<u8> {
        encode_tensor_file(&self.tensors)
    }

    /// Seed-only container when the model came from a seed.
    pub fn to_seed_bytes(&self) -> Option<Vec<u8>> {
        self.seed.map(encode_seed_file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn init_model(source: &ModelSource) -> Result<Model> {
    match source {
        ModelSource::Seed(seed) => Model::from_seed(*seed),
        ModelSource::File(path) => Model::from_bytes(&std::fs::read(path)?),
    }
}
