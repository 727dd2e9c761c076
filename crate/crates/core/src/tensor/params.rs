use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initialization scheme for a freshly registered parameter.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

impl Init {
    /// Glorot-uniform bound for a `[fan_in, fan_out]` matrix.
    pub fn xavier(fan_in: usize, fan_out: usize) -> Self {
        Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
    }
}

/// Anything a model builder can register parameters with.
pub trait ParamSink {
    fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId;
}

/// Counts parameters without allocating them.
#[derive(Default, Debug)]
pub struct ParamCounter {
    pub tensors: usize,
    pub elements: usize,
}

impl ParamSink for ParamCounter {
    fn add(&mut self, _name: &str, shape: &[usize], _init: Init) -> ParamId {
        self.tensors += 1;
        self.elements += shape.iter().product::<usize>();
        ParamId(self.tensors - 1)
    }
}

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::shape(
                "set_param",
                format!("`{name}` is {:?}, got {:?}", self.tensors[i].shape(), value.shape()),
            ));
        }
        self.tensors[i] = value;
        Ok(())
    }
}

impl ParamSink for ParamStore {
    fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name `{name}`");
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => (0..n).map(|_| self.rng.gen_range(-b..=b)).collect(),
        };
        self.names.push(name.to_string());
        self.tensors.push(Tensor::from_parts(shape.to_vec(), data));
        self.index.insert(name.to_string(), self.tensors.len() - 1);
        ParamId(self.tensors.len() - 1)
    }
}
