use rand::Rng;

use crate::error::{Error, Result};

/// Index of a tensor inside one [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable array with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.is_empty() || shape.len() > 2 || shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "tensor `{name}` has invalid shape {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::dim(format!("tensor `{name}` values"), n, values.len()));
        }
        Ok(Self {
            grad: vec![0.0; n],
            name,
            shape,
            values,
        })
    }

    /// Shape as `(rows, cols)`; a vector is a single row.
    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.tensors.push(ParamTensor::new(name, shape, values)?);
        Ok(ParamId(self.tensors.len() - 1))
    }

    /// Weight matrix `rows x cols` drawn from uniform(-a, a), `a = sqrt(6 / (rows + cols))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
        self.add(name, vec![rows, cols], values)
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn tensor(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Ids of every tensor whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.tensors
            .iter()
            .enumerate()
            .filter(|(_, t)| t.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.values.iter().all(|v| v.is_finite()))
    }

    /// Overwrites values from `other`, matching tensors by name and shape.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for t in &mut self.tensors {
            let src = other
                .tensors
                .iter()
                .find(|o| o.name == t.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", t.name)))?;
            if src.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` shape {:?} does not match {:?}",
                    t.name, src.shape, t.shape
                )));
            }
            t.values.copy_from_slice(&src.values);
        }
        Ok(())
    }

    /// Flattened values of the given tensors, in order.
    pub fn flat_values(&self, ids: &[ParamId]) -> Vec<f64> {
        ids.iter()
            .flat_map(|&id| self.tensors[id.0].values.iter().copied())
            .collect()
    }

    pub fn flat_grads(&self, ids: &[ParamId]) -> Vec<f64> {
        ids.iter()
            .flat_map(|&id| self.tensors[id.0].grad.iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, ids: &[ParamId], flat: &[f64]) {
        let mut off = 0;
        for &id in ids {
            let t = &mut self.tensors[id.0];
            let n = t.values.len();
            t.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter vector length mismatch");
    }
}
