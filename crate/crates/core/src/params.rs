//! Named parameter storage and binding onto a tape.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Frozen buffers (running statistics) are stored and checkpointed but
    /// never updated by the optimizer.
    pub trainable: bool,
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Elements across every block, buffers included.
    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Replaces values from `other`, which must hold the same names and shapes.
    pub fn assign(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Config("parameter sets differ in size".into()));
        }
        for p in &mut self.params {
            let src = other.get(&p.name)?;
            if src.shape() != p.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }

    /// Puts every parameter on `tape`; frozen buffers become constants.
    pub fn bind(&self, tape: &mut Tape) -> Bound<'_> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), p.trainable))
            .collect();
        Bound { store: self, vars }
    }

    /// Like [`ParamStore::bind`] but nothing requires a gradient.
    pub fn bind_constant(&self, tape: &mut Tape) -> Bound<'_> {
        let vars = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        Bound { store: self, vars }
    }
}

/// Tape handles for a [`ParamStore`].
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    /// Pairs existing tape handles with `store`, one per parameter in store order.
    pub fn from_vars(store: &'a ParamStore, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::Usage(format!(
                "{} handles for {} parameters",
                vars.len(),
                store.len()
            )));
        }
        Ok(Bound { store, vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.store.position(name).map(|i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub(crate) fn normal(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

/// He-normal initialisation for `[kh, kw, cin, cout]` kernels.
pub(crate) fn he_kernel(kernel: usize, cin: usize, cout: usize, rng: &mut Rng) -> Tensor {
    let fan_in = (kernel * kernel * cin) as f64;
    normal(&[kernel, kernel, cin, cout], (2.0 / fan_in).sqrt(), rng)
}
