use super::tape::{Gradients, Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
struct Entry<S> {
    name: String,
    value: Tensor<S>,
    grad: Option<Vec<S>>,
}

/// Named, ordered parameter tensors with gradient accumulators.
///
/// Layers keep only [`ParamId`]s, so the same layer description works for
/// any precision; [`ParamStore::cast`] converts the numbers.
#[derive(Clone, Default)]
pub struct ParamStore<S> {
    entries: Vec<Entry<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry {
            name,
            value,
            grad: None,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&[S]> {
        self.entries[id.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Replaces the value of `id`, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Dimension {
                op: "set parameter",
                lhs: e.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    /// Adds the gradients of every bound parameter to its accumulator.
    pub fn accumulate(&mut self, bindings: &Bindings, grads: &Gradients<S>) {
        for (i, var) in bindings.vars.iter().enumerate() {
            let Some(var) = var else { continue };
            let Some(g) = grads.get(*var) else { continue };
            let e = &mut self.entries[i];
            match &mut e.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &x)| *a = *a + x),
                None => e.grad = Some(g.to_vec()),
            }
        }
    }

    /// Applies `f(value, grad)` to every entry; errors if any gradient is
    /// missing.
    pub fn update_with<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(usize, &mut [S], &[S]),
    {
        if let Some(e) = self.entries.iter().find(|e| e.grad.is_none()) {
            return Err(Error::usage(format!("parameter {} has no gradient", e.name)));
        }
        for (i, e) in self.entries.iter_mut().enumerate() {
            let g = e.grad.take().expect("checked above");
            f(i, e.value.data_mut(), &g);
        }
        Ok(())
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: None,
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    /// Bit-level equality of every value, used to assert frozen parameters.
    pub fn bitwise_eq(&self, other: &ParamStore<S>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a
                        .value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_f64_lossy().to_bits() == y.to_f64_lossy().to_bits())
            })
    }
}

/// Which tape leaf each parameter was bound to during one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: Vec<Option<Var>>,
}

/// Lazily places parameters of one store onto a tape.
///
/// Trainable binders create gradient-tracking leaves; frozen binders create
/// constants, so no gradient can ever reach the store.
pub struct Binder<'a, S> {
    store: &'a ParamStore<S>,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a, S: Real> Binder<'a, S> {
    pub fn trainable(store: &'a ParamStore<S>) -> Self {
        Binder {
            store,
            vars: vec![None; store.len()],
            trainable: true,
        }
    }

    pub fn frozen(store: &'a ParamStore<S>) -> Self {
        Binder {
            store,
            vars: vec![None; store.len()],
            trainable: false,
        }
    }

    pub fn store(&self) -> &'a ParamStore<S> {
        self.store
    }

    pub fn bind(&mut self, tape: &mut Tape<S>, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = tape.leaf(value, self.trainable);
        self.vars[id.0] = Some(v);
        v
    }

    pub fn finish(self) -> Bindings {
        Bindings { vars: self.vars }
    }
}
