use std::collections::HashMap;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fnv1a64, NnError, Real, Tape, Var};

/// How a tensor is (re)initialized by [`ParamStore::init_parameters`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `(-bound, bound)`.
    Uniform { bound: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct Parameter<F> {
    /// Dotted path such as `cae.enc.0.kernel`.
    pub name: String,
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    /// Buffers (batch-norm running statistics) are stored alongside
    /// parameters but never receive gradients.
    pub trainable: bool,
    pub init: Init,
}

/// Named tensors of one model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    index: HashMap<String, usize>,
}

/// Tape variables for the trainable parameters of one store.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, id: usize) -> Var {
        self.vars[id].expect("parameter id refers to a buffer")
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor and returns its id. Names must be unique.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> usize {
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        let value = match init {
            Init::Ones => ArrayD::from_elem(IxDyn(shape), F::one()),
            _ => ArrayD::zeros(IxDyn(shape)),
        };
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            grad: ArrayD::zeros(IxDyn(shape)),
            value,
            trainable,
            init,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: usize) -> &Parameter<F> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Parameter<F> {
        &mut self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter<F>, NnError> {
        self.id(name)
            .map(|i| &self.params[i])
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Deterministic initialization. Every tensor draws from its own
    /// ChaCha stream keyed by its name, so renaming one tensor changes only
    /// that tensor's values.
    pub fn init_parameters(&mut self, seed: u64) {
        for p in &mut self.params {
            match p.init {
                Init::Uniform { bound } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(fnv1a64(p.name.as_bytes()));
                    p.value.mapv_inplace(|_| F::from_f64_lossy(rng.random_range(-bound..bound)));
                }
                Init::Zeros => p.value.fill(F::zero()),
                Init::Ones => p.value.fill(F::one()),
            }
            p.grad.fill(F::zero());
        }
    }

    /// Records every trainable tensor on the tape. A frozen binding records
    /// them as constants: gradients still flow through the model to its
    /// inputs but never into its weights.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| p.trainable.then(|| tape.leaf(p.value.clone(), trainable)))
            .collect();
        Bound { vars }
    }

    /// Adds the tape's leaf gradients into the stored `grad` fields.
    pub fn accumulate_grads(&mut self, bound: &Bound, tape: &Tape<F>) {
        for (p, v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = v.and_then(|v| tape.grad(v)) {
                p.grad += g;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    /// Copy with every tensor converted to another element type.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.mapv(|v| G::from_f64_lossy(v.to_f64_lossy())),
                    grad: p.grad.mapv(|v| G::from_f64_lossy(v.to_f64_lossy())),
                    trainable: p.trainable,
                    init: p.init,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrites values from named tensors; every stored name must be
    /// present with a matching shape.
    pub fn load_values(&mut self, tensors: &HashMap<String, ArrayD<F>>) -> Result<(), NnError> {
        for p in &mut self.params {
            let t = tensors
                .get(&p.name)
                .ok_or_else(|| NnError::UnknownParameter(p.name.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "load_values",
                    expected: p.value.shape().to_vec(),
                    actual: t.shape().to_vec(),
                });
            }
            p.value.assign(t);
        }
        Ok(())
    }
}
