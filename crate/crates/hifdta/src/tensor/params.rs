//! Named parameter storage with seeded initialization.

use std::collections::HashMap;

use super::rng::{fnv1a, StreamRng};
use super::{Grads, Tape, TensorId, Value};
use crate::error::{Error, Result};

/// How a parameter is filled at creation time.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform(-b, b) with b = sqrt(6 / fan_in). `fan_in` is passed explicitly
    /// because several weights are used transposed relative to their storage.
    HeUniform { fan_in: usize },
    /// Gaussian with the given standard deviation, mean zero.
    Normal { std: f64 },
    Zeros,
    Ones,
    Const(f64),
    /// Recurrent weight init: each HxH gate block of a Hx4H matrix is made
    /// orthogonal by Gram-Schmidt on Gaussian columns.
    OrthogonalGates { hidden: usize },
    /// State-space A parameter stored as log magnitude: row-constant
    /// a[d][n] = ln(n+1), so exp-negated decay spans slow to fast modes.
    SsmALog,
}

pub struct Param {
    pub name: String,
    pub value: Value,
    pub grad: Option<Vec<f64>>,
    pub trainable: bool,
}

/// Insertion-ordered named parameter set. Initialization draws from a stream
/// keyed by the parameter name, so values do not depend on creation order.
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    rng: StreamRng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
            rng: StreamRng::new(seed),
        }
    }

    pub fn def(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        self.def_inner(name, shape, init, true)
    }

    /// Non-trainable named buffer (dataset statistics, config echoes).
    pub fn def_buffer(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::dim(
                "def_buffer",
                format!("{name}: {} values for shape {shape:?}", values.len()),
            ));
        }
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value: Value::new(shape.to_vec(), values),
            grad: None,
            trainable: false,
        });
        Ok(())
    }

    fn def_inner(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let n: usize = shape.iter().product();
        let stream = fnv1a(name.as_bytes());
        let data = match init {
            Init::HeUniform { fan_in } => {
                let b = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|i| self.rng.uniform_in(stream, i as u64, -b, b)).collect()
            }
            Init::Normal { std } => (0..n).map(|i| self.rng.normal(stream, i as u64) * std).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::OrthogonalGates { hidden } => {
                if shape != [hidden, 4 * hidden] {
                    return Err(Error::dim(
                        "init",
                        format!("{name}: OrthogonalGates expects [{hidden}, {}]", 4 * hidden),
                    ));
                }
                let mut data = vec![0.0; n];
                for gate in 0..4 {
                    let block = orthogonal(&mut self.rng, stream ^ (gate as u64 + 1), hidden);
                    for r in 0..hidden {
                        for c in 0..hidden {
                            data[r * 4 * hidden + gate * hidden + c] = block[r * hidden + c];
                        }
                    }
                }
                data
            }
            Init::SsmALog => {
                if shape.len() != 2 {
                    return Err(Error::dim("init", format!("{name}: SsmALog expects rank 2")));
                }
                let (d, nst) = (shape[0], shape[1]);
                let mut data = vec![0.0; n];
                for r in 0..d {
                    for c in 0..nst {
                        data[r * nst + c] = ((c + 1) as f64).ln();
                    }
                }
                data
            }
        };
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value: Value::new(shape.to_vec(), data),
            grad: None,
            trainable,
        });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(Error::Config(format!("unknown parameter {name}"))),
        }
    }

    /// Push a parameter onto a tape as a grad-tracked leaf. Returns the node id.
    pub fn leaf(&self, tape: &mut Tape, name: &str) -> Result<TensorId> {
        let p = self.get(name)?;
        Ok(tape.leaf(p.value.clone()))
    }

    /// Push as a constant (no gradient), for frozen buffers.
    pub fn leaf_const(&self, tape: &mut Tape, name: &str) -> Result<TensorId> {
        let p = self.get(name)?;
        Ok(tape.constv(p.value.clone()))
    }

    /// Accumulate gradients from a finished backward pass into `grad` buffers.
    /// `ids` maps parameter names to the tape node each was pushed as.
    pub fn absorb_grads(&mut self, grads: &Grads, ids: &[(String, TensorId)]) {
        for (name, node) in ids {
            if let Some(&i) = self.index.get(name.as_str()) {
                let p = &mut self.params[i];
                if !p.trainable {
                    continue;
                }
                if let Some(g) = grads.get(*node) {
                    let buf = p.grad.get_or_insert_with(|| vec![0.0; p.value.data().len()]);
                    for (a, b) in buf.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
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

    /// Total trainable scalar count.
    pub fn n_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.data().len())
            .sum()
    }
}

/// Square orthogonal matrix via Gram-Schmidt on Gaussian rows. For the sizes
/// used here (<= 256) the O(h^3) cost is irrelevant.
fn orthogonal(rng: &mut StreamRng, stream: u64, h: usize) -> Vec<f64> {
    let mut m: Vec<Vec<f64>> = (0..h)
        .map(|r| (0..h).map(|c| rng.normal(stream, (r * h + c) as u64)).collect())
        .collect();
    for i in 0..h {
        for j in 0..i {
            let dot: f64 = (0..h).map(|k| m[i][k] * m[j][k]).sum();
            for k in 0..h {
                m[i][k] -= dot * m[j][k];
            }
        }
        let norm: f64 = (0..h).map(|k| m[i][k] * m[i][k]).sum::<f64>().sqrt();
        // Degenerate rows are vanishingly unlikely with Gaussian draws; fall
        // back to a unit basis vector if one shows up.
        if norm < 1e-12 {
            for k in 0..h {
                m[i][k] = if k == i { 1.0 } else { 0.0 };
            }
        } else {
            for k in 0..h {
                m[i][k] /= norm;
            }
        }
    }
    m.into_iter().flatten().collect()
}
