//! Fully connected tanh networks with a flat parameter vector.
//!
//! Layer `l` maps `dims[l]` inputs to `dims[l + 1]` outputs. The flat vector
//! stores, per layer, the weight matrix in row-major order followed by the
//! bias. Every layer except the last applies tanh; the last is affine so the
//! output range is unbounded.

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointMeta, FORMAT_VERSION};

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, JetVar, OpKind, Tape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("layer dims must have at least two entries, all positive (got {0:?})")]
    InvalidDims(Vec<usize>),
    #[error("flat parameter vector has length {got}, dims require {expected}")]
    FlatLength { expected: usize, got: usize },
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
    #[error("input width {got} does not match network input width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("batched evaluation needs a single output, network has {0}")]
    OutputWidth(usize),
    #[error("direction {axis} out of range for input width {width}")]
    AxisOutOfRange { axis: usize, width: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Number of parameters of a dense network with the given layer widths.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn validate_dims(dims: &[usize]) -> Result<(), NetworkError> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(NetworkError::InvalidDims(dims.to_vec()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    layer_dims: Vec<usize>,
    flat: Vec<f64>,
}

impl NetworkParams {
    pub fn new(layer_dims: Vec<usize>, flat: Vec<f64>) -> Result<Self, NetworkError> {
        validate_dims(&layer_dims)?;
        let expected = param_count(&layer_dims);
        if flat.len() != expected {
            return Err(NetworkError::FlatLength {
                expected,
                got: flat.len(),
            });
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(NetworkError::NonFinite(i));
        }
        Ok(Self { layer_dims, flat })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self, NetworkError> {
        validate_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            flat: vec![0.0; param_count(layer_dims)],
        })
    }

    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self, NetworkError> {
        let mut net = Self::zeros(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut net.flat[off..off + fan_in * fan_out] {
                *v = rng.random_range(-bound..=bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    /// Replaces the parameter vector, keeping the architecture.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NetworkError> {
        if flat.len() != self.flat.len() {
            return Err(NetworkError::FlatLength {
                expected: self.flat.len(),
                got: flat.len(),
            });
        }
        self.flat.copy_from_slice(flat);
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn view(&self) -> NetworkView<'_> {
        NetworkView {
            dims: &self.layer_dims,
            flat: &self.flat,
        }
    }

    /// Plain forward pass for a single point.
    pub fn forward_value(&self, input: &[f64]) -> Result<f64, NetworkError> {
        self.view().forward_value(input)
    }
}

/// Borrowed network: architecture plus any parameter vector of matching
/// length. Lets optimizers evaluate trial points without copying.
#[derive(Debug, Clone, Copy)]
pub struct NetworkView<'a> {
    dims: &'a [usize],
    flat: &'a [f64],
}

impl<'a> NetworkView<'a> {
    pub fn new(dims: &'a [usize], flat: &'a [f64]) -> Result<Self, NetworkError> {
        validate_dims(dims)?;
        if flat.len() != param_count(dims) {
            return Err(NetworkError::FlatLength {
                expected: param_count(dims),
                got: flat.len(),
            });
        }
        Ok(Self { dims, flat })
    }

    pub fn dims(&self) -> &'a [usize] {
        self.dims
    }

    pub fn flat(&self) -> &'a [f64] {
        self.flat
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.dims[..=l])
    }

    /// Weight matrix (`dims[l+1] x dims[l]`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
        let off = self.layer_offset(l);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.flat[off..off + fan_in * fan_out]).expect("layer shape");
        let b = &self.flat[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        (w, b)
    }

    pub fn forward_value(&self, input: &[f64]) -> Result<f64, NetworkError> {
        if input.len() != self.dims[0] {
            return Err(NetworkError::WidthMismatch {
                expected: self.dims[0],
                got: input.len(),
            });
        }
        let mut a = input.to_vec();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z: Vec<f64> = w.dot(&ndarray::ArrayView1::from(&a[..])).to_vec();
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
            if l + 1 < self.n_layers() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = z;
        }
        Ok(a[0])
    }
}

/// Evaluates the network on jets recorded on `tape`, one jet per input
/// coordinate. The tape must have been created with
/// [`Tape::for_params`] on this network's parameter vector.
pub fn forward_jet(net: &NetworkParams, inputs: &[JetVar], tape: &mut Tape) -> Result<JetVar, NetworkError> {
    if inputs.len() != net.input_width() {
        return Err(NetworkError::WidthMismatch {
            expected: net.input_width(),
            got: inputs.len(),
        });
    }
    if tape.n_params() != net.flat().len() {
        return Err(AutodiffError::ParamCountMismatch {
            tape: tape.n_params(),
            network: net.flat().len(),
        }
        .into());
    }
    let dims = net.layer_dims();
    let mut a: Vec<JetVar> = inputs.to_vec();
    let mut off = 0;
    for l in 0..net.n_layers() {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let mut next = Vec::with_capacity(fan_out);
        for r in 0..fan_out {
            let mut acc = tape.jet_param(off + fan_in * fan_out + r);
            for (c, &x) in a.iter().enumerate() {
                let w = tape.jet_param(off + r * fan_in + c);
                let wx = tape.jet_elementary(OpKind::Mul, &[w, x])?;
                acc = tape.jet_elementary(OpKind::Add, &[acc, wx])?;
            }
            if l + 1 < net.n_layers() {
                acc = tape.jet_elementary(OpKind::Tanh, &[acc])?;
            }
            next.push(acc);
        }
        off += fan_in * fan_out + fan_out;
        a = next;
    }
    Ok(a[0])
}
