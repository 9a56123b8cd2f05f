//! Layer-level jet tape for dense tanh networks over a batch of points.
//!
//! Each activation is a `width x columns` matrix whose column blocks hold the
//! value channel followed by a (first, second) derivative pair per requested
//! input axis. Affine layers are one GEMM over all blocks (bias only on the
//! value block); tanh layers apply the truncated Taylor rule per column.
//! [`JetBatch::backward`] replays the layers in reverse with hand-derived
//! adjoints and accumulates into a flat gradient laid out like the network's
//! parameter vector.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayViewMut2};

use crate::network::{NetworkError, NetworkView};

/// One output channel of a [`JetBatch`]. Axis indices refer to positions in
/// the `axes` list passed to [`JetBatch::forward`], not to input coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Value,
    D1(usize),
    D2(usize),
}

impl Channel {
    fn block(self) -> usize {
        match self {
            Channel::Value => 0,
            Channel::D1(k) => 1 + 2 * k,
            Channel::D2(k) => 2 + 2 * k,
        }
    }
}

#[derive(Debug)]
pub struct JetBatch<'a> {
    net: NetworkView<'a>,
    n_points: usize,
    n_axes: usize,
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
    output: Vec<f64>,
}

impl<'a> JetBatch<'a> {
    /// Runs the network on `coords` (row-major, one point per row) carrying
    /// jets along each of `axes`.
    pub fn forward(net: NetworkView<'a>, coords: &[f64], axes: &[usize]) -> Result<Self, NetworkError> {
        let dims = net.dims();
        let d0 = dims[0];
        if coords.len() % d0 != 0 {
            return Err(NetworkError::WidthMismatch {
                expected: d0,
                got: coords.len(),
            });
        }
        if *dims.last().unwrap() != 1 {
            return Err(NetworkError::OutputWidth(*dims.last().unwrap()));
        }
        if let Some(&axis) = axes.iter().find(|&&a| a >= d0) {
            return Err(NetworkError::AxisOutOfRange { axis, width: d0 });
        }
        let n = coords.len() / d0;
        let cols = n * (1 + 2 * axes.len());

        let mut a = Array2::<f64>::zeros((d0, cols));
        for (p, point) in coords.chunks_exact(d0).enumerate() {
            for (i, &c) in point.iter().enumerate() {
                a[[i, p]] = c;
            }
        }
        for (k, &axis) in axes.iter().enumerate() {
            let start = Channel::D1(k).block() * n;
            a.slice_mut(s![axis, start..start + n]).fill(1.0);
        }

        let n_layers = net.n_layers();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut output = Vec::new();
        for l in 0..n_layers {
            let (w, b) = net.layer(l);
            let rows = w.nrows();
            let mut z = Array2::<f64>::zeros((rows, cols));
            general_mat_mul(1.0, &w, &a, 0.0, &mut z);
            for (r, &bias) in b.iter().enumerate() {
                z.slice_mut(s![r, 0..n]).mapv_inplace(|v| v + bias);
            }
            inputs.push(a);
            if l + 1 == n_layers {
                output = z.into_raw_vec_and_offset().0;
                a = Array2::zeros((0, 0));
            } else {
                a = tanh_jet(&z, n, axes.len());
                pre.push(z);
            }
        }
        drop(a);
        Ok(Self {
            net,
            n_points: n,
            n_axes: axes.len(),
            inputs,
            pre,
            output,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_axes(&self) -> usize {
        self.n_axes
    }

    pub fn columns(&self) -> usize {
        self.output.len()
    }

    pub fn channel(&self, ch: Channel) -> &[f64] {
        let start = ch.block() * self.n_points;
        &self.output[start..start + self.n_points]
    }

    /// Column range of `ch` inside an adjoint vector for [`Self::backward`].
    pub fn channel_range(&self, ch: Channel) -> std::ops::Range<usize> {
        let start = ch.block() * self.n_points;
        start..start + self.n_points
    }

    /// Accumulates `sum_j adjoint[j] * d(output[j])/d(params)` into `grad`.
    pub fn backward(&self, adjoint: &[f64], grad: &mut [f64]) {
        assert_eq!(adjoint.len(), self.columns(), "adjoint length");
        assert_eq!(grad.len(), self.net.flat().len(), "gradient length");
        let n = self.n_points;
        let cols = self.columns();
        let mut g = Array2::from_shape_vec((1, cols), adjoint.to_vec()).expect("shape");
        for l in (0..self.net.n_layers()).rev() {
            let (w, _) = self.net.layer(l);
            let (rows, fan_in) = w.dim();
            let off = self.net.layer_offset(l);
            let (gw, gb) = grad[off..off + rows * fan_in + rows].split_at_mut(rows * fan_in);
            let mut gw = ArrayViewMut2::from_shape((rows, fan_in), gw).expect("shape");
            general_mat_mul(1.0, &g, &self.inputs[l].t(), 1.0, &mut gw);
            for (r, gb_r) in gb.iter_mut().enumerate() {
                *gb_r += g.slice(s![r, 0..n]).iter().sum::<f64>();
            }
            if l == 0 {
                break;
            }
            let mut abar = Array2::<f64>::zeros((fan_in, cols));
            general_mat_mul(1.0, &w.t(), &g, 0.0, &mut abar);
            g = tanh_jet_adjoint(&abar, &self.pre[l - 1], &self.inputs[l], n, self.n_axes);
        }
    }
}

fn tanh_jet(z: &Array2<f64>, n: usize, n_axes: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(z.dim());
    for (zr, mut or) in z.rows().into_iter().zip(out.rows_mut()) {
        let zr = zr.as_slice().expect("contiguous");
        let or = or.as_slice_mut().expect("contiguous");
        for p in 0..n {
            or[p] = zr[p].tanh();
        }
        for k in 0..n_axes {
            let o1 = Channel::D1(k).block() * n;
            let o2 = Channel::D2(k).block() * n;
            for p in 0..n {
                let y = or[p];
                let s = 1.0 - y * y;
                let z1 = zr[o1 + p];
                or[o1 + p] = s * z1;
                or[o2 + p] = s * zr[o2 + p] - 2.0 * y * s * z1 * z1;
            }
        }
    }
    out
}

/// Pulls adjoints of a tanh-jet layer's outputs back to its pre-activations.
///
/// With `y = tanh z`, `s = 1 - y^2`, `q = ds/dz = -2ys` and
/// `dq/dz = -2s^2 - 2yq`, the outputs are `y`, `s z1` and `s z2 + q z1^2`.
fn tanh_jet_adjoint(abar: &Array2<f64>, z: &Array2<f64>, act: &Array2<f64>, n: usize, n_axes: usize) -> Array2<f64> {
    let mut gz = Array2::<f64>::zeros(abar.dim());
    for ((ab, zr), (yr, mut gr)) in abar
        .rows()
        .into_iter()
        .zip(z.rows())
        .zip(act.rows().into_iter().zip(gz.rows_mut()))
    {
        let ab = ab.as_slice().expect("contiguous");
        let zr = zr.as_slice().expect("contiguous");
        let yr = yr.as_slice().expect("contiguous");
        let gr = gr.as_slice_mut().expect("contiguous");
        for p in 0..n {
            let y = yr[p];
            let s = 1.0 - y * y;
            gr[p] = ab[p] * s;
        }
        for k in 0..n_axes {
            let o1 = Channel::D1(k).block() * n;
            let o2 = Channel::D2(k).block() * n;
            for p in 0..n {
                let y = yr[p];
                let s = 1.0 - y * y;
                let q = -2.0 * y * s;
                let dq = -2.0 * s * s - 2.0 * y * q;
                let (z1, z2) = (zr[o1 + p], zr[o2 + p]);
                let (a1, a2) = (ab[o1 + p], ab[o2 + p]);
                gr[p] += a1 * q * z1 + a2 * (q * z2 + dq * z1 * z1);
                gr[o1 + p] = a1 * s + 2.0 * a2 * q * z1;
                gr[o2 + p] = a2 * s;
            }
        }
    }
    gz
}
