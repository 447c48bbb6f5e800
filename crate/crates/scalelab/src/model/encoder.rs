//! Convolutional encoder: valid n-dimensional convolutions (stride 1,
//! no padding, channel-last) followed by a dense projection to the
//! latent vector. Rectified-linear activation throughout.

use crate::error::{Error, Result};
use crate::model::{ConvLayer, ModelWeights};
use crate::numerics::activation::{relu, relu_deriv_from_pre};
use crate::numerics::Tensor;

/// Channel-last array layout: spatial dims then a channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvShape {
    pub spatial: Vec<usize>,
    pub channels: usize,
}

impl ConvShape {
    pub fn len(&self) -> usize {
        self.spatial.iter().product::<usize>() * self.channels
    }

    /// Element strides per spatial axis (channel-last, row-major).
    fn strides(&self) -> Vec<usize> {
        let n = self.spatial.len();
        let mut strides = vec![0usize; n];
        let mut acc = self.channels;
        for a in (0..n).rev() {
            strides[a] = acc;
            acc *= self.spatial[a];
        }
        strides
    }
}

/// Row-major odometer over a hyper-rectangle; yields flat offsets into
/// an array with the given per-axis strides.
fn offsets(dims: &[usize], strides: &[usize]) -> Vec<usize> {
    let total: usize = dims.iter().product();
    let mut out = Vec::with_capacity(total);
    let n = dims.len();
    let mut coords = vec![0usize; n];
    for _ in 0..total {
        out.push(coords.iter().zip(strides).map(|(c, s)| c * s).sum());
        for a in (0..n).rev() {
            coords[a] += 1;
            if coords[a] < dims[a] {
                break;
            }
            coords[a] = 0;
        }
    }
    out
}

/// Valid convolution, pre-activation output (channel-last).
///
/// Weights are laid out [kernel^n ..., in_ch, out_ch]; output position p
/// gets b[co] + sum over kernel offset q and input channel ci of
/// x[p+q, ci] * w[q, ci, co].
pub fn conv_forward(
    x: &[f64],
    xs: &ConvShape,
    layer: &ConvLayer,
) -> Result<(Vec<f64>, ConvShape)> {
    let n = xs.spatial.len();
    if xs.channels != layer.in_ch {
        return Err(Error::ShapeMismatch {
            expected: vec![layer.in_ch],
            actual: vec![xs.channels],
        });
    }
    if xs.spatial.iter().any(|&s| s < layer.kernel) {
        return Err(Error::InvalidParameter(format!(
            "spatial extent {:?} smaller than kernel {}",
            xs.spatial, layer.kernel
        )));
    }
    let out_shape = ConvShape {
        spatial: xs.spatial.iter().map(|&s| s - layer.kernel + 1).collect(),
        channels: layer.out_ch,
    };
    let in_strides = xs.strides();
    let p_offsets = offsets(&out_shape.spatial, &in_strides);
    let q_offsets = offsets(&vec![layer.kernel; n], &in_strides);
    let w = layer.w.data();
    let b = layer.b.data();
    let (in_ch, out_ch) = (layer.in_ch, layer.out_ch);

    let mut z = vec![0.0; out_shape.len()];
    for (p_idx, &p_off) in p_offsets.iter().enumerate() {
        let acc = &mut z[p_idx * out_ch..(p_idx + 1) * out_ch];
        acc.copy_from_slice(b);
        for (q_idx, &q_off) in q_offsets.iter().enumerate() {
            let x_base = p_off + q_off;
            let w_base = q_idx * in_ch * out_ch;
            for ci in 0..in_ch {
                let xv = x[x_base + ci];
                let w_row = &w[w_base + ci * out_ch..w_base + (ci + 1) * out_ch];
                for (a, &wv) in acc.iter_mut().zip(w_row) {
                    *a += xv * wv;
                }
            }
        }
    }
    Ok((z, out_shape))
}

/// Gradients of a valid convolution given dL/dz (pre-activation grad).
/// Returns (dw, db, dx). Accumulation order is fixed and serial.
pub fn conv_backward(
    x: &[f64],
    xs: &ConvShape,
    layer: &ConvLayer,
    dz: &[f64],
    zs: &ConvShape,
) -> (Tensor, Tensor, Vec<f64>) {
    let n = xs.spatial.len();
    let in_strides = xs.strides();
    let p_offsets = offsets(&zs.spatial, &in_strides);
    let q_offsets = offsets(&vec![layer.kernel; n], &in_strides);
    let w = layer.w.data();
    let (in_ch, out_ch) = (layer.in_ch, layer.out_ch);

    let mut dw = vec![0.0; layer.w.len()];
    let mut db = vec![0.0; out_ch];
    let mut dx = vec![0.0; x.len()];
    for (p_idx, &p_off) in p_offsets.iter().enumerate() {
        let dzp = &dz[p_idx * out_ch..(p_idx + 1) * out_ch];
        for (d, g) in db.iter_mut().zip(dzp) {
            *d += g;
        }
        for (q_idx, &q_off) in q_offsets.iter().enumerate() {
            let x_base = p_off + q_off;
            let w_base = q_idx * in_ch * out_ch;
            for ci in 0..in_ch {
                let xv = x[x_base + ci];
                let mut dxv = 0.0;
                let row = w_base + ci * out_ch;
                for co in 0..out_ch {
                    let g = dzp[co];
                    dw[row + co] += xv * g;
                    dxv += w[row + co] * g;
                }
                dx[x_base + ci] += dxv;
            }
        }
    }
    let dw = Tensor::from_vec(layer.w.shape(), dw).expect("conv weight gradient shape");
    let db = Tensor::from_vec(layer.b.shape(), db).expect("conv bias gradient shape");
    (dw, db, dx)
}

/// Everything the backward pass needs from an encoder forward pass.
pub struct EncodeCache {
    /// Input to each conv layer, channel-last.
    pub conv_inputs: Vec<Vec<f64>>,
    pub conv_in_shapes: Vec<ConvShape>,
    /// Pre-activation outputs per conv layer.
    pub conv_pre: Vec<Vec<f64>>,
    pub conv_out_shapes: Vec<ConvShape>,
    /// Flattened post-activation output of the conv stack.
    pub flat: Vec<f64>,
    /// Dense pre-activation.
    pub proj_pre: Vec<f64>,
    /// Latent vector y.
    pub latent: Vec<f64>,
}

/// Run the encoder, keeping intermediates.
pub fn encode_cached(x: &Tensor, w: &ModelWeights) -> Result<EncodeCache> {
    let cfg = &w.config;
    let expected = cfg.grid().tensor_shape();
    if x.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            expected,
            actual: x.shape().to_vec(),
        });
    }

    let mut cache = EncodeCache {
        conv_inputs: Vec::with_capacity(w.conv.len()),
        conv_in_shapes: Vec::with_capacity(w.conv.len()),
        conv_pre: Vec::with_capacity(w.conv.len()),
        conv_out_shapes: Vec::with_capacity(w.conv.len()),
        flat: Vec::new(),
        proj_pre: Vec::new(),
        latent: Vec::new(),
    };

    let mut cur = x.data().to_vec();
    let mut cur_shape = ConvShape {
        spatial: vec![cfg.side; cfg.n],
        channels: 1,
    };
    for layer in &w.conv {
        let (z, out_shape) = conv_forward(&cur, &cur_shape, layer)?;
        let a: Vec<f64> = z.iter().map(|&v| relu(v)).collect();
        cache.conv_inputs.push(cur);
        cache.conv_in_shapes.push(cur_shape);
        cache.conv_pre.push(z);
        cache.conv_out_shapes.push(out_shape.clone());
        cur = a;
        cur_shape = out_shape;
    }
    cache.flat = cur;

    let (latent, flat_len) = (cfg.latent, cache.flat.len());
    if w.proj.w.shape() != [latent, flat_len] {
        return Err(Error::ShapeMismatch {
            expected: vec![latent, flat_len],
            actual: w.proj.w.shape().to_vec(),
        });
    }
    let wp = w.proj.w.data();
    let bp = w.proj.b.data();
    cache.proj_pre = (0..latent)
        .map(|r| {
            let row = &wp[r * flat_len..(r + 1) * flat_len];
            let mut acc = bp[r];
            for (wv, xv) in row.iter().zip(cache.flat.iter()) {
                acc += wv * xv;
            }
            acc
        })
        .collect();
    cache.latent = cache.proj_pre.iter().map(|&z| relu(z)).collect();
    Ok(cache)
}

/// Backpropagate dL/dy through the dense projection and the conv stack.
/// Fills `grads` and returns nothing else; the input gradient is dropped.
pub fn encode_backward(cache: &EncodeCache, w: &ModelWeights, dy: &[f64], grads: &mut ModelWeights) {
    let flat_len = cache.flat.len();
    let latent = cache.latent.len();
    let wp = w.proj.w.data();

    // dense projection
    let dz0: Vec<f64> = dy
        .iter()
        .zip(cache.proj_pre.iter())
        .map(|(g, &z)| g * relu_deriv_from_pre(z))
        .collect();
    {
        let dwp = grads.proj.w.data_mut();
        for (r, &g) in dz0.iter().enumerate() {
            let row = &mut dwp[r * flat_len..(r + 1) * flat_len];
            for (slot, &xv) in row.iter_mut().zip(cache.flat.iter()) {
                *slot += g * xv;
            }
        }
        grads.proj.b.data_mut().copy_from_slice(&dz0);
    }
    let mut da: Vec<f64> = vec![0.0; flat_len];
    for (r, &g) in dz0.iter().enumerate() {
        let row = &wp[r * flat_len..(r + 1) * flat_len];
        for (slot, &wv) in da.iter_mut().zip(row) {
            *slot += wv * g;
        }
    }
    debug_assert_eq!(dz0.len(), latent);

    // conv stack, last layer first
    for l in (0..w.conv.len()).rev() {
        let dz: Vec<f64> = da
            .iter()
            .zip(cache.conv_pre[l].iter())
            .map(|(g, &z)| g * relu_deriv_from_pre(z))
            .collect();
        let (dw, db, dx) = conv_backward(
            &cache.conv_inputs[l],
            &cache.conv_in_shapes[l],
            &w.conv[l],
            &dz,
            &cache.conv_out_shapes[l],
        );
        grads.conv[l].w.add_assign(&dw).expect("conv grad shape");
        grads.conv[l].b.add_assign(&db).expect("conv bias grad shape");
        da = dx;
    }
}
