//! 2-D convolution forward and backward kernels.
//!
//! Layout conventions: input `[C_in, H, W]`, kernel `[C_out, C_in, kH, kW]`,
//! output `[C_out, H', W']`, all row-major. Zero padding, square stride.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output extent along one axis, or an error if the geometry does not tile.
fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be >= 1".into()));
    }
    let padded = input + 2 * pad;
    if kernel == 0 || kernel > padded {
        return Err(Error::Config(format!(
            "conv2d kernel extent {} exceeds padded input extent {}",
            kernel, padded
        )));
    }
    let span = padded - kernel;
    if span % stride != 0 {
        return Err(Error::Config(format!(
            "conv2d output extent is not an integer: ({} + 2*{} - {}) / {} + 1",
            input, pad, kernel, stride
        )));
    }
    Ok(span / stride + 1)
}

pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub h_out: usize,
    pub w_out: usize,
}

pub(crate) fn conv_geometry(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f32],
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let ishape = input.shape();
    let kshape = kernel.shape();
    if ishape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input must be [C,H,W], got {:?}",
            ishape
        )));
    }
    if kshape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel must be [C_out,C_in,kH,kW], got {:?}",
            kshape
        )));
    }
    let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
    let (c_out, kc_in, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if kc_in != c_in {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel expects {} input channels, input has {}",
            kc_in, c_in
        )));
    }
    if bias.len() != c_out {
        return Err(Error::ShapeMismatch(format!(
            "conv2d bias length {} != {} output channels",
            bias.len(),
            c_out
        )));
    }
    let h_out = out_extent(h, kh, stride, pad)?;
    let w_out = out_extent(w, kw, stride, pad)?;
    Ok(ConvGeom {
        c_in,
        c_out,
        h,
        w,
        kh,
        kw,
        h_out,
        w_out,
    })
}

/// Valid output index range [lo, hi) such that `o*stride + k - pad` lands
/// inside `0..extent`.
#[inline]
fn valid_range(out_extent: usize, extent: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o*stride + k - pad >= 0  =>  o >= ceil((pad - k) / stride)
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    // o*stride + k - pad <= extent - 1  =>  o <= (extent - 1 + pad - k) / stride
    let hi = if extent + pad > k {
        (((extent - 1 + pad - k) / stride) + 1).min(out_extent)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Direct convolution: each output element is the dot product of the kernel
/// with the corresponding zero-padded input window, plus the channel bias.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f32],
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = conv_geometry(input, kernel, bias, stride, pad)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0f32; g.c_out * g.h_out * g.w_out];

    let in_plane = g.h * g.w;
    let out_plane = g.h_out * g.w_out;
    let (ox_lo_by_kx, ox_hi_by_kx): (Vec<usize>, Vec<usize>) = (0..g.kw)
        .map(|kx| valid_range(g.w_out, g.w, kx, stride, pad))
        .unzip();

    for oc in 0..g.c_out {
        let out_base = oc * out_plane;
        out[out_base..out_base + out_plane].fill(bias[oc]);
        for ic in 0..g.c_in {
            let in_base = ic * in_plane;
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = valid_range(g.h_out, g.h, ky, stride, pad);
                for kx in 0..g.kw {
                    let wv = k[((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = (ox_lo_by_kx[kx], ox_hi_by_kx[kx]);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let in_row = in_base + iy * g.w;
                        let out_row = out_base + oy * g.w_out;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            out[out_row + ox] += wv * x[in_row + ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.c_out, g.h_out, g.w_out], out)
}

/// Gradients of the convolution: (kernel grad, bias grad, input grad).
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f32],
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = conv_geometry(input, kernel, bias, stride, pad)?;
    if grad_out.shape() != [g.c_out, g.h_out, g.w_out] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d upstream gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.c_out, g.h_out, g.w_out]
        )));
    }
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let mut kgrad = vec![0.0f32; k.len()];
    let mut bgrad = vec![0.0f32; g.c_out];
    let mut igrad = vec![0.0f32; x.len()];

    let in_plane = g.h * g.w;
    let out_plane = g.h_out * g.w_out;
    let (ox_lo_by_kx, ox_hi_by_kx): (Vec<usize>, Vec<usize>) = (0..g.kw)
        .map(|kx| valid_range(g.w_out, g.w, kx, stride, pad))
        .unzip();

    for oc in 0..g.c_out {
        let out_base = oc * out_plane;
        bgrad[oc] = go[out_base..out_base + out_plane].iter().sum();
        for ic in 0..g.c_in {
            let in_base = ic * in_plane;
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = valid_range(g.h_out, g.h, ky, stride, pad);
                for kx in 0..g.kw {
                    let kidx = ((oc * g.c_in + ic) * g.kh + ky) * g.kw + kx;
                    let wv = k[kidx];
                    let (ox_lo, ox_hi) = (ox_lo_by_kx[kx], ox_hi_by_kx[kx]);
                    let mut acc = 0.0f32;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let in_row = in_base + iy * g.w;
                        let out_row = out_base + oy * g.w_out;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            let gv = go[out_row + ox];
                            acc += gv * x[in_row + ix];
                            igrad[in_row + ix] += wv * gv;
                        }
                    }
                    kgrad[kidx] = acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(kernel.shape().to_vec(), kgrad)?,
        Tensor::new(vec![g.c_out], bgrad)?,
        Tensor::new(input.shape().to_vec(), igrad)?,
    ))
}
