use crate::error::{Error, Result};
use crate::tensor::{Layout, Shape, Tensor};

fn nchw_f32<'a>(t: &'a Tensor, op: &str) -> Result<&'a [f32]> {
    if t.layout() != Layout::Nchw {
        return Err(Error::shape(format!("{op} expects an NCHW tensor")));
    }
    t.as_f32()
        .ok_or_else(|| Error::domain(format!("{op} expects an fp32 tensor")))
}

/// Nearest-neighbor upsampling: `out[c, j, k] = in[c, j / f, k / f]`.
pub fn upsample_nearest(t: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::domain("upsample factor must be >= 1"));
    }
    let src = nchw_f32(t, "upsample")?;
    let s = t.shape();
    let out_shape = Shape::new(s.n, s.c, s.h * factor, s.w * factor)?;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let mut out = Vec::with_capacity(out_shape.required_size(Layout::Nchw));
    for plane in src.chunks_exact(s.h * s.w) {
        for j in 0..oh {
            let row = &plane[(j / factor) * s.w..][..s.w];
            out.extend((0..ow).map(|k| row[k / factor]));
        }
    }
    Tensor::from_f32(out_shape, Layout::Nchw, out)
}

pub fn relu(t: &Tensor) -> Result<Tensor> {
    let src = t
        .as_f32()
        .ok_or_else(|| Error::domain("relu expects an fp32 tensor"))?;
    let out = src.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    Tensor::from_f32(t.shape(), t.layout(), out)
}

/// 2x2 max pooling with stride 2.
pub fn maxpool2x2(t: &Tensor) -> Result<Tensor> {
    let src = nchw_f32(t, "maxpool")?;
    let s = t.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(format!(
            "maxpool2x2 needs even spatial dims, got {}x{}",
            s.h, s.w
        )));
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2)?;
    let mut out = Vec::with_capacity(out_shape.required_size(Layout::Nchw));
    for plane in src.chunks_exact(s.h * s.w) {
        let p = |y: usize, x: usize| plane[y * s.w + x];
        for y in (0..s.h).step_by(2) {
            for x in (0..s.w).step_by(2) {
                out.push(p(y, x).max(p(y, x + 1)).max(p(y + 1, x)).max(p(y + 1, x + 1)));
            }
        }
    }
    Tensor::from_f32(out_shape, Layout::Nchw, out)
}

/// Discrete 2-D convolution `(I * K)(x, y) = sum_i sum_j I(x - i, y - j) K(i, j)`
/// with zero padding.
///
/// `input` is `(n, c_in, h, w)` and `kernel` is `(c_out, c_in, kh, kw)`; the
/// kernel is applied unflipped in the sum above, i.e. flipped relative to
/// cross-correlation. Output `(x, y)` anchors the kernel's `(0, 0)` tap at
/// padded input position `(x * stride + kh - 1, y * stride + kw - 1)`.
pub fn conv2d_ref(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let src = nchw_f32(input, "conv2d")?;
    let k = nchw_f32(kernel, "conv2d kernel")?;
    if stride == 0 {
        return Err(Error::domain("stride must be >= 1"));
    }
    let is = input.shape();
    let ks = kernel.shape();
    if ks.c != is.c {
        return Err(Error::shape(format!(
            "kernel expects {} input channels, input has {}",
            ks.c, is.c
        )));
    }
    let (ph, pw) = (is.h + 2 * padding, is.w + 2 * padding);
    if ks.h > ph || ks.w > pw {
        return Err(Error::shape(format!(
            "{}x{} kernel does not fit padded {}x{} input",
            ks.h, ks.w, ph, pw
        )));
    }
    let oh = (ph - ks.h) / stride + 1;
    let ow = (pw - ks.w) / stride + 1;
    let out_shape = Shape::new(is.n, ks.n, oh, ow)?;

    // padded-coordinate read with zero fill
    let read = |n: usize, c: usize, r: isize, col: isize| -> f32 {
        let r = r - padding as isize;
        let col = col - padding as isize;
        if r < 0 || col < 0 || r >= is.h as isize || col >= is.w as isize {
            return 0.0;
        }
        src[((n * is.c + c) * is.h + r as usize) * is.w + col as usize]
    };

    let mut out = vec![0.0f32; out_shape.required_size(Layout::Nchw)];
    for n in 0..is.n {
        for co in 0..ks.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let x = (oy * stride + ks.h - 1) as isize;
                    let y = (ox * stride + ks.w - 1) as isize;
                    let mut acc = 0.0f32;
                    for ci in 0..is.c {
                        for i in 0..ks.h {
                            for j in 0..ks.w {
                                let kv = k[((co * ks.c + ci) * ks.h + i) * ks.w + j];
                                acc += read(n, ci, x - i as isize, y - j as isize) * kv;
                            }
                        }
                    }
                    out[((n * ks.n + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_f32(out_shape, Layout::Nchw, out)
}
