use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorData};

/// Symmetric per-tensor INT8 quantization scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    scale: f32,
}

impl QuantParams {
    pub fn new(scale: f32) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::domain(format!("scale must be finite and > 0, got {scale}")));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }
}

/// `clamp(round_half_away(x / scale), -128, 127)`.
#[inline]
pub fn quantize_value(x: f32, scale: f32) -> i8 {
    (x / scale).round().clamp(-128.0, 127.0) as i8
}

#[inline]
pub fn dequantize_value(q: i8, scale: f32) -> f32 {
    q as f32 * scale
}

pub fn quantize(t: &Tensor, q: QuantParams) -> Result<Tensor> {
    let src = t
        .as_f32()
        .ok_or_else(|| Error::domain("quantize expects an fp32 tensor"))?;
    if let Some(pos) = src.iter().position(|x| !x.is_finite()) {
        return Err(Error::domain(format!("non-finite element at {pos}")));
    }
    let out = src.iter().map(|&x| quantize_value(x, q.scale)).collect();
    Tensor::new(t.shape(), t.layout(), TensorData::I8(out))
}

pub fn dequantize(t: &Tensor, q: QuantParams) -> Result<Tensor> {
    let src = t
        .as_i8()
        .ok_or_else(|| Error::domain("dequantize expects an int8 tensor"))?;
    let out = src.iter().map(|&v| dequantize_value(v, q.scale)).collect();
    Tensor::new(t.shape(), t.layout(), TensorData::F32(out))
}

/// `max|x| / 127`, or 1 for an all-zero tensor.
pub fn compute_scale(t: &Tensor) -> Result<QuantParams> {
    let src = t
        .as_f32()
        .ok_or_else(|| Error::domain("compute_scale expects an fp32 tensor"))?;
    if src.is_empty() {
        return Err(Error::domain("cannot calibrate an empty tensor"));
    }
    let mut max = 0.0f32;
    for &x in src {
        if !x.is_finite() {
            return Err(Error::domain("non-finite element in calibration tensor"));
        }
        max = max.max(x.abs());
    }
    if max == 0.0 {
        return QuantParams::new(1.0);
    }
    QuantParams::new(max / 127.0)
}
