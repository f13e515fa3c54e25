use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type of a vector lane in memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElemType {
    F32,
    I8,
    U8,
}

impl ElemType {
    pub fn bytes(self) -> u64 {
        match self {
            ElemType::F32 => 4,
            ElemType::I8 | ElemType::U8 => 1,
        }
    }
}

/// Instructions that may appear in a vector kernel body. Operands named
/// `base`, `stride` and `scale` are address-register indices; strides are in
/// bytes and scalar `f32` arguments travel as their bit pattern.
#[derive(Clone, Debug, PartialEq)]
pub enum VInst {
    /// `vd[t] = mem[base + t * stride]` for `t < vl`; no stride register
    /// means unit stride.
    Load {
        vd: usize,
        base: usize,
        stride: Option<usize>,
        ety: ElemType,
        pred: Option<usize>,
    },
    /// `mem[base + t * stride] = vs[t]` for `t < vl`.
    Store {
        vs: usize,
        base: usize,
        stride: Option<usize>,
        ety: ElemType,
        pred: Option<usize>,
    },
    /// `f32 -> i8`: `clamp(round(x / scale), -128, 127)`.
    Quantize { vd: usize, vs: usize, scale: usize },
    /// `i8 -> f32`: `q * scale`.
    Dequantize { vd: usize, vs: usize, scale: usize },
    /// `u8 -> f32`: `x / divisor`.
    U8ToF32 { vd: usize, vs: usize, divisor: usize },
    /// Sets the first `vl` lanes of a predicate register.
    SetPred { pd: usize, value: bool },
}

impl VInst {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            VInst::Load { .. } => "vld",
            VInst::Store { .. } => "vst",
            VInst::Quantize { .. } => "vfcvt.q",
            VInst::Dequantize { .. } => "vfcvt.dq",
            VInst::U8ToF32 { .. } => "vfcvt.u8",
            VInst::SetPred { .. } => "vpset",
        }
    }

    fn vregs(&self) -> Vec<usize> {
        match *self {
            VInst::Load { vd, .. } => vec![vd],
            VInst::Store { vs, .. } => vec![vs],
            VInst::Quantize { vd, vs, .. }
            | VInst::Dequantize { vd, vs, .. }
            | VInst::U8ToF32 { vd, vs, .. } => vec![vd, vs],
            VInst::SetPred { .. } => vec![],
        }
    }

    fn pregs(&self) -> Option<usize> {
        match *self {
            VInst::Load { pred, .. } | VInst::Store { pred, .. } => pred,
            VInst::SetPred { pd, .. } => Some(pd),
            _ => None,
        }
    }

    fn aregs(&self) -> Vec<usize> {
        match *self {
            VInst::Load { base, stride, .. } | VInst::Store { base, stride, .. } => {
                std::iter::once(base).chain(stride).collect()
            }
            VInst::Quantize { scale, .. } | VInst::Dequantize { scale, .. } => vec![scale],
            VInst::U8ToF32 { divisor, .. } => vec![divisor],
            VInst::SetPred { .. } => vec![],
        }
    }
}

/// A named vector procedure, dispatched with `vfetch`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorKernelProgram {
    pub name: String,
    pub body: Vec<VInst>,
    /// Vector registers the body touches (`max index + 1`).
    pub vregs: usize,
    pub pregs: usize,
    pub aregs: usize,
}

impl VectorKernelProgram {
    pub fn new(name: impl Into<String>, body: Vec<VInst>) -> Result<Self> {
        let name = name.into();
        if body.is_empty() {
            return Err(Error::config(format!("kernel `{name}` has an empty body")));
        }
        let vregs = body.iter().flat_map(VInst::vregs).max().map_or(0, |m| m + 1);
        let pregs = body.iter().filter_map(VInst::pregs).max().map_or(0, |m| m + 1);
        let aregs = body.iter().flat_map(VInst::aregs).max().map_or(0, |m| m + 1);
        Ok(Self {
            name,
            body,
            vregs,
            pregs,
            aregs,
        })
    }
}
