//! Strip-mined vector versions of the CPU fallback and pre-processing
//! kernels.
//!
//! Every kernel follows the same host-side shape: hoist whatever is loop
//! invariant, walk the iteration space one strip at a time (`setvlen`, move
//! the strip's addresses into address registers, `vfetch` the body), then a
//! single `fence` before the result is read back. The strip list is built up
//! front, so prefetch hints for a later strip can be issued while the current
//! one runs.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::{Image, QuantParams, PIXEL_DIVISOR};
use crate::tensor::{
    fd_offset_unchecked, DType, Layout, LayoutDims, Shape, Tensor, TensorData, SURFACE_CHANNELS,
};
use crate::vm::{CostTable, ElemType, Footprint, VInst, VectorKernelProgram, Vm};

/// Kernels reachable by name from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelKind {
    Fd2Nchw,
    Nchw2Fd,
    Quantize,
    Dequantize,
    Upsample,
    Normalize,
}

impl KernelKind {
    pub const ALL: [KernelKind; 6] = [
        KernelKind::Fd2Nchw,
        KernelKind::Nchw2Fd,
        KernelKind::Quantize,
        KernelKind::Dequantize,
        KernelKind::Upsample,
        KernelKind::Normalize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Fd2Nchw => "fd2nchw",
            KernelKind::Nchw2Fd => "nchw2fd",
            KernelKind::Quantize => "quantize",
            KernelKind::Dequantize => "dequantize",
            KernelKind::Upsample => "upsample",
            KernelKind::Normalize => "normalize",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Dispatch(s.to_string()))
    }
}

/// Run-time knobs shared by all kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KernelOptions {
    /// Issue prefetch hints for the strip `prefetch_distance` ahead.
    pub prefetch: bool,
}

/// One `vfetch` worth of work.
#[derive(Clone, Debug)]
struct Strip {
    /// Scalar ops charged before this strip (per-row offset arithmetic).
    setup_ops: u64,
    /// Passed to `setvlen`.
    requested: usize,
    /// Expected grant.
    vl: usize,
    args: Vec<(usize, u64)>,
    reads: Footprint,
    writes: Footprint,
}

fn elem(dtype: DType) -> ElemType {
    match dtype {
        DType::F32 => ElemType::F32,
        DType::I8 => ElemType::I8,
    }
}

fn register(vm: &mut Vm, name: &str, body: Vec<VInst>) -> Result<()> {
    if !vm.has_kernel(name) {
        vm.register_kernel(VectorKernelProgram::new(name, body)?);
    }
    Ok(())
}

fn run_strips(vm: &mut Vm, kernel: &str, strips: &[Strip], opts: KernelOptions) -> Result<()> {
    let distance = vm.memory_model().config().prefetch_distance as usize;
    for (s, strip) in strips.iter().enumerate() {
        if strip.setup_ops > 0 {
            vm.scalar_ops(strip.setup_ops);
        }
        if opts.prefetch {
            if let Some(ahead) = strips.get(s + distance) {
                vm.prefetch(ahead.reads);
                vm.prefetch(ahead.writes);
            }
        }
        let granted = vm.setvlen(strip.requested);
        debug_assert_eq!(granted, strip.vl);
        for &(areg, value) in &strip.args {
            vm.vmca(areg, value)?;
        }
        vm.vfetch(kernel)?;
    }
    Ok(())
}

fn stage(vm: &mut Vm, data: &TensorData) -> Result<u64> {
    match data {
        TensorData::F32(v) => {
            let base = vm.alloc(v.len() * 4);
            vm.write_f32(base, v)?;
            Ok(base)
        }
        TensorData::I8(v) => {
            let base = vm.alloc(v.len());
            vm.write_i8(base, v)?;
            Ok(base)
        }
    }
}

fn fetch(vm: &mut Vm, base: u64, dtype: DType, len: usize) -> Result<TensorData> {
    Ok(match dtype {
        DType::F32 => TensorData::F32(vm.read_f32(base, len)?),
        DType::I8 => TensorData::I8(vm.read_i8(base, len)?),
    })
}

const VCVT_FD_TO_NCHW: &str = "vcvt_fd_to_nchw";
const VCVT_NCHW_TO_FD: &str = "vcvt_nchw_to_fd";

/// Feature-depth to NCHW on the vector unit.
///
/// Per channel and row the host computes the input and output offsets, then
/// strip-mines the row: `va0` is the strip's first input element, `va1` its
/// first output element, `va2` the 32-element channel stride in bytes. The
/// body is one strided load and one unit-stride store.
pub fn v_convert_fd_to_nchw(vm: &mut Vm, input: &Tensor, opts: KernelOptions) -> Result<Tensor> {
    if input.layout() != Layout::FeatureDepth {
        return Err(Error::shape("v_convert_fd_to_nchw expects a feature-depth tensor"));
    }
    let shape = input.shape();
    let ety = elem(input.dtype());
    let eb = ety.bytes();
    register(
        vm,
        VCVT_FD_TO_NCHW,
        vec![
            VInst::Load {
                vd: 0,
                base: 0,
                stride: Some(2),
                ety,
                pred: None,
            },
            VInst::Store {
                vs: 0,
                base: 1,
                stride: None,
                ety,
                pred: None,
            },
        ],
    )?;
    let in_base = stage(vm, input.data())?;
    let out_len = shape.required_size(Layout::Nchw);
    let out_base = vm.alloc(out_len * eb as usize);

    let dims = shape.dims();
    let maxvl = vm.maxvl();
    let line_stride = dims.line_stride();
    let surface_stride = dims.surface_stride();
    let channel_stride = SURFACE_CHANNELS as u64 * eb;
    let mut strips = Vec::new();
    for n in 0..shape.n {
        let in_item = n * dims.fd_len();
        let out_item = n * dims.nchw_len();
        for i in 0..dims.c {
            let surface_index = i / SURFACE_CHANNELS;
            for j in 0..dims.h {
                let out_offset = out_item + dims.w * dims.h * i + dims.w * j;
                let in_offset = in_item
                    + surface_stride * surface_index
                    + line_stride * j
                    + i % SURFACE_CHANNELS;
                let mut k = 0;
                while k < dims.w {
                    let vl = (dims.w - k).min(maxvl);
                    let src = in_base + (in_offset + SURFACE_CHANNELS * k) as u64 * eb;
                    let dst = out_base + (out_offset + k) as u64 * eb;
                    strips.push(Strip {
                        setup_ops: if k == 0 { 2 } else { 0 },
                        requested: dims.w - k,
                        vl,
                        args: vec![(0, src), (1, dst), (2, channel_stride)],
                        reads: Footprint {
                            base: src,
                            stride: channel_stride,
                            count: vl as u64,
                            width: eb,
                        },
                        writes: Footprint::contiguous(dst, vl as u64 * eb),
                    });
                    k += vl;
                }
            }
        }
    }
    vm.setvcfg(1, 1)?;
    run_strips(vm, VCVT_FD_TO_NCHW, &strips, opts)?;
    vm.fence();
    let data = fetch(vm, out_base, input.dtype(), out_len)?;
    Tensor::new(shape, Layout::Nchw, data)
}

/// NCHW to feature-depth on the vector unit: unit-stride load, 32-element
/// strided store. Padding lanes keep the zero the output buffer starts with.
pub fn v_convert_nchw_to_fd(vm: &mut Vm, input: &Tensor, opts: KernelOptions) -> Result<Tensor> {
    if input.layout() != Layout::Nchw {
        return Err(Error::shape("v_convert_nchw_to_fd expects an NCHW tensor"));
    }
    let shape = input.shape();
    let ety = elem(input.dtype());
    let eb = ety.bytes();
    register(
        vm,
        VCVT_NCHW_TO_FD,
        vec![
            VInst::Load {
                vd: 0,
                base: 0,
                stride: None,
                ety,
                pred: None,
            },
            VInst::Store {
                vs: 0,
                base: 1,
                stride: Some(2),
                ety,
                pred: None,
            },
        ],
    )?;
    let in_base = stage(vm, input.data())?;
    let out_len = shape.required_size(Layout::FeatureDepth);
    let out_base = vm.alloc(out_len * eb as usize);

    let dims = shape.dims();
    let maxvl = vm.maxvl();
    let channel_stride = SURFACE_CHANNELS as u64 * eb;
    let mut strips = Vec::new();
    for n in 0..shape.n {
        for i in 0..dims.c {
            for j in 0..dims.h {
                let in_offset = n * dims.nchw_len() + dims.w * dims.h * i + dims.w * j;
                let out_offset = n * dims.fd_len() + fd_offset_unchecked(dims, i, j, 0);
                let mut k = 0;
                while k < dims.w {
                    let vl = (dims.w - k).min(maxvl);
                    let src = in_base + (in_offset + k) as u64 * eb;
                    let dst = out_base + (out_offset + SURFACE_CHANNELS * k) as u64 * eb;
                    strips.push(Strip {
                        setup_ops: if k == 0 { 2 } else { 0 },
                        requested: dims.w - k,
                        vl,
                        args: vec![(0, src), (1, dst), (2, channel_stride)],
                        reads: Footprint::contiguous(src, vl as u64 * eb),
                        writes: Footprint {
                            base: dst,
                            stride: channel_stride,
                            count: vl as u64,
                            width: eb,
                        },
                    });
                    k += vl;
                }
            }
        }
    }
    vm.setvcfg(1, 1)?;
    run_strips(vm, VCVT_NCHW_TO_FD, &strips, opts)?;
    vm.fence();
    let data = fetch(vm, out_base, input.dtype(), out_len)?;
    Tensor::new(shape, Layout::FeatureDepth, data)
}

/// Strips over a flat buffer of `total` elements. `args` maps a strip's
/// element offset to its address-register moves.
fn flat_strips(
    total: usize,
    maxvl: usize,
    in_base: u64,
    in_eb: u64,
    out_base: u64,
    out_eb: u64,
    extra: &[(usize, u64)],
) -> Vec<Strip> {
    crate::vm::strip_plan(total, maxvl)
        .strips
        .into_iter()
        .map(|(off, vl)| {
            let src = in_base + off as u64 * in_eb;
            let dst = out_base + off as u64 * out_eb;
            let mut args = vec![(0, src), (1, dst)];
            args.extend_from_slice(extra);
            Strip {
                setup_ops: 0,
                requested: total - off,
                vl,
                args,
                reads: Footprint::contiguous(src, vl as u64 * in_eb),
                writes: Footprint::contiguous(dst, vl as u64 * out_eb),
            }
        })
        .collect()
}

const VQUANTIZE: &str = "vquantize";
const VDEQUANTIZE: &str = "vdequantize";

/// fp32 to int8 with the scalar rounding and saturation rule.
pub fn v_quantize(vm: &mut Vm, t: &Tensor, q: QuantParams, opts: KernelOptions) -> Result<Tensor> {
    let src = t
        .as_f32()
        .ok_or_else(|| Error::domain("quantize expects an fp32 tensor"))?;
    if let Some(pos) = src.iter().position(|x| !x.is_finite()) {
        return Err(Error::domain(format!("non-finite element at {pos}")));
    }
    register(
        vm,
        VQUANTIZE,
        vec![
            VInst::Load {
                vd: 0,
                base: 0,
                stride: None,
                ety: ElemType::F32,
                pred: None,
            },
            VInst::Quantize {
                vd: 1,
                vs: 0,
                scale: 2,
            },
            VInst::Store {
                vs: 1,
                base: 1,
                stride: None,
                ety: ElemType::I8,
                pred: None,
            },
        ],
    )?;
    let in_base = stage(vm, t.data())?;
    let out_base = vm.alloc(src.len());
    let strips = flat_strips(
        src.len(),
        vm.maxvl(),
        in_base,
        4,
        out_base,
        1,
        &[(2, q.scale().to_bits() as u64)],
    );
    vm.setvcfg(2, 0)?;
    run_strips(vm, VQUANTIZE, &strips, opts)?;
    vm.fence();
    let data = TensorData::I8(vm.read_i8(out_base, src.len())?);
    Tensor::new(t.shape(), t.layout(), data)
}

/// int8 to fp32, `q * scale`.
pub fn v_dequantize(vm: &mut Vm, t: &Tensor, q: QuantParams, opts: KernelOptions) -> Result<Tensor> {
    let src = t
        .as_i8()
        .ok_or_else(|| Error::domain("dequantize expects an int8 tensor"))?;
    register(
        vm,
        VDEQUANTIZE,
        vec![
            VInst::Load {
                vd: 0,
                base: 0,
                stride: None,
                ety: ElemType::I8,
                pred: None,
            },
            VInst::Dequantize {
                vd: 1,
                vs: 0,
                scale: 2,
            },
            VInst::Store {
                vs: 1,
                base: 1,
                stride: None,
                ety: ElemType::F32,
                pred: None,
            },
        ],
    )?;
    let in_base = stage(vm, t.data())?;
    let out_base = vm.alloc(src.len() * 4);
    let strips = flat_strips(
        src.len(),
        vm.maxvl(),
        in_base,
        1,
        out_base,
        4,
        &[(2, q.scale().to_bits() as u64)],
    );
    vm.setvcfg(2, 0)?;
    run_strips(vm, VDEQUANTIZE, &strips, opts)?;
    vm.fence();
    let data = TensorData::F32(vm.read_f32(out_base, src.len())?);
    Tensor::new(t.shape(), t.layout(), data)
}

/// Output phases written by one upsample fetch; each needs its own address
/// register.
const UPSAMPLE_PHASES_PER_FETCH: usize = 16;

/// Nearest-neighbor upsampling. For every output row the matching input row
/// is loaded once per strip and scattered to the `factor` column phases with
/// a `factor`-element stride.
pub fn v_upsample_nearest(
    vm: &mut Vm,
    t: &Tensor,
    factor: usize,
    opts: KernelOptions,
) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::domain("upsample factor must be >= 1"));
    }
    if t.layout() != Layout::Nchw {
        return Err(Error::shape("upsample expects an NCHW tensor"));
    }
    let src = t
        .as_f32()
        .ok_or_else(|| Error::domain("upsample expects an fp32 tensor"))?;
    let s = t.shape();
    let out_shape = Shape::new(s.n, s.c, s.h * factor, s.w * factor)?;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let in_base = stage(vm, t.data())?;
    let out_len = out_shape.required_size(Layout::Nchw);
    let out_base = vm.alloc(out_len * 4);
    let maxvl = vm.maxvl();
    let phase_stride = factor as u64 * 4;

    // phases are split into groups; each group size gets its own kernel
    let groups: Vec<(usize, usize)> = (0..factor)
        .step_by(UPSAMPLE_PHASES_PER_FETCH)
        .map(|p| (p, UPSAMPLE_PHASES_PER_FETCH.min(factor - p)))
        .collect();
    vm.setvcfg(1, 0)?;
    for &(first, count) in &groups {
        let name = format!("vupsample_x{count}");
        let mut body = vec![VInst::Load {
            vd: 0,
            base: 0,
            stride: None,
            ety: ElemType::F32,
            pred: None,
        }];
        body.extend((0..count).map(|r| VInst::Store {
            vs: 0,
            base: 2 + r,
            stride: Some(1),
            ety: ElemType::F32,
            pred: None,
        }));
        register(vm, &name, body)?;

        let mut strips = Vec::new();
        for plane in 0..s.n * s.c {
            for jo in 0..oh {
                let in_row = plane * s.h * s.w + (jo / factor) * s.w;
                let out_row = plane * oh * ow + jo * ow;
                let mut k = 0;
                while k < s.w {
                    let vl = (s.w - k).min(maxvl);
                    let src_addr = in_base + (in_row + k) as u64 * 4;
                    let dst = out_base + (out_row + factor * k + first) as u64 * 4;
                    let mut args = vec![(0, src_addr), (1, phase_stride)];
                    args.extend((0..count).map(|r| (2 + r, dst + r as u64 * 4)));
                    strips.push(Strip {
                        setup_ops: if k == 0 { 2 } else { 0 },
                        requested: s.w - k,
                        vl,
                        args,
                        reads: Footprint::contiguous(src_addr, vl as u64 * 4),
                        writes: Footprint::contiguous(dst, (vl * factor) as u64 * 4),
                    });
                    k += vl;
                }
            }
        }
        run_strips(vm, &name, &strips, opts)?;
    }
    vm.fence();
    let data = vm.read_f32(out_base, out_len)?;
    debug_assert_eq!(data.len(), src.len() * factor * factor);
    Tensor::from_f32(out_shape, Layout::Nchw, data)
}

const VNORMALIZE: &str = "vnormalize_u8";

/// Stage one of the letterbox pipeline on the vector unit: each channel is
/// gathered from the interleaved image with a 3-byte stride, divided by 255
/// and stored as a planar fp32 row. Returns a `(1, 3, h, w)` tensor.
pub fn v_normalize_u8_to_f32(vm: &mut Vm, img: &Image, opts: KernelOptions) -> Result<Tensor> {
    register(
        vm,
        VNORMALIZE,
        vec![
            VInst::Load {
                vd: 0,
                base: 0,
                stride: Some(2),
                ety: ElemType::U8,
                pred: None,
            },
            VInst::U8ToF32 {
                vd: 1,
                vs: 0,
                divisor: 3,
            },
            VInst::Store {
                vs: 1,
                base: 1,
                stride: None,
                ety: ElemType::F32,
                pred: None,
            },
        ],
    )?;
    let pixels = img.width * img.height;
    let in_base = vm.alloc(img.data.len());
    vm.write_bytes(in_base, &img.data)?;
    let out_len = Image::CHANNELS * pixels;
    let out_base = vm.alloc(out_len * 4);
    let channels = Image::CHANNELS as u64;
    let mut strips = Vec::new();
    for ch in 0..channels {
        for (off, vl) in crate::vm::strip_plan(pixels, vm.maxvl()).strips {
            let src = in_base + ch + off as u64 * channels;
            let dst = out_base + (ch as usize * pixels + off) as u64 * 4;
            strips.push(Strip {
                setup_ops: 0,
                requested: pixels - off,
                vl,
                args: vec![
                    (0, src),
                    (1, dst),
                    (2, channels),
                    (3, PIXEL_DIVISOR.to_bits() as u64),
                ],
                reads: Footprint {
                    base: src,
                    stride: channels,
                    count: vl as u64,
                    width: 1,
                },
                writes: Footprint::contiguous(dst, vl as u64 * 4),
            });
        }
    }
    vm.setvcfg(2, 0)?;
    run_strips(vm, VNORMALIZE, &strips, opts)?;
    vm.fence();
    let data = vm.read_f32(out_base, out_len)?;
    Tensor::from_f32(Shape::new(1, 3, img.height, img.width)?, Layout::Nchw, data)
}

/// Closed-form cycle count of [`v_convert_fd_to_nchw`] for one image on a
/// memory system that never stalls:
/// `setup + fence + C*H*(2 scalar ops) + C*H*ceil(w/maxvl)*strip`, where a
/// strip is `setvlen`, three `vmca`, the dispatch and the two body
/// instructions. With the default table that is
/// `5 + C*H*2 + C*H*8*ceil(w/maxvl)`.
pub fn predicted_cycles_fd_to_nchw(dims: LayoutDims, maxvl: usize, costs: &CostTable) -> u64 {
    let rows = (dims.c * dims.h) as u64;
    let strips = dims.w.div_ceil(maxvl) as u64;
    let per_strip = 4 * costs.scalar_move + costs.fetch_dispatch + 2 * costs.strip_compute;
    costs.setup + costs.fence + rows * 2 * costs.scalar_move + rows * strips * per_strip
}
