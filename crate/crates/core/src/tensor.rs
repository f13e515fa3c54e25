//! Dense tensors in the two layouts the DLA boundary deals with.
//!
//! `Nchw` is the planar layout the CPU side of the pipeline expects.
//! `FeatureDepth` is the accelerator-native layout: channels are grouped in
//! surfaces of [`SURFACE_CHANNELS`], and inside a surface the channel lanes of
//! one pixel sit next to each other.
//!
//! Strides are counted in elements, never bytes.

use crate::error::{Error, Result};

/// Channels per feature-depth surface.
pub const SURFACE_CHANNELS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    I8,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I8 => 1,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            DType::F32 => 0,
            DType::I8 => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::I8),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    Nchw,
    FeatureDepth,
}

impl Layout {
    pub fn code(self) -> u32 {
        match self {
            Layout::Nchw => 0,
            Layout::FeatureDepth => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Layout::Nchw),
            1 => Some(Layout::FeatureDepth),
            _ => None,
        }
    }
}

/// Single-image dimensions used by the layout arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayoutDims {
    pub w: usize,
    pub h: usize,
    pub c: usize,
}

impl LayoutDims {
    pub fn new(w: usize, h: usize, c: usize) -> Result<Self> {
        if w == 0 || h == 0 || c == 0 {
            return Err(Error::shape(format!(
                "dimensions must be positive, got w={w} h={h} c={c}"
            )));
        }
        Ok(Self { w, h, c })
    }

    /// Elements in one feature-depth row (`w * 32`).
    pub fn line_stride(&self) -> usize {
        self.w * SURFACE_CHANNELS
    }

    /// Elements in one feature-depth surface (`line_stride * h`).
    pub fn surface_stride(&self) -> usize {
        self.line_stride() * self.h
    }

    pub fn surfaces(&self) -> usize {
        self.c.div_ceil(SURFACE_CHANNELS)
    }

    pub fn nchw_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Feature-depth buffer length, including the zero lanes of a partial
    /// last surface.
    pub fn fd_len(&self) -> usize {
        self.surfaces() * self.surface_stride()
    }

    fn check(&self, i: usize, j: usize, k: usize) -> Result<()> {
        if i >= self.c || j >= self.h || k >= self.w {
            return Err(Error::Bounds {
                channel: i,
                row: j,
                col: k,
                c: self.c,
                h: self.h,
                w: self.w,
            });
        }
        Ok(())
    }
}

/// Flat NCHW index of channel `i`, row `j`, column `k`.
pub fn nchw_offset(dims: LayoutDims, i: usize, j: usize, k: usize) -> Result<usize> {
    dims.check(i, j, k)?;
    Ok(dims.w * dims.h * i + dims.w * j + k)
}

/// Flat feature-depth index of channel `i`, row `j`, column `k`.
pub fn fd_offset(dims: LayoutDims, i: usize, j: usize, k: usize) -> Result<usize> {
    dims.check(i, j, k)?;
    Ok(fd_offset_unchecked(dims, i, j, k))
}

#[inline]
pub(crate) fn fd_offset_unchecked(dims: LayoutDims, i: usize, j: usize, k: usize) -> usize {
    let surface_index = i / SURFACE_CHANNELS;
    dims.surface_stride() * surface_index
        + dims.line_stride() * j
        + SURFACE_CHANNELS * k
        + i % SURFACE_CHANNELS
}

/// Feature-depth to NCHW for one image, loop order channel, row, column.
pub fn fd_to_nchw_slice<T: Copy>(input: &[T], dims: LayoutDims, out: &mut [T]) -> Result<()> {
    if input.len() != dims.fd_len() || out.len() != dims.nchw_len() {
        return Err(Error::shape(format!(
            "fd->nchw buffers {}/{} do not match {:?} (want {}/{})",
            input.len(),
            out.len(),
            dims,
            dims.fd_len(),
            dims.nchw_len()
        )));
    }
    let line_stride = dims.line_stride();
    let surface_stride = dims.surface_stride();
    for i in 0..dims.c {
        let surface_index = i / SURFACE_CHANNELS;
        for j in 0..dims.h {
            for k in 0..dims.w {
                out[dims.w * dims.h * i + dims.w * j + k] = input[surface_stride * surface_index
                    + line_stride * j
                    + SURFACE_CHANNELS * k
                    + i % SURFACE_CHANNELS];
            }
        }
    }
    Ok(())
}

/// NCHW to feature-depth for one image. Lanes past `c` in the last surface
/// are filled with `pad`.
pub fn nchw_to_fd_slice<T: Copy>(
    input: &[T],
    dims: LayoutDims,
    out: &mut [T],
    pad: T,
) -> Result<()> {
    if input.len() != dims.nchw_len() || out.len() != dims.fd_len() {
        return Err(Error::shape(format!(
            "nchw->fd buffers {}/{} do not match {:?} (want {}/{})",
            input.len(),
            out.len(),
            dims,
            dims.nchw_len(),
            dims.fd_len()
        )));
    }
    out.fill(pad);
    for i in 0..dims.c {
        for j in 0..dims.h {
            for k in 0..dims.w {
                out[fd_offset_unchecked(dims, i, j, k)] = input[dims.w * dims.h * i + dims.w * j + k];
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "dimensions must be positive, got n={n} c={c} h={h} w={w}"
            )));
        }
        Ok(Self { n, c, h, w })
    }

    pub fn dims(&self) -> LayoutDims {
        LayoutDims {
            w: self.w,
            h: self.h,
            c: self.c,
        }
    }

    /// Elements of one batch item in `layout`.
    pub fn item_size(&self, layout: Layout) -> usize {
        match layout {
            Layout::Nchw => self.dims().nchw_len(),
            Layout::FeatureDepth => self.dims().fd_len(),
        }
    }

    pub fn required_size(&self, layout: Layout) -> usize {
        self.n * self.item_size(layout)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    layout: Layout,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Shape, layout: Layout, data: TensorData) -> Result<Self> {
        let want = shape.required_size(layout);
        if data.len() != want {
            return Err(Error::shape(format!(
                "{:?} tensor of {:?} needs {want} elements, got {}",
                layout,
                shape,
                data.len()
            )));
        }
        Ok(Self {
            shape,
            layout,
            data,
        })
    }

    pub fn from_f32(shape: Shape, layout: Layout, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, layout, TensorData::F32(data))
    }

    pub fn from_i8(shape: Shape, layout: Layout, data: Vec<i8>) -> Result<Self> {
        Self::new(shape, layout, TensorData::I8(data))
    }

    pub fn zeros(shape: Shape, dtype: DType, layout: Layout) -> Self {
        let len = shape.required_size(layout);
        let data = match dtype {
            DType::F32 => TensorData::F32(vec![0.0; len]),
            DType::I8 => TensorData::I8(vec![0; len]),
        };
        Self {
            shape,
            layout,
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::I8(_) => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            TensorData::I8(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    /// Equality on raw element bits; `NaN` payloads compare exactly.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape || self.layout != other.layout {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::I8(a), TensorData::I8(b)) => a == b,
            _ => false,
        }
    }

    /// Indices (flat) where the two tensors differ bitwise, up to `limit`.
    pub fn bit_diff(&self, other: &Tensor, limit: usize) -> Vec<usize> {
        let pairs: Box<dyn Iterator<Item = bool>> = match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                Box::new(a.iter().zip(b).map(|(x, y)| x.to_bits() != y.to_bits()))
            }
            (TensorData::I8(a), TensorData::I8(b)) => Box::new(a.iter().zip(b).map(|(x, y)| x != y)),
            _ => return (0..limit.min(self.len())).collect(),
        };
        let mut diff: Vec<usize> = pairs
            .enumerate()
            .filter_map(|(idx, d)| d.then_some(idx))
            .take(limit)
            .collect();
        if diff.len() < limit && self.len() != other.len() {
            diff.push(self.len().min(other.len()));
        }
        diff
    }
}

fn convert_batched(
    input: &Tensor,
    from: Layout,
    to: Layout,
) -> Result<Tensor> {
    if input.layout != from {
        return Err(Error::shape(format!(
            "expected a {:?} tensor, got {:?}",
            from, input.layout
        )));
    }
    let shape = input.shape;
    let dims = shape.dims();
    let in_item = shape.item_size(from);
    let out_item = shape.item_size(to);
    macro_rules! run {
        ($src:expr, $zero:expr, $variant:ident) => {{
            let mut out = vec![$zero; shape.required_size(to)];
            for (src, dst) in $src.chunks_exact(in_item).zip(out.chunks_exact_mut(out_item)) {
                match to {
                    Layout::Nchw => fd_to_nchw_slice(src, dims, dst)?,
                    Layout::FeatureDepth => nchw_to_fd_slice(src, dims, dst, $zero)?,
                }
            }
            TensorData::$variant(out)
        }};
    }
    let data = match &input.data {
        TensorData::F32(v) => run!(v, 0.0f32, F32),
        TensorData::I8(v) => run!(v, 0i8, I8),
    };
    Tensor::new(shape, to, data)
}

/// Feature-depth to NCHW, one batch item at a time.
pub fn convert_fd_to_nchw(input: &Tensor) -> Result<Tensor> {
    convert_batched(input, Layout::FeatureDepth, Layout::Nchw)
}

/// NCHW to feature-depth; padding lanes of the last surface are zero.
pub fn convert_nchw_to_fd(input: &Tensor) -> Result<Tensor> {
    convert_batched(input, Layout::Nchw, Layout::FeatureDepth)
}
