//! Benchmark and verification harness: SoC configuration, the scalar
//! baseline cycle model, seeded input generation, scalar/vector equivalence
//! sweeps and the benchmark table.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, KernelKind, KernelOptions};
use crate::memory::{AccessKind, CacheConfig, MemoryModel};
use crate::scalar::{self, Image, QuantParams};
use crate::tensor::{fd_offset_unchecked, DType, Layout, Shape, Tensor};
use crate::vm::{Vm, VmConfig, MEMORY_BASE};

/// Scalar core costs for the baseline model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarCosts {
    /// ALU cycles per element moved or converted.
    pub alu_per_element: u64,
}

impl Default for ScalarCosts {
    fn default() -> Self {
        Self { alu_per_element: 1 }
    }
}

/// Everything the VM, the cache model and the scalar baseline need.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SocConfig {
    pub cache: CacheConfig,
    pub vm: VmConfig,
    pub scalar: ScalarCosts,
}

impl SocConfig {
    /// Same machine with a memory system that never stalls.
    pub fn ideal() -> Self {
        Self {
            cache: CacheConfig::ideal(),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SocConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.cache.validate()?;
        self.vm.validate()
    }

    pub fn new_vm(&self) -> Result<Vm> {
        Vm::new(self.vm.clone(), self.cache.clone())
    }
}

/// Benchmark workload sizes: the three detection-head feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }

    /// Feature-map side length.
    pub fn side(self) -> usize {
        match self {
            SizeClass::Small => 13,
            SizeClass::Medium => 26,
            SizeClass::Large => 52,
        }
    }

    /// `(c, h, w)` of the converter workload.
    pub fn dims(self) -> (usize, usize, usize) {
        (256, self.side(), self.side())
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SizeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SizeClass::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown size class `{s}`")))
    }
}

/// A kernel applied to a concrete shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Workload {
    pub kind: KernelKind,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub dtype: DType,
    /// Upsample factor; ignored elsewhere.
    pub factor: usize,
}

impl Workload {
    pub fn new(kind: KernelKind, c: usize, h: usize, w: usize) -> Self {
        Self {
            kind,
            c,
            h,
            w,
            dtype: match kind {
                KernelKind::Dequantize => DType::I8,
                _ => DType::F32,
            },
            factor: 2,
        }
    }

    /// Normalize ignores `c` and works on an `h x w` RGB image.
    pub fn for_size(kind: KernelKind, size: SizeClass) -> Self {
        let (c, h, w) = size.dims();
        match kind {
            KernelKind::Normalize => Self::new(kind, 3, 8 * h, 8 * w),
            _ => Self::new(kind, c, h, w),
        }
    }

    fn shape(&self) -> Result<Shape> {
        Shape::new(1, self.c, self.h, self.w)
    }

    pub fn elements(&self) -> usize {
        match self.kind {
            KernelKind::Upsample => self.c * self.h * self.w * self.factor * self.factor,
            KernelKind::Normalize => 3 * self.h * self.w,
            _ => self.c * self.h * self.w,
        }
    }
}

/// Input for one kernel run.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelInput {
    Tensor(Tensor),
    Image(Image),
}

fn random_data(rng: &mut ChaCha8Rng, shape: Shape, layout: Layout, dtype: DType) -> Result<Tensor> {
    let len = shape.required_size(layout);
    match dtype {
        DType::F32 => Tensor::from_f32(
            shape,
            layout,
            (0..len).map(|_| rng.gen_range(-4.0f32..4.0)).collect(),
        ),
        DType::I8 => Tensor::from_i8(shape, layout, (0..len).map(|_| rng.gen()).collect()),
    }
}

/// Seeded input for a workload.
pub fn generate_input(wl: &Workload, seed: u64) -> Result<KernelInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = wl.shape()?;
    Ok(match wl.kind {
        KernelKind::Fd2Nchw => {
            KernelInput::Tensor(random_data(&mut rng, shape, Layout::FeatureDepth, wl.dtype)?)
        }
        KernelKind::Nchw2Fd | KernelKind::Upsample => {
            KernelInput::Tensor(random_data(&mut rng, shape, Layout::Nchw, wl.dtype)?)
        }
        KernelKind::Quantize => {
            KernelInput::Tensor(random_data(&mut rng, shape, Layout::Nchw, DType::F32)?)
        }
        KernelKind::Dequantize => {
            KernelInput::Tensor(random_data(&mut rng, shape, Layout::Nchw, DType::I8)?)
        }
        KernelKind::Normalize => {
            let bytes = (0..wl.w * wl.h * Image::CHANNELS).map(|_| rng.gen()).collect();
            KernelInput::Image(Image::new(wl.w, wl.h, bytes)?)
        }
    })
}

/// Quantization parameters used for a given input.
fn quant_params(kind: KernelKind, input: &Tensor) -> Result<QuantParams> {
    match kind {
        KernelKind::Quantize => scalar::compute_scale(input),
        _ => QuantParams::new(0.05),
    }
}

fn tensor_input(input: &KernelInput) -> Result<&Tensor> {
    match input {
        KernelInput::Tensor(t) => Ok(t),
        KernelInput::Image(_) => Err(Error::shape("kernel expects a tensor input")),
    }
}

/// Scalar reference result.
pub fn run_scalar(wl: &Workload, input: &KernelInput) -> Result<Tensor> {
    if let KernelInput::Image(img) = input {
        let planes = scalar::normalize_planes(img).concat();
        return Tensor::from_f32(Shape::new(1, 3, img.height, img.width)?, Layout::Nchw, planes);
    }
    let t = tensor_input(input)?;
    match wl.kind {
        KernelKind::Fd2Nchw => crate::tensor::convert_fd_to_nchw(t),
        KernelKind::Nchw2Fd => crate::tensor::convert_nchw_to_fd(t),
        KernelKind::Quantize => scalar::quantize(t, quant_params(wl.kind, t)?),
        KernelKind::Dequantize => scalar::dequantize(t, quant_params(wl.kind, t)?),
        KernelKind::Upsample => scalar::upsample_nearest(t, wl.factor),
        KernelKind::Normalize => Err(Error::shape("normalize expects an image input")),
    }
}

/// Vector result on `vm`.
pub fn run_vector(vm: &mut Vm, wl: &Workload, input: &KernelInput, opts: KernelOptions) -> Result<Tensor> {
    if let KernelInput::Image(img) = input {
        return kernels::v_normalize_u8_to_f32(vm, img, opts);
    }
    let t = tensor_input(input)?;
    match wl.kind {
        KernelKind::Fd2Nchw => kernels::v_convert_fd_to_nchw(vm, t, opts),
        KernelKind::Nchw2Fd => kernels::v_convert_nchw_to_fd(vm, t, opts),
        KernelKind::Quantize => kernels::v_quantize(vm, t, quant_params(wl.kind, t)?, opts),
        KernelKind::Dequantize => kernels::v_dequantize(vm, t, quant_params(wl.kind, t)?, opts),
        KernelKind::Upsample => kernels::v_upsample_nearest(vm, t, wl.factor, opts),
        KernelKind::Normalize => Err(Error::shape("normalize expects an image input")),
    }
}

/// Cycle and stall totals of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunCost {
    pub cycles: u64,
    pub stalls: u64,
}

/// Bump allocator mirroring [`Vm::alloc`] so the scalar baseline sees the
/// same address layout as the vector run.
struct Arena {
    next: u64,
    line: u64,
}

impl Arena {
    fn alloc(&mut self, model: &mut MemoryModel, bytes: usize) -> u64 {
        let base = MEMORY_BASE + self.next.next_multiple_of(self.line);
        let len = bytes.max(1) as u64;
        model.register(base, len);
        self.next = (base - MEMORY_BASE + len).next_multiple_of(self.line) + self.line;
        base
    }
}

/// Scalar baseline: every element costs `alu_per_element` plus the blocking
/// latency of its load and its store through L1 and L2, walking the same
/// loop order as the scalar reference.
pub fn scalar_cycles(wl: &Workload, soc: &SocConfig) -> Result<RunCost> {
    let mut model = MemoryModel::new(soc.cache.clone())?;
    let mut arena = Arena {
        next: 0,
        line: soc.cache.line_bytes,
    };
    let shape = wl.shape()?;
    let dims = shape.dims();
    let alu = soc.scalar.alu_per_element;
    let mut cycles = 0u64;
    let mut step = |model: &mut MemoryModel, src: u64, sw: u64, dst: u64, dw: u64| -> Result<()> {
        let r = model.access(src, sw, AccessKind::Read)?;
        let w = model.access(dst, dw, AccessKind::Write)?;
        cycles += alu + u64::from(r) + u64::from(w);
        Ok(())
    };
    match wl.kind {
        KernelKind::Fd2Nchw | KernelKind::Nchw2Fd => {
            let eb = wl.dtype.size_bytes();
            let fd = arena.alloc(&mut model, dims.fd_len() * eb);
            let nchw = arena.alloc(&mut model, dims.nchw_len() * eb);
            let (in_base, out_base) = match wl.kind {
                KernelKind::Fd2Nchw => (fd, nchw),
                _ => (nchw, fd),
            };
            let eb = eb as u64;
            for i in 0..dims.c {
                for j in 0..dims.h {
                    for k in 0..dims.w {
                        let f = fd_offset_unchecked(dims, i, j, k) as u64 * eb;
                        let n = ((i * dims.h + j) * dims.w + k) as u64 * eb;
                        let (src, dst) = match wl.kind {
                            KernelKind::Fd2Nchw => (in_base + f, out_base + n),
                            _ => (in_base + n, out_base + f),
                        };
                        step(&mut model, src, eb, dst, eb)?;
                    }
                }
            }
        }
        KernelKind::Quantize | KernelKind::Dequantize => {
            let (ib, ob) = if wl.kind == KernelKind::Quantize { (4, 1) } else { (1, 4) };
            let len = dims.nchw_len();
            let in_base = arena.alloc(&mut model, len * ib);
            let out_base = arena.alloc(&mut model, len * ob);
            for e in 0..len as u64 {
                step(&mut model, in_base + e * ib as u64, ib as u64, out_base + e * ob as u64, ob as u64)?;
            }
        }
        KernelKind::Upsample => {
            let f = wl.factor;
            let in_base = arena.alloc(&mut model, dims.nchw_len() * 4);
            let out_base = arena.alloc(&mut model, dims.nchw_len() * f * f * 4);
            let (oh, ow) = (dims.h * f, dims.w * f);
            for plane in 0..dims.c {
                for y in 0..oh {
                    for x in 0..ow {
                        let src = (plane * dims.h * dims.w + (y / f) * dims.w + x / f) as u64 * 4;
                        let dst = (plane * oh * ow + y * ow + x) as u64 * 4;
                        step(&mut model, in_base + src, 4, out_base + dst, 4)?;
                    }
                }
            }
        }
        KernelKind::Normalize => {
            let pixels = wl.h * wl.w;
            let in_base = arena.alloc(&mut model, pixels * Image::CHANNELS);
            let out_base = arena.alloc(&mut model, pixels * Image::CHANNELS * 4);
            for ch in 0..Image::CHANNELS {
                for p in 0..pixels {
                    let src = in_base + (p * Image::CHANNELS + ch) as u64;
                    let dst = out_base + ((ch * pixels + p) * 4) as u64;
                    step(&mut model, src, 1, dst, 4)?;
                }
            }
        }
    }
    Ok(RunCost {
        cycles,
        stalls: model.stats().stall_cycles,
    })
}

/// Modeled cost of the vector kernel on a fresh machine.
pub fn vector_cycles(wl: &Workload, soc: &SocConfig, prefetch: bool, seed: u64) -> Result<RunCost> {
    let input = generate_input(wl, seed)?;
    let mut vm = soc.new_vm()?;
    run_vector(&mut vm, wl, &input, KernelOptions { prefetch })?;
    let report = vm.cycles();
    Ok(RunCost {
        cycles: report.total,
        stalls: report.stalls,
    })
}

/// Shapes covered by `verify` when no explicit dims are given.
pub fn verify_sweep(kind: KernelKind, maxvl: usize) -> Vec<Workload> {
    let mut out = Vec::new();
    for c in [1, 31, 32, 33, 64] {
        for (h, w) in [(1, 1), (3, 7), (2, maxvl + 1), (1, 3 * maxvl)] {
            out.push(Workload::new(kind, c, h, w));
        }
    }
    if kind == KernelKind::Upsample {
        for wl in out.iter_mut() {
            wl.w = wl.w.min(64);
            wl.c = wl.c.min(4);
        }
        for factor in [1, 3] {
            let mut wl = Workload::new(kind, 2, 3, 5);
            wl.factor = factor;
            out.push(wl);
        }
    }
    if matches!(kind, KernelKind::Fd2Nchw | KernelKind::Nchw2Fd) {
        let mut wl = Workload::new(kind, 33, 4, 9);
        wl.dtype = DType::I8;
        out.push(wl);
    }
    out
}

/// First differing positions of a failed case.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub seed: u64,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub kernel: String,
    pub cases: usize,
    pub mismatches: Vec<Mismatch>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Index of the vector output to corrupt before comparison. Test hook for
/// the negative path of `verify`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FaultInjection(pub Option<usize>);

fn corrupt(t: Tensor, at: usize) -> Result<Tensor> {
    let (shape, layout) = (t.shape(), t.layout());
    match t.into_data() {
        crate::tensor::TensorData::F32(mut v) => {
            let at = at % v.len();
            v[at] = f32::from_bits(v[at].to_bits() ^ 1);
            Tensor::from_f32(shape, layout, v)
        }
        crate::tensor::TensorData::I8(mut v) => {
            let at = at % v.len();
            v[at] ^= 1;
            Tensor::from_i8(shape, layout, v)
        }
    }
}

/// Runs scalar and vector versions of every workload on seeded inputs and
/// records up to ten differing indices per failing case.
pub fn verify(
    kind: KernelKind,
    workloads: &[Workload],
    soc: &SocConfig,
    seed: u64,
    fault: FaultInjection,
) -> Result<VerifyReport> {
    let mut report = VerifyReport {
        kernel: kind.name().to_string(),
        ..VerifyReport::default()
    };
    for (n, wl) in workloads.iter().enumerate() {
        let case_seed = seed.wrapping_add(n as u64);
        let input = generate_input(wl, case_seed)?;
        let want = run_scalar(wl, &input)?;
        let mut vm = soc.new_vm()?;
        let mut got = run_vector(&mut vm, wl, &input, KernelOptions { prefetch: n % 2 == 1 })?;
        if let Some(at) = fault.0 {
            got = corrupt(got, at)?;
        }
        report.cases += 1;
        let mut indices = want.bit_diff(&got, 10);
        if indices.is_empty() && (want.shape() != got.shape() || want.layout() != got.layout()) {
            indices.push(0);
        }
        if !indices.is_empty() {
            report.mismatches.push(Mismatch {
                c: wl.c,
                h: wl.h,
                w: wl.w,
                seed: case_seed,
                indices,
            });
        }
    }
    Ok(report)
}

pub const BENCH_HEADER: [&str; 6] = ["kernel", "size", "variant", "cycles", "stalls", "speedup"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub kernel: String,
    pub size: String,
    pub variant: String,
    pub cycles: u64,
    pub stalls: u64,
    /// Scalar cycles over this row's cycles.
    pub speedup: f64,
}

/// Which vector variants a bench run includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrefetchMode {
    Off,
    On,
    Both,
}

/// One row per variant: the scalar baseline, then the vector kernel with
/// and/or without prefetch.
pub fn bench(
    kinds: &[KernelKind],
    sizes: &[SizeClass],
    soc: &SocConfig,
    mode: PrefetchMode,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    let mut kinds = kinds.to_vec();
    kinds.sort();
    let mut sizes = sizes.to_vec();
    sizes.sort();
    for &kind in &kinds {
        for &size in &sizes {
            let wl = Workload::for_size(kind, size);
            let base = scalar_cycles(&wl, soc)?;
            let row = |variant: &str, cost: RunCost| BenchRow {
                kernel: kind.name().to_string(),
                size: size.name().to_string(),
                variant: variant.to_string(),
                cycles: cost.cycles,
                stalls: cost.stalls,
                speedup: base.cycles as f64 / cost.cycles.max(1) as f64,
            };
            rows.push(row("scalar", base));
            if mode != PrefetchMode::On {
                rows.push(row("vector", vector_cycles(&wl, soc, false, seed)?));
            }
            if mode != PrefetchMode::Off {
                rows.push(row("vector+prefetch", vector_cycles(&wl, soc, true, seed)?));
            }
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BENCH_HEADER)
        .map_err(|e| Error::format(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.kernel.clone(),
            r.size.clone(),
            r.variant.clone(),
            r.cycles.to_string(),
            r.stalls.to_string(),
            format!("{:.3}", r.speedup),
        ])
        .map_err(|e| Error::format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_soc_round_trips_through_toml() {
        let soc = SocConfig::default();
        let text = toml::to_string(&soc).unwrap();
        assert_eq!(SocConfig::from_toml_str(&text).unwrap(), soc);
        assert!(matches!(
            SocConfig::from_toml_str("[cache]\nl1_ways = 0\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(SocConfig::from_toml_str("bogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_verifies_every_kernel() {
        let soc = SocConfig {
            vm: VmConfig {
                maxvl: 8,
                ..VmConfig::default()
            },
            ..SocConfig::default()
        };
        for kind in KernelKind::ALL {
            let report = verify(kind, &verify_sweep(kind, 8), &soc, 0, FaultInjection::default()).unwrap();
            assert!(report.passed(), "{kind}: {:?}", report.mismatches);
        }
    }

    #[test]
    fn injected_fault_is_reported() {
        let soc = SocConfig::default();
        let wl = [Workload::new(KernelKind::Fd2Nchw, 2, 2, 3)];
        let report = verify(KernelKind::Fd2Nchw, &wl, &soc, 0, FaultInjection(Some(5))).unwrap();
        assert_eq!(report.mismatches.len(), 1);
        assert_eq!(report.mismatches[0].indices, vec![5]);
    }

    #[test]
    fn scalar_model_on_ideal_memory_is_alu_only() {
        let wl = Workload::new(KernelKind::Fd2Nchw, 3, 4, 5);
        let cost = scalar_cycles(&wl, &SocConfig::ideal()).unwrap();
        assert_eq!(cost, RunCost { cycles: 60, stalls: 0 });
    }

    #[test]
    fn csv_header_and_order() {
        let soc = SocConfig::default();
        let rows = bench(
            &[KernelKind::Quantize],
            &[SizeClass::Small],
            &soc,
            PrefetchMode::Both,
            0,
        )
        .unwrap();
        let text = bench_csv(&rows).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("kernel,size,variant,cycles,stalls,speedup"));
        let variants: Vec<&str> = lines.map(|l| l.split(',').nth(2).unwrap()).collect();
        assert_eq!(variants, ["scalar", "vector", "vector+prefetch"]);
    }
}
