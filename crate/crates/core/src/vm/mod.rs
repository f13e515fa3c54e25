//! Abstract vector-fetch machine: a host core dispatching named kernels to a decoupled vector unit.
//!
//! The host side drives the machine one call per scalar-core instruction
//! (`setvcfg`, `setvlen`, `vmca`, `vfetch`, `fence`); vector kernels are
//! registered bodies of [`VInst`] executed once per `vfetch`. Every call is
//! charged from the [`CostTable`] and logged to the trace; vector memory
//! instructions additionally pay the stall cycles reported by the
//! [`MemoryModel`].

mod isa;
pub mod trace;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use isa::{ElemType, VInst, VectorKernelProgram};
pub use trace::{CostClass, CycleReport, Footprint, LintIssue, TraceEntry};

use crate::error::{Error, Result};
use crate::memory::{AccessKind, CacheConfig, CacheStats, MemoryModel};

/// Cycles charged per instruction class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostTable {
    /// `setvcfg`.
    pub setup: u64,
    /// `setvlen`, `vmca` and host-side address arithmetic.
    pub scalar_move: u64,
    /// Each instruction of a fetched body.
    pub strip_compute: u64,
    /// `vfetch` itself (`la` + `lw` + `vf`).
    pub fetch_dispatch: u64,
    pub fence: u64,
    /// One prefetch hint instruction.
    pub prefetch: u64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            setup: 4,
            scalar_move: 1,
            strip_compute: 1,
            fetch_dispatch: 2,
            fence: 1,
            prefetch: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VmConfig {
    pub maxvl: usize,
    pub num_vregs: usize,
    pub num_pregs: usize,
    pub num_aregs: usize,
    pub costs: CostTable,
}

impl Default for VmConfig {
    fn default() -> Self {
        Self {
            maxvl: 2048,
            num_vregs: 32,
            num_pregs: 16,
            num_aregs: 32,
            costs: CostTable::default(),
        }
    }
}

impl VmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.maxvl == 0 {
            return Err(Error::config("maxvl must be >= 1"));
        }
        if self.num_vregs == 0 || self.num_aregs == 0 {
            return Err(Error::config("need at least one vector and one address register"));
        }
        Ok(())
    }
}

/// Contiguous `(offset, len)` strips covering `[0, total)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StripPlan {
    pub total: usize,
    pub strips: Vec<(usize, usize)>,
}

/// Splits `total` elements into `maxvl`-wide strips, the last one possibly
/// short.
pub fn strip_plan(total: usize, maxvl: usize) -> StripPlan {
    assert!(maxvl > 0, "maxvl must be positive");
    let strips = (0..total)
        .step_by(maxvl)
        .map(|off| (off, maxvl.min(total - off)))
        .collect();
    StripPlan { total, strips }
}

/// Base address of the first allocation. Low addresses stay unmapped.
pub const MEMORY_BASE: u64 = 0x1000_0000;

#[derive(Clone, Debug, Default, PartialEq)]
struct VReg {
    ety: Option<ElemType>,
    lanes: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Vm {
    cfg: VmConfig,
    model: MemoryModel,
    mem: Vec<u8>,
    vl: usize,
    vcfg: Option<(usize, usize)>,
    aregs: Vec<u64>,
    vregs: Vec<VReg>,
    pregs: Vec<Vec<bool>>,
    kernels: BTreeMap<String, VectorKernelProgram>,
    trace: Vec<TraceEntry>,
}

impl Vm {
    pub fn new(cfg: VmConfig, cache: CacheConfig) -> Result<Self> {
        cfg.validate()?;
        let model = MemoryModel::new(cache)?;
        Ok(Self {
            aregs: vec![0; cfg.num_aregs],
            vregs: vec![VReg::default(); cfg.num_vregs],
            pregs: vec![Vec::new(); cfg.num_pregs],
            cfg,
            model,
            mem: Vec::new(),
            vl: 0,
            vcfg: None,
            kernels: BTreeMap::new(),
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &VmConfig {
        &self.cfg
    }

    pub fn maxvl(&self) -> usize {
        self.cfg.maxvl
    }

    pub fn vl(&self) -> usize {
        self.vl
    }

    pub fn vcfg(&self) -> Option<(usize, usize)> {
        self.vcfg
    }

    pub fn areg(&self, idx: usize) -> Option<u64> {
        self.aregs.get(idx).copied()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.model.stats()
    }

    pub fn memory_model(&self) -> &MemoryModel {
        &self.model
    }

    pub fn cycles(&self) -> CycleReport {
        CycleReport::from_trace(&self.trace)
    }

    fn log(
        &mut self,
        mnemonic: &'static str,
        class: CostClass,
        cycles: u64,
        stall_cycles: u64,
        access: Option<Footprint>,
    ) {
        self.trace.push(TraceEntry {
            seq: self.trace.len() as u64,
            mnemonic,
            vl: self.vl,
            cycles,
            stall_cycles,
            class,
            access,
        });
    }

    // ---- host-side memory management (not charged) ----

    /// Reserves `bytes` of zeroed, line-aligned memory and returns its base.
    /// A one-line gap separates allocations so overruns fault.
    pub fn alloc(&mut self, bytes: usize) -> u64 {
        let line = self.model.config().line_bytes as usize;
        let start = self.mem.len().next_multiple_of(line);
        let end = start + bytes.max(1);
        self.mem.resize(end.next_multiple_of(line) + line, 0);
        let base = MEMORY_BASE + start as u64;
        self.model.register(base, bytes.max(1) as u64);
        base
    }

    fn span(&self, addr: u64, len: usize) -> Result<std::ops::Range<usize>> {
        if len == 0 {
            return Ok(0..0);
        }
        if addr < MEMORY_BASE || !self.model.is_mapped(addr, len as u64) {
            return Err(Error::MemoryFault {
                addr,
                width: len as u64,
            });
        }
        let start = (addr - MEMORY_BASE) as usize;
        Ok(start..start + len)
    }

    /// Stages input data. Not traced.
    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) -> Result<()> {
        let r = self.span(addr, bytes.len())?;
        self.mem[r].copy_from_slice(bytes);
        Ok(())
    }

    pub fn write_f32(&mut self, addr: u64, data: &[f32]) -> Result<()> {
        let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.write_bytes(addr, &bytes)
    }

    pub fn write_i8(&mut self, addr: u64, data: &[i8]) -> Result<()> {
        let bytes: Vec<u8> = data.iter().map(|x| *x as u8).collect();
        self.write_bytes(addr, &bytes)
    }

    /// Host read; logged as `sread` so the fence linter can see it.
    pub fn read_bytes(&mut self, addr: u64, len: usize) -> Result<Vec<u8>> {
        let r = self.span(addr, len)?;
        self.log(
            trace::MNEMONIC_HOST_READ,
            CostClass::Host,
            0,
            0,
            Some(Footprint::contiguous(addr, len as u64)),
        );
        Ok(self.mem[r].to_vec())
    }

    pub fn read_f32(&mut self, addr: u64, count: usize) -> Result<Vec<f32>> {
        Ok(self
            .read_bytes(addr, count * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn read_i8(&mut self, addr: u64, count: usize) -> Result<Vec<i8>> {
        Ok(self.read_bytes(addr, count)?.into_iter().map(|b| b as i8).collect())
    }

    /// Raw memory image, for comparisons in tests and tools. Not traced.
    pub fn memory(&self) -> &[u8] {
        &self.mem
    }

    // ---- scalar-core instructions ----

    pub fn register_kernel(&mut self, program: VectorKernelProgram) {
        self.kernels.insert(program.name.clone(), program);
    }

    pub fn has_kernel(&self, name: &str) -> bool {
        self.kernels.contains_key(name)
    }

    /// Configures the active register file shape.
    pub fn setvcfg(&mut self, nvregs: usize, npregs: usize) -> Result<()> {
        if nvregs == 0 || nvregs > self.cfg.num_vregs || npregs > self.cfg.num_pregs {
            return Err(Error::config(format!(
                "setvcfg({nvregs}, {npregs}) exceeds {} vregs / {} pregs or requests none",
                self.cfg.num_vregs, self.cfg.num_pregs
            )));
        }
        self.vcfg = Some((nvregs, npregs));
        self.log("setvcfg", CostClass::Setup, self.cfg.costs.setup, 0, None);
        Ok(())
    }

    /// Grants `min(requested, maxvl)` and makes it the current `vl`.
    pub fn setvlen(&mut self, requested: usize) -> usize {
        self.vl = requested.min(self.cfg.maxvl);
        self.log("setvlen", CostClass::ScalarMove, self.cfg.costs.scalar_move, 0, None);
        self.vl
    }

    /// Moves a scalar value into an address register.
    pub fn vmca(&mut self, areg: usize, value: u64) -> Result<()> {
        if areg >= self.cfg.num_aregs {
            return Err(Error::config(format!(
                "address register va{areg} out of range ({} available)",
                self.cfg.num_aregs
            )));
        }
        self.aregs[areg] = value;
        self.log("vmca", CostClass::ScalarMove, self.cfg.costs.scalar_move, 0, None);
        Ok(())
    }

    /// Host-side integer work (offset arithmetic and the like): `ops`
    /// scalar-move units.
    pub fn scalar_ops(&mut self, ops: u64) {
        self.log("alu", CostClass::ScalarMove, ops * self.cfg.costs.scalar_move, 0, None);
    }

    /// Hints every line of an upcoming strip footprint to the prefetcher;
    /// charged as one instruction.
    pub fn prefetch(&mut self, footprint: Footprint) {
        let line_bytes = self.model.config().line_bytes;
        let mut last_line = None;
        for (addr, width) in footprint.elems() {
            let first = self.model.line_of(addr).max(last_line.map_or(0, |l| l + 1));
            let end = self.model.line_of(addr + width.max(1) - 1);
            for line in first..=end {
                self.model.prefetch_hint((line * line_bytes).max(addr));
            }
            last_line = Some(end.max(last_line.unwrap_or(0)));
        }
        self.log("pf", CostClass::Prefetch, self.cfg.costs.prefetch, 0, Some(footprint));
    }

    /// Dispatches a registered kernel over the current `vl`.
    pub fn vfetch(&mut self, kernel: &str) -> Result<()> {
        let program = self
            .kernels
            .get(kernel)
            .cloned()
            .ok_or_else(|| Error::Dispatch(kernel.to_string()))?;
        let (nv, np) = self.vcfg.unwrap_or((0, 0));
        if program.vregs > nv || program.pregs > np || program.aregs > self.cfg.num_aregs {
            return Err(Error::config(format!(
                "kernel `{}` needs {} vregs / {} pregs, configured {nv} / {np}",
                program.name, program.vregs, program.pregs
            )));
        }
        self.log("vf", CostClass::FetchDispatch, self.cfg.costs.fetch_dispatch, 0, None);
        if self.vl == 0 {
            return Ok(());
        }
        for inst in &program.body {
            self.exec(inst)?;
        }
        self.model.advance_epoch();
        Ok(())
    }

    /// Orders all earlier vector stores before later host reads.
    pub fn fence(&mut self) {
        self.log(trace::MNEMONIC_FENCE, CostClass::Fence, self.cfg.costs.fence, 0, None);
    }

    // ---- vector execution ----

    fn footprint(&self, base: usize, stride: Option<usize>, ety: ElemType) -> Footprint {
        Footprint {
            base: self.aregs[base],
            stride: stride.map_or(ety.bytes(), |r| self.aregs[r]),
            count: self.vl as u64,
            width: ety.bytes(),
        }
    }

    fn check_footprint(&mut self, f: Footprint) -> Result<()> {
        for (addr, width) in f.elems() {
            if addr < MEMORY_BASE || !self.model.is_mapped(addr, width) {
                self.log("fault", CostClass::Host, 0, 0, Some(f));
                return Err(Error::MemoryFault { addr, width });
            }
        }
        Ok(())
    }

    fn active(&self, pred: Option<usize>) -> Result<Vec<bool>> {
        match pred {
            None => Ok(vec![true; self.vl]),
            Some(p) => {
                let mask = &self.pregs[p];
                Ok((0..self.vl).map(|t| mask.get(t).copied().unwrap_or(false)).collect())
            }
        }
    }

    fn src(&self, vs: usize, want: ElemType) -> Result<&[u32]> {
        let r = &self.vregs[vs];
        if r.ety != Some(want) || r.lanes.len() < self.vl {
            return Err(Error::config(format!(
                "v{vs} holds {:?} x {}, instruction needs {want:?} x {}",
                r.ety,
                r.lanes.len(),
                self.vl
            )));
        }
        Ok(&r.lanes[..self.vl])
    }

    fn exec(&mut self, inst: &VInst) -> Result<()> {
        let cost = self.cfg.costs.strip_compute;
        let mnemonic = inst.mnemonic();
        match *inst {
            VInst::Load {
                vd,
                base,
                stride,
                ety,
                pred,
            } => {
                let f = self.footprint(base, stride, ety);
                self.check_footprint(f)?;
                let mask = self.active(pred)?;
                let stall = self.model.bulk_access(
                    f.elems().zip(&mask).filter(|(_, on)| **on).map(|(e, _)| e),
                    AccessKind::Read,
                )?;
                let mut lanes = std::mem::take(&mut self.vregs[vd].lanes);
                lanes.resize(self.vl, 0);
                for (t, (addr, width)) in f.elems().enumerate() {
                    if mask[t] {
                        let at = (addr - MEMORY_BASE) as usize;
                        lanes[t] = read_lane(&self.mem[at..at + width as usize], ety);
                    }
                }
                self.vregs[vd] = VReg {
                    ety: Some(ety),
                    lanes,
                };
                self.log(mnemonic, CostClass::StripCompute, cost, stall, Some(f));
            }
            VInst::Store {
                vs,
                base,
                stride,
                ety,
                pred,
            } => {
                let f = self.footprint(base, stride, ety);
                let lanes = self.src(vs, ety)?.to_vec();
                self.check_footprint(f)?;
                let mask = self.active(pred)?;
                let stall = self.model.bulk_access(
                    f.elems().zip(&mask).filter(|(_, on)| **on).map(|(e, _)| e),
                    AccessKind::Write,
                )?;
                for (t, (addr, width)) in f.elems().enumerate() {
                    if mask[t] {
                        let at = (addr - MEMORY_BASE) as usize;
                        write_lane(&mut self.mem[at..at + width as usize], ety, lanes[t]);
                    }
                }
                self.log(mnemonic, CostClass::StripCompute, cost, stall, Some(f));
            }
            VInst::Quantize { vd, vs, scale } => {
                let s = f32::from_bits(self.aregs[scale] as u32);
                let out = self
                    .src(vs, ElemType::F32)?
                    .iter()
                    .map(|&b| {
                        let q = (f32::from_bits(b) / s).round().clamp(-128.0, 127.0) as i8;
                        q as u8 as u32
                    })
                    .collect();
                self.set_vreg(vd, ElemType::I8, out);
                self.log(mnemonic, CostClass::StripCompute, cost, 0, None);
            }
            VInst::Dequantize { vd, vs, scale } => {
                let s = f32::from_bits(self.aregs[scale] as u32);
                let out = self
                    .src(vs, ElemType::I8)?
                    .iter()
                    .map(|&b| ((b as u8 as i8) as f32 * s).to_bits())
                    .collect();
                self.set_vreg(vd, ElemType::F32, out);
                self.log(mnemonic, CostClass::StripCompute, cost, 0, None);
            }
            VInst::U8ToF32 { vd, vs, divisor } => {
                let d = f32::from_bits(self.aregs[divisor] as u32);
                let out = self
                    .src(vs, ElemType::U8)?
                    .iter()
                    .map(|&b| (b as u8 as f32 / d).to_bits())
                    .collect();
                self.set_vreg(vd, ElemType::F32, out);
                self.log(mnemonic, CostClass::StripCompute, cost, 0, None);
            }
            VInst::SetPred { pd, value } => {
                self.pregs[pd] = vec![value; self.vl];
                self.log(mnemonic, CostClass::StripCompute, cost, 0, None);
            }
        }
        Ok(())
    }

    fn set_vreg(&mut self, vd: usize, ety: ElemType, lanes: Vec<u32>) {
        self.vregs[vd] = VReg {
            ety: Some(ety),
            lanes,
        };
    }
}

fn read_lane(bytes: &[u8], ety: ElemType) -> u32 {
    match ety {
        ElemType::F32 => u32::from_le_bytes(bytes.try_into().unwrap()),
        ElemType::I8 | ElemType::U8 => bytes[0] as u32,
    }
}

fn write_lane(bytes: &mut [u8], ety: ElemType, lane: u32) {
    match ety {
        ElemType::F32 => bytes.copy_from_slice(&lane.to_le_bytes()),
        ElemType::I8 | ElemType::U8 => bytes[0] = lane as u8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vm(maxvl: usize) -> Vm {
        Vm::new(
            VmConfig {
                maxvl,
                ..VmConfig::default()
            },
            CacheConfig::default(),
        )
        .unwrap()
    }

    fn copy_kernel(ety: ElemType) -> VectorKernelProgram {
        VectorKernelProgram::new(
            "copy",
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
                    stride: Some(3),
                    ety,
                    pred: None,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn setvcfg_limits() {
        let mut m = vm(2048);
        m.setvcfg(1, 1).unwrap();
        assert_eq!(m.vcfg(), Some((1, 1)));
        assert!(matches!(m.setvcfg(0, 1), Err(Error::Config(_))));
        assert!(m.setvcfg(33, 0).is_err());
        assert!(m.setvcfg(1, 17).is_err());
        assert_eq!(m.cycles().total, 4);
    }

    #[test]
    fn setvlen_caps_at_maxvl() {
        let mut m = vm(2048);
        assert_eq!(m.setvlen(5000), 2048);
        assert_eq!(m.setvlen(100), 100);
        assert_eq!(m.setvlen(0), 0);
        assert_eq!(m.vl(), 0);
    }

    #[test]
    fn strip_plans() {
        assert!(strip_plan(0, 2048).strips.is_empty());
        assert_eq!(
            strip_plan(5000, 2048).strips,
            vec![(0, 2048), (2048, 2048), (4096, 904)]
        );
        assert_eq!(strip_plan(2048, 2048).strips, vec![(0, 2048)]);
    }

    #[test]
    fn vmca_records_and_bounds() {
        let mut m = vm(8);
        m.vmca(2, 128).unwrap();
        assert_eq!(m.areg(2), Some(128));
        m.vmca(0, MEMORY_BASE).unwrap();
        assert_eq!(m.areg(0), Some(MEMORY_BASE));
        assert!(matches!(m.vmca(32, 0), Err(Error::Config(_))));
    }

    #[test]
    fn unit_and_strided_load() {
        let mut m = vm(8);
        m.setvcfg(1, 0).unwrap();
        m.register_kernel(copy_kernel(ElemType::F32));
        let src = m.alloc(64 * 4);
        let dst = m.alloc(16);
        let data: Vec<f32> = (0..64).map(|x| x as f32).collect();
        m.write_f32(src, &data).unwrap();

        m.setvlen(4);
        m.vmca(0, src).unwrap();
        m.vmca(1, dst).unwrap();
        m.vmca(2, 4).unwrap();
        m.vmca(3, 4).unwrap();
        m.vfetch("copy").unwrap();
        m.fence();
        assert_eq!(m.read_f32(dst, 4).unwrap(), vec![0.0, 1.0, 2.0, 3.0]);

        // stride of 32 elements gathers one channel lane across two pixels
        m.setvlen(2);
        m.vmca(0, src + 4).unwrap();
        m.vmca(2, 128).unwrap();
        m.vfetch("copy").unwrap();
        m.fence();
        assert_eq!(m.read_f32(dst, 2).unwrap(), vec![1.0, 33.0]);
    }

    #[test]
    fn out_of_bounds_load_faults_and_is_traced() {
        let mut m = vm(8);
        m.setvcfg(1, 0).unwrap();
        m.register_kernel(copy_kernel(ElemType::F32));
        let src = m.alloc(16);
        let dst = m.alloc(16);
        m.setvlen(4);
        m.vmca(0, src + 4096).unwrap();
        m.vmca(1, dst).unwrap();
        m.vmca(2, 4).unwrap();
        m.vmca(3, 4).unwrap();
        assert!(matches!(m.vfetch("copy"), Err(Error::MemoryFault { .. })));
        assert_eq!(m.trace().last().unwrap().mnemonic, "fault");
    }

    #[test]
    fn unit_store_touches_line_count() {
        let mut m = vm(64);
        m.setvcfg(1, 0).unwrap();
        m.register_kernel(copy_kernel(ElemType::F32));
        let src = m.alloc(40 * 4);
        let dst = m.alloc(40 * 4);
        m.setvlen(40);
        m.vmca(0, src).unwrap();
        m.vmca(1, dst).unwrap();
        m.vmca(2, 4).unwrap();
        m.vmca(3, 4).unwrap();
        m.vfetch("copy").unwrap();
        // 160 bytes: 3 lines each way
        assert_eq!(m.cache_stats().accesses, 3 + 3);
    }

    #[test]
    fn store_then_load_sees_new_data() {
        let mut m = vm(8);
        m.setvcfg(1, 0).unwrap();
        m.register_kernel(copy_kernel(ElemType::I8));
        let a = m.alloc(8);
        let b = m.alloc(8);
        m.write_i8(a, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        m.setvlen(8);
        for (r, v) in [(0, a), (1, b), (2, 1), (3, 1)] {
            m.vmca(r, v).unwrap();
        }
        m.vfetch("copy").unwrap();
        // copy b back over a shifted by one
        m.vmca(0, b).unwrap();
        m.vmca(1, a).unwrap();
        m.setvlen(7);
        m.vfetch("copy").unwrap();
        m.fence();
        assert_eq!(m.read_i8(a, 8).unwrap(), vec![1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn vfetch_accounting() {
        let mut m = vm(8);
        assert!(matches!(m.vfetch("nope"), Err(Error::Dispatch(_))));
        m.register_kernel(copy_kernel(ElemType::F32));
        // no setvcfg yet
        assert!(matches!(m.vfetch("copy"), Err(Error::Config(_))));
        m.setvcfg(1, 0).unwrap();
        m.setvlen(0);
        m.vfetch("copy").unwrap();
        let dispatches = m.trace().iter().filter(|e| e.mnemonic == "vf").count();
        assert_eq!(dispatches, 1);
        assert_eq!(m.trace().last().unwrap().cycles, 2);
        assert_eq!(m.cycles().total, 4 + 1 + 2);
    }

    #[test]
    fn empty_program_costs_nothing() {
        let m = vm(8);
        assert_eq!(m.cycles(), CycleReport::default());
    }

    #[test]
    fn fence_costs_each_time() {
        let mut m = vm(8);
        m.fence();
        m.fence();
        assert_eq!(m.cycles().total, 2);
        assert!(trace::lint(m.trace()).is_empty());
    }

    #[test]
    fn lint_flags_missing_fence() {
        let mut m = vm(8);
        m.setvcfg(1, 0).unwrap();
        m.register_kernel(copy_kernel(ElemType::F32));
        let a = m.alloc(16);
        let b = m.alloc(16);
        m.setvlen(4);
        for (r, v) in [(0, a), (1, b), (2, 4), (3, 4)] {
            m.vmca(r, v).unwrap();
        }
        m.vfetch("copy").unwrap();
        m.read_f32(b, 4).unwrap();
        assert_eq!(trace::lint(m.trace()).len(), 1);
        m.fence();
        m.read_f32(b, 4).unwrap();
        assert_eq!(trace::lint(m.trace()).len(), 1);
    }

    #[test]
    fn predicate_masks_lanes() {
        let mut m = vm(8);
        m.setvcfg(1, 1).unwrap();
        let body = vec![
            VInst::SetPred { pd: 0, value: true },
            VInst::Load {
                vd: 0,
                base: 0,
                stride: Some(2),
                ety: ElemType::I8,
                pred: Some(0),
            },
            VInst::Store {
                vs: 0,
                base: 1,
                stride: Some(2),
                ety: ElemType::I8,
                pred: Some(0),
            },
        ];
        m.register_kernel(VectorKernelProgram::new("pcopy", body).unwrap());
        let a = m.alloc(4);
        let b = m.alloc(4);
        m.write_i8(a, &[9, 8, 7, 6]).unwrap();
        m.setvlen(4);
        for (r, v) in [(0, a), (1, b), (2, 1)] {
            m.vmca(r, v).unwrap();
        }
        m.vfetch("pcopy").unwrap();
        m.fence();
        assert_eq!(m.read_i8(b, 4).unwrap(), vec![9, 8, 7, 6]);
    }

    #[test]
    fn trace_total_matches_cycles() {
        let mut m = vm(4);
        m.setvcfg(1, 0).unwrap();
        m.register_kernel(copy_kernel(ElemType::F32));
        let a = m.alloc(64);
        let b = m.alloc(64);
        for k in 0..4u64 {
            m.setvlen(4);
            for (r, v) in [(0, a + 16 * k), (1, b + 16 * k), (2, 4), (3, 4)] {
                m.vmca(r, v).unwrap();
            }
            m.vfetch("copy").unwrap();
        }
        m.fence();
        let sum: u64 = m.trace().iter().map(|e| e.cycles + e.stall_cycles).sum();
        assert_eq!(sum, m.cycles().total);
        assert!(m.cycles().stalls > 0);
    }
}
