use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

/// Cost bucket an instruction is charged to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostClass {
    Setup,
    ScalarMove,
    StripCompute,
    FetchDispatch,
    Fence,
    Prefetch,
    /// Host-side reads and faults; never charged.
    Host,
}

/// Byte footprint of a memory instruction: `count` elements of `width` bytes
/// starting at `base`, `stride` bytes apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Footprint {
    pub base: u64,
    pub stride: u64,
    pub count: u64,
    pub width: u64,
}

impl Footprint {
    pub fn contiguous(base: u64, bytes: u64) -> Self {
        Self {
            base,
            stride: bytes,
            count: 1,
            width: bytes,
        }
    }

    pub fn elems(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        (0..self.count).map(move |t| (self.base + t * self.stride, self.width))
    }

    pub fn overlaps(&self, other: &Footprint) -> bool {
        // cheap reject on the hull, then exact
        let hull = |f: &Footprint| {
            if f.count == 0 {
                (0, 0)
            } else {
                (f.base, f.base + (f.count - 1) * f.stride + f.width)
            }
        };
        let (a0, a1) = hull(self);
        let (b0, b1) = hull(other);
        if a1 <= b0 || b1 <= a0 {
            return false;
        }
        let mut mine: Vec<(u64, u64)> = self.elems().map(|(a, w)| (a, a + w)).collect();
        mine.sort_unstable();
        other.elems().any(|(a, w)| {
            let end = a + w;
            let idx = mine.partition_point(|&(_, e)| e <= a);
            mine[idx..].iter().take_while(|&&(s, _)| s < end).any(|&(s, e)| s < end && a < e)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub mnemonic: &'static str,
    pub vl: usize,
    pub cycles: u64,
    pub stall_cycles: u64,
    pub class: CostClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub access: Option<Footprint>,
}

pub const TRACE_HEADER: &str = "seq, mnemonic, vl, cycles, stall_cycles";

/// One instruction per line: `seq, mnemonic, vl, cycles, stall_cycles`.
pub fn export_text(trace: &[TraceEntry]) -> String {
    let mut out = String::new();
    for e in trace {
        let _ = writeln!(
            out,
            "{}, {}, {}, {}, {}",
            e.seq, e.mnemonic, e.vl, e.cycles, e.stall_cycles
        );
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CycleReport {
    pub total: u64,
    pub compute: u64,
    pub stalls: u64,
    pub instructions: u64,
    pub by_class: BTreeMap<CostClass, u64>,
    pub by_mnemonic: BTreeMap<&'static str, u64>,
}

impl CycleReport {
    pub fn from_trace(trace: &[TraceEntry]) -> Self {
        let mut r = CycleReport::default();
        for e in trace {
            r.compute += e.cycles;
            r.stalls += e.stall_cycles;
            if e.class != CostClass::Host {
                r.instructions += 1;
            }
            *r.by_class.entry(e.class).or_default() += e.cycles;
            *r.by_mnemonic.entry(e.mnemonic).or_default() += e.cycles + e.stall_cycles;
        }
        r.total = r.compute + r.stalls;
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cycle report serializes")
    }
}

/// A host read of vector-written memory with no fence in between.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LintIssue {
    pub read_seq: u64,
    pub store_seq: u64,
}

pub const MNEMONIC_STORE: &str = "vst";
pub const MNEMONIC_HOST_READ: &str = "sread";
pub const MNEMONIC_FENCE: &str = "fence";

/// Flags every host read that observes a vector store not yet ordered by a
/// fence.
pub fn lint(trace: &[TraceEntry]) -> Vec<LintIssue> {
    let mut unfenced: Vec<(u64, Footprint)> = Vec::new();
    let mut issues = Vec::new();
    for e in trace {
        match e.mnemonic {
            MNEMONIC_FENCE => unfenced.clear(),
            MNEMONIC_STORE => {
                if let Some(f) = e.access {
                    unfenced.push((e.seq, f));
                }
            }
            MNEMONIC_HOST_READ => {
                if let Some(read) = e.access {
                    if let Some((seq, _)) = unfenced.iter().find(|(_, w)| w.overlaps(&read)) {
                        issues.push(LintIssue {
                            read_seq: e.seq,
                            store_seq: *seq,
                        });
                    }
                }
            }
            _ => {}
        }
    }
    issues
}
