//! Independent reference models used by the integration tests. None of
//! these call into the code they check.

#![allow(dead_code)]

use std::collections::VecDeque;

use vecboost::scalar::{BBox, RawPrediction};
use vecboost::vm::{ElemType, VInst};

// ---------- LRU ----------

/// Set-associative LRU cache kept as one recency list per set, most recent
/// first.
pub struct RefLru {
    sets: Vec<VecDeque<u64>>,
    ways: usize,
}

impl RefLru {
    pub fn new(size: u64, ways: usize, line: u64) -> Self {
        let n = (size / (ways as u64 * line)) as usize;
        Self {
            sets: (0..n).map(|_| VecDeque::new()).collect(),
            ways,
        }
    }

    /// True on hit. Misses insert the line, dropping the least recent one
    /// when the set is full.
    pub fn touch(&mut self, line: u64) -> bool {
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(line % n) as usize];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            set.remove(pos);
            set.push_front(line);
            return true;
        }
        if set.len() == self.ways {
            set.pop_back();
        }
        set.push_front(line);
        false
    }
}

/// Two-level blocking hierarchy as seen from the scalar port.
pub struct RefHierarchy {
    pub l1: RefLru,
    pub l2: RefLru,
    pub line: u64,
    pub lat: (u32, u32, u32),
}

impl RefHierarchy {
    pub fn latency(&mut self, addr: u64, width: u64) -> u32 {
        let mut total = 0;
        for line in addr / self.line..=(addr + width - 1) / self.line {
            total += if self.l1.touch(line) {
                self.lat.0
            } else if self.l2.touch(line) {
                self.lat.1
            } else {
                self.lat.2
            };
        }
        total
    }
}

// ---------- vector programs ----------

/// Straight-line interpreter for kernel bodies: registers hold raw lane
/// bits, memory is a flat byte array starting at `base`.
pub struct RefMachine {
    pub base: u64,
    pub mem: Vec<u8>,
    pub vl: usize,
    pub aregs: Vec<u64>,
    pub vregs: Vec<Vec<u32>>,
    pub pregs: Vec<Vec<bool>>,
}

impl RefMachine {
    pub fn new(base: u64, mem: Vec<u8>, nv: usize, np: usize, na: usize) -> Self {
        Self {
            base,
            mem,
            vl: 0,
            aregs: vec![0; na],
            vregs: vec![Vec::new(); nv],
            pregs: vec![Vec::new(); np],
        }
    }

    fn width(ety: ElemType) -> usize {
        match ety {
            ElemType::F32 => 4,
            _ => 1,
        }
    }

    fn lane_on(&self, pred: Option<usize>, t: usize) -> bool {
        match pred {
            None => true,
            Some(p) => self.pregs[p].get(t).copied().unwrap_or(false),
        }
    }

    fn addr(&self, base: usize, stride: Option<usize>, ety: ElemType, t: usize) -> usize {
        let step = match stride {
            None => Self::width(ety) as u64,
            Some(r) => self.aregs[r],
        };
        (self.aregs[base] + t as u64 * step - self.base) as usize
    }

    pub fn run(&mut self, body: &[VInst]) {
        if self.vl == 0 {
            return;
        }
        for inst in body {
            self.step(inst);
        }
    }

    fn step(&mut self, inst: &VInst) {
        let vl = self.vl;
        match *inst {
            VInst::Load { vd, base, stride, ety, pred } => {
                let mut reg = self.vregs[vd].clone();
                reg.resize(vl, 0);
                for (t, lane) in reg.iter_mut().enumerate() {
                    if !self.lane_on(pred, t) {
                        continue;
                    }
                    let a = self.addr(base, stride, ety, t);
                    *lane = match ety {
                        ElemType::F32 => u32::from_le_bytes([
                            self.mem[a],
                            self.mem[a + 1],
                            self.mem[a + 2],
                            self.mem[a + 3],
                        ]),
                        _ => self.mem[a] as u32,
                    };
                }
                self.vregs[vd] = reg;
            }
            VInst::Store { vs, base, stride, ety, pred } => {
                for t in 0..vl {
                    if !self.lane_on(pred, t) {
                        continue;
                    }
                    let a = self.addr(base, stride, ety, t);
                    let v = self.vregs[vs][t];
                    match ety {
                        ElemType::F32 => self.mem[a..a + 4].copy_from_slice(&v.to_le_bytes()),
                        _ => self.mem[a] = v as u8,
                    }
                }
            }
            VInst::Quantize { vd, vs, scale } => {
                let s = f32::from_bits(self.aregs[scale] as u32);
                self.vregs[vd] = self.vregs[vs][..vl]
                    .iter()
                    .map(|&b| {
                        let x = f32::from_bits(b) / s;
                        if x.is_nan() {
                            return 0;
                        }
                        // half away from zero, then saturate
                        let a = x.abs();
                        let fl = a.floor();
                        let r = if a - fl >= 0.5 { fl + 1.0 } else { fl };
                        let r = if x < 0.0 { -r } else { r };
                        (r.clamp(-128.0, 127.0) as i32 as i8) as u8 as u32
                    })
                    .collect();
            }
            VInst::Dequantize { vd, vs, scale } => {
                let s = f32::from_bits(self.aregs[scale] as u32);
                self.vregs[vd] = self.vregs[vs][..vl]
                    .iter()
                    .map(|&b| (b as u8 as i8 as f32 * s).to_bits())
                    .collect();
            }
            VInst::U8ToF32 { vd, vs, divisor } => {
                let d = f32::from_bits(self.aregs[divisor] as u32);
                self.vregs[vd] = self.vregs[vs][..vl]
                    .iter()
                    .map(|&b| (b as u8 as f32 / d).to_bits())
                    .collect();
            }
            VInst::SetPred { pd, value } => {
                self.pregs[pd] = vec![value; vl];
            }
        }
    }
}

// ---------- detection ----------

/// IoU in f64 from interval overlaps.
pub fn ref_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let overlap = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| {
        let lo = if lo1 > lo2 { lo1 } else { lo2 };
        let hi = if hi1 < hi2 { hi1 } else { hi2 };
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    };
    let inter = overlap(a[0], a[2], b[0], b[2]) * overlap(a[1], a[3], b[1], b[3]);
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn corners64(b: &BBox) -> [f64; 4] {
    let (cx, cy, w, h) = (b.cx as f64, b.cy as f64, b.bw as f64, b.bh as f64);
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

/// Greedy NMS by repeated arg-max over the survivors.
pub fn ref_nms(boxes: &[BBox], thr: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..boxes.len()).collect();
    let mut keep = Vec::new();
    while !alive.is_empty() {
        let mut best = 0;
        for k in 1..alive.len() {
            let (i, j) = (alive[k], alive[best]);
            if boxes[i].objectness > boxes[j].objectness
                || (boxes[i].objectness == boxes[j].objectness && i < j)
            {
                best = k;
            }
        }
        let top = alive.remove(best);
        keep.push(top);
        let tc = corners64(&boxes[top]);
        alive.retain(|&i| ref_iou(tc, corners64(&boxes[i])) <= thr);
    }
    keep
}

pub fn ref_decode(p: &RawPrediction, grid: usize) -> [f64; 5] {
    let sig = |x: f32| 1.0 / (1.0 + (-(x as f64)).exp());
    let s = grid as f64;
    [
        (sig(p.tx) + p.cell.0 as f64) / s,
        (sig(p.ty) + p.cell.1 as f64) / s,
        p.prior.0 as f64 * (p.tw as f64).exp(),
        p.prior.1 as f64 * (p.th as f64).exp(),
        sig(p.to),
    ]
}

/// (coord, class, noobj) by direct summation in f64.
pub fn ref_loss(
    preds: &[BBox],
    truths: &[BBox],
    mask: &[bool],
    lambda_coord: f64,
    lambda_noobj: f64,
) -> (f64, f64, f64) {
    let (mut coord, mut class, mut noobj) = (0.0, 0.0, 0.0);
    for k in 0..preds.len() {
        let (p, t) = (&preds[k], &truths[k]);
        let sq = |a: f32, b: f32| (a as f64 - b as f64) * (a as f64 - b as f64);
        let sqrt_sq = |a: f32, b: f32| {
            let d = (a as f64).sqrt() - (b as f64).sqrt();
            d * d
        };
        if mask[k] {
            coord += lambda_coord * (sq(p.cx, t.cx) + sq(p.cy, t.cy));
            coord += lambda_coord * (sqrt_sq(p.bw, t.bw) + sqrt_sq(p.bh, t.bh));
            class += sq(p.objectness, t.objectness);
        } else {
            noobj += lambda_noobj * sq(p.objectness, t.objectness);
        }
    }
    (coord, class, noobj)
}

pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= abs + rel * a.abs().max(b.abs())
}
