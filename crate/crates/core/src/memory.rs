//! Two-level set-associative cache model with LRU replacement and a
//! software prefetch buffer.
//!
//! Scalar requests walk L1 then L2 and block for the full latency of every
//! line. Vector requests are bulk requests: with `vector_l2_direct` they skip
//! L1, each line transferred occupies the L2 port for `vector_line_cycles`,
//! and up to `vector_outstanding` line fills overlap their latency.
//!
//! Prefetched lines sit in a side buffer rather than in the caches, so a hint
//! can never evict anything. A line served from the buffer updates the caches
//! exactly as a demand miss would, which keeps replay with and without hints
//! on the same cache state.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub line_bytes: u64,
    pub l1_size: u64,
    pub l1_ways: usize,
    pub l2_size: u64,
    pub l2_ways: usize,
    pub l1_hit_latency: u32,
    pub l2_hit_latency: u32,
    pub miss_latency: u32,
    /// Strips between a hint and the first access that can use it.
    pub prefetch_distance: u64,
    pub prefetch_capacity: usize,
    pub vector_l2_direct: bool,
    pub vector_line_cycles: u32,
    pub vector_outstanding: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            line_bytes: 64,
            l1_size: 16 * 1024,
            l1_ways: 4,
            l2_size: 4 * 1024 * 1024,
            l2_ways: 16,
            l1_hit_latency: 2,
            l2_hit_latency: 20,
            miss_latency: 82,
            prefetch_distance: 1,
            prefetch_capacity: 8192,
            vector_l2_direct: true,
            vector_line_cycles: 3,
            vector_outstanding: 4,
        }
    }
}

impl CacheConfig {
    /// Same geometry as the default, every access free.
    pub fn ideal() -> Self {
        Self {
            l1_hit_latency: 0,
            l2_hit_latency: 0,
            miss_latency: 0,
            vector_line_cycles: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.line_bytes == 0 || !self.line_bytes.is_power_of_two() {
            return Err(Error::config("line size must be a power of two"));
        }
        for (name, size, ways) in [
            ("l1", self.l1_size, self.l1_ways),
            ("l2", self.l2_size, self.l2_ways),
        ] {
            if ways == 0 || size == 0 || size % (ways as u64 * self.line_bytes) != 0 {
                return Err(Error::config(format!(
                    "{name} size {size} is not a multiple of ways ({ways}) x line ({})",
                    self.line_bytes
                )));
            }
        }
        if !(self.l1_hit_latency <= self.l2_hit_latency && self.l2_hit_latency <= self.miss_latency)
        {
            return Err(Error::config("latencies must satisfy l1 <= l2 <= miss"));
        }
        if self.vector_outstanding == 0 {
            return Err(Error::config("vector_outstanding must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Port {
    Scalar,
    Vector,
}

/// Where a line was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Served {
    L1,
    Prefetch,
    L2,
    Memory,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    /// Line accesses.
    pub accesses: u64,
    /// Accesses served at first-level latency, ready prefetches included.
    pub l1_hits: u64,
    pub l2_hits: u64,
    pub misses: u64,
    pub prefetch_issued: u64,
    pub prefetch_useful: u64,
    pub stall_cycles: u64,
}

#[derive(Clone, Debug)]
struct SetAssoc {
    sets: Vec<Vec<(u64, u64)>>,
    ways: usize,
    clock: u64,
}

impl SetAssoc {
    fn new(size: u64, ways: usize, line: u64) -> Self {
        let num_sets = (size / line) as usize / ways;
        Self {
            sets: vec![Vec::with_capacity(ways); num_sets],
            ways,
            clock: 0,
        }
    }

    /// Touches `line`, filling it over the LRU way on a miss. Returns the hit.
    fn access(&mut self, line: u64) -> bool {
        self.clock += 1;
        let n = self.sets.len() as u64;
        let set = &mut self.sets[(line % n) as usize];
        let tag = line / n;
        if let Some(way) = set.iter_mut().find(|(t, _)| *t == tag) {
            way.1 = self.clock;
            return true;
        }
        if set.len() < self.ways {
            set.push((tag, self.clock));
        } else {
            let lru = set
                .iter_mut()
                .min_by_key(|(_, used)| *used)
                .expect("ways > 0");
            *lru = (tag, self.clock);
        }
        false
    }

    fn clear(&mut self) {
        self.sets.iter_mut().for_each(Vec::clear);
        self.clock = 0;
    }
}

#[derive(Clone, Debug)]
pub struct MemoryModel {
    cfg: CacheConfig,
    l1: SetAssoc,
    l2: SetAssoc,
    /// Pending hints: line to issue epoch, plus issue order for capacity
    /// eviction. The queue may hold stale entries for lines already taken.
    prefetch: HashMap<u64, u64>,
    prefetch_order: VecDeque<(u64, u64)>,
    regions: Vec<(u64, u64)>,
    stats: CacheStats,
    epoch: u64,
}

impl MemoryModel {
    pub fn new(cfg: CacheConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            l1: SetAssoc::new(cfg.l1_size, cfg.l1_ways, cfg.line_bytes),
            l2: SetAssoc::new(cfg.l2_size, cfg.l2_ways, cfg.line_bytes),
            prefetch: HashMap::new(),
            prefetch_order: VecDeque::new(),
            regions: Vec::new(),
            stats: CacheStats::default(),
            epoch: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    /// Makes `[base, base + len)` addressable.
    pub fn register(&mut self, base: u64, len: u64) {
        self.regions.push((base, len));
    }

    pub fn is_mapped(&self, addr: u64, width: u64) -> bool {
        let end = match addr.checked_add(width) {
            Some(e) => e,
            None => return false,
        };
        self.regions
            .iter()
            .any(|&(b, l)| addr >= b && end <= b + l)
    }

    fn check(&self, addr: u64, width: u64) -> Result<()> {
        if width == 0 || !self.is_mapped(addr, width) {
            return Err(Error::MemoryFault { addr, width });
        }
        Ok(())
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr / self.cfg.line_bytes
    }

    fn lines(&self, addr: u64, width: u64) -> std::ops::RangeInclusive<u64> {
        self.line_of(addr)..=self.line_of(addr + width - 1)
    }

    /// Marks the start of the next strip; prefetch readiness is measured in
    /// these epochs.
    pub fn advance_epoch(&mut self) {
        self.epoch += 1;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn take_ready_prefetch(&mut self, line: u64) -> bool {
        match self.prefetch.get(&line) {
            Some(&issued) if self.epoch - issued >= self.cfg.prefetch_distance => {
                self.prefetch.remove(&line);
                true
            }
            _ => false,
        }
    }

    fn service_line(&mut self, port: Port, line: u64) -> (Served, u32) {
        let use_l1 = port == Port::Scalar || !self.cfg.vector_l2_direct;
        self.stats.accesses += 1;
        if use_l1 && self.l1.access(line) {
            self.stats.l1_hits += 1;
            return (Served::L1, self.cfg.l1_hit_latency);
        }
        let in_l2 = self.l2.access(line);
        if !self.prefetch.is_empty() && self.take_ready_prefetch(line) {
            self.stats.l1_hits += 1;
            self.stats.prefetch_useful += 1;
            return (Served::Prefetch, self.cfg.l1_hit_latency);
        }
        if in_l2 {
            self.stats.l2_hits += 1;
            (Served::L2, self.cfg.l2_hit_latency)
        } else {
            self.stats.misses += 1;
            (Served::Memory, self.cfg.miss_latency)
        }
    }

    /// Blocking scalar access. Returns the summed latency of every touched
    /// line; stall cycles accumulate the part above the L1 hit latency.
    pub fn access(&mut self, addr: u64, width: u64, _kind: AccessKind) -> Result<u32> {
        self.check(addr, width)?;
        let mut total = 0;
        for line in self.lines(addr, width) {
            let (_, lat) = self.service_line(Port::Scalar, line);
            self.stats.stall_cycles += u64::from(lat - self.cfg.l1_hit_latency);
            total += lat;
        }
        Ok(total)
    }

    /// One vector memory instruction over `(addr, width)` elements. Each
    /// distinct line is serviced once, in first-touch order. Returns the
    /// stall cycles charged to the instruction.
    pub fn bulk_access<I>(&mut self, elems: I, _kind: AccessKind) -> Result<u64>
    where
        I: IntoIterator<Item = (u64, u64)>,
    {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        for (addr, width) in elems {
            self.check(addr, width)?;
            for line in self.lines(addr, width) {
                if seen.insert(line) {
                    order.push(line);
                }
            }
        }
        let l1 = self.cfg.l1_hit_latency;
        let mut transfer = 0u64;
        let mut latency = 0u64;
        let mut group_max = 0u32;
        let mut in_group = 0usize;
        for line in order {
            let (served, lat) = self.service_line(Port::Vector, line);
            if served != Served::L1 {
                transfer += u64::from(self.cfg.vector_line_cycles);
            }
            let excess = lat - l1;
            if excess > 0 {
                group_max = group_max.max(excess);
                in_group += 1;
                if in_group == self.cfg.vector_outstanding {
                    latency += u64::from(group_max);
                    group_max = 0;
                    in_group = 0;
                }
            }
        }
        latency += u64::from(group_max);
        let stall = transfer + latency;
        self.stats.stall_cycles += stall;
        Ok(stall)
    }

    /// Queues a fill of the line holding `addr`. Unmapped addresses are
    /// ignored.
    pub fn prefetch_hint(&mut self, addr: u64) {
        if !self.is_mapped(addr, 1) {
            return;
        }
        let line = self.line_of(addr);
        if self.cfg.prefetch_capacity == 0 || self.prefetch.contains_key(&line) {
            return;
        }
        if self.prefetch.len() == self.cfg.prefetch_capacity {
            while let Some((old, issued)) = self.prefetch_order.pop_front() {
                if self.prefetch.get(&old) == Some(&issued) {
                    self.prefetch.remove(&old);
                    break;
                }
            }
        }
        if self.prefetch_order.len() > 2 * self.cfg.prefetch_capacity.max(1) {
            let live = &self.prefetch;
            self.prefetch_order.retain(|(l, e)| live.get(l) == Some(e));
        }
        self.prefetch.insert(line, self.epoch);
        self.prefetch_order.push_back((line, self.epoch));
        self.stats.prefetch_issued += 1;
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Clears caches, queued prefetches, counters and the epoch. Registered
    /// regions stay.
    pub fn reset(&mut self) {
        self.l1.clear();
        self.l2.clear();
        self.prefetch.clear();
        self.prefetch_order.clear();
        self.stats = CacheStats::default();
        self.epoch = 0;
    }
}
