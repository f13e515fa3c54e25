use vecboost::memory::AccessKind;
use vecboost::{CacheConfig, Error, MemoryModel};

fn small() -> MemoryModel {
    let mut m = MemoryModel::new(CacheConfig {
        l1_size: 256,
        l1_ways: 2,
        l2_size: 1024,
        l2_ways: 4,
        ..CacheConfig::default()
    })
    .unwrap();
    m.register(0, 1 << 16);
    m
}

#[test]
fn lru_evicts_least_recent_way() {
    let mut m = small();
    // L1 has 2 sets of 2 ways; lines 0, 2, 4 share set 0
    for line in [0u64, 2, 0, 4] {
        m.access(line * 64, 4, AccessKind::Read).unwrap();
    }
    // 0 was refreshed, so 2 was evicted from L1 but sits in L2
    assert_eq!(m.access(0, 4, AccessKind::Read).unwrap(), 2);
    assert_eq!(m.access(2 * 64, 4, AccessKind::Read).unwrap(), 20);
}

#[test]
fn straddling_access_touches_two_lines() {
    let mut m = small();
    assert_eq!(m.access(60, 8, AccessKind::Read).unwrap(), 2 * 82);
    assert_eq!(m.access(60, 8, AccessKind::Write).unwrap(), 2 * 2);
}

#[test]
fn unmapped_access_faults() {
    let mut m = small();
    assert!(matches!(m.access(1 << 16, 4, AccessKind::Read), Err(Error::MemoryFault { .. })));
}

#[test]
fn prefetched_line_is_ready_next_epoch() {
    let mut m = small();
    m.prefetch_hint(4096);
    let same_epoch = m.bulk_access([(4096, 4)], AccessKind::Read).unwrap();
    let mut m2 = small();
    m2.prefetch_hint(4096);
    m2.advance_epoch();
    let next_epoch = m2.bulk_access([(4096, 4)], AccessKind::Read).unwrap();
    assert!(next_epoch < same_epoch);
}

#[test]
fn invalid_geometry_is_rejected() {
    let bad = CacheConfig { l1_size: 1000, ..CacheConfig::default() };
    assert!(matches!(MemoryModel::new(bad), Err(Error::Config(_))));
    let bad = CacheConfig { line_bytes: 48, ..CacheConfig::default() };
    assert!(MemoryModel::new(bad).is_err());
}

#[test]
fn reset_clears_state() {
    let mut m = small();
    m.access(0, 4, AccessKind::Read).unwrap();
    m.reset();
    assert_eq!(m.stats().accesses, 0);
    assert_eq!(m.access(0, 4, AccessKind::Read).unwrap(), 82);
}
