//! Scalar vs. vector cycles for the layout conversion at each size class.

use vecboost::bench::{scalar_cycles, vector_cycles, SizeClass, SocConfig, Workload};
use vecboost::KernelKind;

fn main() -> vecboost::Result<()> {
    let soc = SocConfig::default();
    println!("size    scalar      vector      +prefetch   speedup");
    for size in SizeClass::ALL {
        let wl = Workload::for_size(KernelKind::Fd2Nchw, size);
        let s = scalar_cycles(&wl, &soc)?;
        let off = vector_cycles(&wl, &soc, false, 0)?;
        let on = vector_cycles(&wl, &soc, true, 0)?;
        println!(
            "{:<7} {:<11} {:<11} {:<11} {:.2}x",
            size.name(),
            s.cycles,
            off.cycles,
            on.cycles,
            s.cycles as f64 / on.cycles as f64
        );
    }
    Ok(())
}
