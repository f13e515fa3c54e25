//! Scalar reference kernels, strip-mined vector versions of the same kernels
//! running on a cycle-counting vector machine, a two-level cache model, and
//! latency accounting for a heterogeneous inference pipeline.

pub mod bench;
pub mod error;
pub mod kernels;
pub mod memory;
pub mod pipeline;
pub mod scalar;
pub mod tensor;
pub mod vbt;
pub mod vm;

pub use error::{Error, Result};
pub use kernels::{KernelKind, KernelOptions};
pub use memory::{CacheConfig, CacheStats, MemoryModel};
pub use tensor::{DType, Layout, LayoutDims, Shape, Tensor, TensorData};
pub use vm::{CostTable, Vm, VmConfig};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/layouts.md")]
    mod layouts {}
    #[doc = include_str!("../../../book/src/vm.md")]
    mod vm {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/bench.md")]
    mod bench {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
