pub mod attack;
pub mod benchmark;
pub mod dist;
pub mod error;
pub mod netsignal;
pub mod onesignal;
pub mod parallel;
pub mod simlab;
pub mod twosignal;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/dist.md")]
    struct Dist;
    #[doc = include_str!("../../../book/src/benchmark.md")]
    struct Benchmark;
    #[doc = include_str!("../../../book/src/netsignal.md")]
    struct NetSignal;
    #[doc = include_str!("../../../book/src/twosignal.md")]
    struct TwoSignal;
    #[doc = include_str!("../../../book/src/onesignal.md")]
    struct OneSignal;
    #[doc = include_str!("../../../book/src/simlab.md")]
    struct Simlab;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
