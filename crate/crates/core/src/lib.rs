mod binio;

pub mod action;
pub mod config;
pub mod datapipe;
pub mod eval;
pub mod graspnet;
pub mod pipeline;
pub mod policy;
pub mod simenv;
pub mod tensor;
pub mod trainer;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensor.md")]
    mod tensor {}
    #[doc = include_str!("../../../book/src/simenv.md")]
    mod simenv {}
    #[doc = include_str!("../../../book/src/graspnet.md")]
    mod graspnet {}
    #[doc = include_str!("../../../book/src/datapipe.md")]
    mod datapipe {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/trainer.md")]
    mod trainer {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
