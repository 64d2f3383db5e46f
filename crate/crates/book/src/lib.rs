//! Guide chapters compiled as doctests, one module per chapter so a failing
//! snippet points at its source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/trials.md")]
pub mod trials {}
#[doc = include_str!("../../../book/src/beam-wander.md")]
pub mod beam_wander {}
#[doc = include_str!("../../../book/src/atmosphere.md")]
pub mod atmosphere {}
#[doc = include_str!("../../../book/src/orbits.md")]
pub mod orbits {}
#[doc = include_str!("../../../book/src/protocols.md")]
pub mod protocols {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
