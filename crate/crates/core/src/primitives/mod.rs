//! Building blocks shared by the broadcast pipelines.

pub mod decay;
pub mod recruit;
pub mod wave;

pub use decay::{decay_action, decay_broadcast, DecayMode, DecayParams, DecayStage, NoisePolicy};
pub use recruit::{recruiting_protocol, ChildClass, RecruitResult};
pub use wave::collision_wave_bfs;
