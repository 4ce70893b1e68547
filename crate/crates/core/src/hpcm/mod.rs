//! Hierarchical progressive context model and the hyperprior.

mod coding;
mod hyper;
mod schedule;

pub use coding::{
    decode_latent, encode_latent, predict_params, HpcmWeights, LatentCode, LatentConfig, ScaleWeights, StepParams,
    LOG_SIGMA_LIMIT,
};
pub use hyper::{
    condition_features, hyper_analysis, hyper_decode, hyper_encode, hyper_synthesis, HyperCode, HyperLatent,
    HyperWeights, SCALE_LOGIT_LIMIT,
};
pub use schedule::{
    build_schedule, scale_end, scale_of, scale_of_step, step_of, upscale_writeback, CodingSchedule, CodingStep,
    MIN_GRID, STEPS_PER_SCALE, STEP_COUNT,
};
