//! Video face swapping mechanisms on toy diffusion denoisers: DDIM
//! sampling and inversion, attention feature injection, frequency-spectrum
//! attention blending and flow-guided temporal smoothing.

pub mod attention;
pub mod ddim;
pub mod denoiser;
pub mod error;
pub mod fats;
pub mod fsai;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod sweep;
pub mod synth;
pub mod tensor;

pub use attention::{
    attend, compute_qkv, tsg_replace, AttentionFeatures, AttentionHooks, FeatureCache, FeatureKey, HookStats,
    InjectPolicy, Matrix, QkvWeights,
};
pub use ddim::{ddim_step, invert, invert_step, sample, InversionKind, InversionMode, Trajectory};
pub use denoiser::{affine_eps, attentive_eps, Condition, Denoiser, DenoiserKind, DenoiserSpec, NoisePredictor};
pub use error::{Error, Result};
pub use fats::{
    bilinear_warp, block_matching_flow, estimate_video_flow, fats_blend, fats_pass, FatsChain, FatsConfig, FlowField,
};
pub use fsai::{apply_fsai_qk, fsai, irdft, rdft, FsaiAxis, FsaiConfig};
pub use io::{read_tensor, write_frame_pgm, write_tensor};
pub use metrics::{flicker_index, low_band_similarity, psnr, report, MetricsReport, PSNR_CAP_DB};
pub use pipeline::{
    finish, generate, prepare, swap_video, window_plan, FlowSource, PipelineConfig, Prepared, SwapResult,
    WindowDiagnostics,
};
pub use rng::SplitMix64;
pub use schedule::{DdimCoeffs, NoiseSchedule, ScheduleConfig};
pub use sweep::{sweep, CellMetrics, SweepGrid, SweepRow, SweepTable};
pub use synth::{synth_video, SyntheticKind, SyntheticSpec, SyntheticVideo};
pub use tensor::{Shape, Tensor4};
