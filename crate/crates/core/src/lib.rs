//! Signal-level pseudo labels for far-field speech enhancement.
//!
//! Close-talk recordings are cut by oracle diarization, time-aligned to a
//! far-field reference with GCC-PHAT, level-aligned with a per-bin
//! multi-frame linear filter, and kept only if the SNR estimated from the
//! resulting pseudo label clears a threshold. The crate also carries the
//! training-side math that consumes those pairs: the MSE + cosine loss with
//! its gradient, ideal amplitude mask targets and feature stacking.

pub mod align;
pub mod audio;
pub mod dsp;
pub mod error;
pub mod grid;
pub mod level;
pub mod loss;
pub mod manifest;
pub mod pipeline;
pub mod snr;
pub mod synth;

pub use align::{apply_shift, gcc_phat, AlignmentResult, GccPhatOptions};
pub use audio::{cut_segment, read_wav, write_wav, AudioClip, WavEncoding};
pub use dsp::{
    istft, magnitude, make_window, stft, MagnitudeSpectrogram, Spectrogram, Stft, StftConfig,
    WindowKind,
};
pub use error::{Error, Result};
pub use grid::Grid;
pub use level::{
    apply_mflf, fcp_weights, level_align, solve_mflf, stack_frames, FilterSet, MflfConfig,
    WeightSource,
};
pub use loss::{iam_target, mca_grad, mca_loss, stack_features, McaReport};
pub use manifest::{parse_segments, PseudoLabelRecord, SegmentRecord, SnrDb, Status};
pub use pipeline::{run_manifest_file, run_tls, PipelineConfig, RunSummary};
pub use snr::{estimate_snr, filter_pairs};
pub use synth::{gen_noise, gen_rir, synth_pair, NoiseKind, SynthPair, SynthScenario};

pub use rustfft::num_complex::Complex64;
