#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod annotate;
pub mod assignment;
pub mod beamform;
pub mod calibrate;
pub mod descriptors;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod probe;
pub mod rooge;
pub mod geometry;
pub mod io;
pub mod scalar;
pub mod scenes;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

macro_rules! precision_aliases {
    ($t:ty) => {
        pub type RoomSpec = crate::geometry::RoomSpec<$t>;
        pub type ArrayPose = crate::geometry::ArrayPose<$t>;
        pub type SourcePose = crate::geometry::SourcePose<$t>;
        pub type SceneLayout = crate::geometry::SceneLayout<$t>;
        pub type EchoAnnotation = crate::geometry::EchoAnnotation<$t>;
        pub type Rir = crate::synth::Rir<$t>;
        pub type EchoModelParams = crate::synth::EchoModelParams<$t>;
        pub type SweepSpec = crate::probe::SweepSpec<$t>;
        pub type DeconvOptions = crate::probe::DeconvOptions<$t>;
        pub type Skyline = crate::annotate::Skyline<$t>;
        pub type AnnotateConfig = crate::annotate::AnnotateConfig<$t>;
        pub type CalibrationProblem = crate::calibrate::CalibrationProblem<$t>;
        pub type CalibrationResult = crate::calibrate::CalibrationResult<$t>;
        pub type MismatchReport = crate::calibrate::MismatchReport<$t>;
        pub type DescriptorSet = crate::descriptors::DescriptorSet<$t>;
        pub type RatioDb = crate::descriptors::RatioDb<$t>;
        pub type RoomEstimate = crate::rooge::RoomEstimate<$t>;
        pub type StftSpec = crate::beamform::StftSpec<$t>;
        pub type Stft = crate::beamform::Stft<$t>;
        pub type NoiseStatistics = crate::beamform::NoiseStatistics<$t>;
        pub type BeamformScene = crate::beamform::BeamformScene<$t>;
        pub type Vec3 = crate::geometry::Vec3<$t>;
    };
}

/// Single-precision instantiations of the main types.
pub mod f32 {
    precision_aliases!(core::primitive::f32);
}

/// Double-precision instantiations of the main types.
pub mod f64 {
    precision_aliases!(core::primitive::f64);
}
