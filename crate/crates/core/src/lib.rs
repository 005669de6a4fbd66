//! Object-based neural style transfer on top of a single deep network.
//!
//! One pretrained segmentation network is loaded once and used twice: its
//! detection/mask head segments the objects to stylize, and its backbone
//! supplies the differentiable feature taps that drive Gram-matrix style
//! optimization. Stylized objects are then composited back into the original
//! image through binary masks, leaving every background pixel untouched.
//!
//! Modules:
//! - [`imaging`]: image I/O, resizing, clamping, the canonical `[0,1]` pixel
//!   representation.
//! - [`net`]: weights loading, backbone feature extraction with input
//!   gradients, instance segmentation, target selection.
//! - [`styletransfer`]: content/style/total losses and the pixel-space
//!   optimization loop.
//! - [`blending`]: mask binarization, feathering and compositing.
//! - [`pipeline`]: end-to-end orchestration of one run with any number of
//!   (style, target) jobs.

pub mod blending;
pub mod imaging;
pub mod net;
pub mod pipeline;
pub mod styletransfer;
pub mod tensor;

pub use imaging::{Image, Plane};
pub use net::{BackboneModel, Detection, FeatureMap, TapSpec, TargetSelector};
pub use styletransfer::{LossTrace, StyleTransferConfig};
