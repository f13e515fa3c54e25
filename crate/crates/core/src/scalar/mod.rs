//! Scalar reference implementations.
//!
//! Everything here is the ground truth the vector kernels are checked
//! against, so the code favors plain loops over cleverness.

mod cnn;
mod detect;
mod image;
mod quant;

pub use cnn::{conv2d_ref, maxpool2x2, relu, upsample_nearest};
pub use detect::{
    decode_box, iou, nms, nms_indices, score_filter, sigmoid, yolo_loss, BBox, CornerBox,
    LossParams, LossTerms, RawPrediction,
};
pub use image::{
    encode_ppm, letterbox_geometry, letterbox_preprocess, load_ppm, normalize_planes, parse_ppm,
    resize_bilinear_plane, write_ppm, Image, LetterboxGeometry, LETTERBOX_FILL, PIXEL_DIVISOR,
};
pub use quant::{
    compute_scale, dequantize, dequantize_value, quantize, quantize_value, QuantParams,
};
