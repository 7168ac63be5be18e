//! Image decoding and resizing to the fixed model input.

use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use memefuse_core::corpus::MemeRecord;
use memefuse_core::image::{ImageTensor, IMAGE_SIDE};
use memefuse_core::train::Example;
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
#[error("cannot decode image {path}: {reason}")]
pub struct DecodeFailure {
    pub path: String,
    pub reason: String,
}

/// Checks that `path` is a readable image without decoding its pixels.
pub fn probe(path: &Path) -> image::ImageResult<(u32, u32)> {
    image::image_dimensions(path)
}

/// Forces RGB, resizes bilinearly to `150 x 150` and scales to `[0, 1]`.
pub fn to_tensor(img: DynamicImage) -> ImageTensor {
    let mut rgb = img.into_rgb8();
    let side = IMAGE_SIDE as u32;
    if rgb.dimensions() != (side, side) {
        rgb = image::imageops::resize(&rgb, side, side, FilterType::Triangle);
    }
    ImageTensor::from_rgb8(IMAGE_SIDE, IMAGE_SIDE, rgb.as_raw()).expect("resized to the model input")
}

pub fn preprocess_image(path: &Path) -> Result<ImageTensor, DecodeFailure> {
    let img = image::open(path).map_err(|e| DecodeFailure {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok(to_tensor(img))
}

/// Decodes every record's image in parallel; output order follows input order.
///
/// The error names the failing record id.
pub fn load_examples(records: &[MemeRecord], image_root: &Path) -> Result<Vec<Example>, (String, DecodeFailure)> {
    records
        .par_iter()
        .map(|r| {
            let image = preprocess_image(&image_root.join(&r.image_ref)).map_err(|e| (r.id.clone(), e))?;
            Ok(Example {
                id: r.id.clone(),
                image: Some(image),
                caption: r.caption.clone(),
                label: r.label,
            })
        })
        .collect()
}

/// Examples without images, for text-only models.
pub fn text_examples(records: &[MemeRecord]) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example {
            id: r.id.clone(),
            image: None,
            caption: r.caption.clone(),
            label: r.label,
        })
        .collect()
}
