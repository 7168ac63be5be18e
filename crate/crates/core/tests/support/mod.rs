#![allow(dead_code)]

use memefuse_core::image::ImageTensor;
use memefuse_core::models::backbone::StubBackboneProvider;
use memefuse_core::models::textual::StubTransformerProvider;
use memefuse_core::models::Providers;
use memefuse_core::train::Example;
use memefuse_core::Label;
use memefuse_core::seed::Seeds;
use rand::Rng;

pub static BACKBONES: StubBackboneProvider = StubBackboneProvider;

pub fn providers(transformers: &StubTransformerProvider) -> Providers<'_> {
    Providers {
        backbones: &BACKBONES,
        transformers,
    }
}

/// Images whose mean brightness separates the classes; captions from disjoint word sets.
pub fn examples(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = Seeds::new(seed).synthetic_rng();
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Troll } else { Label::NotTroll };
            let base: u8 = if label == Label::Troll { 40 } else { 200 };
            let pixels: Vec<u8> = (0..150 * 150 * 3).map(|_| base.saturating_add(rng.gen_range(0..40))).collect();
            let caption = match label {
                Label::Troll => "enna da comedy mass scene",
                Label::NotTroll => "happy birthday good morning",
            };
            Example {
                id: format!("e{i}"),
                image: Some(ImageTensor::from_rgb8(150, 150, &pixels).unwrap()),
                caption: caption.into(),
                label: Some(label),
            }
        })
        .collect()
}

pub fn without_images(examples: &[Example]) -> Vec<Example> {
    examples
        .iter()
        .map(|e| Example {
            image: None,
            ..e.clone()
        })
        .collect()
}
