//! Deterministic synthetic meme corpus for desk-scale testing.
//!
//! Troll images are warm-toned with a dark disc, not-troll images cool-toned with a bright
//! square; captions draw mostly from a class-specific lexicon. Everything derives from the
//! seed, so repeated calls write byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use memefuse_core::corpus::{MemeRecord, Split, SplitCorpus};
use memefuse_core::seed::{SeededRng, Seeds};
use memefuse_core::Label;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::manifest::write_manifest;

pub const SYNTH_IMAGE_SIDE: u32 = 180;

const TROLL_WORDS: &[&str] = &[
    "enna", "da", "comedy", "mass", "vera", "level", "scene", "podu", "kalaai", "mokka", "gethu", "bro",
];
const NOT_TROLL_WORDS: &[&str] = &[
    "good", "morning", "happy", "family", "movie", "song", "thalaivar", "vaazhthukkal", "super", "nice",
    "birthday", "friends",
];
const SHARED_WORDS: &[&str] = &["the", "oru", "intha", "and", "naan", "ippo"];

#[derive(Debug)]
pub struct SynthCorpus {
    pub manifest: PathBuf,
    pub image_root: PathBuf,
    pub corpus: SplitCorpus,
}

/// Records per class for each split: `n` for train, `max(1, n / 4)` for valid and test.
pub fn split_sizes(n_per_class: usize) -> [(Split, usize); 3] {
    let small = (n_per_class / 4).max(1);
    [(Split::Train, n_per_class), (Split::Valid, small), (Split::Test, small)]
}

fn caption(label: Label, rng: &mut SeededRng) -> String {
    let own = match label {
        Label::Troll => TROLL_WORDS,
        Label::NotTroll => NOT_TROLL_WORDS,
    };
    let len = rng.gen_range(4..=9);
    let words: Vec<&str> = (0..len)
        .map(|_| {
            let pool = if rng.gen_bool(0.75) { own } else { SHARED_WORDS };
            *pool.choose(rng).expect("non-empty lexicon")
        })
        .collect();
    let mut s = words.join(" ");
    if rng.gen_bool(0.3) {
        s.push(if label == Label::Troll { '?' } else { '!' });
    }
    s
}

fn render(label: Label, rng: &mut SeededRng) -> RgbImage {
    let side = SYNTH_IMAGE_SIDE as i32;
    let base: [i32; 3] = match label {
        Label::Troll => [rng.gen_range(170..230), rng.gen_range(40..90), rng.gen_range(30..80)],
        Label::NotTroll => [rng.gen_range(30..80), rng.gen_range(90..150), rng.gen_range(170..230)],
    };
    let size = rng.gen_range(25..45);
    let (cx, cy) = (rng.gen_range(size..side - size), rng.gen_range(size..side - size));
    let mut img = RgbImage::new(SYNTH_IMAGE_SIDE, SYNTH_IMAGE_SIDE);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (dx, dy) = (x as i32 - cx, y as i32 - cy);
        let inside = match label {
            Label::Troll => dx * dx + dy * dy <= size * size,
            Label::NotTroll => dx.abs() <= size && dy.abs() <= size,
        };
        let color = match (label, inside) {
            (_, false) => base,
            (Label::Troll, true) => [25, 20, 20],
            (Label::NotTroll, true) => [240, 240, 220],
        };
        let noise = rng.gen_range(-12..=12);
        *px = Rgb(color.map(|c| (c + noise).clamp(0, 255) as u8));
    }
    img
}

/// Writes `images/*.png` and `manifest.csv` under `out_dir`.
pub fn generate_synthetic_corpus(n_per_class: usize, seed: u64, out_dir: &Path) -> anyhow::Result<SynthCorpus> {
    anyhow::ensure!(n_per_class >= 1, "n_per_class must be at least 1");
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir)?;
    let mut rng = Seeds::new(seed).synthetic_rng();
    let mut splits: Vec<(Split, Vec<MemeRecord>)> = Vec::new();
    for (split, n) in split_sizes(n_per_class) {
        let mut records = Vec::with_capacity(2 * n);
        for i in 0..n {
            for label in Label::ALL {
                let tag = match label {
                    Label::Troll => "t",
                    Label::NotTroll => "n",
                };
                let id = format!("syn-{split}-{tag}{i:04}");
                let file = format!("images/{id}.png");
                render(label, &mut rng).save(out_dir.join(&file))?;
                records.push(MemeRecord {
                    id,
                    image_ref: file,
                    caption: caption(label, &mut rng),
                    label: Some(label),
                });
            }
        }
        splits.push((split, records));
    }
    let manifest = out_dir.join("manifest.csv");
    let rows: Vec<(Split, &MemeRecord)> = splits
        .iter()
        .flat_map(|(s, rs)| rs.iter().map(move |r| (*s, r)))
        .collect();
    write_manifest(&manifest, &rows)?;
    let mut it = splits.into_iter().map(|(_, r)| r);
    let (train, valid, test) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    Ok(SynthCorpus {
        manifest,
        image_root: out_dir.to_path_buf(),
        corpus: SplitCorpus::new(train, valid, test)?,
    })
}
