//! Confusion-matrix heatmap as PNG, annotated with raw counts.
//!
//! Text is drawn from a built-in 5x7 bitmap font so output is pixel-identical everywhere.

use std::path::Path;

use image::{Rgb, RgbImage};
use memefuse_core::metrics::ConfusionMatrix;
use memefuse_core::Label;

const CELL: u32 = 140;
const LEFT: u32 = 130;
const TOP: u32 = 70;
const BOTTOM: u32 = 50;
const SCALE: u32 = 3;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([20, 20, 20]);

/// Cell text, indexed `[actual][predicted]` with troll first.
pub fn cell_annotations(cm: &ConfusionMatrix) -> [[String; 2]; 2] {
    Label::ALL.map(|a| Label::ALL.map(|p| cm.get(a, p).to_string()))
}

fn glyph(c: char) -> Option<[u8; 7]> {
    // each row is 5 bits, most significant on the left
    Some(match c {
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        'a' => [0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f],
        'c' => [0x00, 0x00, 0x0e, 0x10, 0x10, 0x11, 0x0e],
        'd' => [0x01, 0x01, 0x0d, 0x13, 0x11, 0x11, 0x0f],
        'e' => [0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e],
        'i' => [0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e],
        'l' => [0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e],
        'n' => [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11],
        'o' => [0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e],
        'p' => [0x00, 0x00, 0x1e, 0x11, 0x1e, 0x10, 0x10],
        'r' => [0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10],
        't' => [0x08, 0x08, 0x1c, 0x08, 0x08, 0x09, 0x06],
        'u' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d],
        '-' => [0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00],
        ' ' => [0; 7],
        _ => return None,
    })
}

fn text_width(s: &str, scale: u32) -> u32 {
    (s.chars().count() as u32 * 6).saturating_sub(1) * scale
}

fn draw_text(img: &mut RgbImage, s: &str, x: u32, y: u32, scale: u32, color: Rgb<u8>) {
    for (i, c) in s.chars().enumerate() {
        let rows = glyph(c).unwrap_or([0x1f; 7]);
        let ox = x + i as u32 * 6 * scale;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..5 {
                if bits >> (4 - col) & 1 == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let (px, py) = (ox + col * scale + dx, y + r as u32 * scale + dy);
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, color);
                        }
                    }
                }
            }
        }
    }
}

fn centered(img: &mut RgbImage, s: &str, cx: u32, cy: u32, scale: u32, color: Rgb<u8>) {
    let x = cx.saturating_sub(text_width(s, scale) / 2);
    let y = cy.saturating_sub(7 * scale / 2);
    draw_text(img, s, x, y, scale, color);
}

/// White to deep blue by the cell's share of the largest count.
fn shade(count: u64, max: u64) -> Rgb<u8> {
    let t = if max == 0 { 0.0 } else { count as f64 / max as f64 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(240.0, 8.0), lerp(245.0, 48.0), lerp(255.0, 107.0)])
}

pub fn render_confusion(cm: &ConfusionMatrix) -> RgbImage {
    let (w, h) = (LEFT + 2 * CELL + 20, TOP + 2 * CELL + BOTTOM);
    let mut img = RgbImage::from_pixel(w, h, BG);
    let notes = cell_annotations(cm);
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0);
    for (a, actual) in Label::ALL.iter().enumerate() {
        for (p, predicted) in Label::ALL.iter().enumerate() {
            let count = cm.get(*actual, *predicted);
            let fill = shade(count, max);
            let (x0, y0) = (LEFT + p as u32 * CELL, TOP + a as u32 * CELL);
            for y in y0..y0 + CELL {
                for x in x0..x0 + CELL {
                    img.put_pixel(x, y, fill);
                }
            }
            let dark = u32::from(fill[0]) + u32::from(fill[1]) + u32::from(fill[2]) < 384;
            let ink = if dark { BG } else { INK };
            centered(&mut img, &notes[a][p], x0 + CELL / 2, y0 + CELL / 2, SCALE + 1, ink);
        }
    }
    for (i, label) in Label::ALL.iter().enumerate() {
        let mid = i as u32 * CELL + CELL / 2;
        centered(&mut img, label.as_str(), LEFT + mid, TOP - 20, 2, INK);
        centered(&mut img, label.as_str(), LEFT / 2, TOP + mid, 2, INK);
    }
    centered(&mut img, "predicted", LEFT + CELL, TOP - 50, 2, INK);
    centered(&mut img, "actual", LEFT / 2, TOP - 20, 2, INK);
    img
}

pub fn plot_confusion(cm: &ConfusionMatrix, out: &Path) -> image::ImageResult<()> {
    render_confusion(cm).save(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(img: &RgbImage, a: u32, p: u32) -> Vec<u8> {
        let (x0, y0) = (LEFT + p * CELL, TOP + a * CELL);
        image::imageops::crop_imm(img, x0, y0, CELL, CELL).to_image().into_raw()
    }

    #[test]
    fn annotations_are_raw_counts() {
        let cm = ConfusionMatrix::from_counts([[319, 76], [185, 87]]);
        assert_eq!(cell_annotations(&cm), [["319", "76"], ["185", "87"]].map(|r| r.map(String::from)));
    }

    #[test]
    fn symmetric_matrix_draws_identical_cells() {
        let cm = ConfusionMatrix::from_counts([[5, 5], [5, 5]]);
        assert!(cell_annotations(&cm).iter().flatten().all(|s| s == "5"));
        let img = render_confusion(&cm);
        let first = cell(&img, 0, 0);
        for (a, p) in [(0, 1), (1, 0), (1, 1)] {
            assert_eq!(cell(&img, a, p), first);
        }
        // the annotation actually inked something
        assert!(first.chunks(3).any(|px| px[0] == 255));
        assert!(first.chunks(3).any(|px| px[0] != 255));
    }

    #[test]
    fn png_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cm = ConfusionMatrix::from_counts([[392, 3], [266, 6]]);
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        plot_confusion(&cm, &a).unwrap();
        plot_confusion(&cm, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn every_label_character_has_a_glyph() {
        for s in ["troll", "not-troll", "predicted", "actual", "0123456789"] {
            assert!(s.chars().all(|c| glyph(c).is_some()), "{s}");
        }
    }
}
