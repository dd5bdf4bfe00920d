//! Traversal outputs: the annotated montage, per-frame PNGs and the report.

use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use latentaudit_core::traverse::TraversalSequence;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, IoContext, Result};
use crate::imageio::save_png;

/// Tiles are upscaled (nearest neighbour) to at least this many pixels.
const MIN_TILE: usize = 160;
const GAP: usize = 4;
const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
/// Glyph cells are drawn at twice the bitmap size.
const PIXEL: usize = 2;
const ADVANCE: usize = (GLYPH_W + 1) * PIXEL;
const BAND: usize = GLYPH_H * PIXEL + 6;
const TEXT: Rgb<u8> = Rgb([230, 40, 40]);
const BACKGROUND: Rgb<u8> = Rgb([0, 0, 0]);

/// 5x7 bitmaps, one byte per row, most significant of the low five bits on
/// the left. Only the characters the annotations use.
fn glyph(ch: char) -> [u8; GLYPH_H] {
    match ch {
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
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08],
        '-' => [0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00],
        '[' => [0x0e, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0e],
        ']' => [0x0e, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0e],
        _ => [0; GLYPH_H],
    }
}

fn draw_text(img: &mut RgbImage, x0: usize, y0: usize, text: &str) {
    for (i, ch) in text.chars().enumerate() {
        for (row, bits) in glyph(ch).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - col) & 1 == 0 {
                    continue;
                }
                for dy in 0..PIXEL {
                    for dx in 0..PIXEL {
                        let (x, y) = (x0 + i * ADVANCE + col * PIXEL + dx, y0 + row * PIXEL + dy);
                        if (x as u32) < img.width() && (y as u32) < img.height() {
                            img.put_pixel(x as u32, y as u32, TEXT);
                        }
                    }
                }
            }
        }
    }
}

/// Probability pair as burned into a tile, `[p_a, p_b]` to two decimals.
pub fn annotation(p_a: f64, p_b: f64) -> String {
    format!("[{p_a:.2}, {p_b:.2}]")
}

/// One row per sequence, one column per offset; the base frame is the left
/// column and each tile carries its probability pair underneath.
pub fn montage_image(sequences: &[TraversalSequence]) -> Result<RgbImage> {
    let Some(first) = sequences.first() else {
        return Err(AuditError::validation("montage needs at least one sequence"));
    };
    let cols = first.len();
    if cols == 0 || sequences.iter().any(|s| s.len() != cols) {
        return Err(AuditError::validation("all sequences in a montage must have the same non-zero length"));
    }
    let size = first.frames[0].size();
    if sequences.iter().flat_map(|s| &s.frames).any(|f| f.size() != size) {
        return Err(AuditError::validation("montage frames must share one resolution"));
    }
    let scale = MIN_TILE.div_ceil(size).max(1);
    let tile = size * scale;
    let cell_w = tile + GAP;
    let cell_h = tile + BAND + GAP;
    let mut img = RgbImage::from_pixel((cols * cell_w + GAP) as u32, (sequences.len() * cell_h + GAP) as u32, BACKGROUND);
    for (r, seq) in sequences.iter().enumerate() {
        for (c, (frame, p)) in seq.frames.iter().zip(&seq.probs).enumerate() {
            let (x0, y0) = (GAP + c * cell_w, GAP + r * cell_h);
            let px = frame.to_u8();
            for y in 0..tile {
                for x in 0..tile {
                    let v = px[(y / scale) * size + x / scale];
                    img.put_pixel((x0 + x) as u32, (y0 + y) as u32, Rgb([v, v, v]));
                }
            }
            let text = annotation(p.p_a, p.p_b);
            let tx = x0 + tile.saturating_sub(text.len() * ADVANCE) / 2;
            draw_text(&mut img, tx, y0 + tile + 3, &text);
        }
    }
    Ok(img)
}

pub fn render_montage(sequences: &[TraversalSequence], out_path: &Path) -> Result<()> {
    let img = montage_image(sequences)?;
    img.save_with_format(out_path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => AuditError::io(out_path, io),
        other => AuditError::corrupt(out_path, other),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sequence_id: String,
    pub frame_idx: usize,
    pub offset_t: f64,
    pub p_class_a: f64,
    pub p_class_b: f64,
    pub frame_path: String,
}

pub const REPORT_HEADER: [&str; 6] = ["sequence_id", "frame_idx", "offset_t", "p_class_a", "p_class_b", "frame_path"];

pub fn frame_file_name(sequence_id: &str, frame_idx: usize) -> String {
    format!("{sequence_id}_{frame_idx}.png")
}

/// Writes every frame as `frames_dir/{sequence_id}_{frame_idx}.png` and the
/// report CSV at `out_path`, with frame paths relative to the report.
pub fn sequence_report(sequences: &[TraversalSequence], out_path: &Path, frames_dir: &Path) -> Result<()> {
    let base = out_path.parent().unwrap_or(Path::new("."));
    if !sequences.is_empty() {
        std::fs::create_dir_all(frames_dir).at(frames_dir)?;
    }
    let rel_dir = frames_dir.strip_prefix(base).unwrap_or(frames_dir);
    let mut w = csv::Writer::from_path(out_path).map_err(|e| csv_error(out_path, e))?;
    w.write_record(REPORT_HEADER).map_err(|e| csv_error(out_path, e))?;
    for seq in sequences {
        for (k, (frame, p)) in seq.frames.iter().zip(&seq.probs).enumerate() {
            let name = frame_file_name(&seq.id, k);
            save_png(frame, &frames_dir.join(&name))?;
            let rel = rel_dir.join(&name);
            w.write_record([
                seq.id.clone(),
                k.to_string(),
                (seq.base_offset + seq.offsets[k]).to_string(),
                p.p_a.to_string(),
                p.p_b.to_string(),
                rel.to_string_lossy().replace('\\', "/"),
            ])
            .map_err(|e| csv_error(out_path, e))?;
        }
    }
    w.flush().at(out_path)
}

fn csv_error(path: &Path, e: csv::Error) -> AuditError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AuditError::io(path, io),
        other => AuditError::corrupt(path, format!("{other:?}")),
    }
}

pub fn read_sequence_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader.deserialize().map(|r| r.map_err(|e| csv_error(path, e))).collect()
}
