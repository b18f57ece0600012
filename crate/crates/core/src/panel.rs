//! Figure-panel rendering: a 4-row x 6-column grayscale grid.
//!
//! Rows are frames 1, 5, 9, 13 of a 16-frame sample; columns are the
//! input, the predicted background, the unsupervised mask, the input
//! minus the background, the supervised mask, and the ground-truth label.
//! Each cell is min-max normalized independently for display. Output is a
//! binary PGM (P5, maxval 255).

use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::error::TensorError;
use crate::loss::{frame_differential, LossError};
use crate::tensor::Tensor;

/// Frames shown in the grid (0-based picks of the 1st, 5th, 9th, 13th).
pub const FRAME_PICKS: [usize; 4] = [0, 4, 8, 12];
pub const COLUMNS: [&str; 6] = ["Input", "Hyde", "Jekyll", "Subtr", "Utterson", "Label"];
pub const GUTTER: usize = 4;
const GUTTER_VALUE: u8 = 128;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("panel inputs disagree: {0}")]
    Inconsistent(String),
    #[error("sample has {frames} frames; the panel needs at least {needed}")]
    TooFewFrames { frames: usize, needed: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// An 8-bit grayscale image.
#[derive(Debug, Clone)]
pub struct PanelImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl PanelImage {
    pub fn write_pgm<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn save_pgm(&self, path: &Path) -> io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pgm(&mut f)
    }

    /// The pixel rectangle of a grid cell, as (x0, y0, w, h).
    pub fn cell_rect(cell_w: usize, cell_h: usize, row: usize, col: usize) -> (usize, usize, usize, usize) {
        (col * (cell_w + GUTTER), row * (cell_h + GUTTER), cell_w, cell_h)
    }
}

/// The rendered grid plus the raw (pre-normalization) background
/// subtraction, kept so the Subtr column can be audited bit-for-bit.
pub struct RenderedPanels {
    pub image: PanelImage,
    pub subtraction: Tensor,
}

fn frame_slice(data: &[f32], n: usize, plane: usize) -> &[f32] {
    &data[n * plane..(n + 1) * plane]
}

/// Writes one min-max normalized cell into the grid.
fn blit(
    image: &mut PanelImage,
    frame: &[f32],
    w: usize,
    h: usize,
    row: usize,
    col: usize,
) {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in frame {
        min = min.min(v);
        max = max.max(v);
    }
    let span = max - min;
    let (x0, y0, _, _) = PanelImage::cell_rect(w, h, row, col);
    for x in 0..w {
        for y in 0..h {
            let v = frame[x * h + y];
            let byte = if span > 0.0 {
                ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            image.pixels[(y0 + y) * image.width + (x0 + x)] = byte;
        }
    }
}

fn expect_shape(name: &str, t: &Tensor, shape: &[usize]) -> Result<(), PanelError> {
    if t.shape() != shape {
        return Err(PanelError::Inconsistent(format!(
            "{name} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Assembles the panel grid for one sample. `input`, `mask_out`
/// (unsupervised), `supervised_out`, and `labels` are `[1,1,N,W,H]`;
/// `background_out` is `[1,1,1,W,H]`.
pub fn render_panels(
    input: &Tensor,
    mask_out: &Tensor,
    background_out: &Tensor,
    supervised_out: &Tensor,
    labels: &Tensor,
) -> Result<RenderedPanels, PanelError> {
    let s = input.shape().to_vec();
    if s.len() != 5 || s[0] != 1 || s[1] != 1 {
        return Err(PanelError::Inconsistent(format!(
            "input must be [1,1,N,W,H], got {s:?}"
        )));
    }
    let (frames, w, h) = (s[2], s[3], s[4]);
    let needed = FRAME_PICKS[FRAME_PICKS.len() - 1] + 1;
    if frames < needed {
        return Err(PanelError::TooFewFrames { frames, needed });
    }
    expect_shape("mask output", mask_out, &s)?;
    expect_shape("supervised output", supervised_out, &s)?;
    expect_shape("labels", labels, &s)?;
    expect_shape("background output", background_out, &[1, 1, 1, w, h])?;

    let subtraction = frame_differential(input, background_out)?;

    let rows = FRAME_PICKS.len();
    let cols = COLUMNS.len();
    let width = cols * (w + GUTTER);
    let height = rows * (h + GUTTER);
    let mut image = PanelImage {
        width,
        height,
        pixels: vec![GUTTER_VALUE; width * height],
    };

    let plane = w * h;
    let input_d = input.data();
    let mask_d = mask_out.data();
    let bg_d = background_out.data();
    let sup_d = supervised_out.data();
    let lab_d = labels.data();
    let sub_d = subtraction.data();
    for (row, &n) in FRAME_PICKS.iter().enumerate() {
        blit(&mut image, frame_slice(&input_d, n, plane), w, h, row, 0);
        blit(&mut image, &bg_d, w, h, row, 1);
        blit(&mut image, frame_slice(&mask_d, n, plane), w, h, row, 2);
        blit(&mut image, frame_slice(&sub_d, n, plane), w, h, row, 3);
        blit(&mut image, frame_slice(&sup_d, n, plane), w, h, row, 4);
        blit(&mut image, frame_slice(&lab_d, n, plane), w, h, row, 5);
    }
    drop((input_d, mask_d, bg_d, sup_d, lab_d, sub_d));

    Ok(RenderedPanels { image, subtraction })
}
