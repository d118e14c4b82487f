//! Merge a four-image context into one 2x2 raster for single-image models.

use std::sync::Arc;

use image::{Rgb, RgbImage};

use super::PromptError;
use crate::model::{ContextView, ImageRef, CONTEXT_SIZE, GRID_LABELS};

/// White gutter between cells, in pixels.
pub const GRID_GUTTER: u32 = 4;

#[derive(Debug, Clone)]
pub struct MergedGrid {
    pub raster: Arc<RgbImage>,
    /// Position phrases in slot order: top left, top right, bottom left,
    /// bottom right.
    pub labels: Vec<String>,
    /// (position label, original image id), row-major.
    pub positions: Vec<(String, String)>,
}

impl MergedGrid {
    pub fn image_at(&self, label: &str) -> Option<&str> {
        self.positions.iter().find(|(l, _)| l == label).map(|(_, id)| id.as_str())
    }

    pub fn label_of(&self, image_id: &str) -> Option<&str> {
        self.positions.iter().find(|(_, id)| id == image_id).map(|(l, _)| l.as_str())
    }

    /// The view's slots relabelled with grid positions.
    pub fn relabel(&self, view: &ContextView) -> ContextView {
        let mut out = view.clone();
        out.labels = self.labels.clone();
        out
    }
}

/// Place the view's slots row-major into a 2x2 grid. Cells take the largest
/// image size; smaller images are centred on white.
pub fn merge_grid(view: &ContextView, images: &[ImageRef], mask: bool) -> Result<MergedGrid, PromptError> {
    if view.slots.len() != CONTEXT_SIZE {
        return Err(PromptError::Contract(format!(
            "grid needs {CONTEXT_SIZE} images, got {}",
            view.slots.len()
        )));
    }
    let rasters = view
        .slots
        .iter()
        .map(|id| {
            let img = images
                .iter()
                .find(|i| i.id() == id)
                .ok_or_else(|| PromptError::MissingImage(id.clone()))?;
            Ok(img.pixels()?)
        })
        .collect::<Result<Vec<_>, PromptError>>()?;

    let cell_w = rasters.iter().map(|r| r.width()).max().unwrap_or(1);
    let cell_h = rasters.iter().map(|r| r.height()).max().unwrap_or(1);
    let mut out = RgbImage::from_pixel(2 * cell_w + GRID_GUTTER, 2 * cell_h + GRID_GUTTER, Rgb([255, 255, 255]));
    for (k, r) in rasters.iter().enumerate() {
        let col = (k % 2) as u32;
        let row = (k / 2) as u32;
        let x0 = col * (cell_w + GRID_GUTTER) + (cell_w - r.width()) / 2;
        let y0 = row * (cell_h + GRID_GUTTER) + (cell_h - r.height()) / 2;
        for (x, y, p) in r.enumerate_pixels() {
            let px = if mask { Rgb([0, 0, 0]) } else { *p };
            out.put_pixel(x0 + x, y0 + y, px);
        }
    }
    let labels: Vec<String> = GRID_LABELS.iter().map(|s| s.to_string()).collect();
    let positions = labels.iter().cloned().zip(view.slots.iter().cloned()).collect();
    Ok(MergedGrid {
        raster: Arc::new(out),
        labels,
        positions,
    })
}
