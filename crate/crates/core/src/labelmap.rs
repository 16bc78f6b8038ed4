use crate::error::{Error, Result};
use crate::hierarchy::ClassId;

/// Pixel value marking a pixel excluded from evaluation.
pub const IGNORE: u16 = u16::MAX;

/// Row-major grid of dense class ids (or [`IGNORE`]) for one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    pixels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "label map dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} label map needs {expected} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u16) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_classes(width: u32, height: u32, classes: &[ClassId]) -> Result<Self> {
        Self::new(width, height, classes.iter().map(|c| c.0).collect())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u16] {
        &mut self.pixels
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if gt.same_shape(pred) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                gt_width: gt.width,
                gt_height: gt.height,
                pred_width: pred.width,
                pred_height: pred.height,
            })
        }
    }
}
