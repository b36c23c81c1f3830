//! Datasets, images and checkpoints.

mod checkpoint;
mod idx;
mod netpbm;

use ndarray::{Array2, Array4, Axis};

use crate::conv::ImageShape;
use crate::error::{DataError, Error, Result};

pub use checkpoint::{decode_model, encode_model, load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use netpbm::{decode_netpbm, encode_netpbm, load_netpbm, load_ppm_dir, quantize_pixel, save_ppm};

/// A batch of images with integer values in `0..=n_levels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageDataset {
    /// `count × channels × height × width`.
    pub samples: Array4<u8>,
    pub labels: Option<Vec<u8>>,
    pub n_levels: u32,
}

impl ImageDataset {
    pub fn new(samples: Array4<u8>, labels: Option<Vec<u8>>, n_levels: u32) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != samples.len_of(Axis(0)) {
                return Err(DataError::DimMismatch(format!("{} labels for {} images", l.len(), samples.len_of(Axis(0)))).into());
            }
        }
        if let Some(&p) = samples.iter().find(|&&p| u32::from(p) > n_levels) {
            return Err(Error::OutOfRange(format!("pixel value {p} exceeds {n_levels}")));
        }
        Ok(ImageDataset { samples, labels, n_levels })
    }

    pub fn len(&self) -> usize {
        self.samples.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_shape(&self) -> ImageShape {
        let (_, c, h, w) = self.samples.dim();
        ImageShape::new(c, h, w)
    }

    /// Flattened channel-major rows, one per image.
    pub fn to_rows(&self) -> Array2<f64> {
        let n = self.len();
        let d = self.image_shape().len();
        let flat: Vec<f64> = self.samples.iter().map(|&p| f64::from(p)).collect();
        Array2::from_shape_vec((n, d), flat).expect("standard layout")
    }

    /// The first `n` images.
    pub fn take(&self, n: usize) -> ImageDataset {
        let n = n.min(self.len());
        ImageDataset {
            samples: self.samples.slice(ndarray::s![..n, .., .., ..]).to_owned(),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            n_levels: self.n_levels,
        }
    }
}

/// Maps a byte `0..=255` onto `0..=n_levels`, rounding halves up.
///
/// Identity for 255; for 1 it is the threshold `p ≥ 128`.
pub fn quantize_byte(p: u8, n_levels: u32) -> u8 {
    ((2 * u32::from(p) * n_levels + 255) / 510) as u8
}

pub(crate) fn check_levels(n_levels: u32) -> Result<()> {
    if (1..=255).contains(&n_levels) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("image data needs 1 ≤ N ≤ 255, got {n_levels}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rules() {
        assert_eq!(quantize_byte(127, 1), 0);
        assert_eq!(quantize_byte(128, 1), 1);
        assert_eq!(quantize_byte(0, 1), 0);
        assert_eq!(quantize_byte(255, 1), 1);
        for p in 0..=255u8 {
            assert_eq!(quantize_byte(p, 255), p);
            assert!(u32::from(quantize_byte(p, 16)) <= 16);
        }
    }

    #[test]
    fn dataset_checks() {
        let s = Array4::from_elem((2, 1, 2, 2), 1u8);
        assert!(ImageDataset::new(s.clone(), Some(vec![0]), 1).is_err());
        assert!(ImageDataset::new(s.mapv(|_| 2), None, 1).is_err());
        let d = ImageDataset::new(s, Some(vec![3, 4]), 1).unwrap();
        assert_eq!(d.to_rows().dim(), (2, 4));
        assert_eq!(d.take(1).labels, Some(vec![3]));
    }
}
