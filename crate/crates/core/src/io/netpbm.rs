//! Binary netpbm images: P5 (gray) and P6 (RGB), maxval 255.

use std::path::Path;

use ndarray::{Array3, Array4, ArrayView3, Axis};

use super::{check_levels, quantize_byte, ImageDataset};
use crate::error::{DataError, Error, Result};

/// Rounds half away from zero, then clips to `0..=255`.
pub fn quantize_pixel(x: f64) -> Result<u8> {
    if x.is_nan() {
        return Err(Error::OutOfRange("cannot store NaN as a pixel".into()));
    }
    Ok(x.round().clamp(0.0, 255.0) as u8)
}

/// Encodes a `channels × height × width` image; one channel gives P5, three
/// give P6.
pub fn encode_netpbm(image: ArrayView3<'_, f64>) -> Result<Vec<u8>> {
    let (c, h, w) = image.dim();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Shape(format!("netpbm images have 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize_pixel(image[(ch, y, x)])?);
            }
        }
    }
    Ok(out)
}

pub fn save_ppm(image: ArrayView3<'_, f64>, path: &Path) -> Result<()> {
    let bytes = encode_netpbm(image)?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e).into())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, DataError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DataError::MalformedHeader(format!("expected {what}")))
    }
}

/// Decodes a P5 or P6 file into `channels × height × width`.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Array3<u8>, DataError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(DataError::MalformedHeader("expected P5 or P6".into())),
    };
    let mut hdr = Header { bytes, pos: 2 };
    let width = hdr.number("width")? as usize;
    let height = hdr.number("height")? as usize;
    let maxval = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(DataError::UnsupportedMaxval(maxval));
    }
    if !bytes.get(hdr.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(DataError::MalformedHeader("missing whitespace after maxval".into()));
    }
    let start = hdr.pos + 1;
    let needed = start + channels * width * height;
    if bytes.len() < needed {
        return Err(DataError::Truncated { needed, found: bytes.len() });
    }
    let hwc = Array3::from_shape_vec((height, width, channels), bytes[start..needed].to_vec()).expect("length checked");
    Ok(hwc.permuted_axes([2, 0, 1]).as_standard_layout().into_owned())
}

pub fn load_netpbm(path: &Path) -> Result<Array3<u8>> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    Ok(decode_netpbm(&bytes)?)
}

/// Loads every `.pgm`/`.ppm`/`.pnm` file in `dir`, in file-name order. All
/// images must share one shape. Bytes are mapped onto `0..=n_levels`.
pub fn load_ppm_dir(dir: &Path, n_levels: u32) -> Result<ImageDataset> {
    check_levels(n_levels)?;
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| DataError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| matches!(e, "pgm" | "ppm" | "pnm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DataError::DimMismatch(format!("no netpbm images in {}", dir.display())).into());
    }
    let images = paths.iter().map(|p| load_netpbm(p)).collect::<Result<Vec<_>>>()?;
    let shape = images[0].dim();
    if let Some((p, img)) = paths.iter().zip(&images).find(|(_, i)| i.dim() != shape) {
        return Err(DataError::DimMismatch(format!("{} is {:?}, expected {shape:?}", p.display(), img.dim())).into());
    }
    let views: Vec<_> = images.iter().map(|i| i.view().insert_axis(Axis(0))).collect();
    let mut samples: Array4<u8> = ndarray::concatenate(Axis(0), &views).expect("shapes checked");
    if n_levels != 255 {
        samples.mapv_inplace(|p| quantize_byte(p, n_levels));
    }
    ImageDataset::new(samples, None, n_levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rgb(seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((3, 8, 8), || f64::from(rng.random_range(0..=255u8)))
    }

    #[test]
    fn rgb_round_trip_is_identity() {
        let img = random_rgb(1);
        let bytes = encode_netpbm(img.view()).unwrap();
        let back = decode_netpbm(&bytes).unwrap();
        assert_eq!(back.mapv(f64::from), img);
        assert_eq!(encode_netpbm(back.mapv(f64::from).view()).unwrap(), bytes);
    }

    #[test]
    fn channel_counts() {
        let gray = encode_netpbm(Array3::zeros((1, 2, 3)).view()).unwrap();
        assert!(gray.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode_netpbm(&gray).unwrap().dim(), (1, 2, 3));
        let rgb = encode_netpbm(Array3::zeros((3, 2, 3)).view()).unwrap();
        assert_eq!(decode_netpbm(&rgb).unwrap().dim(), (3, 2, 3));
        assert!(encode_netpbm(Array3::zeros((2, 2, 2)).view()).is_err());
    }

    #[test]
    fn rounding_rule() {
        let cases = [(0.5, 1), (1.5, 2), (2.49, 2), (-0.4, 0), (-3.0, 0), (254.5, 255), (300.0, 255), (f64::INFINITY, 255)];
        for (x, p) in cases {
            assert_eq!(quantize_pixel(x).unwrap(), p, "{x}");
        }
        assert!(quantize_pixel(f64::NAN).is_err());
    }

    #[test]
    fn header_with_comments() {
        let mut b = b"P5 # gray\n# size\n2\n1 255\n".to_vec();
        b.extend_from_slice(&[7, 9]);
        assert_eq!(decode_netpbm(&b).unwrap().iter().copied().collect::<Vec<_>>(), vec![7, 9]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_netpbm(b"P3\n1 1\n255\n0"), Err(DataError::MalformedHeader(_))));
        assert!(matches!(decode_netpbm(b"P5\n1 x\n255\n0"), Err(DataError::MalformedHeader(_))));
        assert!(matches!(decode_netpbm(b"P5\n1 1\n65535\n00"), Err(DataError::UnsupportedMaxval(65535))));
        assert!(matches!(decode_netpbm(b"P6\n2 2\n255\n0"), Err(DataError::Truncated { .. })));
    }

    #[test]
    fn directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        for (i, seed) in [(1, 5u64), (0, 6)] {
            save_ppm(random_rgb(seed).view(), &dir.path().join(format!("{i}.ppm"))).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let d = load_ppm_dir(dir.path(), 255).unwrap();
        assert_eq!(d.samples.dim(), (2, 3, 8, 8));
        assert_eq!(d.samples.index_axis(Axis(0), 0).mapv(f64::from), random_rgb(6));

        save_ppm(Array3::zeros((1, 8, 8)).view(), &dir.path().join("2.pgm")).unwrap();
        assert!(load_ppm_dir(dir.path(), 255).is_err());
    }
}
