//! Binary PPM (P6) export for visual inspection of tiles and stain panels.

use super::ArrayIoError;
use crate::field::ImageTile;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Writes a tile as binary PPM, maxval 255.
pub fn write_ppm(path: impl AsRef<Path>, img: &ImageTile) -> Result<(), ArrayIoError> {
    let mut file = fs::File::create(path)?;
    file.write_all(ppm_bytes(img).as_slice())?;
    Ok(())
}

fn ppm_bytes(img: &ImageTile) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.data());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_io::{image_tile_from_tensor, Tensor};

    #[test]
    fn white_pixel_bytes() {
        let img = ImageTile::filled(1, 1, [255, 255, 255]);
        assert_eq!(ppm_bytes(&img), b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn payload_is_three_bytes_per_pixel() {
        let img = ImageTile::filled(2, 2, [1, 2, 3]);
        let bytes = ppm_bytes(&img);
        let header_len = b"P6\n2 2\n255\n".len();
        assert_eq!(bytes.len() - header_len, 12);
    }

    #[test]
    fn non_rgb_tensor_rejected_before_export() {
        let t = Tensor::from_u8(vec![1, 1, 4], vec![0; 4]).unwrap();
        assert!(image_tile_from_tensor(&t).is_err());
    }

    #[test]
    fn file_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        write_ppm(&path, &ImageTile::filled(1, 2, [0, 128, 255])).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(bytes.len(), 11 + 6);
    }
}
