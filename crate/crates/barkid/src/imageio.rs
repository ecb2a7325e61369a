//! PNG / PGM / PPM images to and from the core image type.

use std::path::Path;

use barkid_core::pixels::Image;
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};

/// Loads an image as grayscale or RGB; alpha is dropped and 16-bit samples
/// are reduced to 8 bits.
pub fn load_image(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image { path: path.to_path_buf(), source: other },
    })?;
    let (w, h) = (decoded.width(), decoded.height());
    let img = match decoded {
        DynamicImage::ImageLuma8(g) => Image::new(w, h, 1, g.into_raw()),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            Image::new(w, h, 1, decoded.to_luma8().into_raw())
        }
        other => Image::new(w, h, 3, other.to_rgb8().into_raw()),
    };
    Ok(img?)
}

/// Writes `img` as PNG, creating parent directories.
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let (w, h) = (img.width(), img.height());
    let data = img.data().to_vec();
    let dynamic = if img.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, data).expect("length checked by Image"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, data).expect("length checked by Image"))
    };
    dynamic.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image { path: path.to_path_buf(), source: other },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gray = Image::from_fn(7, 5, |x, y| (x * 30 + y) as u8).unwrap();
        let p = dir.path().join("a/g.png");
        save_png(&p, &gray).unwrap();
        assert_eq!(load_image(&p).unwrap(), gray);

        let rgb = Image::new(2, 1, 3, vec![1, 2, 3, 250, 251, 252]).unwrap();
        let p = dir.path().join("c.png");
        save_png(&p, &rgb).unwrap();
        assert_eq!(load_image(&p).unwrap(), rgb);

        let pgm = dir.path().join("g.pgm");
        std::fs::write(&pgm, b"P5\n2 2\n255\n\x00\x10\x20\xff").unwrap();
        assert_eq!(load_image(&pgm).unwrap().data(), &[0, 16, 32, 255]);
        let ppm = dir.path().join("c.ppm");
        std::fs::write(&ppm, b"P6\n1 1\n255\n\x01\x02\x03").unwrap();
        let c = load_image(&ppm).unwrap();
        assert_eq!((c.channels(), c.data()), (3, &[1u8, 2, 3][..]));
    }

    #[test]
    fn missing_and_garbage_files_fail_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_image(&dir.path().join("nope.png")).unwrap_err();
        assert_eq!(missing.kind(), "missing_input");
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"not an image").unwrap();
        assert_eq!(load_image(&bad).unwrap_err().kind(), "format");
    }
}
