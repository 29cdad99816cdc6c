//! 8-bit grayscale / RGB PNG codec.

use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::DataError;

/// Interleaved 8-bit pixels with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, DataError> {
        if channels != 1 && channels != 3 {
            return Err(DataError::Invalid(format!("{channels} channels; only gray and RGB are supported")));
        }
        if data.len() != width * height * channels || width == 0 || height == 0 {
            return Err(DataError::Invalid(format!("{width}x{height}x{channels} image with {} bytes", data.len())));
        }
        Ok(Image { width, height, channels, data })
    }

    /// Luma (ITU-R 601) for RGB, the plane itself for gray.
    pub fn to_gray(&self) -> Vec<u8> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| (0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])).round() as u8)
            .collect()
    }
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Image, DataError> {
    let unsupported = |detail: String| DataError::UnsupportedFormat { path: path.to_path_buf(), detail };
    let corrupt = |e: png::DecodingError| DataError::Decode { path: path.to_path_buf(), detail: e.to_string() };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let info = reader.info();
    if info.bit_depth != BitDepth::Eight {
        return Err(unsupported(format!("bit depth {:?}", info.bit_depth)));
    }
    if info.interlaced {
        return Err(unsupported("interlaced".into()));
    }
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        other => return Err(unsupported(format!("color type {other:?}"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let mut data = vec![0; width * height * channels];
    reader.next_frame(&mut data).map_err(corrupt)?;
    Image::new(width, height, channels, data)
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(if image.channels == 1 { ColorType::Grayscale } else { ColorType::Rgb });
        enc.set_depth(BitDepth::Eight);
        let err = |e: png::EncodingError| DataError::Invalid(format!("png encode: {e}"));
        let mut writer = enc.write_header().map_err(err)?;
        writer.write_image_data(&image.data).map_err(err)?;
        writer.finish().map_err(err)?;
    }
    Ok(out)
}

pub fn read_png(path: &Path) -> Result<Image, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_png(&bytes, path)
}

pub fn write_png(path: &Path, image: &Image) -> Result<(), DataError> {
    let bytes = encode_png(image)?;
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}
