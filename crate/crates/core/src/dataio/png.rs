//! 8-bit PNG images and `images/ + labels.csv` directories.
//!
//! `labels.csv` is UTF-8 with LF line endings and the header `filename,label`;
//! filenames are relative to `images/`.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

fn color_type(channels: usize) -> Result<ColorType> {
    Ok(match channels {
        1 => ColorType::L8,
        2 => ColorType::La8,
        3 => ColorType::Rgb8,
        4 => ColorType::Rgba8,
        c => {
            return Err(Error::Input(format!(
                "cannot store {c}-channel images as PNG"
            )))
        }
    })
}

/// Encodes the 8-bit quantization of `image` with fixed encoder settings.
pub fn encode_png(image: &ImageTensor) -> Result<Vec<u8>> {
    let shape = image.shape();
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(
            &image.to_u8(),
            shape.width as u32,
            shape.height as u32,
            color_type(shape.channels)?.into(),
        )
        .map_err(|e| Error::Input(format!("png encode: {e}")))?;
    Ok(out)
}

pub fn decode_png(path: &Path, bytes: &[u8]) -> Result<ImageTensor> {
    let parse = |message: String| Error::Parse {
        path: path.to_owned(),
        offset: 0,
        message,
    };
    let img = image::ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png)
        .decode()
        .map_err(|e| parse(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img {
        image::DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        image::DynamicImage::ImageLumaA8(b) => (2, b.into_raw()),
        image::DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        image::DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
        other => (3, other.to_rgb8().into_raw()),
    };
    ImageTensor::from_u8(Shape::new(h, w, channels), &raw)
}

pub fn read_png(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(path, &bytes)
}

#[derive(Debug, Deserialize, Serialize)]
struct LabelRow {
    filename: String,
    label: usize,
}

/// Reads `dir/labels.csv` and the PNGs it names, in file order.
pub fn read_png_directory(dir: &Path) -> Result<Vec<LabeledImage>> {
    let csv_path = dir.join("labels.csv");
    let file = fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: csv_path.clone(),
            offset: 0,
            message: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["filename", "label"] {
        return Err(Error::Parse {
            path: csv_path,
            offset: 0,
            message: format!(
                "header must be `filename,label`, found {:?}",
                headers.as_slice()
            ),
        });
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::Parse {
            path: csv_path.clone(),
            offset: e.position().map(|p| p.byte()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let image = read_png(&dir.join("images").join(&row.filename))?;
        if let Some(first) = out.first().map(|li: &LabeledImage| li.image.shape()) {
            if image.shape() != first {
                return Err(Error::Data(format!(
                    "{} has shape {}, expected {first}",
                    row.filename,
                    image.shape()
                )));
            }
        }
        out.push(LabeledImage {
            image,
            label: row.label,
        });
    }
    Ok(out)
}

pub fn write_png_directory(dir: &Path, items: &[LabeledImage]) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut csv_text = String::from("filename,label\n");
    for (i, item) in items.iter().enumerate() {
        let name = format!("{i:06}.png");
        let path = images.join(&name);
        fs::write(&path, encode_png(&item.image)?).map_err(|e| Error::io(&path, e))?;
        csv_text.push_str(&format!("{name},{}\n", item.label));
    }
    let path = dir.join("labels.csv");
    fs::write(&path, csv_text).map_err(|e| Error::io(path, e))
}
