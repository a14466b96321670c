//! Binary portable pixmap (P6) and graymap (P5) I/O, bilinear resizing and
//! saliency overlays.

use std::fs;
use std::path::Path;

use crate::error::{Error, ImageError, Result};
use crate::tensor::Tensor;

/// RGB image with channel-planar values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// `data` is channel-planar: all red values, then green, then blue.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", "dimensions must be at least 1"));
        }
        if data.len() != 3 * width * height {
            return Err(Error::shape(
                "image",
                format!("{width}x{height} RGB needs {} values, got {}", 3 * width * height, data.len()),
            ));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image", "values must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(width, height, data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.dims3("image")?;
        if c != 3 {
            return Err(Error::shape("image", format!("expected 3 channels, got {c}")));
        }
        Self::new(w, h, t.data().to_vec())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.height, self.width], self.data.clone()).expect("valid image")
    }

    /// Rec. 601 luma per pixel.
    pub fn grayscale(&self) -> Vec<f64> {
        let n = self.width * self.height;
        (0..n)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i])
            .collect()
    }

    /// Bilinear resize with pixel-centre alignment, edges clamped.
    pub fn resize(&self, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("resize", "target dimensions must be at least 1"));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let xs = axis_taps(self.width, width);
        let ys = axis_taps(self.height, height);
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let v = (1.0 - fy) * ((1.0 - fx) * self.get(c, y0, x0) + fx * self.get(c, y0, x1))
                        + fy * ((1.0 - fx) * self.get(c, y1, x0) + fx * self.get(c, y1, x1));
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Image::new(width, height, data)
    }
}

/// Source indices and weight of the second tap for every destination index.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        if bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        } else if bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> std::result::Result<u32, ImageError> {
    skip_ws_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::Header(format!("missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse()
        .map_err(|_| ImageError::Header(format!("{what} out of range")))
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, ImageError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(ImageError::BadMagic(found));
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")? as usize;
    let height = header_number(bytes, &mut pos, "height")? as usize;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::Header("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::Header("expected whitespace after maxval".into())),
    }
    let n = width * height;
    let pixels = &bytes[pos..];
    if pixels.len() < 3 * n {
        return Err(ImageError::Truncated {
            needed: 3 * n,
            available: pixels.len(),
        });
    }
    let mut data = vec![0.0; 3 * n];
    let scale = maxval as f64;
    for i in 0..n {
        for c in 0..3 {
            let raw = pixels[3 * i + c] as f64;
            data[c * n + i] = (raw / scale).min(1.0);
        }
    }
    Ok(Image {
        width,
        height,
        data,
    })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let n = image.width * image.height;
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(3 * n);
    for i in 0..n {
        for c in 0..3 {
            out.push(quantize(image.data[c * n + i]));
        }
    }
    out
}

/// 8-bit P5 graymap of `values` (row-major, already in `[0, 1]`).
pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    out
}

/// Decode a P6 file and resize it to `size × size`.
pub fn load_image(path: impl AsRef<Path>, size: usize) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let img = decode_ppm(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    img.resize(size, size)
}

pub fn save_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

/// Colour of a fully salient pixel.
pub const WARM: [f64; 3] = [1.0, 0.35, 0.0];

/// Blend `|map| / max|map|` from the grayscale image (0) towards [`WARM`] (1).
pub fn overlay(image: &Image, map: &Tensor) -> Result<Image> {
    let (h, w) = match map.shape() {
        [h, w] => (*h, *w),
        s => return Err(Error::shape("render_overlay", format!("map must be h×w, got {s:?}"))),
    };
    if h != image.height || w != image.width {
        return Err(Error::shape(
            "render_overlay",
            format!("map is {w}x{h}, image is {}x{}", image.width, image.height),
        ));
    }
    let gray = image.grayscale();
    let max = map.max_abs();
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        let t = if max > 0.0 { map.data()[i].abs() / max } else { 0.0 };
        for c in 0..3 {
            data[c * n + i] = (1.0 - t) * gray[i] + t * WARM[c];
        }
    }
    Image::new(w, h, data)
}

pub fn render_overlay(image: &Image, map: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    save_ppm(&overlay(image, map)?, path)
}

/// `|map|` rescaled so its maximum is white.
pub fn magnitude_graymap(map: &Tensor) -> Result<Vec<u8>> {
    let [h, w] = map.shape()[..] else {
        return Err(Error::shape("graymap", format!("map must be h×w, got {:?}", map.shape())));
    };
    let max = map.max_abs();
    let vals: Vec<f64> = map
        .data()
        .iter()
        .map(|v| if max > 0.0 { v.abs() / max } else { 0.0 })
        .collect();
    Ok(encode_pgm(w, h, &vals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_pixel() {
        let img = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(img.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn header_comments_and_maxval_scaling() {
        let img = decode_ppm(b"P6 # c\n2 1 # size\n# more\n100\n\x32\x00\x64\x00\x00\x00").unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.get(0, 0, 0), 0.5);
        assert_eq!(img.get(2, 0, 0), 1.0);
    }

    #[test]
    fn decode_failures_are_distinct() {
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(ImageError::BadMagic(_))));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\n\x00\x00"),
            Err(ImageError::Truncated { .. })
        ));
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00"),
            Err(ImageError::UnsupportedMaxval(65535))
        ));
        assert!(matches!(decode_ppm(b"P6\n1\n"), Err(ImageError::Header(_))));
    }

    #[test]
    fn encode_decode_round_trip() {
        let img = Image::from_fn(3, 2, |c, y, x| ((c * 7 + y * 3 + x) % 5) as f64 / 4.0).unwrap();
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = Image::from_fn(4, 4, |c, y, x| (c + y * x) as f64 / 20.0).unwrap();
        assert_eq!(img.resize(4, 4).unwrap(), img);
    }

    #[test]
    fn overlay_extremes() {
        let img = Image::from_fn(2, 2, |c, y, x| [0.2, 0.6, 0.9][c] * (1 + x + y) as f64 / 3.0).unwrap();
        let zero = overlay(&img, &Tensor::zeros(&[2, 2])).unwrap();
        let gray = img.grayscale();
        for i in 0..4 {
            for c in 0..3 {
                assert_eq!(zero.data()[c * 4 + i], gray[i]);
            }
        }
        let mut m = Tensor::zeros(&[2, 2]);
        m.data_mut()[3] = -2.0;
        m.data_mut()[1] = 0.5;
        let hot = overlay(&img, &m).unwrap();
        for c in 0..3 {
            assert_eq!(hot.get(c, 1, 1), WARM[c]);
        }
        assert!(overlay(&img, &Tensor::zeros(&[2, 3])).is_err());
    }
}
