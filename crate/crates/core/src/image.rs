//! Pixel containers and the geometric helpers shared by every stage.
//!
//! Images store interleaved channels row by row (`(y·w + x)·c + ch`) as
//! unit-interval `f64` values.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use qmap_nn::Tensor4;

use crate::error::{io_err, Error, Result};

/// Luminance weights (BT.601).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Channel(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from `f(y, x, channel)`, clamping into [0,1].
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(y, x, c);
                    data.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// The `h×w` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        let data = crop_buffer(&self.data, self.height, self.width, self.channels, y0, x0, h, w)?;
        Ok(Image {
            height: h,
            width: w,
            channels: self.channels,
            data,
        })
    }

    /// `(1, c, h, w)` planar tensor.
    pub fn to_tensor(&self) -> Tensor4 {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; h * w * c];
        for (k, v) in self.data.iter().enumerate() {
            let ch = k % c;
            let pix = k / c;
            data[ch * h * w + pix] = *v;
        }
        Tensor4::from_vec([1, c, h, w], data).expect("image dims")
    }

    /// Unit-interval values rounded to bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }
}

/// Single-channel real buffer for intermediate quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} plane needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("plane values must be finite".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination of two equally sized planes.
    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Sliding-window tiling of an image.
#[derive(Clone, Debug)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub origins: Vec<(usize, usize)>,
    pub patches: Vec<Image>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn crop_buffer<T: Copy>(
    data: &[T],
    height: usize,
    width: usize,
    channels: usize,
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
) -> Result<Vec<T>> {
    if y0 + h > height || x0 + w > width || h == 0 || w == 0 {
        return Err(Error::Size(format!(
            "window {h}x{w} at ({y0},{x0}) does not fit in {height}x{width}"
        )));
    }
    let mut out = Vec::with_capacity(h * w * channels);
    for y in y0..y0 + h {
        let start = (y * width + x0) * channels;
        out.extend_from_slice(&data[start..start + w * channels]);
    }
    Ok(out)
}

pub(crate) fn flip_buffer<T: Copy>(data: &[T], height: usize, width: usize, channels: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for y in 0..height {
        for x in (0..width).rev() {
            let start = (y * width + x) * channels;
            out.extend_from_slice(&data[start..start + channels]);
        }
    }
    out
}

/// Window origins along one axis: multiples of `stride`, with the last one
/// clamped so the window ends exactly at the edge.
pub fn patch_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    assert!(patch > 0 && stride > 0 && len >= patch);
    let mut out = Vec::new();
    let mut o = 0;
    while o + patch < len {
        out.push(o);
        o += stride;
    }
    out.push(len - patch);
    out
}

pub fn extract_patches(img: &Image, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    if patch_size == 0 || stride == 0 || stride > patch_size {
        return Err(Error::Config(format!(
            "patch size {patch_size} / stride {stride}: need 0 < stride <= patch size"
        )));
    }
    if img.height < patch_size || img.width < patch_size {
        return Err(Error::Size(format!(
            "{}x{} image is smaller than the {patch_size} px patch",
            img.height, img.width
        )));
    }
    let rows = patch_origins(img.height, patch_size, stride);
    let cols = patch_origins(img.width, patch_size, stride);
    let mut origins = Vec::with_capacity(rows.len() * cols.len());
    let mut patches = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            origins.push((r, c));
            patches.push(img.crop(r, c, patch_size, patch_size)?);
        }
    }
    Ok(PatchGrid {
        patch_size,
        stride,
        origins,
        patches,
    })
}

/// Drops `n` rows and columns on every side.
pub fn crop_border(img: &Image, n: usize) -> Result<Image> {
    if img.height <= 2 * n || img.width <= 2 * n {
        return Err(Error::Size(format!(
            "cropping {n} px from a {}x{} image leaves nothing",
            img.height, img.width
        )));
    }
    img.crop(n, n, img.height - 2 * n, img.width - 2 * n)
}

pub fn hflip(img: &Image) -> Image {
    Image {
        height: img.height,
        width: img.width,
        channels: img.channels,
        data: flip_buffer(&img.data, img.height, img.width, img.channels),
    }
}

/// BT.601 luminance; single-channel images are returned as-is.
pub fn to_luminance(img: &Image) -> Plane {
    let data = if img.channels == 1 {
        img.data.clone()
    } else {
        img.data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect()
    };
    Plane {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Decodes a PNG or BMP file. 8-bit samples are divided by 255, 16-bit by
/// 65535; alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let decode_err = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let reader = ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Bmp) => {}
        other => return Err(Error::Format(format!("{}: {other:?} is not PNG or BMP", path.display()))),
    }
    let decoded = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match decoded {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgba8(b) => (
            3,
            b.into_raw()
                .chunks_exact(4)
                .flat_map(|p| p[..3].iter().map(|&v| v as f64 / 255.0).collect::<Vec<_>>())
                .collect(),
        ),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgba16(b) => (
            3,
            b.into_raw()
                .chunks_exact(4)
                .flat_map(|p| p[..3].iter().map(|&v| v as f64 / 65535.0).collect::<Vec<_>>())
                .collect(),
        ),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel layout {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(h, w, channels, data)
}

/// Writes an 8-bit PNG (gray or RGB).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &img.to_bytes(),
        img.width as u32,
        img.height as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Format(other.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, c: usize) -> Image {
        let n = (h * w * c) as f64;
        Image::from_fn(h, w, c, |y, x, ch| ((y * w + x) * c + ch) as f64 / n)
    }

    #[test]
    fn rejects_out_of_range_and_bad_lengths() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 2, 1, vec![0.5]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn luminance_of_primaries() {
        let white = Image::new(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        assert!((to_luminance(&white).data[0] - 1.0).abs() < 1e-15);
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(to_luminance(&red).data[0], 0.299);
        let gray = ramp(2, 2, 1);
        assert_eq!(to_luminance(&gray).data, gray.data);
    }

    #[test]
    fn luminance_matches_per_pixel_formula() {
        let img = Image::from_fn(8, 8, 3, |y, x, c| ((y * 31 + x * 17 + c * 7) % 23) as f64 / 22.0);
        let lum = to_luminance(&img);
        for y in 0..8 {
            for x in 0..8 {
                let expected = 0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2);
                assert_eq!(lum.get(y, x), expected);
            }
        }
    }

    #[test]
    fn patch_counts_and_origins() {
        let g = extract_patches(&ramp(144, 144, 1), 144, 120).unwrap();
        assert_eq!(g.origins, vec![(0, 0)]);
        let g = extract_patches(&ramp(264, 264, 1), 144, 120).unwrap();
        assert_eq!(g.origins.len(), 4);
        assert_eq!(patch_origins(264, 144, 120), vec![0, 120]);

        // enumerate window starts by brute force: stride steps, then clamp
        let mut expected = Vec::new();
        let mut o = 0;
        loop {
            if o + 144 >= 300 {
                expected.push(300 - 144);
                break;
            }
            expected.push(o);
            o += 120;
        }
        assert_eq!(expected, vec![0, 120, 156]);
        assert_eq!(patch_origins(300, 144, 120), expected);
        let g = extract_patches(&ramp(300, 300, 3), 144, 120).unwrap();
        assert_eq!(g.patches.len(), 9);
        assert_eq!(g.origins[8], (156, 156));
        assert!(matches!(extract_patches(&ramp(100, 200, 1), 144, 120), Err(Error::Size(_))));
    }

    #[test]
    fn patches_reassemble_the_source() {
        let img = ramp(70, 53, 3);
        let g = extract_patches(&img, 24, 20).unwrap();
        let mut buf = vec![-1.0; img.data.len()];
        for (&(r, c), p) in g.origins.iter().zip(&g.patches) {
            for y in 0..24 {
                for x in 0..24 {
                    for ch in 0..3 {
                        buf[((r + y) * 53 + c + x) * 3 + ch] = p.get(y, x, ch);
                    }
                }
            }
        }
        assert_eq!(buf, img.data);
    }

    #[test]
    fn crop_border_cases() {
        let img = ramp(12, 12, 1);
        let c = crop_border(&img, 5).unwrap();
        assert_eq!((c.height(), c.width()), (2, 2));
        assert_eq!(crop_border(&img, 0).unwrap(), img);
        assert!(crop_border(&img, 6).is_err());

        let img = ramp(20, 20, 3);
        let c = crop_border(&img, 3).unwrap();
        for y in 0..14 {
            for x in 0..14 {
                for ch in 0..3 {
                    assert_eq!(c.get(y, x, ch), img.data[((y + 3) * 20 + x + 3) * 3 + ch]);
                }
            }
        }
    }

    #[test]
    fn hflip_cases() {
        let col = ramp(4, 1, 3);
        assert_eq!(hflip(&col), col);
        let img = Image::new(2, 3, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(hflip(&img).data(), &[0.3, 0.2, 0.1, 0.6, 0.5, 0.4]);
        let rgb = ramp(3, 5, 3);
        assert_eq!(hflip(&hflip(&rgb)), rgb);
        let f = hflip(&rgb);
        for y in 0..3 {
            for x in 0..5 {
                for c in 0..3 {
                    assert_eq!(f.get(y, x, c), rgb.get(y, 4 - x, c));
                }
            }
        }
    }

    #[test]
    fn tensor_layout_is_planar() {
        let img = ramp(2, 2, 3);
        let t = img.to_tensor();
        assert_eq!(t.dims(), [1, 3, 2, 2]);
        assert_eq!(t.data()[4 + 1], img.get(0, 1, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn crop_composes(h in 12usize..30, w in 12usize..30, a in 0usize..3, b in 0usize..3) {
            let img = ramp(h, w, 1);
            let twice = crop_border(&crop_border(&img, a).unwrap(), b).unwrap();
            prop_assert_eq!(twice, crop_border(&img, a + b).unwrap());
        }

        #[test]
        fn luminance_stays_in_unit_interval(v in proptest::collection::vec(0.0f64..=1.0, 27)) {
            let img = Image::new(3, 3, 3, v).unwrap();
            prop_assert!(to_luminance(&img).data.iter().all(|x| (0.0..=1.0 + 1e-12).contains(x)));
        }
    }
}
