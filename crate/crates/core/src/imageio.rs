//! Raster images, float tensors and the binary PPM (P6) codec.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel order of stored pixel data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelOrder {
    #[default]
    Rgb,
    Bgr,
}

impl ChannelOrder {
    pub fn id(self) -> &'static str {
        match self {
            ChannelOrder::Rgb => "RGB",
            ChannelOrder::Bgr => "BGR",
        }
    }
}

impl std::str::FromStr for ChannelOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "" | "RGB" => Ok(ChannelOrder::Rgb),
            "BGR" => Ok(ChannelOrder::Bgr),
            other => Err(Error::Parse(format!("unknown channel order `{other}`"))),
        }
    }
}

/// Interleaved 8-bit, three-channel image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(Self::CHANNELS))
            .ok_or_else(|| Error::Dimension("image size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} samples for {width}x{height}x3, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Dense row-major tensor with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type TensorF32 = Tensor<f32>;

impl<T> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Tensor<T> {
    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }
}

impl<T: Clone + Default> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, T::default())
    }
}

impl Tensor<f32> {
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Decodes a binary PPM (`P6`, maxval 255). Header comments are accepted.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageU8> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Parse("not a binary PPM (expected magic P6)".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        skip_space_and_comments(bytes, &mut pos)?;
        *field = read_decimal(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Parse(format!(
            "unsupported maxval {maxval}, only 255 is accepted"
        )));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Parse("missing whitespace after PPM header".into())),
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Parse("PPM dimensions overflow".into()))?;
    let payload = bytes
        .get(pos..pos + len)
        .ok_or_else(|| Error::Parse(format!("truncated payload: need {len} bytes")))?;
    ImageU8::new(width, height, payload.to_vec()).map_err(|e| Error::Parse(e.to_string()))
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) -> Result<()> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => return Ok(()),
            None => return Err(Error::Parse("truncated PPM header".into())),
        }
    }
}

fn read_decimal(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse(
            "expected a decimal number in PPM header".into(),
        ));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse("header number out of range".into()))
}

/// Canonical P6 encoding: `P6 <w> <h> 255\n` followed by the payload.
pub fn encode_ppm(img: &ImageU8) -> Vec<u8> {
    let header = format!("P6 {} {} 255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.data);
    out
}

pub fn bgr_to_rgb(img: &ImageU8) -> ImageU8 {
    let mut data = img.data.clone();
    for px in data.chunks_exact_mut(3) {
        px.swap(0, 2);
    }
    ImageU8 {
        width: img.width,
        height: img.height,
        data,
    }
}

/// `[height, width, 3]` tensor with raw 0..=255 sample values.
pub fn to_tensor(img: &ImageU8) -> TensorF32 {
    Tensor {
        shape: vec![img.height, img.width, 3],
        data: img.data.iter().map(|&v| f32::from(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_single_pixel() {
        let mut bytes = b"P6 1 1 255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.pixel(0, 0), [10, 20, 30]);
    }

    #[test]
    fn decode_with_comments_and_newlines() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(1, 0), [4, 5, 6]);
    }

    #[test]
    fn decode_errors() {
        let mut p5 = b"P5 1 1 255\n".to_vec();
        p5.push(0);
        assert!(matches!(decode_ppm(&p5), Err(Error::Parse(_))));
        let mut short = b"P6 2 2 255\n".to_vec();
        short.extend_from_slice(&[0; 11]);
        assert!(matches!(decode_ppm(&short), Err(Error::Parse(_))));
        let mut deep = b"P6 1 1 65535\n".to_vec();
        deep.extend_from_slice(&[0; 6]);
        assert!(matches!(decode_ppm(&deep), Err(Error::Parse(_))));
        assert!(matches!(decode_ppm(b"P6 0 1 255\n"), Err(Error::Parse(_))));
        assert!(matches!(decode_ppm(b""), Err(Error::Parse(_))));
    }

    #[test]
    fn encode_sizes() {
        let black = ImageU8::filled(1, 1, [0, 0, 0]).unwrap();
        let bytes = encode_ppm(&black);
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 0, 0]);
        let two = ImageU8::filled(2, 1, [9, 9, 9]).unwrap();
        let bytes = encode_ppm(&two);
        assert_eq!(bytes.len() - b"P6 2 1 255\n".len(), 6);
    }

    #[test]
    fn channel_swap() {
        let img = ImageU8::new(1, 1, vec![1, 2, 3]).unwrap();
        assert_eq!(bgr_to_rgb(&img).pixel(0, 0), [3, 2, 1]);
        let gray = ImageU8::new(1, 1, vec![7, 7, 7]).unwrap();
        assert_eq!(bgr_to_rgb(&gray), gray);
    }

    #[test]
    fn tensor_cast() {
        let img = ImageU8::new(1, 1, vec![255, 0, 128]).unwrap();
        let t = to_tensor(&img);
        assert_eq!(t.shape(), &[1, 1, 3]);
        assert_eq!(t.data(), &[255.0, 0.0, 128.0]);
        let z = to_tensor(&ImageU8::filled(4, 2, [0, 0, 0]).unwrap());
        assert_eq!(z.shape(), &[2, 4, 3]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_image_dims() {
        assert!(ImageU8::new(0, 3, vec![]).is_err());
        assert!(ImageU8::new(2, 2, vec![0; 11]).is_err());
    }

    fn arb_image() -> impl Strategy<Value = ImageU8> {
        (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h * 3)
                .prop_map(move |data| ImageU8::new(w, h, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn ppm_round_trip(img in arb_image()) {
            let bytes = encode_ppm(&img);
            let back = decode_ppm(&bytes).unwrap();
            prop_assert_eq!(encode_ppm(&back), bytes);
            prop_assert_eq!(back, img);
        }

        #[test]
        fn swap_is_involution(img in arb_image()) {
            prop_assert_eq!(bgr_to_rgb(&bgr_to_rgb(&img)), img);
        }

        #[test]
        fn to_tensor_exact(img in arb_image()) {
            let t = to_tensor(&img);
            for (a, b) in t.data().iter().zip(img.data()) {
                prop_assert_eq!(*a, f32::from(*b));
            }
        }
    }
}
