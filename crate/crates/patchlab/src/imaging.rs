//! Image representation, bit-exact PPM/PFM IO, quantization and the
//! geometric primitives (homography warp, masked compose) shared by the
//! renderer, the detectors and the metrics.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimensions must be positive, got {0}x{1}")]
    EmptyImage(usize, usize),
    #[error("data length {got} does not match {width}x{height}x3 = {want}")]
    DataLength {
        width: usize,
        height: usize,
        got: usize,
        want: usize,
    },
    #[error("sample {value} at index {index} is not finite or outside [0,1]")]
    InvalidSample { index: usize, value: f64 },
    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),
    #[error("overlay of {ow}x{oh} at ({x},{y}) exceeds base extent {bw}x{bh}")]
    OutOfBounds {
        ow: usize,
        oh: usize,
        x: usize,
        y: usize,
        bw: usize,
        bh: usize,
    },
    #[error("mask dimensions {0}x{1} do not match overlay {2}x{3}")]
    MaskMismatch(usize, usize, usize, usize),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: expected {expected} bytes, got {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense row-major RGB raster with samples in `[0,1]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "ImageRepr", into = "ImageRepr")]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Serialization surrogate: deserialized images go through `from_data` so
/// the range/length invariants hold for any input.
#[derive(serde::Serialize, serde::Deserialize)]
struct ImageRepr {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl TryFrom<ImageRepr> for Image {
    type Error = String;

    fn try_from(r: ImageRepr) -> Result<Self, String> {
        Image::from_data(r.width, r.height, r.data).map_err(|e| e.to_string())
    }
}

impl From<Image> for ImageRepr {
    fn from(img: Image) -> Self {
        ImageRepr {
            width: img.width,
            height: img.height,
            data: img.data,
        }
    }
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyImage(width, height));
        }
        let want = width * height * 3;
        if data.len() != want {
            return Err(ImagingError::DataLength {
                width,
                height,
                got: data.len(),
                want,
            });
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(ImagingError::InvalidSample { index: i, value: v });
            }
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y) -> [r,g,b]` per pixel.
    /// Values are clamped into `[0,1]`.
    pub fn from_fn<F: FnMut(usize, usize) -> [f64; 3]>(
        width: usize,
        height: usize,
        mut f: F,
    ) -> Self {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                img.set(x, y, [clamp01(px[0]), clamp01(px[1]), clamp01(px[2])]);
            }
        }
        img
    }

    pub fn splat(width: usize, height: usize, color: [f64; 3]) -> Self {
        Image::from_fn(width, height, |_, _| color)
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [f64; 3]) {
        debug_assert!(px.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        let i = (y * self.width + x) * 3;
        self.data[i] = px[0];
        self.data[i + 1] = px[1];
        self.data[i + 2] = px[2];
    }

    /// Per-pixel luma as mean of the three channels.
    pub fn to_gray(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|c| (c[0] + c[1] + c[2]) / 3.0)
            .collect()
    }

    /// Bilinear sample with clamp-to-edge semantics.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let xf = x.clamp(0.0, (self.width - 1) as f64);
        let yf = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xf.floor() as usize;
        let y0 = yf.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xf - x0 as f64;
        let fy = yf - y0 as f64;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        // Constant neighborhoods interpolate exactly; this keeps flat
        // surface regions bit-identical across warps.
        if p00 == p10 && p00 == p01 && p00 == p11 {
            return p00;
        }
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }
}

#[inline]
pub fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// 8-bit integer RGB raster on the 0-255 scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Rounds half away from zero onto the 8-bit grid.
pub fn quantize(img: &Image) -> QuantizedImage {
    QuantizedImage {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect(),
    }
}

pub fn dequantize(q: &QuantizedImage) -> Image {
    Image {
        width: q.width,
        height: q.height,
        data: q.data.iter().map(|&b| b as f64 / 255.0).collect(),
    }
}

/// Scalar coverage mask in `[0,1]`, same layout as an image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![1.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Mask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Number of entries with coverage above 0.5.
    pub fn count_covered(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let xf = x.clamp(0.0, (self.width - 1) as f64);
        let yf = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xf.floor() as usize;
        let y0 = yf.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xf - x0 as f64;
        let fy = yf - y0 as f64;
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        if p00 == p10 && p00 == p01 && p00 == p11 {
            return p00;
        }
        let top = p00 * (1.0 - fx) + p10 * fx;
        let bot = p01 * (1.0 - fx) + p11 * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// 3x3 projective transform with the last entry normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [f64; 9],
}

const DET_EPS: f64 = 1e-12;

impl Homography {
    pub fn new(m: [f64; 9]) -> Result<Self, ImagingError> {
        let det = det3(&m);
        if det.abs() <= DET_EPS {
            return Err(ImagingError::SingularHomography(det.abs()));
        }
        if m[8].abs() <= DET_EPS {
            return Err(ImagingError::SingularHomography(m[8].abs()));
        }
        let mut n = m;
        for v in n.iter_mut() {
            *v /= m[8];
        }
        Ok(Homography { m: n })
    }

    pub fn identity() -> Self {
        Homography {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: [1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0],
        }
    }

    pub fn scale(sx: f64, sy: f64) -> Result<Self, ImagingError> {
        Homography::new([sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0])
    }

    /// Rotation by `deg` degrees counterclockwise about `(cx, cy)`.
    pub fn rotation_deg_about(deg: f64, cx: f64, cy: f64) -> Self {
        let r = deg.to_radians();
        let (s, c) = r.sin_cos();
        let m = [
            c,
            -s,
            cx - c * cx + s * cy,
            s,
            c,
            cy - s * cx - c * cy,
            0.0,
            0.0,
            1.0,
        ];
        Homography { m }
    }

    pub fn matrix(&self) -> &[f64; 9] {
        &self.m
    }

    /// `self` applied after `other`: (self * other)(p) = self(other(p)).
    pub fn compose(&self, other: &Homography) -> Result<Homography, ImagingError> {
        let a = &self.m;
        let b = &other.m;
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] =
                    a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
            }
        }
        Homography::new(out)
    }

    pub fn invert(&self) -> Result<Homography, ImagingError> {
        let m = &self.m;
        let det = det3(m);
        if det.abs() <= DET_EPS {
            return Err(ImagingError::SingularHomography(det.abs()));
        }
        let inv = [
            (m[4] * m[8] - m[5] * m[7]) / det,
            (m[2] * m[7] - m[1] * m[8]) / det,
            (m[1] * m[5] - m[2] * m[4]) / det,
            (m[5] * m[6] - m[3] * m[8]) / det,
            (m[0] * m[8] - m[2] * m[6]) / det,
            (m[2] * m[3] - m[0] * m[5]) / det,
            (m[3] * m[7] - m[4] * m[6]) / det,
            (m[1] * m[6] - m[0] * m[7]) / det,
            (m[0] * m[4] - m[1] * m[3]) / det,
        ];
        Homography::new(inv)
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[6] * x + m[7] * y + m[8];
        (
            (m[0] * x + m[1] * y + m[2]) / w,
            (m[3] * x + m[4] * y + m[5]) / w,
        )
    }
}

fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// Inverse-mapped bilinear warp. `h` maps source pixel coordinates to
/// destination pixel coordinates. Destination pixels whose preimage falls
/// outside the source footprint get zero color and zero coverage.
pub fn warp(
    img: &Image,
    h: &Homography,
    out_w: usize,
    out_h: usize,
) -> Result<(Image, Mask), ImagingError> {
    let inv = h.invert()?;
    let mut out = Image::new(out_w, out_h);
    let mut mask = Mask::zeros(out_w, out_h);
    let sw = img.width as f64;
    let sh = img.height as f64;
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            // Pixel footprint extends half a pixel past the sample centers.
            if sx >= -0.5 && sx <= sw - 0.5 && sy >= -0.5 && sy <= sh - 0.5 {
                let px = img.sample_bilinear(sx, sy);
                out.set(x, y, [clamp01(px[0]), clamp01(px[1]), clamp01(px[2])]);
                mask.set(x, y, 1.0);
            }
        }
    }
    Ok((out, mask))
}

/// Same inverse mapping as [`warp`] applied to a scalar mask; the result is
/// the warped mask value multiplied by coverage.
pub fn warp_mask(
    msk: &Mask,
    h: &Homography,
    out_w: usize,
    out_h: usize,
) -> Result<Mask, ImagingError> {
    let inv = h.invert()?;
    let mut out = Mask::zeros(out_w, out_h);
    let sw = msk.width as f64;
    let sh = msk.height as f64;
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            if sx >= -0.5 && sx <= sw - 0.5 && sy >= -0.5 && sy <= sh - 0.5 {
                out.set(x, y, msk.sample_bilinear(sx, sy));
            }
        }
    }
    Ok(out)
}

/// Blends `overlay` over `base` at `origin`, weighted by `mask`.
/// A zero mask leaves the base untouched; a unit mask replaces it.
pub fn compose(
    base: &Image,
    overlay: &Image,
    mask: &Mask,
    origin: (usize, usize),
) -> Result<Image, ImagingError> {
    if overlay.width != mask.width || overlay.height != mask.height {
        return Err(ImagingError::MaskMismatch(
            mask.width,
            mask.height,
            overlay.width,
            overlay.height,
        ));
    }
    let (ox, oy) = origin;
    if ox + overlay.width > base.width || oy + overlay.height > base.height {
        return Err(ImagingError::OutOfBounds {
            ow: overlay.width,
            oh: overlay.height,
            x: ox,
            y: oy,
            bw: base.width,
            bh: base.height,
        });
    }
    let mut out = base.clone();
    for y in 0..overlay.height {
        for x in 0..overlay.width {
            let m = mask.get(x, y);
            if m <= 0.0 {
                continue;
            }
            let b = out.get(ox + x, oy + y);
            let o = overlay.get(x, y);
            if m >= 1.0 {
                out.set(ox + x, oy + y, o);
            } else {
                out.set(
                    ox + x,
                    oy + y,
                    [
                        b[0] * (1.0 - m) + o[0] * m,
                        b[1] * (1.0 - m) + o[1] * m,
                        b[2] * (1.0 - m) + o[2] * m,
                    ],
                );
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// PPM (P3/P6, maxval 255)
// ---------------------------------------------------------------------------

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    body_offset: usize,
}

/// Parses a PNM header: magic, then width/height/maxval tokens separated by
/// whitespace, with `#` comments allowed between tokens.
fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader, ImagingError> {
    if bytes.len() < 2 {
        return Err(ImagingError::MalformedHeader("file too short".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(ImagingError::MalformedHeader(
                "expected integer field".into(),
            ));
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = tok
            .parse()
            .map_err(|_| ImagingError::MalformedHeader(format!("bad integer {tok:?}")))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImagingError::MalformedHeader(
            "missing whitespace after maxval".into(),
        ));
    }
    pos += 1; // single whitespace byte before the raster
    Ok(PnmHeader {
        magic,
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        body_offset: pos,
    })
}

pub fn read_ppm(path: &Path) -> Result<Image, ImagingError> {
    let bytes = fs::read(path)?;
    read_ppm_bytes(&bytes)
}

pub fn read_ppm_bytes(bytes: &[u8]) -> Result<Image, ImagingError> {
    let hdr = parse_pnm_header(bytes)?;
    match &hdr.magic {
        b"P3" | b"P6" => {}
        other => {
            return Err(ImagingError::MalformedHeader(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    }
    if hdr.maxval != 255 {
        return Err(ImagingError::MalformedHeader(format!(
            "unsupported maxval {}",
            hdr.maxval
        )));
    }
    if hdr.width == 0 || hdr.height == 0 {
        return Err(ImagingError::MalformedHeader("zero dimension".into()));
    }
    let n = hdr.width * hdr.height * 3;
    let mut samples = Vec::with_capacity(n);
    if &hdr.magic == b"P6" {
        let body = &bytes[hdr.body_offset..];
        if body.len() < n {
            return Err(ImagingError::TruncatedData {
                expected: n,
                got: body.len(),
            });
        }
        samples.extend(body[..n].iter().map(|&b| b as f64 / 255.0));
    } else {
        let text = std::str::from_utf8(&bytes[hdr.body_offset..])
            .map_err(|_| ImagingError::MalformedHeader("non-ascii P3 body".into()))?;
        for tok in text.split_ascii_whitespace() {
            if samples.len() == n {
                break;
            }
            let v: u32 = tok
                .parse()
                .map_err(|_| ImagingError::MalformedHeader(format!("bad sample {tok:?}")))?;
            if v > 255 {
                return Err(ImagingError::MalformedHeader(format!(
                    "sample {v} exceeds maxval"
                )));
            }
            samples.push(v as f64 / 255.0);
        }
        if samples.len() < n {
            return Err(ImagingError::TruncatedData {
                expected: n,
                got: samples.len(),
            });
        }
    }
    Image::from_data(hdr.width, hdr.height, samples)
}

/// Writes canonical binary P6: `P6\n<w> <h>\n255\n` followed by the
/// quantized raster. Reading a canonical file and writing it back is
/// byte-identical.
pub fn write_ppm(img: &Image, path: &Path) -> Result<(), ImagingError> {
    let q = quantize(img);
    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", q.width, q.height)?;
    f.write_all(&q.data)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PFM (little-endian, scale -1.0, rows bottom-to-top)
// ---------------------------------------------------------------------------

pub fn write_pfm(img: &Image, path: &Path) -> Result<(), ImagingError> {
    let mut f = fs::File::create(path)?;
    write!(f, "PF\n{} {}\n-1.0\n", img.width, img.height)?;
    let mut buf = Vec::with_capacity(img.width * img.height * 12);
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for v in img.get(x, y) {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Image, ImagingError> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut lines = Vec::new();
    while lines.len() < 3 {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(ImagingError::MalformedHeader("incomplete header".into()));
        }
        lines.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| ImagingError::MalformedHeader("non-ascii header".into()))?
                .trim()
                .to_string(),
        );
        pos += 1;
    }
    if lines[0] != "PF" {
        return Err(ImagingError::MalformedHeader(format!(
            "unsupported magic {:?}",
            lines[0]
        )));
    }
    let dims: Vec<&str> = lines[1].split_ascii_whitespace().collect();
    if dims.len() != 2 {
        return Err(ImagingError::MalformedHeader("bad dimension line".into()));
    }
    let width: usize = dims[0]
        .parse()
        .map_err(|_| ImagingError::MalformedHeader("bad width".into()))?;
    let height: usize = dims[1]
        .parse()
        .map_err(|_| ImagingError::MalformedHeader("bad height".into()))?;
    let scale: f64 = lines[2]
        .parse()
        .map_err(|_| ImagingError::MalformedHeader("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(ImagingError::MalformedHeader(
            "big-endian PFM not supported (scale must be negative)".into(),
        ));
    }
    let n = width * height * 3;
    let body = &bytes[pos..];
    if body.len() < n * 4 {
        return Err(ImagingError::TruncatedData {
            expected: n * 4,
            got: body.len(),
        });
    }
    let mut img = Image::new(width, height);
    let mut off = 0;
    for y in (0..height).rev() {
        for x in 0..width {
            let mut px = [0.0; 3];
            for c in px.iter_mut() {
                let v = f32::from_le_bytes(body[off..off + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(ImagingError::MalformedHeader(
                        "non-finite sample in PFM body".into(),
                    ));
                }
                *c = clamp01(v as f64);
                off += 4;
            }
            img.set(x, y, px);
        }
    }
    Ok(img)
}
