//! Frames, sequences, crops and the on-disk formats: binary PGM/PPM for
//! frames and the `BLTT1` container for raw float tensors.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{ByteReader, Tensor4};

const TENSOR_MAGIC: &[u8; 5] = b"BLTT1";

/// One frame, channel-major `(channels, height, width)`, intensities on the
/// `[0, 255]` scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "Frame::new",
                format!("{}x{}x{}", channels, height, width),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    /// `(channels, height, width)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Frame {
        Frame {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Channel mean, one plane of `height * width` values.
    pub fn luma(&self) -> Vec<f64> {
        let n = self.height * self.width;
        if self.channels == 1 {
            return self.data.clone();
        }
        let inv = 1.0 / self.channels as f64;
        (0..n)
            .map(|i| (0..self.channels).map(|c| self.data[c * n + i]).sum::<f64>() * inv)
            .collect()
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same(&self, op: &'static str, other: &Frame) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(op, format!("{:?}", self.dims()), format!("{:?}", other.dims())));
        }
        Ok(())
    }

    /// Clamps to `[0, 255]` and rounds half away from zero.
    pub fn quantized(&self) -> Frame {
        self.map(|v| v.clamp(0.0, 255.0).round())
    }

    pub fn crop(&self, window: &CropWindow) -> Result<Frame> {
        window.check(self.height, self.width)?;
        let mut data = Vec::with_capacity(self.channels * window.height * window.width);
        for c in 0..self.channels {
            for y in window.top..window.top + window.height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + window.left..row + window.left + window.width]);
            }
        }
        Frame::new(self.channels, window.height, window.width, data)
    }
}

/// Rectangular crop; `size` in the common square case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropWindow {
    pub const DEFAULT_SIZE: usize = 96;

    pub fn square(top: usize, left: usize, size: usize) -> Self {
        Self {
            top,
            left,
            height: size,
            width: size,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            height,
            width,
        }
    }

    pub fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.top + self.height > height || self.left + self.width > width {
            return Err(Error::InvalidParam(format!(
                "crop window {self:?} outside {height}x{width} frame"
            )));
        }
        Ok(())
    }

    /// Crops a row-major `height x width` plane.
    pub fn crop_plane<T: Copy>(&self, plane: &[T], height: usize, width: usize) -> Result<Vec<T>> {
        self.check(height, width)?;
        if plane.len() != height * width {
            return Err(Error::shape("crop_plane", height * width, plane.len()));
        }
        let mut out = Vec::with_capacity(self.height * self.width);
        for y in self.top..self.top + self.height {
            out.extend_from_slice(&plane[y * width + self.left..y * width + self.left + self.width]);
        }
        Ok(out)
    }
}

/// Ordered frames sharing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    pub frame_rate: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| !f.same_shape(first)) {
                return Err(Error::shape(
                    "FrameSequence::new",
                    format!("{:?} for every frame", first.dims()),
                    format!("{:?} at frame {i}", f.dims()),
                ));
            }
        }
        Ok(Self {
            frames,
            frame_rate: None,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    /// `(channels, height, width)` of the frames, if any.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.frames.first().map(Frame::dims)
    }

    /// Temporal window of `len` frames centered on `i` with edge replication.
    pub fn window(&self, i: usize, len: usize) -> Vec<&Frame> {
        let half = (len / 2) as isize;
        let last = self.frames.len() as isize - 1;
        (-half..=half)
            .map(|k| &self.frames[(i as isize + k).clamp(0, last) as usize])
            .collect()
    }

    pub fn crop(&self, window: &CropWindow) -> Result<FrameSequence> {
        let frames = self.frames.iter().map(|f| f.crop(window)).collect::<Result<Vec<_>>>()?;
        Ok(FrameSequence {
            frames,
            frame_rate: self.frame_rate,
        })
    }

    pub fn map_frames(&self, f: impl Fn(&Frame) -> Frame) -> FrameSequence {
        FrameSequence {
            frames: self.frames.iter().map(f).collect(),
            frame_rate: self.frame_rate,
        }
    }
}

// ---------------------------------------------------------------------------
// PGM / PPM

/// Decodes a binary PGM (P5) or PPM (P6) image with maxval <= 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("pnm", "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format("pnm", format!("unsupported magic {other:?}"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        token()?
            .parse::<usize>()
            .map_err(|_| Error::format("pnm", format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("pnm", format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let n = width * height * channels;
    if bytes.len() < start + n {
        return Err(Error::format("pnm", "truncated raster"));
    }
    let raster = &bytes[start..start + n];
    let scale = 255.0 / maxval as f64;
    let hw = width * height;
    let mut data = vec![0.0; n];
    for (i, &b) in raster.iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        data[c * hw + p] = if maxval == 255 { b as f64 } else { b as f64 * scale };
    }
    Frame::new(channels, height, width, data)
}

/// Encodes a 1- or 3-channel frame as binary PGM/PPM, clamping to
/// `[0, 255]` and rounding half away from zero.
pub fn encode_pnm(frame: &Frame) -> Result<Vec<u8>> {
    let magic = match frame.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::InvalidParam(format!("cannot write {c}-channel frame as PGM/PPM"))),
    };
    if let Some(v) = frame.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("frame value {v}")));
    }
    let (c, h, w) = frame.dims();
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let hw = h * w;
    out.reserve(c * hw);
    for p in 0..hw {
        for ch in 0..c {
            out.push(to_byte(frame.data()[ch * hw + p]));
        }
    }
    Ok(out)
}

#[inline]
pub fn to_byte(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Format { kind, reason } => Error::format(kind, format!("{}: {reason}", path.display())),
        other => other,
    })
}

pub fn write_frame(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(frame)?).map_err(|e| Error::io(path, e))
}

/// Minimal glob: `*` matches any run, `?` any single character.
fn glob_match(pattern: &[u8], name: &[u8]) -> bool {
    match (pattern.first(), name.first()) {
        (None, None) => true,
        (Some(b'*'), _) => glob_match(&pattern[1..], name) || (!name.is_empty() && glob_match(pattern, &name[1..])),
        (Some(b'?'), Some(_)) => glob_match(&pattern[1..], &name[1..]),
        (Some(p), Some(n)) if p == n => glob_match(&pattern[1..], &name[1..]),
        _ => false,
    }
}

/// Loads every file in `dir` whose name matches `pattern`, in lexicographic
/// order. At least two frames of identical shape are required.
pub fn load_sequence(dir: impl AsRef<Path>, pattern: &str) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| glob_match(pattern.as_bytes(), n.as_bytes()))
        })
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "{}: need at least 2 frames matching {pattern:?}, found {}",
            dir.display(),
            paths.len()
        )));
    }
    let frames = paths.iter().map(read_frame).collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Default pattern matching what [`save_sequence`] writes.
pub const FRAME_PATTERN: &str = "frame_*.p?m";

pub fn frame_file_name(i: usize, channels: usize) -> String {
    let ext = if channels == 3 { "ppm" } else { "pgm" };
    format!("frame_{i:05}.{ext}")
}

/// Writes `frame_00000.pgm`, `frame_00001.pgm`, ... (PPM for 3 channels),
/// creating `dir` if needed.
pub fn save_sequence(seq: &FrameSequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames().iter().enumerate() {
        write_frame(dir.join(frame_file_name(i, f.channels())), f)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// BLTT1 tensor container

pub fn encode_tensor(t: &Tensor4) -> Vec<u8> {
    let mut out = TENSOR_MAGIC.to_vec();
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.reserve(4 * t.len());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor4> {
    let mut r = ByteReader::new(bytes, "tensor");
    if r.take(5)? != TENSOR_MAGIC {
        return Err(Error::format("tensor", "bad magic"));
    }
    let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::format("tensor", "extent overflow"))?;
    let data = r.f32_vec(n)?;
    if !r.is_empty() {
        return Err(Error::format("tensor", "trailing bytes after payload"));
    }
    Tensor4::from_vec(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor4) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor4> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// `(1, channels, height, width)` view of a frame.
pub fn frame_to_tensor(frame: &Frame) -> Tensor4 {
    Tensor4::from_vec([1, frame.channels, frame.height, frame.width], frame.data.clone()).expect("sized")
}

pub fn tensor_to_frame(t: &Tensor4) -> Result<Frame> {
    let [n, c, h, w] = t.shape();
    if n != 1 {
        return Err(Error::shape("tensor_to_frame", "batch 1", n));
    }
    Frame::new(c, h, w, t.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_byte_maps_to_same_real() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[128, 7]);
        let f = decode_pnm(&bytes).unwrap();
        assert_eq!(f.dims(), (1, 1, 2));
        assert_eq!(f.data(), &[128.0, 7.0]);
    }

    #[test]
    fn ppm_is_interleaved_on_disk() {
        let f = Frame::new(3, 1, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode_pnm(&f).unwrap();
        assert!(bytes.ends_with(&[1, 3, 5, 2, 4, 6]));
        assert_eq!(decode_pnm(&bytes).unwrap(), f);
    }

    #[test]
    fn save_clamps_and_rounds() {
        assert_eq!(to_byte(255.7), 255);
        assert_eq!(to_byte(127.5), 128);
        assert_eq!(to_byte(126.5), 127);
        assert_eq!(to_byte(-3.0), 0);
        assert_eq!(to_byte(12.49), 12);
    }

    #[test]
    fn crop_selects_subarray() {
        let f = Frame::from_fn(1, 128, 128, |_, y, x| (y * 128 + x) as f64);
        assert_eq!(f.crop(&CropWindow::full(128, 128)).unwrap(), f);
        let c = f.crop(&CropWindow::square(0, 0, 96)).unwrap();
        assert_eq!(c.dims(), (1, 96, 96));
        assert_eq!(c.get(0, 95, 95), (95 * 128 + 95) as f64);
        assert!(f.crop(&CropWindow::square(40, 0, 96)).is_err());
    }

    #[test]
    fn crop_keeps_mask_correspondence() {
        // The mask annotates each pixel with its own flat index; after a joint
        // crop the annotation must still point at the same source pixel.
        let f = Frame::from_fn(1, 20, 30, |_, y, x| (y * 30 + x) as f64);
        let mask: Vec<usize> = (0..600).collect();
        let w = CropWindow { top: 3, left: 7, height: 9, width: 11 };
        let fc = f.crop(&w).unwrap();
        let mc = w.crop_plane(&mask, 20, 30).unwrap();
        for (i, &m) in mc.iter().enumerate() {
            assert_eq!(fc.data()[i], m as f64);
        }
    }

    #[test]
    fn tensor_container_edge_cases() {
        let t = Tensor4::zeros([0, 2, 3, 4]);
        let bytes = encode_tensor(&t);
        assert_eq!(bytes.len(), 5 + 16);
        assert_eq!(decode_tensor(&bytes).unwrap(), t);

        let mut bad = encode_tensor(&Tensor4::filled([1, 1, 1, 2], 1.0));
        bad[4] = b'2';
        assert!(decode_tensor(&bad).is_err());
        let good = encode_tensor(&Tensor4::filled([1, 1, 1, 2], 1.0));
        assert!(decode_tensor(&good[..good.len() - 2]).is_err());
    }

    #[test]
    fn sequence_requires_matching_shapes() {
        let a = Frame::filled(1, 4, 4, 0.0);
        let b = Frame::filled(1, 4, 5, 0.0);
        assert!(FrameSequence::new(vec![a.clone(), b]).is_err());
        let s = FrameSequence::new(vec![a.clone(), a.clone(), a]).unwrap();
        let w = s.window(0, 5);
        assert_eq!(w.len(), 5);
    }

    #[test]
    fn glob() {
        assert!(glob_match(b"frame_*.p?m", b"frame_00001.pgm"));
        assert!(glob_match(b"frame_*.p?m", b"frame_1.ppm"));
        assert!(!glob_match(b"frame_*.p?m", b"other.pgm"));
    }

    proptest! {
        #[test]
        fn tensor_round_trip_is_bit_exact(v in proptest::collection::vec(-1e6f32..1e6, 12)) {
            let t = Tensor4::from_vec([1, 2, 2, 3], v.iter().map(|&x| x as f64).collect()).unwrap();
            prop_assert_eq!(decode_tensor(&encode_tensor(&t)).unwrap(), t);
        }

        #[test]
        fn crop_commutes_with_pointwise_maps(top in 0usize..5, left in 0usize..5, h in 1usize..6, w in 1usize..6) {
            let f = Frame::from_fn(2, 10, 10, |c, y, x| (c * 100 + y * 10 + x) as f64);
            let win = CropWindow { top, left, height: h, width: w };
            let g = |v: f64| (v * 0.37).sin() * 40.0 + 3.0;
            prop_assert_eq!(f.map(g).crop(&win).unwrap(), f.crop(&win).unwrap().map(g));
        }
    }
}
