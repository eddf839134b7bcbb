//! Value types shared by every part of the relay: frames, annotations,
//! descriptions and processing results, plus the small pure functions that
//! operate on them.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Largest accepted frame width or height, in pixels.
pub const MAX_FRAME_DIM: u32 = 4096;
/// Largest number of annotations a single result may carry.
pub const MAX_ANNOTATIONS: usize = 256;
/// Largest description text, in bytes.
pub const MAX_DESCRIPTION_BYTES: usize = 1024;

const COORD_SCALE: f64 = 65535.0;
const CONFIDENCE_SCALE: f64 = 10000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("annotation kind {0:?} has no center")]
    UnsupportedKind(AnnotationKind),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("invalid description: {0}")]
    InvalidDescription(String),
    #[error("invalid processor id {0:?}")]
    InvalidProcessorId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PixelFormat {
    Gray8 = 0,
    Rgb8 = 1,
}

impl PixelFormat {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PixelFormat::Gray8),
            1 => Some(PixelFormat::Rgb8),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn bytes_per_pixel(self) -> usize {
        match self {
            PixelFormat::Gray8 => 1,
            PixelFormat::Rgb8 => 3,
        }
    }
}

/// The check that rejected a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameViolation {
    #[error("frame dimensions {width}x{height} outside 1..={MAX_FRAME_DIM}")]
    Dims { width: u32, height: u32 },
    #[error("unknown pixel format code {0}")]
    Format(u8),
    #[error("payload is {actual} bytes, expected {expected}")]
    Length { expected: usize, actual: usize },
}

impl FrameViolation {
    /// True when the frame was rejected for exceeding the size cap rather
    /// than for being inconsistent.
    pub fn is_oversize(&self) -> bool {
        matches!(self, FrameViolation::Dims { width, height }
            if *width > MAX_FRAME_DIM || *height > MAX_FRAME_DIM)
    }
}

/// Checks frame geometry against its payload length. Checks run in the
/// order dims, format, length; the first failure is reported.
pub fn validate_frame(
    width: u32,
    height: u32,
    format_code: u8,
    payload_len: usize,
) -> Result<PixelFormat, FrameViolation> {
    if !(1..=MAX_FRAME_DIM).contains(&width) || !(1..=MAX_FRAME_DIM).contains(&height) {
        return Err(FrameViolation::Dims { width, height });
    }
    let format = PixelFormat::from_code(format_code).ok_or(FrameViolation::Format(format_code))?;
    let expected = width as usize * height as usize * format.bytes_per_pixel();
    if payload_len != expected {
        return Err(FrameViolation::Length {
            expected,
            actual: payload_len,
        });
    }
    Ok(format)
}

/// One captured image. Immutable once built; cloning shares the pixel buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    seq: u32,
    capture_ts_us: u64,
    width: u32,
    height: u32,
    format: PixelFormat,
    pixels: Arc<[u8]>,
}

impl Frame {
    pub fn new(
        seq: u32,
        capture_ts_us: u64,
        width: u32,
        height: u32,
        format: PixelFormat,
        pixels: impl Into<Arc<[u8]>>,
    ) -> Result<Self, FrameViolation> {
        let pixels = pixels.into();
        validate_frame(width, height, format.code(), pixels.len())?;
        Ok(Frame {
            seq,
            capture_ts_us,
            width,
            height,
            format,
            pixels,
        })
    }

    pub fn seq(&self) -> u32 {
        self.seq
    }

    pub fn capture_ts_us(&self) -> u64 {
        self.capture_ts_us
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn format(&self) -> PixelFormat {
        self.format
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Grayscale view of the frame. GRAY8 frames are copied as-is.
    pub fn to_luma(&self) -> LumaImage {
        let data = match self.format {
            PixelFormat::Gray8 => self.pixels.to_vec(),
            PixelFormat::Rgb8 => self
                .pixels
                .chunks_exact(3)
                .map(|px| luma(px[0], px[1], px[2]))
                .collect(),
        };
        LumaImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Single-channel 8-bit image, row-major without padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumaImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl LumaImage {
    pub fn new(width: u32, height: u32) -> Self {
        LumaImage {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    pub fn same_dims(&self, other: &LumaImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Wraps the image as a GRAY8 frame.
    pub fn into_frame(self, seq: u32, capture_ts_us: u64) -> Result<Frame, FrameViolation> {
        Frame::new(
            seq,
            capture_ts_us,
            self.width,
            self.height,
            PixelFormat::Gray8,
            self.data,
        )
    }
}

/// Pixel-space box with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> u32 {
        self.width() * self.height()
    }

    /// Corners in normalized image coordinates, using pixel edges: the box
    /// spans `[x0, x1 + 1)` so a full-frame box maps to `(0,0)-(1,1)`.
    pub fn normalized(&self, width: u32, height: u32) -> ((f64, f64), (f64, f64)) {
        let (w, h) = (width as f64, height as f64);
        (
            (self.x0 as f64 / w, self.y0 as f64 / h),
            ((self.x1 + 1) as f64 / w, (self.y1 + 1) as f64 / h),
        )
    }

    pub fn to_annotation(
        &self,
        label: impl Into<String>,
        confidence: f64,
        width: u32,
        height: u32,
    ) -> Result<Annotation, ModelError> {
        let (min, max) = self.normalized(width, height);
        Annotation::bbox(label, confidence, min, max)
    }
}

/// Integer Rec.601-style luma: `(77r + 150g + 29b + 128) >> 8`.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((77 * r as u32 + 150 * g as u32 + 29 * b as u32 + 128) >> 8) as u8
}

/// Name of a processor: `[a-z0-9_]{1,64}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProcessorId(String);

impl ProcessorId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        let ok = (1..=64).contains(&id.len())
            && id
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if ok {
            Ok(ProcessorId(id))
        } else {
            Err(ModelError::InvalidProcessorId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ProcessorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A coordinate in `[0, 1]`, stored as a 16-bit fixed-point value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NormCoord(u16);

impl NormCoord {
    pub fn quantize(v: f64) -> Self {
        NormCoord((v.clamp(0.0, 1.0) * COORD_SCALE).round() as u16)
    }

    pub fn from_raw(raw: u16) -> Self {
        NormCoord(raw)
    }

    pub fn raw(self) -> u16 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / COORD_SCALE
    }
}

/// A confidence in `[0, 1]` at 1/10000 resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Confidence(u16);

impl Confidence {
    pub const MAX_RAW: u16 = 10000;

    pub fn quantize(v: f64) -> Self {
        Confidence((v.clamp(0.0, 1.0) * CONFIDENCE_SCALE).round() as u16)
    }

    pub fn from_raw(raw: u16) -> Option<Self> {
        (raw <= Self::MAX_RAW).then_some(Confidence(raw))
    }

    pub fn raw(self) -> u16 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / CONFIDENCE_SCALE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AnnotationKind {
    Box = 0,
    Point = 1,
    Polyline = 2,
    Label = 3,
}

impl AnnotationKind {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(AnnotationKind::Box),
            1 => Some(AnnotationKind::Point),
            2 => Some(AnnotationKind::Polyline),
            3 => Some(AnnotationKind::Label),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    fn accepts_count(self, n: usize) -> bool {
        match self {
            AnnotationKind::Box => n == 2,
            AnnotationKind::Point | AnnotationKind::Label => n == 1,
            AnnotationKind::Polyline => n >= 2,
        }
    }
}

pub type NormPoint = (NormCoord, NormCoord);

/// Structured overlay with normalized coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Annotation {
    kind: AnnotationKind,
    label: String,
    confidence: Confidence,
    coords: Vec<NormPoint>,
}

impl Annotation {
    /// Builds an annotation from already-quantized parts, enforcing the
    /// per-kind coordinate count and box corner ordering.
    pub fn from_parts(
        kind: AnnotationKind,
        label: impl Into<String>,
        confidence: Confidence,
        coords: Vec<NormPoint>,
    ) -> Result<Self, ModelError> {
        let label = label.into();
        if !kind.accepts_count(coords.len()) {
            return Err(ModelError::InvalidAnnotation(format!(
                "{kind:?} cannot have {} coordinate pairs",
                coords.len()
            )));
        }
        if kind == AnnotationKind::Box {
            let (a, b) = (coords[0], coords[1]);
            if a.0 > b.0 || a.1 > b.1 {
                return Err(ModelError::InvalidAnnotation(
                    "box min-corner exceeds max-corner".into(),
                ));
            }
        }
        if label.len() > u16::MAX as usize {
            return Err(ModelError::InvalidAnnotation("label too long".into()));
        }
        Ok(Annotation {
            kind,
            label,
            confidence,
            coords,
        })
    }

    pub fn new(
        kind: AnnotationKind,
        label: impl Into<String>,
        confidence: f64,
        coords: &[(f64, f64)],
    ) -> Result<Self, ModelError> {
        for &(x, y) in coords {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(ModelError::OutOfRange(format!("coordinate ({x}, {y})")));
            }
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ModelError::OutOfRange(format!("confidence {confidence}")));
        }
        let coords = coords
            .iter()
            .map(|&(x, y)| (NormCoord::quantize(x), NormCoord::quantize(y)))
            .collect();
        Self::from_parts(kind, label, Confidence::quantize(confidence), coords)
    }

    pub fn bbox(
        label: impl Into<String>,
        confidence: f64,
        min: (f64, f64),
        max: (f64, f64),
    ) -> Result<Self, ModelError> {
        Self::new(AnnotationKind::Box, label, confidence, &[min, max])
    }

    pub fn point(label: impl Into<String>, confidence: f64, at: (f64, f64)) -> Result<Self, ModelError> {
        Self::new(AnnotationKind::Point, label, confidence, &[at])
    }

    pub fn label_at(label: impl Into<String>, confidence: f64, at: (f64, f64)) -> Result<Self, ModelError> {
        Self::new(AnnotationKind::Label, label, confidence, &[at])
    }

    pub fn kind(&self) -> AnnotationKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn confidence(&self) -> Confidence {
        self.confidence
    }

    pub fn coords(&self) -> &[NormPoint] {
        &self.coords
    }

    pub fn coords_f64(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.coords.iter().map(|(x, y)| (x.value(), y.value()))
    }
}

/// Center of a BOX (corner midpoint) or POINT (the point itself).
pub fn annotation_center(a: &Annotation) -> Result<(f64, f64), ModelError> {
    match a.kind {
        AnnotationKind::Box => {
            let (x0, y0) = (a.coords[0].0.value(), a.coords[0].1.value());
            let (x1, y1) = (a.coords[1].0.value(), a.coords[1].1.value());
            Ok(((x0 + x1) / 2.0, (y0 + y1) / 2.0))
        }
        AnnotationKind::Point => Ok((a.coords[0].0.value(), a.coords[0].1.value())),
        other => Err(ModelError::UnsupportedKind(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Priority {
    Routine = 0,
    Interrupt = 1,
}

impl Priority {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Priority::Routine),
            1 => Some(Priority::Interrupt),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Priority::Routine => "routine",
            Priority::Interrupt => "interrupt",
        }
    }
}

/// Checks description text: non-empty, at most 1024 bytes.
pub fn check_description_text(text: &str) -> Result<(), ModelError> {
    if text.is_empty() {
        return Err(ModelError::InvalidDescription("empty text".into()));
    }
    if text.len() > MAX_DESCRIPTION_BYTES {
        return Err(ModelError::InvalidDescription(format!(
            "{} bytes exceeds {MAX_DESCRIPTION_BYTES}",
            text.len()
        )));
    }
    Ok(())
}

/// Cuts `text` to at most `max` bytes on a char boundary.
pub fn truncate_utf8(text: &str, max: usize) -> &str {
    if text.len() <= max {
        return text;
    }
    let mut end = max;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

/// Text meant for speech output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Description {
    pub text: String,
    pub priority: Priority,
    pub source: ProcessorId,
    pub frame_seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HBand {
    Left,
    Center,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VBand {
    Top,
    Middle,
    Bottom,
}

impl fmt::Display for HBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HBand::Left => "left",
            HBand::Center => "center",
            HBand::Right => "right",
        })
    }
}

impl fmt::Display for VBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VBand::Top => "top",
            VBand::Middle => "middle",
            VBand::Bottom => "bottom",
        })
    }
}

/// Where something sits in the wearer's field of view, by thirds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EgocentricDirection {
    pub hband: HBand,
    pub vband: VBand,
}

impl fmt::Display for EgocentricDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.hband, self.vband)
    }
}

/// Maps a normalized center point to thirds bands. Values exactly on 1/3 or
/// 2/3 fall in the center band.
pub fn egocentric_direction(cx: f64, cy: f64) -> Result<EgocentricDirection, ModelError> {
    if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
        return Err(ModelError::OutOfRange(format!("center ({cx}, {cy})")));
    }
    let third = 1.0 / 3.0;
    let two_thirds = 2.0 / 3.0;
    let hband = if cx < third {
        HBand::Left
    } else if cx > two_thirds {
        HBand::Right
    } else {
        HBand::Center
    };
    let vband = if cy < third {
        VBand::Top
    } else if cy > two_thirds {
        VBand::Bottom
    } else {
        VBand::Middle
    };
    Ok(EgocentricDirection { hband, vband })
}

/// Queue wait and execution time for one dispatched frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TimingBreakdown {
    pub recv_to_dispatch_us: u32,
    pub process_us: u32,
}

impl TimingBreakdown {
    pub fn from_durations(wait: std::time::Duration, process: std::time::Duration) -> Self {
        TimingBreakdown {
            recv_to_dispatch_us: saturating_us(wait),
            process_us: saturating_us(process),
        }
    }
}

fn saturating_us(d: std::time::Duration) -> u32 {
    u32::try_from(d.as_micros()).unwrap_or(u32::MAX)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessResult {
    pub frame_seq: u32,
    pub processor: ProcessorId,
    pub annotations: Vec<Annotation>,
    pub description: Option<Description>,
    pub timing: TimingBreakdown,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_examples() {
        assert_eq!(luma(0, 0, 0), 0);
        assert_eq!(luma(255, 255, 255), 255);
        // (77*255 + 128) >> 8 = 19763 >> 8
        assert_eq!(luma(255, 0, 0), 77);
    }

    #[test]
    fn luma_gray_identity_and_monotone() {
        for x in 0..=255u8 {
            assert_eq!(luma(x, x, x), x);
        }
        for a in (0..=255u8).step_by(5) {
            for b in (0..=255u8).step_by(17) {
                for c in 0..255u8 {
                    assert!(luma(c, a, b) <= luma(c + 1, a, b));
                    assert!(luma(a, c, b) <= luma(a, c + 1, b));
                    assert!(luma(a, b, c) <= luma(a, b, c + 1));
                }
            }
        }
    }

    #[test]
    fn egocentric_examples() {
        let d = egocentric_direction(0.5, 0.5).unwrap();
        assert_eq!((d.hband, d.vband), (HBand::Center, VBand::Middle));
        let d = egocentric_direction(0.1, 0.9).unwrap();
        assert_eq!((d.hband, d.vband), (HBand::Left, VBand::Bottom));
        let d = egocentric_direction(1.0 / 3.0, 2.0 / 3.0).unwrap();
        assert_eq!((d.hband, d.vband), (HBand::Center, VBand::Middle));
        assert_eq!(d.to_string(), "center, middle");
    }

    #[test]
    fn egocentric_rejects_out_of_range() {
        assert!(egocentric_direction(-0.01, 0.5).is_err());
        assert!(egocentric_direction(0.5, 1.5).is_err());
        assert!(egocentric_direction(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn egocentric_grid_matches_if_chain() {
        fn oracle(v: f64) -> u8 {
            if 3.0 * v < 1.0 {
                0
            } else if 3.0 * v > 2.0 {
                2
            } else {
                1
            }
        }
        let mut regions = std::collections::HashSet::new();
        for i in 0..=100 {
            for j in 0..=100 {
                let (cx, cy) = (i as f64 / 100.0, j as f64 / 100.0);
                let d = egocentric_direction(cx, cy).unwrap();
                let h = match d.hband {
                    HBand::Left => 0,
                    HBand::Center => 1,
                    HBand::Right => 2,
                };
                let v = match d.vband {
                    VBand::Top => 0,
                    VBand::Middle => 1,
                    VBand::Bottom => 2,
                };
                assert_eq!((h, v), (oracle(cx), oracle(cy)), "at ({cx}, {cy})");
                regions.insert((h, v));
            }
        }
        assert_eq!(regions.len(), 9);
    }

    #[test]
    fn validate_frame_examples() {
        assert_eq!(validate_frame(8, 8, 0, 64), Ok(PixelFormat::Gray8));
        assert_eq!(
            validate_frame(8, 8, 1, 64),
            Err(FrameViolation::Length {
                expected: 192,
                actual: 64
            })
        );
        assert!(matches!(validate_frame(0, 8, 0, 0), Err(FrameViolation::Dims { .. })));
        assert_eq!(validate_frame(8, 8, 7, 64), Err(FrameViolation::Format(7)));
        let big = validate_frame(4097, 1, 0, 4097).unwrap_err();
        assert!(big.is_oversize());
        assert!(!validate_frame(0, 1, 0, 0).unwrap_err().is_oversize());
    }

    #[test]
    fn frame_revalidates() {
        let f = Frame::new(1, 0, 3, 2, PixelFormat::Rgb8, vec![0u8; 18]).unwrap();
        assert!(validate_frame(f.width(), f.height(), f.format().code(), f.pixels().len()).is_ok());
        assert!(Frame::new(1, 0, 3, 2, PixelFormat::Rgb8, vec![0u8; 6]).is_err());
    }

    #[test]
    fn annotation_centers() {
        let b = Annotation::bbox("x", 1.0, (0.0, 0.0), (1.0, 1.0)).unwrap();
        assert_eq!(annotation_center(&b).unwrap(), (0.5, 0.5));
        let p = Annotation::point("p", 1.0, (0.25, 0.75)).unwrap();
        let (x, y) = annotation_center(&p).unwrap();
        assert!((x - 0.25).abs() <= 1.0 / 65535.0 && (y - 0.75).abs() <= 1.0 / 65535.0);
        let b = Annotation::bbox("x", 1.0, (0.2, 0.2), (0.4, 0.6)).unwrap();
        let (x, y) = annotation_center(&b).unwrap();
        assert!((x - 0.3).abs() <= 1.0 / 65535.0 && (y - 0.4).abs() <= 1.0 / 65535.0);
        let l = Annotation::label_at("l", 1.0, (0.5, 0.5)).unwrap();
        assert_eq!(annotation_center(&l), Err(ModelError::UnsupportedKind(AnnotationKind::Label)));
    }

    #[test]
    fn annotation_coordinate_rules() {
        assert!(Annotation::new(AnnotationKind::Box, "b", 1.0, &[(0.0, 0.0)]).is_err());
        assert!(Annotation::new(AnnotationKind::Polyline, "l", 1.0, &[(0.0, 0.0)]).is_err());
        assert!(Annotation::new(AnnotationKind::Polyline, "l", 1.0, &[(0.0, 0.0), (1.0, 1.0), (0.5, 0.2)]).is_ok());
        assert!(Annotation::bbox("b", 1.0, (0.6, 0.0), (0.5, 1.0)).is_err());
        assert!(Annotation::point("p", 1.5, (0.0, 0.0)).is_err());
    }

    #[test]
    fn processor_id_grammar() {
        assert!(ProcessorId::new("find_item").is_ok());
        assert!(ProcessorId::new("").is_err());
        assert!(ProcessorId::new("Find").is_err());
        assert!(ProcessorId::new("a".repeat(65)).is_err());
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        assert_eq!(truncate_utf8("héllo", 2), "h");
        assert_eq!(truncate_utf8("abc", 10), "abc");
    }

    #[test]
    fn timing_saturates() {
        let t = TimingBreakdown::from_durations(
            std::time::Duration::from_secs(1 << 20),
            std::time::Duration::from_micros(5),
        );
        assert_eq!(t.recv_to_dispatch_us, u32::MAX);
        assert_eq!(t.process_us, 5);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn coord_quantization_round_trip(v in 0.0f64..=1.0) {
                prop_assert!((NormCoord::quantize(v).value() - v).abs() <= 1.0 / 65535.0);
                prop_assert!((Confidence::quantize(v).value() - v).abs() <= 1.0 / 10000.0);
            }

            #[test]
            fn validated_frames_rebuild(w in 1u32..64, h in 1u32..64, rgb in any::<bool>()) {
                let fmt = if rgb { PixelFormat::Rgb8 } else { PixelFormat::Gray8 };
                let len = (w * h) as usize * fmt.bytes_per_pixel();
                prop_assert!(validate_frame(w, h, fmt.code(), len).is_ok());
                let f = Frame::new(1, 0, w, h, fmt, vec![0u8; len]).unwrap();
                prop_assert!(validate_frame(f.width(), f.height(), f.format().code(), f.pixels().len()).is_ok());
            }
        }
    }
}
