//! Frame sources: binary PGM/PPM directories and synthetic generators.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::model::{Frame, FrameViolation, LumaImage, PixelFormat};
use crate::processors::glyph::{render_text, text_width, GlyphFont, GLYPH_HEIGHT};

pub const SYNTHETIC_WIDTH: u32 = 320;
pub const SYNTHETIC_HEIGHT: u32 = 240;
pub const BOX_SIDE: u32 = 16;
pub const BOX_STEP: u32 = 4;
pub const BOX_Y: u32 = (SYNTHETIC_HEIGHT - BOX_SIDE) / 2;
pub const BAR_COUNT: u32 = 8;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("not a binary PGM/PPM (magic {0:?})")]
    Magic(String),
    #[error("malformed header")]
    Header,
    #[error("maxval {0} unsupported, only 255")]
    Maxval(u32),
    #[error("pixel data is {actual} bytes, expected {expected}")]
    Length { expected: usize, actual: usize },
}

/// A decoded PGM (gray) or PPM (RGB) image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: u32,
    pub height: u32,
    pub format: PixelFormat,
    pub pixels: Vec<u8>,
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], PnmError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(PnmError::Header),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<u32, PnmError> {
    std::str::from_utf8(header_token(bytes, pos)?)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(PnmError::Header)
}

/// Parses a P5 or P6 image with maxval 255.
pub fn parse_pnm(bytes: &[u8]) -> Result<PnmImage, PnmError> {
    let format = match bytes.get(..2) {
        Some(b"P5") => PixelFormat::Gray8,
        Some(b"P6") => PixelFormat::Rgb8,
        other => {
            return Err(PnmError::Magic(String::from_utf8_lossy(other.unwrap_or(bytes)).into_owned()));
        }
    };
    let mut pos = 2;
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(PnmError::Header);
    }
    let width = header_number(bytes, &mut pos)?;
    let height = header_number(bytes, &mut pos)?;
    let maxval = header_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(PnmError::Maxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(PnmError::Header);
    }
    pos += 1;
    let expected = width as usize * height as usize * format.bytes_per_pixel();
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(PnmError::Length {
            expected,
            actual: raster.len(),
        });
    }
    Ok(PnmImage {
        width,
        height,
        format,
        pixels: raster.to_vec(),
    })
}

/// Encodes as P5 (gray) or P6 (RGB).
pub fn write_pnm(width: u32, height: u32, format: PixelFormat, pixels: &[u8]) -> Vec<u8> {
    let magic = match format {
        PixelFormat::Gray8 => "P5",
        PixelFormat::Rgb8 => "P6",
    };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("invalid source spec {0:?}: expected dir:<path>, synthetic:bars, synthetic:moving_box or synthetic:text=<TEXT>")]
    Spec(String),
    #[error("text source {text:?}: {reason}")]
    Text { text: String, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} contains no .pgm or .ppm files", .0.display())]
    EmptyDir(PathBuf),
    #[error("{}: {source}", path.display())]
    Pnm {
        path: PathBuf,
        #[source]
        source: PnmError,
    },
    #[error("{}: {source}", path.display())]
    Frame {
        path: PathBuf,
        #[source]
        source: FrameViolation,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceSpec {
    Dir(PathBuf),
    Bars,
    MovingBox,
    Text(String),
}

impl FromStr for SourceSpec {
    type Err = SourceError;

    fn from_str(s: &str) -> Result<Self, SourceError> {
        if let Some(path) = s.strip_prefix("dir:") {
            if path.is_empty() {
                return Err(SourceError::Spec(s.to_owned()));
            }
            return Ok(SourceSpec::Dir(PathBuf::from(path)));
        }
        match s {
            "synthetic:bars" => return Ok(SourceSpec::Bars),
            "synthetic:moving_box" => return Ok(SourceSpec::MovingBox),
            _ => {}
        }
        let Some(text) = s.strip_prefix("synthetic:text=") else {
            return Err(SourceError::Spec(s.to_owned()));
        };
        let bad = |reason: &str| SourceError::Text {
            text: text.to_owned(),
            reason: reason.to_owned(),
        };
        if let Some(c) = text.chars().find(|&c| c != ' ' && GlyphFont::builtin().glyph(c).is_none()) {
            return Err(bad(&format!("character {c:?} cannot be rendered (use A-Z, 0-9 and space)")));
        }
        if text_width(text.chars().count()) > SYNTHETIC_WIDTH {
            return Err(bad("too long for the 320 px canvas"));
        }
        Ok(SourceSpec::Text(text.to_owned()))
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceSpec::Dir(p) => write!(f, "dir:{}", p.display()),
            SourceSpec::Bars => f.write_str("synthetic:bars"),
            SourceSpec::MovingBox => f.write_str("synthetic:moving_box"),
            SourceSpec::Text(t) => write!(f, "synthetic:text={t}"),
        }
    }
}

/// Image files in `dir` with a .pgm or .ppm extension, in lexicographic
/// file-name order.
pub fn list_image_files(dir: &Path) -> Result<Vec<PathBuf>, SourceError> {
    let io = |source| SourceError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"));
        if is_image && path.is_file() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(SourceError::EmptyDir(dir.to_owned()));
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Reads one image file.
pub fn load_image(path: &Path) -> Result<PnmImage, SourceError> {
    let bytes = fs::read(path).map_err(|source| SourceError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_pnm(&bytes).map_err(|source| SourceError::Pnm {
        path: path.to_owned(),
        source,
    })
}

/// The text canvas: `text` centered on a 320x240 black frame.
pub fn text_image(text: &str) -> LumaImage {
    let mut canvas = LumaImage::new(SYNTHETIC_WIDTH, SYNTHETIC_HEIGHT);
    let x = (SYNTHETIC_WIDTH - text_width(text.chars().count())) / 2;
    let y = (SYNTHETIC_HEIGHT - GLYPH_HEIGHT) / 2;
    render_text(&mut canvas, text, x, y).expect("text validated when the spec was parsed");
    canvas
}

/// Frame `index` (0-based) of the moving box: a white square whose left
/// edge advances 4 px per frame and wraps around the right border.
pub fn moving_box_image(index: u64) -> LumaImage {
    let mut canvas = LumaImage::new(SYNTHETIC_WIDTH, SYNTHETIC_HEIGHT);
    let left = (index * BOX_STEP as u64 % SYNTHETIC_WIDTH as u64) as u32;
    for y in BOX_Y..BOX_Y + BOX_SIDE {
        for dx in 0..BOX_SIDE {
            canvas.set((left + dx) % SYNTHETIC_WIDTH, y, 255);
        }
    }
    canvas
}

/// Eight vertical bars stepping from black to white.
pub fn bars_image() -> LumaImage {
    let mut canvas = LumaImage::new(SYNTHETIC_WIDTH, SYNTHETIC_HEIGHT);
    let bar = SYNTHETIC_WIDTH / BAR_COUNT;
    for y in 0..SYNTHETIC_HEIGHT {
        for x in 0..SYNTHETIC_WIDTH {
            canvas.set(x, y, ((x / bar) * 255 / (BAR_COUNT - 1)) as u8);
        }
    }
    canvas
}

enum Kind {
    Dir { files: Vec<PathBuf> },
    Bars(Arc<[u8]>),
    MovingBox,
    Text(Arc<[u8]>),
}

impl Kind {
    /// Frames in one pass over the source.
    fn cycle_len(&self) -> usize {
        match self {
            Kind::Dir { files } => files.len(),
            Kind::MovingBox => (SYNTHETIC_WIDTH / BOX_STEP) as usize,
            Kind::Bars(_) | Kind::Text(_) => 1,
        }
    }
}

/// Yields validated frames with `seq` from 1 and monotone capture
/// timestamps. Without looping, a source stops after one pass (one frame for
/// bars and text, one full traversal for the moving box). The first file
/// error is yielded and then the iterator ends.
pub struct FrameSource {
    kind: Kind,
    looping: bool,
    index: u64,
    next_seq: u32,
    epoch: Instant,
    last_ts: u64,
    failed: bool,
}

impl FrameSource {
    pub fn open(spec: &SourceSpec, looping: bool) -> Result<Self, SourceError> {
        let gray = |img: LumaImage| -> Arc<[u8]> { img.data.into() };
        let kind = match spec {
            SourceSpec::Dir(dir) => Kind::Dir {
                files: list_image_files(dir)?,
            },
            SourceSpec::Bars => Kind::Bars(gray(bars_image())),
            SourceSpec::MovingBox => Kind::MovingBox,
            SourceSpec::Text(t) => Kind::Text(gray(text_image(t))),
        };
        Ok(FrameSource {
            kind,
            looping,
            index: 0,
            next_seq: 1,
            epoch: Instant::now(),
            last_ts: 0,
            failed: false,
        })
    }

    fn timestamp(&mut self) -> u64 {
        let now = self.epoch.elapsed().as_micros() as u64;
        self.last_ts = self.last_ts.max(now);
        self.last_ts
    }

    fn build(&mut self, position: usize) -> Result<Frame, SourceError> {
        let seq = self.next_seq;
        let ts = self.timestamp();
        let synthetic = |pixels: Arc<[u8]>| {
            Frame::new(seq, ts, SYNTHETIC_WIDTH, SYNTHETIC_HEIGHT, PixelFormat::Gray8, pixels)
                .expect("synthetic frames are valid")
        };
        Ok(match &self.kind {
            Kind::Dir { files } => {
                let path = &files[position];
                let img = load_image(path)?;
                Frame::new(seq, ts, img.width, img.height, img.format, img.pixels).map_err(|source| {
                    SourceError::Frame {
                        path: path.clone(),
                        source,
                    }
                })?
            }
            Kind::Bars(px) | Kind::Text(px) => synthetic(px.clone()),
            Kind::MovingBox => synthetic(moving_box_image(self.index).data.into()),
        })
    }
}

impl Iterator for FrameSource {
    type Item = Result<Frame, SourceError>;

    fn next(&mut self) -> Option<Self::Item> {
        let cycle = self.kind.cycle_len() as u64;
        if self.failed || (!self.looping && self.index >= cycle) {
            return None;
        }
        let item = self.build((self.index % cycle) as usize);
        self.index += 1;
        match &item {
            Ok(_) => self.next_seq = self.next_seq.wrapping_add(1),
            Err(_) => self.failed = true,
        }
        Some(item)
    }
}
