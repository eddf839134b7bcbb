//! Fixed 5x7 bitmap font: rendering text into a canvas and recognizing it
//! again by exact template matching.
//!
//! Every glyph in the shipped font has ink in each of its five columns and
//! in its top and bottom rows. Because glyphs are separated by a blank
//! column, any window offset from a glyph cell contains a blank column or a
//! blank edge row and so cannot match, which keeps recognition unambiguous
//! for single-line text on a blank background.

use std::collections::HashMap;
use std::sync::OnceLock;

use thiserror::Error;

use crate::framework::{ProcessOutput, Processor, ProcessorError, Utterance};
use crate::model::{Annotation, Frame, LumaImage, PixelBox};

pub const GLYPH_WIDTH: u32 = 5;
pub const GLYPH_HEIGHT: u32 = 7;
/// Horizontal distance between glyph origins.
pub const ADVANCE_X: u32 = 6;
/// Vertical distance between text rows.
pub const ADVANCE_Y: u32 = 8;
/// Luma at or above which a pixel counts as ink.
pub const INK_THRESHOLD: u8 = 128;

const BUILTIN_FONT: &str = include_str!("../../data/font5x7.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FontError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("glyphs {0:?} and {1:?} have identical masks")]
    DuplicateMask(char, char),
    #[error("character {0:?} defined twice")]
    DuplicateChar(char),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("character {0:?} has no glyph")]
    Unsupported(char),
    #[error("text at ({x}, {y}) spanning {width}x{height} px does not fit a {canvas_w}x{canvas_h} canvas")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
        canvas_w: u32,
        canvas_h: u32,
    },
}

/// One glyph as seven 5-bit rows; bit 4 is the leftmost column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Glyph {
    pub ch: char,
    pub rows: [u8; 7],
}

impl Glyph {
    /// All 35 cells packed row-major, first row in the high bits.
    pub fn mask(&self) -> u64 {
        self.rows.iter().fold(0u64, |acc, &r| (acc << 5) | r as u64)
    }

    pub fn ink(&self, col: u32, row: u32) -> bool {
        self.rows[row as usize] & (0x10 >> col) != 0
    }
}

#[derive(Debug, Clone)]
pub struct GlyphFont {
    glyphs: Vec<Glyph>,
    by_char: HashMap<char, usize>,
    by_mask: HashMap<u64, char>,
}

impl GlyphFont {
    /// Parses the text font format: a line holding the character, then seven
    /// lines of five `.`/`#` cells. Blank lines between records are ignored.
    pub fn parse(text: &str) -> Result<Self, FontError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut glyphs = Vec::new();
        while let Some((n, head)) = lines.next() {
            let mut chars = head.trim().chars();
            let ch = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(FontError::Parse {
                        line: n + 1,
                        reason: format!("expected a single character, got {head:?}"),
                    })
                }
            };
            let mut rows = [0u8; 7];
            for row in rows.iter_mut() {
                let (n, line) = lines.next().ok_or(FontError::Parse {
                    line: n + 1,
                    reason: format!("glyph {ch:?} has fewer than 7 rows"),
                })?;
                let line = line.trim();
                if line.len() != 5 {
                    return Err(FontError::Parse {
                        line: n + 1,
                        reason: format!("row {line:?} is not 5 cells wide"),
                    });
                }
                for c in line.chars() {
                    *row <<= 1;
                    match c {
                        '#' => *row |= 1,
                        '.' => {}
                        other => {
                            return Err(FontError::Parse {
                                line: n + 1,
                                reason: format!("unexpected cell {other:?}"),
                            })
                        }
                    }
                }
            }
            glyphs.push(Glyph { ch, rows });
        }
        let mut by_char = HashMap::new();
        let mut by_mask: HashMap<u64, char> = HashMap::new();
        for (i, g) in glyphs.iter().enumerate() {
            if by_char.insert(g.ch, i).is_some() {
                return Err(FontError::DuplicateChar(g.ch));
            }
            if let Some(prev) = by_mask.insert(g.mask(), g.ch) {
                return Err(FontError::DuplicateMask(prev, g.ch));
            }
        }
        Ok(GlyphFont {
            glyphs,
            by_char,
            by_mask,
        })
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Result<Self, FontError>> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// The shipped A-Z, 0-9 font, parsed once.
    pub fn builtin() -> &'static GlyphFont {
        static FONT: OnceLock<GlyphFont> = OnceLock::new();
        FONT.get_or_init(|| GlyphFont::parse(BUILTIN_FONT).expect("shipped font parses"))
    }

    pub fn glyphs(&self) -> &[Glyph] {
        &self.glyphs
    }

    pub fn glyph(&self, ch: char) -> Option<&Glyph> {
        self.by_char.get(&ch).map(|&i| &self.glyphs[i])
    }

    pub fn char_for_mask(&self, mask: u64) -> Option<char> {
        self.by_mask.get(&mask).copied()
    }

    /// Stamps `text` with its top-left corner at `(x, y)`. Ink is written as
    /// 255; spaces advance without stamping. Nothing is drawn on error.
    pub fn render_text(&self, canvas: &mut LumaImage, text: &str, x: u32, y: u32) -> Result<(), RenderError> {
        let n = text.chars().count() as u32;
        if n == 0 {
            return Ok(());
        }
        let mut glyphs = Vec::with_capacity(n as usize);
        for c in text.chars() {
            if c == ' ' {
                glyphs.push(None);
            } else {
                glyphs.push(Some(self.glyph(c).ok_or(RenderError::Unsupported(c))?));
            }
        }
        let width = text_width(n as usize);
        let fits = x as u64 + width as u64 <= canvas.width as u64
            && y as u64 + GLYPH_HEIGHT as u64 <= canvas.height as u64;
        if !fits {
            return Err(RenderError::OutOfBounds {
                x,
                y,
                width,
                height: GLYPH_HEIGHT,
                canvas_w: canvas.width,
                canvas_h: canvas.height,
            });
        }
        for (i, g) in glyphs.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let gx = x + i as u32 * ADVANCE_X;
            for row in 0..GLYPH_HEIGHT {
                for col in 0..GLYPH_WIDTH {
                    if g.ink(col, row) {
                        canvas.set(gx + col, y + row, 255);
                    }
                }
            }
        }
        Ok(())
    }

    /// Finds every exact glyph match and chains matches 6 px apart on the
    /// same row into tokens, ordered by row then column.
    pub fn recognize(&self, image: &LumaImage) -> Vec<Token> {
        let (w, h) = (image.width, image.height);
        if w < GLYPH_WIDTH || h < GLYPH_HEIGHT {
            return Vec::new();
        }
        let windows_x = (w - GLYPH_WIDTH + 1) as usize;
        // row_bits[y][x]: the 5 binarized pixels starting at (x, y)
        let mut row_bits = vec![0u8; h as usize * windows_x];
        for y in 0..h {
            let row = &image.data[(y * w) as usize..((y + 1) * w) as usize];
            let mut acc = 0u8;
            for (x, &px) in row.iter().enumerate() {
                acc = ((acc << 1) | (px >= INK_THRESHOLD) as u8) & 0x1F;
                if x + 1 >= GLYPH_WIDTH as usize {
                    row_bits[y as usize * windows_x + x + 1 - GLYPH_WIDTH as usize] = acc;
                }
            }
        }
        let mut matches: Vec<(u32, u32, char)> = Vec::new();
        for y in 0..=(h - GLYPH_HEIGHT) {
            for x in 0..windows_x {
                let top = row_bits[y as usize * windows_x + x];
                if top == 0 {
                    continue;
                }
                let mask = (0..GLYPH_HEIGHT as usize).fold(0u64, |acc, r| {
                    (acc << 5) | row_bits[(y as usize + r) * windows_x + x] as u64
                });
                if let Some(ch) = self.char_for_mask(mask) {
                    matches.push((y, x as u32, ch));
                }
            }
        }
        // already in (row, column) order
        let mut tokens: Vec<Token> = Vec::new();
        let mut last: Option<(u32, u32)> = None;
        for (y, x, ch) in matches {
            match (last, tokens.last_mut()) {
                (Some((ly, lx)), Some(tok)) if ly == y && x == lx + ADVANCE_X => {
                    tok.text.push(ch);
                    tok.bbox.x1 = x + GLYPH_WIDTH - 1;
                }
                _ => tokens.push(Token {
                    text: ch.to_string(),
                    bbox: PixelBox {
                        x0: x,
                        y0: y,
                        x1: x + GLYPH_WIDTH - 1,
                        y1: y + GLYPH_HEIGHT - 1,
                    },
                }),
            }
            last = Some((y, x));
        }
        tokens
    }
}

/// Pixel width of `n` glyph cells (no trailing gap).
pub fn text_width(n: usize) -> u32 {
    if n == 0 {
        0
    } else {
        n as u32 * ADVANCE_X - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub bbox: PixelBox,
}

/// Renders with the shipped font.
pub fn render_text(canvas: &mut LumaImage, text: &str, x: u32, y: u32) -> Result<(), RenderError> {
    GlyphFont::builtin().render_text(canvas, text, x, y)
}

/// Recognizes text in a frame with the shipped font.
pub fn recognize(frame: &Frame) -> Vec<Token> {
    GlyphFont::builtin().recognize(&frame.to_luma())
}

/// Reads text in view; speaks it when it differs from the previous frame's.
#[derive(Debug, Default)]
pub struct GlyphOcr {
    previous: String,
}

impl GlyphOcr {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Processor for GlyphOcr {
    fn process(&mut self, frame: &Frame) -> Result<ProcessOutput, ProcessorError> {
        let tokens = recognize(frame);
        let annotations = tokens
            .iter()
            .map(|t| t.bbox.to_annotation(t.text.clone(), 1.0, frame.width(), frame.height()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ProcessorError(e.to_string()))?;
        let text = tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
        let utterance = (!text.is_empty() && text != self.previous).then(|| Utterance::routine(text.clone()));
        self.previous = text;
        Ok(ProcessOutput {
            annotations: annotations.into_iter().take(crate::model::MAX_ANNOTATIONS).collect::<Vec<Annotation>>(),
            utterance,
        })
    }
}
