//! Searches recognized text for a term and says where it is.

use crate::framework::{OptionsError, ProcessOutput, Processor, ProcessorError, ProcessorOptions, Utterance};
use crate::model::{annotation_center, egocentric_direction, Frame};

use super::glyph::recognize;

#[derive(Debug)]
pub struct FindItem {
    term: String,
}

impl FindItem {
    pub const OPTION_KEYS: &'static [&'static str] = &["term"];

    /// `term` is uppercased; it must be a single non-empty word of A-Z, 0-9.
    pub fn new(term: &str) -> Result<Self, OptionsError> {
        let term = term.trim().to_ascii_uppercase();
        if term.is_empty() {
            return Err(OptionsError::invalid("term", "search term is empty"));
        }
        if !term.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit()) {
            return Err(OptionsError::invalid("term", "only letters and digits can be searched"));
        }
        Ok(FindItem { term })
    }

    pub fn from_options(opts: &ProcessorOptions) -> Result<Self, OptionsError> {
        Self::new(opts.get("term").unwrap_or(""))
    }

    pub fn term(&self) -> &str {
        &self.term
    }
}

impl Processor for FindItem {
    fn process(&mut self, frame: &Frame) -> Result<ProcessOutput, ProcessorError> {
        let Some(hit) = recognize(frame).into_iter().find(|t| t.text == self.term) else {
            return Ok(ProcessOutput::empty());
        };
        let ann = hit
            .bbox
            .to_annotation(self.term.clone(), 1.0, frame.width(), frame.height())
            .map_err(|e| ProcessorError(e.to_string()))?;
        let (cx, cy) = annotation_center(&ann).map_err(|e| ProcessorError(e.to_string()))?;
        let dir = egocentric_direction(cx, cy).map_err(|e| ProcessorError(e.to_string()))?;
        Ok(ProcessOutput {
            annotations: vec![ann],
            utterance: Some(Utterance::interrupt(format!("{} at {dir}", self.term))),
        })
    }
}
