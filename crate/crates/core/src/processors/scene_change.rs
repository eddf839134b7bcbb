//! Announces when consecutive frames differ by more than a luma threshold.

use thiserror::Error;

use crate::framework::{OptionsError, ProcessOutput, Processor, ProcessorError, ProcessorOptions, Utterance};
use crate::model::{Annotation, Frame, LumaImage};

pub const DEFAULT_THRESHOLD: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("image dimensions differ: {0:?} vs {1:?}")]
pub struct DimensionMismatch(pub (u32, u32), pub (u32, u32));

/// Mean absolute difference of two equally sized grayscale images.
pub fn mad(a: &LumaImage, b: &LumaImage) -> Result<f64, DimensionMismatch> {
    if !a.same_dims(b) {
        return Err(DimensionMismatch((a.width, a.height), (b.width, b.height)));
    }
    let total: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    Ok(total as f64 / a.data.len() as f64)
}

#[derive(Debug)]
pub struct SceneChange {
    threshold: f64,
    prev_luma: Option<LumaImage>,
}

impl SceneChange {
    pub const OPTION_KEYS: &'static [&'static str] = &["threshold"];

    pub fn new(threshold: f64) -> Self {
        SceneChange {
            threshold,
            prev_luma: None,
        }
    }

    pub fn from_options(opts: &ProcessorOptions) -> Result<Self, OptionsError> {
        let threshold: f64 = opts.parse_or("threshold", DEFAULT_THRESHOLD)?;
        if !threshold.is_finite() || !(0.0..=255.0).contains(&threshold) {
            return Err(OptionsError::invalid("threshold", "must be within 0..=255"));
        }
        Ok(Self::new(threshold))
    }
}

impl Processor for SceneChange {
    fn process(&mut self, frame: &Frame) -> Result<ProcessOutput, ProcessorError> {
        let luma = frame.to_luma();
        let change = match &self.prev_luma {
            Some(prev) if prev.same_dims(&luma) => Some(mad(prev, &luma).expect("dimensions checked")),
            _ => None,
        };
        self.prev_luma = Some(luma);
        let out = match change {
            Some(m) if m >= self.threshold => ProcessOutput {
                annotations: vec![Annotation::label_at("scene changed", (m / 255.0).min(1.0), (0.5, 0.5))
                    .map_err(|e| ProcessorError(e.to_string()))?],
                utterance: Some(Utterance::routine("scene changed")),
            },
            _ => ProcessOutput::empty(),
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnotationKind, PixelFormat};

    fn filled(w: u32, h: u32, v: u8) -> LumaImage {
        LumaImage {
            width: w,
            height: h,
            data: vec![v; (w * h) as usize],
        }
    }

    #[test]
    fn mad_extremes() {
        assert_eq!(mad(&filled(4, 4, 9), &filled(4, 4, 9)).unwrap(), 0.0);
        assert_eq!(mad(&filled(4, 4, 0), &filled(4, 4, 255)).unwrap(), 255.0);
        assert!(mad(&filled(4, 4, 0), &filled(4, 5, 0)).is_err());
    }

    #[test]
    fn mad_matches_scalar_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let a = LumaImage { width: 16, height: 16, data: (0..256).map(|_| rng.random()).collect() };
            let b = LumaImage { width: 16, height: 16, data: (0..256).map(|_| rng.random()).collect() };
            let mut sum = 0.0f64;
            for i in 0..256 {
                sum += (a.data[i] as f64 - b.data[i] as f64).abs();
            }
            assert!((mad(&a, &b).unwrap() - sum / 256.0).abs() < 1e-9);
        }
    }

    #[test]
    fn first_frame_then_identical_then_inverted() {
        let mut p = SceneChange::new(DEFAULT_THRESHOLD);
        let black = filled(8, 8, 0).into_frame(1, 0).unwrap();
        let white = filled(8, 8, 255).into_frame(3, 0).unwrap();
        assert_eq!(p.process(&black).unwrap(), ProcessOutput::empty());
        assert_eq!(p.process(&black).unwrap(), ProcessOutput::empty());
        let out = p.process(&white).unwrap();
        assert_eq!(out.utterance.unwrap(), Utterance::routine("scene changed"));
        assert_eq!(out.annotations.len(), 1);
        assert_eq!(out.annotations[0].kind(), AnnotationKind::Label);
    }

    #[test]
    fn dimension_change_resets_baseline() {
        let mut p = SceneChange::new(DEFAULT_THRESHOLD);
        p.process(&filled(8, 8, 0).into_frame(1, 0).unwrap()).unwrap();
        let out = p.process(&filled(4, 4, 255).into_frame(2, 0).unwrap()).unwrap();
        assert!(out.utterance.is_none());
        let out = p.process(&filled(4, 4, 0).into_frame(3, 0).unwrap()).unwrap();
        assert!(out.utterance.is_some());
    }

    #[test]
    fn rgb_frames_use_luma() {
        let mut p = SceneChange::new(DEFAULT_THRESHOLD);
        let red = Frame::new(1, 0, 2, 2, PixelFormat::Rgb8, [255u8, 0, 0].repeat(4)).unwrap();
        let gray77 = filled(2, 2, 77).into_frame(2, 0).unwrap();
        p.process(&red).unwrap();
        assert!(p.process(&gray77).unwrap().utterance.is_none());
    }

    #[test]
    fn threshold_option_bounds() {
        assert!(SceneChange::from_options(&ProcessorOptions::parse("threshold=300").unwrap()).is_err());
        let p = SceneChange::from_options(&ProcessorOptions::parse("threshold=0.5").unwrap()).unwrap();
        assert_eq!(p.threshold, 0.5);
    }
}
