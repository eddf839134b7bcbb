//! Suppression of repeated spoken descriptions.

use framerelay_core::Priority;

pub const DEFAULT_WINDOW_MS: u64 = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Suppress,
}

/// Remembers the last description that was let through.
#[derive(Debug, Clone)]
pub struct DedupPolicy {
    window_ms: u64,
    last: Option<(String, u64)>,
}

impl DedupPolicy {
    pub fn new(window_ms: u64) -> Self {
        DedupPolicy { window_ms, last: None }
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    /// A ROUTINE text identical to the last one passed less than the window
    /// ago is suppressed. Everything else passes and becomes the new "last".
    pub fn filter(&mut self, priority: Priority, text: &str, now_ms: u64) -> Verdict {
        if priority == Priority::Routine {
            if let Some((last_text, at)) = &self.last {
                if last_text == text && now_ms.saturating_sub(*at) < self.window_ms {
                    return Verdict::Suppress;
                }
            }
        }
        self.last = Some((text.to_owned(), now_ms));
        Verdict::Pass
    }
}
