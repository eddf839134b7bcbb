//! Bright-region detection: threshold, 4-connected labeling, size filter.

use crate::framework::{OptionsError, ProcessOutput, Processor, ProcessorError, ProcessorOptions, Utterance};
use crate::model::{Frame, LumaImage, PixelBox};

pub const DEFAULT_THRESHOLD: u8 = 128;
/// At most this many blobs are reported, largest first.
pub const MAX_BLOBS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub bbox: PixelBox,
    pub area: u32,
    /// Position in the returned list.
    pub id: u32,
}

/// `ceil(0.001 * width * height)`: components smaller than this are noise.
pub fn min_area(width: u32, height: u32) -> u32 {
    (width as u64 * height as u64).div_ceil(1000) as u32
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

#[derive(Clone, Copy)]
struct Stats {
    bbox: PixelBox,
    area: u32,
    first: u32,
}

/// Connected foreground components (luma >= `threshold`, 4-connectivity),
/// filtered by [`min_area`], sorted by area descending then by the box's
/// top edge, left edge and first pixel in raster order, truncated to
/// [`MAX_BLOBS`].
pub fn blobs(image: &LumaImage, threshold: u8) -> Vec<Blob> {
    let (w, h) = (image.width as usize, image.height as usize);
    // two-pass labeling; label 0 is background
    let mut labels = vec![0u32; w * h];
    let mut set = DisjointSet { parent: vec![0] };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if image.data[i] < threshold {
                continue;
            }
            let left = if x > 0 { labels[i - 1] } else { 0 };
            let up = if y > 0 { labels[i - w] } else { 0 };
            labels[i] = match (left, up) {
                (0, 0) => {
                    let l = set.parent.len() as u32;
                    set.parent.push(l);
                    l
                }
                (l, 0) | (0, l) => l,
                (l, u) if l == u => l,
                (l, u) => set.union(l, u),
            };
        }
    }
    let mut stats: Vec<Option<Stats>> = vec![None; set.parent.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if labels[i] == 0 {
                continue;
            }
            let root = set.find(labels[i]) as usize;
            let (x, y) = (x as u32, y as u32);
            match &mut stats[root] {
                Some(s) => {
                    s.area += 1;
                    s.bbox.x0 = s.bbox.x0.min(x);
                    s.bbox.x1 = s.bbox.x1.max(x);
                    s.bbox.y1 = s.bbox.y1.max(y);
                }
                slot @ None => {
                    *slot = Some(Stats {
                        bbox: PixelBox { x0: x, y0: y, x1: x, y1: y },
                        area: 1,
                        first: i as u32,
                    })
                }
            }
        }
    }
    let floor = min_area(image.width, image.height);
    let mut found: Vec<Stats> = stats.into_iter().flatten().filter(|s| s.area >= floor).collect();
    found.sort_by_key(|s| (std::cmp::Reverse(s.area), s.bbox.y0, s.bbox.x0, s.first));
    found
        .into_iter()
        .take(MAX_BLOBS)
        .enumerate()
        .map(|(id, s)| Blob {
            bbox: s.bbox,
            area: s.area,
            id: id as u32,
        })
        .collect()
}

/// Boxes bright objects; announces the count when it changes.
#[derive(Debug)]
pub struct BlobDetect {
    threshold: u8,
    previous_count: Option<usize>,
}

impl BlobDetect {
    pub const OPTION_KEYS: &'static [&'static str] = &["threshold"];

    pub fn new(threshold: u8) -> Self {
        BlobDetect {
            threshold,
            previous_count: None,
        }
    }

    pub fn from_options(opts: &ProcessorOptions) -> Result<Self, OptionsError> {
        Ok(Self::new(opts.parse_or("threshold", DEFAULT_THRESHOLD)?))
    }
}

impl Processor for BlobDetect {
    fn process(&mut self, frame: &Frame) -> Result<ProcessOutput, ProcessorError> {
        let found = blobs(&frame.to_luma(), self.threshold);
        let annotations = found
            .iter()
            .map(|b| {
                let fill = b.area as f64 / b.bbox.area() as f64;
                b.bbox.to_annotation("object", fill, frame.width(), frame.height())
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ProcessorError(e.to_string()))?;
        let utterance = (self.previous_count != Some(found.len()))
            .then(|| Utterance::routine(format!("{} objects visible", found.len())));
        self.previous_count = Some(found.len());
        Ok(ProcessOutput {
            annotations,
            utterance,
        })
    }
}
