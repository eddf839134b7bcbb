//! Deterministic inputs shared by the benchmarks.

use framerelay_core::model::TimingBreakdown;
use framerelay_core::processors::glyph::render_text;
use framerelay_core::wire::{FrameMsg, ResultMsg, WireDescription};
use framerelay_core::{Annotation, Frame, LumaImage, PixelBox, Priority, WireMessage};
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};

/// A VGA gray frame with random noise, as a FRAME message.
pub fn vga_frame_message(seq: u32) -> WireMessage {
    let mut payload = vec![0u8; 640 * 480];
    StdRng::seed_from_u64(seq as u64).fill_bytes(&mut payload);
    WireMessage::Frame(FrameMsg {
        seq,
        capture_ts_us: seq as u64 * 33_333,
        width: 640,
        height: 480,
        format: 0,
        payload,
    })
}

/// A RESULT with ten boxes and a description.
pub fn busy_result() -> WireMessage {
    let annotations: Vec<Annotation> = (0..10)
        .map(|i| {
            PixelBox {
                x0: i * 30,
                y0: i * 20,
                x1: i * 30 + 25,
                y1: i * 20 + 15,
            }
            .to_annotation(format!("object {i}"), 0.9, 640, 480)
            .expect("box inside frame")
        })
        .collect();
    WireMessage::Result(ResultMsg {
        frame_seq: 42,
        processor_id: "blob_detect".into(),
        timing: TimingBreakdown {
            recv_to_dispatch_us: 120,
            process_us: 900,
        },
        annotations,
        description: Some(WireDescription {
            priority: Priority::Routine,
            text: "10 objects visible".into(),
        }),
    })
}

/// Dark background with `n` bright rectangles of assorted sizes.
pub fn blob_scene(width: u32, height: u32, n: usize) -> LumaImage {
    let mut rng = StdRng::seed_from_u64(7);
    let mut img = LumaImage::new(width, height);
    for _ in 0..n {
        let (w, h) = (rng.random_range(3..40), rng.random_range(3..40));
        let x = rng.random_range(0..width - w);
        let y = rng.random_range(0..height - h);
        for yy in y..y + h {
            for xx in x..x + w {
                img.data[(yy * width + xx) as usize] = 220;
            }
        }
    }
    img
}

/// Several rows of text on a VGA canvas.
pub fn text_scene() -> LumaImage {
    let mut img = LumaImage::new(640, 480);
    for (row, line) in ["EXIT 12", "PLATFORM 4", "NO ENTRY", "KEYS", "ROOM 101"].iter().enumerate() {
        render_text(&mut img, line, 20 + row as u32 * 40, 30 + row as u32 * 80).expect("fits");
    }
    img
}

/// Two VGA frames differing in a region.
pub fn frame_pair() -> (Frame, Frame) {
    let a = blob_scene(640, 480, 20);
    let mut b = a.clone();
    for px in b.data.iter_mut().take(640 * 100) {
        *px = px.wrapping_add(60);
    }
    (a.into_frame(1, 0).expect("valid"), b.into_frame(2, 1).expect("valid"))
}
