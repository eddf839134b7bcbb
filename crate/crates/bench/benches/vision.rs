use criterion::{criterion_group, criterion_main, Criterion};
use framerelay_bench::{blob_scene, frame_pair, text_scene};
use framerelay_core::processors::glyph::GlyphFont;
use framerelay_core::processors::{blobs, mad};
use std::hint::black_box;

fn vision(c: &mut Criterion) {
    let scene = blob_scene(640, 480, 60);
    c.bench_function("blobs_vga_60_rects", |b| b.iter(|| blobs(black_box(&scene), 128)));

    let text = text_scene();
    let font = GlyphFont::builtin();
    c.bench_function("recognize_vga_5_lines", |b| b.iter(|| font.recognize(black_box(&text))));

    let (a, b2) = frame_pair();
    let (la, lb) = (a.to_luma(), b2.to_luma());
    c.bench_function("mad_vga", |b| b.iter(|| mad(black_box(&la), black_box(&lb))));
}

criterion_group!(benches, vision);
criterion_main!(benches);
