//! Generated benchmark with uniquely colored tiles, for harness calibration.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::benchmark::{BenchmarkSample, Domain, MemorySource};
use crate::geometry::Rect;

const SCREEN_W: u32 = 320;
const SCREEN_H: u32 = 240;
const COLS: i64 = 4;
const ROWS: i64 = 2;
const PAIRS_PER_SCREEN: usize = 4;

fn tile_color(k: usize) -> Rgb<u8> {
    let level = |d: usize| 20 + (d % 6) as u8 * 40;
    Rgb([level(k), level(k / 6), level(k / 36)])
}

/// `n` samples, four per screenshot, each target paired with a
/// non-overlapping reference tile on the same screen.
pub fn synthetic_benchmark(n: usize, seed: u64) -> (Vec<BenchmarkSample>, MemorySource) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = MemorySource::default();
    let mut samples = Vec::with_capacity(n);
    let domains = [Domain::Web, Domain::Mobile, Domain::Os];
    let cell_w = i64::from(SCREEN_W) / COLS;
    let cell_h = i64::from(SCREEN_H) / ROWS;
    let mut tile = 0usize;
    let mut screen = 0usize;
    while samples.len() < n {
        let name = format!("screen_{screen:03}.png");
        let mut img = RgbImage::from_pixel(SCREEN_W, SCREEN_H, Rgb([236, 236, 236]));
        let mut rects = Vec::new();
        for cell in 0..COLS * ROWS {
            let w = rng.random_range(16..=cell_w - 8);
            let h = rng.random_range(16..=cell_h - 8);
            let x = (cell % COLS) * cell_w + rng.random_range(0..=cell_w - w);
            let y = (cell / COLS) * cell_h + rng.random_range(0..=cell_h - h);
            let r = Rect::new(x, y, w, h).expect("positive size");
            let color = tile_color(tile);
            tile += 1;
            for py in r.y..r.bottom() {
                for px in r.x..r.right() {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
            rects.push((r, color));
        }
        let mut order: Vec<usize> = (0..rects.len()).collect();
        order.shuffle(&mut rng);
        for pair in order.chunks(2).take(PAIRS_PER_SCREEN) {
            if samples.len() == n {
                break;
            }
            let (region, color) = rects[pair[0]];
            let (ref_region, _) = rects[pair[1]];
            samples.push(BenchmarkSample {
                id: format!("syn_{:04}", samples.len()),
                screenshot: name.clone(),
                screen: Some([SCREEN_W, SCREEN_H]),
                point: region.center(),
                region,
                ref_point: ref_region.center(),
                ref_region,
                content: format!(
                    "solid tile colored #{:02x}{:02x}{:02x}",
                    color[0], color[1], color[2]
                ),
                domain: domains[screen % domains.len()],
            });
        }
        source.insert(name, img);
        screen += 1;
    }
    (samples, source)
}
