//! Log-density heatmaps as binary PPM.

use std::io::Write;

use tfis::evaluation::HistogramGrid;

/// Colormap stops, evenly spaced on `[0, 1]`.
const STOPS: [[f64; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 255.0],
    [255.0, 0.0, 0.0],
    [255.0, 255.0, 0.0],
];

/// Black → blue → red → yellow.
pub fn colormap(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (v.floor() as usize).min(STOPS.len() - 2);
    let f = v - k as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[k][c] + f * (STOPS[k + 1][c] - STOPS[k][c])).round() as u8;
    }
    out
}

/// RGB pixels, row 0 at the top (largest `y`). Empty cells are black; the
/// fullest cell maps to the top of the colormap.
pub fn heatmap_pixels(h: &HistogramGrid) -> Vec<u8> {
    let (nx, ny) = h.bins();
    let max = h.counts().iter().copied().max().unwrap_or(0);
    let denom = (max as f64).ln_1p();
    let mut px = Vec::with_capacity(nx * ny * 3);
    for row in 0..ny {
        let iy = ny - 1 - row;
        for ix in 0..nx {
            let c = h.count_at(ix, iy);
            let rgb = if c == 0 {
                [0, 0, 0]
            } else {
                colormap((c as f64).ln_1p() / denom)
            };
            px.extend_from_slice(&rgb);
        }
    }
    px
}

pub fn write_ppm<W: Write>(mut w: W, h: &HistogramGrid) -> std::io::Result<()> {
    let (nx, ny) = h.bins();
    write!(w, "P6\n{nx} {ny}\n255\n")?;
    w.write_all(&heatmap_pixels(h))
}
