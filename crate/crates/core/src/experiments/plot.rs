//! Static image output: image grids and histogram charts.

use image::{Rgb, RgbImage};
use ndarray::{Array2, ArrayView3};

use crate::data::unscale;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const BAR: Rgb<u8> = Rgb([40, 70, 160]);

/// Converts one `(H, W, C)` image in `[-1, 1]` to 8-bit RGB.
pub fn to_rgb(img: ArrayView3<f32>) -> RgbImage {
    let (h, w, c) = img.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        if c >= 3 {
            Rgb([unscale(img[[y, x, 0]]), unscale(img[[y, x, 1]]), unscale(img[[y, x, 2]])])
        } else {
            let v = unscale(img[[y, x, 0]]);
            Rgb([v, v, v])
        }
    })
}

/// Tiles images row-major into a `rows x cols` grid with `pad` white pixels
/// between cells.
pub fn image_grid(images: &[ArrayView3<f32>], rows: usize, cols: usize, pad: u32) -> RgbImage {
    assert_eq!(images.len(), rows * cols, "grid needs exactly rows * cols images");
    let (h, w, _) = images.first().map(|i| i.dim()).unwrap_or((0, 0, 0));
    let (h, w) = (h as u32, w as u32);
    let mut out = RgbImage::from_pixel(
        cols as u32 * (w + pad) + pad,
        rows as u32 * (h + pad) + pad,
        BACKGROUND,
    );
    for (k, img) in images.iter().enumerate() {
        let (r, c) = ((k / cols) as u32, (k % cols) as u32);
        let tile = to_rgb(*img);
        image::imageops::replace(&mut out, &tile, (pad + c * (w + pad)) as i64, (pad + r * (h + pad)) as i64);
    }
    out
}

/// Heat map of a joint histogram with the two marginals drawn as bar charts
/// above (first axis) and to the right (second axis).
///
/// Row `i` of `joint` is bin `i` of the first variable, drawn left to right;
/// column `j` is bin `j` of the second, drawn bottom to top.
pub fn histogram_chart(joint: &Array2<u64>, marginal_p: &[u64], marginal_q: &[u64], cell: u32) -> RgbImage {
    let (np, nq) = joint.dim();
    let bar_len = 80u32;
    let gap = 4u32;
    let (w, h) = (np as u32 * cell + gap + bar_len, nq as u32 * cell + gap + bar_len);
    let mut out = RgbImage::from_pixel(w, h, BACKGROUND);
    let peak = joint.iter().copied().max().unwrap_or(0).max(1) as f64;
    let top = bar_len + gap;
    for i in 0..np {
        for j in 0..nq {
            let t = joint[[i, j]] as f64 / peak;
            let shade = (255.0 * (1.0 - t)).round() as u8;
            let color = Rgb([shade, shade, 255]);
            let x0 = i as u32 * cell;
            let y0 = top + (nq - 1 - j) as u32 * cell;
            for dy in 0..cell {
                for dx in 0..cell {
                    out.put_pixel(x0 + dx, y0 + dy, color);
                }
            }
        }
    }
    let mp = marginal_p.iter().copied().max().unwrap_or(0).max(1) as f64;
    for (i, &v) in marginal_p.iter().enumerate() {
        let len = (bar_len as f64 * v as f64 / mp).round() as u32;
        for dy in 0..len {
            for dx in 0..cell.saturating_sub(1).max(1) {
                out.put_pixel(i as u32 * cell + dx, bar_len - 1 - dy, BAR);
            }
        }
    }
    let mq = marginal_q.iter().copied().max().unwrap_or(0).max(1) as f64;
    let left = np as u32 * cell + gap;
    for (j, &v) in marginal_q.iter().enumerate() {
        let len = (bar_len as f64 * v as f64 / mq).round() as u32;
        let y0 = top + (nq - 1 - j) as u32 * cell;
        for dx in 0..len {
            for dy in 0..cell.saturating_sub(1).max(1) {
                out.put_pixel(left + dx, y0 + dy, BAR);
            }
        }
    }
    out
}
