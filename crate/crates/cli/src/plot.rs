//! Minimal line raster: white canvas, gray frame, data polylines, saved as
//! PPM. Enough to eyeball distance/density/weight profiles without pulling
//! in a plotting stack.

use std::path::Path;

use srdflab_core::render::{write_ppm, RenderError};

const MARGIN: usize = 10;

pub struct Plot {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
    x: (f64, f64),
    y: (f64, f64),
}

impl Plot {
    pub fn new(width: usize, height: usize, x: (f64, f64), y: (f64, f64)) -> Plot {
        let mut plot = Plot {
            width,
            height,
            pixels: vec![[1.0; 3]; width * height],
            x,
            y,
        };
        let frame = [0.7, 0.7, 0.7];
        for c in MARGIN..width.saturating_sub(MARGIN) {
            plot.set(c, MARGIN, frame);
            plot.set(c, height - 1 - MARGIN, frame);
        }
        for r in MARGIN..height.saturating_sub(MARGIN) {
            plot.set(MARGIN, r, frame);
            plot.set(width - 1 - MARGIN, r, frame);
        }
        plot
    }

    /// Tight range over every series, padded 5% so curves stay off the frame.
    pub fn y_span(series: &[&[f64]]) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in series {
            for &v in *s {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            return (0.0, 1.0);
        }
        if lo == hi {
            return (lo - 0.5, hi + 0.5);
        }
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }

    fn set(&mut self, col: usize, row: usize, color: [f64; 3]) {
        if col < self.width && row < self.height {
            self.pixels[row * self.width + col] = color;
        }
    }

    /// Data coordinates to fractional pixel coordinates (row 0 at the top).
    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let w = (self.width - 2 * MARGIN) as f64;
        let h = (self.height - 2 * MARGIN) as f64;
        let cx = MARGIN as f64 + w * (x - self.x.0) / (self.x.1 - self.x.0);
        let cy = MARGIN as f64 + h * (self.y.1 - y) / (self.y.1 - self.y.0);
        (cx, cy)
    }

    pub fn polyline(&mut self, xs: &[f64], ys: &[f64], color: [f64; 3]) {
        for i in 1..xs.len().min(ys.len()) {
            let (x0, y0) = self.to_px(xs[i - 1], ys[i - 1]);
            let (x1, y1) = self.to_px(xs[i], ys[i]);
            self.segment(x0, y0, x1, y1, color);
        }
    }

    /// Vertical marker across the plot area (e.g. the true hit depth).
    pub fn vline(&mut self, x: f64, color: [f64; 3]) {
        let (cx, _) = self.to_px(x, self.y.0);
        let col = cx.round() as usize;
        for row in MARGIN..self.height - MARGIN {
            self.set(col, row, color);
        }
    }

    /// Horizontal marker (e.g. the zero level).
    pub fn hline(&mut self, y: f64, color: [f64; 3]) {
        if y < self.y.0 || y > self.y.1 {
            return;
        }
        let (_, cy) = self.to_px(self.x.0, y);
        let row = cy.round() as usize;
        for col in MARGIN..self.width - MARGIN {
            self.set(col, row, color);
        }
    }

    fn segment(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: [f64; 3]) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = x0 + t * (x1 - x0);
            let y = y0 + t * (y1 - y0);
            self.set(x.round() as usize, y.round() as usize, color);
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RenderError> {
        write_ppm(path, self.width, self.height, &self.pixels, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use srdflab_core::render::read_ppm;

    #[test]
    fn y_span_covers_all_series_with_padding() {
        let a = [0.0, 1.0];
        let b = [-2.0, 0.5];
        let (lo, hi) = Plot::y_span(&[&a, &b]);
        assert!(lo < -2.0 && lo > -2.3);
        assert!(hi > 1.0 && hi < 1.3);
        assert_eq!(Plot::y_span(&[&[3.0, 3.0][..]]), (2.5, 3.5));
    }

    #[test]
    fn diagonal_line_marks_interior_pixels() {
        let mut plot = Plot::new(100, 100, (0.0, 1.0), (0.0, 1.0));
        plot.polyline(&[0.0, 1.0], &[0.0, 1.0], [1.0, 0.0, 0.0]);
        // The data diagonal runs corner to corner of the framed area; its
        // midpoint must be red and off-diagonal interior pixels white.
        let mid = 50 * 100 + 50;
        assert_eq!(plot.pixels[mid], [1.0, 0.0, 0.0]);
        let off = 30 * 100 + 80;
        assert_eq!(plot.pixels[off], [1.0; 3]);
    }

    #[test]
    fn save_round_trips_through_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.ppm");
        let mut plot = Plot::new(64, 48, (0.0, 1.0), (-1.0, 1.0));
        plot.hline(0.0, [0.5, 0.5, 0.5]);
        plot.vline(0.25, [0.0, 0.5, 0.0]);
        plot.save(&path).unwrap();
        let (w, h, px) = read_ppm(&path, 1.0).unwrap();
        assert_eq!((w, h), (64, 48));
        assert_eq!(px.len(), 64 * 48);
    }
}
