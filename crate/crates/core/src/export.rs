//! CSV, JSON and PNG artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file is
//! a pure function of the values it encodes.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dynamics::{Parameter, PeriodicOrbit, Rect, SingularVerdict};
use crate::numeric::{is_finite, C64};
use crate::parameter::{BoundedWake, ComponentGrid, ParameterRayTrace};
use crate::rays::RayPolyline;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("png: {0}")]
    Png(#[from] png::EncodingError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

/// Largest accepted image side.
pub const MAX_DIMENSION: u32 = 16384;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns `t, re, im, depth, residual`.
pub fn write_ray_csv<W: Write>(out: W, ray: &RayPolyline) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "re", "im", "depth", "residual"])?;
    for p in &ray.samples {
        w.write_record([p.t.to_string(), p.z.re.to_string(), p.z.im.to_string(), p.depth_used.to_string(), opt(p.residual)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t, re_kappa, im_kappa, residual`.
pub fn write_trace_csv<W: Write>(out: W, trace: &ParameterRayTrace) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "re_kappa", "im_kappa", "residual"])?;
    for p in &trace.samples {
        w.write_record([p.t.to_string(), p.kappa.re.to_string(), p.kappa.im.to_string(), p.residual.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per cell, row 0 at the top: `i, j, re, im, verdict, period`.
pub fn write_grid_csv<W: Write>(out: W, grid: &ComponentGrid) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "re", "im", "verdict", "period"])?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = ComponentGrid::cell_center(&grid.rect, grid.nx, grid.ny, i, j);
            let (name, period) = match grid.verdict(i, j) {
                SingularVerdict::AttractingCycle(p) => ("attracting", p.to_string()),
                SingularVerdict::EscapingSuspected => ("escaping_suspected", String::new()),
                SingularVerdict::Undecided => ("undecided", String::new()),
            };
            w.write_record([i.to_string(), j.to_string(), c.re.to_string(), c.im.to_string(), name.to_string(), period])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn orbit_json(orbit: &PeriodicOrbit) -> Value {
    json!({
        "points": orbit.points,
        "period": orbit.period,
        "multiplier": orbit.multiplier,
        "stability": orbit.stability,
    })
}

pub fn wake_json(wake: &BoundedWake) -> Value {
    let polylines: Vec<Vec<C64>> =
        wake.boundary.iter().map(|b| b.samples.iter().map(|p| p.kappa).collect()).collect();
    json!({
        "addresses": wake.char_addresses,
        "root": wake.root,
        "polylines": polylines,
    })
}

pub type Rgb = [u8; 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMap {
    /// One hue per period, white for escaping, black for undecided.
    #[default]
    Period,
    /// Black where attracting, white elsewhere.
    Mono,
}

const PERIOD_COLORS: [Rgb; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [188, 189, 34],
    [23, 190, 207],
    [127, 127, 127],
];
pub const ESCAPING_COLOR: Rgb = [255, 255, 255];
pub const UNDECIDED_COLOR: Rgb = [0, 0, 0];

pub fn verdict_color(v: SingularVerdict, map: ColorMap) -> Rgb {
    match (map, v) {
        (ColorMap::Period, SingularVerdict::AttractingCycle(p)) => PERIOD_COLORS[(p.max(1) - 1) % PERIOD_COLORS.len()],
        (ColorMap::Period, SingularVerdict::EscapingSuspected) => ESCAPING_COLOR,
        (ColorMap::Period, SingularVerdict::Undecided) => UNDECIDED_COLOR,
        (ColorMap::Mono, SingularVerdict::AttractingCycle(_)) => [0, 0, 0],
        (ColorMap::Mono, _) => [255, 255, 255],
    }
}

/// An RGB raster over a rectangle of the plane; pixel row 0 is the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    pub rect: Rect,
    pixels: Vec<Rgb>,
}

impl Canvas {
    pub fn new(width: u32, height: u32, rect: Rect, background: Rgb) -> Result<Self, ExportError> {
        if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
            return Err(ExportError::InvalidImage(format!("{width}x{height}")));
        }
        if !rect.is_valid() {
            return Err(ExportError::InvalidImage(format!("degenerate rectangle {rect:?}")));
        }
        Ok(Self { width, height, rect, pixels: vec![background; (width * height) as usize] })
    }

    pub fn from_grid(grid: &ComponentGrid, map: ColorMap) -> Result<Self, ExportError> {
        let (w, h) = (grid.nx as u32, grid.ny as u32);
        let mut canvas = Self::new(w, h, grid.rect, UNDECIDED_COLOR)?;
        for (p, v) in canvas.pixels.iter_mut().zip(&grid.cells) {
            *p = verdict_color(*v, map);
        }
        Ok(canvas)
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: i64, y: i64, color: Rgb) {
        if (0..self.width as i64).contains(&x) && (0..self.height as i64).contains(&y) {
            self.pixels[(y as u64 * self.width as u64 + x as u64) as usize] = color;
        }
    }

    /// Continuous pixel coordinates; pixel centres sit at integers.
    pub fn to_pixel(&self, z: C64) -> (f64, f64) {
        let r = &self.rect;
        (
            (z.re - r.re_min) / r.width() * self.width as f64 - 0.5,
            (r.im_max - z.im) / r.height() * self.height as f64 - 0.5,
        )
    }

    /// 1-px Bresenham line, clipped to the canvas first.
    pub fn draw_line(&mut self, a: C64, b: C64, color: Rgb) {
        if !is_finite(a) || !is_finite(b) {
            return;
        }
        let Some(((x0, y0), (x1, y1))) = clip(self.to_pixel(a), self.to_pixel(b), self.width as f64, self.height as f64)
        else {
            return;
        };
        let (mut x, mut y) = (x0.round() as i64, y0.round() as i64);
        let (xe, ye) = (x1.round() as i64, y1.round() as i64);
        let dx = (xe - x).abs();
        let dy = -(ye - y).abs();
        let sx = if x < xe { 1 } else { -1 };
        let sy = if y < ye { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x, y, color);
            if x == xe && y == ye {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn draw_polyline(&mut self, points: &[C64], color: Rgb) {
        for w in points.windows(2) {
            self.draw_line(w[0], w[1], color);
        }
        if let [only] = points {
            self.draw_line(*only, *only, color);
        }
    }

    /// 8-bit RGB PNG with UTF-8 text chunks.
    pub fn write_png<W: Write>(&self, out: W, text: &[(&str, String)]) -> Result<(), ExportError> {
        let mut encoder = png::Encoder::new(out, self.width, self.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        for (key, value) in text {
            encoder.add_itxt_chunk(key.to_string(), value.clone())?;
        }
        let mut writer = encoder.write_header()?;
        let data: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        writer.write_image_data(&data)?;
        writer.finish()?;
        Ok(())
    }
}

/// Liang-Barsky clip of a segment to `[-1, w] x [-1, h]`.
fn clip(a: (f64, f64), b: (f64, f64), w: f64, h: f64) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for (p, q) in [(-dx, a.0 + 1.0), (dx, w - a.0), (-dy, a.1 + 1.0), (dy, h - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                lo = lo.max(r);
            } else {
                hi = hi.min(r);
            }
        }
    }
    (lo <= hi).then_some(((a.0 + lo * dx, a.1 + lo * dy), (a.0 + hi * dx, a.1 + hi * dy)))
}

/// Iterations until `Re z` exceeds `escape_re`, or `None` within `max_iter`.
pub fn escape_time(kappa: Parameter, z: C64, max_iter: usize, escape_re: f64) -> Option<usize> {
    let k = kappa.value();
    let mut w = z;
    for n in 0..max_iter {
        if w.re > escape_re {
            return Some(n);
        }
        w = w.exp() + k;
        if !is_finite(w) {
            return Some(n + 1);
        }
    }
    None
}

/// Escape-time shading of the dynamical plane: grey by escape speed,
/// black where the orbit stays bounded in real part.
pub fn shade_dynamical_plane(
    kappa: Parameter,
    rect: Rect,
    width: u32,
    height: u32,
    max_iter: usize,
) -> Result<Canvas, ExportError> {
    let mut canvas = Canvas::new(width, height, rect, [0, 0, 0])?;
    let rows: Vec<Vec<Rgb>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    let z = ComponentGrid::cell_center(&rect, width as usize, height as usize, x as usize, y as usize);
                    match escape_time(kappa, z, max_iter, 50.0) {
                        Some(n) => {
                            let g = 255 - (200 * n.min(max_iter) / max_iter.max(1)) as u8;
                            [g, g, g]
                        }
                        None => [0, 0, 0],
                    }
                })
                .collect()
        })
        .collect();
    canvas.pixels = rows.into_iter().flatten().collect();
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::ExternalAddress;
    use crate::dynamics::Stability;
    use crate::rays::{geometric_potentials, ray_polyline, RayEvalConfig};

    fn square() -> Rect {
        Rect::new(0.0, 10.0, 0.0, 10.0)
    }

    #[test]
    fn ray_csv_layout() {
        let s: ExternalAddress = "|0".parse().unwrap();
        let line = ray_polyline(Parameter::real(-2.0), &s, &geometric_potentials(0.5, 4.0, 4), &RayEvalConfig::default(), true);
        let mut buf = Vec::new();
        write_ray_csv(&mut buf, &line).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "t,re,im,depth,residual");
        assert_eq!(rows.len(), 5);
        let first: Vec<&str> = rows[1].split(',').collect();
        assert_eq!(first[0], "4");
        assert_eq!(first[2], "0");
        assert!(first[4].parse::<f64>().unwrap() < 1e-9);
    }

    #[test]
    fn orbit_json_fields() {
        let orbit = PeriodicOrbit {
            points: vec![C64::new(1.0, 2.0)],
            period: 1,
            multiplier: C64::new(3.0, 0.0),
            stability: Stability::Repelling,
            parabolic: None,
        };
        let v = orbit_json(&orbit);
        assert_eq!(v["period"], json!(1));
        assert_eq!(v["stability"], json!("repelling"));
        assert_eq!(v["points"][0], json!([1.0, 2.0]));
    }

    #[test]
    fn bresenham_endpoints_and_connectivity() {
        let mut c = Canvas::new(10, 10, square(), [0, 0, 0]).unwrap();
        // pixel (x, y) has centre (x + 0.5, 9.5 - y)
        c.draw_line(C64::new(0.5, 9.5), C64::new(7.5, 6.5), [255, 0, 0]);
        let lit: Vec<(u32, u32)> =
            (0..10).flat_map(|y| (0..10).map(move |x| (x, y))).filter(|&(x, y)| c.pixel(x, y) == [255, 0, 0]).collect();
        assert_eq!(lit.len(), 8);
        assert!(lit.contains(&(0, 0)) && lit.contains(&(7, 3)));
        for x in 0..8 {
            assert_eq!(lit.iter().filter(|p| p.0 == x).count(), 1);
        }
    }

    #[test]
    fn lines_far_outside_are_clipped() {
        let mut c = Canvas::new(10, 10, square(), [0, 0, 0]).unwrap();
        c.draw_line(C64::new(-1e12, 5.5), C64::new(1e12, 5.5), [9, 9, 9]);
        assert!((0..10).all(|x| c.pixel(x, 4) == [9, 9, 9]));
        c.draw_line(C64::new(-1e12, -5.0), C64::new(1e12, -5.0), [1, 1, 1]);
        c.draw_line(C64::new(f64::NAN, 0.0), C64::new(1.0, 1.0), [1, 1, 1]);
        assert!(!(0..10).any(|y| (0..10).any(|x| c.pixel(x, y) == [1, 1, 1])));
    }

    #[test]
    fn png_is_deterministic_and_decodes() {
        let mut c = Canvas::new(7, 5, square(), [10, 20, 30]).unwrap();
        c.draw_polyline(&[C64::new(1.0, 1.0), C64::new(9.0, 9.0)], [200, 0, 0]);
        let mut a = Vec::new();
        let mut b = Vec::new();
        c.write_png(&mut a, &[("config", "x = 1".into())]).unwrap();
        c.write_png(&mut b, &[("config", "x = 1".into())]).unwrap();
        assert_eq!(a, b);
        let decoder = png::Decoder::new(std::io::Cursor::new(a));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (7, 5));
        assert_eq!(info.color_type, png::ColorType::Rgb);
        assert_eq!(&buf[..3], &[10, 20, 30]);
        assert_eq!(reader.info().utf8_text[0].keyword, "config");
    }

    #[test]
    fn invalid_canvas() {
        assert!(Canvas::new(0, 5, square(), [0, 0, 0]).is_err());
        assert!(Canvas::new(MAX_DIMENSION + 1, 5, square(), [0, 0, 0]).is_err());
        assert!(Canvas::new(5, 5, Rect::new(0.0, 0.0, 0.0, 1.0), [0, 0, 0]).is_err());
    }

    #[test]
    fn grid_colors() {
        let grid = ComponentGrid {
            rect: square(),
            nx: 2,
            ny: 1,
            cells: vec![SingularVerdict::AttractingCycle(1), SingularVerdict::EscapingSuspected],
        };
        let c = Canvas::from_grid(&grid, ColorMap::Period).unwrap();
        assert_eq!(c.pixel(0, 0), PERIOD_COLORS[0]);
        assert_eq!(c.pixel(1, 0), ESCAPING_COLOR);
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &grid).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0,0,2.5,5,attracting,1");
        assert_eq!(text.lines().nth(2).unwrap(), "1,0,7.5,5,escaping_suspected,");
    }

    #[test]
    fn escape_times() {
        // the real attracting fixed point of e^z - 2 never escapes
        assert_eq!(escape_time(Parameter::real(-2.0), C64::new(-1.8, 0.0), 100, 50.0), None);
        assert_eq!(escape_time(Parameter::real(-2.0), C64::new(60.0, 0.0), 100, 50.0), Some(0));
        assert_eq!(escape_time(Parameter::real(-2.0), C64::new(4.0, 0.0), 100, 50.0), Some(1));
    }
}
