//! Raster learning curves and bar charts. Every figure is written next to
//! the CSV holding exactly the plotted numbers; the images carry no text,
//! series colours follow the CSV order.

use std::io::{Read, Write};
use std::path::Path;

use super::ReportRow;
use crate::env::csv_err;
use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

const WHITE: Rgb = [255, 255, 255];
const AXIS: Rgb = [0, 0, 0];
const SERIES: [Rgb; 7] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [140, 86, 75],
    [23, 190, 207],
];
const MARGIN: u32 = 24;

fn series_colour(i: usize) -> Rgb {
    SERIES[i % SERIES.len()]
}

fn lighten(c: Rgb) -> Rgb {
    c.map(|v| (v as u32 + 2 * 255).div_euclid(3) as u8)
}

/// Pixel canvas with a linear data-to-pixel mapping inside fixed margins.
#[derive(Clone, Debug)]
pub struct Canvas {
    pub image: image::RgbImage,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Canvas {
    fn new(width: u32, height: u32, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let mut c = Self {
            image: image::RgbImage::from_pixel(width, height, image::Rgb(WHITE)),
            x_range: widen(x_range),
            y_range: widen(y_range),
        };
        let (x0, y0) = (MARGIN - 1, height - MARGIN);
        c.line((x0 as i64, y0 as i64), ((width - MARGIN) as i64, y0 as i64), AXIS);
        c.line((x0 as i64, y0 as i64), (x0 as i64, (MARGIN - 1) as i64), AXIS);
        c
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    /// Pixel column of data coordinate `x`.
    pub fn col(&self, x: f64) -> u32 {
        let span = (self.width() - 2 * MARGIN - 1) as f64;
        let t = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        MARGIN + (t.clamp(0.0, 1.0) * span).round() as u32
    }

    /// Pixel row of data coordinate `y` (larger `y` is higher up).
    pub fn row(&self, y: f64) -> u32 {
        let span = (self.height() - 2 * MARGIN - 1) as f64;
        let t = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        self.height() - MARGIN - 1 - (t.clamp(0.0, 1.0) * span).round() as u32
    }

    pub fn pixel(&self, col: u32, row: u32) -> Rgb {
        self.image.get_pixel(col, row).0
    }

    fn put(&mut self, col: i64, row: i64, c: Rgb) {
        if col >= 0 && row >= 0 && (col as u32) < self.width() && (row as u32) < self.height() {
            self.image.put_pixel(col as u32, row as u32, image::Rgb(c));
        }
    }

    fn line(&mut self, from: (i64, i64), to: (i64, i64), c: Rgb) {
        let (mut x, mut y) = from;
        let (dx, dy) = ((to.0 - x).abs(), -(to.1 - y).abs());
        let (sx, sy) = ((to.0 - x).signum(), (to.1 - y).signum());
        let mut err = dx + dy;
        loop {
            self.put(x, y, c);
            if (x, y) == to {
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

    fn fill(&mut self, cols: (u32, u32), rows: (u32, u32), c: Rgb) {
        for col in cols.0.min(cols.1)..=cols.0.max(cols.1) {
            for row in rows.0.min(rows.1)..=rows.0.max(rows.1) {
                self.put(col as i64, row as i64, c);
            }
        }
    }

    fn marker(&mut self, col: u32, row: u32, c: Rgb) {
        self.fill((col.saturating_sub(1), col + 1), (row.saturating_sub(1), row + 1), c);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.image
            .save(path)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// Evaluation points `(episode, mean return)` of one training log.
pub fn read_log_curve<R: Read>(r: R) -> Result<Vec<(f64, f64)>> {
    let mut input = csv::Reader::from_reader(r);
    let header = input.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("training log has no {name} column")))
    };
    let (ep, ev) = (col("episode")?, col("eval_mean")?);
    let mut points = Vec::new();
    for rec in input.records() {
        let rec = rec.map_err(csv_err)?;
        if rec[ev].is_empty() {
            continue;
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number {s:?} in training log")))
        };
        // episodes are logged zero-based; evaluation follows the episode
        points.push((parse(&rec[ep])? + 1.0, parse(&rec[ev])?));
    }
    Ok(points)
}

/// One variant's evaluation curves, one per seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub seeds: Vec<Vec<(f64, f64)>>,
}

/// Seed-aggregated curve: mean line and min/max band at every shared x.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSummary {
    pub label: String,
    pub x: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl CurveSummary {
    fn of(curve: &Curve) -> Result<Self> {
        let len = curve.seeds.iter().map(Vec::len).min().unwrap_or(0);
        if len == 0 {
            return Err(Error::Usage(format!("curve {:?} has no evaluation points", curve.label)));
        }
        let x: Vec<f64> = curve.seeds[0][..len].iter().map(|p| p.0).collect();
        if curve.seeds.iter().any(|s| s[..len].iter().zip(&x).any(|(p, x)| p.0 != *x)) {
            return Err(Error::Usage(format!("seeds of {:?} were evaluated at different points", curve.label)));
        }
        let values: Vec<Vec<f64>> = (0..len).map(|i| curve.seeds.iter().map(|s| s[i].1).collect()).collect();
        let n = curve.seeds.len() as f64;
        Ok(Self {
            label: curve.label.clone(),
            mean: values.iter().map(|v| v.iter().sum::<f64>() / n).collect(),
            min: values.iter().map(|v| v.iter().copied().fold(f64::INFINITY, f64::min)).collect(),
            max: values.iter().map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect(),
            x,
            values,
        })
    }
}

/// Rendered learning curves with their underlying numbers.
#[derive(Clone, Debug)]
pub struct CurvePlot {
    pub canvas: Canvas,
    pub curves: Vec<CurveSummary>,
}

impl CurvePlot {
    /// Pixel of the `i`-th mean point of curve `k`.
    pub fn mean_pixel(&self, k: usize, i: usize) -> (u32, u32) {
        let c = &self.curves[k];
        (self.canvas.col(c.x[i]), self.canvas.row(c.mean[i]))
    }

    pub fn colour(k: usize) -> Rgb {
        series_colour(k)
    }

    /// Columns `variant,episode,mean,min,max,seed_values` (values `;`-separated).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["variant", "episode", "mean", "min", "max", "seed_values"])
            .map_err(csv_err)?;
        for c in &self.curves {
            for i in 0..c.x.len() {
                let values: Vec<String> = c.values[i].iter().map(f64::to_string).collect();
                out.write_record([
                    c.label.clone(),
                    c.x[i].to_string(),
                    c.mean[i].to_string(),
                    c.min[i].to_string(),
                    c.max[i].to_string(),
                    values.join(";"),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean line with a min/max band per curve, all on shared axes.
pub fn learning_curve(curves: &[Curve], width: u32, height: u32) -> Result<CurvePlot> {
    let summaries = curves.iter().map(CurveSummary::of).collect::<Result<Vec<_>>>()?;
    let all_x = summaries.iter().flat_map(|s| s.x.iter().copied());
    let x_range = all_x.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let lo = summaries.iter().flat_map(|s| s.min.iter().copied()).fold(0.0, f64::min);
    let hi = summaries.iter().flat_map(|s| s.max.iter().copied()).fold(lo, f64::max);
    let mut canvas = Canvas::new(width, height, x_range, (lo, hi));

    for (k, s) in summaries.iter().enumerate() {
        let band = lighten(series_colour(k));
        for i in 0..s.x.len() {
            let next = (i + 1).min(s.x.len() - 1);
            let (c0, c1) = (canvas.col(s.x[i]), canvas.col(s.x[next]));
            for col in c0..=c1 {
                let t = if c1 > c0 { (col - c0) as f64 / (c1 - c0) as f64 } else { 0.0 };
                let lerp = |v: &[f64]| v[i] + t * (v[next] - v[i]);
                let rows = (canvas.row(lerp(&s.min)), canvas.row(lerp(&s.max)));
                canvas.fill((col, col), rows, band);
            }
        }
    }
    for (k, s) in summaries.iter().enumerate() {
        let colour = series_colour(k);
        for i in 0..s.x.len() {
            let p = (canvas.col(s.x[i]), canvas.row(s.mean[i]));
            if i + 1 < s.x.len() {
                let q = (canvas.col(s.x[i + 1]), canvas.row(s.mean[i + 1]));
                canvas.line((p.0 as i64, p.1 as i64), (q.0 as i64, q.1 as i64), colour);
            }
        }
        // markers last so they sit on top of neighbouring segments
        for i in 0..s.x.len() {
            canvas.marker(canvas.col(s.x[i]), canvas.row(s.mean[i]), colour);
        }
    }
    Ok(CurvePlot { canvas, curves: summaries })
}

/// Rendered grouped bar chart: one group per domain class, one bar per
/// variant, whiskers at two standard deviations and a black tick at the
/// random-agent return.
#[derive(Clone, Debug)]
pub struct BarChart {
    pub canvas: Canvas,
    pub rows: Vec<ReportRow>,
    /// Pixel columns `(left, right)` of each row's bar, in row order.
    pub bars: Vec<(u32, u32)>,
}

pub fn bar_chart(rows: &[ReportRow], width: u32, height: u32) -> Result<BarChart> {
    if rows.is_empty() {
        return Err(Error::Usage("bar chart needs at least one row".into()));
    }
    let mut classes = Vec::new();
    let mut variants = Vec::new();
    for r in rows {
        if !classes.contains(&r.class) {
            classes.push(r.class);
        }
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
    }
    let lo = rows
        .iter()
        .map(|r| (r.mean - r.two_sigma).min(r.random))
        .fold(0.0, f64::min);
    let hi = rows
        .iter()
        .map(|r| (r.mean + r.two_sigma).max(r.random))
        .fold(lo, f64::max);
    let slots = (classes.len() * (variants.len() + 1)) as f64;
    let mut canvas = Canvas::new(width, height, (0.0, slots), (lo, hi));
    let zero = canvas.row(0.0);
    let mut bars = Vec::with_capacity(rows.len());
    for r in rows {
        let g = classes.iter().position(|c| *c == r.class).expect("class listed");
        let v = variants.iter().position(|n| *n == r.variant).expect("variant listed");
        let slot = (g * (variants.len() + 1) + v) as f64 + 0.5;
        let (left, right) = (canvas.col(slot), canvas.col(slot + 1.0) - 1);
        let colour = series_colour(v);
        canvas.fill((left, right), (zero, canvas.row(r.mean)), colour);
        let mid = (left + right) / 2;
        let (top, bottom) = (canvas.row(r.mean + r.two_sigma), canvas.row(r.mean - r.two_sigma));
        canvas.line((mid as i64, top as i64), (mid as i64, bottom as i64), AXIS);
        canvas.line((left as i64, top as i64), (right as i64, top as i64), AXIS);
        canvas.line((left as i64, bottom as i64), (right as i64, bottom as i64), AXIS);
        let random = canvas.row(r.random) as i64;
        canvas.line((left as i64 - 1, random), (right as i64 + 1, random), AXIS);
        bars.push((left, right));
    }
    Ok(BarChart { canvas, rows: rows.to_vec(), bars })
}
