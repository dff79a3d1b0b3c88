//! SVG pictures of diagrams. Mathematical `y` points up, so it is flipped
//! on output.

use std::fmt::Write as _;

use crate::aniso::{RasterDiagram, MASKED};
use crate::fit::TraceRow;
use crate::geom2d::{Domain, LaguerreDiagram, Point};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 10.0;

struct Frame {
    lower: Point,
    upper_y: f64,
    scale: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn new(domain: &Domain) -> Self {
        let (lo, hi) = domain.bounding_box();
        let ext = hi - lo;
        let scale = SIZE / ext.x.max(ext.y);
        Frame {
            lower: lo,
            upper_y: hi.y,
            scale,
            width: ext.x * scale + 2.0 * MARGIN,
            height: ext.y * scale + 2.0 * MARGIN,
        }
    }

    fn map(&self, p: Point) -> (f64, f64) {
        (
            MARGIN + (p.x - self.lower.x) * self.scale,
            MARGIN + (self.upper_y - p.y) * self.scale,
        )
    }

    fn open(&self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.3} {:.3}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
            self.width.ceil(),
            self.height.ceil(),
            self.width,
            self.height
        )
    }

    fn polygon(&self, s: &mut String, vertices: &[Point], stroke: f64) {
        let pts: Vec<String> = vertices
            .iter()
            .map(|&p| {
                let (x, y) = self.map(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"{stroke}\"/>",
            pts.join(" ")
        );
    }

    fn dots(
        &self,
        s: &mut String,
        points: impl IntoIterator<Item = Point>,
        colour: &str,
        class: &str,
    ) {
        let _ = writeln!(s, "<g class=\"{class}\" fill=\"{colour}\">");
        for p in points {
            let (x, y) = self.map(p);
            let _ = writeln!(s, "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"3\"/>");
        }
        s.push_str("</g>\n");
    }
}

/// Cells in black, computed centroids in red and, if given, target
/// centroids in blue.
pub fn diagram_svg(
    domain: &Domain,
    diagram: &LaguerreDiagram,
    targets: Option<&[Point]>,
) -> String {
    let frame = Frame::new(domain);
    let mut s = frame.open();
    s.push_str("<g class=\"cells\">\n");
    for cell in diagram.cells.iter().filter(|c| !c.is_empty()) {
        frame.polygon(&mut s, cell.vertices(), 1.0);
    }
    s.push_str("</g>\n");
    if let Some(b) = targets {
        frame.dots(&mut s, b.iter().copied(), "blue", "targets");
    }
    frame.dots(
        &mut s,
        diagram.centroids.iter().flatten().copied(),
        "red",
        "centroids",
    );
    s.push_str("</svg>\n");
    s
}

/// Pixel-cell boundaries in black, with the same dots as [`diagram_svg`].
pub fn raster_svg(domain: &Domain, raster: &RasterDiagram, targets: Option<&[Point]>) -> String {
    let frame = Frame::new(domain);
    let mut s = frame.open();
    frame.polygon(&mut s, domain.boundary().vertices(), 1.0);
    let g = raster.resolution;
    let (px, py) = raster.pixel_size;
    let corner = |row: usize, col: usize| {
        frame.map(Point::new(
            raster.lower.x + col as f64 * px,
            raster.lower.y + row as f64 * py,
        ))
    };
    let mut path = String::new();
    for row in 0..g {
        for col in 0..g {
            let l = raster.label(row, col);
            if l == MASKED {
                continue;
            }
            if col + 1 < g
                && raster.label(row, col + 1) != l
                && raster.label(row, col + 1) != MASKED
            {
                let (x0, y0) = corner(row, col + 1);
                let (_, y1) = corner(row + 1, col + 1);
                let _ = write!(path, "M{x0:.3} {y0:.3}V{y1:.3}");
            }
            if row + 1 < g
                && raster.label(row + 1, col) != l
                && raster.label(row + 1, col) != MASKED
            {
                let (x0, y0) = corner(row + 1, col);
                let (x1, _) = corner(row + 1, col + 1);
                let _ = write!(path, "M{x0:.3} {y0:.3}H{x1:.3}");
            }
        }
    }
    let _ = writeln!(
        s,
        "<path class=\"cells\" d=\"{path}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>"
    );
    if let Some(b) = targets {
        frame.dots(&mut s, b.iter().copied(), "blue", "targets");
    }
    frame.dots(
        &mut s,
        raster.centroids.iter().flatten().copied(),
        "red",
        "centroids",
    );
    s.push_str("</svg>\n");
    s
}

/// `log10` of the trace's `f` column against iteration, as a polyline.
pub fn trace_chart_svg(rows: &[TraceRow]) -> String {
    let (w, h) = (600.0, 300.0);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.f > 0.0 && r.f.is_finite())
        .map(|r| (r.iter as f64, r.f.log10()))
        .collect();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if !pts.is_empty() {
        let xmax = pts.iter().map(|p| p.0).fold(1.0, f64::max);
        let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let yr = (ymax - ymin).max(1e-12);
        let line: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    MARGIN + x / xmax * (w - 2.0 * MARGIN),
                    MARGIN + (ymax - y) / yr * (h - 2.0 * MARGIN)
                )
            })
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"black\"/>",
            line.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}
