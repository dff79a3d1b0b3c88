//! Grain-label images.
//!
//! Text format: a header line `width height pixel_size [origin_x origin_y]`
//! followed by `height` rows of `width` whitespace-separated non-negative
//! integers. Row 0 is the top of the image, so it maps to the largest `y`:
//! the pixel in row `r`, column `c` has centre
//! `origin + ((c + ½)·pixel_size, (height − r − ½)·pixel_size)`.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{Domain, Point};
use crate::objective::TargetData;

/// A label image with labels renumbered densely to `0..n` in order of first
/// appearance (reading rows top to bottom).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelGrid {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    /// Lower-left corner of the image.
    pub origin: Point,
    /// Row-major, top row first.
    pub labels: Vec<u32>,
    /// Original label of each dense index.
    pub label_map: Vec<u64>,
}

impl LabelGrid {
    pub fn new(
        width: usize,
        height: usize,
        pixel_size: f64,
        origin: Point,
        raw: Vec<u64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyGrid);
        }
        if raw.len() != width * height {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: width * height,
                found: raw.len(),
            });
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("pixel size {pixel_size}")));
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(Error::NonFinite("origin"));
        }
        let mut index: HashMap<u64, u32> = HashMap::new();
        let mut label_map = Vec::new();
        let labels = raw
            .into_iter()
            .map(|l| {
                *index.entry(l).or_insert_with(|| {
                    label_map.push(l);
                    (label_map.len() - 1) as u32
                })
            })
            .collect();
        Ok(LabelGrid {
            width,
            height,
            pixel_size,
            origin,
            labels,
            label_map,
        })
    }

    pub fn grain_count(&self) -> usize {
        self.label_map.len()
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.grain_count()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// The rectangle covered by the image.
    pub fn domain(&self) -> Result<Domain> {
        Domain::rectangle_at(
            self.origin,
            self.width as f64 * self.pixel_size,
            self.height as f64 * self.pixel_size,
        )
    }

    /// Dense labels of grains made of more than one 4-connected component.
    pub fn disconnected_grains(&self) -> Vec<u32> {
        let (w, h) = (self.width, self.height);
        let mut seen = vec![false; w * h];
        let mut components = vec![0usize; self.grain_count()];
        let mut queue = VecDeque::new();
        for start in 0..w * h {
            if seen[start] {
                continue;
            }
            let l = self.labels[start];
            components[l as usize] += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(k) = queue.pop_front() {
                let (r, c) = (k / w, k % w);
                let mut visit = |nk: usize| {
                    if !seen[nk] && self.labels[nk] == l {
                        seen[nk] = true;
                        queue.push_back(nk);
                    }
                };
                if r > 0 {
                    visit(k - w);
                }
                if r + 1 < h {
                    visit(k + w);
                }
                if c > 0 {
                    visit(k - 1);
                }
                if c + 1 < w {
                    visit(k + 1);
                }
            }
        }
        (0..components.len() as u32)
            .filter(|&l| components[l as usize] > 1)
            .collect()
    }

    /// The grid in the text format, with original labels.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.labels.len() * 4 + 64);
        let _ = write!(s, "{} {} {}", self.width, self.height, self.pixel_size);
        if self.origin != Point::ZERO {
            let _ = write!(s, " {} {}", self.origin.x, self.origin.y);
        }
        s.push('\n');
        for row in self.labels.chunks(self.width) {
            for (k, &l) in row.iter().enumerate() {
                if k > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{}", self.label_map[l as usize]);
            }
            s.push('\n');
        }
        s
    }
}

impl std::str::FromStr for LabelGrid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_label_grid(s)
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Tokens of a line with their 1-based columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split_whitespace()
        .map(move |t| (t.as_ptr() as usize - line.as_ptr() as usize + 1, t))
}

pub fn parse_label_grid(text: &str) -> Result<LabelGrid> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| {
            let t = l.trim_start();
            !t.is_empty() && !t.starts_with('#')
        });
    let Some((hline, header)) = lines.next() else {
        return Err(Error::EmptyGrid);
    };
    let fields: Vec<(usize, &str)> = tokens(header).collect();
    if fields.len() != 3 && fields.len() != 5 {
        return Err(parse_err(
            hline,
            1,
            format!(
                "header needs `width height pixel_size [origin_x origin_y]`, found {} fields",
                fields.len()
            ),
        ));
    }
    let int = |(col, t): (usize, &str)| {
        t.parse::<usize>().map_err(|_| {
            parse_err(
                hline,
                col,
                format!("expected a non-negative integer, found `{t}`"),
            )
        })
    };
    let real = |(col, t): (usize, &str)| {
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(hline, col, format!("expected a number, found `{t}`")))
    };
    let width = int(fields[0])?;
    let height = int(fields[1])?;
    let pixel_size = real(fields[2])?;
    if pixel_size.is_nan() || pixel_size <= 0.0 {
        return Err(parse_err(hline, fields[2].0, "pixel size must be positive"));
    }
    let origin = if fields.len() == 5 {
        Point::new(real(fields[3])?, real(fields[4])?)
    } else {
        Point::ZERO
    };
    if width == 0 || height == 0 {
        return Err(Error::EmptyGrid);
    }

    let mut raw = Vec::with_capacity(width * height);
    let mut rows = 0;
    let mut last_line = hline;
    for (lno, line) in lines {
        last_line = lno;
        if rows == height {
            return Err(parse_err(lno, 1, format!("more than {height} rows")));
        }
        let mut found = 0;
        for (col, t) in tokens(line) {
            let l = t.parse::<u64>().map_err(|_| {
                parse_err(
                    lno,
                    col,
                    format!("expected a non-negative integer label, found `{t}`"),
                )
            })?;
            if found == width {
                return Err(parse_err(
                    lno,
                    col,
                    format!("row {rows} has more than {width} labels"),
                ));
            }
            raw.push(l);
            found += 1;
        }
        if found != width {
            return Err(parse_err(
                lno,
                line.len() + 1,
                format!("row {rows} has {found} labels, expected {width}"),
            ));
        }
        rows += 1;
    }
    if rows != height {
        return Err(parse_err(
            last_line + 1,
            1,
            format!("expected {height} rows, found {rows}"),
        ));
    }
    LabelGrid::new(width, height, pixel_size, origin, raw)
}

pub fn load_label_grid(path: impl AsRef<Path>) -> Result<LabelGrid> {
    parse_label_grid(&std::fs::read_to_string(path)?)
}

pub fn write_label_grid(grid: &LabelGrid, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, grid.to_text())?;
    Ok(())
}

/// Areas and centroids of the grains by pixel counting. The domain is the
/// image rectangle unless `domain_override` is given.
pub fn grid_to_targets(
    grid: &LabelGrid,
    domain_override: Option<&Domain>,
) -> Result<(Domain, TargetData)> {
    let domain = match domain_override {
        Some(d) => d.clone(),
        None => grid.domain()?,
    };
    let n = grid.grain_count();
    // doubled pixel-centre offsets, summed exactly as integers
    let mut count = vec![0u64; n];
    let mut sx = vec![0u64; n];
    let mut sy = vec![0u64; n];
    let h = grid.height as u64;
    for (r, row) in grid.labels.chunks(grid.width).enumerate() {
        let y2 = 2 * (h - r as u64) - 1;
        for (c, &l) in row.iter().enumerate() {
            let l = l as usize;
            count[l] += 1;
            sx[l] += 2 * c as u64 + 1;
            sy[l] += y2;
        }
    }
    let ps = grid.pixel_size;
    let pa = ps * ps;
    let v: Vec<f64> = count.iter().map(|&c| c as f64 * pa).collect();
    let b: Vec<Point> = (0..n)
        .map(|i| {
            let d = 2.0 * count[i] as f64;
            Point::new(
                grid.origin.x + (sx[i] as f64 / d) * ps,
                grid.origin.y + (sy[i] as f64 / d) * ps,
            )
        })
        .collect();
    let data = TargetData::new(v, b, &domain)?;
    Ok((domain, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let g = parse_label_grid("2 2 1\n0 0\n1 1\n").unwrap();
        assert_eq!(g.grain_count(), 2);
        assert_eq!(g.counts(), vec![2, 2]);
        let (dom, data) = grid_to_targets(&g, None).unwrap();
        assert_eq!(dom.area(), 4.0);
        assert_eq!(data.areas(), &[2.0, 2.0]);
        assert_eq!(
            data.centroids(),
            &[Point::new(1.0, 1.5), Point::new(1.0, 0.5)]
        );
    }

    #[test]
    fn relabels_densely() {
        let g = parse_label_grid("2 1 0.5\n7 3\n").unwrap();
        assert_eq!(g.labels, vec![0, 1]);
        assert_eq!(g.label_map, vec![7, 3]);
        assert_eq!(parse_label_grid(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn bad_row_length_names_row() {
        match parse_label_grid("3 2 1\n0 0 0\n1 1\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("row 1"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match parse_label_grid("2 1 1\n0 x\n") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_label_grid("\n# nothing\n"),
            Err(Error::EmptyGrid)
        ));
        assert!(matches!(parse_label_grid("0 3 1\n"), Err(Error::EmptyGrid)));
    }

    #[test]
    fn single_grain_and_checkerboard() {
        let g = parse_label_grid("3 2 2.0 1 1\n5 5 5\n5 5 5\n").unwrap();
        let (dom, data) = grid_to_targets(&g, None).unwrap();
        assert_eq!(data.areas(), &[24.0]);
        assert_eq!(data.centroids()[0], dom.centroid());
        assert_eq!(data.centroids()[0], Point::new(4.0, 3.0));

        let g = parse_label_grid("2 2 0.5\n0 1\n2 3\n").unwrap();
        let (_, data) = grid_to_targets(&g, None).unwrap();
        assert!(data.areas().iter().all(|&v| v == 0.25));
        assert_eq!(data.centroids()[0], Point::new(0.25, 0.75));
        assert_eq!(data.centroids()[3], Point::new(0.75, 0.25));
        assert!(g.disconnected_grains().is_empty());
    }

    #[test]
    fn disconnected_grain_flagged() {
        let g = parse_label_grid("3 1 1\n4 2 4\n").unwrap();
        assert_eq!(g.disconnected_grains(), vec![0]);
        let (_, data) = grid_to_targets(&g, None).unwrap();
        assert_eq!(data.areas(), &[2.0, 1.0]);
        assert_eq!(data.centroids()[0], Point::new(1.5, 0.5));
    }
}
