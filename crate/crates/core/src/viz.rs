//! SVG latent scatter plots with class ellipses, and PGM sheets of decoded
//! grid points.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::ClassEllipses;
use crate::latent::EllipseSpec;
use crate::model::Model;
use crate::tensor::Tensor;

/// Paul Tol's "muted" qualitative scheme.
pub const PALETTE: [&str; 10] = [
    "#CC6677", "#332288", "#DDCC77", "#117733", "#88CCEE", "#882255", "#44AA99", "#999933",
    "#AA4499", "#DDDDDD",
];

const PLOT_SIZE: f64 = 600.0;
const MARGIN: f64 = 0.05;

pub fn label_color(label: i64) -> &'static str {
    PALETTE[label.rem_euclid(PALETTE.len() as i64) as usize]
}

/// Axis-aligned box `[xmin, xmax, ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn of_points(points: &Tensor) -> Result<Self> {
        if points.shape().len() != 2 || points.cols() != 2 {
            return Err(Error::shape("bounding box", points.shape(), &[points.rows(), 2]));
        }
        if !points.all_finite() {
            return Err(Error::Domain("non-finite coordinates".into()));
        }
        let mut b = BBox {
            xmin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymin: f64::INFINITY,
            ymax: f64::NEG_INFINITY,
        };
        for i in 0..points.rows() {
            b.include(points.get(i, 0), points.get(i, 1));
        }
        Ok(b)
    }

    fn include(&mut self, x: f64, y: f64) {
        self.xmin = self.xmin.min(x);
        self.xmax = self.xmax.max(x);
        self.ymin = self.ymin.min(y);
        self.ymax = self.ymax.max(y);
    }

    fn include_ellipse(&mut self, e: &EllipseSpec) {
        let (s, c) = e.rotation.sin_cos();
        let [a, b] = e.semi_axes;
        let hx = ((a * c).powi(2) + (b * s).powi(2)).sqrt();
        let hy = ((a * s).powi(2) + (b * c).powi(2)).sqrt();
        self.include(e.center[0] - hx, e.center[1] - hy);
        self.include(e.center[0] + hx, e.center[1] + hy);
    }

    fn padded(&self, frac: f64) -> Self {
        let pad = |lo: f64, hi: f64| {
            let w = hi - lo;
            let p = if w > 0.0 { frac * w } else { 0.5 };
            (lo - p, hi + p)
        };
        let (xmin, xmax) = pad(self.xmin, self.xmax);
        let (ymin, ymax) = pad(self.ymin, self.ymax);
        BBox { xmin, xmax, ymin, ymax }
    }
}

/// Renders the latent scatter. Points are `<circle>` elements colored by
/// label; each ellipse is an `<ellipse class="ellipse class-L k-K">`. Data
/// space is mapped with one uniform scale and y pointing up.
pub fn render_latent_svg(
    points: &Tensor,
    labels: Option<&[i64]>,
    ellipses: &[ClassEllipses],
) -> Result<String> {
    let mut bb = BBox::of_points(points)?;
    if let Some(l) = labels {
        if l.len() != points.rows() {
            return Err(Error::shape("latent plot labels", points.shape(), &[l.len()]));
        }
    }
    for c in ellipses {
        c.ellipses.iter().for_each(|e| bb.include_ellipse(e));
    }
    let bb = bb.padded(MARGIN);
    let scale = PLOT_SIZE / (bb.xmax - bb.xmin).max(bb.ymax - bb.ymin);
    let width = (bb.xmax - bb.xmin) * scale;
    let height = (bb.ymax - bb.ymin) * scale;
    let px = |x: f64| (x - bb.xmin) * scale;
    let py = |y: f64| (bb.ymax - y) * scale;

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.3}\" height=\"{height:.3}\" viewBox=\"0 0 {width:.3} {height:.3}\">"
    );
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{width:.3}\" height=\"{height:.3}\" fill=\"white\" stroke=\"#444444\" stroke-width=\"1\"/>"
    );
    s.push_str("<g id=\"points\" stroke=\"none\" fill-opacity=\"0.75\">\n");
    for i in 0..points.rows() {
        let color = labels.map_or("#333333", |l| label_color(l[i]));
        let _ = writeln!(
            s,
            "<circle cx=\"{:.6}\" cy=\"{:.6}\" r=\"2\" fill=\"{color}\"/>",
            px(points.get(i, 0)),
            py(points.get(i, 1))
        );
    }
    s.push_str("</g>\n<g id=\"ellipses\" fill=\"none\" stroke-width=\"1.5\">\n");
    for c in ellipses {
        for e in &c.ellipses {
            let (cx, cy) = (px(e.center[0]), py(e.center[1]));
            // y is flipped, so a counter-clockwise data rotation is clockwise on screen
            let deg = -e.rotation.to_degrees();
            let _ = writeln!(
                s,
                "<ellipse class=\"ellipse class-{} k-{}\" cx=\"{cx:.6}\" cy=\"{cy:.6}\" rx=\"{:.6}\" ry=\"{:.6}\" transform=\"rotate({deg:.6} {cx:.6} {cy:.6})\" stroke=\"{}\"/>",
                c.label,
                e.k,
                e.semi_axes[0] * scale,
                e.semi_axes[1] * scale,
                label_color(c.label),
            );
        }
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

pub fn latent_plot_svg(
    points: &Tensor,
    labels: Option<&[i64]>,
    ellipses: &[ClassEllipses],
    out: impl AsRef<Path>,
) -> Result<()> {
    fs::write(out, render_latent_svg(points, labels, ellipses)?)?;
    Ok(())
}

/// Inclusive `n × n` lattice over `bb`, row-major with row 0 at `ymax`.
pub fn grid_lattice(bb: &BBox, n: usize) -> Result<Vec<[f64; 2]>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("grid size must be at least 2, got {n}")));
    }
    let at = |lo: f64, hi: f64, i: usize| {
        if i == n - 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        let y = at(bb.ymax, bb.ymin, r);
        for c in 0..n {
            out.push([at(bb.xmin, bb.xmax, c), y]);
        }
    }
    Ok(out)
}

/// `[0, 1] → {0, …, 255}` with rounding; values outside are clamped.
pub fn quantize_pixel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Side length `s` with `s² = d`, if any.
pub fn square_side(d: usize) -> Option<usize> {
    let s = (d as f64).sqrt().round() as usize;
    (s * s == d).then_some(s)
}

/// Decoded grid: lattice points and one decoded vector per point.
#[derive(Debug, Clone)]
pub struct DecodedGrid {
    pub grid_n: usize,
    pub points: Vec<[f64; 2]>,
    pub decoded: Tensor,
}

pub fn decode_grid(model: &Model, coords: &Tensor, grid_n: usize) -> Result<DecodedGrid> {
    let bb = BBox::of_points(coords)?;
    let points = grid_lattice(&bb, grid_n)?;
    let z = Tensor::matrix(points.len(), 2, points.iter().flatten().copied().collect())?;
    let decoded = model.decode(&z)?;
    Ok(DecodedGrid {
        grid_n,
        points,
        decoded,
    })
}

impl DecodedGrid {
    /// Binary PGM (P5) of the tiled images; errors if `d` is not a square.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        let d = self.decoded.cols();
        let side = square_side(d).ok_or(Error::NonSquareImage(d))?;
        let full = self.grid_n * side;
        let mut out = format!("P5\n{full} {full}\n255\n").into_bytes();
        let mut pixels = vec![0u8; full * full];
        for (t, row) in (0..self.decoded.rows()).map(|t| (t, self.decoded.row(t))) {
            let (tr, tc) = (t / self.grid_n, t % self.grid_n);
            for (k, v) in row.iter().enumerate() {
                let (pr, pc) = (k / side, k % side);
                pixels[(tr * side + pr) * full + tc * side + pc] = quantize_pixel(*v);
            }
        }
        out.extend_from_slice(&pixels);
        Ok(out)
    }

    /// `gx,gy,v0,…` rows, for decoders whose output is not a square image.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gx,gy");
        for j in 0..self.decoded.cols() {
            let _ = write!(s, ",v{j}");
        }
        s.push('\n');
        for (p, i) in self.points.iter().zip(0..) {
            let _ = write!(s, "{},{}", p[0], p[1]);
            for v in self.decoded.row(i) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Decodes a `grid_n × grid_n` lattice over the bounding box of `coords`
/// and writes the tiled PGM sheet.
pub fn grid_inverse_sheet(model: &Model, coords: &Tensor, grid_n: usize, out: impl AsRef<Path>) -> Result<DecodedGrid> {
    let grid = decode_grid(model, coords, grid_n)?;
    fs::write(out, grid.to_pgm()?)?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> BBox {
        BBox { xmin, xmax, ymin, ymax }
    }

    #[test]
    fn lattice_examples() {
        let g = grid_lattice(&bb(0., 4., 0., 4.), 5).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], [0.0, 4.0]);
        assert_eq!(g[24], [4.0, 0.0]);
        let xs: Vec<f64> = g[..5].iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0., 1., 2., 3., 4.]);

        let corners = grid_lattice(&bb(-1., 3., 2., 5.), 2).unwrap();
        assert_eq!(corners, vec![[-1., 5.], [3., 5.], [-1., 2.], [3., 2.]]);
        assert!(grid_lattice(&bb(0., 1., 0., 1.), 1).is_err());
    }

    #[test]
    fn lattice_symmetric_under_corner_swap() {
        let a = grid_lattice(&bb(-2., 3., 1., 7.), 5).unwrap();
        let b = grid_lattice(&bb(3., -2., 7., 1.), 5).unwrap();
        let key = |v: &Vec<[f64; 2]>| {
            let mut k: Vec<(u64, u64)> = v.iter().map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
            k.sort_unstable();
            k
        };
        let (ka, kb) = (key(&a), key(&b));
        for (p, q) in ka.iter().zip(&kb) {
            assert!((f64::from_bits(p.0) - f64::from_bits(q.0)).abs() < 1e-12);
            assert!((f64::from_bits(p.1) - f64::from_bits(q.1)).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_quantization() {
        assert_eq!(quantize_pixel(0.0), 0);
        assert_eq!(quantize_pixel(1.0), 255);
        assert_eq!(quantize_pixel(0.5), 128);
        assert_eq!(quantize_pixel(-3.0), 0);
        assert_eq!(square_side(784), Some(28));
        assert_eq!(square_side(50), None);
    }

    #[test]
    fn svg_counts() {
        let pts = Tensor::matrix(3, 2, vec![0., 0., 1., 1., 2., 0.5]).unwrap();
        let svg = render_latent_svg(&pts, Some(&[0, 1, 1]), &[]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("<ellipse").count(), 0);
        assert_eq!(svg, render_latent_svg(&pts, Some(&[0, 1, 1]), &[]).unwrap());
    }
}
