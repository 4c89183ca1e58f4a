//! Sampled embedding-function distance between two ellipses, with analytic gradients.
//!
//! An ellipse is embedded as the quadratic field
//! `Φ(x) = (x - c)ᵀ R(θ) diag(f(α), f(β)) R(θ)ᵀ (x - c)` and two ellipses are compared by
//! the sum of squared field differences over a regular grid. The grid lives in normalized
//! crop coordinates `[0, 1]²`, so the loss does not depend on the crop resolution.

use nalgebra::Vector2;

use crate::conic::{BBox, Ellipse};
use crate::error::{Error, Result};

/// Form of the central diagonal matrix of the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingVariant {
    /// `diag(1/α², 1/β²)`: the ellipse equation itself; `Φ = 1` on the boundary.
    InverseSquare,
    /// `diag(1/α, 1/β)`.
    Inverse,
    /// `diag(α², β²)`.
    Square,
    /// `diag(α, β)`.
    Linear,
}

impl EmbeddingVariant {
    pub const ALL: [EmbeddingVariant; 4] = [
        EmbeddingVariant::InverseSquare,
        EmbeddingVariant::Inverse,
        EmbeddingVariant::Square,
        EmbeddingVariant::Linear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::InverseSquare => "inverse_square",
            Self::Inverse => "inverse",
            Self::Square => "square",
            Self::Linear => "linear",
        }
    }

    /// Diagonal weight and its derivative for one semi-axis.
    #[inline]
    fn weight(&self, a: f64) -> (f64, f64) {
        match self {
            Self::InverseSquare => (1.0 / (a * a), -2.0 / (a * a * a)),
            Self::Inverse => (1.0 / a, -1.0 / (a * a)),
            Self::Square => (a * a, 2.0 * a),
            Self::Linear => (a, 1.0),
        }
    }
}

impl std::str::FromStr for EmbeddingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown embedding variant `{s}`")))
    }
}

/// Regular cell-centered sampling grid over a square domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    rows: usize,
    cols: usize,
    min: f64,
    max: f64,
    points: Vec<Vector2<f64>>,
}

impl SamplingGrid {
    pub fn new(rows: usize, cols: usize, min: f64, max: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig("grid needs at least one row and column".into()));
        }
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidConfig(format!("invalid grid domain [{min}, {max}]")));
        }
        let (dx, dy) = ((max - min) / cols as f64, (max - min) / rows as f64);
        let points = (0..rows)
            .flat_map(|r| {
                (0..cols).map(move |c| {
                    Vector2::new(min + (c as f64 + 0.5) * dx, min + (r as f64 + 0.5) * dy)
                })
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            min,
            max,
            points,
        })
    }

    /// `n × n` grid over the normalized crop `[0, 1]²`.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, n, 0.0, 1.0)
    }

    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Area represented by one sample.
    pub fn cell_area(&self) -> f64 {
        let side = self.max - self.min;
        side * side / (self.rows * self.cols) as f64
    }
}

impl Default for SamplingGrid {
    /// The 25×25 grid.
    fn default() -> Self {
        Self::unit(25).expect("valid default grid")
    }
}

#[inline]
fn local_coords(e: &Ellipse, x: &Vector2<f64>) -> (f64, f64, f64, f64) {
    let (s, c) = e.theta().sin_cos();
    let d = x - e.center();
    // Components along the major (u) and minor (w) axis.
    (c * d.x + s * d.y, -s * d.x + c * d.y, s, c)
}

pub fn embed(e: &Ellipse, x: &Vector2<f64>, v: EmbeddingVariant) -> f64 {
    let (u, w, _, _) = local_coords(e, x);
    let (fa, _) = v.weight(e.alpha());
    let (fb, _) = v.weight(e.beta());
    fa * u * u + fb * w * w
}

/// `(Φ(x), ∂Φ/∂[cx, cy, α, β, θ])`.
pub fn embed_with_gradient(e: &Ellipse, x: &Vector2<f64>, v: EmbeddingVariant) -> (f64, [f64; 5]) {
    let (u, w, s, c) = local_coords(e, x);
    let (fa, dfa) = v.weight(e.alpha());
    let (fb, dfb) = v.weight(e.beta());
    let phi = fa * u * u + fb * w * w;
    let grad = [
        -2.0 * (fa * u * c - fb * w * s),
        -2.0 * (fa * u * s + fb * w * c),
        dfa * u * u,
        dfb * w * w,
        2.0 * (fa - fb) * u * w,
    ];
    (phi, grad)
}

/// `Σ_i (Φ_pred(x_i) - Φ_gt(x_i))²` over the grid (a sum, not a mean).
pub fn loss(pred: &Ellipse, gt: &Ellipse, grid: &SamplingGrid, v: EmbeddingVariant) -> f64 {
    grid.points()
        .iter()
        .map(|x| {
            let d = embed(pred, x, v) - embed(gt, x, v);
            d * d
        })
        .sum()
}

/// Loss and its gradient with respect to the predicted ellipse `[cx, cy, α, β, θ]`.
pub fn loss_with_gradient(
    pred: &Ellipse,
    gt: &Ellipse,
    grid: &SamplingGrid,
    v: EmbeddingVariant,
) -> (f64, [f64; 5]) {
    let mut total = 0.0;
    let mut grad = [0.0; 5];
    for x in grid.points() {
        let (phi, g) = embed_with_gradient(pred, x, v);
        let d = phi - embed(gt, x, v);
        total += d * d;
        for k in 0..5 {
            grad[k] += 2.0 * d * g[k];
        }
    }
    (total, grad)
}

pub fn loss_gradient(pred: &Ellipse, gt: &Ellipse, grid: &SamplingGrid, v: EmbeddingVariant) -> [f64; 5] {
    loss_with_gradient(pred, gt, grid, v).1
}

/// Plain gradient descent on the predicted ellipse with a fixed step size. Semi-axes are
/// kept above `min_axis`.
pub fn descend(
    init: &Ellipse,
    target: &Ellipse,
    grid: &SamplingGrid,
    v: EmbeddingVariant,
    steps: usize,
    step_size: f64,
    min_axis: f64,
) -> Ellipse {
    let mut p = init.params();
    let mut current = *init;
    for _ in 0..steps {
        let g = loss_gradient(&current, target, grid, v);
        if !g.iter().all(|x| x.is_finite()) {
            break;
        }
        for k in 0..5 {
            p[k] -= step_size * g[k];
        }
        p[2] = p[2].max(min_axis);
        p[3] = p[3].max(min_axis);
        match Ellipse::new(Vector2::new(p[0], p[1]), p[2], p[3], p[4]) {
            Ok(e) => {
                current = e;
                p = e.params();
            }
            Err(_) => break,
        }
    }
    current
}

/// Square crop of the input image, resampled to `side × side` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropFrame {
    bbox: BBox,
    side: f64,
}

impl CropFrame {
    pub fn new(bbox: BBox, side: f64) -> Result<Self> {
        let (w, h) = (bbox.width(), bbox.height());
        if (w - h).abs() > 1e-9 * w.max(h) {
            return Err(Error::InvalidBox(format!("crop must be square, got {w}×{h}")));
        }
        if !(side > 0.0) {
            return Err(Error::InvalidConfig(format!("crop side must be positive, got {side}")));
        }
        Ok(Self { bbox, side })
    }

    /// Square crop sharing the detection's center, sized by its largest dimension.
    pub fn around(detection: &BBox, side: f64) -> Result<Self> {
        Self::new(detection.squared(), side)
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    /// Image pixels per crop pixel, `max(w, h) / side`.
    pub fn scale(&self) -> f64 {
        self.bbox.width() / self.side
    }
}

/// Express an image ellipse in the crop's normalized `[0, 1]²` coordinates.
pub fn normalize_to_crop(e: &Ellipse, frame: &CropFrame) -> Ellipse {
    let s = frame.bbox.width();
    Ellipse::new(
        (e.center() - frame.bbox.min()) / s,
        e.alpha() / s,
        e.beta() / s,
        e.theta(),
    )
    .expect("scaling a valid ellipse keeps it valid")
}

/// Inverse of [`normalize_to_crop`].
pub fn denormalize_from_crop(e: &Ellipse, frame: &CropFrame) -> Ellipse {
    let s = frame.bbox.width();
    Ellipse::new(
        e.center() * s + frame.bbox.min(),
        e.alpha() * s,
        e.beta() * s,
        e.theta(),
    )
    .expect("scaling a valid ellipse keeps it valid")
}
