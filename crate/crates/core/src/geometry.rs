//! Similarity kernels over modality embeddings.
//!
//! The central quantity is the area of the triangle whose vertices are three
//! embeddings `x`, `y`, `z` in `R^n`:
//!
//! ```text
//! u = x - y,  v = x - z
//! G = <u,u><v,v> - <u,v>^2
//! A = 1/2 sqrt(G)
//! ```
//!
//! Smaller areas mean better aligned triples. The module also carries the
//! baseline scores used for comparison (cosine, parallelotope volume,
//! multilinear inner product) and their analytic gradients. Everything is
//! computed in `f64`; no kernel assumes unit-norm inputs.

use crate::error::{Error, Result};

/// Below this Gram value a triangle is treated as degenerate and its
/// gradient is the zero subgradient.
pub const DEGENERATE_G: f64 = 1e-18;

/// Stabilization floor applied to `G` during training.
pub const TRAIN_EPS: f64 = 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between `x` and `y`, clamped to `[-1, 1]`.
pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(&[x, y])?;
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Domain("cosine of a zero-norm vector".into()));
    }
    Ok((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0))
}

/// Gradient of `cos(x, y)` with respect to both arguments.
pub fn cosine_grad(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(&[x, y])?;
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Domain("cosine of a zero-norm vector".into()));
    }
    // Unclamped value: the clamp only trims rounding noise.
    let c = dot(x, y) / (nx * ny);
    let inv = 1.0 / (nx * ny);
    let dx = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| yi * inv - c * xi / (nx * nx))
        .collect();
    let dy = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| xi * inv - c * yi / (ny * ny))
        .collect();
    Ok((dx, dy))
}

/// The Gram determinant `G = <u,u><v,v> - <u,v>^2` of the two sides
/// `u = x - y`, `v = x - z`, plus the three inner products it is built from.
///
/// `G` is evaluated as `<u,u> * |v - (<u,v>/<u,u>) u|^2` (projecting the
/// shorter side off the longer one), which is algebraically identical but
/// keeps its relative error near `eps / sin(theta)` instead of
/// `eps / sin^2(theta)` for thin triangles.
pub fn side_gram(x: &[f64], y: &[f64], z: &[f64]) -> SideGram {
    assert!(
        x.len() == y.len() && y.len() == z.len(),
        "triangle vertices must share a dimension ({}, {}, {})",
        x.len(),
        y.len(),
        z.len()
    );
    let mut uu = 0.0;
    let mut vv = 0.0;
    let mut uv = 0.0;
    for i in 0..x.len() {
        let u = x[i] - y[i];
        let v = x[i] - z[i];
        uu += u * u;
        vv += v * v;
        uv += u * v;
    }
    let g = if uu == 0.0 || vv == 0.0 {
        0.0
    } else if uu >= vv {
        let c = uv / uu;
        let mut perp = 0.0;
        for i in 0..x.len() {
            let r = (x[i] - z[i]) - c * (x[i] - y[i]);
            perp += r * r;
        }
        uu * perp
    } else {
        let c = uv / vv;
        let mut perp = 0.0;
        for i in 0..x.len() {
            let r = (x[i] - y[i]) - c * (x[i] - z[i]);
            perp += r * r;
        }
        vv * perp
    };
    SideGram { uu, vv, uv, g }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideGram {
    pub uu: f64,
    pub vv: f64,
    pub uv: f64,
    pub g: f64,
}

/// Area of the triangle `(x, y, z)`; `eps` floors `G` before the root.
///
/// # Panics
/// If the three vertices do not share a dimension.
pub fn triangle_area(x: &[f64], y: &[f64], z: &[f64], eps: f64) -> f64 {
    let g = side_gram(x, y, z).g;
    0.5 * g.max(0.0).max(eps).sqrt()
}

/// Partial derivatives of [`triangle_area`] with respect to each vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleGrad {
    pub d_x: Vec<f64>,
    pub d_y: Vec<f64>,
    pub d_z: Vec<f64>,
    /// Set when `G` fell at or below the degeneracy floor and the zero
    /// subgradient was returned.
    pub degenerate: bool,
}

pub fn triangle_area_grad(x: &[f64], y: &[f64], z: &[f64], eps: f64) -> TriangleGrad {
    let n = x.len();
    let SideGram { uu, vv, uv, g } = side_gram(x, y, z);
    if g <= DEGENERATE_G.max(eps) {
        return TriangleGrad {
            d_x: vec![0.0; n],
            d_y: vec![0.0; n],
            d_z: vec![0.0; n],
            degenerate: true,
        };
    }
    let da_dg = 0.25 / g.sqrt();
    let mut d_x = Vec::with_capacity(n);
    let mut d_y = Vec::with_capacity(n);
    let mut d_z = Vec::with_capacity(n);
    for i in 0..n {
        let u = x[i] - y[i];
        let v = x[i] - z[i];
        let dg_du = 2.0 * vv * u - 2.0 * uv * v;
        let dg_dv = 2.0 * uu * v - 2.0 * uv * u;
        d_y.push(-da_dg * dg_du);
        d_z.push(-da_dg * dg_dv);
        d_x.push(da_dg * (dg_du + dg_dv));
    }
    TriangleGrad {
        d_x,
        d_y,
        d_z,
        degenerate: false,
    }
}

/// Area minus `alpha` times the cosine of the task pair `(x, y)`.
/// Lower is better.
pub fn regularized_score(x: &[f64], y: &[f64], z: &[f64], alpha: f64) -> Result<f64> {
    check_dims(&[x, y, z])?;
    let area = triangle_area(x, y, z, 0.0);
    if alpha == 0.0 {
        return Ok(area);
    }
    Ok(area - alpha * cosine(x, y)?)
}

/// Multilinear inner product `sum_d x_d y_d z_d`.
pub fn symile_mip(x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    assert!(
        x.len() == y.len() && y.len() == z.len(),
        "mip operands must share a dimension"
    );
    x.iter()
        .zip(y)
        .zip(z)
        .map(|((a, b), c)| a * b * c)
        .sum()
}

/// Each component's gradient of the MIP is the elementwise product of the other two.
pub fn symile_mip_grad(x: &[f64], y: &[f64], z: &[f64]) -> [Vec<f64>; 3] {
    assert!(x.len() == y.len() && y.len() == z.len());
    let dx = y.iter().zip(z).map(|(b, c)| b * c).collect();
    let dy = x.iter().zip(z).map(|(a, c)| a * c).collect();
    let dz = x.iter().zip(y).map(|(a, b)| a * b).collect();
    [dx, dy, dz]
}

/// Determinant of a small dense square matrix (row-major) by Gaussian
/// elimination with partial pivoting.
pub fn determinant(mut m: Vec<f64>, k: usize) -> f64 {
    assert_eq!(m.len(), k * k);
    let mut det = 1.0;
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&a, &b| m[a * k + col].abs().total_cmp(&m[b * k + col].abs()))
            .unwrap();
        if m[pivot * k + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for c in 0..k {
                m.swap(pivot * k + c, col * k + c);
            }
            det = -det;
        }
        let p = m[col * k + col];
        det *= p;
        for r in col + 1..k {
            let f = m[r * k + col] / p;
            if f != 0.0 {
                for c in col..k {
                    m[r * k + c] -= f * m[col * k + c];
                }
            }
        }
    }
    det
}

fn gram_matrix(vectors: &[&[f64]]) -> Vec<f64> {
    let k = vectors.len();
    let mut m = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let d = dot(vectors[i], vectors[j]);
            m[i * k + j] = d;
            m[j * k + i] = d;
        }
    }
    m
}

fn check_gram_shape(vectors: &[&[f64]]) -> Result<usize> {
    let k = vectors.len();
    if k < 2 {
        return Err(Error::contract(format!("gram volume needs k >= 2 vectors, got {k}")));
    }
    check_dims(vectors)?;
    let n = vectors[0].len();
    if k > n {
        return Err(Error::contract(format!(
            "gram volume of {k} vectors in dimension {n} (k must be <= n)"
        )));
    }
    Ok(k)
}

/// Volume of the parallelotope spanned by `vectors`: `sqrt(det(G^T G))`.
pub fn gram_volume(vectors: &[&[f64]]) -> Result<f64> {
    let k = check_gram_shape(vectors)?;
    Ok(determinant(gram_matrix(vectors), k).max(0.0).sqrt())
}

/// Gradient of [`gram_volume`] with respect to each vector.
///
/// With `M = G^T G` and `V = sqrt(det M)`, `dV/dg_i = (1/V) sum_j adj(M)_{ji} g_j`.
/// The adjugate form avoids inverting a near-singular `M`. Returns the zero
/// gradient and `true` when `det M` is at or below [`DEGENERATE_G`].
pub fn gram_volume_grad(vectors: &[&[f64]]) -> Result<(Vec<Vec<f64>>, bool)> {
    let k = check_gram_shape(vectors)?;
    let n = vectors[0].len();
    let m = gram_matrix(vectors);
    let det = determinant(m.clone(), k);
    if det <= DEGENERATE_G {
        return Ok((vec![vec![0.0; n]; k], true));
    }
    let vol = det.sqrt();
    let adj = adjugate(&m, k);
    let mut grads = vec![vec![0.0; n]; k];
    for (i, grad) in grads.iter_mut().enumerate() {
        for (j, g) in vectors.iter().enumerate() {
            let w = adj[j * k + i] / vol;
            for (out, gd) in grad.iter_mut().zip(g.iter()) {
                *out += w * gd;
            }
        }
    }
    Ok((grads, false))
}

fn adjugate(m: &[f64], k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let mut adj = vec![0.0; k * k];
    let mut minor = Vec::with_capacity((k - 1) * (k - 1));
    for i in 0..k {
        for j in 0..k {
            minor.clear();
            for r in (0..k).filter(|&r| r != i) {
                for c in (0..k).filter(|&c| c != j) {
                    minor.push(m[r * k + c]);
                }
            }
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            // adj = transpose of the cofactor matrix
            adj[j * k + i] = sign * determinant(minor.clone(), k - 1);
        }
    }
    adj
}

fn check_dims(vectors: &[&[f64]]) -> Result<()> {
    let n = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::contract(format!(
            "dimension mismatch: {n} vs {}",
            bad.len()
        )));
    }
    Ok(())
}

/// Whether a higher or a lower score means a better match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

/// Dense `rows x cols` score table with an explicit orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    pub orientation: Orientation,
    pub row_semantics: String,
}

impl ScoreMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        orientation: Orientation,
        row_semantics: impl Into<String>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("score matrix must be at least 1x1"));
        }
        if values.len() != rows * cols {
            return Err(Error::contract(format!(
                "score matrix {rows}x{cols} given {} values",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite score {bad}")));
        }
        Ok(Self {
            rows,
            cols,
            values,
            orientation,
            row_semantics: row_semantics.into(),
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        orientation: Orientation,
        row_semantics: impl Into<String>,
        mut f: impl FnMut(usize, usize) -> Result<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j)?);
            }
        }
        Self::new(rows, cols, values, orientation, row_semantics)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Score flipped so that larger always means better.
    pub fn preference(&self, i: usize, j: usize) -> f64 {
        match self.orientation {
            Orientation::HigherIsBetter => self.get(i, j),
            Orientation::LowerIsBetter => -self.get(i, j),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
            orientation: self.orientation,
            row_semantics: format!("transpose of: {}", self.row_semantics),
        }
    }

    /// Applies `f` to every entry, keeping shape and orientation.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.values.iter().map(|&v| f(v)).collect(),
            self.orientation,
            self.row_semantics.clone(),
        )
    }
}

/// Which vertex set varies along a row of a batched area matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaDirection {
    /// Row `i` is the data pair `(v_i, a_i)`; column `j` swaps in caption `t_j`.
    VaryText,
    /// Row `i` is caption `t_i`; column `j` swaps in the data pair `(v_j, a_j)`.
    VaryData,
}

/// All `B x B` areas between captions and data pairs of one batch.
pub fn batch_area_matrix(
    texts: &[Vec<f64>],
    videos: &[Vec<f64>],
    audios: &[Vec<f64>],
    direction: AreaDirection,
    eps: f64,
) -> Result<ScoreMatrix> {
    let b = texts.len();
    if videos.len() != b || audios.len() != b {
        return Err(Error::contract(format!(
            "batch length mismatch: {b} texts, {} videos, {} audios",
            videos.len(),
            audios.len()
        )));
    }
    let n = texts.first().map_or(0, Vec::len);
    if texts.iter().chain(videos).chain(audios).any(|e| e.len() != n) {
        return Err(Error::contract("embeddings in a batch must share a dimension"));
    }
    let (semantics, pick): (_, fn(usize, usize) -> (usize, usize)) = match direction {
        AreaDirection::VaryText => ("row i = data (v_i,a_i) vs captions t_j", |i, j| (j, i)),
        AreaDirection::VaryData => ("row i = caption t_i vs data (v_j,a_j)", |i, j| (i, j)),
    };
    ScoreMatrix::from_fn(b, b, Orientation::LowerIsBetter, semantics, |i, j| {
        let (t, d) = pick(i, j);
        Ok(triangle_area(&texts[t], &videos[d], &audios[d], eps))
    })
}
