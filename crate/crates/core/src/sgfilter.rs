//! Savitzky-Golay smoothing of 1-D score tracks.
//!
//! Coefficients come from a local least-squares polynomial fit: with the
//! design matrix `A` whose rows are `[1, x, x², …, x^p]` for the window
//! offsets, the smoothed center sample is the `x = 0` row of the hat matrix
//! `A (AᵀA)⁻¹ Aᵀ` applied to the window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::ScoreTrack;

/// Highest supported polynomial order. Above this the normal equations get
/// badly conditioned for the window sizes used here.
pub const MAX_POLY_ORDER: usize = 6;

/// Convolution coefficients for a symmetric window of `2k + 1` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgKernel {
    half_window: usize,
    poly_order: usize,
    coefficients: Vec<f64>,
}

impl SgKernel {
    /// Same as [`derive_kernel`].
    pub fn new(half_window: usize, poly_order: usize) -> Result<Self> {
        derive_kernel(half_window, poly_order)
    }

    pub fn half_window(&self) -> usize {
        self.half_window
    }

    pub fn poly_order(&self) -> usize {
        self.poly_order
    }

    pub fn window_len(&self) -> usize {
        2 * self.half_window + 1
    }

    /// Coefficients ordered from offset `-k` to `+k`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Coefficient for a window offset in `-k..=k`.
    pub fn coefficient(&self, offset: isize) -> f64 {
        let idx = offset + self.half_window as isize;
        self.coefficients[idx as usize]
    }
}

/// Derives the Savitzky-Golay smoothing coefficients for half-window `k`
/// and polynomial order `p`.
///
/// Fails when `p > 2k` (more unknowns than samples) or `p` exceeds
/// [`MAX_POLY_ORDER`].
pub fn derive_kernel(half_window: usize, poly_order: usize) -> Result<SgKernel> {
    if poly_order > 2 * half_window {
        return Err(Error::Kernel(format!(
            "polynomial order {poly_order} exceeds window of {} samples minus one",
            2 * half_window + 1
        )));
    }
    if poly_order > MAX_POLY_ORDER {
        return Err(Error::Kernel(format!(
            "polynomial order {poly_order} above supported maximum {MAX_POLY_ORDER}"
        )));
    }
    if half_window == 0 {
        return Ok(SgKernel {
            half_window,
            poly_order,
            coefficients: vec![1.0],
        });
    }

    let k = half_window as isize;
    let n = poly_order + 1;
    // Abscissae scaled to [-1, 1]; the hat matrix is invariant to column
    // scaling of A, so this only improves conditioning.
    let xs: Vec<f64> = (-k..=k).map(|i| i as f64 / k as f64).collect();

    // Normal matrix G = AᵀA, G[a][b] = Σ x^(a+b).
    let mut power_sums = vec![0.0; 2 * poly_order + 1];
    for &x in &xs {
        let mut pw = 1.0;
        for s in power_sums.iter_mut() {
            *s += pw;
            pw *= x;
        }
    }
    let mut normal = vec![vec![0.0; n]; n];
    for (a, row) in normal.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = power_sums[a + b];
        }
    }
    let mut rhs = vec![0.0; n];
    rhs[0] = 1.0;
    let z = solve_pivoted(normal, rhs)?;

    // c_i = Σ_j x_i^j z_j
    let raw: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let mut pw = 1.0;
            let mut acc = 0.0;
            for zj in &z {
                acc += zj * pw;
                pw *= x;
            }
            acc
        })
        .collect();
    let len = raw.len();
    let coefficients = (0..len)
        .map(|i| 0.5 * (raw[i] + raw[len - 1 - i]))
        .collect();

    Ok(SgKernel {
        half_window,
        poly_order,
        coefficients,
    })
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_pivoted(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap_or(col);
        if m[pivot][col].abs() < 1e-300 {
            return Err(Error::Kernel("singular normal matrix".into()));
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                m[row][c] -= factor * m[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| m[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / m[row][row];
    }
    Ok(x)
}

/// How samples near the ends of a track are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Reflect about the boundary sample: `x[-1] = x[1]`.
    #[default]
    Mirror,
    /// Extend the boundary value: `x[-1] = x[0]`.
    Replicate,
    /// Use the largest symmetric window that fits, re-deriving its kernel.
    Shrink,
}

impl EdgeMode {
    pub fn name(self) -> &'static str {
        match self {
            EdgeMode::Mirror => "mirror",
            EdgeMode::Replicate => "replicate",
            EdgeMode::Shrink => "shrink",
        }
    }
}

impl std::str::FromStr for EdgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mirror" => Ok(EdgeMode::Mirror),
            "replicate" => Ok(EdgeMode::Replicate),
            "shrink" => Ok(EdgeMode::Shrink),
            other => Err(Error::Config(format!("unknown edge mode `{other}`"))),
        }
    }
}

/// Smooths a score track once with `kernel`. The track's squash flag and
/// frame rate carry over.
pub fn smooth(track: &ScoreTrack, kernel: &SgKernel, edge_mode: EdgeMode) -> ScoreTrack {
    track.with_scores(smooth_values(track.scores(), kernel, edge_mode))
}

/// Slice form of [`smooth`].
///
/// Tracks shorter than the kernel window are always smoothed in
/// [`EdgeMode::Shrink`] fashion, whatever `edge_mode` says.
pub fn smooth_values(values: &[f64], kernel: &SgKernel, edge_mode: EdgeMode) -> Vec<f64> {
    let len = values.len();
    let k = kernel.half_window;
    if len == 0 {
        return Vec::new();
    }
    if k == 0 {
        return values.to_vec();
    }
    let mode = if len < kernel.window_len() {
        EdgeMode::Shrink
    } else {
        edge_mode
    };

    let mut out = Vec::with_capacity(len);
    let mut shrunk: Vec<Option<SgKernel>> = vec![None; k];
    for t in 0..len {
        let room = t.min(len - 1 - t);
        if room >= k {
            out.push(dot_centered(values, t, kernel));
            continue;
        }
        let v = match mode {
            EdgeMode::Shrink => {
                let local = shrunk[room].get_or_insert_with(|| {
                    derive_kernel(room, kernel.poly_order.min(2 * room))
                        .expect("shrunk window is always a valid kernel")
                });
                dot_centered(values, t, local)
            }
            EdgeMode::Mirror | EdgeMode::Replicate => {
                let last = (len - 1) as isize;
                (-(k as isize)..=k as isize)
                    .map(|off| {
                        let j = t as isize + off;
                        let j = if j < 0 {
                            if mode == EdgeMode::Mirror {
                                -j
                            } else {
                                0
                            }
                        } else if j > last {
                            if mode == EdgeMode::Mirror {
                                2 * last - j
                            } else {
                                last
                            }
                        } else {
                            j
                        };
                        kernel.coefficient(off) * values[j as usize]
                    })
                    .sum()
            }
        };
        out.push(v);
    }
    out
}

fn dot_centered(values: &[f64], center: usize, kernel: &SgKernel) -> f64 {
    let k = kernel.half_window;
    values[center - k..=center + k]
        .iter()
        .zip(&kernel.coefficients)
        .map(|(v, c)| v * c)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn order_zero_is_the_mean() {
        let k = derive_kernel(2, 0).unwrap();
        assert_close(k.coefficients(), &[0.2; 5], 1e-15);
    }

    #[test]
    fn quadratic_five_point() {
        let k = derive_kernel(2, 2).unwrap();
        let expected: Vec<f64> = [-3.0, 12.0, 17.0, 12.0, -3.0]
            .iter()
            .map(|c| c / 35.0)
            .collect();
        assert_close(k.coefficients(), &expected, 1e-14);
    }

    #[test]
    fn three_point_quadratic_interpolates() {
        let k = derive_kernel(1, 2).unwrap();
        assert_close(k.coefficients(), &[0.0, 1.0, 0.0], 1e-14);
    }

    #[test]
    fn rejects_underdetermined_fit() {
        assert!(derive_kernel(2, 5).is_err());
        assert!(derive_kernel(0, 1).is_err());
        assert!(derive_kernel(10, 7).is_err());
        assert_eq!(derive_kernel(0, 0).unwrap().coefficients(), &[1.0]);
    }

    #[test]
    fn constant_track_is_preserved() {
        let vals = [0.4; 10];
        for mode in [EdgeMode::Mirror, EdgeMode::Replicate, EdgeMode::Shrink] {
            for (k, p) in [(1, 0), (2, 2), (3, 3), (4, 2)] {
                let kernel = derive_kernel(k, p).unwrap();
                assert_close(&smooth_values(&vals, &kernel, mode), &vals, 1e-12);
            }
        }
    }

    #[test]
    fn linear_interior_unchanged() {
        let vals = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let kernel = derive_kernel(2, 2).unwrap();
        let out = smooth_values(&vals, &kernel, EdgeMode::Mirror);
        assert_close(&out[2..4], &vals[2..4], 1e-12);
    }

    #[test]
    fn impulse_center_shrink() {
        let vals = [0.0, 0.0, 1.0, 0.0, 0.0];
        let kernel = derive_kernel(2, 2).unwrap();
        let out = smooth_values(&vals, &kernel, EdgeMode::Shrink);
        assert!((out[2] - 17.0 / 35.0).abs() < 1e-14);
        // outermost samples have no room and pass through
        assert_eq!(out[0], 0.0);
        assert_eq!(out[4], 0.0);
    }

    #[test]
    fn short_track_falls_back_to_shrink() {
        let vals = [1.0, 3.0, 2.0];
        let kernel = derive_kernel(2, 2).unwrap();
        let a = smooth_values(&vals, &kernel, EdgeMode::Mirror);
        let b = smooth_values(&vals, &kernel, EdgeMode::Shrink);
        assert_eq!(a, b);
    }

    #[test]
    fn mirror_and_replicate_edges() {
        let vals = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        let kernel = derive_kernel(1, 0).unwrap();
        let m = smooth_values(&vals, &kernel, EdgeMode::Mirror);
        assert!((m[0] - (2.0 + 1.0 + 2.0) / 3.0).abs() < 1e-12);
        assert!((m[5] - (16.0 + 32.0 + 16.0) / 3.0).abs() < 1e-12);
        let r = smooth_values(&vals, &kernel, EdgeMode::Replicate);
        assert!((r[0] - (1.0 + 1.0 + 2.0) / 3.0).abs() < 1e-12);
        assert!((r[5] - (16.0 + 32.0 + 32.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_track() {
        let kernel = derive_kernel(5, 2).unwrap();
        assert_eq!(smooth_values(&[0.7], &kernel, EdgeMode::Mirror), vec![0.7]);
    }
}
