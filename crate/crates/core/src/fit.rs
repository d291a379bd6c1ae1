//! Least-squares quadratic surrogate `xᵀQx + 2xᵀD (+ c)` of a nonlinear loss.
//!
//! Samples lie on a tensor-product midpoint lattice of the box. The fit is
//! done in box-normalized coordinates, with an intercept, and mapped back;
//! the intercept is reported but is not part of the LQ cost.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{NonlinearLoss, QuadraticCost};

/// Axis-aligned sampling box, one `(lo, hi)` pair per state component.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub bounds: Vec<(f64, f64)>,
}

impl SampleBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidParameter("sample box has no axes".into()));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidParameter(format!("degenerate box axis [{lo}, {hi}]")));
            }
        }
        Ok(Self { bounds })
    }

    /// Demand and supply in [0, 50] MW, price in [25, 75] $/MWh.
    pub fn operating() -> Self {
        Self { bounds: vec![(0.0, 50.0), (0.0, 50.0), (25.0, 75.0)] }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Midpoint lattice with at least `n` points.
    pub fn lattice(&self, n: usize) -> Vec<Vec<f64>> {
        let dim = self.dim();
        let mut per_axis = (n as f64).powf(1.0 / dim as f64).ceil().max(1.0) as usize;
        while per_axis.pow(dim as u32) < n {
            per_axis += 1;
        }
        while per_axis > 1 && (per_axis - 1).pow(dim as u32) >= n {
            per_axis -= 1;
        }
        let total = per_axis.pow(dim as u32);
        (0..total)
            .map(|mut idx| {
                self.bounds
                    .iter()
                    .map(|&(lo, hi)| {
                        let i = idx % per_axis;
                        idx /= per_axis;
                        lo + (i as f64 + 0.5) * (hi - lo) / per_axis as f64
                    })
                    .collect()
            })
            .collect()
    }
}

/// Result of a quadratic fit.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFit {
    /// PSD-projected quadratic weight.
    pub q: DMatrix<f64>,
    /// Quadratic weight before projection.
    pub q_raw: DMatrix<f64>,
    pub d: DVector<f64>,
    pub intercept: f64,
    /// RMS residual of the unprojected fit over the samples.
    pub residual_rms: f64,
    pub n_samples: usize,
}

impl QuadraticFit {
    pub fn into_cost(self, r: f64) -> Result<QuadraticCost> {
        QuadraticCost::new(self.q, self.d, r)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        x.dot(&(&self.q * &x)) + 2.0 * x.dot(&self.d)
    }
}

fn n_coefficients(dim: usize) -> usize {
    dim * (dim + 1) / 2 + dim + 1
}

/// Fits `xᵀQx + 2xᵀD + c` to `f` on the box in the least-squares sense.
pub fn fit_quadratic<F>(f: F, sample_box: &SampleBox, n_samples: usize) -> Result<QuadraticFit>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = sample_box.dim();
    let n_coef = n_coefficients(dim);
    if n_samples < 10 * n_coef {
        return Err(Error::InvalidParameter(format!(
            "need at least {} samples for {n_coef} coefficients, got {n_samples}",
            10 * n_coef
        )));
    }
    fit_on_points(f, sample_box, sample_box.lattice(n_samples))
}

fn fit_on_points<F>(f: F, sample_box: &SampleBox, points: Vec<Vec<f64>>) -> Result<QuadraticFit>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = sample_box.dim();
    let n_coef = n_coefficients(dim);
    let center: Vec<f64> = sample_box.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let half: Vec<f64> = sample_box.bounds.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect();

    // Feature order: z_i z_j (i <= j, off-diagonal doubled), 2 z_i, 1.
    let features = |z: &[f64]| -> Vec<f64> {
        let mut row = Vec::with_capacity(n_coef);
        for i in 0..dim {
            for j in i..dim {
                row.push(if i == j { z[i] * z[i] } else { 2.0 * z[i] * z[j] });
            }
        }
        row.extend(z.iter().map(|v| 2.0 * v));
        row.push(1.0);
        row
    };

    let mut gram = DMatrix::<f64>::zeros(n_coef, n_coef);
    let mut rhs = DVector::<f64>::zeros(n_coef);
    let mut rows = Vec::with_capacity(points.len());
    for x in &points {
        let z: Vec<f64> = x.iter().zip(&center).zip(&half).map(|((x, c), w)| (x - c) / w).collect();
        let phi = DVector::from_vec(features(&z));
        let y = f(x);
        if !y.is_finite() {
            return Err(Error::InvalidParameter(format!("loss is not finite at {x:?}")));
        }
        gram += &phi * phi.transpose();
        rhs += &phi * y;
        rows.push((phi, y));
    }

    let max_diag = gram.diagonal().max();
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient { pivot: 0.0 })?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if min_pivot < 1e-12 * max_diag {
        return Err(Error::RankDeficient { pivot: min_pivot });
    }
    let coef = chol.solve(&rhs);

    let residual_rms =
        (rows.iter().map(|(phi, y)| (phi.dot(&coef) - y).powi(2)).sum::<f64>() / rows.len() as f64).sqrt();

    // Unpack normalized-coordinate weights.
    let mut qz = DMatrix::<f64>::zeros(dim, dim);
    let mut idx = 0;
    for i in 0..dim {
        for j in i..dim {
            qz[(i, j)] = coef[idx];
            qz[(j, i)] = coef[idx];
            idx += 1;
        }
    }
    let dz = DVector::from_iterator(dim, (0..dim).map(|i| coef[idx + i]));
    let cz = coef[n_coef - 1];

    // z = W⁻¹(x - c) with W = diag(half).
    let winv = DVector::from_iterator(dim, half.iter().map(|w| 1.0 / w));
    let c = DVector::from_column_slice(&center);
    let q_raw = DMatrix::from_fn(dim, dim, |i, j| winv[i] * qz[(i, j)] * winv[j]);
    let q_raw = (&q_raw + q_raw.transpose()) * 0.5;
    let d = dz.component_mul(&winv) - &q_raw * &c;
    let intercept = c.dot(&(&q_raw * &c)) - 2.0 * c.dot(&dz.component_mul(&winv)) + cz;

    Ok(QuadraticFit { q: project_psd(&q_raw), q_raw, d, intercept, residual_rms, n_samples: points.len() })
}

/// Fits the nonlinear market loss over a (d, s, p) box.
pub fn fit_quadratic_cost(loss: &NonlinearLoss, sample_box: &SampleBox, n_samples: usize) -> Result<QuadraticFit> {
    loss.validate()?;
    if sample_box.dim() != 3 {
        return Err(Error::Dimension(format!("loss box must be 3-dimensional, got {}", sample_box.dim())));
    }
    fit_quadratic(|x| loss.eval(x[0], x[1], x[2]), sample_box, n_samples)
}

/// Symmetric PSD part: negative eigenvalues clipped to zero.
pub fn project_psd(q: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (q + q.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Reserve `s - d` minimizing the fitted quadratic along `d + s = total`, `p = price`.
pub fn fitted_optimal_reserve(fit: &QuadraticFit, total: f64, price: f64) -> f64 {
    let e = DVector::from_column_slice(&[-0.5, 0.5, 0.0]);
    let xc = DVector::from_column_slice(&[0.5 * total, 0.5 * total, price]);
    let curv = e.dot(&(&fit.q * &e));
    let slope = xc.dot(&(&fit.q * &e)) + fit.d.dot(&e);
    if curv <= 0.0 {
        return f64::NAN;
    }
    -slope / curv
}

/// Blackout coefficient for which the fitted quadratic prefers zero reserve
/// at the operating point `(total / 2, total / 2, price)`. Found by bisection
/// in log space over `[1e-6, 1e3]`.
pub fn calibrate_blackout_coeff(
    loss: &NonlinearLoss,
    sample_box: &SampleBox,
    n_samples: usize,
    total: f64,
    price: f64,
) -> Result<f64> {
    let reserve = |k: f64| -> Result<f64> {
        let fit = fit_quadratic_cost(&NonlinearLoss { c_bo_coeff: k, ..*loss }, sample_box, n_samples)?;
        Ok(fitted_optimal_reserve(&fit, total, price))
    };
    let (mut lo, mut hi) = (1e-6f64.ln(), 1e3f64.ln());
    let (r_lo, r_hi) = (reserve(lo.exp())?, reserve(hi.exp())?);
    if !(r_lo < 0.0 && r_hi > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "zero reserve is not bracketed (reserve {r_lo:.3} .. {r_hi:.3})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = reserve(mid.exp())?;
        if r.is_nan() || r > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
