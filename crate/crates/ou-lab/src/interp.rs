//! Tensor-product Catmull-Rom interpolation on a uniform box grid, used to
//! compose semigroup applications when the inner result has no closed form.

use nalgebra::DVector;

use crate::error::Result;
use crate::model::OUModel;
use crate::quad::gauss_expectation;

/// Values of a function tabulated on a uniform grid over an axis-aligned
/// box, with cubic (Catmull-Rom) evaluation. Queries outside the box clamp
/// to the edge stencil.
#[derive(Debug, Clone)]
pub struct GridInterpolant {
    pub lo: Vec<f64>,
    pub step: Vec<f64>,
    pub points_per_axis: usize,
    pub dim: usize,
    values: Vec<f64>,
}

impl GridInterpolant {
    /// Tabulate f on `points_per_axis`^dim nodes over [lo, hi] per axis.
    pub fn build<F: FnMut(&DVector<f64>) -> f64>(
        lo: &[f64],
        hi: &[f64],
        points_per_axis: usize,
        mut f: F,
    ) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(points_per_axis >= 4, "cubic stencil needs 4 points");
        let dim = lo.len();
        let step: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| (b - a) / (points_per_axis - 1) as f64)
            .collect();
        let total = points_per_axis.pow(dim as u32);
        let mut values = vec![0.0; total];
        let mut x = DVector::<f64>::zeros(dim);
        for (flat, slot) in values.iter_mut().enumerate() {
            let mut rest = flat;
            for axis in 0..dim {
                let i = rest % points_per_axis;
                rest /= points_per_axis;
                x[axis] = lo[axis] + step[axis] * i as f64;
            }
            *slot = f(&x);
        }
        GridInterpolant {
            lo: lo.to_vec(),
            step,
            points_per_axis,
            dim,
            values,
        }
    }

    /// Grid over the box of the given radius in per-axis standard deviations
    /// of the invariant measure, centered at the origin.
    pub fn build_on_invariant_box<F: FnMut(&DVector<f64>) -> f64>(
        model: &OUModel,
        radius_std: f64,
        points_per_axis: usize,
        f: F,
    ) -> Self {
        let (lo, hi): (Vec<f64>, Vec<f64>) = (0..model.n)
            .map(|i| {
                let half = radius_std * model.q_inf[(i, i)].sqrt();
                (-half, half)
            })
            .unzip();
        Self::build(&lo, &hi, points_per_axis, f)
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.dim);
        let n = self.points_per_axis;
        // per-axis stencil indices and Catmull-Rom weights
        let mut stencils: Vec<[usize; 4]> = Vec::with_capacity(self.dim);
        let mut weights: Vec<[f64; 4]> = Vec::with_capacity(self.dim);
        for axis in 0..self.dim {
            let pos = (x[axis] - self.lo[axis]) / self.step[axis];
            let cell = (pos.floor() as i64).clamp(0, n as i64 - 2);
            let u = (pos - cell as f64).clamp(0.0, 1.0);
            let idx = |k: i64| (cell + k).clamp(0, n as i64 - 1) as usize;
            stencils.push([idx(-1), idx(0), idx(1), idx(2)]);
            let (u2, u3) = (u * u, u * u * u);
            weights.push([
                0.5 * (-u3 + 2.0 * u2 - u),
                0.5 * (3.0 * u3 - 5.0 * u2 + 2.0),
                0.5 * (-3.0 * u3 + 4.0 * u2 + u),
                0.5 * (u3 - u2),
            ]);
        }
        let mut acc = 0.0;
        let combos = 4usize.pow(self.dim as u32);
        for combo in 0..combos {
            let mut rest = combo;
            let mut w = 1.0;
            let mut flat = 0usize;
            let mut stride = 1usize;
            for axis in 0..self.dim {
                let k = rest % 4;
                rest /= 4;
                w *= weights[axis][k];
                flat += stencils[axis][k] * stride;
                stride *= n;
            }
            acc += w * self.values[flat];
        }
        acc
    }
}

/// H_t applied to a tabulated function by the Kolmogorov formula with a
/// Gauss-Hermite rule on the transition Gaussian.
pub fn semigroup_of_interpolant(
    model: &OUModel,
    t: f64,
    g: &GridInterpolant,
    x: &DVector<f64>,
    order: usize,
) -> Result<f64> {
    let s = model.slice(t)?;
    let mean = &s.exp_tb * x;
    Ok(gauss_expectation(&mean, &s.chol_q_t, order, |u| g.eval(u)))
}
