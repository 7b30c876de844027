//! The cross-validation observable set, weighted-average estimation, and the
//! Lyapunov-exponent estimate.
//!
//! The standard set is the ten monomials {1, x, y, z, x², xy, xz, y², yz, z²};
//! every second-order polynomial of the state lies in their span. Kernel
//! observables a_p(x) attached to reference measures are available as a
//! variant so the correlation machinery can evaluate them like any other
//! observable.

use std::sync::Arc;

use crate::dynamics::State;
use crate::measures::{MeasureKind, ReferenceMeasure};
use crate::weights::WeightVector;
use crate::{Error, Result};

#[derive(Clone)]
pub enum Observable {
    One,
    X,
    Y,
    Z,
    X2,
    XY,
    XZ,
    Y2,
    YZ,
    Z2,
    /// The kernel observable a_p(x) of a reference measure.
    Kernel {
        measure: Arc<ReferenceMeasure>,
        theta: f64,
    },
    Custom {
        name: String,
        f: Arc<dyn Fn(&State) -> f64 + Send + Sync>,
    },
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Observable({})", self.tag())
    }
}

impl Observable {
    pub fn eval(&self, s: &State) -> f64 {
        match self {
            Observable::One => 1.0,
            Observable::X => s.x,
            Observable::Y => s.y,
            Observable::Z => s.z,
            Observable::X2 => s.x * s.x,
            Observable::XY => s.x * s.y,
            Observable::XZ => s.x * s.z,
            Observable::Y2 => s.y * s.y,
            Observable::YZ => s.y * s.z,
            Observable::Z2 => s.z * s.z,
            Observable::Kernel { measure, theta } => {
                crate::kernel::kernel_observable_theta(measure, s, *theta)
            }
            Observable::Custom { f, .. } => f(s),
        }
    }

    /// Tag used verbatim in the `observable` CSV column.
    pub fn tag(&self) -> String {
        match self {
            Observable::One => "1".into(),
            Observable::X => "x".into(),
            Observable::Y => "y".into(),
            Observable::Z => "z".into(),
            Observable::X2 => "x2".into(),
            Observable::XY => "xy".into(),
            Observable::XZ => "xz".into(),
            Observable::Y2 => "y2".into(),
            Observable::YZ => "yz".into(),
            Observable::Z2 => "z2".into(),
            Observable::Kernel { measure, .. } => format!("kernel({})", measure.id),
            Observable::Custom { name, .. } => name.clone(),
        }
    }

    /// True for the monomials that are odd in x or y; their infinite-time
    /// averages vanish by the (x,y,z) -> (-x,-y,z) symmetry.
    pub fn odd_under_symmetry(&self) -> bool {
        matches!(
            self,
            Observable::X | Observable::Y | Observable::XZ | Observable::YZ
        )
    }

    /// The ten-member cross-validation set, in CSV column order.
    pub fn standard_set() -> Vec<Observable> {
        vec![
            Observable::One,
            Observable::X,
            Observable::Y,
            Observable::Z,
            Observable::X2,
            Observable::XY,
            Observable::XZ,
            Observable::Y2,
            Observable::YZ,
            Observable::Z2,
        ]
    }
}

/// Weighted estimate Σ_p w_p E_p[a] from per-measure averages.
pub fn estimate_average(w: &WeightVector, per_measure: &[f64]) -> Result<f64> {
    if w.w.len() != per_measure.len() {
        return Err(Error::LengthMismatch(format!(
            "{} weights vs {} measure averages",
            w.w.len(),
            per_measure.len()
        )));
    }
    Ok(w.w.iter().zip(per_measure).map(|(wi, ei)| wi * ei).sum())
}

/// Weighted estimate Σ_p w_p λ_p of the leading Lyapunov exponent. Only
/// meaningful when the weights were computed over periodic orbits; snippets
/// carry no Floquet exponent.
pub fn lyapunov_estimate(w: &WeightVector, exponents: &[f64]) -> Result<f64> {
    if w.prov.kind != MeasureKind::Orbit {
        return Err(Error::UnsupportedInput(
            "Lyapunov estimate requires orbit-based weights".into(),
        ));
    }
    if w.w.len() != exponents.len() {
        return Err(Error::LengthMismatch(format!(
            "{} weights vs {} exponents",
            w.w.len(),
            exponents.len()
        )));
    }
    Ok(w.w.iter().zip(exponents).map(|(wi, li)| wi * li).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{Method, Provenance, WeightVector};

    fn wv(w: Vec<f64>, kind: MeasureKind) -> WeightVector {
        WeightVector {
            w,
            method: Method::Uniform,
            prov: Provenance {
                kind,
                p: 0,
                r: 1,
                s: 1,
                n: 0,
                theta: 0.0,
                alpha: 0.0,
            },
            support: None,
            converged: true,
        }
    }

    #[test]
    fn estimate_is_dot_product() {
        let w = wv(vec![0.25; 4], MeasureKind::Orbit);
        assert_eq!(estimate_average(&w, &[3.0, 3.0, 3.0, 3.0]).unwrap(), 3.0);
        let zero = wv(vec![0.0; 3], MeasureKind::Orbit);
        assert_eq!(estimate_average(&zero, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(estimate_average(&zero, &[1.0]).is_err());
    }

    // Expanding the uniform four-atom measure over the three overlapping
    // atom measures gives weights (3/4, 3/4, -1/2); applied to the indicator
    // of the first atom the estimate must return that atom's mass 1/4.
    #[test]
    fn overlapping_atom_expansion() {
        let w = wv(vec![0.75, 0.75, -0.5], MeasureKind::Snippet);
        let e_indicator_atom1 = [1.0 / 3.0, 0.0, 0.0];
        let est = estimate_average(&w, &e_indicator_atom1).unwrap();
        assert!((est - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_estimate_guards_kind() {
        let w = wv(vec![1.0], MeasureKind::Orbit);
        assert_eq!(lyapunov_estimate(&w, &[0.9]).unwrap(), 0.9);
        let ws = wv(vec![1.0], MeasureKind::Snippet);
        assert!(matches!(
            lyapunov_estimate(&ws, &[0.9]),
            Err(Error::UnsupportedInput(_))
        ));
    }

    #[test]
    fn bilinearity() {
        let mut rng = crate::substream(3, "bilinear");
        use rand::Rng;
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (ca, cb): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let mixed: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| ca * x + cb * y)
                .collect();
            let lhs = estimate_average(&wv(mixed, MeasureKind::Orbit), &e).unwrap();
            let rhs = ca * estimate_average(&wv(a.clone(), MeasureKind::Orbit), &e).unwrap()
                + cb * estimate_average(&wv(b.clone(), MeasureKind::Orbit), &e).unwrap();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
