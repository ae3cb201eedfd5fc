//! Plug-in estimates of modes, near-modes, the supremum and super-level
//! sets read off a fitted epi-spline.
//!
//! A piecewise-affine function attains its maximum over each simplex at a
//! vertex, so all searches run over the vertices of the complex.

use serde::{Deserialize, Serialize};

use crate::epispline::{EpiSpline, TOL_ARGMAX};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginReport {
    pub sup_height: f64,
    pub modes: Vec<Vec<f64>>,
    pub delta: f64,
    pub near_modes: Vec<Vec<f64>>,
    pub alpha: f64,
    pub superlevel: Vec<Vec<f64>>,
    /// Hausdorff distance from `modes` to the reference set, when one was given.
    pub hausdorff_to_reference: Option<f64>,
    /// Whether each reference point lies in the argmax set of the spline
    /// (which, between vertices, is the union of maximizing faces).
    pub reference_in_modes: Option<Vec<bool>>,
}

/// Vertices whose value is within `max(delta, TOL_ARGMAX)` of the supremum.
pub fn near_modes(f: &EpiSpline, delta: f64) -> Vec<Vec<f64>> {
    f.sup_and_argmax(delta.max(TOL_ARGMAX)).1
}

pub fn modes(f: &EpiSpline) -> Vec<Vec<f64>> {
    near_modes(f, 0.0)
}

/// Whether `x` is a global maximizer of `f` up to `TOL_ARGMAX`.
pub fn is_mode(f: &EpiSpline, x: &[f64]) -> Result<bool> {
    let (sup, _) = f.sup_and_argmax(0.0);
    Ok(f.evaluate(x)? >= sup - TOL_ARGMAX)
}

/// Vertices in `{f ≥ alpha}`, with the same tolerance as [`modes`].
pub fn superlevel(f: &EpiSpline, alpha: f64) -> Vec<Vec<f64>> {
    f.superlevel_points(alpha - TOL_ARGMAX)
}

/// Euclidean Hausdorff distance between two finite point sets. Two empty
/// sets are at distance 0; an empty and a nonempty set at `+∞`.
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let directed = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter().map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

pub fn plugin_report(f: &EpiSpline, delta: f64, alpha: f64, reference: Option<&[Vec<f64>]>) -> Result<PluginReport> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidConfig("delta must be finite and >= 0".into()));
    }
    if !alpha.is_finite() {
        return Err(Error::InvalidConfig("alpha must be finite".into()));
    }
    let d = f.dim();
    if let Some(r) = reference {
        if r.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidConfig(format!("reference points must have {d} coordinates")));
        }
    }
    let (sup_height, modes) = f.sup_and_argmax(TOL_ARGMAX);
    let reference_in_modes = match reference {
        Some(r) => Some(r.iter().map(|p| is_mode(f, p)).collect::<Result<Vec<bool>>>()?),
        None => None,
    };
    Ok(PluginReport {
        sup_height,
        hausdorff_to_reference: reference.map(|r| hausdorff(&modes, r)),
        modes,
        delta,
        near_modes: near_modes(f, delta),
        alpha,
        superlevel: superlevel(f, alpha),
        reference_in_modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{kuhn_triangulation, BoxDomain};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn spline(cells: usize, heights: &[f64]) -> EpiSpline {
        let c = Arc::new(kuhn_triangulation(&BoxDomain::unit(2), &[cells, cells]).unwrap());
        let n = c.n_simplices() * 3;
        EpiSpline::new(c, heights.iter().cycle().take(n).cloned().collect()).unwrap()
    }

    fn contains(set: &[Vec<f64>], p: &[f64]) -> bool {
        set.iter().any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-12))
    }

    #[test]
    fn zero_delta_gives_the_modes() {
        let f = spline(3, &[0.1, 0.7, 0.3, 0.7, 0.2]);
        let r = plugin_report(&f, 0.0, 0.5, None).unwrap();
        assert_eq!(r.near_modes, r.modes);
        assert!(r.hausdorff_to_reference.is_none());
        assert!(r.reference_in_modes.is_none());
    }

    #[test]
    fn points_inside_a_maximizing_face_are_modes() {
        let c = Arc::new(kuhn_triangulation(&BoxDomain::unit(2), &[4, 4]).unwrap());
        let f = EpiSpline::interpolate(c, |x| {
            (1.0 - 4.0 * (x[0] - 0.375).abs()).min(1.0 - 4.0 * (x[1] - 0.625).abs()).max(0.0).min(0.5)
        });
        let reference = vec![vec![0.37, 0.6], vec![0.9, 0.1]];
        let r = plugin_report(&f, 0.0, 0.25, Some(&reference)).unwrap();
        assert_eq!(r.reference_in_modes, Some(vec![true, false]));
        assert!(is_mode(&f, &[0.375, 0.625]).unwrap());
    }

    #[test]
    fn superlevel_at_the_supremum_contains_the_modes() {
        let f = spline(4, &[0.3, 1.2, -0.5, 0.9]);
        let r = plugin_report(&f, 0.1, 0.0, None).unwrap();
        let s = superlevel(&f, r.sup_height);
        for m in &r.modes {
            assert!(contains(&s, m));
        }
    }

    #[test]
    fn hausdorff_of_finite_sets() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let b = vec![vec![0.0, 0.0]];
        assert_eq!(hausdorff(&a, &b), 1.0);
        assert_eq!(hausdorff(&b, &a), 1.0);
        assert_eq!(hausdorff(&a, &a), 0.0);
        assert_eq!(hausdorff(&[], &[]), 0.0);
        assert_eq!(hausdorff(&a, &[]), f64::INFINITY);
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = spline(2, &[0.0, 1.0, 2.0]);
        assert!(plugin_report(&f, -1.0, 0.0, None).is_err());
        assert!(plugin_report(&f, 0.0, f64::NAN, None).is_err());
        assert!(plugin_report(&f, 0.0, 0.0, Some(&[vec![0.5]])).is_err());
    }

    /// Lipschitz targets with known maximizers, interpolated on nested meshes.
    fn targets() -> Vec<(Box<dyn Fn(&[f64]) -> f64>, Vec<Vec<f64>>, f64)> {
        let dist = |p: &[f64], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        vec![
            (Box::new(move |p: &[f64]| 1.0 - dist(p, [0.3, 0.7])), vec![vec![0.3, 0.7]], 1.0),
            (
                // symmetric under x -> 1 - x, so both peaks stay tied on every mesh
                Box::new(move |p: &[f64]| 2.0 - dist(p, [0.3, 0.35]).min(dist(p, [0.7, 0.65]))),
                vec![vec![0.3, 0.35], vec![0.7, 0.65]],
                2.0,
            ),
            (Box::new(move |p: &[f64]| (-dist(p, [0.55, 0.4]).powi(2) / 0.1).exp()), vec![vec![0.55, 0.4]], 1.0),
        ]
    }

    #[test]
    fn plugins_converge_along_mesh_refinement() {
        for (t, (f, argmax, sup)) in targets().into_iter().enumerate() {
            let mut prev = (f64::INFINITY, f64::INFINITY);
            let mut last_mesh = 0.0;
            for cells in [4, 8, 16, 32] {
                let c = Arc::new(kuhn_triangulation(&BoxDomain::unit(2), &[cells, cells]).unwrap());
                last_mesh = c.mesh_size();
                let fit = EpiSpline::interpolate(c, |x| f(x));
                let r = plugin_report(&fit, 0.0, 0.0, Some(&argmax)).unwrap();
                let h = r.hausdorff_to_reference.unwrap();
                let gap = (r.sup_height - sup).abs();
                assert!(
                    h <= prev.0 + 1e-12 && gap <= prev.1 + 1e-12,
                    "target {t} at {cells}: {h} {gap} after {prev:?}"
                );
                prev = (h, gap);
            }
            assert!(prev.0 < 2.0 * last_mesh && prev.1 < 2.0 * last_mesh, "target {t}: {prev:?}");
        }
    }

    proptest! {
        #[test]
        fn modes_are_near_modes_and_attain_the_supremum(
            heights in prop::collection::vec(-3.0f64..3.0, 6),
            delta in 0.0f64..2.0,
        ) {
            let f = spline(2, &heights);
            let r = plugin_report(&f, delta, 0.0, None).unwrap();
            for m in &r.modes {
                prop_assert!(contains(&r.near_modes, m));
                prop_assert!((f.evaluate(m).unwrap() - r.sup_height).abs() <= TOL_ARGMAX);
            }
        }
    }
}
