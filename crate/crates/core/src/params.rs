//! Uniform access to the trainable matrices of a parameter container.
//!
//! Every parameter struct exposes its matrices under stable dotted names
//! ("cell.d1.transform.r", "out_proj", ...). Gradients accumulate in a
//! [`GradMap`] keyed by the same names, which is what the optimizer, the
//! norm clipper, and the finite-difference checker traverse.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use std::collections::BTreeMap;

/// Joins a dotted name prefix with a field path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A container of named trainable matrices. Iteration order is stable for a
/// given configuration, so seeded runs are reproducible.
pub trait ParamSet {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    /// Names and shapes in traversal order.
    fn named_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        self.for_each(&mut |name, m| out.push((name.to_string(), m.shape())));
        out
    }

    fn entry(&self, name: &str, idx: usize) -> Option<f64> {
        let mut found = None;
        self.for_each(&mut |n, m| {
            if n == name {
                found = m.data().get(idx).copied();
            }
        });
        found
    }

    /// Adds `delta` to one coordinate; returns false if the name is unknown.
    fn nudge(&mut self, name: &str, idx: usize, delta: f64) -> bool {
        let mut hit = false;
        self.for_each_mut(&mut |n, m| {
            if n == name && idx < m.data().len() {
                m.data_mut()[idx] += delta;
                hit = true;
            }
        });
        hit
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, m| n += m.data().len());
        n
    }
}

/// Accumulated gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct GradMap {
    entries: BTreeMap<String, Matrix>,
}

impl GradMap {
    pub fn new() -> GradMap {
        GradMap::default()
    }

    /// Accumulates `g` into the named slot, creating it on first use.
    pub fn accumulate(&mut self, name: &str, g: &Matrix) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(m) => m.add_scaled(g, 1.0),
            None => {
                self.entries.insert(name.to_string(), g.clone());
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.entries.iter()
    }

    pub fn matrices(&self) -> Vec<&Matrix> {
        self.entries.values().collect()
    }

    pub fn scale_all(&mut self, k: f64) {
        for m in self.entries.values_mut() {
            *m = m.scale(k);
        }
    }

    /// Merges another gradient map into this one (summing shared names).
    pub fn merge(&mut self, other: &GradMap) -> Result<()> {
        for (name, g) in other.iter() {
            self.accumulate(name, g)?;
        }
        Ok(())
    }
}

/// One SGD step: theta' = theta - lr * g for every named gradient.
///
/// Every gradient name must match a parameter; a stray name means the
/// backward pass and the parameter set disagree and is reported as an error.
pub fn sgd_update<P: ParamSet>(params: &mut P, grads: &GradMap, lr: f64) -> Result<()> {
    let mut consumed = 0usize;
    let mut failure: Option<Error> = None;
    params.for_each_mut(&mut |name, m| {
        if failure.is_some() {
            return;
        }
        if let Some(g) = grads.get(name) {
            consumed += 1;
            if let Err(e) = m.add_scaled(g, -lr) {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if consumed != grads.len() {
        let mut names: Vec<String> = grads.iter().map(|(n, _)| n.clone()).collect();
        params.for_each(&mut |name, _| names.retain(|n| n != name));
        return Err(Error::Data(format!(
            "gradient names do not match parameters: {}",
            names.join(", ")
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Pair {
        a: Matrix,
        b: Matrix,
    }

    impl ParamSet for Pair {
        fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix)) {
            f("a", &self.a);
            f("b", &self.b);
        }
        fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
            f("a", &mut self.a);
            f("b", &mut self.b);
        }
    }

    #[test]
    fn sgd_applies_named_updates() {
        let mut p = Pair {
            a: Matrix::filled(1, 1, 1.0),
            b: Matrix::filled(1, 1, 5.0),
        };
        let mut g = GradMap::new();
        g.accumulate("a", &Matrix::filled(1, 1, 2.0)).unwrap();
        sgd_update(&mut p, &g, 0.1).unwrap();
        assert!((p.a.get(0, 0) - 0.8).abs() < 1e-15);
        assert_eq!(p.b.get(0, 0), 5.0);
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let mut p = Pair {
            a: Matrix::filled(1, 1, 1.0),
            b: Matrix::filled(1, 1, 5.0),
        };
        let before = (p.a.clone(), p.b.clone());
        let mut g = GradMap::new();
        g.accumulate("a", &Matrix::filled(1, 1, 3.0)).unwrap();
        g.accumulate("b", &Matrix::filled(1, 1, -1.0)).unwrap();
        sgd_update(&mut p, &g, 0.0).unwrap();
        assert_eq!(p.a, before.0);
        assert_eq!(p.b, before.1);
    }

    #[test]
    fn sgd_rejects_unknown_gradient_names() {
        let mut p = Pair {
            a: Matrix::zeros(1, 1),
            b: Matrix::zeros(1, 1),
        };
        let mut g = GradMap::new();
        g.accumulate("c", &Matrix::zeros(1, 1)).unwrap();
        let err = sgd_update(&mut p, &g, 0.1).unwrap_err();
        assert!(err.to_string().contains('c'), "{err}");
    }

    #[test]
    fn two_updates_match_one_summed_update() {
        let g1 = Matrix::filled(1, 1, 2.0);
        let g2 = Matrix::filled(1, 1, 3.0);
        let mut p1 = Pair {
            a: Matrix::filled(1, 1, 1.0),
            b: Matrix::zeros(1, 1),
        };
        let mut m = GradMap::new();
        m.accumulate("a", &g1).unwrap();
        sgd_update(&mut p1, &m, 0.5).unwrap();
        let mut m = GradMap::new();
        m.accumulate("a", &g2).unwrap();
        sgd_update(&mut p1, &m, 0.5).unwrap();

        let mut p2 = Pair {
            a: Matrix::filled(1, 1, 1.0),
            b: Matrix::zeros(1, 1),
        };
        let mut m = GradMap::new();
        m.accumulate("a", &g1).unwrap();
        m.accumulate("a", &g2).unwrap();
        sgd_update(&mut p2, &m, 0.5).unwrap();
        assert!((p1.a.get(0, 0) - p2.a.get(0, 0)).abs() < 1e-15);
    }

    #[test]
    fn nudge_and_entry_address_coordinates() {
        let mut p = Pair {
            a: Matrix::zeros(2, 2),
            b: Matrix::zeros(1, 1),
        };
        assert!(p.nudge("a", 3, 0.5));
        assert_eq!(p.entry("a", 3), Some(0.5));
        assert!(!p.nudge("missing", 0, 1.0));
    }
}
