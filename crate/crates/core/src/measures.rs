//! Discrete measures on the grid, the control pushforward `(I, alpha)#m`,
//! control moments and the two metrics (`d*` and `W1`).

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::Grid1D;

/// Mass slack tolerated on sub-probability measures.
pub const MASS_SLACK: f64 = 1e-10;

/// Atoms `(x_i, w_i)` with nonnegative weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

/// Atoms `(x_i, alpha_i, w_i)` of a measure on states times controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMeasure {
    pub x: Vec<f64>,
    pub alpha: Vec<f64>,
    pub w: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(x: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        check_len(w.len(), x.len())?;
        if let Some(v) = x.iter().chain(&w).find(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite entry {v}")));
        }
        Ok(Self { x, w })
    }

    pub fn dirac(x: f64) -> Self {
        Self {
            x: vec![x],
            w: vec![1.0],
        }
    }

    pub fn zero(grid: &Grid1D) -> Self {
        Self {
            x: grid.nodes(),
            w: vec![0.0; grid.n_nodes()],
        }
    }

    /// Node weights `w_i = V_i m_i` of a density sampled at the nodes, so that
    /// the trapezoid integral of `m` equals the total weight.
    pub fn from_density(grid: &Grid1D, density: &[f64]) -> Result<Self> {
        check_len(density.len(), grid.n_nodes())?;
        let w = grid
            .control_volumes()
            .iter()
            .zip(density)
            .map(|(v, m)| v * m)
            .collect();
        Ok(Self { x: grid.nodes(), w })
    }

    /// Inverse of [`DiscreteMeasure::from_density`]; the atoms must sit on the
    /// grid nodes.
    pub fn density(&self, grid: &Grid1D) -> Result<Vec<f64>> {
        check_len(self.w.len(), grid.n_nodes())?;
        Ok(grid
            .control_volumes()
            .iter()
            .zip(&self.w)
            .map(|(v, w)| w / v)
            .collect())
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.w.iter().sum()
    }

    pub fn is_subprobability(&self) -> bool {
        self.w.iter().all(|&w| w >= 0.0) && self.total_mass() <= 1.0 + MASS_SLACK
    }

    /// `|m| / max(1, ||m||_1)`, with the zero measure mapped to itself.
    pub fn restrict_normalize(&self) -> Self {
        let l1: f64 = self.w.iter().map(|w| w.abs()).sum();
        let scale = if l1 > 1.0 { 1.0 / l1 } else { 1.0 };
        Self {
            x: self.x.clone(),
            w: self.w.iter().map(|w| w.abs() * scale).collect(),
        }
    }
}

pub fn total_mass(m: &DiscreteMeasure) -> f64 {
    m.total_mass()
}

pub fn restrict_normalize(m: &DiscreteMeasure) -> DiscreteMeasure {
    m.restrict_normalize()
}

impl ControlMeasure {
    /// `m (x) delta_0`.
    pub fn uncontrolled(m: &DiscreteMeasure) -> Self {
        Self {
            x: m.x.clone(),
            alpha: vec![0.0; m.len()],
            w: m.w.clone(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Raw first moment of the control marginal.
    pub fn first_moment(&self) -> f64 {
        self.alpha.iter().zip(&self.w).map(|(a, w)| a * w).sum()
    }

    pub fn state_marginal(&self) -> DiscreteMeasure {
        DiscreteMeasure {
            x: self.x.clone(),
            w: self.w.clone(),
        }
    }

    pub fn lambda_q(&self, q: f64) -> f64 {
        lambda_q(self, q)
    }
}

/// Push `m` forward along `x -> (x, alpha(x))`, with `alpha` given at the grid
/// nodes. Atoms sitting on a node take the nodal value; other atoms use linear
/// interpolation.
pub fn pushforward(m: &DiscreteMeasure, alpha: &[f64], grid: &Grid1D) -> Result<ControlMeasure> {
    check_len(alpha.len(), grid.n_nodes())?;
    let mut a = Vec::with_capacity(m.len());
    for &x in &m.x {
        let s = (x - grid.x_lo) / grid.h;
        let r = s.round();
        if (s - r).abs() <= 1e-9 && r >= 0.0 && r as usize <= grid.n_cells {
            a.push(alpha[r as usize]);
        } else {
            a.push(grid.interpolate(alpha, x)?);
        }
    }
    Ok(ControlMeasure {
        x: m.x.clone(),
        alpha: a,
        w: m.w.clone(),
    })
}

/// `(sum_i w_i |alpha_i|^q)^(1/q)`, or the largest `|alpha_i|` over atoms of
/// positive weight when `q` is infinite. The zero measure has all moments 0.
pub fn lambda_q(mu: &ControlMeasure, q: f64) -> f64 {
    assert!(q >= 1.0, "moment order must be at least 1, got {q}");
    if q.is_infinite() {
        return mu
            .alpha
            .iter()
            .zip(&mu.w)
            .filter(|(_, &w)| w > 0.0)
            .fold(0.0, |acc, (a, _)| acc.max(a.abs()));
    }
    let s: f64 = mu
        .alpha
        .iter()
        .zip(&mu.w)
        .map(|(a, w)| w * a.abs().powf(q))
        .sum();
    s.max(0.0).powf(1.0 / q)
}

/// Merge two atom lists into sorted positions with signed weight differences.
fn signed_difference(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> (Vec<f64>, Vec<f64>) {
    let mut atoms: Vec<(f64, f64)> = m1
        .x
        .iter()
        .zip(&m1.w)
        .map(|(&x, &w)| (x, w))
        .chain(m2.x.iter().zip(&m2.w).map(|(&x, &w)| (x, -w)))
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut xs: Vec<f64> = Vec::with_capacity(atoms.len());
    let mut ds: Vec<f64> = Vec::with_capacity(atoms.len());
    for (x, d) in atoms {
        match xs.last() {
            Some(&last) if last == x => *ds.last_mut().unwrap() += d,
            _ => {
                xs.push(x);
                ds.push(d);
            }
        }
    }
    (xs, ds)
}

/// Exact 1-D Wasserstein-1 distance, the L1 distance between the two CDFs.
pub fn w1(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<f64> {
    let (a, b) = (m1.total_mass(), m2.total_mass());
    if (a - 1.0).abs() > 1e-8 || (b - 1.0).abs() > 1e-8 {
        return Err(Error::MetricDomain(a, b));
    }
    let (xs, ds) = signed_difference(m1, m2);
    let mut cdf = 0.0;
    let mut total = 0.0;
    for k in 0..xs.len().saturating_sub(1) {
        cdf += ds[k];
        total += cdf.abs() * (xs[k + 1] - xs[k]);
    }
    Ok(total)
}

/// Concave piecewise-linear function on `[-1, 1]` given by its breakpoints.
struct Concave {
    pts: Vec<(f64, f64)>,
}

impl Concave {
    fn eval(&self, phi: f64) -> f64 {
        let p = &self.pts;
        if phi <= p[0].0 {
            return p[0].1;
        }
        for k in 1..p.len() {
            if phi <= p[k].0 {
                let (x0, y0) = p[k - 1];
                let (x1, y1) = p[k];
                if x1 - x0 <= 0.0 {
                    return y1.max(y0);
                }
                return y0 + (y1 - y0) * (phi - x0) / (x1 - x0);
            }
        }
        p[p.len() - 1].1
    }

    /// `phi -> max { V(psi) : |psi - phi| <= gap, |psi| <= 1 }`.
    fn window_max(&self, gap: f64) -> Concave {
        let top = self
            .pts
            .iter()
            .enumerate()
            .fold(0, |best, (k, p)| if p.1 > self.pts[best].1 { k } else { best });
        let mut shifted = Vec::with_capacity(self.pts.len() + 1);
        for (k, &(x, y)) in self.pts.iter().enumerate() {
            if k <= top {
                shifted.push((x - gap, y));
            }
            if k >= top {
                shifted.push((x + gap, y));
            }
        }
        let shifted = Concave { pts: shifted };
        let mut pts = vec![(-1.0, shifted.eval(-1.0))];
        pts.extend(shifted.pts.iter().copied().filter(|p| p.0 > -1.0 && p.0 < 1.0));
        pts.push((1.0, shifted.eval(1.0)));
        Concave { pts }
    }

    fn add_linear(&mut self, slope: f64) {
        for p in &mut self.pts {
            p.1 += slope * p.0;
        }
    }
}

/// Bounded-Lipschitz distance: the supremum of `sum_i phi_i (w1_i - w2_i)`
/// over `|phi| <= 1` with `phi` 1-Lipschitz between consecutive atoms.
///
/// Solved exactly by dynamic programming along the chain of atoms: the value
/// function of the partial sums is concave and piecewise linear in the last
/// `phi`, and each Lipschitz link acts on it as a window maximum.
pub fn dstar(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> f64 {
    let (xs, ds) = signed_difference(m1, m2);
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = Concave {
        pts: vec![(-1.0, -ds[0]), (1.0, ds[0])],
    };
    for k in 1..xs.len() {
        v = v.window_max(xs[k] - xs[k - 1]);
        v.add_linear(ds[k]);
    }
    v.pts.iter().fold(f64::NEG_INFINITY, |a, p| a.max(p.1)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use proptest::prelude::*;

    fn grid(n: usize) -> Grid1D {
        Grid1D::unit(n, Boundary::Neumann).unwrap()
    }

    /// Exhaustive dynamic program over `phi` quantized to multiples of `1/q`.
    fn dstar_quantized(xs: &[f64], ds: &[f64], q: usize) -> f64 {
        let levels: Vec<f64> = (0..=2 * q).map(|j| j as f64 / q as f64 - 1.0).collect();
        let mut best: Vec<f64> = levels.iter().map(|l| l * ds[0]).collect();
        for k in 1..xs.len() {
            let gap = xs[k] - xs[k - 1] + 1e-12;
            best = levels
                .iter()
                .map(|&l| {
                    let reach = levels
                        .iter()
                        .zip(&best)
                        .filter(|(&p, _)| (p - l).abs() <= gap)
                        .fold(f64::NEG_INFINITY, |a, (_, &b)| a.max(b));
                    reach + l * ds[k]
                })
                .collect();
        }
        best.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn pushforward_examples() {
        let g = grid(10);
        let m = DiscreteMeasure::from_density(&g, &vec![1.0; 11]).unwrap();
        let mu = pushforward(&m, &vec![0.0; 11], &g).unwrap();
        assert!(mu.alpha.iter().all(|&a| a == 0.0));
        assert_eq!(mu.total_mass(), m.total_mass());

        let d = DiscreteMeasure::dirac(0.5);
        let alpha = g.sample(|x| -4.0 * x);
        let mu = pushforward(&d, &alpha, &g).unwrap();
        assert_eq!((mu.x[0], mu.alpha[0], mu.w[0]), (0.5, -2.0, 1.0));
    }

    #[test]
    fn moment_examples() {
        let one = ControlMeasure {
            x: vec![0.3],
            alpha: vec![-2.0],
            w: vec![1.0],
        };
        for q in [1.0, 2.0, 3.5, f64::INFINITY] {
            assert!((lambda_q(&one, q) - 2.0).abs() < 1e-14);
        }
        let two = ControlMeasure {
            x: vec![0.1, 0.9],
            alpha: vec![0.0, 2.0],
            w: vec![0.5, 0.5],
        };
        assert!((lambda_q(&two, 2.0) - 2f64.sqrt()).abs() < 1e-14);
        let empty = ControlMeasure {
            x: vec![0.1],
            alpha: vec![5.0],
            w: vec![0.0],
        };
        assert_eq!(lambda_q(&empty, 2.0), 0.0);
        assert_eq!(lambda_q(&empty, f64::INFINITY), 0.0);
    }

    #[test]
    fn w1_examples() {
        let a = DiscreteMeasure::dirac(0.2);
        let b = DiscreteMeasure::dirac(0.7);
        assert!((w1(&a, &b).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(w1(&a, &a).unwrap(), 0.0);
        let g = grid(100);
        let u = DiscreteMeasure::from_density(&g, &vec![1.0; 101]).unwrap();
        assert!((w1(&u, &DiscreteMeasure::dirac(0.5)).unwrap() - 0.25).abs() < g.h);
        let half = DiscreteMeasure::new(vec![0.5], vec![0.5]).unwrap();
        assert!(matches!(w1(&a, &half), Err(Error::MetricDomain(..))));
    }

    #[test]
    fn dstar_of_two_diracs() {
        for (x, y) in [(0.2, 0.7), (0.0, 1.0), (0.4, 0.4), (-1.0, 2.5), (0.0, 1.7)] {
            let d = dstar(&DiscreteMeasure::dirac(x), &DiscreteMeasure::dirac(y));
            let expected = f64::min((x - y).abs(), 2.0);
            assert!((d - expected).abs() < 1e-12, "{x} {y}: {d}");
        }
    }

    #[test]
    fn dstar_matches_quantized_oracle() {
        let g = grid(8);
        let m1 = DiscreteMeasure::new(
            g.nodes(),
            vec![0.3, 0.0, 0.1, 0.0, 0.0, 0.2, 0.0, 0.0, 0.4],
        )
        .unwrap();
        let m2 = DiscreteMeasure::new(
            g.nodes(),
            vec![0.0, 0.25, 0.0, 0.3, 0.1, 0.0, 0.05, 0.3, 0.0],
        )
        .unwrap();
        let (xs, ds) = signed_difference(&m1, &m2);
        // phi levels on multiples of h/4 contain the exact optimizer's lattice
        let oracle = dstar_quantized(&xs, &ds, 32);
        assert!((dstar(&m1, &m2) - oracle).abs() < 1e-12);
    }

    #[test]
    fn dstar_handles_mass_escape() {
        let g = grid(10);
        let full = DiscreteMeasure::from_density(&g, &vec![1.0; 11]).unwrap();
        let zero = DiscreteMeasure::zero(&g);
        assert!((dstar(&full, &zero) - 1.0).abs() < 1e-12);
        assert_eq!(dstar(&full, &full), 0.0);
    }

    #[test]
    fn restrict_normalize_examples() {
        let one = DiscreteMeasure::new(vec![0.0, 1.0], vec![0.25, 0.75]).unwrap();
        assert_eq!(one.restrict_normalize(), one);
        let two = DiscreteMeasure::new(vec![0.0, 1.0], vec![0.5, 1.5]).unwrap();
        let r = two.restrict_normalize();
        assert_eq!(r.w, vec![0.25, 0.75]);
        let zero = DiscreteMeasure::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(zero.restrict_normalize(), zero);
        let signed = DiscreteMeasure::new(vec![0.0, 1.0], vec![-0.2, 0.3]).unwrap();
        assert_eq!(signed.restrict_normalize().w, vec![0.2, 0.3]);
    }

    fn weights(n: usize, total: f64) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_map(move |v| {
            let s: f64 = v.iter().sum::<f64>().max(1e-12);
            v.iter().map(|x| x * total / s).collect()
        })
    }

    proptest! {
        #[test]
        fn metric_axioms(a in weights(12, 1.0), b in weights(12, 1.0), c in weights(12, 1.0)) {
            let g = grid(11);
            let m = |w: &Vec<f64>| DiscreteMeasure::new(g.nodes(), w.clone()).unwrap();
            let (ma, mb, mc) = (m(&a), m(&b), m(&c));
            for d in [
                |x: &DiscreteMeasure, y: &DiscreteMeasure| dstar(x, y),
                |x: &DiscreteMeasure, y: &DiscreteMeasure| w1(x, y).unwrap(),
            ] {
                let ab = d(&ma, &mb);
                prop_assert!(ab >= 0.0);
                prop_assert!((ab - d(&mb, &ma)).abs() < 1e-12);
                prop_assert!(d(&ma, &ma).abs() < 1e-12);
                prop_assert!(ab <= d(&ma, &mc) + d(&mc, &mb) + 1e-9);
            }
            let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            let ds = dstar(&ma, &mb);
            prop_assert!(ds <= 2.0 * l1 + 1e-12);
            prop_assert!(ds <= w1(&ma, &mb).unwrap() + 1e-12);
        }

        #[test]
        fn moments_increase_with_order(w in weights(10, 0.9), alpha in proptest::collection::vec(-3.0f64..3.0, 10)) {
            let mu = ControlMeasure { x: grid(9).nodes(), alpha, w };
            let l1 = lambda_q(&mu, 1.0);
            let l2 = lambda_q(&mu, 2.0);
            let li = lambda_q(&mu, f64::INFINITY);
            prop_assert!(l1 <= l2 + 1e-12 && l2 <= li + 1e-12);
        }

        #[test]
        fn sup_moment_is_max_over_support(w in weights(10, 1.0), alpha in proptest::collection::vec(-3.0f64..3.0, 10)) {
            let g = grid(9);
            let m = DiscreteMeasure::new(g.nodes(), w.clone()).unwrap();
            let mu = pushforward(&m, &alpha, &g).unwrap();
            let expected = alpha.iter().zip(&w).filter(|(_, &w)| w > 0.0).fold(0.0f64, |a, (x, _)| a.max(x.abs()));
            prop_assert_eq!(lambda_q(&mu, f64::INFINITY), expected);
        }
    }
}
