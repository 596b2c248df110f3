//! Computation grids: the uniform time grid on which the right temporal
//! nets are tabulated, the ball grid on which the right spatial nets are
//! tabulated, and the per-sequence barrier grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::EventSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Nodes of the time table on `[0, tau_max]`.
    pub time_points: usize,
    /// Target number of spatial nodes inside the truncation ball.
    pub space_points: usize,
    /// Barrier nodes along `[0, T]` of each sequence.
    pub barrier_time_points: usize,
    /// Barrier nodes per spatial axis of `S`.
    pub barrier_space_per_axis: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            time_points: 50,
            space_points: 1500,
            barrier_time_points: 50,
            barrier_space_per_axis: 15,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.time_points < 2 {
            return Err(Error::Config("time grid needs at least 2 points".into()));
        }
        if self.space_points == 0 || self.barrier_time_points == 0 || self.barrier_space_per_axis == 0 {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform grid `0, step, .., (len - 1) * step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub step: f64,
    pub len: usize,
    extent: f64,
}

impl TimeGrid {
    pub fn new(extent: f64, len: usize) -> Result<Self> {
        if len < 2 || !(extent > 0.0) {
            return Err(Error::Config(format!("bad time grid: extent {extent}, {len} points")));
        }
        Ok(Self { step: extent / (len - 1) as f64, len, extent })
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.len {
            self.extent()
        } else {
            k as f64 * self.step
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.node(k)).collect()
    }

    /// Left node index and weight of the right node for `x` in
    /// `[0, extent]`; `x` is clamped into the grid.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let pos = (x / self.step).max(0.0);
        let last = self.len - 2;
        let i = (pos.floor() as usize).min(last);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        (i, frac)
    }

    /// Linear interpolation that vanishes beyond the extent (the value at the
    /// extent itself is the last node's).
    #[inline]
    pub fn interp_truncated(&self, values: &[f64], x: f64) -> f64 {
        if x > self.extent() {
            return 0.0;
        }
        let (i, w) = self.locate(x);
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    /// Adjoint of [`TimeGrid::interp_truncated`] with respect to the table.
    #[inline]
    pub fn interp_truncated_adjoint(&self, adj: f64, x: f64, out: &mut [f64]) {
        if x > self.extent() {
            return;
        }
        let (i, w) = self.locate(x);
        out[i] += adj * (1.0 - w);
        out[i + 1] += adj * w;
    }

    /// Linear interpolation held constant beyond the extent.
    #[inline]
    pub fn interp_clamped(&self, values: &[f64], x: f64) -> f64 {
        if x >= self.extent() {
            return values[self.len - 1];
        }
        let (i, w) = self.locate(x);
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    #[inline]
    pub fn interp_clamped_adjoint(&self, adj: f64, x: f64, out: &mut [f64]) {
        if x >= self.extent() {
            out[self.len - 1] += adj;
            return;
        }
        let (i, w) = self.locate(x);
        out[i] += adj * (1.0 - w);
        out[i + 1] += adj * w;
    }
}

/// `F[0] = 0`, `F[k] = F[k-1] + step * (f[k-1] + f[k]) / 2`.
pub fn cumulative_trapezoid(values: &[f64], step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * step * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Adds the adjoint of [`cumulative_trapezoid`] into `adj_values`.
pub fn cumulative_trapezoid_adjoint(adj_cum: &[f64], step: f64, adj_values: &mut [f64]) {
    let n = adj_cum.len();
    // suffix[k] = sum_{j >= k} adj_cum[j]
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + adj_cum[k];
    }
    for j in 0..n {
        let right = if j >= 1 { suffix[j] } else { 0.0 };
        let left = if j + 1 < n { suffix[j + 1] } else { 0.0 };
        adj_values[j] += 0.5 * step * (right + left);
    }
}

/// Cell-centred uniform grid over the bounding box of `B(0, radius)`,
/// restricted to the ball. Each node carries weight `cell` (length in 1-D,
/// area in 2-D).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    pub dim: usize,
    pub radius: f64,
    pub nodes: Vec<[f64; 2]>,
    pub cell: f64,
}

impl SpaceGrid {
    /// Picks the per-axis resolution so that roughly `target` nodes fall in
    /// the ball.
    pub fn ball(dim: usize, radius: f64, target: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Config(format!("spatial grid dimension {dim}")));
        }
        let per_axis = match dim {
            1 => target.max(1),
            _ => ((4.0 * target as f64 / std::f64::consts::PI).sqrt().ceil() as usize).max(1),
        };
        let h = 2.0 * radius / per_axis as f64;
        let coord = |k: usize| -radius + (k as f64 + 0.5) * h;
        let mut nodes = Vec::new();
        if dim == 1 {
            nodes.extend((0..per_axis).map(|k| [coord(k), 0.0]));
        } else {
            for a in 0..per_axis {
                for b in 0..per_axis {
                    let p = [coord(a), coord(b)];
                    if (p[0] * p[0] + p[1] * p[1]).sqrt() <= radius {
                        nodes.push(p);
                    }
                }
            }
        }
        Ok(Self { dim, radius, nodes, cell: h.powi(dim as i32) })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Flattened node coordinates as network inputs.
    pub fn inputs(&self) -> Vec<f64> {
        self.nodes.iter().flat_map(|p| p[..self.dim].iter().copied()).collect()
    }
}

/// Barrier grid of one sequence: `barrier_time_points` times evenly spaced
/// on `[0, T]` (endpoints included) crossed with a cell-centred grid of
/// `barrier_space_per_axis` points per axis of `S`.
pub fn barrier_grid(seq: &EventSequence, spec: &GridSpec) -> (Vec<f64>, Vec<[f64; 2]>) {
    let nt = spec.barrier_time_points;
    let times = if nt == 1 {
        vec![0.5 * seq.horizon]
    } else {
        (0..nt)
            .map(|k| {
                if k + 1 == nt {
                    seq.horizon
                } else {
                    seq.horizon * k as f64 / (nt - 1) as f64
                }
            })
            .collect()
    };
    let ns = spec.barrier_space_per_axis;
    let axis = |b: [f64; 2]| -> Vec<f64> {
        let h = (b[1] - b[0]) / ns as f64;
        (0..ns).map(|k| b[0] + (k as f64 + 0.5) * h).collect()
    };
    let locs = match seq.bounds.len() {
        0 => vec![[0.0; 2]],
        1 => axis(seq.bounds[0]).into_iter().map(|x| [x, 0.0]).collect(),
        _ => {
            let xs = axis(seq.bounds[0]);
            let ys = axis(seq.bounds[1]);
            xs.iter().flat_map(|&x| ys.iter().map(move |&y| [x, y])).collect()
        }
    };
    (times, locs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_nodes_and_spacing() {
        let g = TimeGrid::new(3.0, 50).unwrap();
        assert!((g.step - 3.0 / 49.0).abs() < 1e-15);
        assert_eq!(g.node(49), 3.0);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::new(3.0, 1).is_err());
    }

    #[test]
    fn interpolation_on_and_between_nodes() {
        let g = TimeGrid::new(1.0, 5).unwrap();
        let v = [1.0, 3.0, -2.0, 0.5, 4.0];
        for k in 0..5 {
            assert_eq!(g.interp_truncated(&v, g.node(k)), v[k]);
        }
        let mid = 0.5 * (g.node(1) + g.node(2));
        assert!((g.interp_truncated(&v, mid) - 0.5).abs() < 1e-15);
        assert_eq!(g.interp_truncated(&v, 1.0), 4.0);
        assert_eq!(g.interp_truncated(&v, 1.0 + 1e-12), 0.0);
        assert_eq!(g.interp_clamped(&v, 7.0), 4.0);
    }

    #[test]
    fn cumulative_of_constant_is_abscissa() {
        let g = TimeGrid::new(2.0, 11).unwrap();
        let f = cumulative_trapezoid(&[1.0; 11], g.step);
        for (k, fk) in f.iter().enumerate() {
            assert!((fk - g.node(k)).abs() < 1e-14);
        }
    }

    #[test]
    fn cumulative_of_exponential() {
        let tau_max = 3.0;
        let g = TimeGrid::new(tau_max, 50).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|t| (-2.0 * t).exp()).collect();
        let f = cumulative_trapezoid(&vals, g.step);
        let exact = (1.0 - (-2.0 * tau_max).exp()) / 2.0;
        assert!((f[49] - exact).abs() < 1e-3);
    }

    #[test]
    fn trapezoid_adjoint_matches_transpose() {
        let n = 7;
        let step = 0.3;
        let adj: Vec<f64> = (0..n).map(|k| (k as f64 * 0.7).sin()).collect();
        let mut got = vec![0.0; n];
        cumulative_trapezoid_adjoint(&adj, step, &mut got);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = cumulative_trapezoid(&e, step);
            let want: f64 = col.iter().zip(&adj).map(|(a, b)| a * b).sum();
            assert!((got[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn ball_grid_sizes() {
        let g2 = SpaceGrid::ball(2, 1.0, 1500).unwrap();
        assert!(g2.len() >= 1400 && g2.len() <= 1650, "{}", g2.len());
        let area = g2.cell * g2.len() as f64;
        assert!((area - std::f64::consts::PI).abs() < 0.03 * std::f64::consts::PI);
        let g1 = SpaceGrid::ball(1, 0.5, 100).unwrap();
        assert_eq!(g1.len(), 100);
        assert!((g1.cell * 100.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn barrier_grid_shapes() {
        let seq = EventSequence::new(vec![], 10.0, vec![[0.0, 1.0], [-1.0, 1.0]]).unwrap();
        let (t, s) = barrier_grid(&seq, &GridSpec::default());
        assert_eq!(t.len(), 50);
        assert_eq!(s.len(), 225);
        assert_eq!(t[49], 10.0);
        let tseq = EventSequence::temporal(&[], 5.0).unwrap();
        let (_, s0) = barrier_grid(&tseq, &GridSpec::default());
        assert_eq!(s0.len(), 1);
    }

    proptest! {
        #[test]
        fn interpolation_adjoint_is_exact(x in 0.0f64..1.2, w in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let g = TimeGrid::new(1.0, 6).unwrap();
            let mut adj = vec![0.0; 6];
            g.interp_truncated_adjoint(1.0, x, &mut adj);
            let lin: f64 = adj.iter().zip(&w).map(|(a, b)| a * b).sum();
            prop_assert!((lin - g.interp_truncated(&w, x)).abs() < 1e-12);
            let mut adjc = vec![0.0; 6];
            g.interp_clamped_adjoint(1.0, x, &mut adjc);
            let linc: f64 = adjc.iter().zip(&w).map(|(a, b)| a * b).sum();
            prop_assert!((linc - g.interp_clamped(&w, x)).abs() < 1e-12);
        }
    }
}
