//! The low-rank influence kernel
//!
//! ```text
//! k(t', t - t', s', s - s', m', m) =
//!     sum_{l, r, q} alpha[l, r, q] psi_l(t') phi_l(t - t') u_r(s') v_r(s - s') g_q(m') h_q(m)
//! ```
//!
//! with hard truncation: `phi_l` vanishes for displacements beyond `tau_max`
//! and `v_r` outside the ball of radius `a_max`. Purely temporal models
//! (`spatial_dim == 0`) carry no spatial nets and use a spatial factor of 1;
//! unmarked models (`mark_rank == 0`) carry no mark nets.
//!
//! The ablation parameterization [`TemporalParam::HistoryTime`] feeds the
//! right temporal nets the absolute time `t` instead of the displacement.

use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::nn::{BasisNet, OutputActivation};
use crate::seed;

/// One event: time, location (unused coordinates are zero) and an optional
/// categorical mark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub s: [f64; 2],
    pub mark: Option<usize>,
}

impl Event {
    pub fn temporal(t: f64) -> Self {
        Self { t, s: [0.0; 2], mark: None }
    }

    pub fn at(t: f64, s: [f64; 2]) -> Self {
        Self { t, s, mark: None }
    }

    pub fn with_mark(mut self, mark: usize) -> Self {
        self.mark = Some(mark);
        self
    }
}

/// Events observed on `[0, horizon] x S`, `S` the box given by `bounds`
/// (one `[lo, hi]` pair per spatial axis; empty for temporal data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub events: Vec<Event>,
    pub horizon: f64,
    pub bounds: Vec<[f64; 2]>,
}

impl EventSequence {
    pub fn new(events: Vec<Event>, horizon: f64, bounds: Vec<[f64; 2]>) -> Result<Self> {
        let seq = Self { events, horizon, bounds };
        seq.validate()?;
        Ok(seq)
    }

    pub fn temporal(times: &[f64], horizon: f64) -> Result<Self> {
        Self::new(times.iter().map(|&t| Event::temporal(t)).collect(), horizon, vec![])
    }

    pub fn spatial_dim(&self) -> usize {
        self.bounds.len()
    }

    /// Lebesgue measure of `S` (1 for temporal data).
    pub fn area(&self) -> f64 {
        self.bounds.iter().map(|b| b[1] - b[0]).product()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn contains_location(&self, s: &[f64; 2]) -> bool {
        self.bounds
            .iter()
            .enumerate()
            .all(|(k, b)| s[k] >= b[0] && s[k] <= b[1])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.bounds.len() > 2 {
            return Err(Error::Domain("only 0, 1 or 2 spatial dimensions are supported".into()));
        }
        for b in &self.bounds {
            if !(b[1] > b[0]) {
                return Err(Error::Domain(format!("empty spatial interval {b:?}")));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.t > prev) {
                return Err(Error::Domain(format!("event times not strictly increasing at {i}")));
            }
            if e.t < 0.0 || e.t > self.horizon {
                return Err(Error::Domain(format!("event {i} at t={} outside [0, T]", e.t)));
            }
            if !self.contains_location(&e.s) {
                return Err(Error::Domain(format!("event {i} location {:?} outside S", e.s)));
            }
            prev = e.t;
        }
        Ok(())
    }

    /// The first `n` events on the same window.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            events: self.events[..n.min(self.events.len())].to_vec(),
            horizon: self.horizon,
            bounds: self.bounds.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalParam {
    /// Right temporal nets take the displacement `t - t'`.
    #[default]
    Displacement,
    /// Right temporal nets take the absolute time `t` (ablation).
    HistoryTime,
}

/// Architecture and initialization of a [`KernelModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub spatial_dim: usize,
    pub temporal_rank: usize,
    pub spatial_rank: usize,
    pub mark_rank: usize,
    pub num_marks: usize,
    pub tau_max: f64,
    pub a_max: f64,
    pub hidden: Vec<usize>,
    pub parameterization: TemporalParam,
    /// Time scale of the data; inputs of the history nets are divided by it,
    /// and it is the table extent for the history-time ablation.
    pub time_extent: f64,
    /// Spatial scale used to normalize history-location inputs.
    pub space_scale: f64,
    pub mu_init: f64,
    pub alpha_init: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            spatial_dim: 0,
            temporal_rank: 1,
            spatial_rank: 1,
            mark_rank: 0,
            num_marks: 0,
            tau_max: 3.0,
            a_max: 1.0,
            hidden: vec![64, 64],
            parameterization: TemporalParam::Displacement,
            time_extent: 100.0,
            space_scale: 1.0,
            mu_init: 1.0,
            alpha_init: 0.05,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.spatial_dim > 2 {
            return bad("spatial_dim must be 0, 1 or 2");
        }
        if self.temporal_rank == 0 {
            return bad("temporal rank must be positive");
        }
        if self.spatial_dim > 0 && self.spatial_rank == 0 {
            return bad("spatial rank must be positive");
        }
        if self.mark_rank > 0 && self.num_marks == 0 {
            return bad("marked models need num_marks > 0");
        }
        if !(self.tau_max > 0.0) || !(self.a_max > 0.0) {
            return bad("truncation radii must be positive");
        }
        if !(self.time_extent > 0.0) || !(self.space_scale > 0.0) {
            return bad("time_extent and space_scale must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        if !(self.mu_init >= 0.0) {
            return bad("mu must be non-negative");
        }
        Ok(())
    }

    pub fn effective_spatial_rank(&self) -> usize {
        if self.spatial_dim == 0 {
            1
        } else {
            self.spatial_rank
        }
    }
}

/// Offsets of each parameter group inside the flat parameter vector
/// `[mu, alpha.., psi_1.., .., phi_1.., u_1.., v_1.., g_1.., h_1..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub alpha: usize,
    pub psi: Vec<usize>,
    pub phi: Vec<usize>,
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    pub g: Vec<usize>,
    pub h: Vec<usize>,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct KernelModel {
    pub spec: ModelSpec,
    pub mu: f64,
    /// Indexed by [`KernelModel::alpha_index`].
    pub alpha: Vec<f64>,
    pub psi: Vec<Basis>,
    pub phi: Vec<Basis>,
    pub u: Vec<Basis>,
    pub v: Vec<Basis>,
    pub g: Vec<Basis>,
    pub h: Vec<Basis>,
}

impl KernelModel {
    /// Builds a model with freshly initialized nets. Net `k` (in flat order)
    /// is seeded with `derive_seed(seed, TAG_INIT + k)`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let l = spec.temporal_rank;
        let r = if spec.spatial_dim == 0 { 0 } else { spec.spatial_rank };
        let q = spec.mark_rank;
        let d = spec.spatial_dim.max(1);
        let dims = |input: usize| -> Vec<usize> {
            let mut v = vec![input];
            v.extend(&spec.hidden);
            v.push(1);
            v
        };
        let mut k = 0u64;
        let mut make = |input: usize, act: OutputActivation, scale: f64| -> Result<Basis> {
            let net = BasisNet::new(&dims(input), act, seed::derive_seed(seed, seed::TAG_INIT + k))?
                .with_input_scale(vec![scale; input])?;
            k += 1;
            Ok(Basis::Net(net))
        };
        let right_scale = match spec.parameterization {
            TemporalParam::Displacement => 1.0 / spec.tau_max,
            TemporalParam::HistoryTime => 1.0 / spec.time_extent,
        };
        let id = OutputActivation::Identity;
        let psi = (0..l).map(|_| make(1, id, 1.0 / spec.time_extent)).collect::<Result<Vec<_>>>()?;
        let phi = (0..l).map(|_| make(1, id, right_scale)).collect::<Result<Vec<_>>>()?;
        let u = (0..r).map(|_| make(d, id, 1.0 / spec.space_scale)).collect::<Result<Vec<_>>>()?;
        let v = (0..r).map(|_| make(d, id, 1.0 / spec.a_max)).collect::<Result<Vec<_>>>()?;
        let sp = OutputActivation::Softplus;
        let g = (0..q).map(|_| make(spec.num_marks, sp, 1.0)).collect::<Result<Vec<_>>>()?;
        let h = (0..q).map(|_| make(spec.num_marks, sp, 1.0)).collect::<Result<Vec<_>>>()?;
        let n_alpha = l * spec.effective_spatial_rank() * q.max(1);
        Ok(Self {
            mu: spec.mu_init,
            alpha: vec![spec.alpha_init; n_alpha],
            spec,
            psi,
            phi,
            u,
            v,
            g,
            h,
        })
    }

    /// Assembles a model from explicit bases. Shapes are checked against
    /// `spec`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        spec: ModelSpec,
        mu: f64,
        alpha: Vec<f64>,
        psi: Vec<Basis>,
        phi: Vec<Basis>,
        u: Vec<Basis>,
        v: Vec<Basis>,
        g: Vec<Basis>,
        h: Vec<Basis>,
    ) -> Result<Self> {
        spec.validate()?;
        let m = Self { spec, mu, alpha, psi, phi, u, v, g, h };
        m.check_shapes()?;
        Ok(m)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let s = &self.spec;
        let l = s.temporal_rank;
        let r = if s.spatial_dim == 0 { 0 } else { s.spatial_rank };
        let q = s.mark_rank;
        let expect = |what: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                Err(Error::Shape(format!("{what}: expected {want}, found {got}")))
            } else {
                Ok(())
            }
        };
        expect("alpha entries", self.alpha.len(), l * s.effective_spatial_rank() * q.max(1))?;
        expect("psi nets", self.psi.len(), l)?;
        expect("phi nets", self.phi.len(), l)?;
        expect("u nets", self.u.len(), r)?;
        expect("v nets", self.v.len(), r)?;
        expect("g nets", self.g.len(), q)?;
        expect("h nets", self.h.len(), q)?;
        let d = s.spatial_dim.max(1);
        for b in self.psi.iter().chain(&self.phi) {
            expect("temporal net input", b.input_dim(), 1)?;
        }
        for b in self.u.iter().chain(&self.v) {
            expect("spatial net input", b.input_dim(), d)?;
        }
        for b in self.g.iter().chain(&self.h) {
            expect("mark net input", b.input_dim(), s.num_marks)?;
        }
        if !(self.mu >= 0.0) {
            return Err(Error::Domain(format!("mu must be non-negative, got {}", self.mu)));
        }
        Ok(())
    }

    pub fn temporal_rank(&self) -> usize {
        self.spec.temporal_rank
    }

    /// Spatial rank as it indexes alpha (1 for temporal models).
    pub fn spatial_rank(&self) -> usize {
        self.spec.effective_spatial_rank()
    }

    /// Mark rank as it indexes alpha (1 for unmarked models).
    pub fn mark_slots(&self) -> usize {
        self.spec.mark_rank.max(1)
    }

    pub fn is_marked(&self) -> bool {
        self.spec.mark_rank > 0
    }

    pub fn is_spatial(&self) -> bool {
        self.spec.spatial_dim > 0
    }

    #[inline]
    pub fn alpha_index(&self, l: usize, r: usize, q: usize) -> usize {
        (l * self.spatial_rank() + r) * self.mark_slots() + q
    }

    fn bases(&self) -> impl Iterator<Item = &Basis> {
        self.psi
            .iter()
            .chain(&self.phi)
            .chain(&self.u)
            .chain(&self.v)
            .chain(&self.g)
            .chain(&self.h)
    }

    fn bases_mut(&mut self) -> impl Iterator<Item = &mut Basis> {
        self.psi
            .iter_mut()
            .chain(self.phi.iter_mut())
            .chain(self.u.iter_mut())
            .chain(self.v.iter_mut())
            .chain(self.g.iter_mut())
            .chain(self.h.iter_mut())
    }

    pub fn layout(&self) -> ParamLayout {
        let mut off = 1 + self.alpha.len();
        let mut take = |bs: &[Basis]| -> Vec<usize> {
            bs.iter()
                .map(|b| {
                    let o = off;
                    off += b.num_params();
                    o
                })
                .collect()
        };
        let psi = take(&self.psi);
        let phi = take(&self.phi);
        let u = take(&self.u);
        let v = take(&self.v);
        let g = take(&self.g);
        let h = take(&self.h);
        ParamLayout { alpha: 1, psi, phi, u, v, g, h, total: off }
    }

    pub fn num_params(&self) -> usize {
        1 + self.alpha.len() + self.bases().map(|b| b.num_params()).sum::<usize>()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.push(self.mu);
        p.extend(&self.alpha);
        for b in self.bases() {
            p.extend(b.params());
        }
        p
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "model has {} parameters, got {}",
                self.num_params(),
                p.len()
            )));
        }
        self.mu = p[0];
        let na = self.alpha.len();
        self.alpha.copy_from_slice(&p[1..1 + na]);
        let mut off = 1 + na;
        for b in self.bases_mut() {
            let n = b.num_params();
            b.params_mut().copy_from_slice(&p[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn reset_eval_counts(&self) {
        for b in self.bases() {
            b.reset_eval_count();
        }
    }

    pub fn mark_input(&self, mark: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.spec.num_marks];
        v[mark] = 1.0;
        v
    }

    pub fn spatial_input<'a>(&self, s: &'a [f64; 2]) -> &'a [f64] {
        &s[..self.spec.spatial_dim.max(1)]
    }

    /// Checks whether a pair is inside the truncation window.
    pub fn in_support(&self, tau: f64, disp: &[f64; 2]) -> bool {
        if tau > self.spec.tau_max {
            return false;
        }
        if self.is_spatial() {
            let d2: f64 = disp[..self.spec.spatial_dim].iter().map(|x| x * x).sum();
            if d2.sqrt() > self.spec.a_max {
                return false;
            }
        }
        true
    }

    fn check_mark(&self, m: Option<usize>) -> Result<usize> {
        match m {
            Some(k) if k < self.spec.num_marks => Ok(k),
            Some(k) => Err(Error::Domain(format!(
                "mark {k} outside {} categories",
                self.spec.num_marks
            ))),
            None => Err(Error::Domain("marked model needs event marks".into())),
        }
    }

    /// Evaluates the kernel with the right temporal nets fed `right_time`.
    #[allow(clippy::too_many_arguments)]
    fn kernel_with_right_input(
        &self,
        t_prev: f64,
        t: f64,
        right_time: f64,
        s_prev: &[f64; 2],
        s: &[f64; 2],
        m_prev: Option<usize>,
        m: Option<usize>,
    ) -> Result<f64> {
        if t < t_prev {
            return Err(Error::Domain(format!("t = {t} precedes t' = {t_prev}")));
        }
        let disp = [s[0] - s_prev[0], s[1] - s_prev[1]];
        if !self.in_support(t - t_prev, &disp) {
            return Ok(0.0);
        }
        let l_n = self.temporal_rank();
        let r_n = self.spatial_rank();
        let q_n = self.mark_slots();
        let a: Vec<f64> = (0..l_n)
            .map(|l| self.psi[l].eval1(t_prev) * self.phi[l].eval1(right_time))
            .collect();
        let b: Vec<f64> = if self.is_spatial() {
            (0..r_n)
                .map(|r| self.u[r].eval(self.spatial_input(s_prev)) * self.v[r].eval(&disp[..self.spec.spatial_dim]))
                .collect()
        } else {
            vec![1.0]
        };
        let c: Vec<f64> = if self.is_marked() {
            let mp = self.mark_input(self.check_mark(m_prev)?);
            let mc = self.mark_input(self.check_mark(m)?);
            (0..q_n).map(|q| self.g[q].eval(&mp) * self.h[q].eval(&mc)).collect()
        } else {
            vec![1.0]
        };
        let mut total = 0.0;
        for (l, al) in a.iter().enumerate() {
            for (r, br) in b.iter().enumerate() {
                for (q, cq) in c.iter().enumerate() {
                    total += self.alpha[self.alpha_index(l, r, q)] * al * br * cq;
                }
            }
        }
        Ok(total)
    }

    /// Influence of an event at `(t_prev, s_prev, m_prev)` on `(t, s, m)`
    /// under the model's own temporal parameterization.
    #[allow(clippy::too_many_arguments)]
    pub fn kernel_eval(
        &self,
        t_prev: f64,
        t: f64,
        s_prev: &[f64; 2],
        s: &[f64; 2],
        m_prev: Option<usize>,
        m: Option<usize>,
    ) -> Result<f64> {
        let right = match self.spec.parameterization {
            TemporalParam::Displacement => t - t_prev,
            TemporalParam::HistoryTime => t,
        };
        self.kernel_with_right_input(t_prev, t, right, s_prev, s, m_prev, m)
    }

    /// Temporal kernel with the right nets evaluated at absolute time `t`,
    /// whatever the model's own parameterization.
    pub fn kernel_eval_history_param(&self, t_prev: f64, t: f64) -> Result<f64> {
        let z = [0.0; 2];
        if self.is_spatial() || self.is_marked() {
            return Err(Error::Domain(
                "history-time evaluation is defined for temporal unmarked models".into(),
            ));
        }
        self.kernel_with_right_input(t_prev, t, t, &z, &z, None, None)
    }

    /// Conditional intensity `mu + sum_{t_i < t} k(...)`, evaluated directly
    /// through the nets. Events at or after `t` are ignored.
    pub fn intensity(&self, history: &[Event], t: f64, s: &[f64; 2], m: Option<usize>) -> Result<f64> {
        let end = history.partition_point(|e| e.t < t);
        let mut lam = self.mu;
        for e in history[..end].iter().rev() {
            if t - e.t > self.spec.tau_max {
                break;
            }
            lam += self.kernel_eval(e.t, t, &e.s, s, e.mark, m)?;
        }
        Ok(lam)
    }
}

/// Anything with a conditional intensity: fitted models and closed-form
/// ground truths.
pub trait Intensity: Sync {
    fn intensity_at(&self, history: &[Event], t: f64, s: &[f64; 2], mark: Option<usize>) -> f64;
}

impl Intensity for KernelModel {
    fn intensity_at(&self, history: &[Event], t: f64, s: &[f64; 2], mark: Option<usize>) -> f64 {
        self.intensity(history, t, s, mark).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn constant_basis(v: f64, dim: usize) -> Basis {
        Basis::fixed("const", dim, move |_| v)
    }

    /// Temporal L=1 model with fixed psi and phi.
    pub(crate) fn temporal_stub<F, G>(mu: f64, alpha: f64, tau_max: f64, psi: F, phi: G) -> KernelModel
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let spec = ModelSpec { tau_max, mu_init: mu, ..Default::default() };
        KernelModel::from_parts(
            spec,
            mu,
            vec![alpha],
            vec![Basis::fixed("psi", 1, move |x| psi(x[0]))],
            vec![Basis::fixed("phi", 1, move |x| phi(x[0]))],
            vec![],
            vec![],
            vec![],
            vec![],
        )
        .unwrap()
    }

    fn small_spec(spatial_dim: usize, l: usize, r: usize) -> ModelSpec {
        ModelSpec {
            spatial_dim,
            temporal_rank: l,
            spatial_rank: r,
            hidden: vec![6, 5],
            tau_max: 2.0,
            a_max: 0.6,
            time_extent: 10.0,
            mu_init: 0.7,
            ..Default::default()
        }
    }

    #[test]
    fn truncation_gives_exact_zero() {
        let m = KernelModel::new(small_spec(0, 2, 1), 1).unwrap();
        let z = [0.0; 2];
        assert_eq!(m.kernel_eval(1.0, 1.0 + 2.0 + 0.1, &z, &z, None, None).unwrap(), 0.0);
        let ms = KernelModel::new(small_spec(2, 1, 2), 1).unwrap();
        let far = [0.5, 0.5];
        assert_eq!(ms.kernel_eval(1.0, 1.5, &z, &far, None, None).unwrap(), 0.0);
        assert_ne!(ms.kernel_eval(1.0, 1.5, &z, &[0.3, 0.2], None, None).unwrap(), 0.0);
    }

    #[test]
    fn factorized_constant_kernel() {
        let m = temporal_stub(0.0, 1.0, 3.0, |_| 1.0, |_| 1.0);
        let z = [0.0; 2];
        assert_eq!(m.kernel_eval(0.5, 1.7, &z, &z, None, None).unwrap(), 1.0);
    }

    #[test]
    fn reversed_times_are_a_domain_error() {
        let m = temporal_stub(0.0, 1.0, 3.0, |_| 1.0, |_| 1.0);
        let z = [0.0; 2];
        assert!(matches!(m.kernel_eval(2.0, 1.0, &z, &z, None, None), Err(Error::Domain(_))));
        assert!(matches!(m.kernel_eval_history_param(2.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn kernel_matches_nested_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = KernelModel::new(small_spec(2, 2, 3), 9).unwrap();
        for _ in 0..20 {
            let tp = rng.gen_range(0.0..8.0);
            let t = tp + rng.gen_range(0.0..2.0);
            let sp: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let s = [sp[0] + rng.gen_range(-0.4..0.4), sp[1] + rng.gen_range(-0.4..0.4)];
            let d = [s[0] - sp[0], s[1] - sp[1]];
            let mut expect = 0.0;
            if (d[0] * d[0] + d[1] * d[1]).sqrt() <= 0.6 {
                for l in 0..2 {
                    for r in 0..3 {
                        expect += m.alpha[l * 3 + r]
                            * m.psi[l].eval1(tp)
                            * m.phi[l].eval1(t - tp)
                            * m.u[r].eval(&sp)
                            * m.v[r].eval(&d);
                    }
                }
            }
            let got = m.kernel_eval(tp, t, &sp, &s, None, None).unwrap();
            assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn history_param_uses_absolute_time() {
        let m = temporal_stub(0.0, 1.0, 50.0, |_| 1.0, |x| x);
        assert!((m.kernel_eval_history_param(1.0, 4.0).unwrap() - 4.0).abs() < 1e-15);
        // The displacement form sees 3.0 for the same pair.
        let z = [0.0; 2];
        assert!((m.kernel_eval(1.0, 4.0, &z, &z, None, None).unwrap() - 3.0).abs() < 1e-15);
        // Fixed displacement, varying t: only the ablation changes.
        let a = m.kernel_eval_history_param(1.0, 2.0).unwrap();
        let b = m.kernel_eval_history_param(5.0, 6.0).unwrap();
        assert_ne!(a, b);
        let nets = KernelModel::new(small_spec(0, 1, 1), 2).unwrap();
        let x = nets.kernel_eval_history_param(0.5, 1.5).unwrap();
        let y = nets.kernel_eval_history_param(3.5, 4.5).unwrap();
        assert_ne!(x, y);
        // loop oracle
        let oracle = nets.alpha[0] * nets.psi[0].eval1(3.5) * nets.phi[0].eval1(4.5);
        assert!((y - oracle).abs() < 1e-14);
    }

    #[test]
    fn linear_stub_net_is_exact() {
        // softplus(x) - softplus(-x) = x, so a width-2 net represents t exactly.
        let mut net = BasisNet::constant(&[1, 2, 1], OutputActivation::Identity, 0.0).unwrap();
        net.params_mut().copy_from_slice(&[1.0, -1.0, 0.0, 0.0, 1.0, -1.0, 0.0]);
        for x in [0.0, 0.5, 3.0, 17.25] {
            assert!((net.eval1(x) - x).abs() < 1e-12);
        }
        let spec = ModelSpec { tau_max: 100.0, ..Default::default() };
        let m = KernelModel::from_parts(
            spec,
            0.0,
            vec![1.0],
            vec![constant_basis(1.0, 1)],
            vec![Basis::Net(net)],
            vec![],
            vec![],
            vec![],
            vec![],
        )
        .unwrap();
        assert!((m.kernel_eval_history_param(2.0, 7.5).unwrap() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn intensity_cases() {
        let m = temporal_stub(0.2, 0.8, 10.0, |_| 1.0, |tau| (-tau).exp());
        let z = [0.0; 2];
        assert_eq!(m.intensity(&[], 3.0, &z, None).unwrap(), 0.2);
        let h = [Event::temporal(1.0)];
        // Right limit at the event: mu + 0.8
        let lam = m.intensity(&h, 1.0 + 1e-12, &z, None).unwrap();
        assert!((lam - 1.0).abs() < 1e-9);
        // strictly earlier events only
        assert_eq!(m.intensity(&h, 1.0, &z, None).unwrap(), 0.2);
    }

    #[test]
    fn intensity_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = KernelModel::new(small_spec(1, 2, 2), 3).unwrap();
        let mut t = 0.0;
        let mut hist = vec![];
        for _ in 0..10 {
            t += rng.gen_range(0.05..0.6);
            hist.push(Event::at(t, [rng.gen_range(0.0..1.0), 0.0]));
        }
        let at = t + 0.3;
        let s = [0.4, 0.0];
        let mut expect = m.mu;
        for e in &hist {
            let tau = at - e.t;
            let d = s[0] - e.s[0];
            if tau <= 2.0 && d.abs() <= 0.6 {
                for l in 0..2 {
                    for r in 0..2 {
                        expect += m.alpha[l * 2 + r]
                            * m.psi[l].eval1(e.t)
                            * m.phi[l].eval1(tau)
                            * m.u[r].eval(&e.s[..1])
                            * m.v[r].eval(&[d]);
                    }
                }
            }
        }
        let got = m.intensity(&hist, at, &s, None).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn truncation_invariance_of_intensity() {
        let m = KernelModel::new(small_spec(1, 1, 1), 4).unwrap();
        let s = [0.5, 0.0];
        let near = vec![Event::at(9.0, [0.45, 0.0]), Event::at(9.5, [0.2, 0.0])];
        let mut with_far = vec![Event::at(1.0, [0.5, 0.0]), Event::at(9.2, [0.95 + 0.2, 0.0])];
        with_far.extend(near.iter().copied());
        with_far.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        let a = m.intensity(&near, 10.0, &s, None).unwrap();
        let b = m.intensity(&with_far, 10.0, &s, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bilinear_in_alpha() {
        let mut m = KernelModel::new(small_spec(0, 2, 1), 4).unwrap();
        let h = [Event::temporal(0.5), Event::temporal(1.1)];
        let z = [0.0; 2];
        let base = m.intensity(&h, 1.5, &z, None).unwrap() - m.mu;
        let a0 = m.alpha[0];
        m.alpha[0] = 3.0 * a0;
        let tripled = m.intensity(&h, 1.5, &z, None).unwrap() - m.mu;
        m.alpha[0] = 0.0;
        let without = m.intensity(&h, 1.5, &z, None).unwrap() - m.mu;
        let part = base - without;
        assert!((tripled - (without + 3.0 * part)).abs() < 1e-12);
    }

    #[test]
    fn flat_params_roundtrip() {
        let mut m = KernelModel::new(small_spec(2, 2, 1), 8).unwrap();
        let p = m.params_flat();
        assert_eq!(p.len(), m.num_params());
        assert_eq!(m.layout().total, p.len());
        let q: Vec<f64> = p.iter().map(|x| x + 1.0).collect();
        m.set_params_flat(&q).unwrap();
        assert_eq!(m.params_flat(), q);
        assert!(m.set_params_flat(&q[1..]).is_err());
    }

    #[test]
    fn sequence_validation() {
        assert!(EventSequence::temporal(&[0.5, 0.4], 1.0).is_err());
        assert!(EventSequence::temporal(&[0.5, 1.4], 1.0).is_err());
        assert!(EventSequence::new(vec![Event::at(0.1, [2.0, 0.0])], 1.0, vec![[0.0, 1.0]]).is_err());
        let s = EventSequence::new(vec![Event::at(0.1, [0.5, 0.5])], 1.0, vec![[0.0, 1.0], [0.0, 2.0]])
            .unwrap();
        assert_eq!(s.area(), 2.0);
    }
}
