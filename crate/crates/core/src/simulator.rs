//! Ground-truth kernels and thinning simulation.
//!
//! [`TrueKernel`] holds the six closed-form synthetic kernels. A
//! [`TrueModel`] pairs one with a background rate and exposes the exact
//! intensity and its integrals, so the same object drives simulation and the
//! reference side of every metric.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::dataset::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::kernel::{Event, EventSequence, Intensity};
use crate::par;
use crate::seed::{self, rng_for};

/// Terms kept from the infinite series of `1d-infrank`.
pub const INFRANK_TERMS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrueKernel {
    #[serde(rename = "1d-exp")]
    Exp1d,
    #[serde(rename = "1d-nonstat")]
    NonStat1d,
    #[serde(rename = "1d-infrank")]
    InfRank1d,
    #[serde(rename = "2d-exp")]
    Exp2d,
    #[serde(rename = "3d-inhib")]
    Inhib3d,
    #[serde(rename = "3d-mixture")]
    Mixture3d,
}

impl TrueKernel {
    pub const ALL: [TrueKernel; 6] = [
        TrueKernel::Exp1d,
        TrueKernel::NonStat1d,
        TrueKernel::InfRank1d,
        TrueKernel::Exp2d,
        TrueKernel::Inhib3d,
        TrueKernel::Mixture3d,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            TrueKernel::Exp1d => "1d-exp",
            TrueKernel::NonStat1d => "1d-nonstat",
            TrueKernel::InfRank1d => "1d-infrank",
            TrueKernel::Exp2d => "2d-exp",
            TrueKernel::Inhib3d => "3d-inhib",
            TrueKernel::Mixture3d => "3d-mixture",
        }
    }

    pub fn spatial_dim(&self) -> usize {
        match self {
            TrueKernel::Exp1d | TrueKernel::NonStat1d | TrueKernel::InfRank1d => 0,
            TrueKernel::Exp2d => 1,
            TrueKernel::Inhib3d | TrueKernel::Mixture3d => 2,
        }
    }

    /// Dataset defaults `(mu, T, S)`.
    pub fn defaults(&self) -> (f64, f64, Vec<[f64; 2]>) {
        let square = vec![[-1.0, 1.0], [-1.0, 1.0]];
        match self {
            TrueKernel::Exp1d => (0.2, 50.0, vec![]),
            TrueKernel::NonStat1d => (0.5, 100.0, vec![]),
            TrueKernel::InfRank1d => (0.5, 100.0, vec![]),
            TrueKernel::Exp2d => (0.5, 50.0, vec![[0.0, 1.0]]),
            TrueKernel::Inhib3d => (0.5, 50.0, square),
            TrueKernel::Mixture3d => (0.5, 50.0, square),
        }
    }

    /// Lag beyond which the temporal factor is below 1e-15 of its peak
    /// (exactly zero for the second mixture component).
    pub fn time_support(&self) -> f64 {
        match self {
            TrueKernel::Exp1d => 35.0,
            TrueKernel::NonStat1d | TrueKernel::Inhib3d | TrueKernel::Mixture3d => 18.0,
            TrueKernel::InfRank1d => 11.0,
            TrueKernel::Exp2d => 24.0,
        }
    }

    /// `k(t', t, s', s)` for `t >= t'`.
    pub fn eval(&self, tp: f64, t: f64, sp: &[f64; 2], s: &[f64; 2]) -> f64 {
        let tau = t - tp;
        if tau < 0.0 {
            return 0.0;
        }
        match self {
            TrueKernel::Exp1d => 0.8 * (-tau).exp(),
            TrueKernel::NonStat1d => 0.3 * (0.5 + 0.5 * (0.2 * tp).cos()) * (-2.0 * tau).exp(),
            TrueKernel::InfRank1d => infrank(tp, tau, INFRANK_TERMS),
            TrueKernel::Exp2d => 0.5 * (-1.5 * tau).exp() * (-0.8 * sp[0]).exp(),
            TrueKernel::Inhib3d => {
                let r = ((s[0] - sp[0]).powi(2) + (s[1] - sp[1]).powi(2)).sqrt();
                0.3 * (1.0 - 0.01 * t) * (-2.0 * tau).exp() * inhib_u(sp) * inhib_v(r)
            }
            TrueKernel::Mixture3d => {
                let d = [s[0] - sp[0], s[1] - sp[1]];
                let mut k = 0.0;
                for (r, l, a) in MIX_ALPHA {
                    k += a * mix_u(r, sp) * mix_v(r, &d) * mix_psi(tp) * mix_phi(l, tau);
                }
                k
            }
        }
    }

    /// `int_{t_a}^{t_b} int_S k(t', t, s', s) ds dt` for a source at
    /// `(tp, sp)` and `tp <= t_a <= t_b`.
    pub fn window_integral(&self, tp: f64, sp: &[f64; 2], t_a: f64, t_b: f64, bounds: &[[f64; 2]]) -> f64 {
        let a = (t_a - tp).max(0.0);
        let b = (t_b - tp).max(a);
        let exp_int = |rate: f64| ((-rate * a).exp() - (-rate * b).exp()) / rate;
        match self {
            TrueKernel::Exp1d => 0.8 * exp_int(1.0),
            TrueKernel::NonStat1d => 0.3 * (0.5 + 0.5 * (0.2 * tp).cos()) * exp_int(2.0),
            TrueKernel::InfRank1d => (1..=INFRANK_TERMS)
                .map(|j| {
                    let c = 8.0 * (j * j) as f64 / 25.0;
                    let sc = c.sqrt();
                    let gauss = 0.5 * (PI / c).sqrt() * (erf(sc * b) - erf(sc * a));
                    0.3 * 0.5f64.powi(j as i32) * infrank_amp(tp, j) * gauss
                })
                .sum(),
            TrueKernel::Exp2d => {
                let width: f64 = bounds.iter().map(|b| b[1] - b[0]).product();
                0.5 * (-0.8 * sp[0]).exp() * width * exp_int(1.5)
            }
            TrueKernel::Inhib3d => {
                let c = 1.0 - 0.01 * tp;
                let g = |x: f64| -(c - 0.01 * x) * (-2.0 * x).exp() / 2.0 + 0.0025 * (-2.0 * x).exp();
                0.3 * (g(b) - g(a)) * inhib_u(sp) * inhib_space_integral(sp, bounds)
            }
            TrueKernel::Mixture3d => {
                let mut total = 0.0;
                for (r, l, al) in MIX_ALPHA {
                    let time = match l {
                        0 => exp_int(2.0),
                        _ => {
                            let (ya, yb) = (a.min(3.0), b.min(3.0));
                            (yb * yb / 2.0 - yb) - (ya * ya / 2.0 - ya)
                        }
                    };
                    total += al * mix_u(r, sp) * mix_psi(tp) * time * mix_space_integral(r, sp, bounds);
                }
                total
            }
        }
    }
}

impl fmt::Display for TrueKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TrueKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrueKernel::ALL
            .iter()
            .find(|k| k.id() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown kernel id '{s}'")))
    }
}

fn infrank_amp(tp: f64, j: usize) -> f64 {
    0.3 + (2.0 + (tp / 5.0).powf(0.7) * 1.3 * (j as f64 + 1.0) * PI).cos()
}

/// Series kernel of `1d-infrank` truncated to `terms` terms.
pub fn infrank(tp: f64, tau: f64, terms: usize) -> f64 {
    (1..=terms)
        .map(|j| {
            let jj = (j * j) as f64;
            0.3 * 0.5f64.powi(j as i32) * infrank_amp(tp, j) * (-8.0 * tau * tau * jj / 25.0).exp()
        })
        .sum()
}

const INHIB_SIGMA_U: f64 = 0.5;
const INHIB_SIGMA_V: f64 = 0.15;

fn inhib_u(sp: &[f64; 2]) -> f64 {
    let s2 = INHIB_SIGMA_U * INHIB_SIGMA_U;
    (-(sp[0] * sp[0] + sp[1] * sp[1]) / (2.0 * s2)).exp() / (2.0 * PI * s2)
}

fn inhib_v(r: f64) -> f64 {
    let s2 = INHIB_SIGMA_V * INHIB_SIGMA_V;
    (10.0 * r).cos() / (2.0 * PI * s2 * (1.0 + (10.0 * (r - 0.5)).exp())) * (-r * r / (2.0 * s2)).exp()
}

/// Polar quadrature of the radial `inhib_v` over the box, using the exact
/// in-box angular fraction of every circle.
fn inhib_space_integral(c: &[f64; 2], bounds: &[[f64; 2]]) -> f64 {
    const RADIUS: f64 = 1.5;
    const STEPS: usize = 1500;
    let dr = RADIUS / STEPS as f64;
    (0..STEPS)
        .map(|k| {
            let r = (k as f64 + 0.5) * dr;
            inhib_v(r) * 2.0 * PI * r * circle_fraction_in_box(c, r, bounds) * dr
        })
        .sum()
}

/// Fraction of the circle of radius `r` about `c` lying inside the box.
pub fn circle_fraction_in_box(c: &[f64; 2], r: f64, bounds: &[[f64; 2]]) -> f64 {
    let mut cuts = vec![0.0, 2.0 * PI];
    for (axis, b) in bounds.iter().enumerate().take(2) {
        for edge in b {
            let d = (edge - c[axis]) / r;
            if d.abs() < 1.0 {
                let base = if axis == 0 { d.acos() } else { d.asin() };
                for th in [base, PI - base, -base, 2.0 * PI - base, base + 2.0 * PI] {
                    let th = th.rem_euclid(2.0 * PI);
                    cuts.push(th);
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    let mut inside = 0.0;
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let p = [c[0] + r * mid.cos(), c[1] + r * mid.sin()];
        if bounds.iter().enumerate().all(|(k, b)| p[k] >= b[0] && p[k] <= b[1]) {
            inside += len;
        }
    }
    inside / (2.0 * PI)
}

/// `(r, l, alpha_rl)`
const MIX_ALPHA: [(usize, usize, f64); 4] = [(0, 0, 0.6), (0, 1, 0.15), (1, 0, 0.225), (1, 1, 0.525)];
const MIX_SIGMA: [f64; 2] = [0.2, 0.3];
const MIX_SHIFT: [f64; 2] = [0.0, 0.8];

fn mix_u(r: usize, sp: &[f64; 2]) -> f64 {
    let a = [0.3, 0.4][r];
    1.0 - a * (sp[1] + 1.0)
}

fn mix_v(r: usize, d: &[f64; 2]) -> f64 {
    let s2 = MIX_SIGMA[r] * MIX_SIGMA[r];
    let m = MIX_SHIFT[r];
    let q = (d[0] - m).powi(2) + (d[1] - m).powi(2);
    (-q / (2.0 * s2)).exp() / (2.0 * PI * s2)
}

fn mix_psi(tp: f64) -> f64 {
    1.0 - 0.02 * tp
}

fn mix_phi(l: usize, tau: f64) -> f64 {
    match l {
        0 => (-2.0 * tau).exp(),
        _ if tau < 3.0 => tau - 1.0,
        _ => 0.0,
    }
}

fn normal_mass(lo: f64, hi: f64, mean: f64, sigma: f64) -> f64 {
    let z = sigma * std::f64::consts::SQRT_2;
    0.5 * (erf((hi - mean) / z) - erf((lo - mean) / z))
}

fn mix_space_integral(r: usize, sp: &[f64; 2], bounds: &[[f64; 2]]) -> f64 {
    bounds
        .iter()
        .enumerate()
        .map(|(k, b)| normal_mass(b[0], b[1], sp[k] + MIX_SHIFT[r], MIX_SIGMA[r]))
        .product()
}

/// Closed-form ground truth: background rate plus a [`TrueKernel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub kernel: TrueKernel,
    pub mu: f64,
}

impl TrueModel {
    pub fn new(kernel: TrueKernel, mu: f64) -> Self {
        Self { kernel, mu }
    }

    pub fn intensity(&self, history: &[Event], t: f64, s: &[f64; 2]) -> f64 {
        let end = history.partition_point(|e| e.t < t);
        let support = self.kernel.time_support();
        let mut lam = self.mu;
        for e in history[..end].iter().rev() {
            if t - e.t > support {
                break;
            }
            lam += self.kernel.eval(e.t, t, &e.s, s);
        }
        lam
    }

    /// `int_{t_lo}^{t_hi} int_S lambda` given that `history` holds every
    /// event before `t_hi` and none falls inside `(t_lo, t_hi)`.
    pub fn compensator(&self, history: &[Event], bounds: &[[f64; 2]], t_lo: f64, t_hi: f64) -> f64 {
        let area: f64 = bounds.iter().map(|b| b[1] - b[0]).product();
        let support = self.kernel.time_support();
        let mut total = self.mu * area * (t_hi - t_lo);
        for e in history.iter().filter(|e| e.t <= t_lo && t_lo - e.t <= support) {
            total += self.kernel.window_integral(e.t, &e.s, t_lo, t_hi, bounds);
        }
        total
    }

    /// Exact log-likelihood of a sequence.
    pub fn log_likelihood(&self, seq: &EventSequence) -> f64 {
        let mut ll = 0.0;
        for (i, e) in seq.events.iter().enumerate() {
            ll += self.intensity(&seq.events[..i], e.t, &e.s).ln();
        }
        let mut integral = self.mu * seq.area() * seq.horizon;
        for e in &seq.events {
            integral += self.kernel.window_integral(e.t, &e.s, e.t, seq.horizon, &seq.bounds);
        }
        ll - integral
    }
}

impl Intensity for TrueModel {
    fn intensity_at(&self, history: &[Event], t: f64, s: &[f64; 2], _mark: Option<usize>) -> f64 {
        self.intensity(history, t, s)
    }
}

/// Constant intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homogeneous(pub f64);

impl Intensity for Homogeneous {
    fn intensity_at(&self, _: &[Event], _: f64, _: &[f64; 2], _: Option<usize>) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub horizon: f64,
    pub bounds: Vec<[f64; 2]>,
    /// Dominating rate per unit time and area; sized by a pilot run when
    /// absent.
    pub lambda_bar: Option<f64>,
    pub sequences: usize,
    pub seed: u64,
    pub pilot_sequences: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            bounds: vec![],
            lambda_bar: None,
            sequences: 2000,
            seed: 0,
            pilot_sequences: 20,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.bounds.len() > 2 || self.bounds.iter().any(|b| !(b[1] > b[0])) {
            return Err(Error::Config("bounds must be 0-2 non-empty intervals".into()));
        }
        if let Some(l) = self.lambda_bar {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config("lambda_bar must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Outcome of a thinning run.
#[derive(Debug, Clone)]
pub struct Thinned {
    pub sequence: EventSequence,
    /// Largest intensity seen at a candidate or right after an accepted
    /// event.
    pub sup_seen: f64,
    pub candidates: usize,
}

/// Ogata thinning on `[0, horizon] x S` with dominating rate `lambda_bar`
/// per unit time and area. Errors when the intensity exceeds the bound at a
/// candidate point.
pub fn thinning_sample<I: Intensity + ?Sized, R: Rng>(
    intensity: &I,
    horizon: f64,
    bounds: &[[f64; 2]],
    lambda_bar: f64,
    rng: &mut R,
) -> Result<Thinned> {
    if !(lambda_bar > 0.0) {
        return Err(Error::Config("lambda_bar must be positive".into()));
    }
    let area: f64 = bounds.iter().map(|b| b[1] - b[0]).product();
    let rate = lambda_bar * area;
    let mut events: Vec<Event> = Vec::new();
    let mut t = 0.0;
    let mut sup: f64 = 0.0;
    let mut candidates = 0;
    loop {
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / rate;
        let mut s = [0.0; 2];
        for (k, b) in bounds.iter().enumerate() {
            s[k] = rng.gen_range(b[0]..b[1]);
        }
        let d: f64 = rng.gen();
        if t >= horizon {
            break;
        }
        candidates += 1;
        let lam = intensity.intensity_at(&events, t, &s, None);
        if !lam.is_finite() {
            return Err(Error::Numerical(format!("intensity {lam} at t = {t}")));
        }
        sup = sup.max(lam);
        if lam > lambda_bar {
            return Err(Error::Domination { observed: lam, bound: lambda_bar });
        }
        if d * lambda_bar <= lam && lam > 0.0 {
            events.push(Event::at(t, s));
            let after = intensity.intensity_at(&events, t + 1e-9 * horizon, &s, None);
            if after.is_finite() {
                sup = sup.max(after);
            }
        }
    }
    Ok(Thinned { sequence: EventSequence::new(events, horizon, bounds.to_vec())?, sup_seen: sup, candidates })
}

/// Dominating rate for `intensity`: three times the largest intensity seen
/// over `pilots` pilot sequences, doubling the trial bound whenever a pilot
/// violates it.
pub fn pilot_lambda_bar<I: Intensity + ?Sized>(
    intensity: &I,
    horizon: f64,
    bounds: &[[f64; 2]],
    pilots: usize,
    seed: u64,
    start: f64,
) -> Result<f64> {
    let mut trial = start.max(1e-3);
    for _ in 0..60 {
        let mut sup: f64 = 0.0;
        let mut violated = false;
        for i in 0..pilots.max(1) {
            let mut rng = rng_for(seed, seed::TAG_PILOT + i as u64);
            match thinning_sample(intensity, horizon, bounds, trial, &mut rng) {
                Ok(th) => sup = sup.max(th.sup_seen),
                Err(Error::Domination { .. }) => {
                    violated = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !violated {
            return Ok(3.0 * sup.max(f64::MIN_POSITIVE));
        }
        trial *= 2.0;
    }
    Err(Error::Numerical("could not find a dominating thinning rate".into()))
}

/// `config.sequences` independent sequences; sequence `i` uses the stream
/// `TAG_SIMULATE + i` of `config.seed`.
pub fn generate_dataset(truth: &TrueModel, config: &SimConfig) -> Result<Dataset> {
    config.validate()?;
    if truth.kernel.spatial_dim() != config.bounds.len() {
        return Err(Error::Config(format!(
            "kernel {} needs {} spatial bounds, got {}",
            truth.kernel,
            truth.kernel.spatial_dim(),
            config.bounds.len()
        )));
    }
    let lambda_bar = match config.lambda_bar {
        Some(l) => l,
        None => pilot_lambda_bar(truth, config.horizon, &config.bounds, config.pilot_sequences, config.seed, 2.0 * truth.mu)?,
    };
    let runs = par::map_indexed(config.sequences, |i| {
        let mut rng = rng_for(config.seed, seed::TAG_SIMULATE + i as u64);
        thinning_sample(truth, config.horizon, &config.bounds, lambda_bar, &mut rng)
    });
    let sequences = runs
        .into_iter()
        .map(|r| r.map(|t| t.sequence))
        .collect::<Result<Vec<_>>>()?;
    let mut meta = DatasetMeta::new(config.bounds.len(), config.horizon, config.bounds.clone());
    meta.kernel = Some(truth.kernel.id().to_string());
    meta.mu = Some(truth.mu);
    meta.seed = Some(config.seed);
    meta.lambda_bar = Some(lambda_bar);
    Dataset::new(meta, sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_values_at_zero_lag() {
        let z = [0.0; 2];
        assert!((TrueKernel::Exp1d.eval(0.0, 0.0, &z, &z) - 0.8).abs() < 1e-15);
        assert!((TrueKernel::NonStat1d.eval(0.0, 0.0, &z, &z) - 0.3).abs() < 1e-15);
        assert!((TrueKernel::Exp2d.eval(1.0, 1.0, &z, &z) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn infrank_tail_bound() {
        for &(tp, tau) in &[(0.0, 0.0), (3.0, 0.2), (40.0, 1.0), (90.0, 0.05)] {
            let d = (infrank(tp, tau, 20) - infrank(tp, tau, 40)).abs();
            assert!(d < 0.3 * 1.3 * 0.5f64.powi(19), "{d}");
        }
    }

    #[test]
    fn ids_roundtrip() {
        for k in TrueKernel::ALL {
            assert_eq!(k.id().parse::<TrueKernel>().unwrap(), k);
            let j = serde_json::to_string(&k).unwrap();
            assert_eq!(j, format!("\"{}\"", k.id()));
        }
        assert!("2d-foo".parse::<TrueKernel>().is_err());
    }

    fn numeric_window(k: TrueKernel, tp: f64, sp: [f64; 2], ta: f64, tb: f64, bounds: &[[f64; 2]]) -> f64 {
        let nt = 2000;
        let ns = if bounds.is_empty() { 1 } else { 120 };
        let dt = (tb - ta) / nt as f64;
        let mut total = 0.0;
        for i in 0..nt {
            let t = ta + (i as f64 + 0.5) * dt;
            match bounds.len() {
                0 => total += k.eval(tp, t, &sp, &[0.0; 2]) * dt,
                1 => {
                    let dx = (bounds[0][1] - bounds[0][0]) / ns as f64;
                    for a in 0..ns {
                        let x = bounds[0][0] + (a as f64 + 0.5) * dx;
                        total += k.eval(tp, t, &sp, &[x, 0.0]) * dt * dx;
                    }
                }
                _ => {
                    let dx = (bounds[0][1] - bounds[0][0]) / ns as f64;
                    let dy = (bounds[1][1] - bounds[1][0]) / ns as f64;
                    let space: f64 = (0..ns * ns)
                        .map(|q| {
                            let x = bounds[0][0] + ((q % ns) as f64 + 0.5) * dx;
                            let y = bounds[1][0] + ((q / ns) as f64 + 0.5) * dy;
                            k.eval(tp, t, &sp, &[x, y]) * dx * dy
                        })
                        .sum();
                    total += space * dt;
                }
            }
        }
        total
    }

    #[test]
    fn window_integrals_match_quadrature() {
        let sq = [[-1.0, 1.0], [-1.0, 1.0]];
        let cases: Vec<(TrueKernel, f64, [f64; 2], f64, f64, Vec<[f64; 2]>)> = vec![
            (TrueKernel::Exp1d, 2.0, [0.0; 2], 2.5, 6.0, vec![]),
            (TrueKernel::NonStat1d, 7.0, [0.0; 2], 7.0, 12.0, vec![]),
            (TrueKernel::InfRank1d, 13.0, [0.0; 2], 13.2, 18.0, vec![]),
            (TrueKernel::Exp2d, 1.0, [0.3, 0.0], 1.0, 4.0, vec![[0.0, 1.0]]),
            (TrueKernel::Inhib3d, 1.0, [0.8, -0.5], 1.0, 1.6, sq.to_vec()),
            (TrueKernel::Mixture3d, 3.0, [0.1, -0.2], 3.0, 3.7, sq.to_vec()),
            (TrueKernel::Mixture3d, 3.0, [0.1, -0.2], 4.1, 7.0, sq.to_vec()),
        ];
        for (k, tp, sp, ta, tb, b) in cases {
            let exact = k.window_integral(tp, &sp, ta, tb, &b);
            let num = numeric_window(k, tp, sp, ta, tb, &b);
            assert!((exact - num).abs() < 2e-3 * num.abs().max(1e-2), "{k}: {exact} vs {num}");
        }
    }

    #[test]
    fn circle_fractions() {
        let b = [[0.0, 1.0], [0.0, 1.0]];
        assert!((circle_fraction_in_box(&[0.5, 0.5], 0.2, &b) - 1.0).abs() < 1e-12);
        assert!((circle_fraction_in_box(&[0.0, 0.0], 0.2, &b) - 0.25).abs() < 1e-12);
        assert!((circle_fraction_in_box(&[0.5, 0.0], 0.2, &b) - 0.5).abs() < 1e-12);
        assert_eq!(circle_fraction_in_box(&[5.0, 5.0], 0.2, &b), 0.0);
    }

    #[test]
    fn all_or_nothing_thinning() {
        let mut rng = rng_for(1, 0);
        let th = thinning_sample(&Homogeneous(0.0), 10.0, &[], 1.0, &mut rng).unwrap();
        assert!(th.sequence.is_empty());
        let mut rng = rng_for(1, 0);
        let th = thinning_sample(&Homogeneous(2.0), 10.0, &[], 2.0, &mut rng).unwrap();
        assert_eq!(th.sequence.len(), th.candidates);
        assert!(matches!(
            thinning_sample(&Homogeneous(3.0), 10.0, &[], 2.0, &mut rng_for(1, 0)),
            Err(Error::Domination { .. })
        ));
    }

    #[test]
    fn truth_loglik_of_homogeneous_truth() {
        let m = TrueModel::new(TrueKernel::Exp1d, 0.7);
        let s = EventSequence::temporal(&[], 4.0).unwrap();
        assert!((m.log_likelihood(&s) + 2.8).abs() < 1e-14);
    }

    #[test]
    fn dataset_is_seed_reproducible() {
        let truth = TrueModel::new(TrueKernel::Exp1d, 0.2);
        let cfg = SimConfig { horizon: 20.0, sequences: 5, seed: 4, ..Default::default() };
        let a = generate_dataset(&truth, &cfg).unwrap();
        let b = generate_dataset(&truth, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let empty = generate_dataset(&truth, &SimConfig { sequences: 0, ..cfg.clone() }).unwrap();
        assert!(empty.is_empty());
        assert!(generate_dataset(&truth, &SimConfig { bounds: vec![[0.0, 1.0]], ..cfg }).is_err());
    }
}
