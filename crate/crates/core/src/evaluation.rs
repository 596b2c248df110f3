//! Test log-likelihood, intensity MRE, next-event prediction and kernel rank
//! analysis.
//!
//! Metrics work through [`Predictor`], implemented for fitted models
//! ([`Fitted`]) and for closed-form ground truths, so a truth can be scored
//! exactly like a fitted model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernel::{Event, EventSequence, KernelModel};
use crate::likelihood::{self, build_tables, Tables};
use crate::par;
use crate::simulator::TrueModel;

/// What the metrics need from a model.
pub trait Predictor: Sync {
    /// Intensity summed over marks.
    fn ground_intensity(&self, history: &[Event], t: f64, s: &[f64; 2]) -> f64;
    fn num_marks(&self) -> usize {
        0
    }
    fn mark_intensity(&self, history: &[Event], t: f64, s: &[f64; 2], _mark: usize) -> f64 {
        self.ground_intensity(history, t, s)
    }
    /// `int_{t_lo}^{t_hi} int_S` of the ground intensity with no event in
    /// between.
    fn compensator(&self, history: &[Event], bounds: &[[f64; 2]], t_lo: f64, t_hi: f64) -> Result<f64>;
    /// Lag after which past events no longer contribute.
    fn influence_horizon(&self) -> f64;
    fn log_likelihood(&self, seq: &EventSequence) -> Result<f64>;
}

/// A fitted model with its tables.
pub struct Fitted<'m> {
    pub model: &'m KernelModel,
    pub tables: Tables,
}

impl<'m> Fitted<'m> {
    pub fn new(model: &'m KernelModel, grids: &GridSpec) -> Result<Self> {
        Ok(Self { model, tables: build_tables(model, grids)? })
    }
}

impl Predictor for Fitted<'_> {
    fn ground_intensity(&self, history: &[Event], t: f64, s: &[f64; 2]) -> f64 {
        if self.model.is_marked() {
            (0..self.model.spec.num_marks)
                .map(|m| self.mark_intensity(history, t, s, m))
                .sum()
        } else {
            self.model.intensity(history, t, s, None).unwrap_or(f64::NAN)
        }
    }

    fn num_marks(&self) -> usize {
        if self.model.is_marked() {
            self.model.spec.num_marks
        } else {
            0
        }
    }

    fn mark_intensity(&self, history: &[Event], t: f64, s: &[f64; 2], mark: usize) -> f64 {
        let m = self.model.is_marked().then_some(mark);
        self.model.intensity(history, t, s, m).unwrap_or(f64::NAN)
    }

    fn compensator(&self, history: &[Event], bounds: &[[f64; 2]], t_lo: f64, t_hi: f64) -> Result<f64> {
        likelihood::compensator(self.model, &self.tables, history, bounds, t_lo, t_hi)
    }

    fn influence_horizon(&self) -> f64 {
        self.model.spec.tau_max
    }

    fn log_likelihood(&self, seq: &EventSequence) -> Result<f64> {
        likelihood::log_likelihood(self.model, seq, &self.tables)
    }
}

impl Predictor for TrueModel {
    fn ground_intensity(&self, history: &[Event], t: f64, s: &[f64; 2]) -> f64 {
        self.intensity(history, t, s)
    }

    fn compensator(&self, history: &[Event], bounds: &[[f64; 2]], t_lo: f64, t_hi: f64) -> Result<f64> {
        Ok(TrueModel::compensator(self, history, bounds, t_lo, t_hi))
    }

    fn influence_horizon(&self) -> f64 {
        self.kernel.time_support()
    }

    fn log_likelihood(&self, seq: &EventSequence) -> Result<f64> {
        Ok(TrueModel::log_likelihood(self, seq))
    }
}

/// Per-sequence log-likelihoods, in order.
pub fn sequence_logliks<P: Predictor + ?Sized>(model: &P, seqs: &[EventSequence]) -> Result<Vec<f64>> {
    par::map_slice(seqs, |s| model.log_likelihood(s)).into_iter().collect()
}

/// `sum_seq loglik / sum_seq n_seq`.
pub fn test_loglik_per_event<P: Predictor + ?Sized>(model: &P, seqs: &[EventSequence]) -> Result<f64> {
    let n: usize = seqs.iter().map(|s| s.len()).sum();
    if n == 0 {
        return Err(Error::Domain("test set has no events".into()));
    }
    Ok(sequence_logliks(model, seqs)?.iter().sum::<f64>() / n as f64)
}

/// Cell-centred evaluation grid over `[0, T] x S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalGrid {
    pub time_points: usize,
    pub space_per_axis: usize,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self { time_points: 500, space_per_axis: 20 }
    }
}

impl EvalGrid {
    pub fn points(&self, seq: &EventSequence) -> Vec<(f64, [f64; 2])> {
        let dt = seq.horizon / self.time_points as f64;
        let axis = |b: &[f64; 2]| -> Vec<f64> {
            let h = (b[1] - b[0]) / self.space_per_axis as f64;
            (0..self.space_per_axis).map(|k| b[0] + (k as f64 + 0.5) * h).collect()
        };
        let locs: Vec<[f64; 2]> = match seq.bounds.as_slice() {
            [] => vec![[0.0; 2]],
            [x] => axis(x).into_iter().map(|a| [a, 0.0]).collect(),
            [x, y] => {
                let (xs, ys) = (axis(x), axis(y));
                ys.iter().flat_map(|&b| xs.iter().map(move |&a| [a, b])).collect()
            }
            _ => vec![],
        };
        let mut out = Vec::with_capacity(self.time_points * locs.len());
        for k in 0..self.time_points {
            let t = (k as f64 + 0.5) * dt;
            out.extend(locs.iter().map(|&s| (t, s)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MreResult {
    pub value: f64,
    /// Grid points skipped because the reference intensity was not positive.
    pub excluded: usize,
    pub points: usize,
}

/// Grid mean of `|lambda* - lambda_hat| / lambda*` over one sequence.
pub fn mre<A: Predictor + ?Sized, B: Predictor + ?Sized>(
    truth: &A,
    fitted: &B,
    seq: &EventSequence,
    grid: &EvalGrid,
) -> MreResult {
    let pts = grid.points(seq);
    let mut sum = 0.0;
    let mut used = 0;
    for (t, s) in &pts {
        let l_true = truth.ground_intensity(&seq.events, *t, s);
        if !(l_true > 0.0) {
            continue;
        }
        let l_fit = fitted.ground_intensity(&seq.events, *t, s);
        sum += (l_true - l_fit).abs() / l_true;
        used += 1;
    }
    MreResult {
        value: if used == 0 { f64::NAN } else { sum / used as f64 },
        excluded: pts.len() - used,
        points: pts.len(),
    }
}

/// Mean of per-sequence MRE and the per-sequence values.
pub fn mre_over<A: Predictor + ?Sized, B: Predictor + ?Sized>(
    truth: &A,
    fitted: &B,
    seqs: &[EventSequence],
    grid: &EvalGrid,
) -> (f64, Vec<MreResult>) {
    let per = par::map_slice(seqs, |s| mre(truth, fitted, s, grid));
    let vals: Vec<f64> = per.iter().map(|m| m.value).filter(|v| v.is_finite()).collect();
    let mean = if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 };
    if per.iter().any(|m| m.excluded > 0) {
        let total: usize = per.iter().map(|m| m.excluded).sum();
        log::warn!("{total} grid points with non-positive reference intensity excluded from MRE");
    }
    (mean, per)
}

/// `lambda(t, s) exp(-int_{t_n}^t int_S lambda)` for `t` after the last
/// event of `history`.
pub fn predictive_density<P: Predictor + ?Sized>(
    model: &P,
    history: &[Event],
    bounds: &[[f64; 2]],
    t: f64,
    s: &[f64; 2],
) -> Result<f64> {
    let t_n = history.last().map_or(0.0, |e| e.t);
    if t <= t_n {
        return Err(Error::Domain(format!("t = {t} is not after the last event {t_n}")));
    }
    let lam = model.ground_intensity(history, t, s);
    Ok(lam * (-model.compensator(history, bounds, t_n, t)?).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    /// Time nodes for the location expectation.
    pub time_nodes: usize,
    /// Spatial nodes per axis for the location expectation.
    pub space_per_axis: usize,
    pub tolerance: f64,
    pub survival_cutoff: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self { time_nodes: 60, space_per_axis: 15, tolerance: 1e-8, survival_cutoff: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub time: f64,
    pub location: Vec<f64>,
    /// Mark distribution at the predicted point (marked models only).
    pub mark_probs: Vec<f64>,
    pub converged: bool,
}

fn adaptive_trapezoid<F: FnMut(f64) -> Result<f64>>(f: &mut F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn rec<F: FnMut(f64) -> Result<f64>>(
        f: &mut F,
        a: f64,
        b: f64,
        fa: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        let left = 0.25 * (b - a) * (fa + fm);
        let right = 0.25 * (b - a) * (fm + fb);
        if depth == 0 || (left + right - whole).abs() <= 3.0 * tol {
            return Ok(left + right + (left + right - whole) / 3.0);
        }
        Ok(rec(f, a, m, fa, fm, left, tol / 2.0, depth - 1)? + rec(f, m, b, fm, fb, right, tol / 2.0, depth - 1)?)
    }
    let fa = f(a)?;
    let fb = f(b)?;
    // split up front so a narrow bump cannot hide between the endpoints
    let n = 16;
    let h = (b - a) / n as f64;
    let mut total = 0.0;
    let mut prev = fa;
    for k in 0..n {
        let x0 = a + k as f64 * h;
        let x1 = if k + 1 == n { b } else { x0 + h };
        let f1 = if k + 1 == n { fb } else { f(x1)? };
        total += rec(f, x0, x1, prev, f1, 0.5 * (x1 - x0) * (prev + f1), tol / n as f64, 24)?;
        prev = f1;
    }
    Ok(total)
}

/// Expected time and location of the next event after `history`.
pub fn predict_next_event<P: Predictor + ?Sized>(
    model: &P,
    history: &[Event],
    bounds: &[[f64; 2]],
    opts: &PredictOptions,
) -> Result<Prediction> {
    let t_n = history.last().map_or(0.0, |e| e.t);
    let horizon = model.influence_horizon();
    let area: f64 = bounds.iter().map(|b| b[1] - b[0]).product();
    let end = t_n + horizon;
    let mut survival = |t: f64| -> Result<f64> { Ok((-model.compensator(history, bounds, t_n, t)?).exp()) };
    let head = adaptive_trapezoid(&mut survival, t_n, end, opts.tolerance)?;
    let s_end = survival(end)?;
    // past the influence horizon the intensity is the constant background
    let far = model.ground_intensity(history, end + horizon, &centre(bounds));
    let mut converged = true;
    let tail = if s_end < opts.survival_cutoff {
        0.0
    } else if far * area > 0.0 {
        s_end / (far * area)
    } else {
        converged = false;
        log::warn!("survival {s_end:.3e} has not decayed and the background rate is zero");
        0.0
    };
    let time = t_n + head + tail;

    let location = if bounds.is_empty() {
        vec![]
    } else {
        expected_location(model, history, bounds, t_n, end, s_end, far, opts)?
    };
    let mark_probs = if model.num_marks() > 0 {
        let s = if location.is_empty() { [0.0; 2] } else { [location[0], *location.get(1).unwrap_or(&0.0)] };
        let lam: Vec<f64> = (0..model.num_marks())
            .map(|m| model.mark_intensity(history, time, &s, m).max(0.0))
            .collect();
        let z: f64 = lam.iter().sum();
        if z > 0.0 {
            lam.iter().map(|l| l / z).collect()
        } else {
            vec![1.0 / lam.len() as f64; lam.len()]
        }
    } else {
        vec![]
    };
    Ok(Prediction { time, location, mark_probs, converged })
}

fn centre(bounds: &[[f64; 2]]) -> [f64; 2] {
    let mut c = [0.0; 2];
    for (k, b) in bounds.iter().enumerate() {
        c[k] = 0.5 * (b[0] + b[1]);
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn expected_location<P: Predictor + ?Sized>(
    model: &P,
    history: &[Event],
    bounds: &[[f64; 2]],
    t_n: f64,
    end: f64,
    s_end: f64,
    far: f64,
    opts: &PredictOptions,
) -> Result<Vec<f64>> {
    let d = bounds.len();
    let g = opts.space_per_axis;
    let axis = |b: &[f64; 2]| -> Vec<f64> {
        let h = (b[1] - b[0]) / g as f64;
        (0..g).map(|k| b[0] + (k as f64 + 0.5) * h).collect()
    };
    let locs: Vec<[f64; 2]> = if d == 1 {
        axis(&bounds[0]).into_iter().map(|a| [a, 0.0]).collect()
    } else {
        let (xs, ys) = (axis(&bounds[0]), axis(&bounds[1]));
        ys.iter().flat_map(|&b| xs.iter().map(move |&a| [a, b])).collect()
    };
    let cell: f64 = bounds.iter().map(|b| (b[1] - b[0]) / g as f64).product();
    let nt = opts.time_nodes.max(2);
    let dt = (end - t_n) / nt as f64;
    let rows = par::map_indexed(nt, |k| -> Result<(f64, [f64; 2])> {
        let t = t_n + (k as f64 + 0.5) * dt;
        let surv = (-model.compensator(history, bounds, t_n, t)?).exp();
        let mut mass = 0.0;
        let mut first = [0.0; 2];
        for s in &locs {
            let f = model.ground_intensity(history, t, s).max(0.0) * surv * cell * dt;
            mass += f;
            first[0] += f * s[0];
            first[1] += f * s[1];
        }
        Ok((mass, first))
    });
    let mut mass = 0.0;
    let mut first = [0.0; 2];
    for r in rows {
        let (m, f) = r?;
        mass += m;
        first[0] += f[0];
        first[1] += f[1];
    }
    // the tail is spatially uniform
    if far > 0.0 {
        let c = centre(bounds);
        mass += s_end;
        first[0] += s_end * c[0];
        first[1] += s_end * c[1];
    }
    if !(mass > 0.0) {
        return Ok(centre(bounds)[..d].to_vec());
    }
    Ok(first[..d].iter().map(|f| f / mass).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionTask {
    TimeRmse,
    TimeMae,
    LocationMae,
    TypeAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub time_mae: f64,
    pub time_rmse: f64,
    pub location_mae: Option<f64>,
    pub type_accuracy: Option<f64>,
    pub predicted: usize,
}

/// Predicts the last event of every non-empty sequence from its prefix.
pub fn prediction_report<P: Predictor + ?Sized>(
    model: &P,
    seqs: &[EventSequence],
    opts: &PredictOptions,
) -> Result<PredictionReport> {
    let targets: Vec<&EventSequence> = seqs.iter().filter(|s| !s.is_empty()).collect();
    let preds = par::map_slice(&targets, |s| {
        let n = s.len();
        predict_next_event(model, &s.events[..n - 1], &s.bounds, opts)
    });
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut loc = 0.0;
    let mut hits = 0usize;
    let mut marked = 0usize;
    for (s, p) in targets.iter().zip(preds) {
        let p = p?;
        let truth = s.events.last().expect("non-empty");
        let e = p.time - truth.t;
        abs += e.abs();
        sq += e * e;
        let d2: f64 = p.location.iter().enumerate().map(|(k, x)| (x - truth.s[k]).powi(2)).sum();
        loc += d2.sqrt();
        if let Some(m) = truth.mark {
            marked += 1;
            let best = p
                .mark_probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k);
            if best == Some(m) || (p.mark_probs.is_empty() && m == 0) {
                hits += 1;
            }
        }
    }
    let n = targets.len();
    if n == 0 {
        return Err(Error::Domain("no non-empty sequence to predict".into()));
    }
    let spatial = targets[0].spatial_dim() > 0;
    Ok(PredictionReport {
        time_mae: abs / n as f64,
        time_rmse: (sq / n as f64).sqrt(),
        location_mae: spatial.then(|| loc / n as f64),
        type_accuracy: (marked > 0).then(|| hits as f64 / marked as f64),
        predicted: n,
    })
}

pub fn prediction_error<P: Predictor + ?Sized>(
    model: &P,
    seqs: &[EventSequence],
    task: PredictionTask,
    opts: &PredictOptions,
) -> Result<f64> {
    let r = prediction_report(model, seqs, opts)?;
    match task {
        PredictionTask::TimeRmse => Ok(r.time_rmse),
        PredictionTask::TimeMae => Ok(r.time_mae),
        PredictionTask::LocationMae => r
            .location_mae
            .ok_or_else(|| Error::Domain("location error needs spatial data".into())),
        PredictionTask::TypeAccuracy => r
            .type_accuracy
            .ok_or_else(|| Error::Domain("type accuracy needs marked data".into())),
    }
}

/// Coordinates of a temporal kernel matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankParam {
    /// Rows `t'`, columns `t`, zero where `t < t'`.
    HistoryTime,
    /// Rows `t'`, columns `t - t'`.
    HistoryDisplacement,
}

/// `n x n` matrix of `k(t', tau)` on a uniform grid of `[0, extent]` in
/// the chosen coordinates.
pub fn kernel_matrix<F: Fn(f64, f64) -> f64>(k: F, param: RankParam, n: usize, extent: f64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::Config("rank grid needs at least 2 points".into()));
    }
    let x = |i: usize| extent * i as f64 / (n - 1) as f64;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let (tp, c) = (x(i), x(j));
        match param {
            RankParam::HistoryTime if c >= tp => k(tp, c - tp),
            RankParam::HistoryTime => 0.0,
            RankParam::HistoryDisplacement => k(tp, c),
        }
    }))
}

/// Number of singular values above `tolerance * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tolerance: f64) -> usize {
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tolerance * smax).count()
}

pub fn kernel_matrix_rank<F: Fn(f64, f64) -> f64>(
    k: F,
    param: RankParam,
    n: usize,
    extent: f64,
    tolerance: f64,
) -> Result<usize> {
    Ok(numerical_rank(&kernel_matrix(k, param, n, extent)?, tolerance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub kernel: String,
    pub grid: usize,
    pub extent: f64,
    pub tolerance: f64,
    pub history_time_rank: usize,
    pub displacement_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEval {
    pub events: usize,
    pub loglik: f64,
    pub mre: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean of `sum loglik / sum events` over the test set.
    pub test_loglik_per_event: f64,
    pub truth_loglik_per_event: Option<f64>,
    /// Mean of the per-sequence MRE.
    pub mre: Option<f64>,
    pub mre_excluded_points: usize,
    pub prediction: Option<PredictionReport>,
    pub rank: Option<RankReport>,
    pub sequences: Vec<SequenceEval>,
}

/// Loglik, MRE against `truth` (when given) and optional prediction errors
/// on a test set.
pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    truth: Option<&TrueModel>,
    test: &[EventSequence],
    grid: &EvalGrid,
    predict: Option<&PredictOptions>,
) -> Result<EvalReport> {
    let lls = sequence_logliks(model, test)?;
    let n: usize = test.iter().map(|s| s.len()).sum();
    if n == 0 {
        return Err(Error::Domain("test set has no events".into()));
    }
    let ll = lls.iter().sum::<f64>() / n as f64;
    let (truth_ll, mre_mean, per_mre) = match truth {
        Some(t) => {
            let tl = test_loglik_per_event(t, test)?;
            let (m, per) = mre_over(t, model, test, grid);
            (Some(tl), Some(m), Some(per))
        }
        None => (None, None, None),
    };
    let prediction = predict.map(|o| prediction_report(model, test, o)).transpose()?;
    let sequences = test
        .iter()
        .enumerate()
        .map(|(i, s)| SequenceEval {
            events: s.len(),
            loglik: lls[i],
            mre: per_mre.as_ref().map(|p| p[i].value),
        })
        .collect();
    Ok(EvalReport {
        test_loglik_per_event: ll,
        truth_loglik_per_event: truth_ll,
        mre: mre_mean,
        mre_excluded_points: per_mre.map_or(0, |p| p.iter().map(|m| m.excluded).sum()),
        prediction,
        rank: None,
        sequences,
    })
}

/// Heatmap CSV: header `t_prime,<tau_0>,<tau_1>,..`, one row per `t'`.
pub fn heatmap_csv<F: Fn(f64, f64) -> f64>(k: F, t_primes: &[f64], taus: &[f64]) -> String {
    let mut s = String::from("t_prime");
    for tau in taus {
        s.push_str(&format!(",{tau}"));
    }
    s.push('\n');
    for &tp in t_primes {
        s.push_str(&format!("{tp}"));
        for &tau in taus {
            s.push_str(&format!(",{}", k(tp, tau)));
        }
        s.push('\n');
    }
    s
}

/// Intensity curve CSV `t,truth,fitted` along a temporal sequence.
pub fn intensity_curve_csv<A: Predictor + ?Sized, B: Predictor + ?Sized>(
    truth: Option<&A>,
    fitted: &B,
    seq: &EventSequence,
    points: usize,
) -> String {
    let mut s = String::from("t,truth,fitted\n");
    let z = [0.0; 2];
    for k in 0..points {
        let t = seq.horizon * (k as f64 + 0.5) / points as f64;
        let lt = truth.map_or(f64::NAN, |m| m.ground_intensity(&seq.events, t, &z));
        s.push_str(&format!("{t},{lt},{}\n", fitted.ground_intensity(&seq.events, t, &z)));
    }
    s
}

pub fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}
