//! Grid-accelerated log-likelihood, log-barrier and training objective.
//!
//! Per batch the right temporal nets are tabulated once on the time grid and
//! the right spatial nets once on the ball grid. Per sequence the left nets
//! are evaluated once per event; right spatial nets are evaluated directly
//! only on event pairs (and barrier-point/event pairs) inside the
//! truncation window. Temporal right factors come from linear interpolation
//! of the table, their integrals from the cumulative trapezoid table.
//!
//! Everything here can also run the reverse pass: [`BatchWork::gradient`]
//! returns the gradient of the objective with respect to the flat parameter
//! vector of the model, with the barrier bound `b` held fixed.

use crate::basis::{Basis, BasisCache};
use crate::error::{Error, Result};
use crate::grid::{
    barrier_grid, cumulative_trapezoid, cumulative_trapezoid_adjoint, GridSpec, SpaceGrid, TimeGrid,
};
use crate::kernel::{Event, EventSequence, KernelModel, TemporalParam};
use crate::par;

/// Tabulated right temporal nets and their running integrals.
#[derive(Debug, Clone)]
pub struct PhiTable {
    pub grid: TimeGrid,
    pub values: Vec<Vec<f64>>,
    pub cumulative: Vec<Vec<f64>>,
}

impl PhiTable {
    /// Interpolated `phi_l(x)`; zero beyond the table extent.
    pub fn interp(&self, l: usize, x: f64) -> f64 {
        self.grid.interp_truncated(&self.values[l], x)
    }

    /// Interpolated `F_l(x)`, constant beyond the extent.
    pub fn integral(&self, l: usize, x: f64) -> f64 {
        self.grid.interp_clamped(&self.cumulative[l], x)
    }
}

struct TableCaches {
    phi: Vec<BasisCache>,
    v: Vec<BasisCache>,
    g: Vec<BasisCache>,
    h: Vec<BasisCache>,
}

/// Everything tabulated once per batch.
pub struct Tables {
    pub phi: PhiTable,
    pub space: Option<SpaceGrid>,
    /// `v_r` on the ball grid nodes.
    pub v_grid: Vec<Vec<f64>>,
    /// `g_q` and `h_q` per mark category (`[[1.0]]` for unmarked models).
    pub g_marks: Vec<Vec<f64>>,
    pub h_marks: Vec<Vec<f64>>,
    /// Number of mark categories integrated over (1 when unmarked).
    pub mark_count: usize,
    caches: Option<TableCaches>,
}

impl Tables {
    pub fn h_sum(&self, q: usize) -> f64 {
        self.h_marks[q].iter().sum()
    }
}

/// Time table for a model: `[0, tau_max]` for the displacement form,
/// `[0, time_extent]` with the same spacing for the history-time ablation.
pub fn time_grid_for(model: &KernelModel, grids: &GridSpec) -> Result<TimeGrid> {
    let spec = &model.spec;
    match spec.parameterization {
        TemporalParam::Displacement => TimeGrid::new(spec.tau_max, grids.time_points),
        TemporalParam::HistoryTime => {
            let ratio = spec.time_extent / spec.tau_max;
            let n = (ratio * (grids.time_points - 1) as f64).ceil() as usize + 1;
            TimeGrid::new(spec.time_extent, n.max(2))
        }
    }
}

fn run_all(bases: &[Basis], xs: &[f64], keep: bool) -> Result<(Vec<Vec<f64>>, Option<Vec<BasisCache>>)> {
    let mut vals = Vec::with_capacity(bases.len());
    let mut caches = keep.then(Vec::new);
    for b in bases {
        let (v, c) = b.run(xs, keep)?;
        vals.push(v);
        if let (Some(cs), Some(c)) = (caches.as_mut(), c) {
            cs.push(c);
        }
    }
    Ok((vals, caches))
}

fn build(model: &KernelModel, grids: &GridSpec, keep: bool) -> Result<Tables> {
    grids.validate()?;
    let grid = time_grid_for(model, grids)?;
    let (values, phi_c) = run_all(&model.phi, &grid.nodes(), keep)?;
    let cumulative = values.iter().map(|v| cumulative_trapezoid(v, grid.step)).collect();
    let (space, v_grid, v_c) = if model.is_spatial() {
        let sg = SpaceGrid::ball(model.spec.spatial_dim, model.spec.a_max, grids.space_points)?;
        let (vals, c) = run_all(&model.v, &sg.inputs(), keep)?;
        (Some(sg), vals, c)
    } else {
        (None, vec![], keep.then(Vec::new))
    };
    let (g_marks, h_marks, mark_count, g_c, h_c) = if model.is_marked() {
        let k = model.spec.num_marks;
        let mut onehots = vec![0.0; k * k];
        for m in 0..k {
            onehots[m * k + m] = 1.0;
        }
        let (g, gc) = run_all(&model.g, &onehots, keep)?;
        let (h, hc) = run_all(&model.h, &onehots, keep)?;
        (g, h, k, gc, hc)
    } else {
        (vec![vec![1.0]], vec![vec![1.0]], 1, keep.then(Vec::new), keep.then(Vec::new))
    };
    let caches = if keep {
        Some(TableCaches {
            phi: phi_c.unwrap_or_default(),
            v: v_c.unwrap_or_default(),
            g: g_c.unwrap_or_default(),
            h: h_c.unwrap_or_default(),
        })
    } else {
        None
    };
    Ok(Tables {
        phi: PhiTable { grid, values, cumulative },
        space,
        v_grid,
        g_marks,
        h_marks,
        mark_count,
        caches,
    })
}

/// Tabulates `phi_l` on the time grid (with cumulative integrals), `v_r` on
/// the ball grid and the mark nets on every category.
pub fn build_tables(model: &KernelModel, grids: &GridSpec) -> Result<Tables> {
    build(model, grids, false)
}

pub fn interp_phi(tables: &Tables, l: usize, tau: f64) -> f64 {
    tables.phi.interp(l, tau)
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    target: usize,
    source: usize,
    /// Argument of the right temporal nets.
    x: f64,
}

struct BarrierWork {
    points: usize,
    pairs: Vec<Pair>,
    /// `[r][pair]`
    pair_v: Vec<Vec<f64>>,
    /// `[point * Q + q]`
    hat: Vec<f64>,
    caches: Option<Vec<BasisCache>>,
}

struct SeqCaches {
    psi: Vec<BasisCache>,
    u: Vec<BasisCache>,
    pair_v: Vec<BasisCache>,
}

/// Per-sequence forward state shared by log-summation, integral and barrier.
pub struct SeqWork {
    horizon: f64,
    bounds: Vec<[f64; 2]>,
    times: Vec<f64>,
    locs: Vec<[f64; 2]>,
    marks: Vec<usize>,
    /// `[l][event]`
    psi: Vec<Vec<f64>>,
    /// `[r][event]`; empty for temporal models
    u: Vec<Vec<f64>>,
    pairs: Vec<Pair>,
    pair_v: Vec<Vec<f64>>,
    /// history sums per mark slot at each event, `[event * Q + q]`
    hat: Vec<f64>,
    lambda: Vec<f64>,
    bar: Option<BarrierWork>,
    caches: Option<SeqCaches>,
}

impl SeqWork {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Intensity at each event.
    pub fn event_intensities(&self) -> &[f64] {
        &self.lambda
    }

    pub fn event_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn barrier_pairs(&self) -> usize {
        self.bar.as_ref().map_or(0, |b| b.pairs.len())
    }
}

/// Small helper for the rank-structured sum
/// `out_q = g_q * sum_{l,r} alpha[l,r,q] a_l b_r`.
struct Ranks<'a> {
    alpha: &'a [f64],
    l: usize,
    r: usize,
    q: usize,
}

impl<'a> Ranks<'a> {
    fn of(model: &'a KernelModel) -> Self {
        Self {
            alpha: &model.alpha,
            l: model.temporal_rank(),
            r: model.spatial_rank(),
            q: model.mark_slots(),
        }
    }

    #[inline]
    fn idx(&self, l: usize, r: usize, q: usize) -> usize {
        (l * self.r + r) * self.q + q
    }

    #[inline]
    fn add(&self, a: &[f64], b: &[f64], g: &[f64], out: &mut [f64]) {
        for q in 0..self.q {
            let mut s = 0.0;
            for (l, al) in a.iter().enumerate() {
                for (r, br) in b.iter().enumerate() {
                    s += self.alpha[self.idx(l, r, q)] * al * br;
                }
            }
            out[q] += g[q] * s;
        }
    }

    /// Reverse of [`Ranks::add`] for upstream adjoints `adj[q]`; the
    /// `d_*` buffers are accumulated into.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn add_adjoint(
        &self,
        a: &[f64],
        b: &[f64],
        g: &[f64],
        adj: &[f64],
        d_alpha: &mut [f64],
        d_a: &mut [f64],
        d_b: &mut [f64],
        d_g: &mut [f64],
    ) {
        for q in 0..self.q {
            let c = adj[q];
            if c == 0.0 {
                continue;
            }
            let e = c * g[q];
            let mut s = 0.0;
            for (l, al) in a.iter().enumerate() {
                for (r, br) in b.iter().enumerate() {
                    let k = self.idx(l, r, q);
                    let alpha = self.alpha[k];
                    s += alpha * al * br;
                    d_alpha[k] += e * al * br;
                    d_a[l] += e * alpha * br;
                    d_b[r] += e * alpha * al;
                }
            }
            d_g[q] += c * s;
        }
    }
}

fn mark_index(model: &KernelModel, e: &Event, i: usize) -> Result<usize> {
    if !model.is_marked() {
        return Ok(0);
    }
    match e.mark {
        Some(m) if m < model.spec.num_marks => Ok(m),
        Some(m) => Err(Error::Domain(format!("event {i} has mark {m} outside the mark space"))),
        None => Err(Error::Domain(format!("event {i} has no mark but the model is marked"))),
    }
}

fn right_arg(model: &KernelModel, t_target: f64, t_source: f64) -> f64 {
    match model.spec.parameterization {
        TemporalParam::Displacement => t_target - t_source,
        TemporalParam::HistoryTime => t_target,
    }
}

/// Table coordinates `(xa, xb)` such that `F(xb) - F(xa)` integrates the
/// right temporal factor of a source at `t_src` over `[t_lo, t_hi]`.
fn time_window(model: &KernelModel, t_src: f64, t_lo: f64, t_hi: f64) -> (f64, f64) {
    let tau_max = model.spec.tau_max;
    match model.spec.parameterization {
        TemporalParam::Displacement => (
            (t_lo - t_src).clamp(0.0, tau_max),
            (t_hi - t_src).clamp(0.0, tau_max),
        ),
        TemporalParam::HistoryTime => {
            let lo = t_lo.max(t_src);
            let hi = t_hi.min(t_src + tau_max);
            if hi <= lo {
                (lo, lo)
            } else {
                (lo, hi)
            }
        }
    }
}

/// `sum` of the ball-grid node weights whose shifted position `s + p` lies
/// in the window; calls `f(node_index)` on each such node.
fn for_nodes_in_window(space: &SpaceGrid, s: &[f64; 2], bounds: &[[f64; 2]], mut f: impl FnMut(usize)) {
    for (k, p) in space.nodes.iter().enumerate() {
        let inside = bounds
            .iter()
            .enumerate()
            .all(|(a, b)| {
                let x = s[a] + p[a];
                x >= b[0] && x <= b[1]
            });
        if inside {
            f(k);
        }
    }
}

fn spatial_masses(tables: &Tables, s: &[f64; 2], bounds: &[[f64; 2]]) -> Vec<f64> {
    match &tables.space {
        None => vec![1.0],
        Some(space) => {
            let mut out = vec![0.0; tables.v_grid.len()];
            for_nodes_in_window(space, s, bounds, |k| {
                for (o, v) in out.iter_mut().zip(&tables.v_grid) {
                    *o += v[k];
                }
            });
            out.iter().map(|x| x * space.cell).collect()
        }
    }
}

fn check_sequence(model: &KernelModel, seq: &EventSequence) -> Result<()> {
    if seq.spatial_dim() != model.spec.spatial_dim {
        return Err(Error::Shape(format!(
            "sequence has {} spatial dims, model expects {}",
            seq.spatial_dim(),
            model.spec.spatial_dim
        )));
    }
    if model.spec.parameterization == TemporalParam::HistoryTime
        && seq.horizon > model.spec.time_extent * (1.0 + 1e-12)
    {
        return Err(Error::Config(format!(
            "horizon {} exceeds the model's time extent {}",
            seq.horizon, model.spec.time_extent
        )));
    }
    Ok(())
}

/// Forward state of one sequence. Evaluates each left net once per event,
/// and the right spatial nets on the event pairs (and barrier pairs when
/// `barrier` is given) inside the truncation window.
fn prepare(
    model: &KernelModel,
    tables: &Tables,
    seq: &EventSequence,
    barrier: Option<&GridSpec>,
    keep: bool,
) -> Result<SeqWork> {
    check_sequence(model, seq)?;
    let n = seq.len();
    let d = model.spec.spatial_dim;
    let tau_max = model.spec.tau_max;
    let a_max = model.spec.a_max;
    let times: Vec<f64> = seq.events.iter().map(|e| e.t).collect();
    let locs: Vec<[f64; 2]> = seq.events.iter().map(|e| e.s).collect();
    let marks = seq
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| mark_index(model, e, i))
        .collect::<Result<Vec<_>>>()?;

    let (psi, psi_c) = run_all(&model.psi, &times, keep)?;
    let loc_inputs: Vec<f64> = locs.iter().flat_map(|s| s[..d].iter().copied()).collect();
    let (u, u_c) = if d > 0 { run_all(&model.u, &loc_inputs, keep)? } else { (vec![], keep.then(Vec::new)) };

    let within = |disp: &[f64; 2]| -> bool {
        d == 0 || disp[..d].iter().map(|x| x * x).sum::<f64>().sqrt() <= a_max
    };

    let mut pairs = Vec::new();
    let mut disp_inputs = Vec::new();
    for i in 0..n {
        for j in (0..i).rev() {
            let tau = times[i] - times[j];
            if tau > tau_max {
                break;
            }
            let disp = [locs[i][0] - locs[j][0], locs[i][1] - locs[j][1]];
            if within(&disp) {
                pairs.push(Pair { target: i, source: j, x: right_arg(model, times[i], times[j]) });
                disp_inputs.extend_from_slice(&disp[..d]);
            }
        }
    }
    let (pair_v, pair_v_c) = if d > 0 { run_all(&model.v, &disp_inputs, keep)? } else { (vec![], keep.then(Vec::new)) };

    let ranks = Ranks::of(model);
    let qn = ranks.q;
    let mut a = vec![0.0; ranks.l];
    let mut b = vec![1.0; ranks.r];

    let mut accumulate = |pairs: &[Pair], pv: &[Vec<f64>], hat: &mut [f64]| {
        for (p, pair) in pairs.iter().enumerate() {
            let j = pair.source;
            for l in 0..ranks.l {
                a[l] = psi[l][j] * tables.phi.interp(l, pair.x);
            }
            if d > 0 {
                for r in 0..ranks.r {
                    b[r] = u[r][j] * pv[r][p];
                }
            }
            let g: Vec<f64> = (0..qn).map(|q| tables.g_marks[q][marks[j]]).collect();
            ranks.add(&a, &b, &g, &mut hat[pair.target * qn..(pair.target + 1) * qn]);
        }
    };

    let mut hat = vec![0.0; n * qn];
    accumulate(&pairs, &pair_v, &mut hat);
    let lambda: Vec<f64> = (0..n)
        .map(|i| {
            model.mu
                + (0..qn)
                    .map(|q| tables.h_marks[q][marks[i]] * hat[i * qn + q])
                    .sum::<f64>()
        })
        .collect();

    let bar = match barrier {
        None => None,
        Some(spec) => {
            let (bt, bs) = barrier_grid(seq, spec);
            let ns = bs.len();
            let mut bpairs = Vec::new();
            let mut bdisp = Vec::new();
            for (ct, &tc) in bt.iter().enumerate() {
                // sources with t_j < t_c <= t_j + tau_max
                let end = times.partition_point(|&t| t < tc);
                let start = times[..end].partition_point(|&t| tc - t > tau_max);
                for (cs, sc) in bs.iter().enumerate() {
                    for j in start..end {
                        let disp = [sc[0] - locs[j][0], sc[1] - locs[j][1]];
                        if within(&disp) {
                            bpairs.push(Pair { target: ct * ns + cs, source: j, x: right_arg(model, tc, times[j]) });
                            bdisp.extend_from_slice(&disp[..d]);
                        }
                    }
                }
            }
            let (bv, bv_c) = if d > 0 { run_all(&model.v, &bdisp, keep)? } else { (vec![], keep.then(Vec::new)) };
            let points = bt.len() * ns;
            let mut bhat = vec![0.0; points * qn];
            accumulate(&bpairs, &bv, &mut bhat);
            Some(BarrierWork { points, pairs: bpairs, pair_v: bv, hat: bhat, caches: bv_c })
        }
    };

    let caches = if keep {
        Some(SeqCaches {
            psi: psi_c.unwrap_or_default(),
            u: u_c.unwrap_or_default(),
            pair_v: pair_v_c.unwrap_or_default(),
        })
    } else {
        None
    };

    Ok(SeqWork {
        horizon: seq.horizon,
        bounds: seq.bounds.clone(),
        times,
        locs,
        marks,
        psi,
        u,
        pairs,
        pair_v,
        hat,
        lambda,
        bar,
        caches,
    })
}

fn log_sum_of(work: &SeqWork) -> Result<f64> {
    let mut s = 0.0;
    for (i, &lam) in work.lambda.iter().enumerate() {
        if !(lam > 0.0) {
            return Err(Error::Infeasible { site: "event", index: i, value: lam });
        }
        s += lam.ln();
    }
    Ok(s)
}

fn integral_of(model: &KernelModel, tables: &Tables, work: &SeqWork) -> f64 {
    let ranks = Ranks::of(model);
    let area: f64 = work.bounds.iter().map(|b| b[1] - b[0]).product();
    let mut total = model.mu * area * work.horizon * tables.mark_count as f64;
    let mut a = vec![0.0; ranks.l];
    let mut out = vec![0.0; ranks.q];
    for j in 0..work.len() {
        let (xa, xb) = time_window(model, work.times[j], work.times[j], work.horizon);
        for l in 0..ranks.l {
            a[l] = work.psi[l][j] * (tables.phi.integral(l, xb) - tables.phi.integral(l, xa));
        }
        let masses = spatial_masses(tables, &work.locs[j], &work.bounds);
        let b: Vec<f64> = if model.is_spatial() {
            (0..ranks.r).map(|r| work.u[r][j] * masses[r]).collect()
        } else {
            vec![1.0]
        };
        let g: Vec<f64> = (0..ranks.q).map(|q| tables.g_marks[q][work.marks[j]]).collect();
        out.iter_mut().for_each(|o| *o = 0.0);
        ranks.add(&a, &b, &g, &mut out);
        for q in 0..ranks.q {
            total += tables.h_sum(q) * out[q];
        }
    }
    total
}

/// Values whose log the barrier takes: intensities on the barrier grid for
/// unmarked models, the per-slot history sums for marked ones.
fn barrier_args(model: &KernelModel, work: &SeqWork) -> Result<Vec<f64>> {
    let bar = work
        .bar
        .as_ref()
        .ok_or_else(|| Error::Config("barrier grid was not prepared".into()))?;
    Ok(if model.is_marked() {
        bar.hat.clone()
    } else {
        bar.hat.iter().map(|h| model.mu + h).collect()
    })
}

fn barrier_of(model: &KernelModel, work: &SeqWork, b: f64) -> Result<f64> {
    let args = barrier_args(model, work)?;
    let mut s = 0.0;
    for (i, &x) in args.iter().enumerate() {
        let gap = x - b;
        if !(gap > 0.0) {
            return Err(Error::Infeasible { site: "barrier grid", index: i, value: x });
        }
        s += gap.ln();
    }
    Ok(-s / args.len() as f64)
}

/// `sum_i log lambda(t_i, s_i)` by table interpolation.
pub fn log_summation(model: &KernelModel, seq: &EventSequence, tables: &Tables) -> Result<f64> {
    log_sum_of(&prepare(model, tables, seq, None, false)?)
}

/// `int_0^T int_S lambda` through the per-source factorization: the
/// background mass plus, per event, the tabulated time integral times the
/// ball-grid spatial integral clipped to `S`.
pub fn integral_term(model: &KernelModel, seq: &EventSequence, tables: &Tables) -> Result<f64> {
    let work = prepare(model, tables, seq, None, false)?;
    Ok(integral_of(model, tables, &work))
}

pub fn log_likelihood(model: &KernelModel, seq: &EventSequence, tables: &Tables) -> Result<f64> {
    let work = prepare(model, tables, seq, None, false)?;
    Ok(log_sum_of(&work)? - integral_of(model, tables, &work))
}

/// Log-barrier `-(1/|grid|) sum log(lambda - b)` over the barrier grid of
/// `seq`, for unmarked models.
pub fn barrier(model: &KernelModel, seq: &EventSequence, grids: &GridSpec, b: f64, tables: &Tables) -> Result<f64> {
    if model.is_marked() {
        return Err(Error::Config("use barrier_marked for marked models".into()));
    }
    barrier_of(model, &prepare(model, tables, seq, Some(grids), false)?, b)
}

/// Marked log-barrier over the per-slot history sums.
pub fn barrier_marked(
    model: &KernelModel,
    seq: &EventSequence,
    grids: &GridSpec,
    b: f64,
    tables: &Tables,
) -> Result<f64> {
    if !model.is_marked() {
        return Err(Error::Config("barrier_marked needs a marked model".into()));
    }
    barrier_of(model, &prepare(model, tables, seq, Some(grids), false)?, b)
}

/// Intensity (table route) on every barrier grid point of `seq`.
pub fn barrier_grid_intensities(
    model: &KernelModel,
    seq: &EventSequence,
    grids: &GridSpec,
    tables: &Tables,
) -> Result<Vec<f64>> {
    let work = prepare(model, tables, seq, Some(grids), false)?;
    let bar = work.bar.as_ref().expect("prepared with barrier");
    let qn = model.mark_slots();
    Ok((0..bar.points)
        .map(|c| {
            if model.is_marked() {
                // the least favourable mark: a lower bound over categories
                (0..tables.mark_count)
                    .map(|m| {
                        model.mu
                            + (0..qn)
                                .map(|q| tables.h_marks[q][m] * bar.hat[c * qn + q])
                                .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            } else {
                model.mu + bar.hat[c]
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    /// `-sum_batch loglik`
    pub neg_loglik: f64,
    /// Batch mean of the per-sequence barriers.
    pub barrier: f64,
    /// `neg_loglik + barrier / w`
    pub objective: f64,
}

/// Per-sequence gradient pieces before the table reverse pass.
struct SeqGrad {
    grad: Vec<f64>,
    phi_adj: Vec<Vec<f64>>,
    cum_adj: Vec<Vec<f64>>,
    vgrid_adj: Vec<Vec<f64>>,
    g_adj: Vec<Vec<f64>>,
    h_adj: Vec<Vec<f64>>,
}

/// One batch: tables plus the forward state of every sequence.
pub struct BatchWork<'m> {
    model: &'m KernelModel,
    tables: Tables,
    seqs: Vec<SeqWork>,
}

impl<'m> BatchWork<'m> {
    /// Builds tables and prepares every sequence (barrier grids included).
    /// With `keep_grad` the forward caches needed by
    /// [`BatchWork::gradient`] are retained.
    pub fn new(model: &'m KernelModel, seqs: &[&EventSequence], grids: &GridSpec, keep_grad: bool) -> Result<Self> {
        let tables = build(model, grids, keep_grad)?;
        let works = par::map_slice(seqs, |s| prepare(model, &tables, s, Some(grids), keep_grad));
        let seqs = works.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self { model, tables, seqs })
    }

    pub fn tables(&self) -> &Tables {
        &self.tables
    }

    pub fn sequences(&self) -> &[SeqWork] {
        &self.seqs
    }

    /// Smallest barrier argument over the batch: the minimum grid intensity
    /// (unmarked) or the minimum per-slot history sum (marked).
    pub fn min_barrier_arg(&self) -> Result<f64> {
        let mut m = f64::INFINITY;
        for w in &self.seqs {
            for x in barrier_args(self.model, w)? {
                m = m.min(x);
            }
        }
        Ok(m)
    }

    pub fn log_likelihoods(&self) -> Result<Vec<f64>> {
        self.seqs
            .iter()
            .map(|w| Ok(log_sum_of(w)? - integral_of(self.model, &self.tables, w)))
            .collect()
    }

    pub fn barrier(&self, b: f64) -> Result<f64> {
        if self.seqs.is_empty() {
            return Ok(0.0);
        }
        let mut s = 0.0;
        for w in &self.seqs {
            s += barrier_of(self.model, w, b)?;
        }
        Ok(s / self.seqs.len() as f64)
    }

    pub fn objective(&self, w: f64, b: f64) -> Result<ObjectiveParts> {
        let neg_loglik = -self.log_likelihoods()?.iter().sum::<f64>();
        let barrier = self.barrier(b)?;
        Ok(ObjectiveParts { neg_loglik, barrier, objective: neg_loglik + barrier / w })
    }

    /// Gradient of `neg_loglik + barrier / w` with `b` fixed, laid out as
    /// [`KernelModel::params_flat`].
    pub fn gradient(&self, w: f64, b: f64) -> Result<Vec<f64>> {
        let model = self.model;
        let caches = self
            .tables
            .caches
            .as_ref()
            .ok_or_else(|| Error::Config("batch was prepared without gradient caches".into()))?;
        let bar_weight = if self.seqs.is_empty() { 0.0 } else { 1.0 / (w * self.seqs.len() as f64) };
        let parts = par::map_slice(&self.seqs, |work| self.seq_gradient(work, b, bar_weight));
        let layout = model.layout();
        let mut grad = vec![0.0; layout.total];
        let tp = &self.tables.phi;
        let ln = model.temporal_rank();
        let mut phi_adj = vec![vec![0.0; tp.grid.len]; ln];
        let mut cum_adj = vec![vec![0.0; tp.grid.len]; ln];
        let mut vgrid_adj: Vec<Vec<f64>> = self.tables.v_grid.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut g_adj: Vec<Vec<f64>> = self.tables.g_marks.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut h_adj: Vec<Vec<f64>> = self.tables.h_marks.iter().map(|v| vec![0.0; v.len()]).collect();
        fn add_into(dst: &mut [Vec<f64>], src: &[Vec<f64>]) {
            for (d, s) in dst.iter_mut().zip(src) {
                for (a, b) in d.iter_mut().zip(s) {
                    *a += b;
                }
            }
        }
        for part in parts {
            let part = part?;
            for (g, p) in grad.iter_mut().zip(&part.grad) {
                *g += p;
            }
            add_into(&mut phi_adj, &part.phi_adj);
            add_into(&mut cum_adj, &part.cum_adj);
            add_into(&mut vgrid_adj, &part.vgrid_adj);
            add_into(&mut g_adj, &part.g_adj);
            add_into(&mut h_adj, &part.h_adj);
        }
        for l in 0..ln {
            cumulative_trapezoid_adjoint(&cum_adj[l], tp.grid.step, &mut phi_adj[l]);
            let off = layout.phi[l];
            let np = model.phi[l].num_params();
            model.phi[l].backward(&caches.phi[l], &phi_adj[l], &mut grad[off..off + np])?;
        }
        for (r, adj) in vgrid_adj.iter().enumerate() {
            let off = layout.v[r];
            let np = model.v[r].num_params();
            model.v[r].backward(&caches.v[r], adj, &mut grad[off..off + np])?;
        }
        for q in 0..model.spec.mark_rank {
            let off = layout.g[q];
            let np = model.g[q].num_params();
            model.g[q].backward(&caches.g[q], &g_adj[q], &mut grad[off..off + np])?;
            let off = layout.h[q];
            let np = model.h[q].num_params();
            model.h[q].backward(&caches.h[q], &h_adj[q], &mut grad[off..off + np])?;
        }
        Ok(grad)
    }

    fn seq_gradient(&self, work: &SeqWork, b: f64, bar_weight: f64) -> Result<SeqGrad> {
        let model = self.model;
        let tables = &self.tables;
        let layout = model.layout();
        let ranks = Ranks::of(model);
        let (ln, rn, qn) = (ranks.l, ranks.r, ranks.q);
        let n = work.len();
        let spatial = model.is_spatial();
        let mut out = SeqGrad {
            grad: vec![0.0; layout.total],
            phi_adj: vec![vec![0.0; tables.phi.grid.len]; ln],
            cum_adj: vec![vec![0.0; tables.phi.grid.len]; ln],
            vgrid_adj: tables.v_grid.iter().map(|v| vec![0.0; v.len()]).collect(),
            g_adj: tables.g_marks.iter().map(|v| vec![0.0; v.len()]).collect(),
            h_adj: tables.h_marks.iter().map(|v| vec![0.0; v.len()]).collect(),
        };
        let mut d_mu = 0.0;
        let mut d_alpha = vec![0.0; model.alpha.len()];
        let mut d_psi = vec![vec![0.0; n]; ln];
        let mut d_u = vec![vec![0.0; n]; if spatial { rn } else { 0 }];
        let mut d_pair_v = vec![vec![0.0; work.pairs.len()]; if spatial { rn } else { 0 }];

        let mut a = vec![0.0; ln];
        let mut bvec = vec![1.0; rn];
        let mut g = vec![1.0; qn];
        let mut d_a = vec![0.0; ln];
        let mut d_b = vec![0.0; rn];
        let mut d_g = vec![0.0; qn];

        // log-summation: d(-log lambda_i)
        let mut adj_hat = vec![0.0; n * qn];
        for i in 0..n {
            let lam = work.lambda[i];
            if !(lam > 0.0) {
                return Err(Error::Infeasible { site: "event", index: i, value: lam });
            }
            let c = -1.0 / lam;
            d_mu += c;
            for q in 0..qn {
                adj_hat[i * qn + q] = c * tables.h_marks[q][work.marks[i]];
                if model.is_marked() {
                    out.h_adj[q][work.marks[i]] += c * work.hat[i * qn + q];
                }
            }
        }

        // pair back-propagation shared by events and barrier points
        #[allow(clippy::too_many_arguments)]
        fn pairs_backward(
            model: &KernelModel,
            tables: &Tables,
            work: &SeqWork,
            ranks: &Ranks,
            pairs: &[Pair],
            pair_v: &[Vec<f64>],
            adj_target: &[f64],
            d_alpha: &mut [f64],
            d_psi: &mut [Vec<f64>],
            d_u: &mut [Vec<f64>],
            d_pv: &mut [Vec<f64>],
            phi_adj: &mut [Vec<f64>],
            g_adj: &mut [Vec<f64>],
        ) {
            let (ln, rn, qn) = (ranks.l, ranks.r, ranks.q);
            let spatial = model.is_spatial();
            let mut a = vec![0.0; ln];
            let mut phi = vec![0.0; ln];
            let mut b = vec![1.0; rn];
            let mut g = vec![1.0; qn];
            let mut d_a = vec![0.0; ln];
            let mut d_b = vec![0.0; rn];
            let mut d_g = vec![0.0; qn];
            for (p, pair) in pairs.iter().enumerate() {
                let adj = &adj_target[pair.target * qn..(pair.target + 1) * qn];
                if adj.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let j = pair.source;
                for l in 0..ln {
                    phi[l] = tables.phi.interp(l, pair.x);
                    a[l] = work.psi[l][j] * phi[l];
                }
                if spatial {
                    for r in 0..rn {
                        b[r] = work.u[r][j] * pair_v[r][p];
                    }
                }
                for q in 0..qn {
                    g[q] = tables.g_marks[q][work.marks[j]];
                }
                d_a.iter_mut().for_each(|x| *x = 0.0);
                d_b.iter_mut().for_each(|x| *x = 0.0);
                d_g.iter_mut().for_each(|x| *x = 0.0);
                ranks.add_adjoint(&a, &b, &g, adj, d_alpha, &mut d_a, &mut d_b, &mut d_g);
                for l in 0..ln {
                    d_psi[l][j] += d_a[l] * phi[l];
                    tables
                        .phi
                        .grid
                        .interp_truncated_adjoint(d_a[l] * work.psi[l][j], pair.x, &mut phi_adj[l]);
                }
                if spatial {
                    for r in 0..rn {
                        d_u[r][j] += d_b[r] * pair_v[r][p];
                        d_pv[r][p] += d_b[r] * work.u[r][j];
                    }
                }
                if model.is_marked() {
                    for q in 0..qn {
                        g_adj[q][work.marks[j]] += d_g[q];
                    }
                }
            }
        }

        pairs_backward(
            model,
            tables,
            work,
            &ranks,
            &work.pairs,
            &work.pair_v,
            &adj_hat,
            &mut d_alpha,
            &mut d_psi,
            &mut d_u,
            &mut d_pair_v,
            &mut out.phi_adj,
            &mut out.g_adj,
        );

        // integral term: +integral in -loglik
        let area: f64 = work.bounds.iter().map(|b| b[1] - b[0]).product();
        d_mu += area * work.horizon * tables.mark_count as f64;
        let h_sums: Vec<f64> = (0..qn).map(|q| tables.h_sum(q)).collect();
        for j in 0..n {
            let (xa, xb) = time_window(model, work.times[j], work.times[j], work.horizon);
            let fint: Vec<f64> = (0..ln)
                .map(|l| tables.phi.integral(l, xb) - tables.phi.integral(l, xa))
                .collect();
            for l in 0..ln {
                a[l] = work.psi[l][j] * fint[l];
            }
            let masses = spatial_masses(tables, &work.locs[j], &work.bounds);
            if spatial {
                for r in 0..rn {
                    bvec[r] = work.u[r][j] * masses[r];
                }
            }
            for q in 0..qn {
                g[q] = tables.g_marks[q][work.marks[j]];
            }
            if model.is_marked() {
                let mut val = vec![0.0; qn];
                ranks.add(&a, &bvec, &g, &mut val);
                for q in 0..qn {
                    for hm in out.h_adj[q].iter_mut() {
                        *hm += val[q];
                    }
                }
            }
            d_a.iter_mut().for_each(|x| *x = 0.0);
            d_b.iter_mut().for_each(|x| *x = 0.0);
            d_g.iter_mut().for_each(|x| *x = 0.0);
            ranks.add_adjoint(&a, &bvec, &g, &h_sums, &mut d_alpha, &mut d_a, &mut d_b, &mut d_g);
            for l in 0..ln {
                d_psi[l][j] += d_a[l] * fint[l];
                let df = d_a[l] * work.psi[l][j];
                tables.phi.grid.interp_clamped_adjoint(df, xb, &mut out.cum_adj[l]);
                tables.phi.grid.interp_clamped_adjoint(-df, xa, &mut out.cum_adj[l]);
            }
            if spatial {
                let space = tables.space.as_ref().expect("spatial tables");
                for r in 0..rn {
                    d_u[r][j] += d_b[r] * masses[r];
                    let dv = d_b[r] * work.u[r][j] * space.cell;
                    let row = &mut out.vgrid_adj[r];
                    for_nodes_in_window(space, &work.locs[j], &work.bounds, |k| row[k] += dv);
                }
            }
            if model.is_marked() {
                for q in 0..qn {
                    out.g_adj[q][work.marks[j]] += d_g[q];
                }
            }
        }

        // barrier
        let mut d_bar_v: Vec<Vec<f64>> = Vec::new();
        if bar_weight != 0.0 {
            if let Some(bar) = &work.bar {
                let args = barrier_args(model, work)?;
                let scale = -bar_weight / args.len() as f64;
                let mut adj_bar = vec![0.0; bar.points * qn];
                for (k, &x) in args.iter().enumerate() {
                    let gap = x - b;
                    if !(gap > 0.0) {
                        return Err(Error::Infeasible { site: "barrier grid", index: k, value: x });
                    }
                    adj_bar[k] = scale / gap;
                    if !model.is_marked() {
                        d_mu += scale / gap;
                    }
                }
                d_bar_v = vec![vec![0.0; bar.pairs.len()]; if spatial { rn } else { 0 }];
                pairs_backward(
                    model,
                    tables,
                    work,
                    &ranks,
                    &bar.pairs,
                    &bar.pair_v,
                    &adj_bar,
                    &mut d_alpha,
                    &mut d_psi,
                    &mut d_u,
                    &mut d_bar_v,
                    &mut out.phi_adj,
                    &mut out.g_adj,
                );
            }
        }

        out.grad[0] = d_mu;
        out.grad[layout.alpha..layout.alpha + d_alpha.len()].copy_from_slice(&d_alpha);
        let sc = work
            .caches
            .as_ref()
            .ok_or_else(|| Error::Config("sequence prepared without gradient caches".into()))?;
        for l in 0..ln {
            let off = layout.psi[l];
            let np = model.psi[l].num_params();
            model.psi[l].backward(&sc.psi[l], &d_psi[l], &mut out.grad[off..off + np])?;
        }
        if spatial {
            for r in 0..rn {
                let off = layout.v[r];
                let np = model.v[r].num_params();
                model.u[r].backward(&sc.u[r], &d_u[r], &mut out.grad[layout.u[r]..layout.u[r] + model.u[r].num_params()])?;
                model.v[r].backward(&sc.pair_v[r], &d_pair_v[r], &mut out.grad[off..off + np])?;
                if let Some(bar) = &work.bar {
                    if let Some(bc) = &bar.caches {
                        if !d_bar_v.is_empty() {
                            model.v[r].backward(&bc[r], &d_bar_v[r], &mut out.grad[off..off + np])?;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Training objective `-sum loglik + barrier / w` for a batch with a given
/// barrier bound. `tables` must come from [`build_tables`] for `model`.
pub fn objective(
    model: &KernelModel,
    seqs: &[EventSequence],
    w: f64,
    b: f64,
    tables: &Tables,
    grids: &GridSpec,
) -> Result<ObjectiveParts> {
    let works = par::map_slice(seqs, |s| prepare(model, tables, s, Some(grids), false));
    let works = works.into_iter().collect::<Result<Vec<_>>>()?;
    let mut ll = 0.0;
    let mut bar = 0.0;
    for w in &works {
        ll += log_sum_of(w)? - integral_of(model, tables, w);
        bar += barrier_of(model, w, b)?;
    }
    let barrier = if works.is_empty() { 0.0 } else { bar / works.len() as f64 };
    Ok(ObjectiveParts { neg_loglik: -ll, barrier, objective: -ll + barrier / w })
}

/// Integrated intensity of `history` (all events at or before `t_lo`) over
/// `[t_lo, t_hi] x S`, summed over marks, through the table route.
pub fn compensator(
    model: &KernelModel,
    tables: &Tables,
    history: &[Event],
    bounds: &[[f64; 2]],
    t_lo: f64,
    t_hi: f64,
) -> Result<f64> {
    let ranks = Ranks::of(model);
    let area: f64 = bounds.iter().map(|b| b[1] - b[0]).product();
    let mut total = model.mu * area * (t_hi - t_lo) * tables.mark_count as f64;
    let mut a = vec![0.0; ranks.l];
    let mut out = vec![0.0; ranks.q];
    for (j, e) in history.iter().enumerate() {
        if t_lo - e.t > model.spec.tau_max {
            continue;
        }
        let m = mark_index(model, e, j)?;
        let (xa, xb) = time_window(model, e.t, t_lo, t_hi);
        for l in 0..ranks.l {
            a[l] = model.psi[l].eval1(e.t) * (tables.phi.integral(l, xb) - tables.phi.integral(l, xa));
        }
        let masses = spatial_masses(tables, &e.s, bounds);
        let b: Vec<f64> = if model.is_spatial() {
            (0..ranks.r)
                .map(|r| model.u[r].eval(model.spatial_input(&e.s)) * masses[r])
                .collect()
        } else {
            vec![1.0]
        };
        let g: Vec<f64> = (0..ranks.q).map(|q| tables.g_marks[q][m]).collect();
        out.iter_mut().for_each(|o| *o = 0.0);
        ranks.add(&a, &b, &g, &mut out);
        for q in 0..ranks.q {
            total += tables.h_sum(q) * out[q];
        }
    }
    Ok(total)
}
