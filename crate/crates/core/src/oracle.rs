//! Brute-force global minimization of small homogeneous quadratic families.
//!
//! The conic relaxation elsewhere in this crate comes with an exactness
//! certificate, but a certificate is only as trustworthy as the code that
//! computed it. This module is the independent cross-check: a dense
//! multi-resolution grid sweep over an explicit box, followed by a local
//! coordinate-descent polish. It shares nothing with the cone solver — every
//! sample is evaluated directly against every constraint matrix — so
//! agreement between the two paths is meaningful evidence.
//!
//! Cost grows as `points^n`, hence the hard [`MAX_DIMENSION`] guard. The
//! search is heuristic: it can certify a good feasible point, never a global
//! lower bound, and [`OracleResult::certified_bound`] says so explicitly.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadform::HomogeneousFamily;

/// Constraint slack allowed when deciding whether a sample is feasible.
pub const ORACLE_FEAS_TOL: f64 = 1e-6;

/// Hard cap on the search dimension; grid cost grows as `points^n`.
pub const MAX_DIMENSION: usize = 6;

/// Derived boxes are widened by this factor so that grid cells straddle
/// constraint boundaries instead of stopping exactly on them.
const BOX_INFLATION: f64 = 1.1;

/// Full-box rescans triggered by an infeasible coarse pass stop growing once
/// the next grid would exceed this many points.
const ESCALATION_CAP: usize = 4_000_000;

const POLISH_SWEEPS: usize = 200;
const POLISH_STEP: f64 = 1e-3;
const POLISH_SHRINK: f64 = 0.5;
const POLISH_MIN_STEP: f64 = 1e-12;

/// Resolution plan for the grid search.
///
/// The first round scans the whole box with `initial_points` per axis. Each
/// later round shrinks the spacing by `refine_factor` and lays a local grid
/// of `local_points` per axis around each of the `keep` best feasible points
/// found so far, so the window around each kept point spans half of the
/// previous spacing on either side with the defaults below.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSchedule {
    /// Points per axis in the first, full-box round.
    pub initial_points: usize,
    /// Total rounds: the full-box pass plus `rounds - 1` local refinements.
    pub rounds: usize,
    /// Best feasible points carried from one round to the next.
    pub keep: usize,
    /// Grid-spacing shrink factor applied at each refinement round.
    pub refine_factor: f64,
    /// Points per axis in each local refinement grid.
    pub local_points: usize,
}

impl Default for GridSchedule {
    fn default() -> Self {
        Self {
            initial_points: 21,
            rounds: 3,
            keep: 32,
            refine_factor: 10.0,
            local_points: 11,
        }
    }
}

impl GridSchedule {
    fn validate(&self) -> Result<()> {
        if self.initial_points < 2 {
            return Err(Error::InvalidArgument(
                "grid schedule needs at least 2 initial points per axis".into(),
            ));
        }
        if self.rounds == 0 || self.keep == 0 || self.local_points == 0 {
            return Err(Error::InvalidArgument(
                "grid schedule rounds, keep and local_points must be positive".into(),
            ));
        }
        if self.refine_factor <= 1.0 || !self.refine_factor.is_finite() {
            return Err(Error::InvalidArgument(
                "grid refine factor must be a finite number above 1".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of a [`brute_force`] search.
#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Best feasible point found; satisfies every constraint within
    /// [`ORACLE_FEAS_TOL`].
    pub best_u: DVector<f64>,
    /// Objective value at `best_u`, after polishing.
    pub objective: f64,
    /// Number of feasible grid samples evaluated across all rounds
    /// (overlapping refinement windows may count a point twice).
    pub feasible_samples: usize,
    /// Best objective at the end of each grid round, before polishing;
    /// non-increasing by construction.
    pub round_objectives: Vec<f64>,
    /// The schedule the search ran with, recorded for reproducibility.
    pub schedule: GridSchedule,
    /// Always `false`: a finite grid sweep plus local polish is strong
    /// evidence, not a proof of global optimality.
    pub certified_bound: bool,
}

/// One homogeneous form flattened for fast slice evaluation: the value is
/// `corner + lin . u + sum_j u_j * (packed row j . u[j..])`, where `packed`
/// stores the upper triangle row-major with off-diagonal entries doubled.
struct FlatForm {
    corner: f64,
    lin: Vec<f64>,
    packed: Vec<f64>,
}

impl FlatForm {
    fn from_matrix(p: &DMatrix<f64>) -> Self {
        let n = p.nrows() - 1;
        let corner = p[(0, 0)];
        let lin: Vec<f64> = (0..n).map(|k| 2.0 * p[(0, k + 1)]).collect();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            packed.push(p[(j + 1, j + 1)]);
            for k in (j + 1)..n {
                packed.push(2.0 * p[(j + 1, k + 1)]);
            }
        }
        Self { corner, lin, packed }
    }

    fn value(&self, u: &[f64]) -> f64 {
        let mut acc = self.corner;
        let mut idx = 0;
        for (j, &uj) in u.iter().enumerate() {
            acc += self.lin[j] * uj;
            let mut row = self.packed[idx] * uj;
            idx += 1;
            for &uk in &u[j + 1..] {
                row += self.packed[idx] * uk;
                idx += 1;
            }
            acc += uj * row;
        }
        acc
    }
}

struct Evaluator {
    objective: FlatForm,
    constraints: Vec<FlatForm>,
}

impl Evaluator {
    fn from_family(fam: &HomogeneousFamily) -> Self {
        Self {
            objective: FlatForm::from_matrix(&fam.mats[0]),
            constraints: fam.mats[1..].iter().map(FlatForm::from_matrix).collect(),
        }
    }

    /// Returns the objective value when every constraint holds within
    /// [`ORACLE_FEAS_TOL`], `None` otherwise.
    fn feasible_objective(&self, u: &[f64]) -> Option<f64> {
        for c in &self.constraints {
            if c.value(u) > ORACLE_FEAS_TOL {
                return None;
            }
        }
        Some(self.objective.value(u))
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    objective: f64,
    u: Vec<f64>,
}

fn lex_order(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let ord = x.total_cmp(y);
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

/// Total order on (objective, point) that makes top-K selection independent
/// of evaluation and thread order.
fn key_order(objective: f64, u: &[f64], other: &Candidate) -> Ordering {
    objective
        .total_cmp(&other.objective)
        .then_with(|| lex_order(u, &other.u))
}

/// Inserts a candidate into a sorted, capacity-bounded list; exact duplicates
/// are dropped so carried-over centers do not crowd out fresh points.
fn offer(kept: &mut Vec<Candidate>, cap: usize, objective: f64, u: &[f64]) {
    if kept.len() == cap {
        let last = kept.last().expect("cap is positive");
        if key_order(objective, u, last) != Ordering::Less {
            return;
        }
    }
    let pos = kept.partition_point(|c| key_order(objective, u, c) == Ordering::Greater);
    if let Some(existing) = kept.get(pos) {
        if key_order(objective, u, existing) == Ordering::Equal {
            return;
        }
    }
    kept.insert(
        pos,
        Candidate {
            objective,
            u: u.to_vec(),
        },
    );
    kept.truncate(cap);
}

/// One round's worth of grid geometry: a set of cells sharing per-axis step
/// sizes and point counts, each with its own origin. Point `idx` is decoded
/// cell-first, then mixed-radix over the axes, so the mapping is a pure
/// function of the index and scanning order never affects the outcome.
struct RoundGrid<'a> {
    bounds: &'a [(f64, f64)],
    origins: Vec<Vec<f64>>,
    steps: Vec<f64>,
    points: Vec<usize>,
    per_cell: usize,
}

impl<'a> RoundGrid<'a> {
    fn full(bounds: &'a [(f64, f64)], points: &[usize]) -> Self {
        let steps = bounds
            .iter()
            .zip(points)
            .map(|(&(lo, hi), &p)| if p > 1 { (hi - lo) / (p - 1) as f64 } else { 0.0 })
            .collect();
        Self {
            bounds,
            origins: vec![bounds.iter().map(|&(lo, _)| lo).collect()],
            steps,
            points: points.to_vec(),
            per_cell: points.iter().product(),
        }
    }

    fn local(
        bounds: &'a [(f64, f64)],
        centers: &[Candidate],
        steps: &[f64],
        local_points: usize,
    ) -> Self {
        let points: Vec<usize> = bounds
            .iter()
            .map(|&(lo, hi)| if hi > lo { local_points } else { 1 })
            .collect();
        let origins = centers
            .iter()
            .map(|c| {
                c.u.iter()
                    .zip(steps)
                    .zip(&points)
                    .map(|((&center, &step), &p)| center - step * ((p - 1) as f64) / 2.0)
                    .collect()
            })
            .collect();
        Self {
            bounds,
            origins,
            steps: steps.to_vec(),
            points: points.clone(),
            per_cell: points.iter().product(),
        }
    }

    fn total(&self) -> usize {
        self.origins.len() * self.per_cell
    }

    fn point(&self, idx: usize, buf: &mut [f64]) {
        let cell = idx / self.per_cell;
        let mut rem = idx % self.per_cell;
        let origin = &self.origins[cell];
        for k in (0..self.points.len()).rev() {
            let i = rem % self.points[k];
            rem /= self.points[k];
            let (lo, hi) = self.bounds[k];
            buf[k] = (origin[k] + i as f64 * self.steps[k]).clamp(lo, hi);
        }
    }
}

/// Scans every point of a round's grid, returning the top `keep` feasible
/// candidates and the feasible-sample count. Work is split into contiguous
/// index ranges across `jobs` threads; each range keeps its own local top-K,
/// and the merge under [`key_order`] makes the result identical for any
/// thread count.
fn scan_round(
    eval: &Evaluator,
    grid: &RoundGrid<'_>,
    keep: usize,
    jobs: usize,
) -> (Vec<Candidate>, usize) {
    let total = grid.total();
    let scan_range = |lo: usize, hi: usize| -> (Vec<Candidate>, usize) {
        let mut kept = Vec::with_capacity(keep + 1);
        let mut feasible = 0usize;
        let mut buf = vec![0.0; grid.points.len()];
        for idx in lo..hi {
            grid.point(idx, &mut buf);
            if let Some(objective) = eval.feasible_objective(&buf) {
                feasible += 1;
                offer(&mut kept, keep, objective, &buf);
            }
        }
        (kept, feasible)
    };
    if jobs <= 1 || total < 4096 {
        return scan_range(0, total);
    }
    let chunk = total.div_ceil(jobs);
    let scan_range = &scan_range;
    let pieces: Vec<(Vec<Candidate>, usize)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let lo = (j * chunk).min(total);
                let hi = ((j + 1) * chunk).min(total);
                scope.spawn(move || scan_range(lo, hi))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("grid worker panicked"))
            .collect()
    });
    let mut kept = Vec::with_capacity(keep + 1);
    let mut feasible = 0;
    for (part, count) in pieces {
        feasible += count;
        for cand in part {
            offer(&mut kept, keep, cand.objective, &cand.u);
        }
    }
    (kept, feasible)
}

/// Coordinate descent from the best grid point: probe `±step` along each
/// axis (clamped to the box), accept strict improvements that stay feasible,
/// and halve the step after any sweep with no progress.
fn polish(
    eval: &Evaluator,
    bounds: &[(f64, f64)],
    mut u: Vec<f64>,
    mut best: f64,
) -> (Vec<f64>, f64) {
    let mut step = POLISH_STEP;
    let mut probe = u.clone();
    for _ in 0..POLISH_SWEEPS {
        let mut improved = false;
        for k in 0..u.len() {
            let (lo, hi) = bounds[k];
            for dir in [1.0f64, -1.0] {
                let trial = (u[k] + dir * step).clamp(lo, hi);
                if trial == u[k] {
                    continue;
                }
                probe.copy_from_slice(&u);
                probe[k] = trial;
                if let Some(objective) = eval.feasible_objective(&probe) {
                    if objective < best {
                        best = objective;
                        u[k] = trial;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= POLISH_SHRINK;
            if step < POLISH_MIN_STEP {
                break;
            }
        }
    }
    (u, best)
}

/// Derives a symmetric search box from pure norm-cap constraint rows.
///
/// A row qualifies when it reads `sum_k d_k u_k^2 + gamma <= 0` with every
/// `d_k >= 0` and `gamma <= 0` — no linear terms, no couplings. Such a row
/// caps `|u_k| <= sqrt(-gamma / d_k)` wherever `d_k > 0`; the tightest cap
/// per coordinate is widened by 10% so the boundary lies strictly inside the
/// grid. Coordinates no qualifying row covers make the feasible set
/// potentially unbounded, which is an error: the caller must supply an
/// explicit box instead.
pub fn derive_box(fam: &HomogeneousFamily) -> Result<Vec<(f64, f64)>> {
    let n = fam.n;
    let mut radius = vec![f64::INFINITY; n];
    for p in fam.mats.iter().skip(1) {
        let gamma = p[(0, 0)];
        if gamma > 0.0 {
            continue;
        }
        let coupled = (0..=n).any(|j| ((j + 1)..=n).any(|k| p[(j, k)] != 0.0));
        if coupled || (1..=n).any(|k| p[(k, k)] < 0.0) {
            continue;
        }
        for k in 0..n {
            let d = p[(k + 1, k + 1)];
            if d > 0.0 {
                radius[k] = radius[k].min((-gamma / d).sqrt() * BOX_INFLATION);
            }
        }
    }
    if let Some(k) = radius.iter().position(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "no diagonal norm bound covers control coordinate {k}; supply an explicit search box"
        )));
    }
    Ok(radius.into_iter().map(|r| (-r, r)).collect())
}

/// Searches `bounds` for the global minimum of the family's objective
/// subject to its constraints, by multi-resolution grid sweep plus
/// coordinate-descent polish.
///
/// `jobs` is the number of worker threads for grid evaluation; `0` means
/// one per available CPU. The result is identical for every thread count.
///
/// When the first full-box pass finds no feasible point, the box is rescanned
/// at halved spacing, once per remaining round, as long as the grid stays
/// below roughly four million points; if still nothing is feasible the search
/// reports [`Error::NoFeasiblePoint`] with the finest spacing it tried.
pub fn brute_force(
    fam: &HomogeneousFamily,
    bounds: &[(f64, f64)],
    schedule: &GridSchedule,
    jobs: usize,
) -> Result<OracleResult> {
    let n = fam.n;
    if n > MAX_DIMENSION {
        return Err(Error::InvalidArgument(format!(
            "grid search over {n} coordinates is out of reach; the cap is {MAX_DIMENSION}"
        )));
    }
    if bounds.len() != n {
        return Err(Error::Dimension(format!(
            "search box has {} axes but the family has {} controls",
            bounds.len(),
            n
        )));
    }
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "search box axis {k} is invalid: [{lo}, {hi}]"
            )));
        }
    }
    schedule.validate()?;
    let jobs = if jobs == 0 {
        std::thread::available_parallelism().map_or(1, |p| p.get())
    } else {
        jobs
    };
    let eval = Evaluator::from_family(fam);

    // Full-box pass, rescanning finer while nothing is feasible.
    let mut points: Vec<usize> = bounds
        .iter()
        .map(|&(lo, hi)| if hi > lo { schedule.initial_points } else { 1 })
        .collect();
    let mut attempts = 1;
    let (mut kept, mut feasible_samples, mut steps) = loop {
        let grid = RoundGrid::full(bounds, &points);
        let spacing = grid.steps.iter().cloned().fold(0.0f64, f64::max);
        let (kept, feasible) = scan_round(&eval, &grid, schedule.keep, jobs);
        if !kept.is_empty() {
            break (kept, feasible, grid.steps);
        }
        let next: Vec<usize> = points
            .iter()
            .map(|&p| if p > 1 { 2 * (p - 1) + 1 } else { 1 })
            .collect();
        let next_total: usize = next.iter().product();
        if attempts >= schedule.rounds || next_total > ESCALATION_CAP {
            return Err(Error::NoFeasiblePoint {
                finest_spacing: spacing,
            });
        }
        log::debug!(
            "no feasible point at spacing {spacing:.3e}; rescanning the box at half spacing"
        );
        attempts += 1;
        points = next;
    };

    let mut round_objectives = vec![kept[0].objective];
    for _ in 1..schedule.rounds {
        for s in &mut steps {
            *s /= schedule.refine_factor;
        }
        let grid = RoundGrid::local(bounds, &kept, &steps, schedule.local_points);
        let (mut fresh, feasible) = scan_round(&eval, &grid, schedule.keep, jobs);
        feasible_samples += feasible;
        for cand in kept {
            offer(&mut fresh, schedule.keep, cand.objective, &cand.u);
        }
        kept = fresh;
        round_objectives.push(kept[0].objective);
    }

    let seed = kept.swap_remove(0);
    let (u, objective) = polish(&eval, bounds, seed.u, seed.objective);
    debug_assert!(
        eval.feasible_objective(&u).is_some(),
        "polished point drifted out of the feasible set"
    );
    log::debug!(
        "grid search: {} feasible samples, best {:.9e} after polish",
        feasible_samples,
        objective
    );
    Ok(OracleResult {
        best_u: DVector::from_vec(u),
        objective,
        feasible_samples,
        round_objectives,
        schedule: schedule.clone(),
        certified_bound: false,
    })
}
