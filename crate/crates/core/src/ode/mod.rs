//! Adaptive explicit integration with dense output, event location and
//! blow-up detection.

mod dopri;
pub mod characteristic;

pub use dopri::integrate;

use serde::{Deserialize, Serialize};

/// Right-hand side `f(t, y, dy)`.
pub type Rhs<'a> = Box<dyn Fn(f64, &[f64], &mut [f64]) + 'a>;
/// Scalar event function `g(t, y)`.
pub type EventFn<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + 'a>;
/// Predicate checked after every accepted step; `true` halts integration.
pub type HaltFn<'a> = Box<dyn Fn(f64, &[f64]) -> bool + 'a>;

/// Which sign changes of an event function count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Any,
    /// negative to positive
    Rising,
    /// positive to negative
    Falling,
}

impl Direction {
    /// Whether `g` crosses zero from `g_left` to `g_right` in an accepted sense.
    /// A left value of exactly zero never counts, so an event sitting on the
    /// start of an interval is not reported twice.
    fn crossing(self, g_left: f64, g_right: f64) -> bool {
        let rising = g_left < 0.0 && g_right >= 0.0;
        let falling = g_left > 0.0 && g_right <= 0.0;
        match self {
            Direction::Any => rising || falling,
            Direction::Rising => rising,
            Direction::Falling => falling,
        }
    }
}

pub struct Event<'a> {
    pub g: EventFn<'a>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a> Event<'a> {
    pub fn new(g: impl Fn(f64, &[f64]) -> f64 + 'a, direction: Direction, terminal: bool) -> Self {
        Self { g: Box::new(g), direction, terminal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerances {
    pub const fn new(rel: f64, abs: f64) -> Self {
        Self { rel, abs }
    }

    /// Tolerances for classification-critical integrations.
    pub const CLASSIFY: Tolerances = Tolerances::new(1e-10, 1e-12);
    /// Looser tolerances used for large sweeps.
    pub const SWEEP: Tolerances = Tolerances::new(1e-8, 1e-10);

    pub fn is_valid(&self) -> bool {
        self.rel > 0.0 && self.abs > 0.0 && self.rel.is_finite() && self.abs.is_finite()
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::CLASSIFY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupPolicy {
    /// Declare blow-up once a monitored component exceeds this in magnitude.
    pub norm_threshold: f64,
    /// Components watched for blow-up. `None` watches all of them.
    pub monitored: Option<Vec<usize>>,
    /// Step-size floor relative to `|t_end - t0|`.
    pub step_floor: f64,
}

impl Default for BlowupPolicy {
    fn default() -> Self {
        Self { norm_threshold: 1e8, monitored: None, step_floor: 1e-13 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    Adaptive,
    /// Constant step (last step shortened to land on `t_end`), no error control.
    Fixed(f64),
}

pub struct IvpProblem<'a> {
    pub rhs: Rhs<'a>,
    pub t0: f64,
    pub y0: Vec<f64>,
    pub t_end: f64,
    pub tol: Tolerances,
    pub events: Vec<Event<'a>>,
    pub halt: Option<HaltFn<'a>>,
    pub blowup: BlowupPolicy,
    pub mode: StepMode,
    pub max_steps: usize,
    pub keep_dense: bool,
}

impl<'a> IvpProblem<'a> {
    pub fn new(
        rhs: impl Fn(f64, &[f64], &mut [f64]) + 'a,
        t0: f64,
        y0: Vec<f64>,
        t_end: f64,
    ) -> Self {
        Self {
            rhs: Box::new(rhs),
            t0,
            y0,
            t_end,
            tol: Tolerances::default(),
            events: Vec::new(),
            halt: None,
            blowup: BlowupPolicy::default(),
            mode: StepMode::Adaptive,
            max_steps: 5_000_000,
            keep_dense: true,
        }
    }

    pub fn dimension(&self) -> usize {
        self.y0.len()
    }

    pub fn tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn event(mut self, ev: Event<'a>) -> Self {
        self.events.push(ev);
        self
    }

    pub fn halt_when(mut self, pred: impl Fn(f64, &[f64]) -> bool + 'a) -> Self {
        self.halt = Some(Box::new(pred));
        self
    }

    pub fn blowup(mut self, policy: BlowupPolicy) -> Self {
        self.blowup = policy;
        self
    }

    pub fn monitor(mut self, components: Vec<usize>) -> Self {
        self.blowup.monitored = Some(components);
        self
    }

    pub fn fixed_step(mut self, h: f64) -> Self {
        self.mode = StepMode::Fixed(h);
        self
    }

    pub fn max_steps(mut self, n: usize) -> Self {
        self.max_steps = n;
        self
    }

    /// Drop dense-output coefficients to save memory; `eval` then
    /// only works at accepted step points.
    pub fn sparse(mut self) -> Self {
        self.keep_dense = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    ReachedEnd,
    EventStop,
    /// Halt predicate fired.
    Halted,
    /// Blow-up detected with the estimated blow-up time.
    BlowupDetected(f64),
    ToleranceFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub t: f64,
    pub index: usize,
    pub y: Vec<f64>,
}

/// One accepted step's dense-output polynomial.
#[derive(Debug, Clone)]
pub(crate) struct DenseStep {
    pub t: f64,
    pub h: f64,
    pub r: [Vec<f64>; 5],
}

impl DenseStep {
    pub(crate) fn eval_into(&self, t: f64, out: &mut [f64]) {
        let th = (t - self.t) / self.h;
        let th1 = 1.0 - th;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[0][i]
                + th * (self.r[1][i]
                    + th1 * (self.r[2][i] + th * (self.r[3][i] + th1 * self.r[4][i])));
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Clone)]
pub struct IvpSolution {
    pub ts: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub events: Vec<EventRecord>,
    pub termination: Termination,
    pub message: Option<String>,
    pub stats: SolverStats,
    pub(crate) dense: Vec<DenseStep>,
}

impl IvpSolution {
    pub fn t_final(&self) -> f64 {
        *self.ts.last().expect("solution holds at least the initial point")
    }

    pub fn y_final(&self) -> &[f64] {
        self.ys.last().expect("solution holds at least the initial point")
    }

    pub fn t_start(&self) -> f64 {
        self.ts[0]
    }

    pub fn blowup_time(&self) -> Option<f64> {
        match self.termination {
            Termination::BlowupDetected(t) => Some(t),
            _ => None,
        }
    }

    pub fn events_of(&self, index: usize) -> impl Iterator<Item = &EventRecord> {
        self.events.iter().filter(move |e| e.index == index)
    }

    fn covers(&self, t: f64) -> bool {
        let (a, b) = (self.t_start(), self.t_final());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        t >= lo && t <= hi
    }

    /// State at `t` from dense output, `None` outside the integrated span.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        if !self.covers(t) {
            return None;
        }
        if self.dense.is_empty() {
            return self
                .ts
                .iter()
                .position(|&s| s == t)
                .map(|i| self.ys[i].clone());
        }
        let forward = self.t_final() >= self.t_start();
        // index of the step whose span contains t
        let idx = if forward {
            self.dense.partition_point(|s| s.t + s.h < t)
        } else {
            self.dense.partition_point(|s| s.t + s.h > t)
        };
        let step = &self.dense[idx.min(self.dense.len() - 1)];
        let mut out = vec![0.0; self.ys[0].len()];
        step.eval_into(t, &mut out);
        Some(out)
    }

    /// `n` evenly spaced samples over the integrated span, endpoints included.
    pub fn sample(&self, n: usize) -> Vec<(f64, Vec<f64>)> {
        let (a, b) = (self.t_start(), self.t_final());
        if n < 2 || self.dense.is_empty() {
            return self.ts.iter().cloned().zip(self.ys.iter().cloned()).collect();
        }
        (0..n)
            .map(|i| {
                let t = if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 };
                (t, self.eval(t).expect("sample inside span"))
            })
            .collect()
    }
}
