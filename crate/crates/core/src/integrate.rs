//! Explicit Runge-Kutta integration with trajectory bookkeeping.

use std::collections::BTreeMap;

use crate::error::{Error, IntegrationFailure, Result};

/// Relative step size (of the span) below which adaptive integration gives up.
const UNDERFLOW_FACTOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Rk4 { step: f64 },
    Rk45 { abs_tol: f64, rel_tol: f64, max_step: Option<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOptions {
    pub method: Method,
    /// Emit every `sample_stride`-th accepted step; the final state is always emitted.
    pub sample_stride: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions::rk45(1e-10, 1e-10)
    }
}

impl IntegratorOptions {
    pub fn rk4(step: f64) -> Self {
        IntegratorOptions {
            method: Method::Rk4 { step },
            sample_stride: 1,
        }
    }

    pub fn rk45(abs_tol: f64, rel_tol: f64) -> Self {
        IntegratorOptions {
            method: Method::Rk45 {
                abs_tol,
                rel_tol,
                max_step: None,
            },
            sample_stride: 1,
        }
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        if let Method::Rk45 { max_step, .. } = &mut self.method {
            *max_step = Some(h);
        }
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride;
        self
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let valid = match self.method {
            Method::Rk4 { step } => ok(step),
            Method::Rk45 {
                abs_tol,
                rel_tol,
                max_step,
            } => ok(abs_tol) && ok(rel_tol) && max_step.is_none_or(ok),
        };
        if !valid {
            return Err(Error::InvalidInput(format!("integrator settings must be positive: {self:?}")));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidInput("sample stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sampled solution of an ODE.
///
/// `derivatives[j]` is the right-hand side at `states[j]`; it makes
/// [`Trajectory::interpolate`] a cubic Hermite interpolant.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub derivatives: Vec<Vec<f64>>,
    pub diagnostics: BTreeMap<String, Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// Evaluates `f` at every sample and stores the values under `name`.
    pub fn record<F>(&mut self, name: &str, mut f: F) -> Result<()>
    where
        F: FnMut(f64, &[f64]) -> Result<f64>,
    {
        let values = self
            .times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| f(t, s))
            .collect::<Result<Vec<_>>>()?;
        self.diagnostics.insert(name.to_string(), values);
        Ok(())
    }

    pub fn diagnostic(&self, name: &str) -> Option<&[f64]> {
        self.diagnostics.get(name).map(Vec::as_slice)
    }

    /// State at time `t` inside the sampled range; `None` outside it.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        if t < first || t > last {
            return None;
        }
        let j = self.times.partition_point(|&s| s <= t);
        if j == 0 {
            return Some(self.states[0].clone());
        }
        let i = j - 1;
        if i + 1 == self.len() || self.times[i] == t {
            return Some(self.states[i].clone());
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (y0, y1) = (&self.states[i], &self.states[i + 1]);
        if self.derivatives.len() != self.len() {
            return Some(y0.iter().zip(y1).map(|(a, b)| a + s * (b - a)).collect());
        }
        let (d0, d1) = (&self.derivatives[i], &self.derivatives[i + 1]);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        Some(
            (0..y0.len())
                .map(|k| h00 * y0[k] + h10 * h * d0[k] + h01 * y1[k] + h11 * h * d1[k])
                .collect(),
        )
    }
}

struct Recorder {
    traj: Trajectory,
    stride: usize,
    accepted: usize,
}

impl Recorder {
    fn new(t0: f64, s0: &[f64], d0: Vec<f64>, stride: usize) -> Self {
        Recorder {
            traj: Trajectory {
                times: vec![t0],
                states: vec![s0.to_vec()],
                derivatives: vec![d0],
                diagnostics: BTreeMap::new(),
            },
            stride,
            accepted: 0,
        }
    }

    fn accept(&mut self, t: f64, y: &[f64], dy: &[f64], last: bool) {
        self.accepted += 1;
        if last || self.accepted.is_multiple_of(self.stride) {
            self.traj.times.push(t);
            self.traj.states.push(y.to_vec());
            self.traj.derivatives.push(dy.to_vec());
        }
    }

    fn fail(self, error: Error) -> Error {
        IntegrationFailure {
            error,
            partial: self.traj,
        }
        .into()
    }
}

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        if *c != 0.0 {
            for (o, v) in out.iter_mut().zip(k.iter()) {
                *o += h * c * v;
            }
        }
    }
    out
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Integrates `s' = rhs(t, s)` from `t_span.0` to `t_span.1`.
///
/// Failures after the first step are returned as [`Error::Integration`]
/// carrying every state accepted so far.
pub fn integrate<F>(mut rhs: F, s0: &[f64], t_span: (f64, f64), opts: &IntegratorOptions) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    opts.validate()?;
    let (t0, t1) = t_span;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidInput(format!("time span must satisfy t0 < t1, got ({t0}, {t1})")));
    }
    if !all_finite(s0) {
        return Err(Error::InvalidInput("initial state is not finite".into()));
    }
    let d0 = rhs(t0, s0)?;
    if d0.len() != s0.len() {
        return Err(Error::InputShape {
            what: "right-hand side output",
            expected: s0.len(),
            got: d0.len(),
        });
    }
    let rec = Recorder::new(t0, s0, d0, opts.sample_stride);
    match opts.method {
        Method::Rk4 { step } => rk4(&mut rhs, rec, t_span, step),
        Method::Rk45 {
            abs_tol,
            rel_tol,
            max_step,
        } => rk45(&mut rhs, rec, t_span, abs_tol, rel_tol, max_step.unwrap_or((t1 - t0) / 100.0)),
    }
}

fn rk4<F>(rhs: &mut F, mut rec: Recorder, (t0, t1): (f64, f64), step: f64) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n_steps = ((t1 - t0) / step).ceil().max(1.0) as usize;
    let mut y = rec.traj.states[0].clone();
    let mut k1 = rec.traj.derivatives[0].clone();
    let mut t = t0;
    for j in 0..n_steps {
        let last = j + 1 == n_steps;
        let t_next = if last { t1 } else { t0 + (j + 1) as f64 * step };
        let h = t_next - t;
        let result = (|| {
            let k2 = rhs(t + 0.5 * h, &axpy(&y, h, &[(0.5, &k1)]))?;
            let k3 = rhs(t + 0.5 * h, &axpy(&y, h, &[(0.5, &k2)]))?;
            let k4 = rhs(t + h, &axpy(&y, h, &[(1.0, &k3)]))?;
            let y_next = axpy(
                &y,
                h,
                &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
            );
            if !all_finite(&y_next) {
                return Err(Error::BlowUp { t });
            }
            let d_next = rhs(t_next, &y_next)?;
            if !all_finite(&d_next) {
                return Err(Error::BlowUp { t });
            }
            Ok((y_next, d_next))
        })();
        match result {
            Ok((y_next, d_next)) => {
                rec.accept(t_next, &y_next, &d_next, last);
                y = y_next;
                k1 = d_next;
                t = t_next;
            }
            Err(e) => return Err(rec.fail(e)),
        }
    }
    Ok(rec.traj)
}

// a remainder shorter than this fraction of the step is merged into it
const SLIVER: f64 = 1e-6;

// Runge-Kutta-Fehlberg 4(5) tableau
const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const A: [[f64; 5]; 6] = [
    [0.0; 5],
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0];
const B5: [f64; 6] = [16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0];

fn rk45<F>(
    rhs: &mut F,
    mut rec: Recorder,
    (t0, t1): (f64, f64),
    abs_tol: f64,
    rel_tol: f64,
    max_step: f64,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let span = t1 - t0;
    let h_min = UNDERFLOW_FACTOR * span;
    let mut y = rec.traj.states[0].clone();
    let mut k1 = rec.traj.derivatives[0].clone();
    let mut t = t0;
    let mut h = max_step.min(span);
    let mut last_was_blowup = false;
    while t < t1 {
        if h < h_min {
            let e = if last_was_blowup {
                Error::BlowUp { t }
            } else {
                Error::StepUnderflow { t, h }
            };
            return Err(rec.fail(e));
        }
        let last = t + h * (1.0 + SLIVER) >= t1;
        let h_try = if last { t1 - t } else { h };
        let stages = (|| {
            let mut k: Vec<Vec<f64>> = vec![k1.clone()];
            for s in 1..6 {
                let terms: Vec<(f64, &[f64])> =
                    (0..s).map(|j| (A[s][j], k[j].as_slice())).collect();
                let ks = rhs(t + C[s] * h_try, &axpy(&y, h_try, &terms))?;
                k.push(ks);
            }
            Ok::<_, Error>(k)
        })();
        let k = match stages {
            Ok(k) => k,
            Err(e) => return Err(rec.fail(e)),
        };
        let terms5: Vec<(f64, &[f64])> = (0..6).map(|j| (B5[j], k[j].as_slice())).collect();
        let terms4: Vec<(f64, &[f64])> = (0..6).map(|j| (B4[j], k[j].as_slice())).collect();
        let y5 = axpy(&y, h_try, &terms5);
        let y4 = axpy(&y, h_try, &terms4);
        if !all_finite(&y5) || !all_finite(&y4) {
            last_was_blowup = true;
            h = 0.2 * h_try;
            continue;
        }
        let diff: Vec<f64> = y5.iter().zip(&y4).map(|(a, b)| a - b).collect();
        let scale = abs_tol + rel_tol * inf_norm(&y).max(inf_norm(&y5));
        let err = inf_norm(&diff) / scale;
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err <= 1.0 {
            let t_next = if last { t1 } else { t + h_try };
            let d_next = match rhs(t_next, &y5) {
                Ok(d) => d,
                Err(e) => return Err(rec.fail(e)),
            };
            if !all_finite(&d_next) {
                return Err(rec.fail(Error::BlowUp { t }));
            }
            rec.accept(t_next, &y5, &d_next, last);
            y = y5;
            k1 = d_next;
            t = t_next;
            last_was_blowup = false;
            h = (h_try * factor).min(max_step);
            if last {
                break;
            }
        } else {
            last_was_blowup = false;
            h = h_try * factor;
        }
    }
    Ok(rec.traj)
}

/// Result of a step-refinement study.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    /// Least-squares slope of `log(error)` against `log(step)`.
    pub order: f64,
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Set when the smallest error is within a few hundred ulps of the
    /// solution scale, where the slope is no longer meaningful.
    pub roundoff_floor: bool,
}

/// Observed order of fixed-step RK4 on `steps`.
///
/// Errors are final-state infinity norms against `reference`, or, when that is
/// `None`, against RK4 with one eighth of the smallest step.
pub fn convergence_order<F>(
    mut rhs: F,
    s0: &[f64],
    t_span: (f64, f64),
    steps: &[f64],
    reference: Option<&[f64]>,
) -> Result<ConvergenceReport>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if steps.len() < 2 {
        return Err(Error::InvalidInput("convergence study needs at least two step sizes".into()));
    }
    let reference = match reference {
        Some(r) => r.to_vec(),
        None => {
            let h = steps.iter().cloned().fold(f64::INFINITY, f64::min) / 8.0;
            integrate(&mut rhs, s0, t_span, &IntegratorOptions::rk4(h))?
                .states
                .pop()
                .expect("trajectory has at least one state")
        }
    };
    let mut errors = Vec::with_capacity(steps.len());
    for &h in steps {
        let traj = integrate(&mut rhs, s0, t_span, &IntegratorOptions::rk4(h))?;
        let end = traj.last_state().expect("non-empty trajectory");
        let e = end.iter().zip(&reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        errors.push(e);
    }
    let scale = 1.0 + inf_norm(&reference);
    let min_err = errors.iter().cloned().fold(f64::INFINITY, f64::min);
    let roundoff_floor = min_err < 500.0 * f64::EPSILON * scale;
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(&errors)
        .map(|(h, e)| (h.ln(), e.max(f64::MIN_POSITIVE).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Ok(ConvergenceReport {
        order: sxy / sxx,
        steps: steps.to_vec(),
        errors,
        roundoff_floor,
    })
}

/// Largest deviation between two trajectories, with the time at which it occurs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deviation {
    pub max_dev: f64,
    pub at_time: f64,
}

/// Compares `a` with `b` at the sample times of `a` that fall inside `b`'s range.
///
/// `b` is interpolated in its own coordinates and then mapped by `projection`
/// into the layout of `a`.
pub fn trajectory_compare<P>(a: &Trajectory, b: &Trajectory, mut projection: P) -> Result<Deviation>
where
    P: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let (Some(&b0), Some(&b1)) = (b.times.first(), b.times.last()) else {
        return Err(Error::Comparison("empty trajectory".into()));
    };
    let mut worst = Deviation {
        max_dev: 0.0,
        at_time: f64::NAN,
    };
    let mut compared = 0;
    // tolerate endpoint roundoff between independently stepped runs
    let slack = 1e-12 * (b1 - b0).abs().max(1.0);
    for (&t, sa) in a.times.iter().zip(&a.states) {
        if t < b0 - slack || t > b1 + slack {
            continue;
        }
        let sb = b
            .interpolate(t.clamp(b0, b1))
            .ok_or_else(|| Error::Comparison(format!("cannot interpolate at t = {t}")))?;
        let pb = projection(t, &sb)?;
        if pb.len() != sa.len() {
            return Err(Error::Comparison(format!(
                "projected state has length {} but compared state has length {}",
                pb.len(),
                sa.len()
            )));
        }
        let dev = sa.iter().zip(&pb).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        compared += 1;
        if dev > worst.max_dev || worst.at_time.is_nan() || dev.is_nan() {
            worst = Deviation {
                max_dev: dev,
                at_time: t,
            };
        }
    }
    if compared == 0 {
        return Err(Error::Comparison("time ranges do not overlap".into()));
    }
    Ok(worst)
}
