//! Derivative-free minimisation by the Nelder–Mead simplex method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when both the simplex diameter and the spread of function
    /// values are at most `tol`.
    pub tol: f64,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: f64,
    /// Rebuild the simplex once around the incumbent after convergence.
    pub restart: bool,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            initial_step: 0.5,
            restart: true,
        }
    }
}

impl NelderMeadOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::invalid("initial_step must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub best_value: f64,
    pub best_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

struct Simplex<'a, F> {
    f: &'a mut F,
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    n_evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Simplex<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.n_evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.points = idx.iter().map(|&i| self.points[i].clone()).collect();
        self.values = idx.iter().map(|&i| self.values[i]).collect();
    }

    fn diameter(&self) -> f64 {
        let best = &self.points[0];
        self.points[1..]
            .iter()
            .map(|p| {
                p.iter()
                    .zip(best)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn spread(&self) -> f64 {
        let worst = *self.values.last().expect("nonempty simplex");
        if worst == self.values[0] {
            0.0
        } else {
            worst - self.values[0]
        }
    }

    fn rebuild(&mut self, x0: &[f64], f0: f64, step: f64) {
        self.points = vec![x0.to_vec()];
        self.values = vec![f0];
        for i in 0..x0.len() {
            let mut p = x0.to_vec();
            p[i] += step;
            let v = self.eval(&p);
            self.points.push(p);
            self.values.push(v);
        }
        self.sort();
    }

    fn step(&mut self) {
        let n = self.points.len() - 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| self.points[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let worst = self.points[n].clone();
        let xr = along(REFLECT, &worst);
        let fr = self.eval(&xr);
        if fr < self.values[0] {
            let xe = along(EXPAND, &worst);
            let fe = self.eval(&xe);
            if fe < fr {
                self.replace_worst(xe, fe);
            } else {
                self.replace_worst(xr, fr);
            }
        } else if fr < self.values[n - 1] {
            self.replace_worst(xr, fr);
        } else {
            let (xc, fc, accept) = if fr < self.values[n] {
                let xc = along(CONTRACT * REFLECT, &worst);
                let fc = self.eval(&xc);
                (xc, fc, fc <= fr)
            } else {
                let xc = along(-CONTRACT, &worst);
                let fc = self.eval(&xc);
                (xc, fc, fc < self.values[n])
            };
            if accept {
                self.replace_worst(xc, fc);
            } else {
                let best = self.points[0].clone();
                for i in 1..=n {
                    let p: Vec<f64> = best
                        .iter()
                        .zip(&self.points[i])
                        .map(|(b, x)| b + SHRINK * (x - b))
                        .collect();
                    self.values[i] = self.eval(&p);
                    self.points[i] = p;
                }
            }
        }
        self.sort();
    }

    fn replace_worst(&mut self, x: Vec<f64>, v: f64) {
        let n = self.points.len() - 1;
        self.points[n] = x;
        self.values[n] = v;
    }
}

/// Minimises `f` from `init`. Non-finite objective values are treated as
/// `+inf`, so the returned point is never worse than `init`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    init: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult> {
    opts.validate()?;
    if init.is_empty() {
        return Err(Error::invalid("nothing to optimise"));
    }
    let mut s = Simplex {
        f: &mut f,
        points: Vec::new(),
        values: Vec::new(),
        n_evals: 0,
    };
    let f0 = s.eval(init);
    if !f0.is_finite() {
        return Err(Error::invalid(
            "objective is not finite at the initial point",
        ));
    }
    s.rebuild(init, f0, opts.initial_step);

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut restarts_left = usize::from(opts.restart);
    let mut converged = false;
    while iterations < opts.max_iter {
        if s.diameter() <= opts.tol && s.spread() <= opts.tol {
            if restarts_left == 0 {
                converged = true;
                break;
            }
            restarts_left -= 1;
            let (x0, v0) = (s.points[0].clone(), s.values[0]);
            s.rebuild(&x0, v0, opts.initial_step);
            continue;
        }
        s.step();
        iterations += 1;
        trace.push(TraceEntry {
            iteration: iterations,
            best_value: s.values[0],
            best_point: s.points[0].clone(),
        });
    }
    if !converged && s.diameter() <= opts.tol && s.spread() <= opts.tol && restarts_left == 0 {
        converged = true;
    }
    Ok(NelderMeadResult {
        x: s.points[0].clone(),
        value: s.values[0],
        n_evals: s.n_evals,
        iterations,
        converged,
        trace,
    })
}
