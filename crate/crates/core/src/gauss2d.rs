//! Continuous 2-D tracking demo: an object doing a Gaussian random walk from
//! the origin, observed by a sharp Gaussian sensor.
//!
//! Both axes are independent, so every filter runs per axis. Weights are
//! densities and are handled in log space.

use std::f64::consts::PI;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::experiment::fmt_sig9;
use crate::rng::{particle_stream, resample_stream};
use crate::sampler::{effective_sample_size, resample, Algorithm};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gauss2dModel {
    /// Per-axis standard deviation of one random-walk step.
    pub q: f64,
    /// Per-axis standard deviation of the observation noise.
    pub r: f64,
    /// Only used for reporting.
    pub disc_radius: f64,
}

impl Default for Gauss2dModel {
    fn default() -> Self {
        Gauss2dModel {
            q: 1.0,
            r: 0.05,
            disc_radius: 10.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum Gauss2dError {
    #[error("standard deviations must be positive and finite (q = {q}, r = {r})")]
    InvalidModel { q: f64, r: f64 },
    #[error("algorithm {0} is not supported by the 2-D tracker; use LW, SOF or ERSOF")]
    UnsupportedAlgorithm(Algorithm),
    #[error("sample count must be at least 1")]
    NoSamples,
}

impl Gauss2dModel {
    pub fn new(q: f64, r: f64) -> Result<Self, Gauss2dError> {
        let m = Gauss2dModel {
            q,
            r,
            ..Default::default()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), Gauss2dError> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if ok(self.q) && ok(self.r) {
            Ok(())
        } else {
            Err(Gauss2dError::InvalidModel {
                q: self.q,
                r: self.r,
            })
        }
    }
}

#[inline]
pub fn log_normal_density(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - d * d / (2.0 * var)
}

fn log_density_2d(x: Point, mean: Point, var: f64) -> f64 {
    log_normal_density(x[0], mean[0], var) + log_normal_density(x[1], mean[1], var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory2d {
    pub positions: Vec<Point>,
    pub observations: Vec<Point>,
}

/// x_0 at the origin, x_{t+1} = x_t + N(0, q²I), z_t = x_t + N(0, r²I).
pub fn simulate_truth_2d<R: Rng + ?Sized>(
    model: &Gauss2dModel,
    horizon: usize,
    rng: &mut R,
) -> Trajectory2d {
    let mut positions = Vec::with_capacity(horizon + 1);
    let mut observations = Vec::with_capacity(horizon + 1);
    let mut x = [0.0, 0.0];
    for t in 0..=horizon {
        if t > 0 {
            for a in &mut x {
                *a += model.q * rng.sample::<f64, _>(StandardNormal);
            }
        }
        positions.push(x);
        let mut z = x;
        for a in &mut z {
            *a += model.r * rng.sample::<f64, _>(StandardNormal);
        }
        observations.push(z);
    }
    Trajectory2d {
        positions,
        observations,
    }
}

/// Per-axis parameters of the reversed linear-Gaussian slice:
/// e_t | x_{t-1} ~ N(x_{t-1}, q² + r²) and
/// x_t | x_{t-1}, e_t ~ N((r² x_{t-1} + q² e_t) / (q² + r²), q² r² / (q² + r²)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReversedGaussian {
    pub q2: f64,
    pub r2: f64,
    pub predictive_var: f64,
    pub reversed_var: f64,
}

impl ReversedGaussian {
    pub fn reversed_mean(&self, x_prev: f64, e: f64) -> f64 {
        (self.r2 * x_prev + self.q2 * e) / (self.q2 + self.r2)
    }

    pub fn predictive_log_density(&self, e: f64, x_prev: f64) -> f64 {
        log_normal_density(e, x_prev, self.predictive_var)
    }

    pub fn reversed_log_density(&self, x: f64, x_prev: f64, e: f64) -> f64 {
        log_normal_density(x, self.reversed_mean(x_prev, e), self.reversed_var)
    }
}

pub fn gaussian_reversed_conditionals(model: &Gauss2dModel) -> ReversedGaussian {
    let q2 = model.q * model.q;
    let r2 = model.r * model.r;
    ReversedGaussian {
        q2,
        r2,
        predictive_var: q2 + r2,
        reversed_var: q2 * r2 / (q2 + r2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanStep {
    pub mean: Point,
    /// Per-axis posterior variance (identical on both axes).
    pub var: f64,
}

/// Exact per-axis filter. The start is known, so slice 0 has mean 0 and
/// variance 0; each later slice predicts with q² and updates with z_t.
pub fn kalman_oracle(model: &Gauss2dModel, observations: &[Point]) -> Vec<KalmanStep> {
    let q2 = model.q * model.q;
    let r2 = model.r * model.r;
    let mut mean = [0.0, 0.0];
    let mut var = 0.0;
    let mut out = Vec::with_capacity(observations.len());
    for (t, z) in observations.iter().enumerate() {
        if t > 0 {
            let prior_var = var + q2;
            let gain = prior_var / (prior_var + r2);
            for a in 0..2 {
                mean[a] += gain * (z[a] - mean[a]);
            }
            var = (1.0 - gain) * prior_var;
        }
        out.push(KalmanStep { mean, var });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackStep {
    pub mean: Point,
    pub ess: f64,
}

/// Particle positions and normalized weights at one slice.
pub struct Snapshot<'a> {
    pub t: usize,
    pub positions: &'a [Point],
    pub weights: &'a [f64],
}

fn normalized(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn weighted_mean(positions: &[Point], weights: &[f64]) -> Point {
    let mut m = [0.0, 0.0];
    for (p, &w) in positions.iter().zip(weights) {
        m[0] += w * p[0];
        m[1] += w * p[1];
    }
    m
}

fn move_particles<F>(positions: &[Point], seed: u64, t: usize, f: F) -> Vec<Point>
where
    F: Fn(&Point, &mut crate::rng::StreamRng) -> Point + Sync,
{
    positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| f(p, &mut particle_stream(seed, t, i)))
        .collect()
}

fn gaussian_step<R: Rng + ?Sized>(mean: Point, sd: f64, rng: &mut R) -> Point {
    [
        mean[0] + sd * rng.sample::<f64, _>(StandardNormal),
        mean[1] + sd * rng.sample::<f64, _>(StandardNormal),
    ]
}

pub fn particle_track_2d(
    algorithm: Algorithm,
    model: &Gauss2dModel,
    observations: &[Point],
    n: usize,
    seed: u64,
) -> Result<Vec<TrackStep>, Gauss2dError> {
    particle_track_2d_with(algorithm, model, observations, n, seed, |_| {})
}

/// Runs LW, SOF or ER/SOF on the observations and reports the posterior
/// mean and effective sample size per slice. `on_snapshot` receives the
/// weighted particle cloud of every slice.
///
/// The reported ESS is that of the accumulated weights for LW, of the
/// slice likelihoods for SOF, and of the predictive weights used for
/// resampling for ER/SOF.
pub fn particle_track_2d_with(
    algorithm: Algorithm,
    model: &Gauss2dModel,
    observations: &[Point],
    n: usize,
    seed: u64,
    mut on_snapshot: impl FnMut(Snapshot<'_>),
) -> Result<Vec<TrackStep>, Gauss2dError> {
    model.validate()?;
    if n == 0 {
        return Err(Gauss2dError::NoSamples);
    }
    if algorithm == Algorithm::Er {
        return Err(Gauss2dError::UnsupportedAlgorithm(algorithm));
    }
    let r2 = model.r * model.r;
    let rev = gaussian_reversed_conditionals(model);
    let reversed_sd = rev.reversed_var.sqrt();
    let mut positions: Vec<Point> = vec![[0.0, 0.0]; n];
    let mut log_w = vec![0.0; n];
    let mut out = Vec::with_capacity(observations.len());
    for (t, &z) in observations.iter().enumerate() {
        let step = match algorithm {
            Algorithm::Lw | Algorithm::Sof => {
                if t > 0 {
                    positions = move_particles(&positions, seed, t, |p, rng| {
                        gaussian_step(*p, model.q, rng)
                    });
                }
                for (lw, p) in log_w.iter_mut().zip(&positions) {
                    let l = log_density_2d(z, *p, r2);
                    *lw = if algorithm == Algorithm::Lw {
                        *lw + l
                    } else {
                        l
                    };
                }
                let w = normalized(&log_w);
                on_snapshot(Snapshot {
                    t,
                    positions: &positions,
                    weights: &w,
                });
                let step = TrackStep {
                    mean: weighted_mean(&positions, &w),
                    ess: effective_sample_size(&w),
                };
                if algorithm == Algorithm::Sof {
                    let idx = resample(&w, n, &mut resample_stream(seed, t))
                        .expect("densities are positive");
                    positions = idx.into_iter().map(|i| positions[i]).collect();
                    log_w.fill(0.0);
                }
                step
            }
            _ => {
                // ER/SOF. Slice 0 is the known origin, so there is nothing to
                // weight or move.
                let mut ess = n as f64;
                if t > 0 {
                    let pred: Vec<f64> = positions
                        .iter()
                        .map(|p| log_density_2d(z, *p, rev.predictive_var))
                        .collect();
                    let w = normalized(&pred);
                    ess = effective_sample_size(&w);
                    let idx = resample(&w, n, &mut resample_stream(seed, t))
                        .expect("densities are positive");
                    let survivors: Vec<Point> = idx.into_iter().map(|i| positions[i]).collect();
                    positions = move_particles(&survivors, seed, t, |p, rng| {
                        let mean = [rev.reversed_mean(p[0], z[0]), rev.reversed_mean(p[1], z[1])];
                        gaussian_step(mean, reversed_sd, rng)
                    });
                }
                let w = vec![1.0 / n as f64; n];
                on_snapshot(Snapshot {
                    t,
                    positions: &positions,
                    weights: &w,
                });
                TrackStep {
                    mean: weighted_mean(&positions, &w),
                    ess,
                }
            }
        };
        out.push(step);
    }
    Ok(out)
}

pub const TRACK_HEADER: &str = "t,true_x,true_y,obs_x,obs_y,est_x,est_y,kalman_x,kalman_y,ess";
pub const SNAPSHOT_HEADER: &str = "t,particle,x,y,weight";

pub fn write_track_csv<W: Write + ?Sized>(
    w: &mut W,
    truth: &Trajectory2d,
    track: &[TrackStep],
    kalman: &[KalmanStep],
) -> io::Result<()> {
    writeln!(w, "{TRACK_HEADER}")?;
    for t in 0..track.len() {
        let (x, z, e, k) = (
            truth.positions[t],
            truth.observations[t],
            track[t],
            kalman[t],
        );
        writeln!(
            w,
            "{t},{},{},{},{},{},{},{},{},{}",
            fmt_sig9(x[0]),
            fmt_sig9(x[1]),
            fmt_sig9(z[0]),
            fmt_sig9(z[1]),
            fmt_sig9(e.mean[0]),
            fmt_sig9(e.mean[1]),
            fmt_sig9(k.mean[0]),
            fmt_sig9(k.mean[1]),
            fmt_sig9(e.ess)
        )?;
    }
    Ok(())
}

pub fn write_snapshot_rows<W: Write + ?Sized>(w: &mut W, snap: &Snapshot<'_>) -> io::Result<()> {
    for (i, (p, wt)) in snap.positions.iter().zip(snap.weights).enumerate() {
        writeln!(
            w,
            "{},{i},{},{},{}",
            snap.t,
            fmt_sig9(p[0]),
            fmt_sig9(p[1]),
            fmt_sig9(*wt)
        )?;
    }
    Ok(())
}
