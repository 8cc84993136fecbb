//! Closed-loop evaluation: boundedness metrics, multi-trajectory sweeps,
//! input-noise robustness statistics and the comparison report.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{perturb_state, sample_initial_error, substream, DEFAULT_BLOCK_SCALES};
use crate::error::{Error, Result};
use crate::expert::{weighted_error, ReferenceOrbit};
use crate::imitation::PolicyController;
use crate::integrate::{simulate, Controller, Record};
use crate::policy::NeuralPolicy;

/// Minimum series length accepted by [`boundedness_fit`].
pub const MIN_SERIES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundednessMetrics {
    /// Initial exponential decay rate (1/period).
    pub gamma: f64,
    /// First period after which the series stays within `b`.
    pub t_t: usize,
    /// Ultimate bound; absent when no bound can be characterized.
    pub b: Option<f64>,
    pub bounded: bool,
}

/// Least-squares slope of `y` against its index.
pub fn ls_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// `b` is the maximum over the last half of the series, `t_T` the first index
/// after which the series never exceeds `b`, and `gamma` the largest rate
/// with `e_0 exp(-gamma t) >= e_t` on `[0, t_T]`. The series is declared
/// unbounded when it is not finite, or when its tail maximum is the final
/// sample while the tail trends upward.
pub fn boundedness_fit(series: &[f64]) -> Result<BoundednessMetrics> {
    let n = series.len();
    if n < MIN_SERIES {
        return Err(Error::Invalid(format!("series of {n} periods is shorter than {MIN_SERIES}")));
    }
    let tail = &series[n / 2..];
    let finite = series.iter().all(|v| v.is_finite());
    let (arg, b) = tail
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v >= acc.1 { (i, *v) } else { acc });
    let increasing = ls_slope(tail) > 0.0;
    let bounded = finite && !(arg + 1 == tail.len() && increasing);
    let t_t = if bounded {
        let mut k = n;
        while k > 0 && series[k - 1] <= b {
            k -= 1;
        }
        k
    } else {
        n - 1
    };
    let e0 = series[0];
    let mut gamma = f64::INFINITY;
    for (t, v) in series.iter().enumerate().take(t_t + 1).skip(1) {
        let g = if *v > 0.0 && e0 > 0.0 { -(v / e0).ln() / t as f64 } else if *v > 0.0 { 0.0 } else { f64::INFINITY };
        gamma = gamma.min(g);
    }
    if !gamma.is_finite() || gamma.is_nan() {
        gamma = 0.0;
    }
    Ok(BoundednessMetrics { gamma: gamma.max(0.0), t_t, b: bounded.then_some(b), bounded })
}

/// Per-trajectory weighted error series and their pointwise maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub series: Vec<Vec<f64>>,
    pub envelope: Vec<f64>,
    pub metrics: BoundednessMetrics,
    pub failures: usize,
}

impl SweepResult {
    /// `period,envelope,median` rows.
    pub fn envelope_csv(&self) -> String {
        let mut s = String::from("period,envelope,median\n");
        for (k, e) in self.envelope.iter().enumerate() {
            let col: Vec<f64> = self.series.iter().map(|t| t[k]).collect();
            let _ = writeln!(s, "{k},{e},{}", quantiles(&col)[2]);
        }
        s
    }
}

/// Pointwise maximum; independent of trajectory order.
pub fn envelope(series: &[Vec<f64>]) -> Vec<f64> {
    let len = series.iter().map(|s| s.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| series.iter().map(|s| s.get(k).copied().unwrap_or(f64::INFINITY)).fold(0.0, f64::max))
        .collect()
}

/// Closed-loop period-boundary weighted errors; after a failed simulation the
/// remaining entries are infinite.
pub fn closed_loop_series<C: Controller>(start_error: &crate::expert::StateError, orbit: &ReferenceOrbit, controller: &C, horizon: usize) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; horizon + 1];
    let Ok(s0) = perturb_state(orbit, start_error, &orbit.w_x) else { return out };
    let res = simulate(&s0, 0.0, horizon, controller, &orbit.model, &orbit.sim_options(Record::PeriodBoundaries));
    for (k, s) in res.trajectory.states.iter().enumerate() {
        let n = weighted_error(s, 0.0, orbit, &orbit.w_x).1;
        out[k] = if n.is_finite() { n } else { f64::INFINITY };
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub n_traj: usize,
    pub horizon: usize,
    pub seed: u64,
    pub block_scales: [f64; 4],
    /// Weighted-scale standard deviation of policy input noise.
    pub input_noise: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { n_traj: 256, horizon: 60, seed: 3, block_scales: DEFAULT_BLOCK_SCALES, input_noise: 0.0 }
    }
}

fn run_series(policy: &NeuralPolicy, orbit: &ReferenceOrbit, opts: &SweepOptions) -> Vec<Vec<f64>> {
    (0..opts.n_traj)
        .into_par_iter()
        .map(|j| {
            let e0 = sample_initial_error(&mut substream(opts.seed, j as u64), &opts.block_scales);
            let mut ctl = PolicyController::new(policy, orbit);
            ctl.input_noise = opts.input_noise;
            ctl.noise_seed = opts.seed.wrapping_mul(0x2545_f491).wrapping_add(j as u64 + 1);
            closed_loop_series(&e0, orbit, &ctl, opts.horizon)
        })
        .collect()
}

/// Closed-loop runs from sampled errors in the unit weighted ball; metrics are
/// fitted on the worst-case envelope.
pub fn sweep(policy: &NeuralPolicy, orbit: &ReferenceOrbit, opts: &SweepOptions) -> Result<SweepResult> {
    let series = run_series(policy, orbit, opts);
    let failures = series.iter().filter(|s| s.iter().any(|v| !v.is_finite())).count();
    let env = envelope(&series);
    let metrics = boundedness_fit(&env)?;
    Ok(SweepResult { series, envelope: env, metrics, failures })
}

/// `[min, q25, median, q75, max]` with linear interpolation.
pub fn quantiles(values: &[f64]) -> [f64; 5] {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        if v.is_empty() {
            return f64::NAN;
        }
        let pos = p * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        if lo == hi {
            v[lo]
        } else {
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        }
    };
    [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)]
}

/// Number of initial periods left out of the noise statistics.
pub const NOISE_SKIP: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub periods: Vec<usize>,
    pub stats: Vec<[f64; 5]>,
    /// Least-squares slope of the median over the reported periods.
    pub median_slope: f64,
    pub sweep: SweepResult,
}

impl NoiseStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("period,min,q25,median,q75,max\n");
        for (p, q) in self.periods.iter().zip(&self.stats) {
            let _ = writeln!(s, "{p},{},{},{},{},{}", q[0], q[1], q[2], q[3], q[4]);
        }
        s
    }
}

/// Sweep with Gaussian noise on the policy input, summarized per period from
/// period 10 on.
pub fn noise_sweep(policy: &NeuralPolicy, orbit: &ReferenceOrbit, sigma: f64, opts: &SweepOptions) -> Result<NoiseStats> {
    let mut o = opts.clone();
    o.input_noise = sigma;
    let sw = sweep(policy, orbit, &o)?;
    let periods: Vec<usize> = (NOISE_SKIP..=o.horizon).collect();
    let stats: Vec<[f64; 5]> =
        periods.iter().map(|k| quantiles(&sw.series.iter().map(|s| s[*k]).collect::<Vec<_>>())).collect();
    let medians: Vec<f64> = stats.iter().map(|q| q[2]).collect();
    Ok(NoiseStats { periods, median_slope: ls_slope(&medians), stats, sweep: sw })
}

/// Median wall time of one policy evaluation (seconds).
pub fn policy_latency(policy: &NeuralPolicy, repeats: usize) -> f64 {
    let x = vec![0.1; policy.arch.n_in];
    let mut times: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(policy.forward(std::hint::black_box(&x)).expect("input width"));
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.total_cmp(b));
    times[times.len() / 2]
}

/// One column of the comparison report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoResult {
    pub algorithm: String,
    pub wall_time_s: f64,
    pub metrics: BoundednessMetrics,
    pub zero_output_norm: f64,
    pub mse: f64,
    pub expert_calls: usize,
    pub u_layout_version: u32,
}

const ORDER: [&str; 4] = ["bc", "dagger", "dart", "coil"];

fn ordered(results: &[AlgoResult]) -> Vec<&AlgoResult> {
    let mut v: Vec<&AlgoResult> = results.iter().collect();
    v.sort_by_key(|r| ORDER.iter().position(|a| *a == r.algorithm).unwrap_or(ORDER.len()));
    v
}

fn fmt_b(m: &BoundednessMetrics) -> String {
    match m.b {
        Some(b) if m.bounded => format!("{b:.4}"),
        _ => "N/A".into(),
    }
}

/// Comparison table as CSV and as aligned text. Algorithms without results
/// are left out.
pub fn compare_report(results: &[AlgoResult]) -> Result<(String, String)> {
    if let Some(r) = results.iter().find(|r| r.u_layout_version != results[0].u_layout_version) {
        return Err(Error::Invalid(format!("mixed u layout versions ({} and {})", results[0].u_layout_version, r.u_layout_version)));
    }
    let cols = ordered(results);
    let rows: Vec<(&str, Vec<String>)> = vec![
        ("computation_time_min", cols.iter().map(|r| format!("{:.2}", r.wall_time_s / 60.0)).collect()),
        ("ultimate_bound_b", cols.iter().map(|r| fmt_b(&r.metrics)).collect()),
        ("initial_decay_rate", cols.iter().map(|r| format!("{:.4}", r.metrics.gamma)).collect()),
        ("zero_output_norm", cols.iter().map(|r| format!("{:.4e}", r.zero_output_norm)).collect()),
        ("training_mse", cols.iter().map(|r| format!("{:.4e}", r.mse)).collect()),
        ("expert_calls", cols.iter().map(|r| r.expert_calls.to_string()).collect()),
    ];
    let mut csv = String::from("metric");
    for r in &cols {
        csv.push(',');
        csv.push_str(&r.algorithm);
    }
    csv.push('\n');
    let mut text = format!("{:<22}", "");
    for r in &cols {
        let _ = write!(text, "{:>12}", r.algorithm);
    }
    text.push('\n');
    for (name, vals) in &rows {
        let _ = writeln!(csv, "{name},{}", vals.join(","));
        let _ = write!(text, "{name:<22}");
        for v in vals {
            let _ = write!(text, "{v:>12}");
        }
        text.push('\n');
    }
    Ok((csv, text))
}
