//! Training-set construction: sampled initial errors labelled by the expert,
//! plus zero pairs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::FreeState;
use crate::error::{Error, Result};
use crate::expert::{attitude_from_error, Expert, ReferenceOrbit, StateError, N_ERR};
use crate::wingkin::{U_LAYOUT_VERSION, U_LEN};

/// Per-block radii in weighted units; with four blocks of 0.5 every sample
/// lies in the unit weighted ball.
pub const DEFAULT_BLOCK_SCALES: [f64; 4] = [0.5; 4];

/// Deterministic generator for sample `index` of a run seeded with `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform point in the 3-ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vector3<f64> {
    loop {
        let d = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = d.norm();
        if n > 1e-12 {
            let r = radius * rng.random::<f64>().cbrt();
            return d * (r / n);
        }
    }
}

/// Each 3-block is uniform in a ball of radius `scales[k]` (weighted units);
/// the result is rescaled onto the unit weighted ball if it falls outside.
pub fn sample_initial_error<R: Rng + ?Sized>(rng: &mut R, scales: &[f64; 4]) -> StateError {
    let mut e = [0.0; N_ERR];
    for (k, s) in scales.iter().enumerate() {
        let b = sample_ball(rng, *s);
        e[3 * k..3 * k + 3].copy_from_slice(b.as_slice());
    }
    let mut out = StateError(e);
    let n = out.norm();
    if n > 1.0 {
        out.0.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// State at orbit phase zero whose weighted error is `e`.
pub fn perturb_state(orbit: &ReferenceOrbit, e: &StateError, w_x: &[f64; N_ERR]) -> Result<FreeState> {
    if !e.is_finite() {
        return Err(Error::NonFinite(e.norm()));
    }
    let raw = e.raw(w_x);
    let block = |k: usize| Vector3::new(raw[3 * k], raw[3 * k + 1], raw[3 * k + 2]);
    let d = &orbit.initial;
    let r = attitude_from_error(&d.g.r, &block(1))?;
    let mut s = *d;
    s.g.x = d.g.x + block(0);
    s.g.r = r;
    s.xi.v = d.xi.v + block(2);
    s.xi.w = block(3) + r.matrix().transpose() * d.g.r.matrix() * d.xi.w;
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Sampled,
    Zero,
    Aggregated,
    NoisyExpert,
}

impl Provenance {
    fn tag(self) -> &'static str {
        match self {
            Self::Sampled => "sampled",
            Self::Zero => "zero",
            Self::Aggregated => "aggregated",
            Self::NoisyExpert => "noisy_expert",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sampled" => Self::Sampled,
            "zero" => Self::Zero,
            "aggregated" => Self::Aggregated,
            "noisy_expert" => Self::NoisyExpert,
            _ => return Err(Error::Parse(format!("unknown provenance {s}"))),
        })
    }
}

/// Column-paired inputs (weighted errors) and targets (60-value controls).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<[f64; N_ERR]>,
    pub y: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
    /// Expert certificate `(J(u), J(0))`; zeros for zero pairs.
    pub cost: Vec<(f64, f64)>,
    pub seed: u64,
    pub orbit_hash: String,
}

impl Dataset {
    pub fn empty(seed: u64, orbit_hash: String) -> Self {
        Self { x: vec![], y: vec![], provenance: vec![], cost: vec![], seed, orbit_hash }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_zero(&self) -> usize {
        self.provenance.iter().filter(|p| **p == Provenance::Zero).count()
    }

    pub fn push(&mut self, x: [f64; N_ERR], y: Vec<f64>, p: Provenance, cost: (f64, f64)) {
        debug_assert_eq!(y.len(), U_LEN);
        self.x.push(x);
        self.y.push(y);
        self.provenance.push(p);
        self.cost.push(cost);
    }

    pub fn extend(&mut self, other: &Dataset) {
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
        self.provenance.extend_from_slice(&other.provenance);
        self.cost.extend_from_slice(&other.cost);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.len();
        if self.y.len() != n || self.provenance.len() != n || self.cost.len() != n {
            return Err(Error::Dimension("dataset column counts differ".into()));
        }
        if self.y.iter().any(|y| y.len() != U_LEN) {
            return Err(Error::Dimension(format!("targets must have {U_LEN} values")));
        }
        Ok(())
    }

    /// CSV with `# key=value` header lines, then one row per pair:
    /// provenance, x (12), y (60), J, J0.
    pub fn to_csv(&self, extra_header: &[(&str, String)]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# N={}", self.len());
        let _ = writeln!(s, "# N0={}", self.n_zero());
        let _ = writeln!(s, "# seed={}", self.seed);
        let _ = writeln!(s, "# orbit_hash={}", self.orbit_hash);
        let _ = writeln!(s, "# u_layout_version={U_LAYOUT_VERSION}");
        for (k, v) in extra_header {
            let _ = writeln!(s, "# {k}={v}");
        }
        let mut cols = vec!["provenance".to_string()];
        cols.extend((0..N_ERR).map(|i| format!("x{i}")));
        cols.extend((0..U_LEN).map(|i| format!("u{i}")));
        cols.push("J".into());
        cols.push("J0".into());
        let _ = writeln!(s, "{}", cols.join(","));
        for i in 0..self.len() {
            let mut row = vec![self.provenance[i].tag().to_string()];
            row.extend(self.x[i].iter().map(|v| v.to_string()));
            row.extend(self.y[i].iter().map(|v| v.to_string()));
            row.push(self.cost[i].0.to_string());
            row.push(self.cost[i].1.to_string());
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut ds = Dataset::empty(0, String::new());
        let mut header_seen = false;
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("# ") {
                if let Some((k, v)) = h.split_once('=') {
                    match k {
                        "seed" => ds.seed = v.parse().map_err(|_| Error::Parse(format!("bad seed {v}")))?,
                        "orbit_hash" => ds.orbit_hash = v.to_string(),
                        "u_layout_version" if v != U_LAYOUT_VERSION.to_string() => {
                            return Err(Error::Parse(format!("unsupported u layout version {v}")))
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 1 + N_ERR + U_LEN + 2 {
                return Err(Error::Parse(format!("dataset row has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {s}")));
            let mut x = [0.0; N_ERR];
            for (i, v) in x.iter_mut().enumerate() {
                *v = num(f[1 + i])?;
            }
            let y = f[1 + N_ERR..1 + N_ERR + U_LEN].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            let j = num(f[1 + N_ERR + U_LEN])?;
            let j0 = num(f[2 + N_ERR + U_LEN])?;
            ds.push(x, y, Provenance::parse(f[0])?, (j, j0));
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn write(&self, path: &Path, extra_header: &[(&str, String)]) -> Result<()> {
        std::fs::write(path, self.to_csv(extra_header))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Labels the given errors in parallel; failed solves are logged and
/// skipped. Output order follows input order.
pub fn label_errors(
    errors: &[StateError],
    expert: &dyn Expert,
    provenance: Provenance,
    seed: u64,
    orbit_hash: &str,
) -> (Dataset, usize) {
    let labels: Vec<_> = errors.par_iter().map(|e| (e, expert.label(e))).collect();
    let mut ds = Dataset::empty(seed, orbit_hash.to_string());
    let mut failures = 0;
    for (e, l) in labels {
        match l {
            Ok(sol) => ds.push(e.0, sol.u, provenance, (sol.cost, sol.cost0)),
            Err(err) => {
                failures += 1;
                log::warn!("expert failed at |e| = {:.3}: {err}", e.norm());
            }
        }
    }
    (ds, failures)
}

/// `n_samples` expert-labelled pairs from sampled errors followed by
/// `n_zero` zero pairs. Sample `i` draws from its own substream, so the
/// result does not depend on the worker count.
pub fn generate_dataset(
    n_samples: usize,
    n_zero: usize,
    orbit: &ReferenceOrbit,
    expert: &dyn Expert,
    scales: &[f64; 4],
    seed: u64,
) -> Result<Dataset> {
    let errors: Vec<StateError> =
        (0..n_samples).map(|i| sample_initial_error(&mut substream(seed, i as u64), scales)).collect();
    let hash = crate::io::hash_json(orbit);
    let (mut ds, failures) = label_errors(&errors, expert, Provenance::Sampled, seed, &hash);
    if failures > 0 {
        log::warn!("{failures} of {n_samples} expert solves failed");
    }
    for _ in 0..n_zero {
        ds.push([0.0; N_ERR], vec![0.0; U_LEN], Provenance::Zero, (0.0, 0.0));
    }
    Ok(ds)
}
