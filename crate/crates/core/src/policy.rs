//! Single-hidden-layer cascade-forward network mapping a weighted state error
//! to the 60-value control vector, with reverse-mode parameter gradients and
//! a Levenberg–Marquardt trainer.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAK: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetArch {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub leak: f64,
    /// Direct linear input-to-output connection.
    pub cascade: bool,
}

impl NetArch {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self { n_in, n_hidden, n_out, leak: DEFAULT_LEAK, cascade: true }
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    fn offsets(&self) -> Offsets {
        let wh = 0;
        let bh = wh + self.n_hidden * self.n_in;
        let wo = bh + self.n_hidden;
        let wd = wo + self.n_out * self.n_hidden;
        let bo = wd + if self.cascade { self.n_out * self.n_in } else { 0 };
        Offsets { wh, bh, wo, wd, bo, end: bo + self.n_out }
    }

    /// Width of the shared output-layer feature vector `[h, x?, 1]`.
    fn n_feat(&self) -> usize {
        self.n_hidden + if self.cascade { self.n_in } else { 0 } + 1
    }
}

pub fn param_count(a: &NetArch) -> usize {
    let base = a.n_in * a.n_hidden + a.n_hidden * a.n_out + a.n_hidden + a.n_out;
    base + if a.cascade { a.n_in * a.n_out } else { 0 }
}

#[derive(Clone, Copy, Debug)]
struct Offsets {
    wh: usize,
    bh: usize,
    wo: usize,
    wd: usize,
    bo: usize,
    end: usize,
}

/// Network parameters laid out as `[W_h, b_h, W_o, W_d, b_o]`, matrices
/// row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralPolicy {
    pub arch: NetArch,
    pub theta: Vec<f64>,
}

struct Activations {
    z: Vec<f64>,
    h: Vec<f64>,
}

impl NeuralPolicy {
    pub fn zeros(arch: NetArch) -> Self {
        Self { theta: vec![0.0; param_count(&arch)], arch }
    }

    /// Uniform fan-in initialization: hidden weights in `±1/sqrt(n_in)`,
    /// output weights in `±1/sqrt(n_hidden)`, direct weights and biases zero.
    pub fn init(arch: NetArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(arch);
        let o = arch.offsets();
        let si = 1.0 / (arch.n_in as f64).sqrt();
        let sh = 1.0 / (arch.n_hidden as f64).sqrt();
        for v in &mut p.theta[o.wh..o.bh] {
            *v = rng.random_range(-si..si);
        }
        for v in &mut p.theta[o.wo..o.wd] {
            *v = rng.random_range(-sh..sh);
        }
        p
    }

    pub fn from_theta(arch: NetArch, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != param_count(&arch) {
            return Err(Error::Dimension(format!("expected {} parameters, got {}", param_count(&arch), theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(f64::NAN));
        }
        Ok(Self { arch, theta })
    }

    fn act(&self, z: f64) -> f64 {
        if z >= 0.0 {
            z
        } else {
            self.arch.leak * z
        }
    }

    fn dact(&self, z: f64) -> f64 {
        if z >= 0.0 {
            1.0
        } else {
            self.arch.leak
        }
    }

    fn hidden(&self, x: &[f64]) -> Activations {
        let a = &self.arch;
        let o = a.offsets();
        let mut z = self.theta[o.bh..o.wo].to_vec();
        for (j, zj) in z.iter_mut().enumerate() {
            let row = &self.theta[o.wh + j * a.n_in..o.wh + (j + 1) * a.n_in];
            *zj += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        let h = z.iter().map(|v| self.act(*v)).collect();
        Activations { z, h }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.n_in {
            return Err(Error::Dimension(format!("expected {} inputs, got {}", self.arch.n_in, x.len())));
        }
        Ok(())
    }

    fn output(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let a = &self.arch;
        let o = a.offsets();
        (0..a.n_out)
            .map(|k| {
                let wo = &self.theta[o.wo + k * a.n_hidden..o.wo + (k + 1) * a.n_hidden];
                let mut y = self.theta[o.bo + k] + wo.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
                if a.cascade {
                    let wd = &self.theta[o.wd + k * a.n_in..o.wd + (k + 1) * a.n_in];
                    y += wd.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                }
                y
            })
            .collect()
    }

    /// `y = W_o act(W_h x + b_h) + W_d x + b_o`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let act = self.hidden(x);
        Ok(self.output(x, &act.h))
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.forward(x)).collect()
    }

    /// `(df/dtheta)^T upstream` by reverse accumulation.
    pub fn grad_theta(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let a = &self.arch;
        if upstream.len() != a.n_out {
            return Err(Error::Dimension(format!("expected {} upstream values", a.n_out)));
        }
        let o = a.offsets();
        let act = self.hidden(x);
        let mut g = vec![0.0; o.end];
        let mut dh = vec![0.0; a.n_hidden];
        for (k, u) in upstream.iter().enumerate() {
            g[o.bo + k] = *u;
            for j in 0..a.n_hidden {
                g[o.wo + k * a.n_hidden + j] = u * act.h[j];
                dh[j] += u * self.theta[o.wo + k * a.n_hidden + j];
            }
            if a.cascade {
                for i in 0..a.n_in {
                    g[o.wd + k * a.n_in + i] = u * x[i];
                }
            }
        }
        for j in 0..a.n_hidden {
            let dz = dh[j] * self.dact(act.z[j]);
            g[o.bh + j] = dz;
            for i in 0..a.n_in {
                g[o.wh + j * a.n_in + i] = dz * x[i];
            }
        }
        Ok(g)
    }

    /// Output at the zero input, `W_o act(b_h) + b_o`.
    pub fn output_at_zero(&self) -> Vec<f64> {
        self.forward(&vec![0.0; self.arch.n_in]).expect("input width")
    }

    /// Lipschitz bound `|W_o|_F |W_h|_F + |W_d|_F` (leaky activation is
    /// 1-Lipschitz).
    pub fn lipschitz_bound(&self) -> f64 {
        let a = &self.arch;
        let o = a.offsets();
        let m = |off: usize, r: usize, c: usize| DMatrix::from_row_slice(r, c, &self.theta[off..off + r * c]).norm();
        let mut l = m(o.wo, a.n_out, a.n_hidden) * m(o.wh, a.n_hidden, a.n_in);
        if a.cascade {
            l += m(o.wd, a.n_out, a.n_in);
        }
        l
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainMethod {
    LevenbergMarquardt,
    /// Full-batch gradient descent with momentum.
    Momentum { rate: f64, beta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_iter: usize,
    /// Weight of `|theta|^2` added to the mean squared error.
    pub l2: f64,
    pub mu0: f64,
    /// Stop when an accepted step lowers the loss by less than this fraction.
    pub rel_tol: f64,
    /// Stop once the mean squared error is below this value.
    pub mse_goal: f64,
    pub method: TrainMethod,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            l2: 1e-7,
            mu0: 1e-3,
            rel_tol: 1e-7,
            mse_goal: 0.0,
            method: TrainMethod::LevenbergMarquardt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mse: f64,
    pub loss: f64,
    pub iterations: usize,
    /// Regularized loss after each accepted iteration.
    pub trace: Vec<f64>,
}

/// Mean squared error over all outputs and samples.
pub fn mse(net: &NeuralPolicy, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let mut s = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let p = net.forward(xi)?;
        s += p.iter().zip(yi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(s / (x.len().max(1) * net.arch.n_out) as f64)
}

fn loss(net: &NeuralPolicy, x: &[Vec<f64>], y: &[Vec<f64>], l2: f64) -> Result<(f64, f64)> {
    let m = mse(net, x, y)?;
    let reg = net.theta.iter().map(|v| v * v).sum::<f64>();
    Ok((m, m + l2 * reg))
}

/// Trains `net` on targets `y` (rows are samples). The loss is
/// `mse + l2 |theta|^2`; only decreasing steps are accepted.
pub fn train(net: &NeuralPolicy, x: &[Vec<f64>], y: &[Vec<f64>], opts: &TrainOptions) -> Result<(NeuralPolicy, TrainReport)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Dimension(format!("{} inputs vs {} targets", x.len(), y.len())));
    }
    for (xi, yi) in x.iter().zip(y) {
        if xi.len() != net.arch.n_in || yi.len() != net.arch.n_out {
            return Err(Error::Dimension("sample width does not match the architecture".into()));
        }
    }
    match opts.method {
        TrainMethod::LevenbergMarquardt => train_lm(net, x, y, opts),
        TrainMethod::Momentum { rate, beta } => train_momentum(net, x, y, opts, rate, beta),
    }
}

fn diverged(iteration: usize, trace: &[f64]) -> Error {
    Error::TrainingDiverged { iteration, trace: trace.to_vec() }
}

fn train_momentum(
    net: &NeuralPolicy,
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    opts: &TrainOptions,
    rate: f64,
    beta: f64,
) -> Result<(NeuralPolicy, TrainReport)> {
    let mut p = net.clone();
    let scale = 2.0 / (x.len() * net.arch.n_out) as f64;
    let mut vel = vec![0.0; p.theta.len()];
    let (_, mut cur) = loss(&p, x, y, opts.l2)?;
    let mut trace = vec![cur];
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let mut g: Vec<f64> = p.theta.iter().map(|t| 2.0 * opts.l2 * t).collect();
        for (xi, yi) in x.iter().zip(y) {
            let r: Vec<f64> = p.forward(xi)?.iter().zip(yi).map(|(a, b)| scale * (a - b)).collect();
            for (gk, v) in g.iter_mut().zip(p.grad_theta(xi, &r)?) {
                *gk += v;
            }
        }
        for ((t, v), gk) in p.theta.iter_mut().zip(vel.iter_mut()).zip(&g) {
            *v = beta * *v - rate * gk;
            *t += *v;
        }
        let (_, l) = loss(&p, x, y, opts.l2)?;
        if !l.is_finite() {
            return Err(diverged(it, &trace));
        }
        cur = l;
        trace.push(cur);
    }
    let (m, l) = loss(&p, x, y, opts.l2)?;
    Ok((p, TrainReport { mse: m, loss: l, iterations: it, trace }))
}

/// Gauss–Newton blocks of the least-squares problem. The output-layer
/// parameters of each output row share one feature Gram matrix, so the
/// system is reduced to the hidden-layer parameters by a Schur complement.
struct NormalEquations {
    /// Feature Gram matrix `sum_k phi_k phi_k^T`.
    a0: DMatrix<f64>,
    /// Cross term `sum_k phi_k m_k^T`, `m_k = dact(z_k) (x) [x_k, 1]`.
    p: DMatrix<f64>,
    /// `sum_k m_k m_k^T`.
    mm: DMatrix<f64>,
    /// Output-layer gradient, one column per output.
    g_out: DMatrix<f64>,
    /// Hidden-layer gradient in `(unit, input)` order.
    g_hid: DVector<f64>,
}

fn features(net: &NeuralPolicy, x: &[f64], h: &[f64]) -> DVector<f64> {
    let a = &net.arch;
    let mut phi = DVector::zeros(a.n_feat());
    phi.rows_mut(0, a.n_hidden).copy_from_slice(h);
    if a.cascade {
        phi.rows_mut(a.n_hidden, a.n_in).copy_from_slice(x);
    }
    phi[a.n_feat() - 1] = 1.0;
    phi
}

fn normal_equations(net: &NeuralPolicy, x: &[Vec<f64>], y: &[Vec<f64>]) -> NormalEquations {
    let a = &net.arch;
    let o = a.offsets();
    let nf = a.n_feat();
    let ni = a.n_in + 1;
    let nh = a.n_hidden * ni;
    let wo = DMatrix::from_row_slice(a.n_out, a.n_hidden, &net.theta[o.wo..o.wd]);
    let n = x.len();
    let mut phis = DMatrix::zeros(n, nf);
    let mut ms = DMatrix::zeros(n, nh);
    let mut res = DMatrix::zeros(n, a.n_out);
    let mut g_hid = DVector::zeros(nh);
    for (k, (xk, yk)) in x.iter().zip(y).enumerate() {
        let act = net.hidden(xk);
        let phi = features(net, xk, &act.h);
        phis.row_mut(k).copy_from(&phi.transpose());
        let pred = net.output(xk, &act.h);
        let r = DVector::from_iterator(a.n_out, pred.iter().zip(yk).map(|(p, t)| p - t));
        res.row_mut(k).copy_from(&r.transpose());
        let back = wo.transpose() * &r;
        for u in 0..a.n_hidden {
            let d = net.dact(act.z[u]);
            for i in 0..ni {
                let xi = if i < a.n_in { xk[i] } else { 1.0 };
                ms[(k, u * ni + i)] = d * xi;
                g_hid[u * ni + i] += back[u] * d * xi;
            }
        }
    }
    NormalEquations {
        a0: phis.transpose() * &phis,
        p: phis.transpose() * &ms,
        mm: ms.transpose() * &ms,
        g_out: phis.transpose() * &res,
        g_hid,
    }
}

/// Maps a (hidden, output) step pair into the flat parameter layout.
fn assemble_step(arch: &NetArch, d_hid: &DVector<f64>, d_out: &DMatrix<f64>) -> Vec<f64> {
    let o = arch.offsets();
    let ni = arch.n_in + 1;
    let mut d = vec![0.0; o.end];
    for u in 0..arch.n_hidden {
        for i in 0..arch.n_in {
            d[o.wh + u * arch.n_in + i] = d_hid[u * ni + i];
        }
        d[o.bh + u] = d_hid[u * ni + arch.n_in];
    }
    for k in 0..arch.n_out {
        let col = d_out.column(k);
        for j in 0..arch.n_hidden {
            d[o.wo + k * arch.n_hidden + j] = col[j];
        }
        if arch.cascade {
            for i in 0..arch.n_in {
                d[o.wd + k * arch.n_in + i] = col[arch.n_hidden + i];
            }
        }
        d[o.bo + k] = col[arch.n_feat() - 1];
    }
    d
}

/// Splits the flat parameters into (hidden, output) blocks matching
/// [`assemble_step`].
fn split_theta(arch: &NetArch, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let o = arch.offsets();
    let ni = arch.n_in + 1;
    let mut hid = DVector::zeros(arch.n_hidden * ni);
    for u in 0..arch.n_hidden {
        for i in 0..arch.n_in {
            hid[u * ni + i] = theta[o.wh + u * arch.n_in + i];
        }
        hid[u * ni + arch.n_in] = theta[o.bh + u];
    }
    let mut out = DMatrix::zeros(arch.n_feat(), arch.n_out);
    for k in 0..arch.n_out {
        for j in 0..arch.n_hidden {
            out[(j, k)] = theta[o.wo + k * arch.n_hidden + j];
        }
        if arch.cascade {
            for i in 0..arch.n_in {
                out[(arch.n_hidden + i, k)] = theta[o.wd + k * arch.n_in + i];
            }
        }
        out[(arch.n_feat() - 1, k)] = theta[o.bo + k];
    }
    (hid, out)
}

/// Solves `(J^T J + alpha I + mu diag(J^T J)) d = -(J^T r + alpha theta)`.
fn lm_step(net: &NeuralPolicy, ne: &NormalEquations, alpha: f64, mu: f64) -> Option<Vec<f64>> {
    let a = &net.arch;
    let o = a.offsets();
    let ni = a.n_in + 1;
    let nh = a.n_hidden * ni;
    let wo = DMatrix::from_row_slice(a.n_out, a.n_hidden, &net.theta[o.wo..o.wd]);
    let gram = wo.transpose() * &wo;
    let (th_hid, th_out) = split_theta(a, &net.theta);

    let mut a0 = ne.a0.clone();
    for i in 0..a0.nrows() {
        a0[(i, i)] += alpha + mu * (ne.a0[(i, i)] + 1e-12);
    }
    let a0_chol = a0.cholesky()?;
    let g_out = &ne.g_out + &th_out * alpha;
    let g_hid = &ne.g_hid + &th_hid * alpha;

    // hidden block C and Schur term P^T A0^-1 P, both scaled by W_o^T W_o
    let ap = a0_chol.solve(&ne.p);
    let ptap = ne.p.transpose() * &ap;
    let mut s = DMatrix::zeros(nh, nh);
    for u in 0..a.n_hidden {
        for v in 0..a.n_hidden {
            let gv = gram[(u, v)];
            for i in 0..ni {
                for l in 0..ni {
                    let (r, c) = (u * ni + i, v * ni + l);
                    s[(r, c)] = gv * (ne.mm[(r, c)] - ptap[(r, c)]);
                }
            }
        }
    }
    for r in 0..nh {
        let u = r / ni;
        let c_diag = gram[(u, u)] * ne.mm[(r, r)];
        s[(r, r)] += alpha + mu * (c_diag + 1e-12);
    }
    // rhs: g_hid - sum_j B_j^T A0^-1 g_out_j
    let v = a0_chol.solve(&g_out);
    let ptv = ne.p.transpose() * &v;
    let mut rhs = g_hid.clone();
    for r in 0..nh {
        let u = r / ni;
        rhs[r] -= (0..a.n_out).map(|j| wo[(j, u)] * ptv[(r, j)]).sum::<f64>();
    }
    let d_hid = -s.cholesky()?.solve(&rhs);
    // back substitution for each output row
    let mut bd = DMatrix::zeros(a.n_feat(), a.n_out);
    for j in 0..a.n_out {
        let mut scaled = DVector::zeros(nh);
        for r in 0..nh {
            scaled[r] = wo[(j, r / ni)] * d_hid[r];
        }
        bd.set_column(j, &(&ne.p * scaled));
    }
    let d_out = -a0_chol.solve(&(g_out + bd));
    Some(assemble_step(a, &d_hid, &d_out))
}

fn train_lm(net: &NeuralPolicy, x: &[Vec<f64>], y: &[Vec<f64>], opts: &TrainOptions) -> Result<(NeuralPolicy, TrainReport)> {
    let mut p = net.clone();
    // mse + l2 |theta|^2 is proportional to 1/2 |r|^2 + alpha/2 |theta|^2
    let alpha = opts.l2 * (x.len() * net.arch.n_out) as f64;
    let (mut m, mut cur) = loss(&p, x, y, opts.l2)?;
    if !cur.is_finite() {
        return Err(diverged(0, &[cur]));
    }
    let mut trace = vec![cur];
    let mut mu = opts.mu0;
    let mut it = 0;
    while it < opts.max_iter && m > opts.mse_goal {
        it += 1;
        let ne = normal_equations(&p, x, y);
        let mut accepted = false;
        for _ in 0..15 {
            if let Some(step) = lm_step(&p, &ne, alpha, mu) {
                let trial = NeuralPolicy {
                    arch: p.arch,
                    theta: p.theta.iter().zip(&step).map(|(t, d)| t + d).collect(),
                };
                let (tm, tl) = loss(&trial, x, y, opts.l2)?;
                if tl.is_finite() && tl < cur {
                    let rel = (cur - tl) / cur.max(1e-300);
                    p = trial;
                    m = tm;
                    cur = tl;
                    trace.push(cur);
                    mu = (mu / 10.0).max(1e-15);
                    accepted = true;
                    if rel < opts.rel_tol {
                        it = opts.max_iter;
                    }
                    break;
                }
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    if p.theta.iter().any(|v| !v.is_finite()) {
        return Err(diverged(it, &trace));
    }
    Ok((p, TrainReport { mse: m, loss: cur, iterations: it.min(opts.max_iter), trace }))
}

/// Persisted policy with training metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub policy: NeuralPolicy,
    pub algorithm: String,
    pub seed: u64,
    pub mse: f64,
    pub zero_output_norm: f64,
    pub wall_time_s: f64,
    pub expert_calls: usize,
    pub dataset_size: usize,
    pub u_layout_version: u32,
    pub config_hash: String,
    pub tool_version: String,
}
