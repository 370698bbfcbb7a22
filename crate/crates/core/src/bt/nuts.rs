//! Multinomial No-U-Turn sampler with an identity mass matrix and
//! dual-averaging step-size adaptation during warmup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::LogDensity;
use super::BtError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    /// Post-warmup draws kept per chain.
    pub draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Energy error above which a trajectory is flagged divergent.
    pub max_energy_error: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            max_energy_error: 1000.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn total_draws(&self) -> usize {
        self.chains * self.draws
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    /// Effective sample size per coordinate.
    pub ess: Vec<f64>,
    pub divergences: usize,
    /// Mean acceptance statistic over post-warmup iterations.
    pub accept_rate: f64,
    /// Adapted step size per chain.
    pub step_sizes: Vec<f64>,
}

impl SamplerDiagnostics {
    pub fn ess_min(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Post-warmup draws of all chains, chain after chain, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    dim: usize,
    chains: usize,
    values: Vec<f64>,
    pub diagnostics: SamplerDiagnostics,
}

impl PosteriorDraws {
    pub fn from_rows(dim: usize, chains: usize, values: Vec<f64>, diagnostics: SamplerDiagnostics) -> Self {
        assert_eq!(values.len() % dim.max(1), 0);
        Self {
            dim,
            chains,
            values,
            diagnostics,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn n_draws(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.rows().map(|r| r[j]).sum::<f64>() / self.n_draws() as f64
    }
}

#[derive(Clone, Debug)]
struct PhasePoint {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

impl PhasePoint {
    fn at<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.logp_and_grad(&q, &mut grad);
        Self {
            p: vec![0.0; q.len()],
            q,
            grad,
            logp,
        }
    }

    fn is_finite(&self) -> bool {
        self.logp.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }

    fn hamiltonian(&self) -> f64 {
        let h = -self.logp + 0.5 * dot(&self.p, &self.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn resample_momentum(&mut self, rng: &mut ChaCha8Rng) {
        for p in &mut self.p {
            *p = rng.sample(StandardNormal);
        }
    }

    fn leapfrog<T: LogDensity + ?Sized>(&mut self, target: &T, eps: f64) {
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
        for (q, p) in self.q.iter_mut().zip(&self.p) {
            *q += eps * p;
        }
        self.logp = target.logp_and_grad(&self.q, &mut self.grad);
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Generalized no-U-turn check between the momenta at both ends of a span
/// and the summed momentum `rho` over it.
fn no_u_turn(p_start: &[f64], p_end: &[f64], rho: &[f64]) -> bool {
    dot(p_end, rho) > 0.0 && dot(p_start, rho) > 0.0
}

/// Bookkeeping for one NUTS transition.
struct Trajectory<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    eps: f64,
    h0: f64,
    max_energy_error: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<'a, T: LogDensity + ?Sized> Trajectory<'a, T> {
    /// Extends the trajectory by 2^depth leapfrog steps from `z` in the
    /// direction of `sign`. On return `z` is the new frontier, `z_propose`
    /// the multinomial pick within the new subtree, `p_beg`/`p_end` the
    /// momenta at its two ends and `rho` has the subtree momentum added.
    /// Returns false if the subtree diverged or turned back on itself.
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        rho: &mut [f64],
        sign: f64,
        log_sum_weight: &mut f64,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        if depth == 0 {
            z.leapfrog(self.target, sign * self.eps);
            self.n_leapfrog += 1;
            let h = if z.is_finite() { z.hamiltonian() } else { f64::INFINITY };
            if h - self.h0 > self.max_energy_error {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 { 1.0 } else { (self.h0 - h).exp() };
            z_propose.clone_from(z);
            p_beg.clone_from(&z.p);
            p_end.clone_from(&z.p);
            add_into(rho, &z.p);
            return !self.divergent;
        }

        let dim = z.q.len();

        let mut p_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let mut log_sum_weight_init = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_beg,
            &mut p_init_end,
            &mut rho_init,
            sign,
            &mut log_sum_weight_init,
            rng,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut p_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_final_beg,
            p_end,
            &mut rho_final,
            sign,
            &mut log_sum_weight_final,
            rng,
        ) {
            return false;
        }

        let log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, log_sum_weight_subtree);

        if log_sum_weight_final > log_sum_weight_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (log_sum_weight_final - log_sum_weight_subtree).exp();
            if rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = sum(&rho_init, &rho_final);
        add_into(rho, &rho_subtree);

        // Check the whole subtree, then each half extended by one point of
        // the other half, which catches U-turns straddling the seam.
        no_u_turn(p_beg, p_end, &rho_subtree)
            && no_u_turn(p_beg, &p_final_beg, &sum(&rho_init, &p_final_beg))
            && no_u_turn(&p_init_end, p_end, &sum(&rho_final, &p_init_end))
    }
}

struct TransitionStats {
    accept_stat: f64,
    divergent: bool,
}

fn transition<T: LogDensity + ?Sized>(
    target: &T,
    current: &mut PhasePoint,
    eps: f64,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> TransitionStats {
    current.resample_momentum(rng);
    let dim = current.q.len();

    let mut z_fwd = current.clone();
    let mut z_bck = current.clone();
    let mut z_sample = current.clone();
    let mut z_propose = current.clone();

    // Momenta at the outer ("far") and inner ends of the forward and
    // backward extensions.
    let mut p_fwd_fwd = current.p.clone();
    let mut p_fwd_bck = current.p.clone();
    let mut p_bck_fwd = current.p.clone();
    let mut p_bck_bck = current.p.clone();

    let mut rho = current.p.clone();
    let mut log_sum_weight = 0.0;

    let mut traj = Trajectory {
        target,
        eps,
        h0: current.hamiltonian(),
        max_energy_error: config.max_energy_error,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };

    let mut depth = 0;
    while depth < config.max_tree_depth {
        let mut rho_fwd = vec![0.0; dim];
        let mut rho_bck = vec![0.0; dim];
        let mut log_sum_weight_subtree = f64::NEG_INFINITY;

        let valid = if rng.random::<f64>() > 0.5 {
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_bck);
            traj.build_tree(
                depth,
                &mut z_fwd,
                &mut z_propose,
                &mut p_fwd_bck,
                &mut p_fwd_fwd,
                &mut rho_fwd,
                1.0,
                &mut log_sum_weight_subtree,
                rng,
            )
        } else {
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_fwd);
            traj.build_tree(
                depth,
                &mut z_bck,
                &mut z_propose,
                &mut p_bck_fwd,
                &mut p_bck_bck,
                &mut rho_bck,
                -1.0,
                &mut log_sum_weight_subtree,
                rng,
            )
        };

        if !valid {
            break;
        }
        depth += 1;

        if log_sum_weight_subtree > log_sum_weight {
            z_sample.clone_from(&z_propose);
        } else {
            let accept = (log_sum_weight_subtree - log_sum_weight).exp();
            if rng.random::<f64>() < accept {
                z_sample.clone_from(&z_propose);
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

        rho = sum(&rho_bck, &rho_fwd);
        let persist = no_u_turn(&p_bck_bck, &p_fwd_fwd, &rho)
            && no_u_turn(&p_bck_bck, &p_fwd_bck, &sum(&rho_bck, &p_fwd_bck))
            && no_u_turn(&p_bck_fwd, &p_fwd_fwd, &sum(&rho_fwd, &p_bck_fwd));
        if !persist {
            break;
        }
    }

    *current = z_sample;
    TransitionStats {
        accept_stat: traj.sum_metro_prob / traj.n_leapfrog.max(1) as f64,
        divergent: traj.divergent,
    }
}

/// Dual averaging of the log step size towards a target acceptance rate.
struct StepSizeAdapter {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdapter {
    fn new(initial: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial).ln(),
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let accept_stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Doubles or halves a unit step until one leapfrog step's acceptance
/// crosses 0.8.
fn initial_step_size<T: LogDensity + ?Sized>(target: &T, start: &PhasePoint, rng: &mut ChaCha8Rng) -> f64 {
    let log_threshold = 0.8f64.ln();
    let mut eps = 1.0;
    let trial = |eps: f64, rng: &mut ChaCha8Rng| {
        let mut z = start.clone();
        z.resample_momentum(rng);
        let h0 = z.hamiltonian();
        z.leapfrog(target, eps);
        let h = if z.is_finite() { z.hamiltonian() } else { f64::INFINITY };
        h0 - h
    };
    let direction = if trial(eps, rng) > log_threshold { 1 } else { -1 };
    for _ in 0..100 {
        let delta_h = trial(eps, rng);
        if direction == 1 && !(delta_h > log_threshold) {
            break;
        }
        if direction == -1 && !(delta_h < log_threshold) {
            break;
        }
        eps = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e7)
}

struct ChainOutput {
    draws: Vec<f64>,
    divergences: usize,
    accept_sum: f64,
    step_size: f64,
}

fn initial_point<T: LogDensity + ?Sized>(target: &T, rng: &mut ChaCha8Rng) -> Result<PhasePoint, BtError> {
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let q: Vec<f64> = (0..target.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = PhasePoint::at(target, q);
        if z.is_finite() {
            return Ok(z);
        }
    }
    Err(BtError::NonFiniteDensity { attempts: ATTEMPTS })
}

fn run_chain<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig, chain: usize) -> Result<ChainOutput, BtError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);

    let mut current = initial_point(target, &mut rng)?;
    let mut eps = initial_step_size(target, &current, &mut rng);
    let mut adapter = StepSizeAdapter::new(eps, config.target_accept);

    for _ in 0..config.warmup {
        let stats = transition(target, &mut current, eps, config, &mut rng);
        eps = adapter.update(stats.accept_stat);
    }
    if config.warmup > 0 {
        eps = adapter.final_step_size();
    }

    let dim = target.dim();
    let mut out = ChainOutput {
        draws: Vec::with_capacity(config.draws * dim),
        divergences: 0,
        accept_sum: 0.0,
        step_size: eps,
    };
    for _ in 0..config.draws {
        let stats = transition(target, &mut current, eps, config, &mut rng);
        out.divergences += usize::from(stats.divergent);
        out.accept_sum += stats.accept_stat;
        out.draws.extend_from_slice(&current.q);
    }
    Ok(out)
}

/// Runs `config.chains` independent chains (one generator stream each, all
/// from `config.seed`) and pools their post-warmup draws.
pub fn nuts_sample<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws, BtError> {
    let dim = target.dim();
    if dim == 0 {
        return Err(BtError::InvalidConfig("target has no dimensions".into()));
    }
    if config.chains == 0 || config.draws == 0 {
        return Err(BtError::InvalidConfig("need at least one chain and one draw".into()));
    }
    if !(0.0 < config.target_accept && config.target_accept < 1.0) {
        return Err(BtError::InvalidConfig("target_accept must lie in (0, 1)".into()));
    }

    let chains: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<_, _>>()?;

    let mut values = Vec::with_capacity(config.total_draws() * dim);
    for c in &chains {
        values.extend_from_slice(&c.draws);
    }
    let ess = (0..dim)
        .map(|j| {
            let per_chain: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.draws.chunks_exact(dim).map(|r| r[j]).collect())
                .collect();
            effective_sample_size(&per_chain)
        })
        .collect();
    let diagnostics = SamplerDiagnostics {
        ess,
        divergences: chains.iter().map(|c| c.divergences).sum(),
        accept_rate: chains.iter().map(|c| c.accept_sum).sum::<f64>() / config.total_draws() as f64,
        step_sizes: chains.iter().map(|c| c.step_size).collect(),
    };
    Ok(PosteriorDraws::from_rows(dim, config.chains, values, diagnostics))
}

fn autocovariance(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size using Geyer's initial monotone
/// positive sequence on the combined autocorrelation estimate.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu, 0)).collect();
    let nf = n as f64;
    let mean_var = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let grand = means.iter().sum::<f64>() / m as f64;
        var_plus += means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho_at = |lag: usize| {
        let mean_acov =
            chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu, lag)).sum::<f64>() / m as f64;
        1.0 - (mean_var - mean_acov) / var_plus
    };

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho_at(lag) + rho_at(lag + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    let total = (m * n) as f64;
    (total / tau.max(1.0 / total.log10())).min(total * total.log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }

        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            for (g, v) in grad.iter_mut().zip(x) {
                *g = -v;
            }
            -0.5 * dot(x, x)
        }
    }

    struct Correlated;

    impl LogDensity for Correlated {
        fn dim(&self) -> usize {
            2
        }

        fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            // bivariate normal, unit variances, correlation 0.9
            let r: f64 = 0.9;
            let k = 1.0 / (1.0 - r * r);
            grad[0] = -k * (x[0] - r * x[1]);
            grad[1] = -k * (x[1] - r * x[0]);
            -0.5 * k * (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1])
        }
    }

    struct NanEverywhere;

    impl LogDensity for NanEverywhere {
        fn dim(&self) -> usize {
            1
        }

        fn logp_and_grad(&self, _x: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = f64::NAN;
            f64::NAN
        }
    }

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn recovers_standard_normal() {
        let draws = nuts_sample(&StdNormal(3), &SamplerConfig { seed: 11, ..Default::default() }).unwrap();
        assert_eq!(draws.n_draws(), 4000);
        for j in 0..3 {
            let (m, sd) = mean_sd(&draws.column(j));
            assert!(m.abs() < 0.1, "mean {m}");
            assert!((sd - 1.0).abs() < 0.1, "sd {sd}");
        }
        assert_eq!(draws.diagnostics.divergences, 0);
        assert!(draws.diagnostics.ess_min() > 1000.0);
        assert!((draws.diagnostics.accept_rate - 0.8).abs() < 0.1);
    }

    #[test]
    fn recovers_correlated_normal() {
        let draws = nuts_sample(&Correlated, &SamplerConfig { seed: 5, ..Default::default() }).unwrap();
        let (x, y) = (draws.column(0), draws.column(1));
        let (mx, sx) = mean_sd(&x);
        let (my, sy) = mean_sd(&y);
        let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0);
        assert!((cov / (sx * sy) - 0.9).abs() < 0.03);
        assert!((sx - 1.0).abs() < 0.1 && (sy - 1.0).abs() < 0.1);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SamplerConfig {
            warmup: 200,
            draws: 200,
            seed: 3,
            ..Default::default()
        };
        let a = nuts_sample(&StdNormal(2), &cfg).unwrap();
        let b = nuts_sample(&StdNormal(2), &cfg).unwrap();
        assert_eq!(a, b);
        let c = nuts_sample(&StdNormal(2), &SamplerConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.row(0), c.row(0));
    }

    #[test]
    fn chains_use_distinct_streams() {
        let cfg = SamplerConfig {
            chains: 2,
            warmup: 50,
            draws: 10,
            ..Default::default()
        };
        let d = nuts_sample(&StdNormal(1), &cfg).unwrap();
        assert_ne!(d.row(0), d.row(10));
    }

    #[test]
    fn non_finite_target_is_reported() {
        let err = nuts_sample(&NanEverywhere, &SamplerConfig::default()).unwrap_err();
        assert!(matches!(err, BtError::NonFiniteDensity { attempts: 100 }));
    }

    #[test]
    fn invalid_config() {
        let cfg = SamplerConfig { chains: 0, ..Default::default() };
        assert!(matches!(nuts_sample(&StdNormal(1), &cfg), Err(BtError::InvalidConfig(_))));
    }

    #[test]
    fn ess_of_iid_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let ess = effective_sample_size(&chains);
        assert!((3000.0..5000.0).contains(&ess), "ess {ess}");
    }

    #[test]
    fn ess_of_sticky_chain_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..1000)
                    .map(|_| {
                        x = 0.95 * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        // AR(1) with phi = 0.95 has tau = (1 + phi)/(1 - phi) = 39
        let ess = effective_sample_size(&chains);
        assert!((40.0..250.0).contains(&ess), "ess {ess}");
    }
}
