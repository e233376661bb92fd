//! The full Gibbs and two-block Gibbs Markov chains.
//!
//! Full Gibbs (one iteration): `tau | u`, `omega | eta`, `u | beta, omega, tau`,
//! then `beta | u, omega`. Block Gibbs: `tau | u` and `omega | eta` (independent
//! given `eta`), then `eta = (beta, u) | omega, tau` in one joint draw.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg_sampling::{build_eta_precision, weighted_gram, LinalgError, PrecisionDraw};
use crate::model::{block_ranges, ChainState, ModelError, ModelSpec, PriorSpec, Violation};
use crate::pg_random::sample_pg1;
use crate::streams::{self, Purpose};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Violation>),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    State(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid gamma conditional for block {block}: shape {shape}, rate {rate}")]
    Gamma { block: usize, shape: f64, rate: f64 },
    #[error("iteration {iteration}: {source}")]
    Step {
        iteration: usize,
        #[source]
        source: Box<SamplerError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(alias = "FG", alias = "fg")]
    FullGibbs,
    #[serde(alias = "BG", alias = "bg")]
    BlockGibbs,
}

impl SamplerKind {
    pub fn short_name(self) -> &'static str {
        match self {
            SamplerKind::FullGibbs => "fg",
            SamplerKind::BlockGibbs => "bg",
        }
    }

    /// Stream offset used so that the two kinds never share a stream.
    pub fn stream_offset(self) -> u32 {
        match self {
            SamplerKind::BlockGibbs => 0,
            SamplerKind::FullGibbs => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `beta = 0`, `u = 0`, `tau = 1`.
    Default,
    State(ChainState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sampler_kind: SamplerKind,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Chain index used to derive the transition stream.
    pub chain: u32,
    pub init: Init,
    /// Keep the auxiliary `omega` draws as well.
    pub store_omega: bool,
}

impl RunConfig {
    pub fn new(sampler_kind: SamplerKind, iterations: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            sampler_kind,
            iterations,
            burn_in,
            thin: 1,
            seed,
            chain: 0,
            init: Init::Default,
            store_omega: false,
        }
    }

    pub fn check(&self) -> Result<(), SamplerError> {
        if self.iterations == 0 {
            return Err(SamplerError::InvalidConfig("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(SamplerError::InvalidConfig(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(SamplerError::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of stored draws: `floor((m - B) / thin)`.
    pub fn stored_rows(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone)]
pub struct RunMeta {
    pub config: RunConfig,
    pub seconds: f64,
}

/// Stored draws after burn-in and thinning. Rows are iterations.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws_eta: DMatrix<f64>,
    pub draws_tau: DMatrix<f64>,
    pub draws_omega: Option<DMatrix<f64>>,
    pub p: usize,
    pub meta: RunMeta,
}

impl ChainOutput {
    pub fn sampler_kind(&self) -> SamplerKind {
        self.meta.config.sampler_kind
    }

    pub fn draws_beta(&self) -> DMatrix<f64> {
        self.draws_eta.columns(0, self.p).into_owned()
    }

    pub fn draws_u(&self) -> DMatrix<f64> {
        let q = self.draws_eta.ncols() - self.p;
        self.draws_eta.columns(self.p, q).into_owned()
    }
}

/// Sub-steps of one transition, in the order they consume randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Tau,
    Omega,
    U,
    Beta,
    Eta,
}

/// Notified as each conditional draw begins.
pub trait StageObserver {
    fn enter(&mut self, stage: Stage);
}

impl StageObserver for () {
    fn enter(&mut self, _stage: Stage) {}
}

/// Conditional law of `tau` given `u`.
#[derive(Debug, Clone, PartialEq)]
pub enum TauConditional {
    /// Independent `Gamma(shape_j, rate_j)` per block.
    Gamma(Vec<(f64, f64)>),
    /// The state is in the null set (some zero-rate block has `u_j = 0`):
    /// every `tau_j ~ Gamma(1, 1)`.
    NullSet,
}

pub fn tau_conditional(u: &DVector<f64>, prior: &PriorSpec, blocks: &[usize]) -> TauConditional {
    let ranges = block_ranges(blocks);
    let in_null_set = ranges.iter().enumerate().any(|(j, range)| {
        prior.b[j] == 0.0 && u.rows(range.start, range.len()).iter().all(|&v| v == 0.0)
    });
    if in_null_set {
        return TauConditional::NullSet;
    }
    TauConditional::Gamma(
        ranges
            .iter()
            .enumerate()
            .map(|(j, range)| {
                let ss = u.rows(range.start, range.len()).norm_squared();
                (prior.a[j] + range.len() as f64 / 2.0, prior.b[j] + 0.5 * ss)
            })
            .collect(),
    )
}

pub fn draw_tau<R: Rng + ?Sized>(
    u: &DVector<f64>,
    prior: &PriorSpec,
    blocks: &[usize],
    rng: &mut R,
) -> Result<DVector<f64>, SamplerError> {
    let params = match tau_conditional(u, prior, blocks) {
        TauConditional::Gamma(p) => p,
        TauConditional::NullSet => vec![(1.0, 1.0); blocks.len()],
    };
    let mut tau = DVector::zeros(params.len());
    for (j, (shape, rate)) in params.into_iter().enumerate() {
        let gamma = Gamma::new(shape, 1.0 / rate)
            .map_err(|_| SamplerError::Gamma { block: j, shape, rate })?;
        // Tiny shapes can round a draw to zero; keep tau strictly positive.
        tau[j] = gamma.sample(rng).max(f64::MIN_POSITIVE);
    }
    Ok(tau)
}

/// `omega_i ~ PG(1, |m_i' eta|)` independently.
pub fn draw_omega<R: Rng + ?Sized>(
    eta: &DVector<f64>,
    m: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let lin = m * eta;
    lin.map(|t| sample_pg1(t.abs(), rng))
}

/// Precision and shift of `beta | u, omega`:
/// `S = X'ΩX + Q`, `t = X'κ + Qμ0 - X'ΩZu`.
pub fn beta_conditional(
    u: &DVector<f64>,
    omega: &DVector<f64>,
    spec: &ModelSpec,
) -> (DMatrix<f64>, DVector<f64>) {
    let x = spec.x();
    let prior = spec.prior();
    let s = weighted_gram(x, omega) + &prior.q;
    let zu = spec.z() * u;
    let weighted = spec.kappa() - omega.component_mul(&zu);
    let t = x.tr_mul(&weighted) + &prior.q * &prior.mu0;
    (s, t)
}

/// Precision and shift of `u | beta, omega, tau`:
/// `S = Z'ΩZ + D(tau)`, `t = Z'κ - Z'ΩXβ`.
pub fn u_conditional(
    beta: &DVector<f64>,
    omega: &DVector<f64>,
    tau: &DVector<f64>,
    spec: &ModelSpec,
) -> (DMatrix<f64>, DVector<f64>) {
    let z = spec.z();
    let mut s = weighted_gram(z, omega);
    for (j, range) in spec.block_ranges().into_iter().enumerate() {
        for d in range {
            s[(d, d)] += tau[j];
        }
    }
    let xb = spec.x() * beta;
    let weighted = spec.kappa() - omega.component_mul(&xb);
    (s, z.tr_mul(&weighted))
}

/// Precision and shift of `eta | omega, tau`.
pub fn eta_conditional(
    omega: &DVector<f64>,
    tau: &DVector<f64>,
    spec: &ModelSpec,
) -> Result<(DMatrix<f64>, DVector<f64>), LinalgError> {
    build_eta_precision(spec.m(), omega, tau, spec.kappa(), spec.prior(), spec.blocks())
}

pub fn draw_beta<R: Rng + ?Sized>(
    u: &DVector<f64>,
    omega: &DVector<f64>,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<DVector<f64>, LinalgError> {
    let (s, t) = beta_conditional(u, omega, spec);
    Ok(PrecisionDraw::new(s, t)?.sample(rng))
}

pub fn draw_u<R: Rng + ?Sized>(
    beta: &DVector<f64>,
    omega: &DVector<f64>,
    tau: &DVector<f64>,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<DVector<f64>, LinalgError> {
    let (s, t) = u_conditional(beta, omega, tau, spec);
    Ok(PrecisionDraw::new(s, t)?.sample(rng))
}

pub fn draw_eta<R: Rng + ?Sized>(
    omega: &DVector<f64>,
    tau: &DVector<f64>,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<DVector<f64>, LinalgError> {
    let (s, t) = eta_conditional(omega, tau, spec)?;
    Ok(PrecisionDraw::new(s, t)?.sample(rng))
}

/// One full Gibbs transition.
pub fn fg_step<R: Rng + ?Sized>(
    state: &ChainState,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<ChainState, SamplerError> {
    fg_step_observed(state, spec, rng, &mut ())
}

pub fn fg_step_observed<R: Rng + ?Sized, O: StageObserver + ?Sized>(
    state: &ChainState,
    spec: &ModelSpec,
    rng: &mut R,
    observer: &mut O,
) -> Result<ChainState, SamplerError> {
    observer.enter(Stage::Tau);
    let tau = draw_tau(&state.u, spec.prior(), spec.blocks(), rng)?;
    observer.enter(Stage::Omega);
    let omega = draw_omega(&state.eta(), spec.m(), rng);
    observer.enter(Stage::U);
    let u = draw_u(&state.beta, &omega, &tau, spec, rng)?;
    observer.enter(Stage::Beta);
    let beta = draw_beta(&u, &omega, spec, rng)?;
    Ok(ChainState {
        beta,
        u,
        omega,
        tau,
    })
}

/// One two-block Gibbs transition.
pub fn bg_step<R: Rng + ?Sized>(
    state: &ChainState,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<ChainState, SamplerError> {
    bg_step_observed(state, spec, rng, &mut ())
}

pub fn bg_step_observed<R: Rng + ?Sized, O: StageObserver + ?Sized>(
    state: &ChainState,
    spec: &ModelSpec,
    rng: &mut R,
    observer: &mut O,
) -> Result<ChainState, SamplerError> {
    observer.enter(Stage::Tau);
    let tau = draw_tau(&state.u, spec.prior(), spec.blocks(), rng)?;
    observer.enter(Stage::Omega);
    let omega = draw_omega(&state.eta(), spec.m(), rng);
    observer.enter(Stage::Eta);
    let eta = draw_eta(&omega, &tau, spec, rng)?;
    let mut next = ChainState {
        beta: DVector::zeros(spec.p()),
        u: DVector::zeros(spec.q()),
        omega,
        tau,
    };
    next.set_eta(&eta);
    Ok(next)
}

pub fn step<R: Rng + ?Sized>(
    kind: SamplerKind,
    state: &ChainState,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<ChainState, SamplerError> {
    match kind {
        SamplerKind::FullGibbs => fg_step(state, spec, rng),
        SamplerKind::BlockGibbs => bg_step(state, spec, rng),
    }
}

/// Runs a chain for `config.iterations` transitions, discarding the first
/// `burn_in` and keeping every `thin`-th draw after that.
pub fn run_chain(spec: &ModelSpec, config: &RunConfig) -> Result<ChainOutput, SamplerError> {
    config.check()?;
    let violations = spec.validate();
    if !violations.is_empty() {
        return Err(SamplerError::InvalidModel(violations));
    }
    let mut state = match &config.init {
        Init::Default => ChainState::default_for(spec),
        Init::State(s) => {
            s.check(spec)?;
            s.clone()
        }
    };
    let mut rng = streams::stream(config.seed, config.chain, Purpose::Transitions);
    let rows = config.stored_rows();
    let (n, k, r) = (spec.n(), spec.p() + spec.q(), spec.r());
    let mut draws_eta = DMatrix::zeros(rows, k);
    let mut draws_tau = DMatrix::zeros(rows, r);
    let mut draws_omega = config.store_omega.then(|| DMatrix::zeros(rows, n));

    let start = Instant::now();
    let mut stored = 0;
    for iteration in 1..=config.iterations {
        state = step(config.sampler_kind, &state, spec, &mut rng).map_err(|e| {
            SamplerError::Step {
                iteration,
                source: Box::new(e),
            }
        })?;
        if iteration > config.burn_in
            && (iteration - config.burn_in).is_multiple_of(config.thin)
            && stored < rows
        {
            let eta = state.eta();
            draws_eta.row_mut(stored).copy_from(&eta.transpose());
            draws_tau.row_mut(stored).copy_from(&state.tau.transpose());
            if let Some(om) = draws_omega.as_mut() {
                om.row_mut(stored).copy_from(&state.omega.transpose());
            }
            stored += 1;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(ChainOutput {
        draws_eta,
        draws_tau,
        draws_omega,
        p: spec.p(),
        meta: RunMeta {
            config: config.clone(),
            seconds,
        },
    })
}
