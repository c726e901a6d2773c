//! Round engine: local SGD at the clients, relaying over the client graph,
//! Bernoulli uplinks, and server-side aggregation for ColRel and the FedAvg
//! baselines.
//!
//! Randomness is split into independent ChaCha streams derived from one
//! master seed: stream `0` drives the channel and stream `1 + i` drives
//! client `i`'s gradient noise. Every variant consumes the streams in the
//! same pattern, so runs that share a seed see the same noise and the same
//! uplink outcomes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::axpy;
use crate::objectives::ObjectiveEnsemble;
use crate::scalar::Scalar;
use crate::topology::ConnectivityGraph;
use crate::weights::{check_unbiasedness, RelayWeights, WeightsError};

pub const CHANNEL_STREAM: u64 = 0;

/// Stream for one `(seed, purpose)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn client_stream(i: usize) -> u64 {
    1 + i as u64
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error("relay weights unusable: {0}")]
    Weights(#[from] WeightsError),
    #[error("relay weights violate unbiasedness in columns {columns:?}")]
    InfeasibleWeights { columns: Vec<usize> },
    #[error("{variant}: model diverged in round {round}{}", locate(.client, .step))]
    Diverged { variant: String, round: usize, client: Option<usize>, step: Option<usize> },
}

fn locate(client: &Option<usize>, step: &Option<usize>) -> String {
    match (client, step) {
        (Some(c), Some(k)) => format!(" at client {c}, local step {k}"),
        _ => " during aggregation".to_string(),
    }
}

/// A local iterate left the finite range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("client {client} diverged at local step {step}")]
pub struct LocalDivergence {
    pub client: usize,
    pub step: usize,
}

/// Runs `T` local SGD steps from `x_global` and returns `x^(r,T) - x_global`.
pub fn local_round<T: Scalar, R: Rng + ?Sized>(
    ens: &ObjectiveEnsemble<T>,
    i: usize,
    x_global: &[T],
    eta: T,
    local_steps: usize,
    rng: &mut R,
) -> Result<Vec<T>, LocalDivergence> {
    let mut x = x_global.to_vec();
    let mut g = vec![T::zero(); x.len()];
    for step in 0..local_steps {
        ens.stochastic_gradient_into(i, &x, rng, &mut g);
        axpy(-eta, &g, &mut x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LocalDivergence { client: i, step });
        }
    }
    for (xi, &x0) in x.iter_mut().zip(x_global) {
        *xi -= x0;
    }
    Ok(x)
}

/// `Δx̃_i = Σ_{j ∈ N_i ∪ {i}} α_ij Δx_j`, using row `i` of `A`.
pub fn relay_combine<T: Scalar>(
    g: &ConnectivityGraph<T>,
    a: &RelayWeights<T>,
    deltas: &[Vec<T>],
    i: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); deltas[i].len()];
    for &j in g.closed(i) {
        axpy(a.get(i, j), &deltas[j], &mut out);
    }
    out
}

/// Uplink outcomes for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChannelRealization {
    pub tau: Vec<bool>,
}

impl ChannelRealization {
    pub fn all_connected(n: usize) -> Self {
        Self { tau: vec![true; n] }
    }

    pub fn num_connected(&self) -> usize {
        self.tau.iter().filter(|&&t| t).count()
    }
}

/// Independent Bernoulli(`p_i`) uplink draws.
pub fn sample_channel<T: Scalar, R: Rng + ?Sized>(g: &ConnectivityGraph<T>, rng: &mut R) -> ChannelRealization {
    ChannelRealization {
        tau: g.p().iter().map(|&p| T::sample_unit(rng) < p).collect(),
    }
}

/// Total weight source `i`'s update receives at the server in one
/// realization: `c_i = Σ_j τ_j α_ji`.
pub fn effective_coefficients<T: Scalar>(
    g: &ConnectivityGraph<T>,
    a: &RelayWeights<T>,
    tau: &ChannelRealization,
) -> Vec<T> {
    (0..g.n())
        .map(|i| {
            g.closed(i)
                .iter()
                .filter(|&&j| tau.tau[j])
                .map(|&j| a.get(j, i))
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmVariant<T> {
    /// Relay with the given (unbiased) weights, blind server.
    ColRel(RelayWeights<T>),
    /// Every uplink succeeds.
    FedAvgNoDropout,
    /// Server sums whatever arrives and scales by `1/n`.
    FedAvgBlindDropout,
    /// Server averages over the clients that got through.
    FedAvgNonBlindDropout,
}

impl<T> AlgorithmVariant<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ColRel(_) => "colrel",
            Self::FedAvgNoDropout => "fedavg_no_dropout",
            Self::FedAvgBlindDropout => "fedavg_blind_dropout",
            Self::FedAvgNonBlindDropout => "fedavg_nonblind_dropout",
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        match self {
            Self::ColRel(_) | Self::FedAvgBlindDropout => Aggregation::Blind,
            Self::FedAvgNoDropout => Aggregation::Full,
            Self::FedAvgNonBlindDropout => Aggregation::NonBlind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `(1/n) Σ τ_i u_i`; only the masked sum is visible to the server.
    Blind,
    /// `Σ τ_i u_i / Σ τ_i`, no change when nothing arrives.
    NonBlind,
    /// `(1/n) Σ u_i`, ignoring the channel.
    Full,
}

/// Server-side heavy-ball state.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum<T> {
    pub beta: T,
    pub buffer: Vec<T>,
}

impl<T: Scalar> Momentum<T> {
    pub fn new(beta: T, d: usize) -> Self {
        Self { beta, buffer: vec![T::zero(); d] }
    }
}

/// Superposition of the transmitted vectors; the only thing a blind server
/// receives.
fn masked_sum<T: Scalar>(updates: &[Vec<T>], mask: &[bool]) -> Vec<T> {
    let mut sum = vec![T::zero(); updates[0].len()];
    for (u, &on) in updates.iter().zip(mask) {
        if on {
            axpy(T::one(), u, &mut sum);
        }
    }
    sum
}

/// Applies one server update and returns the new global model.
pub fn ps_aggregate<T: Scalar>(
    x_global: &[T],
    updates: &[Vec<T>],
    tau: &ChannelRealization,
    rule: Aggregation,
    momentum: Option<&mut Momentum<T>>,
) -> Vec<T> {
    let n = updates.len();
    let step = match rule {
        Aggregation::Blind => scaled(masked_sum(updates, &tau.tau), T::one() / T::from_count(n)),
        Aggregation::Full => scaled(masked_sum(updates, &vec![true; n]), T::one() / T::from_count(n)),
        Aggregation::NonBlind => match tau.num_connected() {
            0 => vec![T::zero(); x_global.len()],
            k => scaled(masked_sum(updates, &tau.tau), T::one() / T::from_count(k)),
        },
    };
    let mut x = x_global.to_vec();
    match momentum {
        Some(m) => {
            for (b, &s) in m.buffer.iter_mut().zip(&step) {
                *b = m.beta * *b + s;
            }
            axpy(T::one(), &m.buffer, &mut x);
        }
        None => axpy(T::one(), &step, &mut x),
    }
    x
}

fn scaled<T: Scalar>(mut v: Vec<T>, s: T) -> Vec<T> {
    v.iter_mut().for_each(|x| *x *= s);
    v
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum StepSchedule<T> {
    Constant { value: T },
    /// `η_r = 4 / (μ (max(r, hold) T + 1))`: the decaying schedule, held at
    /// its round-`hold` value before that round.
    Theorem { mu: T, hold: T },
}

impl<T: Scalar> StepSchedule<T> {
    pub fn eta(&self, r: usize, local_steps: usize) -> T {
        match *self {
            Self::Constant { value } => value,
            Self::Theorem { mu, hold } => {
                let r = T::from_count(r).max(hold);
                T::lit(4.0) / (mu * (r * T::from_count(local_steps) + T::one()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig<T> {
    pub variant: AlgorithmVariant<T>,
    /// Name written to traces; defaults to the variant name when empty.
    pub label: String,
    pub local_steps: usize,
    pub rounds: usize,
    pub schedule: StepSchedule<T>,
    /// Server momentum coefficient.
    pub momentum: Option<T>,
    pub seed: u64,
    pub record_models: bool,
    /// Starting global model; zeros when `None`.
    pub initial_model: Option<Vec<T>>,
}

impl<T: Scalar> SimulationConfig<T> {
    pub fn new(variant: AlgorithmVariant<T>, local_steps: usize, rounds: usize, schedule: StepSchedule<T>, seed: u64) -> Self {
        Self {
            label: variant.name().to_string(),
            variant,
            local_steps,
            rounds,
            schedule,
            momentum: None,
            seed,
            record_models: false,
            initial_model: None,
        }
    }
}

/// State after round `r` (`x_global` is `x^(r+1)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundTrace<T> {
    pub variant: String,
    pub seed: u64,
    pub r: usize,
    pub suboptimality: T,
    pub num_connected: usize,
    pub eta_r: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_global: Option<Vec<T>>,
}

/// Global model, momentum, and random streams of one run.
#[derive(Debug, Clone)]
pub struct RoundState<T> {
    pub r: usize,
    pub x_global: Vec<T>,
    pub momentum: Option<Momentum<T>>,
    client_rngs: Vec<ChaCha8Rng>,
    channel_rng: ChaCha8Rng,
}

impl<T: Scalar> RoundState<T> {
    pub fn new(n: usize, x0: Vec<T>, momentum: Option<T>, seed: u64) -> Self {
        let d = x0.len();
        Self {
            r: 0,
            x_global: x0,
            momentum: momentum.map(|beta| Momentum::new(beta, d)),
            client_rngs: (0..n).map(|i| stream_rng(seed, client_stream(i))).collect(),
            channel_rng: stream_rng(seed, CHANNEL_STREAM),
        }
    }
}

/// Tolerance used to accept relay weights as unbiased.
pub fn feasibility_tolerance<T: Scalar>() -> T {
    T::epsilon().sqrt()
}

fn validate<T: Scalar>(
    ens: &ObjectiveEnsemble<T>,
    g: &ConnectivityGraph<T>,
    cfg: &SimulationConfig<T>,
) -> Result<(), SimulationError> {
    if ens.n() != g.n() {
        return Err(SimulationError::Config(format!(
            "objective has {} clients, graph has {}",
            ens.n(),
            g.n()
        )));
    }
    if cfg.local_steps == 0 {
        return Err(SimulationError::Config("local_steps must be at least 1".into()));
    }
    if let Some(x0) = &cfg.initial_model {
        if x0.len() != ens.d() {
            return Err(SimulationError::Config(format!("initial model has length {}, expected {}", x0.len(), ens.d())));
        }
    }
    match cfg.schedule {
        StepSchedule::Constant { value } if !(value > T::zero()) || !value.is_finite() => {
            return Err(SimulationError::Config(format!("step size must be positive, got {value}")));
        }
        StepSchedule::Theorem { mu, hold } if !(mu > T::zero()) || !(hold >= T::zero()) => {
            return Err(SimulationError::Config("theorem schedule needs mu > 0 and hold >= 0".into()));
        }
        _ => {}
    }
    if let Some(beta) = cfg.momentum {
        if !(beta >= T::zero() && beta < T::one()) {
            return Err(SimulationError::Config(format!("momentum must lie in [0, 1), got {beta}")));
        }
    }
    if let AlgorithmVariant::ColRel(a) = &cfg.variant {
        let report = check_unbiasedness(g, a, feasibility_tolerance())?;
        if !report.all_pass() {
            return Err(SimulationError::InfeasibleWeights { columns: report.failing().map(|c| c.column).collect() });
        }
    }
    Ok(())
}

/// Executes one round in place and returns its trace record.
pub fn step_round<T: Scalar>(
    ens: &ObjectiveEnsemble<T>,
    g: &ConnectivityGraph<T>,
    cfg: &SimulationConfig<T>,
    state: &mut RoundState<T>,
) -> Result<RoundTrace<T>, SimulationError> {
    let r = state.r;
    let eta = cfg.schedule.eta(r, cfg.local_steps);
    let label = if cfg.label.is_empty() { cfg.variant.name() } else { cfg.label.as_str() };

    let mut deltas = Vec::with_capacity(g.n());
    for i in 0..g.n() {
        let delta = local_round(ens, i, &state.x_global, eta, cfg.local_steps, &mut state.client_rngs[i])
            .map_err(|e| SimulationError::Diverged {
                variant: label.to_string(),
                round: r,
                client: Some(e.client),
                step: Some(e.step),
            })?;
        deltas.push(delta);
    }
    let tau = sample_channel(g, &mut state.channel_rng);
    let updates = match &cfg.variant {
        AlgorithmVariant::ColRel(a) => (0..g.n()).map(|i| relay_combine(g, a, &deltas, i)).collect(),
        _ => deltas,
    };
    let x = ps_aggregate(&state.x_global, &updates, &tau, cfg.variant.aggregation(), state.momentum.as_mut());
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SimulationError::Diverged { variant: label.to_string(), round: r, client: None, step: None });
    }
    state.x_global = x;
    state.r += 1;
    Ok(RoundTrace {
        variant: label.to_string(),
        seed: cfg.seed,
        r,
        suboptimality: ens.suboptimality(&state.x_global),
        num_connected: tau.num_connected(),
        eta_r: eta,
        x_global: cfg.record_models.then(|| state.x_global.clone()),
    })
}

/// Runs `cfg.rounds` rounds and returns one record per round.
pub fn run_simulation<T: Scalar>(
    ens: &ObjectiveEnsemble<T>,
    g: &ConnectivityGraph<T>,
    cfg: &SimulationConfig<T>,
) -> Result<Vec<RoundTrace<T>>, SimulationError> {
    validate(ens, g, cfg)?;
    let x0 = cfg.initial_model.clone().unwrap_or_else(|| vec![T::zero(); ens.d()]);
    let mut state = RoundState::new(g.n(), x0, cfg.momentum, cfg.seed);
    (0..cfg.rounds).map(|_| step_round(ens, g, cfg, &mut state)).collect()
}
