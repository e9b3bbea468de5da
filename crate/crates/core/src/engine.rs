//! Federated training with quantized uplink and downlink.
//!
//! One round `m`:
//!
//! 1. the server picks downlink bits from the range of `w_m`, quantizes
//!    `w_m` once and sends the same tensor to every client;
//! 2. client `i` dequantizes it, runs `τ` local SGD steps, forms
//!    `Δw_m^i = w_{m,τ}^i - Q2(w_m)`, picks uplink bits from the range of
//!    `Δw_m^i` and quantizes it;
//! 3. the server aggregates `w_{m+1} = w_m + Σ p_i Q1(Δw_m^i)` in ascending
//!    client order.
//!
//! All clients participate in every round. Randomness is derived from
//! `(seed, round, client, purpose)`, so results do not depend on the order in
//! which clients are processed.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::allocation::{AllocationPolicy, LinkBits, RangeTrace, LOSSLESS_BITS};
use crate::data::{iid_partition, Dataset, Partition};
use crate::energy::{ClientRef, EnergyLedger, EnergyTotals, Link};
use crate::model::{evaluate, loss_and_grad, ModelSpec};
use crate::quantizer::{dequantize, quantize, QuantizedTensor, QuantizerSpec};
use crate::rng::{self, derive_seed, tag};
use crate::{Error, ParamVector, Result};

/// A differentiable local loss over a client's samples.
pub trait LocalObjective {
    fn dim(&self) -> usize;

    /// Mean loss over `batch` and its gradient at `w`.
    fn loss_and_grad(&self, w: &ParamVector, batch: &[usize]) -> Result<(f64, ParamVector)>;
}

/// Cross-entropy of a [`ModelSpec`] on a dataset.
#[derive(Debug, Clone, Copy)]
pub struct SupervisedObjective<'a> {
    pub spec: ModelSpec,
    pub data: &'a Dataset,
}

impl LocalObjective for SupervisedObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss_and_grad(&self, w: &ParamVector, batch: &[usize]) -> Result<(f64, ParamVector)> {
        loss_and_grad(&self.spec, w, self.data, batch)
    }
}

/// Hyper-parameters of local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub tau: usize,
    pub eta: f64,
    pub batch_size: usize,
    /// Heavy-ball coefficient; 0 is plain SGD.
    pub momentum: f64,
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::invalid("tau must be at least 1"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Epoch-wise shuffled minibatches over a client's shard.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(indices: Vec<usize>, seed: u64) -> Self {
        BatchSampler {
            cursor: indices.len(),
            order: indices,
            rng: rng::stream(seed),
        }
    }

    /// Next batch of `min(size, shard)` indices. A new epoch starts (with a
    /// fresh shuffle) when fewer than `size` unseen indices remain.
    pub fn next_batch(&mut self, size: usize) -> &[usize] {
        let size = size.min(self.order.len());
        if self.cursor + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = &self.order[self.cursor..self.cursor + size];
        self.cursor += size;
        batch
    }
}

/// Per-client training state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    indices: Vec<usize>,
    sampler: BatchSampler,
    momentum: Option<ParamVector>,
}

impl ClientState {
    pub fn new(id: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid(format!("client {id} has no data")));
        }
        Ok(ClientState {
            id,
            sampler: BatchSampler::new(indices.clone(), 0),
            indices,
            momentum: None,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Reseeds batch sampling from `(seed, round, id)` and clears momentum.
    pub fn begin_round(&mut self, seed: u64, round: usize) {
        let s = derive_seed(&[seed, round as u64, self.id as u64, tag::BATCH]);
        self.sampler = BatchSampler::new(self.indices.clone(), s);
        self.momentum = None;
    }
}

/// Result of local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub model: ParamVector,
    /// Mean minibatch loss over the `τ` steps.
    pub mean_loss: f64,
    /// Mean squared stochastic-gradient norm over the `τ` steps.
    pub mean_grad_norm_sq: f64,
    /// Whether the batch size was clamped to the shard size.
    pub batch_clamped: bool,
}

/// `τ` steps of `w <- w - η v`, `v <- μ v + g`, starting from `w_received`.
pub fn local_train(
    client: &mut ClientState,
    objective: &dyn LocalObjective,
    w_received: &ParamVector,
    cfg: &LocalTrainConfig,
) -> Result<LocalOutcome> {
    cfg.validate()?;
    if w_received.len() != objective.dim() {
        return Err(Error::invalid(format!(
            "received model has {} entries, objective needs {}",
            w_received.len(),
            objective.dim()
        )));
    }
    let batch_clamped = cfg.batch_size > client.indices.len();
    let mut w = w_received.clone();
    let mut loss_sum = 0.0;
    let mut grad_sum = 0.0;
    for _ in 0..cfg.tau {
        let batch = client.sampler.next_batch(cfg.batch_size);
        let (loss, g) = objective.loss_and_grad(&w, batch)?;
        loss_sum += loss;
        grad_sum += g.l2_norm_sq();
        let step = match client.momentum.take() {
            Some(v) if cfg.momentum > 0.0 => ParamVector::combine(&v, &g, cfg.momentum, 1.0)?,
            _ => g,
        };
        w = w.axpy(-cfg.eta, &step)?;
        if cfg.momentum > 0.0 {
            client.momentum = Some(step);
        }
    }
    Ok(LocalOutcome {
        model: w,
        mean_loss: loss_sum / cfg.tau as f64,
        mean_grad_norm_sq: grad_sum / cfg.tau as f64,
        batch_clamped,
    })
}

/// What travels on a link.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Quantized(QuantizedTensor),
    /// Passthrough without quantization, charged at [`LOSSLESS_BITS`].
    Lossless(ParamVector),
}

impl Payload {
    pub fn encode(v: &ParamVector, bits: LinkBits, seed: u64) -> Result<Self> {
        match bits {
            LinkBits::Lossless => Ok(Payload::Lossless(v.clone())),
            LinkBits::Quantized(b) => Ok(Payload::Quantized(quantize(
                v,
                QuantizerSpec::new(b.bits)?,
                seed,
            )?)),
        }
    }

    pub fn decode(&self) -> Result<ParamVector> {
        match self {
            Payload::Quantized(q) => dequantize(q),
            Payload::Lossless(v) => Ok(v.clone()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Quantized(q) => q.len(),
            Payload::Lossless(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bits charged per element.
    pub fn bits(&self) -> u8 {
        match self {
            Payload::Quantized(q) => q.bits(),
            Payload::Lossless(_) => LOSSLESS_BITS,
        }
    }
}

/// Seeds for one run: `data` drives batch sampling, `quantizer` drives
/// stochastic rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub data: u64,
    pub quantizer: u64,
}

impl RunSeeds {
    pub fn single(seed: u64) -> Self {
        RunSeeds {
            data: seed,
            quantizer: seed,
        }
    }

    pub fn uplink(&self, round: usize, client: usize) -> u64 {
        derive_seed(&[self.quantizer, round as u64, client as u64, tag::UPLINK])
    }

    pub fn downlink(&self, round: usize) -> u64 {
        derive_seed(&[self.quantizer, round as u64, tag::DOWNLINK])
    }
}

/// Everything a client sends back, plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpload {
    pub client: usize,
    pub payload: Payload,
    pub bits: LinkBits,
    /// `R(Δw_m^i)`.
    pub range: f64,
    /// `w_{m,τ}^i`.
    pub local_model: ParamVector,
    /// `Δw_m^i` before quantization.
    pub update: ParamVector,
    pub mean_loss: f64,
    pub mean_grad_norm_sq: f64,
    pub batch_clamped: bool,
}

/// Client side of a round: decode the broadcast, train, quantize the update.
pub fn client_round(
    client: &mut ClientState,
    objective: &dyn LocalObjective,
    broadcast: &Payload,
    policy: &AllocationPolicy,
    round: usize,
    seeds: RunSeeds,
    cfg: &LocalTrainConfig,
) -> Result<ClientUpload> {
    let received = broadcast.decode()?;
    client.begin_round(seeds.data, round);
    let local = local_train(client, objective, &received, cfg)?;
    let update = local.model.sub(&received)?;
    let range = update.range().range;
    let bits = policy.uplink(round, range);
    let payload = Payload::encode(&update, bits, seeds.uplink(round, client.id))?;
    Ok(ClientUpload {
        client: client.id,
        payload,
        bits,
        range,
        local_model: local.model,
        update,
        mean_loss: local.mean_loss,
        mean_grad_norm_sq: local.mean_grad_norm_sq,
        batch_clamped: local.batch_clamped,
    })
}

/// `w + Σ p_i decode(upload_i)`, summed in the order given.
pub fn aggregate(w: &ParamVector, uploads: &[&Payload], weights: &[f64]) -> Result<ParamVector> {
    if uploads.len() != weights.len() {
        return Err(Error::invalid("one weight per upload required"));
    }
    let mut acc = w.clone().into_inner();
    for (payload, &p) in uploads.iter().zip(weights) {
        let delta = payload.decode()?;
        if delta.len() != acc.len() {
            return Err(Error::invalid("update dimension mismatch"));
        }
        for (a, d) in acc.iter_mut().zip(delta.as_slice()) {
            *a += p * d;
        }
    }
    ParamVector::new(acc)
}

/// All intermediate products of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundArtifacts {
    pub broadcast: Payload,
    pub downlink_bits: LinkBits,
    pub downlink_range: f64,
    /// Sorted by client id.
    pub uploads: Vec<ClientUpload>,
    pub new_global: ParamVector,
}

/// One full round over `clients` (any order; aggregation is by ascending id).
#[allow(clippy::too_many_arguments)]
pub fn execute_round(
    w_global: &ParamVector,
    clients: &mut [ClientState],
    weights: &[f64],
    objective: &dyn LocalObjective,
    policy: &AllocationPolicy,
    round: usize,
    seeds: RunSeeds,
    cfg: &LocalTrainConfig,
) -> Result<RoundArtifacts> {
    if clients.len() != weights.len() || clients.is_empty() {
        return Err(Error::invalid(
            "one weight per client and at least one client required",
        ));
    }
    let downlink_range = w_global.range().range;
    let downlink_bits = policy.downlink(round, downlink_range, clients.len());
    let broadcast = Payload::encode(w_global, downlink_bits, seeds.downlink(round))?;

    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by_key(|&k| clients[k].id);
    let mut uploads = Vec::with_capacity(clients.len());
    let mut sorted_weights = Vec::with_capacity(clients.len());
    for k in order {
        uploads.push(client_round(
            &mut clients[k],
            objective,
            &broadcast,
            policy,
            round,
            seeds,
            cfg,
        )?);
        sorted_weights.push(weights[k]);
    }
    let payloads: Vec<&Payload> = uploads.iter().map(|u| &u.payload).collect();
    let new_global = aggregate(w_global, &payloads, &sorted_weights)?;
    Ok(RoundArtifacts {
        broadcast,
        downlink_bits,
        downlink_range,
        uploads,
        new_global,
    })
}

/// Per-round metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean over clients of their mean local loss.
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub uplink_ranges: Vec<f64>,
    pub downlink_range: f64,
    pub uplink_bits: Vec<u8>,
    pub downlink_bits: u8,
    pub energy: EnergyTotals,
    pub grad_norm_sq_mean: f64,
    /// Bit widths whose raw formula fell outside `[1, 32]`.
    pub clamp_events: usize,
    pub batch_clamped: bool,
}

impl RoundRecord {
    pub fn mean_uplink_range(&self) -> f64 {
        self.uplink_ranges.iter().sum::<f64>() / self.uplink_ranges.len() as f64
    }

    pub fn mean_uplink_bits(&self) -> f64 {
        self.uplink_bits.iter().map(|&b| b as f64).sum::<f64>() / self.uplink_bits.len() as f64
    }
}

/// Configuration of a federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FlConfig {
    pub rounds: usize,
    pub clients: usize,
    pub local: LocalTrainConfig,
    pub policy: AllocationPolicy,
    pub e1: f64,
    pub e2: f64,
    pub seed: u64,
    /// Overrides the quantizer seed; defaults to `seed`.
    pub quantizer_seed: Option<u64>,
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::invalid("need at least one client"));
        }
        self.local.validate()?;
        self.policy.validate(self.rounds)?;
        EnergyLedger::new(self.e1, self.e2)?;
        Ok(())
    }

    pub fn seeds(&self) -> RunSeeds {
        RunSeeds {
            data: self.seed,
            quantizer: self.quantizer_seed.unwrap_or(self.seed),
        }
    }
}

/// Server-side state of a run in progress.
pub struct ServerState<'a> {
    config: FlConfig,
    spec: ModelSpec,
    objective: SupervisedObjective<'a>,
    test: &'a Dataset,
    clients: Vec<ClientState>,
    weights: Vec<f64>,
    w_global: ParamVector,
    round: usize,
    ledger: EnergyLedger,
    history: Vec<RoundRecord>,
}

impl<'a> ServerState<'a> {
    /// Validates the configuration, partitions `train` IID across clients and
    /// initializes the global model.
    pub fn new(
        config: FlConfig,
        spec: ModelSpec,
        train: &'a Dataset,
        test: &'a Dataset,
    ) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        if train.num_features() != spec.input_dim || test.num_features() != spec.input_dim {
            return Err(Error::invalid(
                "dataset feature count does not match the model",
            ));
        }
        let partition = iid_partition(train.len(), config.clients, config.seed)?;
        let w0 = spec.init_params(config.seed)?;
        Self::with_partition(config, spec, train, test, partition, w0)
    }

    /// Like [`ServerState::new`] with an explicit partition and initial model.
    pub fn with_partition(
        config: FlConfig,
        spec: ModelSpec,
        train: &'a Dataset,
        test: &'a Dataset,
        partition: Partition,
        w0: ParamVector,
    ) -> Result<Self> {
        config.validate()?;
        if partition.client_indices.len() != config.clients {
            return Err(Error::invalid("partition does not match the client count"));
        }
        if w0.len() != spec.param_count() {
            return Err(Error::invalid(
                "initial model does not match the model spec",
            ));
        }
        let clients = partition
            .client_indices
            .into_iter()
            .enumerate()
            .map(|(i, idx)| ClientState::new(i, idx))
            .collect::<Result<Vec<_>>>()?;
        Ok(ServerState {
            ledger: EnergyLedger::new(config.e1, config.e2)?,
            objective: SupervisedObjective { spec, data: train },
            config,
            spec,
            test,
            clients,
            weights: partition.weights,
            w_global: w0,
            round: 0,
            history: Vec::new(),
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn global_model(&self) -> &ParamVector {
        &self.w_global
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    /// Runs one round and returns it with its record. A failing client aborts
    /// the round without touching the global model.
    pub fn step(&mut self) -> Result<(RoundRecord, RoundArtifacts)> {
        let m = self.round;
        let art = execute_round(
            &self.w_global,
            &mut self.clients,
            &self.weights,
            &self.objective,
            &self.config.policy,
            m,
            self.config.seeds(),
            &self.config.local,
        )?;
        let d = self.w_global.len();
        let n = self.clients.len();
        for i in 0..n {
            self.ledger.record(
                m,
                Link::Downlink,
                ClientRef::Client(i),
                d,
                art.broadcast.bits(),
            )?;
        }
        for u in &art.uploads {
            self.ledger.record(
                m,
                Link::Uplink,
                ClientRef::Client(u.client),
                d,
                u.payload.bits(),
            )?;
        }
        let eval = evaluate(&self.spec, &art.new_global, self.test)?;
        let clamp_events = usize::from(art.downlink_bits.clamped())
            + art.uploads.iter().filter(|u| u.bits.clamped()).count();
        let record = RoundRecord {
            round: m,
            train_loss: art.uploads.iter().map(|u| u.mean_loss).sum::<f64>() / n as f64,
            test_accuracy: eval.accuracy,
            test_loss: eval.loss,
            uplink_ranges: art.uploads.iter().map(|u| u.range).collect(),
            downlink_range: art.downlink_range,
            uplink_bits: art.uploads.iter().map(|u| u.payload.bits()).collect(),
            downlink_bits: art.broadcast.bits(),
            energy: self.ledger.round_total(m),
            grad_norm_sq_mean: art.uploads.iter().map(|u| u.mean_grad_norm_sq).sum::<f64>()
                / n as f64,
            clamp_events,
            batch_clamped: art.uploads.iter().any(|u| u.batch_clamped),
        };
        self.w_global = art.new_global.clone();
        self.round += 1;
        self.history.push(record.clone());
        Ok((record, art))
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            history: self.history,
            ledger: self.ledger,
            final_model: self.w_global,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub history: Vec<RoundRecord>,
    pub ledger: EnergyLedger,
    pub final_model: ParamVector,
}

impl RunOutput {
    /// Observed ranges as an allocation trace (zero ranges replaced).
    pub fn range_trace(&self) -> Result<RangeTrace> {
        RangeTrace::from_observed(
            self.history
                .iter()
                .map(|r| r.uplink_ranges.clone())
                .collect(),
            self.history.iter().map(|r| r.downlink_range).collect(),
        )
    }
}

/// Runs `config.rounds` rounds.
pub fn run_federated(
    config: &FlConfig,
    spec: ModelSpec,
    train: &Dataset,
    test: &Dataset,
) -> Result<RunOutput> {
    let mut server = ServerState::new(config.clone(), spec, train, test)?;
    for _ in 0..config.rounds {
        server.step()?;
    }
    Ok(server.finish())
}

/// Oracle mode: records the range trace of a lossless pilot run and returns
/// the closed-form joint `alpha` for `budget`.
pub fn oracle_alpha(
    config: &FlConfig,
    spec: ModelSpec,
    train: &Dataset,
    test: &Dataset,
    budget: f64,
) -> Result<(f64, RangeTrace)> {
    let pilot = FlConfig {
        policy: AllocationPolicy::Lossless,
        ..config.clone()
    };
    let trace = run_federated(&pilot, spec, train, test)?.range_trace()?;
    let ep = crate::allocation::EnergyParams {
        e1: config.e1,
        e2: config.e2,
        budget,
        d: spec.param_count(),
        n: config.clients,
        k: config.rounds,
    };
    let alpha = crate::allocation::alpha_joint(&trace, &ep)?;
    Ok((alpha, trace))
}
