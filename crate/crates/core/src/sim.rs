//! Seeded discrete-event simulator of a single FCFS node.
//!
//! Poisson arrivals of total rate `lambda` reach one server of rate
//! `capacity` packets/s. Each arrival is independently tagged with
//! probability `tagged_fraction`; the tagged flow is the one whose delay
//! variation is measured. Packet sizes are unit-mean exponential (or
//! constant), so the service time of a packet is `size / capacity` evaluated
//! when service starts. An optional finite buffer counts waiting plus
//! in-service packets and tail-drops arrivals to a full system.
//!
//! Events are ordered by `(time, sequence number)`; with a fixed seed the
//! whole packet stream is bit-reproducible.

use crate::metrics::AbsIpdvAccumulator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

pub const DEFAULT_TAGGED_FRACTION: f64 = 0.1;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;
pub const DEFAULT_SEED: u64 = 0x5EED_1A77_E400_0001;

/// Header of the packet-trace dump.
pub const PACKET_TRACE_HEADER: &str = "index,flow,arrival_s,service_s,departure_s,sojourn_s,dropped";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("capacity must be positive and finite, got {0}")]
    InvalidCapacity(f64),
    #[error("arrival rate must be positive and finite, got {0}")]
    InvalidArrivalRate(f64),
    #[error("unbounded buffer with load {rho} >= 1 never reaches steady state")]
    Unstable { rho: f64 },
    #[error("tagged fraction must lie in (0, 1], got {0}")]
    InvalidTaggedFraction(f64),
    #[error("warm-up fraction must lie in [0, 0.5), got {0}")]
    InvalidWarmup(f64),
    #[error("buffer capacity must be at least 1 packet")]
    ZeroBuffer,
    #[error("run has no packets to simulate")]
    EmptyRun,
    #[error("need at least one seed per grid point")]
    NoSeeds,
    #[error("grid load {0} must be positive and finite")]
    InvalidLoad(f64),
    #[error("grid point {rho_index} (rho = {rho}), seed {seed_index}: {source}")]
    AtGridPoint {
        rho_index: usize,
        seed_index: usize,
        rho: f64,
        #[source]
        source: Box<SimError>,
    },
    #[error("cannot merge summaries with different parameters: {0}")]
    InconsistentGroup(String),
    #[error("nothing to merge")]
    EmptyGroup,
    #[error("scripted arrivals must be time-ordered with non-negative service times (entry {0})")]
    InvalidScript(usize),
    #[error("packet trace line {line}: {reason}")]
    TraceFormat { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<io::Error> for SimError {
    fn from(e: io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    Tagged,
    Background,
}

impl Flow {
    pub fn as_str(self) -> &'static str {
        match self {
            Flow::Tagged => "tagged",
            Flow::Background => "background",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ServiceDistribution {
    #[default]
    #[serde(rename = "exponential")]
    ExponentialUnitMean,
    #[serde(rename = "deterministic")]
    Deterministic,
}

impl ServiceDistribution {
    pub fn as_str(self) -> &'static str {
        match self {
            ServiceDistribution::ExponentialUnitMean => "exponential",
            ServiceDistribution::Deterministic => "deterministic",
        }
    }

    fn draw_size<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            ServiceDistribution::ExponentialUnitMean => Exp1.sample(rng),
            ServiceDistribution::Deterministic => 1.0,
        }
    }
}

impl fmt::Display for ServiceDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceDistribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponential" | "exponential-unit-mean" => Ok(ServiceDistribution::ExponentialUnitMean),
            "deterministic" => Ok(ServiceDistribution::Deterministic),
            other => Err(format!("unknown service distribution {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Service rate, packets/s.
    pub capacity: f64,
    /// Total arrival rate, packets/s.
    pub arrival_rate: f64,
    pub tagged_fraction: f64,
    /// Packets in the system (waiting + in service); `None` is unbounded.
    pub buffer_capacity: Option<usize>,
    pub horizon_packets: u64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub service_distribution: ServiceDistribution,
}

impl SimConfig {
    pub fn new(capacity: f64, arrival_rate: f64) -> Self {
        Self {
            capacity,
            arrival_rate,
            tagged_fraction: DEFAULT_TAGGED_FRACTION,
            buffer_capacity: None,
            horizon_packets: 1_000_000,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            seed: DEFAULT_SEED,
            service_distribution: ServiceDistribution::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_buffer(mut self, buffer_capacity: Option<usize>) -> Self {
        self.buffer_capacity = buffer_capacity;
        self
    }

    pub fn with_packets(mut self, horizon_packets: u64) -> Self {
        self.horizon_packets = horizon_packets;
        self
    }

    pub fn with_tagged_fraction(mut self, tagged_fraction: f64) -> Self {
        self.tagged_fraction = tagged_fraction;
        self
    }

    pub fn with_warmup(mut self, warmup_fraction: f64) -> Self {
        self.warmup_fraction = warmup_fraction;
        self
    }

    pub fn with_service(mut self, service_distribution: ServiceDistribution) -> Self {
        self.service_distribution = service_distribution;
        self
    }

    pub fn load(&self) -> f64 {
        self.arrival_rate / self.capacity
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(SimError::InvalidCapacity(self.capacity));
        }
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return Err(SimError::InvalidArrivalRate(self.arrival_rate));
        }
        if !(self.tagged_fraction > 0.0 && self.tagged_fraction <= 1.0) {
            return Err(SimError::InvalidTaggedFraction(self.tagged_fraction));
        }
        if !(0.0..0.5).contains(&self.warmup_fraction) {
            return Err(SimError::InvalidWarmup(self.warmup_fraction));
        }
        match self.buffer_capacity {
            Some(0) => return Err(SimError::ZeroBuffer),
            None if self.load() >= 1.0 => return Err(SimError::Unstable { rho: self.load() }),
            _ => {}
        }
        if self.horizon_packets == 0 {
            return Err(SimError::EmptyRun);
        }
        Ok(())
    }

    /// Index of the first arrival that counts towards statistics.
    pub fn warmup_packets(&self) -> u64 {
        (self.warmup_fraction * self.horizon_packets as f64).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub index: u64,
    pub flow: Flow,
    pub arrival_time: f64,
    pub service_time: Option<f64>,
    pub departure_time: Option<f64>,
    /// `departure - arrival`, absent for dropped packets.
    pub sojourn: Option<f64>,
    pub dropped: bool,
}

impl PacketRecord {
    fn dropped(packet: &Arrival) -> Self {
        Self {
            index: packet.index,
            flow: packet.flow,
            arrival_time: packet.time,
            service_time: None,
            departure_time: None,
            sojourn: None,
            dropped: true,
        }
    }

    fn departed(packet: &Arrival, service: f64, departure: f64) -> Self {
        Self {
            index: packet.index,
            flow: packet.flow,
            arrival_time: packet.time,
            service_time: Some(service),
            departure_time: Some(departure),
            sojourn: Some(departure - packet.time),
            dropped: false,
        }
    }
}

/// A packet entering the node. `size` is in units of the mean packet size,
/// so its service time at rate `C` is `size / C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub index: u64,
    pub flow: Flow,
    pub time: f64,
    pub size: f64,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Arrival(Arrival),
    Departure { packet: Arrival, service: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed so the max-heap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// What a single [`FcfsNode::step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeOutput {
    /// Arrival admitted to the buffer.
    Accepted { index: u64, time: f64 },
    Dropped(PacketRecord),
    Departed(PacketRecord),
}

/// Event-list core of a single FCFS server.
///
/// The capacity may change between events; a packet already in service
/// keeps the service time fixed when it started.
#[derive(Debug, Clone)]
pub struct FcfsNode {
    capacity: f64,
    buffer: Option<usize>,
    now: f64,
    seq: u64,
    events: BinaryHeap<Event>,
    waiting: VecDeque<Arrival>,
    busy: bool,
}

impl FcfsNode {
    pub fn new(capacity: f64, buffer: Option<usize>) -> Self {
        Self {
            capacity,
            buffer,
            now: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            waiting: VecDeque::new(),
            busy: false,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn in_system(&self) -> usize {
        self.waiting.len() + usize::from(self.busy)
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.events.peek().map(|e| e.time)
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    pub fn schedule_arrival(&mut self, packet: Arrival) {
        self.push(packet.time, EventKind::Arrival(packet));
    }

    /// Moves the clock forward without processing anything. Events must not
    /// be pending before `time`.
    pub fn advance_clock(&mut self, time: f64) {
        debug_assert!(self.next_event_time().is_none_or(|t| t >= time));
        if time > self.now {
            self.now = time;
        }
    }

    /// Changes the service rate from the current clock onwards. An idle
    /// server with waiting packets starts serving immediately.
    pub fn set_capacity(&mut self, capacity: f64) {
        self.capacity = capacity.max(0.0);
        if !self.busy {
            self.start_service();
        }
    }

    fn start_service(&mut self) {
        if self.capacity <= 0.0 {
            return;
        }
        if let Some(packet) = self.waiting.pop_front() {
            let service = packet.size / self.capacity;
            self.busy = true;
            self.push(self.now + service, EventKind::Departure { packet, service });
        }
    }

    /// Processes the earliest pending event.
    pub fn step(&mut self) -> Option<NodeOutput> {
        let event = self.events.pop()?;
        self.now = event.time;
        Some(match event.kind {
            EventKind::Arrival(packet) => {
                if self.buffer.is_some_and(|k| self.in_system() >= k) {
                    NodeOutput::Dropped(PacketRecord::dropped(&packet))
                } else {
                    self.waiting.push_back(packet);
                    if !self.busy {
                        self.start_service();
                    }
                    NodeOutput::Accepted {
                        index: packet.index,
                        time: packet.time,
                    }
                }
            }
            EventKind::Departure { packet, service } => {
                self.busy = false;
                self.start_service();
                NodeOutput::Departed(PacketRecord::departed(&packet, service, event.time))
            }
        })
    }
}

/// Poisson arrival stream with independent tagging and packet sizes.
#[derive(Debug, Clone)]
pub struct PoissonSource {
    rng: ChaCha8Rng,
    gaps: Exp<f64>,
    tagged_fraction: f64,
    service: ServiceDistribution,
    next_index: u64,
    time: f64,
}

impl PoissonSource {
    pub fn new(arrival_rate: f64, tagged_fraction: f64, service: ServiceDistribution, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            gaps: Exp::new(arrival_rate).expect("positive arrival rate"),
            tagged_fraction,
            service,
            next_index: 0,
            time: 0.0,
        }
    }

    /// Draw order per packet is fixed: gap, tag, size.
    pub fn next_arrival(&mut self) -> Arrival {
        self.time += self.gaps.sample(&mut self.rng);
        let tagged = self.rng.random::<f64>() < self.tagged_fraction;
        let size = self.service.draw_size(&mut self.rng);
        let index = self.next_index;
        self.next_index += 1;
        Arrival {
            index,
            flow: if tagged { Flow::Tagged } else { Flow::Background },
            time: self.time,
            size,
        }
    }
}

/// Aggregate statistics of one run, computed after the warm-up discard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub capacity: f64,
    pub arrival_rate: f64,
    pub tagged_fraction: f64,
    pub buffer_capacity: Option<usize>,
    pub service_distribution: ServiceDistribution,
    pub seed: u64,
    pub offered_packets: u64,
    pub delivered_packets: u64,
    /// Length of the measurement window, seconds.
    pub observation_s: f64,
    pub mean_sojourn: f64,
    /// Mean time spent waiting before service.
    pub mean_wait: f64,
    /// Mean |IPDV| over consecutively delivered tagged packets; NaN without pairs.
    pub empirical_jitter: f64,
    pub n_jitter_samples: u64,
    /// Delivered packets per second.
    pub throughput: f64,
    /// Offered packets per second.
    pub offered_lambda: f64,
    pub loss: f64,
}

impl RunSummary {
    pub fn load(&self) -> f64 {
        self.arrival_rate / self.capacity
    }
}

/// Incremental statistics over the record stream of one run.
///
/// Records arrive in event order: drops at their arrival, deliveries at
/// departure. FCFS keeps deliveries in index order, and a tagged drop
/// between two delivered tagged packets is always seen before the later
/// delivery, which is what lets it break the IPDV pair.
#[derive(Debug)]
struct SummaryBuilder {
    warmup_index: u64,
    boundary_time: f64,
    end_time: f64,
    offered: u64,
    delivered: u64,
    sojourn_sum: f64,
    wait_sum: f64,
    jitter: AbsIpdvAccumulator,
    last_tagged: Option<(u64, f64)>,
    dropped_tagged: VecDeque<u64>,
}

impl SummaryBuilder {
    fn new(warmup_index: u64) -> Self {
        Self {
            warmup_index,
            boundary_time: 0.0,
            end_time: 0.0,
            offered: 0,
            delivered: 0,
            sojourn_sum: 0.0,
            wait_sum: 0.0,
            jitter: AbsIpdvAccumulator::default(),
            last_tagged: None,
            dropped_tagged: VecDeque::new(),
        }
    }

    fn arrival(&mut self, index: u64, time: f64) {
        if index + 1 == self.warmup_index {
            self.boundary_time = time;
        }
        if index >= self.warmup_index {
            self.offered += 1;
        }
        self.end_time = self.end_time.max(time);
    }

    fn record(&mut self, r: &PacketRecord) {
        if let Some(d) = r.departure_time {
            self.end_time = self.end_time.max(d);
        }
        if r.index < self.warmup_index {
            return;
        }
        let tagged = r.flow == Flow::Tagged;
        match (r.sojourn, r.service_time) {
            (Some(sojourn), Some(service)) => {
                self.delivered += 1;
                self.sojourn_sum += sojourn;
                self.wait_sum += sojourn - service;
                if tagged {
                    if let Some((previous, previous_delay)) = self.last_tagged {
                        while self.dropped_tagged.front().is_some_and(|&i| i < previous) {
                            self.dropped_tagged.pop_front();
                        }
                        let broken = self.dropped_tagged.front().is_some_and(|&i| i < r.index);
                        while self.dropped_tagged.front().is_some_and(|&i| i < r.index) {
                            self.dropped_tagged.pop_front();
                        }
                        if !broken {
                            self.jitter.push_pair(previous_delay, sojourn);
                        }
                    }
                    self.last_tagged = Some((r.index, sojourn));
                }
            }
            _ => {
                if tagged {
                    self.dropped_tagged.push_back(r.index);
                }
            }
        }
    }

    fn finish(self, config: &SimConfig) -> Result<RunSummary, SimError> {
        let observation_s = self.end_time - self.boundary_time;
        if self.offered == 0 || observation_s.partial_cmp(&0.0) != Some(Ordering::Greater) {
            return Err(SimError::EmptyRun);
        }
        let delivered = self.delivered as f64;
        Ok(RunSummary {
            capacity: config.capacity,
            arrival_rate: config.arrival_rate,
            tagged_fraction: config.tagged_fraction,
            buffer_capacity: config.buffer_capacity,
            service_distribution: config.service_distribution,
            seed: config.seed,
            offered_packets: self.offered,
            delivered_packets: self.delivered,
            observation_s,
            mean_sojourn: self.sojourn_sum / delivered,
            mean_wait: self.wait_sum / delivered,
            empirical_jitter: self.jitter.mean().unwrap_or(f64::NAN),
            n_jitter_samples: self.jitter.count(),
            throughput: delivered / observation_s,
            offered_lambda: self.offered as f64 / observation_s,
            loss: (self.offered - self.delivered) as f64 / self.offered as f64,
        })
    }
}

fn drive(config: &SimConfig, mut sink: impl FnMut(&PacketRecord)) -> Result<RunSummary, SimError> {
    config.validate()?;
    let mut node = FcfsNode::new(config.capacity, config.buffer_capacity);
    let mut source = PoissonSource::new(
        config.arrival_rate,
        config.tagged_fraction,
        config.service_distribution,
        config.seed,
    );
    let mut stats = SummaryBuilder::new(config.warmup_packets());
    node.schedule_arrival(source.next_arrival());
    while let Some(out) = node.step() {
        match out {
            NodeOutput::Accepted { index, time } => {
                stats.arrival(index, time);
                if index + 1 < config.horizon_packets {
                    node.schedule_arrival(source.next_arrival());
                }
            }
            NodeOutput::Dropped(r) => {
                stats.arrival(r.index, r.arrival_time);
                if r.index + 1 < config.horizon_packets {
                    node.schedule_arrival(source.next_arrival());
                }
                stats.record(&r);
                sink(&r);
            }
            NodeOutput::Departed(r) => {
                stats.record(&r);
                sink(&r);
            }
        }
    }
    stats.finish(config)
}

/// Runs one simulation and returns every packet (ordered by index) with the
/// run summary.
pub fn simulate_run(config: &SimConfig) -> Result<(Vec<PacketRecord>, RunSummary), SimError> {
    let mut records = Vec::with_capacity(config.horizon_packets.min(1 << 24) as usize);
    let summary = drive(config, |r| records.push(*r))?;
    records.sort_unstable_by_key(|r| r.index);
    Ok((records, summary))
}

/// Same statistics as [`simulate_run`] without retaining packet records.
pub fn simulate_summary(config: &SimConfig) -> Result<RunSummary, SimError> {
    drive(config, |_| {})
}

/// One hand-written arrival for [`simulate_scripted`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedArrival {
    pub time: f64,
    pub service_s: f64,
    pub flow: Flow,
}

/// Pushes explicit arrivals with explicit service times through the node.
/// No warm-up is discarded.
pub fn simulate_scripted(
    arrivals: &[ScriptedArrival],
    buffer_capacity: Option<usize>,
) -> Result<(Vec<PacketRecord>, RunSummary), SimError> {
    if arrivals.is_empty() {
        return Err(SimError::EmptyRun);
    }
    if buffer_capacity == Some(0) {
        return Err(SimError::ZeroBuffer);
    }
    let mut previous = 0.0;
    for (i, a) in arrivals.iter().enumerate() {
        if !(a.time >= previous && a.service_s >= 0.0 && a.time.is_finite() && a.service_s.is_finite()) {
            return Err(SimError::InvalidScript(i));
        }
        previous = a.time;
    }
    // unit capacity: a packet's size is its service time
    let mut node = FcfsNode::new(1.0, buffer_capacity);
    for (i, a) in arrivals.iter().enumerate() {
        node.schedule_arrival(Arrival {
            index: i as u64,
            flow: a.flow,
            time: a.time,
            size: a.service_s,
        });
    }
    let span = arrivals.last().map(|a| a.time).unwrap_or(0.0);
    let config = SimConfig {
        capacity: 1.0,
        arrival_rate: if span > 0.0 { arrivals.len() as f64 / span } else { f64::NAN },
        tagged_fraction: 1.0,
        buffer_capacity,
        horizon_packets: arrivals.len() as u64,
        warmup_fraction: 0.0,
        seed: 0,
        service_distribution: ServiceDistribution::Deterministic,
    };
    let mut stats = SummaryBuilder::new(0);
    let mut records = Vec::with_capacity(arrivals.len());
    while let Some(out) = node.step() {
        match out {
            NodeOutput::Accepted { index, time } => stats.arrival(index, time),
            NodeOutput::Dropped(r) => {
                stats.arrival(r.index, r.arrival_time);
                stats.record(&r);
                records.push(r);
            }
            NodeOutput::Departed(r) => {
                stats.record(&r);
                records.push(r);
            }
        }
    }
    records.sort_unstable_by_key(|r| r.index);
    Ok((records, stats.finish(&config)?))
}

/// Which rate a sweep varies to reach each load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Fixed capacity, `lambda = rho * C`.
    #[default]
    ArrivalRate,
    /// Fixed offered rate, `C = lambda / rho`.
    Capacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub rho_index: usize,
    pub seed_index: usize,
    pub rho: f64,
    pub summary: RunSummary,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of sweep point `(rho_index, seed_index)`:
/// `splitmix64(base ^ splitmix64(rho_index << 32 | seed_index))`.
pub fn derive_seed(base: u64, rho_index: usize, seed_index: usize) -> u64 {
    let coord = ((rho_index as u64) << 32) | (seed_index as u64 & 0xFFFF_FFFF);
    splitmix64(base ^ splitmix64(coord))
}

/// Configuration used for one sweep point.
pub fn sweep_point_config(
    base: &SimConfig,
    axis: SweepAxis,
    rho: f64,
    rho_index: usize,
    seed_index: usize,
) -> Result<SimConfig, SimError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(SimError::InvalidLoad(rho));
    }
    let mut config = *base;
    match axis {
        SweepAxis::ArrivalRate => config.arrival_rate = rho * base.capacity,
        SweepAxis::Capacity => config.capacity = base.arrival_rate / rho,
    }
    config.seed = derive_seed(base.seed, rho_index, seed_index);
    Ok(config)
}

/// Runs every `(rho, seed)` combination in parallel. Output order is
/// grid-major, seed-minor regardless of scheduling.
pub fn simulate_sweep(
    base: &SimConfig,
    rho_grid: &[f64],
    seeds_per_point: usize,
    axis: SweepAxis,
) -> Result<Vec<SweepRun>, SimError> {
    if seeds_per_point == 0 {
        return Err(SimError::NoSeeds);
    }
    let points: Vec<(usize, usize, f64)> = rho_grid
        .iter()
        .enumerate()
        .flat_map(|(ri, &rho)| (0..seeds_per_point).map(move |si| (ri, si, rho)))
        .collect();
    points
        .into_par_iter()
        .map(|(rho_index, seed_index, rho)| {
            let annotate = |e: SimError| SimError::AtGridPoint {
                rho_index,
                seed_index,
                rho,
                source: Box::new(e),
            };
            let config = sweep_point_config(base, axis, rho, rho_index, seed_index).map_err(annotate)?;
            let summary = simulate_summary(&config).map_err(annotate)?;
            Ok(SweepRun {
                rho_index,
                seed_index,
                rho,
                summary,
            })
        })
        .collect()
}

/// Summaries regrouped per grid point, in grid order.
pub fn group_by_rho(runs: &[SweepRun]) -> Vec<(f64, Vec<RunSummary>)> {
    let mut groups: Vec<(usize, f64, Vec<RunSummary>)> = Vec::new();
    for run in runs {
        match groups.iter_mut().find(|g| g.0 == run.rho_index) {
            Some(g) => g.2.push(run.summary),
            None => groups.push((run.rho_index, run.rho, vec![run.summary])),
        }
    }
    groups.sort_by_key(|g| g.0);
    groups.into_iter().map(|(_, rho, s)| (rho, s)).collect()
}

/// Across-seed aggregate of summaries sharing one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergedSummary {
    pub rho: f64,
    pub capacity: f64,
    pub arrival_rate: f64,
    pub n_runs: usize,
    pub mean_jitter: f64,
    /// Standard error of the mean jitter across runs; `None` for a single run.
    pub jitter_stderr: Option<f64>,
    pub mean_throughput: f64,
    pub mean_loss: f64,
    pub mean_sojourn: f64,
}

/// Order-insensitive sum: values are added in sorted order.
fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

pub fn merge_summaries(group: &[RunSummary]) -> Result<MergedSummary, SimError> {
    let first = group.first().ok_or(SimError::EmptyGroup)?;
    for s in &group[1..] {
        let mismatch = if s.capacity.to_bits() != first.capacity.to_bits() {
            Some("capacity")
        } else if s.arrival_rate.to_bits() != first.arrival_rate.to_bits() {
            Some("arrival rate")
        } else if s.buffer_capacity != first.buffer_capacity {
            Some("buffer capacity")
        } else if s.service_distribution != first.service_distribution {
            Some("service distribution")
        } else if s.tagged_fraction.to_bits() != first.tagged_fraction.to_bits() {
            Some("tagged fraction")
        } else {
            None
        };
        if let Some(field) = mismatch {
            return Err(SimError::InconsistentGroup(field.to_string()));
        }
    }
    let n = group.len() as f64;
    let mean_of = |f: fn(&RunSummary) -> f64| sorted_sum(group.iter().map(f).collect()) / n;
    let mean_jitter = mean_of(|s| s.empirical_jitter);
    let jitter_stderr = (group.len() > 1).then(|| {
        let ss = sorted_sum(
            group
                .iter()
                .map(|s| (s.empirical_jitter - mean_jitter).powi(2))
                .collect(),
        );
        (ss / (n - 1.0)).sqrt() / n.sqrt()
    });
    Ok(MergedSummary {
        rho: first.load(),
        capacity: first.capacity,
        arrival_rate: first.arrival_rate,
        n_runs: group.len(),
        mean_jitter,
        jitter_stderr,
        mean_throughput: mean_of(|s| s.throughput),
        mean_loss: mean_of(|s| s.loss),
        mean_sojourn: mean_of(|s| s.mean_sojourn),
    })
}

fn fmt_exact(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the packet-trace CSV. Floats carry 17 significant digits.
pub fn write_packet_trace<W: Write>(records: &[PacketRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{PACKET_TRACE_HEADER}")?;
    let opt = |v: Option<f64>| v.map(fmt_exact).unwrap_or_default();
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.index,
            r.flow.as_str(),
            fmt_exact(r.arrival_time),
            opt(r.service_time),
            opt(r.departure_time),
            opt(r.sojourn),
            r.dropped
        )?;
    }
    Ok(())
}

pub fn read_packet_trace<R: BufRead>(input: R) -> Result<Vec<PacketRecord>, SimError> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != PACKET_TRACE_HEADER {
        return Err(SimError::TraceFormat {
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let bad = |reason: &str| SimError::TraceFormat {
            line: line_no,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| bad("malformed float"));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { float(s).map(Some) };
        records.push(PacketRecord {
            index: fields[0].parse().map_err(|_| bad("malformed index"))?,
            flow: match fields[1] {
                "tagged" => Flow::Tagged,
                "background" => Flow::Background,
                _ => return Err(bad("unknown flow")),
            },
            arrival_time: float(fields[2])?,
            service_time: opt(fields[3])?,
            departure_time: opt(fields[4])?,
            sojourn: opt(fields[5])?,
            dropped: fields[6].parse().map_err(|_| bad("malformed dropped flag"))?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(times_services: &[(f64, f64)]) -> Vec<ScriptedArrival> {
        times_services
            .iter()
            .map(|&(time, service_s)| ScriptedArrival {
                time,
                service_s,
                flow: Flow::Tagged,
            })
            .collect()
    }

    #[test]
    fn hand_traced_fcfs() {
        let (records, summary) = simulate_scripted(&script(&[(0.0, 0.5), (0.1, 0.5)]), None).unwrap();
        assert_eq!(records[0].sojourn, Some(0.5));
        assert!((records[1].sojourn.unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(summary.n_jitter_samples, 1);
        assert!((summary.empirical_jitter - 0.4).abs() < 1e-15);
    }

    #[test]
    fn lone_packet_sojourn_is_service() {
        let (records, summary) = simulate_scripted(&script(&[(2.0, 0.25)]), None).unwrap();
        assert_eq!(records[0].sojourn, Some(0.25));
        assert_eq!(records[0].departure_time, Some(2.25));
        assert_eq!(summary.mean_wait, 0.0);
        assert_eq!(summary.n_jitter_samples, 0);
        assert!(summary.empirical_jitter.is_nan());
    }

    #[test]
    fn tail_drop_and_pair_breaking() {
        // K = 1: the second packet arrives while the first is in service
        let arrivals = script(&[(0.0, 1.0), (0.5, 1.0), (2.0, 1.0), (2.2, 0.1), (4.0, 0.3)]);
        let (records, summary) = simulate_scripted(&arrivals, Some(1)).unwrap();
        assert!(records[1].dropped && records[1].departure_time.is_none());
        assert!(records[3].dropped);
        assert_eq!(summary.offered_packets, 5);
        assert_eq!(summary.delivered_packets, 3);
        // 0 -> 2 broken by drop of 1, 2 -> 4 broken by drop of 3
        assert_eq!(summary.n_jitter_samples, 0);
        assert_eq!(summary.loss, 0.4);
    }

    #[test]
    fn scripted_rejects_unordered() {
        assert_eq!(
            simulate_scripted(&script(&[(1.0, 0.1), (0.5, 0.1)]), None).unwrap_err(),
            SimError::InvalidScript(1)
        );
        assert_eq!(simulate_scripted(&[], None).unwrap_err(), SimError::EmptyRun);
    }

    #[test]
    fn config_validation() {
        let base = SimConfig::new(1000.0, 500.0);
        assert!(base.validate().is_ok());
        assert!(matches!(SimConfig::new(1000.0, 1000.0).validate(), Err(SimError::Unstable { .. })));
        assert!(SimConfig::new(1000.0, 1500.0).with_buffer(Some(5)).validate().is_ok());
        assert_eq!(base.with_packets(0).validate(), Err(SimError::EmptyRun));
        assert_eq!(base.with_buffer(Some(0)).validate(), Err(SimError::ZeroBuffer));
        assert!(matches!(base.with_tagged_fraction(0.0).validate(), Err(SimError::InvalidTaggedFraction(_))));
        assert!(matches!(base.with_warmup(0.5).validate(), Err(SimError::InvalidWarmup(_))));
        assert!(matches!(SimConfig::new(0.0, 1.0).validate(), Err(SimError::InvalidCapacity(_))));
    }

    #[test]
    fn small_run_is_deterministic_and_ordered() {
        let config = SimConfig::new(1000.0, 700.0).with_packets(5000).with_seed(11);
        let (a, sa) = simulate_run(&config).unwrap();
        let (b, sb) = simulate_run(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(sa, simulate_summary(&config).unwrap());
        assert!(a.iter().enumerate().all(|(i, r)| r.index == i as u64));
        let (c, _) = simulate_run(&config.with_seed(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn deterministic_service_is_constant() {
        let config = SimConfig::new(200.0, 100.0)
            .with_packets(2000)
            .with_service(ServiceDistribution::Deterministic);
        let (records, _) = simulate_run(&config).unwrap();
        assert!(records.iter().all(|r| r.service_time == Some(1.0 / 200.0)));
    }

    #[test]
    fn zero_capacity_holds_packets() {
        let mut node = FcfsNode::new(0.0, Some(2));
        for i in 0..3 {
            node.schedule_arrival(Arrival {
                index: i,
                flow: Flow::Tagged,
                time: i as f64,
                size: 1.0,
            });
        }
        let outs: Vec<_> = std::iter::from_fn(|| node.step()).collect();
        assert!(matches!(outs[2], NodeOutput::Dropped(_)));
        assert_eq!(node.in_system(), 2);
        node.set_capacity(2.0);
        let out = node.step().unwrap();
        match out {
            NodeOutput::Departed(r) => {
                assert_eq!(r.index, 0);
                assert_eq!(r.departure_time, Some(2.5));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for r in 0..20 {
            for s in 0..20 {
                assert!(seen.insert(derive_seed(42, r, s)));
            }
        }
        assert_eq!(derive_seed(42, 3, 4), derive_seed(42, 3, 4));
    }

    #[test]
    fn sweep_errors_are_annotated() {
        let base = SimConfig::new(1000.0, 500.0).with_packets(1000);
        let err = simulate_sweep(&base, &[0.5, 1.2], 1, SweepAxis::ArrivalRate).unwrap_err();
        match err {
            SimError::AtGridPoint { rho_index, rho, source, .. } => {
                assert_eq!(rho_index, 1);
                assert_eq!(rho, 1.2);
                assert!(matches!(*source, SimError::Unstable { .. }));
            }
            other => panic!("{other:?}"),
        }
        assert!(simulate_sweep(&base, &[], 1, SweepAxis::ArrivalRate).unwrap().is_empty());
        assert_eq!(simulate_sweep(&base, &[0.5], 0, SweepAxis::ArrivalRate), Err(SimError::NoSeeds));
    }

    #[test]
    fn capacity_axis_holds_arrivals() {
        let base = SimConfig::new(1000.0, 400.0).with_buffer(Some(10));
        let c = sweep_point_config(&base, SweepAxis::Capacity, 0.8, 0, 0).unwrap();
        assert_eq!(c.arrival_rate, 400.0);
        assert_eq!(c.capacity, 500.0);
        let c = sweep_point_config(&base, SweepAxis::ArrivalRate, 0.8, 0, 0).unwrap();
        assert_eq!(c.capacity, 1000.0);
        assert_eq!(c.arrival_rate, 800.0);
    }

    #[test]
    fn merge_single_and_duplicates() {
        let s = simulate_summary(&SimConfig::new(1000.0, 500.0).with_packets(10_000)).unwrap();
        let m = merge_summaries(&[s]).unwrap();
        assert_eq!(m.mean_jitter, s.empirical_jitter);
        assert_eq!(m.jitter_stderr, None);
        let m = merge_summaries(&[s, s, s]).unwrap();
        assert_eq!(m.jitter_stderr, Some(0.0));
        assert_eq!(m.n_runs, 3);

        let mut other = s;
        other.capacity = 999.0;
        assert!(matches!(merge_summaries(&[s, other]), Err(SimError::InconsistentGroup(_))));
        assert_eq!(merge_summaries(&[]), Err(SimError::EmptyGroup));
    }

    #[test]
    fn merge_is_order_independent() {
        let base = SimConfig::new(1000.0, 500.0).with_packets(5_000);
        let group: Vec<RunSummary> = (0..6)
            .map(|i| simulate_summary(&base.with_seed(i)).unwrap())
            .collect();
        let mut reversed = group.clone();
        reversed.reverse();
        reversed.swap(1, 4);
        assert_eq!(merge_summaries(&group).unwrap(), merge_summaries(&reversed).unwrap());
    }

    #[test]
    fn packet_trace_round_trip() {
        let config = SimConfig::new(1000.0, 900.0).with_packets(3000).with_buffer(Some(3));
        let (records, _) = simulate_run(&config).unwrap();
        assert!(records.iter().any(|r| r.dropped));
        let mut buf = Vec::new();
        write_packet_trace(&records, &mut buf).unwrap();
        let back = read_packet_trace(&buf[..]).unwrap();
        assert_eq!(back, records);
        assert!(read_packet_trace(&b"index,flow\n"[..]).is_err());
    }
}
