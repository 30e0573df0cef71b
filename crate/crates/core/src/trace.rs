//! Field QoS logs and synthetic mobility traces.
//!
//! A log is a 1 Hz CSV with position, vehicle speed and per-second
//! throughput, jitter and loss counters. Synthetic traces drive the FCFS
//! node second by second: the vehicle moves along a 1-D track, its distance
//! to the base station sets the link rate through a [`RateDistanceMap`], and
//! a fixed-rate packet source pushes traffic through the node whose queue
//! carries over from one second to the next.

use crate::metrics::AbsIpdvAccumulator;
use crate::sim::{FcfsNode, NodeOutput, PoissonSource, ServiceDistribution, DEFAULT_SEED};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

/// Exact header line of the canonical log format.
pub const LOG_HEADER: &str =
    "t_unix_s,lat_deg,lon_deg,integrity,dist_m,speed_kmh,tput_Bps,jitter_ms,lost_pkts,total_pkts";

const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("row {index}: {reason}")]
    InvalidRow { index: usize, reason: String },
    #[error("invalid rate map: {0}")]
    InvalidRateMap(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario line {line}: {reason}")]
    ScenarioSyntax { line: usize, reason: String },
    #[error("scenario has zero duration")]
    EmptyScenario,
    #[error("speed profile is empty")]
    EmptyProfile,
    #[error("time {t} precedes the first speed step at {first}")]
    BeforeProfile { t: f64, first: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<io::Error> for TraceError {
    fn from(e: io::Error) -> Self {
        TraceError::Io(e.to_string())
    }
}

/// One per-second sample of a field log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosLogRow {
    pub t_unix_s: i64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub integrity: u8,
    pub dist_m: f64,
    pub speed_kmh: f64,
    /// Bytes per second.
    pub tput_bps: f64,
    pub jitter_ms: f64,
    pub lost_pkts: u64,
    pub total_pkts: u64,
}

impl QosLogRow {
    /// Lost over offered packets; 0 when nothing was offered.
    pub fn loss_fraction(&self) -> f64 {
        if self.total_pkts == 0 {
            0.0
        } else {
            self.lost_pkts as f64 / self.total_pkts as f64
        }
    }

    fn check(&self) -> Result<(), String> {
        let finite = [
            ("lat_deg", self.lat_deg),
            ("lon_deg", self.lon_deg),
            ("dist_m", self.dist_m),
            ("speed_kmh", self.speed_kmh),
            ("tput_Bps", self.tput_bps),
            ("jitter_ms", self.jitter_ms),
        ];
        if let Some((name, _)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("{name} is not finite"));
        }
        if !(-90.0..=90.0).contains(&self.lat_deg) {
            return Err(format!("latitude {} out of range", self.lat_deg));
        }
        if !(-180.0..=180.0).contains(&self.lon_deg) {
            return Err(format!("longitude {} out of range", self.lon_deg));
        }
        for (name, v) in &finite[2..] {
            if *v < 0.0 {
                return Err(format!("{name} is negative ({v})"));
            }
        }
        if self.lost_pkts > self.total_pkts {
            return Err(format!(
                "lost_pkts {} exceeds total_pkts {}",
                self.lost_pkts, self.total_pkts
            ));
        }
        Ok(())
    }
}

/// Rounds to 9 significant digits, the precision of the log format.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Shortest decimal text of `x` rounded to 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    format!("{}", round_sig9(x))
}

/// Parses and validates a canonical log.
pub fn parse_log<R: BufRead>(input: R) -> Result<Vec<QosLogRow>, TraceError> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(TraceError::Parse {
                line: 1,
                reason: "missing header".into(),
            })
        }
    };
    if header != LOG_HEADER {
        return Err(TraceError::Parse {
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut rows: Vec<QosLogRow> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let err = |reason: String| TraceError::Parse {
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", f.len())));
        }
        fn field<T: FromStr>(s: &str, name: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("malformed {name} {s:?}"))
        }
        let row = (|| -> Result<QosLogRow, String> {
            Ok(QosLogRow {
                t_unix_s: field(f[0], "t_unix_s")?,
                lat_deg: field(f[1], "lat_deg")?,
                lon_deg: field(f[2], "lon_deg")?,
                integrity: field(f[3], "integrity")?,
                dist_m: field(f[4], "dist_m")?,
                speed_kmh: field(f[5], "speed_kmh")?,
                tput_bps: field(f[6], "tput_Bps")?,
                jitter_ms: field(f[7], "jitter_ms")?,
                lost_pkts: field(f[8], "lost_pkts")?,
                total_pkts: field(f[9], "total_pkts")?,
            })
        })()
        .map_err(err)?;
        row.check().map_err(err)?;
        if let Some(prev) = rows.last() {
            if row.t_unix_s <= prev.t_unix_s {
                return Err(err(format!(
                    "timestamp {} does not follow {}",
                    row.t_unix_s, prev.t_unix_s
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes rows in canonical form. Refuses rows that would not parse back.
pub fn write_log<W: Write>(rows: &[QosLogRow], mut out: W) -> Result<(), TraceError> {
    for (index, row) in rows.iter().enumerate() {
        row.check()
            .map_err(|reason| TraceError::InvalidRow { index, reason })?;
        if index > 0 && row.t_unix_s <= rows[index - 1].t_unix_s {
            return Err(TraceError::InvalidRow {
                index,
                reason: "timestamps must strictly increase".into(),
            });
        }
    }
    writeln!(out, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t_unix_s,
            format_sig9(r.lat_deg),
            format_sig9(r.lon_deg),
            r.integrity,
            format_sig9(r.dist_m),
            format_sig9(r.speed_kmh),
            format_sig9(r.tput_bps),
            format_sig9(r.jitter_ms),
            r.lost_pkts,
            r.total_pkts
        )?;
    }
    Ok(())
}

pub fn write_log_string(rows: &[QosLogRow]) -> Result<String, TraceError> {
    let mut buf = Vec::new();
    write_log(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("log is ASCII"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Step,
    #[default]
    Linear,
}

impl FromStr for Interpolation {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "step" => Ok(Interpolation::Step),
            "linear" => Ok(Interpolation::Linear),
            other => Err(TraceError::InvalidRateMap(format!("unknown interpolation {other:?}"))),
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::Step => "step",
            Interpolation::Linear => "linear",
        })
    }
}

/// Deliverable link rate (bytes/s) as a function of distance to the base
/// station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDistanceMap {
    anchors: Vec<(f64, f64)>,
    interpolation: Interpolation,
    mask_zones: Vec<(f64, f64)>,
}

impl RateDistanceMap {
    pub fn new(
        anchors: Vec<(f64, f64)>,
        interpolation: Interpolation,
        mask_zones: Vec<(f64, f64)>,
    ) -> Result<Self, TraceError> {
        if anchors.is_empty() {
            return Err(TraceError::InvalidRateMap("no anchor points".into()));
        }
        for &(d, r) in &anchors {
            if !(d.is_finite() && d >= 0.0 && r.is_finite() && r >= 0.0) {
                return Err(TraceError::InvalidRateMap(format!("bad anchor ({d}, {r})")));
            }
        }
        for w in anchors.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(TraceError::InvalidRateMap("anchor distances must strictly increase".into()));
            }
            if w[1].1 > w[0].1 {
                return Err(TraceError::InvalidRateMap("rate must not increase with distance".into()));
            }
        }
        for &(a, b) in &mask_zones {
            if !(a.is_finite() && b.is_finite() && 0.0 <= a && a <= b) {
                return Err(TraceError::InvalidRateMap(format!("bad mask zone [{a}, {b}]")));
            }
        }
        Ok(Self {
            anchors,
            interpolation,
            mask_zones,
        })
    }

    /// Synthetic calibration of the airport coverage: above 800 kB/s near
    /// the base station, between 200 and 800 kB/s at the far end of the
    /// 540-1570 m track, no signal past 2 km. The values are invented.
    pub fn default_airport() -> Self {
        Self::new(
            vec![
                (540.0, 1_000_000.0),
                (800.0, 820_000.0),
                (1200.0, 450_000.0),
                (1570.0, 230_000.0),
                (2000.0, 0.0),
            ],
            Interpolation::Linear,
            Vec::new(),
        )
        .expect("default map is valid")
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn mask_zones(&self) -> &[(f64, f64)] {
        &self.mask_zones
    }

    pub fn with_mask_zones(mut self, zones: Vec<(f64, f64)>) -> Result<Self, TraceError> {
        self.mask_zones = zones;
        Self::new(self.anchors, self.interpolation, self.mask_zones)
    }

    pub fn is_masked(&self, dist_m: f64) -> bool {
        self.mask_zones.iter().any(|&(a, b)| a <= dist_m && dist_m <= b)
    }

    /// Rate at `dist_m`: zero inside mask zones and beyond the last anchor,
    /// the first anchor's rate closer in than the first anchor.
    pub fn rate_at(&self, dist_m: f64) -> f64 {
        if self.is_masked(dist_m) {
            return 0.0;
        }
        let (first, last) = (self.anchors[0], self.anchors[self.anchors.len() - 1]);
        if dist_m <= first.0 {
            return first.1;
        }
        if dist_m > last.0 {
            return 0.0;
        }
        // first anchor strictly beyond dist_m
        let hi = self.anchors.partition_point(|&(d, _)| d <= dist_m);
        if hi == self.anchors.len() {
            return last.1;
        }
        let (d0, r0) = self.anchors[hi - 1];
        let (d1, r1) = self.anchors[hi];
        match self.interpolation {
            Interpolation::Step => r0,
            Interpolation::Linear => r0 + (r1 - r0) * (dist_m - d0) / (d1 - d0),
        }
    }
}

pub fn rate_at_distance(map: &RateDistanceMap, dist_m: f64) -> f64 {
    map.rate_at(dist_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedStep {
    pub start_s: f64,
    pub speed_kmh: f64,
}

/// Piecewise-constant speed: the last step starting at or before `t_s`.
pub fn speed_at(profile: &[SpeedStep], t_s: f64) -> Result<f64, TraceError> {
    let first = profile.first().ok_or(TraceError::EmptyProfile)?;
    if t_s < first.start_s {
        return Err(TraceError::BeforeProfile {
            t: t_s,
            first: first.start_s,
        });
    }
    let i = profile.partition_point(|s| s.start_s <= t_s);
    Ok(profile[i - 1].speed_kmh)
}

/// Stepped schedule cycling 10, 20, 30, 40, 50, 40, 30, 20 km/h every 60 s.
pub fn default_variable_profile(duration_s: u64) -> Vec<SpeedStep> {
    const CYCLE: [f64; 8] = [10.0, 20.0, 30.0, 40.0, 50.0, 40.0, 30.0, 20.0];
    (0..duration_s.max(1).div_ceil(60))
        .map(|k| SpeedStep {
            start_s: (k * 60) as f64,
            speed_kmh: CYCLE[k as usize % CYCLE.len()],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Static,
    ConstantSpeed,
    VariableSpeed,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Static => "static",
            ScenarioKind::ConstantSpeed => "constant_speed",
            ScenarioKind::VariableSpeed => "variable_speed",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(ScenarioKind::Static),
            "constant_speed" => Ok(ScenarioKind::ConstantSpeed),
            "variable_speed" => Ok(ScenarioKind::VariableSpeed),
            other => Err(TraceError::InvalidScenario(format!("unknown kind {other:?}"))),
        }
    }
}

/// Fixed-rate packet source pushed through the link, Iperf-UDP style.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficSource {
    /// Offered bytes per second.
    pub offered_bps: f64,
    /// Mean packet size in bytes.
    pub packet_bytes: f64,
    /// Node capacity in packets (waiting + in service).
    pub buffer_packets: usize,
}

impl Default for TrafficSource {
    fn default() -> Self {
        Self {
            offered_bps: 1_200_000.0,
            packet_bytes: 1000.0,
            buffer_packets: 50,
        }
    }
}

/// Where rows are placed on the map; distance is projected from the base
/// station along a straight bearing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub start_unix_s: i64,
    pub origin_lat_deg: f64,
    pub origin_lon_deg: f64,
    pub bearing_deg: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            start_unix_s: 1_262_340_000,
            origin_lat_deg: 43.6293,
            origin_lon_deg: 1.3638,
            bearing_deg: 315.0,
        }
    }
}

impl Placement {
    fn project(&self, dist_m: f64) -> (f64, f64) {
        let b = self.bearing_deg.to_radians();
        let lat0 = self.origin_lat_deg.to_radians();
        let dlat = dist_m * b.cos() / EARTH_RADIUS_M;
        let dlon = dist_m * b.sin() / (EARTH_RADIUS_M * lat0.cos());
        (
            self.origin_lat_deg + dlat.to_degrees(),
            self.origin_lon_deg + dlon.to_degrees(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityScenario {
    pub kind: ScenarioKind,
    pub duration_s: u64,
    /// Station distance for static scenarios.
    pub static_dist_m: f64,
    pub speed_profile: Vec<SpeedStep>,
    /// Round trips between these distances, starting at the near end.
    pub track_min_m: f64,
    pub track_max_m: f64,
    pub rate_map: RateDistanceMap,
    pub seed: u64,
    pub traffic: TrafficSource,
    pub placement: Placement,
}

impl MobilityScenario {
    fn base(kind: ScenarioKind, duration_s: u64) -> Self {
        Self {
            kind,
            duration_s,
            static_dist_m: 1570.0,
            speed_profile: Vec::new(),
            track_min_m: 540.0,
            track_max_m: 1570.0,
            rate_map: RateDistanceMap::default_airport(),
            seed: DEFAULT_SEED,
            traffic: TrafficSource::default(),
            placement: Placement::default(),
        }
    }

    pub fn static_point(dist_m: f64, duration_s: u64) -> Self {
        Self {
            static_dist_m: dist_m,
            speed_profile: vec![SpeedStep {
                start_s: 0.0,
                speed_kmh: 0.0,
            }],
            ..Self::base(ScenarioKind::Static, duration_s)
        }
    }

    pub fn constant_speed(speed_kmh: f64, duration_s: u64) -> Self {
        Self {
            speed_profile: vec![SpeedStep {
                start_s: 0.0,
                speed_kmh,
            }],
            ..Self::base(ScenarioKind::ConstantSpeed, duration_s)
        }
    }

    pub fn variable_speed(duration_s: u64) -> Self {
        Self {
            speed_profile: default_variable_profile(duration_s),
            ..Self::base(ScenarioKind::VariableSpeed, duration_s)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidScenario(m));
        if !(self.track_min_m > 0.0 && self.track_min_m < self.track_max_m && self.track_max_m.is_finite()) {
            return bad(format!(
                "track bounds must satisfy 0 < min < max (got {} .. {})",
                self.track_min_m, self.track_max_m
            ));
        }
        if self.kind == ScenarioKind::Static && !(self.static_dist_m >= 0.0 && self.static_dist_m.is_finite()) {
            return bad(format!("static distance {} is invalid", self.static_dist_m));
        }
        if self.kind != ScenarioKind::Static && self.speed_profile.is_empty() {
            return Err(TraceError::EmptyProfile);
        }
        for w in self.speed_profile.windows(2) {
            if w[1].start_s <= w[0].start_s {
                return bad("speed steps must be strictly time-ordered".into());
            }
        }
        if let Some(s) = self.speed_profile.iter().find(|s| !(s.speed_kmh >= 0.0 && s.speed_kmh.is_finite())) {
            return bad(format!("speed {} km/h is invalid", s.speed_kmh));
        }
        let t = &self.traffic;
        if !(t.offered_bps > 0.0 && t.packet_bytes > 0.0 && t.offered_bps.is_finite() && t.packet_bytes.is_finite()) {
            return bad("offered rate and packet size must be positive".into());
        }
        if t.buffer_packets == 0 {
            return bad("buffer must hold at least one packet".into());
        }
        Ok(())
    }
}

/// Position along a round-trip track, reflecting at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TrackPosition {
    dist_m: f64,
    outward: bool,
}

impl TrackPosition {
    fn advance(&mut self, mut step_m: f64, min_m: f64, max_m: f64) {
        while step_m > 0.0 {
            let room = if self.outward { max_m - self.dist_m } else { self.dist_m - min_m };
            if step_m <= room {
                self.dist_m += if self.outward { step_m } else { -step_m };
                break;
            }
            self.dist_m = if self.outward { max_m } else { min_m };
            step_m -= room;
            self.outward = !self.outward;
        }
    }
}

/// Generates one log row per second of the scenario.
pub fn synth_mobility_trace(scenario: &MobilityScenario) -> Result<Vec<QosLogRow>, TraceError> {
    if scenario.duration_s == 0 {
        return Err(TraceError::EmptyScenario);
    }
    scenario.validate()?;
    let traffic = scenario.traffic;
    let mut node = FcfsNode::new(0.0, Some(traffic.buffer_packets));
    // every packet belongs to the measured flow
    let mut source = PoissonSource::new(
        traffic.offered_bps / traffic.packet_bytes,
        1.0,
        ServiceDistribution::ExponentialUnitMean,
        scenario.seed,
    );
    node.schedule_arrival(source.next_arrival());

    let moving = scenario.kind != ScenarioKind::Static;
    let mut pos = TrackPosition {
        dist_m: if moving { scenario.track_min_m } else { scenario.static_dist_m },
        outward: true,
    };
    let mut rows = Vec::with_capacity(scenario.duration_s as usize);
    for s in 0..scenario.duration_s {
        let t0 = s as f64;
        let t1 = t0 + 1.0;
        let speed = if moving { speed_at(&scenario.speed_profile, t0)? } else { 0.0 };
        let rate = scenario.rate_map.rate_at(pos.dist_m);
        node.advance_clock(t0);
        node.set_capacity(rate / traffic.packet_bytes);

        let (mut total, mut lost, mut bytes) = (0u64, 0u64, 0.0f64);
        let mut jitter = AbsIpdvAccumulator::default();
        let mut last_delay: Option<f64> = None;
        while node.next_event_time().is_some_and(|t| t < t1) {
            match node.step().expect("event pending") {
                NodeOutput::Accepted { .. } => {
                    total += 1;
                    node.schedule_arrival(source.next_arrival());
                }
                NodeOutput::Dropped(_) => {
                    total += 1;
                    lost += 1;
                    node.schedule_arrival(source.next_arrival());
                }
                NodeOutput::Departed(r) => {
                    let delay = r.sojourn.expect("departed packet has a sojourn");
                    bytes += traffic.packet_bytes;
                    if let Some(prev) = last_delay {
                        jitter.push_pair(prev, delay);
                    }
                    last_delay = Some(delay);
                }
            }
        }

        let (lat, lon) = scenario.placement.project(pos.dist_m);
        rows.push(QosLogRow {
            t_unix_s: scenario.placement.start_unix_s + s as i64,
            lat_deg: round_sig9(lat),
            lon_deg: round_sig9(lon),
            integrity: 1,
            dist_m: round_sig9(pos.dist_m),
            speed_kmh: round_sig9(speed),
            tput_bps: round_sig9(bytes),
            jitter_ms: round_sig9(jitter.mean().unwrap_or(0.0) * 1e3),
            lost_pkts: lost,
            total_pkts: total,
        });
        if moving {
            pos.advance(speed / 3.6, scenario.track_min_m, scenario.track_max_m);
        }
    }
    Ok(rows)
}

fn fmt_pairs(pairs: impl IntoIterator<Item = (f64, f64)>, sep: char) -> String {
    pairs
        .into_iter()
        .map(|(a, b)| format!("{a}{sep}{b}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_pairs(value: &str, sep: char) -> Result<Vec<(f64, f64)>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (a, b) = item
                .split_once(sep)
                .ok_or_else(|| format!("expected a{sep}b, found {item:?}"))?;
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("malformed number {s:?}"));
            Ok((num(a)?, num(b)?))
        })
        .collect()
}

impl MobilityScenario {
    /// Flat `key = value` text form, one key per line; see
    /// [`parse_scenario`].
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("kind", self.kind.as_str().into());
        put("duration_s", self.duration_s.to_string());
        put("static_dist_m", self.static_dist_m.to_string());
        put(
            "speed_profile",
            fmt_pairs(self.speed_profile.iter().map(|s| (s.start_s, s.speed_kmh)), ':'),
        );
        put("track_min_m", self.track_min_m.to_string());
        put("track_max_m", self.track_max_m.to_string());
        put("rate_anchors", fmt_pairs(self.rate_map.anchors.iter().copied(), ':'));
        put("interpolation", self.rate_map.interpolation.to_string());
        put("mask_zones", fmt_pairs(self.rate_map.mask_zones.iter().copied(), '-'));
        put("seed", self.seed.to_string());
        put("offered_Bps", self.traffic.offered_bps.to_string());
        put("packet_bytes", self.traffic.packet_bytes.to_string());
        put("buffer_packets", self.traffic.buffer_packets.to_string());
        put("start_unix_s", self.placement.start_unix_s.to_string());
        put("origin_lat_deg", self.placement.origin_lat_deg.to_string());
        put("origin_lon_deg", self.placement.origin_lon_deg.to_string());
        put("bearing_deg", self.placement.bearing_deg.to_string());
        out
    }
}

/// Parses the `key = value` scenario format. `kind` is required; every
/// other key falls back to the preset of that kind. Blank lines and `#`
/// comments are ignored.
pub fn parse_scenario(text: &str) -> Result<MobilityScenario, TraceError> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| TraceError::ScenarioSyntax {
            line: i + 1,
            reason: "expected key = value".into(),
        })?;
        let k = k.trim().to_string();
        if entries.iter().any(|e| e.1 == k) {
            return Err(TraceError::ScenarioSyntax {
                line: i + 1,
                reason: format!("duplicate key {k:?}"),
            });
        }
        entries.push((i + 1, k, v.trim().to_string()));
    }
    let kind: ScenarioKind = entries
        .iter()
        .find(|e| e.1 == "kind")
        .ok_or_else(|| TraceError::InvalidScenario("missing key \"kind\"".into()))?
        .2
        .parse()?;
    let duration = entries
        .iter()
        .find(|e| e.1 == "duration_s")
        .map(|e| {
            e.2.parse::<u64>().map_err(|_| TraceError::ScenarioSyntax {
                line: e.0,
                reason: format!("malformed duration {:?}", e.2),
            })
        })
        .transpose()?
        .unwrap_or(600);
    let mut sc = match kind {
        ScenarioKind::Static => MobilityScenario::static_point(1570.0, duration),
        ScenarioKind::ConstantSpeed => MobilityScenario::constant_speed(50.0, duration),
        ScenarioKind::VariableSpeed => MobilityScenario::variable_speed(duration),
    };
    let mut anchors = sc.rate_map.anchors.clone();
    let mut interpolation = sc.rate_map.interpolation;
    let mut masks = sc.rate_map.mask_zones.clone();

    for (line, key, value) in &entries {
        let syntax = |reason: String| TraceError::ScenarioSyntax { line: *line, reason };
        fn num<T: FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("malformed value {v:?}"))
        }
        match key.as_str() {
            "kind" | "duration_s" => {}
            "static_dist_m" => sc.static_dist_m = num(value).map_err(syntax)?,
            "speed_profile" => {
                sc.speed_profile = parse_pairs(value, ':')
                    .map_err(syntax)?
                    .into_iter()
                    .map(|(start_s, speed_kmh)| SpeedStep { start_s, speed_kmh })
                    .collect()
            }
            "track_min_m" => sc.track_min_m = num(value).map_err(syntax)?,
            "track_max_m" => sc.track_max_m = num(value).map_err(syntax)?,
            "rate_anchors" => anchors = parse_pairs(value, ':').map_err(syntax)?,
            "interpolation" => interpolation = value.parse()?,
            "mask_zones" => masks = parse_pairs(value, '-').map_err(syntax)?,
            "seed" => sc.seed = num(value).map_err(syntax)?,
            "offered_Bps" => sc.traffic.offered_bps = num(value).map_err(syntax)?,
            "packet_bytes" => sc.traffic.packet_bytes = num(value).map_err(syntax)?,
            "buffer_packets" => sc.traffic.buffer_packets = num(value).map_err(syntax)?,
            "start_unix_s" => sc.placement.start_unix_s = num(value).map_err(syntax)?,
            "origin_lat_deg" => sc.placement.origin_lat_deg = num(value).map_err(syntax)?,
            "origin_lon_deg" => sc.placement.origin_lon_deg = num(value).map_err(syntax)?,
            "bearing_deg" => sc.placement.bearing_deg = num(value).map_err(syntax)?,
            other => return Err(syntax(format!("unknown key {other:?}"))),
        }
    }
    sc.rate_map = RateDistanceMap::new(anchors, interpolation, masks)?;
    sc.validate()?;
    Ok(sc)
}
