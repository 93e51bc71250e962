//! Flows, their 16 statistical features, and min-max scaling.
//!
//! Feature layout (indices):
//!
//! | index  | quantity                                   |
//! |--------|--------------------------------------------|
//! | 0..=4  | outgoing packet sizes (bytes)              |
//! | 5..=9  | incoming packet sizes (bytes)              |
//! | 10..=14| inter-packet delays over the flow (seconds)|
//! | 15     | flow duration (seconds)                    |
//!
//! Each 5-wide group holds mean, median, population variance, min and max.
//! A group over an empty set of values is all zeros.

use std::fmt;
use std::net::{IpAddr, SocketAddr};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_FEATURES: usize = 16;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "out_mean", "out_median", "out_var", "out_min", "out_max",
    "in_mean", "in_median", "in_var", "in_min", "in_max",
    "delay_mean", "delay_median", "delay_var", "delay_min", "delay_max",
    "duration",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Tcp,
    Udp,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        }
    }
}

/// Client-to-server connection identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnKey {
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub proto: Protocol,
}

impl ConnKey {
    pub fn tcp(src: SocketAddr, dst: SocketAddr) -> Self {
        ConnKey {
            src,
            dst,
            proto: Protocol::Tcp,
        }
    }

    pub fn reversed(self) -> Self {
        ConnKey {
            src: self.dst,
            dst: self.src,
            proto: self.proto,
        }
    }

    pub fn server_ip(&self) -> IpAddr {
        self.dst.ip()
    }
}

/// Text form: `src-dst/proto`, e.g. `10.0.0.2:51234-1.1.1.1:443/tcp`.
impl fmt::Display for ConnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}/{}", self.src, self.dst, self.proto.as_str())
    }
}

impl FromStr for ConnKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let (addrs, proto) = match s.rsplit_once('/') {
            Some((a, p)) => (a, p),
            None => (s, "tcp"),
        };
        let proto = match proto.to_ascii_lowercase().as_str() {
            "tcp" | "6" => Protocol::Tcp,
            "udp" | "17" => Protocol::Udp,
            other => return Err(format!("unknown protocol {other:?}")),
        };
        let (src, dst) = addrs
            .split_once('-')
            .ok_or_else(|| format!("connection key {s:?} is not of the form src-dst/proto"))?;
        let src = src
            .parse()
            .map_err(|e| format!("bad source address {src:?}: {e}"))?;
        let dst = dst
            .parse()
            .map_err(|e| format!("bad destination address {dst:?}: {e}"))?;
        Ok(ConnKey { src, dst, proto })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Outgoing,
    Incoming,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Outgoing => "out",
            Direction::Incoming => "in",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "out" | "outgoing" | "o" | "0" => Ok(Direction::Outgoing),
            "in" | "incoming" | "i" | "1" => Ok(Direction::Incoming),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub direction: Direction,
    pub size_bytes: u32,
    pub conn_key: ConnKey,
}

impl PacketRecord {
    pub fn is_valid(&self) -> bool {
        self.timestamp.is_finite() && self.timestamp >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowLabel {
    Benign,
    DgaSc,
    DgaScRw,
    DgaMc,
    Dns2tcp,
    Dnscat2,
    Iodine,
}

impl FlowLabel {
    pub const ALL: [FlowLabel; 7] = [
        FlowLabel::Benign,
        FlowLabel::DgaSc,
        FlowLabel::DgaScRw,
        FlowLabel::DgaMc,
        FlowLabel::Dns2tcp,
        FlowLabel::Dnscat2,
        FlowLabel::Iodine,
    ];

    pub const MALICIOUS: [FlowLabel; 6] = [
        FlowLabel::DgaSc,
        FlowLabel::DgaScRw,
        FlowLabel::DgaMc,
        FlowLabel::Dns2tcp,
        FlowLabel::Dnscat2,
        FlowLabel::Iodine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowLabel::Benign => "benign",
            FlowLabel::DgaSc => "dga-sc",
            FlowLabel::DgaScRw => "dga-scrw",
            FlowLabel::DgaMc => "dga-mc",
            FlowLabel::Dns2tcp => "dns2tcp",
            FlowLabel::Dnscat2 => "dnscat2",
            FlowLabel::Iodine => "iodine",
        }
    }

    pub fn is_malicious(self) -> bool {
        self != FlowLabel::Benign
    }
}

impl fmt::Display for FlowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case-insensitive; `-`, `_` and spaces are ignored (`DGA SC-RW` parses).
impl FromStr for FlowLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "benign" | "normal" => Ok(FlowLabel::Benign),
            "dgasc" => Ok(FlowLabel::DgaSc),
            "dgascrw" => Ok(FlowLabel::DgaScRw),
            "dgamc" => Ok(FlowLabel::DgaMc),
            "dns2tcp" => Ok(FlowLabel::Dns2tcp),
            "dnscat2" => Ok(FlowLabel::Dnscat2),
            "iodine" => Ok(FlowLabel::Iodine),
            _ => Err(format!("unknown label {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServerTag {
    AdGuard,
    Google,
    Quad9,
    Cloudflare,
    Proxy,
    Unknown,
}

impl ServerTag {
    pub const KNOWN: [ServerTag; 5] = [
        ServerTag::AdGuard,
        ServerTag::Google,
        ServerTag::Quad9,
        ServerTag::Cloudflare,
        ServerTag::Proxy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ServerTag::AdGuard => "adguard",
            ServerTag::Google => "google",
            ServerTag::Quad9 => "quad9",
            ServerTag::Cloudflare => "cloudflare",
            ServerTag::Proxy => "proxy",
            ServerTag::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ServerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServerTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adguard" | "ag" => Ok(ServerTag::AdGuard),
            "google" | "g" => Ok(ServerTag::Google),
            "quad9" | "q9" => Ok(ServerTag::Quad9),
            "cloudflare" | "c" => Ok(ServerTag::Cloudflare),
            "proxy" | "p" => Ok(ServerTag::Proxy),
            "unknown" | "" => Ok(ServerTag::Unknown),
            _ => Err(format!("unknown server {s:?}")),
        }
    }
}

/// All packets of one connection, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    conn_key: ConnKey,
    packets: Vec<PacketRecord>,
    pub label: FlowLabel,
    pub server: ServerTag,
}

impl Flow {
    /// Packets are stably sorted by timestamp, so same-timestamp packets keep
    /// their arrival order.
    pub fn new(
        conn_key: ConnKey,
        mut packets: Vec<PacketRecord>,
        label: FlowLabel,
        server: ServerTag,
    ) -> Result<Self> {
        if packets.is_empty() {
            return Err(Error::Empty("flow has no packets"));
        }
        if let Some(p) = packets.iter().find(|p| !p.is_valid()) {
            return Err(Error::InvalidParameter(format!(
                "packet timestamp {} is not a finite non-negative number",
                p.timestamp
            )));
        }
        if let Some(p) = packets.iter().find(|p| p.conn_key != conn_key) {
            return Err(Error::InvalidParameter(format!(
                "packet on {} does not belong to flow {conn_key}",
                p.conn_key
            )));
        }
        packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Ok(Flow {
            conn_key,
            packets,
            label,
            server,
        })
    }

    pub fn conn_key(&self) -> &ConnKey {
        &self.conn_key
    }

    pub fn packets(&self) -> &[PacketRecord] {
        &self.packets
    }

    pub fn duration(&self) -> f64 {
        self.packets[self.packets.len() - 1].timestamp - self.packets[0].timestamp
    }

    pub fn features(&self) -> FeatureVector {
        extract_features(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector([0.0; NUM_FEATURES])
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_FEATURES] = values.try_into().map_err(|_| Error::Dimension {
            context: "feature vector",
            expected: NUM_FEATURES,
            actual: values.len(),
        })?;
        Ok(FeatureVector(arr))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Mean, median, population variance, min, max. Zeros for an empty slice.
pub(crate) fn five_stats(values: &mut [f64]) -> [f64; 5] {
    if values.is_empty() {
        return [0.0; 5];
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mid = values.len() / 2;
    let median = if values.len() % 2 == 0 {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    };
    [mean, median, var, values[0], values[values.len() - 1]]
}

/// Computes the unscaled 16-feature summary of a flow.
pub fn extract_features(flow: &Flow) -> FeatureVector {
    let packets = flow.packets();
    let mut out_sizes = Vec::new();
    let mut in_sizes = Vec::new();
    for p in packets {
        match p.direction {
            Direction::Outgoing => out_sizes.push(f64::from(p.size_bytes)),
            Direction::Incoming => in_sizes.push(f64::from(p.size_bytes)),
        }
    }
    let mut delays: Vec<f64> = packets
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .collect();

    let mut values = [0.0; NUM_FEATURES];
    values[0..5].copy_from_slice(&five_stats(&mut out_sizes));
    values[5..10].copy_from_slice(&five_stats(&mut in_sizes));
    values[10..15].copy_from_slice(&five_stats(&mut delays));
    values[15] = flow.duration();
    FeatureVector(values)
}

/// Per-feature min-max scaler fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: [f64; NUM_FEATURES],
    pub max: [f64; NUM_FEATURES],
}

impl Scaler {
    pub fn fit(features: &[FeatureVector]) -> Result<Self> {
        let first = features.first().ok_or(Error::Empty("scaler training set"))?;
        let mut min = first.0;
        let mut max = first.0;
        for v in &features[1..] {
            for i in 0..NUM_FEATURES {
                min[i] = min[i].min(v.0[i]);
                max[i] = max[i].max(v.0[i]);
            }
        }
        Ok(Scaler { min, max })
    }

    /// Maps into [0,1], clamping values outside the fitted range. Constant
    /// columns map to 0.
    pub fn transform(&self, v: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; NUM_FEATURES];
        for (i, o) in out.iter_mut().enumerate() {
            let range = self.max[i] - self.min[i];
            if range > 0.0 {
                *o = ((v.0[i] - self.min[i]) / range).clamp(0.0, 1.0);
            }
        }
        FeatureVector(out)
    }

    pub fn transform_all(&self, vs: &[FeatureVector]) -> Vec<FeatureVector> {
        vs.iter().map(|v| self.transform(v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..NUM_FEATURES {
            if !(self.min[i] <= self.max[i]) {
                return Err(Error::InvalidParameter(format!(
                    "scaler column {i}: min {} > max {}",
                    self.min[i], self.max[i]
                )));
            }
        }
        Ok(())
    }
}
