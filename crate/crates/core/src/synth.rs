//! Seeded synthetic DoH flows.
//!
//! Every flow is a run of queries over one connection. A query is one
//! outgoing packet followed `rtt` seconds later by one incoming packet; the
//! next query leaves `wait + wait_extra` seconds after that response. With
//! `per_query_connections` each query gets its own connection (the
//! multiple-connection DGA shape). With `tls_handshake` four fixed-size
//! handshake packets precede the first query.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with the
//! profile seed through `SeedableRng::seed_from_u64`. One generator stream is
//! consumed sequentially per profile, so output depends only on
//! `(seed, parameters, count)`. Timestamps are rounded to microseconds.
//!
//! Default parameters are desk-scale stand-ins, not measurements; every one
//! can be overridden through [`TrafficProfile::apply_config`].

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};

use crate::config::KeyValueConfig;
use crate::error::{Error, Result};
use crate::flowcore::{ConnKey, Direction, Flow, FlowLabel, PacketRecord, ServerTag};
use crate::ingest::FlowRecord;

const EPOCH_BASE: f64 = 1_600_000_000.0;
const HANDSHAKE: [(Direction, u32); 4] = [
    (Direction::Outgoing, 517),
    (Direction::Incoming, 1400),
    (Direction::Incoming, 1100),
    (Direction::Outgoing, 80),
];

/// Non-negative distribution over reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Const(f64),
    Uniform { lo: f64, hi: f64 },
    /// Normal, clamped below at `min`.
    Normal { mean: f64, sd: f64, min: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Exponential { mean: f64 },
}

impl Dist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Const(v) => v,
            Dist::Uniform { lo, hi } => {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
            Dist::Normal { mean, sd, min } => {
                let x = if sd > 0.0 {
                    Normal::new(mean, sd).expect("validated sd").sample(rng)
                } else {
                    mean
                };
                x.max(min)
            }
            Dist::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated sigma").sample(rng)
            }
            Dist::Exponential { mean } => {
                if mean > 0.0 {
                    Exp::new(1.0 / mean).expect("validated mean").sample(rng)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Const(v) => v,
            Dist::Uniform { lo, hi } => (lo + hi) / 2.0,
            Dist::Normal { mean, .. } => mean,
            Dist::LogNormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
            Dist::Exponential { mean } => mean,
        }
    }

    /// Multiplies location and spread, keeping the clamp.
    pub fn scaled(self, k: f64) -> Dist {
        match self {
            Dist::Const(v) => Dist::Const(v * k),
            Dist::Uniform { lo, hi } => Dist::Uniform { lo: lo * k, hi: hi * k },
            Dist::Normal { mean, sd, min } => Dist::Normal {
                mean: mean * k,
                sd: sd * k,
                min,
            },
            Dist::LogNormal { mu, sigma } => Dist::LogNormal { mu: mu + k.ln(), sigma },
            Dist::Exponential { mean } => Dist::Exponential { mean: mean * k },
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Dist::Const(v) => v >= 0.0 && v.is_finite(),
            Dist::Uniform { lo, hi } => lo >= 0.0 && hi >= lo && hi.is_finite(),
            Dist::Normal { mean, sd, min } => {
                min >= 0.0 && sd >= 0.0 && mean.is_finite() && sd.is_finite()
            }
            Dist::LogNormal { mu, sigma } => mu.is_finite() && sigma >= 0.0 && sigma.is_finite(),
            Dist::Exponential { mean } => mean >= 0.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{name}: {self} has negative support or bad parameters"
            )))
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Const(v) => write!(f, "const({v})"),
            Dist::Uniform { lo, hi } => write!(f, "uniform({lo}, {hi})"),
            Dist::Normal { mean, sd, min } => write!(f, "normal({mean}, {sd}, {min})"),
            Dist::LogNormal { mu, sigma } => write!(f, "lognormal({mu}, {sigma})"),
            Dist::Exponential { mean } => write!(f, "exp({mean})"),
        }
    }
}

/// `const(v)`, `uniform(lo, hi)`, `normal(mean, sd[, min])`,
/// `lognormal(mu, sigma)`, `exp(mean)`; a bare number is `const`.
impl FromStr for Dist {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(v) = s.parse::<f64>() {
            return Ok(Dist::Const(v));
        }
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| format!("bad distribution {s:?}"))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("bad distribution {s:?}: missing `)`"))?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("bad distribution {s:?}: {e}"))?;
        let arity = |n: &[usize]| {
            if n.contains(&args.len()) {
                Ok(())
            } else {
                Err(format!("{name} takes {n:?} arguments, got {}", args.len()))
            }
        };
        match name.trim().to_ascii_lowercase().as_str() {
            "const" => arity(&[1]).map(|_| Dist::Const(args[0])),
            "uniform" => arity(&[2]).map(|_| Dist::Uniform { lo: args[0], hi: args[1] }),
            "normal" => arity(&[2, 3]).map(|_| Dist::Normal {
                mean: args[0],
                sd: args[1],
                min: args.get(2).copied().unwrap_or(0.0),
            }),
            "lognormal" => arity(&[2]).map(|_| Dist::LogNormal { mu: args[0], sigma: args[1] }),
            "exp" | "exponential" => arity(&[1]).map(|_| Dist::Exponential { mean: args[0] }),
            other => Err(format!("unknown distribution {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DgaVariant {
    Sc,
    ScRw,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TunnelTool {
    Dns2tcp,
    Dnscat2,
    Iodine,
}

impl TunnelTool {
    /// (wait multiplier, size multiplier)
    fn multipliers(self) -> (f64, f64) {
        match self {
            TunnelTool::Dns2tcp => (1.0, 1.0),
            TunnelTool::Dnscat2 => (2.0, 0.8),
            TunnelTool::Iodine => (0.5, 1.4),
        }
    }
}

pub fn server_address(server: ServerTag) -> IpAddr {
    let octets = match server {
        ServerTag::AdGuard => [94, 140, 14, 14],
        ServerTag::Google => [8, 8, 8, 8],
        ServerTag::Quad9 => [9, 9, 9, 9],
        ServerTag::Cloudflare => [1, 1, 1, 1],
        ServerTag::Proxy => [192, 168, 1, 53],
        ServerTag::Unknown => [203, 0, 113, 1],
    };
    IpAddr::V4(Ipv4Addr::from(octets))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficProfile {
    pub kind: FlowLabel,
    pub server: ServerTag,
    pub queries_min: u32,
    pub queries_max: u32,
    /// Pause between a response and the next query.
    pub wait: Dist,
    pub wait_extra: Dist,
    /// Delay between a query and its response.
    pub rtt: Dist,
    pub query_size: Dist,
    pub response_size: Dist,
    pub per_query_connections: bool,
    pub tls_handshake: bool,
    pub seed: u64,
}

impl TrafficProfile {
    fn base(kind: FlowLabel, seed: u64) -> Self {
        TrafficProfile {
            kind,
            server: ServerTag::Cloudflare,
            queries_min: 2,
            queries_max: 40,
            wait: Dist::LogNormal { mu: -1.0, sigma: 1.0 },
            wait_extra: Dist::Const(0.0),
            rtt: Dist::Exponential { mean: 0.02 },
            query_size: Dist::Normal { mean: 110.0, sd: 15.0, min: 60.0 },
            response_size: Dist::Normal { mean: 468.0, sd: 120.0, min: 60.0 },
            per_query_connections: false,
            tls_handshake: false,
            seed,
        }
    }

    /// Browser traffic; the five known servers differ slightly in latency and
    /// response sizes, the proxy also in query volume and pacing.
    pub fn benign(server: ServerTag, seed: u64) -> Self {
        let mut p = Self::base(FlowLabel::Benign, seed);
        p.server = server;
        let (rtt, resp_mean, resp_sd) = match server {
            ServerTag::AdGuard => (0.035, 470.0, 120.0),
            ServerTag::Google => (0.015, 455.0, 110.0),
            ServerTag::Quad9 => (0.030, 480.0, 125.0),
            ServerTag::Cloudflare | ServerTag::Unknown => (0.012, 468.0, 120.0),
            ServerTag::Proxy => (0.025, 468.0, 120.0),
        };
        p.rtt = Dist::Exponential { mean: rtt };
        p.response_size = Dist::Normal { mean: resp_mean, sd: resp_sd, min: 60.0 };
        if server == ServerTag::Proxy {
            p.queries_max = 60;
            p.wait = Dist::LogNormal { mu: -0.7, sigma: 1.1 };
        }
        p
    }

    pub fn dga(variant: DgaVariant, seed: u64) -> Self {
        let kind = match variant {
            DgaVariant::Sc => FlowLabel::DgaSc,
            DgaVariant::ScRw => FlowLabel::DgaScRw,
            DgaVariant::Mc => FlowLabel::DgaMc,
        };
        let mut p = Self::base(kind, seed);
        p.queries_min = 50;
        p.queries_max = 400;
        p.wait = Dist::Exponential { mean: 0.03 };
        // uncached lookups of generated names resolve slowly and mostly fail
        p.rtt = Dist::Exponential { mean: 0.1 };
        p.query_size = Dist::Normal { mean: 125.0, sd: 12.0, min: 60.0 };
        p.response_size = Dist::Normal { mean: 180.0, sd: 25.0, min: 60.0 };
        match variant {
            DgaVariant::Sc => {}
            DgaVariant::ScRw => p.wait_extra = Dist::Uniform { lo: 0.0, hi: 2.0 },
            DgaVariant::Mc => p.per_query_connections = true,
        }
        p
    }

    pub fn tunnel(tool: TunnelTool, seed: u64) -> Self {
        let kind = match tool {
            TunnelTool::Dns2tcp => FlowLabel::Dns2tcp,
            TunnelTool::Dnscat2 => FlowLabel::Dnscat2,
            TunnelTool::Iodine => FlowLabel::Iodine,
        };
        let (rate, size) = tool.multipliers();
        let mut p = Self::base(kind, seed);
        p.queries_min = 200;
        p.queries_max = 2000;
        p.wait = Dist::Exponential { mean: 0.01 }.scaled(rate);
        p.rtt = Dist::Exponential { mean: 0.03 };
        p.query_size = Dist::Normal { mean: 220.0, sd: 30.0, min: 60.0 }.scaled(size);
        p.response_size = Dist::Normal { mean: 300.0, sd: 80.0, min: 60.0 }.scaled(size);
        p
    }

    /// Default profile for a label; `server` only affects benign traffic.
    pub fn for_label(label: FlowLabel, server: ServerTag, seed: u64) -> Self {
        match label {
            FlowLabel::Benign => Self::benign(server, seed),
            FlowLabel::DgaSc => Self::dga(DgaVariant::Sc, seed),
            FlowLabel::DgaScRw => Self::dga(DgaVariant::ScRw, seed),
            FlowLabel::DgaMc => Self::dga(DgaVariant::Mc, seed),
            FlowLabel::Dns2tcp => Self::tunnel(TunnelTool::Dns2tcp, seed),
            FlowLabel::Dnscat2 => Self::tunnel(TunnelTool::Dnscat2, seed),
            FlowLabel::Iodine => Self::tunnel(TunnelTool::Iodine, seed),
        }
    }

    /// Overrides parameters from `key = value` entries. Recognized keys:
    /// `queries_min`, `queries_max`, `wait`, `wait_extra`, `rtt`,
    /// `query_size`, `response_size`, `per_query_connections`,
    /// `tls_handshake`, `server`, `seed`.
    pub fn apply_config(&mut self, cfg: &KeyValueConfig) -> Result<()> {
        for (key, value) in cfg.iter() {
            let bad = |e: String| Error::InvalidParameter(format!("profile key {key}: {e}"));
            let dist = || value.parse::<Dist>().map_err(bad);
            match key {
                "queries_min" => self.queries_min = value.parse().map_err(|e| bad(format!("{e}")))?,
                "queries_max" => self.queries_max = value.parse().map_err(|e| bad(format!("{e}")))?,
                "wait" => self.wait = dist()?,
                "wait_extra" => self.wait_extra = dist()?,
                "rtt" => self.rtt = dist()?,
                "query_size" => self.query_size = dist()?,
                "response_size" => self.response_size = dist()?,
                "per_query_connections" => {
                    self.per_query_connections = value.parse().map_err(|e| bad(format!("{e}")))?
                }
                "tls_handshake" => {
                    self.tls_handshake = value.parse().map_err(|e| bad(format!("{e}")))?
                }
                "server" => self.server = value.parse().map_err(bad)?,
                "seed" => self.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
                other => {
                    return Err(Error::InvalidParameter(format!("unknown profile key {other:?}")))
                }
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.queries_min == 0 || self.queries_max < self.queries_min {
            return Err(Error::InvalidParameter(format!(
                "queries per connection range [{}, {}] is empty or starts at 0",
                self.queries_min, self.queries_max
            )));
        }
        self.wait.validate("wait")?;
        self.wait_extra.validate("wait_extra")?;
        self.rtt.validate("rtt")?;
        self.query_size.validate("query_size")?;
        self.response_size.validate("response_size")?;
        Ok(())
    }

    /// Streams `count` flows to `sink` without holding them all in memory.
    pub fn generate_with<F: FnMut(Flow)>(&self, count: usize, mut sink: F) -> Result<()> {
        if count < 1 {
            return Err(Error::InvalidParameter("flow count must be at least 1".into()));
        }
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let server = SocketAddr::new(server_address(self.server), 443);
        let mut emitted = 0usize;
        while emitted < count {
            let queries = rng.random_range(self.queries_min..=self.queries_max) as usize;
            let start = EPOCH_BASE + rng.random_range(0.0..86_400.0);
            if self.per_query_connections {
                let mut t = start;
                for q in 0..queries {
                    if emitted == count {
                        break;
                    }
                    let key = ConnKey::tcp(client_address(emitted), server);
                    let mut packets = Vec::with_capacity(2 + 4 * usize::from(self.tls_handshake));
                    t = self.emit_queries(&mut rng, key, t, 1, &mut packets);
                    sink(self.finish(key, packets));
                    emitted += 1;
                    if q + 1 < queries {
                        t += self.wait.sample(&mut rng) + self.wait_extra.sample(&mut rng);
                    }
                }
            } else {
                let key = ConnKey::tcp(client_address(emitted), server);
                let mut packets = Vec::with_capacity(2 * queries + 4);
                self.emit_queries(&mut rng, key, start, queries, &mut packets);
                sink(self.finish(key, packets));
                emitted += 1;
            }
        }
        Ok(())
    }

    fn emit_queries(
        &self,
        rng: &mut ChaCha8Rng,
        key: ConnKey,
        start: f64,
        queries: usize,
        packets: &mut Vec<PacketRecord>,
    ) -> f64 {
        let mut t = start;
        let mut push = |t: f64, direction, size: u32| {
            packets.push(PacketRecord {
                timestamp: round_micros(t),
                direction,
                size_bytes: size,
                conn_key: key,
            })
        };
        if self.tls_handshake {
            for (direction, size) in HANDSHAKE {
                push(t, direction, size);
                t += self.rtt.sample(rng) / 2.0;
            }
        }
        for q in 0..queries {
            push(t, Direction::Outgoing, sample_size(&self.query_size, rng));
            t += self.rtt.sample(rng);
            push(t, Direction::Incoming, sample_size(&self.response_size, rng));
            if q + 1 < queries {
                t += self.wait.sample(rng) + self.wait_extra.sample(rng);
            }
        }
        t
    }

    fn finish(&self, key: ConnKey, packets: Vec<PacketRecord>) -> Flow {
        Flow::new(key, packets, self.kind, self.server).expect("generated flows are well-formed")
    }

    pub fn generate(&self, count: usize) -> Result<Vec<Flow>> {
        let mut flows = Vec::with_capacity(count);
        self.generate_with(count, |f| flows.push(f))?;
        Ok(flows)
    }

    /// Generates flows and keeps only their feature records.
    pub fn generate_records(&self, count: usize) -> Result<Vec<FlowRecord>> {
        let mut out = Vec::with_capacity(count);
        self.generate_with(count, |f| out.push(FlowRecord::from_flow(&f)))?;
        Ok(out)
    }
}

fn round_micros(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

fn sample_size<R: Rng + ?Sized>(d: &Dist, rng: &mut R) -> u32 {
    d.sample(rng).round().clamp(0.0, f64::from(u32::MAX)) as u32
}

/// Distinct client endpoint per flow index.
fn client_address(index: usize) -> SocketAddr {
    let host = 2 + (index / 16_384) as u32;
    let port = 49_152 + (index % 16_384) as u16;
    let ip = Ipv4Addr::from(0x0a00_0000u32 + host);
    SocketAddr::new(IpAddr::V4(ip), port)
}

pub fn gen_benign(count: usize, seed: u64) -> Result<Vec<Flow>> {
    TrafficProfile::benign(ServerTag::Cloudflare, seed).generate(count)
}

pub fn gen_dga(count: usize, variant: DgaVariant, seed: u64) -> Result<Vec<Flow>> {
    TrafficProfile::dga(variant, seed).generate(count)
}

pub fn gen_tunnel(count: usize, tool: TunnelTool, seed: u64) -> Result<Vec<Flow>> {
    TrafficProfile::tunnel(tool, seed).generate(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::{extract_features, FeatureVector, NUM_FEATURES};

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 0 {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        } else {
            v[n / 2]
        }
    }

    fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
        v.sort_by(f64::total_cmp);
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }

    #[test]
    fn benign_is_deterministic() {
        let a = gen_benign(50, 11).unwrap();
        let b = gen_benign(50, 11).unwrap();
        assert_eq!(a, b);
        let c = gen_benign(50, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn benign_count_and_label() {
        let flows = gen_benign(2350, 1).unwrap();
        assert_eq!(flows.len(), 2350);
        assert!(flows.iter().all(|f| f.label == FlowLabel::Benign));
        for f in &flows {
            let n = f.packets().len();
            assert!((4..=80).contains(&n), "{n} packets");
        }
    }

    #[test]
    fn benign_mean_query_size() {
        let mut total = 0.0;
        let mut n = 0usize;
        TrafficProfile::benign(ServerTag::Cloudflare, 3)
            .generate_with(10_000, |f| {
                for p in f.packets() {
                    if p.direction == Direction::Outgoing {
                        total += f64::from(p.size_bytes);
                        n += 1;
                    }
                }
            })
            .unwrap();
        let mean = total / n as f64;
        assert!((mean - 110.0).abs() < 2.0, "mean outgoing size {mean}");
    }

    #[test]
    fn zero_count_rejected() {
        assert!(gen_benign(0, 1).is_err());
        assert!(gen_dga(0, DgaVariant::Sc, 1).is_err());
        assert!(gen_tunnel(0, TunnelTool::Iodine, 1).is_err());
    }

    #[test]
    fn mc_flows_have_two_packets() {
        let flows = gen_dga(100, DgaVariant::Mc, 5).unwrap();
        assert_eq!(flows.len(), 100);
        assert!(flows.iter().all(|f| f.packets().len() == 2));
        let mut keys: Vec<_> = flows.iter().map(|f| *f.conn_key()).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 100);
    }

    #[test]
    fn scrw_wait_is_one_second_plus_round_trip() {
        // pause between a response and the following query
        let flows = gen_dga(300, DgaVariant::ScRw, 8).unwrap();
        let mut sum = 0.0;
        let mut n = 0usize;
        for f in &flows {
            for w in f.packets().windows(2) {
                if w[0].direction == Direction::Incoming && w[1].direction == Direction::Outgoing {
                    sum += w[1].timestamp - w[0].timestamp;
                    n += 1;
                }
            }
        }
        let mean = sum / n as f64;
        assert!((mean - 1.03).abs() < 0.05, "mean wait {mean}");
    }

    #[test]
    fn sc_is_long_and_regular() {
        let benign = gen_benign(1000, 21).unwrap();
        let sc = gen_dga(1000, DgaVariant::Sc, 22).unwrap();
        let scrw = gen_dga(1000, DgaVariant::ScRw, 23).unwrap();
        let dur = |fs: &[Flow]| median(fs.iter().map(Flow::duration).collect());
        let delay_var = |fs: &[Flow]| median(fs.iter().map(|f| extract_features(f)[12]).collect());
        assert!(dur(&sc) > 2.0 * dur(&benign), "{} vs {}", dur(&sc), dur(&benign));
        assert!(delay_var(&sc) < delay_var(&scrw));
    }

    #[test]
    fn tunnel_shapes() {
        let benign = gen_benign(1000, 31).unwrap();
        for tool in [TunnelTool::Dns2tcp, TunnelTool::Dnscat2, TunnelTool::Iodine] {
            let t = gen_tunnel(1000, tool, 32).unwrap();
            assert!(t.iter().all(|f| f.packets().len() >= 400));
            assert_eq!(t, gen_tunnel(1000, tool, 32).unwrap());
            let md = median(t.iter().map(Flow::duration).collect());
            let mb = median(benign.iter().map(Flow::duration).collect());
            assert!(md > mb, "{tool:?}: {md} <= {mb}");
        }
    }

    #[test]
    fn labels_are_pure() {
        for label in FlowLabel::ALL {
            let flows = TrafficProfile::for_label(label, ServerTag::Google, 4)
                .generate(20)
                .unwrap();
            assert!(flows.iter().all(|f| f.label == label));
        }
    }

    #[test]
    fn malicious_medians_differ_from_benign() {
        let feats = |label| -> Vec<FeatureVector> {
            TrafficProfile::for_label(label, ServerTag::Cloudflare, 77)
                .generate_records(1000)
                .unwrap()
                .into_iter()
                .map(|r| r.features)
                .collect()
        };
        let benign = feats(FlowLabel::Benign);
        let col = |vs: &[FeatureVector], i: usize| vs.iter().map(|v| v[i]).collect::<Vec<_>>();
        for label in FlowLabel::MALICIOUS {
            let mal = feats(label);
            let differing = (0..NUM_FEATURES)
                .filter(|&i| {
                    let b = col(&benign, i);
                    let iqr = quantile(b.clone(), 0.75) - quantile(b.clone(), 0.25);
                    (median(col(&mal, i)) - median(b)).abs() > 0.1 * iqr
                })
                .count();
            assert!(differing >= 3, "{label}: only {differing} coordinates differ");
        }
    }

    #[test]
    fn handshake_prepends_four_packets() {
        let mut p = TrafficProfile::dga(DgaVariant::Mc, 2);
        p.tls_handshake = true;
        let flows = p.generate(10).unwrap();
        assert!(flows.iter().all(|f| f.packets().len() == 6));
    }

    #[test]
    fn config_overrides_parameters() {
        let mut p = TrafficProfile::benign(ServerTag::Google, 1);
        let cfg = KeyValueConfig::parse(
            "queries_min = 3\nqueries_max = 3\nwait = const(0.5)\nrtt = exp(0)\nseed = 9\n",
            "t",
        )
        .unwrap();
        p.apply_config(&cfg).unwrap();
        assert_eq!(p.seed, 9);
        let flows = p.generate(5).unwrap();
        for f in &flows {
            assert_eq!(f.packets().len(), 6);
            assert!((f.duration() - 1.0).abs() < 1e-6);
        }
        let bad = KeyValueConfig::parse("wait = normal(1, -2)", "t").unwrap();
        assert!(p.apply_config(&bad).is_err());
        let unknown = KeyValueConfig::parse("colour = blue", "t").unwrap();
        assert!(p.apply_config(&unknown).is_err());
    }

    #[test]
    fn dist_text_round_trip() {
        for d in [
            Dist::Const(1.5),
            Dist::Uniform { lo: 0.0, hi: 2.0 },
            Dist::Normal { mean: 110.0, sd: 15.0, min: 60.0 },
            Dist::LogNormal { mu: -1.0, sigma: 1.0 },
            Dist::Exponential { mean: 0.03 },
        ] {
            assert_eq!(d.to_string().parse::<Dist>().unwrap(), d);
        }
        assert!("gamma(1,2)".parse::<Dist>().is_err());
        assert!("normal(1)".parse::<Dist>().is_err());
    }
}
