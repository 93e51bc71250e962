//! Packet and flow CSV input/output, flow assembly, and DoH server filtering.
//!
//! Formats (UTF-8, LF line endings, header row required):
//!
//! * flow CSV: `conn_key,label,server,f00,...,f15`, or
//!   `conn_key,label,server,packets` where `packets` names a packet CSV
//!   (relative paths resolve against the flow CSV's directory);
//! * packet CSV: `conn_key,timestamp,direction,size_bytes`. An empty
//!   `direction` is inferred from the allow list.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use crate::config::KeyValueConfig;
use crate::error::{Error, Result};
use crate::flowcore::{
    extract_features, ConnKey, Direction, FeatureVector, Flow, FlowLabel, PacketRecord, ServerTag,
    NUM_FEATURES,
};

pub fn feature_column(i: usize) -> String {
    format!("f{i:02}")
}

/// Flows grouped from a packet stream plus the number of rejected records.
#[derive(Debug, Clone, Default)]
pub struct Assembled {
    pub flows: Vec<Flow>,
    pub skipped: usize,
}

/// Groups packets by connection key; one key is one flow for its whole
/// lifetime. Flows are emitted in order of each key's first packet. Packets
/// with invalid timestamps are skipped and counted.
pub fn assemble_flows<I>(packets: I, label: FlowLabel) -> Assembled
where
    I: IntoIterator<Item = PacketRecord>,
{
    let mut index: HashMap<ConnKey, usize> = HashMap::new();
    let mut groups: Vec<(ConnKey, Vec<PacketRecord>)> = Vec::new();
    let mut skipped = 0;
    for p in packets {
        if !p.is_valid() {
            skipped += 1;
            continue;
        }
        let slot = *index.entry(p.conn_key).or_insert_with(|| {
            groups.push((p.conn_key, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(p);
    }
    let flows = groups
        .into_iter()
        .map(|(key, packets)| {
            Flow::new(key, packets, label, ServerTag::Unknown)
                .expect("group is non-empty with valid, same-key packets")
        })
        .collect();
    Assembled { flows, skipped }
}

/// Approved DoH resolver addresses and the server each belongs to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServerAllowList {
    entries: BTreeMap<IpAddr, ServerTag>,
}

impl ServerAllowList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ip: IpAddr, tag: ServerTag) {
        self.entries.insert(ip, tag);
    }

    pub fn get(&self, ip: &IpAddr) -> Option<ServerTag> {
        self.entries.get(ip).copied()
    }

    pub fn contains(&self, ip: &IpAddr) -> bool {
        self.entries.contains_key(ip)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Reads `ip = server` lines.
    pub fn from_config(cfg: &KeyValueConfig) -> Result<Self> {
        let mut list = Self::new();
        for (ip, tag) in cfg.iter() {
            let ip: IpAddr = ip
                .parse()
                .map_err(|e| Error::InvalidParameter(format!("allow list address {ip:?}: {e}")))?;
            let tag: ServerTag = tag.parse().map_err(Error::InvalidParameter)?;
            list.insert(ip, tag);
        }
        Ok(list)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config(&KeyValueConfig::load(path)?)
    }
}

/// Keeps flows whose destination is an approved server and tags them with
/// that server. An empty list disables filtering.
pub fn filter_by_server(flows: Vec<Flow>, allow: &ServerAllowList) -> Vec<Flow> {
    if allow.is_empty() {
        return flows;
    }
    flows
        .into_iter()
        .filter_map(|mut f| {
            let tag = allow.get(&f.conn_key().server_ip())?;
            f.server = tag;
            Some(f)
        })
        .collect()
}

/// One row of a flow CSV carrying precomputed features.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub conn_key: String,
    pub label: FlowLabel,
    pub server: ServerTag,
    pub features: FeatureVector,
}

impl FlowRecord {
    pub fn from_flow(flow: &Flow) -> Self {
        FlowRecord {
            conn_key: flow.conn_key().to_string(),
            label: flow.label,
            server: flow.server,
            features: extract_features(flow),
        }
    }
}

/// A flow CSV row: either precomputed features or the packets they come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedFlow {
    Features(FlowRecord),
    Packets(Flow),
}

impl LoadedFlow {
    pub fn into_record(self) -> FlowRecord {
        match self {
            LoadedFlow::Features(r) => r,
            LoadedFlow::Packets(f) => FlowRecord::from_flow(&f),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(r)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn column(headers: &csv::StringRecord, name: &str, path: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Format {
            path: path.to_string(),
            message: format!("missing column `{name}`"),
        })
}

fn row_err(path: &str, record: &csv::StringRecord, message: String) -> Error {
    Error::Row {
        path: path.to_string(),
        row: record.position().map_or(0, |p| p.line() as usize),
        message,
    }
}

pub fn write_flow_csv<W: Write>(out: W, records: &[FlowRecord]) -> Result<()> {
    let mut w = csv_writer(out);
    let mut header = vec!["conn_key".to_string(), "label".into(), "server".into()];
    header.extend((0..NUM_FEATURES).map(feature_column));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.conn_key.clone(),
            r.label.as_str().to_string(),
            r.server.as_str().to_string(),
        ];
        row.extend(r.features.0.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<flow csv>", e))?;
    Ok(())
}

pub fn store_flow_csv(path: &Path, records: &[FlowRecord]) -> Result<()> {
    write_flow_csv(create(path)?, records)
}

/// Parses a flow CSV from any reader. `origin` names the source in errors;
/// `base_dir` resolves packet-list references.
pub fn read_flow_csv<R: Read>(input: R, origin: &str, base_dir: &Path) -> Result<Vec<LoadedFlow>> {
    let mut rdr = csv_reader(input);
    let headers = rdr.headers()?.clone();
    let key_col = column(&headers, "conn_key", origin)?;
    let label_col = column(&headers, "label", origin)?;
    let server_col = column(&headers, "server", origin)?;
    let packets_col = headers.iter().position(|h| h.trim() == "packets");
    let feature_cols = match packets_col {
        Some(_) => None,
        None => Some(
            (0..NUM_FEATURES)
                .map(|i| column(&headers, &feature_column(i), origin))
                .collect::<Result<Vec<_>>>()?,
        ),
    };

    let mut packet_cache: HashMap<PathBuf, Vec<Flow>> = HashMap::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let label: FlowLabel = field(label_col)
            .parse()
            .map_err(|e| row_err(origin, &record, e))?;
        let server: ServerTag = field(server_col)
            .parse()
            .map_err(|e| row_err(origin, &record, e))?;
        let conn_key = field(key_col).to_string();

        match (&feature_cols, packets_col) {
            (Some(cols), _) => {
                let mut values = [0.0; NUM_FEATURES];
                for (i, &c) in cols.iter().enumerate() {
                    let raw = field(c);
                    let v: f64 = raw.parse().map_err(|_| {
                        row_err(
                            origin,
                            &record,
                            format!("column {}: {raw:?} is not a number", feature_column(i)),
                        )
                    })?;
                    if !v.is_finite() {
                        return Err(row_err(
                            origin,
                            &record,
                            format!("column {}: non-finite value", feature_column(i)),
                        ));
                    }
                    values[i] = v;
                }
                out.push(LoadedFlow::Features(FlowRecord {
                    conn_key,
                    label,
                    server,
                    features: FeatureVector(values),
                }));
            }
            (None, Some(pc)) => {
                let key: ConnKey = conn_key
                    .parse()
                    .map_err(|e| row_err(origin, &record, e))?;
                let rel = Path::new(field(pc));
                let path = if rel.is_absolute() {
                    rel.to_path_buf()
                } else {
                    base_dir.join(rel)
                };
                if !packet_cache.contains_key(&path) {
                    let packets = load_packet_csv(&path, &ServerAllowList::new())?;
                    let flows = assemble_flows(packets.packets, label).flows;
                    packet_cache.insert(path.clone(), flows);
                }
                let flow = packet_cache[&path]
                    .iter()
                    .find(|f| *f.conn_key() == key)
                    .ok_or_else(|| {
                        row_err(
                            origin,
                            &record,
                            format!("no packets for {key} in {}", path.display()),
                        )
                    })?;
                let mut flow = flow.clone();
                flow.label = label;
                flow.server = server;
                out.push(LoadedFlow::Packets(flow));
            }
            (None, None) => unreachable!("feature columns resolved when no packets column"),
        }
    }
    Ok(out)
}

pub fn load_flow_csv(path: &Path) -> Result<Vec<LoadedFlow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_flow_csv(open(path)?, &path.display().to_string(), base)
}

/// Loads a flow CSV and reduces every row to its feature record.
pub fn load_flow_records(path: &Path) -> Result<Vec<FlowRecord>> {
    Ok(load_flow_csv(path)?
        .into_iter()
        .map(LoadedFlow::into_record)
        .collect())
}

/// Packets parsed from a packet CSV; unparseable rows are counted, not fatal.
#[derive(Debug, Clone, Default)]
pub struct PacketLoad {
    pub packets: Vec<PacketRecord>,
    pub skipped: usize,
}

/// Keys are normalized to client-to-server orientation using the allow list:
/// a packet whose source is an approved server is Incoming on the reversed
/// key, one whose destination is approved is Outgoing.
pub fn read_packet_csv<R: Read>(
    input: R,
    origin: &str,
    allow: &ServerAllowList,
) -> Result<PacketLoad> {
    let mut rdr = csv_reader(input);
    let headers = rdr.headers()?.clone();
    let key_col = column(&headers, "conn_key", origin)?;
    let ts_col = column(&headers, "timestamp", origin)?;
    let dir_col = column(&headers, "direction", origin)?;
    let size_col = column(&headers, "size_bytes", origin)?;

    let mut load = PacketLoad::default();
    for record in rdr.records() {
        let Ok(record) = record else {
            load.skipped += 1;
            continue;
        };
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let parsed = (|| {
            let mut key: ConnKey = field(key_col).parse().ok()?;
            let timestamp: f64 = field(ts_col).parse().ok()?;
            let size_bytes: u32 = field(size_col).parse().ok()?;
            let raw_dir = field(dir_col);
            let direction = if raw_dir.is_empty() {
                if allow.contains(&key.dst.ip()) {
                    Direction::Outgoing
                } else if allow.contains(&key.src.ip()) {
                    key = key.reversed();
                    Direction::Incoming
                } else {
                    return None;
                }
            } else {
                if allow.contains(&key.src.ip()) && !allow.contains(&key.dst.ip()) {
                    key = key.reversed();
                }
                raw_dir.parse().ok()?
            };
            let p = PacketRecord {
                timestamp,
                direction,
                size_bytes,
                conn_key: key,
            };
            p.is_valid().then_some(p)
        })();
        match parsed {
            Some(p) => load.packets.push(p),
            None => load.skipped += 1,
        }
    }
    Ok(load)
}

pub fn load_packet_csv(path: &Path, allow: &ServerAllowList) -> Result<PacketLoad> {
    read_packet_csv(open(path)?, &path.display().to_string(), allow)
}

pub fn write_packet_csv<W: Write>(out: W, flows: &[Flow]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["conn_key", "timestamp", "direction", "size_bytes"])?;
    for f in flows {
        let key = f.conn_key().to_string();
        for p in f.packets() {
            w.write_record([
                key.as_str(),
                &format!("{:.6}", p.timestamp),
                p.direction.as_str(),
                &p.size_bytes.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<packet csv>", e))?;
    Ok(())
}

pub fn store_packet_csv(path: &Path, flows: &[Flow]) -> Result<()> {
    write_packet_csv(create(path)?, flows)
}

/// Maps the columns of an external flow CSV (for example a CIRA-CIC-DoHBrw
/// export) onto the flow CSV layout.
///
/// Config lines read `ExternalColumn = target`, where target is one of
/// `f00`..`f15`, `conn_key`, `label`, `server`, `src_ip`, `src_port`,
/// `dst_ip`, `dst_port`. `const.label = <label>` and `const.server = <server>`
/// supply values absent from the file; `alias.<External value> = <label>`
/// renames label values.
#[derive(Debug, Clone, Default)]
pub struct ColumnMapping {
    features: [Option<String>; NUM_FEATURES],
    conn_key: Option<String>,
    endpoints: Option<[String; 4]>,
    label: Option<String>,
    server: Option<String>,
    const_label: Option<FlowLabel>,
    const_server: Option<ServerTag>,
    aliases: HashMap<String, FlowLabel>,
}

impl ColumnMapping {
    pub fn from_config(cfg: &KeyValueConfig) -> Result<Self> {
        let mut m = ColumnMapping::default();
        let mut endpoints: [Option<String>; 4] = Default::default();
        for (key, value) in cfg.iter() {
            if key == "const.label" {
                m.const_label = Some(value.parse().map_err(Error::InvalidParameter)?);
                continue;
            }
            if key == "const.server" {
                m.const_server = Some(value.parse().map_err(Error::InvalidParameter)?);
                continue;
            }
            if let Some(external) = key.strip_prefix("alias.") {
                m.aliases.insert(
                    external.to_string(),
                    value.parse().map_err(Error::InvalidParameter)?,
                );
                continue;
            }
            let external = key.to_string();
            match value {
                "conn_key" => m.conn_key = Some(external),
                "label" => m.label = Some(external),
                "server" => m.server = Some(external),
                "src_ip" => endpoints[0] = Some(external),
                "src_port" => endpoints[1] = Some(external),
                "dst_ip" => endpoints[2] = Some(external),
                "dst_port" => endpoints[3] = Some(external),
                target => {
                    let idx = target
                        .strip_prefix('f')
                        .and_then(|n| n.parse::<usize>().ok())
                        .filter(|&i| i < NUM_FEATURES && target.len() == 3)
                        .ok_or_else(|| {
                            Error::InvalidParameter(format!(
                                "column mapping target {target:?} is not a known field"
                            ))
                        })?;
                    m.features[idx] = Some(external);
                }
            }
        }
        if let Some(i) = m.features.iter().position(Option::is_none) {
            return Err(Error::InvalidParameter(format!(
                "column mapping has no source for {}",
                feature_column(i)
            )));
        }
        match endpoints {
            [Some(a), Some(b), Some(c), Some(d)] => m.endpoints = Some([a, b, c, d]),
            [None, None, None, None] => {}
            _ => {
                return Err(Error::InvalidParameter(
                    "src_ip, src_port, dst_ip and dst_port must be mapped together".into(),
                ))
            }
        }
        if m.label.is_none() && m.const_label.is_none() {
            return Err(Error::InvalidParameter(
                "column mapping needs a label column or const.label".into(),
            ));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config(&KeyValueConfig::load(path)?)
    }

    fn label_for(&self, raw: &str) -> std::result::Result<FlowLabel, String> {
        match self.aliases.get(raw) {
            Some(&l) => Ok(l),
            None => raw.parse(),
        }
    }
}

pub fn read_mapped_csv<R: Read>(
    input: R,
    origin: &str,
    mapping: &ColumnMapping,
) -> Result<Vec<FlowRecord>> {
    let mut rdr = csv_reader(input);
    let headers = rdr.headers()?.clone();
    let feature_cols = mapping
        .features
        .iter()
        .map(|name| column(&headers, name.as_deref().unwrap_or_default(), origin))
        .collect::<Result<Vec<_>>>()?;
    let key_col = mapping
        .conn_key
        .as_deref()
        .map(|c| column(&headers, c, origin))
        .transpose()?;
    let endpoint_cols = mapping
        .endpoints
        .as_ref()
        .map(|names| {
            names
                .iter()
                .map(|n| column(&headers, n, origin))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let label_col = mapping
        .label
        .as_deref()
        .map(|c| column(&headers, c, origin))
        .transpose()?;
    let server_col = mapping
        .server
        .as_deref()
        .map(|c| column(&headers, c, origin))
        .transpose()?;

    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let mut values = [0.0; NUM_FEATURES];
        for (fi, &c) in feature_cols.iter().enumerate() {
            let raw = field(c);
            values[fi] = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                row_err(
                    origin,
                    &record,
                    format!("column {:?} ({}): {raw:?} is not a number", headers.get(c).unwrap_or(""), feature_column(fi)),
                )
            })?;
        }
        let label = match label_col {
            Some(c) => mapping
                .label_for(field(c))
                .map_err(|e| row_err(origin, &record, e))?,
            None => mapping.const_label.expect("checked in from_config"),
        };
        let server = match server_col {
            Some(c) => field(c).parse().map_err(|e| row_err(origin, &record, e))?,
            None => mapping.const_server.unwrap_or(ServerTag::Unknown),
        };
        let conn_key = if let Some(c) = key_col {
            field(c).to_string()
        } else if let Some(cols) = &endpoint_cols {
            let ep = |ip: usize, port: usize| {
                let ip: IpAddr = field(cols[ip]).parse().ok()?;
                let port: u16 = field(cols[port]).parse().ok()?;
                Some(std::net::SocketAddr::new(ip, port))
            };
            match (ep(0, 1), ep(2, 3)) {
                (Some(src), Some(dst)) => ConnKey::tcp(src, dst).to_string(),
                _ => return Err(row_err(origin, &record, "unparseable endpoint columns".into())),
            }
        } else {
            format!("row-{}", i + 1)
        };
        out.push(FlowRecord {
            conn_key,
            label,
            server,
            features: FeatureVector(values),
        });
    }
    Ok(out)
}

pub fn load_mapped_csv(path: &Path, mapping: &ColumnMapping) -> Result<Vec<FlowRecord>> {
    read_mapped_csv(open(path)?, &path.display().to_string(), mapping)
}
