use rayon::prelude::*;

use super::experiment::Dataset;
use crate::config::KeyValueConfig;
use crate::error::Result;
use crate::flowcore::{FlowLabel, ServerTag};
use crate::seed::derive_path;
use crate::synth::TrafficProfile;

const TAG_BENIGN: u64 = 10;
const TAG_MALWARE: u64 = 11;

/// Sizes and seed of a synthetic evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGrid {
    pub benign_per_server: usize,
    pub pool_per_malware: usize,
    pub servers: Vec<ServerTag>,
    pub malware: Vec<FlowLabel>,
    pub seed: u64,
    /// Per-profile overrides, keyed `<label>.<parameter>`, e.g.
    /// `dga-sc.queries_max = 200` or `benign.wait = lognormal(-1, 1)`.
    pub overrides: KeyValueConfig,
}

impl Default for SyntheticGrid {
    fn default() -> Self {
        SyntheticGrid {
            benign_per_server: 2350,
            pool_per_malware: 1000,
            servers: ServerTag::KNOWN.to_vec(),
            malware: FlowLabel::MALICIOUS.to_vec(),
            seed: 0,
            overrides: KeyValueConfig::default(),
        }
    }
}

impl SyntheticGrid {
    pub fn profile(&self, label: FlowLabel, server: ServerTag, seed: u64) -> Result<TrafficProfile> {
        let mut p = TrafficProfile::for_label(label, server, seed);
        let section = self.overrides.section(label.as_str());
        if !section.is_empty() {
            p.apply_config(&section)?;
        }
        Ok(p)
    }

    /// Benign sets (one per server) and malicious pools (one per label).
    /// Malicious pools are shared across servers.
    pub fn generate(&self) -> Result<(Vec<Dataset>, Vec<Dataset>)> {
        enum Job {
            Benign(usize, ServerTag),
            Malware(usize, FlowLabel),
        }
        let jobs: Vec<Job> = self
            .servers
            .iter()
            .enumerate()
            .map(|(i, &s)| Job::Benign(i, s))
            .chain(self.malware.iter().enumerate().map(|(i, &l)| Job::Malware(i, l)))
            .collect();
        let sets = jobs
            .par_iter()
            .map(|job| {
                let (name, profile, count) = match *job {
                    Job::Benign(i, s) => (
                        s.as_str(),
                        self.profile(FlowLabel::Benign, s, derive_path(self.seed, &[TAG_BENIGN, i as u64]))?,
                        self.benign_per_server,
                    ),
                    Job::Malware(i, l) => (
                        l.as_str(),
                        self.profile(l, ServerTag::Cloudflare, derive_path(self.seed, &[TAG_MALWARE, i as u64]))?,
                        self.pool_per_malware,
                    ),
                };
                let mut features = Vec::with_capacity(count);
                profile.generate_with(count, |f| features.push(f.features()))?;
                Ok(Dataset::new(name, features))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sets = sets;
        let malware = sets.split_off(self.servers.len());
        Ok((sets, malware))
    }
}
