//! Benchmark harness: repeated handshakes per mode, per-phase timing
//! statistics, per-message overhead tables and a DH cost micro-benchmark.

mod dh_cost;
mod report;
mod stats;

pub use dh_cost::{bench_dh_cost, DhCost, MIN_DH_ITERATIONS};
pub use report::{
    distribution_markdown, parse_phase_stats_csv, phase_stats_csv, render_tables, timing_markdown,
    ModeStats, OverheadRow, OverheadTable, RenderedTables,
};
pub use stats::{mean, quantile, sample_sd, PhaseStats};

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::KeyIdEncoding;
use crate::handshake::{
    run_full_handshake, EapRoundPlan, HandshakeConfig, HandshakeError, HandshakeResult,
    HandshakeSetup, KmsEndpoints, Mode, Phase, SaPlan, TransportSpec,
};
use crate::kms::{
    HttpKmsClient, KeySource, KmePair, KmeSide, KmsConfig, KmsServers, LocalKmsClient,
    DEFAULT_SAE_HEADER,
};
use crate::transport::FRAMING_OVERHEAD;

/// Where QKD mode gets its keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KmsSetup {
    /// In-process KME pair.
    Local { latency_ms: u64 },
    /// In-process KME pair behind the REST interface on loopback.
    Http { latency_ms: u64 },
    /// Already running KMEs, e.g. started with `kms-serve`.
    Remote {
        n3iwf_url: String,
        ue_url: String,
        #[serde(default = "default_sae_header")]
        sae_header: String,
    },
}

fn default_sae_header() -> String {
    DEFAULT_SAE_HEADER.to_string()
}

impl Default for KmsSetup {
    fn default() -> Self {
        KmsSetup::Local { latency_ms: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub modes: Vec<Mode>,
    pub iterations: usize,
    pub sa_plan: SaPlan,
    pub eap: EapRoundPlan,
    pub kms: KmsSetup,
    pub transport: TransportSpec,
    /// Keys requested per QKD handshake; the plan's own count when absent.
    pub key_count_override: Option<usize>,
    pub key_id_encoding: KeyIdEncoding,
    /// Add the per-message link/IP/UDP estimate to overhead figures.
    pub framing: bool,
    pub output_dir: PathBuf,
    /// Makes SPIs, nonces, exponents and KMS keys repeatable.
    pub seed: Option<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            modes: Mode::ALL.to_vec(),
            iterations: 100,
            sa_plan: SaPlan::default(),
            eap: EapRoundPlan::default(),
            kms: KmsSetup::default(),
            transport: TransportSpec::default(),
            key_count_override: None,
            key_id_encoding: KeyIdEncoding::default(),
            framing: true,
            output_dir: PathBuf::from("bench-out"),
            seed: None,
        }
    }
}

impl BenchConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Handshake configuration for one iteration of `mode`.
    pub fn handshake_config(&self, mode: Mode, iteration: usize) -> HandshakeConfig {
        let mut config = HandshakeConfig {
            mode,
            sa_plan: self.sa_plan.clone(),
            eap: self.eap.clone(),
            key_id_encoding: self.key_id_encoding,
            seed: self.seed.map(|s| s.wrapping_add(iteration as u64)),
            ..HandshakeConfig::for_mode(mode)
        };
        if let Some(n) = self.key_count_override {
            config.spare_keys = n.saturating_sub(config.key_plan().slot_count());
        }
        config
    }

    pub fn framing_bytes(&self) -> usize {
        if self.framing {
            FRAMING_OVERHEAD
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.iterations < 1 {
            return Err("iterations must be at least 1".into());
        }
        if self.modes.is_empty() {
            return Err("at least one mode is required".into());
        }
        let base = self.handshake_config(Mode::Qkd, 0);
        base.validate()?;
        if let Some(n) = self.key_count_override {
            let needed = HandshakeConfig {
                spare_keys: 0,
                ..base
            }
            .key_plan()
            .slot_count();
            if n < needed {
                return Err(format!(
                    "key_count_override {n} is below the {needed} keys the SA plan needs"
                ));
            }
        }
        if let KmsSetup::Remote {
            n3iwf_url, ue_url, ..
        } = &self.kms
        {
            if n3iwf_url.is_empty() || ue_url.is_empty() {
                return Err("QKD mode needs both KMS endpoints".into());
            }
        }
        Ok(())
    }
}

/// One handshake's outcome as kept in the raw sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub iteration: usize,
    pub success: bool,
    pub init_ms: Option<f64>,
    pub auth_ms: Option<f64>,
    pub child_sa_ms: Option<f64>,
    pub total_ms: Option<f64>,
    /// IKE bytes on the wire, framing excluded.
    pub ike_bytes: usize,
    pub messages: usize,
    pub modexp: u64,
    pub kms_calls: usize,
    pub retransmissions: u32,
    pub error: String,
}

impl Sample {
    fn from_result(iteration: usize, r: &HandshakeResult) -> Sample {
        let phase = |p| r.phase_ms(p);
        let (init_ms, auth_ms, child_sa_ms) = (
            phase(Phase::Init),
            phase(Phase::Auth),
            phase(Phase::ChildSa),
        );
        let total_ms = match (init_ms, auth_ms, child_sa_ms) {
            (Some(a), Some(b), Some(c)) => Some(a + b + c),
            _ => None,
        };
        Sample {
            iteration,
            success: r.is_success(),
            init_ms,
            auth_ms,
            child_sa_ms,
            total_ms,
            ike_bytes: r.trace.iter().map(|w| w.bytes_on_wire).sum(),
            messages: r.trace.len(),
            modexp: r.total_counts().modexp,
            kms_calls: r.kms_calls.len(),
            retransmissions: r.retransmissions,
            error: match &r.status {
                crate::handshake::HandshakeStatus::Failed(e) => e.to_string(),
                _ => String::new(),
            },
        }
    }

    pub fn phase_ms(&self, phase: Phase) -> Option<f64> {
        match phase {
            Phase::Init => self.init_ms,
            Phase::Auth => self.auth_ms,
            Phase::ChildSa => self.child_sa_ms,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub iteration: usize,
    pub error: HandshakeError,
    /// Key-agreement or probe failure on an otherwise successful run.
    pub key_mismatch: bool,
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: Mode,
    pub samples: Vec<Sample>,
    pub stats: ModeStats,
    pub failures: Vec<Failure>,
    /// The first fully successful run, source of the overhead column.
    pub first_success: Option<HandshakeResult>,
}

impl ModeRun {
    /// Durations of one phase over successful runs, in run order.
    pub fn phase_samples(&self, phase: Phase) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.success)
            .filter_map(|s| s.phase_ms(phase))
            .collect()
    }

    pub fn successes(&self) -> usize {
        self.samples.iter().filter(|s| s.success).count()
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub runs: Vec<ModeRun>,
    pub overhead: OverheadTable,
    pub dh_cost: Option<DhCost>,
}

impl BenchReport {
    pub fn all_succeeded(&self) -> bool {
        self.runs.iter().all(|r| r.failures.is_empty())
    }

    pub fn stats(&self) -> Vec<ModeStats> {
        self.runs.iter().map(|r| r.stats.clone()).collect()
    }

    pub fn run(&self, mode: Mode) -> Option<&ModeRun> {
        self.runs.iter().find(|r| r.mode == mode)
    }

    pub fn failure_summary(&self) -> String {
        let mut s = String::new();
        for run in &self.runs {
            if run.failures.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                "{}: {} of {} handshakes failed",
                run.mode,
                run.failures.len(),
                run.samples.len()
            );
            for f in run.failures.iter().take(5) {
                let _ = writeln!(s, "  iteration {}: {}", f.iteration, f.error);
            }
        }
        s
    }

    pub fn render(&self) -> RenderedTables {
        render_tables(&self.stats(), &self.overhead)
    }

    /// Full markdown report: settings, tables, DH cost and failures.
    pub fn markdown(&self, rendered: &RenderedTables) -> String {
        let c = &self.config;
        let mut md = String::from("# NWu handshake benchmark\n\n");
        let modes: Vec<&str> = c.modes.iter().map(|m| m.label()).collect();
        let _ = writeln!(md, "- modes: {}", modes.join(", "));
        let _ = writeln!(md, "- iterations per mode: {}", c.iterations);
        let _ = writeln!(
            md,
            "- child SAs: {}, EAP rounds: {}",
            c.sa_plan.child_sa_count, c.eap.round_count
        );
        let _ = writeln!(
            md,
            "- QKD keys per handshake: {}",
            c.handshake_config(Mode::Qkd, 0).key_plan().slot_count()
        );
        let _ = writeln!(md, "- KMS: {:?}", c.kms);
        let _ = writeln!(md, "- transport: {:?}", c.transport);
        let _ = writeln!(md, "- successes: {}", {
            let v: Vec<String> = self
                .runs
                .iter()
                .map(|r| format!("{} {}/{}", r.mode, r.successes(), r.samples.len()))
                .collect();
            v.join(", ")
        });
        md.push('\n');
        md.push_str(&rendered.markdown);
        if let Some(d) = &self.dh_cost {
            let _ = writeln!(
                md,
                "\n## DH cost (group {}, {} iterations)\n",
                d.group_id, d.iterations
            );
            let _ = writeln!(
                md,
                "- key pair: {:.3} ms, shared secret: {:.3} ms",
                d.keypair_ms, d.shared_ms
            );
            let _ = writeln!(
                md,
                "- predicted INIT gap, two exponentiations per end: {:.3} ms",
                d.predicted_init_gap_ms()
            );
            let init = |m| {
                self.run(m)
                    .and_then(|r| r.stats.phase(Phase::Init))
                    .map(|p| p.mean_ms)
            };
            let classical = [Mode::DhPsk, Mode::DhCert]
                .into_iter()
                .filter_map(init)
                .collect::<Vec<_>>();
            if let (Some(q), false) = (init(Mode::Qkd), classical.is_empty()) {
                let gap = mean(&classical) - q;
                let _ = writeln!(
                    md,
                    "- measured INIT gap (classical mean minus QKD): {gap:.3} ms"
                );
            }
        }
        if !self.all_succeeded() {
            let _ = writeln!(md, "\n## Failures\n\n```\n{}```", self.failure_summary());
        }
        md
    }

    /// Writes phase_stats.csv, overhead.csv, report.md and samples_<mode>.csv.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let rendered = self.render();
        let mut written = Vec::new();
        let mut put = |name: String, body: &[u8]| -> std::io::Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
            Ok(())
        };
        put(
            "phase_stats.csv".into(),
            rendered.phase_stats_csv.as_bytes(),
        )?;
        put("overhead.csv".into(), rendered.overhead_csv.as_bytes())?;
        put("report.md".into(), self.markdown(&rendered).as_bytes())?;
        for run in &self.runs {
            let mut w = csv::Writer::from_writer(Vec::new());
            for s in &run.samples {
                w.serialize(s).map_err(std::io::Error::other)?;
            }
            let body = w
                .into_inner()
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            put(
                format!("samples_{}.csv", run.mode.label().to_ascii_lowercase()),
                &body,
            )?;
        }
        Ok(written)
    }
}

/// KMS endpoints plus whatever keeps them alive.
pub struct KmsHandle {
    pub endpoints: KmsEndpoints,
    _servers: Option<KmsServers>,
}

/// Connects to, or starts, the KMS described by `config`. In-process pools
/// are created holding `keys_needed` keys.
pub fn connect_kms(config: &BenchConfig, keys_needed: usize) -> Result<KmsHandle, String> {
    let hs = config.handshake_config(Mode::Qkd, 0);
    let pair = |latency_ms| {
        KmePair::new(KmsConfig {
            saes: [vec![hs.n3iwf_sae.clone()], vec![hs.ue_sae.clone()]],
            initial_keys: keys_needed,
            capacity: keys_needed.max(crate::kms::DEFAULT_POOL_CAPACITY),
            key_source: config.seed.map_or(KeySource::Entropy, KeySource::Seeded),
            latency_ms,
            ..Default::default()
        })
        .map_err(|e| e.to_string())
    };
    match &config.kms {
        KmsSetup::Local { latency_ms } => {
            let pair = pair(*latency_ms)?;
            Ok(KmsHandle {
                endpoints: KmsEndpoints {
                    n3iwf: Arc::new(LocalKmsClient::new(
                        pair.clone(),
                        KmeSide::A,
                        hs.n3iwf_sae.clone(),
                    )),
                    ue: Arc::new(LocalKmsClient::new(pair, KmeSide::B, hs.ue_sae.clone())),
                },
                _servers: None,
            })
        }
        KmsSetup::Http { latency_ms } => {
            let pair = pair(*latency_ms)?;
            let any: SocketAddr = ([127, 0, 0, 1], 0).into();
            let servers = KmsServers::start(pair, [any, any], DEFAULT_SAE_HEADER)
                .map_err(|e| e.to_string())?;
            Ok(KmsHandle {
                endpoints: KmsEndpoints {
                    n3iwf: Arc::new(HttpKmsClient::new(
                        servers.base_url(KmeSide::A),
                        hs.n3iwf_sae.clone(),
                        DEFAULT_SAE_HEADER,
                    )),
                    ue: Arc::new(HttpKmsClient::new(
                        servers.base_url(KmeSide::B),
                        hs.ue_sae.clone(),
                        DEFAULT_SAE_HEADER,
                    )),
                },
                _servers: Some(servers),
            })
        }
        KmsSetup::Remote {
            n3iwf_url,
            ue_url,
            sae_header,
        } => Ok(KmsHandle {
            endpoints: KmsEndpoints {
                n3iwf: Arc::new(HttpKmsClient::new(
                    n3iwf_url.clone(),
                    hs.n3iwf_sae.clone(),
                    sae_header.clone(),
                )),
                ue: Arc::new(HttpKmsClient::new(
                    ue_url.clone(),
                    hs.ue_sae.clone(),
                    sae_header.clone(),
                )),
            },
            _servers: None,
        }),
    }
}

/// Runs one mode's iterations back to back.
pub fn run_mode(config: &BenchConfig, mode: Mode) -> Result<ModeRun, String> {
    let keys = if mode == Mode::Qkd {
        let per = config.handshake_config(mode, 0).key_plan().slot_count();
        Some(connect_kms(config, per * config.iterations + per)?)
    } else {
        None
    };
    let mut samples = Vec::with_capacity(config.iterations);
    let mut failures = Vec::new();
    let mut first_success = None;
    for i in 0..config.iterations {
        let setup = HandshakeSetup {
            config: config.handshake_config(mode, i),
            kms: keys.as_ref().map(|k| k.endpoints.clone()),
            transport: config.transport.clone(),
        };
        let result = run_full_handshake(&setup);
        let mut sample = Sample::from_result(i, &result);
        match &result.status {
            crate::handshake::HandshakeStatus::Failed(e) => failures.push(Failure {
                iteration: i,
                error: e.clone(),
                key_mismatch: false,
            }),
            _ if !(result.keys_agree() && result.probe_ok) => {
                sample.success = false;
                sample.error = "peers disagree on SA keys".into();
                failures.push(Failure {
                    iteration: i,
                    error: HandshakeError::new(
                        crate::handshake::FailureKind::Protocol,
                        Phase::Established,
                        "peers disagree on SA keys",
                    ),
                    key_mismatch: true,
                });
            }
            _ => {
                if first_success.is_none() {
                    first_success = Some(result);
                }
            }
        }
        samples.push(sample);
    }
    let mut run = ModeRun {
        mode,
        samples,
        stats: ModeStats {
            mode,
            phases: Vec::new(),
        },
        failures,
        first_success,
    };
    run.stats.phases = Phase::TIMED
        .into_iter()
        .filter_map(|p| PhaseStats::from_samples(p, &run.phase_samples(p)))
        .collect();
    Ok(run)
}

/// Runs every configured mode and assembles the statistics and overhead table.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport, String> {
    config.validate()?;
    let runs = config
        .modes
        .iter()
        .map(|m| run_mode(config, *m))
        .collect::<Result<Vec<_>, _>>()?;
    let columns: Vec<(Mode, Option<&[crate::transport::WireRecord]>)> = runs
        .iter()
        .map(|r| (r.mode, r.first_success.as_ref().map(|s| s.trace.as_slice())))
        .collect();
    let overhead = OverheadTable::from_traces(config.framing_bytes(), &columns);
    Ok(BenchReport {
        config: config.clone(),
        runs,
        overhead,
        dh_cost: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(iterations: usize) -> BenchConfig {
        BenchConfig {
            iterations,
            seed: Some(5),
            ..Default::default()
        }
    }

    #[test]
    fn config_json_fills_defaults() {
        let c: BenchConfig = serde_json::from_str(
            r#"{"modes":["QKD"],"iterations":3,"kms":{"kind":"http","latency_ms":2}}"#,
        )
        .unwrap();
        assert_eq!(c.modes, [Mode::Qkd]);
        assert_eq!(c.kms, KmsSetup::Http { latency_ms: 2 });
        assert!(c.framing);
        assert_eq!(c.sa_plan.child_sa_count, 2);
    }

    #[test]
    fn validation_rejects_degenerate_configs() {
        assert!(small(0).validate().is_err());
        assert!(BenchConfig {
            modes: vec![],
            ..small(1)
        }
        .validate()
        .is_err());
        assert!(BenchConfig {
            key_count_override: Some(12),
            ..small(1)
        }
        .validate()
        .is_err());
        let remote = KmsSetup::Remote {
            n3iwf_url: String::new(),
            ue_url: "http://x".into(),
            sae_header: default_sae_header(),
        };
        assert!(BenchConfig {
            kms: remote,
            ..small(1)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn key_count_override_adds_spares() {
        let c = BenchConfig {
            key_count_override: Some(15),
            ..small(1)
        };
        assert_eq!(c.handshake_config(Mode::Qkd, 0).spare_keys, 2);
        assert_eq!(c.handshake_config(Mode::Qkd, 0).key_plan().slot_count(), 15);
        assert_eq!(
            small(1)
                .handshake_config(Mode::Qkd, 0)
                .key_plan()
                .slot_count(),
            13
        );
    }

    #[test]
    fn three_modes_give_nine_phase_rows_and_one_table() {
        let report = run_bench(&small(3)).unwrap();
        assert!(report.all_succeeded(), "{}", report.failure_summary());
        let rows: usize = report.runs.iter().map(|r| r.stats.phases.len()).sum();
        assert_eq!(rows, 9);
        assert_eq!(report.overhead.modes, Mode::ALL);
        assert_eq!(report.overhead.rows.len(), 14);
        assert_eq!(report.overhead.rows[0].label, "IKE_SA_INIT MID=00 I");
    }

    #[test]
    fn failures_are_reported() {
        let report = run_bench(&BenchConfig {
            modes: vec![Mode::Qkd],
            kms: KmsSetup::Remote {
                n3iwf_url: "http://127.0.0.1:9".into(),
                ue_url: "http://127.0.0.1:9".into(),
                sae_header: default_sae_header(),
            },
            ..small(2)
        })
        .unwrap();
        assert!(!report.all_succeeded());
        assert_eq!(report.runs[0].failures.len(), 2);
        assert!(report
            .failure_summary()
            .contains("2 of 2 handshakes failed"));
        assert_eq!(report.overhead.total(Mode::Qkd), Some(0));
    }
}
