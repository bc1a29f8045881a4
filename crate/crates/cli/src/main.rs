use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nwu_qkd::bench::{bench_dh_cost, connect_kms, run_bench, BenchConfig, KmsSetup};
use nwu_qkd::codec::KeyIdEncoding;
use nwu_qkd::handshake::{
    run_full_handshake, HandshakeSetup, HandshakeStatus, Mode, Phase, TransportSpec,
};
use nwu_qkd::keys::DhGroup;
use nwu_qkd::kms::{KeySource, KmePair, KmsConfig, KmsServers, SaeId, DEFAULT_SAE_HEADER};
use nwu_qkd::transport::{MemoryConfig, FRAMING_OVERHEAD};

#[derive(Parser)]
#[command(
    name = "nwu-qkd",
    version,
    about = "IKEv2 NWu handshake lab: QKD-keyed SAs against DH baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated handshakes per mode; writes phase_stats.csv, overhead.csv, report.md and samples.
    Bench(BenchArgs),
    /// Mean cost of one modular exponentiation in group 14.
    DhCost(DhCostArgs),
    /// Serves a simulated KME pair over the key-delivery REST interface.
    KmsServe(KmsServeArgs),
    /// One handshake with a per-message trace.
    Handshake(HandshakeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KmsKind {
    Local,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportKind {
    Memory,
    Udp,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Binary,
    Json,
}

impl From<Encoding> for KeyIdEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Binary => KeyIdEncoding::Binary,
            Encoding::Json => KeyIdEncoding::Json,
        }
    }
}

/// Flags shared by `bench` and `handshake`; each one overrides the config file.
#[derive(Args)]
struct SessionArgs {
    /// In-process KME pair, optionally behind its REST interface.
    #[arg(long, value_enum)]
    kms: Option<KmsKind>,
    /// Artificial delay per KMS request.
    #[arg(long)]
    kms_latency_ms: Option<u64>,
    /// Use running KMEs instead (both URLs required).
    #[arg(long, requires = "kms_ue_url")]
    kms_n3iwf_url: Option<String>,
    #[arg(long, requires = "kms_n3iwf_url")]
    kms_ue_url: Option<String>,
    #[arg(long, value_enum)]
    transport: Option<TransportKind>,
    /// One-way delay of the in-memory link.
    #[arg(long)]
    link_latency_ms: Option<f64>,
    /// Keys per QKD handshake (13 by default; 15 adds two spares).
    #[arg(long)]
    key_count: Option<usize>,
    #[arg(long)]
    eap_rounds: Option<usize>,
    #[arg(long)]
    child_sas: Option<usize>,
    #[arg(long, value_enum)]
    key_id_encoding: Option<Encoding>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SessionArgs {
    fn apply(&self, c: &mut BenchConfig) {
        let latency = self.kms_latency_ms.unwrap_or(match c.kms {
            KmsSetup::Local { latency_ms } | KmsSetup::Http { latency_ms } => latency_ms,
            KmsSetup::Remote { .. } => 0,
        });
        match self.kms {
            Some(KmsKind::Local) => {
                c.kms = KmsSetup::Local {
                    latency_ms: latency,
                }
            }
            Some(KmsKind::Http) => {
                c.kms = KmsSetup::Http {
                    latency_ms: latency,
                }
            }
            None => match &mut c.kms {
                KmsSetup::Local { latency_ms } | KmsSetup::Http { latency_ms } => {
                    *latency_ms = latency
                }
                KmsSetup::Remote { .. } => {}
            },
        }
        if let (Some(n3iwf_url), Some(ue_url)) = (&self.kms_n3iwf_url, &self.kms_ue_url) {
            c.kms = KmsSetup::Remote {
                n3iwf_url: n3iwf_url.clone(),
                ue_url: ue_url.clone(),
                sae_header: DEFAULT_SAE_HEADER.into(),
            };
        }
        match self.transport {
            Some(TransportKind::Udp) => c.transport = TransportSpec::UdpLoopback,
            Some(TransportKind::Memory) if !matches!(c.transport, TransportSpec::Memory(_)) => {
                c.transport = TransportSpec::Memory(MemoryConfig::default());
            }
            _ => {}
        }
        if let (Some(ms), TransportSpec::Memory(m)) = (self.link_latency_ms, &mut c.transport) {
            m.latency_ms = ms;
        }
        if self.key_count.is_some() {
            c.key_count_override = self.key_count;
        }
        if let Some(n) = self.eap_rounds {
            c.eap.round_count = n;
        }
        if let Some(n) = self.child_sas {
            c.sa_plan.child_sa_count = n;
        }
        if let Some(e) = self.key_id_encoding {
            c.key_id_encoding = e.into();
        }
        if self.seed.is_some() {
            c.seed = self.seed;
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    /// JSON file with a BenchConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of DH_PSK, DH_CERT, QKD.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<Mode>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report IKE bytes only, without the per-message framing estimate.
    #[arg(long)]
    no_framing: bool,
    /// DH micro-benchmark iterations appended to the report (0 skips it).
    #[arg(long, default_value_t = 100)]
    dh_iterations: usize,
    #[command(flatten)]
    session: SessionArgs,
}

#[derive(Args)]
struct DhCostArgs {
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    /// Private exponent length.
    #[arg(long, default_value_t = 256)]
    exponent_bits: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct KmsServeArgs {
    /// Listener of the N3IWF-side KME.
    #[arg(long, default_value = "127.0.0.1:8441")]
    n3iwf_bind: SocketAddr,
    /// Listener of the UE-side KME.
    #[arg(long, default_value = "127.0.0.1:8442")]
    ue_bind: SocketAddr,
    /// Keys in the pool at start.
    #[arg(long, default_value_t = 10_000)]
    keys: usize,
    /// Keys added per second by the simulated link (0 disables).
    #[arg(long, default_value_t = 0)]
    rate: u32,
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// Deterministic key material.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "N3IWF-001")]
    n3iwf_sae: String,
    #[arg(long, default_value = "UE-001")]
    ue_sae: String,
    #[arg(long, default_value = DEFAULT_SAE_HEADER)]
    sae_header: String,
}

#[derive(Args)]
struct HandshakeArgs {
    #[arg(long, default_value = "QKD")]
    mode: Mode,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    session: SessionArgs,
}

fn bench(args: BenchArgs) -> Result<bool> {
    let mut config = match &args.config {
        Some(path) => BenchConfig::from_json_file(path).map_err(anyhow::Error::msg)?,
        None => BenchConfig::default(),
    };
    if let Some(m) = args.modes {
        config.modes = m;
    }
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    if let Some(o) = args.output {
        config.output_dir = o;
    }
    if args.no_framing {
        config.framing = false;
    }
    args.session.apply(&mut config);

    let mut report = run_bench(&config).map_err(anyhow::Error::msg)?;
    if args.dh_iterations > 0 {
        let cost = bench_dh_cost(
            &DhGroup::modp2048(),
            args.dh_iterations,
            config.seed.unwrap_or(1),
        )
        .map_err(anyhow::Error::msg)?;
        report.dh_cost = Some(cost);
    }
    let rendered = report.render();
    println!("{}", rendered.markdown);
    let written = report
        .write(&config.output_dir)
        .with_context(|| format!("writing reports to {}", config.output_dir.display()))?;
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    if !report.all_succeeded() {
        eprint!("{}", report.failure_summary());
    }
    Ok(report.all_succeeded())
}

fn dh_cost(args: DhCostArgs) -> Result<bool> {
    let group = DhGroup::modp2048_with_exponent_bits(args.exponent_bits);
    let c = bench_dh_cost(&group, args.iterations, args.seed).map_err(anyhow::Error::msg)?;
    println!(
        "group {} ({}-bit modulus, {}-bit exponents), {} iterations",
        c.group_id, c.modulus_bits, c.exponent_bits, c.iterations
    );
    println!("key pair:       {:.3} ms", c.keypair_ms);
    println!("shared secret:  {:.3} ms", c.shared_ms);
    println!("per operation:  {:.3} ms", c.per_op_ms());
    println!(
        "INIT gap model: {:.3} ms (two exponentiations on each end)",
        c.predicted_init_gap_ms()
    );
    Ok(true)
}

fn kms_serve(args: KmsServeArgs) -> Result<bool> {
    let pair = KmePair::new(KmsConfig {
        saes: [
            vec![SaeId::new(args.n3iwf_sae)?],
            vec![SaeId::new(args.ue_sae)?],
        ],
        initial_keys: args.keys,
        capacity: args.keys.max(nwu_qkd::kms::DEFAULT_POOL_CAPACITY),
        key_source: args.seed.map_or(KeySource::Entropy, KeySource::Seeded),
        latency_ms: args.latency_ms,
        ..Default::default()
    })?;
    let servers = KmsServers::start(
        pair.clone(),
        [args.n3iwf_bind, args.ue_bind],
        &args.sae_header,
    )?;
    let stop = Arc::new(AtomicBool::new(false));
    if args.rate > 0 {
        pair.spawn_generator(args.rate, stop);
    }
    println!("N3IWF KME: http://{}", servers.addrs[0]);
    println!("UE KME:    http://{}", servers.addrs[1]);
    println!("{} keys stored; Ctrl-C to stop", pair.stored_key_count());
    loop {
        std::thread::park();
    }
}

fn handshake(args: HandshakeArgs) -> Result<bool> {
    let mut bench = BenchConfig {
        modes: vec![args.mode],
        iterations: 1,
        ..Default::default()
    };
    args.session.apply(&mut bench);
    bench.validate().map_err(anyhow::Error::msg)?;
    let config = bench.handshake_config(args.mode, 0);
    let kms = match args.mode {
        Mode::Qkd => {
            Some(connect_kms(&bench, config.key_plan().slot_count()).map_err(anyhow::Error::msg)?)
        }
        _ => None,
    };
    let result = run_full_handshake(&HandshakeSetup {
        config,
        kms: kms.as_ref().map(|k| k.endpoints.clone()),
        transport: bench.transport.clone(),
    });

    if args.json {
        let value = serde_json::json!({
            "mode": result.mode,
            "success": result.is_success(),
            "status": match &result.status {
                HandshakeStatus::Success => "success".to_string(),
                HandshakeStatus::Failed(e) => e.to_string(),
            },
            "phases_ms": Phase::TIMED.iter().map(|p| (p.label(), result.phase_ms(*p))).collect::<Vec<_>>(),
            "trace": result.trace,
            "kms_calls": result.kms_calls,
            "crypto_counts": result.total_counts(),
            "fingerprints": result.fingerprints(),
            "keys_agree": result.keys_agree(),
            "probe_ok": result.probe_ok,
        });
        println!("{}", serde_json::to_string_pretty(&value)?);
        return Ok(result.is_success() && result.probe_ok);
    }

    println!("mode {}", result.mode);
    println!(
        "{:<22} {:>6} {:>6} {:>10}",
        "message", "ike", "+frame", "t (ms)"
    );
    for w in &result.trace {
        println!(
            "{:<22} {:>6} {:>6} {:>10.3}",
            w.label,
            w.bytes_on_wire,
            w.bytes_on_wire + FRAMING_OVERHEAD,
            w.timestamp_ns as f64 / 1e6
        );
    }
    let total: usize = result
        .trace
        .iter()
        .map(|w| w.bytes_on_wire + FRAMING_OVERHEAD)
        .sum();
    println!("{:<22} {:>13}", "TOTAL", total);
    for p in Phase::TIMED {
        if let Some(ms) = result.phase_ms(p) {
            println!("{:<9} {:>9.3} ms", p.label(), ms);
        }
    }
    let c = result.total_counts();
    println!("modexp {}, prf {}, prf+ {}", c.modexp, c.prf, c.prf_plus);
    for call in &result.kms_calls {
        println!("kms {:?}: {} keys", call.kind, call.count);
    }
    if let Some(f) = result.fingerprints() {
        println!("IKE SA keys {}", &f.ike[..16]);
        for (i, child) in f.children.iter().enumerate() {
            println!("Child SA {} keys {}", i + 1, &child[..16]);
        }
    }
    match &result.status {
        HandshakeStatus::Success => println!(
            "established; keys agree: {}, probe: {}",
            result.keys_agree(),
            result.probe_ok
        ),
        HandshakeStatus::Failed(e) => println!("failed: {e}"),
    }
    Ok(result.is_success() && result.probe_ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let outcome = match Cli::parse().command {
        Command::Bench(a) => bench(a),
        Command::DhCost(a) => dh_cost(a),
        Command::KmsServe(a) => kms_serve(a),
        Command::Handshake(a) => handshake(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
