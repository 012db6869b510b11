use std::fs;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use privloc::analysis::{
    self, BaselineDistinguisher, BenchConfig, GameConfig,
};
use privloc::backend::BackendService;
use privloc::crypto::KeySet;
use privloc::error::{Error, Result};
use privloc::gateway::{
    setup_keys, BackendHandle, Gateway, GatewayConfig, GatewayServer, LogLevel, Routing,
    TcpBackend, TcpNotifySink,
};
use privloc::sim;
use privloc::{CipherOptions, OpeMode, SystemParams};

#[derive(Parser)]
#[command(name = "privloc", about = "Privacy-preserving geofencing gateway, backends and analysis tools", version)]
struct Cli {
    /// JSON config file (env: PRIVLOC_CONFIG). Flags override it.
    #[arg(long, global = true, env = "PRIVLOC_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for workload/simulation randomness. Never used for keys.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Directory for report files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "info")]
    log_level: CliLogLevel,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliLogLevel {
    Debug,
    Info,
}

impl From<CliLogLevel> for LogLevel {
    fn from(l: CliLogLevel) -> LogLevel {
        match l {
            CliLogLevel::Debug => LogLevel::Debug,
            CliLogLevel::Info => LogLevel::Info,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate three master keys and write them to a key file.
    Keygen {
        #[arg(long, default_value_t = 128)]
        lambda: u32,
        #[arg(long, default_value = "keys.hex", env = "PRIVLOC_KEYS")]
        out: PathBuf,
    },
    /// Run the trusted gateway service.
    Gateway {
        #[arg(long, env = "PRIVLOC_PORT")]
        port: Option<u16>,
        #[arg(long, env = "PRIVLOC_KEYS")]
        keys: Option<PathBuf>,
    },
    /// Run one untrusted backend service.
    Backend {
        #[arg(long, env = "PRIVLOC_PORT")]
        port: Option<u16>,
        /// Width of one encrypted tile slot (ope_range, or tile_len when
        /// OPE is disabled at the gateway).
        #[arg(long)]
        slot_width: Option<u64>,
        /// Directory for the persistence log.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Generate a mixed publish/subscribe workload file (JSON lines).
    Simulate {
        #[arg(long, default_value_t = 100)]
        clients: usize,
        #[arg(long, default_value_t = 10000)]
        events: usize,
        /// reports:subscriptions, e.g. 19:1.
        #[arg(long, default_value = "19:1", value_parser = parse_ratio)]
        ratio: (u64, u64),
        #[arg(long, default_value = "workload.jsonl")]
        out: PathBuf,
    },
    /// Closed-loop throughput/latency sweep; writes CSV and JSON reports.
    Bench(BenchArgs),
    /// Compromised-backend distinguisher game.
    PrivGame {
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        /// Backend index the adversary compromises.
        #[arg(long, default_value_t = 0)]
        compromised: usize,
        /// Force the tile permutation to identity (power check).
        #[arg(long, default_value_t = false)]
        cripple_prp: bool,
    },
    /// Subscription splitting blow-up statistics.
    Blowup {
        #[arg(long, default_value_t = 10000)]
        count: usize,
        /// Subscription side as a fraction of tile_len.
        #[arg(long, default_value_t = 0.5)]
        side_ratio: f64,
    },
    /// Crossing-decision fidelity versus the plaintext oracle.
    Fidelity {
        #[arg(long, value_enum, default_value = "affine")]
        ope_mode: CliOpeMode,
        #[arg(long, default_value_t = 200)]
        nodes: usize,
        #[arg(long, default_value_t = 25)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        subscriptions: usize,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated client counts, e.g. 1,2,4,8.
    #[arg(long, default_value = "1,2,4,8,16,32,64,128,256", value_delimiter = ',')]
    clients: Vec<usize>,
    #[arg(long, default_value = "19:1", value_parser = parse_ratio)]
    ratio: (u64, u64),
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Measured seconds per repetition.
    #[arg(long, default_value_t = 1.0)]
    secs: f64,
    /// Disable the whole encryption pipeline (pass-through baseline).
    #[arg(long, default_value_t = false)]
    null_transform: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliOpeMode {
    Affine,
    Piecewise,
}

fn parse_ratio(s: &str) -> std::result::Result<(u64, u64), String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B")?;
    let a: u64 = a.parse().map_err(|_| "bad ratio numerator")?;
    let b: u64 = b.parse().map_err(|_| "bad ratio denominator")?;
    if a == 0 {
        return Err("report share must be positive".into());
    }
    Ok((a, b))
}

/// JSON config file. Every field is optional; flags win over the file.
#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    params: Option<SystemParams>,
    /// Exactly three backend addresses for the gateway.
    backends: Option<[String; 3]>,
    key_file: Option<PathBuf>,
    token: Option<String>,
    port: Option<u16>,
    routing: Option<Routing>,
    max_sub_side: Option<u64>,
    flush_timeout_ms: Option<u64>,
    cipher: Option<CipherOptions>,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let raw = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {}", p.display(), e)))?;
            serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {}", p.display(), e)))
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = load_config(&cli.config)?;
    let params = file.params.clone().unwrap_or_default();
    params.validate()?;
    let opts = file.cipher.unwrap_or_default();
    fs::create_dir_all(&cli.out_dir)?;

    match cli.cmd {
        Cmd::Keygen { lambda, out } => {
            let mut p = params.clone();
            p.lambda = lambda;
            // Key material always comes from the OS, never from --seed.
            setup_keys(&p, &out)?;
            println!("wrote 3 keys ({} bits each) to {}", lambda, out.display());
        }

        Cmd::Gateway { port, keys } => {
            let key_path = keys
                .or(file.key_file)
                .ok_or_else(|| Error::Config("key_file: missing (flag --keys or config)".into()))?;
            let keys = KeySet::load(&key_path)?;
            let addrs = file
                .backends
                .ok_or_else(|| Error::Config("backends: exactly 3 addresses required".into()))?;
            let handles: [Arc<dyn BackendHandle>; 3] = [
                Arc::new(TcpBackend::connect(addrs[0].clone(), file.token.clone())),
                Arc::new(TcpBackend::connect(addrs[1].clone(), file.token.clone())),
                Arc::new(TcpBackend::connect(addrs[2].clone(), file.token.clone())),
            ];
            let mut config = GatewayConfig::default_for(&params);
            if let Some(r) = file.routing {
                config.routing = r;
            }
            if let Some(s) = file.max_sub_side {
                config.max_sub_side = s;
            }
            if let Some(ms) = file.flush_timeout_ms {
                config.flush_timeout = Some(Duration::from_millis(ms));
            }
            let gateway = Arc::new(Gateway::new(
                params,
                config,
                keys,
                opts,
                handles,
                Some(Arc::new(TcpNotifySink)),
                None,
            )?);
            let port = port.or(file.port).unwrap_or(7600);
            let listener = TcpListener::bind(("0.0.0.0", port))?;
            eprintln!("gateway listening on port {}", port);
            let server = GatewayServer::new(gateway, file.token, cli.log_level.into());
            install_shutdown({
                let server = Arc::clone(&server);
                move || server.stop()
            })?;
            server.serve(listener)?;
        }

        Cmd::Backend { port, slot_width, data_dir } => {
            let width = slot_width.unwrap_or(params.ope_range);
            let service = BackendService::new(width, file.token, data_dir)?;
            let port = port.or(file.port).unwrap_or(7700);
            let listener = TcpListener::bind(("0.0.0.0", port))?;
            eprintln!("backend listening on port {} (slot width {})", port, width);
            install_shutdown({
                let service = Arc::clone(&service);
                move || service.stop()
            })?;
            service.serve(listener)?;
        }

        Cmd::Simulate { clients, events, ratio, out } => {
            let workload =
                sim::gen_mixed_workload(clients, events, ratio, params.tile_len / 2, cli.seed, &params);
            let mut f = fs::File::create(&out)?;
            for ev in &workload {
                serde_json::to_writer(&mut f, ev)?;
                f.write_all(b"\n")?;
            }
            println!("wrote {} events to {}", workload.len(), out.display());
        }

        Cmd::Bench(args) => {
            let cfg = BenchConfig {
                params,
                opts: if args.null_transform { CipherOptions::IDENTITY } else { opts },
                clients: args.clients,
                ratio: args.ratio,
                repetitions: args.reps,
                duration: Duration::from_secs_f64(args.secs),
                pre_subscriptions: 200,
                seed: cli.seed,
            };
            let points = analysis::run_bench(&cfg)?;
            let csv_path = cli.out_dir.join("bench.csv");
            let mut csv = String::from(
                "clients,throughput_ops_per_s,throughput_ci,latency_mean_us,latency_ci_us,latency_p50_us,latency_p95_us,latency_p99_us,repetitions\n",
            );
            for p in &points {
                csv.push_str(&format!(
                    "{},{:.1},{:.1},{:.2},{:.2},{:.2},{:.2},{:.2},{}\n",
                    p.clients,
                    p.throughput_ops_per_s,
                    p.throughput_ci,
                    p.latency_mean_us,
                    p.latency_ci_us,
                    p.latency_p50_us,
                    p.latency_p95_us,
                    p.latency_p99_us,
                    p.repetitions
                ));
            }
            fs::write(&csv_path, &csv)?;
            fs::write(cli.out_dir.join("bench.json"), serde_json::to_string_pretty(&points)?)?;
            print!("{}", csv);
            println!("reports: {} and bench.json", csv_path.display());
        }

        Cmd::PrivGame { trials, compromised, cripple_prp } => {
            let mut cfg = GameConfig::quick(trials, cli.seed);
            if file.params.is_some() {
                cfg.params = params;
            }
            cfg.compromised = Some(compromised);
            if cripple_prp {
                cfg.opts.prp = false;
            }
            let est = analysis::run_priv_game(&cfg, &BaselineDistinguisher)?;
            let report = serde_json::json!({
                "trials": est.trials,
                "advantage": est.advantage,
                "ci_low": est.ci_low,
                "ci_high": est.ci_high,
                "crippled_prp": cripple_prp,
            });
            fs::write(cli.out_dir.join("priv_game.json"), serde_json::to_string_pretty(&report)?)?;
            println!("{}", report);
        }

        Cmd::Blowup { count, side_ratio } => {
            if !(0.0..=1.0).contains(&side_ratio) {
                return Err(Error::Config("side_ratio: must be in [0, 1]".into()));
            }
            let side = ((params.tile_len as f64) * side_ratio).round() as u64;
            let subs = sim::gen_subscriptions(count, side.max(1), cli.seed, &params);
            let stats = analysis::blowup_stats(&subs, &params)?;
            fs::write(cli.out_dir.join("blowup.json"), serde_json::to_string_pretty(&stats)?)?;
            println!(
                "subscriptions={} per-backend={:.4?} total={:.4}",
                stats.subscriptions, stats.mean_parts_per_backend, stats.mean_total
            );
        }

        Cmd::Fidelity { ope_mode, nodes, steps, subscriptions } => {
            let mut p = params.clone();
            p.ope_mode = match ope_mode {
                CliOpeMode::Affine => OpeMode::Affine,
                CliOpeMode::Piecewise => OpeMode::Piecewise,
            };
            let movements: Vec<_> = (0..nodes)
                .flat_map(|i| sim::gen_path(&format!("n{}", i), steps, cli.seed ^ i as u64, &p))
                .collect();
            let subs = sim::gen_subscriptions(subscriptions, p.tile_len / 2, cli.seed ^ 0xF1, &p);
            let report = analysis::fidelity_report(&movements, &subs, p, opts, cli.seed)?;
            fs::write(cli.out_dir.join("fidelity.json"), serde_json::to_string_pretty(&report)?)?;
            println!(
                "checks={} fp={} fn={} fp_rate={:.2e} fn_rate={:.2e} ci={:.2e}",
                report.checks,
                report.false_positives,
                report.false_negatives,
                report.fp_rate,
                report.fn_rate,
                report.mismatch_ci
            );
        }
    }
    Ok(())
}

/// Best-effort SIGINT/SIGTERM hook without pulling in a signal crate: a
/// plain handler flips a flag that a watcher thread polls.
fn install_shutdown<F: Fn() + Send + 'static>(stop: F) -> Result<()> {
    static REQUESTED: AtomicBool = AtomicBool::new(false);
    extern "C" fn on_signal(_: i32) {
        REQUESTED.store(true, Ordering::SeqCst);
    }
    unsafe {
        libc_signal(2, on_signal as *const () as usize); // SIGINT
        libc_signal(15, on_signal as *const () as usize); // SIGTERM
    }
    std::thread::spawn(move || loop {
        if REQUESTED.load(Ordering::SeqCst) {
            stop();
            return;
        }
        std::thread::sleep(Duration::from_millis(50));
    });
    Ok(())
}

unsafe fn libc_signal(signum: i32, handler: usize) {
    extern "C" {
        fn signal(signum: i32, handler: usize) -> usize;
    }
    signal(signum, handler);
}
