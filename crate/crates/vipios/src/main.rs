use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use vipios::bench::{self, BenchSpec};
use vipios::client::Session;
use vipios::cluster::Cluster;
use vipios::config::{ClusterConfig, ConfigError};
use vipios::transport::{Network, TcpNet};
use vipios::{regress, script};

#[derive(Parser)]
#[command(
    name = "vipios",
    version,
    about = "Parallel I/O servers, benchmarks and regression suites"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured servers over TCP until shut down.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Run only these server ids (comma separated).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u32>>,
    },
    /// Run a benchmark spec on in-process clusters and write a CSV report.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use TCP between the in-process nodes instead of channels.
        #[arg(long)]
        tcp: bool,
    },
    /// Run the regression suites.
    Regress {
        #[arg(long)]
        config: PathBuf,
        /// Server counts for in-process clusters.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u32, 2, 4])]
        servers: Vec<u32>,
        /// Run against the already running cluster of the config instead.
        #[arg(long)]
        connect: bool,
        /// Run only these suites.
        #[arg(long, value_delimiter = ',')]
        suite: Vec<String>,
    },
    /// Print the layout of a file on a running cluster.
    Inspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        file: String,
    },
    /// Drain and stop a running cluster.
    Shutdown {
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute a command file.
    Script {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        file: PathBuf,
        /// Use the running cluster of the config instead of an in-process one.
        #[arg(long)]
        connect: bool,
    },
}

enum Outcome {
    Ok,
    Failed,
}

fn load(path: &Path) -> Result<ClusterConfig> {
    let cfg = ClusterConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn tcp_net(cfg: &ClusterConfig) -> Result<Arc<dyn Network>> {
    Ok(TcpNet::new(cfg.socket_addrs()?))
}

fn remote_session(cfg: ClusterConfig) -> Result<Session> {
    let net = tcp_net(&cfg)?;
    Ok(Session::open_session(net, Arc::new(cfg))?)
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.cmd {
        Cmd::Serve { config, only } => {
            let cfg = load(&config)?;
            let net = tcp_net(&cfg)?;
            let cluster = Cluster::start(cfg, net, only.as_deref())?;
            log::info!("serving {} server(s)", cluster.cfg.servers.len());
            cluster.wait();
        }
        Cmd::Bench {
            config,
            spec,
            out,
            tcp,
        } => {
            let cfg = load(&config)?;
            let text =
                fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec = BenchSpec::from_json(&text)?;
            let rows = bench::run(&cfg, &spec, tcp)?;
            let f =
                fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            bench::write_csv(&rows, f)?;
            for r in &rows {
                println!(
                    "{} clients, {} servers: mean {:.4}s, {} acks, {} datas",
                    r.clients, r.servers, r.mean, r.acks, r.datas
                );
            }
        }
        Cmd::Regress {
            config,
            servers,
            connect,
            suite,
        } => {
            let cfg = load(&config)?;
            let mut failed = false;
            let mut report = |label: String, results: Vec<regress::SuiteResult>| {
                for r in results {
                    println!("[{label}] {r}");
                    failed |= !r.passed;
                }
            };
            if connect {
                let net = tcp_net(&cfg)?;
                let cluster = Cluster::start(cfg, net, Some(&[]))?;
                report("remote".into(), regress::run(&cluster, &suite));
            } else {
                for k in servers {
                    if k == 0 || k as usize > cfg.servers.len() {
                        anyhow::bail!(ConfigError::Invalid(format!(
                            "config has no {k}-server subset"
                        )));
                    }
                    let cluster = Cluster::loopback(cfg.first(k as usize))?;
                    report(format!("{k} servers"), regress::run(&cluster, &suite));
                    cluster.shutdown()?;
                }
            }
            if failed {
                return Ok(Outcome::Failed);
            }
        }
        Cmd::Inspect { config, file } => {
            let s = remote_session(load(&config)?)?;
            let (id, layout, size) = s.inspect(&file)?;
            println!("file {file}: id {id}, size {size}");
            println!("stripe {} over {:?}", layout.stripe, layout.targets);
            for e in &layout.extents {
                println!(
                    "  [{}, {}) -> server {} disk {} at {}",
                    e.logical,
                    e.logical + e.len,
                    e.server,
                    e.disk,
                    e.physical
                );
            }
            if layout.fitted > 0 {
                println!("  striped tail from {}", layout.fitted);
            }
        }
        Cmd::Shutdown { config } => {
            let mut s = remote_session(load(&config)?)?;
            s.shutdown_servers()?;
        }
        Cmd::Script {
            config,
            file,
            connect,
        } => {
            let cfg = load(&config)?;
            let text =
                fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let cmds = script::parse(&text)?;
            let mut out = std::io::stdout().lock();
            if connect {
                let net = tcp_net(&cfg)?;
                script::Driver::new(net, Arc::new(cfg)).run(&cmds, &mut out)?;
            } else {
                let cluster = Cluster::loopback(cfg)?;
                script::Driver::new(cluster.net.clone(), cluster.cfg.clone())
                    .run(&cmds, &mut out)?;
                cluster.shutdown()?;
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some())
                || e.chain().any(|c| {
                    matches!(
                        c.downcast_ref(),
                        Some(vipios::cluster::ClusterError::Config(_))
                    )
                });
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
