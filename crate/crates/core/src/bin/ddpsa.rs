use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddpsa::harness::{self, SweepAxis};
use ddpsa::privacy::AllocationStrategy;
use ddpsa::protocol::{training_dataset, MechanismKind, TrainingConfig, TransportKind};
use ddpsa::{Error, Result};

#[derive(Parser)]
#[command(name = "ddpsa", version, about = "Differentially private federated learning with secret-shared aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one mechanism, writing rounds.csv and summary.json.
    Run {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "no_private", value_parser = parse_mechanism)]
        mechanism: MechanismKind,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep epsilon or the client count across mechanisms, writing sweep.csv.
    Sweep {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Axis values; defaults to 0.1..0.6 for epsilon and 2..6 for clients.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', value_parser = parse_mechanism,
              default_value = "no_private,ldp,mpc,ddp_sa")]
        mechanisms: Vec<MechanismKind>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Basic and advanced composition totals, optionally with an adaptive schedule.
    Accountant {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long)]
        rounds: u64,
        #[arg(long, default_value_t = 1e-4)]
        delta_prime: f64,
        /// Geometric decay factor; prints the per-round schedule.
        #[arg(long)]
        alpha: Option<f64>,
        /// Budget the schedule spreads; defaults to epsilon * rounds.
        #[arg(long)]
        total_budget: Option<f64>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-round byte counts under 4-byte accounting and on the wire.
    CostModel {
        #[arg(long, default_value_t = 3)]
        d: u64,
        #[arg(long, default_value_t = 3)]
        m: u64,
        #[arg(long, default_value_t = 3)]
        n: u64,
    },
    /// Write the synthetic dataset for a seed as CSV.
    GenData {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 3)]
    clients: usize,
    /// Intermediate servers; only meaningful for mpc and ddp_sa.
    #[arg(long)]
    servers: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    delta_prime: f64,
    #[arg(long, default_value_t = 10)]
    decimal_places: u32,
    #[arg(long, default_value_t = 1e6)]
    v_max: f64,
    #[arg(long, default_value_t = 3000)]
    max_rounds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
    #[arg(long, default_value_t = 50)]
    patience: u64,
    #[arg(long, default_value_t = 50)]
    warmup_rounds: usize,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_enum, default_value = "uniform")]
    allocation: AllocationArg,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "sim")]
    transport: TransportArg,
    /// Receive timeout for the TCP transport.
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
    /// Write zero wall times to rounds.csv so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Epsilon,
    Clients,
}

#[derive(Clone, Copy, ValueEnum)]
enum AllocationArg {
    Uniform,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Sim,
    Tcp,
}

fn parse_mechanism(s: &str) -> std::result::Result<MechanismKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl TrainArgs {
    fn config(&self, mechanism: MechanismKind) -> Result<TrainingConfig> {
        if let Some(m) = self.servers {
            if !mechanism.uses_sharing() {
                return Err(Error::Usage(format!(
                    "--servers {m} given, but {mechanism} uploads directly to the parameter server"
                )));
            }
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Usage("--timeout-secs must be positive".into()));
        }
        let config = TrainingConfig {
            mechanism,
            n_clients: self.clients,
            m_servers: self.servers.unwrap_or(3),
            epsilon: self.epsilon,
            delta_prime: self.delta_prime,
            decimal_places: self.decimal_places,
            v_max: self.v_max,
            max_rounds: self.max_rounds,
            seed: self.seed,
            n_samples: self.samples,
            rel_tol: self.rel_tol,
            patience: self.patience,
            warmup_rounds: self.warmup_rounds,
            clip_norm: self.clip_norm,
            learning_rate: self.learning_rate,
            allocation: match self.allocation {
                AllocationArg::Uniform => AllocationStrategy::Uniform,
                AllocationArg::Adaptive => AllocationStrategy::Adaptive { alpha: self.alpha },
            },
            transport: match self.transport {
                TransportArg::Sim => TransportKind::Sim,
                TransportArg::Tcp => TransportKind::Tcp,
            },
            tcp_timeout: Duration::from_secs_f64(self.timeout_secs),
            ..TrainingConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    fn sweep_base(&self) -> Result<TrainingConfig> {
        let mechanism = if self.servers.is_some() {
            MechanismKind::DdpSa
        } else {
            MechanismKind::NoPrivate
        };
        let mut c = self.config(mechanism)?;
        c.m_servers = self.servers.unwrap_or(3);
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    match cli.command {
        Command::Run {
            train,
            mechanism,
            repeats,
            out,
        } => {
            let config = train.config(mechanism)?;
            let s = harness::cmd_run(&config, repeats, &out, !train.no_timing)?;
            let mut w = stdout.lock();
            writeln!(w, "mechanism                 {}", mechanism)?;
            writeln!(w, "runs                      {}", s.repeats)?;
            writeln!(w, "mean test loss            {:.6e}", s.mean_test_loss)?;
            writeln!(w, "mean test R2              {:.6}", s.mean_test_r2)?;
            writeln!(w, "mean rounds               {:.1}", s.mean_rounds_run)?;
            writeln!(w, "uplink_values_per_client  {}", s.uplink_values_per_client)?;
            if let Some(p) = &s.privacy {
                writeln!(w, "epsilon total (basic)     {:.4}", p.basic.epsilon)?;
                writeln!(w, "epsilon total (advanced)  {:.4}", p.advanced.epsilon)?;
            }
            writeln!(w, "wrote {}", out.display())?;
        }
        Command::Sweep {
            train,
            axis,
            values,
            mechanisms,
            repeats,
            out,
        } => {
            let axis = match axis {
                AxisArg::Epsilon => SweepAxis::Epsilon,
                AxisArg::Clients => SweepAxis::Clients,
            };
            if train.servers.is_some() && mechanisms.iter().any(|m| !m.uses_sharing()) {
                return Err(Error::Usage("--servers given with a plaintext mechanism in --mechanisms".into()));
            }
            let values = if values.is_empty() { axis.default_values() } else { values };
            let base = train.sweep_base()?;
            let rows = harness::cmd_sweep(&base, axis, &values, &mechanisms, repeats, &out)?;
            harness::write_csv_rows(&rows, stdout.lock())?;
        }
        Command::Accountant {
            epsilon,
            delta,
            rounds,
            delta_prime,
            alpha,
            total_budget,
            out,
        } => {
            let report = harness::cmd_accountant(epsilon, delta, rounds, delta_prime, alpha, total_budget)?;
            let mut buf = Vec::new();
            harness::write_csv_rows(std::slice::from_ref(&report.totals), &mut buf)?;
            if let Some(schedule) = &report.schedule {
                buf.push(b'\n');
                harness::write_csv_rows(schedule, &mut buf)?;
            }
            match out {
                Some(path) => std::fs::write(path, buf)?,
                None => stdout.lock().write_all(&buf)?,
            }
        }
        Command::CostModel { d, m, n } => {
            harness::write_csv_rows(&harness::cost_model(d, m, n)?, stdout.lock())?;
        }
        Command::GenData { samples, seed, out } => {
            let data = training_dataset(seed, samples)?;
            match out {
                Some(path) => data.write_csv(std::fs::File::create(path)?)?,
                None => data.write_csv(stdout.lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DDPSA_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.root() {
                Error::Usage(_) | Error::InvalidParameter(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
