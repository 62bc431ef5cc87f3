use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use log::{debug, info};

use crate::error::{Error, Result};
use crate::field::FixedPointCodec;
use crate::learning::{evaluate, generate_dataset, partition_iid, Dataset, Split};
use crate::protocol::client::{keyed_rng, ClientPrivacy, DATA_STREAM};
use crate::protocol::{
    warmup_sensitivity, ClientState, ConvergenceTracker, IntermediateServerState, ParameterServerState, RoundMessage,
    RoundOutcome, RoundRecord, TrainingConfig, TrainingReport, TransportKind,
};
use crate::transport::{Role, SimTransport, TcpTransport, Transport};

/// The dataset every mechanism trains on for a given seed.
pub fn training_dataset(seed: u64, n_samples: usize) -> Result<Dataset> {
    generate_dataset(n_samples, &mut keyed_rng(seed, u32::MAX, DATA_STREAM, 0))
}

pub fn run_training(config: &TrainingConfig) -> Result<TrainingReport> {
    config.validate()?;
    let data = Arc::new(training_dataset(config.seed, config.n_samples)?);
    run_training_with_data(config, data)
}

pub fn run_training_with_data(config: &TrainingConfig, data: Arc<Dataset>) -> Result<TrainingReport> {
    match config.transport {
        TransportKind::Sim => run_simulated(config, data, &SimTransport::new(config.modulus)),
        TransportKind::Tcp => run_tcp(config, data),
    }
}

struct Setup {
    data: Arc<Dataset>,
    shards: Vec<Range<usize>>,
    privacy: Option<ClientPrivacy>,
    codec: FixedPointCodec,
}

impl Setup {
    fn new(config: &TrainingConfig, data: Arc<Dataset>) -> Result<Self> {
        config.validate()?;
        let shards = partition_iid(data.range(Split::Train), config.n_clients)?;
        let privacy = if config.mechanism.is_private() {
            let clip_norm = match config.clip_norm {
                Some(c) => c,
                None => warmup_sensitivity(&data, &shards, config.optimizer(), config.warmup_rounds)?,
            };
            info!("clip norm {clip_norm:.6}");
            Some(ClientPrivacy {
                clip_norm,
                epsilon_schedule: config.epsilon_schedule()?,
            })
        } else {
            None
        };
        Ok(Setup {
            data,
            shards,
            privacy,
            codec: FixedPointCodec::new(config.decimal_places, config.modulus)?,
        })
    }

    fn clients(&self, config: &TrainingConfig) -> Result<Vec<ClientState>> {
        self.shards
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                ClientState::new(
                    i as u32,
                    rows.clone(),
                    Arc::clone(&self.data),
                    config.mechanism,
                    config.m_servers,
                    self.privacy.clone(),
                    self.codec,
                    config.v_max,
                    config.seed,
                )
            })
            .collect()
    }

    fn servers(&self, config: &TrainingConfig) -> Result<Vec<IntermediateServerState>> {
        (0..config.servers_in_use())
            .map(|j| IntermediateServerState::new(j as u16, config.n_clients))
            .collect()
    }

    fn parameter_server(&self, config: &TrainingConfig) -> Result<ParameterServerState> {
        ParameterServerState::new(
            config.mechanism,
            config.n_clients,
            config.servers_in_use(),
            config.optimizer(),
            self.codec,
            config.v_max,
            self.privacy.clone(),
            config.delta_prime,
        )
    }
}

/// Per-round side records kept outside every role: the number of values
/// each client sent and, when auditing, what it released.
#[derive(Default)]
struct Audit {
    keep_releases: bool,
    rounds: BTreeMap<u64, BTreeMap<u32, (usize, Option<Vec<f64>>)>>,
}

impl Audit {
    fn note(&mut self, client: &ClientState, round: u64, values_sent: usize) {
        let release = if self.keep_releases {
            client.last_release().map(|r| r.values().to_vec())
        } else {
            None
        };
        self.rounds.entry(round).or_default().insert(client.client_id(), (values_sent, release));
    }

    /// Values per client and the audited plaintext sum for `round`.
    fn take(&mut self, round: u64) -> (usize, Option<Vec<f64>>) {
        let entries = self.rounds.remove(&round).unwrap_or_default();
        let per_client = entries.values().map(|(v, _)| *v).max().unwrap_or(0);
        let mut sum: Option<Vec<f64>> = None;
        if self.keep_releases {
            for (_, release) in entries.into_values() {
                let values = release.unwrap_or_default();
                match &mut sum {
                    None => sum = Some(values),
                    Some(acc) => acc.iter_mut().zip(values).for_each(|(a, v)| *a += v),
                }
            }
        }
        (per_client, sum)
    }
}

fn client_step(
    client: &mut ClientState,
    msg: &RoundMessage,
    audit: &Mutex<Audit>,
    transport: &dyn Transport,
) -> Result<()> {
    let before = client.values_sent();
    let out = client.handle(msg)?;
    if let RoundMessage::ModelBroadcast { round_id, .. } = msg {
        audit
            .lock()
            .unwrap()
            .note(client, *round_id, (client.values_sent() - before) as usize);
    }
    for (to, m) in &out {
        transport.send(client.role(), *to, m)?;
    }
    Ok(())
}

fn server_step(server: &mut IntermediateServerState, msg: RoundMessage, transport: &dyn Transport) -> Result<()> {
    for (to, m) in server.handle(msg)? {
        transport.send(server.role(), to, &m)?;
    }
    Ok(())
}

struct Recorder<'a> {
    config: &'a TrainingConfig,
    data: &'a Dataset,
    tracker: ConvergenceTracker,
    report: TrainingReport,
    started: Instant,
    round_started: Instant,
}

impl<'a> Recorder<'a> {
    fn new(config: &'a TrainingConfig, data: &'a Dataset, setup: &Setup) -> Self {
        let mut report = TrainingReport::empty(config);
        report.clip_norm = setup.privacy.as_ref().map(|p| p.clip_norm);
        Recorder {
            config,
            data,
            tracker: ConvergenceTracker::new(config.rel_tol, config.patience),
            report,
            started: Instant::now(),
            round_started: Instant::now(),
        }
    }

    fn broadcast_sent(&mut self) {
        self.round_started = Instant::now();
    }

    /// Records a finished round; returns true when training should stop.
    fn record(&mut self, outcome: RoundOutcome, audit: &Mutex<Audit>) -> Result<bool> {
        let (values, reference) = audit.lock().unwrap().take(outcome.round);
        let train = evaluate(&outcome.theta, self.data, Split::Train)?;
        let val = evaluate(&outcome.theta, self.data, Split::Validation)?;
        let test = evaluate(&outcome.theta, self.data, Split::Test)?;
        self.report.rounds.push(RoundRecord {
            round: outcome.round,
            train_loss: train.mse,
            val_loss: val.mse,
            test_loss: test.mse,
            test_r2: test.r_squared,
            uplink_values_per_client: values,
            wall_ms: self.round_started.elapsed().as_secs_f64() * 1e3,
            aggregate: outcome.aggregate,
            reference_aggregate: reference,
        });
        self.report.rounds_run = outcome.round + 1;
        self.report.theta = outcome.theta.to_vec();
        self.report.final_train_loss = train.mse;
        self.report.final_val_loss = val.mse;
        self.report.final_test_loss = test.mse;
        self.report.final_test_r2 = test.r_squared;
        let converged = self.tracker.observe(outcome.round, val.mse);
        self.report.converged = converged;
        self.report.rounds_to_convergence = self.tracker.rounds_to_convergence();
        debug!(
            "round {} val {:.3e} test {:.3e} r2 {:.6}",
            outcome.round, val.mse, test.mse, test.r_squared
        );
        if outcome.round % 500 == 499 {
            info!("{} round {}: test loss {:.3e}", self.config.mechanism, outcome.round + 1, test.mse);
        }
        Ok(converged || outcome.round + 1 >= self.config.max_rounds)
    }

    fn finish(mut self, ps: &ParameterServerState, clients: &[ClientState]) -> Result<TrainingReport> {
        self.report.upload_counts = clients.iter().map(ClientState::uploads_sent).collect();
        self.report.uplink_values_per_client = match (clients.first(), self.report.rounds_run) {
            (Some(c), r) if r > 0 => (c.values_sent() / r) as usize,
            _ => 0,
        };
        self.report.privacy = ps.privacy_summary()?;
        self.report.wall_ms = self.started.elapsed().as_secs_f64() * 1e3;
        Ok(self.report)
    }

    fn abort(mut self, cause: Error) -> Error {
        self.report.wall_ms = self.started.elapsed().as_secs_f64() * 1e3;
        Error::Aborted {
            report: Box::new(self.report),
            cause: Box::new(cause),
        }
    }
}

fn broadcast(ps: &ParameterServerState, n_clients: usize, transport: &dyn Transport) -> Result<()> {
    let msg = ps.broadcast();
    for c in 0..n_clients as u32 {
        transport.send(Role::ParameterServer, Role::Client(c), &msg)?;
    }
    Ok(())
}

fn finish_all(ps: &ParameterServerState, n_clients: usize, n_servers: usize, transport: &dyn Transport) -> Result<()> {
    let ack = ps.finish();
    for c in 0..n_clients as u32 {
        transport.send(Role::ParameterServer, Role::Client(c), &ack)?;
    }
    for j in 0..n_servers as u16 {
        transport.send(Role::ParameterServer, Role::Intermediate(j), &ack)?;
    }
    Ok(())
}

/// Runs every role in this thread over `transport`, delivering messages in
/// a fixed order. Install taps or drop filters on `transport` beforehand.
///
/// A round that can make no further progress fails immediately with
/// [`Error::IncompleteRound`]; there is no timeout to wait out.
pub fn run_simulated(config: &TrainingConfig, data: Arc<Dataset>, transport: &SimTransport) -> Result<TrainingReport> {
    let setup = Setup::new(config, data)?;
    let mut clients = setup.clients(config)?;
    let mut servers = setup.servers(config)?;
    let mut ps = setup.parameter_server(config)?;
    let audit = Mutex::new(Audit {
        keep_releases: config.audit,
        ..Default::default()
    });
    transport.register(Role::ParameterServer);
    for c in &clients {
        transport.register(c.role());
    }
    for s in &servers {
        transport.register(s.role());
    }
    let mut rec = Recorder::new(config, &setup.data, &setup);

    let outcome = (|| -> Result<()> {
        broadcast(&ps, clients.len(), transport)?;
        rec.broadcast_sent();
        let mut finished = false;
        loop {
            let mut progressed = false;
            for c in clients.iter_mut() {
                while let Some(env) = transport.try_receive(c.role())? {
                    progressed = true;
                    client_step(c, &env.msg, &audit, transport)?;
                }
            }
            for s in servers.iter_mut() {
                while let Some(env) = transport.try_receive(s.role())? {
                    progressed = true;
                    server_step(s, env.msg, transport)?;
                }
            }
            if finished {
                return Ok(());
            }
            while let Some(env) = transport.try_receive(Role::ParameterServer)? {
                progressed = true;
                if let Some(out) = ps.accept(env.msg)? {
                    if rec.record(out, &audit)? {
                        finish_all(&ps, clients.len(), servers.len(), transport)?;
                        finished = true;
                    } else {
                        broadcast(&ps, clients.len(), transport)?;
                        rec.broadcast_sent();
                    }
                }
            }
            if !progressed {
                let mut detail = ps.missing_inputs();
                for s in &servers {
                    let missing = s.missing_clients();
                    if s.round() == ps.round() && missing.len() < config.n_clients {
                        detail.push_str(&format!("; server {} waiting for clients {missing:?}", s.server_index()));
                    }
                }
                return Err(Error::IncompleteRound {
                    round: ps.round(),
                    detail,
                });
            }
        }
    })();
    match outcome {
        Ok(()) => rec.finish(&ps, &clients),
        Err(e) => Err(rec.abort(e)),
    }
}

/// Runs every role on its own thread, talking over loopback TCP.
pub fn run_tcp(config: &TrainingConfig, data: Arc<Dataset>) -> Result<TrainingReport> {
    let setup = Setup::new(config, data)?;
    let clients = setup.clients(config)?;
    let servers = setup.servers(config)?;
    let mut ps = setup.parameter_server(config)?;
    let mut roles = vec![Role::ParameterServer];
    roles.extend(clients.iter().map(ClientState::role));
    roles.extend(servers.iter().map(IntermediateServerState::role));
    let transport = TcpTransport::loopback(&roles, config.modulus)?.with_timeout(config.tcp_timeout);
    let audit = Mutex::new(Audit {
        keep_releases: config.audit,
        ..Default::default()
    });
    let n_clients = clients.len();
    let n_servers = servers.len();
    let mut rec = Recorder::new(config, &setup.data, &setup);

    let (ps_result, client_results, server_results) = std::thread::scope(|scope| {
        let t = &transport;
        let audit = &audit;
        let client_handles: Vec<_> = clients
            .into_iter()
            .map(|mut c| {
                scope.spawn(move || -> Result<ClientState> {
                    while !c.is_finished() {
                        let env = t.receive(c.role(), None)?;
                        client_step(&mut c, &env.msg, audit, t)?;
                    }
                    Ok(c)
                })
            })
            .collect();
        let server_handles: Vec<_> = servers
            .into_iter()
            .map(|mut s| {
                scope.spawn(move || -> Result<()> {
                    while !s.is_finished() {
                        let env = t.receive(s.role(), None)?;
                        server_step(&mut s, env.msg, t)?;
                    }
                    Ok(())
                })
            })
            .collect();

        let ps_result = (|| -> Result<()> {
            broadcast(&ps, n_clients, t)?;
            rec.broadcast_sent();
            loop {
                let env = t.receive(Role::ParameterServer, None).map_err(|e| match e {
                    Error::Timeout => Error::IncompleteRound {
                        round: ps.round(),
                        detail: format!("timed out {}", ps.missing_inputs()),
                    },
                    other => other,
                })?;
                if let Some(out) = ps.accept(env.msg)? {
                    if rec.record(out, audit)? {
                        return Ok(());
                    }
                    broadcast(&ps, n_clients, t)?;
                    rec.broadcast_sent();
                }
            }
        })();
        // release the other roles whether or not the run succeeded
        let _ = finish_all(&ps, n_clients, n_servers, t);
        let client_results: Vec<Result<ClientState>> = client_handles.into_iter().map(|h| h.join().unwrap()).collect();
        let server_results: Vec<Result<()>> = server_handles.into_iter().map(|h| h.join().unwrap()).collect();
        (ps_result, client_results, server_results)
    });

    let mut role_error = None;
    let mut finished_clients = Vec::with_capacity(n_clients);
    for r in client_results {
        match r {
            Ok(c) => finished_clients.push(c),
            Err(e) => role_error = role_error.or(Some(e)),
        }
    }
    for r in server_results {
        if let Err(e) = r {
            role_error = role_error.or(Some(e));
        }
    }
    match (ps_result, role_error) {
        (Ok(()), None) => rec.finish(&ps, &finished_clients),
        (Err(e), None) | (Ok(()), Some(e)) => Err(rec.abort(e)),
        // a failing client or server usually explains why the parameter server stalled
        (Err(ps_err), Some(e)) => Err(rec.abort(if matches!(ps_err, Error::IncompleteRound { .. }) { e } else { ps_err })),
    }
}

