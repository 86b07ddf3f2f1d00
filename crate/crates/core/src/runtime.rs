//! Distributed execution: one thread per vertex, synchronous rounds.
//!
//! A worker owns its pose and the measurements on its incident edges and
//! nothing else; it never sees the graph. Each round it broadcasts its pose
//! to its neighbors over channels, waits for every neighbor's message of the
//! same round, evaluates its controls with the same kernel as the reference
//! solver and reports a snapshot to the monitor. The monitor (which does see
//! the whole graph, for evaluation only) applies the stopping rule and tells
//! every worker to either integrate or stop. Neither the workers nor the
//! monitor reorder floating-point sums, so every round is bit-identical to
//! [`Solver`](crate::solver::Solver).

use std::io::Write;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::consistency::pairwise_average_rotation;
use crate::error::{Error, Result};
use crate::graph::{local_edges, LocalEdge, Pose, PoseGraph, RelativeMeasurement};
use crate::so3::{Mat3, Vec3};
use crate::solver::{
    evaluate_objective, integrate_pose, node_controls, Controls, HistoryEntry, SolveResult,
    SolverConfig, TranslationMode,
};

const WORKER_STACK: usize = 256 * 1024;

#[derive(Clone, Debug)]
pub struct RuntimeConfig {
    pub solver: SolverConfig,
    /// Longest wait for any single message before declaring a deadlock.
    pub timeout: Duration,
    pub record_messages: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            timeout: Duration::from_secs(30),
            record_messages: false,
        }
    }
}

/// Pose broadcast of one vertex for one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundMessage {
    pub sender: usize,
    pub round: usize,
    pub t: Vec3,
    pub r: Mat3,
}

/// One delivered message, as seen by its receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub messages: usize,
    pub rounds: usize,
    /// Messages between vertices that share no measurement.
    pub non_neighbor_messages: usize,
    pub min_per_round: usize,
    pub max_per_round: usize,
}

impl AuditReport {
    /// True iff no message crossed a non-edge and every round carried
    /// exactly one message per directed measurement.
    pub fn is_clean(&self, g: &PoseGraph) -> bool {
        self.non_neighbor_messages == 0
            && self.min_per_round == g.num_directed()
            && self.max_per_round == g.num_directed()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MessageLog {
    pub records: Vec<MessageRecord>,
}

impl MessageLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn audit(&self, g: &PoseGraph) -> AuditReport {
        let rounds = self.records.iter().map(|r| r.round + 1).max().unwrap_or(0);
        let mut per_round = vec![0usize; rounds];
        let mut report = AuditReport {
            messages: self.records.len(),
            rounds,
            ..Default::default()
        };
        for rec in &self.records {
            per_round[rec.round] += 1;
            if !g.has_edge(rec.sender, rec.receiver) {
                report.non_neighbor_messages += 1;
            }
        }
        report.min_per_round = per_round.iter().copied().min().unwrap_or(0);
        report.max_per_round = per_round.iter().copied().max().unwrap_or(0);
        report
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DistributedRun {
    pub result: SolveResult,
    /// Present when `record_messages` was set.
    pub log: Option<MessageLog>,
}

enum Command {
    Step,
    Stop,
}

struct Snapshot {
    id: usize,
    round: usize,
    pose: Pose,
    controls: Result<Controls>,
    received_from: Vec<usize>,
}

/// Everything one vertex owns. There is deliberately no handle to the graph.
struct NodeWorker {
    id: usize,
    edges: Vec<LocalEdge>,
    pose: Pose,
    inbox: Receiver<RoundMessage>,
    outbox: Vec<Sender<RoundMessage>>,
    monitor: Sender<Snapshot>,
    commands: Receiver<Command>,
    mode: TranslationMode,
    dt: f64,
    timeout: Duration,
}

impl NodeWorker {
    fn run(mut self) {
        let mut neighbor_poses = vec![Pose::identity(); self.edges.len()];
        let mut filled = vec![false; self.edges.len()];
        for round in 0.. {
            let msg = RoundMessage {
                sender: self.id,
                round,
                t: self.pose.t,
                r: self.pose.r,
            };
            for tx in &self.outbox {
                // a closed channel means the run is being torn down
                if tx.send(msg).is_err() {
                    return;
                }
            }

            filled.iter_mut().for_each(|f| *f = false);
            let mut received_from = Vec::with_capacity(self.edges.len());
            let controls = match self.collect(round, &mut neighbor_poses, &mut filled, &mut received_from) {
                Ok(()) => node_controls(self.id, &self.pose, &self.edges, &neighbor_poses, self.mode),
                Err(e) => Err(e),
            };
            let failed = controls.is_err();
            let step = controls.as_ref().ok().copied();
            let snap = Snapshot {
                id: self.id,
                round,
                pose: self.pose,
                controls,
                received_from,
            };
            if self.monitor.send(snap).is_err() || failed {
                return;
            }
            match self.commands.recv() {
                Ok(Command::Step) => {
                    self.pose = integrate_pose(&self.pose, &step.expect("checked above"), self.dt)
                }
                Ok(Command::Stop) | Err(_) => return,
            }
        }
    }

    /// Barrier: blocks until every neighbor's message for `round` arrived.
    fn collect(
        &self,
        round: usize,
        poses: &mut [Pose],
        filled: &mut [bool],
        received_from: &mut Vec<usize>,
    ) -> Result<()> {
        let start = Instant::now();
        for _ in 0..self.edges.len() {
            let msg = match self.inbox.recv_timeout(self.timeout) {
                Ok(m) => m,
                Err(_) => {
                    return Err(Error::Deadlock {
                        round,
                        waited_ms: start.elapsed().as_millis(),
                    })
                }
            };
            let slot = self.edges.binary_search_by_key(&msg.sender, |e| e.neighbor);
            match slot {
                Ok(k) if msg.round == round && !filled[k] => {
                    poses[k] = Pose::new(msg.t, msg.r);
                    filled[k] = true;
                    received_from.push(msg.sender);
                }
                _ => {
                    return Err(Error::MissingNeighborData {
                        vertex: self.id,
                        neighbor: msg.sender,
                    })
                }
            }
        }
        Ok(())
    }
}

fn check_inputs(g: &PoseGraph, init: &[Pose], config: &SolverConfig) -> Result<()> {
    config.validate()?;
    config.check_step_size(g)?;
    if init.len() != g.n() {
        return Err(Error::InvalidConfig(format!(
            "initialization has {} poses for a graph with {} vertices",
            init.len(),
            g.n()
        )));
    }
    Ok(())
}

pub fn run_distributed(g: &PoseGraph, init: Vec<Pose>, config: &RuntimeConfig) -> Result<DistributedRun> {
    run_distributed_with_observer(g, init, config, |_, _| {})
}

/// Runs the synchronous distributed protocol. `observer` sees the gathered
/// estimates of every round, starting with the initialization.
pub fn run_distributed_with_observer<F>(
    g: &PoseGraph,
    init: Vec<Pose>,
    config: &RuntimeConfig,
    mut observer: F,
) -> Result<DistributedRun>
where
    F: FnMut(usize, &[Pose]),
{
    check_inputs(g, &init, &config.solver)?;
    let n = g.n();
    let sc = &config.solver;

    let (inbox_tx, inbox_rx): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel::<RoundMessage>()).unzip();
    let (cmd_tx, cmd_rx): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel::<Command>()).unzip();
    let (snap_tx, snap_rx) = mpsc::channel::<Snapshot>();

    let workers: Vec<NodeWorker> = inbox_rx
        .into_iter()
        .zip(cmd_rx)
        .enumerate()
        .map(|(i, (inbox, commands))| {
            let edges = local_edges(g, i);
            let outbox = edges.iter().map(|e| inbox_tx[e.neighbor].clone()).collect();
            NodeWorker {
                id: i,
                edges,
                pose: init[i],
                inbox,
                outbox,
                monitor: snap_tx.clone(),
                commands,
                mode: sc.translation_mode,
                dt: sc.dt,
                timeout: config.timeout,
            }
        })
        .collect();
    // only workers may hold senders, so a finished worker set closes channels
    drop(inbox_tx);
    drop(snap_tx);

    thread::scope(|s| {
        for w in workers {
            thread::Builder::new()
                .name(format!("geod-node-{}", w.id))
                .stack_size(WORKER_STACK)
                .spawn_scoped(s, move || w.run())
                .expect("spawn worker thread");
        }
        let outcome = monitor(g, sc, config, &snap_rx, &cmd_tx, &mut observer);
        // releasing the command channels stops any worker still waiting
        drop(cmd_tx);
        outcome
    })
}

fn monitor<F>(
    g: &PoseGraph,
    sc: &SolverConfig,
    config: &RuntimeConfig,
    snaps: &Receiver<Snapshot>,
    commands: &[Sender<Command>],
    observer: &mut F,
) -> Result<DistributedRun>
where
    F: FnMut(usize, &[Pose]),
{
    let n = g.n();
    let mut log = config.record_messages.then(MessageLog::default);
    let mut history = Vec::new();
    let mut estimates = vec![Pose::identity(); n];
    let mut controls = vec![Controls::default(); n];
    let mut prev_geodesic = 0.0;

    for round in 0.. {
        let mut errors: Vec<(usize, Error)> = Vec::new();
        let mut received = vec![Vec::new(); n];
        let start = Instant::now();
        for _ in 0..n {
            let snap = match snaps.recv_timeout(config.timeout) {
                Ok(s) => s,
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                    // a worker error surfaces in preference to the stall it caused
                    if let Some((_, e)) = errors.into_iter().min_by_key(|(id, _)| *id) {
                        return Err(e);
                    }
                    return Err(Error::Deadlock {
                        round,
                        waited_ms: start.elapsed().as_millis(),
                    });
                }
            };
            debug_assert_eq!(snap.round, round);
            estimates[snap.id] = snap.pose;
            received[snap.id] = snap.received_from;
            match snap.controls {
                Ok(c) => controls[snap.id] = c,
                Err(e) => errors.push((snap.id, e)),
            }
        }
        if let Some((_, e)) = errors.into_iter().min_by_key(|(id, _)| *id) {
            return Err(e);
        }
        if let Some(log) = log.as_mut() {
            for (receiver, senders) in received.into_iter().enumerate() {
                log.records.extend(senders.into_iter().map(|sender| MessageRecord {
                    round,
                    sender,
                    receiver,
                }));
            }
        }

        let objective = evaluate_objective(&estimates, g)?;
        if sc.record_history {
            history.push(HistoryEntry {
                iter: round,
                geodesic: objective.geodesic,
                chordal: objective.chordal,
                max_control_norm: controls.iter().map(Controls::max_norm).fold(0.0, f64::max),
            });
        }
        observer(round, &estimates);

        let converged = if round == 0 {
            controls.iter().all(Controls::is_exactly_zero)
        } else {
            (objective.geodesic - prev_geodesic).abs() < sc.stop_tol
        };
        prev_geodesic = objective.geodesic;
        let done = converged || round >= sc.max_iters;
        let cmd = || if done { Command::Stop } else { Command::Step };
        for tx in commands {
            // a worker that already exited has nothing left to do
            let _ = tx.send(cmd());
        }
        if done {
            return Ok(DistributedRun {
                result: SolveResult {
                    estimates,
                    history,
                    iterations: round,
                    converged,
                    objective,
                },
                log,
            });
        }
    }
    unreachable!("the round loop only exits by returning")
}

/// Rotation message of the one-shot pairwise exchange.
#[derive(Clone, Copy, Debug)]
struct RotationMessage {
    sender: usize,
    r_sender_to_receiver: Mat3,
}

/// Distributed pairwise rotation enforcement: every vertex sends its raw
/// `R_ij` to each neighbor once and then averages each outgoing rotation with
/// the one received back. Equal, bit for bit, to
/// [`enforce_pairwise_rotations`](crate::consistency::enforce_pairwise_rotations).
pub fn one_shot_pairwise_round(g: &PoseGraph) -> Result<PoseGraph> {
    one_shot_pairwise_round_logged(g, Duration::from_secs(30)).map(|(g, _)| g)
}

pub fn one_shot_pairwise_round_logged(g: &PoseGraph, timeout: Duration) -> Result<(PoseGraph, MessageLog)> {
    let n = g.n();
    let (tx, rx): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel::<RotationMessage>()).unzip();
    type NodeOut = Result<(Vec<RelativeMeasurement>, Vec<MessageRecord>)>;

    let per_node: Vec<NodeOut> = thread::scope(|s| {
        let handles: Vec<_> = rx
            .into_iter()
            .enumerate()
            .map(|(i, inbox)| {
                let own: Vec<RelativeMeasurement> = g.outgoing(i).to_vec();
                let outbox: Vec<Sender<RotationMessage>> = own.iter().map(|m| tx[m.dst].clone()).collect();
                thread::Builder::new()
                    .stack_size(WORKER_STACK)
                    .spawn_scoped(s, move || -> NodeOut {
                        for (m, out) in own.iter().zip(&outbox) {
                            let _ = out.send(RotationMessage {
                                sender: i,
                                r_sender_to_receiver: m.r_rel,
                            });
                        }
                        drop(outbox);
                        let mut back = vec![None; own.len()];
                        let mut records = Vec::with_capacity(own.len());
                        for _ in 0..own.len() {
                            let msg = inbox.recv_timeout(timeout).map_err(|_| Error::Deadlock {
                                round: 0,
                                waited_ms: timeout.as_millis(),
                            })?;
                            let k = own
                                .binary_search_by_key(&msg.sender, |m| m.dst)
                                .map_err(|_| Error::MissingNeighborData {
                                    vertex: i,
                                    neighbor: msg.sender,
                                })?;
                            back[k] = Some(msg.r_sender_to_receiver);
                            records.push(MessageRecord {
                                round: 0,
                                sender: msg.sender,
                                receiver: i,
                            });
                        }
                        let averaged = own
                            .iter()
                            .zip(back)
                            .map(|(m, r_ji)| {
                                let r_ji = r_ji.ok_or(Error::MissingNeighborData {
                                    vertex: i,
                                    neighbor: m.dst,
                                })?;
                                let r = pairwise_average_rotation(&m.r_rel, &r_ji)
                                    .map_err(|e| e.with_edge(m.src, m.dst))?;
                                Ok(RelativeMeasurement { r_rel: r, ..*m })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Ok((averaged, records))
                    })
                    .expect("spawn worker thread")
            })
            .collect();
        drop(tx);
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });

    let mut measurements = Vec::with_capacity(g.num_directed());
    let mut log = MessageLog::default();
    for out in per_node {
        let (ms, recs) = out?;
        measurements.extend(ms);
        log.records.extend(recs);
    }
    Ok((PoseGraph::build(n, measurements)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::enforce_pairwise_rotations;
    use crate::so3::{exp_map, random_rotation};
    use crate::solver::Solver;

    fn noisy_pair() -> PoseGraph {
        let ms = vec![
            RelativeMeasurement::new(0, 1, Vec3::new(1.0, 0.1, 0.0), exp_map(&Vec3::new(0.1, 0.2, 0.0))),
            RelativeMeasurement::new(1, 0, Vec3::new(-0.9, 0.0, 0.2), exp_map(&Vec3::new(-0.05, -0.2, 0.1))),
        ];
        PoseGraph::build(2, ms).unwrap()
    }

    #[test]
    fn two_nodes_match_reference_bitwise() {
        let g = noisy_pair();
        let init = vec![Pose::identity(), Pose::new(Vec3::new(3.0, 0.0, 0.0), random_rotation(1))];
        let cfg = RuntimeConfig {
            record_messages: true,
            ..Default::default()
        };
        let mut ref_traj = Vec::new();
        let reference = Solver::new(&g, cfg.solver.clone())
            .unwrap()
            .solve_with_observer(init.clone(), |_, p| ref_traj.push(p.to_vec()))
            .unwrap();
        let mut dist_traj = Vec::new();
        let run = run_distributed_with_observer(&g, init, &cfg, |_, p| dist_traj.push(p.to_vec())).unwrap();
        assert_eq!(ref_traj, dist_traj);
        assert_eq!(run.result.estimates, reference.estimates);
        assert_eq!(run.result.iterations, reference.iterations);
        assert_eq!(run.result.converged, reference.converged);
        assert_eq!(run.result.history, reference.history);
        let audit = run.log.unwrap().audit(&g);
        assert!(audit.is_clean(&g));
        assert_eq!(audit.rounds, reference.iterations + 1);
    }

    #[test]
    fn truth_stops_at_round_zero() {
        let g = PoseGraph::build_symmetrized(
            2,
            vec![RelativeMeasurement::new(0, 1, Vec3::x(), Mat3::identity())],
        )
        .unwrap();
        let init = vec![Pose::identity(), Pose::new(Vec3::x(), Mat3::identity())];
        let run = run_distributed(&g, init, &RuntimeConfig::default()).unwrap();
        assert!(run.result.converged);
        assert_eq!(run.result.iterations, 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = noisy_pair();
        assert!(matches!(
            run_distributed(&g, vec![Pose::identity()], &RuntimeConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = RuntimeConfig {
            solver: SolverConfig { dt: 2.0, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(
            run_distributed(&g, vec![Pose::identity(); 2], &cfg),
            Err(Error::StepSizeUnstable { .. })
        ));
    }

    #[test]
    fn worker_error_propagates() {
        // relative rotation residual of exactly pi at the initialization
        let g = PoseGraph::build_symmetrized(
            2,
            vec![RelativeMeasurement::new(0, 1, Vec3::zeros(), Mat3::identity())],
        )
        .unwrap();
        let flip = Pose::new(Vec3::zeros(), exp_map(&Vec3::new(0.0, 0.0, std::f64::consts::PI)));
        let err = run_distributed(&g, vec![Pose::identity(), flip], &RuntimeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::AngleAtPi { edge: Some((0, 1)), .. }));
    }

    #[test]
    fn one_shot_matches_centralized() {
        let g = noisy_pair();
        let (dist, log) = one_shot_pairwise_round_logged(&g, Duration::from_secs(5)).unwrap();
        let central = enforce_pairwise_rotations(&g).unwrap();
        assert_eq!(dist.measurements(), central.measurements());
        assert_eq!(log.len(), g.num_directed());
        assert_eq!(log.audit(&g).non_neighbor_messages, 0);
    }

    #[test]
    fn jsonl_export() {
        let log = MessageLog {
            records: vec![MessageRecord { round: 0, sender: 1, receiver: 0 }],
        };
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"round\":0,\"sender\":1,\"receiver\":0}\n");
    }
}
