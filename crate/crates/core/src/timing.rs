//! Simulated wall clock for one training schedule under two client protocols.
//!
//! * compute-and-wait: a client trains the generic model, then the
//!   personalized model, and only then uploads; it idles until the next
//!   aggregated model arrives.
//! * wait-free: the client uploads right after generic training and trains the
//!   personalized model while the upload, aggregation and broadcast are in
//!   flight. It starts the next round once both the new model has arrived and
//!   its personalized training has finished.
//!
//! The server aggregates once every participant's upload has landed, so each
//! round is bound by its slowest participant. Non-participants keep their
//! clocks and pick up the newest model when they are next sampled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientTiming {
    /// Seconds per generic-model epoch.
    pub t_gm_epoch: f64,
    /// Seconds per personalized-model epoch.
    pub t_pm_epoch: f64,
    pub t_up: f64,
    pub t_down: f64,
}

impl ClientTiming {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_gm_epoch", self.t_gm_epoch),
            ("t_pm_epoch", self.t_pm_epoch),
            ("t_up", self.t_up),
            ("t_down", self.t_down),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> ClientTiming {
        ClientTiming {
            t_gm_epoch: self.t_gm_epoch * c,
            t_pm_epoch: self.t_pm_epoch * c,
            t_up: self.t_up * c,
            t_down: self.t_down * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ComputeAndWait,
    WaitFree,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compute_and_wait" => Ok(Protocol::ComputeAndWait),
            "wait_free" => Ok(Protocol::WaitFree),
            other => Err(Error::invalid(format!("unknown protocol `{other}`"))),
        }
    }
}

/// Who trains in each round, and for how many epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub participants: Vec<Vec<usize>>,
    pub epochs_g: usize,
    pub epochs_p: usize,
}

impl Schedule {
    pub fn full(n_clients: usize, rounds: usize, epochs_g: usize, epochs_p: usize) -> Self {
        Schedule {
            participants: vec![(0..n_clients).collect(); rounds],
            epochs_g,
            epochs_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientEvents {
    pub client: usize,
    pub start: f64,
    pub upload_start: f64,
    pub upload_complete: f64,
    pub pm_complete: f64,
    pub broadcast_complete: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTimeline {
    pub round: usize,
    pub start: f64,
    pub clients: Vec<ClientEvents>,
    pub aggregation_start: f64,
    pub aggregation_complete: f64,
    /// Every participant has its new model and has finished local work.
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timeline {
    pub protocol: Protocol,
    pub rounds: Vec<RoundTimeline>,
    pub total: f64,
}

impl Timeline {
    /// Cumulative simulated time at the end of each round.
    pub fn round_ends(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.end).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    ModelArrived,
    GmDone,
    UploadDone,
    PmDone,
    AggDone,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
    client: usize,
    round: usize,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, time: f64, kind: EventKind, client: usize, round: usize) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
            client,
            round,
        });
    }
}

#[derive(Debug, Clone, Default)]
struct ClientClock {
    busy_until_pm: bool,
    model_ready_for: Option<usize>,
}

/// Replays `schedule` under `protocol` and returns every event time.
pub fn simulate(
    schedule: &Schedule,
    timings: &[ClientTiming],
    t_agg: f64,
    protocol: Protocol,
) -> Result<Timeline> {
    let rounds = schedule.participants.len();
    if rounds == 0 {
        return Err(Error::invalid("schedule must contain at least one round"));
    }
    if !(t_agg >= 0.0) || !t_agg.is_finite() {
        return Err(Error::invalid(format!(
            "t_agg must be finite and >= 0, got {t_agg}"
        )));
    }
    for t in timings {
        t.validate()?;
    }
    for (r, set) in schedule.participants.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::invalid(format!(
                "round {} has no participants",
                r + 1
            )));
        }
        if let Some(&k) = set.iter().find(|&&k| k >= timings.len()) {
            return Err(Error::invalid(format!(
                "round {} names unknown client {k}",
                r + 1
            )));
        }
    }
    let eg = schedule.epochs_g as f64;
    let ep = schedule.epochs_p as f64;

    let mut timeline: Vec<RoundTimeline> = schedule
        .participants
        .iter()
        .enumerate()
        .map(|(r, set)| RoundTimeline {
            round: r + 1,
            start: f64::INFINITY,
            clients: set
                .iter()
                .map(|&k| ClientEvents {
                    client: k,
                    start: f64::NAN,
                    upload_start: f64::NAN,
                    upload_complete: f64::NAN,
                    pm_complete: f64::NAN,
                    broadcast_complete: f64::NAN,
                })
                .collect(),
            aggregation_start: f64::NAN,
            aggregation_complete: f64::NAN,
            end: f64::NAN,
        })
        .collect();
    // slot[r][k] = position of client k inside timeline[r].clients
    let slot = |timeline: &Vec<RoundTimeline>, r: usize, k: usize| -> usize {
        timeline[r]
            .clients
            .iter()
            .position(|c| c.client == k)
            .expect("participant")
    };

    let mut clocks = vec![ClientClock::default(); timings.len()];
    let mut uploads_pending: Vec<usize> = schedule.participants.iter().map(|s| s.len()).collect();
    let mut q = Queue {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    for &k in &schedule.participants[0] {
        q.push(0.0, EventKind::ModelArrived, k, 0);
    }

    let start_round =
        |q: &mut Queue, timeline: &mut Vec<RoundTimeline>, now: f64, k: usize, r: usize| {
            let i = slot(timeline, r, k);
            timeline[r].clients[i].start = now;
            timeline[r].start = timeline[r].start.min(now);
            q.push(now + eg * timings[k].t_gm_epoch, EventKind::GmDone, k, r);
        };

    while let Some(ev) = q.heap.pop() {
        let now = ev.time;
        let (k, r) = (ev.client, ev.round);
        match ev.kind {
            EventKind::ModelArrived => {
                clocks[k].model_ready_for = Some(r);
                if !clocks[k].busy_until_pm {
                    clocks[k].model_ready_for = None;
                    start_round(&mut q, &mut timeline, now, k, r);
                }
            }
            EventKind::GmDone => {
                let i = slot(&timeline, r, k);
                let pm_time = ep * timings[k].t_pm_epoch;
                clocks[k].busy_until_pm = true;
                let upload_start = match protocol {
                    Protocol::ComputeAndWait => now + pm_time,
                    Protocol::WaitFree => now,
                };
                timeline[r].clients[i].upload_start = upload_start;
                q.push(now + pm_time, EventKind::PmDone, k, r);
                q.push(upload_start + timings[k].t_up, EventKind::UploadDone, k, r);
            }
            EventKind::PmDone => {
                let i = slot(&timeline, r, k);
                timeline[r].clients[i].pm_complete = now;
                clocks[k].busy_until_pm = false;
                if let Some(next) = clocks[k].model_ready_for.take() {
                    start_round(&mut q, &mut timeline, now, k, next);
                }
            }
            EventKind::UploadDone => {
                let i = slot(&timeline, r, k);
                timeline[r].clients[i].upload_complete = now;
                uploads_pending[r] -= 1;
                if uploads_pending[r] == 0 {
                    timeline[r].aggregation_start = now;
                    q.push(now + t_agg, EventKind::AggDone, usize::MAX, r);
                }
            }
            EventKind::AggDone => {
                timeline[r].aggregation_complete = now;
                for c in timeline[r].clients.iter_mut() {
                    c.broadcast_complete = now + timings[c.client].t_down;
                }
                if r + 1 < rounds {
                    for &j in &schedule.participants[r + 1] {
                        q.push(now + timings[j].t_down, EventKind::ModelArrived, j, r + 1);
                    }
                }
            }
        }
    }

    for rt in timeline.iter_mut() {
        rt.end = rt
            .clients
            .iter()
            .map(|c| c.broadcast_complete.max(c.pm_complete))
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let total = timeline.last().map(|r| r.end).unwrap_or(0.0);
    Ok(Timeline {
        protocol,
        rounds: timeline,
        total,
    })
}

/// Round length for homogeneous clients.
pub fn closed_form_round_time(
    timing: &ClientTiming,
    epochs_g: usize,
    epochs_p: usize,
    t_agg: f64,
    protocol: Protocol,
) -> f64 {
    let gm = epochs_g as f64 * timing.t_gm_epoch;
    let pm = epochs_p as f64 * timing.t_pm_epoch;
    let comm = timing.t_up + t_agg + timing.t_down;
    match protocol {
        Protocol::ComputeAndWait => gm + pm + comm,
        Protocol::WaitFree => gm + pm.max(comm),
    }
}

/// Time to reach a target personalized accuracy under both protocols.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupReport {
    pub target_acc: f64,
    pub reached: bool,
    pub rounds_to_target: Option<usize>,
    pub zeta_baseline: Option<f64>,
    pub zeta_waitfree: Option<f64>,
    pub speedup: Option<f64>,
}

pub fn speedup_report(
    baseline: &Timeline,
    waitfree: &Timeline,
    accuracy_trace: &[f64],
    target_acc: f64,
) -> Result<SpeedupReport> {
    if accuracy_trace.is_empty() {
        return Err(Error::invalid("accuracy trace is empty"));
    }
    let hit = accuracy_trace.iter().position(|&a| a >= target_acc);
    let Some(idx) = hit else {
        return Ok(SpeedupReport {
            target_acc,
            reached: false,
            rounds_to_target: None,
            zeta_baseline: None,
            zeta_waitfree: None,
            speedup: None,
        });
    };
    let end_at = |t: &Timeline| -> Result<f64> {
        t.rounds
            .get(idx)
            .map(|r| r.end)
            .ok_or_else(|| Error::invalid("timeline is shorter than the accuracy trace"))
    };
    let zb = end_at(baseline)?;
    let zw = end_at(waitfree)?;
    Ok(SpeedupReport {
        target_acc,
        reached: true,
        rounds_to_target: Some(idx + 1),
        zeta_baseline: Some(zb),
        zeta_waitfree: Some(zw),
        speedup: if zw > 0.0 { Some(zb / zw) } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> ClientTiming {
        // comm = t_up + t_agg + t_down = 4 with t_agg = 0
        ClientTiming {
            t_gm_epoch: 2.0,
            t_pm_epoch: 3.0,
            t_up: 1.5,
            t_down: 2.5,
        }
    }

    #[test]
    fn closed_form_example() {
        let t = example();
        let cw = closed_form_round_time(&t, 1, 1, 0.0, Protocol::ComputeAndWait);
        let wf = closed_form_round_time(&t, 1, 1, 0.0, Protocol::WaitFree);
        assert_eq!(cw, 9.0);
        assert_eq!(wf, 6.0);
        assert_eq!(cw / wf, 1.5);
    }

    #[test]
    fn nothing_to_overlap() {
        let no_pm = ClientTiming {
            t_pm_epoch: 0.0,
            ..example()
        };
        assert_eq!(
            closed_form_round_time(&no_pm, 1, 1, 0.0, Protocol::WaitFree),
            closed_form_round_time(&no_pm, 1, 1, 0.0, Protocol::ComputeAndWait)
        );
        let no_comm = ClientTiming {
            t_up: 0.0,
            t_down: 0.0,
            ..example()
        };
        assert_eq!(
            closed_form_round_time(&no_comm, 1, 1, 0.0, Protocol::WaitFree),
            closed_form_round_time(&no_comm, 1, 1, 0.0, Protocol::ComputeAndWait)
        );
    }

    #[test]
    fn simulation_matches_closed_form() {
        let sched = Schedule::full(4, 10, 1, 1);
        let timings = vec![example(); 4];
        for p in [Protocol::ComputeAndWait, Protocol::WaitFree] {
            let tl = simulate(&sched, &timings, 0.0, p).unwrap();
            let expect = 10.0 * closed_form_round_time(&example(), 1, 1, 0.0, p);
            assert!((tl.total - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn speedup_at_round_ten() {
        let sched = Schedule::full(3, 12, 1, 1);
        let timings = vec![example(); 3];
        let cw = simulate(&sched, &timings, 0.0, Protocol::ComputeAndWait).unwrap();
        let wf = simulate(&sched, &timings, 0.0, Protocol::WaitFree).unwrap();
        let mut acc = vec![0.1; 12];
        acc[9] = 0.9;
        acc[10] = 0.95;
        let rep = speedup_report(&cw, &wf, &acc, 0.8).unwrap();
        assert_eq!(rep.rounds_to_target, Some(10));
        assert_eq!(rep.zeta_baseline, Some(90.0));
        assert_eq!(rep.zeta_waitfree, Some(60.0));
        assert_eq!(rep.speedup, Some(1.5));
        let miss = speedup_report(&cw, &wf, &acc, 0.99).unwrap();
        assert!(!miss.reached && miss.speedup.is_none());
        assert!(speedup_report(&cw, &wf, &[], 0.5).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad = ClientTiming {
            t_up: -1.0,
            ..example()
        };
        assert!(simulate(&Schedule::full(1, 1, 1, 1), &[bad], 0.0, Protocol::WaitFree).is_err());
        assert!(simulate(
            &Schedule::full(1, 0, 1, 1),
            &[example()],
            0.0,
            Protocol::WaitFree
        )
        .is_err());
        assert!(simulate(
            &Schedule::full(2, 1, 1, 1),
            &[example()],
            0.0,
            Protocol::WaitFree
        )
        .is_err());
        assert!(simulate(
            &Schedule::full(1, 1, 1, 1),
            &[example()],
            -0.5,
            Protocol::WaitFree
        )
        .is_err());
    }

    #[test]
    fn straggler_bounds_aggregation() {
        let mut timings = vec![example(); 3];
        timings[2].t_gm_epoch = 10.0;
        let tl = simulate(
            &Schedule::full(3, 2, 1, 1),
            &timings,
            0.5,
            Protocol::WaitFree,
        )
        .unwrap();
        for r in &tl.rounds {
            let latest = r
                .clients
                .iter()
                .map(|c| c.upload_complete)
                .fold(0.0, f64::max);
            assert_eq!(r.aggregation_start, latest);
            assert_eq!(r.aggregation_complete, latest + 0.5);
        }
    }

    #[test]
    fn partial_participation_keeps_idle_clients_waiting() {
        let sched = Schedule {
            participants: vec![vec![0], vec![1], vec![0, 1]],
            epochs_g: 1,
            epochs_p: 1,
        };
        let tl = simulate(&sched, &[example(); 2], 0.0, Protocol::ComputeAndWait).unwrap();
        assert_eq!(tl.rounds[0].end, 9.0);
        // Client 1 receives the round-1 model after the downlink and then runs round 2.
        assert_eq!(tl.rounds[1].clients[0].start, 9.0 - 2.5 + 2.5);
        assert_eq!(tl.rounds[1].end, 18.0);
        assert_eq!(tl.total, 27.0);
    }
}
