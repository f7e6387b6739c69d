//! Seeded discrete-event simulation of customers and an electric fleet, with
//! rebalancing decisions taken at fixed epochs.
//!
//! Time is kept in integer seconds. Customer arrivals and their attributes
//! come from one RNG stream that the policy never touches, so different
//! policies see the same customers under the same seed.

mod events;
mod metrics;

pub use events::{read_event_log, write_event_log, Event};
pub use metrics::{compute_metrics, histogram, histogram_tables, Metrics, Summary};

use crate::graph::{GraphError, NodeCharge, NodeChargeGraph, Zone, ZoneId};
use crate::model::{Instance, ModelError};
use crate::policies::{
    decide_rebalance_within, Decision, IdleVehicle, PolicyKind, PolicySnapshot, RebalanceAction,
};
use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DurationModel {
    Exponential {
        rate_per_hour: f64,
    },
    /// Booking lengths in minutes, drawn uniformly.
    Empirical {
        minutes: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReturnModel {
    Uniform,
    /// Row i holds the return-zone weights for trips starting in zone i + 1.
    Matrix {
        weights: Vec<Vec<f64>>,
    },
}

/// Simulated delay before an online decision takes effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Lag {
    Fixed {
        seconds: u64,
    },
    /// Wall-clock solve time. Runs are then no longer reproducible.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Seconds.
    pub horizon: u64,
    /// Seconds between rebalancing epochs.
    pub rebalance_interval: u64,
    pub vehicle_speed_kph: f64,
    /// Longest access time in minutes a customer accepts; `None` is unlimited.
    pub pickup_limit: Option<f64>,
    /// Minutes to charge from empty to full.
    pub full_charge_time: f64,
    /// Battery fraction used per kilometre of rebalancing.
    pub drain_per_km: f64,
    pub durations: DurationModel,
    pub returns: ReturnModel,
    pub online_lag: Lag,
    /// Every zone refuels in one minute with unlimited pumps.
    pub non_ev: bool,
    /// Seconds allowed per exact solve.
    pub solver_time_limit: f64,
    /// Show the policy where rebalancing vehicles are headed, so it does not
    /// send a second vehicle to cover the same demand.
    pub plan_with_committed: bool,
}

impl SimConfig {
    /// The 6-zone experiment: one-minute epochs over 5000 minutes, 60 kph,
    /// exponential bookings at 5 per hour.
    pub fn small_network() -> Self {
        Self {
            horizon: 5000 * 60,
            rebalance_interval: 60,
            vehicle_speed_kph: 60.0,
            pickup_limit: None,
            full_charge_time: 30.0,
            drain_per_km: 1.0 / 250.0,
            durations: DurationModel::Exponential { rate_per_hour: 5.0 },
            returns: ReturnModel::Uniform,
            online_lag: Lag::Fixed { seconds: 30 },
            non_ev: false,
            solver_time_limit: 30.0,
            plan_with_committed: true,
        }
    }

    pub fn validate(&self, zones: usize) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.rebalance_interval == 0 {
            return bad("rebalancing interval must be at least one second");
        }
        if self.horizon < self.rebalance_interval {
            return bad("horizon is shorter than one rebalancing interval");
        }
        if !(self.vehicle_speed_kph.is_finite() && self.vehicle_speed_kph > 0.0) {
            return bad("vehicle speed must be positive");
        }
        if self.pickup_limit.is_some_and(|p| p.is_nan() || p < 0.0) {
            return bad("pickup limit must be non-negative");
        }
        if !(self.full_charge_time.is_finite() && self.full_charge_time >= 0.0) {
            return bad("full charge time must be non-negative");
        }
        if !(self.drain_per_km.is_finite() && self.drain_per_km >= 0.0) {
            return bad("battery drain must be non-negative");
        }
        if !(self.solver_time_limit.is_finite() && self.solver_time_limit > 0.0) {
            return bad("solver time limit must be positive");
        }
        match &self.durations {
            DurationModel::Exponential { rate_per_hour }
                if !(*rate_per_hour > 0.0 && rate_per_hour.is_finite()) =>
            {
                return bad("booking rate must be positive");
            }
            DurationModel::Empirical { minutes }
                if minutes.is_empty() || minutes.iter().any(|m| !(m.is_finite() && *m > 0.0)) =>
            {
                return bad("empirical durations must be a non-empty list of positive minutes");
            }
            _ => {}
        }
        if let ReturnModel::Matrix { weights } = &self.returns {
            let ok = weights.len() == zones
                && weights.iter().all(|row| {
                    row.len() == zones
                        && row.iter().all(|w| w.is_finite() && *w >= 0.0)
                        && row.iter().sum::<f64>() > 0.0
                });
            if !ok {
                return bad(
                    "return matrix must be zones × zones with a positive weight in every row",
                );
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CustomerStatus {
    Waiting,
    InTrip,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerAgent {
    pub id: usize,
    pub arrival_time: u64,
    pub origin_zone: ZoneId,
    pub desired_level: usize,
    /// Seconds.
    pub booking_duration: u64,
    pub return_zone: ZoneId,
    pub status: CustomerStatus,
    pub assign_time: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VehicleStatus {
    Idle,
    Rebalancing,
    InService,
    Charging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleAgent {
    pub id: usize,
    pub status: VehicleStatus,
    pub zone: ZoneId,
    pub battery: f64,
    pub busy_until: u64,
    pub route: Option<RebalanceAction>,
}

/// Charge band of a battery fraction. Band width is 1/(H+1): band 0 is
/// unusable and the top band reaches full charge.
pub fn battery_level(battery: f64, levels: usize) -> usize {
    let w = 1.0 / (levels + 1) as f64;
    ((battery / w + 1e-9).floor() as usize).min(levels)
}

/// Battery fraction a vehicle is charged to for `level`: most of the way
/// through the band, or full at the top.
pub fn charge_target(level: usize, levels: usize) -> f64 {
    if level >= levels {
        1.0
    } else {
        (level as f64 + 0.9) / (levels + 1) as f64
    }
}

impl VehicleAgent {
    pub fn level(&self, levels: usize) -> usize {
        battery_level(self.battery, levels)
    }
}

/// Every zone becomes a station with a pump per vehicle. Refuel timing comes
/// from the config's one-minute full charge.
pub fn non_ev_instance(instance: &Instance) -> Result<Instance, SimError> {
    let g = &instance.graph;
    let pumps = instance.fleet_idle().max(1);
    let zones: Vec<Zone> = g
        .zones()
        .iter()
        .map(|z| Zone::station(z.id, pumps))
        .collect();
    let step = 1.0 / g.levels().saturating_sub(1).max(1) as f64;
    let graph = NodeChargeGraph::build(
        zones,
        g.access_matrix().clone(),
        g.relocation_override().cloned(),
        g.levels(),
        vec![step; g.zone_count()],
    )?;
    let mut inst = instance.clone();
    inst.ports = vec![pumps; g.zone_count()];
    inst.graph = graph;
    inst.validate()?;
    Ok(inst)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub epochs: usize,
    /// Epochs whose decision was reused from an identical earlier snapshot.
    pub reused: usize,
    pub seconds: f64,
    pub per_epoch: Summary,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub metrics: Metrics,
    pub events: Vec<Event>,
    /// Wall-clock cost of the policy, kept apart from the reproducible
    /// metrics.
    pub timing: Timing,
    pub vehicles: Vec<VehicleAgent>,
    pub customers: Vec<CustomerAgent>,
}

// Same-time order: vehicles freed first, then lagged decisions, then
// arrivals, then the epoch.
const RELEASE: u8 = 0;
const APPLY: u8 = 1;
const ARRIVAL: u8 = 2;
const EPOCH: u8 = 3;

#[derive(Debug)]
enum What {
    TripEnd { vehicle: usize, customer: usize },
    Reach { vehicle: usize },
    ChargeDone { vehicle: usize },
    Apply { actions: Vec<RebalanceAction> },
    Arrival,
    Epoch,
}

#[derive(Debug)]
struct Scheduled {
    t: u64,
    prio: u8,
    seq: u64,
    what: What,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t, other.prio, other.seq).cmp(&(self.t, self.prio, self.seq))
    }
}

/// Progress of a vehicle through its rebalancing route.
#[derive(Debug, Clone)]
struct Plan {
    action: RebalanceAction,
    at: usize,
    leg_km: f64,
    charged: bool,
}

struct Demand {
    rng: ChaCha8Rng,
    nodes: Vec<NodeCharge>,
    pick: Option<(WeightedIndex<f64>, Exp<f64>)>,
    clock: f64,
}

impl Demand {
    fn new(instance: &Instance, seed: u64) -> Self {
        let g = &instance.graph;
        let total: f64 = instance.lambda.iter().sum();
        let pick = (total > 0.0).then(|| {
            (
                WeightedIndex::new(&instance.lambda).expect("positive total rate"),
                Exp::new(total / 3600.0).expect("positive rate"),
            )
        });
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: g.nodes().collect(),
            pick,
            clock: 0.0,
        }
    }

    fn next_time(&mut self) -> Option<u64> {
        let (_, gap) = self.pick.as_ref()?;
        self.clock += gap.sample(&mut self.rng);
        Some(self.clock.round() as u64)
    }

    fn customer(&mut self, id: usize, t: u64, config: &SimConfig, zones: usize) -> CustomerAgent {
        let (which, _) = self.pick.as_ref().expect("arrivals only with demand");
        let nc = self.nodes[which.sample(&mut self.rng)];
        let minutes = match &config.durations {
            DurationModel::Exponential { rate_per_hour } => {
                60.0 * Exp::new(*rate_per_hour)
                    .expect("validated rate")
                    .sample(&mut self.rng)
            }
            DurationModel::Empirical { minutes } => minutes[self.rng.gen_range(0..minutes.len())],
        };
        let return_zone = match &config.returns {
            ReturnModel::Uniform => self.rng.gen_range(1..=zones),
            ReturnModel::Matrix { weights } => {
                let row = WeightedIndex::new(&weights[nc.zone - 1]).expect("validated row");
                row.sample(&mut self.rng) + 1
            }
        };
        CustomerAgent {
            id,
            arrival_time: t,
            origin_zone: nc.zone,
            desired_level: nc.level,
            booking_duration: ((minutes * 60.0).round() as u64).max(1),
            return_zone,
            status: CustomerStatus::Waiting,
            assign_time: None,
        }
    }
}

fn seconds(minutes: f64) -> u64 {
    (minutes * 60.0).round().max(0.0) as u64
}

struct Engine<'a> {
    config: &'a SimConfig,
    instance: &'a Instance,
    policy: &'a PolicyKind,
    levels: usize,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    vehicles: Vec<VehicleAgent>,
    plans: Vec<Option<Plan>>,
    customers: Vec<CustomerAgent>,
    queue: VecDeque<usize>,
    /// Ports held per zone, counting vehicles still driving to them.
    reserved: Vec<u32>,
    charging: Vec<u32>,
    events: Vec<Event>,
    pending: bool,
    last: Option<(PolicySnapshot, Result<Decision, String>)>,
    timing: Timing,
    epoch_seconds: Vec<f64>,
}

impl Engine<'_> {
    fn push(&mut self, t: u64, prio: u8, what: What) {
        self.seq += 1;
        self.heap.push(Scheduled {
            t,
            prio,
            seq: self.seq,
            what,
        });
    }

    fn km(&self, from: ZoneId, to: ZoneId) -> f64 {
        self.instance.graph.relocation_cost(from, to) * self.config.vehicle_speed_kph / 60.0
    }

    fn best_vehicle(&self, c: &CustomerAgent) -> Option<(f64, usize)> {
        let g = &self.instance.graph;
        self.vehicles
            .iter()
            .filter(|v| v.status == VehicleStatus::Idle && v.level(self.levels) >= c.desired_level)
            .map(|v| (g.travel_time(c.origin_zone, v.zone), v.id))
            .filter(|&(tau, _)| self.config.pickup_limit.is_none_or(|lim| tau <= lim))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    }

    fn assign(&mut self, t: u64, customer: usize, vehicle: usize, access_minutes: f64) {
        let access = seconds(access_minutes);
        let c = &mut self.customers[customer];
        c.status = CustomerStatus::InTrip;
        c.assign_time = Some(t);
        let end = t + access + c.booking_duration;
        let wait = t + access - c.arrival_time;
        let v = &mut self.vehicles[vehicle];
        v.status = VehicleStatus::InService;
        v.busy_until = end;
        self.events.push(Event::Assign {
            t,
            customer,
            vehicle,
            wait,
            access,
        });
        self.push(end, RELEASE, What::TripEnd { vehicle, customer });
    }

    /// Queued customers, earliest first, each take the best vehicle left.
    fn serve_queue(&mut self, t: u64) {
        let mut still = VecDeque::with_capacity(self.queue.len());
        while let Some(c) = self.queue.pop_front() {
            match self.best_vehicle(&self.customers[c]) {
                Some((tau, v)) => self.assign(t, c, v, tau),
                None => still.push_back(c),
            }
        }
        self.queue = still;
    }

    fn snapshot(&self, t: u64) -> PolicySnapshot {
        PolicySnapshot {
            time: t,
            idle: self
                .vehicles
                .iter()
                .filter(|v| v.status == VehicleStatus::Idle)
                .map(|v| IdleVehicle {
                    id: v.id,
                    position: NodeCharge::new(v.zone, v.level(self.levels).max(1)),
                    battery: v.battery,
                })
                .collect(),
            lambda: self.instance.lambda.clone(),
            ports_in_use: self.reserved.clone(),
            committed: if self.config.plan_with_committed {
                self.plans
                    .iter()
                    .flatten()
                    .map(|p| self.destination(p))
                    .collect()
            } else {
                Vec::new()
            },
        }
    }

    fn destination(&self, plan: &Plan) -> NodeCharge {
        let v = &self.vehicles[plan.action.vehicle];
        let level = match plan.action.charge {
            Some(c) if !plan.charged => c.exit,
            _ => v.level(self.levels),
        };
        NodeCharge::new(
            *plan.action.route.last().expect("non-empty route"),
            level.max(1),
        )
    }

    fn epoch(&mut self, t: u64) {
        let idle = self
            .vehicles
            .iter()
            .filter(|v| v.status == VehicleStatus::Idle)
            .count();
        if self.pending {
            self.events.push(Event::Epoch {
                t,
                queue: self.queue.len(),
                idle,
                actions: 0,
                relaxed: false,
                failed: false,
            });
            return;
        }
        let snap = self.snapshot(t);
        self.timing.epochs += 1;
        let started = Instant::now();
        let result = match &self.last {
            Some((prev, r)) if prev.same_state(&snap) => {
                self.timing.reused += 1;
                r.clone()
            }
            _ => {
                let limit = Duration::from_secs_f64(self.config.solver_time_limit);
                let r = decide_rebalance_within(self.policy, &snap, self.instance, limit)
                    .map_err(|e| e.to_string());
                self.last = Some((snap, r.clone()));
                r
            }
        };
        let spent = started.elapsed().as_secs_f64();
        self.epoch_seconds.push(spent);
        let (actions, relaxed, failed) = match result {
            Ok(d) => (d.actions, d.relaxed, false),
            Err(e) => {
                log::warn!("t={t}: epoch skipped, {e}");
                (Vec::new(), false, true)
            }
        };
        self.events.push(Event::Epoch {
            t,
            queue: self.queue.len(),
            idle,
            actions: actions.len(),
            relaxed,
            failed,
        });
        if self.policy.is_online() && !actions.is_empty() {
            let lag = match self.config.online_lag {
                Lag::Fixed { seconds } => seconds,
                Lag::Measured => spent.ceil() as u64,
            };
            self.pending = true;
            self.push(t + lag, APPLY, What::Apply { actions });
        } else {
            self.apply(t, actions);
        }
    }

    fn apply(&mut self, t: u64, actions: Vec<RebalanceAction>) {
        for mut a in actions {
            let v = &self.vehicles[a.vehicle];
            if v.status != VehicleStatus::Idle || a.route.first() != Some(&v.zone) {
                self.events.push(Event::Skipped {
                    t,
                    vehicle: a.vehicle,
                });
                continue;
            }
            if let Some(c) = a.charge {
                let cap = self.instance.graph.zones()[c.station - 1].station_capacity;
                if self.reserved[c.station - 1] < cap {
                    self.reserved[c.station - 1] += 1;
                } else {
                    log::warn!(
                        "t={t}: no free port at zone {} for vehicle {}",
                        c.station,
                        a.vehicle
                    );
                    a.charge = None;
                    if a.route.len() == 1 {
                        continue;
                    }
                }
            }
            let km = a.route.windows(2).map(|p| self.km(p[0], p[1])).sum();
            self.events.push(Event::Rebalance {
                t,
                vehicle: a.vehicle,
                route: a.route.clone(),
                km,
                charge: a.charge,
            });
            let id = a.vehicle;
            self.vehicles[id].status = VehicleStatus::Rebalancing;
            self.vehicles[id].route = Some(a.clone());
            self.plans[id] = Some(Plan {
                action: a,
                at: 0,
                leg_km: 0.0,
                charged: false,
            });
            self.push(t, RELEASE, What::Reach { vehicle: id });
        }
    }

    fn reach(&mut self, t: u64, id: usize) {
        let mut plan = self.plans[id].take().expect("vehicle on a route");
        let zone = plan.action.route[plan.at];
        let v = &mut self.vehicles[id];
        v.zone = zone;
        v.battery = (v.battery - plan.leg_km * self.config.drain_per_km).max(0.0);
        plan.leg_km = 0.0;
        if let Some(c) = plan
            .action
            .charge
            .filter(|c| !plan.charged && c.station == zone)
        {
            v.status = VehicleStatus::Charging;
            self.charging[zone - 1] += 1;
            let cap = self.instance.graph.zones()[zone - 1].station_capacity;
            assert!(
                self.charging[zone - 1] <= cap,
                "port capacity exceeded at zone {zone}"
            );
            let target = charge_target(c.exit, self.levels);
            let minutes = (target - v.battery).max(0.0) * self.config.full_charge_time;
            self.events.push(Event::ChargeStart {
                t,
                vehicle: id,
                station: zone,
                battery: v.battery,
                ports_in_use: self.charging[zone - 1],
            });
            self.plans[id] = Some(plan);
            self.push(
                t + seconds(minutes),
                RELEASE,
                What::ChargeDone { vehicle: id },
            );
            return;
        }
        self.advance(t, id, plan);
    }

    fn charge_done(&mut self, t: u64, id: usize) {
        let mut plan = self.plans[id].take().expect("vehicle on a route");
        let c = plan
            .action
            .charge
            .expect("charging vehicle has a charge path");
        let v = &mut self.vehicles[id];
        v.battery = v.battery.max(charge_target(c.exit, self.levels)).min(1.0);
        v.status = VehicleStatus::Rebalancing;
        plan.charged = true;
        self.charging[c.station - 1] -= 1;
        self.reserved[c.station - 1] -= 1;
        self.events.push(Event::ChargeEnd {
            t,
            vehicle: id,
            station: c.station,
            battery: v.battery,
        });
        self.advance(t, id, plan);
    }

    fn advance(&mut self, t: u64, id: usize, mut plan: Plan) {
        if plan.at + 1 < plan.action.route.len() {
            let (from, to) = (plan.action.route[plan.at], plan.action.route[plan.at + 1]);
            plan.leg_km = self.km(from, to);
            plan.at += 1;
            let dt = seconds(self.instance.graph.relocation_cost(from, to));
            self.plans[id] = Some(plan);
            self.push(t + dt, RELEASE, What::Reach { vehicle: id });
            return;
        }
        if let Some(c) = plan.action.charge.filter(|_| !plan.charged) {
            // The station was never on the route; give the port back.
            self.reserved[c.station - 1] -= 1;
        }
        let v = &mut self.vehicles[id];
        v.status = VehicleStatus::Idle;
        v.route = None;
        v.busy_until = t;
        self.events.push(Event::Ready {
            t,
            vehicle: id,
            zone: v.zone,
            battery: v.battery,
        });
        self.serve_queue(t);
    }

    fn trip_end(&mut self, t: u64, id: usize, customer: usize) {
        let c = &mut self.customers[customer];
        c.status = CustomerStatus::Done;
        let used = c.desired_level as f64 / (self.levels + 1) as f64;
        let v = &mut self.vehicles[id];
        v.zone = c.return_zone;
        v.battery = (v.battery - used).max(0.0);
        v.status = VehicleStatus::Idle;
        self.events.push(Event::TripEnd {
            t,
            customer,
            vehicle: id,
            zone: v.zone,
            battery: v.battery,
        });
        self.serve_queue(t);
    }
}

/// Runs one replication. Identical inputs and seed give identical metrics
/// and event logs, except under measured online lag.
pub fn run_simulation(
    config: &SimConfig,
    instance: &Instance,
    policy: &PolicyKind,
    seed: u64,
) -> Result<SimOutput, SimError> {
    instance.validate()?;
    config.validate(instance.graph.zone_count())?;
    let mut config = config.clone();
    let converted;
    let instance = if config.non_ev {
        config.full_charge_time = 1.0;
        converted = non_ev_instance(instance)?;
        &converted
    } else {
        instance
    };
    let g = &instance.graph;
    let levels = g.levels();
    let vehicles: Vec<VehicleAgent> = (0..g.node_count())
        .flat_map(|i| std::iter::repeat_n(g.node(i), instance.idle[i] as usize))
        .enumerate()
        .map(|(id, nc)| VehicleAgent {
            id,
            status: VehicleStatus::Idle,
            zone: nc.zone,
            battery: charge_target(nc.level, levels),
            busy_until: 0,
            route: None,
        })
        .collect();
    let n = vehicles.len();
    let mut engine = Engine {
        config: &config,
        instance,
        policy,
        levels,
        heap: BinaryHeap::new(),
        seq: 0,
        vehicles,
        plans: vec![None; n],
        customers: Vec::new(),
        queue: VecDeque::new(),
        reserved: vec![0; g.zone_count()],
        charging: vec![0; g.zone_count()],
        events: Vec::new(),
        pending: false,
        last: None,
        timing: Timing::default(),
        epoch_seconds: Vec::new(),
    };
    let mut demand = Demand::new(instance, seed);
    if let Some(t) = demand.next_time() {
        engine.push(t, ARRIVAL, What::Arrival);
    }
    let horizon = config.horizon;
    engine.push(0, EPOCH, What::Epoch);
    while let Some(ev) = engine.heap.pop() {
        if ev.t >= horizon {
            break;
        }
        let t = ev.t;
        match ev.what {
            What::TripEnd { vehicle, customer } => engine.trip_end(t, vehicle, customer),
            What::Reach { vehicle } => engine.reach(t, vehicle),
            What::ChargeDone { vehicle } => engine.charge_done(t, vehicle),
            What::Apply { actions } => {
                engine.pending = false;
                engine.apply(t, actions);
            }
            What::Arrival => {
                let id = engine.customers.len();
                let c = demand.customer(id, t, &config, g.zone_count());
                engine.events.push(Event::Arrival {
                    t,
                    customer: id,
                    zone: c.origin_zone,
                    level: c.desired_level,
                });
                let best = engine.best_vehicle(&c);
                engine.customers.push(c);
                match best {
                    Some((tau, v)) => engine.assign(t, id, v, tau),
                    None => engine.queue.push_back(id),
                }
                if let Some(next) = demand.next_time() {
                    engine.push(next, ARRIVAL, What::Arrival);
                }
            }
            What::Epoch => {
                engine.epoch(t);
                engine.push(t + config.rebalance_interval, EPOCH, What::Epoch);
            }
        }
    }
    for &c in &engine.queue {
        let wait = horizon - engine.customers[c].arrival_time;
        engine.events.push(Event::Censored {
            t: horizon,
            customer: c,
            wait,
        });
    }
    let metrics = compute_metrics(&engine.events, instance.theta);
    engine.timing.seconds = engine.epoch_seconds.iter().sum();
    engine.timing.per_epoch = Summary::of(&engine.epoch_seconds);
    Ok(SimOutput {
        metrics,
        events: engine.events,
        timing: engine.timing,
        vehicles: engine.vehicles,
        customers: engine.customers,
    })
}

/// Invariant checks over a finished log: port capacity, battery range,
/// battery only rising while charging, and first-come-first-served order
/// among interchangeable queued customers. Returns one line per violation.
pub fn check_log(events: &[Event], instance: &Instance) -> Vec<String> {
    let g = &instance.graph;
    let mut bad = Vec::new();
    let mut charging: BTreeMap<ZoneId, u32> = BTreeMap::new();
    let mut battery: BTreeMap<usize, f64> = BTreeMap::new();
    let mut arrivals: BTreeMap<usize, (u64, ZoneId, usize)> = BTreeMap::new();
    let mut served: BTreeMap<(ZoneId, usize), u64> = BTreeMap::new();
    let mut record = |vehicle: usize, b: f64, rising: bool, bad: &mut Vec<String>, t: u64| {
        if !(0.0..=1.0).contains(&b) {
            bad.push(format!(
                "t={t}: vehicle {vehicle} battery {b} outside [0, 1]"
            ));
        }
        if let Some(&prev) = battery.get(&vehicle) {
            if b > prev + 1e-12 && !rising {
                bad.push(format!(
                    "t={t}: vehicle {vehicle} battery rose outside a charger"
                ));
            }
        }
        battery.insert(vehicle, b);
    };
    for e in events {
        match *e {
            Event::Arrival {
                t,
                customer,
                zone,
                level,
            } => {
                arrivals.insert(customer, (t, zone, level));
            }
            Event::Assign { t, customer, .. } => {
                let (arrived, zone, level) = arrivals[&customer];
                if t > arrived {
                    let last = served.entry((zone, level)).or_insert(0);
                    if arrived < *last {
                        bad.push(format!(
                            "t={t}: customer {customer} overtook an earlier arrival"
                        ));
                    }
                    *last = (*last).max(arrived);
                }
            }
            Event::ChargeStart {
                t,
                vehicle,
                station,
                battery: b,
                ..
            } => {
                let n = charging.entry(station).or_insert(0);
                *n += 1;
                let cap = g.zones()[station - 1].station_capacity;
                if *n > cap {
                    bad.push(format!(
                        "t={t}: {n} vehicles charging at zone {station}, capacity {cap}"
                    ));
                }
                record(vehicle, b, false, &mut bad, t);
            }
            Event::ChargeEnd {
                t,
                vehicle,
                station,
                battery: b,
            } => {
                *charging.entry(station).or_insert(1) -= 1;
                record(vehicle, b, true, &mut bad, t);
            }
            Event::TripEnd {
                t,
                vehicle,
                battery: b,
                ..
            }
            | Event::Ready {
                t,
                vehicle,
                battery: b,
                ..
            } => {
                record(vehicle, b, false, &mut bad, t);
            }
            _ => {}
        }
    }
    bad
}
