use crate::graph::{ChargePath, ZoneId};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

/// One record of the simulation log. Times are integer seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum Event {
    Arrival {
        t: u64,
        customer: usize,
        zone: ZoneId,
        level: usize,
    },
    /// The customer is matched; `wait` runs from arrival to pickup and
    /// includes the `access` walk.
    Assign {
        t: u64,
        customer: usize,
        vehicle: usize,
        wait: u64,
        access: u64,
    },
    TripEnd {
        t: u64,
        customer: usize,
        vehicle: usize,
        zone: ZoneId,
        battery: f64,
    },
    Epoch {
        t: u64,
        queue: usize,
        idle: usize,
        actions: usize,
        relaxed: bool,
        failed: bool,
    },
    Rebalance {
        t: u64,
        vehicle: usize,
        route: Vec<ZoneId>,
        km: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        charge: Option<ChargePath>,
    },
    /// A lagged action whose vehicle was booked in the meantime.
    Skipped { t: u64, vehicle: usize },
    ChargeStart {
        t: u64,
        vehicle: usize,
        station: ZoneId,
        battery: f64,
        ports_in_use: u32,
    },
    ChargeEnd {
        t: u64,
        vehicle: usize,
        station: ZoneId,
        battery: f64,
    },
    /// A rebalancing vehicle reached its destination and is bookable again.
    Ready {
        t: u64,
        vehicle: usize,
        zone: ZoneId,
        battery: f64,
    },
    /// Still waiting at the horizon.
    Censored { t: u64, customer: usize, wait: u64 },
}

impl Event {
    pub fn time(&self) -> u64 {
        match *self {
            Event::Arrival { t, .. }
            | Event::Assign { t, .. }
            | Event::TripEnd { t, .. }
            | Event::Epoch { t, .. }
            | Event::Rebalance { t, .. }
            | Event::Skipped { t, .. }
            | Event::ChargeStart { t, .. }
            | Event::ChargeEnd { t, .. }
            | Event::Ready { t, .. }
            | Event::Censored { t, .. } => t,
        }
    }
}

pub fn write_event_log<W: Write>(events: &[Event], mut out: W) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_event_log(text: &str) -> serde_json::Result<Vec<Event>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
